"""CIDEr-D: clipped tf-idf n-gram cosine with a gaussian length penalty.

Sequences are plain token-id lists (specials already stripped). The index
holds document frequencies over the reference corpus, counting each n-gram
once per image no matter how many of that image's references contain it.
Scoring follows the consensus-metric convention: n-grams of order 1..4,
candidate counts clipped to the reference's, sigma 6.0, scaled by 10.
"""

import math
from collections import defaultdict

import numpy as np

from .errors import ContractError

NGRAM_MAX = 4


def ngram_counts(ids, n_max: int = NGRAM_MAX) -> list[dict]:
    """Per-order count dicts; index 0 holds unigrams."""
    ids = [int(i) for i in ids]
    out = [defaultdict(int) for _ in range(n_max)]
    for n in range(1, n_max + 1):
        for i in range(len(ids) - n + 1):
            out[n - 1][tuple(ids[i : i + n])] += 1
    return out


class CiderIndex:
    """Document frequencies (per image) plus the reference image count."""

    def __init__(self, refs_per_image: list[list[list[int]]], n_max: int = NGRAM_MAX):
        if not refs_per_image:
            raise ContractError("index needs at least one reference image")
        self.n_max = n_max
        self.n_images = len(refs_per_image)
        self.doc_freq: dict[tuple, int] = defaultdict(int)
        for refs in refs_per_image:
            seen = set()
            for ref in refs:
                for order in ngram_counts(ref, n_max):
                    seen.update(order.keys())
            for g in seen:
                self.doc_freq[g] += 1
        self.log_images = math.log(float(self.n_images))

    def idf(self, gram: tuple) -> float:
        return self.log_images - math.log(max(1.0, float(self.doc_freq.get(gram, 0))))


def _tfidf(counts: list[dict], index: CiderIndex):
    vecs, norms = [], []
    for order in counts:
        vec = {g: c * index.idf(g) for g, c in order.items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider_d(candidate, refs, index: CiderIndex, sigma: float = 6.0) -> float:
    """Score one candidate against its references using the prebuilt index."""
    cand = [int(i) for i in candidate]
    if len(cand) == 0:
        return 0.0
    if not refs:
        raise ContractError("need at least one reference")
    cvecs, cnorms = _tfidf(ngram_counts(cand, index.n_max), index)
    per_order = np.zeros(index.n_max)
    for ref in refs:
        ref = [int(i) for i in ref]
        rvecs, rnorms = _tfidf(ngram_counts(ref, index.n_max), index)
        penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2.0 * sigma * sigma))
        for n in range(index.n_max):
            if cnorms[n] == 0.0 or rnorms[n] == 0.0:
                continue
            overlap = 0.0
            for g, cv in cvecs[n].items():
                rv = rvecs[n].get(g, 0.0)
                overlap += min(cv, rv) * rv
            per_order[n] += overlap / (cnorms[n] * rnorms[n]) * penalty
    return 10.0 * float(per_order.mean()) / len(refs)
