import math

import pytest

from swifter.cider import CiderIndex, cider_d, ngram_counts
from swifter.errors import ContractError

# toy corpus: two images, one reference each
#   ref A: ids [4, 5, 6]   ("a red circle")
#   ref B: ids [4, 7, 8]   ("a blue square")
REF_A = [4, 5, 6]
REF_B = [4, 7, 8]


@pytest.fixture
def index():
    return CiderIndex([[REF_A], [REF_B]])


def test_ngram_counts():
    counts = ngram_counts([1, 2, 1, 2])
    assert counts[0] == {(1,): 2, (2,): 2}
    assert counts[1] == {(1, 2): 2, (2, 1): 1}
    assert counts[3] == {(1, 2, 1, 2): 1}


def test_document_frequencies(index):
    assert index.doc_freq[(4,)] == 2
    assert index.doc_freq[(5,)] == 1
    assert index.doc_freq[(4, 5)] == 1
    assert index.n_images == 2


class TestHandComputedChain:
    """The full tf-idf cosine chain worked out by hand on the toy corpus."""

    def test_identical_candidate(self, index):
        # unigrams: idf('a')=log(2/2)=0, others log 2; cosine 1 for n=1..3,
        # no 4-grams in a 3-token sentence -> mean([1,1,1,0]) * 10
        assert cider_d(REF_A, [REF_A], index) == pytest.approx(7.5, abs=1e-9)

    def test_partial_overlap(self, index):
        # candidate [4,5,8]: unigram and bigram cosines are exactly 0.5
        # ((log2)^2 overlap over (log2*sqrt2)^2 norms), nothing longer matches
        assert cider_d([4, 5, 8], [REF_A], index) == pytest.approx(2.5, abs=1e-9)

    def test_length_penalty(self, index):
        # candidate [4,5] vs 3-token ref: cosine 1/sqrt2 at n=1,2 and a
        # gaussian penalty exp(-1/(2*36)) for the one-token length gap
        p = math.exp(-1.0 / 72.0)
        expect = 10.0 * (2.0 * p / math.sqrt(2.0)) / 4.0
        assert cider_d([4, 5], [REF_A], index) == pytest.approx(expect, abs=1e-9)


def test_zero_overlap_scores_zero(index):
    assert cider_d([20, 21, 22], [REF_A], index) == 0.0


def test_empty_candidate_scores_zero(index):
    assert cider_d([], [REF_A], index) == 0.0


def test_identical_beats_everything_else(index):
    best = cider_d(REF_A, [REF_A], index)
    for other in ([4, 5, 8], [4, 5], [5, 6], [4, 7, 8], [4, 5, 6, 6], [9]):
        assert cider_d(other, [REF_A], index) <= best


def test_reference_order_invariance():
    index = CiderIndex([[REF_A, REF_B]])
    a = cider_d([4, 5, 6], [REF_A, REF_B], index)
    b = cider_d([4, 5, 6], [REF_B, REF_A], index)
    assert a == b


def test_score_range(index, rng):
    for _ in range(20):
        cand = [int(x) for x in rng.integers(4, 10, size=rng.integers(1, 6))]
        score = cider_d(cand, [REF_A], index)
        assert 0.0 <= score <= 10.0


def test_empty_refs_rejected(index):
    with pytest.raises(ContractError):
        cider_d([4], [], index)


def test_empty_index_rejected():
    with pytest.raises(ContractError):
        CiderIndex([])
