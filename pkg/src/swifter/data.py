"""Synthetic shape-world scenes for desk-scale end-to-end training.

Each sample is a 32x32 RGB rendering of one or two filled shapes (circle,
square, triangle) in distinct colors, captioned by a fixed template:
"a <color> <shape>" or "a <color> <shape> left of a <color> <shape>".
Pixels start in [0, 1] and are then channel-normalized with the usual
ImageNet statistics. Sample i of a run is drawn from rng([seed, i]), so
datasets are bit-identical under a seed and samples are independently
reproducible.

On disk a dataset is ``manifest.json`` (count, seed, normalization
constants) plus ``samples.bin``: per sample the 3*32*32 float32
little-endian image followed by a u32 byte length and the UTF-8 caption.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

IMAGE_SIZE = 32
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)

COLORS = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.15),
    "blue": (0.15, 0.2, 0.9),
    "yellow": (0.95, 0.9, 0.1),
    "purple": (0.6, 0.15, 0.8),
    "cyan": (0.1, 0.85, 0.9),
}
SHAPES = ("circle", "square", "triangle")
BACKGROUND = 0.08


@dataclass
class ShapeWorldSample:
    image: np.ndarray  # (3, 32, 32) float64, channel-normalized
    caption: str
    seed: int


def _shape_mask(shape: str, cx: float, cy: float, r: float) -> np.ndarray:
    ys, xs = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    if shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    if shape == "square":
        return (np.abs(xs - cx) <= r) & (np.abs(ys - cy) <= r)
    # upward triangle: apex at cy - r, base at cy + r
    inside_rows = (ys >= cy - r) & (ys <= cy + r)
    halfwidth = (ys - (cy - r)) / 2.0
    return inside_rows & (np.abs(xs - cx) <= halfwidth)


def _render(objects) -> np.ndarray:
    img = np.full((3, IMAGE_SIZE, IMAGE_SIZE), BACKGROUND)
    for color, shape, cx, cy, r in objects:
        mask = _shape_mask(shape, cx, cy, r)
        rgb = COLORS[color]
        for c in range(3):
            img[c][mask] = rgb[c]
    return img


def normalize_image(img01: np.ndarray) -> np.ndarray:
    mean = np.asarray(MEAN).reshape(3, 1, 1)
    std = np.asarray(STD).reshape(3, 1, 1)
    return (img01 - mean) / std


def make_sample(seed: int, index: int) -> ShapeWorldSample:
    rng = np.random.default_rng([seed, index])
    n_objects = int(rng.integers(1, 3))
    colors = rng.choice(len(COLORS), size=n_objects, replace=False)
    names = list(COLORS)
    objects = []
    words = []
    for j in range(n_objects):
        color = names[int(colors[j])]
        shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
        r = float(rng.uniform(3.0, 5.5))
        if n_objects == 1:
            cx = float(rng.uniform(8.0, 24.0))
        elif j == 0:
            cx = float(rng.uniform(5.0, 10.0))
        else:
            cx = float(rng.uniform(21.0, 26.0))
        cy = float(rng.uniform(8.0, 24.0))
        objects.append((color, shape, cx, cy, r))
        words.append(f"a {color} {shape}")
    caption = words[0] if n_objects == 1 else f"{words[0]} left of {words[1]}"
    image = normalize_image(_render(objects))
    return ShapeWorldSample(image=image, caption=caption, seed=index)


def gen_shape_world(n: int, seed: int) -> list[ShapeWorldSample]:
    if n < 1:
        raise DomainError("need at least one sample")
    return [make_sample(seed, i) for i in range(n)]


def save_dataset(samples: list[ShapeWorldSample], out_dir, seed: int) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "count": len(samples),
        "seed": seed,
        "image_size": IMAGE_SIZE,
        "mean": list(MEAN),
        "std": list(STD),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    with open(out / "samples.bin", "wb") as f:
        for s in samples:
            f.write(np.ascontiguousarray(s.image, dtype="<f4").tobytes())
            raw = s.caption.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)


def load_dataset(in_dir) -> list[ShapeWorldSample]:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    count = manifest["count"]
    nimg = 3 * IMAGE_SIZE * IMAGE_SIZE
    samples = []
    with open(src / "samples.bin", "rb") as f:
        for i in range(count):
            img = np.frombuffer(f.read(4 * nimg), dtype="<f4").astype(np.float64)
            img = img.reshape(3, IMAGE_SIZE, IMAGE_SIZE)
            (clen,) = struct.unpack("<I", f.read(4))
            caption = f.read(clen).decode("utf-8")
            samples.append(ShapeWorldSample(image=img, caption=caption, seed=i))
    return samples


def template_corpus() -> list[str]:
    """Every caption the generator can emit; handy for building a full vocab."""
    singles = [f"a {c} {s}" for c in COLORS for s in SHAPES]
    pairs = [f"{a} left of {b}" for a in singles for b in singles]
    return singles + pairs
