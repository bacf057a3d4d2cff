"""Decode benchmarking: FLOP counters, wall time, and decode-state memory.

Two decode regimes are compared on the fusion decoder (the visual encoder
runs once beforehand and is excluded from every number reported here):

* ``recurrent``  - per-layer retention states; constant work per step.
* ``stateless``  - the same decoder re-run on the whole growing prefix
                   every step, which is what a decoder without recurrent
                   state has to do.

FLOPs come from the deterministic meter (shape-based, value-independent),
wall times are medians over repeats, and peak_state_bytes accounts the
per-stream decode state: the retention matrices in recurrent mode, the
retained prefix activations (embeddings plus each layer output) in
stateless mode.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from . import flops
from .autodiff import Tensor
from .errors import ContractError, DomainError
from .model import FusionConfig, FusionModel
from .vocab import BOS

CSV_HEADER = "mode,seq_len,batch,flops,wall_ns,peak_state_bytes"
MODES = ("recurrent", "stateless")


@dataclass
class BenchRow:
    mode: str
    seq_len: int
    batch: int
    flops: int
    wall_ns: int
    peak_state_bytes: int


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def synth_features(cfg: FusionConfig, n_visual: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, (n_visual, cfg.d_m))


def _run_recurrent(fusion: FusionModel, enc, steps: int):
    """Forced-length recurrent decode; returns peak decode-state bytes."""
    state = fusion.init_decode_state(enc)
    tok = BOS
    peak = state.state_nbytes
    for _ in range(steps):
        logits = fusion.decode_step(state, tok)
        tok = int(np.argmax(logits))
        peak = max(peak, state.state_nbytes)
    return peak


def _run_stateless(fusion: FusionModel, enc, steps: int):
    """Forced-length re-encoding decode over the growing prefix."""
    h = fusion.cfg.hidden
    layers = len(fusion.dec_layers)
    prefix = [BOS]
    peak = 0
    for _ in range(steps):
        logits = fusion.decode_parallel(enc, np.asarray(prefix, dtype=np.int64)).data[-1]
        peak = max(peak, 8 * h * (layers + 1) * len(prefix))
        prefix.append(int(np.argmax(logits)))
    return peak


def count_decode_flops(
    fusion: FusionModel, mode: str, seq_len: int, n_visual: int = 16, seed: int = 42
) -> tuple[int, list[int]]:
    """Deterministic decoder-side FLOPs for one stream: (total, per-step list).

    Encoder work and state setup happen before metering starts.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")
    feats = synth_features(fusion.cfg, n_visual, seed)
    enc = fusion.encode(Tensor(feats))
    meter = flops.FlopMeter("fusion")
    per_step = []
    if mode == "recurrent":
        state = fusion.init_decode_state(enc)
        tok = BOS
        with flops.metered(meter):
            for _ in range(seq_len):
                before = meter.total
                logits = fusion.decode_step(state, tok)
                tok = int(np.argmax(logits))
                per_step.append(int(round(meter.total - before)))
    else:
        prefix = [BOS]
        with flops.metered(meter):
            for _ in range(seq_len):
                before = meter.total
                logits = fusion.decode_parallel(enc, np.asarray(prefix, dtype=np.int64))
                prefix.append(int(np.argmax(logits.data[-1])))
                per_step.append(int(round(meter.total - before)))
    return int(round(meter.total)), per_step


def decode_flops(fusion: FusionModel, mode: str, seq_len: int, n_visual: int = 16) -> int:
    """Fast exact decoder-side FLOP total for one stream.

    Recurrent steps cost the same regardless of position, and a stateless
    step's cost is an exact quadratic in the prefix length (every decoder
    op is polynomial in t; nothing logarithmic runs there). So metering a
    handful of steps pins the law and the total follows in closed form.
    ``count_decode_flops`` is the full metered run this must agree with.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")
    if mode == "recurrent":
        total, per_step = count_decode_flops(fusion, mode, 2, n_visual)
        if per_step[0] != per_step[1]:
            raise ContractError("recurrent per-step cost is not constant")
        return per_step[0] * seq_len
    if seq_len <= 4:
        return count_decode_flops(fusion, mode, seq_len, n_visual)[0]
    _, steps = count_decode_flops(fusion, mode, 4, n_visual)
    # step i meters the forward over a prefix of length i+1
    s1, s2, s3, s4 = steps
    twice_a = s3 - 2 * s2 + s1
    if s4 - 2 * s3 + s2 != twice_a:
        raise ContractError("stateless per-step cost is not quadratic")
    b2 = 2 * (s2 - s1) - 3 * twice_a  # 2b
    c2 = 2 * s1 - twice_a - b2  # 2c
    t = seq_len
    # sum_{i=1..t} (a i^2 + b i + c), everything scaled by 2 to stay integral
    total2 = twice_a * t * (t + 1) * (2 * t + 1) // 6 + b2 * t * (t + 1) // 2 + c2 * t
    return total2 // 2


def rough_decode_gflops(cfg: FusionConfig, mode: str, seq_len: int, n_visual: int) -> float:
    """Coarse upper-ballpark estimate used only by the budget guard."""
    h, f, v, n = cfg.hidden, cfg.ff_size, cfg.vocab_size, cfg.n_layers
    per_token = n * (8 * h * h + 4 * h * f + 4 * h * n_visual) + 2 * h * v + n * 2 * h * h
    if mode == "recurrent":
        total = seq_len * (per_token + n * 5 * h * h)
    else:
        total = seq_len * (seq_len + 1) // 2 * per_token + seq_len * seq_len * n * 4 * h
    return total / 1e9


def bench_decode(
    fusion: FusionModel,
    modes,
    seq_lens,
    batches,
    repeats: int = 3,
    n_visual: int = 16,
    seed: int = 42,
    budget_gflops: float = 100.0,
) -> BenchReport:
    """Measure every (mode, seq_len, batch) grid cell.

    FLOPs are metered once (they are deterministic); wall time is the
    median over ``repeats`` runs. Cells whose rough estimate exceeds
    ``budget_gflops`` are rejected up front.
    """
    if repeats < 3:
        raise DomainError("repeats must be >= 3 for a stable median")
    for mode in modes:
        if mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
    for mode in modes:
        for t in seq_lens:
            for b in batches:
                est = b * rough_decode_gflops(fusion.cfg, mode, t, n_visual)
                if est > budget_gflops:
                    raise DomainError(
                        f"cell ({mode}, T={t}, batch={b}) estimated {est:.1f} GFLOP "
                        f"exceeds the budget of {budget_gflops:.1f}; raise it explicitly"
                    )
    report = BenchReport()
    cfg_hash = hashlib.sha256(
        json.dumps(fusion.cfg.to_dict(), sort_keys=True).encode()
    ).hexdigest()[:12]
    report.meta = {
        "config_hash": cfg_hash,
        "seed": seed,
        "n_visual": n_visual,
        "repeats": repeats,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    run = {"recurrent": _run_recurrent, "stateless": _run_stateless}
    for mode in modes:
        for t in seq_lens:
            for b in batches:
                flops_one = decode_flops(fusion, mode, t, n_visual)
                feats = [synth_features(fusion.cfg, n_visual, seed + i) for i in range(b)]
                encs = [fusion.encode(Tensor(f)) for f in feats]
                walls = []
                peak = 0
                for _ in range(repeats):
                    start = time.perf_counter_ns()
                    for enc in encs:
                        peak = max(peak, run[mode](fusion, enc, t))
                    walls.append(time.perf_counter_ns() - start)
                report.rows.append(
                    BenchRow(
                        mode=mode,
                        seq_len=t,
                        batch=b,
                        flops=flops_one * b,
                        wall_ns=int(median(walls)),
                        peak_state_bytes=peak,
                    )
                )
    return report


def bench_memory(fusion: FusionModel, mode: str, seq_lens, n_visual: int = 16, seed: int = 42):
    """Peak per-stream decode-state bytes for each length."""
    feats = synth_features(fusion.cfg, n_visual, seed)
    enc = fusion.encode(Tensor(feats))
    run = {"recurrent": _run_recurrent, "stateless": _run_stateless}[mode]
    return [(mode, t, run(fusion, enc, t)) for t in seq_lens]


def loglog_slope(ts, values) -> float:
    """Least-squares slope of log(value) against log(t)."""
    x = np.log(np.asarray(ts, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    x = x - x.mean()
    return float((x * (y - y.mean())).sum() / (x * x).sum())


# ----------------------------------------------------------------------
# report emission
# ----------------------------------------------------------------------


def emit_report(report: BenchReport, fmt: str, path, metric: str = "wall_ns", loglog=False):
    """Write the report as CSV or as an SVG line chart (one series per mode)."""
    if not report.rows:
        raise ContractError("refusing to emit an empty report")
    if fmt == "csv":
        _emit_csv(report, path)
    elif fmt == "svg":
        _emit_svg(report, path, metric, loglog)
    else:
        raise DomainError(f"unknown format {fmt!r}")


def _emit_csv(report: BenchReport, path) -> None:
    lines = [CSV_HEADER]
    for r in report.rows:
        lines.append(
            f"{r.mode},{r.seq_len},{r.batch},{r.flops},{r.wall_ns},{r.peak_state_bytes}"
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def parse_report_csv(path) -> BenchReport:
    report = BenchReport()
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ContractError(f"unexpected CSV header: {header}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            mode, t, b, fl, w, p = line.split(",")
            report.rows.append(
                BenchRow(mode, int(t), int(b), int(fl), int(w), int(p))
            )
    return report


_SERIES_COLORS = ("#c23b22", "#1f6feb", "#2da44e", "#8250df")


def _emit_svg(report: BenchReport, path, metric: str, loglog: bool) -> None:
    width, height, margin = 640, 440, 60
    modes = sorted({r.mode for r in report.rows})
    series = {}
    for mode in modes:
        pts = sorted(
            (r.seq_len, getattr(r, metric)) for r in report.rows if r.mode == mode
        )
        series[mode] = pts
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [max(p[1], 1) for pts in series.values() for p in pts]

    def tx(v):
        lo, hi = min(xs), max(xs)
        if loglog:
            lo, hi, v = np.log(lo), np.log(max(hi, lo + 1)), np.log(v)
        span = (hi - lo) or 1.0
        return margin + (v - lo) / span * (width - 2 * margin)

    def ty(v):
        lo, hi = min(ys), max(ys)
        if loglog:
            lo, hi, v = np.log(lo), np.log(max(hi, lo + 1)), np.log(max(v, 1))
        span = (hi - lo) or 1.0
        return height - margin - (v - lo) / span * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" font-size="13" '
        f'text-anchor="middle">seq_len</text>',
        f'<text x="16" y="{height // 2}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {height // 2})">{metric}</text>',
    ]
    for v in sorted(set(xs)):
        x = tx(v)
        parts.append(
            f'<line x1="{x:.1f}" y1="{height - margin}" x2="{x:.1f}" '
            f'y2="{height - margin + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{height - margin + 18}" font-size="11" '
            f'text-anchor="middle">{v}</text>'
        )
    for i, (mode, pts) in enumerate(series.items()):
        color = _SERIES_COLORS[i % len(_SERIES_COLORS)]
        coords = " ".join(f"{tx(x):.1f},{ty(y):.1f}" for x, y in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - margin - 120}" y="{margin + 16 * i}" font-size="12" '
            f'fill="{color}">{mode}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
