"""Confusion metrics, training-curve comparison, handover traces, and the p/f sweep."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .channel import SNR_FLOOR_DB, capacity

# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    flags: tuple[str, ...] = ()   # names of rates whose denominator was zero (reported as 0)

    def as_row(self) -> dict:
        c = self.counts
        return {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn, "accuracy": self.accuracy,
                "precision": self.precision, "recall": self.recall, "flags": ";".join(self.flags)}


def _rate(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics(preds, labels, threshold: float = 0.5) -> MetricsReport:
    """Counts and rates with blockage (label 1) as the positive class."""
    preds = np.asarray(preds, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"predictions ({preds.size}) and labels ({labels.size}) differ in length")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    hat = preds >= threshold
    pos = labels.astype(bool)
    c = ConfusionCounts(int(np.sum(hat & pos)), int(np.sum(~hat & ~pos)), int(np.sum(hat & ~pos)), int(np.sum(~hat & pos)))
    flags: list[str] = []
    acc = _rate(c.tp + c.tn, c.total, "accuracy", flags)
    prec = _rate(c.tp, c.tp + c.fp, "precision", flags)
    rec = _rate(c.tp, c.tp + c.fn, "recall", flags)
    return MetricsReport(c, acc, prec, rec, tuple(flags))


def write_metrics_csv(report: MetricsReport, path) -> None:
    row = report.as_row()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)


# ---------------------------------------------------------------------------
# SVG line plots
# ---------------------------------------------------------------------------

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def svg_line_plot(series: dict[str, tuple[np.ndarray, np.ndarray]], path, title: str = "",
                  xlabel: str = "", ylabel: str = "", width: int = 640, height: int = 360) -> None:
    """Minimal static line chart; non-finite points are dropped."""
    ml, mr, mt, mb = 60, 150, 30, 45
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()] or [np.zeros(1)])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()] or [np.zeros(1)])
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (xs[ok].min(), xs[ok].max()) if ok.any() else (0.0, 1.0)
    y0, y1 = (ys[ok].min(), ys[ok].max()) if ok.any() else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1.0
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - ml - mr, height - mt - mb

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
             f'font-size="11">',
             f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
             f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
             f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>',
             f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" transform="rotate(-90 14 {mt + ph / 2})">'
             f'{ylabel}</text>']
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        parts.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 14}" text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<text x="{ml - 4}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    for i, (name, (x, y)) in enumerate(series.items()):
        colour = _COLOURS[i % len(_COLOURS)]
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x[keep], y[keep]))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 14 + 16 * i
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{colour}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 34}" y="{ly + 4}">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# training comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingComparison:
    ordering_fraction: float   # share of epochs where proposed val acc >= baseline val acc
    mean_margin: float         # mean (proposed - baseline) val acc over the same epochs
    n_epochs: int
    after_epoch: int


def compare_training(proposed, baseline, out_dir=None, after_epoch: int = 0, prefix: str = "comparison"):
    """Pair two histories epoch by epoch; optionally write CSV + SVG curves.

    Only epochs numbered above ``after_epoch`` enter the ordering summary.
    """
    if len(proposed) != len(baseline):
        raise ValueError(f"histories differ in length: {len(proposed)} vs {len(baseline)} epochs")
    ep = proposed.column("epoch")
    if not np.array_equal(ep, baseline.column("epoch")):
        raise ValueError("histories are not on the same epoch grid")
    pv, bv = proposed.column("val_acc"), baseline.column("val_acc")
    window = ep > after_epoch
    n = int(window.sum())
    frac = float(np.mean(pv[window] >= bv[window])) if n else 1.0
    margin = float(np.mean(pv[window] - bv[window])) if n else 0.0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = ("train_loss", "train_acc", "val_loss", "val_acc")
        with open(out / f"{prefix}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch"] + [f"proposed_{c}" for c in cols] + [f"baseline_{c}" for c in cols])
            for i, e in enumerate(ep):
                w.writerow([int(e)] + [repr(float(proposed.column(c)[i])) for c in cols]
                           + [repr(float(baseline.column(c)[i])) for c in cols])
        svg_line_plot({"proposed train": (ep, proposed.column("train_acc")),
                       "proposed val": (ep, pv),
                       "baseline train": (ep, baseline.column("train_acc")),
                       "baseline val": (ep, bv)},
                      out / f"{prefix}_accuracy.svg", "Accuracy per epoch", "epoch", "accuracy")
        svg_line_plot({"proposed train": (ep, proposed.column("train_loss")),
                       "proposed val": (ep, proposed.column("val_loss")),
                       "baseline train": (ep, baseline.column("train_loss")),
                       "baseline val": (ep, baseline.column("val_loss"))},
                      out / f"{prefix}_loss.svg", "Loss per epoch", "epoch", "BCE")
    return TrainingComparison(frac, margin, n, after_epoch)


# ---------------------------------------------------------------------------
# handover
# ---------------------------------------------------------------------------

TRACE_FIELDS = ("step", "serving_bs", "capacity_bps", "serving_blocked", "blockage_predicted", "handover")


@dataclass
class HandoverConfig:
    p: int = 8
    f: int = 3
    bandwidth_hz: float = 0.2e9
    outage_snr_db: float = 3.0   # below this the link delivers 0 bps
    threshold: float = 0.5
    initial_bs: int = 0


@dataclass
class HandoverTrace:
    serving: np.ndarray        # (T,) serving BS per step
    snr_db: np.ndarray         # (T, n_bs) best-beam SNR per candidate
    capacity_bps: np.ndarray   # (T,)
    serving_blocked: np.ndarray  # (T,) 1 where the serving link has no LoS
    blockage_predicted: np.ndarray  # (T,) blockage flag raised on the serving link
    handovers: np.ndarray      # (T,) 1 where the serving BS changed at this step

    def __len__(self) -> int:
        return int(self.serving.shape[0])

    @property
    def mean_capacity(self) -> float:
        return float(self.capacity_bps.mean()) if len(self) else 0.0

    def write_csv(self, path) -> None:
        n_bs = self.snr_db.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(TRACE_FIELDS[:2]) + [f"snr_db_bs{b}" for b in range(n_bs)] + list(TRACE_FIELDS[2:]))
            for t in range(len(self)):
                w.writerow([t, int(self.serving[t])] + [repr(float(v)) for v in self.snr_db[t]]
                           + [repr(float(self.capacity_bps[t])), int(self.serving_blocked[t]), int(self.blockage_predicted[t]),
                              int(self.handovers[t])])

    def write_svg(self, path, title: str = "Handover trace") -> None:
        steps = np.arange(len(self))
        series = {f"SNR BS{b} (dB)": (steps, self.snr_db[:, b]) for b in range(self.snr_db.shape[1])}
        series["capacity (Gbps)"] = (steps, self.capacity_bps / 1e9)
        svg_line_plot(series, path, title, "time step", "dB / Gbps")


def model_flags(predict: Callable, records_by_bs: list, p: int, threshold: float = 0.5) -> np.ndarray:
    """(T, n_bs) blockage flags from a window predictor; the first p-1 steps are unflagged."""
    T = records_by_bs[0].length
    flags = np.zeros((T, len(records_by_bs)), dtype=np.uint8)
    if T < p:
        return flags
    for b, rec in enumerate(records_by_bs):
        images = sliding_window_view(rec.images, p, axis=0).transpose(0, 3, 1, 2)
        beams = sliding_window_view(rec.beams, p)
        prob = np.asarray(predict(images, beams), dtype=np.float64)
        flags[p - 1:, b] = prob >= threshold
    return flags


def oracle_flags(records_by_bs: list, f: int) -> np.ndarray:
    """Flag step t when any of the true LoS states t+1..t+f is blocked."""
    T = records_by_bs[0].length
    flags = np.zeros((T, len(records_by_bs)), dtype=np.uint8)
    for b, rec in enumerate(records_by_bs):
        for t in range(T):
            flags[t, b] = rec.los[t + 1:t + 1 + f].any()
    return flags


def handover_sim(records_by_bs: list, predictor="none", cfg: HandoverConfig | None = None) -> HandoverTrace:
    """Serve one user from several base stations under a switch-on-predicted-blockage policy.

    ``records_by_bs[b]`` is the simulated stream of the user as seen from BS ``b``.
    ``predictor`` is "none" (serving BS fixed), "oracle" (true future LoS), or a
    callable ``(images (n, p, H, W), beams (n, p)) -> probabilities``. When the
    serving link is flagged, the user moves to the unflagged candidate with the
    highest current SNR; with every candidate flagged it stays put.
    """
    cfg = cfg or HandoverConfig()
    if len(records_by_bs) < 2:
        raise ValueError("handover needs at least two base stations")
    T = records_by_bs[0].length
    snr = np.stack([r.snr_db for r in records_by_bs], axis=1)
    los = np.stack([r.los for r in records_by_bs], axis=1)
    if isinstance(predictor, str) and predictor == "none":
        flags = np.zeros_like(los)
    elif isinstance(predictor, str) and predictor == "oracle":
        flags = oracle_flags(records_by_bs, cfg.f)
    elif callable(predictor):
        flags = model_flags(predictor, records_by_bs, cfg.p, cfg.threshold)
    else:
        raise ValueError(f"predictor must be 'none', 'oracle', or callable, got {predictor!r}")

    serving = np.zeros(T, np.int64)
    cap = np.zeros(T)
    handovers = np.zeros(T, np.uint8)
    pred = np.zeros(T, np.uint8)
    current = cfg.initial_bs
    for t in range(T):
        pred[t] = flags[t, current]
        if flags[t, current]:
            candidates = [b for b in range(len(records_by_bs)) if b != current and not flags[t, b]]
            if candidates:
                best = max(candidates, key=lambda b: (snr[t, b], -b))
                handovers[t] = 1
                current = best
        serving[t] = current
        s = snr[t, current]
        cap[t] = capacity(10.0 ** (s / 10.0), cfg.bandwidth_hz) if s >= cfg.outage_snr_db else 0.0
    serving_blocked = los[np.arange(T), serving]
    return HandoverTrace(serving, snr, cap, serving_blocked, pred, handovers)


def snr_drop_db(trace_snr: np.ndarray, los: np.ndarray) -> float:
    """Median LoS SNR minus median blocked SNR on one link."""
    los = np.asarray(los).astype(bool)
    if los.all() or not los.any():
        return 0.0
    blocked = np.maximum(trace_snr[los], SNR_FLOOR_DB)
    return float(np.median(trace_snr[~los]) - np.median(blocked))


# ---------------------------------------------------------------------------
# p/f sweep
# ---------------------------------------------------------------------------

SWEEP_FIELDS = ("p", "f", "n_train", "n_test", "test_accuracy", "val_accuracy")


@dataclass
class SweepResult:
    rows: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def accuracy(self, p: int, f: int) -> float:
        for r in self.rows:
            if r["p"] == p and r["f"] == f:
                return r["test_accuracy"]
        raise KeyError(f"no sweep cell p={p}, f={f}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
            for note in self.notes:
                fh.write(f"# {note}\n")


def sweep_pf(records, p_values, f_values, fit_cell: Callable, ratios=(0.7, 0.15, 0.15), n_beams: int = 32,
             progress: Callable | None = None) -> SweepResult:
    """Retrain per (p, f) cell on windows cut from the same simulated streams.

    ``fit_cell(split) -> (test_accuracy, val_accuracy)`` trains and scores one
    cell. Cells that do not fit the stream length, or leave a split empty,
    are skipped with a note.
    """
    from .dataset import chronological_split, windows_from_records

    result = SweepResult()
    T = min(r.length for r in records)
    for p in p_values:
        for f in f_values:
            if p < 1 or f < 1 or p + f > T:
                result.notes.append(f"skipped p={p} f={f}: needs p + f <= {T} and p, f >= 1")
                continue
            try:
                split = chronological_split(windows_from_records(records, p, f), ratios, n_beams=n_beams, p=p, f=f)
            except ValueError as exc:
                result.notes.append(f"skipped p={p} f={f}: {exc}")
                continue
            test_acc, val_acc = fit_cell(split)
            row = {"p": p, "f": f, "n_train": len(split.train), "n_test": len(split.test),
                   "test_accuracy": float(test_acc), "val_accuracy": float(val_acc)}
            result.rows.append(row)
            if progress is not None:
                progress(row)
    return result



def proposed_fitter(epochs: int = 100, seed: int = 0, **params) -> Callable:
    """Cell trainer for :func:`sweep_pf` using the proposed model."""
    from .models import BlockagePredictor, pack_proposed

    def fit_cell(split):
        H = split.image_shape[0]
        est = BlockagePredictor(n_frames=split.p, image_size=H, n_beams=split.n_beams, epochs=epochs, seed=seed,
                                **params)
        est.fit(pack_proposed(split.train), split.train.labels, pack_proposed(split.validation),
                split.validation.labels)
        val = est.score(pack_proposed(split.validation), split.validation.labels)
        return est.score(pack_proposed(split.test), split.test.labels), val

    return fit_cell
