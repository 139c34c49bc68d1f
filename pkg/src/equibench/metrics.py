"""Figures of merit: accuracy, ROC AUC, background rejection, ant factor, timing."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import rankdata

from equibench.errors import DomainError

ANT_FACTOR_DISPLAY = 1e5
WARMUP_BATCHES = 5


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise DomainError(f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise DomainError("empty input")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties worth one half."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC needs both classes present")
    ranks = rankdata(s)  # average ranks give the half credit for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.0) -> float:
    s, y = _check(scores, labels)
    return float(np.mean((s > threshold) == y))


class Rejection(NamedTuple):
    value: float
    zero_fpr: bool
    threshold: float
    tpr: float


def background_rejection(scores, labels, signal_eff: float = 0.3) -> Rejection:
    """Inverse false-positive rate at the working point just reaching ``signal_eff``.

    Events with ``score >= t`` are accepted. ``t`` is the highest score for
    which the accepted signal fraction is at least ``signal_eff``; there is
    no interpolation between operating points. When no background survives,
    the value is capped at ``n_background + 1`` and ``zero_fpr`` is set.
    """
    s, y = _check(scores, labels)
    sig = np.sort(s[y])[::-1]
    bkg = s[~y]
    if sig.size == 0 or bkg.size == 0:
        raise DomainError("background rejection needs both classes present")
    k = math.ceil(signal_eff * sig.size - 1e-12)
    k = min(max(k, 1), sig.size)
    t = sig[k - 1]
    tpr = float(np.mean(s[y] >= t))
    n_fp = int(np.sum(bkg >= t))
    if n_fp == 0:
        return Rejection(float(bkg.size + 1), True, float(t), tpr)
    return Rejection(bkg.size / n_fp, False, float(t), tpr)


def ant_factor_v2(auc: float, n_parameters: int) -> float:
    """1 / ((1 - AUC) * N_parameters); ``inf`` flags a perfect AUC."""
    if n_parameters < 1:
        raise DomainError("n_parameters must be >= 1")
    if not 0.0 <= auc <= 1.0:
        raise DomainError(f"AUC must lie in [0, 1], got {auc}")
    if auc == 1.0:
        return math.inf
    return 1.0 / ((1.0 - auc) * n_parameters)


def ant_factor_display(auc: float, n_parameters: int) -> float:
    """Ant factor in the x1e5 units used in published tables."""
    return ant_factor_v2(auc, n_parameters) * ANT_FACTOR_DISPLAY


# -- timing -------------------------------------------------------------------


def hardware_profile() -> str:
    cpu = platform.processor() or platform.machine()
    return f"{platform.system()} {cpu} cpus={os.cpu_count()} python={platform.python_version()} numpy={np.__version__}"


@dataclass
class TimingResult:
    mean_ms: float
    std_ms: float
    runs: int
    batch_size: int
    warmup: int
    profile: str
    flagged: bool = False

    def interval(self, k: float = 2.0) -> tuple[float, float]:
        return self.mean_ms - k * self.std_ms, self.mean_ms + k * self.std_ms

    def overlaps(self, other: "TimingResult", k: float = 2.0) -> bool:
        lo, hi = self.interval(k)
        olo, ohi = other.interval(k)
        return lo <= ohi and olo <= hi


def time_inference(model, ds, batch_size: int = 100, runs: int = 300, warmup: int = WARMUP_BATCHES) -> TimingResult:
    """Wall-clock milliseconds per forward pass of one ``batch_size`` batch.

    Batches are collated up front so only the model is timed. ``warmup``
    passes are discarded; ``runs`` timed passes cycle through the batches.
    A single run reports std 0 and sets ``flagged``.
    """
    from threadpoolctl import threadpool_limits

    from equibench.graphdata import collate

    if len(ds) < batch_size:
        raise DomainError(f"dataset has {len(ds)} events, fewer than one batch of {batch_size}")
    if runs < 1:
        raise DomainError("runs must be >= 1")
    batches = [collate(ds.events[k : k + batch_size]) for k in range(0, len(ds) - batch_size + 1, batch_size)]
    times = []
    with threadpool_limits(limits=1):
        for r in range(warmup + runs):
            batch = batches[r % len(batches)]
            t0 = time.perf_counter()
            model.forward(batch)
            dt = (time.perf_counter() - t0) * 1e3
            if r >= warmup:
                times.append(dt)
    arr = np.array(times)
    std = float(arr.std(ddof=1)) if runs > 1 else 0.0
    return TimingResult(float(arr.mean()), std, runs, batch_size, warmup, hardware_profile(), flagged=runs == 1)


# -- reports ------------------------------------------------------------------

REPORT_COLUMNS = (
    "accuracy",
    "auc",
    "rejection_at_30",
    "rejection_zero_fpr",
    "n_parameters",
    "ant_factor_v2",
    "ant_factor_v2_display",
)


@dataclass
class MetricsReport:
    accuracy: float
    auc: float
    rejection_at_30: float
    rejection_zero_fpr: bool
    n_parameters: int
    ant_factor_v2: float
    timing: Optional[dict] = None

    @property
    def ant_factor_v2_display(self) -> float:
        return self.ant_factor_v2 * ANT_FACTOR_DISPLAY

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ant_factor_v2_display"] = self.ant_factor_v2_display
        if d["timing"] is None:
            del d["timing"]
        return d

    def to_json(self, extra: Optional[dict] = None) -> str:
        d = dict(extra or {})
        d.update(self.to_dict())
        return json.dumps(d, indent=2, default=_json_default)

    def csv_row(self) -> list:
        row = [getattr(self, c) for c in REPORT_COLUMNS]
        if self.timing:
            row += [self.timing["mean_ms"], self.timing["std_ms"], self.timing["profile"]]
        return row

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        cols = list(REPORT_COLUMNS)
        if self.timing:
            cols += ["time_mean_ms", "time_std_ms", "hardware_profile"]
        w.writerow(cols)
        w.writerow([_fmt(v) for v in self.csv_row()])
        return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def report_from_scores(scores, labels, n_parameters: int) -> MetricsReport:
    auc = roc_auc(scores, labels)
    rej = background_rejection(scores, labels)
    return MetricsReport(
        accuracy=accuracy(scores, labels),
        auc=auc,
        rejection_at_30=rej.value,
        rejection_zero_fpr=rej.zero_fpr,
        n_parameters=int(n_parameters),
        ant_factor_v2=ant_factor_v2(auc, n_parameters),
    )


def evaluate_model(model, ds, timing: bool = False, timing_runs: int = 300) -> MetricsReport:
    from equibench.layers import count_parameters

    scores = model.predict(ds.events)
    report = report_from_scores(scores, ds.labels(), count_parameters(model))
    if timing:
        t = time_inference(model, ds, batch_size=min(100, len(ds)), runs=timing_runs)
        report.timing = asdict(t)
    return report


def mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0
