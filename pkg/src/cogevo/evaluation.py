"""Knowledge-tracing metrics, learning-curve fitting and report emitters."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, column_or_1d

ALPHA_GRID = np.round(np.arange(1, 301) * 0.01, 2)


class UndefinedMetricError(ValueError):
    """Metric has no value for this input (e.g. single-class labels)."""

    def __init__(self, metric: str, message: str, count: int = 0):
        super().__init__(f"{metric}: {message}")
        self.metric = metric
        self.count = count


class KeyMismatchError(ValueError):
    pass


class NonDecayingWarning(UserWarning):
    pass


def _labels(labels) -> np.ndarray:
    return np.asarray(labels, dtype=float)


def auc(preds: Sequence[float], labels: Sequence[bool]) -> float:
    """Mann-Whitney AUC via average ranks; tied pairs count one half."""
    p = np.asarray(preds, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if p.shape != y.shape:
        raise ValueError("preds and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auc", "needs at least one positive and one negative label", y.size)
    ranks = rankdata(p, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rmse(preds, labels) -> float:
    p = np.asarray(preds, dtype=float)
    y = _labels(labels)
    if p.size == 0:
        raise UndefinedMetricError("rmse", "empty input")
    if p.shape != y.shape:
        raise ValueError("preds and labels differ in length")
    return float(np.sqrt(np.mean((p - y) ** 2)))


@dataclass(frozen=True)
class MistakePrecision:
    strict: float
    co_error: Optional[float]
    n_agent_errors: int
    n_co_errors: int
    n_matches: int


def mistake_precision_detail(agent_log: Iterable[Mapping], truth: Iterable) -> MistakePrecision:
    """Tag agreement on agent errors.

    ``agent_log`` rows need student, t, item, correct and misconception keys;
    truth rows may be mappings or TruthRecord objects. The strict variant
    divides by every agent error, the co-error variant only by steps where
    the ground truth was also wrong.
    """
    def get(r, k):
        return r[k] if isinstance(r, Mapping) else getattr(r, k)

    index = {(get(r, "student"), get(r, "t"), get(r, "item")): r for r in truth}
    missing = []
    n_err = n_co = n_match = 0
    for row in agent_log:
        key = (get(row, "student"), get(row, "t"), get(row, "item"))
        tr = index.get(key)
        if tr is None:
            missing.append(key)
            continue
        if get(row, "correct"):
            continue
        n_err += 1
        if not get(tr, "correct"):
            n_co += 1
            if get(row, "misconception") == get(tr, "misconception"):
                n_match += 1
    if missing:
        raise KeyMismatchError(f"{len(missing)} agent steps have no ground-truth row, e.g. {missing[0]}")
    if n_err == 0:
        raise UndefinedMetricError("mistake_precision", "agent never answered incorrectly", 0)
    return MistakePrecision(n_match / n_err, n_match / n_co if n_co else None, n_err, n_co, n_match)


def mistake_precision(agent_log, truth) -> float:
    return mistake_precision_detail(agent_log, truth).strict


# ------------------------------------------------------------- power law


@dataclass(frozen=True)
class PowerLawFit:
    A: float
    alpha: float
    eps: float
    fit_r2: float
    sse: float
    degenerate: bool = False
    non_decaying: bool = False

    def predict(self, n):
        return self.A * np.power(np.asarray(n, dtype=float), -self.alpha) + self.eps


def _ls_two(x: np.ndarray, y: np.ndarray):
    """Per-row least squares of y ~ A*x + e with A >= 0, e in [0, 1].

    ``x`` has one basis row per alpha; returns (A, e, sse) arrays.
    """
    m = y.size
    sx = x.sum(axis=1)
    sxx = (x * x).sum(axis=1)
    sy = y.sum()
    sxy = x @ y
    det = m * sxx - sx * sx
    with np.errstate(divide="ignore", invalid="ignore"):
        A = np.where(det > 0, (m * sxy - sx * sy) / det, 0.0)
        e = np.where(det > 0, (sy - A * sx) / m, sy / m)

    def sse(A_, e_):
        r = y[None, :] - A_[:, None] * x - e_[:, None]
        return (r * r).sum(axis=1)

    ok = (A >= 0) & (e >= 0) & (e <= 1)
    best_A, best_e = A.copy(), e.copy()
    best = np.where(ok, sse(A, e), np.inf)
    # active-set candidates when the free solution leaves the box
    cands = []
    e0 = np.clip(np.full_like(A, sy / m), 0, 1)
    cands.append((np.zeros_like(A), e0))
    for e_fix in (0.0, 1.0):
        with np.errstate(divide="ignore", invalid="ignore"):
            A_fix = np.where(sxx > 0, (sxy - e_fix * sx) / sxx, 0.0)
        cands.append((np.maximum(A_fix, 0.0), np.full_like(A, e_fix)))
    for cA, ce in cands:
        s = sse(cA, ce)
        better = (~ok) & (s < best)
        best = np.where(better, s, best)
        best_A = np.where(better, cA, best_A)
        best_e = np.where(better, ce, best_e)
    return best_A, best_e, best


def fit_power_law(series: Sequence[tuple[float, float]] | np.ndarray, alphas=ALPHA_GRID) -> PowerLawFit:
    """Fit E(n) = A n^-alpha + eps by alpha grid search and closed-form inner LS."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("series must be a sequence of (n, rate) pairs")
    if arr.shape[0] < 4:
        raise ValueError(f"power-law fit needs at least 4 points, got {arr.shape[0]}")
    n, y = arr[:, 0], arr[:, 1]
    if (n < 1).any():
        raise ValueError("opportunity index n must be >= 1")
    sst = float(((y - y.mean()) ** 2).sum())
    if np.ptp(y) == 0.0:
        warnings.warn("constant series: power-law fit is degenerate", NonDecayingWarning, stacklevel=2)
        return PowerLawFit(0.0, float(alphas[0]), float(min(1.0, max(0.0, y[0]))), float("nan"), 0.0, True, True)
    x = np.power(n[None, :], -np.asarray(alphas)[:, None])
    A, e, sse = _ls_two(x, y)
    i = int(np.argmin(sse))  # first minimum: smallest alpha on ties
    fit = PowerLawFit(float(A[i]), float(alphas[i]), float(e[i]), 1.0 - float(sse[i]) / sst, float(sse[i]))
    if fit.A <= 1e-12:
        warnings.warn("series does not decay with practice", NonDecayingWarning, stacklevel=2)
        fit = PowerLawFit(fit.A, fit.alpha, fit.eps, fit.fit_r2, fit.sse, False, True)
    return fit


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn wrapper: ``fit(n, rate)`` then ``predict(n)``."""

    def __init__(self, alpha_step: float = 0.01, alpha_max: float = 3.0):
        self.alpha_step = alpha_step
        self.alpha_max = alpha_max

    def fit(self, X, y):
        X, y = check_X_y(np.asarray(X, dtype=float).reshape(len(y), -1), y, y_numeric=True)
        n_steps = int(round(self.alpha_max / self.alpha_step))
        grid = np.round(np.arange(1, n_steps + 1) * self.alpha_step, 10)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = fit_power_law(np.column_stack([X[:, 0], y]), grid)
        for w in caught:
            warnings.warn(w.message, w.category, stacklevel=2)
        self.fit_ = fit
        self.A_, self.alpha_, self.eps_ = fit.A, fit.alpha, fit.eps
        self.r2_ = fit.fit_r2
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        n = column_or_1d(np.asarray(X, dtype=float).reshape(-1, 1) if np.ndim(X) < 2 else np.asarray(X)[:, 0])
        return self.fit_.predict(n)


# ----------------------------------------------------------- learning curves


def r2_lc(agent_series, human_series) -> float:
    a = np.asarray(agent_series, dtype=float)
    h = np.asarray(human_series, dtype=float)
    if a.shape != h.shape:
        raise ValueError("agent and human series differ in length")
    if h.size < 2:
        raise ValueError("r2_lc needs at least 2 points")
    sst = float(((h - h.mean()) ** 2).sum())
    if np.ptp(h) == 0.0:
        raise UndefinedMetricError("r2_lc", "human series is constant", h.size)
    return 1.0 - float(((h - a) ** 2).sum()) / sst


def opportunity_table(rows: Iterable, item_kp: Mapping[str, int], error_of=None):
    """Yield (kp, opportunity n, error) per row, counting n per (student, kp) in t order."""
    def get(r, k):
        return r[k] if isinstance(r, Mapping) else getattr(r, k)

    error_of = error_of or (lambda r: not get(r, "correct"))
    ordered = sorted(rows, key=lambda r: (get(r, "student"), get(r, "t")))
    counters: dict[tuple, int] = {}
    for r in ordered:
        item = get(r, "item")
        if item not in item_kp:
            raise KeyError(f"item {item!r} has no knowledge point")
        kp = item_kp[item]
        key = (get(r, "student"), kp)
        counters[key] = counters.get(key, 0) + 1
        yield kp, counters[key], float(bool(error_of(r)))


def binned_error_series(
    rows: Iterable,
    knowledge_point: Optional[int],
    bin_width: int,
    item_kp: Mapping[str, int],
    error_of=None,
) -> list[tuple[float, float]]:
    """Error rate per opportunity bin; ``knowledge_point=None`` pools all points.

    Each bin is reported at its centre opportunity (start + (width-1)/2).
    """
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    if knowledge_point is not None and knowledge_point not in set(item_kp.values()):
        raise KeyError(f"unknown knowledge point {knowledge_point}")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for kp, n, err in opportunity_table(rows, item_kp, error_of):
        if knowledge_point is not None and kp != knowledge_point:
            continue
        b = (n - 1) // bin_width
        sums[b] = sums.get(b, 0.0) + err
        counts[b] = counts.get(b, 0) + 1
    return [
        (b * bin_width + 1 + (bin_width - 1) / 2.0, sums[b] / counts[b])
        for b in sorted(counts)
    ]


def align_series(a: Sequence[tuple[float, float]], b: Sequence[tuple[float, float]]):
    """Restrict two binned series to their common opportunities."""
    da, db = dict(a), dict(b)
    ns = sorted(set(da) & set(db))
    return ns, [da[n] for n in ns], [db[n] for n in ns]


def alignment_score(deltas: Iterable[float]) -> float:
    vals = [float(d) for d in deltas]
    if not vals:
        raise UndefinedMetricError("align", "empty log", 0)
    return math.fsum(vals) / len(vals)


# ---------------------------------------------------------------- reports


@dataclass
class MetricReport:
    auc: Optional[float] = None
    rmse: Optional[float] = None
    mistake_precision: Optional[float] = None
    mistake_precision_co_error: Optional[float] = None
    r2_lc: Optional[float] = None
    align: Optional[float] = None
    power_fit: Optional[dict] = None
    human_fit: Optional[dict] = None
    n_samples: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    RANGES = {
        "auc": (0.0, 1.0),
        "rmse": (0.0, math.inf),
        "mistake_precision": (0.0, 1.0),
        "mistake_precision_co_error": (0.0, 1.0),
        "r2_lc": (-math.inf, 1.0),
        "align": (-1.0, 1.0),
    }

    def check_ranges(self) -> list[str]:
        bad = []
        for k, (lo, hi) in self.RANGES.items():
            v = getattr(self, k)
            if v is not None and not (lo - 1e-12 <= v <= hi + 1e-12):
                bad.append(f"{k}={v} outside [{lo}, {hi}]")
        return bad

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def to_json(self) -> str:
        def fix(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            if isinstance(x, dict):
                return {k: fix(v) for k, v in x.items()}
            return x
        return json.dumps(fix(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def csv_row(self) -> dict:
        row = {}
        for k in self.RANGES:
            v = getattr(self, k)
            row[k] = "n/a" if v is None else f"{v:.6f}"
        if self.power_fit:
            for k in ("A", "alpha", "eps", "fit_r2"):
                v = self.power_fit.get(k)
                row[f"agent_fit_{k}"] = "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"
        for k, v in sorted(self.n_samples.items()):
            row[f"n_{k}"] = v
        return row

    def to_csv(self) -> str:
        row = self.csv_row()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def curve_csv(ns, human, agent, fitted) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "human_rate", "agent_rate", "fitted_E"])
    for row in zip(ns, human, agent, fitted):
        w.writerow([f"{row[0]:g}"] + [f"{v:.6f}" for v in row[1:]])
    return buf.getvalue()


def curve_svg(ns, series: Mapping[str, Sequence[float]], width: int = 640, height: int = 400) -> str:
    """Minimal standalone SVG line chart of error rate against opportunity."""
    colors = ["#111111", "#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    pad = 50
    ns = list(ns)
    xmin, xmax = (min(ns), max(ns)) if ns else (0, 1)
    xmax = xmax if xmax > xmin else xmin + 1
    allv = [v for s in series.values() for v in s] or [0, 1]
    ymax = max(1e-9, max(allv))

    def px(x):
        return pad + (x - xmin) / (xmax - xmin) * (width - 2 * pad)

    def py(y):
        return height - pad - y / ymax * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">practice opportunity</text>',
        f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {height / 2})">error rate</text>',
        f'<text x="{pad - 6}" y="{py(ymax) + 4}" text-anchor="end" font-size="10">{ymax:.2f}</text>',
        f'<text x="{pad - 6}" y="{py(0) + 4}" text-anchor="end" font-size="10">0</text>',
    ]
    for i, (name, vals) in enumerate(series.items()):
        c = colors[i % len(colors)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(ns, vals))
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 110}" y="{pad + 14 * i}" font-size="11" fill="{c}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ------------------------------------------------------------ run evaluation

BIN_WIDTH = 10


@dataclass(frozen=True)
class Curves:
    ns: list
    human: list
    agent: list
    fitted: list


def evaluate_run(
    agent_rows: Sequence[Mapping],
    truth_records: Sequence,
    item_kp: Mapping[str, int],
    bin_width: int = BIN_WIDTH,
) -> tuple[MetricReport, Curves]:
    """Score an interaction log against the ground truth it replayed.

    Truth rows are restricted to the (student, t) keys present in the log,
    so a log covering a subset of the cohort is compared like for like.
    Metrics that are undefined on this input are left as None with a note.
    """
    def get(r, k):
        return r[k] if isinstance(r, Mapping) else getattr(r, k)

    truth_index = {(get(r, "student"), get(r, "t")): r for r in truth_records}
    paired = []
    for row in agent_rows:
        tr = truth_index.get((row["student"], row["t"]))
        if tr is None or get(tr, "item") != row["item"]:
            raise KeyMismatchError(
                f"log step (student={row['student']}, t={row['t']}, item={row['item']}) has no matching truth row"
            )
        paired.append((row, tr))
    if not paired:
        raise UndefinedMetricError("evaluate", "log has no steps", 0)
    truth_sub = [tr for _, tr in paired]
    labels = [bool(get(tr, "correct")) for tr in truth_sub]
    preds = [float(row["p_hat"]) for row, _ in paired]

    rep = MetricReport()
    rep.n_samples = {"steps": len(paired), "students": len({row["student"] for row, _ in paired})}
    try:
        rep.auc = auc(preds, labels)
    except UndefinedMetricError as e:
        rep.notes["auc"] = str(e)
    rep.rmse = rmse(preds, labels)
    try:
        mp = mistake_precision_detail([row for row, _ in paired], truth_sub)
        rep.mistake_precision = mp.strict
        rep.mistake_precision_co_error = mp.co_error
        rep.n_samples.update(agent_errors=mp.n_agent_errors, co_errors=mp.n_co_errors, tag_matches=mp.n_matches)
    except UndefinedMetricError as e:
        rep.notes["mistake_precision"] = str(e)
    deltas = [row.get("delta_align") for row, _ in paired]
    if all(d is not None for d in deltas):
        rep.align = alignment_score(deltas)
    else:
        rep.notes["align"] = "log carries no alignment coefficients"

    human = binned_error_series(truth_sub, None, bin_width, item_kp)
    agent = binned_error_series([row for row, _ in paired], None, bin_width, item_kp)
    ns, h, a = align_series(human, agent)
    rep.n_samples["bins"] = len(ns)
    try:
        rep.r2_lc = r2_lc(a, h)
    except (UndefinedMetricError, ValueError) as e:
        rep.notes["r2_lc"] = str(e)
    fitted = [math.nan] * len(ns)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for name, series in (("power_fit", list(zip(ns, a))), ("human_fit", list(zip(ns, h)))):
            try:
                fit = fit_power_law(series)
            except ValueError as e:
                rep.notes[name] = str(e)
                continue
            setattr(rep, name, asdict(fit))
            if name == "power_fit":
                fitted = [float(v) for v in fit.predict(ns)]
    for w in caught:
        rep.notes.setdefault("warnings", []).append(str(w.message))
    return rep, Curves(list(ns), list(h), list(a), fitted)
