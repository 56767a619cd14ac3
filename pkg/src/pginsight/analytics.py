"""Numerical analysis of query results: outliers, forecasts, trends, event links.

Everything here is pure given (inputs, seed). The isolation forest follows the
canonical construction: seeded random subsamples, uniform (feature, split)
choices, height capped at ceil(log2 subsample); scores use
s(x) = 2^(-E[h(x)] / c(psi)) with the harmonic-number approximation
H(i) = ln(i) + 0.5772156649. Autoregression is fitted by ordinary least
squares on the d-times differenced series, and forecast intervals accumulate
variance through the moving-average weight recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .util import parse_iso_utc, shift_months, utc

EULER_GAMMA = 0.5772156649

GRAINS = ("hour", "day", "week", "month")


class SeriesError(ValueError):
    """Series construction or length preconditions violated."""


@dataclass(frozen=True)
class Series:
    points: tuple[tuple[datetime, float], ...]
    grain: str

    def __post_init__(self) -> None:
        if self.grain not in GRAINS:
            raise SeriesError(f"unknown grain {self.grain!r}")
        for (t0, _), (t1, _) in zip(self.points, self.points[1:]):
            expected = _step(t0, self.grain)
            if t1 != expected:
                raise SeriesError(
                    f"series not uniform at grain {self.grain}: {t0.isoformat()} then {t1.isoformat()}"
                )

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.points], dtype=float)

    def timestamps(self) -> list[datetime]:
        return [t for t, _ in self.points]

    def __len__(self) -> int:
        return len(self.points)


def _step(t: datetime, grain: str) -> datetime:
    if grain == "hour":
        return t + timedelta(hours=1)
    if grain == "day":
        return t + timedelta(days=1)
    if grain == "week":
        return t + timedelta(weeks=1)
    return shift_months(t, 1)


def extend_timestamps(last: datetime, grain: str, count: int) -> list[datetime]:
    out = []
    current = last
    for _ in range(count):
        current = _step(current, grain)
        out.append(current)
    return out


@dataclass(frozen=True)
class AnomalyPoint:
    index: int
    timestamp: datetime
    value: float
    score: float
    method: str  # zscore | iforest


@dataclass(frozen=True)
class EventRecord:
    timestamp: datetime
    label: str
    source: str

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("event label must be non-empty")


@dataclass(frozen=True)
class CorrelationFinding:
    anomaly: AnomalyPoint
    events: tuple[tuple[EventRecord, timedelta], ...]
    narrative: str


def zscore_outliers(series: Series, k: float = 3.0) -> list[AnomalyPoint]:
    """Points whose population z-score magnitude exceeds k.

    A constant series has zero deviation and therefore no outliers.
    """
    if len(series) < 2:
        raise SeriesError("z-score needs at least 2 points")
    values = series.values()
    mean = float(values.mean())
    sigma = float(values.std())  # population sigma
    if sigma == 0.0:
        return []
    out = []
    for i, (ts, value) in enumerate(series.points):
        z = abs(value - mean) / sigma
        if z > k:
            out.append(AnomalyPoint(index=i, timestamp=ts, value=value, score=z, method="zscore"))
    return out


# Isolation forest ---------------------------------------------------------


@dataclass(frozen=True)
class _LeafNode:
    size: int


@dataclass(frozen=True)
class _SplitNode:
    feature_index: int
    split_value: float
    left: "_SplitNode | _LeafNode"
    right: "_SplitNode | _LeafNode"


@dataclass(frozen=True)
class IsolationForestModel:
    trees: tuple["_SplitNode | _LeafNode", ...]
    tree_count: int
    subsample_size: int
    seed: int
    dimension: int


def average_path_length(n: int) -> float:
    """c(n): expected unsuccessful-search path length in a random binary tree,
    using H(i) = ln(i) + 0.5772156649."""
    if n <= 1:
        return 0.0
    harmonic = math.log(n - 1) + EULER_GAMMA
    return 2.0 * harmonic - 2.0 * (n - 1) / n


def _grow_tree(data: np.ndarray, depth: int, height_limit: int, rng: np.random.Generator):
    n = data.shape[0]
    if n <= 1 or depth >= height_limit or bool(np.all(data == data[0])):
        return _LeafNode(size=n)
    spread = data.max(axis=0) - data.min(axis=0)
    usable = np.nonzero(spread > 0)[0]
    if usable.size == 0:
        return _LeafNode(size=n)
    feature = int(usable[rng.integers(0, usable.size)])
    column = data[:, feature]
    low, high = float(column.min()), float(column.max())
    split = float(rng.uniform(low, high))
    mask = column < split
    if not mask.any() or mask.all():
        return _LeafNode(size=n)
    return _SplitNode(
        feature_index=feature,
        split_value=split,
        left=_grow_tree(data[mask], depth + 1, height_limit, rng),
        right=_grow_tree(data[~mask], depth + 1, height_limit, rng),
    )


def fit_iforest(data, t: int, psi: int, seed: int) -> IsolationForestModel:
    """Build t isolation trees on seeded psi-point subsamples."""
    matrix = np.asarray(data, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2:
        raise ValueError("data must be a list of equal-length vectors")
    n = matrix.shape[0]
    if psi < 2:
        raise ValueError("subsample size must be >= 2")
    if t < 1:
        raise ValueError("tree count must be >= 1")
    if psi > n:
        raise ValueError(f"subsample size {psi} exceeds data size {n}")
    height_limit = math.ceil(math.log2(psi))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(t):
        indices = rng.choice(n, size=psi, replace=False)
        trees.append(_grow_tree(matrix[indices], 0, height_limit, rng))
    return IsolationForestModel(
        trees=tuple(trees), tree_count=t, subsample_size=psi, seed=seed, dimension=matrix.shape[1]
    )


def _path_length(node, x: np.ndarray, depth: int) -> float:
    while isinstance(node, _SplitNode):
        node = node.left if x[node.feature_index] < node.split_value else node.right
        depth += 1
    return depth + average_path_length(node.size)


def score_iforest(model: IsolationForestModel, x) -> float:
    """Anomaly score in (0, 1): 2^(-E[h(x)] / c(psi)); higher is more anomalous."""
    vec = np.asarray(x, dtype=float).reshape(-1)
    if vec.shape[0] != model.dimension:
        raise ValueError(f"vector dimension {vec.shape[0]} does not match model dimension {model.dimension}")
    mean_path = sum(_path_length(tree, vec, 0) for tree in model.trees) / model.tree_count
    return 2.0 ** (-mean_path / average_path_length(model.subsample_size))


def iforest_outliers(series: Series, t: int = 100, psi: int | None = None, seed: int = 7, threshold: float = 0.6) -> list[AnomalyPoint]:
    """Score each series value as a 1-d vector; flag scores above threshold."""
    values = series.values().reshape(-1, 1)
    sub = psi if psi is not None else min(64, len(values))
    if sub < 2 or len(values) < sub:
        raise SeriesError("series too short for isolation forest")
    model = fit_iforest(values, t=t, psi=sub, seed=seed)
    out = []
    for i, (ts, value) in enumerate(series.points):
        score = score_iforest(model, [value])
        if score > threshold:
            out.append(AnomalyPoint(index=i, timestamp=ts, value=value, score=score, method="iforest"))
    return out


# Autoregressive model ------------------------------------------------------


@dataclass(frozen=True)
class ArimaModel:
    p: int
    d: int
    phi: tuple[float, ...]
    intercept: float
    sigma2: float


@dataclass(frozen=True)
class Forecast:
    horizon: int
    points: tuple[tuple[datetime, float, float, float], ...]  # (ts, mean, lower95, upper95)


def fit_arima(series: Series, p: int, d: int) -> ArimaModel:
    """Difference d times, then fit an order-p autoregression with intercept by OLS."""
    if p < 0 or d not in (0, 1, 2):
        raise ValueError("order must satisfy p >= 0 and d in {0, 1, 2}")
    values = series.values()
    minimum = p + d + 10
    if len(values) - d - p < 10:
        raise SeriesError(f"insufficient data: need at least {minimum} observations, got {len(values)}")
    z = np.diff(values, n=d) if d else values.copy()
    n = len(z)
    if p == 0:
        intercept = float(z.mean())
        residuals = z - intercept
        return ArimaModel(p=0, d=d, phi=(), intercept=intercept, sigma2=float(np.mean(residuals**2)))
    rows = n - p
    design = np.ones((rows, p + 1))
    for lag in range(1, p + 1):
        design[:, lag] = z[p - lag : n - lag]
    target = z[p:]
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    fitted = design @ coef
    residuals = target - fitted
    return ArimaModel(
        p=p,
        d=d,
        phi=tuple(float(c) for c in coef[1:]),
        intercept=float(coef[0]),
        sigma2=float(np.mean(residuals**2)),
    )


def psi_weights(phi: tuple[float, ...], count: int) -> list[float]:
    """Moving-average weights of the AR recursion: psi_0 = 1,
    psi_j = sum_i phi_i * psi_(j-i)."""
    weights = [1.0]
    for j in range(1, count):
        total = 0.0
        for i, coefficient in enumerate(phi, start=1):
            if j - i >= 0:
                total += coefficient * weights[j - i]
        weights.append(total)
    return weights


def forecast(model: ArimaModel, tail: Series, horizon: int) -> Forecast:
    """Iterate the fitted recursion forward and invert the differencing.

    95% intervals use mean +/- 1.96 * sqrt(accumulated variance), where the
    variance at step k sums squared psi weights of the integrated process.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    values = list(tail.values())
    if len(values) < model.p + model.d:
        raise SeriesError(f"forecast needs at least {model.p + model.d} tail values")

    # difference the tail d times, keeping the last value at each level
    levels: list[list[float]] = [values]
    for _ in range(model.d):
        prev = levels[-1]
        levels.append([b - a for a, b in zip(prev, prev[1:])])
    z_history = list(levels[-1])

    means_z: list[float] = []
    for _ in range(horizon):
        nxt = model.intercept
        for i, coefficient in enumerate(model.phi, start=1):
            nxt += coefficient * z_history[-i]
        z_history.append(nxt)
        means_z.append(nxt)

    # invert differencing step by step
    lasts = [level[-1] for level in levels[:-1]]  # level d-1 ... level 0 order: levels[0] is raw
    means: list[float] = []
    for z_val in means_z:
        current = z_val
        for level_index in range(model.d - 1, -1, -1):
            current = lasts[level_index] + current
            lasts[level_index] = current
        means.append(current)

    weights = psi_weights(model.phi, horizon)
    integrated = list(weights)
    for _ in range(model.d):
        running = 0.0
        summed = []
        for w in integrated:
            running += w
            summed.append(running)
        integrated = summed
    variances = []
    acc = 0.0
    for k in range(horizon):
        acc += integrated[k] ** 2
        variances.append(model.sigma2 * acc)

    timestamps = extend_timestamps(tail.points[-1][0], tail.grain, horizon)
    points = []
    for ts, mean, var in zip(timestamps, means, variances):
        half = 1.96 * math.sqrt(max(var, 0.0))
        points.append((ts, mean, mean - half, mean + half))
    return Forecast(horizon=horizon, points=tuple(points))


@dataclass(frozen=True)
class TrendResult:
    slope: float
    trend_class: str  # up | down | flat


def detect_trend(series: Series) -> TrendResult:
    """Least-squares slope on the index; flat when total drift stays under
    half a standard deviation."""
    if len(series) < 3:
        raise SeriesError("trend detection needs at least 3 points")
    values = series.values()
    index = np.arange(len(values), dtype=float)
    slope = float(np.polyfit(index, values, 1)[0])
    sigma = float(values.std())
    if sigma == 0.0 or abs(slope) * (len(values) - 1) < 0.5 * sigma:
        return TrendResult(slope=slope, trend_class="flat")
    return TrendResult(slope=slope, trend_class="up" if slope > 0 else "down")


def correlate_events(
    anomalies: list[AnomalyPoint],
    events: list[EventRecord],
    window: timedelta,
) -> list[CorrelationFinding]:
    """Match each anomaly with events inside the window, nearest first.

    The narrative is deliberately non-causal: it reports co-occurrence and lag,
    nothing stronger.
    """
    findings = []
    for anomaly in anomalies:
        matched = []
        for event in events:
            lag = event.timestamp - anomaly.timestamp
            if abs(lag) <= window:
                matched.append((event, lag))
        matched.sort(key=lambda pair: (abs(pair[1]), pair[0].timestamp))
        if matched:
            nearest, lag = matched[0]
            direction = "before" if lag < timedelta(0) else "after"
            amount = abs(lag)
            narrative = (
                f"Anomaly at {anomaly.timestamp.date().isoformat()} (value {anomaly.value:g}) "
                f"occurred within {_describe(amount)} of '{nearest.label}' ({nearest.source}), "
                f"{_describe(amount)} {direction} the anomaly; co-occurrence only, not causation."
            )
        else:
            narrative = (
                f"Anomaly at {anomaly.timestamp.date().isoformat()} (value {anomaly.value:g}) "
                f"has no recorded event within {_describe(window)}."
            )
        findings.append(CorrelationFinding(anomaly=anomaly, events=tuple(matched), narrative=narrative))
    return findings


def _describe(delta: timedelta) -> str:
    total_hours = delta.total_seconds() / 3600.0
    if total_hours >= 24 and total_hours % 24 == 0:
        days = int(total_hours // 24)
        return f"{days} day" + ("s" if days != 1 else "")
    if total_hours == int(total_hours):
        hours = int(total_hours)
        return f"{hours} hour" + ("s" if hours != 1 else "")
    return f"{delta.total_seconds():.0f} seconds"


def series_from_rows(rows, grain: str | None = None) -> Series:
    """Adapter from two-column result rows (timestamp-like, numeric) to a Series.

    Accepts datetimes or the bucket strings the SQL layer produces
    (YYYY, YYYY-MM, YYYY-MM-DD, or ISO timestamps). The grain is inferred
    from consecutive spacing when not given.
    """
    points = []
    for raw_ts, raw_value in rows:
        if raw_value is None:
            continue
        ts = _coerce_timestamp(raw_ts)
        points.append((ts, float(raw_value)))
    points.sort(key=lambda p: p[0])
    if grain is None:
        grain = _infer_grain(points)
    return Series(points=tuple(points), grain=grain)


def _coerce_timestamp(raw) -> datetime:
    if isinstance(raw, datetime):
        return raw if raw.tzinfo else raw.replace(tzinfo=timezone.utc)
    text = str(raw)
    if len(text) == 4 and text.isdigit():
        return utc(int(text), 1, 1)
    if len(text) == 7 and text[4] == "-":
        return utc(int(text[:4]), int(text[5:7]), 1)
    return parse_iso_utc(text)


def _infer_grain(points) -> str:
    if len(points) < 2:
        return "day"
    delta = points[1][0] - points[0][0]
    if delta <= timedelta(hours=1):
        return "hour"
    if delta <= timedelta(days=1):
        return "day"
    if delta <= timedelta(days=7):
        return "week"
    return "month"
