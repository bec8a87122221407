"""Agreement and repeatability statistics for repeated measurements."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats as _st

from .errors import DegenerateAnova, SingleTimepoint, ZeroBetweenEyeSD, ZeroVariance


@dataclass(frozen=True)
class PairedSeries:
    ids: tuple[str, ...]
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1 or len(a) < 2 or len(self.ids) != len(a):
            raise ValueError("paired series need equal lengths >= 2")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ValueError("paired series must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    @classmethod
    def of(cls, a: Sequence[float], b: Sequence[float]) -> "PairedSeries":
        return cls(tuple(str(i) for i in range(len(a))), np.asarray(a), np.asarray(b))

    def swapped(self) -> "PairedSeries":
        return PairedSeries(self.ids, self.b, self.a)


def mae(series: PairedSeries) -> float:
    return float(np.mean(np.abs(series.a - series.b)))


@dataclass(frozen=True)
class Correlations:
    pearson: float
    pearson_p: float
    spearman: float
    spearman_p: float


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(xc @ xc)), math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0:
        raise ZeroVariance("a series has zero variance")
    r = float(xc @ yc) / (sx * sy)
    return max(-1.0, min(1.0, r))


def _t_pvalue(r: float, n: int) -> float:
    if n <= 2:
        return math.nan
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * _st.t.sf(abs(t), n - 2))


def correlations(series: PairedSeries) -> Correlations:
    """Pearson and Spearman (average ranks for ties) with two-sided t-test p-values."""
    n = len(series.a)
    r = _pearson(series.a, series.b)
    rho = _pearson(_st.rankdata(series.a), _st.rankdata(series.b))
    return Correlations(r, _t_pvalue(r, n), rho, _t_pvalue(rho, n))


def icc31(series: PairedSeries) -> float:
    """ICC(3,1): two-way mixed effects, consistency, single measurement."""
    x = np.column_stack([series.a, series.b])
    n, k = x.shape
    gm = x.mean()
    ss_rows = k * float(((x.mean(axis=1) - gm) ** 2).sum())
    ss_cols = n * float(((x.mean(axis=0) - gm) ** 2).sum())
    ss_tot = float(((x - gm) ** 2).sum())
    ss_err = max(ss_tot - ss_rows - ss_cols, 0.0)
    ms_rows = ss_rows / (n - 1)
    ms_err = ss_err / ((n - 1) * (k - 1))
    den = ms_rows + (k - 1) * ms_err
    if den <= 0:
        raise DegenerateAnova("no variance between or within subjects")
    return (ms_rows - ms_err) / den


@dataclass(frozen=True)
class BlandAltman:
    mean_diff: float
    sd_diff: float
    loa_low: float
    loa_high: float


def bland_altman(series: PairedSeries) -> BlandAltman:
    d = series.a - series.b
    m = float(d.mean())
    sd = float(d.std(ddof=1))
    return BlandAltman(m, sd, m - 1.96 * sd, m + 1.96 * sd)


@dataclass(frozen=True)
class LambdaResult:
    per_eye: dict[str, float]
    within_sd: dict[str, float]
    between_sd: float
    cohort: float


def lambda_noise(repeats: Mapping[str, Sequence[float]]) -> LambdaResult:
    """Within-eye SD in units of between-eye SD.

    Both standard deviations use the population form (``ddof=0``). The
    between-eye SD is taken over per-eye means; ``cohort`` uses the root mean
    square of the within-eye SDs.
    """
    if len(repeats) < 2:
        raise ValueError("need at least two eyes")
    within, means = {}, []
    for eye, vals in repeats.items():
        v = np.asarray(vals, dtype=np.float64)
        if v.size < 2:
            raise ValueError(f"eye {eye} has fewer than two repeats")
        within[str(eye)] = float(v.std())
        means.append(v.mean())
    between = float(np.std(means))
    if between == 0:
        raise ZeroBetweenEyeSD("all eyes have the same mean")
    per_eye = {k: w / between for k, w in within.items()}
    cohort = math.sqrt(float(np.mean(np.square(list(within.values()))))) / between
    return LambdaResult(per_eye, within, between, cohort)


def chronological_pairing(records: Iterable[tuple[Any, Any, float]]) -> PairedSeries:
    """Consecutive-in-time pairs per eye from ``(eye, timestamp, value)`` records."""
    by_eye: dict[str, list[tuple[Any, float]]] = {}
    for eye, t, v in records:
        by_eye.setdefault(str(eye), []).append((t, float(v)))
    ids, a, b = [], [], []
    for eye in sorted(by_eye):
        seq = sorted(by_eye[eye], key=lambda tv: tv[0])
        if len(seq) < 2:
            raise SingleTimepoint(f"eye {eye} has a single timepoint")
        for (t0, v0), (t1, v1) in zip(seq[:-1], seq[1:]):
            ids.append(f"{eye}:{t0}->{t1}")
            a.append(v0)
            b.append(v1)
    if len(a) < 2:
        raise SingleTimepoint("fewer than two pairs overall")
    return PairedSeries(tuple(ids), np.asarray(a), np.asarray(b))


def feature_statistics(long: pd.DataFrame) -> pd.DataFrame:
    """Per-feature agreement table from a long ``id, timepoint, feature, value`` frame."""
    rows = []
    for feat, g in long.groupby("feature", sort=True):
        g = g.dropna(subset=["value"])
        row: dict[str, Any] = {"feature": feat}
        try:
            ps = chronological_pairing(zip(g["id"], g["timepoint"], g["value"]))
        except SingleTimepoint as exc:
            row["error"] = str(exc)
            rows.append(row)
            continue
        row["n_pairs"] = len(ps.a)
        row["mae"] = mae(ps)
        try:
            c = correlations(ps)
            row.update(pearson=c.pearson, pearson_p=c.pearson_p, spearman=c.spearman, spearman_p=c.spearman_p)
        except ZeroVariance:
            pass
        try:
            row["icc31"] = icc31(ps)
        except DegenerateAnova:
            pass
        ba = bland_altman(ps)
        row.update(ba_mean_diff=ba.mean_diff, ba_sd_diff=ba.sd_diff, ba_loa_low=ba.loa_low, ba_loa_high=ba.loa_high)
        reps = {str(k): v.to_numpy() for k, v in g.groupby("id")["value"] if len(v) >= 2}
        try:
            lam = lambda_noise(reps)
            row["lambda_median"] = float(np.median(list(lam.per_eye.values())))
            row["lambda_cohort"] = lam.cohort
        except (ValueError, ZeroBetweenEyeSD):
            pass
        rows.append(row)
    return pd.DataFrame(rows)


def measurements_to_long(table: pd.DataFrame, id_col: str = "id", time_col: str = "timepoint",
                         features: Sequence[str] | None = None) -> pd.DataFrame:
    """Melt a wide measurement table into the long layout used by :func:`feature_statistics`."""
    if features is None:
        features = [c for c in table.columns if c not in (id_col, time_col)
                    and pd.api.types.is_numeric_dtype(table[c])]
    long = table.melt(id_vars=[id_col, time_col], value_vars=list(features), var_name="feature",
                      value_name="value")
    return long.rename(columns={id_col: "id", time_col: "timepoint"})
