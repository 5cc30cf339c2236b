"""Two-sample t-tests, Cohen's d and one-way ANOVA, with p-values from a
continued-fraction regularised incomplete beta."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

REPORT_ALPHA = 0.01


class DegenerateSampleError(ValueError):
    pass


@dataclass(frozen=True)
class SampleSet:
    label: str
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2:
            raise ValueError(f"sample {self.label!r} needs at least 2 values")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"sample {self.label!r} has non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.values)


def _as_array(x) -> np.ndarray:
    arr = x.array if isinstance(x, SampleSet) else np.asarray(x, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("each sample needs at least 2 values")
    return arr


def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 10_000) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf2(t: float, df: float) -> float:
    """Two-tailed p-value of Student's t."""
    if df <= 0:
        raise ValueError("df must be positive")
    if t == 0:
        return 1.0
    return betainc(0.5 * df, 0.5, df / (df + t * t))


def f_sf(F: float, df1: float, df2: float) -> float:
    """Upper tail of the F distribution."""
    if F <= 0:
        return 1.0
    return betainc(0.5 * df2, 0.5 * df1, df2 / (df2 + df1 * F))


@dataclass(frozen=True)
class TTest:
    t: float
    df: float
    p: float


def t_test(a, b, equal_var: bool = True) -> TTest:
    """Pooled (Student) by default; ``equal_var=False`` gives Welch's test."""
    x, y = _as_array(a), _as_array(b)
    na, nb = len(x), len(y)
    va, vb = x.var(ddof=1), y.var(ddof=1)
    diff = x.mean() - y.mean()
    if equal_var:
        df = na + nb - 2
        se2 = ((na - 1) * va + (nb - 1) * vb) / df * (1.0 / na + 1.0 / nb)
    else:
        se2 = va / na + vb / nb
        df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)) if se2 > 0 else \
            na + nb - 2
    if se2 == 0:
        if diff == 0:
            return TTest(0.0, float(df), 1.0)
        raise DegenerateSampleError("zero variance with unequal means")
    t = float(diff / math.sqrt(se2))
    return TTest(t, float(df), t_sf2(t, df))


def cohens_d(a, b) -> float:
    """(mean_a - mean_b) / sqrt((s_a^2 + s_b^2) / 2) with n-1 sample variances."""
    x, y = _as_array(a), _as_array(b)
    s = math.sqrt((x.var(ddof=1) + y.var(ddof=1)) / 2.0)
    if s == 0:
        raise DegenerateSampleError("both samples have zero variance")
    return float((x.mean() - y.mean()) / s)


def cohens_d_from_summary(mean_a, std_a, mean_b, std_b) -> float:
    return (mean_a - mean_b) / math.sqrt((std_a ** 2 + std_b ** 2) / 2.0)


@dataclass(frozen=True)
class Anova:
    F: float
    df_between: int
    df_within: int
    eta2: float
    p: float
    ss_between: float
    ss_within: float
    ss_total: float


def anova(groups) -> Anova:
    arrays = [_as_array(g) for g in groups]
    if len(arrays) < 2:
        raise ValueError("ANOVA needs at least 2 groups")
    allv = np.concatenate(arrays)
    grand = allv.mean()
    ss_total = float(((allv - grand) ** 2).sum())
    if ss_total == 0:
        raise DegenerateSampleError("all values identical; F undefined")
    ss_between = float(sum(len(g) * (g.mean() - grand) ** 2 for g in arrays))
    ss_within = float(sum(((g - g.mean()) ** 2).sum() for g in arrays))
    dfb = len(arrays) - 1
    dfw = len(allv) - len(arrays)
    if ss_within == 0:
        F, p = math.inf, 0.0
    else:
        F = (ss_between / dfb) / (ss_within / dfw)
        p = f_sf(F, dfb, dfw)
    return Anova(F, dfb, dfw, ss_between / ss_total, p, ss_between, ss_within, ss_total)


@dataclass(frozen=True)
class Comparison:
    method_a: str
    method_b: str
    metric: str
    t: float
    df: float
    p: float
    d: float
    significant: bool


def compare(label_a: str, a, label_b: str, b, metric: str,
            alpha: float = REPORT_ALPHA) -> Comparison:
    res = t_test(a, b)
    try:
        d = cohens_d(a, b)
    except DegenerateSampleError:
        d = 0.0 if res.t == 0 else math.nan
    return Comparison(label_a, label_b, metric, res.t, res.df, res.p, d, res.p < alpha)
