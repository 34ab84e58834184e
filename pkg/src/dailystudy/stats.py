"""Two-proportion z-test and Student/Welch t-tests.

The normal tail comes from :func:`math.erfc`; the t distribution is
evaluated through the regularized incomplete beta function using the
modified Lentz continued fraction, which converges to double precision for
the degrees of freedom seen here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

ALTERNATIVES = ("two_sided", "greater", "less")
VARIANTS = ("welch", "pooled")

_CF_MAX_ITER = 400
_CF_EPS = 1e-16
_TINY = 1e-300


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    alternative: str
    df: Optional[float] = None
    variant: str = ""
    degenerate: bool = False

    __test__ = False  # keep pytest from collecting this as a test class


# ------------------------------------------------------------- distributions

def normal_sf(z: float) -> float:
    """P(Z > z) for a standard normal Z."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _beta_cf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float, y: Optional[float] = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``y`` may carry an exactly computed ``1 - x``; near x = 1 that avoids
    the cancellation in forming it here.
    """
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    y = 1.0 - x if y is None else y
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(y))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, y) / b


def t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    t2 = t * t
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t: float, df: float) -> float:
    return t_sf(-t, df)


def _p_from_tails(upper: float, lower: float, alternative: str) -> float:
    if alternative == "greater":
        return upper
    if alternative == "less":
        return lower
    return min(1.0, 2.0 * min(upper, lower))


def _check_alternative(alternative: str) -> None:
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")


# ---------------------------------------------------------------------- tests

def two_proportion_z(success_a: int, n_a: int, success_b: int, n_b: int,
                     alternative: str = "two_sided") -> TestResult:
    """Pooled two-proportion z-test of p_a against p_b, without continuity correction."""
    _check_alternative(alternative)
    if n_a < 1 or n_b < 1:
        raise ValueError("both groups need at least one observation")
    if not (0 <= success_a <= n_a and 0 <= success_b <= n_b):
        raise ValueError("successes must lie in [0, n]")
    pooled = (success_a + success_b) / (n_a + n_b)
    if pooled in (0.0, 1.0):
        return TestResult(0.0, 1.0, alternative, degenerate=True)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b))
    z = (success_a / n_a - success_b / n_b) / se
    p = _p_from_tails(normal_sf(z), normal_cdf(z), alternative)
    return TestResult(z, p, alternative)


def _mean_var(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    mean = math.fsum(xs) / n
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return mean, var


def t_test(sample_a: Sequence[float], sample_b: Sequence[float],
           alternative: str = "two_sided", variant: str = "welch") -> TestResult:
    """Two-sample t-test of mean(a) against mean(b)."""
    _check_alternative(alternative)
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    a = [float(x) for x in sample_a]
    b = [float(x) for x in sample_b]
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    na, nb = len(a), len(b)
    ma, va = _mean_var(a)
    mb, vb = _mean_var(b)
    if variant == "pooled":
        df = float(na + nb - 2)
        sp2 = ((na - 1) * va + (nb - 1) * vb) / df
        se2 = sp2 * (1.0 / na + 1.0 / nb)
    else:
        qa, qb = va / na, vb / nb
        se2 = qa + qb
        df = se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1)) if se2 > 0 else float(na + nb - 2)
    diff = ma - mb
    if se2 == 0.0:
        if diff == 0.0:
            return TestResult(0.0, 1.0, alternative, df, variant, degenerate=True)
        # both samples constant but different: the difference is certain
        t = math.copysign(math.inf, diff)
        upper, lower = (0.0, 1.0) if t > 0 else (1.0, 0.0)
        return TestResult(t, _p_from_tails(upper, lower, alternative), alternative, df, variant, True)
    t = diff / math.sqrt(se2)
    p = _p_from_tails(t_sf(t, df), t_cdf(t, df), alternative)
    return TestResult(t, p, alternative, df, variant)
