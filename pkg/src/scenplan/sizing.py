"""Sample-size rules for scenario-based chance-constrained programs.

Two families are provided:

* one-shot ("standard") sizing: the smallest N such that the binomial tail
  sum_{j=0}^{d-1} C(N,j) eps^j (1-eps)^(N-j) drops below beta, plus the
  well-known closed-form sufficient bound N >= (2/eps) (ln(1/beta) + d);

* incremental sizing: the per-iteration schedule (M_j, beta_j, N_j) used by
  the add-scenarios-until-support-count-small loop, again in both an exact
  (tail-inversion) and an explicit (closed-form) variant.

All binomial arithmetic is done in log space with log-gamma; nothing here
materializes factorials, so N in the tens of thousands is fine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ScheduleDegeneracyError, ValidationError

SizingMode = Literal["exact", "explicit"]

_MODES = ("exact", "explicit")


@dataclass(frozen=True)
class RiskParams:
    """Risk level epsilon, confidence level beta, decision dimension d."""

    epsilon: float
    beta: float
    d: int

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValidationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not (0.0 < self.beta < 1.0):
            raise ValidationError(f"beta must lie in (0, 1), got {self.beta}")
        if self.d < 1:
            raise ValidationError(f"d must be >= 1, got {self.d}")


@dataclass(frozen=True)
class IncrementalSchedule:
    """Per-iteration sample sizes j -> (M_j, log beta_j, N_j) for j = 0..d."""

    mode: SizingMode
    M: tuple[int, ...]
    log_beta: tuple[float, ...]
    N: tuple[int, ...]

    def __len__(self):
        return len(self.N)

    def rows(self):
        """Yield (j, M_j, beta_j, N_j) with beta_j in linear space."""
        for j, (m, lb, n) in enumerate(zip(self.M, self.log_beta, self.N)):
            yield j, m, math.exp(lb) if lb < 700.0 else math.inf, n


def _check_mode(mode: str) -> None:
    if mode not in _MODES:
        raise ValidationError(f"mode must be one of {_MODES}, got {mode!r}")


def log_binomial_pmf_term(n: int, k: int, epsilon: float) -> float:
    """log of C(n,k) eps^k (1-eps)^(n-k)."""
    return (
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + k * math.log(epsilon)
        + (n - k) * math.log1p(-epsilon)
    )


def log_binomial_tail(n: int, k_max: int, epsilon: float) -> float:
    """log of sum_{j=0}^{k_max} C(n,j) eps^j (1-eps)^(n-j).

    Monotone nonincreasing in n for fixed k_max; exactly 0.0 (probability
    one) when k_max == n.
    """
    if not (0 <= k_max <= n):
        raise ValidationError(f"need 0 <= k_max <= n, got k_max={k_max}, n={n}")
    if not (0.0 < epsilon < 1.0):
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    if k_max == n:
        return 0.0
    j = np.arange(k_max + 1)
    terms = (
        gammaln(n + 1)
        - gammaln(j + 1)
        - gammaln(n - j + 1)
        + j * math.log(epsilon)
        + (n - j) * math.log1p(-epsilon)
    )
    # the true sum is a probability; clip the float noise at log(1) = 0
    return min(float(logsumexp(terms)), 0.0)


def _min_n_tail_below(k_max: int, epsilon: float, log_beta: float, lo: int, hi_hint: int) -> int:
    """Smallest n >= lo with log_binomial_tail(n, min(k_max, n), .) <= log_beta.

    The tail (with k_max clamped to n, i.e. probability one for n <= k_max)
    is nonincreasing in n, so exponential bracketing plus bisection is exact.
    """

    def ok(n: int) -> bool:
        return log_binomial_tail(n, min(k_max, n), epsilon) <= log_beta

    if ok(lo):
        return lo
    hi = max(hi_hint, lo + 1)
    while not ok(hi):
        hi *= 2
        if hi > 10**9:
            raise ValidationError(
                "tail condition not met below n = 1e9; parameters out of supported range"
            )
    # invariant: not ok(lo), ok(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def standard_sample_size_explicit(params: RiskParams) -> int:
    """Closed-form sufficient sample size ceil((2/eps) (ln(1/beta) + d))."""
    return math.ceil((2.0 / params.epsilon) * (math.log(1.0 / params.beta) + params.d))


def standard_sample_size_exact(params: RiskParams) -> int:
    """Smallest N with the binomial tail at d-1 successes <= beta.

    Any N < d has tail exactly one, so the result is automatically >= d.
    """
    hint = standard_sample_size_explicit(params)
    return _min_n_tail_below(
        params.d - 1, params.epsilon, math.log(params.beta), lo=params.d, hi_hint=hint
    )


def incremental_M_j(params: RiskParams, j: int, mode: SizingMode = "explicit") -> int:
    """Auxiliary sample size M_j for iteration j.

    Exact mode inverts the tail condition (the j = 0 empty sum is zero, so
    M_0 = 0); explicit mode evaluates max(0, ceil((2/eps)(ln(1/beta)+j-1))).
    """
    _check_mode(mode)
    if not (0 <= j <= params.d):
        raise ValidationError(f"iteration j must lie in [0, d={params.d}], got {j}")
    if mode == "explicit":
        return max(0, math.ceil((2.0 / params.epsilon) * (math.log(1.0 / params.beta) + j - 1)))
    if j == 0:
        return 0
    hint = max(1, math.ceil((2.0 / params.epsilon) * (math.log(1.0 / params.beta) + j)))
    return _min_n_tail_below(j - 1, params.epsilon, math.log(params.beta), lo=1, hi_hint=hint)


def log_incremental_beta_j(params: RiskParams, j: int, M_j: int) -> float:
    """log of beta_j = beta / ((d+1)(M_j+1)) * sum_{m=j}^{M_j} C(m,j)(1-eps)^(m-j).

    Raises ScheduleDegeneracyError when M_j < j: the sum is then empty and
    beta_j = 0 would make the per-iteration sample size infinite.
    """
    if not (0 <= j <= params.d):
        raise ValidationError(f"iteration j must lie in [0, d={params.d}], got {j}")
    if M_j < j:
        raise ScheduleDegeneracyError(
            f"M_j={M_j} < j={j}: empty confidence-split sum at iteration {j}"
        )
    m = np.arange(j, M_j + 1)
    log_terms = (
        gammaln(m + 1) - gammaln(j + 1) - gammaln(m - j + 1) + (m - j) * math.log1p(-params.epsilon)
    )
    return (
        math.log(params.beta)
        - math.log(params.d + 1)
        - math.log(M_j + 1)
        + float(logsumexp(log_terms))
    )


def incremental_beta_j(params: RiskParams, j: int, M_j: int) -> float:
    """Linear-space beta_j; may overflow to inf for very large j (the split
    confidence exceeds one there, which only makes the N_j condition easier).
    """
    lb = log_incremental_beta_j(params, j, M_j)
    return math.exp(lb) if lb < 700.0 else math.inf


def _log_single_binomial(n: int, j: int, epsilon: float) -> float:
    """log of C(n,j) (1-eps)^(n-j)."""
    return float(
        gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1) + (n - j) * math.log1p(-epsilon)
    )


def incremental_N_j(params: RiskParams, j: int, mode: SizingMode = "explicit") -> int:
    """Sample size N_j required at iteration j, using mode's M_j and beta_j.

    Exact mode: the smallest N >= max(M_j, j) with
    C(N,j) (1-eps)^(N-j) <= beta_j. The left side rises until N ~ j/eps and
    falls afterwards, so only N = max(M_j, j) itself or the crossing on the
    decreasing branch can be minimal.

    Explicit mode: ceil((2/eps) ln(1/beta_j) + 2j + (2j/eps) ln(2/eps)),
    floored at M_j so the schedule keeps N_j >= M_j.
    """
    _check_mode(mode)
    if not (0 <= j <= params.d):
        raise ValidationError(f"iteration j must lie in [0, d={params.d}], got {j}")
    M_j = incremental_M_j(params, j, mode)
    log_beta_j = log_incremental_beta_j(params, j, M_j)
    eps = params.epsilon
    if mode == "explicit":
        raw = (2.0 / eps) * (-log_beta_j) + 2.0 * j + (2.0 * j / eps) * math.log(2.0 / eps)
        return max(M_j, j, math.ceil(raw))

    lo = max(M_j, j)
    if _log_single_binomial(lo, j, eps) <= log_beta_j:
        return lo
    # decreasing branch starts past the mode of C(N,j)(1-eps)^(N-j)
    n = max(lo, math.ceil(j / eps))
    hi = max(n + 1, 2 * n)
    while _log_single_binomial(hi, j, eps) > log_beta_j:
        hi *= 2
        if hi > 10**9:
            raise ValidationError(
                "N_j condition not met below 1e9; parameters out of supported range"
            )
    lo_search = n  # f(lo_search) may already satisfy; bisect first satisfying
    if _log_single_binomial(lo_search, j, eps) <= log_beta_j:
        # walk back to the first satisfying point on the decreasing branch,
        # never dropping below the admissible floor
        while lo_search > lo and _log_single_binomial(lo_search - 1, j, eps) <= log_beta_j:
            lo_search -= 1
        return lo_search
    while hi - lo_search > 1:
        mid = (lo_search + hi) // 2
        if _log_single_binomial(mid, j, eps) <= log_beta_j:
            hi = mid
        else:
            lo_search = mid
    return hi


def incremental_schedule(params: RiskParams, mode: SizingMode = "explicit") -> IncrementalSchedule:
    """Tabulate (M_j, log beta_j, N_j) for every iteration j = 0..d."""
    _check_mode(mode)
    Ms, lbs, Ns = [], [], []
    for j in range(params.d + 1):
        M_j = incremental_M_j(params, j, mode)
        Ms.append(M_j)
        lbs.append(log_incremental_beta_j(params, j, M_j))
        Ns.append(incremental_N_j(params, j, mode))
    return IncrementalSchedule(mode=mode, M=tuple(Ms), log_beta=tuple(lbs), N=tuple(Ns))
