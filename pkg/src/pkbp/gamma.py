"""Gamma-robustness tables.

``bound_b(n, g)`` is the Bertsimas-Sim bound on the probability that ``n``
independent symmetric bounded utilizations exceed a host whose deterministic
load reserves the ``g`` largest radii.  ``gamma_of`` inverts it for a target
violation probability and ``concave_approx`` produces the concave lower
approximation used by the offline upper bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaln, logsumexp

DEFAULT_N_MAX = 512


def _check_args(n: int, gamma: int) -> None:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if gamma < 0 or gamma > n:
        raise ValueError(f"gamma must lie in [0, {n}], got {gamma}")


def _scaled_numerator(row: Sequence[int], tail: Sequence[int], n: int, gamma: int) -> int:
    """Integer ``2**(n+1) * B(n, gamma)`` from a binomial row and its tail sums.

    ``tail[k]`` is ``sum(row[k:])``.
    """
    if (gamma + n) % 2 == 0:
        return 2 * tail[(gamma + n) // 2]
    low = (gamma + n - 1) // 2
    # fractional part of nu is exactly 1/2 here
    return row[low] + 2 * tail[low + 1]


def _binomial_row(n: int) -> tuple[list[int], list[int]]:
    row = [math.comb(n, k) for k in range(n + 1)]
    tail = [0] * (n + 2)
    for k in range(n, -1, -1):
        tail[k] = tail[k + 1] + row[k]
    return row, tail


def bound_b_exact(n: int, gamma: int) -> Fraction:
    """B(n, gamma) as an exact rational."""
    _check_args(n, gamma)
    row, tail = _binomial_row(n)
    return Fraction(_scaled_numerator(row, tail, n, gamma), 2 ** (n + 1))


def bound_b(n: int, gamma: int) -> float:
    """Violation-probability bound B(n, gamma), accumulated in log space.

    Stable for large ``n`` (the binomial coefficients never leave log space).
    """
    _check_args(n, gamma)
    nu = (gamma + n) / 2.0
    low = math.floor(nu)
    frac = nu - low
    ks = np.arange(low, n + 1, dtype=float)
    log_comb = gammaln(n + 1.0) - gammaln(ks + 1.0) - gammaln(n - ks + 1.0)
    weights = np.ones_like(ks)
    weights[0] = 1.0 - frac
    if weights[0] == 0.0:
        log_comb, weights = log_comb[1:], weights[1:]
    log_b = logsumexp(log_comb, b=weights) - n * math.log(2.0)
    return float(min(1.0, max(0.0, math.exp(log_b))))


def _gamma_from_row(row, tail, n: int, alpha: Fraction) -> int:
    # B is strictly decreasing in gamma, so bisect on the exact predicate
    limit = alpha * 2 ** (n + 1)
    if _scaled_numerator(row, tail, n, n) > limit:
        return n
    lo, hi = 0, n
    while lo < hi:
        mid = (lo + hi) // 2
        if _scaled_numerator(row, tail, n, mid) <= limit:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _check_alpha(alpha: float) -> Fraction:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return Fraction(alpha)


def gamma_of(n: int, alpha: float) -> int:
    """Smallest integer gamma with B(n, gamma) <= alpha.

    Falls back to ``n`` (reserve every VM at its maximum) when even
    B(n, n) = 2**-n exceeds ``alpha``.  The comparison is exact.
    """
    exact_alpha = _check_alpha(alpha)
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if n == 0:
        return 0
    row, tail = _binomial_row(n)
    return _gamma_from_row(row, tail, n, exact_alpha)


def gamma_values(alpha: float, n_max: int) -> list[int]:
    """Gamma(N, alpha) for N = 0..n_max, reusing Pascal rows."""
    exact_alpha = _check_alpha(alpha)
    values = [0]
    row = [1]
    for n in range(1, n_max + 1):
        row = [1] + [row[k - 1] + row[k] for k in range(1, n)] + [1]
        tail = [0] * (n + 2)
        for k in range(n, -1, -1):
            tail[k] = tail[k + 1] + row[k]
        values.append(_gamma_from_row(row, tail, n, exact_alpha))
    return values


def _concavity_rows(size: int) -> np.ndarray:
    # f[N+1] - 2 f[N] + f[N-1] <= 0 for N = 1..size-2
    a = np.zeros((max(size - 2, 0), size))
    for i, n in enumerate(range(1, size - 1)):
        a[i, n - 1] = 1.0
        a[i, n] = -2.0
        a[i, n + 1] = 1.0
    return a


def is_concave(values: Sequence) -> bool:
    return all(
        values[n + 1] - values[n] <= values[n] - values[n - 1]
        for n in range(1, len(values) - 1)
    )


def concave_approx(gamma: Sequence[int]) -> tuple[Fraction, ...]:
    """Concave lower approximation of a Gamma table.

    Solves ``max sum f`` subject to ``0 <= f <= gamma`` and non-increasing
    consecutive differences over the whole range ``0..n_max``.  The LP vertex
    found by HiGHS is snapped to rationals and re-verified exactly, so the
    returned values are exact fractions.
    """
    gamma = [int(g) for g in gamma]
    if not gamma:
        raise ValueError("gamma must be non-empty")
    if gamma[0] != 0:
        raise ValueError("gamma[0] must be 0")
    if any(b < a for a, b in zip(gamma, gamma[1:])):
        raise ValueError("gamma must be non-decreasing")
    size = len(gamma)
    if size <= 2:
        return tuple(Fraction(g) for g in gamma)

    a_ub = _concavity_rows(size)
    res = linprog(
        -np.ones(size),
        A_ub=a_ub,
        b_ub=np.zeros(a_ub.shape[0]),
        bounds=[(0.0, float(g)) for g in gamma],
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"concave approximation LP failed: {res.message}")

    snapped = [Fraction(float(v)).limit_denominator(10**6) for v in res.x]
    snapped = [min(max(v, Fraction(0)), Fraction(g)) for v, g in zip(snapped, gamma)]
    if not is_concave(snapped):
        raise RuntimeError("snapped concave approximation lost concavity")
    if abs(float(sum(snapped)) + res.fun) > 1e-6 * max(1.0, abs(res.fun)):
        raise RuntimeError("snapped concave approximation lost optimality")
    return tuple(snapped)


@dataclass(frozen=True)
class GammaTable:
    """Gamma(N) and its concave approximation for N = 0..n_max.

    ``alpha`` is ``None`` for hand-built tables (``GammaTable.from_gamma``).
    """

    alpha: float | None
    n_max: int
    gamma: tuple[int, ...]
    gamma_tilde: tuple[Fraction, ...]
    gamma_tilde_f: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.gamma) != self.n_max + 1 or len(self.gamma_tilde) != self.n_max + 1:
            raise ValueError("table length must be n_max + 1")
        if self.gamma[0] != 0:
            raise ValueError("gamma[0] must be 0")
        for n, g in enumerate(self.gamma):
            if g > n:
                raise ValueError(f"gamma[{n}] = {g} exceeds {n}")
        object.__setattr__(
            self, "gamma_tilde_f", np.array([float(v) for v in self.gamma_tilde])
        )

    @classmethod
    def build(cls, alpha: float = 0.05, n_max: int = DEFAULT_N_MAX) -> "GammaTable":
        values = gamma_values(alpha, n_max)
        return cls(alpha, n_max, tuple(values), concave_approx(values))

    @classmethod
    def from_gamma(cls, gamma: Sequence[int]) -> "GammaTable":
        """Table from explicit Gamma values, e.g. for worked examples."""
        values = tuple(int(g) for g in gamma)
        return cls(None, len(values) - 1, values, concave_approx(values))

    def __call__(self, n: int) -> int:
        if n < 0 or n > self.n_max:
            raise ValueError(f"population {n} outside table range 0..{self.n_max}")
        return self.gamma[n]

    def tilde(self, n: int) -> Fraction:
        if n < 0 or n > self.n_max:
            raise ValueError(f"population {n} outside table range 0..{self.n_max}")
        return self.gamma_tilde[n]

    def rows(self):
        """Yield ``(N, gamma, gamma_tilde, B(N, gamma))`` per table row."""
        for n in range(self.n_max + 1):
            b = bound_b(n, self.gamma[n]) if n >= 1 else 1.0
            yield n, self.gamma[n], self.gamma_tilde[n], b


_TABLE_CACHE: dict[tuple[float, int], GammaTable] = {}


def get_table(alpha: float = 0.05, n_max: int = DEFAULT_N_MAX) -> GammaTable:
    """Memoized ``GammaTable.build``; tables are immutable so sharing is safe."""
    key = (float(alpha), int(n_max))
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = GammaTable.build(alpha, n_max)
    return _TABLE_CACHE[key]
