"""Sample-efficiency calculus for comparing samplers.

Drawing architectures one by one without replacement from a set of K,
M of which have validation error <= J_target, the trial index of the
first success has

    p(tau = k) = (M / k) * C(K - M, k - 1) / C(K, k),
    E[tau]     = (K + 1) / (M + 1).

The efficiency gain between a baseline set (the search space) and a
reduced set (the candidates) is 10*log10 of the ratio of expected
trials, in decibels; it splits additively into the part contributed by
the S' sampler and the part contributed by the predictor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "trial_pmf",
    "trial_pmf_exact",
    "expected_trials",
    "expected_trials_exact",
    "estimate_M",
    "gain_db",
    "GainPoint",
    "GainCurve",
    "gain_curve",
    "default_grid",
    "GAIN_CSV_HEADER",
]

GAIN_CSV_HEADER = (
    "J_target,K_S,M_S,E_S,K_C,M_C,E_C,gain_db,gain_e_db,gain_p_db,flagged"
)


def _check_km(K: int, M: int):
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    if M < 0 or M > K:
        raise ValueError(f"M must be in [0, K={K}], got {M}")


_EXACT_K_LIMIT = 10_000


def trial_pmf(K: int, M: int, k: int) -> float:
    """P(first success at trial k when drawing without replacement).

    Exact big-integer arithmetic (correctly rounded to float) up to
    K = 10^4; log-gamma beyond that, so K up to 10^6 cannot overflow.
    Out-of-range k (k < 1 or k > K - M + 1) returns 0 by contract; M = 0
    returns 0 everywhere (there is never a success).
    """
    _check_km(K, M)
    if M == 0 or k < 1 or k > K - M + 1:
        return 0.0
    if K <= _EXACT_K_LIMIT:
        return float(Fraction(M * math.comb(K - M, k - 1), k * math.comb(K, k)))
    # log [ M/k * C(K-M, k-1) / C(K, k) ]
    log_p = (
        math.log(M)
        - math.log(k)
        + math.lgamma(K - M + 1)
        - math.lgamma(k)
        - math.lgamma(K - M - k + 2)
        - math.lgamma(K + 1)
        + math.lgamma(k + 1)
        + math.lgamma(K - k + 1)
    )
    return math.exp(log_p)


def trial_pmf_exact(K: int, M: int, k: int) -> Fraction:
    """Exact rational form of trial_pmf (meant for small K in tests)."""
    _check_km(K, M)
    if M == 0 or k < 1 or k > K - M + 1:
        return Fraction(0)
    return (
        Fraction(M, k)
        * Fraction(math.comb(K - M, k - 1), math.comb(K, k))
    )


def expected_trials(K: int, M: int) -> float:
    """E[tau] = (K + 1) / (M + 1).

    For M = 0 this yields K + 1: one draw more than the whole set, the
    documented "never succeeds within the set" sentinel.
    """
    _check_km(K, M)
    return (K + 1) / (M + 1)


def expected_trials_exact(K: int, M: int) -> Fraction:
    _check_km(K, M)
    return Fraction(K + 1, M + 1)


def estimate_M(sample, j_target: float) -> tuple[int, int]:
    """(M, K) of an error sample: successes at threshold, sample size."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.size == 0:
        raise ValueError("empty error sample")
    return int(np.count_nonzero(sample <= j_target)), int(sample.size)


def gain_db(e_base: float, e_reduced: float) -> float:
    """10 * log10(E_base / E_reduced); 0 dB means no benefit."""
    if e_base < 1.0 or e_reduced < 1.0:
        raise ValueError(
            f"expected trials must be >= 1, got {e_base}, {e_reduced}"
        )
    return 10.0 * math.log10(e_base / e_reduced)


@dataclass
class GainPoint:
    j_target: float
    k_s: int
    m_s: int
    e_s: float
    k_c: int
    m_c: int
    e_c: float
    gain: float
    m_sprime: int | None = None
    e_sprime: float | None = None
    gain_e: float | None = None
    gain_p: float | None = None
    flagged: bool = False

    def csv_row(self) -> str:
        ge = "" if self.gain_e is None else repr(self.gain_e)
        gp = "" if self.gain_p is None else repr(self.gain_p)
        return (
            f"{self.j_target!r},{self.k_s},{self.m_s},{self.e_s!r},"
            f"{self.k_c},{self.m_c},{self.e_c!r},{self.gain!r},{ge},{gp},"
            f"{int(self.flagged)}"
        )


@dataclass
class GainCurve:
    points: list[GainPoint]

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.points])

    def at(self, j_target: float) -> GainPoint:
        """The point whose grid value is closest to j_target."""
        js = np.array([p.j_target for p in self.points])
        return self.points[int(np.argmin(np.abs(js - j_target)))]

    def csv_lines(self) -> list[str]:
        return [GAIN_CSV_HEADER] + [p.csv_row() for p in self.points]


def default_grid(sample_s, points: int = 100, oracle: float | None = None):
    """Linear grid from the oracle (min of S) to S's 99th percentile."""
    sample_s = np.asarray(sample_s, dtype=np.float64)
    lo = float(sample_s.min()) if oracle is None else oracle
    hi = float(np.percentile(sample_s, 99))
    return np.linspace(lo, hi, points)


def _sorted_counts(sample, grid):
    s = np.sort(np.asarray(sample, dtype=np.float64))
    return np.searchsorted(s, grid, side="right"), len(s)


def gain_curve(sample_s, sample_c, grid, sample_sprime=None) -> GainCurve:
    """Estimate the gain over a J_target grid from error samples.

    sample_s / sample_c are validation errors of the search space and
    of the pooled candidates; the optional sample_sprime (errors of the
    pooled reduced sets) adds the sampler/predictor decomposition
    gain = gain_e + gain_p. Points where any set has zero successes use
    the M=0 sentinel expectation and are flagged.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    for name, s in (("sample_s", sample_s), ("sample_c", sample_c)):
        if np.asarray(s).size == 0:
            raise ValueError(f"{name} is empty")
    m_s_arr, k_s = _sorted_counts(sample_s, grid)
    m_c_arr, k_c = _sorted_counts(sample_c, grid)
    with_sp = sample_sprime is not None
    if with_sp:
        m_sp_arr, k_sp = _sorted_counts(sample_sprime, grid)
    points = []
    for i, j in enumerate(grid):
        m_s, m_c = int(m_s_arr[i]), int(m_c_arr[i])
        e_s = expected_trials(k_s, m_s)
        e_c = expected_trials(k_c, m_c)
        point = GainPoint(
            j_target=float(j), k_s=k_s, m_s=m_s, e_s=e_s,
            k_c=k_c, m_c=m_c, e_c=e_c, gain=gain_db(e_s, e_c),
            flagged=(m_s == 0 or m_c == 0),
        )
        if with_sp:
            m_sp = int(m_sp_arr[i])
            e_sp = expected_trials(k_sp, m_sp)
            point.m_sprime = m_sp
            point.e_sprime = e_sp
            point.gain_e = gain_db(e_s, e_sp)
            point.gain_p = gain_db(e_sp, e_c)
            point.flagged = point.flagged or m_sp == 0
        points.append(point)
    return GainCurve(points)
