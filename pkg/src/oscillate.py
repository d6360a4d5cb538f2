"""A bounded kernel whose U-statistics oscillate along the doubling map.

The lag set I is a union of windows (N'_l, N_{l+1}] cut out of an index
ladder. The kernel h(x, y) = 1_G(x, y) + 1_G(y, x), with G the pairs
(x, T^k x) for k in I, satisfies h(X_i, X_j) = 1{j - i in I} almost surely,
so every pair sum has a closed form in exact integers.
"""

import json
import logging
from bisect import bisect_left
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from src.config import settings
from src.dyadic import OrbitWindows, Point, make_point, window_keys
from src.errors import ConfigurationError, DomainError, LadderRangeError
from src.models import (
    ABDecomposition,
    ExactSum,
    IndexLadder,
    Mismatch,
    OscillationRow,
    SimulationCheck,
)
from src.processes import SamplePath
from src.ustat import Kernel
from src.utils import pairs_count

logger = logging.getLogger(__name__)

_INT64_SAFE = 2**62
_MAX_RECORDED_MISMATCHES = 20


def default_ladder(levels: int) -> IndexLadder:
    """N_1 = 2, N'_l = max(l, 2) N_l and N_{l+1} = 2^l N'_l."""
    if levels < 1:
        raise DomainError(f"ladder needs at least one level, got L={levels}", levels=levels)
    n_values = [2]
    nprime_values = [1]
    for level in range(1, levels + 1):
        nprime = max(level, 2) * n_values[-1]
        nprime_values.append(nprime)
        if level < levels:
            n_values.append(2**level * nprime)
    return IndexLadder(N=n_values, Nprime=nprime_values)


def ladder_violations(ladder: IndexLadder) -> List[str]:
    """Every ladder invariant that fails, with the level where it fails."""
    violations = []
    levels = ladder.levels
    if ladder.nprime_at(0) != 1:
        violations.append(f"N'_0 = 1 fails (N'_0 = {ladder.nprime_at(0)})")
    for level in range(0, levels):
        if not ladder.nprime_at(level) < ladder.n_at(level + 1):
            violations.append(f"N'_ℓ < N_ℓ+1 fails at ℓ={level}")
    for level in range(1, levels + 1):
        n, nprime = ladder.n_at(level), ladder.nprime_at(level)
        if not n < nprime:
            violations.append(f"N_ℓ < N'_ℓ fails at ℓ={level}")
        if not nprime >= level * n:
            violations.append(f"N'_ℓ ≥ ℓ·N_ℓ fails at ℓ={level}")
    ratios = [Fraction(ladder.n_at(level + 1), ladder.nprime_at(level)) for level in range(1, levels)]
    for level, (previous, current) in enumerate(zip(ratios, ratios[1:]), start=2):
        if not current > previous:
            violations.append(f"N_ℓ+1/N'_ℓ strictly increasing fails at ℓ={level}")
    return violations


def load_ladder(path: Union[str, Path]) -> IndexLadder:
    """Read a ladder file ``{"N": [...], "Nprime": [...]}``."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
        return IndexLadder.model_validate(payload)
    except (OSError, ValueError, ValidationError) as exc:
        raise ConfigurationError(f"cannot read ladder file '{path}': {exc}", path=str(path)) from exc


def dump_ladder(ladder: IndexLadder, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(ladder.model_dump(), handle, indent=2)
        handle.write("\n")


class LagSet:
    """Membership in I = union of I_l = (N'_l, N_{l+1}] for l = 0 .. L-1.

    Every lag up to N'_L has a decided status: lags in (N_L, N'_L] lie
    between the last window and the next one, which starts after N'_L.
    """

    def __init__(self, ladder: IndexLadder):
        violations = ladder_violations(ladder)
        if violations:
            raise ConfigurationError(f"invalid ladder: {'; '.join(violations)}", violations=violations)
        self.ladder = ladder
        self.lows = [ladder.nprime_at(level) for level in range(ladder.levels)]
        self.highs = [ladder.n_at(level + 1) for level in range(ladder.levels)]
        self._lows_array = np.array([min(low, _INT64_SAFE) for low in self.lows], dtype=np.int64)
        self._highs_array = np.array([min(high, _INT64_SAFE) for high in self.highs], dtype=np.int64)

    @property
    def levels(self) -> int:
        return self.ladder.levels

    @property
    def horizon(self) -> int:
        """Largest lag whose membership is decided."""
        return self.ladder.nprime_at(self.ladder.levels)

    def interval(self, level: int) -> Tuple[int, int]:
        """Exclusive lower and inclusive upper end of I_level."""
        return self.lows[level], self.highs[level]

    def _check_lag(self, k: int) -> None:
        if k < 1:
            raise DomainError(f"lag must be >= 1, got k={k}", k=k)
        if k > self.horizon:
            raise LadderRangeError(f"lag {k} lies beyond the ladder horizon N'_L = {self.horizon}", k=k)

    def contains(self, k: int) -> bool:
        self._check_lag(k)
        level = bisect_left(self.highs, k)
        return level < self.levels and k > self.lows[level]

    def contains_array(self, lags: np.ndarray) -> np.ndarray:
        """Vectorised membership for lags below 2^62."""
        lags = np.asarray(lags, dtype=np.int64)
        if lags.size == 0:
            return np.zeros(0, dtype=bool)
        low, high = int(lags.min()), int(lags.max())
        if low < 1:
            raise DomainError(f"lag must be >= 1, got k={low}", k=low)
        if high > self.horizon:
            raise LadderRangeError(f"lag {high} lies beyond the ladder horizon N'_L = {self.horizon}", k=high)
        if high >= _INT64_SAFE:
            raise LadderRangeError(f"lag {high} is too large for vectorised membership (limit 2^62)", k=high)
        level = np.searchsorted(self._highs_array, lags, side="left")
        inside = level < self.levels
        result = np.zeros(lags.shape, dtype=bool)
        result[inside] = lags[inside] > self._lows_array[level[inside]]
        return result

    def lags_upto(self, max_lag: int) -> List[int]:
        """The members of I in [1, max_lag]."""
        max_lag = min(max_lag, self.horizon)
        lags: List[int] = []
        for low, high in zip(self.lows, self.highs):
            if low >= max_lag:
                break
            lags.extend(range(low + 1, min(high, max_lag) + 1))
        return lags


def lag_in_I(k: int, lagset: LagSet) -> bool:
    """Whether N'_l < k <= N_{l+1} for some l."""
    return lagset.contains(k)


def _weighted_interval_sum(n: int, low: int, high: int) -> int:
    """Sum of (n - k) over low < k <= min(high, n); the k = n term is zero."""
    first, last = low + 1, min(high, n - 1)
    if first > last:
        return 0
    count = last - first + 1
    return count * n - (first + last) * count // 2


def exact_sum(n: int, lagset: LagSet) -> ExactSum:
    """S(n) = sum_{k<n} (n - k) 1{k in I}, one arithmetic series per window."""
    if n < 2:
        raise DomainError(f"need n >= 2, got n={n}", n=n)
    if n - 1 > lagset.horizon:
        raise LadderRangeError(f"n={n} needs lags beyond the ladder horizon {lagset.horizon}", n=n)
    total = sum(_weighted_interval_sum(n, low, high) for low, high in zip(lagset.lows, lagset.highs))
    return ExactSum(
        n=n,
        S=total,
        u_norm=Fraction(total, pairs_count(n)),
        paper_norm=Fraction(total, n * (n - 1)),
    )


def brute_force_sums(n_max: int, lagset: LagSet) -> List[int]:
    """S(2) .. S(n_max) by enumerating the pairs row by row."""
    if n_max < 2:
        raise DomainError(f"need n_max >= 2, got {n_max}", n_max=n_max)
    sums = []
    total = 0
    for j in range(2, n_max + 1):
        lags = j - np.arange(1, j, dtype=np.int64)
        total += int(np.count_nonzero(lagset.contains_array(lags)))
        sums.append(total)
    return sums


def ab_decomposition(level: int, lagset: LagSet) -> ABDecomposition:
    """Split the normalized sum at N_level into windows I_0 .. I_{level-2} and I_{level-1}.

    A includes the window I_0, so A + B is the whole normalized sum.
    """
    if not 3 <= level <= lagset.levels:
        raise LadderRangeError(f"decomposition needs 3 <= l <= {lagset.levels}, got l={level}", level=level)
    ladder = lagset.ladder
    n = ladder.n_at(level)
    scale = n * (n - 1)

    old = [_weighted_interval_sum(n, *lagset.interval(u)) for u in range(level - 1)]
    a_total = sum(old)
    b_total = _weighted_interval_sum(n, *lagset.interval(level - 1))
    tail = n - ladder.nprime_at(level - 1)

    return ABDecomposition(
        level=level,
        A=Fraction(a_total, scale),
        B=Fraction(b_total, scale),
        total=Fraction(a_total + b_total, scale),
        A_bound=Fraction(ladder.n_at(level - 1) - 1, n - 1),
        A_from_first=Fraction(a_total - old[0], scale),
        A_from_first_bound=Fraction(ladder.n_at(level - 1) - ladder.n_at(1), n - 1),
        B_triangular=Fraction(tail * (tail - 1) // 2, scale),
    )


def oscillation_report(lagset: LagSet) -> List[OscillationRow]:
    """Exact normalized sums at N_l and N'_l for every level.

    N'_l rows carry the bound (N_l - 1)/N'_l: every lag below N'_l that lies
    in I is at most N_l.
    """
    ladder = lagset.ladder
    rows = []
    for level in range(1, ladder.levels + 1):
        for which, n in (("N", ladder.n_at(level)), ("N'", ladder.nprime_at(level))):
            result = exact_sum(n, lagset)
            bound = Fraction(ladder.n_at(level) - 1, n) if which == "N'" else None
            rows.append(
                OscillationRow(
                    level=level,
                    n=n,
                    which=which,
                    S=result.S,
                    u_norm=result.u_norm,
                    paper_norm=result.paper_norm,
                    bound=bound,
                )
            )
    logger.info(f"Oscillation report over {ladder.levels} levels")
    return rows


def stated_prime_bound(level: int, lagset: LagSet) -> Fraction:
    """The bound N'_{l-1}/N'_l that only counts the windows I_1 .. I_{l-2}."""
    ladder = lagset.ladder
    return Fraction(ladder.nprime_at(level - 1), ladder.nprime_at(level))


def oscillating_kernel(lagset: LagSet, max_lag: int, guard_digits: Optional[int] = None) -> Kernel:
    """h = 1_G(x, y) + 1_G(y, x) on digit streams, plus its lag form.

    Stream evaluation looks for k in I with k <= max_lag and compares
    guard_digits digits of T^k x and y.
    """
    guard = guard_digits or settings.guard_digits
    lags = lagset.lags_upto(max_lag)

    def member_of_g(p: Point, q: Point) -> int:
        keys = window_keys(p, max_lag + 1, guard)
        target = window_keys(q, 1, guard)[0]
        return 1 if any(keys[k] == target for k in lags) else 0

    def evaluate(p: Point, q: Point) -> float:
        return float(member_of_g(p, q) + member_of_g(q, p))

    def lag_form(i_idx: np.ndarray, j_idx: np.ndarray, path: SamplePath) -> np.ndarray:
        lag = np.abs(np.asarray(j_idx, dtype=np.int64) - np.asarray(i_idx, dtype=np.int64))
        values = np.zeros(lag.shape, dtype=np.float64)
        positive = lag > 0
        values[positive] = lagset.contains_array(lag[positive])
        return values

    def lag_mean(k: np.ndarray) -> np.ndarray:
        return lagset.contains_array(np.asarray(k, dtype=np.int64)).astype(np.float64)

    return Kernel("oscillating", evaluate, bound=2.0, lag_form=lag_form, lag_mean=lag_mean, on_streams=True)


def simulate_check(n: int, seed: int, lagset: LagSet, guard_digits: Optional[int] = None) -> SimulationCheck:
    """Evaluate h(X_i, X_j) from the definition of G and compare with 1{j - i in I}.

    (X_i, X_j) is in G when the guard_digits-digit window of T^(i+k) x equals
    that of T^j x for some k in I. Lags up to n are searched in both
    directions.
    """
    guard = guard_digits or settings.guard_digits
    if guard < 1:
        raise DomainError(f"guard_digits must be >= 1, got {guard}", guard_digits=guard)
    closed = exact_sum(n, lagset)

    x = make_point(seed)
    orbit = OrbitWindows(x, 2 * n + 1, guard)
    lags = set(lagset.lags_upto(n))

    def in_g(source: int, target: int) -> Optional[int]:
        for k in orbit.coincident_lags(source, target, n):
            if k in lags:
                return k
        return None

    mismatches: List[Mismatch] = []
    mismatch_count = 0
    simulated_sum = 0
    for j in range(2, n + 1):
        for i in range(1, j):
            forward = in_g(i, j)
            backward = in_g(j, i)
            simulated = int(forward is not None) + int(backward is not None)
            expected = int(lagset.contains(j - i))
            simulated_sum += simulated
            if simulated != expected:
                mismatch_count += 1
                if len(mismatches) < _MAX_RECORDED_MISMATCHES:
                    mismatches.append(
                        Mismatch(
                            i=i,
                            j=j,
                            k=forward if forward is not None else backward,
                            window=orbit.window_digits(j),
                            simulated=simulated,
                            expected=expected,
                        )
                    )

    if mismatch_count:
        logger.warning(f"Orbit check n={n} seed={seed} guard={guard}: {mismatch_count} mismatches")
    else:
        logger.debug(f"Orbit check n={n} seed={seed} guard={guard}: no mismatches")
    return SimulationCheck(
        n=n,
        seed=seed,
        guard_digits=guard,
        pairs=pairs_count(n),
        mismatch_count=mismatch_count,
        mismatches=mismatches,
        simulated_sum=simulated_sum,
        exact_sum=closed.S,
        u_simulated=Fraction(simulated_sum, pairs_count(n)),
        u_exact=closed.u_norm,
    )
