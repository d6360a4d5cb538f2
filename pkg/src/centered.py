"""A centered U-statistic that converges in distribution but not in probability.

With weights a_1 = 1, a_k = k^{3/2} - (k-1)^{3/2} and the sets
G_k = {(x, T^k x) : T^k x in [1/2, 1)}, the kernel
h = sum_k a_k (1_{G_k}(x, y) + 1_{G_k}(y, x)) satisfies
h(X_i, X_j) = a_{j-i} b_{j+1} almost surely along the doubling map. The
centered statistic collapses to a weighted sum of fair digits,

    Y_n = C(n,2)^-1 sum_{j=2}^n (j-1)^{3/2} (b_{j+1} - 1/2),

a martingale-difference array in the prefix filtration.
"""

import logging
import math
from fractions import Fraction
from typing import List, Optional

import numpy as np
from scipy import stats

from src.config import settings
from src.dyadic import BitStream, OrbitWindows, Point, digit_matrix, make_point, window_keys
from src.errors import DomainError
from src.models import (
    DistributionSummary,
    GapSummary,
    McLeishDiagnostics,
    MeanTable,
    MeanTableRow,
    PrefixCheck,
)
from src.processes import SamplePath
from src.ustat import Kernel
from src.utils import pairs_count, split_seed
from src.worker import ReplicateWorker

logger = logging.getLogger(__name__)

_REPLICATE_CHUNK = 500
_KS_CRITICAL = 1.36
_KS_SLACK = 0.0058
_HISTOGRAM_BINS = 40


def weight(k: int) -> float:
    """a_k."""
    if k < 1:
        raise DomainError(f"weight index must be >= 1, got k={k}", k=k)
    if k == 1:
        return 1.0
    return k**1.5 - (k - 1) ** 1.5


def weights(m: int) -> np.ndarray:
    """a_1 .. a_m as an array."""
    if m < 1:
        raise DomainError(f"need m >= 1, got m={m}", m=m)
    k = np.arange(1, m + 1, dtype=np.float64)
    a = k**1.5 - (k - 1.0) ** 1.5
    a[0] = 1.0
    return a


def row_weights(n: int) -> np.ndarray:
    """(j-1)^{3/2} for j = 2 .. n, the row sums of a_{j-i} over i < j."""
    return np.arange(1, n, dtype=np.float64) ** 1.5


def _check_n(n: int) -> None:
    if n < 2:
        raise DomainError(f"need n >= 2, got n={n}", n=n)


def _centered_digits(point: Point, n: int) -> np.ndarray:
    # b_3 .. b_{n+1}
    return point.bits(n - 1, start=3).astype(np.float64) - 0.5


def y_n(point: Point, n: int) -> float:
    """Y_n straight from the digits; O(n) instead of the O(n^2) pair sum."""
    _check_n(n)
    return math.fsum(row_weights(n) * _centered_digits(point, n)) / pairs_count(n)


def martingale_row(point: Point, n: int) -> np.ndarray:
    """d_{n,1} .. d_{n,n}; d_{n,1} = 0 and the row sums to Y_n."""
    _check_n(n)
    row = np.zeros(n, dtype=np.float64)
    row[1:] = row_weights(n) * _centered_digits(point, n) / pairs_count(n)
    return row


def _y_rows(digits: np.ndarray, n: int) -> np.ndarray:
    """Y_n for every row of a digit matrix holding b_1 .. b_{n+1} or more."""
    w = row_weights(n)
    centered = digits[:, 2 : n + 1].astype(np.float64) - 0.5
    scale = pairs_count(n)
    return np.array([math.fsum(w * row) / scale for row in centered], dtype=np.float64)


def pair_kernel_value(orbit: OrbitWindows, i: int, j: int, max_lag: int) -> float:
    """h(X_i, X_j) from the definition of the sets G_k.

    (X_i, X_j) is in G_k when the window of T^(i+k) x equals that of
    T^j x and digit i+k+1 of x is 1.
    """
    x = orbit.point
    value = 0.0
    for source, target in ((i, j), (j, i)):
        for k in orbit.coincident_lags(source, target, max_lag):
            if x.digit(source + k + 1) == 1:
                value += weight(k)
    return value


def pair_sum_oracle(point: Point, n: int, guard_digits: Optional[int] = None) -> float:
    """Y_n through the full centered pair sum, evaluated from the definition."""
    _check_n(n)
    guard = guard_digits or settings.guard_digits
    orbit = OrbitWindows(point, 2 * n + 1, guard)
    terms = []
    for j in range(2, n + 1):
        for i in range(1, j):
            terms.append(pair_kernel_value(orbit, i, j, n) - weight(j - i) / 2.0)
    return math.fsum(terms) / pairs_count(n)


def centered_kernel(max_lag: int, guard_digits: Optional[int] = None) -> Kernel:
    """The kernel on digit streams with lag form a_{j-i} b_{j+1} and lag mean a_k / 2."""
    guard = guard_digits or settings.guard_digits

    def member_weight(p: Point, q: Point) -> float:
        keys = window_keys(p, max_lag + 1, guard)
        target = window_keys(q, 1, guard)[0]
        total = 0.0
        for k in range(1, max_lag + 1):
            if keys[k] == target and p.digit(k + 1) == 1:
                total += weight(k)
        return total

    def evaluate(p: Point, q: Point) -> float:
        return member_weight(p, q) + member_weight(q, p)

    def lag_form(i_idx: np.ndarray, j_idx: np.ndarray, path: SamplePath) -> np.ndarray:
        i_idx = np.asarray(i_idx, dtype=np.int64)
        j_idx = np.asarray(j_idx, dtype=np.int64)
        lag = np.abs(j_idx - i_idx)
        later = np.maximum(i_idx, j_idx)
        values = np.zeros(lag.shape, dtype=np.float64)
        positive = lag > 0
        if positive.any():
            digits = path.origin.bits(int(later.max()) + 1)
            a = weights(int(lag.max()))
            values[positive] = a[lag[positive] - 1] * digits[later[positive]]
        return values

    def lag_mean(k: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        if k.size == 0:
            return np.zeros(0, dtype=np.float64)
        return weights(int(k.max()))[k - 1] / 2.0

    return Kernel("centered-counterexample", evaluate, bound=None, lag_form=lag_form, lag_mean=lag_mean, on_streams=True)


def mcleish_diagnostics(n: int) -> McLeishDiagnostics:
    """Deterministic McLeish quantities for row n.

    Every |d_{n,j}| is C(n,2)^-1 (j-1)^{3/2} / 2 whatever the point, so the
    maximum is sqrt((n-1)^3) / (2 C(n,2)) and the squares sum to 1/4.
    """
    _check_n(n)
    pairs = pairs_count(n)
    radicand = (n - 1) ** 3
    denominator = 2 * pairs
    cubes = sum(m**3 for m in range(1, n))
    return McLeishDiagnostics(
        n=n,
        max_abs_radicand=radicand,
        max_abs_denominator=denominator,
        max_abs=math.sqrt(radicand) / denominator,
        max_second_moment=Fraction(radicand, 4 * pairs * pairs),
        sum_squares=Fraction(cubes, 4 * pairs * pairs),
    )


def ks_threshold(sample_size: int) -> float:
    """Asymptotic 95% KS critical value plus slack for finite n."""
    return _KS_CRITICAL / math.sqrt(sample_size) + _KS_SLACK


def _replicate_values(n_values: List[int], reps: int, seed: int, threads: Optional[int]) -> List[np.ndarray]:
    """Y_n for each n in n_values on the same replicate streams, chunked for digit batching."""
    n_max = max(n_values)
    chunks = -(-reps // _REPLICATE_CHUNK)

    def run_chunk(chunk: int) -> List[np.ndarray]:
        first = chunk * _REPLICATE_CHUNK
        seeds = [split_seed(seed, r) for r in range(first, min(first + _REPLICATE_CHUNK, reps))]
        digits = digit_matrix(seeds, n_max + 1)
        return [_y_rows(digits, n) for n in n_values]

    worker = ReplicateWorker(threads=threads, progress_every=max(1, chunks // 10), name="replicate chunks")
    results = worker.map(run_chunk, chunks)
    return [np.concatenate([chunk[index] for chunk in results]) for index in range(len(n_values))]


def replicate_point(seed: int, replicate: int) -> BitStream:
    """The stream of replicate ``replicate``; the digits match the batched rows."""
    return make_point(split_seed(seed, replicate))


def sample_y(n: int, reps: int, seed: int, threads: Optional[int] = None) -> np.ndarray:
    """Y_n over independent replicate streams."""
    _check_n(n)
    return _replicate_values([n], reps, seed, threads)[0]


def sample_distribution(
    n: int,
    M: int,
    seed: int,
    ks_sample: Optional[int] = None,
    threads: Optional[int] = None,
    values: Optional[np.ndarray] = None,
) -> DistributionSummary:
    """Mean, variance and KS distance to N(0, 1/4) of Y_n over M streams."""
    _check_n(n)
    if M < 100:
        raise DomainError(f"need M >= 100 replicates, got M={M}", M=M)
    ks_sample = min(ks_sample or M, M)
    if values is None:
        values = sample_y(n, M, seed, threads)

    variance = float(np.var(values, ddof=1))
    ks = float(stats.kstest(values[:ks_sample], stats.norm(loc=0.0, scale=0.5).cdf).statistic)
    counts, edges = np.histogram(values, bins=_HISTOGRAM_BINS, range=(-2.0, 2.0))

    summary = DistributionSummary(
        n=n,
        M=M,
        seed=seed,
        mean=float(np.mean(values)),
        variance=variance,
        stderr_mean=math.sqrt(variance / M),
        ks=ks,
        ks_sample=ks_sample,
        histogram_edges=[float(edge) for edge in edges],
        histogram_counts=[int(count) for count in counts],
        thresholds={
            "mean": 3 * 0.5 / math.sqrt(M),
            "variance": 3 * 0.25 * math.sqrt(2.0 / (M - 1)),
            "ks": ks_threshold(ks_sample),
        },
    )
    logger.info(f"Y_{n} over {M} streams: mean={summary.mean:.5f} var={summary.variance:.5f} ks={summary.ks:.5f}")
    return summary


def gap_coefficients(n: int) -> np.ndarray:
    """c_j for j = 2 .. 2n, with Y_2n - Y_n = sum_j c_j (b_{j+1} - 1/2)."""
    _check_n(n)
    w = row_weights(2 * n)
    c = w / pairs_count(2 * n)
    c[: n - 1] -= w[: n - 1] / pairs_count(n)
    return c


def gap_closed_form_variance(n: int) -> Fraction:
    """Var(Y_2n - Y_n) = 1/2 - C(n,2) / (2 C(2n,2))."""
    _check_n(n)
    return Fraction(1, 2) - Fraction(pairs_count(n), 2 * pairs_count(2 * n))


def gap_statistic(
    n: int,
    M: int,
    seed: int,
    threads: Optional[int] = None,
    samples: Optional[np.ndarray] = None,
) -> GapSummary:
    """Y_2n - Y_n on the same streams against its exact variance."""
    _check_n(n)
    if M < 2:
        raise DomainError(f"need M >= 2 replicates, got M={M}", M=M)
    if samples is None:
        samples = gap_samples(n, M, seed, threads)

    exact_variance = math.fsum(gap_coefficients(n) ** 2) / 4.0
    empirical = float(np.var(samples, ddof=1))
    variance_stderr = exact_variance * math.sqrt(2.0 / (M - 1))
    ks = float(stats.kstest(samples, stats.norm(loc=0.0, scale=math.sqrt(exact_variance)).cdf).statistic)

    summary = GapSummary(
        n=n,
        M=M,
        seed=seed,
        mean=float(np.mean(samples)),
        empirical_variance=empirical,
        variance_stderr=variance_stderr,
        exact_variance=exact_variance,
        closed_form_variance=gap_closed_form_variance(n),
        ks=ks,
        thresholds={"variance": 3 * variance_stderr, "exact_variance_floor": 0.05, "ks": ks_threshold(M)},
    )
    logger.info(f"Y_{2 * n} - Y_{n} over {M} streams: var={empirical:.5f} exact={exact_variance:.5f}")
    return summary


def gap_samples(n: int, M: int, seed: int, threads: Optional[int] = None) -> np.ndarray:
    """Y_2n - Y_n per replicate stream."""
    _check_n(n)
    y_single, y_double = _replicate_values([n, 2 * n], M, seed, threads)
    return y_double - y_single


def unbounded_mean_table(j_max: int, bound: float = 10.0) -> MeanTable:
    """E|h(X_1, X_j)| = a_{j-1}/2 for 2 <= j <= j_max."""
    if j_max < 2:
        raise DomainError(f"need j_max >= 2, got {j_max}", j_max=j_max)
    means = weights(j_max - 1) / 2.0
    rows = [MeanTableRow(j=j, mean_abs=float(means[j - 2])) for j in range(2, j_max + 1)]
    exceeding = np.nonzero(means > bound)[0]
    return MeanTable(
        rows=rows,
        monotone=bool(np.all(np.diff(means) >= 0)),
        bound=bound,
        first_exceeding=int(exceeding[0]) + 2 if exceeding.size else None,
    )


def martingale_difference_check(M: int, max_j: int, seed: int, min_hits: int = 200) -> List[PrefixCheck]:
    """Conditional mean of b_{j+1} - 1/2 given each prefix b_1 .. b_j.

    Only prefixes seen at least ``min_hits`` times are reported; the z-score
    uses the exact standard deviation 1/2 of a centered fair digit.
    """
    if max_j < 1:
        raise DomainError(f"need max_j >= 1, got {max_j}", max_j=max_j)
    seeds = [split_seed(seed, r) for r in range(M)]
    digits = digit_matrix(seeds, max_j + 1).astype(np.int64)

    checks = []
    prefix = np.zeros(M, dtype=np.int64)
    for j in range(1, max_j + 1):
        prefix = 2 * prefix + digits[:, j - 1]
        nxt = digits[:, j].astype(np.float64) - 0.5
        hits = np.bincount(prefix, minlength=2**j)
        sums = np.bincount(prefix, weights=nxt, minlength=2**j)
        for pattern in np.nonzero(hits >= min_hits)[0]:
            count = int(hits[pattern])
            mean = float(sums[pattern]) / count
            stderr = 0.5 / math.sqrt(count)
            checks.append(
                PrefixCheck(
                    j=j,
                    pattern=format(int(pattern), f"0{j}b"),
                    hits=count,
                    mean=mean,
                    stderr=stderr,
                    z=mean / stderr,
                )
            )
    logger.info(f"Martingale check over {M} streams: {len(checks)} prefixes with >= {min_hits} hits")
    return checks
