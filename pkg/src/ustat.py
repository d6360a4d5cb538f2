"""Order-2 U-statistics, V-statistics and centered U-statistics of sample paths.

Pair sums are accumulated in one fixed order, rows j = 2, 3, ... and within a
row i = 1, ..., j-1, so the incremental series and the direct double loop
produce bit-identical values.
"""

import logging
import math
from fractions import Fraction
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from scipy import special

from src.config import settings
from src.errors import ConfigurationError, DiagnosticError, DomainError
from src.models import UStatSeries
from src.processes import SamplePath
from src.utils import pairs_count, validate_grid

logger = logging.getLogger(__name__)

AccumulationMode = Literal["plain", "compensated", "exact"]

LagForm = Callable[[np.ndarray, np.ndarray, SamplePath], np.ndarray]
LagMean = Callable[[np.ndarray], np.ndarray]


class Kernel:
    """A symmetric kernel h(x, y) with the metadata the engine can exploit.

    ``evaluate`` is vectorised over numpy arrays for kernels on real points;
    kernels with ``on_streams`` set take digit views instead. ``lag_form``
    maps index arrays (i, j), i < j, to h(X_i, X_j) where that value is
    determined by the lag j - i almost surely; ``lag_mean`` gives
    E h(X_i, X_{i+k}).
    """

    def __init__(
        self,
        name: str,
        evaluate: Callable[[Any, Any], Any],
        bound: Optional[float] = None,
        lag_form: Optional[LagForm] = None,
        lag_mean: Optional[LagMean] = None,
        on_streams: bool = False,
    ):
        self.name = name
        self.evaluate = evaluate
        self.bound = bound
        self.lag_form = lag_form
        self.lag_mean = lag_mean
        self.on_streams = on_streams

    def __repr__(self) -> str:
        return f"Kernel({self.name!r}, bound={self.bound})"


# Built-in kernels on real points

def _constant(c: float) -> Callable[[Any, Any], np.ndarray]:
    def evaluate(x: Any, y: Any) -> np.ndarray:
        return np.full(np.broadcast(x, y).shape, c, dtype=np.float64)

    return evaluate


def _indicator_product(threshold: float) -> Callable[[Any, Any], np.ndarray]:
    def evaluate(x: Any, y: Any) -> np.ndarray:
        return np.logical_and(np.less_equal(x, threshold), np.less_equal(y, threshold)).astype(np.float64)

    return evaluate


_REAL_KERNELS: Dict[str, Callable[[Any, Any], Any]] = {
    "product": lambda x, y: np.multiply(x, y),
    "centered-product": lambda x, y: np.multiply(np.subtract(x, 0.5), np.subtract(y, 0.5)),
    "abs-diff": lambda x, y: np.abs(np.subtract(x, y)),
    "cos": lambda x, y: np.cos(2.0 * np.pi * np.abs(np.subtract(x, y))),
}

# Sup-norm bounds on the support of each marginal; None means unbounded there
_BOUNDS: Dict[str, Dict[str, Optional[float]]] = {
    "product": {"uniform": 1.0, "normal": None},
    "centered-product": {"uniform": 0.25, "normal": None},
    "abs-diff": {"uniform": 1.0, "normal": None},
    "cos": {"uniform": 1.0, "normal": 1.0},
    "indicator-product": {"uniform": 1.0, "normal": 1.0},
}

BUILTIN_KERNELS = ("constant", "product", "centered-product", "abs-diff", "cos", "indicator-product")


def _default_threshold(marginal: str) -> float:
    return 0.5 if marginal == "uniform" else 0.0


def build_kernel(name: str, marginal: str = "uniform", params: Optional[Dict[str, float]] = None) -> Kernel:
    """Instantiate a built-in kernel with the bound that holds under the marginal."""
    params = dict(params or {})
    if name == "constant":
        c = float(params.pop("c", 1.0))
        _reject_params(name, params)
        return Kernel(
            name,
            _constant(c),
            bound=abs(c),
            lag_mean=lambda k: np.full(np.shape(k), c, dtype=np.float64),
        )
    if name == "indicator-product":
        threshold = float(params.pop("threshold", _default_threshold(marginal)))
        _reject_params(name, params)
        return Kernel(name, _indicator_product(threshold), bound=_BOUNDS[name][marginal])
    if name in _REAL_KERNELS:
        _reject_params(name, params)
        return Kernel(name, _REAL_KERNELS[name], bound=_BOUNDS[name][marginal])
    raise ConfigurationError(f"unknown kernel '{name}'; choose one of {', '.join(BUILTIN_KERNELS)}")


def _reject_params(name: str, params: Dict[str, float]) -> None:
    if params:
        raise ConfigurationError(f"kernel '{name}' takes no parameters {sorted(params)}")


def analytic_target(name: str, marginal: str, params: Optional[Dict[str, float]] = None) -> Optional[float]:
    """Closed-form double integral of a built-in kernel, when one is known."""
    params = params or {}
    uniform = marginal == "uniform"
    if name == "constant":
        return float(params.get("c", 1.0))
    if name == "product":
        return 0.25 if uniform else 0.0
    if name == "centered-product":
        return 0.0 if uniform else 0.25
    if name == "abs-diff":
        return 1.0 / 3.0 if uniform else 2.0 / math.sqrt(math.pi)
    if name == "cos":
        return 0.0 if uniform else math.exp(-4.0 * math.pi**2)
    if name == "indicator-product":
        threshold = float(params.get("threshold", _default_threshold(marginal)))
        mass = min(max(threshold, 0.0), 1.0) if uniform else float(special.ndtr(threshold))
        return mass * mass
    return None


class _Accumulator:
    """Running sum of kernel rows in a fixed order."""

    def __init__(self, mode: AccumulationMode):
        self.mode = mode
        self._total: Union[float, Fraction] = Fraction(0) if mode == "exact" else 0.0
        self._compensation = 0.0

    def add_row(self, row: Sequence[float]) -> None:
        if self.mode == "exact":
            self._total += sum((Fraction(float(value)) for value in row), Fraction(0))
        elif self.mode == "compensated":
            self._add_compensated(math.fsum(row))
        else:
            # add.accumulate is strictly left to right
            values = np.asarray(row, dtype=np.float64)
            if values.size:
                self._total = float(np.add.accumulate(np.concatenate(([self._total], values)))[-1])

    def add(self, value: float) -> None:
        if self.mode == "exact":
            self._total += Fraction(float(value))
        elif self.mode == "compensated":
            self._add_compensated(float(value))
        else:
            self._total = self._total + float(value)

    def _add_compensated(self, value: float) -> None:
        # Neumaier's variant of Kahan summation
        total = self._total + value
        if abs(self._total) >= abs(value):
            self._compensation += (self._total - total) + value
        else:
            self._compensation += (value - total) + self._total
        self._total = total

    @property
    def value(self) -> Union[float, Fraction]:
        if self.mode == "compensated":
            return self._total + self._compensation
        return self._total


def _mode_for(path: SamplePath, exact: bool) -> AccumulationMode:
    if exact:
        return "exact"
    return "compensated" if path.n > settings.compensated_threshold else "plain"


def _check_length(path: SamplePath, n: int) -> None:
    if not 2 <= n <= path.n:
        raise DomainError(f"need 2 <= n <= {path.n}, got n={n}", n=n)


def _pair_value(kernel: Kernel, points: List[Any], i: int, j: int) -> float:
    value = float(kernel.evaluate(points[i], points[j]))
    if not math.isfinite(value):
        raise DiagnosticError(
            f"kernel '{kernel.name}' is not finite at pair (i={i + 1}, j={j + 1})",
            i=i + 1,
            j=j + 1,
        )
    return value


def _check_row(kernel: Kernel, row: np.ndarray, j: int) -> np.ndarray:
    finite = np.isfinite(row)
    if not finite.all():
        i = int(np.argmin(finite))
        raise DiagnosticError(
            f"kernel '{kernel.name}' is not finite at pair (i={i + 1}, j={j + 1})",
            i=i + 1,
            j=j + 1,
        )
    return row


def _row(kernel: Kernel, path: SamplePath, j: int) -> np.ndarray:
    """Values h(X_i, X_{j+1}) for i = 1..j (0-based column j)."""
    if kernel.lag_form is not None:
        i_idx = np.arange(1, j + 1, dtype=np.int64)
        j_idx = np.full(j, j + 1, dtype=np.int64)
        row = kernel.lag_form(i_idx, j_idx, path)
    elif kernel.on_streams:
        points = [path.point(i) for i in range(1, j + 2)]
        row = [kernel.evaluate(points[i], points[j]) for i in range(j)]
    else:
        row = kernel.evaluate(path.values[:j], path.values[j])
    return _check_row(kernel, np.asarray(row, dtype=np.float64).reshape(j), j)


def _diagonal(kernel: Kernel, path: SamplePath, j: int) -> float:
    """h(X_{j+1}, X_{j+1})."""
    if kernel.lag_form is not None:
        index = np.array([j + 1], dtype=np.int64)
        value = float(np.asarray(kernel.lag_form(index, index, path), dtype=np.float64)[0])
    elif kernel.on_streams:
        point = path.point(j + 1)
        value = float(kernel.evaluate(point, point))
    else:
        value = float(kernel.evaluate(path.values[j], path.values[j]))
    if not math.isfinite(value):
        raise DiagnosticError(f"kernel '{kernel.name}' is not finite on the diagonal at i={j + 1}", i=j + 1)
    return value


def u_naive(path: SamplePath, kernel: Kernel, n: int, exact: bool = False) -> Union[float, Fraction]:
    """U_n by the direct double loop; the reference every faster path must match."""
    _check_length(path, n)
    points = path.points(kernel.on_streams)
    accumulator = _Accumulator(_mode_for(path, exact))
    for j in range(1, n):
        accumulator.add_row([_pair_value(kernel, points, i, j) for i in range(j)])
    total = accumulator.value
    if exact:
        return Fraction(total) / pairs_count(n)
    return total / pairs_count(n)


def v_plugin(path: SamplePath, kernel: Kernel, n: int, exact: bool = False) -> Union[float, Fraction]:
    """V_n = n^-2 sum over all (i, j), the integral of h against F_n x F_n."""
    _check_length(path, n)
    points = path.points(kernel.on_streams)
    accumulator = _Accumulator(_mode_for(path, exact))
    for j in range(n):
        accumulator.add_row([_pair_value(kernel, points, i, j) for i in range(n)])
    total = accumulator.value
    if exact:
        return Fraction(total) / (n * n)
    return total / (n * n)


def diagonal_sum(path: SamplePath, kernel: Kernel, n: int, exact: bool = False) -> Union[float, Fraction]:
    """Sum of h(X_i, X_i) for i <= n."""
    _check_length(path, n)
    accumulator = _Accumulator(_mode_for(path, exact))
    for j in range(n):
        accumulator.add(_diagonal(kernel, path, j))
    return accumulator.value


def u_series(path: SamplePath, kernel: Kernel, grid: Sequence[int]) -> UStatSeries:
    """U_n, V_n and (when the lag mean is known) centered U_n along a grid.

    The raw pair sum is extended one row at a time, S_n = S_{n-1} + sum_{i<n}
    h(X_i, X_n), so the whole grid costs one pass over the pairs.
    """
    grid = validate_grid(list(grid))
    if grid[-1] > path.n:
        raise DomainError(f"grid reaches n={grid[-1]} beyond the path length {path.n}")

    mode = _mode_for(path, exact=False)
    pairs = _Accumulator(mode)
    diagonal = _Accumulator(mode)
    targets = set(grid)
    u: List[float] = []
    v: List[float] = []
    pair_sums: List[float] = []
    diagonal_sums: List[float] = []

    diagonal.add(_diagonal(kernel, path, 0))
    for j in range(1, grid[-1]):
        pairs.add_row(_row(kernel, path, j))
        diagonal.add(_diagonal(kernel, path, j))
        n = j + 1
        if n in targets:
            s = float(pairs.value)
            d = float(diagonal.value)
            u.append(s / pairs_count(n))
            v.append((2.0 * s + d) / (n * n))
            pair_sums.append(s)
            diagonal_sums.append(d)

    series = UStatSeries(
        kernel=kernel.name,
        grid=grid,
        u=u,
        v=v,
        pair_sums=pair_sums,
        diagonal_sums=diagonal_sums,
    )
    if kernel.lag_mean is not None:
        series = center(series, kernel.lag_mean)
    logger.debug(f"U-series of {kernel.name} up to n={grid[-1]} ({mode} accumulation)")
    return series


def center(series: UStatSeries, lag_mean: Optional[LagMean]) -> UStatSeries:
    """Subtract C(n,2)^-1 sum_{k<n} (n-k) mu(k) from every U_n.

    The correction is carried along the grid with C_{n+1} = C_n + sum_{k<=n} mu(k).
    """
    if lag_mean is None:
        raise ConfigurationError("centering needs the kernel's lag mean")
    n_max = series.grid[-1]
    mu = np.broadcast_to(np.asarray(lag_mean(np.arange(1, n_max, dtype=np.int64)), dtype=np.float64), (n_max - 1,))

    corrections: Dict[int, float] = {}
    targets = set(series.grid)
    weighted = 0.0  # sum_{k<n} (n-k) mu(k)
    running = 0.0  # sum_{k<n} mu(k)
    for n in range(2, n_max + 1):
        running += float(mu[n - 2])
        weighted += running
        if n in targets:
            corrections[n] = weighted / pairs_count(n)

    centered = [u - corrections[n] for n, u in zip(series.grid, series.u)]
    return series.model_copy(update={"centered": centered})


def uv_identity_gap(series: UStatSeries) -> List[float]:
    """n(n-1) U_n - (n^2 V_n - sum_i h(X_i, X_i)) at every grid point."""
    gaps = []
    for n, u, v, d in zip(series.grid, series.u, series.v, series.diagonal_sums):
        gaps.append(n * (n - 1) * u - (n * n * v - d))
    return gaps


def uv_identity_tolerance(series: UStatSeries, ulps: int = 8) -> List[float]:
    """Allowed identity gap: a few units in the last place of the accumulated magnitude."""
    tolerances = []
    for n, u, v, d in zip(series.grid, series.u, series.v, series.diagonal_sums):
        magnitude = max(abs(n * (n - 1) * u), abs(n * n * v), abs(d))
        tolerances.append(ulps * float(np.spacing(magnitude)) if magnitude else 0.0)
    return tolerances
