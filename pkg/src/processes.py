"""Stationary ergodic sample paths and ground-truth product integrals."""

import logging
import math
from decimal import Decimal, localcontext
from typing import TYPE_CHECKING, List, Optional, Union

import numpy as np
from scipy import signal, special

from src.config import settings
from src.dyadic import BitStream, ShiftedStream, make_point, prefix_int, window_keys
from src.errors import ConfigurationError, DiagnosticError, DomainError
from src.models import ProcessSpec, ProductIntegral
from src.utils import validate_seed

if TYPE_CHECKING:
    from src.ustat import Kernel

logger = logging.getLogger(__name__)

_OPEN_UNIFORM_BITS = 53


class SamplePath:
    """Observations X_1 .. X_n of one process realization.

    Doubling-map paths keep the origin stream x, so X_i = T^i x is also
    available exactly as a digit view.
    """

    def __init__(
        self,
        spec: ProcessSpec,
        seed: int,
        values: np.ndarray,
        origin: Optional[BitStream] = None,
        precision: Optional[int] = None,
    ):
        values = np.asarray(values, dtype=np.float64)
        values.flags.writeable = False
        self.spec = spec
        self.seed = seed
        self.values = values
        self.origin = origin
        self.precision = precision

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.n

    def point(self, i: int) -> ShiftedStream:
        """X_i = T^i x as an exact digit view (doubling-map paths only)."""
        if self.origin is None:
            raise ConfigurationError(f"{self.spec.kind} paths carry no digit stream")
        if not 1 <= i <= self.n:
            raise DomainError(f"observation index {i} outside 1..{self.n}", i=i)
        return self.origin.shift(i)

    def points(self, on_streams: bool) -> List[Union[float, ShiftedStream]]:
        """Sample-space points as seen by a kernel."""
        if on_streams:
            return [self.point(i) for i in range(1, self.n + 1)]
        return [np.float64(value) for value in self.values]


def validate_spec(spec: ProcessSpec) -> ProcessSpec:
    """Reject parameters outside the stationary range."""
    if spec.kind == "gaussian-ar1" and not abs(spec.rho) < 1:
        raise ConfigurationError(f"AR(1) needs |rho| < 1, got rho={spec.rho}", rho=spec.rho)
    if spec.kind == "rotation" and not Decimal(0) < spec.alpha < Decimal(1):
        raise ConfigurationError(f"rotation needs alpha in (0, 1), got {spec.alpha}", alpha=spec.alpha)
    return spec


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(validate_seed(seed)))


def _open_uniforms(rng: np.random.Generator, size: int) -> np.ndarray:
    """Uniforms strictly inside (0, 1) on the 2^-53 grid shifted by half a step."""
    steps = rng.integers(0, 2**_OPEN_UNIFORM_BITS, size=size, dtype=np.uint64)
    return (steps.astype(np.float64) + 0.5) / float(2**_OPEN_UNIFORM_BITS)


def sample_marginal(spec: ProcessSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    """Independent draws from the marginal F of the process."""
    if spec.marginal == "normal":
        return special.ndtri(_open_uniforms(rng, size))
    return rng.random(size)


def _doubling_values(origin: BitStream, n: int, precision: int) -> np.ndarray:
    # X_i = approx(T^i x, precision) for i = 1..n; int / int rounds correctly
    keys = window_keys(origin, n + 1, precision)
    scale = 1 << precision
    return np.array([key / scale for key in keys[1:]], dtype=np.float64)


def _rotation_values(spec: ProcessSpec, origin: BitStream, n: int) -> np.ndarray:
    with localcontext() as ctx:
        ctx.prec = 40
        x = Decimal(prefix_int(origin, 64)) / Decimal(2**64)
        alpha = spec.alpha
        values = []
        for _ in range(n):
            x = (x + alpha) % 1
            values.append(float(x))
    return np.array(values, dtype=np.float64)


def _ar1_values(spec: ProcessSpec, seed: int, n: int) -> np.ndarray:
    # X_1 ~ N(0,1), X_t = rho X_{t-1} + sqrt(1 - rho^2) Z_t keeps unit variance
    z = special.ndtri(_open_uniforms(_generator(seed), n))
    if n == 1:
        return z
    rho = spec.rho
    scale = math.sqrt(1.0 - rho * rho)
    tail, _ = signal.lfilter([scale], [1.0, -rho], z[1:], zi=[rho * z[0]])
    return np.concatenate(([z[0]], tail))


def generate(spec: ProcessSpec, n: int, seed: int, precision: Optional[int] = None) -> SamplePath:
    """Generate X_1 .. X_n of the process; a pure function of (spec, n, seed)."""
    validate_spec(spec)
    validate_seed(seed)
    if n < 1:
        raise DomainError(f"path length must be >= 1, got n={n}", n=n)

    if spec.kind == "doubling-map":
        precision = precision or settings.doubling_precision
        origin = make_point(seed)
        return SamplePath(spec, seed, _doubling_values(origin, n, precision), origin=origin, precision=precision)
    if spec.kind == "rotation":
        return SamplePath(spec, seed, _rotation_values(spec, make_point(seed), n))
    if spec.kind == "iid-uniform":
        return SamplePath(spec, seed, _generator(seed).random(n))
    return SamplePath(spec, seed, _ar1_values(spec, seed, n))


def product_integral(spec: ProcessSpec, kernel: "Kernel", reps: int, seed: int) -> ProductIntegral:
    """Monte-Carlo estimate of the double integral of h against F x F.

    Pairs (x, y) are drawn independently from F, never along one orbit.
    """
    validate_spec(spec)
    if reps < 1:
        raise DomainError(f"reps must be >= 1, got {reps}", reps=reps)
    if kernel.on_streams:
        raise ConfigurationError(f"kernel '{kernel.name}' is defined on digit streams, not on real points")

    rng = _generator(seed)
    x = sample_marginal(spec, reps, rng)
    y = sample_marginal(spec, reps, rng)
    values = np.broadcast_to(np.asarray(kernel.evaluate(x, y), dtype=np.float64), x.shape)

    finite = np.isfinite(values)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise DiagnosticError(
            f"kernel '{kernel.name}' is not finite at ({x[bad]!r}, {y[bad]!r})",
            x=x[bad],
            y=y[bad],
        )

    estimate = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    logger.debug(f"Product integral of {kernel.name} under {spec.label()}: {estimate} +- {stderr}")
    return ProductIntegral(estimate=estimate, stderr=stderr, reps=reps)
