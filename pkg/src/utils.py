"""Utility functions for the U-statistics laboratory."""

import uuid
from datetime import datetime, timezone
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from fractions import Fraction
from typing import List

import numpy as np

from src.errors import ConfigurationError, DomainError

UINT64_MAX = 2**64 - 1


def generate_run_id() -> str:
    """Generate a unique identifier for a CLI run."""
    return str(uuid.uuid4())


def get_current_timestamp() -> datetime:
    """Get current UTC timestamp."""
    return datetime.now(timezone.utc)


def format_timestamp(timestamp: datetime) -> str:
    """Format timestamp to ISO 8601 string."""
    return timestamp.isoformat()


def pairs_count(n: int) -> int:
    """Return C(n, 2), the number of pairs i < j among n observations."""
    if n < 2:
        raise DomainError(f"need at least two observations, got n={n}", n=n)
    return n * (n - 1) // 2


def validate_seed(seed: int) -> int:
    """Check that a seed fits in an unsigned 64-bit integer."""
    if not 0 <= seed <= UINT64_MAX:
        raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {seed}", seed=seed)
    return seed


def split_seed(seed: int, index: int) -> int:
    """Derive the seed of replicate ``index`` from a run seed.

    The derivation goes through numpy's SeedSequence spawn keys, so distinct
    replicates get statistically independent streams.
    """
    sequence = np.random.SeedSequence(entropy=validate_seed(seed), spawn_key=(index,))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def format_fraction(value: Fraction, places: int = 12) -> str:
    """Render an exact rational as a decimal string with a fixed number of places."""
    with localcontext() as ctx:
        integer_digits = len(str(abs(value.numerator) // value.denominator))
        ctx.prec = integer_digits + places + 10
        decimal = Decimal(value.numerator) / Decimal(value.denominator)
        quantum = Decimal(1).scaleb(-places)
        return str(decimal.quantize(quantum, rounding=ROUND_HALF_EVEN))


def parse_grid(text: str, minimum: int = 2) -> List[int]:
    """Parse a prefix-length grid.

    Accepts a comma separated list (``"10,100,1000"``) or an inclusive range
    with optional step (``"2:200"`` or ``"8:4096:8"``).
    """
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(part) for part in text.split(":")]
            if len(parts) == 2:
                start, stop, step = parts[0], parts[1], 1
            elif len(parts) == 3:
                start, stop, step = parts
            else:
                raise ValueError(text)
            grid = list(range(start, stop + 1, step))
        else:
            grid = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse grid '{text}'") from exc
    return validate_grid(grid, minimum)


def validate_grid(grid: List[int], minimum: int = 2) -> List[int]:
    """Check that a grid is strictly increasing and starts at ``minimum`` or more."""
    if not grid:
        raise ConfigurationError("grid must not be empty")
    if grid[0] < minimum:
        raise ConfigurationError(f"grid must start at n >= {minimum}, got {grid[0]}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigurationError("grid must be strictly increasing")
    return list(grid)


def dyadic_grid(start: int, stop: int) -> List[int]:
    """Return the powers of two between start and stop inclusive."""
    grid = []
    n = start
    while n <= stop:
        grid.append(n)
        n *= 2
    return grid
