"""Exact binary-digit representation of points of [0, 1).

A point x is a lazily extended digit sequence b_1, b_2, ... with
x = sum_m b_m 2^-m. Digit blocks of 128 bits are MurmurHash3 digests of
(seed, block index), so every digit is a pure function of (seed, m). The
doubling map T x = 2x mod 1 is a left shift of the digit sequence, and
T^k is realized as an offset view without copying anything.
"""

import struct
import threading
from collections import defaultdict
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Union

import mmh3
import numpy as np

from src.config import settings
from src.errors import DigitResourceError, DomainError
from src.models import DyadicInterval
from src.utils import validate_seed

BLOCK_BITS = 128
_BLOCK_KEY = struct.Struct("<QQ")
_MIN_EXTENSION = 1024


def _block_digest(seed: int, block: int) -> bytes:
    """128 pseudo-random bits for digit block ``block`` of stream ``seed``."""
    return mmh3.hash_bytes(_BLOCK_KEY.pack(seed, block))


def _unpack(digests: Iterable[bytes]) -> np.ndarray:
    """Turn concatenated digests into a bit array, most significant bit first."""
    raw = np.frombuffer(b"".join(digests), dtype=np.uint8)
    return np.unpackbits(raw)


class BitStream:
    """A point of [0, 1) given by its seeded binary digits.

    Materialized digits are immutable: extension builds a new array, so views
    handed out earlier stay valid. Extension is guarded by a lock (single
    writer); reads of materialized digits need no coordination.
    """

    offset = 0

    def __init__(self, seed: int, cap: Optional[int] = None):
        self.seed = validate_seed(seed)
        self.cap = cap or settings.digit_cap
        self._digits = np.zeros(0, dtype=np.uint8)
        self._digits.flags.writeable = False
        self._lock = threading.Lock()

    @property
    def origin(self) -> "BitStream":
        return self

    @property
    def materialized_len(self) -> int:
        return int(self._digits.size)

    def _ensure(self, m: int) -> np.ndarray:
        """Make digits 1..m available and return the current digit array."""
        digits = self._digits
        if m <= digits.size:
            return digits
        if m > self.cap:
            raise DigitResourceError(
                f"digit {m} requested beyond the cap of {self.cap} digits",
                seed=self.seed,
                requested=m,
                cap=self.cap,
            )
        with self._lock:
            digits = self._digits
            if m <= digits.size:
                return digits
            target = min(max(m, 2 * digits.size, _MIN_EXTENSION), self.cap)
            first_block = digits.size // BLOCK_BITS
            last_block = -(-target // BLOCK_BITS)
            fresh = _unpack(_block_digest(self.seed, block) for block in range(first_block, last_block))
            extended = np.concatenate((digits, fresh))
            extended.flags.writeable = False
            self._digits = extended
            return extended

    def digit(self, m: int) -> int:
        """Return b_m."""
        if m < 1:
            raise DomainError(f"digit index must be >= 1, got {m}", m=m)
        return int(self._ensure(m)[m - 1])

    def bits(self, count: int, start: int = 1) -> np.ndarray:
        """Return digits b_start .. b_{start+count-1} as a read-only uint8 array."""
        if start < 1 or count < 0:
            raise DomainError(f"invalid digit range start={start} count={count}")
        digits = self._ensure(start + count - 1)
        return digits[start - 1 : start - 1 + count]

    def shift(self, k: int) -> "ShiftedStream":
        return ShiftedStream(self, k)

    def __repr__(self) -> str:
        return f"BitStream(seed={self.seed}, materialized={self.materialized_len})"


class ShiftedStream:
    """The point T^k x as a view on the digits of x."""

    def __init__(self, origin: BitStream, offset: int):
        if offset < 0:
            raise DomainError(f"shift must be >= 0, got {offset}", k=offset)
        self.origin = origin
        self.offset = offset

    @property
    def seed(self) -> int:
        return self.origin.seed

    def digit(self, m: int) -> int:
        if m < 1:
            raise DomainError(f"digit index must be >= 1, got {m}", m=m)
        return self.origin.digit(m + self.offset)

    def bits(self, count: int, start: int = 1) -> np.ndarray:
        if start < 1:
            raise DomainError(f"invalid digit range start={start} count={count}")
        return self.origin.bits(count, start + self.offset)

    def shift(self, k: int) -> "ShiftedStream":
        if k < 0:
            raise DomainError(f"shift must be >= 0, got {k}", k=k)
        return ShiftedStream(self.origin, self.offset + k)

    def __repr__(self) -> str:
        return f"ShiftedStream(seed={self.seed}, offset={self.offset})"


Point = Union[BitStream, ShiftedStream]


def make_point(seed: int, cap: Optional[int] = None) -> BitStream:
    """Sample a point of [0, 1) from Lebesgue measure, reproducibly."""
    return BitStream(seed, cap=cap)


def shift(p: Point, k: int) -> ShiftedStream:
    """Return T^k p."""
    if k < 0:
        raise DomainError(f"shift must be >= 0, got {k}", k=k)
    return ShiftedStream(p.origin, p.offset + k)


def digit(p: Point, m: int) -> int:
    """Return the m-th binary digit of p."""
    return p.digit(m)


def prefix_int(p: Point, count: int) -> int:
    """The integer whose binary expansion is b_1 .. b_count."""
    if count < 1:
        raise DomainError(f"prefix length must be >= 1, got {count}", count=count)
    bits = p.bits(count)
    pad = (-count) % 8
    return int.from_bytes(np.packbits(bits).tobytes(), "big") >> pad


def approx(p: Point, m: int) -> Fraction:
    """Return sum_{i<=m} b_i 2^-i exactly; the error to p is below 2^-m."""
    return Fraction(prefix_int(p, m), 1 << m)


def in_interval(p: Point, iv: DyadicInterval) -> bool:
    """Whether p lies in I_{j,l}; reads exactly j digits."""
    return prefix_int(p, iv.level) == iv.index - 1


def interval_of(p: Point, level: int) -> DyadicInterval:
    """The unique level-j dyadic interval containing p."""
    return DyadicInterval(level=level, index=prefix_int(p, level) + 1)


def even_interval_indicator(p: Point, j: int) -> int:
    """Indicator of the union of the even-indexed intervals I_{j+1, 2l}.

    This union is the set where f o T^j = 1 for f the indicator of [1/2, 1).
    """
    return 1 if interval_of(p, j + 1).index % 2 == 0 else 0


def window_keys(p: Point, count: int, width: int) -> List[int]:
    """Integer keys of the width-digit windows of T^o p for o = 0 .. count-1."""
    if width < 1 or count < 1:
        raise DomainError(f"invalid window request count={count} width={width}")
    bits = p.bits(count + width - 1).tolist()
    mask = (1 << width) - 1
    key = 0
    for bit in bits[:width]:
        key = (key << 1) | bit
    keys = [key]
    for bit in bits[width:]:
        key = ((key << 1) & mask) | bit
        keys.append(key)
    return keys


class OrbitWindows:
    """Digit windows along the orbit of a point, indexed for coincidence search.

    Offsets o = 0 .. count-1 stand for T^o p. Two offsets coincide when their
    width-digit windows agree, which for random points and large widths
    happens only when the offsets are equal.
    """

    def __init__(self, p: Point, count: int, width: int):
        self.point = p
        self.width = width
        self.keys = window_keys(p, count, width)
        self._positions: Dict[int, List[int]] = defaultdict(list)
        for offset, key in enumerate(self.keys):
            self._positions[key].append(offset)

    def coincident_lags(self, source: int, target: int, max_lag: int) -> List[int]:
        """Lags k in [1, max_lag] with the window of T^(source+k) equal to that of T^target."""
        lags = []
        for offset in self._positions[self.keys[target]]:
            k = offset - source
            if 1 <= k <= max_lag:
                lags.append(k)
        return lags

    def window_digits(self, offset: int, limit: int = 64) -> str:
        digits = format(self.keys[offset], f"0{self.width}b")
        return digits[:limit]


def digit_matrix(seeds: Sequence[int], count: int) -> np.ndarray:
    """Digits b_1 .. b_count of many streams at once, one row per seed.

    Rows agree digit for digit with ``make_point(seed).bits(count)``.
    """
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}", count=count)
    blocks = -(-count // BLOCK_BITS)
    bits = _unpack(_block_digest(validate_seed(seed), block) for seed in seeds for block in range(blocks))
    return bits.reshape(len(seeds), blocks * BLOCK_BITS)[:, :count]
