"""Shared fixtures for the laboratory tests."""

from typing import Sequence

import numpy as np
import pytest

from src.models import ProcessSpec
from src.oscillate import LagSet, default_ladder
from src.processes import SamplePath, generate


class DigitPoint:
    """A point with prescribed leading digits, followed by zeros."""

    offset = 0

    def __init__(self, digits: Sequence[int]):
        self.digits = list(digits)

    @property
    def origin(self) -> "DigitPoint":
        return self

    def digit(self, m: int) -> int:
        return self.digits[m - 1] if m <= len(self.digits) else 0

    def bits(self, count: int, start: int = 1) -> np.ndarray:
        return np.array([self.digit(m) for m in range(start, start + count)], dtype=np.uint8)


@pytest.fixture
def small_lagset() -> LagSet:
    """Lag set of the three-level default ladder, N = (2, 8, 64)."""
    return LagSet(default_ladder(3))


@pytest.fixture(scope="session")
def lagset() -> LagSet:
    return LagSet(default_ladder(12))


@pytest.fixture
def uniform_path() -> SamplePath:
    return generate(ProcessSpec(kind="iid-uniform"), 200, seed=11)


@pytest.fixture
def doubling_path() -> SamplePath:
    return generate(ProcessSpec(kind="doubling-map"), 64, seed=5)


@pytest.fixture
def hand_path() -> SamplePath:
    return SamplePath(ProcessSpec(kind="iid-uniform"), 0, np.array([0.1, 0.2, 0.4]))
