import math
from decimal import Decimal

import numpy as np
import pytest
from scipy import stats

from src.dyadic import approx, make_point, shift, window_keys
from src.errors import ConfigurationError, DiagnosticError, DomainError
from src.models import ProcessSpec
from src.processes import generate, product_integral
from src.ustat import Kernel, build_kernel


@pytest.mark.parametrize("kind", ["doubling-map", "rotation", "iid-uniform", "gaussian-ar1"])
def test_generate_is_reproducible(kind):
    spec = ProcessSpec(kind=kind)
    first = generate(spec, 500, seed=3)
    second = generate(spec, 500, seed=3)
    other = generate(spec, 500, seed=4)
    assert np.array_equal(first.values, second.values)
    assert not np.array_equal(first.values, other.values)
    assert first.n == 500


def test_doubling_values_are_rounded_orbit_points(doubling_path):
    origin = doubling_path.origin
    for i in (1, 2, 17, 64):
        assert doubling_path.values[i - 1] == float(approx(shift(origin, i), 64))
    doubled = np.mod(2.0 * doubling_path.values[:-1], 1.0)
    assert np.allclose(doubled, doubling_path.values[1:], atol=2.0**-50)


def test_doubling_points_are_digit_views(doubling_path):
    point = doubling_path.point(5)
    assert point.bits(32).tolist() == doubling_path.origin.bits(32, start=6).tolist()
    with pytest.raises(DomainError):
        doubling_path.point(65)


def test_rotation_steps_by_alpha():
    spec = ProcessSpec(kind="rotation", alpha=Decimal("0.25"))
    values = generate(spec, 50, seed=1).values
    steps = np.mod(np.diff(values), 1.0)
    assert np.allclose(steps, 0.25, atol=1e-12)


def test_uniform_paths_look_uniform():
    values = generate(ProcessSpec(kind="doubling-map"), 20000, seed=8).values
    assert values.min() >= 0.0 and values.max() < 1.0
    assert abs(values.mean() - 0.5) < 0.01


def test_ar1_has_unit_variance_and_lag_correlation():
    values = generate(ProcessSpec(kind="gaussian-ar1", rho=0.5), 40000, seed=2).values
    assert abs(values.mean()) < 0.05
    assert abs(values.var() - 1.0) < 0.05
    correlation = np.corrcoef(values[:-1], values[1:])[0, 1]
    assert abs(correlation - 0.5) < 0.03


@pytest.mark.parametrize(
    "spec",
    [
        ProcessSpec(kind="gaussian-ar1", rho=1.0),
        ProcessSpec(kind="gaussian-ar1", rho=-1.5),
        ProcessSpec(kind="rotation", alpha=Decimal("1.5")),
    ],
)
def test_non_stationary_parameters_are_rejected(spec):
    with pytest.raises(ConfigurationError):
        generate(spec, 10, seed=0)


def test_length_and_seed_guards():
    with pytest.raises(DomainError):
        generate(ProcessSpec(kind="iid-uniform"), 0, seed=0)
    with pytest.raises(ConfigurationError):
        generate(ProcessSpec(kind="iid-uniform"), 10, seed=-1)


def test_only_doubling_paths_have_points(uniform_path):
    with pytest.raises(ConfigurationError):
        uniform_path.point(1)


def test_product_integral_of_product_kernel():
    result = product_integral(ProcessSpec(kind="iid-uniform"), build_kernel("product"), 20000, seed=5)
    assert abs(result.estimate - 0.25) <= 4 * result.stderr
    assert result.reps == 20000


def test_product_integral_under_normal_marginal():
    spec = ProcessSpec(kind="gaussian-ar1")
    result = product_integral(spec, build_kernel("abs-diff", "normal"), 20000, seed=6)
    assert abs(result.estimate - 2 / math.sqrt(math.pi)) <= 4 * result.stderr


def test_product_integral_reports_non_finite_values():
    kernel = Kernel("blow-up", lambda x, y: np.where(x > 0.5, np.inf, 0.0))
    with pytest.raises(DiagnosticError) as info:
        product_integral(ProcessSpec(kind="iid-uniform"), kernel, 100, seed=1)
    assert "x" in info.value.context


def test_doubling_paths_are_stationary_across_seeds():
    replicates, offset, width = 2000, 100, 4
    spec = ProcessSpec(kind="doubling-map")
    paths = np.array([generate(spec, offset + width, seed=seed).values for seed in range(replicates)])
    critical = 1.95 * math.sqrt(2.0 / replicates)
    for j in range(width):
        result = stats.ks_2samp(paths[:, j], paths[:, offset + j])
        assert result.statistic < critical, f"X_{j + 1} vs X_{offset + j + 1}: {result.statistic:.4f}"


@pytest.mark.parametrize("seed", [0, 1, 17, 2**63 + 5])
def test_sampled_streams_are_never_constant_over_64_digits(seed):
    keys = window_keys(make_point(seed), 4000, 64)
    assert 0 not in keys
    assert 2**64 - 1 not in keys
