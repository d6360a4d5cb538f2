from fractions import Fraction

import numpy as np
import pytest

from src import ustat
from src.errors import ConfigurationError, DiagnosticError, DomainError
from src.models import ProcessSpec
from src.processes import SamplePath, generate, product_integral
from src.ustat import (
    BUILTIN_KERNELS,
    Kernel,
    analytic_target,
    build_kernel,
    center,
    diagonal_sum,
    u_naive,
    u_series,
    uv_identity_gap,
    uv_identity_tolerance,
    v_plugin,
)


def test_constant_kernel_is_a_fixed_point(uniform_path):
    kernel = build_kernel("constant", params={"c": 2.5})
    series = u_series(uniform_path, kernel, [2, 10, 200])
    assert series.u == [2.5, 2.5, 2.5]
    assert series.centered == [0.0, 0.0, 0.0]
    assert u_naive(uniform_path, kernel, 57) == 2.5


def test_two_observations_give_the_single_pair(hand_path):
    kernel = build_kernel("abs-diff")
    assert u_naive(hand_path, kernel, 2) == abs(0.1 - 0.2)


def test_hand_computed_values(hand_path):
    product = build_kernel("product")
    assert u_naive(hand_path, product, 3) == pytest.approx(0.14 / 3)
    abs_diff = build_kernel("abs-diff")
    assert u_naive(hand_path, abs_diff, 3) == pytest.approx(0.2)
    # V_3 adds the zero diagonal of |x - y| to the same pairs twice
    assert v_plugin(hand_path, abs_diff, 3) == pytest.approx(1.2 / 9)
    assert diagonal_sum(hand_path, product, 3) == pytest.approx(0.01 + 0.04 + 0.16)


@pytest.mark.parametrize("name", ["abs-diff", "product", "centered-product", "indicator-product"])
def test_series_matches_double_loop(uniform_path, name):
    kernel = build_kernel(name)
    grid = list(range(2, 81))
    series = u_series(uniform_path, kernel, grid)
    assert series.u == [u_naive(uniform_path, kernel, n) for n in grid]


@pytest.mark.slow
def test_series_matches_double_loop_on_full_path(uniform_path):
    kernel = build_kernel("abs-diff")
    grid = list(range(2, 201))
    series = u_series(uniform_path, kernel, grid)
    assert series.u == [u_naive(uniform_path, kernel, n) for n in grid]


def test_series_matches_double_loop_on_doubling_streams(doubling_path):
    kernel = build_kernel("product")
    series = u_series(doubling_path, kernel, [2, 16, 64])
    assert series.u == [u_naive(doubling_path, kernel, n) for n in (2, 16, 64)]


def test_cos_kernel_agrees_to_rounding(uniform_path):
    # vectorised and scalar cosine may differ in the last place
    kernel = build_kernel("cos")
    series = u_series(uniform_path, kernel, [10, 100])
    for n, u in zip(series.grid, series.u):
        assert u == pytest.approx(u_naive(uniform_path, kernel, n), abs=1e-12)


def test_length_guards(uniform_path):
    kernel = build_kernel("product")
    with pytest.raises(DomainError):
        u_naive(uniform_path, kernel, 1)
    with pytest.raises(DomainError):
        v_plugin(uniform_path, kernel, 201)
    with pytest.raises(DomainError):
        u_series(uniform_path, kernel, [10, 300])
    with pytest.raises(ConfigurationError):
        u_series(uniform_path, kernel, [10, 5])


def test_u_v_identity_holds_in_floating_point(uniform_path):
    series = u_series(uniform_path, build_kernel("abs-diff"), [2, 50, 200])
    for gap, tolerance in zip(uv_identity_gap(series), uv_identity_tolerance(series)):
        assert abs(gap) <= tolerance


def test_u_v_identity_holds_exactly(hand_path):
    kernel = build_kernel("product")
    n = 3
    u = u_naive(hand_path, kernel, n, exact=True)
    v = v_plugin(hand_path, kernel, n, exact=True)
    d = diagonal_sum(hand_path, kernel, n, exact=True)
    assert isinstance(u, Fraction)
    assert n * (n - 1) * u == n * n * v - d


def test_center_requires_a_lag_mean(uniform_path):
    series = u_series(uniform_path, build_kernel("product"), [5, 10])
    assert series.centered is None
    with pytest.raises(ConfigurationError):
        center(series, None)


def test_center_subtracts_the_lag_mean(uniform_path):
    series = u_series(uniform_path, build_kernel("product"), [5, 10])
    centered = center(series, lambda k: np.full(np.shape(k), 0.25))
    assert centered.centered == pytest.approx([u - 0.25 for u in series.u])
    # a lag-dependent mean weights lag k by n - k
    linear = center(series, lambda k: k.astype(float))
    expected = sum((5 - k) * k for k in range(1, 5)) / 10
    assert linear.centered[0] == pytest.approx(series.u[0] - expected)


@pytest.mark.parametrize("name", BUILTIN_KERNELS)
def test_builtin_kernels_are_symmetric_and_bounded(name):
    rng = np.random.default_rng(4)
    x, y = rng.random(1000), rng.random(1000)
    kernel = build_kernel(name)
    assert np.array_equal(kernel.evaluate(x, y), kernel.evaluate(y, x))
    assert np.all(np.abs(kernel.evaluate(x, y)) <= kernel.bound)


def test_unbounded_under_normal_marginal():
    assert build_kernel("product", "normal").bound is None
    assert build_kernel("cos", "normal").bound == 1.0


@pytest.mark.parametrize("name", ["product", "abs-diff", "centered-product", "indicator-product", "cos"])
def test_analytic_targets_match_monte_carlo(name):
    kernel = build_kernel(name)
    estimate = product_integral(ProcessSpec(kind="iid-uniform"), kernel, 40000, seed=9)
    assert abs(estimate.estimate - analytic_target(name, "uniform")) <= 4 * estimate.stderr + 1e-12


def test_unknown_kernel_and_parameters():
    with pytest.raises(ConfigurationError):
        build_kernel("gaussian")
    with pytest.raises(ConfigurationError):
        build_kernel("product", params={"c": 1.0})
    assert analytic_target("gaussian", "uniform") is None


def test_non_finite_pairs_are_located(hand_path):
    kernel = Kernel("pole", lambda x, y: np.where(np.maximum(x, y) > 0.3, np.inf, 0.0))
    with pytest.raises(DiagnosticError) as info:
        u_naive(hand_path, kernel, 3)
    assert info.value.context == {"i": 1, "j": 3}
    with pytest.raises(DiagnosticError) as info:
        u_series(hand_path, kernel, [3])
    assert info.value.context == {"i": 1, "j": 3}


def test_compensated_mode_matches_on_small_paths(monkeypatch):
    path = generate(ProcessSpec(kind="iid-uniform"), 300, seed=2)
    kernel = build_kernel("abs-diff")
    plain = u_series(path, kernel, [300]).u[0]
    monkeypatch.setattr(ustat.settings, "compensated_threshold", 10)
    compensated = u_series(path, kernel, [300]).u[0]
    assert compensated == u_naive(path, kernel, 300)
    assert compensated == pytest.approx(plain, rel=1e-13)


def test_path_of_constant_values_gives_zero_abs_diff():
    path = SamplePath(ProcessSpec(kind="iid-uniform"), 0, np.full(20, 0.3))
    series = u_series(path, build_kernel("abs-diff"), [2, 20])
    assert series.u == [0.0, 0.0]
