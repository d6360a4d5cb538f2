import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings
from hypothesis import strategies as st

from src.errors import ConfigurationError, DomainError, LadderRangeError
from src.models import IndexLadder, ProcessSpec
from src.oscillate import (
    LagSet,
    ab_decomposition,
    brute_force_sums,
    default_ladder,
    dump_ladder,
    exact_sum,
    lag_in_I,
    ladder_violations,
    load_ladder,
    oscillating_kernel,
    oscillation_report,
    simulate_check,
    stated_prime_bound,
)
from src.processes import generate
from src.ustat import u_naive, u_series

THREE_LEVELS = LagSet(default_ladder(3))


def test_default_ladder_values():
    ladder = default_ladder(3)
    assert ladder.N == [2, 8, 64]
    assert ladder.Nprime == [1, 4, 16, 192]
    single = default_ladder(1)
    assert single.N == [2]
    assert single.Nprime == [1, 4]


@pytest.mark.parametrize("levels", range(1, 17))
def test_default_ladder_satisfies_invariants(levels):
    assert ladder_violations(default_ladder(levels)) == []


def test_ladder_serializes_as_decimal_strings(tmp_path):
    path = tmp_path / "ladder.json"
    dump_ladder(default_ladder(12), path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert all(isinstance(value, str) for value in payload["N"] + payload["Nprime"])
    assert load_ladder(path) == default_ladder(12)


def test_unreadable_ladder_files(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_ladder(broken)
    with pytest.raises(ConfigurationError):
        load_ladder(tmp_path / "missing.json")


def test_violations_name_the_failing_level():
    ladder = IndexLadder(N=[2, 3, 64], Nprime=[1, 4, 16, 192])
    violations = ladder_violations(ladder)
    assert "N'_ℓ < N_ℓ+1 fails at ℓ=1" in violations
    assert "N_ℓ < N'_ℓ fails at ℓ=2" not in violations
    flat = IndexLadder(N=[2, 8, 64], Nprime=[1, 4, 16, 100])
    assert "N'_ℓ ≥ ℓ·N_ℓ fails at ℓ=3" in ladder_violations(flat)
    shifted = IndexLadder(N=[2, 8], Nprime=[2, 4, 16])
    assert any(message.startswith("N'_0 = 1 fails") for message in ladder_violations(shifted))
    with pytest.raises(ConfigurationError):
        LagSet(ladder)


def test_lag_membership(small_lagset):
    assert lag_in_I(2, small_lagset)
    assert not lag_in_I(1, small_lagset)
    assert lag_in_I(5, small_lagset)
    assert not lag_in_I(4, small_lagset)
    assert lag_in_I(64, small_lagset)
    assert not lag_in_I(65, small_lagset)
    assert not lag_in_I(192, small_lagset)
    with pytest.raises(LadderRangeError):
        lag_in_I(193, small_lagset)
    with pytest.raises(DomainError):
        lag_in_I(0, small_lagset)


def test_array_membership_matches_scalar(lagset):
    lags = list(range(1, 5000))
    assert lagset.contains_array(lags).tolist() == [lagset.contains(k) for k in lags]
    assert lagset.lags_upto(10) == [2, 5, 6, 7, 8]


def test_array_membership_rejects_lags_beyond_int64_range(lagset):
    assert lagset.horizon > 2**62
    assert lagset.contains_array(np.array([2**62 - 1], dtype=np.int64)).tolist() == [lagset.contains(2**62 - 1)]
    with pytest.raises(LadderRangeError):
        lagset.contains_array(np.array([3, 2**62], dtype=np.int64))


def test_exact_sums_by_hand(small_lagset):
    assert exact_sum(2, small_lagset).S == 0
    six = exact_sum(6, small_lagset)
    assert six.S == 5
    assert six.u_norm == Fraction(1, 3)
    assert six.paper_norm == Fraction(1, 6)
    assert exact_sum(9, small_lagset).S == 17


def test_exact_sum_range(small_lagset):
    assert exact_sum(193, small_lagset).n == 193
    with pytest.raises(LadderRangeError):
        exact_sum(194, small_lagset)
    with pytest.raises(DomainError):
        exact_sum(1, small_lagset)


def test_closed_form_matches_pair_enumeration(lagset):
    n_max = 2000
    assert brute_force_sums(n_max, lagset) == [exact_sum(n, lagset).S for n in range(2, n_max + 1)]


@hypothesis_settings(max_examples=60, deadline=None)
@given(n=st.integers(min_value=2, max_value=193))
def test_closed_form_matches_lag_count(n):
    direct = sum((n - k) for k in range(1, n) if THREE_LEVELS.contains(k))
    assert exact_sum(n, THREE_LEVELS).S == direct


def test_decomposition_at_three_levels(small_lagset):
    result = ab_decomposition(3, small_lagset)
    assert result.A == Fraction(292, 4032)
    assert result.B == Fraction(1128, 4032)
    assert result.total == exact_sum(64, small_lagset).paper_norm
    assert result.A <= result.A_bound
    assert result.A_from_first <= result.A_from_first_bound
    assert result.B == result.B_triangular
    with pytest.raises(LadderRangeError):
        ab_decomposition(2, small_lagset)


def test_decomposition_trend(lagset):
    results = [ab_decomposition(level, lagset) for level in range(3, 13)]
    for result in results:
        assert result.A <= result.A_bound
        assert result.A + result.B == result.total
    assert results[-1].A < Fraction(1, 100)
    assert results[-1].B > Fraction(49, 100)
    assert all(later.B > earlier.B for earlier, later in zip(results, results[1:]))


def test_oscillation_report_separates_the_subsequences(lagset):
    rows = oscillation_report(lagset)
    assert len(rows) == 24
    at_n = {row.level: row for row in rows if row.which == "N"}
    at_nprime = {row.level: row for row in rows if row.which == "N'"}
    for row in at_nprime.values():
        assert row.paper_norm <= row.bound
    for level in range(8, 13):
        assert at_n[level].paper_norm > Fraction(45, 100)
        assert at_n[level].paper_norm - at_nprime[level].paper_norm > Fraction(3, 10)
    assert at_nprime[12].paper_norm < Fraction(1, 10)


def test_window_count_bound_is_too_small(small_lagset):
    # only counting I_1 .. I_{l-2} misses the window I_{l-1} below N'_l
    nprime_row = [row for row in oscillation_report(small_lagset) if row.which == "N'"][-1]
    assert nprime_row.paper_norm > stated_prime_bound(3, small_lagset)
    assert nprime_row.paper_norm <= nprime_row.bound


def test_orbit_simulation_matches_lag_identity(small_lagset):
    for seed in range(10):
        check = simulate_check(64, seed, small_lagset)
        assert check.mismatch_count == 0
        assert check.simulated_sum == check.exact_sum
        assert check.u_simulated == check.u_exact


def test_orbit_simulation_of_a_single_pair(small_lagset):
    check = simulate_check(2, 0, small_lagset)
    assert check.pairs == 1
    assert check.exact_sum == 0
    assert check.simulated_sum == 0
    assert check.mismatch_count == 0
    assert check.u_simulated == 0
    assert check.passed


def test_short_windows_produce_false_coincidences(small_lagset):
    check = simulate_check(64, 3, small_lagset, guard_digits=1)
    assert check.mismatch_count > 0
    assert len(check.mismatches) <= 20
    assert all(mismatch.simulated > mismatch.expected for mismatch in check.mismatches)


def test_oscillating_kernel_through_the_engine(small_lagset):
    path = generate(ProcessSpec(kind="doubling-map"), 64, seed=7)
    kernel = oscillating_kernel(small_lagset, max_lag=64)
    series = u_series(path, kernel, [2, 9, 64])
    assert series.u == [float(exact_sum(n, small_lagset).u_norm) for n in (2, 9, 64)]
    assert series.centered == [0.0, 0.0, 0.0]
    assert u_naive(path, kernel, 12) == float(exact_sum(12, small_lagset).u_norm)
