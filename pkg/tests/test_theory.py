import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentuap import theory


def test_identity_decoder_has_unit_constant():
    est = theory.estimate_lipschitz(theory.identity_decoder, theory.gaussian_sampler(4, 8), 500, tau=0.5, seed=1)
    assert abs(est.a_hat - 1.0) <= 1e-9
    assert est.n_pairs == 500


def test_scaling_decoder_constant():
    est = theory.estimate_lipschitz(theory.scaling_decoder(2.0), theory.gaussian_sampler(4, 8), 500, tau=0.5, seed=2)
    assert abs(est.a_hat - 2.0) <= 1e-9


def test_running_maximum_never_decreases():
    dec = lambda z: np.tanh(z.reshape(len(z), -1) * 1.5)
    est = theory.estimate_lipschitz(dec, theory.gaussian_sampler(2, 4), 2000, tau=0.3, seed=0, batch=100)
    assert np.all(np.diff(est.history) >= 0)
    small = theory.estimate_lipschitz(dec, theory.gaussian_sampler(2, 4), 1000, tau=0.3, seed=0, batch=100)
    assert est.a_hat >= small.a_hat
    assert est.history[: len(small.history)] == small.history


def test_estimate_needs_enough_pairs():
    with pytest.raises(ValueError):
        theory.estimate_lipschitz(theory.identity_decoder, theory.gaussian_sampler(1, 1), 99)


def test_bound_formula_and_monotonicity():
    b = theory.theoretical_bound(1.0, 0.5, [0.1, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(b, [0.0, 0.0, 0.5, 0.875])


@given(st.floats(0.01, 10), st.floats(0.01, 2), st.lists(st.floats(1e-3, 100), min_size=2, max_size=20))
@settings(max_examples=100, deadline=None)
def test_bound_monotone_in_r(a, tau, rs):
    rs = sorted(rs)
    b = theory.theoretical_bound(a, tau, rs)
    assert np.all(np.diff(b) >= -1e-15)
    assert np.all((b >= 0) & (b <= 1))


def test_identity_empirical_probability_is_one_above_tau():
    rep = theory.verify_bound(theory.identity_decoder, 0.5, 1.0, [0.51, 1.0, 3.0], 1000, 0, theory.gaussian_sampler(3, 5))
    assert rep.empirical_prob == [1.0, 1.0, 1.0]
    assert rep.violations == []


def test_vacuous_regime_and_violation_detection():
    # r small enough that the bound is 0: nothing to violate
    rep = theory.verify_bound(theory.identity_decoder, 0.5, 1.0, [0.05], 1000, 0, theory.gaussian_sampler(3, 5))
    assert rep.theoretical_bound == [0.0] and rep.violations == []
    # understating a_hat makes the bound claim too much and must be flagged
    dec = theory.scaling_decoder(4.0)
    rep = theory.verify_bound(dec, 0.5, 0.1, [0.5], 2000, 0, theory.gaussian_sampler(3, 5))
    assert rep.violations == [0.5]


def test_report_csv(tmp_path):
    rep = theory.verify_bound(theory.identity_decoder, 0.5, 1.0, theory.default_r_grid(1.0, 0.5), 1000, 0, theory.gaussian_sampler(2, 2))
    lines = rep.write_csv(tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "r,empirical,theoretical,margin" and len(lines) == 6


def test_wilson_upper():
    assert theory.wilson_upper(1.0, 100) == 1.0
    assert 0.5 < theory.wilson_upper(0.5, 1000) < 0.54
