import dataclasses

import numpy as np
import pytest

import spdelab as sl
from spdelab.coefficients import SampleSpec
from spdelab.errors import DomainError, UnknownPresetError


# ---------------------------------------------------------------------------
# presets and pointwise evaluation
# ---------------------------------------------------------------------------

def test_unknown_preset():
    with pytest.raises(UnknownPresetError):
        sl.make_preset("kpz")


def test_burgers_flux_value(burgers):
    assert sl.evaluate(burgers, "g2", 0.0, [0.5], 2.0) == 2.0
    assert sl.evaluate(burgers, "g", 0.0, [0.5], 2.0) == 2.0   # g1 = 0
    assert burgers.nu == 2.0


def test_linear_gaussian_sigma(lin):
    for (t, x, r) in [(0.0, [0.1], -3.0), (0.7, [0.9], 12.5)]:
        assert sl.evaluate(lin, "sigma", t, x, r) == 1.0


def test_reaction_diffusion_odd_at_zero():
    c = sl.make_preset("reaction_diffusion")
    assert sl.evaluate(c, "f", 0.0, [0.5], 0.0) == 0.0


def test_evaluate_index_out_of_range(lin):
    with pytest.raises(DomainError):
        sl.evaluate(lin, "sigma", 0.0, [0.5], 1.0, index=3)
    with pytest.raises(DomainError):
        sl.evaluate(lin, "g", 0.0, [0.5], 1.0, index=1)


def test_evaluate_is_pure(burgers):
    vals = [sl.evaluate(burgers, "sigma", 0.3, [0.25], 1.7) for _ in range(5)]
    assert all(v == vals[0] for v in vals)


# ---------------------------------------------------------------------------
# growth / Lipschitz validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["burgers", "reaction_diffusion", "linear_gaussian"])
def test_presets_validate(name):
    rep = sl.validate_assumptions(sl.make_preset(name))
    assert rep.all_pass, rep.to_dict()


def test_burgers_flux_lipschitz_ratio(burgers):
    # |g(r) - g(s)| = |r + s||r - s| / 2 <= L (1 + |r| + |s|) |r - s| with L = 1/2
    rep = sl.validate_assumptions(burgers)
    check = rep.checks["A5_g_lipschitz"]
    assert check.passed and check.worst_ratio <= 1.0 + 1e-9


def test_quadratic_f_fails_linear_growth():
    c = sl.make_custom(1, 1, nu=1.0, K=1.0, L=1.0,
                       f_poly=[0.0, 0.0, 1.0], sigma_polys=[[1.0]])
    rep = sl.validate_assumptions(c)
    check = rep.checks["A4_f_growth"]
    assert not check.passed
    assert abs(check.witness[2]) == 10.0        # worst ratio at the box edge


def test_sign_sigma_fails_lipschitz(lin):
    def sgn(t, x, r):
        return np.sign(np.asarray(r, dtype=float))

    zero = lambda t, x, r: np.zeros_like(np.asarray(r, dtype=float))
    c = dataclasses.replace(lin, sigma=(sgn,), sigma_prime=(zero,))
    rep = sl.validate_assumptions(c, sample_spec=SampleSpec(r_range=(-1.0, 1.0), n_r=81))
    check = rep.checks["A5_sigma_lipschitz"]
    assert not check.passed
    r, s = check.witness[2], check.witness[3]
    assert abs(r) <= 0.05 and abs(s) <= 0.05 and r * s <= 0   # jump across 0


def test_rd_lipschitz_constant_brute_force():
    # |d/dr r/(1+r^2)| <= 1, maximized at r = 0 (finite differences on a fine grid)
    r = np.linspace(-10, 10, 200001)
    v = r / (1 + r**2)
    deriv = np.abs(np.diff(v) / np.diff(r))
    assert deriv.max() <= 1.0 + 1e-6
    assert abs(r[np.argmax(deriv)]) < 0.01


def test_report_json_roundtrip(tmp_path, burgers):
    rep = sl.validate_assumptions(burgers)
    path = tmp_path / "report.json"
    rep.save_json(path)
    import json

    data = json.loads(path.read_text())
    assert set(data) == set(rep.checks)
    assert all(entry["passed"] for entry in data.values())


# ---------------------------------------------------------------------------
# custom tables and truncation
# ---------------------------------------------------------------------------

def test_custom_polynomial_eval():
    c = sl.make_custom(1, 2, nu=3.0, K=2.0, L=4.0,
                       f_poly=[1.0, -0.5], g2_polys=[[0.0, 0.0, 0.0, 1.0]],
                       sigma_polys=[[1.0], [0.0, 2.0]])
    assert sl.evaluate(c, "f", 0.0, [0.5], 2.0) == 0.0
    assert sl.evaluate(c, "g2", 0.0, [0.5], 2.0) == 8.0
    assert sl.evaluate(c, "sigma", 0.0, [0.5], 3.0, index=1) == 6.0


def test_truncation_matches_inside_and_vanishes_outside(burgers):
    trunc = sl.truncate_coefficients(burgers, 2.0)
    r_in = np.array([-1.5, 0.3, 2.0])
    assert np.array_equal(trunc.g2[0](0.0, r_in), burgers.g2[0](0.0, r_in))
    r_out = np.array([-4.0, 3.0, 10.0])
    assert np.all(trunc.g2[0](0.0, r_out) == 0.0)
    assert np.all(trunc.sigma[0](0.0, np.zeros((1, 1)), r_out) == 0.0)
    # C^1 join: cutoff slope stays bounded through [level, level + 1]
    r_mid = np.linspace(1.9, 3.1, 1201)
    vals = trunc.g2[0](0.0, r_mid)
    assert np.max(np.abs(np.diff(vals))) < 0.02
    assert trunc.truncation_level == 2.0


def test_truncation_rejects_bad_level(burgers):
    with pytest.raises(DomainError):
        sl.truncate_coefficients(burgers, 0.0)


def test_default_rho():
    assert sl.make_preset("burgers").default_rho() == 5.0          # max(4, 2) + 1
    assert sl.make_preset("linear_gaussian").default_rho() == 3.0  # max(2, 2) + 1
    assert sl.make_preset("linear_gaussian", d=2).default_rho() == 4.0
