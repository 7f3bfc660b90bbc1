import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pks_strain import diagnostics as dg
from pks_strain.dynamics import StrainField, gaussian, two_bump
from pks_strain.grid import DensityField, Grid2D, moment
from pks_strain.kernel import build_kernel, convolve, radial_kernel


def record(t, **kw):
    base = dict(t=t, M=1.0, M_plus=0.5, V=1.0, W=0.0, V4=1.0, y_plus=1.0, V_plus=0.1,
                strip_mass=0.0, S=0.0, E=0.0, D=0.0, max_n=1.0, outflow=0.0, sym_err=0.0)
    base.update(kw)
    return dg.DiagnosticsRecord(**base)


# ---------------------------------------------------------------- entropy and energy

@pytest.mark.parametrize("mass,sigma", [(4 * math.pi, 1.0), (1.0, 0.5), (30.0, 2.0)])
def test_gaussian_entropy_closed_form(mass, sigma):
    g = Grid2D(8 * sigma, 256)
    s = dg.entropy(gaussian(g, mass, sigma))
    assert s == pytest.approx(mass * (math.log(mass / (2 * math.pi * sigma**2)) - 1), rel=1e-2)


def test_uniform_entropy():
    g = Grid2D(2.0, 16)
    M = 3.0
    f = DensityField(g, np.full(g.shape, M / 16.0))
    assert dg.entropy(f) == pytest.approx(M * math.log(M / 16.0))


def test_entropy_scaling(rng):
    g = Grid2D(2.0, 16)
    f = DensityField(g, rng.random(g.shape))
    f2 = DensityField(g, 2 * f.values)
    assert dg.entropy(f2) == pytest.approx(2 * dg.entropy(f) + 2 * f.mass * math.log(2))


def test_entropy_ignores_vacuum():
    g = Grid2D(1.0, 4)
    v = np.zeros(g.shape)
    v[1, 1] = 2.0
    assert dg.entropy(DensityField(g, v)) == pytest.approx(g.h**2 * 2 * math.log(2))


def test_free_energy_reduces_to_classical_without_strain():
    g = Grid2D(6.0, 64)
    n = gaussian(g, 5.0, 0.8)
    chemo = convolve(n, build_kernel(2 * g.h, g))
    assert dg.free_energy(n, chemo, StrainField(0.0)) == pytest.approx(dg.classical_free_energy(n, chemo))


def test_strain_term_is_half_a_w():
    g = Grid2D(6.0, 64)
    n = two_bump(g, 5.0, 2.0, 0.5)
    A = 3.0
    e0 = dg.free_energy(n, None, None)
    eA = dg.free_energy(n, None, StrainField(A))
    assert e0 - eA == pytest.approx(0.5 * A * moment(n, "skew"), rel=1e-12)


def test_two_bump_energy_against_direct_double_sum():
    g = Grid2D(4.0, 32)
    n = two_bump(g, 6.0, 2.0, 0.4)
    eps = 2 * g.h
    chemo = convolve(n, build_kernel(eps, g))
    x1, x2 = (a.ravel() for a in g.mesh)
    v = n.values.ravel()
    r = np.hypot(x1[:, None] - x1[None, :], x2[:, None] - x2[None, :])
    inter = g.h**4 * v @ radial_kernel(r, eps) @ v
    expected = dg.entropy(n) - 0.5 * inter
    assert dg.free_energy(n, chemo) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------- dissipation

@pytest.mark.parametrize("sigma", [0.5, 1.0])
def test_gaussian_fisher_information(sigma):
    g = Grid2D(8 * sigma, 256)
    n = gaussian(g, 2.0, sigma)
    assert dg.dissipation(n, None, None) == pytest.approx(2 * 2.0 / sigma**2, rel=2e-2)


def test_uniform_density_has_no_dissipation():
    g = Grid2D(2.0, 16)
    f = DensityField(g, np.ones(g.shape))
    assert dg.dissipation(f, None, None) == 0.0
    assert dg.dissipation(DensityField(g, np.zeros(g.shape)), None) == 0.0


def test_steady_state_has_no_dissipation():
    # n = M exp(c) / Z by fixed-point iteration; then grad log n = grad c
    g = Grid2D(4.0, 64)
    table = build_kernel(2 * g.h, g)
    M = 2.0
    n = gaussian(g, M, 1.0)
    for _ in range(200):
        c = convolve(n, table).c
        w = np.exp(c - c.max())
        new = DensityField(g, M * w / (g.h**2 * w.sum()))
        if np.abs(new.values - n.values).max() < 1e-15:
            break
        n = new
    d = dg.dissipation(n, convolve(n, table))
    # box-edge cells carry exp(c) at the truncation, so compare with the Fisher scale
    assert d < 1e-6 * dg.dissipation(n, None)


# ---------------------------------------------------------------- records and csv

def test_record_csv_round_trip(tmp_path):
    g = Grid2D(6.0, 64)
    n = two_bump(g, 5.0, 2.0, 0.5)
    chemo = convolve(n, build_kernel(2 * g.h, g))
    recs = [dg.make_record(0.0, n, chemo, StrainField(1.0), 0.5),
            dg.make_record(0.1, n, chemo, StrainField(1.0), 0.5, outflow=1e-3)]
    p = tmp_path / "d.csv"
    dg.write_records(p, recs)
    text = p.read_text().splitlines()
    assert text[0] == "t,M,M_plus,V,W,V4,y_plus,V_plus,strip_mass,S,E,D,max_n,outflow,sym_err"
    assert dg.read_records(p) == recs
    assert recs[0].strip_mass <= recs[0].M


def test_make_record_on_empty_upper_half():
    g = Grid2D(2.0, 16)
    v = np.zeros(g.shape)
    v[4, 2] = 1.0
    rec = dg.make_record(0.0, DensityField(g, v), None, None)
    assert rec.M_plus == 0.0 and math.isnan(rec.y_plus) and math.isnan(rec.strip_mass)


def test_report_csv(tmp_path):
    reps = [dg.InequalityReport("x", 1.0, 2.0, 0.0, t=0.0),
            dg.InequalityReport("x", 3.0, 2.0, 0.5, t=1.0)]
    assert reps[0].slack == 1.0 and reps[0].passed
    assert reps[1].slack == -1.0 and not reps[1].passed
    p = tmp_path / "r.csv"
    dg.write_reports(p, reps)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,lhs,rhs,slack,pass"
    assert lines[2].endswith(",0")


def test_report_sense():
    r = dg.InequalityReport("ge", 5.0, 2.0, 0.0, sense=">=")
    assert r.slack == 3.0 and r.passed


# ---------------------------------------------------------------- log-HLS

def test_hls_constant_at_critical_mass():
    assert dg.hls_constant(8 * math.pi) == pytest.approx(-27.13, abs=5e-3)


def test_cell_pair_log_against_monte_carlo():
    rng = np.random.default_rng(3)
    u = rng.random((1_000_000, 4))
    for p, q in [(0, 0), (1, 0), (2, 1)]:
        d = np.log(np.hypot(p + u[:, 0] - u[:, 2], q + u[:, 1] - u[:, 3]))
        assert dg.cell_pair_log(p, q) == pytest.approx(d.mean(), abs=5 * d.std() / 1000)


def test_cell_pair_log_far_field_is_point_value():
    # the covariance of u - v is isotropic and log is harmonic: error is fourth order
    assert dg.cell_pair_log(4, 3) == pytest.approx(math.log(5.0), abs=2e-3)


def test_log_interaction_against_direct_sum():
    g = Grid2D(2.0, 16)
    rng = np.random.default_rng(5)
    n = DensityField(g, rng.random(g.shape))
    x1, x2 = (a.ravel() for a in g.mesh)
    i = np.rint((x1[:, None] - x1[None, :]) / g.h).astype(int)
    j = np.rint((x2[:, None] - x2[None, :]) / g.h).astype(int)
    table = np.vectorize(lambda a, b: math.log(g.h) + dg.cell_pair_log(abs(a), abs(b))
                         if max(abs(a), abs(b)) <= dg.EXACT_PAIR_RANGE
                         else math.log(g.h * math.hypot(a, b)))(i, j)
    v = n.values.ravel()
    assert dg.log_interaction(n) == pytest.approx(g.h**4 * v @ table @ v, rel=1e-12)


def test_hls_rejects_zero_mass():
    g = Grid2D(1.0, 8)
    with pytest.raises(ValueError):
        dg.log_hls_check(DensityField(g, np.zeros(g.shape)))


def test_hls_on_random_gaussian_mixtures():
    rng = np.random.default_rng(11)
    g = Grid2D(6.0, 128)
    for _ in range(20):
        k = rng.integers(1, 4)
        v = np.zeros(g.shape)
        for _ in range(k):
            v += gaussian(g, rng.uniform(0.5, 20.0), rng.uniform(0.3, 1.0),
                          tuple(rng.uniform(-2, 2, 2))).values
        rep = dg.log_hls_check(DensityField(g, v))
        assert rep.passed, rep


def test_hls_slack_along_gaussian_family():
    # for a Gaussian the inequality is strict and the slack is independent of sigma
    g = Grid2D(6.0, 256)
    slacks = [dg.log_hls_check(gaussian(g, 8 * math.pi, s)).slack for s in (0.4, 0.6, 0.8, 1.0)]
    assert min(slacks) >= 0
    assert max(slacks) - min(slacks) < 1e-2 * 8 * math.pi


# ---------------------------------------------------------------- negative entropy

def test_negative_entropy_gaussian():
    g = Grid2D(8.0, 128)
    rep = dg.negative_entropy_bound(gaussian(g, 4 * math.pi, 1.0))
    assert rep.passed and rep.slack > 0


def test_negative_entropy_spread_density():
    g = Grid2D(8.0, 128)
    n = gaussian(g, 1.0, 3.0)
    assert n.max < 1
    rep = dg.negative_entropy_bound(n)
    assert rep.lhs == pytest.approx(abs(dg.entropy(n)))
    assert rep.passed


def test_negative_entropy_dense_density():
    g = Grid2D(1.0, 8)
    rep = dg.negative_entropy_bound(DensityField(g, np.full(g.shape, 2.0)))
    assert rep.lhs == 0.0 and rep.passed


@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_negative_entropy_random(seed):
    g = Grid2D(3.0, 32)
    v = np.random.default_rng(seed).random(g.shape) ** 4
    assert dg.negative_entropy_bound(DensityField(g, v)).passed


# ---------------------------------------------------------------- pointwise pull estimate

def test_c_estimate_for_separated_bumps():
    g = Grid2D(8.0, 128)
    n = two_bump(g, 12 * math.pi, 4.0, 0.5)
    rep = dg.c_estimate_check(n, build_kernel(2 * g.h, g))
    assert rep.passed and rep.lhs <= 1.0


# ---------------------------------------------------------------- virial

def test_virial_requires_uniform_spacing():
    recs = [record(t) for t in (0.0, 0.1, 0.25)]
    with pytest.raises(ValueError, match="uniform"):
        dg.virial_residuals(recs, 0.0)
    with pytest.raises(ValueError):
        dg.virial_residuals(recs[:2], 0.0)


def test_virial_on_exact_linear_law():
    M = 4 * math.pi
    recs = [record(t, M=M, V=1.0 + 8 * math.pi * t) for t in np.arange(6) * 0.1]
    vr = dg.virial_residuals(recs, 0.0)
    np.testing.assert_allclose(vr.v_residual, 0.0, atol=1e-12)
    np.testing.assert_allclose(vr.dW_lower, -M * M / (2 * math.pi))


def test_virial_switches_terms_off():
    M = 2.0
    recs = [record(t, M=M, V=1.0 + 4 * M * t) for t in np.arange(4) * 0.1]
    vr = dg.virial_residuals(recs, 0.0, chemotaxis=False)
    np.testing.assert_allclose(vr.v_residual, 0.0, atol=1e-12)
    vr = dg.virial_residuals(recs, 0.0, chemotaxis=False, diffusion=False)
    np.testing.assert_allclose(vr.dV_predicted, 0.0)


# ---------------------------------------------------------------- splitting monitors

def test_splitting_monitors_on_synthetic_exponential():
    A = 5.0
    t = np.linspace(0, 0.4, 41)
    recs = [record(float(s), M=2.0, M_plus=1.0, y_plus=4.0 * math.exp(A * s),
                   V_plus=0.25 * math.exp(2 * A * s), strip_mass=0.0) for s in t]
    sp = dg.splitting_monitors(recs, delta=0.25, eta=0.1, amplitude=A)
    assert sp.r2 == pytest.approx(1.0 * 16 / 0.5)
    assert sp.rate == pytest.approx(A, rel=1e-10)
    assert sp.rate_passed and sp.strip_passed and sp.vplus_passed
    assert sp.c_fit == pytest.approx(0.0, abs=1e-12)
    assert sp.rate_window[0] >= math.log(2) / A - 1e-12


def test_splitting_rejects_small_r2():
    recs = [record(0.0, y_plus=0.5, V_plus=1.0), record(0.1, y_plus=0.5, V_plus=1.0)]
    with pytest.raises(ValueError, match="R\\^2"):
        dg.splitting_monitors(recs, 0.25, 0.1, 1.0)
    with pytest.raises(ValueError):
        dg.splitting_monitors(recs, 0.25, 0.1, 0.0)


def test_unstrained_growth_rate_is_small():
    t = np.linspace(0, 1, 11)
    assert abs(dg.growth_rate(t, 1.0 + 0.01 * t)) < 0.1
    assert math.isnan(dg.growth_rate([0.0], [1.0]))


def test_strip_bound_and_box_time():
    assert dg.strip_bound(10.0, 0.1, 32.0) == pytest.approx(1.21 * 10 / 64)
    assert dg.box_time(2.0, 32.0, 4.0) == pytest.approx(math.log(4.0) / 2)
    assert dg.box_time(0.0, 32.0, 4.0) == math.inf


# ---------------------------------------------------------------- moment envelopes

def test_second_moment_envelope_solves_its_ode():
    t = np.linspace(0, 1, 2001)
    for A in (0.0, 0.7):
        env = dg.second_moment_envelope(t, 3.0, 2.0, A)
        d = np.gradient(env, t)
        np.testing.assert_allclose(d[1:-1], 4 * 2.0 + 2 * A * env[1:-1], rtol=1e-5)


def test_fourth_moment_envelope_solves_its_ode():
    t = np.linspace(0, 0.5, 4001)
    A, M, V0, V40 = 1.3, 2.0, 3.0, 5.0
    env = dg.fourth_moment_envelope(t, V0, V40, M, A)
    venv = dg.second_moment_envelope(t, V0, M, A)
    d = np.gradient(env, t)
    np.testing.assert_allclose(d[1:-1], 12 * venv[1:-1] + 4 * A * env[1:-1], rtol=1e-5)
    env0 = dg.fourth_moment_envelope(t, V0, V40, M, 0.0)
    assert env0[-1] == pytest.approx(V40 + 12 * (V0 * 0.5 + 2 * M * 0.25))


def test_coarse_envelope_dominates_for_large_amplitude():
    t = np.linspace(0, 1, 11)
    A = 8.0
    assert np.all(dg.coarse_second_moment_envelope(t, 1.0, 2.0, A)
                  >= dg.second_moment_envelope(t, 1.0, 2.0, A))


def test_moment_bounds_on_linear_growth_and_zero_field():
    recs = [record(t, M=2.0, V=1.0 + 8 * t * 0.5, V4=1.0) for t in np.arange(5) * 0.1]
    assert dg.moment_growth_bounds(recs, 0.0).passed
    zero = [record(t, M=0.0, V=0.0, V4=0.0) for t in np.arange(3) * 0.1]
    assert dg.moment_growth_bounds(zero, 0.0).passed
    assert dg.moment_growth_bounds(zero, 5.0).passed
    too_fast = [record(t, M=2.0, V=1.0 + 100 * t) for t in np.arange(5) * 0.1]
    assert not dg.moment_growth_bounds(too_fast, 0.0).passed
