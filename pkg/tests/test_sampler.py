from types import SimpleNamespace

import numpy as np
import pytest

import ouve.sampler as sampler_mod
from conftest import complex_normal
from oracles import fine_step_pf_oracle
from ouve.audio import synth_clean
from ouve.errors import DivergenceError
from ouve.metrics import si_sdr
from ouve.sampler import (
    SamplerConfig, closed_form_ode_solution, em_predictor_step, enhance,
    langevin_corrector_step, ode_rhs, pc_solve, rk45_solve,
)
from ouve.score import AnalyticOracle, ScoreModel, ZeroScore
from ouve.sde import SdeParams, diffusion_coeff, mean, std
from ouve.spectral import to_compressed

P = SdeParams()


class ConstantScore(ScoreModel):
    def __init__(self, value):
        super().__init__()
        self.value = value

    def _evaluate(self, x_t, y, t):
        return np.full_like(x_t, self.value)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(kind="ddim")
    with pytest.raises(ValueError):
        SamplerConfig(n_steps=0)
    with pytest.raises(ValueError):
        SamplerConfig(r=0.0)
    with pytest.raises(ValueError):
        SamplerConfig(kind="ode", atol=0.0)
    assert SamplerConfig().expected_nfe() == 60
    assert SamplerConfig(kind="ode").expected_nfe() is None


def test_em_step_no_dynamics(monkeypatch, rng):
    monkeypatch.setattr(sampler_mod, "diffusion_coeff", lambda t, p: 0.0)
    p = SimpleNamespace(gamma=0.0, t_eps=0.03, noise_convention="split-half")
    x = complex_normal(rng, 5)
    out = em_predictor_step(x, complex_normal(rng, 5), 0.5, 0.1, ZeroScore(), p, rng)
    np.testing.assert_array_equal(out, x)


def test_em_step_scalar(monkeypatch, rng):
    monkeypatch.setattr(sampler_mod, "diffusion_coeff", lambda t, p: 0.0)
    out = em_predictor_step(np.array([1.0 + 0j]), np.array([0j]), 0.5, 0.1, ZeroScore(), P, rng)
    assert out[0] == pytest.approx(1.15, abs=1e-15)


def test_em_step_update_rule(rng):
    x, y = complex_normal(rng, 4), complex_normal(rng, 4)
    model = ConstantScore(0.3 - 0.2j)
    t, dt = 0.6, 0.05
    z_rng = np.random.default_rng(99)
    z = np.sqrt(0.5) * (z_rng.standard_normal(4) + 1j * z_rng.standard_normal(4))
    out = em_predictor_step(x, y, t, dt, model, P, np.random.default_rng(99))
    g = diffusion_coeff(t, P)
    expected = x + dt * (-P.gamma * (y - x) + g**2 * (0.3 - 0.2j)) + g * np.sqrt(dt) * z
    np.testing.assert_allclose(out, expected, atol=1e-14)
    assert model.nfe == 1
    with pytest.raises(ValueError):
        em_predictor_step(x, y, 0.05, 0.1, model, P, rng)


def test_em_step_divergence(rng):
    with pytest.raises(DivergenceError):
        em_predictor_step(np.ones(3, complex), np.zeros(3, complex), 0.5, 0.1, ConstantScore(np.inf), P, rng)


def test_corrector_zero_score(rng):
    x = complex_normal(rng, 6)
    model = ZeroScore()
    out = langevin_corrector_step(x, x, 0.5, 0.5, model, rng, P)
    np.testing.assert_array_equal(out, x)
    assert model.nfe == 1


def test_corrector_fixed_point(rng):
    x0, y = complex_normal(rng, 6), complex_normal(rng, 6)
    mu = mean(x0, y, 0.4, P)
    out = langevin_corrector_step(mu, y, 0.4, 0.5, AnalyticOracle(x0, P), rng, P)
    np.testing.assert_array_equal(out, mu)


def test_corrector_contracts_towards_mean():
    rng = np.random.default_rng(5)
    n_bins = 64
    x0 = complex_normal(rng, n_bins, 0.1)
    y = complex_normal(rng, n_bins, 0.1)
    t = 0.5
    mu = mean(x0, y, t, P)
    oracle = AnalyticOracle(x0, P)
    start = mu + 10 * std(t, P) * complex_normal(rng, n_bins, np.sqrt(0.5))
    before = np.linalg.norm(start - mu)
    after = [np.linalg.norm(langevin_corrector_step(start, y, t, 0.5, oracle, rng, P) - mu)
             for _ in range(1000)]
    assert np.mean(after) < before
    assert oracle.nfe == 1000


@pytest.mark.parametrize("steps, nfe", [(0, 30), (1, 60), (2, 90)])
def test_pc_nfe(steps, nfe, rng):
    model = ZeroScore()
    y = complex_normal(rng, (256, 8), 0.1)
    _, stats = pc_solve(y, model, SamplerConfig(n_steps=30, corrector_steps=steps), P)
    assert stats.nfe == nfe == model.nfe
    assert stats.wall_time > 0


def test_pc_reproducible(rng):
    x0, y = complex_normal(rng, 32, 0.1), complex_normal(rng, 32, 0.1)
    cfg = SamplerConfig(n_steps=20, seed=3)
    a, _ = pc_solve(y, AnalyticOracle(x0, P), cfg, P)
    b, _ = pc_solve(y, AnalyticOracle(x0, P), cfg, P)
    np.testing.assert_array_equal(a, b)
    c, _ = pc_solve(y, AnalyticOracle(x0, P), SamplerConfig(n_steps=20, seed=4), P)
    assert not np.array_equal(a, c)


def test_pc_trace(rng):
    y = complex_normal(rng, 8)
    _, stats = pc_solve(y, ZeroScore(), SamplerConfig(n_steps=10, corrector_steps=0), P, trace=True)
    ts = [t for t, _ in stats.step_trace]
    assert len(ts) == 10
    assert ts[-1] == pytest.approx(P.t_eps)
    assert np.all(np.diff(ts) < 0)


def test_pc_divergence_reports_time(rng):
    with pytest.raises(DivergenceError) as info:
        pc_solve(np.zeros(4, complex), ConstantScore(np.nan), SamplerConfig(n_steps=5), P)
    assert info.value.t_last_valid is not None


def test_ode_rhs(rng):
    x, y = complex_normal(rng, 5), complex_normal(rng, 5)
    np.testing.assert_allclose(ode_rhs(x, y, 0.5, ZeroScore(), P), -P.gamma * (y - x))
    x0 = complex_normal(rng, 5)
    mu = mean(x0, y, 0.5, P)
    np.testing.assert_allclose(ode_rhs(mu, y, 0.5, AnalyticOracle(x0, P), P), -P.gamma * (y - mu), atol=1e-14)
    s = 0.7 + 0.1j
    half = ode_rhs(x, y, 0.5, ConstantScore(s), P, half=True)
    full = ode_rhs(x, y, 0.5, ConstantScore(s), P, half=False)
    np.testing.assert_allclose(full - half, 0.5 * diffusion_coeff(0.5, P) ** 2 * s, atol=1e-14)


def test_closed_form_trivial(rng):
    x0, y = complex_normal(rng, 4), complex_normal(rng, 4)
    x_T = complex_normal(rng, 4)
    np.testing.assert_allclose(closed_form_ode_solution(x_T, x0, y, 1.0, P), x_T, atol=1e-15)
    mu_T = mean(x0, y, 1.0, P)
    for t in (0.03, 0.3, 0.8):
        np.testing.assert_allclose(closed_form_ode_solution(mu_T, x0, y, t, P), mean(x0, y, t, P), atol=1e-15)


def test_closed_form_against_fine_step_integration():
    rng = np.random.default_rng(8)
    x0 = complex_normal(rng, 4)
    y = complex_normal(rng, 4)
    x_T = mean(x0, y, 1.0, P) + std(1.0, P) * complex_normal(rng, 4)
    oracle = fine_step_pf_oracle(x_T, x0, y, P)
    np.testing.assert_allclose(closed_form_ode_solution(x_T, x0, y, P.t_eps, P), oracle, atol=1e-6, rtol=0)


def test_closed_form_scalar_midpoint():
    p = SdeParams(t_eps=0.5)
    x_T = mean(np.array(1.0), np.array(0.0), 1.0, p) + std(1.0, p)
    oracle = fine_step_pf_oracle(np.array([x_T]), np.array([1.0]), np.array([0.0]), p)
    expected = mean(np.array(1.0), np.array(0.0), 0.5, p) + std(0.5, p)
    assert oracle[0].real == pytest.approx(expected, abs=1e-6)
    assert closed_form_ode_solution(x_T, 1.0, 0.0, 0.5, p) == pytest.approx(expected, abs=1e-14)


def _ode_scalar(atol, rtol, x_T, x0=1.0 + 0j, y=0j):
    model = AnalyticOracle(np.array([x0]), P)
    cfg = SamplerConfig(kind="ode", atol=atol, rtol=rtol)
    x, stats = rk45_solve(np.array([y]), model, cfg, P, x_T=np.array([x_T]))
    err = abs(x[0] - closed_form_ode_solution(x_T, x0, y, P.t_eps, P))
    return err, stats


def test_rk45_loose_tolerance_nfe():
    x_T = mean(np.array(1.0), np.array(0.0), 1.0, P) + std(1.0, P) * 0.8
    _, stats = _ode_scalar(1e-1, 1e-1, x_T)
    assert 14 / 3 <= stats.nfe <= 14 * 3
    assert stats.nfe == 1 + 6 * (stats.steps_accepted + stats.steps_rejected)


def test_rk45_matches_closed_form():
    x_T = 0.3 + 0.25j
    err, stats = _ode_scalar(1e-6, 1e-3, x_T)
    assert err <= 1e-4
    assert stats.nfe == 1 + 6 * (stats.steps_accepted + stats.steps_rejected)


def test_rk45_tightening_does_not_worsen():
    x_T = -0.2 + 0.4j
    errs = [_ode_scalar(a, r, x_T)[0] for a, r in [(1e-3, 1e-2), (1e-4, 1e-3), (1e-5, 1e-4), (1e-6, 1e-5)]]
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_rk45_deterministic_and_trace(rng):
    x0, y = complex_normal(rng, 16, 0.1), complex_normal(rng, 16, 0.1)
    cfg = SamplerConfig(kind="ode", seed=1)
    a, sa = rk45_solve(y, AnalyticOracle(x0, P), cfg, P, trace=True)
    b, _ = rk45_solve(y, AnalyticOracle(x0, P), cfg, P)
    np.testing.assert_array_equal(a, b)
    assert sa.step_trace[-1][0] == pytest.approx(P.t_eps)


def test_rk45_full_g2_variant_runs(rng):
    x0, y = complex_normal(rng, 8, 0.1), complex_normal(rng, 8, 0.1)
    cfg = SamplerConfig(kind="ode", ode_half_factor=False)
    x, stats = rk45_solve(y, AnalyticOracle(x0, P), cfg, P)
    assert np.all(np.isfinite(x)) and stats.nfe > 1


@pytest.fixture(scope="module")
def clean_wave():
    return synth_clean("speech", 0.75, seed=4)


def test_enhance_oracle_self_consistency(clean_wave):
    y = clean_wave
    model = AnalyticOracle(to_compressed(y), P)
    x, stats = enhance(y, model, SamplerConfig(seed=2), P)
    assert len(x) == len(y)
    assert si_sdr(x, y) >= 20.0
    assert stats.nfe == SamplerConfig().expected_nfe()
    assert stats.rtf == pytest.approx(stats.wall_time / (len(y) / 16000))


def test_enhance_ode_length(clean_wave):
    y = clean_wave[:9000]
    x, stats = enhance(y, AnalyticOracle(to_compressed(y), P), SamplerConfig(kind="ode", atol=1e-3, rtol=1e-3), P)
    assert len(x) == 9000
    assert si_sdr(x, y) >= 20.0
