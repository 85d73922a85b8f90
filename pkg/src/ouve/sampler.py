"""Reverse-time solvers: Euler-Maruyama predictor, annealed Langevin
corrector, the predictor-corrector loop, and the probability-flow ODE
integrated with adaptive Dormand-Prince 4(5).

Solvers march in reverse time ``tau = T - t`` with positive steps, so every
update below is written as ``x <- x + dtau * velocity``.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DivergenceError, StepSizeUnderflowError
from .sde import SdeParams, diffusion_coeff, drift, mean, sample_prior, standard_noise, std
from .spectral import SAMPLE_RATE, TransformParams, compress, decompress, istft, stft, Spectrogram

SAMPLER_KINDS = ("pc", "ode")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "pc"
    n_steps: int = 30
    corrector_steps: int = 1
    r: float = 0.5
    atol: float = 1e-6
    rtol: float = 1e-3
    ode_half_factor: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"sampler kind must be one of {SAMPLER_KINDS}, got {self.kind!r}")
        if self.kind == "pc":
            if self.n_steps < 1 or self.corrector_steps < 0 or not self.r > 0:
                raise ValueError(
                    f"pc sampler needs N >= 1, corrector_steps >= 0, r > 0; got "
                    f"{self.n_steps}, {self.corrector_steps}, {self.r}"
                )
        elif not (self.atol > 0 and self.rtol > 0):
            raise ValueError(f"ode sampler needs atol, rtol > 0; got {self.atol}, {self.rtol}")

    def expected_nfe(self):
        """NFE of a PC solve; ``None`` for the adaptive ODE solver."""
        if self.kind == "pc":
            return self.n_steps * (1 + self.corrector_steps)
        return None

    def describe(self):
        if self.kind == "pc":
            return f"N={self.n_steps} corrector_steps={self.corrector_steps} r={self.r}"
        eq = "half" if self.ode_half_factor else "eq15"
        return f"atol={self.atol:g} rtol={self.rtol:g} {eq}"


@dataclass
class SolveStats:
    nfe: int = 0
    wall_time: float = 0.0
    rtf: float | None = None
    step_trace: list = field(default_factory=list)
    steps_accepted: int = 0
    steps_rejected: int = 0


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"solver state became non-finite near t={t:.6g}", t_last_valid=t)


def em_predictor_step(x, y, t, dt, model, p, rng):
    """One Euler-Maruyama step of the plug-in reverse SDE from ``t`` to ``t - dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t - dt < p.t_eps - 1e-12:
        raise ValueError(f"step would cross t_eps: t={t}, dt={dt}")
    g = diffusion_coeff(t, p)
    s = model.evaluate(x, y, t)
    noise = standard_noise(np.shape(x), p, rng)
    with np.errstate(over="ignore", invalid="ignore"):
        x_new = x + dt * (-drift(x, y, p) + g**2 * s) + g * np.sqrt(dt) * noise
    _check_finite(x_new, t - dt)
    return x_new


def langevin_corrector_step(x, y, t, r, model, rng, p=SdeParams()):
    """Annealed Langevin refinement at fixed ``t``.

    Step size ``eps = 2 (r |z| / |s|)^2`` with norms over all real and
    imaginary components. A zero score leaves ``x`` unchanged.
    """
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    s = model.evaluate(x, y, t)
    z = standard_noise(np.shape(x), p, rng)
    s_norm = np.sqrt(np.sum(np.abs(s) ** 2))
    if s_norm == 0:
        return np.array(x, copy=True)
    z_norm = np.sqrt(np.sum(np.abs(z) ** 2))
    with np.errstate(over="ignore", invalid="ignore"):
        eps = 2.0 * (r * z_norm / s_norm) ** 2
        x_new = x + eps * s + np.sqrt(2.0 * eps) * z
    _check_finite(x_new, t)
    return x_new


def pc_solve(y, model, cfg=SamplerConfig(), p=SdeParams(), rng=None, trace=False):
    if cfg.kind != "pc":
        raise ValueError("pc_solve needs a pc sampler config")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    y = np.asarray(y, dtype=np.complex128)
    stats = SolveStats()
    nfe0 = model.nfe
    start = time.perf_counter()
    x = sample_prior(y, p, rng)
    ts = np.linspace(p.t_horizon, p.t_eps, cfg.n_steps + 1)
    for k in range(cfg.n_steps):
        t, t_next = ts[k], ts[k + 1]
        x = em_predictor_step(x, y, t, t - t_next, model, p, rng)
        for _ in range(cfg.corrector_steps):
            x = langevin_corrector_step(x, y, t_next, cfg.r, model, rng, p)
        if trace:
            stats.step_trace.append((float(t_next), float(np.linalg.norm(x))))
        stats.steps_accepted += 1
    stats.wall_time = time.perf_counter() - start
    stats.nfe = model.nfe - nfe0
    return x, stats


def ode_rhs(x, y, t, model, p, half=True):
    """Reverse-time velocity of the probability-flow ODE."""
    g2 = diffusion_coeff(t, p) ** 2
    factor = 0.5 if half else 1.0
    return -drift(x, y, p) + factor * g2 * model.evaluate(x, y, t)


# Dormand-Prince 5(4) tableau; the 5th-order solution is propagated.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_DP_E = _DP_B5 - _DP_B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


def _error_norm(err, x_old, x_new, atol, rtol):
    """Largest ``|err| / (atol + rtol*max|x|)`` over real and imaginary components.

    A step is accepted when every component is within its own tolerance.
    """
    comps = lambda a: np.concatenate([np.ravel(a.real), np.ravel(a.imag)])
    scale = atol + rtol * np.maximum(np.abs(comps(x_old)), np.abs(comps(x_new)))
    return float(np.max(np.abs(comps(err)) / scale))


def dopri45(fun, x0, tau_end, h0, atol, rtol, on_step=None):
    """Integrate ``dx/dtau = fun(tau, x)`` from 0 to ``tau_end`` with FSAL.

    Returns ``(x, accepted, rejected)``. ``fun`` is evaluated once initially
    and six times per attempted step.
    """
    tau, x = 0.0, np.asarray(x0, dtype=np.complex128)
    k1 = fun(tau, x)
    h = min(h0, tau_end)
    accepted = rejected = 0
    min_h = 1e-12 * max(tau_end, 1.0)
    while tau < tau_end:
        if tau_end - tau < 1e-14 * max(tau_end, 1.0):
            break
        h = min(h, tau_end - tau)
        if h < min_h:
            raise StepSizeUnderflowError(f"step size underflow at tau={tau:.6g}", t_reached=tau)
        ks = [k1]
        for i in range(1, 7):
            xi = x + h * sum(a * k for a, k in zip(_DP_A[i], ks) if a != 0.0)
            ks.append(fun(tau + _DP_C[i] * h, xi))
        x_new = x + h * sum(b * k for b, k in zip(_DP_B5, ks) if b != 0.0)
        err = h * sum(e * k for e, k in zip(_DP_E, ks) if e != 0.0)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"probability-flow state became non-finite at tau={tau:.6g}", tau)
        err_norm = _error_norm(err, x, x_new, atol, rtol)
        if err_norm <= 1.0:
            tau += h
            x = x_new
            k1 = ks[6]
            accepted += 1
            if on_step is not None:
                on_step(tau, x)
            factor = MAX_FACTOR if err_norm == 0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err_norm ** -0.2))
        else:
            rejected += 1
            factor = max(MIN_FACTOR, SAFETY * err_norm ** -0.2)
        h *= factor
    return x, accepted, rejected


def rk45_solve(y, model, cfg=SamplerConfig(kind="ode"), p=SdeParams(), rng=None, trace=False, x_T=None):
    """Probability-flow sampling from ``t = T`` down to ``t_eps``.

    ``x_T`` overrides the random prior draw (used to compare against the
    closed-form trajectory).
    """
    if cfg.kind != "ode":
        raise ValueError("rk45_solve needs an ode sampler config")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    y = np.asarray(y, dtype=np.complex128)
    stats = SolveStats()
    nfe0 = model.nfe
    start = time.perf_counter()
    x = sample_prior(y, p, rng) if x_T is None else np.asarray(x_T, dtype=np.complex128)
    span = p.t_horizon - p.t_eps

    def fun(tau, state):
        t = min(max(p.t_horizon - tau, p.t_eps), p.t_horizon)
        return ode_rhs(state, y, t, model, p, cfg.ode_half_factor)

    def record(tau, state):
        stats.step_trace.append((float(p.t_horizon - tau), float(np.linalg.norm(state))))

    try:
        x, stats.steps_accepted, stats.steps_rejected = dopri45(
            fun, x, span, span / 100.0, cfg.atol, cfg.rtol, record if trace else None
        )
    except StepSizeUnderflowError as exc:
        raise StepSizeUnderflowError(str(exc), t_reached=p.t_horizon - exc.t_reached) from None
    except DivergenceError as exc:
        raise DivergenceError(str(exc), t_last_valid=p.t_horizon - exc.t_last_valid) from None
    stats.wall_time = time.perf_counter() - start
    stats.nfe = model.nfe - nfe0
    return x, stats


def closed_form_ode_solution(x_T, x0, y, t, p=SdeParams()):
    """Probability-flow trajectory under the exact kernel score (half factor).

    The deviation from the process mean scales with ``std(t)``, so
    ``x_t = mean(t) + std(t) / std(T) * (x_T - mean(T))``.
    """
    if not p.t_eps - 1e-12 <= t <= p.t_horizon:
        raise DataError(f"t must lie in [t_eps, T], got {t}")
    mu_T = mean(x0, y, p.t_horizon, p)
    return mean(x0, y, t, p) + std(t, p) / std(p.t_horizon, p) * (np.asarray(x_T) - mu_T)


def solve(y, model, cfg, p=SdeParams(), rng=None, trace=False):
    if cfg.kind == "pc":
        return pc_solve(y, model, cfg, p, rng, trace)
    return rk45_solve(y, model, cfg, p, rng, trace)


def enhance(y_wave, model, cfg=SamplerConfig(), p=SdeParams(), tp=TransformParams(), rng=None):
    """Waveform in, waveform out: STFT, compress, reverse solve, and back."""
    y_wave = np.asarray(y_wave, dtype=np.float64)
    Y = compress(stft(y_wave), tp)
    x_hat, stats = solve(Y.bins, model, cfg, p, rng)
    x_wave = istft(decompress(Spectrogram(x_hat, compressed=True), tp), len(y_wave))
    stats.rtf = stats.wall_time / (len(y_wave) / SAMPLE_RATE)
    return x_wave, stats
