"""Run configuration: defaults, ``key = value`` files, and seed substreams.

Precedence is command-line flag, then config file, then built-in default.
``OUVE_SEED`` in the environment replaces the default root seed.
"""

import dataclasses
import os
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .sampler import SamplerConfig
from .sde import SdeParams
from .spectral import TransformParams

SEED_ENV = "OUVE_SEED"
STREAMS = ("mix", "train", "solve")


@dataclass(frozen=True)
class RunConfig:
    # process
    gamma: float = 1.5
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    t_horizon: float = 1.0
    t_eps: float = 0.03
    noise_convention: str = "split-half"
    # spectral transform
    alpha: float = 0.5
    beta: float = 0.15
    # sampler
    sampler: str = "pc"
    n_steps: int = 30
    corrector_steps: int = 1
    snr_r: float = 0.5
    atol: float = 1e-6
    rtol: float = 1e-3
    ode_half_factor: bool = True
    # training
    lr: float = 1e-4
    batch_size: int = 16
    crop_frames: int = 8
    seed: int = 0

    def sde(self):
        return SdeParams(self.gamma, self.sigma_min, self.sigma_max, self.t_horizon, self.t_eps,
                         self.noise_convention)

    def transform(self):
        return TransformParams(self.alpha, self.beta)

    def sampler_config(self, **overrides):
        kw = dict(kind=self.sampler, n_steps=self.n_steps, corrector_steps=self.corrector_steps,
                  r=self.snr_r, atol=self.atol, rtol=self.rtol, ode_half_factor=self.ode_half_factor,
                  seed=self.seed)
        kw.update(overrides)
        return SamplerConfig(**kw)

    def validate(self):
        try:
            self.sde()
            self.transform()
            self.sampler_config()
        except ValueError as exc:
            raise DataError(f"invalid configuration: {exc}") from None
        if self.lr < 0 or self.batch_size < 1 or self.crop_frames < 1:
            raise DataError("invalid configuration: need lr >= 0, batch_size >= 1, crop_frames >= 1")
        return self

    def lines(self):
        return [f"{f.name} = {getattr(self, f.name)}" for f in dataclasses.fields(self)]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(name, text):
    kind = type(getattr(RunConfig, name))
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise DataError(f"config key {name!r}: expected a boolean, got {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise DataError(f"config key {name!r}: cannot parse {text!r} as {kind.__name__}") from None


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise DataError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise DataError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, value)
    return values


def default_seed(env=None):
    env = os.environ if env is None else env
    text = env.get(SEED_ENV)
    if text is None:
        return RunConfig.seed
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{SEED_ENV}={text!r} is not an integer") from None


def load_config(path=None, overrides=None, env=None):
    """Merge defaults, the optional config file and explicit overrides."""
    values = {"seed": default_seed(env)}
    if path is not None:
        try:
            with open(path) as fh:
                values.update(parse_config_text(fh.read(), str(path)))
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values).validate()


def substream(seed, name):
    """Independent generator for a named pipeline stage.

    The stream depends only on the root seed and the name, so re-running one
    stage reproduces it without replaying the others.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
