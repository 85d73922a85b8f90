"""Score models, the denoising score-matching objective, and weight files.

Every model implements :meth:`ScoreModel.evaluate`, which counts function
evaluations (NFE) so solvers can report their cost. Two real implementations
exist: :class:`AnalyticOracle`, which knows the clean target and returns the
exact kernel score (for validating solvers only), and :class:`TinyScoreNet`,
a small patch-wise MLP with hand-written backpropagation.
"""

import struct
import threading

import numpy as np

from . import kernels
from .errors import DataError, NumericalError, WeightsFormatError
from .sde import SdeParams, _bcast, kernel_score, mean, mean_weight, standard_noise, std

SIGMA_GUARD = 1e-8

WEIGHTS_MAGIC = b"OUVE"
WEIGHTS_VERSION = 1

ACTIVATIONS = {"silu": 0, "identity": 1}


class ScoreModel:
    """Maps ``(x_t, y, t)`` to a score estimate of the same shape."""

    def __init__(self):
        self._nfe = 0
        self._nfe_lock = threading.Lock()

    @property
    def nfe(self):
        return self._nfe

    def reset_nfe(self):
        with self._nfe_lock:
            self._nfe = 0

    def evaluate(self, x_t, y, t):
        with self._nfe_lock:
            self._nfe += 1
        x_t = np.asarray(x_t, dtype=np.complex128)
        out = self._evaluate(x_t, np.asarray(y, dtype=np.complex128), t)
        if out.shape != x_t.shape:
            raise DataError(f"score model returned shape {out.shape} for input {x_t.shape}")
        return out

    def _evaluate(self, x_t, y, t):
        raise NotImplementedError


class ZeroScore(ScoreModel):
    """Always returns zero; useful for NFE dry runs."""

    def _evaluate(self, x_t, y, t):
        return np.zeros_like(x_t)


class AnalyticOracle(ScoreModel):
    """Exact conditional score computed from the hidden clean target ``x0_ref``.

    It sees the answer, so enhancement results obtained with it are a solver
    check, never a fair evaluation.
    """

    def __init__(self, x0_ref, sde=SdeParams()):
        super().__init__()
        self.x0_ref = np.asarray(x0_ref, dtype=np.complex128)
        self.sde = sde

    def _evaluate(self, x_t, y, t):
        x0 = np.broadcast_to(self.x0_ref, x_t.shape)
        y = np.broadcast_to(y, x_t.shape)
        return kernel_score(x_t, x0, y, t, self.sde)


def time_embedding(t, dim=32):
    """Sinusoidal features of process time: ``[sin(w_k t), cos(w_k t)]``.

    Angular frequencies are log-spaced from pi to 32 pi, so the fastest
    feature completes 16 cycles over a unit horizon.
    """
    half = dim // 2
    freqs = np.pi * 2.0 ** (5.0 * np.arange(half) / max(half - 1, 1))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _silu(a):
    sig = 1.0 / (1.0 + np.exp(-a))
    return a * sig, sig


class TinyScoreNet(ScoreModel):
    """Patch-wise MLP applied convolutionally over the T-F grid.

    For each bin, the real and imaginary parts of ``x_t`` and ``y`` over a
    ``patch x patch`` neighbourhood are concatenated with a sinusoidal
    embedding of ``t`` and passed through two hidden layers. The two outputs
    (real and imaginary score at the centre bin) are divided by ``std(t)`` so
    the raw network works on a unit scale.

    Spectral inputs are multiplied by ``1 / sqrt(std(t)**2 + data_std**2)``,
    which keeps their scale near one across the whole process.

    With ``skip`` on, the score also carries the fixed term
    ``-(x_t - y) / (std(t)**2 + w(t)**2 * data_std**2)`` with ``w = exp(-gamma t)``:
    the exact score when ``x0 - y`` is white Gaussian with std ``data_std``.
    Its posterior mean for ``x0`` is ``y`` itself, so it removes the diffusion
    noise but does no enhancement; the network learns the remainder.
    """

    def __init__(self, hidden=(128, 128), patch=5, embed_dim=32, activation="silu",
                 data_std=0.1, skip=True, sde=SdeParams(), rng=None, params=None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if patch % 2 != 1:
            raise ValueError("patch size must be odd")
        self.patch = int(patch)
        self.embed_dim = int(embed_dim)
        self.activation = activation
        # stored in the weights descriptor as an integer count of 1e-6 units
        self.data_std = round(float(data_std) * 1e6) / 1e6
        if not self.data_std > 0:
            raise ValueError("data_std must be positive")
        self.skip = bool(skip)
        self.sde = sde
        self.sizes = (4 * self.patch**2 + self.embed_dim, *map(int, hidden), 2)
        self._shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self._shapes += [(fan_in, fan_out), (fan_out,)]
        n = sum(int(np.prod(s)) for s in self._shapes)
        if params is None:
            rng = np.random.default_rng(0) if rng is None else rng
            params = self._init_params(rng, n)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise DataError(f"expected {n} parameters, got {params.shape}")
        self.params = params.copy()
        self.optimizer = None

    def _init_params(self, rng, n):
        # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike
        chunks = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, fan_in * fan_out))
            chunks.append(rng.uniform(-bound, bound, fan_out))
        flat = np.concatenate(chunks)
        assert flat.shape == (n,)
        return flat

    @property
    def n_params(self):
        return self.params.size

    def layers(self, params=None):
        """``[(W, b), ...]`` as views into the flat parameter vector."""
        params = self.params if params is None else params
        views, offset = [], 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            views.append(params[offset:offset + size].reshape(shape))
            offset += size
        return list(zip(views[::2], views[1::2]))

    def _act(self, a):
        if self.activation == "identity":
            return a, None
        return _silu(a)

    def _act_grad(self, a, cache):
        if self.activation == "identity":
            return np.ones_like(a)
        sig = cache
        return sig * (1.0 + a * (1.0 - sig))

    def _prepare(self, x_t, y, t):
        """Batch the grids to ``(B, F, T)`` and per-item times to ``(B,)``."""
        x_t = np.asarray(x_t, dtype=np.complex128)
        shape = x_t.shape
        if x_t.ndim == 1:
            xb, yb = x_t[None, None, :], np.asarray(y)[None, None, :]
        elif x_t.ndim == 2:
            xb, yb = x_t[None], np.asarray(y)[None]
        elif x_t.ndim == 3:
            xb, yb = x_t, np.asarray(y)
        else:
            raise DataError(f"unsupported input rank {x_t.ndim}")
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (xb.shape[0],)).copy()
        return shape, xb, yb, t_arr

    def _forward(self, xb, yb, t_arr, params=None, keep=False):
        (W1, b1), *rest = self.layers(params)
        n_x = 4 * self.patch**2
        emb = time_embedding(t_arr, self.embed_dim)  # B, M
        c_in = 1.0 / np.sqrt(std(t_arr, self.sde) ** 2 + self.data_std**2)
        outs, caches = [], []
        for i in range(xb.shape[0]):
            planes = c_in[i] * np.stack([xb[i].real, xb[i].imag, yb[i].real, yb[i].imag])
            P = kernels.extract_patches(np.ascontiguousarray(planes), self.patch)
            bias = emb[i] @ W1[n_x:] + b1
            a = P @ W1[:n_x] + bias
            acts = [(a,) + self._act(a)]
            h = acts[-1][1]
            for j, (W, b) in enumerate(rest):
                a = h @ W + b
                if j < len(rest) - 1:
                    acts.append((a,) + self._act(a))
                    h = acts[-1][1]
            outs.append(a)
            if keep:
                caches.append((P, acts))
        return outs, emb, caches

    def _skip_scaled(self, xb, yb, t_arr, sigma):
        """``std(t)`` times the skip score, shape ``(B, F, T)``."""
        if not self.skip:
            return np.zeros(xb.shape, dtype=np.complex128)
        w = mean_weight(t_arr, self.sde)
        k = sigma / (sigma**2 + (w * self.data_std) ** 2)
        return -k[:, None, None] * (xb - yb)

    def _evaluate(self, x_t, y, t):
        shape, xb, yb, t_arr = self._prepare(x_t, y, t)
        sigma = std(t_arr, self.sde)
        if np.any(sigma < SIGMA_GUARD):
            raise DataError(f"std(t) below guard {SIGMA_GUARD}; t too small: {t}")
        outs, _, _ = self._forward(xb, yb, t_arr)
        B, F, T = xb.shape
        score = self._skip_scaled(xb, yb, t_arr, sigma)
        for i, o in enumerate(outs):
            score[i] = (score[i] + (o[:, 0] + 1j * o[:, 1]).reshape(F, T)) / sigma[i]
        return score.reshape(shape)

    def loss_and_grad(self, x_t, y, t, z, params=None):
        """DSM loss for an already-perturbed input and its gradient in theta.

        ``z`` is the standard noise draw that produced ``x_t``; the target
        score is ``-z / std(t)``. Does not touch the NFE counter.
        """
        shape, xb, yb, t_arr = self._prepare(x_t, y, t)
        zb = np.asarray(z, dtype=np.complex128).reshape(xb.shape)
        sigma = std(t_arr, self.sde)
        if np.any(sigma < SIGMA_GUARD):
            raise DataError(f"std(t) below guard {SIGMA_GUARD}")
        params = self.params if params is None else params
        outs, emb, caches = self._forward(xb, yb, t_arr, params, keep=True)
        base = self._skip_scaled(xb, yb, t_arr, sigma) + zb
        layers = self.layers(params)
        grad = np.zeros_like(params)
        glayers = self.layers(grad)
        n_x = 4 * self.patch**2
        n_comp = 2 * zb.size
        total = 0.0
        for i, (o, (P, acts)) in enumerate(zip(outs, caches)):
            bi = base[i].reshape(-1)
            r = np.stack([o[:, 0] + bi.real, o[:, 1] + bi.imag], axis=1) / sigma[i]
            total += float(np.sum(r * r))
            d = 2.0 * r / sigma[i] / n_comp
            # walk back through the output and hidden layers
            for j in range(len(layers) - 1, 0, -1):
                W, _ = layers[j]
                gW, gb = glayers[j]
                h = acts[j - 1][1]
                gW += h.T @ d
                gb += d.sum(axis=0)
                dh = d @ W.T
                a, _, cache = acts[j - 1]
                d = dh * self._act_grad(a, cache)
            W1, _ = layers[0]
            gW1, gb1 = glayers[0]
            gW1[:n_x] += P.T @ d
            dsum = d.sum(axis=0)
            gW1[n_x:] += np.outer(emb[i], dsum)
            gb1 += dsum
        return total / n_comp, grad

    def descriptor(self):
        return [len(self.sizes) - 1, *self.sizes, self.patch, self.embed_dim,
                ACTIVATIONS[self.activation], round(self.data_std * 1e6), int(self.skip)]


def dsm_loss(model, x0, y, t, z, p=SdeParams()):
    """Mean squared error between the model score and ``-z / std(t)``.

    The mean runs over all real components (real and imaginary parts of every
    bin, and every batch item).
    """
    t_arr = np.asarray(t, dtype=np.float64)
    sigma = std(t_arr, p)
    if np.any(sigma < SIGMA_GUARD):
        raise DataError(f"std(t) below guard {SIGMA_GUARD}; t too small: {t}")
    s = _bcast(sigma, np.ndim(x0))
    x_t = mean(x0, y, t_arr, p) + s * z
    r = model.evaluate(x_t, y, t_arr) + np.asarray(z) / s
    return float((np.sum(r.real**2) + np.sum(r.imag**2)) / (2 * r.size))


class Adam:
    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.steps = 0

    def update(self, params, grad, lr):
        self.steps += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.steps)
        v_hat = self.v / (1 - self.beta2**self.steps)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def training_step(net, batch, p, rng, lr=1e-4):
    """One DSM step on ``batch = (x0, y)`` arrays of shape ``(B, F, T)``.

    Draws ``t ~ U[t_eps, T]`` per item, perturbs, and applies an Adam update
    in place. Returns the batch loss before the update.
    """
    x0, y = (np.asarray(a, dtype=np.complex128) for a in batch)
    if x0.ndim == 2:
        x0, y = x0[None], y[None]
    if x0.shape[0] == 0:
        raise DataError("empty batch")
    t = rng.uniform(p.t_eps, p.t_horizon, size=x0.shape[0])
    x_t, z = _perturb_batch(x0, y, t, p, rng)
    loss, grad = net.loss_and_grad(x_t, y, t, z)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericalError(
            f"non-finite loss {loss} at t={t.tolist()}; max |theta|={np.max(np.abs(net.params)):.3g}"
        )
    if net.optimizer is None:
        net.optimizer = Adam(net.n_params)
    net.optimizer.update(net.params, grad, lr)
    return loss


def _perturb_batch(x0, y, t, p, rng):
    z = standard_noise(x0.shape, p, rng)
    return mean(x0, y, t, p) + _bcast(std(t, p), x0.ndim) * z, z


def gradient_check(net, sample, eps=1e-5, indices=None):
    """Largest relative gap between backprop and central differences.

    ``sample = (x0, y, t, z)``. ``indices`` restricts the check to a subset of
    parameters (default: all).
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    x0, y, t, z = sample
    t_arr = np.asarray(t, dtype=np.float64)
    x_t = mean(x0, y, t_arr, net.sde) + _bcast(std(t_arr, net.sde), np.ndim(x0)) * np.asarray(z)
    _, grad = net.loss_and_grad(x_t, y, t_arr, z)
    idx = np.arange(net.n_params) if indices is None else np.asarray(indices)
    worst = 0.0
    for k in idx:
        theta = net.params.copy()
        theta[k] += eps
        up, _ = net.loss_and_grad(x_t, y, t_arr, z, params=theta)
        theta[k] -= 2 * eps
        down, _ = net.loss_and_grad(x_t, y, t_arr, z, params=theta)
        numeric = (up - down) / (2 * eps)
        scale = max(abs(numeric), abs(grad[k]), 1e-8)
        worst = max(worst, abs(numeric - grad[k]) / scale)
    return worst


def save_weights(net, path):
    desc = np.asarray(net.descriptor(), dtype="<u4")
    payload = struct.pack("<I", desc.size) + desc.tobytes() + net.params.astype("<f8").tobytes()
    checksum = kernels.fnv1a64(np.frombuffer(payload, dtype=np.uint8))
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", WEIGHTS_VERSION))
        fh.write(payload)
        fh.write(struct.pack("<Q", checksum))


def load_weights(path, sde=SdeParams()):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise WeightsFormatError(f"{path}: truncated weights file ({len(blob)} bytes)")
    if blob[:4] != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"{path}: bad magic {blob[:4]!r}, expected {WEIGHTS_MAGIC!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(
            f"{path}: weights format version {version} is not supported "
            f"(this build reads version {WEIGHTS_VERSION})"
        )
    (n_desc,) = struct.unpack("<I", blob[8:12])
    desc_end = 12 + 4 * n_desc
    if len(blob) < desc_end + 8 or n_desc < 4:
        raise WeightsFormatError(f"{path}: truncated architecture descriptor")
    desc = np.frombuffer(blob[12:desc_end], dtype="<u4").astype(int).tolist()
    n_layers = desc[0]
    if len(desc) != n_layers + 7:
        raise WeightsFormatError(f"{path}: inconsistent descriptor {desc}")
    sizes = desc[1:n_layers + 2]
    patch, embed_dim, act_id, data_std_micro, skip = desc[n_layers + 2:]
    if skip not in (0, 1):
        raise WeightsFormatError(f"{path}: bad skip flag {skip}")
    activation = {v: k for k, v in ACTIVATIONS.items()}.get(act_id)
    if activation is None:
        raise WeightsFormatError(f"{path}: unknown activation id {act_id}")
    n_params = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    params_end = desc_end + 8 * n_params
    if len(blob) != params_end + 8:
        raise WeightsFormatError(
            f"{path}: expected {params_end + 8} bytes for {n_params} parameters, found {len(blob)}"
        )
    (stored,) = struct.unpack("<Q", blob[params_end:])
    actual = kernels.fnv1a64(np.frombuffer(blob[8:params_end], dtype=np.uint8))
    if stored != actual:
        raise WeightsFormatError(f"{path}: checksum mismatch (stored {stored:#x}, computed {actual:#x})")
    if sizes[0] != 4 * patch**2 + embed_dim or sizes[-1] != 2:
        raise WeightsFormatError(f"{path}: descriptor sizes {sizes} do not match patch/embedding")
    params = np.frombuffer(blob[desc_end:params_end], dtype="<f8").astype(np.float64)
    return TinyScoreNet(hidden=tuple(sizes[1:-1]), patch=patch, embed_dim=embed_dim,
                        activation=activation, data_std=data_std_micro / 1e6, skip=bool(skip),
                        sde=sde, params=params)
