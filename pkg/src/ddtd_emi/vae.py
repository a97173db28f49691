"""Beta-VAE over density fields, trained with hand-written backprop.

Architecture: D -> 500 (ReLU) -> 8-dim diagonal-Gaussian latent -> 500
(ReLU) -> D (sigmoid). Loss = mean-squared reconstruction + beta * KL,
optimized with Adam. New fields are generated by decoding latent
coordinates drawn uniformly from [-4, 4].

Parameters live in one flat vector with named views per layer, which keeps
the Adam update a handful of whole-array operations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

HIDDEN = 500
LATENT = 8
CHECKPOINT_MAGIC = b"DDTDVAE1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _layer_layout(d):
    return (
        ("enc_w1", (d, HIDDEN)),
        ("enc_b1", (HIDDEN,)),
        ("enc_wmu", (HIDDEN, LATENT)),
        ("enc_bmu", (LATENT,)),
        ("enc_wlv", (HIDDEN, LATENT)),
        ("enc_blv", (LATENT,)),
        ("dec_w1", (LATENT, HIDDEN)),
        ("dec_b1", (HIDDEN,)),
        ("dec_w2", (HIDDEN, d)),
        ("dec_b2", (d,)),
    )


def param_count(d):
    return sum(int(np.prod(shape)) for _, shape in _layer_layout(d))


class VaeParams:
    """Named views over one flat parameter (or gradient) vector."""

    def __init__(self, d, flat):
        flat = np.asarray(flat)
        if flat.ndim != 1 or flat.size != param_count(d):
            raise ValueError("flat parameter vector has the wrong size")
        self.d = int(d)
        self.flat = flat
        offset = 0
        for name, shape in _layer_layout(d):
            size = int(np.prod(shape))
            setattr(self, name, flat[offset:offset + size].reshape(shape))
            offset += size

    @property
    def dtype(self):
        return self.flat.dtype

    @classmethod
    def zeros(cls, d, dtype=np.float64):
        return cls(d, np.zeros(param_count(d), dtype=dtype))

    def copy(self):
        return VaeParams(self.d, self.flat.copy())

    def astype(self, dtype):
        return VaeParams(self.d, self.flat.astype(dtype))


@dataclass
class TrainConfig:
    epochs: int = 400
    learning_rate: float = 1e-4
    batch_size: int = 20
    beta: float = 0.5
    training_set_size: int = 400

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.training_set_size) < 1:
            raise ValueError("epochs, batch_size, training_set_size must be >= 1")
        if self.learning_rate <= 0 or self.beta <= 0:
            raise ValueError("learning_rate and beta must be positive")


@dataclass
class TrainReport:
    """Per-epoch means of the minibatch losses."""

    loss: np.ndarray
    recon: np.ndarray
    kl: np.ndarray


def init_params(d, rng, dtype=np.float64) -> VaeParams:
    """Glorot-uniform weights, zero biases."""
    if d < 1:
        raise ValueError("d must be >= 1")
    params = VaeParams.zeros(d, dtype=dtype)
    for name, shape in _layer_layout(d):
        if len(shape) != 2:
            continue
        fan_in, fan_out = shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        getattr(params, name)[...] = rng.uniform(-bound, bound, shape)
    return params


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def encode(params: VaeParams, x):
    """Latent mean and log-variance for one sample or a batch."""
    x = np.asarray(x, dtype=params.dtype)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != params.d:
        raise ValueError(f"input length {xb.shape[1]} != {params.d}")
    h = _relu(xb @ params.enc_w1 + params.enc_b1)
    mu = h @ params.enc_wmu + params.enc_bmu
    lv = h @ params.enc_wlv + params.enc_blv
    if single:
        return mu[0], lv[0]
    return mu, lv


def decode(params: VaeParams, z):
    """Density vector(s) in (0, 1) for latent coordinates."""
    z = np.asarray(z, dtype=params.dtype)
    single = z.ndim == 1
    zb = np.atleast_2d(z)
    if zb.shape[1] != LATENT:
        raise ValueError(f"latent length {zb.shape[1]} != {LATENT}")
    h = _relu(zb @ params.dec_w1 + params.dec_b1)
    out = _sigmoid(h @ params.dec_w2 + params.dec_b2)
    if single:
        return out[0]
    return out


def draw_noise(rng, n, dtype=np.float64):
    """Standard-normal reparameterization draws, one row per sample."""
    out = rng.standard_normal((n, LATENT))
    return out.astype(dtype, copy=False)


def _require_noise(rng, noise, n, dtype):
    if noise is None:
        if rng is None:
            raise ValueError("pass either rng or noise")
        return draw_noise(rng, n, dtype)
    noise = np.asarray(noise, dtype=dtype)
    if noise.shape != (n, LATENT):
        raise ValueError("noise shape must be (batch, latent)")
    return noise


def _forward(params, xb, eps):
    a1 = xb @ params.enc_w1 + params.enc_b1
    h1 = _relu(a1)
    mu = h1 @ params.enc_wmu + params.enc_bmu
    lv = h1 @ params.enc_wlv + params.enc_blv
    sig = np.exp(0.5 * lv)
    z = mu + sig * eps
    a2 = z @ params.dec_w1 + params.dec_b1
    h2 = _relu(a2)
    xh = _sigmoid(h2 @ params.dec_w2 + params.dec_b2)
    return a1, h1, mu, lv, sig, z, a2, h2, xh


def _losses(xb, mu, lv, xh, beta):
    recon = float(np.mean((xb - xh) ** 2))
    kl = float(np.mean(0.5 * np.sum(mu ** 2 + np.exp(lv) - 1.0 - lv, axis=1)))
    return recon + beta * kl, recon, kl


def loss(params: VaeParams, batch, beta, rng=None, noise=None):
    """(L, L_rcn, L_KL) for one batch under fixed reparameterization draws."""
    xb = np.atleast_2d(np.asarray(batch, dtype=params.dtype))
    if xb.shape[0] < 1:
        raise ValueError("batch must be nonempty")
    eps = _require_noise(rng, noise, xb.shape[0], params.dtype)
    _, _, mu, lv, _, _, _, _, xh = _forward(params, xb, eps)
    return _losses(xb, mu, lv, xh, beta)


def gradients(params: VaeParams, batch, beta, rng=None, noise=None):
    """Analytic gradients of the loss for one batch.

    Returns (grads, (L, L_rcn, L_KL)) where grads has the same view
    structure as params. The same noise must be used as in the paired loss
    call.
    """
    xb = np.atleast_2d(np.asarray(batch, dtype=params.dtype))
    if xb.shape[0] < 1:
        raise ValueError("batch must be nonempty")
    eps = _require_noise(rng, noise, xb.shape[0], params.dtype)
    grads = VaeParams.zeros(params.d, dtype=params.dtype)
    values = _backward(params, xb, eps, beta, grads)
    return grads, values


def _backward(params, xb, eps, beta, grads):
    """Backprop for one batch, writing into the grads views."""
    b, d = xb.shape
    a1, h1, mu, lv, sig, z, a2, h2, xh = _forward(params, xb, eps)

    # reconstruction head
    d_a_out = (2.0 / (b * d)) * (xh - xb) * xh * (1.0 - xh)
    np.matmul(h2.T, d_a_out, out=grads.dec_w2)
    grads.dec_b2[...] = d_a_out.sum(axis=0)
    d_h2 = d_a_out @ params.dec_w2.T
    d_a2 = d_h2 * (a2 > 0)
    np.matmul(z.T, d_a2, out=grads.dec_w1)
    grads.dec_b1[...] = d_a2.sum(axis=0)
    d_z = d_a2 @ params.dec_w1.T

    # reparameterization plus KL terms
    d_mu = d_z + beta * mu / b
    d_lv = 0.5 * d_z * eps * sig + beta * (np.exp(lv) - 1.0) / (2.0 * b)
    np.matmul(h1.T, d_mu, out=grads.enc_wmu)
    grads.enc_bmu[...] = d_mu.sum(axis=0)
    np.matmul(h1.T, d_lv, out=grads.enc_wlv)
    grads.enc_blv[...] = d_lv.sum(axis=0)

    d_h1 = d_mu @ params.enc_wmu.T + d_lv @ params.enc_wlv.T
    d_a1 = d_h1 * (a1 > 0)
    np.matmul(xb.T, d_a1, out=grads.enc_w1)
    grads.enc_b1[...] = d_a1.sum(axis=0)
    return _losses(xb, mu, lv, xh, beta)


ADAM_CHUNK = 1 << 16    # elements per slice; keeps all passes in cache


class _Adam:
    """Adam over the flat parameter vector. The update walks the vector in
    cache-sized chunks so the dozen elementwise passes hit memory once."""

    def __init__(self, flat, lr):
        self.lr = lr
        self.m = np.zeros_like(flat)
        self.v = np.zeros_like(flat)
        self.scratch = np.empty(min(ADAM_CHUNK, flat.size), dtype=flat.dtype)
        self.step_idx = 0

    def step(self, flat, grad):
        self.step_idx += 1
        c1 = 1.0 - ADAM_BETA1 ** self.step_idx
        c2 = 1.0 - ADAM_BETA2 ** self.step_idx
        dt = flat.dtype.type
        # bias corrections folded into the step size:
        # lr * (m/c1) / (sqrt(v/c2) + eps) == lr_t * m / (sqrt(v) + eps_t)
        lr_t = dt(self.lr * np.sqrt(c2) / c1)
        eps_t = dt(ADAM_EPS * np.sqrt(c2))
        b1, b2 = dt(ADAM_BETA1), dt(ADAM_BETA2)
        cb1, cb2 = dt(1.0 - ADAM_BETA1), dt(1.0 - ADAM_BETA2)
        for lo in range(0, flat.size, ADAM_CHUNK):
            hi = min(lo + ADAM_CHUNK, flat.size)
            g = grad[lo:hi]
            m = self.m[lo:hi]
            v = self.v[lo:hi]
            p = flat[lo:hi]
            s = self.scratch[: hi - lo]
            np.multiply(g, g, out=s)
            v *= b2
            s *= cb2
            v += s
            m *= b1
            np.multiply(g, cb1, out=s)
            m += s
            np.sqrt(v, out=s)
            s += eps_t
            np.divide(m, s, out=s)
            s *= lr_t
            p -= s


def train(params: VaeParams, training_set, cfg: TrainConfig, rng):
    """Shuffled minibatch Adam on the loss for cfg.epochs epochs.

    Returns fresh trained parameters and the per-epoch report; the input
    params are not modified. Deterministic given the rng state.
    """
    data = np.ascontiguousarray(training_set, dtype=params.dtype)
    if data.ndim != 2 or data.shape[1] != params.d:
        raise ValueError("training set must be (n, d)")
    n = data.shape[0]
    if n != cfg.training_set_size:
        raise ValueError(
            f"training set size {n} != configured {cfg.training_set_size}")

    params = params.copy()
    grads = VaeParams.zeros(params.d, dtype=params.dtype)
    opt = _Adam(params.flat, cfg.learning_rate)
    ep_loss = np.empty(cfg.epochs)
    ep_recon = np.empty(cfg.epochs)
    ep_kl = np.empty(cfg.epochs)

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(3)
        steps = 0
        for lo in range(0, n, cfg.batch_size):
            batch = data[perm[lo:lo + cfg.batch_size]]
            eps = draw_noise(rng, batch.shape[0], params.dtype)
            total, recon, kl = _backward(params, batch, eps, cfg.beta, grads)
            if not np.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {steps}: "
                    f"L={total} L_rcn={recon} L_KL={kl}")
            if kl < -1e-9:
                raise RuntimeError(
                    f"negative KL at epoch {epoch} step {steps}: {kl}")
            opt.step(params.flat, grads.flat)
            sums += (total, recon, max(kl, 0.0))
            steps += 1
        ep_loss[epoch], ep_recon[epoch], ep_kl[epoch] = sums / steps

    return params, TrainReport(loss=ep_loss, recon=ep_recon, kl=ep_kl)


def sample_latent(params: VaeParams, count, rng):
    """Decode `count` latent draws, each coordinate uniform in [-4, 4]."""
    if count < 1:
        raise ValueError("count must be >= 1")
    z = rng.uniform(-4.0, 4.0, size=(count, LATENT)).astype(
        params.dtype, copy=False)
    return decode(params, z)


def augment(elites, target):
    """Cyclic replication of the elite fields up to the target count."""
    data = np.atleast_2d(np.asarray(elites, dtype=float))
    n = data.shape[0]
    if n < 1:
        raise ValueError("elite set must be nonempty")
    if n > target:
        raise ValueError(f"elite count {n} exceeds target {target}")
    return data[np.arange(target) % n].copy()


def save_params(params: VaeParams, path):
    """Binary checkpoint: magic, D as little-endian uint32, then every
    layer row-major as little-endian float64 in declaration order."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", params.d))
        for name, _ in _layer_layout(params.d):
            arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
            fh.write(arr.tobytes())


def load_params(path) -> VaeParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a VAE checkpoint: {path}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise ValueError("truncated VAE checkpoint header")
        d = struct.unpack("<I", raw)[0]
        body = fh.read()
    expected = param_count(d) * 8
    if len(body) != expected:
        raise ValueError(
            f"VAE checkpoint has {len(body)} payload bytes, expected {expected}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return VaeParams(d, flat)
