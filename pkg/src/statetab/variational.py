"""Toy-scale variational state encoder with binary latents.

An encoder maps an observation window to ``d`` Bernoulli logits. Training
samples binary Concrete relaxations of the posterior, decodes the current
observation under a unit-variance Gaussian, and scores the sampled state
under a per-action transition network (or the learned initial-state logits
at episode starts). The free energy is ``R + T - H`` averaged over the
minibatch; gradients are exact reverse-mode for fixed logistic noise.

All networks are small dense ReLU stacks written directly in numpy.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

Params = Dict[str, np.ndarray]


@dataclass
class VariationalConfig:
    d: int = 8
    k: int = 0
    obs_dim: int = 2
    n_actions: int = 4
    lambda_post: float = 2.0 / 3.0
    lambda_prior: float = 0.5
    batch_size: int = 128
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: Tuple[int, ...] = (16, 16)
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 1 <= self.d <= 64:
            raise ValueError(f"d must be in [1, 64], got {self.d}")
        for name in ("lambda_post", "lambda_prior"):
            lam = getattr(self, name)
            if not 0.0 < lam <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {lam}")
        if self.k < 0:
            raise ValueError("k must be non-negative")

    @property
    def n_in(self) -> int:
        return (self.k + 1) * self.obs_dim


class FreeEnergyBreakdown(NamedTuple):
    reconstruction: float
    transition: float
    entropy: float

    @property
    def total(self) -> float:
        return self.reconstruction + self.transition - self.entropy


class NonFiniteError(FloatingPointError):
    pass


class Minibatch(NamedTuple):
    """Windows for one minibatch of time indices.

    ``hist`` holds the flattened window ending at ``t``, ``prev_hist`` the
    window ending at ``t - 1`` (unused where ``first`` is set), ``obs`` the
    frame at ``t`` and ``actions`` the action that led into ``t``.
    """

    hist: np.ndarray
    prev_hist: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    first: np.ndarray


class ConcreteSample(NamedTuple):
    values: np.ndarray
    noise: np.ndarray


# ---------------------------------------------------------------- primitives

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0.0, x)


def logistic_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(float).tiny, 1.0, size=shape)
    return np.log(u) - np.log1p(-u)


def concrete_sample(logits, lam: float, rng: Optional[np.random.Generator] = None,
                    noise: Optional[np.ndarray] = None) -> ConcreteSample:
    """Binary Concrete relaxation ``sigmoid((x + L) / lam)`` with logistic ``L``."""
    if lam <= 0:
        raise ValueError("temperature must be positive")
    logits = np.asarray(logits, dtype=float)
    if noise is None:
        noise = logistic_noise(rng or np.random.default_rng(), logits.shape)
    return ConcreteSample(sigmoid((logits + noise) / lam), noise)


def heaviside_bits(logits) -> np.ndarray:
    """``H(x)`` with ``H(0) = 0``."""
    return (np.asarray(logits) > 0).astype(np.uint8)


def pack_bits(bits) -> np.ndarray:
    """Pack rows of bits into uint64 codes; column ``i`` becomes bit ``i``."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint64))
    weights = np.uint64(1) << np.arange(bits.shape[1], dtype=np.uint64)
    return (bits * weights).sum(axis=1, dtype=np.uint64)


def bernoulli_mode(logits) -> int:
    """Most probable binary state of a factorised Bernoulli, as an int code."""
    return int(pack_bits(heaviside_bits(np.ravel(logits)))[0])


def bernoulli_entropy(logits):
    """Per-unit entropy of ``Bernoulli(sigmoid(x))`` in nats."""
    return softplus(logits) - logits * sigmoid(logits)


def concrete_logit_logpdf(z, alpha, lam: float):
    """Log-density of the logit ``z`` of a binary Concrete(alpha, lam) variable."""
    u = alpha - lam * z
    return math.log(lam) + u - 2.0 * softplus(u)


# ---------------------------------------------------------------- dense nets

def init_mlp(rng: np.random.Generator, sizes: Sequence[int], prefix: str, params: Params) -> None:
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / math.sqrt(n_in)
        params[f"{prefix}.W{i}"] = rng.uniform(-bound, bound, size=(n_in, n_out))
        params[f"{prefix}.b{i}"] = rng.uniform(-bound, bound, size=n_out)


def mlp_forward(params: Params, prefix: str, n_layers: int, x: np.ndarray):
    """Returns output and the per-layer inputs needed for the backward pass."""
    cache = []
    h = x
    for i in range(n_layers):
        cache.append(h)
        h = h @ params[f"{prefix}.W{i}"] + params[f"{prefix}.b{i}"]
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h, cache


def mlp_backward(params: Params, prefix: str, n_layers: int, cache, grad_out: np.ndarray,
                 grads: Params) -> np.ndarray:
    g = grad_out
    for i in reversed(range(n_layers)):
        h_in = cache[i]
        grads[f"{prefix}.W{i}"] += h_in.T @ g
        grads[f"{prefix}.b{i}"] += g.sum(axis=0)
        g = g @ params[f"{prefix}.W{i}"].T
        if i > 0:
            g = g * (h_in > 0)
    return g


# ---------------------------------------------------------------- the model

def init_params(config: VariationalConfig, rng: Optional[np.random.Generator] = None) -> Params:
    rng = rng or np.random.default_rng(config.seed)
    params: Params = {}
    hid = list(config.hidden)
    init_mlp(rng, [config.n_in] + hid + [config.d], "enc", params)
    init_mlp(rng, [config.d] + hid + [config.obs_dim], "dec", params)
    for a in range(config.n_actions):
        init_mlp(rng, [config.d] + hid + [config.d], f"trans{a}", params)
    params["init.logits"] = np.zeros(config.d)
    return params


def param_group(name: str) -> str:
    head = name.split(".", 1)[0]
    if head.startswith("trans"):
        return "transition"
    return {"enc": "encoder", "dec": "decoder", "init": "initial"}[head]


def draw_noise(config: VariationalConfig, batch: Minibatch, rng: np.random.Generator):
    shape = (len(batch.obs), config.d)
    return logistic_noise(rng, shape), logistic_noise(rng, shape)


def encoder_logits(params: Params, config: VariationalConfig, hist: np.ndarray) -> np.ndarray:
    x, _ = mlp_forward(params, "enc", len(config.hidden) + 1, np.atleast_2d(hist))
    return x


def free_energy_and_grad(params: Params, config: VariationalConfig, batch: Minibatch,
                         noise: Tuple[np.ndarray, np.ndarray], need_grad: bool = True):
    """Mean free-energy terms over the batch and (optionally) their gradient.

    ``noise`` is ``(L_t, L_prev)``, logistic draws for the current and the
    previous window, each of shape ``(B, d)``.
    """
    nl = len(config.hidden) + 1
    lam1, lam2 = config.lambda_post, config.lambda_prior
    B = len(batch.obs)
    noise_t, noise_prev = noise
    grads = {k: np.zeros_like(v) for k, v in params.items()} if need_grad else None

    # current window: posterior sample, reconstruction, entropy
    x_t, enc_cache = mlp_forward(params, "enc", nl, batch.hist)
    z_t = (x_t + noise_t) / lam1
    s_t = sigmoid(z_t)
    mu, dec_cache = mlp_forward(params, "dec", nl, s_t)
    resid = mu - batch.obs
    recon = 0.5 * (resid ** 2).sum(axis=1) + 0.5 * config.obs_dim * LOG_2PI
    ent = bernoulli_entropy(x_t).sum(axis=1)

    # prior logits over the sampled state: init logits at t=0, transition net otherwise
    first = np.asarray(batch.first, dtype=bool)
    rest = np.flatnonzero(~first)
    alpha = np.empty_like(z_t)
    alpha[first] = params["init.logits"]
    trans_caches = []
    if rest.size:
        x_p, prev_cache = mlp_forward(params, "enc", nl, batch.prev_hist[rest])
        z_p = (x_p + noise_prev[rest]) / lam1
        s_p = sigmoid(z_p)
        acts = np.asarray(batch.actions)[rest]
        for a in np.unique(acts):
            sel = np.flatnonzero(acts == a)
            out, cache = mlp_forward(params, f"trans{a}", nl, s_p[sel])
            alpha[rest[sel]] = out
            trans_caches.append((int(a), sel, cache))
    u = alpha - lam2 * z_t
    trans = -(math.log(lam2) + u - 2.0 * softplus(u)).sum(axis=1)

    terms = np.stack([recon, trans, ent])
    if not np.all(np.isfinite(terms)):
        bad = np.argwhere(~np.isfinite(terms))
        raise NonFiniteError(f"non-finite free-energy terms at (term, sample) {bad[:5].tolist()}")
    fe = FreeEnergyBreakdown(*(float(v) for v in terms.mean(axis=1)))
    if not need_grad:
        return fe, None

    inv_b = 1.0 / B
    g_u = (2.0 * sigmoid(u) - 1.0) * inv_b          # d trans / d u
    g_alpha = g_u
    g_zt = -lam2 * g_u
    grads["init.logits"] += g_alpha[first].sum(axis=0)

    g_sp = np.zeros((rest.size, config.d))
    for a, sel, cache in trans_caches:
        g_in = mlp_backward(params, f"trans{a}", nl, cache, g_alpha[rest[sel]], grads)
        g_sp[sel] = g_in
    if rest.size:
        g_zp = g_sp * s_p * (1.0 - s_p)
        mlp_backward(params, "enc", nl, prev_cache, g_zp / lam1, grads)

    g_st = mlp_backward(params, "dec", nl, dec_cache, resid * inv_b, grads)
    g_zt = g_zt + g_st * s_t * (1.0 - s_t)
    q = sigmoid(x_t)
    g_xt = g_zt / lam1 + x_t * q * (1.0 - q) * inv_b   # minus entropy
    mlp_backward(params, "enc", nl, enc_cache, g_xt, grads)
    return fe, grads


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0


def adam_step(params: Params, grads: Params, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Params:
    """In-place Adam update with bias correction; returns ``params``."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"STVP"
_VERSION = 1


def save_params(params: Params, fh: BinaryIO) -> None:
    """Flat little-endian layout.

    ``magic(4) version(u32) n_arrays(u32)`` then per array
    ``name_len(u16) name ndim(u8) dims(u32 * ndim) data(f64, row-major)``.
    """
    fh.write(_MAGIC + struct.pack("<II", _VERSION, len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode()
        fh.write(struct.pack("<H", len(raw)) + raw)
        fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_params(fh: BinaryIO) -> Params:
    head = fh.read(12)
    if len(head) != 12 or head[:4] != _MAGIC:
        raise ValueError("not a parameter checkpoint")
    version, n = struct.unpack("<II", head[4:])
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    params: Params = {}
    for _ in range(n):
        (ln,) = struct.unpack("<H", fh.read(2))
        name = fh.read(ln).decode()
        (ndim,) = struct.unpack("<B", fh.read(1))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()
    return params


# ---------------------------------------------------------------- trainer

class ReassignmentRequest(NamedTuple):
    episode: int
    t: int
    code: int


class VariationalModel:
    """Parameters, optimiser state and the training step."""

    def __init__(self, config: VariationalConfig, params: Optional[Params] = None):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.params = params if params is not None else init_params(config, self.rng)
        self.adam = AdamState()
        self.steps = 0

    def logits(self, hist: np.ndarray) -> np.ndarray:
        return encoder_logits(self.params, self.config, hist)

    def mode_codes(self, hist: np.ndarray) -> np.ndarray:
        return pack_bits(heaviside_bits(self.logits(hist)))

    def free_energy(self, batch: Minibatch, noise=None) -> FreeEnergyBreakdown:
        noise = noise if noise is not None else draw_noise(self.config, batch, self.rng)
        return free_energy_and_grad(self.params, self.config, batch, noise, need_grad=False)[0]

    def grad_free_energy(self, batch: Minibatch, noise=None):
        noise = noise if noise is not None else draw_noise(self.config, batch, self.rng)
        return free_energy_and_grad(self.params, self.config, batch, noise)

    def step(self, grads: Params) -> None:
        c = self.config
        adam_step(self.params, grads, self.adam, c.lr, c.beta1, c.beta2, c.eps)
        self.steps += 1

    def train_step(self, replay) -> Tuple[FreeEnergyBreakdown, List[ReassignmentRequest]]:
        """One minibatch step on ``replay``; returns the batch free energy and relabel requests.

        New modes for the sampled indices ``t - 1`` and ``t`` are computed
        with the pre-step parameters, as the labels the table should carry
        for what the encoder currently believes.
        """
        index = replay.sample_indices(self.rng, self.config.batch_size)
        batch = replay.windows(index, self.config.k)
        requests: List[ReassignmentRequest] = []
        seen = set()
        cand = []
        for (ep, t) in index:
            for i in (t - 1, t):
                if i >= 0 and (ep, i) not in seen:
                    seen.add((ep, i))
                    cand.append((ep, i))
        if cand:
            hist = replay.histories(cand, self.config.k)
            codes = self.mode_codes(hist)
            for (ep, i), code in zip(cand, codes):
                code = int(code)
                if replay.state_at(ep, i) != code:
                    requests.append(ReassignmentRequest(ep, i, code))
        fe, grads = self.grad_free_energy(batch)
        self.step(grads)
        return fe, requests
