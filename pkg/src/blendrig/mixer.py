"""MLP-Mixer regressor from 2D landmarks to blendshape coefficients and a 6D rotation.

Pure numpy with hand-written reverse-mode gradients. Layout of one forward
pass for a batch of B landmark sets::

    (B, T_in, 2) --embed--> (B, T_in, C) --token projection--> (B, T, C)
    --num_blocks x [pre-norm token MLP + residual, pre-norm channel MLP + residual]-->
    flatten (B, T*C) --> sigmoid(coefficient head) (B, 52), rotation head (B, 6)

The two heads span the whole latent, which is what a convolution with a
kernel covering the full T x C extent computes.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mesh import NUM_SHAPES, DegenerateRotationError, rot6d_backward, rot6d_to_rotation

LN_EPS = 1e-5
GELU_K = math.sqrt(2.0 / math.pi)
CKPT_VERSION = 2
CKPT_MAGIC = b"BLENDRIG-CKPT\x00\x01\n"


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite activations in layer {layer!r}")
        self.layer = layer


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, params: dict, log: list):
        super().__init__(f"loss became non-finite at step {step}; returning the last good checkpoint")
        self.step = step
        self.params = params
        self.log = log


@dataclass(frozen=True)
class MixerConfig:
    tokens_in: int = 146
    channels_in: int = 2
    latent_tokens: int = 96
    latent_channels: int = 64
    num_blocks: int = 4
    token_mlp_hidden: int = 192
    channel_mlp_hidden: int = 256
    n_coefficients: int = NUM_SHAPES
    activation: str = "gelu"
    head_multiplier: float = 0.3

    def __post_init__(self):
        for k, v in asdict(self).items():
            if isinstance(v, int) and v < 1 and k != "num_blocks":
                raise ValueError(f"{k} must be positive")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be >= 0")
        if self.activation != "gelu":
            raise ValueError("only the gelu activation is supported")
        if not self.head_multiplier > 0:
            raise ValueError("head_multiplier must be positive")

    @classmethod
    def desk(cls, **overrides) -> "MixerConfig":
        """One narrower block over the same 96x64 latent, for single-core CPU training."""
        return cls(**{"num_blocks": 1, "token_mlp_hidden": 96, "channel_mlp_hidden": 128, **overrides})

    @property
    def latent_shape(self) -> tuple:
        return (self.latent_tokens, self.latent_channels)

    def param_shapes(self) -> dict:
        T_in, C_in, T, C = self.tokens_in, self.channels_in, self.latent_tokens, self.latent_channels
        shapes = {
            "embed.w": (C_in, C), "embed.b": (C,),
            "tokproj.w": (T_in, T), "tokproj.b": (T,),
        }
        for k in range(self.num_blocks):
            p = f"blocks.{k}."
            shapes.update({
                p + "ln1.g": (C,), p + "ln1.b": (C,),
                p + "tok.w1": (T, self.token_mlp_hidden), p + "tok.b1": (self.token_mlp_hidden,),
                p + "tok.w2": (self.token_mlp_hidden, T), p + "tok.b2": (T,),
                p + "ln2.g": (C,), p + "ln2.b": (C,),
                p + "ch.w1": (C, self.channel_mlp_hidden), p + "ch.b1": (self.channel_mlp_hidden,),
                p + "ch.w2": (self.channel_mlp_hidden, C), p + "ch.b2": (C,),
            })
        shapes.update({
            "head_coeff.w": (T * C, self.n_coefficients), "head_coeff.b": (self.n_coefficients,),
            "head_rot.w": (T * C, 6), "head_rot.b": (6,),
        })
        return shapes


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    steps: int = 50_000
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    alpha_coeff: float = 1.0
    alpha_lmk: float = 1.0
    alpha_rot: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 1000
    dtype: str = "float32"

    def __post_init__(self):
        if not self.lr_start > self.lr_end > 0:
            raise ValueError("learning rates must satisfy lr_start > lr_end > 0")
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError("batch_size and steps must be positive")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Laptop-scale schedule; the class default is the full-scale run."""
        return cls(**{"batch_size": 64, "steps": 5000, **overrides})


def init_params(cfg: MixerConfig, seed: int = 0, dtype=np.float64) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".g"):
            a = np.ones(shape)
        elif name == "head_rot.b":
            a = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        elif len(shape) == 1:
            a = np.zeros(shape)
        else:
            std = 1.0 / math.sqrt(shape[0])
            if name.startswith("head"):
                # effective head weights (times the multiplier) start at 0.1 / sqrt(fan-in)
                std *= 0.1 / cfg.head_multiplier
            a = rng.normal(0.0, std, shape)
        params[name] = a.astype(dtype)
    return params


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def check_params(params: dict, cfg: MixerConfig):
    shapes = cfg.param_shapes()
    if set(params) != set(shapes):
        missing, extra = set(shapes) - set(params), set(params) - set(shapes)
        raise ValueError(f"parameter names mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    for k, s in shapes.items():
        if params[k].shape != s:
            raise ValueError(f"{k}: expected shape {s}, got {params[k].shape}")


def _gelu_tanh(x):
    t = x * x
    t *= 0.044715
    t += 1.0
    t *= x
    t *= GELU_K
    return np.tanh(t, out=t)


def gelu(x, t=None):
    """tanh-approximated GELU; ``t`` is the inner tanh if already known."""
    if t is None:
        t = _gelu_tanh(x)
    out = t + 1.0
    out *= x
    out *= 0.5
    return out


def gelu_grad(x, t=None):
    if t is None:
        t = _gelu_tanh(x)
    # 0.5 (1 + t) + 0.5 x (1 - t^2) k (1 + 3c x^2)
    inner = x * x
    inner *= 3 * 0.044715
    inner += 1.0
    inner *= x
    inner *= 0.5 * GELU_K
    inner *= 1.0 - t * t
    inner += 0.5
    inner += 0.5 * t
    return inner


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    y = xc * inv
    return y * g + b, (y, inv)


def _layernorm_back(dout, g, cache):
    y, inv = cache
    flat = dout.reshape(-1, dout.shape[-1])
    dg = np.sum(flat * y.reshape(flat.shape), axis=0)
    db = flat.sum(axis=0)
    dy = dout * g
    dx = inv * (dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _check(name, a):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(name)


def _head_scale(cfg: MixerConfig) -> float:
    # Fixed readout multiplier over the flattened latent. With Adam every head
    # weight moves by about lr per step, so unscaled a full-batch step can shift
    # a logit by lr * sum|F| and park it deep in the sigmoid's flat tail.
    return cfg.head_multiplier


def _forward(params: dict, x: np.ndarray, cfg: MixerConfig, keep: bool):
    B = x.shape[0]
    cache = {}
    E = x @ params["embed.w"] + params["embed.b"]
    Z = np.swapaxes(np.swapaxes(E, 1, 2) @ params["tokproj.w"], 1, 2) + params["tokproj.b"][:, None]
    _check("tokproj", Z)
    if keep:
        cache["E"] = E
    for k in range(cfg.num_blocks):
        p = f"blocks.{k}."
        Y, ln1 = _layernorm(Z, params[p + "ln1.g"], params[p + "ln1.b"])
        Yt = np.swapaxes(Y, 1, 2)
        H = Yt @ params[p + "tok.w1"] + params[p + "tok.b1"]
        T1 = _gelu_tanh(H)
        A = gelu(H, T1)
        O = A @ params[p + "tok.w2"] + params[p + "tok.b2"]
        Z = Z + np.swapaxes(O, 1, 2)
        Y2, ln2 = _layernorm(Z, params[p + "ln2.g"], params[p + "ln2.b"])
        H2 = Y2 @ params[p + "ch.w1"] + params[p + "ch.b1"]
        T2 = _gelu_tanh(H2)
        A2 = gelu(H2, T2)
        Z = Z + A2 @ params[p + "ch.w2"] + params[p + "ch.b2"]
        _check(f"blocks.{k}", Z)
        if keep:
            cache[k] = (ln1, Yt, H, T1, A, ln2, Y2, H2, T2, A2)
    F = Z.reshape(B, -1)
    m = _head_scale(cfg)
    logits = (F @ params["head_coeff.w"]) * m + params["head_coeff.b"]
    r6 = (F @ params["head_rot.w"]) * m + params["head_rot.b"]
    _check("heads", logits)
    _check("heads", r6)
    w = sigmoid(logits)
    if keep:
        cache["F"] = F
        cache["x"] = x
    return w, r6, cache


def forward(params: dict, landmarks, cfg: MixerConfig = MixerConfig()):
    """Predicted coefficients in (0, 1) and raw 6D rotations.

    ``landmarks`` is one normalized (T_in, 2) set or a (B, T_in, 2) batch.
    """
    x = np.asarray(landmarks, dtype=next(iter(params.values())).dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != (cfg.tokens_in, cfg.channels_in):
        raise ValueError(f"expected input (..., {cfg.tokens_in}, {cfg.channels_in}), got {x.shape}")
    w, r6, _ = _forward(params, x, cfg, keep=False)
    return (w[0], r6[0]) if single else (w, r6)


def normalize_landmarks(points, interocular_pair) -> np.ndarray:
    """Center landmarks on their centroid and divide by the inter-ocular distance."""
    p = np.asarray(points, dtype=float)
    a, b = interocular_pair
    c = p.mean(axis=-2, keepdims=True)
    d = np.linalg.norm(p[..., a, :] - p[..., b, :], axis=-1)[..., None, None]
    if np.any(d <= 0):
        raise ValueError("inter-ocular distance is zero")
    return (p - c) / d


@dataclass
class Batch:
    """Normalized inputs with ground-truth coefficients and rotations."""

    x: np.ndarray  # (B, T_in, 2)
    w: np.ndarray  # (B, 52)
    R: np.ndarray  # (B, 3, 3)

    def __len__(self):
        return len(self.x)

    def take(self, idx) -> "Batch":
        return Batch(self.x[idx], self.w[idx], self.R[idx])


def batch_from_samples(samples, interocular_pair, dtype=np.float32) -> Batch:
    """Stack dataset samples (``landmarks2d``, ``coefficients``, ``pose``) into a Batch."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    x = normalize_landmarks(np.stack([s.landmarks2d for s in samples]), interocular_pair)
    w = np.stack([s.coefficients for s in samples])
    R = rot6d_to_rotation(np.stack([s.pose.r6 for s in samples]))
    return Batch(x.astype(dtype), w.astype(dtype), R.astype(dtype))


@dataclass(frozen=True)
class LossWeights:
    coeff: float = 1.0
    lmk: float = 1.0
    rot: float = 1.0

    @classmethod
    def from_train(cls, cfg: TrainConfig) -> "LossWeights":
        return cls(cfg.alpha_coeff, cfg.alpha_lmk, cfg.alpha_rot)


def landmark_delta_basis(rig) -> np.ndarray:
    """(52, 146*3) landmark displacement of each blendshape of ``rig``."""
    _, deltas = rig.landmark_basis()
    return deltas.reshape(deltas.shape[0], -1)


def rotation_loss_term(r6_pred, R_gt) -> float:
    """Squared Frobenius distance between the decoded rotation and the target."""
    d = rot6d_to_rotation(r6_pred) - np.asarray(R_gt)
    return float(np.sum(d * d))


def _loss_terms(w, r6, batch: Batch, basis, weights: LossWeights, need_grad: bool):
    B = len(batch)
    dw = w - batch.w
    e = np.einsum("bk,bkn->bn", dw, basis) if basis.ndim == 3 else dw @ basis
    coeff = float(np.mean(dw * dw))
    lmk = float(np.mean(e * e))
    rot, gr6 = 0.0, None
    if weights.rot != 0 or need_grad:
        R = rot6d_to_rotation(r6)
        dR = R - batch.R
        rot = float(np.sum(dR * dR) / B)
    terms = {"coeff": coeff, "lmk": lmk, "rot": rot}
    terms["total"] = weights.coeff * coeff + weights.lmk * lmk + weights.rot * rot
    if not need_grad:
        return terms, None, None
    gw = weights.coeff * 2.0 * dw / dw.size
    ge = weights.lmk * 2.0 * e / e.size
    gw = gw + (np.einsum("bn,bkn->bk", ge, basis) if basis.ndim == 3 else ge @ basis.T)
    gr6 = rot6d_backward(r6, weights.rot * 2.0 * dR / B).astype(r6.dtype)
    return terms, gw.astype(w.dtype), gr6


def loss(params: dict, batch: Batch, basis, cfg: MixerConfig = MixerConfig(),
         weights: LossWeights = LossWeights()) -> dict:
    """Loss terms ``coeff``, ``lmk``, ``rot`` and their weighted ``total``.

    ``coeff`` is the mean squared coefficient error and ``lmk`` the mean
    squared error of the 3D landmarks reconstructed from predicted versus
    ground-truth coefficients, using ``basis`` from
    :func:`landmark_delta_basis` (shared, or one per sample).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    w, r6, _ = _forward(params, batch.x.astype(next(iter(params.values())).dtype), cfg, keep=False)
    terms, _, _ = _loss_terms(w, r6, batch, basis, weights, need_grad=False)
    return terms


def backward(params: dict, batch: Batch, basis, cfg: MixerConfig = MixerConfig(),
             weights: LossWeights = LossWeights()):
    """Gradient of the total loss for every parameter tensor, plus the loss terms."""
    dtype = next(iter(params.values())).dtype
    x = batch.x.astype(dtype)
    w, r6, cache = _forward(params, x, cfg, keep=True)
    terms, gw, gr6 = _loss_terms(w, r6, batch, basis, weights, need_grad=True)
    grads = {}
    glogit = gw * w * (1.0 - w)
    F = cache["F"]
    m = _head_scale(cfg)
    grads["head_coeff.w"] = (F.T @ glogit) * m
    grads["head_coeff.b"] = glogit.sum(axis=0)
    grads["head_rot.w"] = (F.T @ gr6) * m
    grads["head_rot.b"] = gr6.sum(axis=0)
    dZ = m * (glogit @ params["head_coeff.w"].T + gr6 @ params["head_rot.w"].T).reshape(
        len(x), cfg.latent_tokens, cfg.latent_channels)
    for k in reversed(range(cfg.num_blocks)):
        p = f"blocks.{k}."
        ln1, Yt, H, T1, A, ln2, Y2, H2, T2, A2 = cache[k]
        # channel MLP
        grads[p + "ch.w2"] = A2.reshape(-1, A2.shape[-1]).T @ dZ.reshape(-1, dZ.shape[-1])
        grads[p + "ch.b2"] = dZ.reshape(-1, dZ.shape[-1]).sum(axis=0)
        dH2 = (dZ @ params[p + "ch.w2"].T) * gelu_grad(H2, T2)
        grads[p + "ch.w1"] = Y2.reshape(-1, Y2.shape[-1]).T @ dH2.reshape(-1, dH2.shape[-1])
        grads[p + "ch.b1"] = dH2.reshape(-1, dH2.shape[-1]).sum(axis=0)
        dY2 = dH2 @ params[p + "ch.w1"].T
        dx, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layernorm_back(dY2, params[p + "ln2.g"], ln2)
        dZ = dZ + dx
        # token MLP
        dO = np.swapaxes(dZ, 1, 2)
        grads[p + "tok.w2"] = A.reshape(-1, A.shape[-1]).T @ dO.reshape(-1, dO.shape[-1])
        grads[p + "tok.b2"] = dO.reshape(-1, dO.shape[-1]).sum(axis=0)
        dH = (dO @ params[p + "tok.w2"].T) * gelu_grad(H, T1)
        grads[p + "tok.w1"] = Yt.reshape(-1, Yt.shape[-1]).T @ dH.reshape(-1, dH.shape[-1])
        grads[p + "tok.b1"] = dH.reshape(-1, dH.shape[-1]).sum(axis=0)
        dY = np.swapaxes(dH @ params[p + "tok.w1"].T, 1, 2)
        dx, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layernorm_back(dY, params[p + "ln1.g"], ln1)
        dZ = dZ + dx
    E = cache["E"]
    dZt = np.swapaxes(dZ, 1, 2)  # (B, C, T)
    Et = np.swapaxes(E, 1, 2)  # (B, C, T_in)
    grads["tokproj.w"] = Et.reshape(-1, Et.shape[-1]).T @ dZt.reshape(-1, dZt.shape[-1])
    grads["tokproj.b"] = dZt.sum(axis=(0, 1))
    dE = np.swapaxes(dZt @ params["tokproj.w"].T, 1, 2)
    grads["embed.w"] = x.reshape(-1, x.shape[-1]).T @ dE.reshape(-1, dE.shape[-1])
    grads["embed.b"] = dE.reshape(-1, dE.shape[-1]).sum(axis=0)
    return {k: grads[k] for k in params}, terms


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Learning rate for update ``step`` (0-based): lr_start at 0, lr_end at steps - 1."""
    if cfg.steps == 1:
        return cfg.lr_start
    frac = min(max(step / (cfg.steps - 1), 0.0), 1.0)
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainResult:
    params: dict
    log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def train(data: Batch, cfg: TrainConfig, mixer_cfg: MixerConfig, basis, holdout: Batch | None = None,
          init: dict | None = None, checkpoint_path=None, meta: dict | None = None,
          progress=None) -> TrainResult:
    """Adam with cosine learning-rate decay over ``cfg.steps`` updates.

    Every ``log_every`` updates the training-batch loss terms (and, if given,
    the holdout loss terms) are appended to the log. Every
    ``checkpoint_every`` updates the parameters are snapshotted (and written
    to ``checkpoint_path`` if set).
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    dtype = np.dtype(cfg.dtype)
    params = {k: v.astype(dtype) for k, v in (init or init_params(mixer_cfg, cfg.seed)).items()}
    check_params(params, mixer_cfg)
    basis = np.asarray(basis, dtype=dtype)
    weights = LossWeights.from_train(cfg)
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    m, v = zeros_like_params(params), zeros_like_params(params)
    b1, b2 = cfg.beta1, cfg.beta2
    result = TrainResult(params)
    last_good = {k: a.copy() for k, a in params.items()}
    bsz = min(cfg.batch_size, len(data))

    def log_entry(step, terms, lr):
        entry = {"step": step, "lr": lr, **{k: terms[k] for k in ("total", "coeff", "lmk", "rot")}}
        if holdout is not None:
            h = loss(params, holdout, basis, mixer_cfg, weights)
            entry["holdout"] = h["total"]
            entry.update({f"holdout_{k}": h[k] for k in ("coeff", "lmk", "rot")})
        result.log.append(entry)
        if progress:
            progress(entry)

    for step in range(cfg.steps):
        idx = rng.choice(len(data), size=bsz, replace=False)
        batch = data.take(idx)
        try:
            grads, terms = backward(params, batch, basis, mixer_cfg, weights)
        except (NonFiniteError, DegenerateRotationError, FloatingPointError):
            terms = {"total": float("nan")}
        if not np.isfinite(terms["total"]):
            raise TrainingDiverged(step, last_good, result.log)
        lr = cosine_lr(step, cfg)
        t = step + 1
        c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
        for k in params:
            g = grads[k]
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            params[k] = params[k] - (lr / c1) * m[k] / (np.sqrt(v[k] / c2) + cfg.adam_eps)
        done = step + 1
        if done % cfg.log_every == 0 or done == cfg.steps:
            log_entry(done, terms, lr)
        if done % cfg.checkpoint_every == 0 or done == cfg.steps:
            last_good = {k: a.copy() for k, a in params.items()}
            result.checkpoints.append(done)
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, params, mixer_cfg, {**(meta or {}), "step": done})
    result.params = params
    return result


def params_hash(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        a = np.ascontiguousarray(params[k])
        h.update(k.encode())
        h.update(str(a.dtype).encode())
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_checkpoint(path, params: dict, cfg: MixerConfig, meta: dict | None = None) -> str:
    """Write a self-describing checkpoint; returns its content hash.

    Layout: magic line, 8-byte little-endian header length, JSON header
    (config, tensor names/shapes/dtype/offsets, metadata, content hash), then
    the tensors as little-endian row-major bytes in header order.
    """
    check_params(params, cfg)
    names = list(cfg.param_shapes())
    dtype = params[names[0]].dtype
    tensors, offset, blobs = [], 0, []
    for k in names:
        a = np.ascontiguousarray(params[k], dtype=dtype.newbyteorder("<"))
        tensors.append({"name": k, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        offset += a.nbytes
        blobs.append(a.tobytes())
    header = {
        "format": "blendrig-mixer-checkpoint",
        "version": CKPT_VERSION,
        "config": asdict(cfg),
        "dtype": str(dtype),
        "tensors": tensors,
        "meta": meta or {},
    }
    digest = hashlib.sha256(json.dumps(header, sort_keys=True).encode())
    for b in blobs:
        digest.update(b)
    header["content_hash"] = digest.hexdigest()
    hb = json.dumps(header, sort_keys=True).encode()
    tmp = Path(f"{path}.tmp")
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<Q", len(hb)))
        f.write(hb)
        for b in blobs:
            f.write(b)
    tmp.replace(path)
    return header["content_hash"]


def load_checkpoint(path):
    """Return ``(params, config, header)``; the content hash is verified."""
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise ValueError(f"{path} is not a mixer checkpoint")
    pos = len(CKPT_MAGIC)
    (n,) = struct.unpack("<Q", raw[pos:pos + 8])
    header = json.loads(raw[pos + 8:pos + 8 + n])
    body = raw[pos + 8 + n:]
    expected = header.pop("content_hash")
    digest = hashlib.sha256(json.dumps(header, sort_keys=True).encode())
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    params = {}
    for t in header["tensors"]:
        chunk = body[t["offset"]:t["offset"] + t["nbytes"]]
        digest.update(chunk)
        params[t["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(t["shape"]).astype(dtype.newbyteorder("="))
    if digest.hexdigest() != expected:
        raise ValueError(f"{path}: content hash mismatch")
    header["content_hash"] = expected
    if header.get("version") != CKPT_VERSION:
        # version 1 heads had no readout multiplier; loading them would silently change outputs
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    cfg = MixerConfig(**header["config"])
    check_params(params, cfg)
    return params, cfg, header
