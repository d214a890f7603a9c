"""Network definitions: multi-scale encoder, shared decoder, latent
translators, critics, and the displacement upsampler.

The encoder runs four chained set-abstraction stages at increasing radius;
each stage also feeds a small head whose max-pooled output is one sub-code.
The final code is the concatenation of the four sub-codes, which is why a
single sub-code can be zero-padded into a full-width code and decoded on
its own: the decoder is trained against all five variants.

Parameters are Glorot-uniform initialized with zero biases; batch-norm
layers carry running statistics as plain-array buffers next to their
learnable scale and shift.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .pointcloud import ball_query, check_cloud, farthest_point_sample


def rng_for(root_seed: int, *tags) -> np.random.Generator:
    """Independent deterministic stream per (seed, tag...) tuple."""
    entropy = [int(root_seed) & 0xFFFFFFFF] + [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(entropy)


@dataclass(frozen=True)
class NetDims:
    n_points: int
    dim: int
    sub_dim: int
    fps_counts: tuple
    radii: tuple
    group_sizes: tuple
    group_mlp: tuple
    head_mlp: tuple
    dec_widths: tuple
    tr_widths: tuple
    disc_widths: tuple
    up_factor: int = 8

    @property
    def n_scales(self) -> int:
        return len(self.fps_counts)

    @property
    def code_dim(self) -> int:
        return self.sub_dim * self.n_scales

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if not (len(self.radii) == len(self.group_sizes) == self.n_scales):
            raise ValueError("per-stage tuples must share length")
        if self.head_mlp[-1] != self.sub_dim:
            raise ValueError("head MLP must end at sub_dim")
        counts = (self.n_points,) + tuple(self.fps_counts)
        if any(counts[i + 1] > counts[i] for i in range(self.n_scales)):
            raise ValueError("fps counts must not grow")
        if any(r2 <= r1 for r1, r2 in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must increase")


def full_dims(dim: int = 3) -> NetDims:
    return NetDims(
        n_points=2048,
        dim=dim,
        sub_dim=64,
        fps_counts=(512, 256, 128, 64),
        radii=(0.1, 0.2, 0.4, 0.8),
        group_sizes=(32, 32, 32, 32),
        group_mlp=(64, 64, 128),
        head_mlp=(128, 64),
        dec_widths=(512, 512, 1024),
        tr_widths=(512, 512, 512, 512),
        disc_widths=(512, 256, 128),
        up_factor=8,
    )


def desk_dims(dim: int = 2) -> NetDims:
    # every count and width is the full profile shrunk 4x (points 16x)
    return NetDims(
        n_points=128,
        dim=dim,
        sub_dim=16,
        fps_counts=(32, 16, 8, 4),
        radii=(0.1, 0.2, 0.4, 0.8),
        group_sizes=(8, 8, 8, 8),
        group_mlp=(16, 16, 32),
        head_mlp=(32, 16),
        dec_widths=(128, 128, 256),
        tr_widths=(128, 128, 128, 128),
        disc_widths=(128, 64, 32),
        up_factor=8,
    )


@dataclass
class Model:
    params: dict[str, ad.Var] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def state(self) -> dict[str, np.ndarray]:
        out = {k: v.data.copy() for k, v in self.params.items()}
        out.update({f"buf.{k}": v.copy() for k, v in self.buffers.items()})
        return out

    def load_state(self, state, prefix: str = "") -> None:
        for k, v in self.params.items():
            v.data = np.array(state[prefix + k], dtype=v.data.dtype, copy=True)
        for k in self.buffers:
            self.buffers[k] = np.array(state[f"{prefix}buf.{k}"], dtype=np.float64, copy=True)


def _affine(model: Model, rng_seed, name: str, fin: int, fout: int, dtype) -> None:
    rng = rng_for(rng_seed, name)
    limit = np.sqrt(6.0 / (fin + fout))
    model.params[f"{name}.w"] = ad.param(rng.uniform(-limit, limit, (fin, fout)).astype(dtype), name=f"{name}.w")
    model.params[f"{name}.b"] = ad.param(np.zeros(fout, dtype=dtype), name=f"{name}.b")


def _bn_init(model: Model, name: str, width: int, dtype) -> None:
    model.params[f"{name}.gamma"] = ad.param(np.ones(width, dtype=dtype), name=f"{name}.gamma")
    model.params[f"{name}.beta"] = ad.param(np.zeros(width, dtype=dtype), name=f"{name}.beta")
    model.buffers[f"{name}.rmean"] = np.zeros(width, dtype=np.float64)
    model.buffers[f"{name}.rvar"] = np.ones(width, dtype=np.float64)


def _dense(model: Model, name: str, x: ad.Var) -> ad.Var:
    return ad.dense(x, model.params[f"{name}.w"], model.params[f"{name}.b"])


def batchnorm(model: Model, name: str, x: ad.Var, training: bool, momentum: float = 0.1, eps: float = 1e-5) -> ad.Var:
    """Normalize over the batch axis; inference form uses running stats,
    which keeps per-sample input gradients well defined inside the penalty."""
    gamma = model.params[f"{name}.gamma"]
    beta = model.params[f"{name}.beta"]
    if training:
        mu = ad.amean(x, axis=0)
        cen = ad.sub(x, mu)
        var = ad.amean(ad.mul(cen, cen), axis=0)
        rm = model.buffers[f"{name}.rmean"]
        rv = model.buffers[f"{name}.rvar"]
        rm *= 1.0 - momentum
        rm += momentum * mu.data.astype(np.float64)
        rv *= 1.0 - momentum
        rv += momentum * var.data.astype(np.float64)
    else:
        mu = ad.const(model.buffers[f"{name}.rmean"].astype(x.dtype))
        var = ad.const(model.buffers[f"{name}.rvar"].astype(x.dtype))
        cen = ad.sub(x, mu)
    norm = ad.div(cen, ad.sqrt(ad.add(var, ad.const(np.asarray(eps, dtype=x.dtype)))))
    return ad.add(ad.mul(norm, gamma), beta)


# ---------------------------------------------------------------------------
# encoder


def init_encoder(dims: NetDims, seed: int, dtype=np.float32) -> Model:
    model = Model()
    feat = dims.dim  # stage-0 point features are the absolute coordinates
    for s in range(dims.n_scales):
        fin = dims.dim + feat
        for i, w in enumerate(dims.group_mlp):
            _affine(model, seed, f"enc.s{s}.g{i}", fin, w, dtype)
            fin = w
        head_in = dims.group_mlp[-1]
        for i, w in enumerate(dims.head_mlp):
            _affine(model, seed, f"enc.s{s}.h{i}", head_in, w, dtype)
            head_in = w
        feat = dims.group_mlp[-1]
    return model


def encoder_plan(points: np.ndarray, dims: NetDims, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-stage (center indices, group indices), both into the previous
    stage's point list.  All randomness is the seeded first FPS pick."""
    points = check_cloud(points)
    if points.shape[0] != dims.n_points or points.shape[1] != dims.dim:
        raise ValueError(f"expected ({dims.n_points}, {dims.dim}) cloud, got {points.shape}")
    plan = []
    current = points
    for s in range(dims.n_scales):
        centers = farthest_point_sample(current, dims.fps_counts[s], seed=rng_for(seed, "fps", s).integers(2**31))
        grouping = ball_query(current, centers, dims.radii[s], dims.group_sizes[s])
        plan.append((centers, grouping.groups))
        current = current[centers]
    return plan


def encode_batch(model: Model, clouds: np.ndarray, plans: list, dims: NetDims) -> tuple[ad.Var, list[ad.Var]]:
    """Encode a (B, n, d) batch given per-sample plans; returns the full
    code (B, code_dim) and the four sub-codes (B, sub_dim) behind it."""
    b = clouds.shape[0]
    dtype = next(iter(model.params.values())).dtype
    coords = ad.const(np.asarray(clouds, dtype=dtype))
    feats = coords
    subs = []
    for s in range(dims.n_scales):
        centers = np.stack([plans[i][s][0] for i in range(b)])
        groups = np.stack([plans[i][s][1] for i in range(b)])
        center_xyz = ad.take_rows(coords, centers)
        grouped_xyz = ad.take_rows(coords, groups)
        k, g = groups.shape[1], groups.shape[2]
        rel = ad.sub(grouped_xyz, ad.reshape(center_xyz, (b, k, 1, dims.dim)))
        h = ad.concat_last([rel, ad.take_rows(feats, groups)])
        for i in range(len(dims.group_mlp)):
            h = ad.relu(_dense(model, f"enc.s{s}.g{i}", h))
        pooled = ad.amax(h, axis=2)  # (b, k, feat)
        t = pooled
        for i in range(len(dims.head_mlp)):
            t = _dense(model, f"enc.s{s}.h{i}", t)
            if i + 1 < len(dims.head_mlp):
                t = ad.relu(t)
        subs.append(ad.amax(t, axis=1))  # (b, sub_dim)
        coords = center_xyz
        feats = pooled
    padded = [ad.pad_last(s_i, i * dims.sub_dim, dims.code_dim) for i, s_i in enumerate(subs)]
    z = padded[0]
    for p in padded[1:]:
        z = ad.add(z, p)
    return z, subs


@dataclass(frozen=True)
class LatentCode:
    """Full code plus the per-scale sub-codes occupying its disjoint slices."""

    z: np.ndarray
    subs: tuple

    def padded(self, i: int) -> np.ndarray:
        out = np.zeros_like(self.z)
        w = self.subs[i].size
        out[i * w : (i + 1) * w] = self.subs[i]
        return out


def encode(model: Model, cloud: np.ndarray, dims: NetDims, seed: int = 0) -> LatentCode:
    plan = encoder_plan(cloud, dims, seed)
    z, subs = encode_batch(model, cloud[None], [plan], dims)
    return LatentCode(z.data[0].copy(), tuple(s.data[0].copy() for s in subs))


# ---------------------------------------------------------------------------
# decoder


def init_decoder(dims: NetDims, seed: int, dtype=np.float32) -> Model:
    model = Model()
    fin = dims.code_dim
    for i, w in enumerate(dims.dec_widths):
        _affine(model, seed, f"dec.l{i}", fin, w, dtype)
        fin = w
    _affine(model, seed, f"dec.l{len(dims.dec_widths)}", fin, dims.n_points * dims.dim, dtype)
    return model


def decode_batch(model: Model, codes: ad.Var, dims: NetDims) -> tuple[ad.Var, ad.Var]:
    """Codes (B, code_dim) -> clouds (B, n, d) plus the activations of the
    second-to-last layer, which the upsampler feeds on."""
    if codes.shape[-1] != dims.code_dim:
        raise ValueError(f"decode: expected code width {dims.code_dim}, got {codes.shape[-1]}")
    h = codes
    for i in range(len(dims.dec_widths)):
        h = ad.relu(_dense(model, f"dec.l{i}", h))
    penult = h
    flat = _dense(model, f"dec.l{len(dims.dec_widths)}", penult)
    return ad.reshape(flat, (codes.shape[0], dims.n_points, dims.dim)), penult


def decode(model: Model, code: np.ndarray, dims: NetDims) -> np.ndarray:
    dtype = next(iter(model.params.values())).dtype
    out, _ = decode_batch(model, ad.const(code[None].astype(dtype)), dims)
    return out.data[0].astype(np.float64)


# ---------------------------------------------------------------------------
# translators and critics


def init_translator(dims: NetDims, seed: int, dtype=np.float32, name: str = "tr") -> Model:
    model = Model()
    widths = (dims.code_dim,) + tuple(dims.tr_widths) + (dims.code_dim,)
    for i in range(len(widths) - 1):
        _affine(model, seed, f"{name}.l{i}", widths[i], widths[i + 1], dtype)
        if i + 2 < len(widths):
            _bn_init(model, f"{name}.bn{i}", widths[i + 1], dtype)
    return model


def translate(model: Model, codes: ad.Var, training: bool = False, name: str = "tr") -> ad.Var:
    """Five affine layers, batch-norm + relu between hidden ones, linear out."""
    h = codes
    n_layers = sum(1 for k in model.params if k.startswith(f"{name}.l") and k.endswith(".w"))
    for i in range(n_layers):
        h = _dense(model, f"{name}.l{i}", h)
        if i + 1 < n_layers:
            h = ad.relu(batchnorm(model, f"{name}.bn{i}", h, training))
    return h


def init_critic(dims: NetDims, seed: int, dtype=np.float32, name: str = "cr") -> Model:
    model = Model()
    fin = dims.code_dim
    for i, w in enumerate(dims.disc_widths):
        _affine(model, seed, f"{name}.l{i}", fin, w, dtype)
        _bn_init(model, f"{name}.bn{i}", w, dtype)
        fin = w
    _affine(model, seed, f"{name}.out", fin, 1, dtype)
    return model


def discriminate(model: Model, codes: ad.Var, training: bool = False, name: str = "cr") -> ad.Var:
    """Unbounded per-sample score (B,); no output squashing."""
    h = codes
    i = 0
    while f"{name}.l{i}.w" in model.params:
        h = ad.relu(batchnorm(model, f"{name}.bn{i}", _dense(model, f"{name}.l{i}", h), training))
        i += 1
    out = _dense(model, f"{name}.out", h)
    return ad.reshape(out, (codes.shape[0],))


# ---------------------------------------------------------------------------
# upsampler


def init_upsampler(dims: NetDims, seed: int, dtype=np.float32) -> Model:
    model = Model()
    _affine(model, seed, "up.l0", dims.dec_widths[-1], dims.n_points * dims.up_factor * dims.dim, dtype)
    return model


def upsample(model: Model, penult: ad.Var, base: ad.Var, dims: NetDims) -> ad.Var:
    """Predict m bounded displacements per decoded point: (B, m*n, d).

    The sigmoid output is rescaled to (-0.05, 0.05), so every displacement
    component stays strictly inside that band by construction.
    """
    b = penult.shape[0]
    raw = ad.sigmoid(_dense(model, "up.l0", penult))
    half = ad.const(np.asarray(0.5, dtype=raw.dtype))
    span = ad.const(np.asarray(0.1, dtype=raw.dtype))
    disp = ad.mul(ad.sub(raw, half), span)
    disp = ad.reshape(disp, (b, dims.n_points, dims.up_factor, dims.dim))
    base4 = ad.reshape(base, (b, dims.n_points, 1, dims.dim))
    out = ad.add(base4, disp)
    return ad.reshape(out, (b, dims.n_points * dims.up_factor, dims.dim))
