"""Training procedures: autoencoder, adversarial translator pair, upsampler.

All randomness (shuffles, batch draws, penalty mixing, plan sampling)
derives from one root seed through per-purpose, per-epoch streams, so a
run interrupted at an epoch boundary and resumed reproduces the
uninterrupted run bit for bit, and two runs with the same seed produce
identical checkpoints.

The three phases are strictly sequential: translators train on codes from
a frozen encoder, the upsampler trains on activations of a frozen decoder.
"""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import networks as nets
from .config import TrainConfig, lr_at
from .losses import ae_loss, critic_wgan_loss, cycle_loss, fp_loss, generator_adv_loss
from .networks import rng_for
from .transport import WarmMatcher, emd_loss


@dataclass
class TrainReport:
    """Per-epoch loss curves plus a final summary and the wall-clock cost."""

    series: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    summary: dict = field(default_factory=dict)

    def log(self, name: str, epoch: int, value: float) -> None:
        self.series.setdefault(name, []).append((int(epoch), float(value)))

    def to_csv(self, path) -> None:
        last = max((e for pts in self.series.values() for e, _ in pts), default=0)
        lines = ["epoch,series,value"]
        for name, pts in self.series.items():
            for epoch, value in pts:
                lines.append(f"{epoch},{name},{value!r}")
        for key, value in self.summary.items():
            lines.append(f"{last},final.{key},{value!r}")
        lines.append(f"{last},wallclock_sec,{self.wall_clock!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def read_report_csv(path) -> dict:
    out: dict = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "epoch,series,value":
            raise ValueError(f"{path}: unexpected report header {header!r}")
        for line in fh:
            epoch, name, value = line.rstrip("\n").split(",")
            out.setdefault(name, []).append((int(epoch), float(value)))
    return out


def _plan_seed(root: int, index: int) -> int:
    return int(rng_for(root, "plan", index).integers(2**31))


def build_plans(clouds: np.ndarray, dims: nets.NetDims, root_seed: int) -> list:
    return [nets.encoder_plan(clouds[i], dims, seed=_plan_seed(root_seed, i)) for i in range(clouds.shape[0])]


def _training_matcher(cfg: TrainConfig) -> WarmMatcher:
    return WarmMatcher(eps_min=cfg.emd_eps_min)


def _step(opt: ad.Adam, params: dict, grads: dict, lr: float) -> None:
    opt.step({name: grads[p] for name, p in params.items()}, lr)


# ---------------------------------------------------------------------------
# phase 1: overcomplete autoencoder


def train_autoencoder(
    clouds: np.ndarray,
    cfg: TrainConfig,
    enc: nets.Model | None = None,
    dec: nets.Model | None = None,
    opt_state=None,
    start_epoch: int = 0,
    epoch_hook=None,
):
    """Returns (enc, dec, opt, report).  `epoch_hook(epoch, enc, dec, opt)`
    fires after each epoch so callers can checkpoint."""
    cfg.validate()
    dims = cfg.dims()
    dtype = cfg.dtype()
    t0 = time.perf_counter()
    if enc is None:
        enc = nets.init_encoder(dims, cfg.seed, dtype)
    if dec is None:
        dec = nets.init_decoder(dims, cfg.seed, dtype)
    params = {**enc.params, **dec.params}
    opt = ad.Adam(params)
    if opt_state is not None:
        opt.load_state_dict(opt_state)
    n = clouds.shape[0]
    plans = build_plans(clouds, dims, cfg.seed)
    matcher = _training_matcher(cfg)
    report = TrainReport()
    for epoch in range(start_epoch + 1, cfg.ae_epochs + 1):
        order = rng_for(cfg.seed, "ae", "shuffle", epoch).permutation(n)
        sums: dict = defaultdict(float)
        batches = 0
        for lo in range(0, n, cfg.ae_batch):
            idx = order[lo : lo + cfg.ae_batch]
            matcher.clear()  # warm prices only flow between the five variants of one step
            loss, parts = ae_loss(enc, dec, clouds[idx], [plans[i] for i in idx], dims, cfg.lambda1, matcher)
            grads = ad.backward(loss)
            _step(opt, params, grads, cfg.ae_lr)
            sums["loss"] += loss.item()
            for key, value in parts.items():
                sums[key] += value
            batches += 1
        for key, total in sums.items():
            report.log(key, epoch, total / batches)
        if epoch_hook is not None:
            epoch_hook(epoch, enc, dec, opt)
    report.wall_clock = time.perf_counter() - t0
    if report.series.get("loss"):
        report.summary["train_loss"] = report.series["loss"][-1][1]
        report.summary["train_rec_z"] = report.series["rec_z"][-1][1]
    return enc, dec, opt, report


def encode_dataset(enc: nets.Model, clouds: np.ndarray, cfg: TrainConfig, chunk: int = 128) -> np.ndarray:
    """Codes for a whole dataset; plans keyed by dataset position."""
    dims = cfg.dims()
    n = clouds.shape[0]
    out = np.empty((n, dims.code_dim), dtype=np.float64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        plans = [nets.encoder_plan(clouds[i], dims, seed=_plan_seed(cfg.seed, i)) for i in range(lo, hi)]
        z, _ = nets.encode_batch(enc, clouds[lo:hi], plans, dims)
        out[lo:hi] = z.data.astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# phase 2: latent translators with critics


def init_translation_models(cfg: TrainConfig):
    dims = cfg.dims()
    dtype = cfg.dtype()
    txy = nets.init_translator(dims, cfg.seed, dtype, name="txy")
    tyx = nets.init_translator(dims, cfg.seed, dtype, name="tyx")
    crx = nets.init_critic(dims, cfg.seed, dtype, name="crx")
    cry = nets.init_critic(dims, cfg.seed, dtype, name="cry")
    return txy, tyx, crx, cry


def train_translators(
    codes_x: np.ndarray,
    codes_y: np.ndarray,
    cfg: TrainConfig,
    models=None,
    opt_states=None,
    start_epoch: int = 0,
    epoch_hook=None,
):
    """Alternating WGAN steps: `d_iters` critic updates per translator
    update, both directions trained jointly.  Returns the four models, the
    two optimizers, and the report.  `epoch_hook(epoch, models, opt_t,
    opt_c)` fires after each epoch."""
    cfg.validate()
    dtype = cfg.dtype()
    t0 = time.perf_counter()
    txy, tyx, crx, cry = models if models is not None else init_translation_models(cfg)
    t_params = {**txy.params, **tyx.params}
    c_params = {**crx.params, **cry.params}
    opt_t = ad.Adam(t_params)
    opt_c = ad.Adam(c_params)
    if opt_states is not None:
        opt_t.load_state_dict(opt_states[0])
        opt_c.load_state_dict(opt_states[1])
    nx, ny = codes_x.shape[0], codes_y.shape[0]
    bsz = min(cfg.tr_batch, nx, ny)
    report = TrainReport()
    alpha = np.asarray(cfg.alpha, dtype=dtype)
    beta = np.asarray(cfg.beta, dtype=dtype)
    for epoch in range(start_epoch + 1, cfg.tr_epochs + 1):
        lr = lr_at(cfg.tr_lr, epoch)
        rng = rng_for(cfg.seed, "tr", epoch)
        steps = max(1, min(nx, ny) // bsz)
        sums: dict = defaultdict(float)
        last: dict = {}
        for _ in range(steps):
            for _ in range(cfg.d_iters):
                bx = codes_x[rng.integers(0, nx, bsz)].astype(dtype)
                by = codes_y[rng.integers(0, ny, bsz)].astype(dtype)
                fake_y = nets.translate(txy, ad.const(bx), training=True, name="txy").data.copy()
                fake_x = nets.translate(tyx, ad.const(by), training=True, name="tyx").data.copy()
                loss_y, diag_y = critic_wgan_loss(cry, by, fake_y, cfg.lambda2, rng, name="cry")
                loss_x, diag_x = critic_wgan_loss(crx, bx, fake_x, cfg.lambda2, rng, name="crx")
                critic_total = ad.add(loss_y, loss_x)
                grads = ad.backward(critic_total)
                _step(opt_c, c_params, grads, lr)
                sums["critic_loss"] += critic_total.item()
                sums["w_xy"] += diag_y["w_estimate"]
                sums["w_yx"] += diag_x["w_estimate"]
                sums["penalty"] += diag_y["penalty"] + diag_x["penalty"]
            bx = codes_x[rng.integers(0, nx, bsz)].astype(dtype)
            by = codes_y[rng.integers(0, ny, bsz)].astype(dtype)
            vx, vy = ad.const(bx), ad.const(by)
            to_y = nets.translate(txy, vx, training=True, name="txy")
            to_x = nets.translate(tyx, vy, training=True, name="tyx")
            comp_xy = ad.add(
                generator_adv_loss(cry, to_y, name="cry"),
                ad.mul(fp_loss(nets.translate(txy, vy, training=True, name="txy"), by), ad.const(alpha)),
            )
            comp_yx = ad.add(
                generator_adv_loss(crx, to_x, name="crx"),
                ad.mul(fp_loss(nets.translate(tyx, vx, training=True, name="tyx"), bx), ad.const(alpha)),
            )
            cyc = cycle_loss(
                nets.translate(tyx, to_y, training=True, name="tyx"),
                bx,
                nets.translate(txy, to_x, training=True, name="txy"),
                by,
            )
            overall = ad.add(ad.add(comp_xy, comp_yx), ad.mul(cyc, ad.const(beta)))
            grads = ad.backward(overall)
            _step(opt_t, t_params, grads, lr)
            # the logged overall is recomposed from the logged parts so the
            # decomposition identity holds exactly on the report, free of
            # 32-bit rounding inside the graph
            last = {
                "gen_xy": comp_xy.item(),
                "gen_yx": comp_yx.item(),
                "cycle": cyc.item(),
            }
            last["gen_overall"] = last["gen_xy"] + last["gen_yx"] + float(cfg.beta) * last["cycle"]
            sums["gen_loss"] += overall.item()
        crit_steps = steps * cfg.d_iters
        report.log("critic_loss", epoch, sums["critic_loss"] / crit_steps)
        report.log("w_xy", epoch, sums["w_xy"] / crit_steps)
        report.log("w_yx", epoch, sums["w_yx"] / crit_steps)
        report.log("penalty", epoch, sums["penalty"] / crit_steps)
        report.log("gen_loss", epoch, sums["gen_loss"] / steps)
        for key, value in last.items():
            report.log(key, epoch, value)
        report.log("lr", epoch, lr)
        if epoch_hook is not None:
            epoch_hook(epoch, (txy, tyx, crx, cry), opt_t, opt_c)
    report.wall_clock = time.perf_counter() - t0
    for key in ("gen_loss", "critic_loss"):
        if report.series.get(key):
            report.summary[key] = report.series[key][-1][1]
    return (txy, tyx, crx, cry), (opt_t, opt_c), report


# ---------------------------------------------------------------------------
# phase 3: upsampler on the frozen decoder


def train_upsampler(
    clouds: np.ndarray,
    dense: np.ndarray,
    enc: nets.Model,
    dec: nets.Model,
    cfg: TrainConfig,
    up: nets.Model | None = None,
    opt_state=None,
    start_epoch: int = 0,
    epoch_hook=None,
):
    """Encoder and decoder stay frozen, so their activations are computed
    once; only the displacement layer trains.  The objective matches a
    random quarter-subset of the m*n output against an equal-size random
    subset of the dense ground truth."""
    cfg.validate()
    dims = cfg.dims()
    dtype = cfg.dtype()
    t0 = time.perf_counter()
    codes = encode_dataset(enc, clouds, cfg)
    n = clouds.shape[0]
    mn = dims.n_points * dims.up_factor
    dense_n = dense.shape[1]
    subset = max(32, min(mn, dense_n) // 4)
    base = np.empty((n, dims.n_points, dims.dim), dtype=dtype)
    penult = np.empty((n, dims.dec_widths[-1]), dtype=dtype)
    for lo in range(0, n, 128):
        pts, pen = nets.decode_batch(dec, ad.const(codes[lo : lo + 128].astype(dtype)), dims)
        base[lo : lo + 128] = pts.data
        penult[lo : lo + 128] = pen.data
    if up is None:
        up = nets.init_upsampler(dims, cfg.seed, dtype)
    opt = ad.Adam(up.params)
    if opt_state is not None:
        opt.load_state_dict(opt_state)
    matcher = _training_matcher(cfg)
    report = TrainReport()
    for epoch in range(start_epoch + 1, cfg.up_epochs + 1):
        rng = rng_for(cfg.seed, "up", epoch)
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for lo in range(0, n, cfg.up_batch):
            idx = order[lo : lo + cfg.up_batch]
            matcher.clear()
            out = nets.upsample(up, ad.const(penult[idx]), ad.const(base[idx]), dims)
            pick_out = rng.random((idx.size, mn)).argsort(axis=1)[:, :subset]
            pick_gt = rng.random((idx.size, dense_n)).argsort(axis=1)[:, :subset]
            out_sub = ad.take_rows(out, pick_out)
            gt_sub = np.stack([dense[i][pick_gt[j]] for j, i in enumerate(idx)])
            loss = emd_loss(out_sub, gt_sub, matcher)
            grads = ad.backward(loss)
            _step(opt, up.params, grads, cfg.up_lr)
            total += loss.item()
            batches += 1
        report.log("loss", epoch, total / batches)
        if epoch_hook is not None:
            epoch_hook(epoch, up, opt)
    report.wall_clock = time.perf_counter() - t0
    if report.series.get("loss"):
        report.summary["train_loss"] = report.series["loss"][-1][1]
    return up, opt, report


# ---------------------------------------------------------------------------
# checkpoint state assembly: flat {name: array} dicts for the container format


def _pack(models: list, opts: dict, epoch: int) -> dict:
    state: dict = {}
    for model in models:
        state.update(model.state())
    for tag, opt in opts.items():
        state.update({f"{tag}.{k}": v for k, v in opt.state_dict().items()})
    state["meta.epoch"] = np.asarray([float(epoch)])
    return state


def _split_opt(state: dict, tag: str) -> dict:
    lead = f"{tag}."
    return {k[len(lead) :]: v for k, v in state.items() if k.startswith(lead)}


def packed_epoch(state: dict) -> int:
    return int(round(float(np.asarray(state["meta.epoch"]).ravel()[0])))


def ae_state(enc: nets.Model, dec: nets.Model, opt: ad.Adam, epoch: int) -> dict:
    return _pack([enc, dec], {"opt": opt}, epoch)


def load_ae_state(state: dict, cfg: TrainConfig):
    dims, dtype = cfg.dims(), cfg.dtype()
    enc = nets.init_encoder(dims, cfg.seed, dtype)
    dec = nets.init_decoder(dims, cfg.seed, dtype)
    enc.load_state(state)
    dec.load_state(state)
    return enc, dec, _split_opt(state, "opt"), packed_epoch(state)


def tr_state(models, opt_t: ad.Adam, opt_c: ad.Adam, epoch: int) -> dict:
    return _pack(list(models), {"opt_t": opt_t, "opt_c": opt_c}, epoch)


def load_tr_state(state: dict, cfg: TrainConfig):
    models = init_translation_models(cfg)
    for model in models:
        model.load_state(state)
    return models, (_split_opt(state, "opt_t"), _split_opt(state, "opt_c")), packed_epoch(state)


def up_state(up: nets.Model, opt: ad.Adam, epoch: int) -> dict:
    return _pack([up], {"opt": opt}, epoch)


def load_up_state(state: dict, cfg: TrainConfig):
    up = nets.init_upsampler(cfg.dims(), cfg.seed, cfg.dtype())
    up.load_state(state)
    return up, _split_opt(state, "opt"), packed_epoch(state)


# ---------------------------------------------------------------------------
# inference


def run_translation(
    enc: nets.Model,
    dec: nets.Model,
    translator: nets.Model,
    clouds: np.ndarray,
    cfg: TrainConfig,
    name: str,
    upsampler: nets.Model | None = None,
    chunk: int = 128,
) -> np.ndarray:
    """encode -> translate (inference form) -> decode [-> upsample]."""
    dims = cfg.dims()
    dtype = cfg.dtype()
    codes = encode_dataset(enc, clouds, cfg, chunk=chunk)
    outs = []
    for lo in range(0, codes.shape[0], chunk):
        moved = nets.translate(translator, ad.const(codes[lo : lo + chunk].astype(dtype)), training=False, name=name)
        pts, pen = nets.decode_batch(dec, moved, dims)
        if upsampler is not None:
            pts = nets.upsample(upsampler, pen, pts, dims)
        outs.append(pts.data.astype(np.float64))
    return np.concatenate(outs, axis=0)
