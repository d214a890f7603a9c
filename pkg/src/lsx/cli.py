"""Command-line front end: data generation/ingestion, splits, the three
training phases, translation, and evaluation.

Exit codes: 0 success, 1 usage, 2 data/environment error, 3 numeric abort.
Every command is deterministic given config, seed, and inputs; artifacts
are byte-identical across reruns except wall-clock report rows.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import contextmanager

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from . import evaluation as ev
from . import networks as nets
from . import training as tr
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .config import ConfigError, TrainConfig, apply_overrides, load_config, save_config
from .data import DatasetManifest, DataError, SyntheticSpec
from .networks import rng_for
from .pointcloud import to_frame, write_cloud
from .transport import TransportError


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# plumbing


@contextmanager
def _lock(ckpt_dir: str):
    """One writer per checkpoint dir; the lock file names its owner pid."""
    os.makedirs(ckpt_dir, exist_ok=True)
    path = os.path.join(ckpt_dir, ".lock")
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"checkpoint dir {ckpt_dir!r} is locked ({path}; remove it if stale)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        os.unlink(path)


def _build_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "profile", None):
        overrides.setdefault("profile", args.profile)
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("seed", str(args.seed))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def _load_manifest(data_dir: str) -> DatasetManifest:
    return DatasetManifest.load(os.path.join(data_dir, "manifest.txt"))


def _ckpt_config(ckpt_dir: str) -> TrainConfig:
    path = os.path.join(ckpt_dir, "config.txt")
    if not os.path.exists(path):
        raise DataError(f"no config at {path}; train something first")
    return load_config(path)


def _load_state(ckpt_dir: str, name: str) -> dict:
    path = os.path.join(ckpt_dir, name)
    if not os.path.exists(path):
        raise DataError(f"missing checkpoint {path}")
    return load_tensors(path)


def _train_clouds(man: DatasetManifest, data_dir: str):
    """Pooled train clouds, domain x then y, each id-ordered."""
    _, cx = data_mod.load_clouds(man, data_dir, "x", "train")
    _, cy = data_mod.load_clouds(man, data_dir, "y", "train")
    return cx, cy, np.concatenate([cx, cy])


def _parse_range(text: str) -> tuple:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected 'lo,hi', got {text!r}") from None
    return lo, hi


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    seed_x = int(rng_for(args.seed, "domain_x").integers(2**31))
    seed_y = int(rng_for(args.seed, "domain_y").integers(2**31))
    common = dict(size=_parse_range(args.size), stroke=_parse_range(args.stroke), rotation=_parse_range(args.rotation))
    spec_x = SyntheticSpec(family=args.family_x, count=args.count, seed=seed_x, **common)
    spec_y = SyntheticSpec(family=args.family_y, count=args.count_y or args.count, seed=seed_y, **common)
    man = data_mod.gen_synthetic(spec_x, spec_y, args.out, n=args.n, dense_factor=args.dense_factor)
    print(f"wrote {len(man.entries)} clouds under {args.out}")
    return 0


def cmd_ingest(args) -> int:
    man = data_mod.ingest_masks(args.masks, args.out, n=args.n, seed=args.seed)
    for w in man.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"ingested {len(man.entries)} masks into {args.out}")
    return 0


def cmd_split(args) -> int:
    man = _load_manifest(args.data)
    out = data_mod.split(man, args.test_fraction, args.seed)
    out.save(os.path.join(args.data, "manifest.txt"))
    n_test = len([e for e in out.entries if e.split == "test"])
    print(f"split {len(out.entries)} entries, {n_test} test")
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(args)
    man = _load_manifest(args.data)
    os.makedirs(args.ckpt, exist_ok=True)
    with _lock(args.ckpt):
        save_config(cfg, os.path.join(args.ckpt, "config.txt"))
        if args.phase == "ae":
            return _train_ae(args, cfg, man)
        if args.phase == "translator":
            return _train_translator(args, cfg, man)
        return _train_upsampler(args, cfg, man)


def _train_ae(args, cfg: TrainConfig, man: DatasetManifest) -> int:
    _, _, pooled = _train_clouds(man, args.data)
    path = os.path.join(args.ckpt, "ae.lsxc")
    enc = dec = opt_state = None
    start = 0
    if args.resume and os.path.exists(path):
        enc, dec, opt_state, start = tr.load_ae_state(load_tensors(path), cfg)
        print(f"resuming at epoch {start}")

    def hook(epoch, enc_now, dec_now, opt_now):
        save_tensors(path, tr.ae_state(enc_now, dec_now, opt_now, epoch))

    enc, dec, opt, report = tr.train_autoencoder(
        pooled, cfg, enc=enc, dec=dec, opt_state=opt_state, start_epoch=start, epoch_hook=hook,
    )
    save_tensors(path, tr.ae_state(enc, dec, opt, cfg.ae_epochs))
    report.to_csv(os.path.join(args.ckpt, "report_ae.csv"))
    print(f"autoencoder done: train loss {report.summary.get('train_loss', float('nan')):.5f}")
    return 0


def _train_translator(args, cfg: TrainConfig, man: DatasetManifest) -> int:
    enc, _, _, _ = tr.load_ae_state(_load_state(args.ckpt, "ae.lsxc"), cfg)
    cx, cy, _ = _train_clouds(man, args.data)
    codes_x = tr.encode_dataset(enc, cx, cfg)
    codes_y = tr.encode_dataset(enc, cy, cfg)
    path = os.path.join(args.ckpt, "translators.lsxc")
    models = opt_states = None
    start = 0
    if args.resume and os.path.exists(path):
        models, opt_states, start = tr.load_tr_state(load_tensors(path), cfg)
        print(f"resuming at epoch {start}")

    def hook(epoch, models_now, opt_t_now, opt_c_now):
        save_tensors(path, tr.tr_state(models_now, opt_t_now, opt_c_now, epoch))

    models, (opt_t, opt_c), report = tr.train_translators(
        codes_x, codes_y, cfg, models=models, opt_states=opt_states, start_epoch=start, epoch_hook=hook,
    )
    save_tensors(path, tr.tr_state(models, opt_t, opt_c, cfg.tr_epochs))
    report.to_csv(os.path.join(args.ckpt, "report_translator.csv"))
    print(f"translators done: generator loss {report.summary.get('gen_loss', float('nan')):.5f}")
    return 0


def _train_upsampler(args, cfg: TrainConfig, man: DatasetManifest) -> int:
    enc, dec, _, _ = tr.load_ae_state(_load_state(args.ckpt, "ae.lsxc"), cfg)
    domains = ("x", "y") if cfg.up_domains == "both" else (cfg.up_domains,)
    clouds, dense = [], []
    for dom in domains:
        _, c = data_mod.load_clouds(man, args.data, dom, "train")
        clouds.append(c)
        dense.append(data_mod.load_dense_clouds(man, args.data, dom, "train"))
    clouds = np.concatenate(clouds)
    dense = np.concatenate(dense)
    path = os.path.join(args.ckpt, "upsampler.lsxc")
    up = opt_state = None
    start = 0
    if args.resume and os.path.exists(path):
        up, opt_state, start = tr.load_up_state(load_tensors(path), cfg)
        print(f"resuming at epoch {start}")

    def hook(epoch, up_now, opt_now):
        save_tensors(path, tr.up_state(up_now, opt_now, epoch))

    up, opt, report = tr.train_upsampler(
        clouds, dense, enc, dec, cfg, up=up, opt_state=opt_state, start_epoch=start, epoch_hook=hook,
    )
    save_tensors(path, tr.up_state(up, opt, cfg.up_epochs))
    report.to_csv(os.path.join(args.ckpt, "report_upsampler.csv"))
    print(f"upsampler done: train loss {report.summary.get('train_loss', float('nan')):.5f}")
    return 0


def cmd_translate(args) -> int:
    cfg = _ckpt_config(args.ckpt)
    man = _load_manifest(args.data)
    enc, dec, _, _ = tr.load_ae_state(_load_state(args.ckpt, "ae.lsxc"), cfg)
    models, _, _ = tr.load_tr_state(_load_state(args.ckpt, "translators.lsxc"), cfg)
    txy, tyx, _, _ = models
    source, translator, name = ("x", txy, "txy") if args.direction == "x2y" else ("y", tyx, "tyx")
    upsampler = None
    if args.upsample:
        upsampler, _, _ = tr.load_up_state(_load_state(args.ckpt, "upsampler.lsxc"), cfg)
    ids, clouds = data_mod.load_clouds(man, args.data, source, "test")
    outs = tr.run_translation(enc, dec, translator, clouds, cfg, name=name, upsampler=upsampler)
    os.makedirs(args.out, exist_ok=True)
    for cid, cloud in zip(ids, outs):
        write_cloud(os.path.join(args.out, f"{cid}.txt"), cloud)
    print(f"translated {len(ids)} {source}-domain test shapes into {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _ckpt_config(args.ckpt)
    man = _load_manifest(args.data)
    enc, dec, _, _ = tr.load_ae_state(_load_state(args.ckpt, "ae.lsxc"), cfg)
    dims = cfg.dims()
    os.makedirs(args.out, exist_ok=True)
    rows = []
    test = {}
    for dom in ("x", "y"):
        ids, clouds = data_mod.load_clouds(man, args.data, dom, "test")
        test[dom] = (ids, clouds)
        codes = tr.encode_dataset(enc, clouds, cfg)
        recon, _ = nets.decode_batch(dec, ad.const(codes.astype(cfg.dtype())), dims)
        for cid, cloud, out in zip(ids, clouds, recon.data.astype(np.float64)):
            ch, emd_n = ev.shape_metrics(out, cloud)
            rows.append((cid, "recon_chamfer", ch))
            rows.append((cid, "recon_emd_n", emd_n))
            if cloud.shape[1] == 2:
                mse, iou = ev.mse_iou(
                    ev.rasterize_cloud(to_frame(out), r=args.r), ev.rasterize_cloud(to_frame(cloud), r=args.r)
                )
                rows.append((cid, "recon_mse", mse))
                rows.append((cid, "recon_iou", iou))
    tr_path = os.path.join(args.ckpt, "translators.lsxc")
    if os.path.exists(tr_path):
        models, _, _ = tr.load_tr_state(load_tensors(tr_path), cfg)
        txy, tyx, _, _ = models
        all_codes = {}
        for dom, translator, name, tag in (("x", txy, "txy", "x2y"), ("y", tyx, "tyx", "y2x")):
            ids, clouds = test[dom]
            codes = tr.encode_dataset(enc, clouds, cfg)
            moved = nets.translate(translator, ad.const(codes.astype(cfg.dtype())), training=False, name=name)
            profile = ev.code_change_profile(codes, moved.data.astype(np.float64))
            ev.profile_to_csv(profile, os.path.join(args.out, f"profile_{tag}.csv"))
            all_codes[dom] = codes
        dist, disc, labels = ev.embedding_distances(all_codes["x"], all_codes["y"])
        ev.save_distance_matrix(os.path.join(args.out, "distances.txt"), dist)
        with open(os.path.join(args.out, "codes.txt"), "w") as fh:
            fh.write(f"{disc.shape[0]} {disc.shape[1]}\n")
            for label, row in zip(labels, disc):
                fh.write(label + " " + " ".join(str(int(v)) for v in row) + "\n")
    else:
        print("note: no translator checkpoint, skipping code diagnostics", file=sys.stderr)
    if args.translated and args.gt:
        pair_rows, missing = _paired_metrics(args.translated, args.gt, args.r)
        rows.extend(pair_rows)
        if missing:
            print(f"warning: {missing} translated files had no ground truth, skipped", file=sys.stderr)
    elif args.translated or args.gt:
        print("warning: paired metrics need both --translated and --gt, skipped", file=sys.stderr)
    ev.save_metrics_csv(os.path.join(args.out, "metrics.csv"), rows)
    print(f"wrote metrics for {len(rows)} rows under {args.out}")
    return 0


def _paired_metrics(translated_dir: str, gt_dir: str, r: float):
    from .pointcloud import read_cloud

    rows, missing = [], 0
    names = sorted(f for f in os.listdir(translated_dir) if f.endswith(".txt"))
    if not names:
        raise DataError(f"no translated clouds under {translated_dir}")
    for name in names:
        gt_path = os.path.join(gt_dir, name)
        if not os.path.exists(gt_path):
            missing += 1
            continue
        out = read_cloud(os.path.join(translated_dir, name))
        gt = read_cloud(gt_path)
        cid = os.path.splitext(name)[0]
        ch, emd_n = ev.shape_metrics(out, gt)
        rows.append((cid, "chamfer", ch))
        rows.append((cid, "emd_n", emd_n))
        if out.shape[1] == 2:
            mse, iou = ev.mse_iou(ev.rasterize_cloud(to_frame(out), r=r), ev.rasterize_cloud(to_frame(gt), r=r))
            rows.append((cid, "mse", mse))
            rows.append((cid, "iou", iou))
    return rows, missing


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsx", description="unpaired shape-to-shape translation on point clouds")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate two synthetic unpaired domains")
    g.add_argument("--out", required=True)
    g.add_argument("--family-x", default="crosses", choices=data_mod.FAMILIES)
    g.add_argument("--family-y", default="squares", choices=data_mod.FAMILIES)
    g.add_argument("--count", type=int, default=2000)
    g.add_argument("--count-y", type=int, default=0, help="defaults to --count")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--n", type=int, default=128, help="points per cloud")
    g.add_argument("--dense-factor", type=int, default=8)
    g.add_argument("--size", default="0.3,0.8")
    g.add_argument("--stroke", default="0.2,0.35")
    g.add_argument("--rotation", default="0,0")
    g.set_defaults(func=cmd_gen_data)

    i = sub.add_parser("ingest", help="sample PGM masks (x/ and y/ subdirs) into clouds")
    i.add_argument("--masks", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--n", type=int, default=2048)
    i.add_argument("--seed", type=int, default=0)
    i.set_defaults(func=cmd_ingest)

    s = sub.add_parser("split", help="assign train/test tags in place")
    s.add_argument("--data", required=True)
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="run one training phase")
    t.add_argument("phase", choices=("ae", "translator", "upsampler"))
    t.add_argument("--data", required=True)
    t.add_argument("--ckpt", required=True)
    t.add_argument("--config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--profile", choices=("desk", "full"))
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    tl = sub.add_parser("translate", help="translate the test split of one domain")
    tl.add_argument("--direction", required=True, choices=("x2y", "y2x"))
    tl.add_argument("--data", required=True)
    tl.add_argument("--ckpt", required=True)
    tl.add_argument("--out", required=True)
    tl.add_argument("--upsample", action="store_true")
    tl.set_defaults(func=cmd_translate)

    e = sub.add_parser("evaluate", help="reconstruction metrics and latent diagnostics")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--r", type=float, default=10.0, help="rasterization radius, pixels")
    e.add_argument("--translated", help="dir of translated clouds for paired metrics")
    e.add_argument("--gt", help="dir of ground-truth clouds matching --translated")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ad.NonFiniteError, TransportError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
