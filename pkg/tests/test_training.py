"""Training-loop behavior on deliberately tiny datasets: learning
happens, reports decompose, and checkpoint/resume is exact."""

import numpy as np
import pytest

from lsx import data as ld
from lsx import training as tr
from lsx.config import TrainConfig, lr_at
from lsx.networks import rng_for


def tiny_clouds(count, seed, family="crosses"):
    spec = ld.SyntheticSpec(family, count=count, seed=seed)
    return np.stack(
        [
            ld.sample_shape(ld.draw_params(spec, i), 128, rng_for(seed, family, i, "pts"))
            for i in range(count)
        ]
    )


def tiny_cfg(**overrides):
    base = dict(
        seed=3,
        ae_epochs=2,
        ae_batch=4,
        tr_epochs=2,
        tr_batch=8,
        up_epochs=2,
        up_batch=4,
        tr_lr=((1, 2e-3), (2, 1e-3)),
    )
    base.update(overrides)
    return TrainConfig(**base).validate()


@pytest.fixture(scope="module")
def ae_setup():
    clouds = tiny_clouds(8, seed=1)
    cfg = tiny_cfg(ae_epochs=3)
    enc, dec, opt, report = tr.train_autoencoder(clouds, cfg)
    return clouds, cfg, enc, dec, opt, report


def test_autoencoder_loss_falls(ae_setup):
    _, _, _, _, _, report = ae_setup
    losses = [v for _, v in report.series["loss"]]
    assert len(losses) == 3
    assert losses[-1] < losses[0]
    assert set(report.series) >= {"loss", "rec_z", "rec_z1", "rec_z2", "rec_z3", "rec_z4"}
    assert report.summary["train_loss"] == losses[-1]


def test_report_csv_roundtrip(ae_setup, tmp_path):
    *_, report = ae_setup
    path = tmp_path / "report.csv"
    report.to_csv(path)
    back = tr.read_report_csv(path)
    for name, pts in report.series.items():
        assert back[name] == [(e, float(v)) for e, v in pts]
    assert "final.train_loss" in back
    assert "wallclock_sec" in back


def test_autoencoder_resume_is_bit_identical(ae_setup):
    clouds, cfg, enc_full, dec_full, _, _ = ae_setup

    cfg_half = tiny_cfg(ae_epochs=2)
    enc_h, dec_h, opt_h, _ = tr.train_autoencoder(clouds, cfg_half)
    snap = tr.ae_state(enc_h, dec_h, opt_h, epoch=2)

    cfg_rest = tiny_cfg(ae_epochs=3)
    enc_r, dec_r, opt_state, epoch = tr.load_ae_state(snap, cfg_rest)
    assert epoch == 2
    enc_r, dec_r, _, _ = tr.train_autoencoder(
        clouds, cfg_rest, enc=enc_r, dec=dec_r, opt_state=opt_state, start_epoch=epoch
    )
    for k in enc_full.params:
        np.testing.assert_array_equal(enc_full.params[k].data, enc_r.params[k].data)
    for k in dec_full.params:
        np.testing.assert_array_equal(dec_full.params[k].data, dec_r.params[k].data)


def test_encode_dataset_chunking_is_invisible(ae_setup):
    clouds, cfg, enc, *_ = ae_setup
    codes_small = tr.encode_dataset(enc, clouds, cfg, chunk=3)
    codes_big = tr.encode_dataset(enc, clouds, cfg, chunk=128)
    assert codes_small.shape == (len(clouds), cfg.dims().code_dim)
    assert codes_small.dtype == np.float64
    np.testing.assert_array_equal(codes_small, codes_big)


@pytest.fixture(scope="module")
def translator_setup(ae_setup):
    clouds_x, cfg, enc, *_ = ae_setup
    clouds_y = tiny_clouds(8, seed=2, family="squares")
    codes_x = tr.encode_dataset(enc, clouds_x, cfg)
    codes_y = tr.encode_dataset(enc, clouds_y, cfg)
    models, opts, report = tr.train_translators(codes_x, codes_y, cfg)
    return cfg, codes_x, codes_y, models, opts, report


def test_translator_report_series(translator_setup):
    cfg, _, _, models, _, report = translator_setup
    assert len(models) == 4
    expected = {"critic_loss", "w_xy", "w_yx", "penalty", "gen_loss", "gen_xy", "gen_yx", "cycle", "gen_overall", "lr"}
    assert expected <= set(report.series)
    for name in expected:
        assert len(report.series[name]) == cfg.tr_epochs


def test_translator_lr_schedule_is_recorded(translator_setup):
    cfg, *_, report = translator_setup
    logged = dict(report.series["lr"])
    for epoch in range(1, cfg.tr_epochs + 1):
        assert logged[epoch] == lr_at(cfg.tr_lr, epoch)
    assert logged[1] == 2e-3 and logged[2] == 1e-3


def test_generator_total_decomposes_exactly(translator_setup):
    """The recorded overall generator loss must equal the recorded parts
    under the configured weighting, with no floating slack."""
    cfg, *_, report = translator_setup
    xy = dict(report.series["gen_xy"])
    yx = dict(report.series["gen_yx"])
    cyc = dict(report.series["cycle"])
    for epoch, total in report.series["gen_overall"]:
        assert total == xy[epoch] + yx[epoch] + cfg.beta * cyc[epoch]


def test_translator_resume_is_bit_identical(translator_setup):
    cfg, codes_x, codes_y, models_full, _, _ = translator_setup

    cfg1 = tiny_cfg(tr_epochs=1)
    models_h, (opt_t, opt_c), _ = tr.train_translators(codes_x, codes_y, cfg1)
    snap = tr.tr_state(models_h, opt_t, opt_c, epoch=1)

    models_r, opt_states, epoch = tr.load_tr_state(snap, cfg)
    assert epoch == 1
    models_r, _, _ = tr.train_translators(
        codes_x, codes_y, cfg, models=models_r, opt_states=opt_states, start_epoch=epoch
    )
    for full, resumed in zip(models_full, models_r):
        for k in full.params:
            np.testing.assert_array_equal(full.params[k].data, resumed.params[k].data)
        for k in full.buffers:
            np.testing.assert_array_equal(full.buffers[k], resumed.buffers[k])


def test_run_translation_shapes(ae_setup, translator_setup):
    clouds, cfg, enc, dec, *_ = ae_setup
    _, _, _, models, _, _ = translator_setup
    txy = models[0]
    out = tr.run_translation(enc, dec, txy, clouds[:3], cfg, name="txy")
    dims = cfg.dims()
    assert out.shape == (3, dims.n_points, dims.dim)
    assert out.dtype == np.float64


def test_upsampler_trains_and_respects_bound(ae_setup):
    clouds, cfg, enc, dec, *_ = ae_setup
    dense = np.stack(
        [
            ld.sample_shape_dense(
                ld.draw_params(ld.SyntheticSpec("crosses", count=8, seed=1), i),
                128 * 4,
                rng_for(1, "crosses", i, "dense"),
            )
            for i in range(8)
        ]
    )
    cfg_up = tiny_cfg(dense_factor=4)
    up, opt, report = tr.train_upsampler(clouds, dense, enc, dec, cfg_up)
    losses = [v for _, v in report.series["loss"]]
    assert len(losses) == cfg_up.up_epochs
    # on a barely-trained base decoder the loss level is dominated by the
    # reconstruction gap, so only sanity is asserted here; the acceptance
    # run checks the trained behavior
    assert all(np.isfinite(v) and v > 0 for v in losses)

    models = tr.init_translation_models(cfg_up)
    out = tr.run_translation(enc, dec, models[0], clouds[:2], cfg_up, name="txy", upsampler=up)
    dims = cfg_up.dims()
    assert out.shape == (2, dims.n_points * dims.up_factor, dims.dim)
    base = tr.run_translation(enc, dec, models[0], clouds[:2], cfg_up, name="txy")
    disp = out.reshape(2, dims.n_points, dims.up_factor, dims.dim) - base[:, :, None, :]
    assert np.abs(disp).max() <= 0.05


def test_upsampler_resume_is_bit_identical(ae_setup):
    clouds, _, enc, dec, *_ = ae_setup
    dense = np.stack(
        [
            ld.sample_shape_dense(
                ld.draw_params(ld.SyntheticSpec("crosses", count=8, seed=1), i),
                128 * 4,
                rng_for(1, "crosses", i, "dense"),
            )
            for i in range(8)
        ]
    )
    cfg2 = tiny_cfg(up_epochs=2, dense_factor=4)
    up_full, _, _ = tr.train_upsampler(clouds, dense, enc, dec, cfg2)

    cfg1 = tiny_cfg(up_epochs=1, dense_factor=4)
    up_h, opt_h, _ = tr.train_upsampler(clouds, dense, enc, dec, cfg1)
    snap = tr.up_state(up_h, opt_h, epoch=1)
    up_r, opt_state, epoch = tr.load_up_state(snap, cfg2)
    up_r, _, _ = tr.train_upsampler(clouds, dense, enc, dec, cfg2, up=up_r, opt_state=opt_state, start_epoch=epoch)
    for k in up_full.params:
        np.testing.assert_array_equal(up_full.params[k].data, up_r.params[k].data)


def test_build_plans_is_seed_stable(ae_setup):
    clouds, cfg, *_ = ae_setup
    dims = cfg.dims()
    p1 = tr.build_plans(clouds, dims, cfg.seed)
    p2 = tr.build_plans(clouds, dims, cfg.seed)
    for a, b in zip(p1, p2):
        for (c1, g1), (c2, g2) in zip(a, b):
            np.testing.assert_array_equal(c1, c2)
            np.testing.assert_array_equal(g1, g2)
