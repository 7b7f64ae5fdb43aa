import numpy as np
import pytest

from gsdnet.data import ShapesSpec, corrupt_manifest, generate_dataset
from gsdnet.formats import read_manifest, write_manifest
from gsdnet.model import init_params
from gsdnet.trainer import (
    MODES,
    Dataset,
    TrainConfig,
    build_plan,
    evaluate,
    init_state,
    load_checkpoint,
    load_config,
    load_dataset,
    loss_and_grads,
    parse_kv,
    resolve_tau,
    sgd_step,
    train,
    train_epoch,
)
from gsdnet.validation import make_rng


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    """Four 16x16 train images with carving noise, two test images."""
    root = tmp_path_factory.mktemp("tinydata")
    spec = ShapesSpec(n_train=4, n_test=2, image_size=16, fg_min=0.08,
                      fg_max=0.35, seed=7)
    manifest = generate_dataset(spec, root)
    entries = read_manifest(manifest)
    out = corrupt_manifest(manifest, entries, kind="S_R", strength=0.06, seed=2,
                           walk_step=2)
    write_manifest(manifest, out)
    return load_dataset(manifest)


def tiny_cfg(**kw):
    base = dict(mode="jocor", epochs=2, batch_size=4, features=4,
                learning_rate=2e-3, slic_segments=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_config_mapping_round_trip():
    cfg = tiny_cfg(mode="gsd", kt_foreground_bias=False, momentum=0.5)
    back = TrainConfig.from_mapping(cfg.to_mapping())
    assert back == cfg


def test_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown config key"):
        TrainConfig.from_mapping({"not_a_key": "1"})


def test_config_bool_parsing():
    m = tiny_cfg().to_mapping()
    m["slic_connectivity"] = "false"
    assert TrainConfig.from_mapping(m).slic_connectivity is False
    m["slic_connectivity"] = "yes"
    assert TrainConfig.from_mapping(m).slic_connectivity is True
    m["slic_connectivity"] = "maybe"
    with pytest.raises(ValueError):
        TrainConfig.from_mapping(m)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="nope")
    with pytest.raises(ValueError):
        TrainConfig(num_classes=3)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(tau=1.0)


def test_parse_kv():
    text = "mode = jocor  # pick a mode\n\n# full-line comment\nepochs=3\n"
    assert parse_kv(text) == {"mode": "jocor", "epochs": "3"}
    with pytest.raises(ValueError, match="key=value"):
        parse_kv("just words\n")


def test_load_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("mode = ce_baseline\nepochs = 5\nlearning_rate = 0.01\n")
    cfg = load_config(p)
    assert cfg.mode == "ce_baseline"
    assert cfg.epochs == 5
    assert cfg.learning_rate == 0.01


def synthetic_dataset(noise_pixels=8):
    rng = make_rng(42)
    imgs, noisy, clean = [], [], []
    for _ in range(2):
        img = rng.random((16, 16))
        c = np.zeros((16, 16), dtype=np.int64)
        c[4:12, 4:12] = 1
        n = c.copy()
        flat = rng.choice(256, size=noise_pixels, replace=False)
        n.ravel()[flat] = 1 - n.ravel()[flat]
        imgs.append(img)
        noisy.append(n)
        clean.append(c)
    return Dataset(imgs, noisy, clean, [], [])


def test_resolve_tau_measured():
    data = synthetic_dataset(noise_pixels=8)
    cfg = tiny_cfg(tau_source="measured")
    assert np.isclose(resolve_tau(data, cfg), 8 / 256)


def test_resolve_tau_foreground():
    data = synthetic_dataset(noise_pixels=0)
    cfg = tiny_cfg(tau_source="foreground", tau_fg_scale=0.15)
    assert np.isclose(resolve_tau(data, cfg), 0.15 * 64 / 256)


def test_resolve_tau_fixed():
    data = synthetic_dataset()
    cfg = tiny_cfg(tau_source="fixed", tau=0.123)
    assert resolve_tau(data, cfg) == 0.123


def test_sgd_step_plain():
    params = init_params(make_rng(0), features=3)
    before = params.copy()
    grads = {k: np.ones_like(v) for k, v in params.layers.items()}
    cfg = tiny_cfg(learning_rate=0.1, weight_decay=0.0)
    sgd_step(params, grads, cfg)
    for name in params.layers:
        assert np.allclose(params.layers[name], before.layers[name] - 0.1)


def test_sgd_step_decoupled_decay():
    params = init_params(make_rng(1), features=3)
    before = params.copy()
    grads = {k: np.zeros_like(v) for k, v in params.layers.items()}
    cfg = tiny_cfg(learning_rate=0.5, weight_decay=0.01)
    sgd_step(params, grads, cfg)
    for name in params.layers:
        assert np.allclose(params.layers[name], before.layers[name] * (1 - 0.5 * 0.01))


def test_sgd_step_momentum_accumulates():
    params = init_params(make_rng(2), features=3)
    before = params.copy()
    grads = {k: np.ones_like(v) for k, v in params.layers.items()}
    cfg = tiny_cfg(learning_rate=0.1, weight_decay=0.0, momentum=0.5)
    vel = sgd_step(params, grads, cfg)
    vel = sgd_step(params, grads, cfg, vel)
    # steps: 1 then 1.5 -> total 0.25 at lr 0.1
    for name in params.layers:
        assert np.allclose(params.layers[name], before.layers[name] - 0.25)


def test_sgd_step_rejects_non_finite():
    params = init_params(make_rng(3), features=3)
    grads = {k: np.full_like(v, np.nan) for k, v in params.layers.items()}
    with pytest.raises(ValueError, match="non-finite"):
        sgd_step(params, grads, tiny_cfg())


@pytest.mark.parametrize("mode", MODES)
def test_all_modes_run(tiny_dataset, mode):
    cfg = tiny_cfg(mode=mode, epochs=2)
    result = train(tiny_dataset, cfg)
    assert len(result.rows) == 2
    for row in result.rows:
        assert np.isfinite(row.l_total)
        assert abs(row.l_total - (row.l_gda + row.l_kt + row.l_cor)) < 1e-9
        assert np.isfinite(row.test_dice)
    if mode in ("gsd", "ablation-5"):
        assert result.rows[-1].l_kt > 0.0
    else:
        assert all(r.l_kt == 0.0 for r in result.rows)
    if mode == "gsd":
        assert result.rows[-1].l_cor > 0.0


def test_ce_baseline_trains_single_network(tiny_dataset):
    cfg = tiny_cfg(mode="ce_baseline", epochs=1)
    result = train(tiny_dataset, cfg)
    fresh2 = init_params(make_rng(cfg.seed, 11), 1, 2, cfg.features)
    for name, arr in result.state.params2.layers.items():
        assert np.array_equal(arr, fresh2.layers[name])
    fresh1 = init_params(make_rng(cfg.seed, 10), 1, 2, cfg.features)
    assert any(not np.array_equal(result.state.params1.layers[n], fresh1.layers[n])
               for n in fresh1.layers)


def test_training_is_deterministic(tiny_dataset):
    cfg = tiny_cfg(mode="gsd", epochs=2)
    r1 = train(tiny_dataset, cfg)
    r2 = train(tiny_dataset, cfg)
    assert [r.to_csv() for r in r1.rows] == [r.to_csv() for r in r2.rows]
    for name, arr in r1.state.params1.layers.items():
        assert np.array_equal(arr, r2.state.params1.layers[name])


def test_different_seeds_differ(tiny_dataset):
    r1 = train(tiny_dataset, tiny_cfg(epochs=1, seed=0))
    r2 = train(tiny_dataset, tiny_cfg(epochs=1, seed=1))
    assert r1.rows[0].test_dice != r2.rows[0].test_dice


def test_jocor_equals_weighting_at_unit_cap(tiny_dataset):
    """With the weight cap at its floor every weight is exactly 1, so the
    weighted mode must reproduce the plain co-training run bit for bit."""
    r_joc = train(tiny_dataset, tiny_cfg(mode="jocor", epochs=2))
    r_ab2 = train(tiny_dataset, tiny_cfg(mode="ablation-2", epochs=2, weight_cap=1.0))
    for a, b in zip(r_joc.rows, r_ab2.rows):
        assert a.l_gda == b.l_gda
        assert a.test_dice == b.test_dice
    for name, arr in r_joc.state.params1.layers.items():
        assert np.array_equal(arr, r_ab2.state.params1.layers[name])


def test_selection_schedule_shows_in_rows(tiny_dataset):
    cfg = tiny_cfg(mode="jocor", epochs=3, warmup_epochs=2, tau_source="fixed", tau=0.2)
    result = train(tiny_dataset, cfg)
    fracs = [r.clean_fraction for r in result.rows]
    assert fracs[0] == 1.0  # epoch 0 keeps everything
    assert np.isclose(fracs[1], 0.9)
    assert np.isclose(fracs[2], 0.8)


def test_checkpoint_resume_bit_exact(tiny_dataset, tmp_path):
    cfg = tiny_cfg(mode="gsd", epochs=4, checkpoint_every=2)
    full = train(tiny_dataset, cfg, out_dir=tmp_path / "full")
    ckpt = tmp_path / "full" / "ckpt_e2"
    assert ckpt.is_dir()
    resumed = train(tiny_dataset, cfg, out_dir=tmp_path / "resumed", resume=ckpt)
    assert [r.to_csv() for r in resumed.rows] == [r.to_csv() for r in full.rows]
    for name, arr in full.state.params1.layers.items():
        assert np.array_equal(arr, resumed.state.params1.layers[name])
    for name, arr in full.state.params2.layers.items():
        assert np.array_equal(arr, resumed.state.params2.layers[name])
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == \
        (tmp_path / "resumed" / "metrics.csv").read_bytes()


def test_checkpoint_rejects_mismatched_config(tiny_dataset, tmp_path):
    cfg = tiny_cfg(mode="jocor", epochs=1)
    train(tiny_dataset, cfg, out_dir=tmp_path)
    other = tiny_cfg(mode="gsd", epochs=1)
    with pytest.raises(ValueError, match="mode"):
        load_checkpoint(tmp_path / "ckpt_final", tiny_dataset, other)


def test_transfer_needs_two_images():
    data = synthetic_dataset()
    data = Dataset(data.train_images[:1], data.train_noisy[:1],
                   data.train_clean[:1], [], [])
    cfg = tiny_cfg(mode="gsd", batch_size=1, epochs=1)
    state = init_state(data, cfg)
    with pytest.raises(ValueError, match="at least 2"):
        train_epoch(state, data, cfg)


def test_evaluate_without_test_split():
    data = synthetic_dataset()
    cfg = tiny_cfg(mode="jocor", epochs=1)
    state = init_state(data, cfg)
    assert np.isnan(evaluate(state, data, cfg))


def test_plan_freezes_loss(tiny_dataset):
    """loss_and_grads must be a pure function of (params, plan)."""
    cfg = tiny_cfg(mode="gsd", epochs=1)
    state = init_state(tiny_dataset, cfg)
    x = np.stack(tiny_dataset.train_images[:2])[..., None]
    ngt = np.stack(tiny_dataset.train_noisy[:2])
    plan = build_plan(state.params1, state.params2, x, ngt, cfg, 0, state.tau,
                      state.rng, raw_weights=state.raw_weights[:2],
                      segments=state.segments[:2])
    rep1, g1, _ = loss_and_grads(state.params1, state.params2, plan)
    rep2, g2, _ = loss_and_grads(state.params1, state.params2, plan)
    assert rep1 == rep2
    for name in g1:
        assert np.array_equal(g1[name], g2[name])


def test_loss_report_epoch_values_reasonable(tiny_dataset):
    result = train(tiny_dataset, tiny_cfg(mode="ablation-2", epochs=2))
    for row in result.rows:
        assert 0.0 < row.l_gda < 50.0
        assert 0.0 <= row.test_dice <= 100.0
