import numpy as np
import pytest

from uncseg.errors import ConfigError, UsageError
from uncseg.labelspace import builtin_schema
from uncseg.synthdata import PhantomConfig, generate_dataset
from uncseg.trainer import TrainConfig, TrainState, adam_update, fit, lr_at
from uncseg.voxvol import Dims

SMALL = dict(
    epochs=2, train_batches_per_epoch=2, val_batches_per_epoch=1, batch_size=2,
    patch_dims=(16, 16, 16), depth=2, base_width=2, seed=4,
)


@pytest.fixture(scope="module")
def small_data():
    cfg = PhantomConfig(dims=Dims(16, 16, 16), tumor_radius_range=(2.0, 3.0), seed=1)
    return generate_dataset(cfg, 6, 0.34)


def test_lr_schedule():
    cfg = TrainConfig(epochs=10, lr_start=0.01)
    assert lr_at(0, cfg) == 0.01
    assert lr_at(5, cfg) == pytest.approx(0.005)
    assert lr_at(10, cfg) == 0.0
    with pytest.raises(UsageError):
        lr_at(11, cfg)


def test_adam_first_step_oracle():
    # first bias-corrected step moves each weight by lr * g / (|g| + eps)
    p = np.array([1.0, -2.0])
    g = np.array([0.5, -4.0])
    new, m, v = adam_update(p, g, np.zeros(2), np.zeros(2), 1, 0.1)
    assert np.allclose(new, p - 0.1 * g / (np.abs(g) + 1e-8))
    assert np.allclose(m, 0.1 * g) and np.allclose(v, 0.001 * g * g)


def test_config_json_roundtrip_and_errors():
    cfg = TrainConfig(run_kind="UM2", lr_start=0.5, patch_dims=(16, 16, 16))
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    assert "lambda-rmsd" in cfg.to_json()
    with pytest.raises(ConfigError):
        TrainConfig.from_json({"run-kind": "XX"})
    with pytest.raises(ConfigError):
        TrainConfig.from_json({"epochs": 0})


def test_cm2_zeroes_uncertainty_weights():
    assert TrainConfig(run_kind="CM2").effective_weights.lambda_rmsd == 0
    assert TrainConfig(run_kind="CM1").effective_weights.lambda_corr == 0.01


def test_schema_mismatch_is_config_error(small_data):
    train, val = small_data
    with pytest.raises(ConfigError):
        fit(TrainConfig(run_kind="UM1", **SMALL), train, val, builtin_schema("CM"))


def test_one_epoch_one_checkpoint(small_data, tmp_path):
    train, val = small_data
    cfg = TrainConfig(**{**SMALL, "epochs": 1, "train_batches_per_epoch": 1})
    state, _ = fit(cfg, train, val, builtin_schema("CM"), out_dir=tmp_path)
    assert state.step == 1
    assert [p.name for p in (tmp_path / "checkpoints").iterdir()] == ["epoch_001"]
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("epoch,lr,dce,rmsd,corr,total,dsc_whole_tumor")
    assert (tmp_path / "summary.json").exists()


def test_same_seed_same_metrics(small_data, tmp_path):
    train, val = small_data
    cfg = TrainConfig(**SMALL)
    fit(cfg, train, val, builtin_schema("CM"), out_dir=tmp_path / "a")
    fit(cfg, train, val, builtin_schema("CM"), out_dir=tmp_path / "b")
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()


def test_resume_is_bit_exact(small_data, tmp_path):
    train, val = small_data
    schema = builtin_schema("CM")
    cfg = TrainConfig(**{**SMALL, "epochs": 3})
    full, _ = fit(cfg, train, val, schema, out_dir=tmp_path / "full")
    mid = TrainState.load(tmp_path / "full/checkpoints/epoch_001")
    resumed, _ = fit(cfg, train, val, schema, out_dir=tmp_path / "resumed", state=mid)
    for name in full.params.names():
        assert np.array_equal(full.params.tensors[name], resumed.params.tensors[name]), name
    assert full.history == resumed.history


def test_target_refresh_per_epoch_runs(small_data):
    train, val = small_data
    cfg = TrainConfig(**{**SMALL, "epochs": 1, "target_refresh": "epoch"})
    state, summary = fit(cfg, train, val, builtin_schema("CM"))
    assert summary.epochs_used == 1 and np.isfinite(state.history[0]["total"])


def test_overlapping_splits_rejected(small_data):
    train, _ = small_data
    with pytest.raises(ConfigError):
        fit(TrainConfig(**SMALL), train, train[:1], builtin_schema("CM"))
