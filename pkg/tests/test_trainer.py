import numpy as np
import pytest

from hybridfb.arch import QuantMode, QuantPlan, build_tinynet
from hybridfb.network import instantiate
from hybridfb.spn import LifecycleState
from hybridfb.tensor import parameter
from hybridfb.train.checkpoint import load_checkpoint
from hybridfb.train.data import SyntheticSpec, generate_synthetic
from hybridfb.train.trainer import (ConfigError, DistillConfig, PhaseConfig, TrainConfig, TrainingDiverged,
                                    distillation_loss, read_metrics_log, train)
import hybridfb.functional as F

SPEC = build_tinynet(10)
HYB = QuantPlan(QuantMode.HYBRID, alpha=0.5, rho=1.0)


@pytest.fixture(scope="module")
def ds():
    return generate_synthetic(SyntheticSpec(n_train=48, n_eval=16), 0)


def small_config(**kw):
    phases = [PhaseConfig("FP_TRAIN", 2, 0.2, 1), PhaseConfig("QUANT_ACTIVE", 1, 0.02),
              PhaseConfig("FROZEN", 1, 0.002)]
    return TrainConfig(phases=phases, batch_size=16, seed=kw.pop("seed", 0), **kw)


def _drop_header(path):
    return read_metrics_log(path)[1]


def test_three_phases_and_checkpoints(tmp_path, ds):
    res = train(instantiate(SPEC, HYB, 0), ds, small_config(), checkpoint_dir=tmp_path, log_path=tmp_path / "m.jsonl")
    assert res.completed and [m["phase"] for m in res.metrics] == ["FP_TRAIN"] * 2 + ["QUANT_ACTIVE", "FROZEN"]
    assert sorted(p.name for p in tmp_path.glob("*.ckpt")) == [
        "phase1_FP_TRAIN.ckpt", "phase2_QUANT_ACTIVE.ckpt", "phase3_FROZEN.ckpt"]
    assert res.network.phase is LifecycleState.FROZEN_TERNARY
    assert load_checkpoint(tmp_path / "phase1_FP_TRAIN.ckpt").network.phase is LifecycleState.FULL_PRECISION
    header, records = read_metrics_log(tmp_path / "m.jsonl")
    assert "timestamp" in header and len(records) == 4


def test_deterministic(ds):
    a = train(instantiate(SPEC, HYB, 1), ds, small_config(seed=1))
    b = train(instantiate(SPEC, HYB, 1), ds, small_config(seed=1))
    assert a.metrics == b.metrics


@pytest.mark.parametrize("stop", [1, 2, 3])
def test_resume_reproduces_uninterrupted_run(tmp_path, ds, stop):
    full = train(instantiate(SPEC, HYB, 0), ds, small_config(), checkpoint_dir=tmp_path / "a",
                 log_path=tmp_path / "a.jsonl")
    part = train(instantiate(SPEC, HYB, 0), ds, small_config(), checkpoint_dir=tmp_path / "b",
                 checkpoint_every_epoch=True, stop_after_epochs=stop)
    assert not part.completed
    resumed = train(None, ds, small_config(), resume=load_checkpoint(tmp_path / "b" / "last.ckpt"),
                    checkpoint_dir=tmp_path / "b", log_path=tmp_path / "b.jsonl")
    assert resumed.metrics == full.metrics
    assert _drop_header(tmp_path / "a.jsonl") == _drop_header(tmp_path / "b.jsonl")
    assert (tmp_path / "a" / "phase3_FROZEN.ckpt").read_bytes() == (tmp_path / "b" / "phase3_FROZEN.ckpt").read_bytes()


def test_distillation_weight_zero_matches_plain(ds):
    plain = train(instantiate(SPEC, HYB, 0), ds, small_config())
    zero = train(instantiate(SPEC, HYB, 0), ds, small_config(distillation=DistillConfig(True, 4.0, 0.0)))
    assert plain.metrics == zero.metrics
    assert zero.teacher is not None


def test_distillation_changes_trajectory(ds):
    plain = train(instantiate(SPEC, HYB, 0), ds, small_config())
    kd = train(instantiate(SPEC, HYB, 0), ds, small_config(distillation=DistillConfig(True, 4.0, 0.5)))
    assert plain.metrics[:2] == kd.metrics[:2]  # teacher only exists after FP_TRAIN
    assert plain.metrics[2:] != kd.metrics[2:]


def test_distillation_loss_values():
    logits = parameter(np.array([[2.0, 0.0, -1.0]]), dtype=np.float64)
    ce = F.softmax_cross_entropy(logits, np.array([0])).data
    assert distillation_loss(logits, logits.data, np.array([0]), 4.0, 0.0).data == ce
    # identical teacher: KL term vanishes
    np.testing.assert_allclose(distillation_loss(logits, logits.data, np.array([0]), 4.0, 1.0).data, 0.0,
                               atol=1e-12)
    with pytest.raises(ValueError):
        distillation_loss(logits, np.zeros((2, 3)), np.array([0]))


def test_divergence_raises(ds):
    cfg = TrainConfig(phases=[PhaseConfig("FP_TRAIN", 1, 1e30)], batch_size=16)
    with pytest.raises(TrainingDiverged):
        train(instantiate(SPEC, QuantPlan(), 0), ds, cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        PhaseConfig("WARMUP", 1, 0.1)
    with pytest.raises(ConfigError):
        PhaseConfig("FP_TRAIN", 2, 0.1, warmup_epochs=2)
    with pytest.raises(ConfigError):
        TrainConfig(phases=[PhaseConfig("FROZEN", 1, 0.1), PhaseConfig("FP_TRAIN", 1, 0.1)])
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"nope": 1})
    cfg = TrainConfig.from_dict({"batch_size": 128})
    assert cfg.effective_lr(cfg.phases[0]) == pytest.approx(0.1)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_cannot_restart_frozen_network(ds):
    net = instantiate(SPEC, HYB, 0)
    net.set_phase(LifecycleState.FROZEN_TERNARY)
    with pytest.raises(ConfigError):
        train(net, ds, small_config())


def test_clip_grad_norm():
    from hybridfb.train.trainer import clip_grad_norm
    g = [np.array([3.0, 0.0]), None, np.array([[4.0]])]
    assert clip_grad_norm(g, 10.0) is False and g[0][0] == 3.0
    assert clip_grad_norm(g, 1.0) is True
    np.testing.assert_allclose(np.sqrt((g[0] ** 2).sum() + (g[2] ** 2).sum()), 1.0)
    assert clip_grad_norm(g, None) is False
    with pytest.raises(ConfigError):
        TrainConfig(grad_clip=0.0)
