import math

import numpy as np
import pytest
import torch

from stylerepair.data import make_shapes_dataset
from stylerepair.errors import ConfigurationError, DivergenceError, ValidationError
from stylerepair.failures import collect_failures
from stylerepair.models import ArchitectureSpec, build, parameter_digest
from stylerepair.sampling import build_sampler, uniform_distribution
from stylerepair.training import (TrainConfig, js_divergence, js_loss, mean_loss, repair,
                                  train_base, train_val_split)


def test_js_closed_forms():
    p = np.array([0.2, 0.3, 0.5])
    assert js_divergence(p, p, p) == pytest.approx(0.0, abs=1e-12)
    assert js_divergence([1, 0], [0, 1], [0.5, 0.5]) == pytest.approx(2 * math.log(2) / 3, abs=1e-9)
    eye = np.eye(3)
    assert js_divergence(eye[0], eye[1], eye[2]) == pytest.approx(math.log(3), abs=1e-9)


def test_js_rejects_non_distributions():
    with pytest.raises(ValidationError):
        js_divergence([0.5, 0.6], [0.5, 0.5], [0.5, 0.5])


def test_torch_js_matches_numpy():
    z = torch.randn(3, 6, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    probs = torch.softmax(z, dim=2).numpy()
    expected = js_divergence(probs[0], probs[1], probs[2]).mean()
    assert js_loss(z[0], z[1], z[2]).item() == pytest.approx(expected, abs=1e-10)


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.learning_rate, cfg.weight_decay, cfg.early_stop_patience,
            cfg.max_epochs) == (128, 0.1, 5e-4, 10, 500)
    assert (cfg.lam, cfg.M, cfg.alpha) == (12.0, 3, 1.0)


def test_config_dict_round_trip():
    cfg = TrainConfig.from_dict({"lambda": 3.0, "max_epochs": 2})
    assert cfg.lam == 3.0 and TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"lr": 0.1})
    with pytest.raises(ValidationError):
        TrainConfig(method="dropout")


def test_train_val_split_is_disjoint_and_seeded():
    ds = make_shapes_dataset(50, seed=0)
    fit, val = train_val_split(ds, 0.1, 3)
    assert len(val) == 5 and len(fit) == 45
    assert not set(fit.meta["indices"]) & set(val.meta["indices"])


def test_base_training_loss_decreases():
    data = make_shapes_dataset(2000, seed=21)
    cfg = TrainConfig(max_epochs=5, seed=0)
    handle = build(ArchitectureSpec("tiny"), cfg.seed)
    initial, _ = mean_loss(handle, data)
    handle, tlog = train_base(handle, data, cfg)
    losses = [initial] + [e["train_loss"] for e in tlog.epochs]
    assert sum(b < a for a, b in zip(losses, losses[1:])) >= 4


def test_base_training_is_reproducible_and_zero_epochs_is_a_no_op():
    data = make_shapes_dataset(128, seed=2)
    cfg = TrainConfig(max_epochs=1, batch_size=32, seed=5)
    a, _ = train_base(ArchitectureSpec("tiny", width=8), data, cfg)
    b, _ = train_base(ArchitectureSpec("tiny", width=8), data, cfg)
    assert parameter_digest(a.net) == parameter_digest(b.net)
    fresh = build(ArchitectureSpec("tiny", width=8), 5)
    c, _ = train_base(ArchitectureSpec("tiny", width=8), data, TrainConfig(max_epochs=0, seed=5))
    assert parameter_digest(c.net) == parameter_digest(fresh.net)


@pytest.fixture(scope="module")
def small_repair_setup():
    train = make_shapes_dataset(160, seed=3)
    corrupted = make_shapes_dataset(80, seed=4)
    model = build(ArchitectureSpec("tiny", width=8), seed=0)
    split = collect_failures(model, corrupted, 20, seed=0, kind="GN")
    return model, train, split


def _cfg(**kw):
    return TrainConfig(**{"max_epochs": 1, "batch_size": 32, "seed": 0, **kw})


def test_repair_is_reproducible_and_leaves_source_untouched(small_repair_setup):
    model, train, split = small_repair_setup
    before = parameter_digest(model.net)
    sampler = build_sampler(split.guidance, "clustering", 3)
    a, log_a = repair(model, train, split, sampler, _cfg())
    b, _ = repair(model, train, split, sampler, _cfg())
    assert parameter_digest(a.net) == parameter_digest(b.net) != before
    assert parameter_digest(model.net) == before
    assert a.metadata["source_model"] == model.model_id
    entry = log_a.epochs[0]
    assert entry["decomposition_gap"] < 1e-4
    assert entry["total_loss"] == pytest.approx(entry["task_loss"] + 12 * entry["js_loss"], rel=1e-5)


def test_zero_lambda_without_style_is_plain_cross_entropy(small_repair_setup):
    model, train, split = small_repair_setup
    _, tlog = repair(model, train, split, None, _cfg(lam=0.0, style_enabled=False))
    e = tlog.epochs[0]
    assert e["total_loss"] == pytest.approx(e["task_loss"], abs=1e-12)


def test_sampler_must_match_guidance(small_repair_setup):
    model, train, split = small_repair_setup
    with pytest.raises(ConfigurationError):
        repair(model, train, split, uniform_distribution(len(split.guidance) + 1), _cfg())
    with pytest.raises(ConfigurationError):
        repair(model, train, split, None, _cfg())


@pytest.mark.parametrize("method", ["augmix", "plain", "cutout", "mixup", "cutmix"])
def test_baselines_run(small_repair_setup, method):
    model, train, split = small_repair_setup
    handle, tlog = repair(model, train, split, None, _cfg(method=method))
    assert np.isfinite(tlog.epochs[0]["total_loss"])
    assert handle.metadata["method"] == method


def test_early_stopping_restores_best(small_repair_setup):
    model, train, split = small_repair_setup
    handle, tlog = repair(model, train, split, None,
                          _cfg(method="plain", max_epochs=6, early_stop_patience=1, learning_rate=0.5))
    vals = [e["val_loss"] for e in tlog.epochs]
    assert tlog.best_epoch == 1 + int(np.argmin(vals))
    if tlog.stop_reason == "early_stop":
        assert len(vals) < 6 and vals[-1] >= min(vals)
    fit_val = train_val_split(train, 0.1, 0)[1]
    assert mean_loss(handle, fit_val)[0] == pytest.approx(min(vals), rel=1e-5)


def test_divergence_is_reported(small_repair_setup):
    model, train, split = small_repair_setup
    with pytest.raises(DivergenceError):
        repair(model, train, split, None, _cfg(method="plain", learning_rate=1e30, max_epochs=3))
