"""Base training and style-guided repair fine-tuning.

Repair minimises, per batch of clean images ``X`` with labels ``y``,

    CE(f(X), y) + lambda * JS(f(X), f(X_aug1), f(X_aug2))

where the two augmented views come from independent :func:`style_aug` draws
and JS is the three-way Jensen-Shannon divergence of the softmax outputs.
"""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
import torch.nn.functional as F

from .augment import build_operation_set, cutmix, cutout, mixup, sample_rng, style_aug
from .data import LabelledDataset, concat
from .errors import ConfigurationError, DivergenceError, ValidationError
from .models import ModelHandle, build, parameter_digest, save_checkpoint, to_nchw

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
METHODS = ("stylerepair", "augmix", "plain", "cutout", "mixup", "cutmix")


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 0.1
    weight_decay: float = 5e-4
    momentum: float = 0.9
    max_epochs: int = 500
    early_stop_patience: int = 10
    lam: float = 12.0
    alpha: float = 1.0
    M: int = 3
    seed: int = 0
    val_fraction: float = 0.1
    method: str = "stylerepair"
    crop_flip: bool = True
    # add the guidance failures to the repair training data (baselines always do)
    include_guidance: bool = False
    style_enabled: bool = True
    fixed_references: bool = False
    n_style: int = 5
    cutout_size: int = 16
    mix_alpha: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate <= 0 or self.M < 1 or self.alpha <= 0:
            raise ValidationError("batch_size, learning_rate, M and alpha must be positive")
        if min(self.weight_decay, self.momentum, self.lam, self.max_epochs,
               self.early_stop_patience) < 0:
            raise ValidationError("weight_decay, momentum, lambda, max_epochs and patience must be >= 0")
        if not 0 < self.val_fraction <= 0.5:
            raise ValidationError(f"val_fraction must be in (0, 0.5], got {self.val_fraction}")
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    seconds: float = 0.0

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# Jensen-Shannon divergence

def _check_simplex(*ps):
    for p in ps:
        if (p < 0).any() or (np.abs(p.sum(-1) - 1.0) > 1e-6).any():
            raise ValidationError("inputs must be probability vectors (non-negative, summing to 1)")


def _kl(a, m):
    safe_a = np.maximum(a, PROB_FLOOR)
    return np.where(a > 0, a * (np.log(safe_a) - np.log(np.maximum(m, PROB_FLOOR))), 0.0).sum(-1)


def js_divergence(p, p1, p2):
    """Three-way Jensen-Shannon divergence, in nats, along the last axis."""
    p, p1, p2 = (np.asarray(a, dtype=np.float64) for a in (p, p1, p2))
    _check_simplex(p, p1, p2)
    m = (p + p1 + p2) / 3.0
    return (_kl(p, m) + _kl(p1, m) + _kl(p2, m)) / 3.0


def js_loss(logits_clean, logits_aug1, logits_aug2):
    """Batch-mean JS divergence between the softmax outputs of three views."""
    logps = [F.log_softmax(z, dim=1) for z in (logits_clean, logits_aug1, logits_aug2)]
    ps = [lp.exp() for lp in logps]
    log_m = torch.log(torch.clamp((ps[0] + ps[1] + ps[2]) / 3.0, min=PROB_FLOOR))
    kls = [(p * (lp - log_m)).sum(1) for p, lp in zip(ps, logps)]
    return ((kls[0] + kls[1] + kls[2]) / 3.0).mean()


def consistency_loss(net, x, x_aug1, x_aug2, y, lam):
    """Returns ``(total, task, js)``; one forward pass over the three stacked views."""
    n = x.shape[0]
    logits = net(torch.cat([x, x_aug1, x_aug2]))
    z0, z1, z2 = logits[:n], logits[n:2 * n], logits[2 * n:]
    task = F.cross_entropy(z0, y)
    js = js_loss(z0, z1, z2)
    return task + lam * js, task, js


def soft_cross_entropy(logits, targets):
    return -(targets * F.log_softmax(logits, dim=1)).sum(1).mean()


# ---------------------------------------------------------------------------
# data helpers

def crop_flip(x, rng, pad=4):
    """Random ``pad``-pixel zero-padded crop and horizontal flip of one image."""
    h, w = x.shape[:2]
    padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    dy, dx = rng.integers(0, 2 * pad + 1, size=2)
    out = padded[dy:dy + h, dx:dx + w]
    if rng.uniform() < 0.5:
        out = out[:, ::-1]
    return np.ascontiguousarray(out, dtype=np.float32)


def train_val_split(dataset: LabelledDataset, val_fraction, seed):
    rng = np.random.default_rng([seed, 0x5EED])
    perm = rng.permutation(len(dataset))
    n_val = max(1, int(round(val_fraction * len(dataset))))
    return (dataset.subset(np.sort(perm[n_val:]), f"{dataset.name}-train"),
            dataset.subset(np.sort(perm[:n_val]), f"{dataset.name}-val"))


@torch.no_grad()
def mean_loss(handle: ModelHandle, dataset: LabelledDataset, batch_size=500):
    """Mean clean cross-entropy and top-1 accuracy."""
    handle.net.eval()
    total, correct = 0.0, 0
    for i in range(0, len(dataset), batch_size):
        xb = to_nchw(dataset.images[i:i + batch_size])
        yb = torch.from_numpy(np.array(dataset.labels[i:i + batch_size]))
        z = handle.net(xb)
        total += F.cross_entropy(z, yb, reduction="sum").item()
        correct += int((z.argmax(1) == yb).sum())
    return total / len(dataset), correct / len(dataset)


def _optimizer(net, config):
    return torch.optim.SGD(net.parameters(), lr=config.learning_rate, momentum=config.momentum,
                           weight_decay=config.weight_decay, nesterov=False)


def _finite(value, epoch, step):
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, step {step}")


# ---------------------------------------------------------------------------
# base training

def train_base(arch, train_set: LabelledDataset, config: TrainConfig, eval_set=None,
               checkpoint_path=None):
    """Supervised training from scratch; keeps the epoch with best ``eval_set`` accuracy.

    ``arch`` is an :class:`ArchitectureSpec` or an already built handle.
    Returns ``(handle, TrainingLog)``.
    """
    handle = arch if isinstance(arch, ModelHandle) else build(arch, config.seed)
    if handle.num_classes != train_set.num_classes:
        raise ConfigurationError(
            f"model has {handle.num_classes} outputs, training set {train_set.num_classes} classes")
    torch.manual_seed(config.seed)
    opt = _optimizer(handle.net, config)
    tlog = TrainingLog(stop_reason="max_epochs")
    best_acc, best_state = -1.0, None
    t0 = time.time()
    for epoch in range(1, config.max_epochs + 1):
        handle.net.train()
        perm = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
        running, seen = 0.0, 0
        for step, start in enumerate(range(0, len(perm), config.batch_size)):
            idx = perm[start:start + config.batch_size]
            xs = train_set.images[idx]
            if config.crop_flip:
                xs = np.stack([crop_flip(xs[k], sample_rng(config.seed, epoch, i, 0))
                               for k, i in enumerate(idx)])
            loss = F.cross_entropy(handle.net(to_nchw(xs)),
                                   torch.from_numpy(np.array(train_set.labels[idx])))
            _finite(loss.item(), epoch, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * len(idx)
            seen += len(idx)
        entry = {"epoch": epoch, "train_loss": running / seen}
        if eval_set is not None:
            entry["eval_loss"], entry["eval_acc"] = mean_loss(handle, eval_set)
            if entry["eval_acc"] > best_acc:
                best_acc, best_state = entry["eval_acc"], copy.deepcopy(handle.net.state_dict())
                tlog.best_epoch = epoch
        tlog.epochs.append(entry)
        log.info("base epoch %d: %s", epoch, entry)
    if best_state is not None:
        handle.net.load_state_dict(best_state)
    elif config.max_epochs:
        tlog.best_epoch = config.max_epochs
    tlog.seconds = time.time() - t0
    handle.metadata.update(epoch=tlog.best_epoch, seed=config.seed, model_id=parameter_digest(handle.net))
    if eval_set is not None and config.max_epochs:
        handle.metadata["clean_accuracy"] = best_acc
    if checkpoint_path:
        save_checkpoint(handle, checkpoint_path)
    return handle, tlog


# ---------------------------------------------------------------------------
# repair

def _augment_views(xs, idx, ops, config, epoch):
    clean, a1, a2 = [], [], []
    for k, i in enumerate(idx):
        x = xs[k]
        if config.crop_flip:
            x = crop_flip(x, sample_rng(config.seed, epoch, i, 0))
        clean.append(x)
        a1.append(style_aug(x, ops, sample_rng(config.seed, epoch, i, 1), config.M, config.alpha))
        a2.append(style_aug(x, ops, sample_rng(config.seed, epoch, i, 2), config.M, config.alpha))
    return np.stack(clean), np.stack(a1), np.stack(a2)


def _baseline_batch(xs, ys, idx, config, epoch, num_classes):
    rng = sample_rng(config.seed, epoch, int(idx[0]), 3)
    if config.crop_flip:
        xs = np.stack([crop_flip(xs[k], sample_rng(config.seed, epoch, i, 0)) for k, i in enumerate(idx)])
    if config.method == "cutout":
        xs = np.stack([cutout(x, config.cutout_size, sample_rng(config.seed, epoch, i, 4))
                       for x, i in zip(xs, idx)])
        return xs, None
    if config.method == "mixup":
        return mixup(xs, ys, config.mix_alpha, rng, num_classes)
    if config.method == "cutmix":
        return cutmix(xs, ys, config.mix_alpha, rng, num_classes)
    return xs, None


def repair(model: ModelHandle, train_set: LabelledDataset, split, sampler, config: TrainConfig,
           backend=None, checkpoint_path=None, progress=None):
    """Fine-tune a copy of ``model``; returns ``(repaired_handle, TrainingLog)``.

    ``split`` is the :class:`FailureSplit` whose guidance failures provide
    style references (``stylerepair``) or extra training data (baselines).
    ``sampler`` is the :class:`SamplingDistribution` fitted on that guidance
    set; it may be ``None`` for methods that do not use style operations.
    Training stops after ``max_epochs`` or when the clean validation loss has
    not improved for ``early_stop_patience`` epochs; the best-validation
    parameters are returned.
    """
    method = config.method
    uses_style = method == "stylerepair" and config.style_enabled
    if uses_style:
        if sampler is None:
            raise ConfigurationError("stylerepair with style operations needs a sampler")
        if len(sampler.probs) != len(split.guidance):
            raise ConfigurationError(
                f"sampler covers {len(sampler.probs)} samples but the guidance set has "
                f"{len(split.guidance)}; fit the sampler on this split")
    if model.num_classes != train_set.num_classes:
        raise ConfigurationError("model and training set disagree on the number of classes")

    fit_set, val_set = train_val_split(train_set, config.val_fraction, config.seed)
    if method != "stylerepair" or config.include_guidance:
        fit_set = concat([fit_set, split.guidance], name="train+guidance")
    uses_js = method in ("stylerepair", "augmix")
    ops = None
    if uses_js:
        ops = build_operation_set(split.guidance if uses_style else None,
                                  sampler if uses_style else None, backend,
                                  n_style=config.n_style,
                                  fixed_references=config.fixed_references,
                                  style_enabled=uses_style)

    handle = model.clone()
    torch.manual_seed(config.seed)
    opt = _optimizer(handle.net, config)
    tlog = TrainingLog(stop_reason="max_epochs")
    best_val, best_state, stale = np.inf, None, 0
    t0 = time.time()
    for epoch in range(1, config.max_epochs + 1):
        handle.net.train()
        perm = np.random.default_rng([config.seed, epoch, 1]).permutation(len(fit_set))
        sums = {"task": 0.0, "js": 0.0, "total": 0.0}
        seen, max_gap = 0, 0.0
        for step, start in enumerate(range(0, len(perm), config.batch_size)):
            idx = perm[start:start + config.batch_size]
            xs = fit_set.images[idx]
            ys = np.array(fit_set.labels[idx])
            y = torch.from_numpy(ys)
            if uses_js:
                x0, x1, x2 = _augment_views(xs, idx, ops, config, epoch)
                total, task, js = consistency_loss(handle.net, to_nchw(x0), to_nchw(x1),
                                                   to_nchw(x2), y, config.lam)
                js_v = js.item()
            else:
                xb, soft = _baseline_batch(xs, ys, idx, config, epoch, train_set.num_classes)
                logits = handle.net(to_nchw(xb))
                task = soft_cross_entropy(logits, torch.from_numpy(soft)) if soft is not None \
                    else F.cross_entropy(logits, y)
                total, js_v = task, 0.0
            total_v, task_v = total.item(), task.item()
            _finite(total_v, epoch, step)
            max_gap = max(max_gap, abs(total_v - (task_v + config.lam * js_v)) if uses_js else 0.0)
            opt.zero_grad()
            total.backward()
            opt.step()
            for key, v in (("task", task_v), ("js", js_v), ("total", total_v)):
                sums[key] += v * len(idx)
            seen += len(idx)
        val_loss, val_acc = mean_loss(handle, val_set)
        entry = {"epoch": epoch, "task_loss": sums["task"] / seen, "js_loss": sums["js"] / seen,
                 "total_loss": sums["total"] / seen, "val_loss": val_loss, "val_acc": val_acc,
                 "decomposition_gap": max_gap}
        tlog.epochs.append(entry)
        log.info("repair epoch %d: %s", epoch, entry)
        if progress:
            progress(entry)
        if val_loss < best_val:
            best_val, best_state, stale = val_loss, copy.deepcopy(handle.net.state_dict()), 0
            tlog.best_epoch = epoch
            if checkpoint_path:
                save_checkpoint(handle, checkpoint_path, epoch=epoch, seed=config.seed,
                                model_id=None, method=method)
        else:
            stale += 1
            if config.early_stop_patience and stale >= config.early_stop_patience:
                tlog.stop_reason = "early_stop"
                break
    if best_state is not None:
        handle.net.load_state_dict(best_state)
    tlog.seconds = time.time() - t0
    handle.metadata = dict(model.metadata)
    handle.metadata.update(epoch=tlog.best_epoch, seed=config.seed, method=method,
                           source_model=model.model_id, model_id=parameter_digest(handle.net))
    return handle, tlog
