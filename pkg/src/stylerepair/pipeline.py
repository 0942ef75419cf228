"""Experiment pipeline: config handling and the stages run by the command line.

Artifacts live under one output directory::

    effective_config.yaml
    data/{train,test}.npz, data/corrupted/<kind>.npz
    models/base.pt
    splits/<kind>.json
    samplers/<kind>-<strategy>.json
    repaired/<kind>-<tag>.pt, logs/<kind>-<tag>.json
    eval/<name>.json
    report/results.csv, report/cross_matrix.csv, report/ablation.csv, report/plots/*.png

Every JSON artifact and checkpoint records the hash of the effective config.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import yaml

from .corruptions import build_corrupted_testset
from .data import load_dataset, load_npz, make_shapes_dataset, save_npz
from .errors import ConfigurationError, StageError, StyleRepairError
from .failures import collect_failures, load_split, save_split
from .models import ArchitectureSpec, load_checkpoint, save_checkpoint
from .report import (CrossMatrix, RepairReport, ablation_compare, cross_robustness, emit_report,
                     make_report)
from .sampling import build_sampler, load_sampler, save_sampler
from .style import get_backend
from .training import TrainConfig, repair, train_base

log = logging.getLogger(__name__)

STAGES = ("prepare-data", "train-base", "collect-failures", "fit-sampler", "repair", "evaluate",
          "report")

DEFAULT_CONFIG = {
    "seed": 0,
    "out": "runs/default",
    "data": {
        "source": "shapes",        # "shapes" (procedural) or "path" (CIFAR batches / image dir)
        "root": None,
        "train_size": 10000,       # null keeps the full set
        "test_size": 2000,
        "ingest_root": None,       # directory of pre-corrupted arrays for ingest-only kinds
        "corruption_seed": 0,
    },
    "kinds": ["GN"],
    "model": {"family": "tiny", "depth": None, "width": None, "dropout": 0.0},
    "base_training": {"max_epochs": 20},
    "failures": {"n_collect": 200},
    "sampler": {"strategy": "clustering", "strategies": None, "n_clusters": 5},
    "style": {"backend": "moment", "asset": None},
    "aug": {"M": 3, "alpha": 1.0, "style_enabled": True, "fixed_references": False},
    "repair": {"methods": ["stylerepair"], "max_epochs": 10},
    "inputs": {"model": None, "split": None, "sampler": None},
}

AUG_KEYS = {"M": "M", "alpha": "alpha", "style_enabled": "style_enabled",
            "fixed_references": "fixed_references"}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_key(config, dotted, value):
    node = config
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def load_config(path=None, overrides=None):
    """Defaults, then the YAML file at ``path``, then ``overrides`` (dotted keys)."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path} must hold a mapping at the top level")
        unknown = set(loaded) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigurationError(f"unknown config sections in {path}: {sorted(unknown)}")
        config = _merge(config, loaded)
    for key, value in (overrides or {}).items():
        set_key(config, key, value)
    validate_config(config)
    return config


def validate_config(config):
    from .constants import KINDS
    bad = [k for k in config["kinds"] if k not in KINDS]
    if bad:
        raise ConfigurationError(f"unknown corruption kinds {bad}; expected some of {list(KINDS)}")
    data = config["data"]
    if data["source"] not in ("shapes", "path"):
        raise ConfigurationError(f"data.source must be 'shapes' or 'path', got {data['source']!r}")
    if data["source"] == "path" and not data.get("root"):
        raise ConfigurationError("data.source is 'path' but data.root is not set")
    for key in ("root", "ingest_root"):
        if data.get(key) and not Path(data[key]).exists():
            raise ConfigurationError(f"data.{key} does not exist: {data[key]}")
    for key, p in config["inputs"].items():
        if p and not Path(p).exists():
            raise ConfigurationError(f"inputs.{key} does not exist: {p}")
    for strategy in strategies(config):
        if strategy not in ("uniform", "clustering"):
            raise ConfigurationError(f"unknown sampler strategy {strategy!r}")
    if not config["repair"]["methods"]:
        raise ConfigurationError("repair.methods is empty")
    for method in config["repair"]["methods"]:
        repair_config(config, method)
    get_backend(config["style"]["backend"], config["style"]["asset"])


def config_hash(config) -> str:
    """Digest of everything that influences results (the output location does not)."""
    relevant = {k: v for k, v in config.items() if k not in ("out", "inputs")}
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()[:12]


def strategies(config):
    return list(config["sampler"].get("strategies") or [config["sampler"]["strategy"]])


def repair_config(config, method) -> TrainConfig:
    d = {k: v for k, v in config["repair"].items() if k != "methods"}
    for key, field in AUG_KEYS.items():
        d[field] = config["aug"][key]
    d["seed"] = config["seed"]
    d["method"] = method
    return TrainConfig.from_dict(d)


def base_config(config) -> TrainConfig:
    d = dict(config["base_training"])
    d.setdefault("seed", config["seed"])
    return TrainConfig.from_dict(d)


def arch_spec(config, num_classes) -> ArchitectureSpec:
    m = config["model"]
    return ArchitectureSpec(m["family"], num_classes, 3, m.get("depth"), m.get("width"),
                            m.get("dropout", 0.0))


def run_tags(config):
    """``(tag, method, strategy)`` for every repair run the config asks for."""
    out = []
    for method in config["repair"]["methods"]:
        if method == "stylerepair":
            out += [(f"stylerepair-{s}", method, s) for s in strategies(config)]
        else:
            out.append((method, method, None))
    return out


class Pipeline:
    def __init__(self, config, out=None, force=False):
        self.config = config
        self.out = Path(out or config["out"])
        self.force = force
        self.hash = config_hash(config)

    # -- paths ---------------------------------------------------------------
    def path(self, *parts):
        return self.out.joinpath(*parts)

    def _need(self, path, stage, producer):
        if not Path(path).exists():
            raise StageError(stage, f"missing {path}; run `{producer}` first")
        return Path(path)

    def _done(self, *paths):
        return not self.force and all(Path(p).exists() for p in paths)

    def _write_json(self, path, record):
        path.parent.mkdir(parents=True, exist_ok=True)
        record = dict(record, config_hash=self.hash)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(record, indent=1, sort_keys=True))
        tmp.replace(path)

    def write_effective_config(self):
        self.out.mkdir(parents=True, exist_ok=True)
        body = dict(self.config, config_hash=self.hash)
        self.path("effective_config.yaml").write_text(yaml.safe_dump(body, sort_keys=True))

    # -- loaders shared between stages ----------------------------------------
    def clean(self, split, stage):
        return load_npz(self._need(self.path("data", f"{split}.npz"), stage, "prepare-data"))

    def corrupted(self, kind, stage):
        return load_npz(self._need(self.path("data", "corrupted", f"{kind}.npz"), stage, "prepare-data"))

    def base_model(self, stage):
        p = self.config["inputs"].get("model") or self.path("models", "base.pt")
        return load_checkpoint(self._need(p, stage, "train-base"))

    def split_for(self, kind, stage):
        p = self.path("splits", f"{kind}.json")
        return load_split(self._need(p, stage, "collect-failures"), self.corrupted(kind, stage))

    # -- stages ----------------------------------------------------------------
    def prepare_data(self):
        cfg, data = self.config, self.config["data"]
        train_p, test_p = self.path("data", "train.npz"), self.path("data", "test.npz")
        if not self._done(train_p, test_p):
            if data["source"] == "shapes":
                train = make_shapes_dataset(data["train_size"] or 10000, seed=cfg["seed"] + 1, name="train")
                test = make_shapes_dataset(data["test_size"] or 2000, seed=cfg["seed"] + 2, name="test")
            else:
                train = load_dataset(data["root"], "train")
                test = load_dataset(data["root"], "test")
                train = _subsample(train, data["train_size"], cfg["seed"])
                test = _subsample(test, data["test_size"], cfg["seed"])
            save_npz(train, train_p, config_hash=self.hash)
            save_npz(test, test_p, config_hash=self.hash)
        test = load_npz(test_p)
        for kind in cfg["kinds"]:
            p = self.path("data", "corrupted", f"{kind}.npz")
            if self._done(p):
                continue
            corrupted = build_corrupted_testset(test, kind, seed=data["corruption_seed"],
                                                ingest_root=data.get("ingest_root"))
            save_npz(corrupted, p, config_hash=self.hash)
        return [train_p, test_p]

    def train_base(self):
        p = self.path("models", "base.pt")
        if self._done(p):
            return [p]
        train, test = self.clean("train", "train-base"), self.clean("test", "train-base")
        handle, tlog = train_base(arch_spec(self.config, train.num_classes), train,
                                  base_config(self.config), eval_set=test)
        save_checkpoint(handle, p, config_hash=self.hash)
        self._write_json(self.path("logs", "base.json"), tlog.to_dict())
        return [p]

    def collect_failures(self):
        model = self.base_model("collect-failures")
        written = []
        for kind in self.config["kinds"]:
            p = self.path("splits", f"{kind}.json")
            written.append(p)
            if self._done(p):
                continue
            split = collect_failures(model, self.corrupted(kind, "collect-failures"),
                                     self.config["failures"]["n_collect"], seed=self.config["seed"],
                                     kind=kind)
            save_split(split, p, extra={"config_hash": self.hash})
        return written

    def fit_sampler(self):
        written = []
        n_clusters = self.config["sampler"]["n_clusters"]
        split_file = self.config["inputs"].get("split")
        if split_file:
            kinds = [json.loads(Path(split_file).read_text())["kind"]]
        else:
            kinds = self.config["kinds"]
        for kind in kinds:
            if split_file:
                split = load_split(split_file, self.corrupted(kind, "fit-sampler"))
            else:
                split = self.split_for(kind, "fit-sampler")
            for strategy in strategies(self.config):
                p = self.path("samplers", f"{kind}-{strategy}.json")
                written.append(p)
                if self._done(p):
                    continue
                n = min(n_clusters, len(split.guidance))
                dist = build_sampler(split.guidance, strategy, n, seed=self.config["seed"])
                save_sampler(dist, p, seed=self.config["seed"], n_clusters=n,
                             extra={"config_hash": self.hash, "kind": kind,
                                    "model_id": split.model_id})
        return written

    def _backend(self):
        style = self.config["style"]
        return get_backend(style["backend"], style["asset"])

    def repair(self):
        model = self.base_model("repair")
        train = self.clean("train", "repair")
        inputs = self.config["inputs"]
        written = []
        for kind in self.config["kinds"] if not inputs.get("split") else [None]:
            if inputs.get("split"):
                kind = json.loads(Path(inputs["split"]).read_text())["kind"]
                split = load_split(inputs["split"], self.corrupted(kind, "repair"))
            else:
                split = self.split_for(kind, "repair")
            if split.model_id != model.model_id:
                raise ConfigurationError(
                    f"split for {kind} was collected from {split.model_id}, not {model.model_id}")
            for tag, method, strategy in run_tags(self.config):
                p = self.path("repaired", f"{kind}-{tag}.pt")
                written.append(p)
                if self._done(p):
                    continue
                sampler = None
                if method == "stylerepair" and self.config["aug"]["style_enabled"]:
                    sp = inputs.get("sampler") or self._need(
                        self.path("samplers", f"{kind}-{strategy}.json"), "repair", "fit-sampler")
                    sampler, record = load_sampler(sp)
                    strategy = record["strategy"]
                cfg = repair_config(self.config, method)
                handle, tlog = repair(model, train, split, sampler, cfg,
                                      backend=self._backend() if sampler is not None else None)
                save_checkpoint(handle, p, config_hash=self.hash, repaired_on=kind,
                                sampler=strategy or "", tag=tag)
                self._write_json(self.path("logs", f"{kind}-{tag}.json"), tlog.to_dict())
        return written

    def evaluate(self):
        cfg = self.config
        test = self.clean("test", "evaluate")
        corrupted = {k: self.corrupted(k, "evaluate") for k in cfg["kinds"]}
        splits = {k: self.split_for(k, "evaluate") for k in cfg["kinds"]}
        base = self.base_model("evaluate")
        written = []

        def emit(name, model, method, repaired_on, sampler=""):
            p = self.path("eval", f"{name}.json")
            written.append(p)
            if self._done(p):
                return
            rep = make_report(model, method, repaired_on, splits, test, corrupted,
                              baseline_id=base.model_id, seed=cfg["seed"], config_hash=self.hash,
                              sampler=sampler)
            self._write_json(p, rep.to_dict())

        emit("original", base, "original", "")
        for kind in cfg["kinds"]:
            for tag, method, strategy in run_tags(cfg):
                ckpt = self._need(self.path("repaired", f"{kind}-{tag}.pt"), "evaluate", "repair")
                emit(f"{kind}-{tag}", load_checkpoint(ckpt), tag, kind, strategy or "")
        return written

    def report(self):
        cfg = self.config
        reports = {}
        for p in sorted(self.path("eval").glob("*.json")) if self.path("eval").exists() else []:
            reports[p.stem] = RepairReport.from_dict(json.loads(p.read_text()))
        if "original" not in reports:
            raise StageError("report", f"no evaluation results under {self.path('eval')}; "
                                       "run `evaluate` first")
        matrices = []
        for tag, _, _ in run_tags(cfg):
            rows = [k for k in cfg["kinds"] if f"{k}-{tag}" in reports]
            if rows:
                values = np.array([[reports[f"{r}-{tag}"].accuracy_heldout.get(c, np.nan)
                                    for c in cfg["kinds"]] for r in rows])
                matrices.append(CrossMatrix(rows, list(cfg["kinds"]), values, tag))
        ablation = None
        if set(strategies(cfg)) == {"uniform", "clustering"} and "stylerepair" in cfg["repair"]["methods"]:
            ablation = {}
            for kind in cfg["kinds"]:
                arms = {s: reports.get(f"{kind}-stylerepair-{s}") for s in ("uniform", "clustering")}
                if all(arms.values()):
                    configs = {s: _arm_config(cfg, s) for s in arms}
                    ablation[kind] = ablation_compare(arms, configs)
        return emit_report(list(reports.values()), self.path("report"), matrices, ablation)

    def run(self, stage):
        fn = {"prepare-data": self.prepare_data, "train-base": self.train_base,
              "collect-failures": self.collect_failures, "fit-sampler": self.fit_sampler,
              "repair": self.repair, "evaluate": self.evaluate, "report": self.report}.get(stage)
        if fn is None:
            raise ConfigurationError(f"unknown stage {stage!r}; valid stages: {', '.join(STAGES)}, run-all")
        self.write_effective_config()
        try:
            return fn()
        except StageError:
            raise
        except (StyleRepairError, ValueError, OSError) as exc:
            raise StageError(stage, str(exc)) from exc

    def run_all(self):
        written = []
        for stage in STAGES:
            log.info("stage %s", stage)
            written += self.run(stage)
        return written


def _arm_config(config, strategy):
    arm = copy.deepcopy(config)
    arm["sampler"]["strategy"] = strategy
    arm["sampler"].pop("strategies", None)
    return arm


def _subsample(dataset, size, seed):
    if not size or size >= len(dataset):
        return dataset
    idx = np.sort(np.random.default_rng([seed, 7]).choice(len(dataset), size, replace=False))
    return dataset.subset(idx, dataset.name)


def cross_matrix_from_models(config, out):
    """Recompute the cross-robustness matrix from saved repaired checkpoints."""
    pipe = Pipeline(config, out)
    splits = {k: pipe.split_for(k, "evaluate") for k in config["kinds"]}
    matrices = []
    for tag, _, _ in run_tags(config):
        models = {k: load_checkpoint(pipe.path("repaired", f"{k}-{tag}.pt")) for k in config["kinds"]}
        matrices.append(cross_robustness(models, splits, tag))
    return matrices
