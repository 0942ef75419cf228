"""Architecture registry, model handles and checkpoints."""
from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, ConfigurationError

CHECKPOINT_FORMAT = "stylerepair-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureSpec:
    family: str = "tiny"
    num_classes: int = 10
    in_channels: int = 3
    depth: int | None = None
    width: int | None = None      # widen factor (wideres), growth rate (dense), base channels (tiny/allconv)
    dropout: float = 0.0


class TinyNet(nn.Module):
    """Three conv/BN/ReLU/max-pool stages and a linear head (~94k parameters at width 32)."""

    def __init__(self, num_classes=10, in_channels=3, width=32):
        super().__init__()
        chans = [in_channels, width, 2 * width, 4 * width]
        layers = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            layers += [nn.Conv2d(cin, cout, 3, padding=1, bias=False), nn.BatchNorm2d(cout),
                       nn.ReLU(inplace=True), nn.MaxPool2d(2)]
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(chans[-1], num_classes)

    def forward(self, x):
        return self.head(self.features(x).mean((2, 3)))


def _conv_bn(cin, cout, k, stride=1, padding=None):
    padding = k // 2 if padding is None else padding
    return [nn.Conv2d(cin, cout, k, stride, padding, bias=False), nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True)]


class AllConvNet(nn.Module):
    """All-convolutional net (Springenberg et al., model C) with batch norm."""

    def __init__(self, num_classes=10, in_channels=3, width=96, dropout=0.0):
        super().__init__()
        c1, c2 = width, 2 * width
        self.body = nn.Sequential(
            *_conv_bn(in_channels, c1, 3), *_conv_bn(c1, c1, 3), *_conv_bn(c1, c1, 3, stride=2),
            nn.Dropout(dropout),
            *_conv_bn(c1, c2, 3), *_conv_bn(c2, c2, 3), *_conv_bn(c2, c2, 3, stride=2),
            nn.Dropout(dropout),
            *_conv_bn(c2, c2, 3, padding=0), *_conv_bn(c2, c2, 1),
            nn.Conv2d(c2, num_classes, 1),
        )

    def forward(self, x):
        return self.body(x).mean((2, 3))


class _DenseLayer(nn.Module):
    def __init__(self, cin, growth):
        super().__init__()
        self.bn1, self.conv1 = nn.BatchNorm2d(cin), nn.Conv2d(cin, 4 * growth, 1, bias=False)
        self.bn2, self.conv2 = nn.BatchNorm2d(4 * growth), nn.Conv2d(4 * growth, growth, 3, padding=1, bias=False)

    def forward(self, x):
        out = self.conv1(F.relu(self.bn1(x)))
        out = self.conv2(F.relu(self.bn2(out)))
        return torch.cat([x, out], 1)


class _Transition(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.bn, self.conv = nn.BatchNorm2d(cin), nn.Conv2d(cin, cout, 1, bias=False)

    def forward(self, x):
        return F.avg_pool2d(self.conv(F.relu(self.bn(x))), 2)


class DenseNet(nn.Module):
    """DenseNet-BC for 32x32 inputs (compression 0.5)."""

    def __init__(self, num_classes=10, in_channels=3, depth=100, growth=12):
        super().__init__()
        n = (depth - 4) // 6
        c = 2 * growth
        layers = [nn.Conv2d(in_channels, c, 3, padding=1, bias=False)]
        for block in range(3):
            for _ in range(n):
                layers.append(_DenseLayer(c, growth))
                c += growth
            if block < 2:
                layers.append(_Transition(c, c // 2))
                c //= 2
        self.features = nn.Sequential(*layers)
        self.bn = nn.BatchNorm2d(c)
        self.fc = nn.Linear(c, num_classes)

    def forward(self, x):
        return self.fc(F.relu(self.bn(self.features(x))).mean((2, 3)))


class _WideBlock(nn.Module):
    def __init__(self, cin, cout, stride, dropout):
        super().__init__()
        self.bn1, self.conv1 = nn.BatchNorm2d(cin), nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn2, self.conv2 = nn.BatchNorm2d(cout), nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.dropout = dropout
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Conv2d(cin, cout, 1, stride, bias=False)

    def forward(self, x):
        o = F.relu(self.bn1(x))
        y = self.conv1(o)
        y = F.relu(self.bn2(y))
        if self.dropout:
            y = F.dropout(y, self.dropout, self.training)
        y = self.conv2(y)
        return y + (self.shortcut(o) if self.shortcut is not None else x)


class WideResNet(nn.Module):
    """WRN-depth-k (Zagoruyko & Komodakis) for 32x32 inputs."""

    def __init__(self, num_classes=10, in_channels=3, depth=28, widen=10, dropout=0.0):
        super().__init__()
        if (depth - 4) % 6:
            raise ConfigurationError(f"wideres depth must be 6n+4, got {depth}")
        n = (depth - 4) // 6
        widths = [16, 16 * widen, 32 * widen, 64 * widen]
        self.conv = nn.Conv2d(in_channels, widths[0], 3, padding=1, bias=False)
        blocks = []
        for g in range(3):
            for i in range(n):
                cin = widths[g] if i == 0 else widths[g + 1]
                blocks.append(_WideBlock(cin, widths[g + 1], (1 if g == 0 else 2) if i == 0 else 1, dropout))
        self.blocks = nn.Sequential(*blocks)
        self.bn = nn.BatchNorm2d(widths[3])
        self.fc = nn.Linear(widths[3], num_classes)

    def forward(self, x):
        return self.fc(F.relu(self.bn(self.blocks(self.conv(x)))).mean((2, 3)))


FAMILIES = ("tiny", "allconv", "dense", "wideres")


def _make_net(spec: ArchitectureSpec) -> nn.Module:
    if spec.family == "tiny":
        return TinyNet(spec.num_classes, spec.in_channels, spec.width or 32)
    if spec.family == "allconv":
        return AllConvNet(spec.num_classes, spec.in_channels, spec.width or 96, spec.dropout)
    if spec.family == "dense":
        return DenseNet(spec.num_classes, spec.in_channels, spec.depth or 100, spec.width or 12)
    if spec.family == "wideres":
        return WideResNet(spec.num_classes, spec.in_channels, spec.depth or 40, spec.width or 2,
                          spec.dropout)
    raise ConfigurationError(f"unknown architecture family {spec.family!r}; expected one of {FAMILIES}")


@dataclass
class ModelHandle:
    """A network plus what is needed to rebuild and identify it.

    ``logits`` takes channels-last images (B, H, W, C) in [0, 1].
    """
    spec: ArchitectureSpec
    net: nn.Module
    metadata: dict = field(default_factory=dict)

    @property
    def num_classes(self):
        return self.spec.num_classes

    @property
    def model_id(self):
        return self.metadata.get("model_id") or parameter_digest(self.net)

    def parameter_count(self):
        return sum(p.numel() for p in self.net.parameters())

    @torch.no_grad()
    def logits(self, images, batch_size=500):
        self.net.eval()
        images = np.asarray(images, dtype=np.float32)
        out = []
        for i in range(0, len(images), batch_size):
            xb = to_nchw(images[i:i + batch_size])
            out.append(self.net(xb).numpy())
        if not out:
            return np.zeros((0, self.num_classes), dtype=np.float32)
        return np.concatenate(out)

    def clone(self):
        import copy
        return ModelHandle(self.spec, copy.deepcopy(self.net), dict(self.metadata))


def to_nchw(images: np.ndarray) -> torch.Tensor:
    # a permuted NHWC buffer is already channels-last, which is faster on CPU
    x = torch.from_numpy(np.array(images, dtype=np.float32)).permute(0, 3, 1, 2)
    return x.contiguous(memory_format=torch.channels_last)


def parameter_digest(net: nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in net.state_dict().items():
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:12]


def build(spec: ArchitectureSpec, seed=0) -> ModelHandle:
    """Instantiate ``spec`` with parameters initialised from ``seed``."""
    if spec.family not in FAMILIES:
        raise ConfigurationError(f"unknown architecture family {spec.family!r}; expected one of {FAMILIES}")
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        net = _make_net(spec).to(memory_format=torch.channels_last)
    finally:
        torch.random.set_rng_state(gen_state)
    handle = ModelHandle(spec, net, {"seed": seed, "epoch": 0})
    handle.metadata["parameter_count"] = handle.parameter_count()
    return handle


def save_checkpoint(handle: ModelHandle, path, **metadata):
    """Atomically write architecture, parameters and metadata to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(handle.metadata)
    meta.update(metadata)
    meta["model_id"] = meta.get("model_id") or parameter_digest(handle.net)
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": asdict(handle.spec),
        "state_dict": handle.net.state_dict(),
        "metadata": meta,
    }
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    torch.save(blob, tmp)
    os.replace(tmp, path)
    handle.metadata = meta
    return path


def load_checkpoint(path) -> ModelHandle:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has checkpoint version {blob.get('version')}, expected {CHECKPOINT_VERSION}")
    spec = ArchitectureSpec(**blob["arch"])
    net = _make_net(spec).to(memory_format=torch.channels_last)
    try:
        net.load_state_dict(blob["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"parameters in {path} do not match {spec}: {exc}") from exc
    return ModelHandle(spec, net, dict(blob["metadata"]))
