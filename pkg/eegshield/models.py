"""
Convolutional networks for EEG trials shaped ``(batch, channels, samples)``.

Kernel lengths assume 128 Hz input: the EEGNet temporal kernel is half a
second, the ShallowCNN temporal kernel and pooling are the 250 Hz reference
values halved.
"""

import logging
from typing import Any, Dict, Tuple

import torch
from torch import nn

from .error_handler import ModelError

logger = logging.getLogger(__name__)

CNN_ARCHS = ("EEGNet", "DeepCNN", "ShallowCNN")

DEFAULT_WIDTHS: Dict[str, Dict[str, Any]] = {
    "EEGNet": {"F1": 8, "D": 2, "F2": 16, "kern_length": 64, "separable_length": 16,
               "pool1": 4, "pool2": 8, "dropout": 0.5, "depthwise_max_norm": 1.0,
               "dense_max_norm": 0.25},
    "DeepCNN": {"filters": (25, 50, 100, 200), "kernel": 5, "pool": 2, "dropout": 0.5},
    "ShallowCNN": {"filters": 40, "kernel": 13, "pool": 35, "pool_stride": 7, "dropout": 0.5},
}


def _flat_size(features: nn.Module, n_channels: int, n_samples: int, arch: str) -> int:
    """Run a dummy trial through ``features`` to size the dense layer."""
    was_training = features.training
    features.eval()
    try:
        with torch.no_grad():
            out = features(torch.zeros(1, 1, n_channels, n_samples))
    except RuntimeError as e:
        raise ModelError(
            f"{arch}: input ({n_channels}, {n_samples}) is smaller than the minimum receptive field: {e}")
    finally:
        features.train(was_training)
    if out.numel() == 0:
        raise ModelError(f"{arch}: input ({n_channels}, {n_samples}) is smaller than the minimum receptive field")
    return int(out.numel())


class Square(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * x


class SafeLog(nn.Module):
    def __init__(self, eps: float = 1e-7):
        super().__init__()
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.log(torch.clamp(x, min=self.eps))


class EEGNet(nn.Module):
    """Compact CNN: temporal conv, depthwise spatial conv, separable conv.

    Args:
        n_channels: electrodes per trial
        n_samples: samples per trial
        n_classes: output classes
        **widths: overrides of ``DEFAULT_WIDTHS["EEGNet"]``
    """

    def __init__(self, n_channels: int, n_samples: int, n_classes: int, **widths):
        super().__init__()
        w = {**DEFAULT_WIDTHS["EEGNet"], **widths}
        f1, d, f2 = int(w["F1"]), int(w["D"]), int(w["F2"])
        kern, sep = int(w["kern_length"]), int(w["separable_length"])
        self.depthwise_max_norm = float(w["depthwise_max_norm"])
        self.dense_max_norm = float(w["dense_max_norm"])

        temporal = nn.Sequential(
            nn.Conv2d(1, f1, (1, kern), padding=(0, kern // 2), bias=False),
            nn.BatchNorm2d(f1),
        )
        depthwise = nn.Conv2d(f1, f1 * d, (n_channels, 1), groups=f1, bias=False)
        spatial = nn.Sequential(
            nn.BatchNorm2d(f1 * d),
            nn.ELU(),
            nn.AvgPool2d((1, int(w["pool1"]))),
            nn.Dropout(float(w["dropout"])),
        )
        separable = nn.Sequential(
            nn.Conv2d(f1 * d, f1 * d, (1, sep), padding=(0, sep // 2), groups=f1 * d, bias=False),
            nn.Conv2d(f1 * d, f2, (1, 1), bias=False),
            nn.BatchNorm2d(f2),
            nn.ELU(),
            nn.AvgPool2d((1, int(w["pool2"]))),
            nn.Dropout(float(w["dropout"])),
        )
        self.features = nn.Sequential(temporal, depthwise, spatial, separable)
        self.classifier = nn.Linear(_flat_size(self.features, n_channels, n_samples, "EEGNet"), n_classes)

    @property
    def depthwise(self) -> nn.Conv2d:
        return self.features[1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x.unsqueeze(1))
        return self.classifier(torch.flatten(h, start_dim=1))

    def apply_constraints(self) -> None:
        """Max-norm on the depthwise filters and the dense weights."""
        with torch.no_grad():
            self.depthwise.weight.copy_(
                torch.renorm(self.depthwise.weight, p=2, dim=0, maxnorm=self.depthwise_max_norm))
            self.classifier.weight.copy_(
                torch.renorm(self.classifier.weight, p=2, dim=0, maxnorm=self.dense_max_norm))


class DeepCNN(nn.Module):
    """Four conv-pool blocks; the first splits temporal and spatial convolution."""

    def __init__(self, n_channels: int, n_samples: int, n_classes: int, **widths):
        super().__init__()
        w = {**DEFAULT_WIDTHS["DeepCNN"], **widths}
        filters = [int(f) for f in w["filters"]]
        kernel, pool, dropout = int(w["kernel"]), int(w["pool"]), float(w["dropout"])

        blocks = [
            nn.Conv2d(1, filters[0], (1, kernel)),
            nn.Conv2d(filters[0], filters[0], (n_channels, 1), bias=False),
            nn.BatchNorm2d(filters[0]),
            nn.ELU(),
            nn.MaxPool2d((1, pool)),
            nn.Dropout(dropout),
        ]
        for n_in, n_out in zip(filters[:-1], filters[1:]):
            blocks += [
                nn.Conv2d(n_in, n_out, (1, kernel)),
                nn.BatchNorm2d(n_out),
                nn.ELU(),
                nn.MaxPool2d((1, pool)),
                nn.Dropout(dropout),
            ]
        self.features = nn.Sequential(*blocks)
        self.classifier = nn.Linear(_flat_size(self.features, n_channels, n_samples, "DeepCNN"), n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x.unsqueeze(1))
        return self.classifier(torch.flatten(h, start_dim=1))


class ShallowCNN(nn.Module):
    """Temporal conv, spatial conv, squaring, mean pooling and log: a learned filter-bank CSP."""

    def __init__(self, n_channels: int, n_samples: int, n_classes: int, **widths):
        super().__init__()
        w = {**DEFAULT_WIDTHS["ShallowCNN"], **widths}
        n_filters = int(w["filters"])
        self.features = nn.Sequential(
            nn.Conv2d(1, n_filters, (1, int(w["kernel"]))),
            nn.Conv2d(n_filters, n_filters, (n_channels, 1), bias=False),
            nn.BatchNorm2d(n_filters),
            Square(),
            nn.AvgPool2d((1, int(w["pool"])), stride=(1, int(w["pool_stride"]))),
            SafeLog(),
            nn.Dropout(float(w["dropout"])),
        )
        self.classifier = nn.Linear(_flat_size(self.features, n_channels, n_samples, "ShallowCNN"), n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x.unsqueeze(1))
        return self.classifier(torch.flatten(h, start_dim=1))


_NETWORKS = {"EEGNet": EEGNet, "DeepCNN": DeepCNN, "ShallowCNN": ShallowCNN}


def build_network(arch: str, input_shape: Tuple[int, int], n_classes: int, seed: int = 0,
                  **widths) -> nn.Module:
    """Instantiate a CNN with seeded initial parameters.

    Raises:
        ModelError: unknown arch, or input below the receptive field
    """
    if arch not in _NETWORKS:
        raise ModelError(f"unknown CNN arch '{arch}', expected one of {CNN_ARCHS}")
    known = set(DEFAULT_WIDTHS[arch])
    unknown = set(widths) - known
    if unknown:
        raise ModelError(f"{arch} does not take width(s) {sorted(unknown)}")
    torch.manual_seed(seed)
    n_channels, n_samples = input_shape
    network = _NETWORKS[arch](int(n_channels), int(n_samples), int(n_classes), **widths)
    logger.debug(f"Built {arch} for {input_shape} -> {n_classes} classes, "
                 f"{sum(p.numel() for p in network.parameters())} parameters")
    return network
