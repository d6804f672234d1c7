"""
Class-wise privacy perturbations.

For every protected privacy type a surrogate classifier is trained on the
original data, then one additive pattern per privacy class is optimized
against the frozen surrogate so that the class becomes trivially easy to
predict from the pattern alone. Superposing the patterns of all types gives
the protected dataset; subtracting them restores the original bit for bit.
"""

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from torch.nn import functional as F

from .classifiers import CNN_ARCHS, ModelSpec, TrainedClassifier, build_model, freeze, train_classifier
from .eeg_dataset import EEGDataset, PRIVACY_TYPES, derive_seed, snap_to_grid
from .error_handler import ConfigError, DatasetError, FileSystemError, OptimizationError

logger = logging.getLogger(__name__)

BANK_META = "bank.json"
BANK_DATA = "bank.f32"
NORM_STEPS = ("proximal", "gradient")

LogitFn = Callable[[torch.Tensor], torch.Tensor]


@dataclass
class ProtectionConfig:
    """Which privacy types to conceal and how hard to optimize"""
    privacy_types: Tuple[str, ...] = PRIVACY_TYPES
    surrogate_arch: str = "EEGNet"
    alpha: float = 0.01
    surrogate_epochs: int = 100
    perturbation_epochs: int = 100
    init_std: float = 0.001
    learning_rate: float = 1e-2
    surrogate_learning_rate: float = 1e-3
    batch_size: int = 128
    squared_norm: bool = False
    norm_step: str = "proximal"
    seed: int = 0

    def __post_init__(self):
        self.privacy_types = tuple(self.privacy_types)
        if not self.privacy_types:
            raise ConfigError("protection.privacy_types must name at least one privacy type")
        if len(set(self.privacy_types)) != len(self.privacy_types):
            raise ConfigError(f"protection.privacy_types has duplicates: {list(self.privacy_types)}")
        if self.surrogate_arch not in CNN_ARCHS:
            raise ConfigError(f"protection.surrogate_arch must be one of {CNN_ARCHS}, got {self.surrogate_arch}")
        if self.alpha < 0:
            raise ConfigError(f"protection.alpha must be >= 0, got {self.alpha}")
        if self.surrogate_epochs < 1 or self.perturbation_epochs < 1:
            raise ConfigError("protection.surrogate_epochs and perturbation_epochs must be >= 1")
        if self.init_std < 0:
            raise ConfigError(f"protection.init_std must be >= 0, got {self.init_std}")
        if self.learning_rate <= 0 or self.surrogate_learning_rate <= 0:
            raise ConfigError("protection learning rates must be positive")
        if self.batch_size < 2:
            raise ConfigError(f"protection.batch_size must be >= 2, got {self.batch_size}")
        if self.norm_step not in NORM_STEPS:
            raise ConfigError(f"protection.norm_step must be one of {NORM_STEPS}, got {self.norm_step}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProtectionConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown protection config key(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["privacy_types"] = list(self.privacy_types)
        return out


@dataclass
class TypeSummary:
    """Outcome of optimizing one privacy type"""
    n_classes: int
    ce_before: float
    ce_after: float
    final_objective: float
    delta_norms: List[float]
    surrogate_digest: str = ""
    data_digest: str = ""
    surrogate_curve: List[Dict[str, Any]] = field(default_factory=list)


@dataclass(eq=False)
class PerturbationBank:
    """Per privacy type a ``[P_m, c, t]`` float32 array of class perturbations.

    Arrays are read-only; ``metadata`` echoes the protection settings.
    """
    deltas: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)
    summary: Dict[str, TypeSummary] = field(default_factory=dict)

    def __post_init__(self):
        frozen = {}
        shape = None
        for m, delta in self.deltas.items():
            arr = np.array(delta, dtype=np.float32, copy=True)
            if arr.ndim != 3:
                raise DatasetError(f"perturbation for '{m}' must be [P, c, t], got shape {arr.shape}")
            if shape is not None and arr.shape[1:] != shape:
                raise DatasetError(f"perturbation for '{m}' has trial shape {arr.shape[1:]}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DatasetError(f"perturbation for '{m}' contains non-finite values")
            shape = arr.shape[1:]
            arr.setflags(write=False)
            frozen[m] = arr
        self.deltas = frozen

    @property
    def types(self) -> List[str]:
        return list(self.deltas)

    @property
    def trial_shape(self) -> Tuple[int, int]:
        return next(iter(self.deltas.values())).shape[1:]

    def total_for(self, ds: EEGDataset) -> np.ndarray:
        """``[N, c, t]`` float64 sum of each trial's class perturbations."""
        check_alignment(ds, self)
        total = np.zeros(ds.data.shape, dtype=np.float64)
        for m, delta in self.deltas.items():
            total += delta.astype(np.float64)[ds.privacy[m] - 1]
        return total

    def data_bytes(self) -> bytes:
        return b"".join(self.deltas[m].astype("<f4").tobytes(order="C") for m in self.types)

    def meta_dict(self) -> Dict[str, Any]:
        return {
            "types": {m: int(d.shape[0]) for m, d in self.deltas.items()},
            "shape": list(self.trial_shape),
            "order": "type, class, channel, sample",
            "config": self.metadata,
            "summary": {m: asdict(s) for m, s in self.summary.items()},
        }

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.meta_dict(), sort_keys=True).encode("utf-8"))
        h.update(self.data_bytes())
        return h.hexdigest()


def check_alignment(ds: EEGDataset, bank: PerturbationBank) -> None:
    """Shapes and class counts of ``bank`` must fit ``ds``.

    Raises:
        DatasetError: trial shape differs, a bank type is missing from the
            dataset, or class counts disagree
    """
    if tuple(bank.trial_shape) != (ds.n_channels, ds.n_samples):
        raise DatasetError(f"bank trial shape {tuple(bank.trial_shape)} does not match dataset "
                           f"({ds.n_channels}, {ds.n_samples})")
    for m, delta in bank.deltas.items():
        if m not in ds.privacy_vocab:
            raise DatasetError(f"dataset trials carry no '{m}' privacy label required by the bank")
        if delta.shape[0] != ds.privacy_vocab[m]:
            raise DatasetError(f"bank holds {delta.shape[0]} '{m}' classes, dataset declares {ds.privacy_vocab[m]}")


def apply_perturbations(ds: EEGDataset, bank: PerturbationBank) -> EEGDataset:
    """Add every trial's class perturbations; labels and metadata are unchanged.

    Raises:
        DatasetError: some protected samples cannot be restored bit for bit,
            e.g. samples off the 2^-20 grid or with magnitude >= 16 where
            float32 is coarser than the grid
    """
    total = bank.total_for(ds)
    protected = (ds.data.astype(np.float64) + total).astype(np.float32)
    restored = (protected.astype(np.float64) - total).astype(np.float32)
    lossy = restored != ds.data
    if lossy.any():
        trials = np.flatnonzero(lossy.any(axis=(1, 2)))
        raise DatasetError(
            f"{int(lossy.sum())} sample(s) in {trials.size} trial(s) (first: {trials[:5].tolist()}) would not "
            f"survive removal bit-exactly; largest protected magnitude {float(np.abs(protected).max()):.3f}, "
            f"samples must lie on the 2^-20 grid below 16")
    return ds.with_data(protected)



def remove_perturbations(ds_protected: EEGDataset, bank: PerturbationBank) -> EEGDataset:
    """Inverse of :func:`apply_perturbations`."""
    restored = ds_protected.data.astype(np.float64) - bank.total_for(ds_protected)
    return ds_protected.with_data(restored.astype(np.float32))


def amplitude_ratio(ds: EEGDataset, bank: PerturbationBank) -> float:
    """Mean over trials of RMS(total perturbation) / RMS(trial)."""
    total = bank.total_for(ds)
    x = ds.data.astype(np.float64)
    rms_delta = np.sqrt((total ** 2).mean(axis=(1, 2)))
    rms_x = np.sqrt((x ** 2).mean(axis=(1, 2)))
    return float(np.mean(rms_delta / np.maximum(rms_x, 1e-12)))


def _class_norms(delta: torch.Tensor, squared: bool) -> torch.Tensor:
    norms = torch.linalg.vector_norm(delta.flatten(1), dim=1)
    return norms ** 2 if squared else norms


def perturbation_objective(logit_fn: LogitFn, delta: torch.Tensor, x: torch.Tensor, p: torch.Tensor,
                           alpha: float, squared_norm: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
    """Mean over the batch of CE(f(x_i + delta[p_i]), p_i) + alpha * ||delta[p_i]||.

    Args:
        logit_fn: frozen classifier mapping ``[B, c, t]`` to logits
        delta: ``[P, c, t]`` class perturbations
        x: ``[B, c, t]`` trials
        p: ``[B]`` 0-based privacy classes
        alpha: weight of the norm term
        squared_norm: use ``||delta||^2`` instead of ``||delta||``

    Returns:
        (objective, cross-entropy) scalars
    """
    ce = F.cross_entropy(logit_fn(x + delta[p]), p)
    penalty = _class_norms(delta, squared_norm)[p].mean()
    return ce + alpha * penalty, ce


def perturbation_step(logit_fn: LogitFn, delta: torch.Tensor, x: torch.Tensor, p: torch.Tensor,
                      alpha: float, learning_rate: float, squared_norm: bool = False,
                      norm_step: str = "proximal") -> Tuple[torch.Tensor, float]:
    """One mini-batch update of ``delta``; returns the new delta and the pre-step objective.

    ``proximal`` steps along the cross-entropy gradient and then applies the
    exact shrinkage of the batch's norm term to each class; ``gradient`` steps
    along the gradient of the whole objective.
    """
    if norm_step not in NORM_STEPS:
        raise OptimizationError(f"unknown norm_step '{norm_step}', expected one of {NORM_STEPS}")
    current = delta.detach().clone().requires_grad_(True)
    objective, ce = perturbation_objective(logit_fn, current, x, p, alpha, squared_norm)
    if not torch.isfinite(objective):
        raise OptimizationError(
            f"perturbation objective is non-finite (ce={float(ce)}); lower the learning rate "
            f"(currently {learning_rate})")
    target = objective if norm_step == "gradient" else ce
    (grad,) = torch.autograd.grad(target, current)

    with torch.no_grad():
        updated = current - learning_rate * grad
        if norm_step == "proximal" and alpha > 0:
            counts = torch.bincount(p, minlength=delta.shape[0]).to(updated.dtype)
            tau = learning_rate * alpha * counts / p.numel()
            if squared_norm:
                scale = 1.0 / (1.0 + 2.0 * tau)
            else:
                norms = torch.linalg.vector_norm(updated.flatten(1), dim=1)
                scale = torch.clamp(1.0 - tau / torch.clamp(norms, min=1e-30), min=0.0)
            updated = updated * scale.view(-1, 1, 1)
    return updated.detach(), float(objective)


def mean_cross_entropy(network: torch.nn.Module, x: np.ndarray, p: np.ndarray,
                       delta: Optional[np.ndarray] = None, batch_size: int = 256) -> float:
    """Mean CE of a frozen network on ``x`` (plus each trial's class perturbation)."""
    dtype = next(network.parameters()).dtype
    total = 0.0
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            xb = torch.as_tensor(x[start:start + batch_size], dtype=dtype)
            pb = torch.as_tensor(p[start:start + batch_size], dtype=torch.long)
            if delta is not None:
                xb = xb + torch.as_tensor(delta, dtype=dtype)[pb]
            total += float(F.cross_entropy(network(xb), pb, reduction="sum"))
    return total / x.shape[0]


def train_privacy_surrogate(ds: EEGDataset, privacy_type: str, cfg: ProtectionConfig) -> TrainedClassifier:
    """Train the surrogate for ``privacy_type`` on all trials of ``ds``, tasks mixed.

    Raises:
        ValidationError: unknown privacy type
        DatasetError: a privacy class has no trials
    """
    labels = ds.privacy_labels(privacy_type)
    present = set(np.unique(labels).tolist())
    missing = sorted(set(range(1, ds.privacy_vocab[privacy_type] + 1)) - present)
    if missing:
        raise DatasetError(f"privacy type '{privacy_type}' has no trials for classes {missing}")
    spec = ModelSpec(
        arch=cfg.surrogate_arch,
        input_shape=(ds.n_channels, ds.n_samples),
        n_classes=ds.privacy_vocab[privacy_type],
        hyperparameters={"learning_rate": cfg.surrogate_learning_rate, "batch_size": cfg.batch_size},
        seed=derive_seed(cfg.seed, "surrogate", privacy_type),
    )
    model = build_model(spec, label_space=privacy_type)
    return train_classifier(model, ds.data, labels, epochs=cfg.surrogate_epochs)


def optimize_perturbation(surrogate: TrainedClassifier, ds: EEGDataset, privacy_type: str,
                          cfg: ProtectionConfig) -> Tuple[np.ndarray, TypeSummary]:
    """Optimize ``[P_m, c, t]`` class perturbations against the frozen surrogate.

    Returns:
        (grid-snapped float32 perturbations, summary)

    Raises:
        OptimizationError: the objective becomes non-finite
    """
    network = freeze(TrainedClassifier(spec=surrogate.spec, network=copy.deepcopy(surrogate.network)))
    dtype = next(network.parameters()).dtype
    n_classes = ds.privacy_vocab[privacy_type]
    p_all = ds.privacy_labels(privacy_type) - 1
    x_all = torch.as_tensor(ds.data, dtype=dtype)
    p_tensor = torch.as_tensor(p_all, dtype=torch.long)

    init_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "init", privacy_type))
    shuffle_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "perturb", privacy_type))
    delta = torch.randn((n_classes, ds.n_channels, ds.n_samples), generator=init_gen, dtype=dtype) * cfg.init_std
    ce_before = mean_cross_entropy(network, ds.data, p_all)

    objective = float("nan")
    for epoch in range(1, cfg.perturbation_epochs + 1):
        order = torch.randperm(len(ds), generator=shuffle_gen)
        total, seen = 0.0, 0
        for start in range(0, len(ds), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                delta, batch_objective = perturbation_step(
                    network, delta, x_all[idx], p_tensor[idx], cfg.alpha, cfg.learning_rate,
                    cfg.squared_norm, cfg.norm_step)
            except OptimizationError as e:
                raise OptimizationError(f"'{privacy_type}' epoch {epoch}: {e}")
            total += batch_objective * idx.numel()
            seen += idx.numel()
        objective = total / seen
        logger.info(f"Perturbation[{privacy_type}] epoch {epoch}/{cfg.perturbation_epochs}: "
                    f"objective={objective:.5f}")

    final = snap_to_grid(delta.detach().double().numpy())
    summary = TypeSummary(
        n_classes=n_classes,
        ce_before=ce_before,
        ce_after=mean_cross_entropy(network, ds.data, p_all, final),
        final_objective=objective,
        delta_norms=[float(np.linalg.norm(final[k].astype(np.float64))) for k in range(n_classes)],
    )
    return final, summary


def generate_protected_dataset(ds: EEGDataset, cfg: ProtectionConfig) -> Tuple[EEGDataset, PerturbationBank]:
    """Train a surrogate and optimize perturbations per type on ``ds``, then superpose them.

    Both loops always read the original ``ds``; the protected dataset is only
    assembled at the end.

    Raises:
        ConfigError: a requested privacy type is not in the dataset
    """
    unknown = [m for m in cfg.privacy_types if m not in ds.privacy_vocab]
    if unknown:
        raise ConfigError(f"privacy type(s) {unknown} not in dataset vocabulary {sorted(ds.privacy_vocab)}")

    data_digest = ds.digest()
    deltas, summaries = {}, {}
    for m in cfg.privacy_types:
        surrogate = train_privacy_surrogate(ds, m, cfg)
        logger.info(f"Surrogate[{m}] trained on dataset sha256={data_digest}, "
                    f"parameters sha256={surrogate.digest()}")
        delta, summary = optimize_perturbation(surrogate, ds, m, cfg)
        summary.surrogate_digest = surrogate.digest()
        summary.data_digest = data_digest
        summary.surrogate_curve = surrogate.curve_dict()
        deltas[m] = delta
        summaries[m] = summary
        logger.info(f"Perturbation[{m}]: ce {summary.ce_before:.4f} -> {summary.ce_after:.4f}, "
                    f"norms {[round(n, 4) for n in summary.delta_norms]}")

    bank = PerturbationBank(deltas=deltas, metadata=cfg.to_dict(), summary=summaries)
    protected = apply_perturbations(ds, bank)
    logger.info(f"Protected {len(ds)} trials; amplitude ratio {amplitude_ratio(ds, bank):.4f}")
    return protected, bank


def save_bank(bank: PerturbationBank, path: Union[str, Path]) -> None:
    """Write ``bank.json`` and ``bank.f32`` (type, class, channel, sample order)."""
    out_dir = Path(path)
    meta = json.dumps(bank.meta_dict(), indent=1).encode("utf-8")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / BANK_META).write_bytes(meta)
        (out_dir / BANK_DATA).write_bytes(bank.data_bytes())
    except OSError as e:
        raise FileSystemError(f"cannot write perturbation bank to {out_dir}: {e}")
    logger.info(f"Saved perturbation bank ({', '.join(bank.types)}) to {out_dir}")


def load_bank(path: Union[str, Path]) -> PerturbationBank:
    """Read a bank written by :func:`save_bank`.

    Raises:
        FileSystemError: a bank file is missing
        DatasetError: malformed metadata or size mismatch
    """
    in_dir = Path(path)
    meta_path, data_path = in_dir / BANK_META, in_dir / BANK_DATA
    for required in (meta_path, data_path):
        if not required.is_file():
            raise FileSystemError(f"missing bank file: {required}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        types = {str(m): int(n) for m, n in meta["types"].items()}
        c, t = (int(v) for v in meta["shape"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"malformed {BANK_META}: {e}")

    blob = data_path.read_bytes()
    expected = sum(types.values()) * c * t * 4
    if len(blob) != expected:
        raise DatasetError(f"size mismatch: {BANK_META} needs {expected} bytes but {BANK_DATA} holds {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f4")
    deltas, offset = {}, 0
    for m, n in types.items():
        size = n * c * t
        deltas[m] = flat[offset:offset + size].reshape(n, c, t).astype(np.float32)
        offset += size
    summary = {m: TypeSummary(**s) for m, s in meta.get("summary", {}).items()}
    return PerturbationBank(deltas=deltas, metadata=meta.get("config", {}), summary=summary)
