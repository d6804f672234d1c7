"""
Uniform train / predict interface over the CNN families and the classical
task pipelines, plus checkpoint files.

Labels are 1-based everywhere outside this module; networks see 0-based
targets internally.
"""

import copy
import hashlib
import json
import logging
import pickle
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from sklearn.metrics import balanced_accuracy_score
from torch import nn
from torch.nn import functional as F

from .eeg_dataset import derive_seed
from .error_handler import FileSystemError, ModelError
from .models import CNN_ARCHS, DEFAULT_WIDTHS, EEGNet, build_network

logger = logging.getLogger(__name__)

CLASSICAL_ARCHS = ("XDAWN_LR", "CSP_LR", "CCA")
ARCHS = CNN_ARCHS + CLASSICAL_ARCHS

TRAINING_DEFAULTS: Dict[str, Any] = {
    "learning_rate": 1e-3,
    "batch_size": 128,
    "weight_decay": 0.0,
    "epochs": 100,
}
CLASSICAL_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "XDAWN_LR": {"n_filters": 4, "C": 1.0, "ridge": 1e-6},
    "CSP_LR": {"n_pairs": 2, "C": 1.0, "ridge": 1e-6},
    "CCA": {"n_harmonics": 2, "frequencies": [], "sampling_rate": 128.0},
}


@dataclass
class ModelSpec:
    """Architecture, input geometry, class count and hyperparameters of one classifier"""
    arch: str
    input_shape: Tuple[int, int]
    n_classes: int
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ModelError(f"unknown arch '{self.arch}', expected one of {ARCHS}")
        self.input_shape = (int(self.input_shape[0]), int(self.input_shape[1]))
        if self.n_classes < 2:
            raise ModelError(f"n_classes must be >= 2, got {self.n_classes}")
        allowed = set(self._defaults())
        unknown = set(self.hyperparameters) - allowed
        if unknown:
            raise ModelError(f"{self.arch} does not take hyperparameter(s) {sorted(unknown)}")

    def _defaults(self) -> Dict[str, Any]:
        if self.arch in CNN_ARCHS:
            return {**TRAINING_DEFAULTS, **DEFAULT_WIDTHS[self.arch]}
        return dict(CLASSICAL_DEFAULTS[self.arch])

    @property
    def is_cnn(self) -> bool:
        return self.arch in CNN_ARCHS

    def hp(self, name: str) -> Any:
        return self.hyperparameters.get(name, self._defaults()[name])

    def widths(self) -> Dict[str, Any]:
        return {k: v for k, v in self.hyperparameters.items() if k in DEFAULT_WIDTHS.get(self.arch, {})}

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["input_shape"] = list(self.input_shape)
        out["hyperparameters"] = {k: list(v) if isinstance(v, tuple) else v
                                  for k, v in self.hyperparameters.items()}
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        return cls(arch=data["arch"], input_shape=tuple(data["input_shape"]),
                   n_classes=int(data["n_classes"]),
                   hyperparameters=dict(data.get("hyperparameters", {})),
                   seed=int(data.get("seed", 0)))


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_bca: float
    test_bca: Optional[float] = None


@dataclass(eq=False)
class TrainedClassifier:
    """A CNN (``network``) or a classical pipeline (``pipeline``) with its spec.

    Attributes:
        spec: architecture and hyperparameters
        network: torch module for CNN archs
        pipeline: fitted object with ``predict_proba`` for classical archs
        training_curve: one record per epoch
        label_space: privacy type or task the labels come from
    """
    spec: ModelSpec
    network: Optional[nn.Module] = None
    pipeline: Optional[Any] = None
    training_curve: List[EpochRecord] = field(default_factory=list)
    label_space: str = ""

    def digest(self) -> str:
        """SHA-256 over the learned parameters."""
        h = hashlib.sha256(self.spec.arch.encode("utf-8"))
        if self.network is not None:
            for name, tensor in self.network.state_dict().items():
                h.update(name.encode("utf-8"))
                h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        elif self.pipeline is not None:
            for name, value in sorted(self.pipeline.state().items()):
                h.update(name.encode("utf-8"))
                h.update(np.ascontiguousarray(value, dtype=np.float64).tobytes())
        return h.hexdigest()

    def curve_dict(self) -> List[Dict[str, Any]]:
        return [asdict(r) for r in self.training_curve]


def build_model(spec: ModelSpec, label_space: str = "") -> TrainedClassifier:
    """Untrained CNN for ``spec``; the forward pass yields logits, ``predict_proba`` probabilities.

    Raises:
        ModelError: classical arch, or input below the receptive field
    """
    if not spec.is_cnn:
        raise ModelError(f"build_model supports CNN archs {CNN_ARCHS}; fit {spec.arch} with its own fit function")
    network = build_network(spec.arch, spec.input_shape, spec.n_classes, spec.seed, **spec.widths())
    return TrainedClassifier(spec=spec, network=network, label_space=label_space)


def _check_inputs(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or tuple(x.shape[1:]) != spec.input_shape:
        raise ModelError(f"{spec.arch} expects trials shaped (N, {spec.input_shape[0]}, "
                         f"{spec.input_shape[1]}), got {x.shape}")
    return x


def check_labels(y: np.ndarray, n_classes: int) -> np.ndarray:
    """Validate 1-based labels and require every class to be present."""
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 1 or y.max() > n_classes):
        raise ModelError(f"labels must lie in 1..{n_classes}, got range {y.min()}..{y.max()}")
    missing = sorted(set(range(1, n_classes + 1)) - set(np.unique(y).tolist()))
    if missing:
        raise ModelError(f"class(es) {missing} absent from the training labels")
    return y


def _param_dtype(network: nn.Module) -> torch.dtype:
    return next(network.parameters()).dtype


def network_logits(network: nn.Module, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for a trial array."""
    was_training = network.training
    network.eval()
    dtype = _param_dtype(network)
    out = []
    try:
        with torch.no_grad():
            for start in range(0, x.shape[0], batch_size):
                xb = torch.as_tensor(np.asarray(x[start:start + batch_size]), dtype=dtype)
                out.append(network(xb).double().numpy())
    finally:
        network.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, 0))


def predict_proba(model: TrainedClassifier, x: np.ndarray) -> np.ndarray:
    """``[N, n_classes]`` class probabilities, rows summing to 1."""
    x = _check_inputs(model.spec, x)
    if model.network is not None:
        logits = network_logits(model.network, x)
        return torch.softmax(torch.as_tensor(logits), dim=1).numpy()
    if model.pipeline is not None:
        return model.pipeline.predict_proba(x)
    raise ModelError(f"{model.spec.arch} classifier holds no parameters")


def labels_from_proba(proba: np.ndarray) -> np.ndarray:
    """1-based argmax; exact ties go to the lowest class index."""
    return np.argmax(np.asarray(proba), axis=1).astype(np.int64) + 1


def predict(model: TrainedClassifier, x: np.ndarray) -> np.ndarray:
    return labels_from_proba(predict_proba(model, x))


def _bca(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    return float(balanced_accuracy_score(y_true, y_pred))


def train_classifier(model: TrainedClassifier, x: np.ndarray, y: np.ndarray,
                     epochs: Optional[int] = None, seed: Optional[int] = None,
                     eval_set: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> TrainedClassifier:
    """Mini-batch Adam on mean cross-entropy; returns a new trained classifier.

    Args:
        model: untrained classifier from :func:`build_model` (left untouched)
        x: ``[N, c, t]`` trials
        y: 1-based labels
        epochs: defaults to the spec's ``epochs``
        seed: shuffling and dropout seed, defaults to the spec's seed
        eval_set: optional ``(x, y)`` whose BCA is recorded per epoch

    Raises:
        ModelError: shape mismatch, labels out of range or a class missing
    """
    spec = model.spec
    if model.network is None:
        raise ModelError(f"train_classifier handles CNN archs only, got {spec.arch}")
    x = _check_inputs(spec, x)
    y = check_labels(y, spec.n_classes)
    if y.size != x.shape[0]:
        raise ModelError(f"{x.shape[0]} trials but {y.size} labels")
    epochs = int(spec.hp("epochs") if epochs is None else epochs)
    seed = spec.seed if seed is None else int(seed)
    batch_size = int(spec.hp("batch_size"))

    network = copy.deepcopy(model.network)
    dtype = _param_dtype(network)
    trained = TrainedClassifier(spec=spec, network=network, label_space=model.label_space)
    if epochs <= 0:
        return trained

    torch.manual_seed(derive_seed(seed, "train"))
    generator = torch.Generator().manual_seed(derive_seed(seed, "shuffle"))
    optimizer = torch.optim.Adam(network.parameters(), lr=float(spec.hp("learning_rate")),
                                 weight_decay=float(spec.hp("weight_decay")))
    xt = torch.as_tensor(x, dtype=dtype)
    yt = torch.as_tensor(y - 1, dtype=torch.long)
    constrained = isinstance(network, EEGNet)

    for epoch in range(1, epochs + 1):
        network.train()
        order = torch.randperm(xt.shape[0], generator=generator)
        total, seen = 0.0, 0
        for start in range(0, xt.shape[0], batch_size):
            idx = order[start:start + batch_size]
            if idx.numel() < 2:
                continue  # batch norm needs two trials
            optimizer.zero_grad()
            loss = F.cross_entropy(network(xt[idx]), yt[idx])
            if not torch.isfinite(loss):
                raise ModelError(f"{spec.arch} training loss became non-finite at epoch {epoch}")
            loss.backward()
            optimizer.step()
            if constrained:
                network.apply_constraints()
            total += float(loss) * idx.numel()
            seen += idx.numel()

        train_bca = _bca(y, labels_from_proba(network_logits(network, x)))
        test_bca = None
        if eval_set is not None:
            ex, ey = eval_set
            test_bca = _bca(np.asarray(ey), labels_from_proba(network_logits(network, _check_inputs(spec, ex))))
        record = EpochRecord(epoch=epoch, loss=total / max(seen, 1), train_bca=train_bca, test_bca=test_bca)
        trained.training_curve.append(record)
        logger.info(f"{spec.arch}[{model.label_space or 'labels'}] epoch {epoch}/{epochs}: "
                    f"loss={record.loss:.4f} train_bca={train_bca:.4f}"
                    + (f" test_bca={test_bca:.4f}" if test_bca is not None else ""))
    network.eval()
    return trained


def freeze(model: TrainedClassifier) -> nn.Module:
    """Eval-mode network with gradients disabled on every parameter."""
    if model.network is None:
        raise ModelError(f"{model.spec.arch} has no differentiable network")
    network = model.network
    network.eval()
    for p in network.parameters():
        p.requires_grad_(False)
    return network


def check_gradients(model: TrainedClassifier, x: np.ndarray, y: np.ndarray, n_entries: int = 32,
                    step: float = 1e-3, seed: int = 0) -> float:
    """Relative error between autograd and central differences of the CE loss.

    Runs in float64 eval mode on a copy; ``n_entries`` parameter entries are
    sampled uniformly over all parameters.
    """
    network = copy.deepcopy(model.network).double().eval()
    xt = torch.as_tensor(np.asarray(x), dtype=torch.float64)
    yt = torch.as_tensor(np.asarray(y) - 1, dtype=torch.long)
    params = [p for p in network.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(seed)
    flat = rng.choice(int(sizes.sum()), size=min(n_entries, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    network.zero_grad()
    F.cross_entropy(network(xt), yt).backward()
    auto, numeric = [], []
    with torch.no_grad():
        for k in flat:
            i = int(np.searchsorted(offsets, k, side="right") - 1)
            entry = params[i].view(-1)
            j = int(k - offsets[i])
            auto.append(float(params[i].grad.view(-1)[j]))
            original = float(entry[j])
            entry[j] = original + step
            plus = float(F.cross_entropy(network(xt), yt))
            entry[j] = original - step
            minus = float(F.cross_entropy(network(xt), yt))
            entry[j] = original
            numeric.append((plus - minus) / (2 * step))
    auto, numeric = np.array(auto), np.array(numeric)
    scale = max(np.linalg.norm(auto), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(auto - numeric) / scale)


def save_checkpoint(model: TrainedClassifier, path: Union[str, Path]) -> Path:
    """Write ``<path>.pt`` (CNN) or ``<path>.pkl`` (classical) plus ``<path>.json``.

    Returns:
        Path: the parameter file written
    """
    base = Path(path)
    sidecar = base.with_suffix(".json")
    blob_path = base.with_suffix(".pt" if model.network is not None else ".pkl")
    meta = {"spec": model.spec.to_dict(), "label_space": model.label_space,
            "training_curve": model.curve_dict(), "digest": model.digest()}
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        if model.network is not None:
            torch.save(model.network.state_dict(), blob_path)
        else:
            with blob_path.open("wb") as fh:
                pickle.dump(model.pipeline, fh)
        sidecar.write_text(json.dumps(meta, indent=1), encoding="utf-8")
    except OSError as e:
        raise FileSystemError(f"cannot write checkpoint {blob_path}: {e}")
    logger.info(f"Saved {model.spec.arch} checkpoint to {blob_path}")
    return blob_path


def load_checkpoint(path: Union[str, Path]) -> TrainedClassifier:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        FileSystemError: sidecar or parameter file missing
        ModelError: parameters do not match the spec
    """
    base = Path(path)
    sidecar = base.with_suffix(".json")
    if not sidecar.is_file():
        raise FileSystemError(f"missing checkpoint sidecar: {sidecar}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    spec = ModelSpec.from_dict(meta["spec"])
    curve = [EpochRecord(**r) for r in meta.get("training_curve", [])]
    label_space = meta.get("label_space", "")

    if spec.is_cnn:
        blob_path = base.with_suffix(".pt")
        if not blob_path.is_file():
            raise FileSystemError(f"missing checkpoint parameters: {blob_path}")
        model = build_model(spec, label_space)
        try:
            model.network.load_state_dict(torch.load(blob_path, weights_only=True))
        except RuntimeError as e:
            raise ModelError(f"checkpoint {blob_path} does not match {spec.arch}: {e}")
        model.network.eval()
    else:
        blob_path = base.with_suffix(".pkl")
        if not blob_path.is_file():
            raise FileSystemError(f"missing checkpoint parameters: {blob_path}")
        with blob_path.open("rb") as fh:
            model = TrainedClassifier(spec=spec, pipeline=pickle.load(fh), label_space=label_space)
    model.training_curve = curve
    return model
