"""
EEG dataset model and the on-disk container (``meta.json`` + ``data.f32``).

Trials are stored column-wise: one ``[N, c, t]`` float32 array plus one label
array per field. ``Trial`` objects are read-only views built on demand.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .error_handler import DatasetError, FileSystemError, ValidationError

logger = logging.getLogger(__name__)

TASKS = ("ERP", "MI", "SSVEP")
PRIVACY_TYPES = ("identity", "gender", "experience")

META_FILE = "meta.json"
DATA_FILE = "data.f32"

# Fixed-point grid for stored samples and perturbations; sums of grid values
# below 16 in magnitude are exact in float32.
GRID_STEP = 2.0 ** -20


def snap_to_grid(x: np.ndarray) -> np.ndarray:
    """Round to the nearest multiple of ``GRID_STEP`` and return float32."""
    return (np.round(np.asarray(x, dtype=np.float64) / GRID_STEP) * GRID_STEP).astype(np.float32)


def derive_seed(seed: int, *keys) -> int:
    """Deterministic child seed from a base seed and arbitrary keys."""
    payload = json.dumps([int(seed), *[str(k) for k in keys]]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:4], "little") & 0x7FFFFFFF


def _readonly(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Trial:
    """A single epoch with its task label and privacy labels"""
    data: np.ndarray
    task: str
    label: int
    privacy: Dict[str, int]
    subject: int
    session: int


@dataclass(eq=False)
class EEGDataset:
    """Ordered trials sharing one channel layout and sampling rate.

    Attributes:
        data: ``[N, c, t]`` float32 samples.
        tasks: task name per trial.
        labels: task label per trial, 1-based.
        subjects: subject id per trial.
        sessions: session id per trial.
        privacy: privacy type -> 1-based class per trial.
        channel_names: channel labels, length ``c``.
        sampling_rate: Hz.
        task_vocab: task -> number of task classes.
        privacy_vocab: privacy type -> number of classes.
        provenance: free-form origin description.
        ssvep_frequencies: flicker frequency of each SSVEP class, if known.
    """
    data: np.ndarray
    tasks: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    sessions: np.ndarray
    privacy: Dict[str, np.ndarray]
    channel_names: List[str]
    sampling_rate: float
    task_vocab: Dict[str, int]
    privacy_vocab: Dict[str, int]
    provenance: str = ""
    ssvep_frequencies: Optional[List[float]] = None

    def __post_init__(self):
        self.data = _readonly(self.data, np.float32)
        self.tasks = _readonly(self.tasks, object)
        self.labels = _readonly(self.labels, np.int64)
        self.subjects = _readonly(self.subjects, np.int64)
        self.sessions = _readonly(self.sessions, np.int64)
        self.privacy = {m: _readonly(v, np.int64) for m, v in self.privacy.items()}
        self.channel_names = list(self.channel_names)
        self.task_vocab = dict(self.task_vocab)
        self.privacy_vocab = dict(self.privacy_vocab)
        self.sampling_rate = float(self.sampling_rate)
        if self.ssvep_frequencies is not None:
            self.ssvep_frequencies = [float(f) for f in self.ssvep_frequencies]
        self._validate_structure()

    def _validate_structure(self) -> None:
        if self.data.ndim != 3:
            raise DatasetError(f"data must be [N, c, t], got shape {self.data.shape}")
        n = self.data.shape[0]
        if n == 0:
            raise DatasetError("empty dataset")
        for name in ("tasks", "labels", "subjects", "sessions"):
            if len(getattr(self, name)) != n:
                raise DatasetError(f"{name} has {len(getattr(self, name))} entries for {n} trials")
        if len(self.channel_names) != self.data.shape[1]:
            raise DatasetError(
                f"channel_names has {len(self.channel_names)} entries for {self.data.shape[1]} channels")
        if self.sampling_rate <= 0:
            raise DatasetError(f"sampling_rate must be positive, got {self.sampling_rate}")
        if not np.all(np.isfinite(self.data)):
            raise DatasetError("trial data contains non-finite values")

        unknown = set(self.privacy) ^ set(self.privacy_vocab)
        if unknown:
            raise DatasetError(f"privacy labels and privacy_vocab disagree on types: {sorted(unknown)}")
        for m, n_classes in self.privacy_vocab.items():
            if n_classes < 2:
                raise DatasetError(f"privacy type '{m}' needs at least 2 classes, got {n_classes}")
            values = self.privacy[m]
            if len(values) != n:
                raise DatasetError(f"privacy labels for '{m}' have {len(values)} entries for {n} trials")
            if values.min() < 1 or values.max() > n_classes:
                raise DatasetError(f"privacy labels for '{m}' outside 1..{n_classes}")

        for task in set(self.tasks.tolist()):
            if task not in self.task_vocab:
                raise DatasetError(f"task '{task}' missing from task_vocab")
            task_labels = self.labels[self.tasks == task]
            if task_labels.min() < 1 or task_labels.max() > self.task_vocab[task]:
                raise DatasetError(f"task labels for '{task}' outside 1..{self.task_vocab[task]}")

    def check_invariants(self) -> None:
        """Check that every (privacy type, class) pair has at least one trial."""
        for m, n_classes in self.privacy_vocab.items():
            present = set(np.unique(self.privacy[m]).tolist())
            missing = sorted(set(range(1, n_classes + 1)) - present)
            if missing:
                raise DatasetError(f"privacy type '{m}' has no trials for classes {missing}")

    # -- views -----------------------------------------------------------

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, index: int) -> Trial:
        return Trial(
            data=self.data[index],
            task=str(self.tasks[index]),
            label=int(self.labels[index]),
            privacy={m: int(v[index]) for m, v in self.privacy.items()},
            subject=int(self.subjects[index]),
            session=int(self.sessions[index]),
        )

    @property
    def trials(self) -> List[Trial]:
        return [self[i] for i in range(len(self))]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    @property
    def session_ids(self) -> List[int]:
        return sorted(np.unique(self.sessions).tolist())

    def privacy_labels(self, privacy_type: str) -> np.ndarray:
        if privacy_type not in self.privacy_vocab:
            raise ValidationError(f"unknown privacy type '{privacy_type}'")
        return self.privacy[privacy_type]

    def task_indices(self, task: str) -> np.ndarray:
        return np.flatnonzero(self.tasks == task)

    def group_indices(self, keys: Sequence[str] = ("subject", "task", "session")) -> Dict[tuple, np.ndarray]:
        """Trial indices per group, groups in order of first appearance."""
        columns = {"subject": self.subjects, "task": self.tasks, "session": self.sessions,
                   "label": self.labels}
        groups: Dict[tuple, List[int]] = {}
        for i in range(len(self)):
            key = tuple(columns[k][i].item() if hasattr(columns[k][i], "item") else columns[k][i]
                        for k in keys)
            groups.setdefault(key, []).append(i)
        return {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()}

    def subset(self, indices: Iterable[int]) -> "EEGDataset":
        """New dataset holding the given trials in the given order."""
        idx = np.asarray(list(indices), dtype=np.int64)
        return EEGDataset(
            data=self.data[idx],
            tasks=self.tasks[idx],
            labels=self.labels[idx],
            subjects=self.subjects[idx],
            sessions=self.sessions[idx],
            privacy={m: v[idx] for m, v in self.privacy.items()},
            channel_names=self.channel_names,
            sampling_rate=self.sampling_rate,
            task_vocab=self.task_vocab,
            privacy_vocab=self.privacy_vocab,
            provenance=self.provenance,
            ssvep_frequencies=self.ssvep_frequencies,
        )

    def with_data(self, data: np.ndarray, sampling_rate: Optional[float] = None,
                  provenance: Optional[str] = None) -> "EEGDataset":
        """Same labels and metadata, new sample array."""
        return EEGDataset(
            data=data,
            tasks=self.tasks,
            labels=self.labels,
            subjects=self.subjects,
            sessions=self.sessions,
            privacy=self.privacy,
            channel_names=self.channel_names,
            sampling_rate=self.sampling_rate if sampling_rate is None else sampling_rate,
            task_vocab=self.task_vocab,
            privacy_vocab=self.privacy_vocab,
            provenance=self.provenance if provenance is None else provenance,
            ssvep_frequencies=self.ssvep_frequencies,
        )

    @classmethod
    def from_trials(cls, trials: Sequence[Trial], channel_names: List[str], sampling_rate: float,
                    task_vocab: Dict[str, int], privacy_vocab: Dict[str, int],
                    provenance: str = "", ssvep_frequencies: Optional[List[float]] = None) -> "EEGDataset":
        """Build a dataset from individual trials, rejecting ragged shapes."""
        if not trials:
            raise DatasetError("empty dataset")
        shape = np.shape(trials[0].data)
        for i, trial in enumerate(trials):
            if np.shape(trial.data) != shape:
                raise DatasetError(f"trial {i} has shape {np.shape(trial.data)}, expected {shape}")
            unknown = set(trial.privacy) - set(privacy_vocab)
            if unknown:
                raise DatasetError(f"trial {i} carries unknown privacy type(s) {sorted(unknown)}")
            missing = set(privacy_vocab) - set(trial.privacy)
            if missing:
                raise DatasetError(f"trial {i} is missing privacy label(s) {sorted(missing)}")
        return cls(
            data=np.stack([np.asarray(t.data, dtype=np.float32) for t in trials]),
            tasks=np.array([t.task for t in trials], dtype=object),
            labels=np.array([t.label for t in trials]),
            subjects=np.array([t.subject for t in trials]),
            sessions=np.array([t.session for t in trials]),
            privacy={m: np.array([t.privacy[m] for t in trials]) for m in privacy_vocab},
            channel_names=channel_names,
            sampling_rate=sampling_rate,
            task_vocab=task_vocab,
            privacy_vocab=privacy_vocab,
            provenance=provenance,
            ssvep_frequencies=ssvep_frequencies,
        )

    # -- identity --------------------------------------------------------

    def meta_dict(self) -> dict:
        meta = {
            "sampling_rate": self.sampling_rate,
            "channels": list(self.channel_names),
            "shape": [len(self), self.n_channels, self.n_samples],
            "tasks": dict(self.task_vocab),
            "privacy_types": dict(self.privacy_vocab),
            "provenance": self.provenance,
            "trials": [
                {
                    "subject": int(self.subjects[i]),
                    "session": int(self.sessions[i]),
                    "task": str(self.tasks[i]),
                    "y": int(self.labels[i]),
                    "privacy": {m: int(self.privacy[m][i]) for m in self.privacy_vocab},
                }
                for i in range(len(self))
            ],
        }
        if self.ssvep_frequencies is not None:
            meta["ssvep_frequencies"] = list(self.ssvep_frequencies)
        return meta

    def meta_bytes(self) -> bytes:
        return json.dumps(self.meta_dict(), indent=1).encode("utf-8")

    def data_bytes(self) -> bytes:
        return self.data.astype("<f4").tobytes(order="C")

    def digest(self) -> str:
        """SHA-256 over the canonical container bytes."""
        h = hashlib.sha256()
        h.update(self.meta_bytes())
        h.update(self.data_bytes())
        return h.hexdigest()

    def equals(self, other: "EEGDataset") -> bool:
        return (isinstance(other, EEGDataset)
                and self.meta_bytes() == other.meta_bytes()
                and self.data_bytes() == other.data_bytes())


def save_dataset(ds: EEGDataset, path: Union[str, Path]) -> None:
    """Write ``meta.json`` and ``data.f32`` into ``path``.

    Args:
        ds: dataset to write
        path: target directory, created if needed

    Raises:
        FileSystemError: the directory cannot be created or written
    """
    out_dir = Path(path)
    meta = ds.meta_bytes()
    blob = ds.data_bytes()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / META_FILE).write_bytes(meta)
        (out_dir / DATA_FILE).write_bytes(blob)
    except OSError as e:
        raise FileSystemError(f"cannot write dataset container to {out_dir}: {e}")
    logger.info(f"Saved {len(ds)} trials ({ds.n_channels}x{ds.n_samples}) to {out_dir}")


_REQUIRED_META = ("sampling_rate", "channels", "shape", "tasks", "privacy_types", "trials")


def load_dataset(path: Union[str, Path]) -> EEGDataset:
    """Read a container written by :func:`save_dataset`.

    Raises:
        FileSystemError: a container file is missing
        DatasetError: schema violation, size mismatch, unknown privacy type or empty dataset
    """
    in_dir = Path(path)
    meta_path = in_dir / META_FILE
    data_path = in_dir / DATA_FILE
    for required in (meta_path, data_path):
        if not required.is_file():
            raise FileSystemError(f"missing container file: {required}")

    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"meta.json is not valid JSON: {e}")
    for key in _REQUIRED_META:
        if key not in meta:
            raise DatasetError(f"meta.json missing required field '{key}'")

    shape = meta["shape"]
    if not (isinstance(shape, list) and len(shape) == 3 and all(isinstance(s, int) and s >= 0 for s in shape)):
        raise DatasetError(f"meta.json field 'shape' must be [N, c, t], got {shape}")
    n, c, t = shape
    if n == 0 or not meta["trials"]:
        raise DatasetError("empty dataset")

    blob = data_path.read_bytes()
    expected = n * c * t * 4
    if len(blob) != expected:
        raise DatasetError(
            f"size mismatch: meta.json 'shape' {shape} needs {expected} bytes "
            f"but data.f32 holds {len(blob)} bytes")
    if len(meta["trials"]) != n:
        raise DatasetError(f"meta.json 'trials' lists {len(meta['trials'])} entries, 'shape' declares {n}")

    privacy_vocab = {str(k): int(v) for k, v in meta["privacy_types"].items()}
    for i, trial in enumerate(meta["trials"]):
        for key in ("subject", "session", "task", "y", "privacy"):
            if key not in trial:
                raise DatasetError(f"meta.json trials[{i}] missing field '{key}'")
        unknown = set(trial["privacy"]) - set(privacy_vocab)
        if unknown:
            raise DatasetError(f"meta.json trials[{i}].privacy has unknown privacy type(s) {sorted(unknown)}")
        missing = set(privacy_vocab) - set(trial["privacy"])
        if missing:
            raise DatasetError(f"meta.json trials[{i}].privacy is missing type(s) {sorted(missing)}")

    data = np.frombuffer(blob, dtype="<f4").reshape(n, c, t).astype(np.float32)
    trials = meta["trials"]
    ds = EEGDataset(
        data=data,
        tasks=np.array([tr["task"] for tr in trials], dtype=object),
        labels=np.array([tr["y"] for tr in trials]),
        subjects=np.array([tr["subject"] for tr in trials]),
        sessions=np.array([tr["session"] for tr in trials]),
        privacy={m: np.array([tr["privacy"][m] for tr in trials]) for m in privacy_vocab},
        channel_names=meta["channels"],
        sampling_rate=meta["sampling_rate"],
        task_vocab={str(k): int(v) for k, v in meta["tasks"].items()},
        privacy_vocab=privacy_vocab,
        provenance=meta.get("provenance", ""),
        ssvep_frequencies=meta.get("ssvep_frequencies"),
    )
    ds.check_invariants()
    logger.info(f"Loaded {n} trials from {in_dir}")
    return ds


def split_by_session(ds: EEGDataset, holdout_session: int) -> Tuple[EEGDataset, EEGDataset]:
    """Split into (other sessions, holdout session).

    Raises:
        ValidationError: fewer than two sessions, or holdout absent
    """
    sessions = ds.session_ids
    if len(sessions) < 2:
        raise ValidationError(f"need at least 2 sessions to split, found {sessions}")
    if holdout_session not in sessions:
        raise ValidationError(f"holdout session {holdout_session} not in dataset sessions {sessions}")
    mask = ds.sessions == holdout_session
    return ds.subset(np.flatnonzero(~mask)), ds.subset(np.flatnonzero(mask))
