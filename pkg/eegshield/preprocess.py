"""
Signal conditioning: band-pass filtering, resampling, epoching, per-group
z-scoring and ERP trial capping.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .eeg_dataset import EEGDataset, derive_seed, snap_to_grid
from .error_handler import (
    ConfigError,
    ErrorLevel,
    SignalError,
    ValidationError,
    error_handler,
)

logger = logging.getLogger(__name__)

DEFAULT_BANDS = {"ERP": (1.0, 40.0), "MI": (4.0, 40.0), "SSVEP": (4.0, 64.0)}


@dataclass
class PreprocessConfig:
    """Per-task bands, target rate, epoch window and ERP cap"""
    band_edges: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BANDS))
    target_rate: float = 128.0
    epoch_window: Tuple[float, float] = (0.0, 2.0)
    erp_cap: Optional[int] = 200
    filter_order: int = 4
    zscore_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.band_edges = {task: (float(lo), float(hi)) for task, (lo, hi) in self.band_edges.items()}
        self.epoch_window = (float(self.epoch_window[0]), float(self.epoch_window[1]))
        for task, (lo, hi) in self.band_edges.items():
            if not 0 < lo < hi:
                raise ConfigError(f"preprocess.band_edges[{task}] must satisfy 0 < lo < hi, got ({lo}, {hi})")
        if self.epoch_window[0] >= self.epoch_window[1]:
            raise ConfigError(f"preprocess.epoch_window start must precede end, got {self.epoch_window}")
        if self.erp_cap is not None and self.erp_cap < 2:
            raise ConfigError(f"preprocess.erp_cap must be >= 2, got {self.erp_cap}")
        if self.target_rate <= 0:
            raise ConfigError(f"preprocess.target_rate must be > 0, got {self.target_rate}")
        if self.filter_order < 1:
            raise ConfigError(f"preprocess.filter_order must be >= 1, got {self.filter_order}")
        if self.zscore_epsilon <= 0:
            raise ConfigError("preprocess.zscore_epsilon must be positive")

    @classmethod
    def from_dict(cls, data: Dict) -> "PreprocessConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown preprocess config key(s): {sorted(unknown)}")
        data = dict(data)
        if "band_edges" in data:
            data["band_edges"] = {**DEFAULT_BANDS, **{k: tuple(v) for k, v in data["band_edges"].items()}}
        if "epoch_window" in data:
            data["epoch_window"] = tuple(data["epoch_window"])
        return cls(**data)

    def to_dict(self) -> Dict:
        return {
            "band_edges": {k: list(v) for k, v in self.band_edges.items()},
            "target_rate": self.target_rate,
            "epoch_window": list(self.epoch_window),
            "erp_cap": self.erp_cap,
            "filter_order": self.filter_order,
            "zscore_epsilon": self.zscore_epsilon,
            "seed": self.seed,
        }

    def band(self, task: str) -> Tuple[float, float]:
        if task not in self.band_edges:
            raise ConfigError(f"no band edges configured for task '{task}'")
        return self.band_edges[task]


def bandpass(x: np.ndarray, lo: float, hi: float, fs: float, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis.

    An upper edge exactly at Nyquist leaves nothing to cut above it, so the
    filter degenerates to a high-pass at ``lo``.

    Raises:
        SignalError: invalid edges, ``hi`` above Nyquist or non-finite input
    """
    x = np.asarray(x, dtype=np.float64)
    nyquist = fs / 2.0
    if not 0 < lo < hi:
        raise SignalError(f"band edges must satisfy 0 < lo < hi, got ({lo}, {hi})")
    if hi > nyquist:
        raise SignalError(f"upper band edge {hi} Hz exceeds Nyquist {nyquist} Hz at fs={fs}")
    if not np.all(np.isfinite(x)):
        raise SignalError("cannot filter non-finite samples")

    if hi == nyquist:
        sos = signal.butter(order, lo, btype="highpass", fs=fs, output="sos")
    else:
        sos = signal.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")
    padlen = min(3 * (2 * sos.shape[0] + 1), x.shape[-1] - 1)
    return signal.sosfiltfilt(sos, x, axis=-1, padlen=max(padlen, 0))


def resample(x: np.ndarray, fs_in: float, fs_out: float = 128.0) -> np.ndarray:
    """Polyphase resampling along the last axis with anti-alias filtering.

    Output length is ``round(t * fs_out / fs_in)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if fs_out > fs_in:
        raise SignalError(f"cannot upsample: fs_out={fs_out} Hz > fs_in={fs_in} Hz")
    if fs_out <= 0:
        raise SignalError(f"fs_out must be positive, got {fs_out}")
    n_out = int(np.floor(x.shape[-1] * fs_out / fs_in + 0.5))
    if fs_out == fs_in:
        return x.copy()
    ratio = Fraction(fs_out / fs_in).limit_denominator(10000)
    out = signal.resample_poly(x, ratio.numerator, ratio.denominator, axis=-1, padtype="line")
    if out.shape[-1] < n_out:
        pad = [(0, 0)] * (out.ndim - 1) + [(0, n_out - out.shape[-1])]
        out = np.pad(out, pad, mode="edge")
    return out[..., :n_out]


def extract_epoch(x: np.ndarray, stim_index: int, window: Tuple[float, float], fs: float) -> np.ndarray:
    """Slice ``[t0, t1)`` seconds after ``stim_index`` from a ``[c, T]`` recording."""
    t0, t1 = window
    if t0 >= t1:
        raise SignalError(f"epoch window start must precede end, got {window}")
    start = int(stim_index) + int(round(t0 * fs))
    length = int(round((t1 - t0) * fs))
    if start < 0 or start + length > x.shape[-1]:
        raise SignalError(
            f"epoch [{start}, {start + length}) exceeds recording of {x.shape[-1]} samples "
            f"(stimulus at {stim_index})")
    return np.array(x[..., start:start + length])


def zscore_per_group(ds: EEGDataset, epsilon: float = 1e-8) -> EEGDataset:
    """Standardize each channel within every (subject, task, session) group."""
    out = np.empty(ds.data.shape, dtype=np.float32)
    for (subject, task, session), idx in ds.group_indices(("subject", "task", "session")).items():
        block = ds.data[idx].astype(np.float64)
        mu = block.mean(axis=(0, 2), keepdims=True)
        sd = block.std(axis=(0, 2), keepdims=True)
        flat = np.flatnonzero(sd.ravel() <= epsilon)
        if flat.size:
            names = [ds.channel_names[i] for i in flat]
            error_handler.handle_error(
                SignalError(f"constant channel(s) {names} in group subject={subject} "
                            f"task={task} session={session}; set to zero", ErrorLevel.WARNING))
        out[idx] = snap_to_grid((block - mu) / (sd + epsilon))
        out[idx[:, None], flat[None, :]] = 0.0
    return ds.with_data(out)


def _stratified_quota(counts: Dict[int, int], n: int) -> Dict[int, int]:
    total = sum(counts.values())
    exact = {k: n * v / total for k, v in counts.items()}
    quota = {k: int(np.floor(e)) for k, e in exact.items()}
    leftover = n - sum(quota.values())
    for k in sorted(exact, key=lambda k: (-(exact[k] - quota[k]), k))[:leftover]:
        quota[k] += 1
    return quota


def stratified_selection(labels: np.ndarray, n: int, seed: int, *keys) -> np.ndarray:
    """Sorted positions of ``n`` entries keeping the class ratio of ``labels``.

    The random stream is derived from ``(seed, "cap", *keys)``.
    """
    labels = np.asarray(labels)
    if labels.size < n:
        raise ValidationError(f"group {keys} has {labels.size} trials, fewer than cap {n}")
    rng = np.random.default_rng(derive_seed(seed, "cap", *keys))
    classes, counts = np.unique(labels, return_counts=True)
    quota = _stratified_quota(dict(zip(classes.tolist(), counts.tolist())), n)
    chosen = [rng.choice(np.flatnonzero(labels == k), size=quota[k], replace=False)
              for k in classes.tolist()]
    return np.sort(np.concatenate(chosen))


def cap_trials(ds: EEGDataset, task: str = "ERP", n: int = 200, seed: int = 0) -> EEGDataset:
    """Keep exactly ``n`` trials of ``task`` per (subject, session), class-stratified.

    Raises:
        ValidationError: a group holds fewer than ``n`` trials
    """
    keep = np.ones(len(ds), dtype=bool)
    task_idx = ds.task_indices(task)
    groups = ds.subset(task_idx).group_indices(("subject", "session")) if task_idx.size else {}
    for (subject, session), local in groups.items():
        idx = task_idx[local]
        selected = stratified_selection(ds.labels[idx], n, seed, task, subject, session)
        keep[idx] = False
        keep[idx[selected]] = True
    return ds.subset(np.flatnonzero(keep))


def preprocess_run(x: np.ndarray, stim_indices: Sequence[int], task: str, fs: float,
                   cfg: PreprocessConfig) -> np.ndarray:
    """Continuous ``[c, T]`` recording -> ``[n, c, t]`` epochs at ``cfg.target_rate``.

    Filtering happens at the original rate, before resampling.
    """
    lo, hi = cfg.band(task)
    filtered = bandpass(x, lo, hi, fs, cfg.filter_order)
    epochs = [extract_epoch(filtered, s, cfg.epoch_window, fs) for s in stim_indices]
    if not epochs:
        raise SignalError(f"no stimuli for task {task}")
    return resample(np.stack(epochs), fs, cfg.target_rate)


def _erp_cap_applies(ds: EEGDataset, cap: int) -> bool:
    idx = ds.task_indices("ERP")
    if not idx.size:
        return False
    sizes = [len(v) for v in ds.subset(idx).group_indices(("subject", "session")).values()]
    if all(size <= cap for size in sizes):
        if any(size < cap for size in sizes):
            error_handler.handle_error(SignalError(
                f"ERP groups already at or below cap {cap} (largest {max(sizes)}); cap skipped",
                ErrorLevel.WARNING))
        return False
    return True


def preprocess_dataset(ds: EEGDataset, cfg: PreprocessConfig) -> EEGDataset:
    """Band-pass per task, resample, z-score per group, cap ERP trials.

    Operates on epoched containers; ``preprocess_run`` handles continuous data.
    """
    data = np.empty(ds.data.shape, dtype=np.float64)
    for task in sorted(set(ds.tasks.tolist())):
        idx = ds.task_indices(task)
        lo, hi = cfg.band(task)
        if hi > ds.sampling_rate / 2:
            error_handler.handle_error(SignalError(
                f"{task} band edge {hi} Hz exceeds Nyquist {ds.sampling_rate / 2} Hz; clamped to Nyquist",
                ErrorLevel.WARNING))
            hi = ds.sampling_rate / 2
        data[idx] = bandpass(ds.data[idx], lo, hi, ds.sampling_rate, cfg.filter_order)
        logger.info(f"Filtered {idx.size} {task} trials to [{lo}, {hi}] Hz")

    rate = ds.sampling_rate
    if cfg.target_rate < rate:
        data = resample(data, rate, cfg.target_rate)
        rate = cfg.target_rate
    out = ds.with_data(snap_to_grid(data), sampling_rate=rate,
                       provenance=f"{ds.provenance} | preprocessed".strip(" |"))
    out = zscore_per_group(out, cfg.zscore_epsilon)
    if cfg.erp_cap is not None and _erp_cap_applies(out, cfg.erp_cap):
        out = cap_trials(out, "ERP", cfg.erp_cap, cfg.seed)
    logger.info(f"Preprocessed dataset: {len(out)} trials, {out.n_channels}x{out.n_samples} at {rate} Hz")
    return out
