"""
Figures comparing original and protected trials: trace overlays,
spectrograms, topographic maps and training curves.

Every figure is written as ``<name>.json`` (the exact plotted numbers and
parameters) plus ``<name>.png`` rendered from that sidecar alone.
"""

import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402
from scipy import interpolate, signal  # noqa: E402

from .eeg_dataset import EEGDataset  # noqa: E402
from .error_handler import ReportError  # noqa: E402
from .evaluation import EvalReport  # noqa: E402
from .montage import Montage, standard_montage  # noqa: E402

logger = logging.getLogger(__name__)

FIGURES = ("overlay", "spectrogram", "topoplot", "curves")
DEFAULT_OVERLAY_CHANNELS = ("F4", "Cz", "F3")
TOPO_STATISTICS = {
    "ERP": {"statistic": "window", "range": (0.25, 0.45)},
    "MI": {"statistic": "band", "range": (8.0, 13.0)},
    "SSVEP": {"statistic": "band", "range": (4.0, 30.0)},
}
GRID_RESOLUTION = 64
FIGURE_DPI = 100


@dataclass
class FigureFiles:
    image: Path
    sidecar: Path


def select_trials(ds: EEGDataset, task: Optional[str] = None, label: Optional[int] = None,
                  privacy: Optional[Dict[str, int]] = None) -> np.ndarray:
    """Indices of trials matching every given condition."""
    mask = np.ones(len(ds), dtype=bool)
    if task is not None:
        mask &= ds.tasks == task
    if label is not None:
        mask &= ds.labels == label
    for m, p in (privacy or {}).items():
        mask &= ds.privacy_labels(m) == p
    return np.flatnonzero(mask)


def _condition(task, label, privacy) -> Dict[str, Any]:
    return {"task": task, "label": label, "privacy": dict(privacy or {})}


def _channel_index(ds: EEGDataset, channel: str) -> int:
    lookup = {name.lower(): i for i, name in enumerate(ds.channel_names)}
    if channel.lower() not in lookup:
        raise ReportError(f"unknown channel '{channel}'; dataset has {ds.channel_names}")
    return lookup[channel.lower()]


def _sidecar_text(sidecar: Dict[str, Any]) -> str:
    return json.dumps(sidecar, indent=1, sort_keys=True)


def _write_figure(sidecar: Dict[str, Any], out_dir: Union[str, Path], name: str) -> FigureFiles:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sidecar_path = out / f"{name}.json"
    image_path = out / f"{name}.png"
    try:
        sidecar_path.write_text(_sidecar_text(sidecar), encoding="utf-8")
        image_path.write_bytes(render_sidecar(sidecar))
    except OSError as e:
        raise ReportError(f"cannot write figure {name} to {out}: {e}")
    logger.info(f"Wrote {sidecar['figure']} figure {image_path}")
    return FigureFiles(image=image_path, sidecar=sidecar_path)


# -- data ---------------------------------------------------------------

def overlay_data(original: np.ndarray, protected: np.ndarray, channel_names: Sequence[str],
                 channels: Optional[Sequence[str]], magnify: float, fs: float) -> Dict[str, Any]:
    original, protected = np.asarray(original, np.float64), np.asarray(protected, np.float64)
    if original.shape != protected.shape:
        raise ReportError(f"overlay trials differ in shape: {original.shape} vs {protected.shape}")
    lookup = {name.lower(): i for i, name in enumerate(channel_names)}
    if channels is None:
        channels = [ch for ch in DEFAULT_OVERLAY_CHANNELS if ch.lower() in lookup] or list(channel_names[:3])
    unknown = [ch for ch in channels if ch.lower() not in lookup]
    if unknown:
        raise ReportError(f"unknown channel(s) {unknown}")
    idx = [lookup[ch.lower()] for ch in channels]
    return {
        "figure": "overlay",
        "channels": list(channels),
        "magnify": float(magnify),
        "sampling_rate": float(fs),
        "time": (np.arange(original.shape[-1]) / fs).tolist(),
        "original": original[idx].tolist(),
        "protected": protected[idx].tolist(),
        "difference": ((protected[idx] - original[idx]) * magnify).tolist(),
    }


def spectrogram_data(ds: EEGDataset, channel: str = "Cz", task: Optional[str] = None,
                     label: Optional[int] = None, privacy: Optional[Dict[str, int]] = None) -> Dict[str, Any]:
    """Trial-averaged STFT magnitude: 1 s Hann window, 50% overlap."""
    idx = select_trials(ds, task, label, privacy)
    if not idx.size:
        raise ReportError(f"no trials match condition {_condition(task, label, privacy)}")
    ch = _channel_index(ds, channel)
    nperseg = min(int(round(ds.sampling_rate)), ds.n_samples)
    noverlap = nperseg // 2
    freqs, times, z = signal.stft(ds.data[idx, ch].astype(np.float64), fs=ds.sampling_rate,
                                  window="hann", nperseg=nperseg, noverlap=noverlap, axis=-1)
    return {
        "figure": "spectrogram",
        "channel": ds.channel_names[ch],
        "condition": _condition(task, label, privacy),
        "n_trials": int(idx.size),
        "window": "hann",
        "nperseg": nperseg,
        "noverlap": noverlap,
        "sampling_rate": ds.sampling_rate,
        "frequencies": freqs.tolist(),
        "times": times.tolist(),
        "magnitude": np.abs(z).mean(axis=0).tolist(),
    }


def channel_statistic(ds: EEGDataset, idx: np.ndarray, statistic: str, span: Tuple[float, float]) -> np.ndarray:
    """Per-channel mean band power (``band``) or mean amplitude in a time window (``window``)."""
    x = ds.data[idx].astype(np.float64)
    lo, hi = span
    if statistic == "band":
        freqs, psd = signal.periodogram(x, fs=ds.sampling_rate, window="boxcar", axis=-1)
        bins = (freqs >= lo) & (freqs <= hi)
        if not bins.any():
            raise ReportError(f"band [{lo}, {hi}] Hz holds no frequency bin")
        return psd[..., bins].mean(axis=(0, 2))
    if statistic == "window":
        start, stop = int(round(lo * ds.sampling_rate)), int(round(hi * ds.sampling_rate))
        if not 0 <= start < stop <= ds.n_samples:
            raise ReportError(f"time window [{lo}, {hi}] s lies outside the trial")
        return x[..., start:stop].mean(axis=(0, 2))
    raise ReportError(f"unknown topoplot statistic '{statistic}'")


def interpolate_map(positions: np.ndarray, values: np.ndarray,
                    resolution: int = GRID_RESOLUTION) -> Tuple[np.ndarray, np.ndarray]:
    """Linear interpolation over the head disc, nearest-neighbour fill outside the hull.

    Returns ``(axis, grid)``; grid cells outside the unit circle are NaN.
    """
    axis = np.linspace(-1.0, 1.0, resolution)
    gx, gy = np.meshgrid(axis, axis)
    grid = interpolate.griddata(positions, values, (gx, gy), method="linear")
    nearest = interpolate.griddata(positions, values, (gx, gy), method="nearest")
    grid = np.where(np.isnan(grid), nearest, grid)
    grid[gx ** 2 + gy ** 2 > 1.0] = np.nan
    return axis, grid


def topoplot_data(ds: EEGDataset, montage: Optional[Montage] = None, task: Optional[str] = None,
                  label: Optional[int] = None, privacy: Optional[Dict[str, int]] = None,
                  statistic: Optional[str] = None, span: Optional[Tuple[float, float]] = None) -> Dict[str, Any]:
    idx = select_trials(ds, task, label, privacy)
    if not idx.size:
        raise ReportError(f"no trials match condition {_condition(task, label, privacy)}")
    default = TOPO_STATISTICS.get(task or "", {"statistic": "band", "range": (8.0, 13.0)})
    statistic = statistic or default["statistic"]
    span = tuple(span or default["range"])
    montage = montage or standard_montage(ds.channel_names)
    positions = montage.resolve(ds.channel_names)
    values = channel_statistic(ds, idx, statistic, span)
    axis, grid = interpolate_map(positions, values)
    return {
        "figure": "topoplot",
        "condition": _condition(task, label, privacy),
        "n_trials": int(idx.size),
        "statistic": statistic,
        "range": list(span),
        "channels": list(ds.channel_names),
        "positions": positions.tolist(),
        "values": values.tolist(),
        "interpolation": "linear, nearest fill outside hull",
        "axis": axis.tolist(),
        "grid": [[None if np.isnan(v) else float(v) for v in row] for row in grid],
    }


def curves_data(reports: Sequence[EvalReport]) -> Dict[str, Any]:
    """Per (kind, label space, arch, dataset) the run-averaged train/test BCA per epoch."""
    grouped: Dict[Tuple[str, str, str, str], List[List[Dict[str, Any]]]] = {}
    for report in reports:
        for run in report.runs:
            if run.get("curve"):
                key = (run["kind"], run["label_space"], run["arch"], run["dataset"])
                grouped.setdefault(key, []).append(run["curve"])
    if not grouped:
        raise ReportError("evaluation reports carry no per-epoch training curves")
    series = []
    for (kind, label_space, arch, dataset), curves in grouped.items():
        length = min(len(c) for c in curves)
        train = np.mean([[r["train_bca"] for r in c[:length]] for c in curves], axis=0)
        tests = [[r.get("test_bca") for r in c[:length]] for c in curves]
        test = None
        if all(v is not None for t in tests for v in t):
            test = np.mean(tests, axis=0).tolist()
        series.append({"kind": kind, "label_space": label_space, "arch": arch, "dataset": dataset,
                       "epochs": list(range(1, length + 1)), "train_bca": train.tolist(), "test_bca": test})
    return {"figure": "curves", "series": series}


# -- rendering ----------------------------------------------------------

def _png_bytes(fig: plt.Figure) -> bytes:
    fig.canvas.draw()
    rgba = np.asarray(fig.canvas.buffer_rgba())
    plt.close(fig)
    buf = io.BytesIO()
    Image.fromarray(rgba).save(buf, format="PNG")
    return buf.getvalue()


def _render_overlay(sc: Dict[str, Any]) -> plt.Figure:
    n = len(sc["channels"])
    fig, axes = plt.subplots(n, 1, figsize=(8, 2 * n), dpi=FIGURE_DPI, squeeze=False)
    for ax, ch, orig, prot, diff in zip(axes[:, 0], sc["channels"], sc["original"],
                                        sc["protected"], sc["difference"]):
        ax.plot(sc["time"], orig, color="#1f77b4", linewidth=0.8, label="original")
        ax.plot(sc["time"], prot, color="#d62728", linewidth=0.8, label="protected")
        ax.plot(sc["time"], diff, color="#2ca02c", linewidth=0.8, label=f"difference x{sc['magnify']:g}")
        ax.set_ylabel(ch)
    axes[0, 0].legend(loc="upper right", fontsize=7)
    axes[-1, 0].set_xlabel("time (s)")
    fig.tight_layout()
    return fig


def _render_spectrogram(sc: Dict[str, Any]) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(6, 4), dpi=FIGURE_DPI)
    mesh = ax.pcolormesh(sc["times"], sc["frequencies"], np.array(sc["magnitude"]), shading="nearest")
    fig.colorbar(mesh, ax=ax)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("frequency (Hz)")
    ax.set_title(f"{sc['channel']} ({sc['n_trials']} trials)")
    fig.tight_layout()
    return fig


def _render_topoplot(sc: Dict[str, Any]) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(5, 5), dpi=FIGURE_DPI)
    grid = np.array([[np.nan if v is None else v for v in row] for row in sc["grid"]])
    mesh = ax.pcolormesh(sc["axis"], sc["axis"], grid, shading="nearest")
    positions = np.array(sc["positions"])
    ax.scatter(positions[:, 0], positions[:, 1], s=8, color="k")
    ax.add_patch(plt.Circle((0, 0), 1.0, fill=False, color="k"))
    ax.set_aspect("equal")
    ax.set_axis_off()
    fig.colorbar(mesh, ax=ax, shrink=0.7)
    ax.set_title(f"{sc['statistic']} {sc['range'][0]:g}-{sc['range'][1]:g}")
    fig.tight_layout()
    return fig


def _render_curves(sc: Dict[str, Any]) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(8, 5), dpi=FIGURE_DPI)
    for s in sc["series"]:
        name = f"{s['label_space']}/{s['arch']}/{s['dataset']}"
        style = "-" if s["dataset"] == "original" else "--"
        ax.plot(s["epochs"], s["train_bca"], style, linewidth=0.8, label=f"{name} train")
        if s["test_bca"] is not None:
            ax.plot(s["epochs"], s["test_bca"], style, linewidth=1.4, label=f"{name} test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("BCA")
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    return fig


_RENDERERS: Dict[str, Callable[[Dict[str, Any]], plt.Figure]] = {
    "overlay": _render_overlay,
    "spectrogram": _render_spectrogram,
    "topoplot": _render_topoplot,
    "curves": _render_curves,
}


def render_sidecar(sidecar: Dict[str, Any]) -> bytes:
    """PNG bytes of the figure described by ``sidecar``."""
    kind = sidecar.get("figure")
    if kind not in _RENDERERS:
        raise ReportError(f"unknown figure kind '{kind}'")
    return _png_bytes(_RENDERERS[kind](sidecar))


# -- public operations --------------------------------------------------

def plot_overlay(original: np.ndarray, protected: np.ndarray, channel_names: Sequence[str],
                 out_dir: Union[str, Path], channels: Optional[Sequence[str]] = None, magnify: float = 10.0,
                 fs: float = 128.0, name: str = "overlay") -> FigureFiles:
    """Original trace, protected trace and magnified difference per channel."""
    return _write_figure(overlay_data(original, protected, channel_names, channels, magnify, fs), out_dir, name)


def plot_spectrogram(ds: EEGDataset, out_dir: Union[str, Path], channel: str = "Cz", task: Optional[str] = None,
                     label: Optional[int] = None, privacy: Optional[Dict[str, int]] = None,
                     name: str = "spectrogram") -> FigureFiles:
    return _write_figure(spectrogram_data(ds, channel, task, label, privacy), out_dir, name)


def plot_topoplot(ds: EEGDataset, out_dir: Union[str, Path], montage: Optional[Montage] = None,
                  task: Optional[str] = None, label: Optional[int] = None,
                  privacy: Optional[Dict[str, int]] = None, statistic: Optional[str] = None,
                  span: Optional[Tuple[float, float]] = None, name: str = "topoplot") -> FigureFiles:
    return _write_figure(topoplot_data(ds, montage, task, label, privacy, statistic, span), out_dir, name)


def plot_training_curves(reports: Sequence[EvalReport], out_dir: Union[str, Path],
                         name: str = "curves") -> FigureFiles:
    return _write_figure(curves_data(reports), out_dir, name)


def compare_spectrograms(ds_original: EEGDataset, ds_protected: EEGDataset, channel: str = "Cz",
                         task: Optional[str] = None, label: Optional[int] = None) -> float:
    """Largest absolute cell difference relative to the original's largest cell."""
    a = np.array(spectrogram_data(ds_original, channel, task, label)["magnitude"])
    b = np.array(spectrogram_data(ds_protected, channel, task, label)["magnitude"])
    return float(np.abs(a - b).max() / max(a.max(), 1e-12))


def compare_topoplots(ds_original: EEGDataset, ds_protected: EEGDataset, task: Optional[str] = None,
                      statistic: Optional[str] = None, span: Optional[Tuple[float, float]] = None) -> float:
    """Largest per-channel relative difference of the topoplot statistic."""
    default = TOPO_STATISTICS.get(task or "", {"statistic": "band", "range": (8.0, 13.0)})
    statistic = statistic or default["statistic"]
    span = tuple(span or default["range"])
    a = channel_statistic(ds_original, select_trials(ds_original, task), statistic, span)
    b = channel_statistic(ds_protected, select_trials(ds_protected, task), statistic, span)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-12)))
