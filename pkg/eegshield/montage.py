"""
Electrode montage: channel name -> 2-D head coordinates.

The built-in montage covers the 62 channels of the public multi-task dataset.
Electrodes are placed on a unit sphere by their 10-20 / 10-10 / 10-5 label
(polar angle from Cz, azimuth from the nose) and mapped to the plane with an
azimuthal equidistant projection, so Cz sits at the origin and the 0% ring
(F9, T9, P9, ...) lands on radius 0.75.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .error_handler import ReportError

logger = logging.getLogger(__name__)

LEE_CHANNELS = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6",
    "T7", "C3", "Cz", "C4", "T8", "TP9", "CP5", "CP1", "CP2", "CP6", "TP10",
    "P7", "P3", "Pz", "P4", "P8", "PO9", "O1", "Oz", "O2", "PO10", "FC3",
    "FC4", "C5", "C1", "C2", "C6", "CP3", "CPz", "CP4", "P1", "P2", "POz",
    "FT9", "FTT9h", "TTP7h", "TP7", "TPP9h", "FT10", "FTT10h", "TPP8h", "TP8",
    "TPP10h", "F9", "F10", "AF7", "AF3", "AF4", "AF8", "PO3", "PO4",
]

# Channel order used by the synthetic generator: left half first, then right.
SYNTHETIC_ORDER = ["F3", "C3", "P3", "Cz", "F4", "C4", "P4", "Pz"]

# Row -> (signed polar angle of its midline point, positive toward the nose;
# azimuth offset from the nose of its point on the 10% ring)
_ROWS = {
    "FP": (72.0, 18.0), "AF": (54.0, 36.0), "F": (36.0, 54.0),
    "FC": (18.0, 72.0), "FT": (18.0, 72.0), "FTT": (9.0, 81.0),
    "C": (0.0, 90.0), "T": (0.0, 90.0), "TTP": (-9.0, 99.0),
    "CP": (-18.0, 108.0), "TP": (-18.0, 108.0), "TPP": (-27.0, 117.0),
    "P": (-36.0, 126.0), "PO": (-54.0, 144.0), "O": (-72.0, 162.0),
}
# Lateral step at which a row meets the 10% ring; Fp1 and O1 sit on it directly
_RING_STEP = {"FP": 1, "O": 1}
_DEFAULT_RING_STEP = 4
_RING_POLAR = 72.0
_OUTER_POLAR = 90.0
_PROJECTION_SPAN = 120.0


def synthetic_channel_names(n_channels: int) -> List[str]:
    """First ``n_channels`` names: the synthetic order, then the remaining montage channels."""
    ordered = SYNTHETIC_ORDER + [ch for ch in LEE_CHANNELS if ch not in SYNTHETIC_ORDER]
    if n_channels <= len(ordered):
        return ordered[:n_channels]
    return ordered + [f"EEG{i + 1:03d}" for i in range(n_channels - len(ordered))]


def _unit(polar_deg: float, azimuth_deg: float) -> np.ndarray:
    """Unit vector, x right, y nose, z up; azimuth counter-clockwise from x."""
    polar, azimuth = math.radians(polar_deg), math.radians(azimuth_deg)
    return np.array([math.sin(polar) * math.cos(azimuth),
                     math.sin(polar) * math.sin(azimuth),
                     math.cos(polar)])


def _slerp(a: np.ndarray, b: np.ndarray, fraction: float) -> np.ndarray:
    omega = math.acos(max(-1.0, min(1.0, float(a @ b))))
    if omega < 1e-12:
        return a
    return (math.sin((1 - fraction) * omega) * a + math.sin(fraction * omega) * b) / math.sin(omega)


def _sphere_position(name: str) -> np.ndarray:
    """Unit-sphere position of a 10-10 / 10-5 label.

    Odd numbers are left, even numbers right, ``z`` the midline. Electrodes
    walk along the great circle from the row's midline point to its point on
    the 10% ring, then on to the 0% ring below it; an ``h`` suffix moves the
    electrode half a step toward the midline.
    """
    match = re.fullmatch(r"([A-Za-z]+?)(z|\d+)(h?)", name)
    if not match:
        raise ReportError(f"cannot place channel '{name}' on the 10-20 grid")
    prefix, index, half = match.groups()
    row = _ROWS.get(prefix.upper())
    if row is None:
        raise ReportError(f"unknown electrode row '{prefix}' in channel '{name}'")
    midline_polar, ring_offset = row
    midline = _unit(abs(midline_polar), 90.0 if midline_polar >= 0 else 270.0)
    if index.lower() == "z":
        return midline

    number = int(index)
    if number == 0:
        raise ReportError(f"cannot place channel '{name}' on the 10-20 grid")
    step = (number + 1) // 2 - (0.5 if half else 0.0)
    azimuth = 90.0 + ring_offset if number % 2 == 1 else 90.0 - ring_offset
    ring = _unit(_RING_POLAR, azimuth)
    ring_step = _RING_STEP.get(prefix.upper(), _DEFAULT_RING_STEP)
    if step <= ring_step:
        return _slerp(midline, ring, step / ring_step)
    outer = _unit(_OUTER_POLAR, azimuth)
    return _slerp(ring, outer, min(step - ring_step, 1.0))


def _project(position: np.ndarray) -> Tuple[float, float]:
    """Azimuthal equidistant projection centred on Cz (x right, y nose)."""
    x, y, z = (float(v) for v in position)
    planar = math.hypot(x, y)
    if planar < 1e-12:
        return 0.0, 0.0
    radius = math.degrees(math.acos(max(-1.0, min(1.0, z)))) / _PROJECTION_SPAN
    return radius * x / planar, radius * y / planar


@dataclass
class Montage:
    """Channel name -> (x, y) head coordinates inside the unit circle"""
    positions: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for name, (x, y) in self.positions.items():
            if math.hypot(x, y) > 1.0 + 1e-9:
                raise ReportError(f"montage position of '{name}' lies outside the unit head circle")

    def resolve(self, channels: Sequence[str]) -> np.ndarray:
        """``[len(channels), 2]`` coordinates; case-insensitive lookup."""
        lookup = {k.lower(): v for k, v in self.positions.items()}
        missing = [ch for ch in channels if ch.lower() not in lookup]
        if missing:
            raise ReportError(f"channels not in montage: {missing}")
        return np.array([lookup[ch.lower()] for ch in channels], dtype=np.float64)


def standard_montage(channels: Optional[Sequence[str]] = None) -> Montage:
    """Built-in projection for ``channels`` (default: the 62 dataset channels)."""
    names = list(channels) if channels is not None else LEE_CHANNELS
    positions = {}
    for name in names:
        positions[name] = _project(_sphere_position(name))
    return Montage(positions)


def load_montage(path: Union[str, Path]) -> Montage:
    """Read a ``name,x,y`` CSV override (header optional)."""
    csv_path = Path(path)
    if not csv_path.is_file():
        raise ReportError(f"montage file not found: {csv_path}")
    try:
        table = pd.read_csv(csv_path, header=None, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ReportError(f"montage file is empty: {csv_path}")
    except pd.errors.ParserError as e:
        raise ReportError(f"{csv_path}: expected 'name,x,y' rows ({e})")
    if table.shape[1] != 3:
        raise ReportError(f"{csv_path}: expected 'name,x,y' rows, got {table.shape[1]} column(s)")
    table.columns = ["name", "x", "y"]
    table["name"] = table["name"].str.strip()
    if str(table["name"].iloc[0]).lower() == "name":
        table = table.iloc[1:]
    if table.isna().to_numpy().any():
        raise ReportError(f"{csv_path}: expected 'name,x,y' rows, found empty fields")
    try:
        coords = table[["x", "y"]].apply(pd.to_numeric)
    except ValueError as e:
        raise ReportError(f"{csv_path}: coordinates must be numbers ({e})")
    positions = {name: (float(x), float(y)) for name, x, y in zip(table["name"], coords["x"], coords["y"])}
    logger.info(f"Loaded montage override with {len(positions)} channels from {csv_path}")
    return Montage(positions)
