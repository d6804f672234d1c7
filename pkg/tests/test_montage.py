"""Test cases for electrode placement"""

import math

import pytest

from eegshield.error_handler import ReportError
from eegshield.montage import (
    LEE_CHANNELS,
    SYNTHETIC_ORDER,
    load_montage,
    standard_montage,
    synthetic_channel_names,
)


def test_standard_montage_covers_dataset_channels():
    montage = standard_montage()
    assert len(montage.positions) == 62
    for x, y in montage.positions.values():
        assert math.hypot(x, y) <= 1.0


def test_geometry():
    pos = standard_montage().positions
    assert pos["Cz"] == (0.0, 0.0)
    assert pos["C3"][0] < 0 < pos["C4"][0]
    assert pos["Fz"][1] > 0 > pos["Pz"][1]
    assert pos["C3"][0] == pytest.approx(-pos["C4"][0])


def test_resolve_is_case_insensitive():
    coords = standard_montage(["Cz", "C3"]).resolve(["cz", "C3"])
    assert coords.shape == (2, 2)
    assert tuple(coords[0]) == (0.0, 0.0)


def test_resolve_missing_channel():
    with pytest.raises(ReportError, match="not in montage"):
        standard_montage(["Cz"]).resolve(["O1"])


def test_unplaceable_channel():
    with pytest.raises(ReportError):
        standard_montage(["EOG1"])


def test_synthetic_channel_names():
    assert synthetic_channel_names(8) == SYNTHETIC_ORDER
    names = synthetic_channel_names(70)
    assert len(names) == 70
    assert set(LEE_CHANNELS) <= set(names)
    assert names[-1] == "EEG008"


def test_load_montage(tmp_path):
    path = tmp_path / "montage.csv"
    path.write_text("name,x,y\nA,0.1,0.2\nB,-0.5,0\n")
    montage = load_montage(path)
    assert montage.positions == {"A": (0.1, 0.2), "B": (-0.5, 0.0)}


def test_load_montage_errors(tmp_path):
    with pytest.raises(ReportError, match="not found"):
        load_montage(tmp_path / "missing.csv")

    bad = tmp_path / "bad.csv"
    bad.write_text("A,0.1\n")
    with pytest.raises(ReportError, match="expected"):
        load_montage(bad)

    outside = tmp_path / "outside.csv"
    outside.write_text("A,2.0,0.0\n")
    with pytest.raises(ReportError, match="outside"):
        load_montage(outside)


def test_default_positions_are_distinct():
    pos = standard_montage().positions
    rounded = {(round(x, 6), round(y, 6)) for x, y in pos.values()}
    assert len(rounded) == len(LEE_CHANNELS)


@pytest.mark.parametrize("name", ["F9", "FT9", "TP9", "PO9", "F10", "FT10", "TP10", "PO10"])
def test_outer_ring_electrodes(name):
    x, y = standard_montage([name]).positions[name]
    assert math.hypot(x, y) == pytest.approx(0.75)
    assert (x < 0) == name.endswith("9")


def test_outer_ring_runs_front_to_back():
    pos = standard_montage().positions
    ys = [pos[name][1] for name in ("F9", "FT9", "TP9", "PO9")]
    assert ys == sorted(ys, reverse=True)
    # half-step labels sit between their neighbours
    assert pos["FT9"][1] > pos["FTT9h"][1] > pos["TP9"][1]


def test_ring_electrodes_keep_10_20_radius():
    pos = standard_montage().positions
    for name in ("Fp1", "F7", "T7", "P7", "O1", "T8"):
        assert math.hypot(*pos[name]) == pytest.approx(72 / 120)


def test_load_montage_rejects_bad_rows(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("A,0.1,0.2\nB,0.1,0.2,0.3\n")
    with pytest.raises(ReportError, match="expected"):
        load_montage(ragged)

    text = tmp_path / "text.csv"
    text.write_text("name,x,y\nA,left,0.2\n")
    with pytest.raises(ReportError, match="numbers"):
        load_montage(text)

    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ReportError, match="empty"):
        load_montage(empty)
