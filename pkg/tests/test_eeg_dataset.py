"""Test cases for the dataset model and container"""

import json

import numpy as np
import pytest

from eegshield.eeg_dataset import (
    DATA_FILE,
    GRID_STEP,
    META_FILE,
    EEGDataset,
    Trial,
    derive_seed,
    load_dataset,
    save_dataset,
    snap_to_grid,
    split_by_session,
)
from eegshield.error_handler import DatasetError, FileSystemError, ValidationError


def _trial(subject=1, session=1, task="MI", label=1, gender=1, value=0.0):
    return Trial(data=np.full((2, 4), value, dtype=np.float32), task=task, label=label,
                 privacy={"identity": subject, "gender": gender}, subject=subject, session=session)


def _small():
    trials = [_trial(1, 1, gender=1), _trial(2, 1, gender=2, label=2),
              _trial(1, 2, gender=1, label=2), _trial(2, 2, gender=2)]
    return EEGDataset.from_trials(trials, ["C3", "C4"], 128.0, {"MI": 2}, {"identity": 2, "gender": 2})


def test_save_load_round_trip(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")

    assert loaded.equals(tiny_dataset)
    assert loaded.digest() == tiny_dataset.digest()
    assert loaded.ssvep_frequencies == tiny_dataset.ssvep_frequencies


def test_container_layout(tmp_path):
    ds = _small()
    save_dataset(ds, tmp_path)
    meta = json.loads((tmp_path / META_FILE).read_text())

    assert meta["shape"] == [4, 2, 4]
    assert meta["channels"] == ["C3", "C4"]
    assert meta["trials"][1] == {"subject": 2, "session": 1, "task": "MI", "y": 2,
                                 "privacy": {"identity": 2, "gender": 2}}
    assert (tmp_path / DATA_FILE).stat().st_size == 4 * 2 * 4 * 4


def test_save_twice_is_byte_identical(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path / "a")
    save_dataset(tiny_dataset, tmp_path / "b")
    for name in (META_FILE, DATA_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_missing_file(tmp_path):
    with pytest.raises(FileSystemError):
        load_dataset(tmp_path)


def test_load_size_mismatch(tmp_path):
    save_dataset(_small(), tmp_path)
    blob = (tmp_path / DATA_FILE).read_bytes()
    (tmp_path / DATA_FILE).write_bytes(blob[:-4])
    with pytest.raises(DatasetError, match="size mismatch"):
        load_dataset(tmp_path)


def test_load_unknown_privacy_type(tmp_path):
    save_dataset(_small(), tmp_path)
    meta = json.loads((tmp_path / META_FILE).read_text())
    meta["trials"][0]["privacy"]["handedness"] = 1
    (tmp_path / META_FILE).write_text(json.dumps(meta))
    with pytest.raises(DatasetError, match="unknown privacy type"):
        load_dataset(tmp_path)


def test_load_empty_dataset(tmp_path):
    save_dataset(_small(), tmp_path)
    meta = json.loads((tmp_path / META_FILE).read_text())
    meta["shape"] = [0, 2, 4]
    meta["trials"] = []
    (tmp_path / META_FILE).write_text(json.dumps(meta))
    (tmp_path / DATA_FILE).write_bytes(b"")
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(tmp_path)


def test_load_missing_privacy_class(tmp_path):
    ds = _small()
    meta = ds.meta_dict()
    meta["privacy_types"]["gender"] = 3
    tmp_path.joinpath(META_FILE).write_text(json.dumps(meta))
    tmp_path.joinpath(DATA_FILE).write_bytes(ds.data_bytes())
    with pytest.raises(DatasetError, match="no trials for classes \\[3\\]"):
        load_dataset(tmp_path)


def test_from_trials_rejects_ragged_shapes():
    bad = Trial(data=np.zeros((2, 5), dtype=np.float32), task="MI", label=1,
                privacy={"identity": 1, "gender": 1}, subject=1, session=1)
    with pytest.raises(DatasetError, match="shape"):
        EEGDataset.from_trials([_trial(), bad], ["C3", "C4"], 128.0, {"MI": 2}, {"identity": 2, "gender": 2})


def test_labels_out_of_vocabulary():
    with pytest.raises(DatasetError):
        EEGDataset.from_trials([_trial(label=3)], ["C3", "C4"], 128.0, {"MI": 2}, {"identity": 2, "gender": 2})


def test_data_is_read_only(tiny_dataset):
    with pytest.raises(ValueError):
        tiny_dataset.data[0, 0, 0] = 1.0


def test_trial_view(tiny_dataset):
    trial = tiny_dataset[0]
    assert trial.task == "ERP"
    assert trial.subject == 1
    assert trial.privacy["identity"] == 1
    assert trial.data.shape == (8, 128)


def test_privacy_labels_unknown_type():
    with pytest.raises(ValidationError):
        _small().privacy_labels("experience")


def test_subset_and_with_data():
    ds = _small()
    sub = ds.subset([3, 0])
    assert sub.subjects.tolist() == [2, 1]

    replaced = ds.with_data(np.ones_like(ds.data), provenance="ones")
    assert replaced.provenance == "ones"
    assert np.array_equal(replaced.labels, ds.labels)
    assert np.all(replaced.data == 1.0)


def test_group_indices_order():
    groups = _small().group_indices(("subject", "session"))
    assert list(groups) == [(1, 1), (2, 1), (1, 2), (2, 2)]
    assert groups[(2, 2)].tolist() == [3]


def test_split_by_session():
    train, test = split_by_session(_small(), 2)
    assert train.sessions.tolist() == [1, 1]
    assert test.sessions.tolist() == [2, 2]


def test_split_by_session_errors():
    ds = _small()
    with pytest.raises(ValidationError):
        split_by_session(ds, 5)
    with pytest.raises(ValidationError):
        split_by_session(ds.subset([0, 1]), 1)


def test_snap_to_grid():
    x = np.array([0.1, -3.3, 7.123456789])
    snapped = snap_to_grid(x)
    assert snapped.dtype == np.float32
    assert np.all(np.abs(snapped.astype(np.float64) - x) <= GRID_STEP / 2)
    assert np.array_equal(snap_to_grid(snapped), snapped)


def test_derive_seed_is_stable():
    assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)
    assert derive_seed(0, "a") != derive_seed(1, "a")
    assert 0 <= derive_seed(42, "x") < 2 ** 31
