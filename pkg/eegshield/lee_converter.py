"""
Converter for the public 54-subject multi-task EEG distribution.

Expected layout (searched recursively under the source directory)::

    sess01_subj01_EEG_ERP.mat    structs EEG_ERP_train / EEG_ERP_test
    sess01_subj01_EEG_MI.mat     structs EEG_MI_train / EEG_MI_test
    sess01_subj01_EEG_SSVEP.mat  structs EEG_SSVEP_train / EEG_SSVEP_test
    ...
    subjects.csv                 subject,gender,bci_experience

Each struct carries ``x`` (samples x channels, microvolts), ``t`` (1-based
stimulus onsets), ``fs``, ``y_dec`` (class codes) and ``chan``.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.io import loadmat

from .eeg_dataset import EEGDataset, TASKS, save_dataset, snap_to_grid
from .error_handler import DatasetError, FileSystemError
from .preprocess import PreprocessConfig, preprocess_run, stratified_selection, zscore_per_group

logger = logging.getLogger(__name__)

SESSIONS = (1, 2)
SSVEP_FREQUENCIES = [12.0, 8.57, 6.67, 5.45]
SUBJECTS_FILE = "subjects.csv"

_GENDER = {"m": 1, "male": 1, "1": 1, "f": 2, "female": 2, "2": 2}
_EXPERIENCE = {"no": 1, "naive": 1, "n": 1, "1": 1, "0": 1,
               "yes": 2, "experienced": 2, "y": 2, "2": 2}


def _task_label(task: str, code: int) -> int:
    """Map distribution class codes to container labels."""
    if task == "ERP":
        return 2 if code == 1 else 1  # code 1 = target
    if task == "MI":
        return 3 - code  # code 1 = right hand, 2 = left hand
    return code


def read_subject_table(path: Union[str, Path]) -> pd.DataFrame:
    """Load ``subject,gender,bci_experience`` and encode both attributes as 1/2."""
    csv_path = Path(path)
    if not csv_path.is_file():
        raise FileSystemError(f"missing subject table: {csv_path}")
    table = pd.read_csv(csv_path, dtype=str).rename(columns=str.strip)
    missing = {"subject", "gender", "bci_experience"} - set(table.columns)
    if missing:
        raise DatasetError(f"{csv_path} lacks column(s) {sorted(missing)}")

    def encode(column: str, mapping: Dict[str, int]) -> List[int]:
        values = []
        for raw in table[column]:
            key = str(raw).strip().lower()
            if key not in mapping:
                raise DatasetError(f"{csv_path}: unrecognised {column} value '{raw}'")
            values.append(mapping[key])
        return values

    out = pd.DataFrame({
        "subject": table["subject"].astype(int),
        "gender": encode("gender", _GENDER),
        "experience": encode("bci_experience", _EXPERIENCE),
    })
    return out.sort_values("subject").reset_index(drop=True)


def _expected_files(source: Path, subjects: List[int]) -> Tuple[Dict[tuple, Path], List[str]]:
    index = {p.name: p for p in source.rglob("*.mat")}
    found, missing = {}, []
    for subject in subjects:
        for session in SESSIONS:
            for task in TASKS:
                name = f"sess{session:02d}_subj{subject:02d}_EEG_{task}.mat"
                if name in index:
                    found[(subject, session, task)] = index[name]
                else:
                    missing.append(name)
    return found, missing


def _load_runs(path: Path, task: str) -> List[object]:
    try:
        content = loadmat(str(path), squeeze_me=True, struct_as_record=False,
                          verify_compressed_data_integrity=False)
    except Exception as e:
        raise DatasetError(f"cannot read {path.name}: {e}")
    runs = [content[key] for key in (f"EEG_{task}_train", f"EEG_{task}_test") if key in content]
    if not runs:
        raise DatasetError(f"{path.name} holds neither EEG_{task}_train nor EEG_{task}_test")
    for run in runs:
        for attr in ("x", "t", "fs", "y_dec", "chan"):
            if not hasattr(run, attr):
                raise DatasetError(f"{path.name}: struct lacks field '{attr}'")
    return runs


def convert_public_dataset(source_path: Union[str, Path], out_path: Union[str, Path],
                           cfg: Optional[PreprocessConfig] = None,
                           subjects_file: Optional[Union[str, Path]] = None) -> EEGDataset:
    """Convert the distribution into a preprocessed container.

    Every required file is checked before any signal is read; on failure
    nothing is written.

    Args:
        source_path: root of the downloaded distribution
        out_path: container directory to write
        cfg: preprocessing recipe (defaults to the standard one)
        subjects_file: subject table, default ``<source>/subjects.csv``

    Returns:
        EEGDataset: the dataset that was written

    Raises:
        FileSystemError: source directory or subject table absent
        DatasetError: required runs missing or unreadable
    """
    cfg = cfg or PreprocessConfig()
    source = Path(source_path)
    if not source.is_dir():
        raise FileSystemError(f"source directory does not exist: {source}")
    table = read_subject_table(subjects_file or source / SUBJECTS_FILE)
    subjects = table["subject"].tolist()

    files, missing = _expected_files(source, subjects)
    if missing:
        shown = ", ".join(missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise DatasetError(f"missing {len(missing)} source file(s): {shown}{more}")

    blocks, tasks, labels, subj_ids, sess_ids = [], [], [], [], []
    privacy = {"identity": [], "gender": [], "experience": []}
    channels: Optional[List[str]] = None
    for row in table.itertuples(index=False):
        identity = subjects.index(row.subject) + 1
        for session in SESSIONS:
            for task in TASKS:
                path = files[(row.subject, session, task)]
                run_data, run_labels = [], []
                for run in _load_runs(path, task):
                    run_channels = [str(c) for c in np.atleast_1d(run.chan)]
                    if channels is None:
                        channels = run_channels
                    elif run_channels != channels:
                        raise DatasetError(f"{path.name}: channel list differs from earlier runs")
                    x = np.asarray(run.x, dtype=np.float64)
                    if x.ndim != 2 or x.shape[1] != len(channels):
                        raise DatasetError(f"{path.name}: x has shape {x.shape}, expected samples x {len(channels)}")
                    onsets = np.atleast_1d(run.t).astype(np.int64) - 1
                    codes = np.atleast_1d(run.y_dec).astype(np.int64)
                    if onsets.size != codes.size:
                        raise DatasetError(f"{path.name}: {onsets.size} onsets but {codes.size} labels")
                    run_data.append((x.T, onsets, float(run.fs)))
                    run_labels.append(np.array([_task_label(task, int(c)) for c in codes]))

                all_labels = np.concatenate(run_labels)
                keep = np.arange(all_labels.size)
                if task == "ERP" and cfg.erp_cap is not None and all_labels.size > cfg.erp_cap:
                    keep = stratified_selection(all_labels, cfg.erp_cap, cfg.seed, task, identity, session)

                offset = 0
                for (x, onsets, fs), codes in zip(run_data, run_labels):
                    local = keep[(keep >= offset) & (keep < offset + onsets.size)] - offset
                    offset += onsets.size
                    if not local.size:
                        continue
                    epochs = preprocess_run(x, onsets[local], task, fs, cfg)
                    blocks.append(snap_to_grid(epochs))
                    n = epochs.shape[0]
                    tasks.extend([task] * n)
                    labels.extend(codes[local].tolist())
                    subj_ids.extend([identity] * n)
                    sess_ids.extend([session] * n)
                    privacy["identity"].extend([identity] * n)
                    privacy["gender"].extend([int(row.gender)] * n)
                    privacy["experience"].extend([int(row.experience)] * n)
                logger.info(f"Converted {path.name}: {keep.size} trials")

    ds = EEGDataset(
        data=np.concatenate(blocks),
        tasks=np.array(tasks, dtype=object),
        labels=np.array(labels),
        subjects=np.array(subj_ids),
        sessions=np.array(sess_ids),
        privacy={m: np.array(v) for m, v in privacy.items()},
        channel_names=channels,
        sampling_rate=cfg.target_rate,
        task_vocab={"ERP": 2, "MI": 2, "SSVEP": len(SSVEP_FREQUENCIES)},
        privacy_vocab={"identity": len(subjects), "gender": 2, "experience": 2},
        provenance=f"converted from {source.name}",
        ssvep_frequencies=list(SSVEP_FREQUENCIES),
    )
    ds = zscore_per_group(ds, cfg.zscore_epsilon)
    ds.check_invariants()
    save_dataset(ds, out_path)
    return ds
