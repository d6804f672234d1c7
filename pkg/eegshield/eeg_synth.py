"""
Seeded synthetic multi-task EEG with planted privacy and task signals.

Each privacy factor lives in its own signal dimension:

* identity   - a subject-specific oscillation (20-30 Hz) with a fixed random
               spatial pattern
* gender     - 8-13 Hz background power multiplied by ``gender_shift**2``
* experience - the trial scaled by ``experience_scale`` at every frequency
               outside 8-13 Hz, leaving the gender band untouched

Task components: an ERP transient 300 ms after onset for targets, MI
attenuation of 8-13 Hz background power over the contralateral channel
half, and an SSVEP sinusoid at the class flicker frequency.
"""

import logging
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Tuple

import numpy as np

from .eeg_dataset import EEGDataset, TASKS, derive_seed, snap_to_grid
from .error_handler import ConfigError
from .montage import synthetic_channel_names

logger = logging.getLogger(__name__)

ALPHA_BAND = (8.0, 13.0)
IDENTITY_BASE_HZ = 20.0
IDENTITY_STEP_HZ = 0.5
IDENTITY_SLOTS = 20
ERP_LATENCY_S = 0.3
ERP_WIDTH_S = 0.05


@dataclass
class SyntheticConfig:
    """Generator settings; ``seed`` fully determines the output"""
    n_subjects: int = 8
    n_sessions: int = 2
    trials_per_task_per_session: int = 60
    n_channels: int = 8
    n_samples: int = 256
    sampling_rate: float = 128.0
    noise_std: float = 1.0
    identity_gain: float = 1.0
    gender_shift: float = 1.5
    experience_scale: float = 1.3
    erp_gain: float = 2.0
    mi_attenuation: float = 0.7
    ssvep_gain: float = 1.0
    ssvep_frequencies: Tuple[float, ...] = (5.5, 6.5, 15.0, 17.5)
    erp_target_fraction: float = 0.5
    n_experienced: Optional[int] = None
    tasks: Tuple[str, ...] = TASKS
    seed: int = 0

    def __post_init__(self):
        self.ssvep_frequencies = tuple(float(f) for f in self.ssvep_frequencies)
        self.tasks = tuple(self.tasks)
        for name in ("n_subjects", "n_sessions", "trials_per_task_per_session", "n_channels", "n_samples"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"synthetic.{name} must be >= 1, got {getattr(self, name)}")
        if self.n_subjects < 2:
            raise ConfigError("synthetic.n_subjects must be >= 2 so every privacy type has two classes")
        if self.noise_std <= 0:
            raise ConfigError(f"synthetic.noise_std must be > 0, got {self.noise_std}")
        if self.sampling_rate <= 0:
            raise ConfigError(f"synthetic.sampling_rate must be > 0, got {self.sampling_rate}")
        unknown = set(self.tasks) - set(TASKS)
        if unknown or not self.tasks:
            raise ConfigError(f"synthetic.tasks must be a non-empty subset of {TASKS}, got {self.tasks}")
        nyquist = self.sampling_rate / 2
        top_identity = IDENTITY_BASE_HZ + IDENTITY_STEP_HZ * (IDENTITY_SLOTS - 1)
        if top_identity >= nyquist or ALPHA_BAND[1] >= nyquist:
            raise ConfigError(f"synthetic.sampling_rate {self.sampling_rate} Hz too low for the planted rhythms")
        if "SSVEP" in self.tasks:
            if len(self.ssvep_frequencies) < 2:
                raise ConfigError("synthetic.ssvep_frequencies needs at least two frequencies")
            if max(self.ssvep_frequencies) >= nyquist:
                raise ConfigError(f"synthetic.ssvep_frequencies must be below {nyquist} Hz")
        if not 0.0 < self.erp_target_fraction < 1.0:
            raise ConfigError("synthetic.erp_target_fraction must lie in (0, 1)")
        if self.n_experienced is not None and not 1 <= self.n_experienced < self.n_subjects:
            raise ConfigError("synthetic.n_experienced must leave both experience classes populated")

    @classmethod
    def from_dict(cls, data: Dict) -> "SyntheticConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synthetic config key(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["ssvep_frequencies"] = list(self.ssvep_frequencies)
        out["tasks"] = list(self.tasks)
        return out

    @property
    def experienced_count(self) -> int:
        # 16 of 54 subjects in the public dataset
        if self.n_experienced is not None:
            return self.n_experienced
        return int(min(max(round(self.n_subjects * 16 / 54), 1), self.n_subjects - 1))


@dataclass
class _Subject:
    identity: int
    gender: int
    experience: int
    pattern: np.ndarray
    frequency: float


def _subjects(cfg: SyntheticConfig) -> list:
    rng = np.random.default_rng(derive_seed(cfg.seed, "subjects"))
    experienced = set(rng.permutation(cfg.n_subjects)[:cfg.experienced_count].tolist())
    subjects = []
    for s in range(cfg.n_subjects):
        pattern = rng.normal(size=cfg.n_channels)
        subjects.append(_Subject(
            identity=s + 1,
            gender=1 if s % 2 == 0 else 2,
            experience=2 if s in experienced else 1,
            pattern=pattern / np.linalg.norm(pattern),
            frequency=IDENTITY_BASE_HZ + IDENTITY_STEP_HZ * (s % IDENTITY_SLOTS),
        ))
    return subjects


def _balanced_labels(rng: np.random.Generator, n: int, n_classes: int) -> np.ndarray:
    labels = np.arange(n) % n_classes + 1
    return rng.permutation(labels)


def _erp_labels(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    n_target = int(min(max(round(n * fraction), 1), max(n - 1, 1)))
    labels = np.ones(n, dtype=np.int64)
    labels[:n_target] = 2
    return rng.permutation(labels)


def generate_synthetic(cfg: SyntheticConfig) -> EEGDataset:
    """Generate a dataset in canonical order (subject, session, task, trial).

    Args:
        cfg: generator settings

    Returns:
        EEGDataset: ``n_subjects * n_sessions * len(tasks) * trials_per_task_per_session`` trials
    """
    c, t, fs = cfg.n_channels, cfg.n_samples, cfg.sampling_rate
    time = np.arange(t) / fs
    freqs = np.fft.rfftfreq(t, d=1.0 / fs)
    alpha_bins = (freqs >= ALPHA_BAND[0]) & (freqs <= ALPHA_BAND[1])
    half = c // 2

    shared = np.random.default_rng(derive_seed(cfg.seed, "task-patterns"))
    erp_pattern = np.abs(shared.normal(size=c)) + 0.5
    erp_pattern /= np.linalg.norm(erp_pattern) / np.sqrt(c)
    ssvep_pattern = np.abs(shared.normal(size=c)) + 0.5
    ssvep_pattern /= np.linalg.norm(ssvep_pattern) / np.sqrt(c)
    erp_wave = np.exp(-((time - ERP_LATENCY_S) ** 2) / (2 * ERP_WIDTH_S ** 2))

    subjects = _subjects(cfg)
    rng = np.random.default_rng(derive_seed(cfg.seed, "trials"))
    n_per = cfg.trials_per_task_per_session

    blocks, tasks, labels, subj_ids, sess_ids = [], [], [], [], []
    privacy = {"identity": [], "gender": [], "experience": []}
    for subject in subjects:
        for session in range(1, cfg.n_sessions + 1):
            for task in cfg.tasks:
                if task == "ERP":
                    task_labels = _erp_labels(rng, n_per, cfg.erp_target_fraction)
                elif task == "MI":
                    task_labels = _balanced_labels(rng, n_per, 2)
                else:
                    task_labels = _balanced_labels(rng, n_per, len(cfg.ssvep_frequencies))

                for y in task_labels:
                    spectrum = np.fft.rfft(rng.normal(0.0, cfg.noise_std, size=(c, t)), axis=-1)
                    gain = np.ones((c, 1))
                    if subject.gender == 2:
                        gain *= cfg.gender_shift
                    if task == "MI":
                        # left-hand imagery (1) suppresses the right half, right-hand (2) the left
                        rows = slice(half, c) if y == 1 else slice(0, half)
                        gain[rows] *= cfg.mi_attenuation
                    spectrum[:, alpha_bins] *= gain
                    x = np.fft.irfft(spectrum, n=t, axis=-1)

                    phase = rng.uniform(0.0, 2 * np.pi)
                    x += cfg.identity_gain * np.outer(
                        subject.pattern, np.sin(2 * np.pi * subject.frequency * time + phase))
                    if task == "ERP" and y == 2:
                        x += cfg.erp_gain * np.outer(erp_pattern, erp_wave)
                    elif task == "SSVEP":
                        f = cfg.ssvep_frequencies[y - 1]
                        x += cfg.ssvep_gain * np.outer(ssvep_pattern, np.sin(2 * np.pi * f * time))
                    if subject.experience == 2:
                        scaled = np.fft.rfft(x, axis=-1)
                        scaled[:, ~alpha_bins] *= cfg.experience_scale
                        x = np.fft.irfft(scaled, n=t, axis=-1)

                    blocks.append(snap_to_grid(x))
                    tasks.append(task)
                    labels.append(int(y))
                    subj_ids.append(subject.identity)
                    sess_ids.append(session)
                    privacy["identity"].append(subject.identity)
                    privacy["gender"].append(subject.gender)
                    privacy["experience"].append(subject.experience)

    task_vocab = {"ERP": 2, "MI": 2, "SSVEP": len(cfg.ssvep_frequencies)}
    ds = EEGDataset(
        data=np.stack(blocks),
        tasks=np.array(tasks, dtype=object),
        labels=np.array(labels),
        subjects=np.array(subj_ids),
        sessions=np.array(sess_ids),
        privacy={m: np.array(v) for m, v in privacy.items()},
        channel_names=synthetic_channel_names(c),
        sampling_rate=fs,
        task_vocab={k: v for k, v in task_vocab.items() if k in cfg.tasks},
        privacy_vocab={"identity": cfg.n_subjects, "gender": 2, "experience": 2},
        provenance=f"synthetic seed={cfg.seed}",
        ssvep_frequencies=list(cfg.ssvep_frequencies) if "SSVEP" in cfg.tasks else None,
    )
    logger.info(f"Generated {len(ds)} synthetic trials for {cfg.n_subjects} subjects (seed={cfg.seed})")
    return ds
