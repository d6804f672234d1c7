"""
Balanced accuracy, leave-one-session-out cross-validation and the
before/after comparison reports for privacy and task classifiers.
"""

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import balanced_accuracy_score

from .classical import fit_cca, fit_csp_lr, fit_xdawn_lr
from .classifiers import CNN_ARCHS, ModelSpec, TrainedClassifier, build_model, predict, train_classifier
from .eeg_dataset import EEGDataset, PRIVACY_TYPES
from .error_handler import ConfigError, ReportError, ValidationError

logger = logging.getLogger(__name__)

CLASSICAL_FOR_TASK = {"ERP": "XDAWN_LR", "MI": "CSP_LR", "SSVEP": "CCA"}
TEST_SOURCES = ("original", "protected")
REPORT_COLUMNS = ["kind", "label_space", "arch", "n_classes", "chance", "bca_original",
                  "bca_perturbed", "reduction", "surrogate_arch", "transfer"]

# (x_train, y_train, n_classes, seed, eval_set) -> trained classifier
ModelFactory = Callable[[np.ndarray, np.ndarray, int, int, Optional[Tuple[np.ndarray, np.ndarray]]],
                        TrainedClassifier]


def bca(predictions: Sequence[int], labels: Sequence[int], n_classes: int) -> float:
    """Mean per-class recall over classes ``1..n_classes``.

    Raises:
        ValidationError: lengths differ or a class has no labelled trials
    """
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValidationError(f"{predictions.size} predictions for {labels.size} labels")
    missing = sorted(set(range(1, n_classes + 1)) - set(np.unique(labels).tolist()))
    if missing:
        raise ValidationError(f"recall undefined: class(es) {missing} have no labelled trials")
    extra = sorted(set(np.unique(labels).tolist()) - set(range(1, n_classes + 1)))
    if extra:
        raise ValidationError(f"labels {extra} outside 1..{n_classes}")
    return float(balanced_accuracy_score(labels, predictions))


@dataclass(frozen=True)
class LabelSelector:
    """Picks the trials and labels one classifier is trained on.

    ``kind="privacy"`` uses every trial (tasks mixed) with the labels of
    privacy type ``name``; ``kind="task"`` keeps only trials of task ``name``.
    """
    kind: str
    name: str

    def __post_init__(self):
        if self.kind not in ("privacy", "task"):
            raise ValidationError(f"label selector kind must be 'privacy' or 'task', got '{self.kind}'")

    def select(self, ds: EEGDataset) -> Tuple[EEGDataset, np.ndarray, int]:
        if self.kind == "privacy":
            return ds, ds.privacy_labels(self.name), ds.privacy_vocab[self.name]
        if self.name not in ds.task_vocab:
            raise ValidationError(f"unknown task '{self.name}'")
        sub = ds.subset(ds.task_indices(self.name))
        return sub, sub.labels, ds.task_vocab[self.name]


@dataclass
class EvaluationConfig:
    """Architectures, repeats and training settings of the evaluation"""
    privacy_archs: Tuple[str, ...] = CNN_ARCHS
    task_archs: Tuple[str, ...] = CNN_ARCHS + ("classical",)
    repeats: int = 5
    seeds: Optional[List[int]] = None
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    protected_test_source: str = "original"
    xdawn_filters: int = 4
    csp_pairs: int = 2
    cca_harmonics: int = 2
    record_test_curves: bool = True

    def __post_init__(self):
        self.privacy_archs = tuple(self.privacy_archs)
        self.task_archs = tuple(self.task_archs)
        bad = [a for a in self.privacy_archs if a not in CNN_ARCHS]
        if bad or not self.privacy_archs:
            raise ConfigError(f"evaluation.privacy_archs must be a non-empty subset of {CNN_ARCHS}, got {bad}")
        bad = [a for a in self.task_archs if a not in CNN_ARCHS + ("classical",)]
        if bad or not self.task_archs:
            raise ConfigError(f"evaluation.task_archs accepts {CNN_ARCHS} and 'classical', got {bad}")
        if self.repeats < 1:
            raise ConfigError(f"evaluation.repeats must be >= 1, got {self.repeats}")
        if self.seeds is None:
            self.seeds = list(range(self.repeats))
        self.seeds = [int(s) for s in self.seeds]
        if len(self.seeds) != self.repeats:
            raise ConfigError(f"evaluation.seeds lists {len(self.seeds)} seeds for {self.repeats} repeats")
        if self.epochs < 0:
            raise ConfigError(f"evaluation.epochs must be >= 0, got {self.epochs}")
        if self.protected_test_source not in TEST_SOURCES:
            raise ConfigError(f"evaluation.protected_test_source must be one of {TEST_SOURCES}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvaluationConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown evaluation config key(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["privacy_archs"] = list(self.privacy_archs)
        out["task_archs"] = list(self.task_archs)
        return out


def cnn_factory(arch: str, cfg: EvaluationConfig, label_space: str = "") -> ModelFactory:
    def factory(x, y, n_classes, seed, eval_set=None):
        spec = ModelSpec(arch, x.shape[1:], n_classes,
                         {"learning_rate": cfg.learning_rate, "batch_size": cfg.batch_size,
                          "weight_decay": cfg.weight_decay, "epochs": cfg.epochs}, seed=seed)
        return train_classifier(build_model(spec, label_space), x, y, epochs=cfg.epochs, seed=seed,
                                eval_set=eval_set if cfg.record_test_curves else None)
    return factory


def classical_factory(task: str, cfg: EvaluationConfig, ds: EEGDataset) -> ModelFactory:
    """Task-matched classical pipeline; ``seed`` and ``eval_set`` are ignored."""
    arch = CLASSICAL_FOR_TASK.get(task)
    if arch is None:
        raise ConfigError(f"no classical pipeline for task '{task}'")
    if arch == "CCA" and not ds.ssvep_frequencies:
        raise ReportError("CCA needs the SSVEP flicker frequencies (meta.json 'ssvep_frequencies')")

    def factory(x, y, n_classes, seed, eval_set=None):
        if arch == "XDAWN_LR":
            return fit_xdawn_lr(x, y, cfg.xdawn_filters, label_space=task)
        if arch == "CSP_LR":
            return fit_csp_lr(x, y, cfg.csp_pairs, label_space=task)
        return fit_cca(x.shape[1:], ds.ssvep_frequencies, cfg.cca_harmonics, ds.sampling_rate, task)
    return factory


@dataclass
class RunRecord:
    """One (holdout session, repeat) cell"""
    holdout: int
    repeat: int
    seed: int
    bca: float
    curve: List[Dict[str, Any]] = field(default_factory=list)


@dataclass
class LosoResult:
    mean_bca: float
    runs: List[RunRecord]


def loso_cv(train_ds: EEGDataset, factory: ModelFactory, selector: LabelSelector, repeats: int = 5,
            seeds: Optional[Sequence[int]] = None, test_ds: Optional[EEGDataset] = None) -> LosoResult:
    """Leave-one-session-out BCA averaged over sessions and repeats.

    Each session serves once as holdout per repeat; the classifier is trained
    on the remaining sessions of ``train_ds`` and tested on the holdout
    session of ``test_ds`` (default ``train_ds``).

    Raises:
        ValidationError: fewer than two sessions, datasets not aligned, or a
            class absent from a fold
    """
    seeds = list(range(repeats)) if seeds is None else [int(s) for s in seeds]
    if len(seeds) != repeats:
        raise ValidationError(f"{len(seeds)} seeds for {repeats} repeats")
    test_ds = train_ds if test_ds is None else test_ds
    if len(test_ds) != len(train_ds) or not np.array_equal(test_ds.sessions, train_ds.sessions):
        raise ValidationError("training and test datasets are not aligned trial for trial")

    train_sel, y_train_all, n_classes = selector.select(train_ds)
    test_sel, y_test_all, _ = selector.select(test_ds)
    sessions = train_sel.session_ids
    if len(sessions) < 2:
        raise ValidationError(f"leave-one-session-out needs at least 2 sessions, found {sessions}")

    runs = []
    for repeat, seed in enumerate(seeds):
        for holdout in sessions:
            tr = np.flatnonzero(train_sel.sessions != holdout)
            te = np.flatnonzero(test_sel.sessions == holdout)
            for name, y in (("training", y_train_all[tr]), ("test", y_test_all[te])):
                missing = sorted(set(range(1, n_classes + 1)) - set(np.unique(y).tolist()))
                if missing:
                    raise ValidationError(
                        f"{selector.kind} '{selector.name}': class(es) {missing} absent from the "
                        f"{name} fold (holdout session {holdout})")
            x_test, y_test = test_sel.data[te], y_test_all[te]
            model = factory(train_sel.data[tr], y_train_all[tr], n_classes, seed, (x_test, y_test))
            score = bca(predict(model, x_test), y_test, n_classes)
            runs.append(RunRecord(holdout=int(holdout), repeat=repeat, seed=seed, bca=score,
                                  curve=[asdict(r) for r in model.training_curve]))
            logger.info(f"LOSO {selector.kind}={selector.name} holdout={holdout} repeat={repeat}: bca={score:.4f}")
    return LosoResult(mean_bca=float(np.mean([r.bca for r in runs])), runs=runs)


@dataclass
class ReportRow:
    kind: str
    label_space: str
    arch: str
    n_classes: int
    chance: float
    bca_original: float
    bca_perturbed: float
    reduction: float
    surrogate_arch: str = ""
    transfer: bool = False


@dataclass
class EvalReport:
    """Before/after BCA rows, the per-run detail they came from and protocol metadata"""
    rows: List[ReportRow] = field(default_factory=list)
    runs: List[Dict[str, Any]] = field(default_factory=list)
    protocol: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for row in self.rows:
            for value in (row.bca_original, row.bca_perturbed):
                if not 0.0 <= value <= 1.0:
                    raise ReportError(f"BCA {value} outside [0, 1] in row {row.label_space}/{row.arch}")

    def extend(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(rows=self.rows + other.rows, runs=self.runs + other.runs,
                          protocol={**self.protocol, **other.protocol})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=REPORT_COLUMNS)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.6f", lineterminator="\n")

    def write_csv(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def to_table(self) -> str:
        """Markdown table in percent, one section per kind, each closed by an Average row."""
        lines = []
        for kind in ("privacy", "task"):
            rows = [r for r in self.rows if r.kind == kind]
            if not rows:
                continue
            title = "Privacy classifiers" if kind == "privacy" else "Task classifiers"
            lines += [f"### {title}", "",
                      "| Label space | Classifier | Chance | Original BCA | Protected BCA | Reduction |",
                      "|---|---|---|---|---|---|"]
            for r in rows:
                arch = f"{r.arch} (transfer)" if r.transfer else r.arch
                lines.append(f"| {r.label_space} | {arch} | {100 * r.chance:.2f} | {100 * r.bca_original:.2f} "
                             f"| {100 * r.bca_perturbed:.2f} | {100 * r.reduction:.2f} |")
            avg = [float(np.mean([getattr(r, k) for r in rows])) for k in ("bca_original", "bca_perturbed", "reduction")]
            lines.append(f"| Average | | | {100 * avg[0]:.2f} | {100 * avg[1]:.2f} | {100 * avg[2]:.2f} |")
            lines.append("")
        return "\n".join(lines)

    def write_table(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_table(), encoding="utf-8")

    def detail_dict(self) -> Dict[str, Any]:
        return {"protocol": self.protocol, "rows": [asdict(r) for r in self.rows], "runs": self.runs}

    def write_detail(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.detail_dict(), indent=1, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_detail(cls, path: Union[str, Path]) -> "EvalReport":
        try:
            detail = json.loads(Path(path).read_text(encoding="utf-8"))
            rows = [ReportRow(**r) for r in detail["rows"]]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
            raise ReportError(f"cannot read evaluation detail {path}: {e}")
        return cls(rows=rows, runs=detail.get("runs", []), protocol=detail.get("protocol", {}))


def _protocol(cfg: EvaluationConfig, ds: EEGDataset) -> Dict[str, Any]:
    return {"repeats": cfg.repeats, "seeds": list(cfg.seeds), "sessions": ds.session_ids,
            "protected_test_source": cfg.protected_test_source, "epochs": cfg.epochs}


def _compare(ds_original: EEGDataset, ds_protected: EEGDataset, factory: ModelFactory,
             selector: LabelSelector, cfg: EvaluationConfig, arch: str,
             runs: List[Dict[str, Any]]) -> Tuple[float, float, int]:
    if len(ds_original) != len(ds_protected) or not np.array_equal(ds_original.sessions, ds_protected.sessions):
        raise ValidationError("original and protected datasets are not aligned trial for trial")
    test_for_protected = ds_original if cfg.protected_test_source == "original" else ds_protected
    before = loso_cv(ds_original, factory, selector, cfg.repeats, cfg.seeds)
    after = loso_cv(ds_protected, factory, selector, cfg.repeats, cfg.seeds, test_ds=test_for_protected)
    for dataset, result in (("original", before), ("protected", after)):
        for run in result.runs:
            runs.append({"kind": selector.kind, "label_space": selector.name, "arch": arch,
                         "dataset": dataset, **asdict(run)})
    n_classes = selector.select(ds_original)[2]
    return before.mean_bca, after.mean_bca, n_classes


def privacy_eval(ds_original: EEGDataset, ds_protected: EEGDataset, cfg: Optional[EvaluationConfig] = None,
                 types: Optional[Sequence[str]] = None, surrogate_arch: str = "EEGNet") -> EvalReport:
    """Train fresh privacy classifiers on original and protected data and compare test BCAs.

    Rows whose arch differs from ``surrogate_arch`` are marked as transfer rows.
    Without ``types`` every privacy type the dataset carries is evaluated.

    Raises:
        ConfigError: a requested privacy type is not in the dataset
    """
    cfg = cfg or EvaluationConfig()
    if types is None:
        types = [m for m in PRIVACY_TYPES if m in ds_original.privacy_vocab]
    else:
        unknown = [m for m in types if m not in ds_original.privacy_vocab]
        if unknown:
            raise ConfigError(f"privacy type(s) {unknown} not in dataset vocabulary {sorted(ds_original.privacy_vocab)}")
        types = list(types)
    if not types:
        raise ValidationError("no privacy type to evaluate")
    rows, runs = [], []
    for m in types:
        selector = LabelSelector("privacy", m)
        for arch in cfg.privacy_archs:
            before, after, n_classes = _compare(ds_original, ds_protected, cnn_factory(arch, cfg, m),
                                                selector, cfg, arch, runs)
            rows.append(ReportRow(kind="privacy", label_space=m, arch=arch, n_classes=n_classes,
                                  chance=1.0 / n_classes, bca_original=before, bca_perturbed=after,
                                  reduction=before - after, surrogate_arch=surrogate_arch,
                                  transfer=arch != surrogate_arch))
    return EvalReport(rows=rows, runs=runs, protocol=_protocol(cfg, ds_original))


def task_eval(ds_original: EEGDataset, ds_protected: EEGDataset, cfg: Optional[EvaluationConfig] = None,
              tasks: Optional[Sequence[str]] = None) -> EvalReport:
    """Task-classifier BCAs on original vs protected data, classical pipeline matched per task."""
    cfg = cfg or EvaluationConfig()
    present = sorted(set(ds_original.tasks.tolist()), key=lambda t: list(CLASSICAL_FOR_TASK).index(t)
                     if t in CLASSICAL_FOR_TASK else len(CLASSICAL_FOR_TASK))
    tasks = [t for t in (tasks or present) if t in present]
    if not tasks:
        raise ValidationError("no task to evaluate")
    rows, runs = [], []
    for task in tasks:
        selector = LabelSelector("task", task)
        for arch in cfg.task_archs:
            if arch == "classical":
                name, factory = CLASSICAL_FOR_TASK[task], classical_factory(task, cfg, ds_original)
            else:
                name, factory = arch, cnn_factory(arch, cfg, task)
            before, after, n_classes = _compare(ds_original, ds_protected, factory, selector, cfg, name, runs)
            rows.append(ReportRow(kind="task", label_space=task, arch=name, n_classes=n_classes,
                                  chance=1.0 / n_classes, bca_original=before, bca_perturbed=after,
                                  reduction=before - after))
    return EvalReport(rows=rows, runs=runs, protocol=_protocol(cfg, ds_original))
