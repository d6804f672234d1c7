"""Test cases for BCA, leave-one-session-out CV and the comparison reports"""

import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest

from eegshield.error_handler import ConfigError, ReportError, ValidationError
from eegshield.evaluation import (
    REPORT_COLUMNS,
    EvalReport,
    EvaluationConfig,
    LabelSelector,
    ReportRow,
    bca,
    classical_factory,
    loso_cv,
    privacy_eval,
    task_eval,
)


def _row(kind="privacy", label_space="gender", arch="EEGNet", before=0.9, after=0.5, transfer=False):
    return ReportRow(kind=kind, label_space=label_space, arch=arch, n_classes=2, chance=0.5,
                     bca_original=before, bca_perturbed=after, reduction=before - after,
                     surrogate_arch="EEGNet" if kind == "privacy" else "", transfer=transfer)


@pytest.fixture
def constant_predictions(mocker):
    """Every fake classifier predicts class 1."""
    return mocker.patch("eegshield.evaluation.predict",
                        side_effect=lambda model, x: np.ones(len(x), dtype=np.int64))


def _fake_factory(calls):
    def factory(x, y, n_classes, seed, eval_set=None):
        calls.append({"n": len(x), "n_classes": n_classes, "seed": seed, "test": eval_set})
        return SimpleNamespace(training_curve=[])
    return factory


def test_bca_examples():
    assert bca([1, 2, 1, 2], [1, 2, 1, 2], 2) == 1.0
    assert bca([1, 1, 1, 1], [1, 2, 2, 2], 2) == pytest.approx(0.5)
    # imbalance does not reward the majority class
    assert bca([1] * 9 + [1], [1] * 9 + [2], 2) == pytest.approx(0.5)
    assert bca([1, 2, 3, 3], [1, 2, 3, 1], 3) == pytest.approx((0.5 + 1.0 + 1.0) / 3)


def test_bca_errors():
    with pytest.raises(ValidationError, match="predictions"):
        bca([1, 2], [1, 2, 1], 2)
    with pytest.raises(ValidationError, match="no labelled trials"):
        bca([1, 1], [1, 1], 2)
    with pytest.raises(ValidationError, match="outside"):
        bca([1, 2, 3], [1, 2, 3], 2)


def test_label_selector(tiny_dataset):
    ds, y, n = LabelSelector("privacy", "identity").select(tiny_dataset)
    assert len(ds) == len(tiny_dataset)
    assert n == 4
    assert np.array_equal(y, tiny_dataset.privacy["identity"])

    ds, y, n = LabelSelector("task", "SSVEP").select(tiny_dataset)
    assert set(ds.tasks.tolist()) == {"SSVEP"}
    assert n == 4
    assert len(y) == 4 * 2 * 8

    with pytest.raises(ValidationError):
        LabelSelector("subject", "identity")
    with pytest.raises(ValidationError, match="unknown task"):
        LabelSelector("task", "P300").select(tiny_dataset)


@pytest.mark.parametrize("overrides", [
    {"privacy_archs": ()},
    {"privacy_archs": ("classical",)},
    {"task_archs": ("LSTM",)},
    {"repeats": 0},
    {"repeats": 2, "seeds": [1]},
    {"epochs": -1},
    {"protected_test_source": "both"},
])
def test_invalid_evaluation_config(overrides):
    with pytest.raises(ConfigError):
        EvaluationConfig(**overrides)


def test_evaluation_config_defaults_and_round_trip():
    cfg = EvaluationConfig(repeats=3)
    assert cfg.seeds == [0, 1, 2]
    assert cfg.protected_test_source == "original"
    assert EvaluationConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="unknown evaluation config key"):
        EvaluationConfig.from_dict({"folds": 2})


def test_loso_cv_folds_and_seeds(tiny_dataset, constant_predictions):
    calls = []
    result = loso_cv(tiny_dataset, _fake_factory(calls), LabelSelector("privacy", "gender"),
                     repeats=2, seeds=[7, 8])

    assert len(result.runs) == 2 * 2
    assert [c["seed"] for c in calls] == [7, 7, 8, 8]
    assert [r.holdout for r in result.runs] == [1, 2, 1, 2]
    # half of the trials are held out each time
    assert all(c["n"] == len(tiny_dataset) // 2 for c in calls)
    assert result.mean_bca == pytest.approx(0.5)


def test_loso_cv_tests_on_test_dataset(tiny_dataset, constant_predictions):
    shifted = tiny_dataset.with_data(np.asarray(tiny_dataset.data) + 1.0)
    calls = []
    loso_cv(shifted, _fake_factory(calls), LabelSelector("task", "MI"), repeats=1, test_ds=tiny_dataset)

    mi = tiny_dataset.subset(tiny_dataset.task_indices("MI"))
    x_test, y_test = calls[0]["test"]
    assert np.array_equal(x_test, mi.data[mi.sessions == 1])
    assert np.array_equal(y_test, mi.labels[mi.sessions == 1])


def test_loso_cv_errors(tiny_dataset, constant_predictions):
    selector = LabelSelector("privacy", "gender")
    factory = _fake_factory([])
    with pytest.raises(ValidationError, match="seeds"):
        loso_cv(tiny_dataset, factory, selector, repeats=2, seeds=[1])
    with pytest.raises(ValidationError, match="aligned"):
        loso_cv(tiny_dataset, factory, selector, repeats=1, test_ds=tiny_dataset.subset(range(10)))

    one_session = tiny_dataset.subset(np.flatnonzero(tiny_dataset.sessions == 1))
    with pytest.raises(ValidationError, match="at least 2 sessions"):
        loso_cv(one_session, factory, selector, repeats=1)

    # male subjects only in session 1, female only in session 2
    keep = np.flatnonzero((tiny_dataset.sessions == 1) == (tiny_dataset.privacy["gender"] == 1))
    with pytest.raises(ValidationError, match="absent"):
        loso_cv(tiny_dataset.subset(keep), factory, selector, repeats=1)


def test_classical_factory_requires_known_task(tiny_dataset):
    cfg = EvaluationConfig()
    with pytest.raises(ConfigError):
        classical_factory("P300", cfg, tiny_dataset)
    assert callable(classical_factory("MI", cfg, tiny_dataset))


def test_report_rejects_out_of_range_bca():
    with pytest.raises(ReportError):
        EvalReport(rows=[_row(before=1.2)])


def test_report_csv_and_table():
    report = EvalReport(rows=[_row(), _row(arch="DeepCNN", before=0.8, after=0.6, transfer=True),
                              _row(kind="task", label_space="MI", arch="CSP_LR", before=0.7, after=0.69)])
    csv = report.to_csv()
    assert csv.splitlines()[0] == ",".join(REPORT_COLUMNS)
    assert len(csv.splitlines()) == 4

    table = report.to_table()
    assert "### Privacy classifiers" in table
    assert "### Task classifiers" in table
    assert "| gender | DeepCNN (transfer) | 50.00 | 80.00 | 60.00 | 20.00 |" in table
    # average of the two privacy rows
    assert "| Average | | | 85.00 | 55.00 | 30.00 |" in table
    assert "| Average | | | 70.00 | 69.00 | 1.00 |" in table


def test_report_detail_round_trip(tmp_path):
    report = EvalReport(rows=[_row()], runs=[{"holdout": 1, "bca": 0.9}], protocol={"repeats": 1})
    report.write_detail(tmp_path / "detail.json")
    loaded = EvalReport.from_detail(tmp_path / "detail.json")
    assert loaded.rows == report.rows
    assert loaded.runs == report.runs
    assert loaded.protocol == {"repeats": 1}
    assert loaded.to_csv() == report.to_csv()
    assert loaded.to_table() == report.to_table()

    (tmp_path / "broken.json").write_text("{\"rows\": [{\"kind\": 1}]}")
    with pytest.raises(ReportError):
        EvalReport.from_detail(tmp_path / "broken.json")
    with pytest.raises(ReportError):
        EvalReport.from_detail(tmp_path / "missing.json")


def test_report_extend():
    merged = EvalReport(rows=[_row()], protocol={"a": 1}).extend(EvalReport(rows=[_row(kind="task")],
                                                                              protocol={"b": 2}))
    assert [r.kind for r in merged.rows] == ["privacy", "task"]
    assert merged.protocol == {"a": 1, "b": 2}


def test_privacy_eval_identical_data_has_no_reduction(tiny_dataset):
    cfg = EvaluationConfig(privacy_archs=("ShallowCNN",), repeats=1, epochs=1, batch_size=32,
                           record_test_curves=False)
    report = privacy_eval(tiny_dataset, tiny_dataset, cfg, types=["gender"])

    assert len(report.rows) == 1
    row = report.rows[0]
    assert row.kind == "privacy"
    assert row.transfer
    assert row.chance == 0.5
    assert row.reduction == pytest.approx(0.0, abs=1e-12)
    assert {r["dataset"] for r in report.runs} == {"original", "protected"}
    assert report.protocol["sessions"] == [1, 2]


def test_task_eval_classical(tiny_dataset):
    cfg = EvaluationConfig(task_archs=("classical",), repeats=1)
    report = task_eval(tiny_dataset, tiny_dataset, cfg)

    assert [(r.label_space, r.arch) for r in report.rows] == [
        ("ERP", "XDAWN_LR"), ("MI", "CSP_LR"), ("SSVEP", "CCA")]
    ssvep = report.rows[2]
    assert ssvep.n_classes == 4
    assert ssvep.chance == 0.25
    assert all(r.reduction == pytest.approx(0.0, abs=1e-12) for r in report.rows)


def test_task_eval_errors(tiny_dataset):
    cfg = EvaluationConfig(task_archs=("classical",), repeats=1)
    with pytest.raises(ValidationError, match="no task"):
        task_eval(tiny_dataset, tiny_dataset, cfg, tasks=["P300"])
    with pytest.raises(ValidationError, match="aligned"):
        task_eval(tiny_dataset, tiny_dataset.subset(range(10)), cfg, tasks=["MI"])


def test_privacy_eval_rejects_missing_type(tiny_dataset):
    no_experience = dataclasses.replace(
        tiny_dataset,
        privacy={m: v for m, v in tiny_dataset.privacy.items() if m != "experience"},
        privacy_vocab={m: n for m, n in tiny_dataset.privacy_vocab.items() if m != "experience"},
    )
    with pytest.raises(ConfigError, match="experience"):
        privacy_eval(no_experience, no_experience, EvaluationConfig(repeats=1), types=["gender", "experience"])
