#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Test cases for cli.py
"""
import json

import pytest

from eegshield.cli import EVALUATION_FILES, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from eegshield.eeg_dataset import DATA_FILE, META_FILE, load_dataset
from eegshield.perturbation import BANK_DATA, BANK_META
from eegshield.run_config import OUTPUT_ROOT_ENV

TINY_RUN = {
    "synthetic": {"n_subjects": 4, "n_sessions": 2, "trials_per_task_per_session": 8,
                  "n_channels": 8, "n_samples": 128, "seed": 3},
    "protection": {"privacy_types": ["gender"], "surrogate_epochs": 2, "perturbation_epochs": 2,
                   "batch_size": 64},
    "evaluation": {"privacy_archs": ["ShallowCNN"], "task_archs": ["classical"], "repeats": 1,
                   "epochs": 2, "batch_size": 32},
}


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv(OUTPUT_ROOT_ENV, "")
    monkeypatch.delenv(OUTPUT_ROOT_ENV)


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY_RUN), encoding="utf-8")
    return path


@pytest.fixture
def run(tmp_path, run_config):
    def invoke(*argv):
        return main([*argv, "--config", str(run_config), "--log-dir", str(tmp_path / "logs")])
    return invoke


@pytest.fixture
def synthetic(tmp_path, run):
    out = tmp_path / "data" / "synthetic"
    assert run("synth", "--out", str(out)) == EXIT_OK
    return out


def _stdout_lines(capsys):
    return [line for line in capsys.readouterr().out.splitlines() if line]


def test_missing_required_option(capsys):
    """测试缺少必填参数时输出机器可读错误并返回 2"""
    with pytest.raises(SystemExit) as exc:
        main(["synth"])
    assert exc.value.code == EXIT_USAGE
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error category=USAGE level=ERROR message=")
    assert "--out" in err[-1]


def test_unknown_command(capsys):
    """测试未知子命令"""
    with pytest.raises(SystemExit) as exc:
        main(["publish"])
    assert exc.value.code == EXIT_USAGE
    assert "category=USAGE" in capsys.readouterr().err


def test_synth_is_deterministic(tmp_path, run, capsys):
    """测试相同配置两次生成的数据集逐字节一致"""
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("synth", "--out", str(a)) == EXIT_OK
    assert run("synth", "--out", str(b)) == EXIT_OK
    for name in (META_FILE, DATA_FILE):
        assert (a / name).read_bytes() == (b / name).read_bytes()

    lines = _stdout_lines(capsys)
    assert lines[0] == lines[1].replace(str(b), str(a))
    assert lines[0].startswith("synth trials=192 digest=")


def test_synth_seed_flag(tmp_path, run):
    """测试 --seed 覆盖配置中的种子"""
    assert run("synth", "--out", str(tmp_path / "a"), "--seed", "4") == EXIT_OK
    assert run("synth", "--out", str(tmp_path / "b")) == EXIT_OK
    assert load_dataset(tmp_path / "a").digest() != load_dataset(tmp_path / "b").digest()


def test_relative_output_under_output_root(tmp_path, run, monkeypatch):
    """测试相对输出路径写到 EEGSHIELD_OUTPUT_ROOT 下"""
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert run("synth", "--out", "data") == EXIT_OK
    assert (tmp_path / "root" / "data" / META_FILE).is_file()


def test_preprocess(tmp_path, run, synthetic, capsys):
    """测试预处理命令"""
    out = tmp_path / "pre"
    assert run("preprocess", "--in", str(synthetic), "--out", str(out)) == EXIT_OK
    ds = load_dataset(out)
    assert "preprocessed" in ds.provenance
    assert _stdout_lines(capsys)[-1].startswith(f"preprocess trials={len(ds)}")


def test_convert_without_source(tmp_path, run, capsys):
    """测试缺少数据源时返回参数错误"""
    assert run("convert", "--out", str(tmp_path / "lee")) == EXIT_USAGE
    assert "category=USAGE" in capsys.readouterr().err
    assert not (tmp_path / "lee").exists()


def test_protect(tmp_path, run, synthetic, capsys):
    """测试生成受保护数据集和扰动库"""
    out, bank = tmp_path / "protected", tmp_path / "bank"
    assert run("protect", "--in", str(synthetic), "--out", str(out), "--bank-out", str(bank),
               "--alpha", "0.05") == EXIT_OK

    assert (out / DATA_FILE).is_file()
    assert (bank / BANK_DATA).is_file()
    meta = json.loads((bank / BANK_META).read_text(encoding="utf-8"))
    assert meta["config"]["alpha"] == 0.05

    lines = _stdout_lines(capsys)
    assert lines[-2].startswith("protect type=gender classes=2 final_objective=")
    assert lines[-1].startswith("protect amplitude_ratio=")
    original, protected = load_dataset(synthetic), load_dataset(out)
    assert protected.meta_bytes() == original.meta_bytes()
    assert not any(p.name.startswith(".") for p in tmp_path.iterdir())


def test_protect_rejects_same_directories(tmp_path, run, synthetic, capsys):
    """测试 --out 与 --bank-out 相同时返回参数错误"""
    same = str(tmp_path / "same")
    assert run("protect", "--in", str(synthetic), "--out", same, "--bank-out", same) == EXIT_USAGE
    assert "category=USAGE" in capsys.readouterr().err


def test_protect_privacy_types_choices(tmp_path, run, synthetic):
    """测试 --privacy-types 只接受已知类型"""
    with pytest.raises(SystemExit) as exc:
        run("protect", "--in", str(synthetic), "--out", str(tmp_path / "p"),
            "--bank-out", str(tmp_path / "b"), "--privacy-types", "age")
    assert exc.value.code == EXIT_USAGE


def test_evaluate_missing_protected_writes_nothing(tmp_path, run, synthetic, capsys):
    """测试受保护数据集缺失时返回 1 且不留下任何输出"""
    out = tmp_path / "results"
    assert run("evaluate", "--original", str(synthetic), "--protected", str(tmp_path / "none"),
               "--out", str(out)) == EXIT_RUNTIME
    assert "category=FILE_SYSTEM" in capsys.readouterr().err
    assert not out.exists()
    assert not any(p.name.startswith(".results") for p in tmp_path.iterdir())


def test_evaluate_and_report(tmp_path, run, synthetic, capsys):
    """测试评估结果文件和带训练曲线的图表"""
    results = tmp_path / "results"
    assert run("evaluate", "--original", str(synthetic), "--protected", str(synthetic),
               "--out", str(results)) == EXIT_OK
    for name in EVALUATION_FILES.values():
        assert (results / name).is_file()
    privacy_csv = (results / EVALUATION_FILES["privacy"]).read_text(encoding="utf-8").splitlines()
    assert len(privacy_csv) == 2
    task_csv = (results / EVALUATION_FILES["task"]).read_text(encoding="utf-8").splitlines()
    assert len(task_csv) == 4
    lines = [line for line in _stdout_lines(capsys) if line.startswith("evaluate ")]
    assert len(lines) == 4
    assert "reduction=0.000000" in lines[0]

    figures = tmp_path / "figures"
    assert run("report", "--original", str(synthetic), "--protected", str(synthetic),
               "--evaluation", str(results), "--out", str(figures)) == EXIT_OK
    names = sorted(p.name for p in figures.iterdir())
    assert names == sorted(f"{stem}.{ext}" for ext in ("json", "png") for stem in (
        "overlay", "spectrogram_original", "spectrogram_protected",
        "topoplot_original", "topoplot_protected", "curves"))
    assert _stdout_lines(capsys)[-1] == f"report figures=6 out={figures}"


def test_report_single_figure(tmp_path, run, synthetic):
    """测试只生成叠加图"""
    figures = tmp_path / "figures"
    assert run("report", "--original", str(synthetic), "--protected", str(synthetic),
               "--out", str(figures), "--figures", "overlay") == EXIT_OK
    assert sorted(p.name for p in figures.iterdir()) == ["overlay.json", "overlay.png"]


def test_report_curves_need_evaluation(tmp_path, run, synthetic, capsys):
    """测试没有评估结果时不能画训练曲线"""
    assert run("report", "--original", str(synthetic), "--protected", str(synthetic),
               "--out", str(tmp_path / "figures"), "--figures", "curves") == EXIT_USAGE
    assert "--evaluation" in capsys.readouterr().err
    assert not (tmp_path / "figures").exists()


def test_invalid_config_file(tmp_path, capsys):
    """测试配置文件中的未知键"""
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"protection": {"beta": 1}}), encoding="utf-8")
    code = main(["synth", "--out", str(tmp_path / "x"), "--config", str(bad), "--log-dir", str(tmp_path / "logs")])
    assert code == EXIT_RUNTIME
    assert "category=CONFIG" in capsys.readouterr().err
