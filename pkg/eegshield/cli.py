#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
EEG 隐私保护工具命令行入口
"""
import argparse
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

from .eeg_dataset import PRIVACY_TYPES, load_dataset, save_dataset
from .eeg_synth import generate_synthetic
from .error_handler import (
    error_handler,
    setup_logging,
    ErrorCategory,
    ReportError,
    UsageError,
)
from .evaluation import EvalReport, privacy_eval, task_eval
from .lee_converter import convert_public_dataset
from .montage import load_montage, standard_montage
from .perturbation import amplitude_ratio, generate_protected_dataset, save_bank
from .preprocess import preprocess_dataset
from .report_htmler import ReportHtmler
from .reporting import (
    FIGURES,
    plot_overlay,
    plot_spectrogram,
    plot_topoplot,
    plot_training_curves,
)
from .run_config import RunConfig, load_config

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

EVALUATION_FILES = {
    "privacy": "privacy_eval.csv",
    "task": "task_eval.csv",
    "table": "summary.md",
    "html": "summary.html",
    "detail": "detail.json",
}


class ShieldArgumentParser(argparse.ArgumentParser):
    """参数错误时输出单行机器可读错误并以退出码 2 结束"""

    def error(self, message: str) -> None:
        context = UsageError(f"{self.prog}: {message}").context
        print(error_handler.format_machine_line(context), file=sys.stderr)
        self.exit(EXIT_USAGE)


@contextmanager
def staged_outputs(targets: Sequence[Path]) -> Iterator[List[Path]]:
    """在目标的同级临时目录中写入，全部成功后再替换目标

    Args:
        targets: 最终输出目录

    Yields:
        List[Path]: 与 targets 一一对应的临时目录
    """
    staged = []
    try:
        for target in targets:
            target.parent.mkdir(parents=True, exist_ok=True)
            staged.append(Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent)))
        yield staged
    except BaseException:
        for tmp in staged:
            shutil.rmtree(tmp, ignore_errors=True)
        raise
    for tmp, target in zip(staged, targets):
        if target.exists():
            shutil.rmtree(target)
        tmp.rename(target)
        error_handler.logger.info(f"Wrote {target}")


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_synth(args: argparse.Namespace) -> int:
    """生成合成数据集"""
    cfg = _config(args)
    out = cfg.paths.resolve(args.out)
    ds = generate_synthetic(cfg.synthetic)
    with staged_outputs([out]) as (tmp,):
        save_dataset(ds, tmp)
    print(f"synth trials={len(ds)} digest={ds.digest()} out={out}")
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    """转换公开数据集"""
    cfg = _config(args)
    source = args.source or cfg.paths.source
    subjects = args.subjects or cfg.paths.subjects_file
    if not source:
        raise UsageError("convert needs --source or paths.source in the config")
    out = cfg.paths.resolve(args.out)
    with staged_outputs([out]) as (tmp,):
        ds = convert_public_dataset(source, tmp, cfg.preprocess, subjects)
    print(f"convert trials={len(ds)} digest={ds.digest()} out={out}")
    return EXIT_OK


def cmd_preprocess(args: argparse.Namespace) -> int:
    """预处理已分段的数据集"""
    cfg = _config(args)
    ds = load_dataset(args.input)
    out = cfg.paths.resolve(args.out)
    processed = preprocess_dataset(ds, cfg.preprocess)
    with staged_outputs([out]) as (tmp,):
        save_dataset(processed, tmp)
    print(f"preprocess trials={len(processed)} digest={processed.digest()} out={out}")
    return EXIT_OK


def cmd_protect(args: argparse.Namespace) -> int:
    """生成受保护的数据集和扰动库"""
    cfg = _config(args)
    overrides = {"alpha": args.alpha}
    if args.privacy_types:
        overrides["privacy_types"] = list(args.privacy_types)
    cfg = cfg.with_overrides("protection", **overrides)

    ds = load_dataset(args.input)
    out, bank_out = cfg.paths.resolve(args.out), cfg.paths.resolve(args.bank_out)
    if out.resolve() == bank_out.resolve():
        raise UsageError("--out and --bank-out must be different directories")
    protected, bank = generate_protected_dataset(ds, cfg.protection)
    with staged_outputs([out, bank_out]) as (tmp_ds, tmp_bank):
        save_dataset(protected, tmp_ds)
        save_bank(bank, tmp_bank)

    for m in bank.types:
        s = bank.summary[m]
        print(f"protect type={m} classes={s.n_classes} final_objective={s.final_objective:.6f} "
              f"ce_before={s.ce_before:.6f} ce_after={s.ce_after:.6f}")
    print(f"protect amplitude_ratio={amplitude_ratio(ds, bank):.6f} digest={protected.digest()}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """在原始和受保护数据上评估隐私分类器和任务分类器"""
    cfg = _config(args)
    if args.repeats is not None:
        base = cfg.evaluation.seeds[0]
        cfg = cfg.with_overrides("evaluation", repeats=args.repeats,
                                 seeds=[base + r for r in range(args.repeats)])
    original = load_dataset(args.original)
    protected = load_dataset(args.protected)
    out = cfg.paths.resolve(args.out)

    types = [m for m in cfg.protection.privacy_types if m in PRIVACY_TYPES]
    privacy = privacy_eval(original, protected, cfg.evaluation, types, cfg.protection.surrogate_arch)
    task = task_eval(original, protected, cfg.evaluation)
    combined = privacy.extend(task)

    with staged_outputs([out]) as (tmp,):
        privacy.write_csv(tmp / EVALUATION_FILES["privacy"])
        task.write_csv(tmp / EVALUATION_FILES["task"])
        combined.write_table(tmp / EVALUATION_FILES["table"])
        ReportHtmler().write(combined, tmp / EVALUATION_FILES["html"])
        combined.write_detail(tmp / EVALUATION_FILES["detail"])

    for row in combined.rows:
        print(f"evaluate kind={row.kind} label_space={row.label_space} arch={row.arch} "
              f"bca_original={row.bca_original:.6f} bca_perturbed={row.bca_perturbed:.6f} "
              f"reduction={row.reduction:.6f}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """生成对比图和训练曲线"""
    cfg = _config(args)
    rc = cfg.reporting
    figures = tuple(args.figures) if args.figures else rc.figures
    if "curves" in figures and not args.evaluation:
        raise UsageError("the curves figure needs --evaluation")

    original = load_dataset(args.original)
    protected = load_dataset(args.protected)
    out = cfg.paths.resolve(args.out)
    montage = (load_montage(cfg.paths.montage_file) if cfg.paths.montage_file
               else standard_montage(original.channel_names))
    report = EvalReport.from_detail(Path(args.evaluation) / EVALUATION_FILES["detail"]) if args.evaluation else None
    if not 0 <= rc.overlay_trial < len(original):
        raise ReportError(f"overlay trial {rc.overlay_trial} outside dataset of {len(original)} trials")

    written = []
    with staged_outputs([out]) as (tmp,):
        if "overlay" in figures:
            i = rc.overlay_trial
            written.append(plot_overlay(original.data[i], protected.data[i], original.channel_names, tmp,
                                        rc.overlay_channels, rc.magnify, original.sampling_rate))
        for label, ds in (("original", original), ("protected", protected)):
            if "spectrogram" in figures:
                written.append(plot_spectrogram(ds, tmp, rc.spectrogram_channel, rc.spectrogram_task,
                                                name=f"spectrogram_{label}"))
            if "topoplot" in figures:
                written.append(plot_topoplot(ds, tmp, montage, rc.topoplot_task, name=f"topoplot_{label}"))
        if "curves" in figures:
            written.append(plot_training_curves([report], tmp))

    print(f"report figures={len(written)} out={out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "convert": cmd_convert,
    "preprocess": cmd_preprocess,
    "protect": cmd_protect,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    """构建参数解析器"""
    parser = ShieldArgumentParser(
        prog="eegshield",
        description="为 EEG 数据集生成隐私保护扰动并评估保护效果",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        allow_abbrev=False,  # 禁用参数前缀匹配
        epilog="""
示例:
    %(prog)s synth --config run.json --out data/synthetic
    %(prog)s protect --in data/synthetic --out data/protected --bank-out data/bank
    %(prog)s protect --in data/synthetic --out data/p1 --bank-out data/b1 --privacy-types identity
    %(prog)s evaluate --original data/synthetic --protected data/protected --out results
    %(prog)s report --original data/synthetic --protected data/protected --evaluation results --out figures

环境变量:
    EEGSHIELD_OUTPUT_ROOT: 可选，覆盖配置中的 paths.output_root（也可写在 .env 中）
    相对输出路径都以 output_root 为根目录

退出码:
    0 成功；1 运行错误；2 参数错误
        """
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="JSON 运行配置文件")
    common.add_argument("--seed", type=int, help="覆盖配置中的所有随机种子")
    common.add_argument("--log-dir", default="logs", help="日志目录（默认 logs）")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=ShieldArgumentParser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="生成合成数据集", allow_abbrev=False)
    p.add_argument("--out", required=True, help="输出数据集目录")

    p = sub.add_parser("convert", parents=[common], help="转换公开数据集", allow_abbrev=False)
    p.add_argument("--source", help="包含 .mat 文件的目录")
    p.add_argument("--subjects", help="subject,gender,bci_experience 表格")
    p.add_argument("--out", required=True, help="输出数据集目录")

    p = sub.add_parser("preprocess", parents=[common], help="预处理已分段数据集", allow_abbrev=False)
    p.add_argument("--in", dest="input", required=True, help="输入数据集目录")
    p.add_argument("--out", required=True, help="输出数据集目录")

    p = sub.add_parser("protect", parents=[common], help="生成受保护数据集", allow_abbrev=False)
    p.add_argument("--in", dest="input", required=True, help="已预处理的数据集目录")
    p.add_argument("--out", required=True, help="受保护数据集目录")
    p.add_argument("--bank-out", required=True, help="扰动库目录")
    p.add_argument("--alpha", type=float, help="扰动范数惩罚系数")
    p.add_argument("--privacy-types", nargs="+", choices=PRIVACY_TYPES, help="需要保护的隐私信息")

    p = sub.add_parser("evaluate", parents=[common], help="评估保护效果", allow_abbrev=False)
    p.add_argument("--original", required=True, help="原始数据集目录")
    p.add_argument("--protected", required=True, help="受保护数据集目录")
    p.add_argument("--out", required=True, help="评估结果目录")
    p.add_argument("--repeats", type=int, help="每个折的重复次数")

    p = sub.add_parser("report", parents=[common], help="生成图表", allow_abbrev=False)
    p.add_argument("--original", required=True, help="原始数据集目录")
    p.add_argument("--protected", required=True, help="受保护数据集目录")
    p.add_argument("--evaluation", help="评估结果目录（训练曲线需要）")
    p.add_argument("--out", required=True, help="图表目录")
    p.add_argument("--figures", nargs="+", choices=FIGURES, help="只生成指定的图表")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数

    用法示例:
        poetry run eegshield synth --out data/synthetic
        poetry run eegshield protect --in data/synthetic --out data/protected --bank-out data/bank

    Returns:
        int: 退出码，0 表示成功，1 表示运行错误，2 表示参数错误
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_dir)
    error_handler.logger.info(f"Running command: {args.command}")
    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        context = error_handler.handle_error(e, {"command": args.command})
        return EXIT_USAGE if context.category == ErrorCategory.USAGE else EXIT_RUNTIME


if __name__ == "__main__":
    exit(main())
