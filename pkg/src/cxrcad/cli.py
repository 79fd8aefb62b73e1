"""Command-line entry point: cxr-cad preprocess|run|ablate|report|phantom.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import figures, metrics, nn
from .config import PipelineConfig, load_config
from .data import (
    ClassLabel,
    Manifest,
    ManifestRecord,
    generate_phantom,
    load_manifest,
    save_manifest,
    stratified_split,
)
from .errors import DataError, NumericalError
from .image import load_image, save_image
from .metrics import ConfusionMatrix3
from .preprocess import MODES, compose_sample, read_sample, run_stages, write_sample

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cxr-cad", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p_phantom = sub.add_parser("phantom", help="materialize a synthetic corpus + manifest")
    p_phantom.add_argument("--class", dest="cls", default="all",
                           choices=["normal", "pneumonia", "covid19", "all"])
    p_phantom.add_argument("--count", type=int, default=20, help="images per class")
    p_phantom.add_argument("--seed", type=int, default=0)
    p_phantom.add_argument("--size", type=int, default=64)
    p_phantom.add_argument("--out", required=True, help="output directory")
    p_phantom.set_defaults(func=cmd_phantom)

    p_pre = sub.add_parser("preprocess", help="write .mcs samples for one ablation mode")
    _common_flags(p_pre)
    p_pre.add_argument("--workers", type=int, default=4)
    p_pre.set_defaults(func=cmd_preprocess)

    p_run = sub.add_parser("run", help="split, train, evaluate, and report")
    _common_flags(p_run)
    p_run.add_argument("--epochs", type=int, default=None)
    p_run.add_argument("--freeze-below", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_abl = sub.add_parser("ablate", help="run all three modes and compare")
    _common_flags(p_abl, mode=False)
    p_abl.add_argument("--epochs", type=int, default=None)
    p_abl.add_argument("--freeze-below", type=int, default=None)
    p_abl.set_defaults(func=cmd_ablate)

    p_rep = sub.add_parser("report", help="full report from a 3x3 confusion matrix")
    p_rep.add_argument("--matrix", required=True,
                       help="row-major counts 'a,b,c;d,e,f;g,h,i' (rows = truth)")
    p_rep.add_argument("--positive", default="covid19",
                       choices=["normal", "pneumonia", "covid19"])
    p_rep.add_argument("--out", default=None, help="directory for report files")
    p_rep.set_defaults(func=cmd_report)
    return parser


def _common_flags(parser, mode=True):
    parser.add_argument("--config", default=None, help="pipeline config file")
    if mode:
        parser.add_argument("--mode", default="full", choices=list(MODES))
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--manifest", default=None)
    parser.add_argument("--out", default=None, help="output directory")


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "manifest", None):
        cfg.paths.manifest = args.manifest
    if getattr(args, "seed", None) is not None:
        cfg.split.seed = args.seed
        cfg.optimizer.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        if args.epochs < 1:
            raise UsageError("--epochs must be >= 1")
        cfg.optimizer.max_epochs = args.epochs
    if getattr(args, "freeze_below", None) is not None:
        if args.freeze_below < 0:
            raise UsageError("--freeze-below must be >= 0")
        cfg.net.freeze_below = args.freeze_below
    return cfg


def cmd_phantom(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = (
        list(ClassLabel) if args.cls == "all" else [ClassLabel.from_name(args.cls)]
    )
    records = []
    for label in labels:
        for i in range(args.count):
            name = f"{label.name.lower()}_{i:04d}.png"
            img = generate_phantom(label, args.seed + i, args.size)
            save_image(img, out_dir / name)
            records.append(ManifestRecord(name, label))
    manifest = Manifest(records)
    save_manifest(manifest, out_dir / "manifest.csv")
    print(f"wrote {len(records)} phantoms and manifest.csv to {out_dir}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _load_cfg(args)
    manifest_path = Path(cfg.paths.manifest)
    manifest = load_manifest(manifest_path)
    out_dir = Path(args.out) if args.out else Path(cfg.paths.sample_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def process(record: ManifestRecord):
        src = Path(record.path)
        if not src.is_absolute():
            src = manifest_path.parent / src
        img = load_image(src)
        stages = run_stages(img, cfg.preprocess, args.mode)
        sample = compose_sample(stages.i_p, stages.i_b, stages.i_eq, int(record.label))
        write_sample(sample, out_dir / f"{Path(record.path).stem}.{args.mode}.mcs")
        return stages.removed

    results = []
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        futures = [(record, pool.submit(process, record)) for record in manifest.records]
        for record, future in futures:
            try:
                results.append((record, future.result(), ""))
            except (ValueError, OSError) as exc:
                results.append((record, None, str(exc)))

    summary_path = out_dir / "preprocess_summary.csv"
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,label,mode,removed,status\n")
        for record, removed, err in results:
            status = "ok" if not err else "failed"
            removed_s = "" if removed is None else str(removed).lower()
            fh.write(
                f"{record.path},{record.label.name.lower()},{args.mode},{removed_s},{status}\n"
            )

    failures = sum(1 for _, removed, _ in results if removed is None)
    for record, removed, err in results:
        if err:
            print(f"skipped {record.path}: {err}", file=sys.stderr)
    for label in ClassLabel:
        done = [r for r, removed, _ in results if r.label == label and removed is not None]
        removed_n = sum(
            1 for r, removed, _ in results if r.label == label and removed
        )
        print(f"{label.name.lower()}: {len(done)} samples written, {removed_n} with diaphragm removed")
    print(f"summary: {summary_path}")
    if failures > 0.10 * len(manifest.records):
        print(f"data error: {failures}/{len(manifest.records)} images failed", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _load_split_samples(cfg: PipelineConfig, mode: str):
    """Split the manifest, then load the .mcs sample for every record."""
    manifest = load_manifest(cfg.paths.manifest)
    split = stratified_split(
        manifest, cfg.split.test_fraction, cfg.split.val_fraction, cfg.split.seed
    )
    sample_dir = Path(cfg.paths.sample_dir)

    def load_part(records):
        samples = []
        for record in records:
            path = sample_dir / f"{Path(record.path).stem}.{mode}.mcs"
            if not path.exists():
                raise DataError(
                    f"missing preprocessed sample for mode '{mode}': {path} "
                    f"(run 'cxr-cad preprocess --mode {mode}' first)"
                )
            sample = read_sample(path)
            if sample.label is not None and sample.label != int(record.label):
                raise DataError(f"label mismatch between manifest and {path}")
            samples.append(type(sample)(sample.channels, int(record.label)))
        return samples

    return split, load_part(split.train), load_part(split.validation), load_part(split.test)


def _train_and_report(cfg: PipelineConfig, mode: str, report_dir: Path, ckpt_dir: Path):
    split, train_set, val_set, test_set = _load_split_samples(cfg, mode)
    spec = nn.build_network(
        in_channels=3,
        input_size=224,
        conv_blocks=tuple((w,) for w in cfg.net.widths),
        head=cfg.net.head,
        classes=3,
        freeze_below_block=cfg.net.freeze_below,
    )
    augment_cfg = cfg.augment if cfg.augment_enabled else None
    result = nn.train(spec, train_set, val_set, cfg.optimizer, augment_cfg)

    pred, _ = nn.predict(spec, result.params, test_set)
    truth = [s.label for s in test_set]
    matrix = metrics.confusion(truth, pred)
    report = metrics.full_report(matrix)
    counts = metrics.collapse_binary(matrix, ClassLabel.COVID19)
    binary = metrics.binary_stats(counts)

    report_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "history.csv").write_text(nn.history_csv(result.history), encoding="utf-8")
    (report_dir / "report.txt").write_text(
        metrics.render_text_report(report, binary, counts, matrix=matrix), encoding="utf-8"
    )
    (report_dir / "report.kv").write_text(
        metrics.render_machine_report(report, binary, counts, matrix=matrix), encoding="utf-8"
    )
    nn.save_checkpoint(result.params, ckpt_dir / f"best.{mode}.ckpt")
    figures.confusion_matrix_figure(
        matrix, report_dir / "confusion_matrix.png", title=f"Confusion matrix ({mode})"
    )
    figures.training_curves_figure(result.history, report_dir / "training_curves.png")
    return result, matrix, report


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out) if args.out else None
    report_dir = out if out else Path(cfg.paths.report_dir)
    ckpt_dir = out if out else Path(cfg.paths.checkpoint_dir)
    result, matrix, report = _train_and_report(cfg, args.mode, report_dir, ckpt_dir)
    print(
        f"mode={args.mode} best_epoch={result.best_epoch} "
        f"val_acc={result.best_val_acc:.4f} test_acc={report.accuracy:.4f} "
        f"kappa={report.kappa:.4f} ci={metrics.fmt_ci(report.ci)}"
    )
    print(f"reports in {report_dir}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out) if args.out else Path(cfg.paths.report_dir)
    rows = []
    for mode in MODES:
        mode_dir = out_dir / mode.replace("-", "_")
        result, matrix, report = _train_and_report(cfg, mode, mode_dir, mode_dir)
        rows.append(ablation_row(mode, report))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.csv").write_text(render_ablation_csv(rows), encoding="utf-8")
    table = render_ablation_table(rows)
    (out_dir / "ablation.txt").write_text(table, encoding="utf-8")
    figures.ablation_figure(rows, out_dir / "ablation.png")
    print(table, end="")
    print(f"ablation outputs in {out_dir}")
    return EXIT_OK


def ablation_row(mode: str, report: metrics.ClassificationReport) -> dict:
    return {
        "mode": mode,
        "accuracy": report.accuracy,
        "kappa": report.kappa,
        "ci_low": report.ci[0],
        "ci_high": report.ci[1],
    }


def render_ablation_table(rows: list[dict]) -> str:
    lines = [f"{'Mode':<14}{'Accuracy':>10}{'Kappa':>8}  95% CI"]
    for row in rows:
        ci = metrics.fmt_ci((row["ci_low"], row["ci_high"]))
        lines.append(
            f"{row['mode']:<14}{metrics.fmt_percent(row['accuracy']):>10}"
            f"{metrics.fmt_rate(row['kappa']):>8}  {ci}"
        )
    return "\n".join(lines) + "\n"


def render_ablation_csv(rows: list[dict]) -> str:
    lines = ["mode,accuracy,kappa,ci_low,ci_high,ci_display"]
    for row in rows:
        ci = metrics.fmt_ci((row["ci_low"], row["ci_high"]))
        lines.append(
            f"{row['mode']},{row['accuracy']!r},{row['kappa']!r},"
            f"{row['ci_low']!r},{row['ci_high']!r},\"{ci}\""
        )
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> ConfusionMatrix3:
    """Parse 'a,b,c;d,e,f;g,h,i' row-major counts."""
    try:
        rows = [
            [int(cell.strip()) for cell in row.split(",")]
            for row in text.strip().split(";")
        ]
    except ValueError as exc:
        raise UsageError(f"malformed --matrix: {exc}") from exc
    if len(rows) != 3 or any(len(row) != 3 for row in rows):
        raise UsageError("malformed --matrix: expected 3 rows of 3 counts")
    try:
        return ConfusionMatrix3(np.array(rows))
    except ValueError as exc:
        raise UsageError(f"malformed --matrix: {exc}") from exc


def cmd_report(args) -> int:
    matrix = parse_matrix(args.matrix)
    positive = ClassLabel.from_name(args.positive)
    report = metrics.full_report(matrix)
    counts = metrics.collapse_binary(matrix, positive)
    binary = metrics.binary_stats(counts)
    text = metrics.render_text_report(report, binary, counts, positive, matrix)
    print(text, end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(text, encoding="utf-8")
        (out_dir / "report.kv").write_text(
            metrics.render_machine_report(report, binary, counts, positive, matrix),
            encoding="utf-8",
        )
        figures.confusion_matrix_figure(matrix, out_dir / "confusion_matrix.png")
        print(f"report files in {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
