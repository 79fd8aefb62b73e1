import numpy as np
import pytest

from cxrcad.cli import (
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
    ablation_row,
    main,
    parse_matrix,
    render_ablation_table,
)
from cxrcad.data import load_manifest
from cxrcad.metrics import full_report, parse_machine_report
from cxrcad.preprocess import read_sample

FULL_MATRIX = "260,24,4;16,494,8;0,0,42"
FILTER_MATRIX = "228,55,5;6,503,9;1,0,41"
SIMPLE_MATRIX = "197,81,10;4,506,8;1,1,40"


def test_no_command_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE


def test_unknown_flag_is_usage_error(capsys):
    assert main(["report", "--nope"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_phantom_writes_corpus_and_manifest(tmp_path):
    out = tmp_path / "corpus"
    code = main(
        ["phantom", "--class", "all", "--count", "2", "--seed", "3", "--size", "48",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    manifest = load_manifest(out / "manifest.csv")
    assert len(manifest.records) == 6
    assert (out / "normal_0000.png").exists()
    assert (out / "covid19_0001.png").exists()


def test_phantom_single_class(tmp_path):
    out = tmp_path / "c"
    assert main(["phantom", "--class", "covid19", "--count", "3", "--out", str(out)]) == EXIT_OK
    manifest = load_manifest(out / "manifest.csv")
    assert all(r.label.name == "COVID19" for r in manifest.records)


def test_phantom_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        main(["phantom", "--count", "1", "--seed", "5", "--size", "48", "--out", str(out)])
    assert (a / "normal_0000.png").read_bytes() == (b / "normal_0000.png").read_bytes()


@pytest.fixture()
def small_corpus(tmp_path):
    out = tmp_path / "corpus"
    main(["phantom", "--count", "3", "--seed", "1", "--size", "48", "--out", str(out)])
    return out


def test_preprocess_writes_mcs_and_summary(small_corpus, tmp_path, capsys):
    sample_dir = tmp_path / "samples"
    code = main(
        ["preprocess", "--manifest", str(small_corpus / "manifest.csv"),
         "--mode", "full", "--out", str(sample_dir)]
    )
    assert code == EXIT_OK
    files = sorted(sample_dir.glob("*.full.mcs"))
    assert len(files) == 9
    sample = read_sample(files[0])
    assert sample.channels.shape == (3, 224, 224)
    summary = (sample_dir / "preprocess_summary.csv").read_text()
    assert summary.count("ok") == 9
    assert summary.count("true") == 9          # every phantom has its band removed
    out = capsys.readouterr().out
    assert "3 samples written" in out


def test_preprocess_simple_mode_identical_planes(small_corpus, tmp_path):
    sample_dir = tmp_path / "samples"
    main(
        ["preprocess", "--manifest", str(small_corpus / "manifest.csv"),
         "--mode", "simple", "--out", str(sample_dir)]
    )
    sample = read_sample(next(iter(sample_dir.glob("*.simple.mcs"))))
    np.testing.assert_array_equal(sample.channels[0], sample.channels[1])
    np.testing.assert_array_equal(sample.channels[0], sample.channels[2])


def test_preprocess_missing_image_skipped(small_corpus, tmp_path, capsys):
    manifest = small_corpus / "manifest.csv"
    text = manifest.read_text() + "ghost.png,normal\n"
    manifest.write_text(text)
    sample_dir = tmp_path / "samples"
    code = main(
        ["preprocess", "--manifest", str(manifest), "--mode", "simple",
         "--out", str(sample_dir)]
    )
    # 1 of 10 failed: logged, skipped, exit still OK (<= 10%)
    assert code == EXIT_OK
    assert "skipped" in capsys.readouterr().err
    assert "failed" in (sample_dir / "preprocess_summary.csv").read_text()


def test_preprocess_too_many_failures_exit_2(tmp_path):
    manifest = tmp_path / "m.csv"
    manifest.write_text("path,label\nmissing1.png,normal\nmissing2.png,covid19\n")
    code = main(
        ["preprocess", "--manifest", str(manifest), "--mode", "simple",
         "--out", str(tmp_path / "s")]
    )
    assert code == EXIT_DATA


def test_missing_manifest_exit_2(tmp_path):
    code = main(
        ["preprocess", "--manifest", str(tmp_path / "none.csv"), "--mode", "full",
         "--out", str(tmp_path / "s")]
    )
    assert code == EXIT_DATA


def test_run_missing_samples_names_mode(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    main(["phantom", "--count", "7", "--seed", "4", "--size", "48", "--out", str(corpus)])
    cfg = tmp_path / "p.cfg"
    cfg.write_text(
        f"paths.manifest = {corpus / 'manifest.csv'}\n"
        f"paths.sample_dir = {tmp_path / 'nowhere'}\n"
    )
    code = main(["run", "--config", str(cfg), "--mode", "filter-base", "--seed", "1"])
    assert code == EXIT_DATA
    assert "filter-base" in capsys.readouterr().err


class TestReportCommand:
    def test_full_model_report_values(self, tmp_path, capsys):
        out = tmp_path / "rep"
        code = main(["report", "--matrix", FULL_MATRIX, "--out", str(out)])
        assert code == EXIT_OK
        stdout = capsys.readouterr().out
        assert "93.9% (796 / 848)" in stdout
        assert "[0.92,0.96]" in stdout
        kv = parse_machine_report((out / "report.kv").read_text())
        assert float(kv["accuracy"]) == pytest.approx(796 / 848)
        assert float(kv["kappa"]) == pytest.approx(0.8805, abs=5e-4)
        assert kv["binary.tp"] == "42"
        assert float(kv["binary.specificity"]) == pytest.approx(794 / 806)
        assert (out / "confusion_matrix.png").exists()
        assert (out / "report.txt").exists()

    def test_filter_base_figures_91(self, capsys):
        assert main(["report", "--matrix", FILTER_MATRIX]) == EXIT_OK
        stdout = capsys.readouterr().out
        assert "91.0%" in stdout
        assert "[0.89,0.93]" in stdout
        assert "Cohen's kappa: 0.82" in stdout

    def test_malformed_matrix_exit_1(self, capsys):
        assert main(["report", "--matrix", "1,2;3,4"]) == EXIT_USAGE
        assert main(["report", "--matrix", "a,b,c;d,e,f;g,h,i"]) == EXIT_USAGE
        assert main(["report", "--matrix", "0,0,0;0,0,0;0,0,0"]) == EXIT_USAGE

    def test_parse_matrix_values(self):
        m = parse_matrix(FULL_MATRIX)
        assert m.counts[1, 1] == 494 and m.n == 848


def test_ablation_table_from_reference_matrices():
    rows = [
        ablation_row(mode, full_report(parse_matrix(text)))
        for mode, text in (
            ("simple", SIMPLE_MATRIX),
            ("filter-base", FILTER_MATRIX),
            ("full", FULL_MATRIX),
        )
    ]
    table = render_ablation_table(rows)
    assert "91.0%" in table and "[0.89,0.93]" in table
    assert "87.6%" in table and "[0.85,0.90]" in table
    assert "93.9%" in table and "[0.92,0.96]" in table
    assert "0.82" in table and "0.75" in table and "0.88" in table


def test_numerical_failure_exit_3(tmp_path, monkeypatch, capsys):
    from cxrcad import cli
    from cxrcad.errors import NumericalError

    corpus = tmp_path / "corpus"
    main(["phantom", "--count", "7", "--seed", "6", "--size", "48", "--out", str(corpus)])
    samples = tmp_path / "samples"
    main(["preprocess", "--manifest", str(corpus / "manifest.csv"), "--mode", "simple",
          "--out", str(samples)])
    cfg = tmp_path / "p.cfg"
    cfg.write_text(
        f"paths.manifest = {corpus / 'manifest.csv'}\n"
        f"paths.sample_dir = {samples}\n"
    )

    def explode(*args, **kwargs):
        raise NumericalError("non-finite training loss at epoch 1")

    monkeypatch.setattr(cli.nn, "train", explode)
    code = main(["run", "--config", str(cfg), "--mode", "simple", "--seed", "1"])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_ablate_missing_samples_names_mode(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    main(["phantom", "--count", "7", "--seed", "8", "--size", "48", "--out", str(corpus)])
    cfg = tmp_path / "p.cfg"
    cfg.write_text(
        f"paths.manifest = {corpus / 'manifest.csv'}\n"
        f"paths.sample_dir = {tmp_path / 'void'}\n"
    )
    code = main(["ablate", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "abl")])
    assert code == EXIT_DATA
    assert "simple" in capsys.readouterr().err


def test_mini_ablate_end_to_end(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    main(["phantom", "--count", "7", "--seed", "9", "--size", "48", "--out", str(corpus)])
    samples = tmp_path / "samples"
    for mode in ("simple", "filter-base", "full"):
        main(["preprocess", "--manifest", str(corpus / "manifest.csv"), "--mode", mode,
              "--out", str(samples)])
    cfg = tmp_path / "p.cfg"
    cfg.write_text(
        f"paths.manifest = {corpus / 'manifest.csv'}\n"
        f"paths.sample_dir = {samples}\n"
        "net.widths = 2,2,2,2,2\n"
        "net.head = 8,4\n"
        "optimizer.max_epochs = 1\n"
        "optimizer.learning_rate = 0.001\n"
    )
    out = tmp_path / "ablation"
    assert main(["ablate", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == EXIT_OK
    table = (out / "ablation.txt").read_text()
    assert all(mode in table for mode in ("simple", "filter-base", "full"))
    csv_text = (out / "ablation.csv").read_text()
    assert csv_text.startswith("mode,accuracy,kappa,ci_low,ci_high,ci_display\n")
    assert len(csv_text.strip().splitlines()) == 4
    assert (out / "ablation.png").exists()
    for mode_dir in ("simple", "filter_base", "full"):
        assert (out / mode_dir / "report.kv").exists()


def test_mini_run_end_to_end(tmp_path, capsys):
    """Tiny corpus, tiny net, 2 epochs: covers the full run path quickly."""
    corpus = tmp_path / "corpus"
    main(["phantom", "--count", "7", "--seed", "2", "--size", "48", "--out", str(corpus)])
    samples = tmp_path / "samples"
    main(
        ["preprocess", "--manifest", str(corpus / "manifest.csv"), "--mode", "simple",
         "--out", str(samples)]
    )
    cfg = tmp_path / "p.cfg"
    cfg.write_text(
        f"paths.manifest = {corpus / 'manifest.csv'}\n"
        f"paths.sample_dir = {samples}\n"
        "net.widths = 2,2,2,2,2\n"
        "net.head = 8,4\n"
        "optimizer.max_epochs = 2\n"
        "optimizer.learning_rate = 0.001\n"
    )
    out = tmp_path / "run"
    code = main(["run", "--config", str(cfg), "--mode", "simple", "--seed", "3",
                 "--out", str(out)])
    assert code == EXIT_OK
    history = (out / "history.csv").read_text()
    assert history.startswith("epoch,train_loss,train_acc,val_loss,val_acc,lr\n")
    assert len(history.strip().splitlines()) == 3
    kv = parse_machine_report((out / "report.kv").read_text())
    assert int(kv["n"]) == 3                   # one test phantom per class
    assert (out / "best.simple.ckpt").exists()
    assert (out / "training_curves.png").exists()
    assert (out / "confusion_matrix.png").exists()
    assert (out / "report.txt").exists()
