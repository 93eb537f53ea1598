import csv
import json

import numpy as np
import pytest

from bitforge.bitcore import PlanarImage
from bitforge.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_MISSING, main
from bitforge.imageio import read_png, write_png
from bitforge.pipeline.experiment import MANIFEST
from conftest import TINY


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in TINY.items()))
    return path


def run_dirs(out):
    return sorted(p for p in out.iterdir() if p.is_dir())


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_synth_writes_dataset_and_manifest(tmp_path, cfg_file):
    out = tmp_path / "runs"
    assert main(["synth", "--config", str(cfg_file), "--out", str(out), "--quiet"]) == 0
    (run,) = run_dirs(out)
    pngs = sorted((run / "dataset").glob("*.png"))
    assert len(pngs) == TINY["synth_count"]
    assert read_png(pngs[0]).bit_depth == 16
    manifest = (run / MANIFEST).read_text()
    assert "[config]" in manifest and "# seed=0" in manifest
    assert manifest.count("# artifact dataset/") == len(pngs)


def test_compare_rows_and_manifest_rerun(tmp_path, cfg_file):
    out = tmp_path / "runs"
    base = ["--config", str(cfg_file), "--out", str(out), "--stages", "5:7", "--quiet"]
    assert main(["compare"] + base) == 0
    (run,) = run_dirs(out)
    got = rows(run / "compare.csv")
    assert [r["method"] for r in got] == ["zero_pad", "replicate", "gain", "cascade"]
    assert all(r["image"] == "mean" and r["b_L"] == "5" and r["b_H"] == "7" for r in got)

    assert main(["eval"] + base) == 0
    # the manifest alone reproduces eval in a fresh output tree
    other = tmp_path / "again"
    assert main(["eval", "--config", str(run / MANIFEST), "--out", str(other), "--quiet"]) == 0
    (rerun,) = run_dirs(other)
    assert rerun.name == run.name
    assert (rerun / "eval.csv").read_bytes() == (run / "eval.csv").read_bytes()


def test_ablate_reports_both_variants(tmp_path, cfg_file):
    out = tmp_path / "runs"
    assert main(["ablate", "--config", str(cfg_file), "--out", str(out), "--stages", "4:5", "--seed", "3", "--quiet"]) == 0
    table = next(p / "ablation.csv" for p in run_dirs(out) if (p / "ablation.csv").exists())
    got = rows(table)
    assert [r["method"] for r in got] == ["with_sr", "without_sr"]
    seeds = {p.name.split("-seed")[1] for p in run_dirs(out)}
    assert seeds == {"3"}


def test_no_sr_flag_changes_run(tmp_path, cfg_file):
    out = tmp_path / "runs"
    assert main(["train", "--config", str(cfg_file), "--out", str(out), "--stages", "4:5", "--no-sr", "--quiet"]) == 0
    (run,) = run_dirs(out)
    assert "use_sr = false" in (run / MANIFEST).read_text()
    assert not (run / "trunks.ckpt").exists()
    assert "use_sr=false" in (run / "stage_04.manifest").read_text()


def test_infer_expands_image(tmp_path, cfg_file, capsys):
    out = tmp_path / "runs"
    assert main(["train", "--config", str(cfg_file), "--out", str(out), "--quiet"]) == 0
    (run,) = run_dirs(out)
    assert sorted(p.name for p in run.glob("stage_*.ckpt")) == [f"stage_0{b}.ckpt" for b in range(4, 8)]
    rng = np.random.default_rng(0)
    src = write_png(tmp_path / "low.png", PlanarImage(rng.integers(0, 16, (3, 12, 10)), 4))
    dst = tmp_path / "high.png"
    assert main(["infer", str(src), str(dst), "--run", str(run), "--quiet"]) == 0
    result = read_png(dst)
    assert result.bit_depth == 8 and result.samples.shape == (3, 12, 10)
    assert np.array_equal(result.samples >> 4, read_png(src).samples)
    # same run found through the config instead of --run
    dst2 = tmp_path / "high2.png"
    assert main(["infer", str(src), str(dst2), "--config", str(cfg_file), "--out", str(out), "--quiet"]) == 0
    assert read_png(dst2) == result


def test_bad_config_single_json_line(tmp_path, capsys):
    code = main(["eval", "--out", str(tmp_path), "--set", "depth_in=8", "--set", "depth_out=4"])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    record = json.loads(err[0])
    assert record["status"] == "error" and record["kind"] == "ConfigError" and record["exit"] == EXIT_CONFIG


def test_unknown_key_and_missing_config(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--set", "colour=red"]) == EXIT_CONFIG
    assert "colour" in last_error(capsys)["message"]
    assert main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "none.cfg")]) == EXIT_CONFIG


def test_missing_files(tmp_path, capsys):
    assert main(["infer", str(tmp_path / "in.png"), str(tmp_path / "out.png"), "--run", str(tmp_path)]) == EXIT_MISSING
    assert last_error(capsys)["kind"] == "FileNotFoundError"
    run = tmp_path / "run"
    run.mkdir()
    (run / MANIFEST).write_text("[config]\nseed = 0\n")
    write_png(tmp_path / "in.png", PlanarImage(np.zeros((3, 8, 8), dtype=np.uint16), 4))
    assert main(["infer", str(tmp_path / "in.png"), str(tmp_path / "out.png"), "--run", str(run)]) == EXIT_MISSING
    assert "stage" in last_error(capsys)["message"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path, cfg_file, capsys):
    code = main(
        ["train", "--config", str(cfg_file), "--out", str(tmp_path), "--stages", "4:5", "--no-sr",
         "--set", "lr=1e300", "--set", "momentum=0", "--quiet"]
    )
    assert code == EXIT_DIVERGED
    assert last_error(capsys)["kind"] == "TrainingDiverged"


def test_bad_thread_cap(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BITFORGE_THREADS", "many")
    assert main(["synth", "--out", str(tmp_path)]) != 0
    assert "BITFORGE_THREADS" in last_error(capsys)["message"]


def test_bad_stage_syntax():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--stages", "4-8"])
    assert exc.value.code != 0
