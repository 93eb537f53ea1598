"""Run directories and the verb-level workflows behind the CLI.

A run directory is ``<out>/<config digest>-seed<seed>`` and always holds a
``manifest.txt``: the config snapshot (loadable again with ``--config``) plus
sha256 checksums of every artifact written so far.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from pathlib import Path

from bitforge.bitcore import PlanarImage
from bitforge.imageio import write_png
from bitforge.metrics import write_report
from bitforge.pipeline.cascade import METHODS, cascade_infer, evaluate
from bitforge.pipeline.config import TrainConfig
from bitforge.pipeline.store import (
    file_sha256,
    load_stages,
    load_trunks,
    save_stage,
    save_trunks,
    stage_path,
)
from bitforge.pipeline.synth import split_holdout
from bitforge.pipeline.train import bitdepth_dataset, pretrain_sr, train_submodel

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
TRUNKS = "trunks.ckpt"


def thread_cap() -> int:
    raw = os.environ.get("BITFORGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"BITFORGE_THREADS must be an integer, got {raw!r}") from None


class RunDir:
    def __init__(self, out, config: TrainConfig):
        self.config = config
        self.path = Path(out) / f"{config.digest()}-seed{config.seed}"
        self.path.mkdir(parents=True, exist_ok=True)

    @classmethod
    def existing(cls, path) -> "RunDir":
        """Reopen a run directory from its manifest alone."""
        from bitforge.pipeline.config import parse_config

        path = Path(path)
        manifest = path / MANIFEST
        if not manifest.exists():
            raise FileNotFoundError(f"no {MANIFEST} in {path}")
        run = cls.__new__(cls)
        run.config = parse_config(manifest)
        run.path = path
        return run

    def __truediv__(self, name) -> Path:
        return self.path / name

    def _artifacts(self) -> dict[str, str]:
        found = {}
        manifest = self / MANIFEST
        if manifest.exists():
            for line in manifest.read_text().splitlines():
                if line.startswith("# artifact "):
                    name, _, digest = line[len("# artifact ") :].partition(" sha256=")
                    found[name] = digest
        return found

    def write_manifest(self, verb: str, artifacts=()) -> Path:
        """Snapshot the config (before results) and checksum ``artifacts`` (after)."""
        known = self._artifacts()
        for name in artifacts:
            known[str(name)] = file_sha256(self / name)
        lines = [
            "# bitforge run manifest",
            f"# config_hash={self.config.digest()}",
            f"# seed={self.config.seed}",
            f"# last_verb={verb}",
            "[config]",
            self.config.to_text().rstrip("\n"),
        ]
        lines += [f"# artifact {name} sha256={digest}" for name, digest in sorted(known.items())]
        path = self / MANIFEST
        path.write_text("\n".join(lines) + "\n")
        return path


def datasets(config: TrainConfig):
    return split_holdout(bitdepth_dataset(config), config.holdout_fraction)


# ---------------------------------------------------------------- verbs


def run_synth(run: RunDir) -> list[Path]:
    run.write_manifest("synth")
    folder = run / "dataset"
    folder.mkdir(exist_ok=True)
    written = []
    for i, img in enumerate(bitdepth_dataset(run.config)):
        written.append(write_png(folder / f"img_{i:03d}.png", img).relative_to(run.path))
    run.write_manifest("synth", written)
    return written


def run_pretrain(run: RunDir):
    run.write_manifest("pretrain-sr")
    trunks, logs = pretrain_sr(run.config)
    save_trunks(run / TRUNKS, trunks)
    names = [TRUNKS, "trunks.manifest"]
    for scale, train_log in logs.items():
        name = f"sr_x{scale}_loss.csv"
        (run / name).write_text(train_log.to_csv())
        names.append(name)
    run.write_manifest("pretrain-sr", names)
    return trunks


def ensure_trunks(run: RunDir):
    if not run.config.use_sr:
        return None
    if (run / TRUNKS).exists():
        return load_trunks(run / TRUNKS)
    return run_pretrain(run)


def _train_stage_job(args):
    config, run_path, bit_depth = args
    from threadpoolctl import threadpool_limits

    with threadpool_limits(1):
        trunks = load_trunks(Path(run_path) / TRUNKS) if config.use_sr else None
        train, _ = datasets(config)
        model, train_log = train_submodel(config, bit_depth, trunks, train)
        path = stage_path(run_path, bit_depth)
        save_stage(path, model)
        log_name = f"stage_{bit_depth:02d}_loss.csv"
        (Path(run_path) / log_name).write_text(train_log.to_csv())
    return [path.name, path.with_suffix(".manifest").name, log_name]


def run_train(run: RunDir, workers: int | None = None) -> list[str]:
    config = run.config
    run.write_manifest("train")
    ensure_trunks(run)
    jobs = [(config, str(run.path), b) for b in config.stages]
    workers = min(workers or thread_cap(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            produced = list(pool.map(_train_stage_job, jobs))
    else:
        produced = [_train_stage_job(job) for job in jobs]
    names = [name for group in produced for name in group]
    run.write_manifest("train", names)
    return names


def ensure_stages(run: RunDir):
    config = run.config
    if not all(stage_path(run.path, b).exists() for b in config.stages):
        run_train(run)
    return load_stages(run.path, config.depth_in, config.depth_out)


def run_eval(run: RunDir, name: str = "eval.csv") -> list[dict]:
    config = run.config
    run.write_manifest("eval")
    stages = ensure_stages(run)
    _, held_out = datasets(config)
    rows = evaluate(held_out, "cascade", config.depth_in, config.depth_out, stages)
    write_report(run / name, rows)
    run.write_manifest("eval", [name])
    return rows


def run_compare(run: RunDir, name: str = "compare.csv") -> list[dict]:
    config = run.config
    run.write_manifest("compare")
    stages = ensure_stages(run)
    _, held_out = datasets(config)
    rows = []
    for method in METHODS:
        result = evaluate(held_out, method, config.depth_in, config.depth_out, stages if method == "cascade" else None)
        rows.append(result[-1])
    write_report(run / name, rows)
    run.write_manifest("compare", [name])
    return rows


def run_ablate(run: RunDir, out, name: str = "ablation.csv") -> list[dict]:
    """Train and evaluate with and without the SR trunks under the same seed."""
    run.write_manifest("ablate")
    rows = []
    for label, use_sr in (("with_sr", True), ("without_sr", False)):
        variant = RunDir(out, run.config.replace(use_sr=use_sr))
        mean = run_eval(variant)[-1]
        rows.append(dict(mean, method=label))
    write_report(run / name, rows)
    run.write_manifest("ablate", [name])
    return rows


def run_infer(run: RunDir, img: PlanarImage, depth_out: int, output) -> PlanarImage:
    stages = load_stages(run.path, img.bit_depth, depth_out)
    result = cascade_infer(img, stages, depth_out)
    write_png(output, result)
    return result
