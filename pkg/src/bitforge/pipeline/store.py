"""On-disk layout of trained stages and trunks.

Every ``.ckpt`` (tensor checkpoint) is paired with a ``.manifest`` text file of
``key=value`` lines naming the blocks and architecture needed to rebuild it.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from bitforge.autograd.checkpoint import load_checkpoint, save_checkpoint
from bitforge.nets import Architecture, SrTrunk, Submodel


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, entries: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in entries.items()))


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def stage_path(run_dir, bit_depth: int) -> Path:
    return Path(run_dir) / f"stage_{bit_depth:02d}.ckpt"


def _arch_entries(arch: Architecture) -> dict:
    return {
        "trunk_width": arch.trunk_width,
        "res_blocks": arch.res_blocks,
        "fused_width": arch.fused_width,
        "ira_blocks": arch.ira_blocks,
        "expansion": arch.expansion,
        "use_sr": str(arch.use_sr).lower(),
    }


def _arch_from(meta: dict) -> Architecture:
    return Architecture(
        trunk_width=int(meta["trunk_width"]),
        res_blocks=int(meta["res_blocks"]),
        fused_width=int(meta["fused_width"]),
        ira_blocks=int(meta["ira_blocks"]),
        expansion=int(meta["expansion"]),
        use_sr=meta["use_sr"] == "true",
    )


def save_stage(path, model: Submodel) -> str:
    path = Path(path)
    digest = save_checkpoint(path, model.state_dict())
    arch = model.arch
    blocks = sorted({name.split(".")[0] for name, _ in model.named_parameters()})
    entries = {"kind": "submodel", "stage_depth": model.bit_depth, "target_depth": model.bit_depth + 1}
    entries.update(_arch_entries(arch))
    if arch.use_sr:
        for tag, trunk in (("sr2", model.sr2), ("sr4", model.sr4)):
            spec = trunk.spec
            entries[f"{tag}_spec"] = f"scale={spec.scale_tag},width={spec.trunk_width},blocks={spec.num_res_blocks},frozen=true"
    entries["blocks"] = ",".join(blocks)
    entries["checkpoint_sha256"] = digest
    write_manifest(path.with_suffix(".manifest"), entries)
    return digest


def load_stage(path) -> Submodel:
    path = Path(path)
    meta = read_manifest(path.with_suffix(".manifest"))
    if meta.get("kind") != "submodel":
        raise ValueError(f"{path} is not a submodel checkpoint")
    if file_sha256(path) != meta["checkpoint_sha256"]:
        raise ValueError(f"checksum mismatch for {path}")
    model = Submodel(_arch_from(meta), int(meta["stage_depth"]), np.random.default_rng(0))
    model.load_state_dict(load_checkpoint(path))
    return model


def load_stages(run_dir, depth_in: int, depth_out: int) -> list[Submodel]:
    stages = []
    for b in range(depth_in, depth_out):
        path = stage_path(run_dir, b)
        if not path.exists():
            raise FileNotFoundError(f"missing stage checkpoint {path}")
        stages.append(load_stage(path))
    return stages


def save_trunks(path, trunks: tuple[SrTrunk, SrTrunk]) -> str:
    path = Path(path)
    state = {}
    for tag, trunk in zip(("sr2", "sr4"), trunks):
        state.update({f"{tag}.{k}": v for k, v in trunk.state_dict().items()})
    digest = save_checkpoint(path, state)
    spec = trunks[0].spec
    write_manifest(
        path.with_suffix(".manifest"),
        {
            "kind": "sr_trunks",
            "trunk_width": spec.trunk_width,
            "res_blocks": spec.num_res_blocks,
            "scales": "2,4",
            "frozen": "true",
            "checkpoint_sha256": digest,
        },
    )
    return digest


def load_trunks(path) -> tuple[SrTrunk, SrTrunk]:
    path = Path(path)
    meta = read_manifest(path.with_suffix(".manifest"))
    if meta.get("kind") != "sr_trunks":
        raise ValueError(f"{path} is not an SR trunk checkpoint")
    if file_sha256(path) != meta["checkpoint_sha256"]:
        raise ValueError(f"checksum mismatch for {path}")
    arch = Architecture(trunk_width=int(meta["trunk_width"]), res_blocks=int(meta["res_blocks"]))
    state = load_checkpoint(path)
    trunks = []
    for tag, scale in (("sr2", 2), ("sr4", 4)):
        trunk = SrTrunk(arch.trunk_spec(scale), np.random.default_rng(0))
        prefix = f"{tag}."
        trunk.load_state_dict({k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)})
        trunks.append(trunk.freeze())
    return trunks[0], trunks[1]
