"""Command-line entry point: simulate -> train -> sr -> eval.

Exit codes: 0 success, 1 usage or configuration error, 2 data or numerical error.
Every command writes a ``*.resolved.json`` (or ``resolved_config.json`` for
directory outputs) holding the fully-defaulted settings it ran with.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import torch

from . import __version__
from .checkpoint import load_checkpoint
from .errors import ConfigError, VoxSRError
from .inference import SRRequest, super_resolve
from .metrics import evaluate
from .networks import DecoderConfig, EncoderConfig, ModelConfig
from .simulation import PatchPair, ScaleSampler, extract_training_pairs
from .training import TrainConfig, train
from .volume_io import _atomic_write, normalize_intensity, read_volume, write_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
RESOLVED_NAME = "resolved_config.json"
INDEX_NAME = "index.json"
VOLUME_SUFFIXES = (".nii", ".vvol")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="voxsr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="intra-op CPU threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="cut LR/HR patch pairs out of HR volumes")
    s.add_argument("--in", dest="input", required=True, help="HR volume file or directory of volumes")
    s.add_argument("--out", required=True, help="output directory for pairs and index.json")
    s.add_argument("--patches", type=int, required=True, help="pairs per input volume")
    s.add_argument("--lr-size", type=int, default=10)
    s.add_argument("--kmin", type=float, default=2.0)
    s.add_argument("--kmax", type=float, default=4.0)
    s.add_argument("--crop-size", type=int, default=40)
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a model from a JSON run config (see docs/config.md)")
    t.add_argument("--config", required=True)
    t.add_argument("--epochs", type=int, help="override train.total_epochs")
    t.add_argument("--lr", type=float, help="override train.lr_init")
    t.add_argument("--seed", type=int, help="override seed")
    t.add_argument("--out", help="override output_dir")

    r = sub.add_parser("sr", help="super-resolve one volume at an arbitrary scale")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True, help="LR volume, intensities in [0, 1]")
    r.add_argument("--output", required=True)
    r.add_argument("--scale", type=float, required=True)
    r.add_argument("--chunk-size", type=int, default=65536)
    r.add_argument("--clamp", type=_on_off, default=True, help="clip output to [0, 1] (on|off, default on)")
    r.add_argument("--max-encode-voxels", type=int, default=None,
                   help="encode in overlapping tiles above this many LR voxels")

    e = sub.add_parser("eval", help="score reconstructions against a reference volume")
    e.add_argument("--sr", action="append", required=True, help="reconstruction (repeatable)")
    e.add_argument("--gt", required=True)
    e.add_argument("--scale", type=float, action="append", help="scale label per --sr (repeatable)")
    e.add_argument("--report", required=True, help="output report JSON")
    e.add_argument("--windowed", action="store_true", help="also compute 7-voxel windowed SSIM")
    return p


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _sidecar(output: Path) -> Path:
    return output.with_name(output.name + ".resolved.json")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _list_volumes(src: Path) -> list[Path]:
    if src.is_dir() and not (src / "header.json").exists():
        found = sorted(p for p in src.iterdir() if p.name.lower().endswith(VOLUME_SUFFIXES))
        if not found:
            raise UsageError(f"no .nii or .vvol volumes in {src}")
        return found
    return [src]


def cmd_simulate(args) -> int:
    if args.patches < 1 or args.lr_size < 1:
        raise UsageError("--patches and --lr-size must be positive")
    try:
        sampler = ScaleSampler(args.kmin, args.kmax, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    (out / "pairs").mkdir(parents=True, exist_ok=True)
    index = []
    for vi, src in enumerate(_list_volumes(Path(args.input))):
        vol = normalize_intensity(read_volume(src))
        for pi, pair in enumerate(extract_training_pairs(vol, args.patches, args.lr_size, sampler, args.crop_size)):
            stem = f"pairs/{vi:03d}_{pi:04d}"
            write_volume(pair.lr, out / f"{stem}_lr.vvol")
            write_volume(pair.hr, out / f"{stem}_hr.vvol")
            index.append({"lr_path": f"{stem}_lr.vvol", "hr_path": f"{stem}_hr.vvol",
                          "effective_scale": pair.effective_scale, "sampled_scale": pair.sampled_scale,
                          "source": str(src)})
    _write_json(out / INDEX_NAME, index)
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    _write_json(out / RESOLVED_NAME, {"command": "simulate", **resolved})
    print(f"wrote {len(index)} pairs to {out}")
    return EXIT_OK


def load_pairs(index_path) -> list[PatchPair]:
    index_path = Path(index_path)
    try:
        entries = json.loads(index_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read pair index {index_path}: {exc}") from exc
    base = index_path.parent
    return [PatchPair(read_volume(base / e["lr_path"]), read_volume(base / e["hr_path"]),
                      float(e["effective_scale"]), e.get("sampled_scale")) for e in entries]


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
TOP_KEYS = {"data", "train", "model", "output_dir", "seed"}


def _check_keys(section: str, given: dict, allowed: set) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"{section} must be a JSON object")
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


def resolve_train_config(raw: dict, base_dir: Path, overrides: dict) -> dict:
    """Fill every default and apply flag overrides; paths become absolute."""
    _check_keys("config", raw, TOP_KEYS)
    data = raw.get("data", {})
    _check_keys("data", data, {"train_index", "val_index"})
    if "train_index" not in data:
        raise ConfigError("data.train_index is required")
    tsec = dict(raw.get("train", {}))
    _check_keys("train", tsec, TRAIN_KEYS)
    msec = raw.get("model", {})
    _check_keys("model", msec, {"encoder", "decoder"})
    _check_keys("model.encoder", msec.get("encoder", {}), {f.name for f in fields(EncoderConfig)})
    _check_keys("model.decoder", msec.get("decoder", {}), {f.name for f in fields(DecoderConfig)})

    if overrides.get("epochs") is not None:
        tsec["total_epochs"] = overrides["epochs"]
    if overrides.get("lr") is not None:
        tsec["lr_init"] = overrides["lr"]
    seed = overrides["seed"] if overrides.get("seed") is not None else raw.get("seed", 0)
    try:
        tcfg = TrainConfig(**tsec, seed=int(seed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    mcfg = ModelConfig.from_dict(msec)

    def absolute(p):
        return None if p is None else str((base_dir / p).resolve())

    out_dir = overrides.get("out") or raw.get("output_dir") or "run"
    train_dict = asdict(tcfg)
    train_dict.pop("seed")
    return {
        "data": {"train_index": absolute(data["train_index"]), "val_index": absolute(data.get("val_index"))},
        "train": train_dict,
        "model": mcfg.to_dict(),
        "output_dir": str(Path(out_dir).resolve()) if overrides.get("out") else absolute(out_dir),
        "seed": tcfg.seed,
    }


def cmd_train(args) -> int:
    cfg_path = Path(args.config)
    try:
        raw = json.loads(cfg_path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {cfg_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{cfg_path} is not valid JSON: {exc}") from exc
    resolved = resolve_train_config(raw, cfg_path.parent,
                                    {"epochs": args.epochs, "lr": args.lr, "seed": args.seed, "out": args.out})
    tcfg = TrainConfig(**resolved["train"], seed=resolved["seed"])
    mcfg = ModelConfig.from_dict(resolved["model"])
    train_pairs = load_pairs(resolved["data"]["train_index"])
    val_index = resolved["data"]["val_index"]
    val_pairs = load_pairs(val_index) if val_index else []

    out = Path(resolved["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / RESOLVED_NAME, resolved)
    result = train(tcfg, train_pairs, val_pairs, out, mcfg)
    best = "n/a" if result.best_val_l1 is None else f"{result.best_val_l1:.6f}"
    print(f"checkpoint {result.checkpoint} (best val L1 {best}, {len(result.history)} epochs)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sr / eval
# ---------------------------------------------------------------------------

def cmd_sr(args) -> int:
    try:
        req = SRRequest(args.scale, args.chunk_size, args.clamp, args.max_encode_voxels)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    model = load_checkpoint(args.checkpoint)
    lr = read_volume(args.input)
    out = super_resolve(model, lr, req)
    output = Path(args.output)
    write_volume(out, output)
    _write_json(_sidecar(output), {
        "command": "sr", "checkpoint": str(Path(args.checkpoint).resolve()),
        "input": str(Path(args.input).resolve()), "output": str(output.resolve()),
        **asdict(req), "seed": 0,
    })
    print(f"{lr.shape} -> {out.shape} written to {output}")
    return EXIT_OK


def _fmt(x) -> str:
    if x is None:
        return "-"
    return "inf" if math.isinf(x) else f"{x:.4f}"


def cmd_eval(args) -> int:
    if args.scale and len(args.scale) != len(args.sr):
        raise UsageError("give one --scale per --sr or none at all")
    gt = read_volume(args.gt)
    reports = []
    for i, path in enumerate(args.sr):
        meta = {"sr": str(path), "gt": str(args.gt)}
        if args.scale:
            meta["scale"] = args.scale[i]
        reports.append(evaluate(read_volume(path), gt, windowed=args.windowed, **meta))

    report_path = Path(args.report)
    _write_json(report_path, {"reports": [r.to_dict() for r in reports]})
    _write_json(_sidecar(report_path), {"command": "eval", "sr": args.sr, "gt": args.gt, "scale": args.scale,
                                        "windowed": args.windowed, "seed": 0})

    cols = ["psnr_paper", "psnr_standard", "ssim_global", "ssim_slicewise"] + (["ssim_windowed"] if args.windowed else [])
    print("  ".join(["scale".rjust(6)] + [c.rjust(15) for c in cols] + ["  sr"]))
    for r in reports:
        scale = r.metadata.get("scale")
        row = [(_fmt(scale) if scale is not None else "-").rjust(6)] + [_fmt(getattr(r, c)).rjust(15) for c in cols]
        print("  ".join(row + ["  " + r.metadata["sr"]]))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "sr": cmd_sr, "eval": cmd_eval}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("voxsr: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    torch.set_num_threads(args.threads)

    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"voxsr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VoxSRError, ArithmeticError, ValueError, OSError) as exc:
        print(f"voxsr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
