"""Checkpoint archive: manifest.json plus one little-endian float32 blob per tensor.

The archive is an uncompressed zip with fixed member timestamps, so saving
the same parameters twice produces byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, MalformedCheckpoint
from .networks import ModelConfig, SRModel
from .volume_io import _atomic_write

FORMAT_TAG = "voxsr-checkpoint"
FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(model: SRModel, path, extra: dict | None = None) -> None:
    state = model.state_dict()
    entries = []
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, t in state.items():
            blob = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
            member = f"tensors/{name}.bin"
            zf.writestr(_member(member), blob)
            entries.append({"name": name, "shape": list(t.shape), "dtype": "f32le", "file": member})
        manifest = {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "config": model.config.to_dict(),
            "tensors": entries,
            "extra": extra or {},
        }
        zf.writestr(_member("manifest.json"), json.dumps(manifest, indent=2, sort_keys=True))
    _atomic_write(Path(path), buf.getvalue())


def read_manifest(path) -> dict:
    try:
        with zipfile.ZipFile(path) as zf:
            return json.loads(zf.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise MalformedCheckpoint(f"{path}: unreadable manifest ({exc})") from exc


def load_checkpoint(path) -> SRModel:
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise MalformedCheckpoint(f"{path} is not a checkpoint archive") from exc
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except (KeyError, json.JSONDecodeError) as exc:
            raise MalformedCheckpoint(f"{path}: missing or invalid manifest.json") from exc
        if manifest.get("format") != FORMAT_TAG:
            raise MalformedCheckpoint(f"{path}: unknown format tag {manifest.get('format')!r}")
        try:
            model = SRModel(ModelConfig.from_dict(manifest["config"]))
        except (KeyError, ConfigError) as exc:
            raise MalformedCheckpoint(f"{path}: invalid config ({exc})") from exc

        expected = model.state_dict()
        declared = {e["name"]: e for e in manifest.get("tensors", [])}
        if set(declared) != set(expected):
            missing = sorted(set(expected) - set(declared))
            unknown = sorted(set(declared) - set(expected))
            raise MalformedCheckpoint(f"{path}: tensor set mismatch (missing {missing}, unexpected {unknown})")

        members = set(zf.namelist())
        state = {}
        for name, ref in expected.items():
            entry = declared[name]
            if entry.get("dtype") != "f32le":
                raise MalformedCheckpoint(f"{path}: tensor {name} has dtype {entry.get('dtype')}")
            if list(entry.get("shape", [])) != list(ref.shape):
                raise MalformedCheckpoint(f"{path}: tensor {name} shape {entry.get('shape')} != {list(ref.shape)}")
            if entry.get("file") not in members:
                raise MalformedCheckpoint(f"{path}: tensor {name} declared but absent from archive")
            raw = zf.read(entry["file"])
            if len(raw) != 4 * ref.numel():
                raise MalformedCheckpoint(f"{path}: tensor {name} blob has {len(raw)} bytes")
            arr = np.frombuffer(raw, dtype="<f4").reshape(ref.shape)
            state[name] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state)
    return model
