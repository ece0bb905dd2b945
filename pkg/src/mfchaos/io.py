"""Artifact persistence: delimited output, flat binary snapshots, manifests.

CSV files are written with repeatable "%.17g" formatting so that identical
runs produce identical bytes.  Field and tensor snapshots use one flat binary
layout: an ASCII magic, a little-endian header, then the raw float64 buffer
in C order:

    magic   4s   b"MFCH"
    version u32  1
    kind    u8   0 = spatial field, 1 = phase field, 2 = tensor
    header per kind:
      spatial: d u32, cells u32, time f64
      phase:   cells_x u32, cells_v u32, v_halfwidth f64, time f64
      tensor:  order u32, sites u32, dz f64, time f64

The run manifest echoes the configuration, carries the package version, a
sha256 run hash of (config, seed), wall time, incident counters, and the file
list of the run directory.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError

MAGIC = b"MFCH"
FORMAT_VERSION = 1

KIND_SPATIAL = 0
KIND_PHASE = 1
KIND_TENSOR = 2


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if not isinstance(v, str) else v for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path):
    """Columns as a dict name -> list (floats where possible)."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise ConfigError(f"{path} is empty")
    header = lines[0].split(",")
    cols = {h: [] for h in header}
    for line in lines[1:]:
        for h, tok in zip(header, line.split(",")):
            try:
                cols[h].append(float(tok))
            except ValueError:
                cols[h].append(tok)
    return cols


def write_spatial_snapshot(path, dim, cells, time, values: np.ndarray):
    head = struct.pack("<4sIBIId", MAGIC, FORMAT_VERSION, KIND_SPATIAL, dim, cells, time)
    _write_binary(path, head, values)


def write_phase_snapshot(path, cells_x, cells_v, v_halfwidth, time, values: np.ndarray):
    head = struct.pack(
        "<4sIBIIdd", MAGIC, FORMAT_VERSION, KIND_PHASE, cells_x, cells_v, v_halfwidth, time
    )
    _write_binary(path, head, values)


def write_tensor_snapshot(path, order, sites, dz, time, values: np.ndarray):
    head = struct.pack("<4sIBIIdd", MAGIC, FORMAT_VERSION, KIND_TENSOR, order, sites, dz, time)
    _write_binary(path, head, values)


def _write_binary(path, head: bytes, values: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_snapshot(path):
    """Returns (kind, meta dict, values array)."""
    raw = Path(path).read_bytes()
    magic, version, kind = struct.unpack_from("<4sIB", raw, 0)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise ConfigError(f"{path} is not a recognized snapshot file")
    off = struct.calcsize("<4sIB")
    if kind == KIND_SPATIAL:
        dim, cells, time = struct.unpack_from("<IId", raw, off)
        off += struct.calcsize("<IId")
        vals = np.frombuffer(raw, dtype="<f8", offset=off).reshape((cells,) * dim)
        return kind, {"dim": dim, "cells": cells, "time": time}, vals
    if kind == KIND_PHASE:
        cx, cv, lv, time = struct.unpack_from("<IIdd", raw, off)
        off += struct.calcsize("<IIdd")
        vals = np.frombuffer(raw, dtype="<f8", offset=off).reshape(cx, cv)
        return kind, {"cells_x": cx, "cells_v": cv, "v_halfwidth": lv, "time": time}, vals
    if kind == KIND_TENSOR:
        order, sites, dz, time = struct.unpack_from("<IIdd", raw, off)
        off += struct.calcsize("<IIdd")
        vals = np.frombuffer(raw, dtype="<f8", offset=off)
        vals = vals.reshape((sites,) * order) if order > 0 else vals.reshape(())
        return kind, {"order": order, "sites": sites, "dz": dz, "time": time}, vals
    raise ConfigError(f"unknown snapshot kind {kind}")


def run_hash(config: dict, seed: int) -> str:
    blob = json.dumps({"config": config, "seed": seed}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(outdir, kind, config, seed, wall_time_s, incidents=None, notes=None):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = sorted(
        str(p.relative_to(outdir)) for p in outdir.rglob("*") if p.is_file() and p.name != "manifest.json"
    )
    manifest = {
        "schema_version": 1,
        "kind": kind,
        "config": config,
        "seed": seed,
        "package_version": __version__,
        "wall_time_s": wall_time_s,
        "incidents": incidents or {},
        "run_hash": run_hash(config, seed),
        "files": files,
        "notes": notes or {},
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(outdir) -> dict:
    path = Path(outdir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no manifest.json under {outdir}")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != 1:
        raise ConfigError("unsupported manifest schema_version")
    return manifest
