"""Readers for the documented run-directory interfaces."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class ReportError(Exception):
    """Base error for report generation."""


class MissingManifest(ReportError):
    pass


class MissingColumns(ReportError):
    pass


class MissingData(ReportError):
    pass


@dataclass(frozen=True)
class RunManifest:
    path: Path
    kind: str
    schema_version: int
    config: dict
    files: tuple
    notes: dict
    raw: dict

    def has(self, name: str) -> bool:
        return name in self.files


def load_manifest(run_dir) -> RunManifest:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise MissingManifest(f"no manifest.json under {run_dir}")
    raw = json.loads(path.read_text())
    if raw.get("schema_version") != 1:
        raise ReportError(f"unsupported manifest schema_version {raw.get('schema_version')!r}")
    missing = [f for f in raw.get("files", []) if not (Path(run_dir) / f).exists()]
    if missing:
        raise ReportError(f"manifest references missing files: {missing[:3]}")
    return RunManifest(
        path=Path(run_dir),
        kind=raw["kind"],
        schema_version=raw["schema_version"],
        config=raw.get("config", {}),
        files=tuple(raw.get("files", [])),
        notes=raw.get("notes", {}),
        raw=raw,
    )


def read_csv(path, required=None) -> dict:
    """Columns as dict name -> list; floats where they parse."""
    path = Path(path)
    if not path.exists():
        raise MissingData(f"{path} does not exist")
    lines = path.read_text().strip().splitlines()
    if not lines or not lines[0]:
        raise MissingData(f"{path} is empty")
    header = lines[0].split(",")
    if required:
        missing = [c for c in required if c not in header]
        if missing:
            raise MissingColumns(f"{path} lacks columns {missing}")
    cols = {h: [] for h in header}
    for line in lines[1:]:
        for h, tok in zip(header, line.split(",")):
            try:
                cols[h].append(float(tok))
            except ValueError:
                cols[h].append(tok)
    if not lines[1:]:
        raise MissingData(f"{path} has a header but no rows")
    return cols
