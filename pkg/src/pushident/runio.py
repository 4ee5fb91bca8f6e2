"""Run directories, manifests, config hashing and metrics files.

A run directory holds config.json, an append-only manifest.jsonl, and the
datasets/, checkpoints/, metrics/ subdirectories.  Completed stages are
recorded in the manifest so an interrupted run can resume at stage
granularity with identical results.
"""

from __future__ import annotations

import csv
import hashlib
import json
import subprocess
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigMismatch


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(canonical_json(config_dict).encode()).hexdigest()[:16]


def compat_hash(config_dict: dict) -> str:
    """Hash ignoring the seed: runs differing only by seed stay comparable."""
    trimmed = {k: v for k, v in config_dict.items() if k != "seed"}
    return hashlib.sha256(canonical_json(trimmed).encode()).hexdigest()[:16]


def build_identifier() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        git = desc.stdout.strip() if desc.returncode == 0 else "nogit"
    except (OSError, subprocess.TimeoutExpired):
        git = "nogit"
    return f"pushident-{__version__}+{git}"


class RunManifest:
    """Append-only event log of a run; one JSON object per line."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.entries: list[dict] = []
        if self.path.exists():
            with open(self.path) as fh:
                self.entries = [json.loads(line) for line in fh if line.strip()]

    def append(self, event: dict) -> None:
        event = dict(event)
        event.setdefault("time", datetime.now(timezone.utc).isoformat())
        event.setdefault("build", build_identifier())
        with open(self.path, "a") as fh:
            fh.write(json.dumps(event) + "\n")
        self.entries.append(event)

    def completed_stages(self) -> dict[str, dict]:
        return {
            e["stage"]: e for e in self.entries if e.get("event") == "stage_complete"
        }

    def stage_complete(self, stage: str, artifacts: dict[str, str], cfg_hash: str) -> None:
        for rel in artifacts.values():
            if not (self.path.parent / rel).exists():
                raise FileNotFoundError(f"artifact {rel} missing at manifest write")
        self.append(
            {"event": "stage_complete", "stage": stage, "artifacts": artifacts,
             "config_hash": cfg_hash}
        )


class RunDirectory:
    """Layout and helpers for one run's artifacts."""

    def __init__(self, root: Path, run_id: str):
        self.root = Path(root) / run_id
        self.run_id = run_id
        for sub in ("datasets", "checkpoints", "metrics"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(self.root / "manifest.jsonl")

    def path(self, rel: str) -> Path:
        return self.root / rel

    def write_config(self, config_dict: dict) -> None:
        existing = self.root / "config.json"
        if existing.exists():
            stored = json.loads(existing.read_text())
            if config_hash(stored) != config_hash(config_dict):
                raise ConfigMismatch(
                    f"run {self.run_id} already exists with a different config"
                )
        else:
            existing.write_text(canonical_json(config_dict) + "\n")

    def read_config(self) -> dict:
        return json.loads((self.root / "config.json").read_text())


def write_metrics_csv(path, rows: list[dict]) -> None:
    """Metrics as CSV with full-precision floats; columns from the first row."""
    if not rows:
        Path(path).write_text("")
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                 for k, v in row.items()}
            )


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            parsed = {}
            for k, v in row.items():
                try:
                    parsed[k] = float(v)
                except (TypeError, ValueError):
                    parsed[k] = v
            out.append(parsed)
        return out
