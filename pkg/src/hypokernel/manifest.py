"""Run manifests: config snapshot, seed, version and output digests.

Re-running the embedded config snapshot with the embedded seed must
reproduce every listed output byte for byte; ``compare_outputs`` checks
exactly that.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def digest_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    kind: str
    master_seed: int
    config_text: str
    wall_time_s: float
    outputs: list[dict]  # {"path": relative, "sha256": ..., "bytes": ...}
    tool: str = "hypokernel"
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "version": self.version,
            "kind": self.kind,
            "master_seed": self.master_seed,
            "config_text": self.config_text,
            "wall_time_s": self.wall_time_s,
            "outputs": self.outputs,
        }


def write_manifest(out_dir: Path, kind: str, master_seed: int, config_text: str,
                   wall_time_s: float, files: list[Path]) -> Path:
    out_dir = Path(out_dir)
    outputs = []
    for f in sorted(files):
        f = Path(f)
        outputs.append({
            "path": str(f.relative_to(out_dir)),
            "sha256": digest_file(f),
            "bytes": f.stat().st_size,
        })
    manifest = RunManifest(kind=kind, master_seed=master_seed,
                           config_text=config_text, wall_time_s=wall_time_s,
                           outputs=outputs)
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path: str | Path) -> RunManifest:
    data = json.loads(Path(path).read_text())
    return RunManifest(
        kind=data["kind"], master_seed=data["master_seed"],
        config_text=data["config_text"], wall_time_s=data["wall_time_s"],
        outputs=data["outputs"], tool=data.get("tool", "hypokernel"),
        version=data.get("version", "unknown"),
    )


def compare_outputs(manifest: RunManifest, new_dir: Path) -> list[str]:
    """Relative paths whose digests differ (or are missing) under new_dir."""
    new_dir = Path(new_dir)
    mismatches = []
    for entry in manifest.outputs:
        candidate = new_dir / entry["path"]
        if not candidate.exists():
            mismatches.append(entry["path"] + " (missing)")
        elif digest_file(candidate) != entry["sha256"]:
            mismatches.append(entry["path"])
    return mismatches
