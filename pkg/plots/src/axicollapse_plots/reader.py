"""Run-directory access: manifest validation and lazy CSV tables."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = ["RunDirectory", "RunDirectoryError"]


class RunDirectoryError(RuntimeError):
    pass


class RunDirectory:
    """A completed run: parsed manifest plus lazily loaded CSV tables."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        manifest_path = self.path / "manifest.json"
        if not manifest_path.exists():
            raise RunDirectoryError(f"no manifest.json in {self.path}")
        self.manifest = json.loads(manifest_path.read_text())
        self._tables: dict[str, np.ndarray] = {}
        missing = [name for name in self.manifest.get("files", {}) if not (self.path / name).exists()]
        if missing:
            raise RunDirectoryError(f"manifest references missing files: {missing}")

    def has(self, name: str) -> bool:
        return name in self.manifest.get("files", {})

    def columns(self, name: str) -> list[str]:
        return list(self.manifest["files"][name]["columns"])

    def table(self, name: str) -> np.ndarray:
        """(rows, cols) float array of a named CSV."""
        got = self._tables.get(name)
        if got is None:
            if not self.has(name):
                raise RunDirectoryError(f"{name} is not indexed by the manifest")
            got = np.loadtxt(self.path / name, delimiter=",", skiprows=1, ndmin=2)
            self._tables[name] = got
        return got

    def column(self, name: str, col: str) -> np.ndarray:
        cols = self.columns(name)
        if col not in cols:
            raise RunDirectoryError(f"{name} has no column {col!r} (has {cols})")
        return self.table(name)[:, cols.index(col)]

    def angular_shape(self) -> tuple[int, int]:
        cfg = self.manifest["config"]
        return int(cfg["n_t"]), int(cfg["n_theta"])

    def slice_grid(self, name: str):
        """(t_nodes, theta_nodes, value-grid) for a per-angle table."""
        n_t, n_theta = self.angular_shape()
        t = self.column(name, "t").reshape(n_t, n_theta)
        th = self.column(name, "theta").reshape(n_t, n_theta)
        return t[:, 0], th[0, :], None
