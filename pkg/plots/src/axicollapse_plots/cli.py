"""`plots <run_dir> --out <fig_dir>`: batch generation of the standard figures."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .figures import make_all
from .reader import RunDirectory, RunDirectoryError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots", description="Generate the standard diagnostic figures from a run directory."
    )
    parser.add_argument("run_dir", type=str)
    parser.add_argument("--out", type=str, default=None, help="figure directory (default <run_dir>/figures)")
    args = parser.parse_args(argv)
    out_dir = Path(args.out) if args.out else Path(args.run_dir) / "figures"
    try:
        run = RunDirectory(args.run_dir)
        produced = make_all(run, out_dir)
    except (RunDirectoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest = {"figures": produced, "run": str(Path(args.run_dir))}
    (out_dir / "figures_manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(produced)} figure files to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
