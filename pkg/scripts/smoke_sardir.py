#!/usr/bin/env python3
"""
Headless smoke checks for the sardir command line.

Usage (from repo root, with .venv active):
  python scripts/smoke_sardir.py
  python scripts/smoke_sardir.py --quick   # sample-data fits only, no synthetic study

Writes everything under a temporary directory.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

# Repo root on sys.path when invoked as scripts/smoke_sardir.py
_REPO_ROOT = Path(__file__).resolve().parent.parent
if str(_REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(_REPO_ROOT))

SAMPLE = _REPO_ROOT / "data" / "sample"


def _run(argv: list[str]) -> int:
    from app_sardir import main

    return main(argv)


def _check_sample_fits(tmpdir: Path) -> None:
    base = ["--features", str(SAMPLE / "features.csv"), "--labels", str(SAMPLE / "labels.csv")]
    code = _run(["fit", *base, "--out", str(tmpdir / "fit.json"), "--seed", "1"])
    if code not in (0, 4):
        raise RuntimeError(f"non-spatial fit exited {code}")
    payload = json.loads((tmpdir / "fit.json").read_text(encoding="utf-8"))
    if payload["schema_version"] != 1 or payload["params"]["rho"] is not None:
        raise RuntimeError("unexpected non-spatial FitResult JSON")
    print("fit (non-spatial): ok")

    code = _run([
        "fit", *base, "--spatial", "--weights", "knn:3", "--coords", str(SAMPLE / "coords.csv"),
        "--out", str(tmpdir / "fit_sar.json"),
    ])
    if code not in (0, 4):
        raise RuntimeError(f"spatial fit exited {code}")
    rho = json.loads((tmpdir / "fit_sar.json").read_text(encoding="utf-8"))["params"]["rho"]
    if not -1.0 <= rho <= 1.0:
        raise RuntimeError(f"rho {rho} outside [-1, 1]")
    print("fit (spatial): ok")

    if _run(["loocv", *base, "--out", str(tmpdir / "loocv.json")]) != 0:
        raise RuntimeError("loocv failed")
    print("loocv: ok")


def _check_synthetic(tmpdir: Path) -> None:
    code = _run([
        "replicate", "--n", "60", "--k", "3", "--reps", "2", "--rho", "0.5", "--test-size", "100",
        "--seed", "7", "--quiet", "--out", str(tmpdir / "rep.json"),
    ])
    if code != 0:
        raise RuntimeError(f"replicate exited {code}")
    print("replicate: ok")


def main() -> int:
    parser = argparse.ArgumentParser(description="Headless sardir smoke checks")
    parser.add_argument(
        "--quick",
        action="store_true",
        help="Only fit the shipped sample (no synthetic replication)",
    )
    args = parser.parse_args()

    tmpdir = Path(tempfile.mkdtemp(prefix="sardir_smoke_"))
    _check_sample_fits(tmpdir)
    if not args.quick:
        _check_synthetic(tmpdir)

    print("SMOKE PASS")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
