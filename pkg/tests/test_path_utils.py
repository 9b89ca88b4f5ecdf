"""Tests for case-insensitive dataset lookup."""
from pathlib import Path

from util.path_utils import ARCTIC_LAKE_FILENAMES, find_dataset, find_file_case_insensitive


def test_exact_and_case_insensitive_match(tmp_path: Path) -> None:
    (tmp_path / "ArcticLake.CSV").write_text("sand,silt,clay,depth\n", encoding="utf-8")

    assert find_file_case_insensitive(tmp_path, "arcticlake.csv") == tmp_path / "ArcticLake.CSV"
    assert find_file_case_insensitive(tmp_path, "missing.csv") is None


def test_missing_directory(tmp_path: Path) -> None:
    assert find_file_case_insensitive(tmp_path / "nope", "a.csv") is None
    assert find_dataset(tmp_path / "nope") is None


def test_candidates_tried_in_order(tmp_path: Path) -> None:
    (tmp_path / "arcticlake.csv").write_text("x\n", encoding="utf-8")
    (tmp_path / "Arctic_Lake.csv").write_text("x\n", encoding="utf-8")

    assert ARCTIC_LAKE_FILENAMES[0] == "arctic_lake.csv"
    assert find_dataset(tmp_path) == tmp_path / "Arctic_Lake.csv"


def test_directories_are_not_files(tmp_path: Path) -> None:
    (tmp_path / "arctic_lake.csv").mkdir()

    assert find_dataset(tmp_path) is None
