"""Case-insensitive lookup of data files.

Dataset files copied between systems often change case ("ArcticLake.CSV"),
so lookups compare names case-insensitively.
"""
from pathlib import Path

ARCTIC_LAKE_FILENAMES = ("arctic_lake.csv", "arcticlake.csv")


def find_file_case_insensitive(directory: str | Path, filename: str) -> Path | None:
    """Return the file in directory whose name equals filename ignoring case, or None."""
    folder = Path(directory)
    if not folder.is_dir():
        return None
    wanted = filename.casefold()
    try:
        entries = sorted(folder.iterdir())
    except OSError:
        return None
    return next((entry for entry in entries if entry.is_file() and entry.name.casefold() == wanted), None)


def find_dataset(directory: str | Path, candidates: tuple[str, ...] = ARCTIC_LAKE_FILENAMES) -> Path | None:
    """First candidate present in directory; candidates are tried in order."""
    for name in candidates:
        found = find_file_case_insensitive(directory, name)
        if found is not None:
            return found
    return None
