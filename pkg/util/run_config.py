import os
from pathlib import Path
import logging

from dotenv import dotenv_values, load_dotenv

from util.errors import ConfigError
from util.path_utils import ARCTIC_LAKE_FILENAMES, find_dataset

logger = logging.getLogger(__name__)

ENV_SEED = "SARDIR_SEED"
ENV_DATA_DIR = "SARDIR_DATA_DIR"
DEFAULT_DATA_DIR = Path(__file__).resolve().parent.parent / "data" / "arctic_lake"


def load_environment() -> None:
    """Read .env (if present) into os.environ without overriding existing values."""
    load_dotenv()


def load_flat_config(path: str | Path) -> dict[str, str | None]:
    """Read a KEY=value file (one pair per line, '#' comments)."""
    path = Path(path)
    if not path.is_file():
        logger.error("Config file not found: %s", path)
        raise ConfigError(f"Config file not found: {path}")
    values = dotenv_values(path)
    logger.info(f"Loaded {len(values)} config keys from {path}")
    return dict(values)


def resolve_seed(cli_seed: int | None) -> int | None:
    """--seed wins; otherwise SARDIR_SEED; otherwise None."""
    if cli_seed is not None:
        return cli_seed
    raw = os.getenv(ENV_SEED, "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{ENV_SEED} must be an integer, got {raw!r}") from exc


def data_directory() -> Path:
    return Path(os.getenv(ENV_DATA_DIR, "") or DEFAULT_DATA_DIR)


def find_arctic_lake() -> Path | None:
    return find_dataset(data_directory(), ARCTIC_LAKE_FILENAMES)


class RunOutput:
    """Output location for one command run.

    `out` names the primary artifact; sibling artifacts share its stem.
    """

    def __init__(self, out: str | Path, default_suffix: str = ".json"):
        out = Path(out)
        self.primary = out if out.suffix else out.with_suffix(default_suffix)
        self.folder = self.primary.parent
        self.stem = self.primary.stem
        self.folder.mkdir(parents=True, exist_ok=True)
        logger.info(f"Writing outputs to {self.folder} (stem {self.stem})")

    def artifact(self, suffix: str, tag: str = "") -> Path:
        name = f"{self.stem}_{tag}{suffix}" if tag else f"{self.stem}{suffix}"
        return self.folder / name
