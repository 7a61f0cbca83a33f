"""Access to files bundled under ``causalaid/data``."""

from importlib import resources
from pathlib import Path


def data_path(name: str) -> Path:
    path = Path(str(resources.files("causalaid") / "data" / name))
    if not path.exists():
        raise FileNotFoundError(f"no bundled data file named {name!r}")
    return path
