"""Run directories and the files written into them."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import pandas as pd

from .errors import OutputExists
from .numerics import Matrix, save_matrix
from .utils.jsonio import dump_json
from .utils.meta import get_lsp_logger

log = get_lsp_logger(__name__)

PathLike = Union[str, Path]


def fresh_output_dir(path: PathLike) -> Path:
    """Create ``path``. An existing empty directory is fine; anything else is refused."""
    path = Path(path)
    if path.exists():
        if not path.is_dir() or any(path.iterdir()):
            raise OutputExists(f"{path} already exists and is not an empty directory")
    path.mkdir(parents=True, exist_ok=True)
    log.debug("Writing into %s", path)
    return path


def git_blob_sha1(data: bytes) -> str:
    """The id git gives a blob with this content."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def inputs_digest(config: dict[str, Any], files: Iterable[PathLike] = ()) -> str:
    """Blob hash over the canonical config document followed by each input file's bytes."""
    data = dump_json(config).encode()
    for file in files:
        data += Path(file).read_bytes()
    return git_blob_sha1(data)


def write_frame(df: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    df.to_csv(path, index=False)
    return path


def write_json(data: Any, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(dump_json(data), encoding="utf-8")
    return path


def write_weights(directory: PathLike, weights: Sequence[Matrix]) -> Path:
    """One ``layer{i}.csv`` per weight matrix."""
    directory = Path(directory)
    directory.mkdir(exist_ok=True)
    for i, W in enumerate(weights):
        save_matrix(directory / f"layer{i}.csv", W)
    return directory


def write_run_metadata(
    out: PathLike,
    command: str,
    config: dict[str, Any],
    version: str,
    inputs: Sequence[PathLike] = (),
) -> Path:
    """``run.json``: the command, its config echo, the package version and the input hash."""
    meta = {
        "command": command,
        "config": config,
        "version": version,
        "inputs_sha1": inputs_digest(config, inputs),
        "input_files": [Path(p).name for p in inputs],
    }
    return write_json(meta, Path(out) / "run.json")
