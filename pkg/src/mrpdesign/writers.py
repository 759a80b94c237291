"""Reproducible output: every file written here carries the package version, the
seed and a hash of the resolved configuration."""
import hashlib
import json
import logging
import math
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd
import pyarrow as pa  # type: ignore
import pyarrow.parquet as pq  # type: ignore

from .data import METADATA_KEY

logger = logging.getLogger(__name__)


def package_version() -> str:
    try:
        return version("mrpdesign")
    except PackageNotFoundError:
        return "0+unknown"


def jsonable(value: Any) -> Any:
    """Recursively converts numpy and path objects to JSON-native types.

    Non-finite floats become `None` so that the output is strict JSON.
    """
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        return jsonable(value.item())
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def config_hash(config: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical (sorted-key) JSON rendering of `config`"""
    canonical = json.dumps(jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_metadata(seed: Optional[int], config: Mapping[str, Any]) -> Dict[str, Any]:
    """Reproducibility metadata embedded in every output file"""
    return {
        "version": package_version(),
        "seed": seed,
        "config_hash": config_hash(config),
    }


def _ensure_parent(path: Union[str, Path]) -> Path:
    path = Path(path)
    if not path.parent.is_dir():
        path.parent.mkdir(parents=True)
        logger.info(f"Created directory at {path.parent.absolute()}")
    return path


def write_json(
    document: Mapping[str, Any],
    path: Union[str, Path],
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Writes `document` as sorted-key JSON, with `metadata` under "metadata".

    Identical inputs give byte-identical files.
    """
    path = _ensure_parent(path)
    doc = dict(document)
    if metadata is not None:
        doc["metadata"] = dict(metadata)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(jsonable(doc), f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv_frame(
    df: pd.DataFrame,
    path: Union[str, Path],
    metadata: Optional[Mapping[str, Any]] = None,
    index: bool = False,
) -> Path:
    """Writes a DataFrame as CSV, preceded by one `# key: value` line per metadata
    entry.

    Floats are written with 17 significant digits so that a reload reproduces them
    exactly.
    """
    path = _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if metadata:
            for key in sorted(metadata):
                f.write(f"# {key}: {metadata[key]}\n")
        df.to_csv(f, index=index, float_format="%.17g", lineterminator="\n")
    return path


def _df_to_pyarrow_with_metadata(
    df: pd.DataFrame, metadata: Mapping[str, Any]
) -> pa.Table:
    """Converts DataFrame to pyarrow Table so that metadata can be added.

    Args:
        df: pandas DataFrame
        metadata: reproducibility metadata from :func:`build_metadata`
    Returns:
        pyarrow Table with schema and `mrpdesign` metadata encoded as a b-string
    """
    table = pa.Table.from_pandas(df)
    pandas_metadata = table.schema.metadata or {}
    own_metadata = {
        METADATA_KEY.encode(): json.dumps(jsonable(metadata), sort_keys=True).encode()
    }
    table = table.replace_schema_metadata({**pandas_metadata, **own_metadata})
    return table


def write_parquet(
    df: pd.DataFrame, path: Union[str, Path], metadata: Mapping[str, Any]
) -> Path:
    """Writes a DataFrame to parquet with `metadata` in the schema.

    Note that parquet metadata needs to be UTF-8 encoded.
    """
    path = _ensure_parent(path)
    pq.write_table(_df_to_pyarrow_with_metadata(df, metadata), path)
    return path


def read_parquet_metadata(path: Union[str, Path]) -> Dict[str, Any]:
    """Reads back the metadata written by :func:`write_parquet`"""
    byte_metadata = pq.read_metadata(path).metadata
    return json.loads(byte_metadata[METADATA_KEY.encode()].decode())
