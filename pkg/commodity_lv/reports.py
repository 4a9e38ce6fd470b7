"""
Artifact writers and readers

Every CSV starts with one comment line

    # config_hash=<sha256> seed=<int> [generated=<UTC ISO timestamp>]

and every JSON carries the same fields under "meta". Timestamps are left out
in deterministic mode so reruns are byte-identical.
"""
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import pandas as pd
from loguru import logger

from commodity_lv.exceptions import ArtifactError
from commodity_lv.market_data import CSV_FLOAT_FORMAT

PathLike = Union[str, Path]


def _meta(config_hash: str, seed: int, deterministic: bool) -> Dict[str, Any]:
    meta: Dict[str, Any] = {"config_hash": config_hash, "seed": int(seed)}
    if not deterministic:
        meta["generated"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return meta


def header_line(config_hash: str, seed: int, deterministic: bool = False) -> str:
    meta = _meta(config_hash, seed, deterministic)
    return "# " + " ".join(f"{k}={v}" for k, v in meta.items())


def write_csv(frame: pd.DataFrame, path: PathLike, config_hash: str, seed: int,
              deterministic: bool = False) -> Path:
    """CSV with the provenance header line"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header_line(config_hash, seed, deterministic) + "\n")
        frame.to_csv(fh, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {path} ({len(frame)} rows)")
    return path


def write_json(payload: Dict[str, Any], path: PathLike, config_hash: str, seed: int,
               deterministic: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"meta": _meta(config_hash, seed, deterministic), **payload}
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.debug(f"Wrote {path}")
    return path


def read_header(path: PathLike) -> Dict[str, str]:
    """Key/value pairs of the provenance header"""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"artifact not found: {path}")
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first.startswith("#"):
        raise ArtifactError(f"{path.name} has no provenance header")
    pairs = (item.partition("=") for item in first.lstrip("# ").split())
    return {k: v for k, _, v in pairs}


def read_csv(path: PathLike) -> Tuple[Dict[str, str], pd.DataFrame]:
    """(header, table) of a CSV artifact"""
    header = read_header(path)
    return header, pd.read_csv(path, comment="#", float_precision="round_trip")


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"artifact not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactError(f"cannot parse {path.name}: {e}") from e
