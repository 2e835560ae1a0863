"""
Result Bundles

In-memory container for one run's tables and summary values, plus the writers
that put them on disk. Every emitted file carries the provenance block
(config hash, seed, tool version, RNG algorithm, command). No timestamps are
written, so a fixed config and seed give byte-identical files.

JSON numbers use Python's shortest round-trip float repr, so a bundle read back
from disk reproduces the in-memory tables exactly. Files are strict JSON: NaN
is written as null and infinities as the strings "Infinity" / "-Infinity".
"""

import hashlib
import io
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .fileio import FLOAT_FORMAT, atomic_write_text
from .monitoring import RecurrenceSeries

logger = logging.getLogger(__name__)

BUNDLE_FORMAT_VERSION = 1
INFINITY_TOKENS = {True: "Infinity", False: "-Infinity"}


class ResultsError(Exception):
    """Custom exception for result serialization errors"""
    pass


class Provenance(BaseModel):
    """Where a result came from"""

    config_hash: str = Field(description="SHA-256 of the canonical run configuration")
    seed: Optional[int] = None
    tool_version: str
    rng_algorithm: str = "PCG64"
    command: str

    def header_lines(self) -> List[str]:
        return [f"{key}={'' if value is None else value}" for key, value in self.model_dump().items()]


def config_hash(config: Mapping[str, Any]) -> str:
    """SHA-256 of the configuration's canonical JSON"""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _jsonable(value: Any) -> Any:
    """Plain JSON values; NaN becomes null and infinities become 'Infinity' / '-Infinity'"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        if math.isnan(value):
            return None
        return INFINITY_TOKENS[value > 0]
    return value


def _from_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _from_jsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_from_jsonable(v) for v in value]
    if isinstance(value, str) and value in INFINITY_TOKENS.values():
        return float(value)
    return value


def frame_to_json(frame: pd.DataFrame) -> Dict[str, Any]:
    """Column-oriented encoding that keeps dtypes and the index"""
    return {
        'index_name': frame.index.name,
        'index': _jsonable(frame.index.tolist()),
        'columns': list(frame.columns),
        'dtypes': {col: str(frame[col].dtype) for col in frame.columns},
        'data': {col: _jsonable(frame[col].tolist()) for col in frame.columns},
    }


def frame_from_json(payload: Mapping[str, Any]) -> pd.DataFrame:
    """Inverse of frame_to_json; null cells of float columns come back as NaN"""
    try:
        frame = pd.DataFrame(
            {col: payload['data'][col] for col in payload['columns']},
            index=pd.Index(payload['index'], name=payload['index_name']),
            columns=payload['columns'],
        )
        for col, dtype in payload['dtypes'].items():
            frame[col] = frame[col].astype(dtype)
    except (KeyError, TypeError, ValueError) as e:
        raise ResultsError(f"Malformed table payload: {e}") from e
    return frame


class ResultBundle(BaseModel):
    """
    Tables and summary values of one CLI run.

    Tables are keyed by name ('recurrence', 'classical', 'distribution', ...);
    summary holds scalar headline numbers such as P_continual at the horizon.
    """

    subcommand: str
    provenance: Provenance
    tables: Dict[str, pd.DataFrame] = Field(default_factory=dict)
    summary: Dict[str, Any] = Field(default_factory=dict)
    files: List[str] = Field(default_factory=list, description="Files written for this bundle")

    model_config = ConfigDict(arbitrary_types_allowed=True)

    def table(self, name: str) -> pd.DataFrame:
        if name not in self.tables:
            raise ResultsError(f"Bundle has no table '{name}' (available: {sorted(self.tables)})")
        return self.tables[name]

    def recurrence_series(self) -> RecurrenceSeries:
        """Rebuild the recurrence series stored under 'recurrence'"""
        return RecurrenceSeries.from_frame(self.table('recurrence'))

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            'format_version': BUNDLE_FORMAT_VERSION,
            'subcommand': self.subcommand,
            'provenance': self.provenance.model_dump(),
            'summary': _jsonable(self.summary),
            'tables': {name: _jsonable(frame_to_json(frame)) for name, frame in self.tables.items()},
        }

    @classmethod
    def from_json_dict(cls, payload: Mapping[str, Any]) -> "ResultBundle":
        if payload.get('format_version') != BUNDLE_FORMAT_VERSION:
            raise ResultsError(f"Unsupported bundle format version {payload.get('format_version')}")
        return cls(
            subcommand=payload['subcommand'],
            provenance=Provenance(**payload['provenance']),
            summary=_from_jsonable(dict(payload.get('summary', {}))),
            tables={name: frame_from_json(table) for name, table in payload.get('tables', {}).items()},
        )


def write_bundle_json(bundle: ResultBundle, path: Union[str, Path]) -> Path:
    """Write the bundle as indented JSON"""
    text = json.dumps(bundle.to_json_dict(), indent=2, allow_nan=False) + "\n"
    target = atomic_write_text(path, text)
    logger.info(f"Wrote result bundle {target}")
    return target


def load_bundle(path: Union[str, Path]) -> ResultBundle:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ResultsError(f"Cannot read result bundle {path}: {e}") from e
    return ResultBundle.from_json_dict(payload)


def write_table_csv(
    frame: pd.DataFrame,
    path: Union[str, Path],
    provenance: Provenance,
    index: bool = True
) -> Path:
    """CSV with '# key=value' provenance header lines and 17 significant digits"""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    header = "".join(f"# {line}\n" for line in provenance.header_lines())
    target = atomic_write_text(path, header + buffer.getvalue())
    logger.info(f"Wrote table {target}")
    return target


def read_table_csv(path: Union[str, Path], index_col: Optional[str] = 't') -> pd.DataFrame:
    return pd.read_csv(path, comment="#", index_col=index_col, float_precision="round_trip")
