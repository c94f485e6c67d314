"""Export helpers for tables, JSON documents and run fingerprints"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import numpy as np
import pandas as pd
from tabulate import tabulate


def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """
    Write a table as CSV so that read_table gives back the same values.

    Args:
        frame: Table to write
        path: Destination file

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator='\n')
    return path


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    """Read a CSV written by write_table (floats parsed exactly)"""
    return pd.read_csv(path, float_precision='round_trip')


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(doc: Mapping[str, Any], path: Union[str, Path]) -> Path:
    """Write a JSON document with sorted keys"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, indent=2, sort_keys=True, default=_to_builtin)
        f.write('\n')
    return path


def render_config(flat: Mapping[str, Any]) -> str:
    """Canonical key=value text, one key per line, sorted"""
    lines = []
    for key in sorted(flat):
        value = flat[key]
        if isinstance(value, bool):
            value = 'true' if value else 'false'
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return '\n'.join(lines) + '\n'


def config_hash(flat: Mapping[str, Any]) -> str:
    """First 12 hex digits of the SHA-256 of the canonical config text"""
    return hashlib.sha256(render_config(flat).encode('utf-8')).hexdigest()[:12]


def format_table(frame: pd.DataFrame, floatfmt: str = '.4f') -> str:
    """Pretty table for terminal output"""
    return tabulate(frame, headers='keys', tablefmt='github', showindex=False, floatfmt=floatfmt)


def summarize(rows: Dict[str, Dict[str, float]]) -> pd.DataFrame:
    """Dict of named metric dicts to a table with a leading 'name' column"""
    frame = pd.DataFrame.from_dict(rows, orient='index')
    frame.index.name = 'name'
    return frame.reset_index()
