"""
Output formatters for run directories

CSV files are RFC-4180 with CRLF line endings and full float precision;
JSON is key-sorted and never carries non-finite numbers.
"""
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .buc_agent import EPISODE_COLUMNS, RunRecord
from .config import TEMPLATES_DIR
from .exceptions import OutputError
from .logging_config import get_logger

logger = get_logger(__name__)

CSV_SCHEMA_VERSION = 1
CSV_LINE_TERMINATOR = "\r\n"
TRAJECTORY_COLUMNS = ['episode', 'step', 'state', 'action', 'reward', 'next_state']
SUMMARY_SCHEMA_PATH = TEMPLATES_DIR / 'summary_schema.json'


def _jsonable(value: Any) -> Any:
    """Recursively replace numpy scalars and non-finite floats"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


class OutputFormatter:
    """
    Base output formatter class
    """

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        """
        Initialize OutputFormatter

        Args:
            config: Output configuration
        """
        self.config = config or {}

    def format_output(self, data: Dict[str, Any]) -> str:
        """
        Format output data

        Args:
            data: Data to format

        Returns:
            str: Formatted output
        """
        return json.dumps(_jsonable(data), indent=2, sort_keys=True, allow_nan=False)

    def write_text(self, text: str, path: Union[str, Path], output_format: str) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
        except OSError as e:
            raise OutputError(output_format, str(path), e)
        logger.debug(f"Wrote {output_format} to {path}")
        return path


class CSVFormatter(OutputFormatter):
    """
    CSV output formatter backed by pandas
    """

    def frame(self, rows: Iterable[Dict[str, Any]], columns: Sequence[str]) -> pd.DataFrame:
        return pd.DataFrame(list(rows), columns=list(columns))

    def format_frame(self, frame: pd.DataFrame) -> str:
        return frame.to_csv(index=False, lineterminator=CSV_LINE_TERMINATOR)

    def write_frame(self, frame: pd.DataFrame, path: Union[str, Path]) -> Path:
        return self.write_text(self.format_frame(frame), path, 'csv')

    def write_rows(self, rows: Iterable[Dict[str, Any]], columns: Sequence[str],
                   path: Union[str, Path]) -> Path:
        return self.write_frame(self.frame(rows, columns), path)

    def episode_frame(self, record: RunRecord) -> pd.DataFrame:
        return self.frame(record.episode_rows(), EPISODE_COLUMNS)

    def write_episodes(self, record: RunRecord, path: Union[str, Path]) -> Path:
        """One row per episode"""
        return self.write_frame(self.episode_frame(record), path)

    def write_trajectory(self, record: RunRecord, path: Union[str, Path]) -> Path:
        """One row per transition"""
        rows = []
        for n in range(record.episodes):
            for h in range(record.horizon):
                rows.append({
                    'episode': n + 1,
                    'step': h + 1,
                    'state': int(record.states[n, h]),
                    'action': int(record.actions[n, h]),
                    'reward': float(record.rewards[n, h]),
                    'next_state': int(record.states[n, h + 1])
                })
        return self.write_rows(rows, TRAJECTORY_COLUMNS, path)

    def read_frame(self, path: Union[str, Path]) -> pd.DataFrame:
        try:
            return pd.read_csv(path)
        except (OSError, ValueError) as e:
            raise OutputError('csv', str(path), e)


class JSONFormatter(OutputFormatter):
    """
    JSON output formatter for run summaries
    """

    def __init__(self, config: Optional[Dict[str, Any]] = None, schema_path: Union[str, Path] = SUMMARY_SCHEMA_PATH):
        super().__init__(config)
        self.schema_path = Path(schema_path)
        self._schema: Optional[Dict[str, Any]] = None

    @property
    def schema(self) -> Dict[str, Any]:
        if self._schema is None:
            try:
                self._schema = json.loads(self.schema_path.read_text(encoding='utf-8'))
            except (OSError, ValueError) as e:
                raise OutputError('json schema', str(self.schema_path), e)
        return self._schema

    def missing_keys(self, summary: Dict[str, Any]) -> List[str]:
        """Required top-level and family keys absent from a summary"""
        missing = [key for key in self.schema.get('required', []) if key not in summary]
        family_required = self.schema.get('properties', {}).get('family', {}).get('required', [])
        family = summary.get('family', {})
        missing += [f'family.{key}' for key in family_required if key not in family]
        return missing

    def format_summary(self, summary: Dict[str, Any]) -> str:
        missing = self.missing_keys(summary)
        if missing:
            raise OutputError('json', 'summary.json', ValueError(f"missing keys: {', '.join(missing)}"))
        return self.format_output(summary) + '\n'

    def write_summary(self, summary: Dict[str, Any], path: Union[str, Path]) -> Path:
        return self.write_text(self.format_summary(summary), path, 'json')

    def read(self, path: Union[str, Path]) -> Dict[str, Any]:
        try:
            return json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, ValueError) as e:
            raise OutputError('json', str(path), e)


class TextTableFormatter(OutputFormatter):
    """
    Aligned plain-text tables for the terminal
    """

    def format_frame(self, frame: pd.DataFrame, float_digits: int = 4) -> str:
        if frame.empty:
            return '(no rows)'
        return frame.to_string(index=False, float_format=lambda x: f"{x:.{float_digits}f}")
