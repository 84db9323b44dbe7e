import json
import logging
import math
import os
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _finite(value):
    """Replace NaN and infinities with None so the JSON stays standard."""
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_finite(v) for v in value.tolist()]
    if isinstance(value, (float, np.floating)) and not math.isfinite(value):
        return None
    return value


class DataProcessor:
    def __init__(self):
        """
        Initialize the data processor.
        """
        self.logger = logging.getLogger(__name__)

    def header_line(self, config: Dict[str, Any]) -> str:
        """
        The comment line every output file starts with.

        Args:
            config (dict): Fully resolved configuration, seed included

        Returns:
            str: "# " followed by the configuration as sorted, compact JSON
        """
        return "# " + json.dumps(config, sort_keys=True, separators=(",", ":"), default=_json_default)

    def convert_to_dataframe(self, data):
        """
        Convert rows to a pandas DataFrame.

        Args:
            data: A DataFrame, a list of dicts, or a dict of equal-length lists

        Returns:
            pandas.DataFrame: The converted data
        """
        try:
            if isinstance(data, pd.DataFrame):
                return data
            if isinstance(data, list) and all(isinstance(item, dict) for item in data):
                return pd.DataFrame(data)
            if isinstance(data, dict) and all(isinstance(item, (list, np.ndarray)) for item in data.values()):
                return pd.DataFrame(data)
            raise ValueError("Data format not supported for conversion to DataFrame")
        except Exception as e:
            self.logger.error(f"Error converting data to DataFrame: {str(e)}")
            raise

    def resolve_path(self, path: str) -> str:
        """Create the parent directory of `path` if needed."""
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        return path

    def write_table(self, data, path: str, config: Dict[str, Any], fmt: str = "csv") -> str:
        """
        Write tabular results as CSV (with the config comment line) or as a
        JSON mirror {"config": ..., "rows": [...]}.

        Floats use shortest round-trip formatting so a fixed seed gives
        byte-identical files.

        Returns:
            str: The path written
        """
        try:
            df = self.convert_to_dataframe(data)
            path = self.resolve_path(path)
            if fmt == "csv":
                body = df.to_csv(index=False, float_format=lambda v: repr(float(v)), lineterminator="\n")
                text = self.header_line(config) + "\n" + body
            elif fmt == "json":
                text = self._json_text({"config": config, "rows": df.to_dict(orient="records")})
            else:
                raise ValueError(f"Unsupported output format: {fmt}")
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            self.logger.info(f"Wrote {len(df)} rows to {path}")
            return path
        except Exception as e:
            self.logger.error(f"Error writing table {path}: {str(e)}")
            raise

    def write_document(self, payload: Dict[str, Any], path: str, config: Dict[str, Any]) -> str:
        """Write a nested JSON document with the resolved configuration embedded."""
        try:
            path = self.resolve_path(path)
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(self._json_text({"config": config, **payload}))
            self.logger.info(f"Wrote {path}")
            return path
        except Exception as e:
            self.logger.error(f"Error writing document {path}: {str(e)}")
            raise

    def read_table(self, path: str) -> pd.DataFrame:
        """Read a CSV written by write_table, skipping the comment line."""
        return pd.read_csv(path, comment="#", float_precision="round_trip")

    def read_header(self, path: str) -> Optional[Dict[str, Any]]:
        with open(path, "r", encoding="utf-8") as f:
            first = f.readline()
        if not first.startswith("# "):
            return None
        return json.loads(first[2:])

    def _json_text(self, payload: Dict[str, Any]) -> str:
        return json.dumps(_finite(payload), sort_keys=True, indent=2, default=_json_default, allow_nan=False) + "\n"
