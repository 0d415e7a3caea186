"""
Report Generator Module
Writes CSV curves, JSON summaries and the append-only result log
"""
import json
import logging
import math
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import AUDIT_DIR, CODE_VERSION, CSV_COLUMNS, RESULTS_DIR

logger = logging.getLogger(__name__)


@dataclass
class ResultRecord:
    """One traceable output of one operation"""

    config_hash: str
    module: str
    operation: str
    inputs: Dict = field(default_factory=dict)
    outputs: Dict = field(default_factory=dict)
    tolerances: Dict = field(default_factory=dict)
    status: str = "ok"
    error: Optional[str] = None
    wall_time: float = 0.0
    code_version: str = CODE_VERSION

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def to_dict(self) -> Dict:
        return asdict(self)


def to_jsonable(value):
    """Convert numpy scalars/arrays and complex numbers into plain JSON values"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


class ReportGenerator:
    """Persist experiment outputs under one results directory"""

    _append_lock = threading.Lock()

    def __init__(self, output_dir: str = None, audit_dir: str = None):
        """Initialize report generator"""
        self.output_dir = Path(output_dir) if output_dir else RESULTS_DIR
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.audit_dir = Path(audit_dir) if audit_dir else AUDIT_DIR
        self.audit_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def stamped_name(stem: str, config_hash: Optional[str], suffix: str) -> str:
        tag = config_hash[:12] if config_hash else datetime.now().strftime("%Y%m%d_%H%M%S")
        return f"{stem}_{tag}.{suffix}"

    def export_to_json(self, results: Dict, output_filename: str = None) -> str:
        """
        Export a summary to JSON

        Returns:
            Path to JSON file
        """
        if not output_filename:
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            output_filename = f"summary_{timestamp}.json"

        output_path = self.output_dir / output_filename

        with open(output_path, "w", encoding="utf-8") as f:
            json.dump(to_jsonable(results), f, indent=2, sort_keys=True, ensure_ascii=False)

        logger.info("Wrote %s", output_path)
        return str(output_path)

    def export_to_csv(self, rows: Sequence[Dict], table: str, output_filename: str = None) -> str:
        """
        Export rows to CSV with the column order registered for the table

        Args:
            rows: one dict per row
            table: key of config.CSV_COLUMNS
            output_filename: optional file name

        Returns:
            Path to CSV file
        """
        columns = CSV_COLUMNS[table]
        frame = pd.DataFrame([to_jsonable(r) for r in rows])
        frame = frame.reindex(columns=columns)
        output_path = self.output_dir / (output_filename or f"{table}.csv")
        frame.to_csv(output_path, index=False, float_format="%.12g")
        logger.info("Wrote %s (%d rows)", output_path, len(frame))
        return str(output_path)

    def export_frame(self, frame: pd.DataFrame, table: str, output_filename: str = None) -> str:
        return self.export_to_csv(frame.to_dict(orient="records"), table, output_filename)

    def append_record(self, record: ResultRecord) -> str:
        """
        Append one record to the JSON Lines result log

        Returns:
            Path to the log file
        """
        log_file = self.audit_dir / f"results_{datetime.now().strftime('%Y%m')}.jsonl"
        line = json.dumps(to_jsonable(record.to_dict()), sort_keys=True)
        with self._append_lock:
            with open(log_file, "a", encoding="utf-8") as f:
                f.write(line + "\n")
        return str(log_file)

    def append_records(self, records: List[ResultRecord]) -> Optional[str]:
        path = None
        for record in records:
            path = self.append_record(record)
        return path

    @staticmethod
    def read_records(log_file: str) -> List[Dict]:
        with open(log_file, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
