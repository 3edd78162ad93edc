import csv
import json
import logging
import os
import uuid
from threading import Lock
from typing import Iterable, List, Optional, Sequence

from config import OUTPUT_DIR

logger = logging.getLogger(__name__)


class ResultStorage:
    """File-based storage for run outputs: CSV curves, JSON reports and a manifest index"""

    def __init__(self, data_dir: Optional[str] = None):
        self.data_dir = data_dir or OUTPUT_DIR
        self.index_file = os.path.join(self.data_dir, "runs.json")
        self.file_lock = Lock()
        self._ensure_data_dir()

    def _ensure_data_dir(self):
        """Create the results directory and an empty run index if missing"""
        os.makedirs(self.data_dir, exist_ok=True)
        if not os.path.exists(self.index_file):
            self._write_json(self.index_file, {})

    def _read_json(self, filepath: str) -> dict:
        try:
            with open(filepath, "r", encoding="utf-8") as f:
                return json.load(f)
        except (FileNotFoundError, json.JSONDecodeError):
            return {}

    def _write_json(self, filepath: str, data):
        with open(filepath, "w", encoding="utf-8", newline="\n") as f:
            json.dump(data, f, indent=2, default=str)
            f.write("\n")

    def new_run_id(self) -> str:
        return str(uuid.uuid4())[:8]

    def run_dir(self, run_id: str) -> str:
        path = os.path.join(self.data_dir, run_id)
        os.makedirs(path, exist_ok=True)
        return path

    def write_json(self, run_id: str, name: str, data) -> str:
        path = os.path.join(self.run_dir(run_id), name)
        with self.file_lock:
            self._write_json(path, data)
        logger.debug(f"Wrote {path}")
        return path

    def write_rows_csv(self, run_id: str, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        path = os.path.join(self.run_dir(run_id), name)
        with self.file_lock:
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_cell(v) for v in row])
        logger.debug(f"Wrote {path}")
        return path

    def write_curve_csv(self, run_id: str, name: str, t, values, se, n: int,
                        header: Sequence[str] = ("t", "value", "se", "n")) -> str:
        """Curve as `t,value,se,n` rows (the header can be renamed, the layout stays)"""
        return self.write_rows_csv(run_id, name, header, ((a, b, c, n) for a, b, c in zip(t, values, se)))

    def save_manifest(self, manifest: dict) -> str:
        run_id = manifest["run_id"]
        path = self.write_json(run_id, "manifest.json", manifest)
        with self.file_lock:
            index = self._read_json(self.index_file)
            index[run_id] = {
                "run_id": run_id,
                "pipeline": manifest.get("pipeline"),
                "created_at": manifest.get("created_at"),
                "passed": manifest.get("passed"),
                "config_hash": manifest.get("config_hash"),
            }
            self._write_json(self.index_file, index)
        logger.info(f"Saved manifest for run {run_id} (passed={manifest.get('passed')})")
        return path

    def get_manifest(self, run_id: str) -> Optional[dict]:
        index = self._read_json(self.index_file)
        if run_id not in index:
            return None
        return self._read_json(os.path.join(self.data_dir, run_id, "manifest.json")) or None

    def list_manifests(self) -> List[dict]:
        index = self._read_json(self.index_file)
        return sorted(index.values(), key=lambda row: row.get("created_at") or "")


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return value
