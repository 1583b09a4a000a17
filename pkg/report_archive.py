#!/usr/bin/env python3
"""
Report Archive Manager
Writes experiment reports (per-instance CSV + JSON summary), curves and plain
tables into one output directory and keeps an index of what is stored there
"""

import csv
import io
import os
from typing import Dict, List, Optional, Sequence
import logging

from tabulate import tabulate

from shared_utils import atomic_write_text, load_json_file, save_json_file

logger = logging.getLogger(__name__)

INDEX_FILE = 'index.json'


def rows_to_csv(rows: Sequence[Dict], columns: Optional[Sequence[str]] = None) -> str:
    """CSV text with ',' separators, '.' decimals and LF line endings"""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator='\n', extrasaction='ignore')
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


class ReportArchiveManager:
    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.index_file = os.path.join(out_dir, INDEX_FILE)
        self._initialize_index()

    def _initialize_index(self):
        """Create the output directory and an empty index if needed"""
        os.makedirs(self.out_dir, exist_ok=True)
        if not os.path.exists(self.index_file):
            save_json_file(self.index_file, {"reports": {}})
            logger.debug(f"Created report index: {self.index_file}")

    def load_index(self) -> Dict:
        try:
            return load_json_file(self.index_file)
        except (OSError, ValueError) as e:
            logger.warning(f"Could not read report index {self.index_file}: {e}")
            return {"reports": {}}

    def _register(self, name: str, kind: str, files: List[str], summary: Dict):
        index = self.load_index()
        index["reports"][name] = {"kind": kind, "files": [os.path.basename(f) for f in files],
                                  "summary": summary}
        save_json_file(self.index_file, index)

    def path_for(self, name: str, suffix: str) -> str:
        return os.path.join(self.out_dir, f"{name}{suffix}")

    def write_report(self, report) -> List[str]:
        """Per-instance CSV plus JSON summary for an ExperimentReport"""
        csv_path = self.path_for(report.name, '.csv')
        json_path = self.path_for(report.name, '.json')
        atomic_write_text(csv_path, rows_to_csv(
            [r.to_row() for r in report.per_instance],
            ["instance_id", "n_users", "model_rate", "wmmse_rate", "best_rate", "ratio"]))
        save_json_file(json_path, {"name": report.name, "summary": report.summary})
        self._register(report.name, "report", [csv_path, json_path], report.summary)
        logger.info(f"Wrote report {report.name}: mean ratio {report.summary.get('mean_ratio')}")
        return [csv_path, json_path]

    def write_curve(self, curve) -> List[str]:
        """(x, mean, std) CSV plus JSON summary for a CurveReport"""
        csv_path = self.path_for(curve.name, '.csv')
        json_path = self.path_for(curve.name, '.json')
        atomic_write_text(csv_path, rows_to_csv(curve.rows(), ["x", "mean", "std"]))
        save_json_file(json_path, {"name": curve.name, "x_label": curve.x_label, "summary": curve.summary})
        self._register(curve.name, "curve", [csv_path, json_path], curve.summary)
        logger.info(f"Wrote curve {curve.name} with {len(curve.points)} points")
        return [csv_path, json_path]

    def write_table(self, name: str, rows: Sequence[Dict], summary: Optional[Dict] = None,
                    columns: Optional[Sequence[str]] = None) -> List[str]:
        """Any list of flat rows, e.g. baseline rates or sweep results"""
        csv_path = self.path_for(name, '.csv')
        json_path = self.path_for(name, '.json')
        atomic_write_text(csv_path, rows_to_csv(rows, columns))
        save_json_file(json_path, {"name": name, "summary": summary or {}})
        self._register(name, "table", [csv_path, json_path], summary or {})
        logger.info(f"Wrote table {name} with {len(rows)} rows")
        return [csv_path, json_path]

    def load_summary(self, name: str) -> Dict:
        path = self.path_for(name, '.json')
        if not os.path.exists(path):
            raise FileNotFoundError(f"No stored summary for '{name}' in {self.out_dir}")
        return load_json_file(path)["summary"]

    def list_reports(self) -> List[str]:
        return sorted(self.load_index()["reports"])

    def get_archive_stats(self) -> Dict:
        """Counts by kind plus total bytes on disk"""
        reports = self.load_index()["reports"]
        by_kind = {}
        total_bytes = 0
        for entry in reports.values():
            by_kind[entry["kind"]] = by_kind.get(entry["kind"], 0) + 1
            for file_name in entry["files"]:
                path = os.path.join(self.out_dir, file_name)
                if os.path.exists(path):
                    total_bytes += os.path.getsize(path)
        return {"total": len(reports), "by_kind": by_kind, "total_bytes": total_bytes}

    def summary_table(self, names: Optional[Sequence[str]] = None) -> str:
        """Plain-text table of stored summaries (ratio reports first, then curves and tables)"""
        reports = self.load_index()["reports"]
        rows = []
        for name in (names if names is not None else sorted(reports)):
            entry = reports.get(name)
            if entry is None:
                continue
            summary = entry["summary"]
            rows.append([name, entry["kind"], summary.get("mean_ratio", ""), summary.get("std", ""),
                         summary.get("n_users", ""), summary.get("config_digest", "")])
        rows.sort(key=lambda r: (r[1] != "report", r[0]))
        return tabulate(rows, headers=["name", "kind", "mean_ratio", "std", "n_users", "digest"],
                        floatfmt=".4f")
