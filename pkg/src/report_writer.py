"""
Report Writer

CSV tables (fixed headers, LF line endings) and the per-run JSON summary.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

logger = logging.getLogger(__name__)

STORAGE_HEADER = ["n_children", "conventional_bytes", "mime_bytes", "ratio", "exceeds_n_times"]
ENERGY_HEADER = ["layer", "mode", "case", "E_DRAM", "E_cache", "E_reg", "E_MAC", "total", "savings_vs_case1"]
THROUGHPUT_HEADER = ["layer", "mode", "case", "effective_macs", "dense_macs", "throughput_norm"]
ABLATION_HEADER = ["layer", "variant", "pe_count", "cache_kb", "E_DRAM", "E_cache", "E_reg", "E_MAC",
                   "total", "ratio_vs_case_a"]
PRUNED_HEADER = ["layer", "n_weights", "n_thresholds", "mime_total", "pruned_total", "mime_advantage"]
METRICS_HEADER = ["task", "epoch", "loss", "l_ce", "l_t", "accuracy", "mean_sparsity"]
SPARSITY_HEADER = ["task", "layer", "sparsity"]
ACCURACY_HEADER = ["task", "mode", "accuracy"]


def _cell(value: Any) -> Any:
    if isinstance(value, bool):
        return "true" if value else "false"
    return value


class ReportWriter:
    """Writes the files of one CLI run under an output directory."""

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs: List[str] = []
        self.row_counts: Dict[str, int] = {}

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
        """
        Write rows as CSV.

        Args:
            name: File name relative to the output directory
            header: Column order; rows must carry exactly these keys
            rows: Row dictionaries

        Returns:
            Path of the written file
        """
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        count = 0
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(header), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _cell(v) for k, v in row.items()})
                count += 1
        self.outputs.append(str(path))
        self.row_counts[name] = count
        logger.info(f"Wrote {count} rows to {path}")
        return path

    def write_summary(self, command: str, settings: Dict[str, Any], extra: Dict[str, Any] = None) -> Path:
        """
        Write <command>_summary.json with the resolved settings and produced files.

        Args:
            command: CLI command name
            settings: Resolved settings tree
            extra: Additional command-specific fields
        """
        path = self.out_dir / f"{command}_summary.json"
        doc = {
            "command": command,
            "settings": settings,
            "outputs": list(self.outputs),
            "rows": dict(self.row_counts),
        }
        if extra:
            doc.update(extra)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info(f"Wrote run summary to {path}")
        return path
