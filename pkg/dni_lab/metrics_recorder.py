#!/usr/bin/env python3
"""
Metrics Recorder
Write-through JSONL log of experiment records, one object per logging interval
"""

import json
import logging
import os
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


class MetricsRecorder:
    """Records every logged iteration and flushes it to disk immediately"""

    def __init__(self, filepath: Optional[str] = None, resume: bool = False):
        self.filepath = filepath
        self.records: List[Dict] = []
        if filepath is not None:
            self._initialize_file(resume)

    def _initialize_file(self, resume: bool):
        """Create the JSONL file, or reload it when resuming"""
        directory = os.path.dirname(self.filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        if resume and os.path.exists(self.filepath):
            self.records = self.read(self.filepath)
        else:
            self._write_to_file()
        logger.info(f"Metrics record initialized: {self.filepath}")

    def _write_to_file(self):
        try:
            with open(self.filepath, "w", encoding="utf-8") as f:
                for record in self.records:
                    f.write(json.dumps(record, sort_keys=True) + "\n")
        except OSError as e:
            raise OSError(f"Could not write metrics file {self.filepath}: {e}") from e

    def add_record(self, record: Dict):
        """Append a record and save it immediately"""
        self.records.append(record)
        if self.filepath is None:
            return
        try:
            with open(self.filepath, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        except OSError as e:
            raise OSError(f"Could not append to metrics file {self.filepath}: {e}") from e

    def truncate(self, iteration: int):
        """Drop records logged at or after `iteration` (a resumed run replays them)"""
        kept = [r for r in self.records if r["iteration"] < iteration]
        if len(kept) != len(self.records):
            logger.info(f"Dropping {len(self.records) - len(kept)} metrics records past iteration {iteration}")
        self.records = kept
        if self.filepath is not None:
            self._write_to_file()

    @staticmethod
    def read(filepath: str) -> List[Dict]:
        try:
            with open(filepath, "r", encoding="utf-8") as f:
                return [json.loads(line) for line in f if line.strip()]
        except OSError as e:
            raise OSError(f"Could not read metrics file {filepath}: {e}") from e
