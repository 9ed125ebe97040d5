from __future__ import annotations

import math
import re
from enum import Enum
from typing import List

import numpy as np

from storage.file_manager import FileManager
from utils.validation import validate_type

SCHEMA_VERSION = 1


class RecordKind(str, Enum):
    AGENT_STEP = "agent_step"
    UPDATE = "update"
    EVALUATION = "evaluation"
    EPISODE = "episode"


class MetricsRecord:
    """
    One line of a metrics stream.

    Attributes:
        kind (RecordKind): What the record describes.
        mode (str): Controller mode that produced it.
        scenario (str): Scenario name.
        seed (int): Run seed.
        step (int): Environment steps consumed when the record was made.
        data (dict): Kind-specific JSON-compatible payload.

    Methods:
        to_dict() -> dict:
            Converts the record to a dictionary with exactly the keys from_dict expects.

        from_dict(data: dict) -> MetricsRecord:
            Class method that rebuilds a record and validates its keys.
    """

    REQUIRED_KEYS = ["schema", "run_id", "kind", "mode", "scenario", "seed", "step", "data"]

    def __init__(self, kind, mode: str, scenario: str, seed: int, step: int, data: dict | None = None) -> None:
        self.kind = RecordKind(kind)
        validate_type(mode, str, f"Invalid value for 'mode': Expected a str, not a {type(mode).__name__}")
        validate_type(scenario, str, f"Invalid value for 'scenario': Expected a str, not a {type(scenario).__name__}")
        validate_type(seed, int, f"Invalid value for 'seed': Expected an int, not a {type(seed).__name__}")
        validate_type(step, int, f"Invalid value for 'step': Expected an int, not a {type(step).__name__}")
        self.mode = mode
        self.scenario = scenario
        self.seed = seed
        self.step = step
        self.data = _plain(data or {})

    def __str__(self) -> str:
        return f"{self.kind.value} | {self.mode} | {self.scenario} | step {self.step}"

    def __eq__(self, other) -> bool:
        return isinstance(other, MetricsRecord) and self.to_dict() == other.to_dict()

    @property
    def run_id(self) -> str:
        return f"{self.mode}-{self.scenario}-{self.seed}"

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "run_id": self.run_id,
            "kind": self.kind.value,
            "mode": self.mode,
            "scenario": self.scenario,
            "seed": self.seed,
            "step": self.step,
            "data": self.data,
        }

    @classmethod
    def from_dict(cls, data: dict) -> MetricsRecord:
        """
        Creates a record from a dictionary.

        Raises:
            TypeError: If data is not a dict.
            ValueError: If the keys differ from REQUIRED_KEYS or the schema version is unknown.
        """
        validate_type(data, dict, f"Invalid JSON structure: Expected a Dict, not a {type(data).__name__}")
        if set(data.keys()) != set(cls.REQUIRED_KEYS):
            raise ValueError(f"Invalid data keys: Expected {cls.REQUIRED_KEYS}, but found {list(data.keys())}")
        if data["schema"] != SCHEMA_VERSION:
            raise ValueError(f"Invalid value for 'schema': Expected {SCHEMA_VERSION}, but got {data['schema']}.")
        return cls(data["kind"], data["mode"], data["scenario"], data["seed"], data["step"], data["data"])


def _plain(value):
    """numpy scalars and arrays to JSON types; non-finite floats to None."""
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


class MetricsLog:
    """
    An in-memory metrics stream, optionally mirrored to a line-delimited JSON file.

    Attributes:
        file_name (str | None): Stream file; records are appended as they are added.
        keep (bool): Whether records stay in memory; long runs stream to the file only.
        records (List[MetricsRecord]): Every record, in insertion order.

    Methods:
        add(record) / extend(records):
            Append records and mirror them to the file.

        filter(kind, mode, scenario) -> List[MetricsRecord]:
            Records matching every given criterion.
    """

    def __init__(self, file_name: str | None = None, load: bool = False, keep: bool = True) -> None:
        self.file_name = file_name
        self.keep = keep
        self.records: List[MetricsRecord] = self._load_file(file_name) if (file_name and load) else []

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: MetricsRecord) -> None:
        self.extend([record])

    def extend(self, records: List[MetricsRecord]) -> None:
        records = list(records)
        if self.keep:
            self.records.extend(records)
        if self.file_name:
            FileManager.append_records([record.to_dict() for record in records], self.file_name)

    def filter(self, kind=None, mode: str | None = None, scenario: str | None = None) -> List[MetricsRecord]:
        kind = None if kind is None else RecordKind(kind)
        return [
            record for record in self.records
            if (kind is None or record.kind is kind)
            and (mode is None or record.mode == mode)
            and (scenario is None or record.scenario == scenario)
        ]

    def dicts(self) -> List[dict]:
        return [record.to_dict() for record in self.records]

    # PRIVATE METHODS
    @staticmethod
    def _load_file(file: str) -> List[MetricsRecord]:
        return [MetricsRecord.from_dict(data) for data in FileManager.load_records(file)]

    @property
    def file_name(self) -> str | None:
        return self._file_name

    @file_name.setter
    def file_name(self, file_name: str | None) -> None:
        if file_name is not None and not re.search(r"^[a-zA-Z0-9_\-/.]+\.jsonl$", str(file_name)):
            raise ValueError(f"Invalid value for 'file_name': Expected a path ending with '.jsonl', but got '{file_name}'.")
        self._file_name = None if file_name is None else str(file_name)
