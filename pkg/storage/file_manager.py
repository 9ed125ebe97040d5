from __future__ import annotations

import csv
import json
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List

import numpy as np

from policy.params import ArchitectureConfig, PolicyParams

logger = logging.getLogger(__name__)

MAGIC = b"RCD1"
FORMAT_VERSION = 2
# Version 1 files carry no parameter version and load with version 0.
READABLE_VERSIONS = (1, 2)


class CheckpointError(ValueError):
    """A checkpoint file is missing, truncated, or does not match the expected format or architecture."""


class FileManager:
    """
    A utility class for the lab's files: metrics streams, summary tables and checkpoints.

    Methods:
        append_records(records: List[Dict], file_name: str) -> None:
            Appends records to a line-delimited JSON stream.

        load_records(file_name: str) -> List[Dict]:
            Loads every record of a stream. A missing or corrupt file yields an empty list.

        save_summary_table(rows: List[Dict], file_name: str, columns: List[str] | None = None) -> None:
            Writes rows as a comma-separated table with a header line.

        save_checkpoint(params: PolicyParams, file_name: str) -> None:
            Writes the parameters in the RCD1 binary format.

        load_checkpoint(file_name: str, architecture: ArchitectureConfig) -> PolicyParams:
            Reads an RCD1 checkpoint written for the given architecture.
    """

    @staticmethod
    def append_records(records: List[Dict], file_name: str) -> None:
        """
        Appends records to the stream, one JSON object per line.

        Args:
            records (List[Dict]): JSON-serializable dictionaries.
            file_name (str): The stream file; parent directories are created.
        """
        path = Path(file_name)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a") as file:
            for record in records:
                file.write(json.dumps(record, sort_keys=True) + "\n")

    @staticmethod
    def load_records(file_name: str) -> List[Dict]:
        """
        Loads every record of a line-delimited JSON stream.

        Returns:
            List[Dict]: The records in file order, or an empty list if the file is missing or corrupt.
        """
        try:
            with open(file_name, "r") as file:
                return [json.loads(line) for line in file if line.strip()]
        except FileNotFoundError:
            logger.warning("Metrics stream %s not found", file_name)
            return []
        except json.JSONDecodeError:
            logger.warning("Metrics stream %s contains invalid JSON", file_name)
            return []

    @staticmethod
    def save_summary_table(rows: List[Dict], file_name: str, columns: List[str] | None = None) -> None:
        """
        Writes a comma-separated table.

        Args:
            rows (List[Dict]): One dictionary per table row.
            file_name (str): Output file; parent directories are created.
            columns (List[str], optional): Column order; defaults to the keys of the first row.
        """
        path = Path(file_name)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = columns or (list(rows[0]) if rows else [])
        with open(path, "w", newline="") as file:
            writer = csv.DictWriter(file, fieldnames=columns)
            writer.writeheader()
            for row in rows:
                writer.writerow({column: row.get(column, "") for column in columns})

    @staticmethod
    def save_checkpoint(params: PolicyParams, file_name: str) -> None:
        """
        Writes magic, format version, architecture digest, the parameter version, then one record per tensor:
        name length, name, rank, dims, and the values as little-endian float64.
        """
        path = Path(file_name)
        path.parent.mkdir(parents=True, exist_ok=True)
        chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), params.architecture.digest(),
                  struct.pack("<Q", params.version), struct.pack("<I", len(params.tensors))]
        for name, tensor in params.tensors.items():
            encoded = name.encode("utf-8")
            values = tensor.detach().numpy()
            chunks.append(struct.pack("<H", len(encoded)) + encoded)
            chunks.append(struct.pack("<B", values.ndim) + struct.pack(f"<{values.ndim}I", *values.shape))
            chunks.append(values.astype("<f8").tobytes())
        with open(path, "wb") as file:
            file.write(b"".join(chunks))

    @staticmethod
    def load_checkpoint(file_name: str, architecture: ArchitectureConfig) -> PolicyParams:
        """
        Reads a checkpoint and rebuilds the parameter store.

        Raises:
            CheckpointError: If the file is missing or truncated, the magic or version is
                unknown, or the digest does not match the architecture.
        """
        try:
            with open(file_name, "rb") as file:
                data = file.read()
        except FileNotFoundError:
            raise CheckpointError(f"Checkpoint {file_name} not found.")
        reader = _Reader(data, file_name)
        if reader.take(4) != MAGIC:
            raise CheckpointError(f"Invalid checkpoint {file_name}: Expected magic {MAGIC!r}.")
        version = reader.unpack("<I")[0]
        if version not in READABLE_VERSIONS:
            raise CheckpointError(f"Invalid checkpoint {file_name}: Expected format version {FORMAT_VERSION}, but got {version}.")
        if reader.take(32) != architecture.digest():
            raise CheckpointError(f"Invalid checkpoint {file_name}: Architecture digest does not match.")
        params_version = reader.unpack("<Q")[0] if version >= 2 else 0
        tensors = OrderedDict()
        for _ in range(reader.unpack("<I")[0]):
            name = reader.take(reader.unpack("<H")[0]).decode("utf-8")
            rank = reader.unpack("<B")[0]
            shape = reader.unpack(f"<{rank}I") if rank else ()
            count = int(np.prod(shape)) if rank else 1
            tensors[name] = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        if reader.remaining:
            raise CheckpointError(f"Invalid checkpoint {file_name}: {reader.remaining} trailing bytes.")
        try:
            return PolicyParams(tensors, architecture, version=params_version)
        except ValueError as error:
            raise CheckpointError(f"Invalid checkpoint {file_name}: {error}")


class _Reader:
    def __init__(self, data: bytes, file_name: str) -> None:
        self.data = data
        self.offset = 0
        self.file_name = file_name

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def take(self, size: int) -> bytes:
        if size > self.remaining:
            raise CheckpointError(f"Invalid checkpoint {self.file_name}: Truncated file.")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))
