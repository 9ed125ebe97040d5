import unittest
import csv
import json
import os

import sys
from pathlib import Path

import torch

sys.path.append(str(Path(__file__).resolve().parents[1]))

from policy.params import ArchitectureConfig, init_params
from storage.file_manager import MAGIC, CheckpointError, FileManager


class TestFileManager(unittest.TestCase):

    def setUp(self):
        """Sets up test environment with temporary file paths and sample records."""
        self.test_file = "test_metrics.jsonl"
        self.test_table = "test_summary.csv"
        self.test_checkpoint = "test_checkpoint.rcd"
        self.sample_records = [
            {"kind": "agent_step", "step": 0, "data": {"reward": 0.5, "b": 0.1}},
            {"kind": "update", "step": 128, "data": {"mean_kl": 0.002}},
        ]
        self.architecture = ArchitectureConfig(embed_dim=4, hidden_dim=6)

    def tearDown(self):
        """Cleans up the test environment by removing the test files if they exist."""
        for name in (self.test_file, self.test_table, self.test_checkpoint):
            if os.path.exists(name):
                os.remove(name)

    def test_append_records(self):
        """
        Test the functionality of appending records to a metrics stream.

        This test verifies that:
        1. Every record is written as one JSON line.
        2. A second append extends the stream instead of replacing it.

        Assertions:
        - The file holds one line per appended record, in order.
        """
        FileManager.append_records(self.sample_records[:1], self.test_file)
        FileManager.append_records(self.sample_records[1:], self.test_file)
        self.assertTrue(os.path.exists(self.test_file), "The file was not created.")

        # Read the stream line by line and compare it with the sample records
        with open(self.test_file, "r") as file:
            lines = [json.loads(line) for line in file]
        self.assertEqual(lines, self.sample_records, "The records were not correctly appended to the file.")

    def test_load_records(self):
        """Records written with append_records load back unchanged."""
        FileManager.append_records(self.sample_records, self.test_file)
        self.assertEqual(FileManager.load_records(self.test_file), self.sample_records)

    def test_load_from_nonexistent_file(self):
        """
        Test the behavior when attempting to load records from a nonexistent file.

        Assertions:
        - The method should return an empty list when the file does not exist.
        """
        loaded = FileManager.load_records("nonexistent_file.jsonl")
        self.assertEqual(loaded, [], "The method did not return an empty list for a nonexistent file")

    def test_load_from_invalid_json(self):
        """
        Test the behavior when the stream contains invalid JSON.

        Steps:
        - Write invalid JSON content to the file.
        - Attempt to load the records from the file.

        Assertions:
        - The method should return an empty list when the file contains invalid JSON.
        """
        with open(self.test_file, "w") as file:
            file.write("Invalid JSON content\n")

        loaded = FileManager.load_records(self.test_file)
        self.assertEqual(loaded, [], "The method did not return an empty list for a file with invalid JSON.")

    def test_save_summary_table(self):
        """
        Test the functionality of writing a summary table.

        This test verifies that:
        1. The header follows the requested column order.
        2. Missing values are written as empty cells.
        """
        rows = [{"mode": "recode", "best_window_reward": 1.25}, {"mode": "pure_marl"}]
        FileManager.save_summary_table(rows, self.test_table, columns=["mode", "best_window_reward"])

        with open(self.test_table, "r", newline="") as file:
            table = list(csv.reader(file))
        self.assertEqual(table[0], ["mode", "best_window_reward"])
        self.assertEqual(table[1], ["recode", "1.25"])
        self.assertEqual(table[2], ["pure_marl", ""])

    def test_checkpoint_round_trip(self):
        """
        Test that a checkpoint restores every tensor bit for bit.

        Steps:
        - Save seeded parameters.
        - Load them with the same architecture.

        Assertions:
        - Names, order and values are identical.
        """
        params = init_params(self.architecture, 7)
        FileManager.save_checkpoint(params, self.test_checkpoint)
        loaded = FileManager.load_checkpoint(self.test_checkpoint, self.architecture)

        self.assertEqual(list(loaded.tensors), list(params.tensors))
        self.assertTrue(torch.equal(loaded.flat(), params.flat()), "The parameters were not restored exactly.")
        with open(self.test_checkpoint, "rb") as file:
            self.assertEqual(file.read(4), MAGIC)

    def test_checkpoint_keeps_version(self):
        """
        Test that the parameter version survives a save and load.

        Assertions:
        - A store at version 7 loads back at version 7.
        - A store that was never updated loads back at version 0.
        """
        params = init_params(self.architecture, 7)
        updated = params.with_flat(params.flat(), version=7)
        FileManager.save_checkpoint(updated, self.test_checkpoint)
        self.assertEqual(FileManager.load_checkpoint(self.test_checkpoint, self.architecture).version, 7)

        FileManager.save_checkpoint(params, self.test_checkpoint)
        self.assertEqual(FileManager.load_checkpoint(self.test_checkpoint, self.architecture).version, 0)

    def test_checkpoint_errors(self):
        """
        Test the rejection of unusable checkpoints.

        This test verifies that a CheckpointError is raised for:
        1. A missing file.
        2. A wrong magic.
        3. An architecture with another digest.
        4. A truncated file.
        """
        with self.assertRaises(CheckpointError):
            FileManager.load_checkpoint("nonexistent_checkpoint.rcd", self.architecture)

        FileManager.save_checkpoint(init_params(self.architecture, 0), self.test_checkpoint)
        with open(self.test_checkpoint, "rb") as file:
            data = file.read()

        with self.assertRaises(CheckpointError):
            FileManager.load_checkpoint(self.test_checkpoint, ArchitectureConfig(embed_dim=5, hidden_dim=6))

        # Corrupt the magic
        with open(self.test_checkpoint, "wb") as file:
            file.write(b"XXXX" + data[4:])
        with self.assertRaises(CheckpointError):
            FileManager.load_checkpoint(self.test_checkpoint, self.architecture)

        # Drop the last value
        with open(self.test_checkpoint, "wb") as file:
            file.write(data[:-8])
        with self.assertRaises(CheckpointError):
            FileManager.load_checkpoint(self.test_checkpoint, self.architecture)


if __name__ == "__main__":
    unittest.main()
