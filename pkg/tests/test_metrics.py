import unittest

import json
import os
import sys
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[1]))

from harness.metrics import SCHEMA_VERSION, MetricsLog, MetricsRecord, RecordKind


class TestMetricsRecord(unittest.TestCase):

    def setUp(self):
        """Sets up a sample agent-step record with numpy payload values."""
        self.record = MetricsRecord(RecordKind.AGENT_STEP, "recode", "waypoint", 3, 40, {
            "reward": np.float64(0.25),
            "b": np.nan,
            "neighbor_count": np.int64(2),
            "position": np.array([0.1, -0.2]),
            "events": ["collision"],
        })

    def test_to_dict(self):
        """
        Test the conversion of a record to a dictionary.

        This test verifies that:
        1. Every required key is present.
        2. numpy values become plain JSON types and nan becomes None.

        Assertions:
        - The dictionary serializes with json.dumps.
        """
        data = self.record.to_dict()
        self.assertEqual(set(data), set(MetricsRecord.REQUIRED_KEYS))
        self.assertEqual(data["schema"], SCHEMA_VERSION)
        self.assertEqual(data["run_id"], "recode-waypoint-3")
        self.assertEqual(data["data"]["position"], [0.1, -0.2])
        self.assertIsNone(data["data"]["b"])
        self.assertIsInstance(data["data"]["neighbor_count"], int)
        json.dumps(data)

    def test_from_dict(self):
        """A dictionary from to_dict rebuilds an equal record."""
        rebuilt = MetricsRecord.from_dict(self.record.to_dict())
        self.assertEqual(rebuilt, self.record)
        self.assertIs(rebuilt.kind, RecordKind.AGENT_STEP)

    def test_from_dict_invalid(self):
        """
        Test the rejection of malformed dictionaries.

        Assertions:
        - A non-dict raises TypeError.
        - Missing keys or an unknown schema raise ValueError.
        """
        with self.assertRaises(TypeError):
            MetricsRecord.from_dict(["agent_step"])

        data = self.record.to_dict()
        del data["seed"]
        with self.assertRaises(ValueError):
            MetricsRecord.from_dict(data)

        data = self.record.to_dict()
        data["schema"] = SCHEMA_VERSION + 1
        with self.assertRaises(ValueError):
            MetricsRecord.from_dict(data)

    def test_invalid_fields(self):
        with self.assertRaises(ValueError):
            MetricsRecord("unknown_kind", "recode", "waypoint", 0, 0)
        with self.assertRaises(TypeError):
            MetricsRecord(RecordKind.UPDATE, "recode", "waypoint", 0, 1.5)

    def test_str(self):
        self.assertEqual(str(self.record), "agent_step | recode | waypoint | step 40")


class TestMetricsLog(unittest.TestCase):

    def setUp(self):
        """Sets up test environment with a temporary stream path and a few records."""
        self.test_file = "test_metrics_log.jsonl"
        self.records = [
            MetricsRecord(RecordKind.AGENT_STEP, "recode", "waypoint", 0, 0, {"reward": 1.0}),
            MetricsRecord(RecordKind.UPDATE, "recode", "waypoint", 0, 128, {"update": 1}),
            MetricsRecord(RecordKind.EVALUATION, "pure_marl", "narrow_corridor", 0, 128, {"mean_reward": 0.5}),
        ]

    def tearDown(self):
        """Cleans up the test environment by removing the test file if it exists."""
        if os.path.exists(self.test_file):
            os.remove(self.test_file)

    def test_persistence(self):
        """
        Test that records added to a file-backed log load back in order.

        Steps:
        - Add records one at a time and as a batch.
        - Open the stream again with load=True.

        Assertions:
        - The reloaded records equal the originals.
        """
        log = MetricsLog(self.test_file)
        log.add(self.records[0])
        log.extend(self.records[1:])
        self.assertEqual(len(log), 3)

        reloaded = MetricsLog(self.test_file, load=True)
        self.assertEqual(reloaded.records, self.records, "The records were not correctly reloaded from the stream.")

    def test_stream_only(self):
        """With keep=False records go to the file but not to memory."""
        log = MetricsLog(self.test_file, keep=False)
        log.extend(self.records)
        self.assertEqual(len(log), 0)
        self.assertEqual(len(MetricsLog(self.test_file, load=True)), 3)

    def test_filter(self):
        log = MetricsLog()
        log.extend(self.records)
        self.assertEqual(log.filter(kind="update"), [self.records[1]])
        self.assertEqual(log.filter(mode="recode"), self.records[:2])
        self.assertEqual(log.filter(RecordKind.EVALUATION, scenario="narrow_corridor"), [self.records[2]])
        self.assertEqual(log.filter(kind=RecordKind.EPISODE), [])

    def test_invalid_file_name(self):
        """Stream names must end with .jsonl."""
        with self.assertRaises(ValueError):
            MetricsLog("metrics.json")


if __name__ == "__main__":
    unittest.main()
