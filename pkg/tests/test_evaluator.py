import tempfile
import unittest
from pathlib import Path

import numpy as np

from simtune.config.schemas import DESK_FAR_TARGETS
from simtune.data.io import read_frame, read_json
from simtune.data.synthetic import Dataset
from simtune.errors import ConfigurationError
from simtune.evaluation.evaluator import (
    MetricsReport,
    evaluate,
    far_key,
    is_rate,
    write_embeddings,
    write_report,
)
from simtune.models.encoder import CaptionTable, EncoderParams, Layer, snapshot_of
from simtune.sampler import caption_for_class
from tests.fixtures import small_pretrained, small_splits

CLASS_NAMES = ["class_0", "class_1", "class_2"]


def identity_encoder(dim: int = 3) -> EncoderParams:
    return EncoderParams([Layer(np.eye(dim), np.zeros(dim))])


def axis_dataset() -> Dataset:
    x = [[2.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
    return Dataset(x, [0, 1, 2, 0], [0, 0, 0, 0], CLASS_NAMES, "test_id")


def axis_captions() -> CaptionTable:
    return CaptionTable(np.eye(3), [caption_for_class(n) for n in CLASS_NAMES])


class TestClassificationProtocol(unittest.TestCase):
    def test_perfectly_separated_classes(self):
        params = identity_encoder()
        report = evaluate(
            params,
            snapshot_of(params),
            axis_dataset(),
            "classification",
            captions=axis_captions(),
            ks=(1, 2, 5),
        )
        metrics = report.metrics
        self.assertEqual(report.tag, "ID")
        self.assertEqual(metrics["accuracy"], 1.0)
        self.assertEqual(metrics["ret@1"], 1.0)
        self.assertEqual(metrics["ret@2"], 1.0)
        self.assertNotIn("ret@5", metrics)
        self.assertEqual(metrics["mean_ret"], 1.0)
        self.assertEqual(metrics["mean_drift"], 0.0)
        self.assertEqual(metrics["cluster_variance"], 0.0)

    def test_reference_model_on_shifted_split(self):
        pretrained = small_pretrained()
        report = evaluate(
            pretrained.params,
            snapshot_of(pretrained.params),
            small_splits().test_ood,
            "classification",
            captions=pretrained.captions,
            ks=(1, 2),
        )
        self.assertEqual(report.tag, "OOD")
        self.assertEqual(report.metrics["mean_drift"], 0.0)
        for domain in (1, 2):
            self.assertIn(f"domain_{domain}/accuracy", report.metrics)
            self.assertEqual(report.metrics[f"domain_{domain}/mean_drift"], 0.0)
        for name, value in report.metrics.items():
            if is_rate(name):
                self.assertTrue(0.0 <= value <= 1.0, name)

    def test_cluster_variance_scores_each_domain_separately(self):
        params = identity_encoder()
        x = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 3.0, 0.0]]
        shifted = Dataset(x, [0, 0, 0, 0], [1, 1, 2, 2], CLASS_NAMES, "test_ood")
        report = evaluate(
            params,
            snapshot_of(params),
            shifted,
            "classification",
            captions=axis_captions(),
            ks=(1,),
        )
        metrics = report.metrics
        self.assertEqual(metrics["domain_1/cluster_variance"], 0.0)
        self.assertEqual(metrics["domain_2/cluster_variance"], 0.0)
        self.assertEqual(metrics["cluster_variance"], 0.0)
        # unit rows e0, e0, e1, e1 around centroid (0.5, 0.5, 0)
        self.assertAlmostEqual(metrics["pooled_cluster_variance"], 1 / 6, places=12)

    def test_drift_against_other_reference(self):
        params = identity_encoder()
        moved = EncoderParams([Layer(2.0 * np.eye(3), np.zeros(3))])
        report = evaluate(
            moved,
            snapshot_of(params),
            axis_dataset(),
            "classification",
            captions=axis_captions(),
            ks=(1,),
        )
        # |2x - x|^2 averaged over rows with norms 2, 3, 1, 1
        self.assertAlmostEqual(report.metrics["mean_drift"], 15 / 4, places=12)
        self.assertEqual(report.metrics["accuracy"], 1.0)

    def test_requires_captions(self):
        params = identity_encoder()
        with self.assertRaises(ConfigurationError):
            evaluate(params, snapshot_of(params), axis_dataset(), "classification")
        with self.assertRaises(ConfigurationError):
            evaluate(params, snapshot_of(params), axis_dataset(), "detection")


class TestVerificationProtocol(unittest.TestCase):
    def test_far_points_and_pair_counts(self):
        pretrained = small_pretrained(pairwise=True)
        report = evaluate(
            pretrained.params,
            snapshot_of(pretrained.params),
            small_splits(pairwise=True).test_ood,
            "verification",
            max_impostor_pairs=200,
        )
        metrics = report.metrics
        for target in DESK_FAR_TARGETS:
            self.assertIn(far_key(target), metrics)
        self.assertIn("tar@far=0.01", metrics)
        self.assertEqual(metrics["impostor_pairs"], 200.0)
        self.assertGreater(metrics["genuine_pairs"], 0.0)
        self.assertEqual(metrics["mean_drift"], 0.0)
        rates = [metrics[far_key(t)] for t in sorted(DESK_FAR_TARGETS)]
        self.assertEqual(rates, sorted(rates))


class TestReports(unittest.TestCase):
    def test_report_validation(self):
        with self.assertRaises(ConfigurationError):
            MetricsReport({"accuracy": 0.5}, "test")
        with self.assertRaises(ValueError):
            MetricsReport({"ret@1": 1.5}, "ID")
        MetricsReport({"mean_drift": 7.0}, "OOD")

    def test_frame_is_one_sorted_row(self):
        report = MetricsReport({"ret@1": 0.5, "accuracy": 0.25}, "ID", "test_id")
        frame = report.frame()
        self.assertEqual(list(frame.columns), ["tag", "split", "accuracy", "ret@1"])
        self.assertEqual(len(frame), 1)

    def test_written_files(self):
        params = identity_encoder()
        data = axis_dataset()
        report = MetricsReport({"accuracy": 0.75}, "ID", "test_id")
        with tempfile.TemporaryDirectory() as tmp:
            write_report(report, tmp, "metrics_test_id", {"command": "eval"})
            write_embeddings(params, data, tmp, "embeddings_test_id")
            doc = read_json(Path(tmp) / "metrics_test_id.json")
            embeddings = read_frame(Path(tmp) / "embeddings_test_id.csv")
            projection = read_frame(Path(tmp) / "embeddings_test_id_projection.csv")
        self.assertEqual(doc["metrics"], {"accuracy": 0.75})
        self.assertEqual(doc["manifest"]["command"], "eval")
        self.assertEqual(list(embeddings.columns), ["id", "label", "e0", "e1", "e2"])
        self.assertEqual(list(projection.columns), ["id", "label", "p0", "p1"])
        self.assertEqual(len(projection), len(data))


if __name__ == "__main__":
    unittest.main()
