import json
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from click.testing import CliRunner

from simtune.cli import cli
from simtune.core.gradcheck import GRADIENT_CHECKS, GradientCase, check_similarity
from simtune.data.io import read_frame, read_json
from simtune.errors import NonFiniteGradientError
from tests.fixtures import SMALL_RUN


def broken_similarity(rng) -> GradientCase:
    case = check_similarity(rng)
    return GradientCase(case.f, case.at, 2.0 * case.analytic)


class CliTestCase(unittest.TestCase):
    def setUp(self):
        patcher = mock.patch("simtune.cli.setup_logging")
        patcher.start()
        self.addCleanup(patcher.stop)
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.tmp = Path(self._tmp.name)
        self.config = self.write_config(SMALL_RUN)
        self.runner = CliRunner()

    def write_config(self, doc, name="config.json") -> str:
        path = self.tmp / name
        path.write_text(json.dumps(doc))
        return str(path)

    def invoke(self, *args, expect=0):
        result = self.runner.invoke(cli, [str(a) for a in args])
        self.assertEqual(result.exit_code, expect, result.output)
        return result

    def pipeline(self, root: Path, alpha=0.0):
        data, pre, ft, ev = (root / n for n in ("data", "pre", "ft", "eval"))
        self.invoke("gen-data", "--config", self.config, "--out", data)
        self.invoke("pretrain", "--config", self.config, "--data", data, "--out", pre)
        self.invoke(
            "train", "--config", self.config, "--data", data,
            "--model", pre / "pretrained.json", "--alpha", alpha, "--out", ft,
        )
        self.invoke(
            "eval", "--config", self.config, "--data", data,
            "--model", ft / "model.json", "--out", ev,
        )
        return data, pre, ft, ev


class TestGradcheckCommand(CliTestCase):
    def test_all_checks_pass(self):
        out = self.tmp / "gc"
        self.invoke(
            "gradcheck", "--config", self.config, "--instances", 10, "--out", out
        )
        frame = read_frame(out / "gradcheck.csv")
        self.assertEqual(len(frame), len(GRADIENT_CHECKS))
        self.assertTrue(frame["passed"].all())
        self.assertTrue((out / "manifest.json").exists())

    def test_wrong_gradient_is_reported(self):
        out = self.tmp / "gc"
        with mock.patch.dict(GRADIENT_CHECKS, {"similarity_loss": broken_similarity}):
            result = self.invoke(
                "gradcheck", "--config", self.config, "--instances", 3,
                "--out", out, expect=5,
            )
        self.assertIn("similarity_loss", result.output)
        failing = read_json(out / "gradcheck.json")["failing"]
        self.assertEqual(failing, ["similarity_loss"])

    def test_invalid_instance_count(self):
        self.invoke(
            "gradcheck", "--config", self.config, "--instances", 0,
            "--out", self.tmp / "gc", expect=2,
        )


class TestConfigErrors(CliTestCase):
    def test_missing_config_file(self):
        self.invoke(
            "gen-data", "--config", self.tmp / "absent.json",
            "--out", self.tmp / "d", expect=3,
        )

    def test_malformed_config(self):
        bad = self.tmp / "bad.json"
        bad.write_text("{not json")
        self.invoke("gen-data", "--config", bad, "--out", self.tmp / "d", expect=2)

    def test_unknown_field(self):
        config = self.write_config({**SMALL_RUN, "learning_rate": 0.1}, "typo.json")
        self.invoke("gen-data", "--config", config, "--out", self.tmp / "d", expect=2)

    def test_missing_dataset(self):
        self.invoke(
            "pretrain", "--config", self.config, "--data", self.tmp / "nothing",
            "--out", self.tmp / "pre", expect=3,
        )


class TestPipeline(CliTestCase):
    def test_train_then_evaluate(self):
        data, pre, ft, ev = self.pipeline(self.tmp / "run")
        for name in ("dataset.csv", "dataset.json", "manifest.json"):
            self.assertTrue((data / name).exists(), name)
        steps = read_frame(ft / "steps.csv")
        self.assertEqual(len(steps), SMALL_RUN["steps"])
        self.assertFalse(read_json(ft / "run_record.json")["failed"])

        ood = read_json(ev / "metrics_test_ood.json")
        self.assertEqual(ood["tag"], "OOD")
        self.assertGreater(ood["metrics"]["mean_drift"], 0.0)
        self.assertEqual(ood["config"]["reference"], str(pre / "pretrained.json"))
        self.assertEqual(read_json(ev / "metrics_test_id.json")["tag"], "ID")
        for name in ("embeddings_test_id.csv", "embeddings_test_ood_projection.csv"):
            self.assertTrue((ev / name).exists(), name)

        own = self.tmp / "own"
        self.invoke(
            "eval", "--config", self.config, "--data", data,
            "--model", pre / "pretrained.json", "--split", "test_ood", "--out", own,
        )
        self.assertEqual(
            read_json(own / "metrics_test_ood.json")["metrics"]["mean_drift"], 0.0
        )
        self.assertFalse((own / "metrics_test_id.json").exists())

    def test_reruns_are_byte_identical(self):
        first = self.pipeline(self.tmp / "a")
        second = self.pipeline(self.tmp / "b")
        files = [
            (0, "dataset.csv"),
            (2, "steps.csv"),
            (3, "metrics_test_ood.csv"),
            (3, "embeddings_test_id.csv"),
        ]
        for index, name in files:
            self.assertEqual(
                (first[index] / name).read_bytes(),
                (second[index] / name).read_bytes(),
                name,
            )

    def test_divergence_exit_code(self):
        data, pre = self.tmp / "data", self.tmp / "pre"
        self.invoke("gen-data", "--config", self.config, "--out", data)
        self.invoke("pretrain", "--config", self.config, "--data", data, "--out", pre)
        ft = self.tmp / "ft"
        with mock.patch(
            "simtune.training.trainer.adamw_step",
            side_effect=NonFiniteGradientError("gradient is nan"),
        ):
            self.invoke(
                "train", "--config", self.config, "--data", data,
                "--model", pre / "pretrained.json", "--out", ft, expect=4,
            )
        record = read_json(ft / "run_record.json")
        self.assertTrue(record["failed"])
        self.assertEqual(record["completed_steps"], 0)
        self.assertFalse((ft / "model.json").exists())

    def test_dataset_kind_must_match_config(self):
        data = self.tmp / "data"
        self.invoke("gen-data", "--config", self.config, "--out", data)
        pairwise = self.write_config(
            {**SMALL_RUN, "dataset_kind": "identities", "task": "pairwise"}, "pw.json"
        )
        self.invoke(
            "pretrain", "--config", pairwise, "--data", data,
            "--out", self.tmp / "pre", expect=2,
        )


class TestSweepCommand(CliTestCase):
    def test_large_alpha_limits_drift(self):
        out = self.tmp / "sweep"
        self.invoke("sweep", "--config", self.config, "--out", out)
        summary = read_frame(out / "sweep.csv")
        self.assertEqual(summary["alpha"].tolist(), [0.0, 1e6])
        drift = dict(zip(summary["alpha"], summary["drift"]))
        self.assertLess(drift[1e6], drift[0.0])
        self.assertTrue((out / "baseline.csv").exists())
        doc = read_json(out / "sweep.json")
        self.assertIn(doc["best_alpha"], (0.0, 1e6))

    def test_single_alpha_rejected(self):
        config = self.write_config({**SMALL_RUN, "alphas": [1.0]}, "one.json")
        self.invoke("sweep", "--config", config, "--out", self.tmp / "s", expect=2)


if __name__ == "__main__":
    unittest.main()
