import unittest
from unittest import mock

import numpy as np

from simtune.errors import NonFiniteError
from simtune.models.encoder import drift, snapshot_of
from simtune.training.pretrain import pretrain
from simtune.training.trainer import run_training
from tests.fixtures import small_config, small_pretrained, small_splits


def ood_drift(record, pretrained, ood) -> float:
    snapshot = snapshot_of(pretrained.params)
    return float(drift(record.params, snapshot, ood.x).mean())


def assert_same_params(case, a, b):
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.weight, lb.weight)
        np.testing.assert_array_equal(la.bias, lb.bias)


class TestPretrain(unittest.TestCase):
    def test_caption_rows_align_with_classes(self):
        checkpoint = small_pretrained()
        captions = checkpoint.captions
        self.assertEqual(captions.captions[0], "a photo of a class_0")
        self.assertEqual(captions.embeddings.shape, (4, 4))
        np.testing.assert_allclose(
            np.linalg.norm(captions.embeddings, axis=1), 1.0, atol=1e-12
        )

    def test_deterministic(self):
        config = small_config()
        again = pretrain(
            small_splits().pretrain, config.encoder_spec(), config.pretrain_config()
        )
        assert_same_params(self, again.params, small_pretrained().params)


class TestRunTraining(unittest.TestCase):
    def setUp(self):
        self.pretrained = small_pretrained()
        self.data = small_splits().finetune_id

    def train(self, **overrides):
        return run_training(
            self.pretrained, self.data, small_config().train_config(**overrides)
        )

    def test_alpha_zero_records_contrastive_only(self):
        record = self.train(alpha=0.0)
        self.assertFalse(record.failed)
        self.assertEqual(record.completed_steps, 30)
        for entry in record.steps:
            self.assertAlmostEqual(
                entry.total_loss, entry.contrastive_loss, delta=1e-12
            )
        self.assertEqual([s.step for s in record.steps], list(range(1, 31)))

    def test_first_step_has_no_drift(self):
        record = self.train(alpha=10.0)
        self.assertEqual(record.steps[0].mean_drift, 0.0)
        self.assertGreater(record.steps[-1].mean_drift, 0.0)
        self.assertEqual(record.steps[-1].lr, 0.0)

    def test_zero_learning_rate_keeps_parameters(self):
        record = self.train(lr0=0.0, alpha=1.0)
        assert_same_params(self, record.params, self.pretrained.params)
        np.testing.assert_array_equal(
            record.captions.embeddings, self.pretrained.captions.embeddings
        )

    def test_deterministic(self):
        first, second = self.train(alpha=1.0), self.train(alpha=1.0)
        self.assertTrue(first.frame().equals(second.frame()))
        assert_same_params(self, first.params, second.params)

    def test_pretrained_checkpoint_untouched(self):
        before = snapshot_of(self.pretrained.params, self.pretrained.captions)
        self.train(alpha=1.0)
        after = snapshot_of(self.pretrained.params, self.pretrained.captions)
        self.assertEqual(before.fingerprint(), after.fingerprint())

    def test_divergence_returns_partial_record(self):
        with mock.patch(
            "simtune.training.trainer.classification_objective",
            side_effect=NonFiniteError("loss is nan"),
        ):
            record = self.train(alpha=1.0)
        self.assertTrue(record.failed)
        self.assertEqual(record.completed_steps, 0)
        self.assertIn("step 1", record.failure)
        assert_same_params(self, record.params, self.pretrained.params)

    def test_arc_margin_variant(self):
        record = self.train(alpha=1.0, loss_variant="arc_margin")
        self.assertFalse(record.failed)
        self.assertEqual(record.class_weights.shape, (3, 4))

    def test_large_alpha_keeps_encoder_near_reference(self):
        ood = small_splits().test_ood
        free = self.train(alpha=0.0, steps=500)
        held = self.train(alpha=1e6, steps=500)
        free_drift = ood_drift(free, self.pretrained, ood)
        self.assertGreater(free_drift, 0.0)
        self.assertLess(ood_drift(held, self.pretrained, ood), 1e-3 * free_drift)

    def test_drift_non_increasing_in_alpha(self):
        ood = small_splits().test_ood
        drifts = [
            ood_drift(self.train(alpha=alpha, steps=100), self.pretrained, ood)
            for alpha in (0.0, 0.1, 1.0, 10.0, 100.0)
        ]
        for lower, higher in zip(drifts, drifts[1:]):
            self.assertLessEqual(higher, lower + 1e-9, drifts)


class TestPairwiseTraining(unittest.TestCase):
    def setUp(self):
        self.pretrained = small_pretrained(pairwise=True)
        self.data = small_splits(pairwise=True).finetune_id

    def test_pairwise_run(self):
        config = small_config(pairwise=True).train_config(alpha=1.0)
        record = run_training(self.pretrained, self.data, config)
        self.assertFalse(record.failed)
        self.assertEqual(record.completed_steps, config.steps)
        self.assertIsNone(record.class_weights)

    def test_pairwise_arc_margin(self):
        config = small_config(pairwise=True).train_config(
            alpha=1.0, loss_variant="arc_margin"
        )
        record = run_training(self.pretrained, self.data, config)
        self.assertFalse(record.failed)
        self.assertEqual(record.class_weights.shape, (10, 4))


if __name__ == "__main__":
    unittest.main()
