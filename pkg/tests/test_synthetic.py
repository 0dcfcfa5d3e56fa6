import tempfile
import unittest

import numpy as np

from simtune.config.schemas import SyntheticSpec, validated
from simtune.core.numeric import make_rng, pairwise_cosine
from simtune.data.io import read_dataset, write_dataset
from simtune.data.synthetic import (
    generate_classification,
    generate_identities,
    blended_map,
    genuine_pairs,
    impostor_pairs,
    random_orthogonal,
)
from simtune.errors import InvalidSpecError
from simtune.evaluation.evaluator import score_pairs


def spec(**fields) -> SyntheticSpec:
    base = {"num_classes": 6, "held_out_classes": [4, 5], "input_dim": 5, "seed": 7}
    return validated(SyntheticSpec, {**base, **fields}, InvalidSpecError)


class TestClassificationData(unittest.TestCase):
    def setUp(self):
        self.splits = generate_classification(spec())

    def test_held_out_containment(self):
        held = {4, 5}
        for name in ("finetune_id", "test_id"):
            labels = set(getattr(self.splits, name).labels.tolist())
            self.assertFalse(labels & held, name)
        self.assertTrue(held <= set(self.splits.test_ood.labels.tolist()))
        self.assertEqual(set(self.splits.pretrain.labels.tolist()), set(range(6)))

    def test_domains(self):
        self.assertEqual(set(self.splits.finetune_id.domains.tolist()), {0})
        self.assertEqual(set(self.splits.test_id.domains.tolist()), {0})
        self.assertEqual(set(self.splits.test_ood.domains.tolist()), {1, 2})
        self.assertEqual(set(self.splits.pretrain.domains.tolist()), {0, 1, 2})

    def test_finetune_and_test_disjoint(self):
        finetune = {tuple(row) for row in self.splits.finetune_id.x}
        self.assertFalse(finetune & {tuple(row) for row in self.splits.test_id.x})

    def test_deterministic(self):
        again = generate_classification(spec())
        for (_, a), (_, b) in zip(self.splits.items(), again.items()):
            np.testing.assert_array_equal(a.x, b.x)
            np.testing.assert_array_equal(a.labels, b.labels)

    def test_class_names(self):
        self.assertEqual(self.splits.class_names[0], "class_0")

    def test_noiseless_unshifted_is_separable(self):
        splits = generate_classification(
            spec(noise_sigma=0.0, domain_shift_strength=0.0)
        )
        pretrain = splits.pretrain
        centroids = np.stack(
            [pretrain.x[pretrain.labels == c].mean(axis=0) for c in range(6)]
        )
        for _, data in splits.items():
            dist = ((data.x[:, None, :] - centroids[None]) ** 2).sum(axis=2)
            np.testing.assert_array_equal(dist.argmin(axis=1), data.labels)

    def test_zero_shift_matches_in_domain_generator(self):
        splits = generate_classification(
            spec(noise_sigma=0.0, domain_shift_strength=0.0)
        )
        reference = {
            int(c): row for c, row in zip(splits.test_id.labels, splits.test_id.x)
        }
        test_ood = splits.test_ood
        for c in range(4):
            rows = test_ood.x[test_ood.labels == c]
            self.assertEqual(rows.shape[0], 2 * 20)
            np.testing.assert_array_equal(rows, np.tile(reference[c], (40, 1)))
        np.testing.assert_array_equal(
            splits.test_id.x[:20], splits.finetune_id.x[:20]
        )

    def test_invalid_specs(self):
        with self.assertRaises(InvalidSpecError):
            spec(held_out_classes=[6])
        with self.assertRaises(InvalidSpecError):
            spec(num_domains=1)
        with self.assertRaises(InvalidSpecError):
            generate_identities(spec())


class TestIdentityData(unittest.TestCase):
    def setUp(self):
        self.splits = generate_identities(
            spec(kind="identities", num_classes=20, held_out_classes=[18, 19])
        )

    def test_every_identity_has_two_images(self):
        _, counts = np.unique(self.splits.finetune_id.labels, return_counts=True)
        self.assertTrue(np.all(counts >= 2))

    def test_noiseless_genuine_scores(self):
        splits = generate_identities(
            spec(kind="identities", noise_sigma=0.0, held_out_classes=[5])
        )
        data = splits.test_id
        i, j = genuine_pairs(data.labels)
        np.testing.assert_allclose(score_pairs(data.x, i, j), 1.0, atol=1e-12)

    def test_shift_moves_identity_centroids(self):
        ident = self.splits.test_id
        shifted = self.splits.test_ood.subset(self.splits.test_ood.domains == 1)
        ids = np.unique(ident.labels)
        a = np.stack([ident.x[ident.labels == c].mean(axis=0) for c in ids])
        b = np.stack([shifted.x[shifted.labels == c].mean(axis=0) for c in ids])
        self.assertLess(np.mean(np.diag(pairwise_cosine(a, b))), 1.0)

    def test_single_image_identities_rejected(self):
        with self.assertRaises(InvalidSpecError):
            generate_identities(spec(kind="identities", samples_per_class_per_domain=1))


class TestPairsAndMaps(unittest.TestCase):
    def test_pair_enumeration(self):
        labels = [0, 0, 1, 1, 2]
        gi, gj = genuine_pairs(labels)
        self.assertEqual(list(zip(gi.tolist(), gj.tolist())), [(0, 1), (2, 3)])
        ii, _ = impostor_pairs(labels)
        self.assertEqual(ii.size, 10 - 2)
        ii, ij = impostor_pairs(labels, max_pairs=3, rng=make_rng(0))
        self.assertEqual(ii.size, 3)
        self.assertTrue(all(labels[a] != labels[b] for a, b in zip(ii, ij)))

    def test_orthogonal_map(self):
        q = random_orthogonal(make_rng(3), 5)
        np.testing.assert_allclose(q @ q.T, np.eye(5), atol=1e-12)

    def test_domain_maps_are_rotations(self):
        for seed in range(20):
            q = random_orthogonal(make_rng(seed), 6)
            self.assertAlmostEqual(np.linalg.det(q), 1.0, places=10)

    def test_blended_maps_keep_full_rank(self):
        for seed in range(20):
            q = random_orthogonal(make_rng(seed), 6)
            for strength in (0.0, 0.25, 0.5, 0.75, 0.99):
                singular = np.linalg.svd(blended_map(q, strength), compute_uv=False)
                self.assertGreater(singular.min(), 1e-8, (seed, strength))

    def test_shifted_split_has_full_rank(self):
        splits = generate_classification(
            spec(num_classes=10, held_out_classes=[8, 9], input_dim=16, seed=0)
        )
        test_ood = splits.test_ood
        for domain in (1, 2):
            rows = test_ood.x[test_ood.domains == domain]
            singular = np.linalg.svd(rows, compute_uv=False)
            self.assertGreater(singular.min(), 1e-6, domain)


class TestDatasetFiles(unittest.TestCase):
    def test_written_values_read_back_exactly(self):
        splits = generate_classification(spec())
        with tempfile.TemporaryDirectory() as tmp:
            write_dataset(splits, tmp, {"command": "gen-data"})
            loaded = read_dataset(tmp)
        self.assertEqual(loaded.spec, splits.spec)
        for (name, a), (_, b) in zip(splits.items(), loaded.items()):
            np.testing.assert_array_equal(a.x, b.x, err_msg=name)
            np.testing.assert_array_equal(a.labels, b.labels)
            np.testing.assert_array_equal(a.domains, b.domains)


if __name__ == "__main__":
    unittest.main()
