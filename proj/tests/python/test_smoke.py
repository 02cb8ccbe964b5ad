"""Smoke tests of the Python module. Run with the built package on PYTHONPATH."""

import math
import tempfile
import unittest
from pathlib import Path

import twins


def small_data(seed=0):
    spec = twins.SyntheticSpec()
    spec.num_pairs = 200
    spec.seed = seed
    return twins.generate_synthetic(spec)


def small_config(**overrides):
    c = twins.TrainConfig()
    c.dim = 4
    c.epochs = 2
    c.batch_size = 50
    for k, v in overrides.items():
        setattr(c, k, v)
    return c


class SmokeTest(unittest.TestCase):
    def test_generate_and_split(self):
        data = small_data()
        self.assertEqual(len(data.pairs), 200)
        self.assertEqual(data.catalog.num_users, 100)
        split = twins.split_dataset(data.pairs, (0.6, 0.2, 0.2), 1)
        self.assertEqual((len(split.train), len(split.validation), len(split.test)), (120, 40, 40))

    def test_train_predict_and_metrics(self):
        data = small_data()
        split = twins.split_dataset(data.pairs)
        seen = []
        result = twins.train(data.catalog, split.train, split.validation, small_config(), seen.append)
        self.assertEqual([m.epoch for m in seen], [0, 1])
        self.assertEqual(len(result.log), 2)
        scores = twins.predict(data.catalog, result.params, small_config(), split.test)
        self.assertTrue(all(0.0 < s < 1.0 for s in scores))
        labels = twins.labels(split.test)
        self.assertTrue(0.0 <= twins.auc(scores, labels) <= 1.0)
        self.assertAlmostEqual(twins.logloss([0.5] * len(labels), labels), math.log(2), places=12)

    def test_training_is_deterministic(self):
        data = small_data()
        a = twins.train(data.catalog, data.pairs, [], small_config())
        b = twins.train(data.catalog, data.pairs, [], small_config())
        self.assertTrue(a.params == b.params)

    def test_checkpoint_round_trip(self):
        data = small_data()
        config = small_config(variant=twins.Variant.with_co_retrieval)
        params = twins.train(data.catalog, data.pairs, [], config).params
        indices = twins.RetrievalIndices.build(data.catalog)
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "model.ckpt"
            twins.save_checkpoint(path, params, config)
            loaded, loaded_config = twins.load_checkpoint(path)
        self.assertTrue(loaded == params)
        self.assertTrue(loaded_config == config)
        u, a = data.catalog.user_id(3), data.catalog.anchor_id(4)
        self.assertEqual(twins.forward_pair(data.catalog, params, config, u, a, indices),
                         twins.forward_pair(data.catalog, loaded, loaded_config, u, a, indices))

    def test_co_retrieve_budget(self):
        data = small_data()
        indices = twins.RetrievalIndices.build(data.catalog)
        r = twins.co_retrieve(indices, 0, 0, 3)
        self.assertLessEqual(r["pair_budget"], 9)
        self.assertEqual(r["pair_budget"], len(r["user_items"]) * len(r["anchor_items"]))

    def test_errors_map_to_exceptions(self):
        data = small_data()
        params = twins.ModelParams.init(data.catalog, 4)
        with self.assertRaises(twins.InputError):
            twins.forward_pair(data.catalog, params, small_config(), 10**9, 0)
        with self.assertRaises(twins.InputError):
            small_config(dim=0).validate()
        with self.assertRaises(twins.FormatError):
            with tempfile.NamedTemporaryFile(suffix=".ckpt") as f:
                f.write(b"garbage")
                f.flush()
                twins.load_checkpoint(f.name)


if __name__ == "__main__":
    unittest.main()
