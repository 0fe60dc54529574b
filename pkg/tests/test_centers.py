import numpy as np
import pytest

from tricenter.autodiff import Tensor, finite_diff_check
from tricenter.centers import (CenterTable, compute_centers, embed_all,
                               init_trainable_centers, nearest_center_predict,
                               nearest_center_predict_batch)
from tricenter.errors import ContractError
from tricenter.losses import LossHyper, center_triplet_loss
from tricenter.nn import Adam, FeatureExtractor
from tricenter.sampling import DatasetIndex


def identity_extractor(dim):
    fx = FeatureExtractor([dim, dim], rng=np.random.default_rng(0))
    fx.weights[0].data = np.eye(dim)
    fx.biases[0].data = np.zeros(dim)
    return fx


class TestComputeCenters:
    def test_singleton_class_center_equals_embedding(self):
        fx = FeatureExtractor([3, 4], activation="tanh", rng=np.random.default_rng(1))
        features = np.random.default_rng(2).normal(size=(4, 3))
        index = DatasetIndex.from_labels([0, 0, 0, 1])
        table = compute_centers(fx, features, index)
        emb = embed_all(fx, features)
        np.testing.assert_allclose(table.matrix[1], emb[3], atol=1e-12)

    def test_two_sample_midpoint(self):
        fx = identity_extractor(2)
        features = np.array([[0.0, 0.0], [2.0, 2.0], [5.0, 5.0]])
        index = DatasetIndex.from_labels([0, 0, 1])
        table = compute_centers(fx, features, index)
        np.testing.assert_allclose(table.matrix[0], [1.0, 1.0], atol=1e-12)

    def test_large_class_matches_compensated_sum_oracle(self):
        import math
        fx = identity_extractor(1)
        rng = np.random.default_rng(3)
        features = rng.normal(size=(1000, 1))
        index = DatasetIndex.from_labels(np.zeros(1000, dtype=int))
        table = compute_centers(fx, features, index)
        oracle = math.fsum(features[:, 0]) / 1000.0
        assert abs(table.matrix[0, 0] - oracle) < 1e-9

    def test_identity_extractor_on_1d_data_gives_class_means(self):
        fx = identity_extractor(1)
        features = np.array([[1.0], [3.0], [10.0], [20.0], [30.0]])
        index = DatasetIndex.from_labels([0, 0, 1, 1, 1])
        table = compute_centers(fx, features, index)
        np.testing.assert_allclose(table.matrix[:, 0], [2.0, 20.0], atol=1e-12)

    def test_empty_class_rejected(self):
        fx = identity_extractor(2)
        index = DatasetIndex.from_labels([0, 0], n_classes=2)
        with pytest.raises(ContractError):
            compute_centers(fx, np.zeros((2, 2)), index)

    def test_chunked_pass_matches_single_pass(self):
        fx = FeatureExtractor([3, 5], activation="tanh", rng=np.random.default_rng(4))
        features = np.random.default_rng(5).normal(size=(40, 3))
        a = embed_all(fx, features, chunk=7)
        b = embed_all(fx, features, chunk=512)
        np.testing.assert_array_equal(a, b)


class TestTrainableCenters:
    def test_from_computed_copies_rows(self):
        fx = identity_extractor(2)
        features = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 4.0]])
        index = DatasetIndex.from_labels([0, 0, 1])
        source = compute_centers(fx, features, index)
        table = init_trainable_centers(2, 2, init="from_computed", source=source)
        np.testing.assert_array_equal(table.matrix, source.matrix)
        assert table.mode == "trainable"
        assert table.table.requires_grad

    def test_random_init_reproducible(self):
        a = init_trainable_centers(3, 4, init="random", rng=np.random.default_rng(6))
        b = init_trainable_centers(3, 4, init="random", rng=np.random.default_rng(6))
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_adam_step_moves_rows(self):
        table = init_trainable_centers(3, 2, init="random", rng=np.random.default_rng(7))
        before = table.matrix.copy()
        opt = Adam([table.table], lr=0.01)
        anchor = Tensor(np.array([5.0, 5.0]))
        loss = center_triplet_loss(anchor, table.rows([0]).sum(axis=0),
                                   table.rows([1]).sum(axis=0), LossHyper())
        loss.backward()
        opt.step()
        assert not np.array_equal(table.matrix, before)

    def test_from_computed_requires_source(self):
        with pytest.raises(ContractError):
            init_trainable_centers(2, 2, init="from_computed")

    def test_hinge_active_gradient_direction_on_anchor_center(self):
        # d/dc_own ||f_a - c_own|| = (c_own - f_a) / ||c_own - f_a|| when active
        rng = np.random.default_rng(8)
        f_a = rng.normal(size=4)
        c_own = f_a + np.array([2.0, 0.0, 0.0, 0.0])
        c_neg = f_a + np.array([0.0, 2.1, 0.0, 0.0])  # active: 2 + 0.5 - 2.1 > 0

        def loss_fn(c):
            return center_triplet_loss(Tensor(f_a), c, Tensor(c_neg), LossHyper())

        assert finite_diff_check(loss_fn, [c_own]) < 1e-6
        c = Tensor(c_own.copy(), requires_grad=True)
        loss_fn(c).backward()
        direction = (c_own - f_a) / np.linalg.norm(c_own - f_a)
        np.testing.assert_allclose(c.grad, direction, atol=1e-10)


class TestNearestCenter:
    def make_table(self, rows):
        return CenterTable(Tensor(np.array(rows, dtype=float)), mode="computed")

    def test_exact_center_hit(self):
        table = self.make_table([[0, 0], [1, 1], [2, 2], [3, 3]])
        cls, dists = nearest_center_predict(np.array([3.0, 3.0]), table)
        assert cls == 3
        assert dists[3] == 0.0
        assert len(dists) == 4

    def test_tie_breaks_to_smallest_class_id(self):
        table = self.make_table([[9, 9], [1, 0], [5, 5], [9, 0], [-1, 0]])
        cls, _ = nearest_center_predict(np.array([0.0, 0.0]), table)
        assert cls == 1  # classes 1 and 4 are both at distance 1; smallest id wins

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(9)
        table = self.make_table(rng.normal(size=(6, 5)))
        for _ in range(100):
            x = rng.normal(size=5)
            cls, dists = nearest_center_predict(x, table)
            brute = np.array([np.linalg.norm(x - row) for row in table.matrix])
            assert cls == int(np.argmin(brute))
            np.testing.assert_allclose(dists, brute, atol=1e-12)

    def test_batch_path_matches_scalar_path(self):
        rng = np.random.default_rng(10)
        table = self.make_table(rng.normal(size=(4, 3)))
        x = rng.normal(size=(20, 3))
        batch_labels, batch_d = nearest_center_predict_batch(x, table)
        for i in range(20):
            cls, dists = nearest_center_predict(x[i], table)
            assert batch_labels[i] == cls
            np.testing.assert_allclose(batch_d[i], dists, atol=1e-12)

    def test_translation_invariance_of_argmin(self):
        rng = np.random.default_rng(11)
        rows = rng.normal(size=(5, 3))
        x = rng.normal(size=3)
        shift = rng.normal(size=3)
        a, _ = nearest_center_predict(x, self.make_table(rows))
        b, _ = nearest_center_predict(x + shift, self.make_table(rows + shift))
        assert a == b

    def test_scaling_invariance_of_argmin(self):
        rng = np.random.default_rng(12)
        rows = rng.normal(size=(5, 3))
        x = rng.normal(size=3)
        a, _ = nearest_center_predict(x, self.make_table(rows))
        b, _ = nearest_center_predict(3.7 * x, self.make_table(3.7 * rows))
        assert a == b
