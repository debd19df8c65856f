"""Class-name stripping, pooling, projection and the mutual-kNN score."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desceval import (
    AlignmentConfig,
    ConfigError,
    DescriptorFormatError,
    DescriptorSet,
    EmbeddingMatrix,
    LabelVector,
    ShapeMismatchError,
    choose_k,
    dino_align,
    global_pool,
    l2_normalize_rows,
    mutual_knn_alignment,
    semantic_projection,
    strip_class_names,
)
from helpers import matrix_from, oracle_mutual_knn, random_unit_matrix


def unit_circle(angles_deg) -> EmbeddingMatrix:
    a = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    return matrix_from(np.stack([np.cos(a), np.sin(a)], axis=1), normalized=True)


class TestStripClassNames:
    def _one(self, cls, desc):
        dset = DescriptorSet([cls], {cls: [desc]})
        return strip_class_names(dset).descriptors_by_class[cls]

    def test_leading_name_with_connector(self):
        assert self._one("laysan albatross", "laysan albatross, which is a large seabird") == [
            "large seabird"
        ]

    def test_untouched_descriptor(self):
        assert self._one("laysan albatross", "a large seabird with white plumage") == [
            "a large seabird with white plumage"
        ]

    def test_hyphenated_compound_survives(self):
        # standalone "Cat" goes, "cat-like" stays (word-boundary rule)
        assert self._one("cat", "Cat, a cat-like animal") == ["a cat-like animal"]

    def test_substring_inside_word_survives(self):
        assert self._one("cat", "a catlike animal") == ["a catlike animal"]

    def test_case_and_separator_variants(self):
        assert self._one("laysan_albatross", "the Laysan-Albatross in flight") == ["the in flight"]

    def test_mid_string_removal_collapses_spaces(self):
        assert self._one("sparrow", "a small sparrow perched") == ["a small perched"]

    def test_empty_class_errors(self):
        dset = DescriptorSet(["cat"], {"cat": ["cat", "Cat,"]})
        with pytest.raises(DescriptorFormatError, match="cat"):
            strip_class_names(dset)

    def test_empty_descriptor_dropped_not_fatal(self):
        dset = DescriptorSet(["cat"], {"cat": ["cat", "a whiskered pet"]})
        assert strip_class_names(dset).descriptors_by_class["cat"] == ["a whiskered pet"]


class TestGlobalPool:
    def test_dedup_keeps_first(self):
        dset = DescriptorSet(["c1", "c2"], {"c1": ["a", "b"], "c2": ["b"]})
        pool = global_pool(dset, dedup=True)
        assert pool.descriptors == ["a", "b"]
        assert pool.origins == [("c1", 0), ("c1", 1)]

    def test_no_dedup_keeps_multiset(self):
        dset = DescriptorSet(["c1", "c2"], {"c1": ["a", "b"], "c2": ["b"]})
        pool = global_pool(dset, dedup=False)
        assert pool.descriptors == ["a", "b", "b"]
        assert pool.origins == [("c1", 0), ("c1", 1), ("c2", 0)]


class TestSemanticProjection:
    def test_matching_concept_scores_one(self):
        rng = np.random.default_rng(21)
        images = random_unit_matrix(rng, 5, 8)
        concepts = EmbeddingMatrix(images.data[[0]].copy(), normalized=True)
        s = semantic_projection(images, concepts)
        assert abs(s.data[0, 0] - 1.0) < 1e-6

    def test_orthogonal_scores_zero(self):
        images = matrix_from([[1.0, 0.0]], normalized=True)
        concepts = matrix_from([[0.0, 1.0]], normalized=True)
        assert semantic_projection(images, concepts).data[0, 0] == 0.0

    def test_hand_case(self):
        images = matrix_from([[1.0, 0.0], [0.0, 1.0]], normalized=True)
        h = np.sqrt(0.5)
        concepts = matrix_from([[1.0, 0.0], [h, h]], normalized=True)
        s = semantic_projection(images, concepts)
        assert np.allclose(s.data, [[1.0, 0.7071], [0.0, 0.7071]], atol=1e-4)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            semantic_projection(
                matrix_from([[1.0, 0.0]]), matrix_from([[1.0, 0.0, 0.0]])
            )


class TestMutualKnn:
    def test_identity_is_one(self):
        m = random_unit_matrix(np.random.default_rng(30), 20, 6)
        assert mutual_knn_alignment(m, m, 3) == 1.0

    def test_half_overlap_hand_case(self):
        # A pairs 0-1 and 2-3; B chains 0->1, 1->2, 2->1, 3->2: overlap at
        # items 0 and 3 only, so the 1-NN score is exactly 0.5
        a = unit_circle([0, 5, 90, 95])
        b = unit_circle([0, 40, 44, 100])
        score = mutual_knn_alignment(a, b, 1)
        assert score == 0.5
        assert score == oracle_mutual_knn(a.data, b.data, 1)

    def test_disjoint_neighbors_zero(self):
        # A pairs 0-1 / 2-3, B pairs 0-2 / 1-3: no shared neighbors at k=1
        a = unit_circle([0, 5, 90, 95])
        b = unit_circle([0, 90, 4, 94])
        score = mutual_knn_alignment(a, b, 1)
        assert score == 0.0
        assert score == oracle_mutual_knn(a.data, b.data, 1)

    def test_row_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mutual_knn_alignment(
                random_unit_matrix(np.random.default_rng(0), 5, 4),
                random_unit_matrix(np.random.default_rng(0), 6, 4),
                1,
            )

    def test_k_range(self):
        m = random_unit_matrix(np.random.default_rng(0), 5, 4)
        with pytest.raises(ConfigError):
            mutual_knn_alignment(m, m, 5)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_score_range_and_identity_property(self, seed):
        rng = np.random.default_rng(seed)
        rows, dims = int(rng.integers(4, 30)), int(rng.integers(2, 10))
        k = int(rng.integers(1, rows))
        a = random_unit_matrix(rng, rows, dims)
        b = random_unit_matrix(rng, rows, dims)
        score = mutual_knn_alignment(a, b, k)
        assert 0.0 <= score <= 1.0
        assert mutual_knn_alignment(a, a, k) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetry_property(self, seed):
        rng = np.random.default_rng(seed)
        rows, dims = int(rng.integers(4, 25)), int(rng.integers(2, 8))
        k = int(rng.integers(1, rows))
        a = random_unit_matrix(rng, rows, dims)
        b = random_unit_matrix(rng, rows, dims)
        assert mutual_knn_alignment(a, b, k) == mutual_knn_alignment(b, a, k)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_joint_permutation_property(self, seed):
        rng = np.random.default_rng(seed)
        rows, dims = int(rng.integers(4, 25)), int(rng.integers(2, 8))
        k = int(rng.integers(1, rows))
        a = random_unit_matrix(rng, rows, dims)
        b = random_unit_matrix(rng, rows, dims)
        perm = rng.permutation(rows)
        ap = EmbeddingMatrix(a.data[perm].copy(), normalized=True)
        bp = EmbeddingMatrix(b.data[perm].copy(), normalized=True)
        assert mutual_knn_alignment(a, b, k) == mutual_knn_alignment(ap, bp, k)


class TestChooseK:
    def test_even_division(self):
        labels = LabelVector(np.repeat(np.arange(10), 10), num_classes=10)
        assert choose_k(labels) == 10

    def test_round_half_up(self):
        # 5794 images over 200 classes: 28.97 rounds to 29
        labels = LabelVector(np.repeat(np.arange(200), 29)[:5794], num_classes=200)
        assert labels.count == 5794
        assert choose_k(labels) == 29

    def test_clamped_to_rows_minus_one(self):
        labels = LabelVector(np.zeros(3, dtype=np.int64), num_classes=1)
        assert choose_k(labels) == 2


class TestDinoAlign:
    @staticmethod
    def clustered(rng, n_clusters=5, per_cluster=10, dims=16, noise=0.05):
        centers = rng.standard_normal((n_clusters, dims))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        points = np.repeat(centers, per_cluster, axis=0)
        points = points + noise * rng.standard_normal(points.shape)
        return l2_normalize_rows(matrix_from(points)), centers

    def test_identity_concepts_and_reference(self):
        # concepts = the images themselves and reference = the images: with
        # k spanning each tight cluster, both spaces agree on every
        # neighborhood and the score is exactly 1
        rng = np.random.default_rng(40)
        images, _ = self.clustered(rng, noise=0.03)
        cfg = AlignmentConfig(k=9)
        result = dino_align(images, images, images, cfg)
        assert result.score == 1.0
        assert result.details["pool_size"] == images.rows

    def test_centroids_beat_random_concepts(self):
        rng = np.random.default_rng(41)
        images, centers = self.clustered(rng)
        reference, _ = self.clustered(np.random.default_rng(41), noise=0.05)
        centroid_y = l2_normalize_rows(matrix_from(centers))
        random_y = random_unit_matrix(rng, centers.shape[0], centers.shape[1])
        cfg = AlignmentConfig(k=5)
        good = dino_align(images, centroid_y, reference, cfg).score
        bad = dino_align(images, random_y, reference, cfg).score
        assert good > bad

    def test_row_mismatch(self):
        rng = np.random.default_rng(42)
        with pytest.raises(ShapeMismatchError):
            dino_align(
                random_unit_matrix(rng, 10, 4),
                random_unit_matrix(rng, 3, 4),
                random_unit_matrix(rng, 9, 4),
                AlignmentConfig(k=2),
            )

    def test_k_too_large(self):
        rng = np.random.default_rng(43)
        m = random_unit_matrix(rng, 6, 4)
        with pytest.raises(ConfigError):
            dino_align(m, m, m, AlignmentConfig(k=6))

    def test_config_invariant(self):
        with pytest.raises(ConfigError):
            AlignmentConfig(k=0)

    def test_uniform_concept_scaling_invariance(self):
        rng = np.random.default_rng(44)
        images, centers = self.clustered(rng)
        reference, _ = self.clustered(np.random.default_rng(44))
        y = matrix_from(centers)
        y_scaled = matrix_from(3.7 * centers)
        cfg = AlignmentConfig(k=5, normalize_projection_rows=True)
        s1 = dino_align(images, y, reference, cfg).score
        s2 = dino_align(images, y_scaled, reference, cfg).score
        assert abs(s1 - s2) <= 1e-6
