"""Retrieval metrics: hand cases, oracle equivalence, invariances."""

import numpy as np
import pytest

from attnpyr.errors import DegenerateVectorError, ShapeError
from attnpyr.evaluation import (
    EvalReport,
    RetrievalProtocol,
    distance_matrix,
    evaluate,
    evaluate_bruteforce_oracle,
)

NO_FILTER = RetrievalProtocol(metric="euclidean", same_camera_filter=False)


def dist_oracle(q, g, metric):
    """Scalar-loop distances."""
    out = np.zeros((len(q), len(g)))
    for i in range(len(q)):
        for j in range(len(g)):
            if metric == "euclidean":
                out[i, j] = np.sqrt(sum((q[i, d] - g[j, d]) ** 2 for d in range(q.shape[1])))
            else:
                num = sum(q[i, d] * g[j, d] for d in range(q.shape[1]))
                na = np.sqrt(sum(v * v for v in q[i]))
                nb = np.sqrt(sum(v * v for v in g[j]))
                out[i, j] = 1 - num / (na * nb)
    return out


class TestDistanceMatrix:
    def test_identical_vectors_cosine_zero(self):
        v = np.array([[1.0, 2.0, 3.0]])
        assert distance_matrix(v, v, "cosine")[0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_unit_vectors_cosine_one(self):
        q = np.array([[1.0, 0.0]])
        g = np.array([[0.0, 1.0]])
        assert distance_matrix(q, g, "cosine")[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_random_vs_scalar_oracle(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(3, 6))
        g = rng.normal(size=(4, 6))
        for metric in ("euclidean", "cosine"):
            np.testing.assert_allclose(
                distance_matrix(q, g, metric), dist_oracle(q, g, metric), atol=1e-12
            )

    def test_zero_norm_cosine_rejected(self):
        q = np.zeros((1, 3))
        g = np.ones((1, 3))
        with pytest.raises(DegenerateVectorError):
            distance_matrix(q, g, "cosine")

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            distance_matrix(np.ones((1, 3)), np.ones((1, 4)), "euclidean")


def _ids(*vals):
    return np.array(vals)


class TestHandCases:
    def test_correct_at_rank_two(self):
        # 1 query, 3 gallery, the only correct item lands at rank 2
        dist = np.array([[0.1, 0.2, 0.3]])
        q_ids, g_ids = _ids(7), _ids(1, 7, 2)
        rep = evaluate(dist, q_ids, g_ids, _ids(0), _ids(1, 1, 1), NO_FILTER)
        assert rep.map == pytest.approx(0.5, abs=0)
        assert rep.cmc_at(1) == 0.0
        assert rep.cmc_at(2) == 1.0

    def test_correct_at_ranks_one_and_three(self):
        dist = np.array([[0.1, 0.2, 0.3]])
        q_ids, g_ids = _ids(7), _ids(7, 1, 7)
        rep = evaluate(dist, q_ids, g_ids, _ids(0), _ids(1, 1, 1), NO_FILTER)
        assert rep.map == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-15)
        assert rep.map == pytest.approx(5.0 / 6.0, abs=1e-15)

    def test_all_gallery_correct(self):
        dist = np.array([[0.3, 0.1, 0.2]])
        rep = evaluate(dist, _ids(7), _ids(7, 7, 7), _ids(0), _ids(1, 1, 1), NO_FILTER)
        assert rep.map == 1.0
        assert rep.cmc_at(1) == 1.0

    def test_single_gallery_item(self):
        for gid, expected in ((7, 1.0), (3, None)):
            rep = evaluate(
                np.array([[0.5]]), _ids(7), _ids(gid), _ids(0), _ids(1), NO_FILTER
            )
            oracle = evaluate_bruteforce_oracle(
                np.array([[0.5]]), _ids(7), _ids(gid), _ids(0), _ids(1), NO_FILTER
            )
            if expected is None:
                assert rep.excluded == [0] and oracle.excluded == [0]
            else:
                assert rep.map == oracle.map == expected

    def test_camera_filter_drops_same_id_same_cam(self):
        # nearest gallery item shares id AND camera -> dropped, match at
        # the next rank of the filtered list
        dist = np.array([[0.1, 0.2, 0.3]])
        q_ids, g_ids = _ids(7), _ids(7, 1, 7)
        q_cams, g_cams = _ids(0), _ids(0, 1, 1)
        proto = RetrievalProtocol(metric="euclidean", same_camera_filter=True)
        rep = evaluate(dist, q_ids, g_ids, q_cams, g_cams, proto)
        assert rep.cmc_at(1) == 0.0
        assert rep.cmc_at(2) == 1.0
        assert rep.map == pytest.approx(0.5, abs=0)

    def test_query_with_no_valid_match_excluded_and_reported(self):
        dist = np.array([[0.1], [0.2]])
        q_ids, g_ids = _ids(1, 2), _ids(1)
        q_cams, g_cams = _ids(0, 0), _ids(0)
        proto = RetrievalProtocol(metric="euclidean", same_camera_filter=True)
        rep = evaluate(dist, q_ids, g_ids, q_cams, g_cams, proto)
        assert rep.excluded == [0, 1]  # query 0 filtered out, query 1 wrong id
        assert rep.map == 0.0


def random_instance(rng):
    nq = int(rng.integers(1, 6))
    ng = int(rng.integers(2, 21))
    dist = np.round(rng.uniform(0, 1, size=(nq, ng)), 2)  # rounding makes ties
    q_ids = rng.integers(0, 4, size=nq)
    g_ids = rng.integers(0, 4, size=ng)
    q_cams = rng.integers(0, 2, size=nq)
    g_cams = rng.integers(0, 2, size=ng)
    proto = RetrievalProtocol(
        metric="euclidean", same_camera_filter=bool(rng.integers(0, 2))
    )
    return dist, q_ids, g_ids, q_cams, g_cams, proto


def assert_reports_match(a: EvalReport, b: EvalReport):
    assert a.excluded == b.excluded
    np.testing.assert_allclose(a.map, b.map, atol=1e-12)
    np.testing.assert_allclose(a.cmc, b.cmc, atol=1e-12)
    mask = np.isfinite(a.aps)
    assert np.array_equal(mask, np.isfinite(b.aps))
    np.testing.assert_allclose(a.aps[mask], b.aps[mask], atol=1e-12)


class TestOracleEquivalence:
    def test_randomized_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            args = random_instance(rng)
            assert_reports_match(evaluate(*args), evaluate_bruteforce_oracle(*args))

    def test_adversarial_tie_fixture(self):
        # duplicate distances with distinct indices; both implementations
        # must break ties toward the lower gallery index
        dist = np.array([[0.5, 0.5, 0.5, 0.5], [0.2, 0.2, 0.1, 0.1]])
        q_ids = _ids(1, 2)
        g_ids = _ids(2, 1, 1, 2)
        q_cams = _ids(0, 0)
        g_cams = _ids(1, 1, 0, 0)
        for flt in (True, False):
            proto = RetrievalProtocol(metric="euclidean", same_camera_filter=flt)
            a = evaluate(dist, q_ids, g_ids, q_cams, g_cams, proto)
            b = evaluate_bruteforce_oracle(dist, q_ids, g_ids, q_cams, g_cams, proto)
            assert_reports_match(a, b)
        # tie order by index puts both queries' first correct match at rank 2
        rep = evaluate(dist, q_ids, g_ids, q_cams, g_cams, NO_FILTER)
        assert rep.cmc_at(1) == 0.0
        assert rep.cmc_at(2) == 1.0


class TestInvariants:
    def test_cmc_monotone_and_saturates(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            dist, q_ids, g_ids, q_cams, g_cams, proto = random_instance(rng)
            g_ids[0] = q_ids[0]  # at least one query can match
            rep = evaluate(dist, q_ids, g_ids, q_cams, g_cams, NO_FILTER)
            assert np.all(np.diff(rep.cmc) >= -1e-15)
            if not rep.excluded:
                assert rep.cmc[-1] == pytest.approx(1.0)

    def test_gallery_permutation_invariance_distinct_distances(self):
        rng = np.random.default_rng(2)
        nq, ng = 4, 12
        dist = rng.permutation(nq * ng).reshape(nq, ng) / (nq * ng)
        g_ids = rng.integers(0, 3, size=ng)
        q_ids = rng.integers(0, 3, size=nq)
        g_ids[:3] = q_ids[:3]
        rep = evaluate(dist, q_ids, g_ids, np.zeros(nq), np.ones(ng), NO_FILTER)
        perm = rng.permutation(ng)
        rep_p = evaluate(dist[:, perm], q_ids, g_ids[perm], np.zeros(nq),
                         np.ones(ng), NO_FILTER)
        assert rep_p.map == pytest.approx(rep.map, abs=1e-12)
        np.testing.assert_allclose(rep_p.cmc, rep.cmc, atol=1e-12)

    def test_cosine_scale_invariance(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(3, 5))
        g = rng.normal(size=(6, 5))
        ids = (_ids(0, 1, 2), rng.integers(0, 3, size=6))
        cams = (np.zeros(3), np.ones(6))
        base = evaluate(distance_matrix(q, g, "cosine"), ids[0], ids[1], *cams,
                        RetrievalProtocol(metric="cosine"))
        scaled = evaluate(distance_matrix(3.7 * q, 3.7 * g, "cosine"), ids[0], ids[1],
                          *cams, RetrievalProtocol(metric="cosine"))
        assert scaled.map == pytest.approx(base.map, abs=1e-12)
        np.testing.assert_allclose(scaled.cmc, base.cmc, atol=1e-12)

    def test_euclidean_translation_invariance(self):
        rng = np.random.default_rng(4)
        q = rng.normal(size=(3, 5))
        g = rng.normal(size=(6, 5))
        shift = rng.normal(size=5)
        ids = (_ids(0, 1, 2), rng.integers(0, 3, size=6))
        cams = (np.zeros(3), np.ones(6))
        base = evaluate(distance_matrix(q, g, "euclidean"), ids[0], ids[1], *cams, NO_FILTER)
        moved = evaluate(distance_matrix(q + shift, g + shift, "euclidean"),
                         ids[0], ids[1], *cams, NO_FILTER)
        assert moved.map == pytest.approx(base.map, abs=1e-12)
        np.testing.assert_allclose(moved.cmc, base.cmc, atol=1e-12)

    def test_json_dict_shape(self):
        dist = np.array([[0.1, 0.2, 0.3]])
        rep = evaluate(dist, _ids(7), _ids(7, 1, 7), _ids(0), _ids(1, 1, 1), NO_FILTER)
        d = rep.to_json_dict()
        assert set(d) == {"map", "cmc", "cmc_ranks", "excluded_queries"}
        assert len(d["cmc"]) == len(d["cmc_ranks"])
