import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gtvmin.penalties import (GtvPenalty, clip, conjugate_domain_ok, dual_update,
                              parse_penalty, penalty_eval)
from oracles import dual_prox_from_conjugate, prox_penalty

KINDS = ("norm2", "norm1", "quadratic", "quadratic_Q")


def random_pd(rng, d):
    B = rng.standard_normal((d, d))
    return B @ B.T + 0.5 * np.eye(d)


def make(kind, rng, d):
    return GtvPenalty(kind, random_pd(rng, d) if kind == "quadratic_Q" else None)


def test_value_examples():
    v = np.array([3.0, -4.0])
    assert penalty_eval(GtvPenalty("norm2"), v) == 5.0
    assert penalty_eval(GtvPenalty("norm1"), v) == 7.0
    assert penalty_eval(GtvPenalty("quadratic"), v) == 12.5
    Q = np.diag([2.0, 1.0])
    assert penalty_eval(GtvPenalty("quadratic_Q", Q), v) == 0.5 * (18 + 16)


def test_dual_update_examples():
    v = np.array([3.0, 4.0])
    np.testing.assert_allclose(dual_update(GtvPenalty("norm2"), v, 0.5, 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(dual_update(GtvPenalty("norm2"), np.array([0.3, 0.4]), 0.5, 1.0),
                                  [0.3, 0.4])
    np.testing.assert_allclose(dual_update(GtvPenalty("norm1"), np.array([3.0, -0.5]), 0.5, 1.0),
                               [1.0, -0.5])
    np.testing.assert_allclose(dual_update(GtvPenalty("quadratic"), v, 0.5, 0.5), v / 2)


def test_clip_properties():
    assert clip(np.array([0.0, 0.0]), 1.0).tolist() == [0.0, 0.0]
    assert float(clip(-3.0, 2.0)) == -2.0
    batch = np.array([[3.0, 4.0], [0.1, 0.0]])
    np.testing.assert_allclose(clip(batch, np.array([1.0, 1.0])), [[0.6, 0.8], [0.1, 0.0]])


@settings(max_examples=100, deadline=None)
@given(arrays(float, 3, elements=st.floats(-1e3, 1e3)), st.floats(1e-3, 1e3))
def test_clip_is_projection(v, gamma):
    p = clip(v, gamma)
    assert np.linalg.norm(p) <= gamma * (1 + 1e-12)
    # parallel to v and idempotent
    np.testing.assert_allclose(clip(p, gamma), p, rtol=1e-12, atol=1e-12)
    assert np.linalg.norm(np.cross(p, v)) <= 1e-9 * max(1.0, np.linalg.norm(v)) ** 2


@pytest.mark.parametrize("kind", KINDS)
def test_dual_update_matches_conjugate_oracle(kind):
    rng = np.random.default_rng(KINDS.index(kind))
    for _ in range(25):
        d = int(rng.integers(1, 4))
        pen = make(kind, rng, d)
        v = 2 * rng.standard_normal(d)
        sigma, lam_a = rng.uniform(0.1, 2.0), rng.uniform(0.05, 2.0)
        ref = dual_prox_from_conjugate(kind, v, sigma, lam_a, pen.Q)
        np.testing.assert_allclose(pen.dual_update(v, sigma, lam_a), ref, atol=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_moreau_identity(kind):
    # v = prox_{sigma g*}(v) + sigma prox_{g / sigma}(v / sigma) with g = lamA phi
    rng = np.random.default_rng(7 + len(kind))
    for _ in range(25):
        d = int(rng.integers(1, 4))
        pen = make(kind, rng, d)
        v = 2 * rng.standard_normal(d)
        sigma, lam_a = rng.uniform(0.1, 2.0), rng.uniform(0.05, 2.0)
        primal = prox_penalty(kind, v / sigma, lam_a / sigma, pen.Q)
        np.testing.assert_allclose(pen.dual_update(v, sigma, lam_a) + sigma * primal, v, atol=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_batched_update_matches_rowwise(kind):
    rng = np.random.default_rng(3)
    pen = make(kind, rng, 3)
    V = rng.standard_normal((20, 3)) * 3
    lam_a = rng.choice([0.2, 0.5, 1.5], size=20)
    batch = pen.dual_update(V, 0.5, lam_a)
    for e in range(20):
        np.testing.assert_allclose(batch[e], pen.dual_update(V[e], 0.5, lam_a[e]), rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("kind", ("norm2", "norm1"))
def test_norm_update_lands_in_dual_ball(kind):
    rng = np.random.default_rng(4)
    pen = GtvPenalty(kind)
    V = 10 * rng.standard_normal((50, 3))
    lam_a = rng.uniform(0.1, 2.0, size=50)
    ok, val = conjugate_domain_ok(pen, pen.dual_update(V, 0.5, lam_a), lam_a)
    assert ok and val == 0.0
    ok, val = pen.conjugate_domain_ok(np.array([[2.0, 0.0]]), 1.0)
    assert not ok and val == np.inf


def test_conjugate_values_for_quadratics():
    u = np.array([[1.0, 2.0], [0.0, -1.0]])
    ok, val = GtvPenalty("quadratic").conjugate_domain_ok(u, np.array([0.5, 2.0]))
    assert ok and val == pytest.approx(5 / 1.0 + 1 / 4.0)
    Q = np.diag([2.0, 4.0])
    ok, val = GtvPenalty("quadratic_Q", Q).conjugate_domain_ok(u, 1.0)
    assert val == pytest.approx(0.5 * (0.5 + 1.0) + 0.5 * 0.25)


def test_conjugate_value_matches_sup_definition():
    rng = np.random.default_rng(5)
    for _ in range(20):
        Q = random_pd(rng, 2)
        pen = GtvPenalty("quadratic_Q", Q)
        u, lam_a = rng.standard_normal(2), rng.uniform(0.2, 2.0)
        # sup_v u'v - lamA v'Qv/2 is attained at v = Q^-1 u / lamA
        v = np.linalg.solve(Q, u) / lam_a
        expected = u @ v - lam_a * pen.value(v)
        assert pen.conjugate_domain_ok(u, lam_a)[1] == pytest.approx(expected, rel=1e-12)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        GtvPenalty("huber")
    with pytest.raises(ValueError):
        GtvPenalty("quadratic_Q")
    with pytest.raises(ValueError):
        GtvPenalty("quadratic_Q", np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        GtvPenalty("norm2").dual_update(np.ones(2), 0.0, 1.0)
    with pytest.raises(ValueError):
        GtvPenalty("norm2").dual_update(np.ones(2), 0.5, 0.0)
    with pytest.raises(ValueError):
        GtvPenalty("quadratic").dual_norm(np.ones(2))


def test_parse_penalty(tmp_path):
    assert parse_penalty("norm1").kind == "norm1"
    path = tmp_path / "q.txt"
    np.savetxt(path, np.diag([1.0, 3.0]))
    pen = parse_penalty(f"quadratic_q:{path}")
    np.testing.assert_array_equal(pen.Q, np.diag([1.0, 3.0]))
    with pytest.raises(ValueError):
        parse_penalty("quadratic_q:")
    with pytest.raises(ValueError):
        parse_penalty("l3")
