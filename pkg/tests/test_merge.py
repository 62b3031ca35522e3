import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_affine, random_net
from rcnet.errors import ValidationError
from rcnet.intervals import IntervalBox
from rcnet.merge import build_selector, merge_two_stages, merge_with_affines
from rcnet.netcore import AffineMap, FeedForwardNet, compose_affine, eval_net
from rcnet.verify import sequential_pipeline_oracle


def random_instance(rng, max_dim=4, max_width=8, max_depth=3, max_reps=4, scale=0.6):
    d0, d1, d2, d3 = (int(rng.integers(1, max_dim + 1)) for _ in range(4))
    g1 = random_net(rng, d1, d1, int(rng.integers(1, max_width + 1)),
                    int(rng.integers(1, max_depth + 1)), scale)
    g2 = random_net(rng, d2, d2, int(rng.integers(1, max_width + 1)),
                    int(rng.integers(1, max_depth + 1)), scale)
    return (random_affine(rng, d1, d0), g1, int(rng.integers(0, max_reps + 1)),
            random_affine(rng, d2, d1), g2, int(rng.integers(0, max_reps + 1)),
            random_affine(rng, d3, d2))


def merged_matches(rng, inst, points=200, tol=1e-8):
    L1, g1, r1, L2, g2, r2, L3 = inst
    d = max(g1.in_dim, g2.in_dim)
    net = merge_with_affines(L1, g1, r1, L2, g2, r2, L3, 1.0, d)
    x = rng.uniform(-1, 1, (points, L1.in_dim))
    ref = sequential_pipeline_oracle(L1, g1, r1, L2, g2, r2, L3, x)
    return net, np.max(np.abs(net(x) - ref)) / max(1.0, np.max(np.abs(ref))) <= tol


class TestSelector:
    def test_example(self):
        out = eval_net(build_selector(1, 5.0), [3.0, -2.0, 1.0])
        assert np.array_equal(out, [3.0, 1.0])

    def test_negative_flag(self):
        out = eval_net(build_selector(1, 5.0), [3.0, -2.0, -1.0])
        assert np.array_equal(out, [-2.0, -1.0])

    def test_equal_branches(self):
        for t in (1.0, -1.0, 3.0):
            assert eval_net(build_selector(2, 4.0), [1.5, -2, 1.5, -2, t])[0] == 1.5

    def test_size(self):
        assert build_selector(3, 2.0).size() == (8, 1, 7, 4)

    @pytest.mark.parametrize("d,M", [(0, 1.0), (1, 0.0), (1, -1.0)])
    def test_rejects(self, d, M):
        with pytest.raises(ValidationError):
            build_selector(d, M)

    @given(st.integers(1, 4), st.floats(0.5, 1e3), st.integers(0, 2**31 - 1))
    def test_exact_branch(self, d, M, seed):
        rng = np.random.default_rng(seed)
        phi = build_selector(d, M)
        n = 2000
        x, y = rng.uniform(-M, M, (n, d)), rng.uniform(-M, M, (n, d))
        t = rng.choice([1.0, -1.0, 2.0, -2.0, 10.0, -10.0], n)
        out = eval_net(phi, np.hstack([x, y, t[:, None]]))
        want = np.where(t[:, None] >= 1, x, y)
        assert np.max(np.abs(out[:, :d] - want)) <= 1e-10 * max(1.0, M)
        assert np.array_equal(out[:, d], t)


class TestTwoStages:
    def test_identity_blocks(self):
        ident = FeedForwardNet((AffineMap([[1.0], [-1.0]], [0, 0]), AffineMap([[1.0, -1.0]], [0.0])))
        phi, cert = merge_two_stages(ident, 2, ident, 3, 1.0)
        z = np.array([0.4, 5.0])
        for _ in range(5):
            z = eval_net(phi, z)
        assert z[0] == pytest.approx(0.4, abs=1e-9) and z[1] == -5.0

    @given(st.integers(0, 2**31 - 1), st.integers(0, 4), st.integers(0, 4))
    def test_sequential_equivalence_and_countdown(self, seed, r1, r2):
        rng = np.random.default_rng(seed)
        g1 = random_net(rng, 2, 2, 4, int(rng.integers(1, 3)), 0.7)
        g2 = random_net(rng, 2, 2, 4, int(rng.integers(1, 3)), 0.7)
        phi, cert = merge_two_stages(g1, r1, g2, r2, 1.0)
        x = rng.uniform(-1, 1, (200, 2))
        z = np.hstack([x, np.full((200, 1), 2.0 * r1 + 1)])
        ref = x
        for k in range(1, r1 + r2 + 1):
            z = eval_net(phi, z)
            ref = eval_net(g1 if k <= r1 else g2, ref)
            assert np.all(z[:, 2] == 2 * (r1 - k) + 1)
        assert np.max(np.abs(z[:, :2] - ref)) <= 1e-9 * max(1.0, np.max(np.abs(ref)))
        assert cert.bound_M >= 100 * (r1 + r2 + 1) and cert.merged_reps == r1 + r2
        assert phi.depth == max(g1.depth, g2.depth) + 1
        assert phi.width <= g1.width + g2.width + 2 * 2 + 2

    def test_bound_dominates_samples(self, rng):
        for _ in range(5):
            g1, g2 = random_net(rng, 2, 2, 5, 2, 1.0), random_net(rng, 2, 2, 5, 1, 1.0)
            r1, r2 = 3, 2
            _, cert = merge_two_stages(g1, r1, g2, r2, 1.0)
            x = rng.uniform(-1, 1, (10_000, 2))
            seen = np.max(np.abs(x))
            h1 = h2 = x
            for k in range(r1 + r2):
                h1, h2 = eval_net(g1, h1), eval_net(g2, h1)
                seen = max(seen, np.max(np.abs(h1)), np.max(np.abs(h2)))
            assert seen <= cert.bound_M

    def test_mismatched_dims(self, rng):
        with pytest.raises(ValidationError):
            merge_two_stages(random_net(rng, 2, 2, 3, 1), 1, random_net(rng, 3, 3, 3, 1), 1, 1.0)

    def test_rejects_non_square(self, rng):
        with pytest.raises(ValidationError):
            merge_two_stages(random_net(rng, 2, 3, 3, 1), 1, random_net(rng, 2, 2, 3, 1), 1, 1.0)


class TestWithAffines:
    def test_identity_pipeline(self, rng):
        ident = FeedForwardNet((AffineMap([[1.0], [-1.0]], [0, 0]), AffineMap([[1.0, -1.0]], [0.0])))
        I = AffineMap.identity(1)
        net = merge_with_affines(I, ident, 1, I, ident, 1, I, 1.0, 1)
        x = rng.uniform(-1, 1, (100, 1))
        assert np.max(np.abs(net(x) - x)) <= 1e-9

    def test_documented_instance(self, rng):
        g1 = random_net(rng, 3, 3, 6, 2, 0.6)
        g2 = random_net(rng, 2, 2, 5, 1, 0.6)
        inst = (random_affine(rng, 3, 2), g1, 2, random_affine(rng, 2, 3), g2, 3,
                random_affine(rng, 1, 2))
        net, ok = merged_matches(rng, inst, points=500)
        assert ok
        assert net.block.size() == (6 + 5 + 6 * 3 + 2, max(2 + 2, 1 + 1), 5, 5)
        assert net.reps == 6

    @given(st.integers(0, 2**31 - 1))
    def test_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng)
        net, ok = merged_matches(rng, inst)
        L1, g1, r1, L2, g2, r2, L3 = inst
        d = max(g1.in_dim, g2.in_dim)
        assert ok
        assert net.block.size() == (g1.width + g2.width + 6 * d + 2,
                                    max(g1.depth + 2, g2.depth + 1), d + 2, d + 2)
        assert net.reps == r1 + r2 + 1

    def test_rejects_small_d(self, rng):
        inst = (random_affine(rng, 3, 1), random_net(rng, 3, 3, 2, 1), 1, random_affine(rng, 2, 3),
                random_net(rng, 2, 2, 2, 1), 1, random_affine(rng, 1, 2))
        with pytest.raises(ValidationError):
            merge_with_affines(*inst, 1.0, 2)

    def test_rejects_broken_chain(self, rng):
        inst = (random_affine(rng, 2, 1), random_net(rng, 3, 3, 2, 1), 1, random_affine(rng, 2, 3),
                random_net(rng, 2, 2, 2, 1), 1, random_affine(rng, 1, 2))
        with pytest.raises(ValidationError):
            merge_with_affines(*inst, 1.0, 3)

    def test_associativity(self, rng):
        g = [random_net(rng, 2, 2, 4, int(rng.integers(1, 3)), 0.6) for _ in range(3)]
        L = [random_affine(rng, 2, 2, 0.8) for _ in range(4)]
        r = [2, 1, 3]
        x = rng.uniform(-1, 1, (300, 2))
        h = L[0](x)
        for i in range(3):
            for _ in range(r[i]):
                h = eval_net(g[i], h)
            h = L[i + 1](h)
        ref = h

        left = merge_with_affines(L[0], g[0], r[0], L[1], g[1], r[1], AffineMap.identity(2), 1.0, 2)
        lhs = merge_with_affines(left.pre, left.block, left.reps, compose_affine(L[2], left.post),
                                 g[2], r[2], L[3], 1.0, left.d_block)
        assert np.max(np.abs(lhs(x) - ref)) <= 1e-7

        # reach of the first stage decides the domain of the nested merge
        inner = L[0](x)
        for _ in range(r[0]):
            inner = eval_net(g[0], inner)
        A = float(np.ceil(np.max(np.abs(L[1](inner))))) + 1
        right = merge_with_affines(AffineMap.identity(2), g[1], r[1], L[2], g[2], r[2], L[3], A, 2)
        rhs = merge_with_affines(L[0], g[0], r[0], compose_affine(right.pre, L[1]), right.block,
                                 right.reps, right.post, 1.0, right.d_block)
        assert np.max(np.abs(rhs(x) - ref)) <= 1e-7
