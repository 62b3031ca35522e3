import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcnet.approximator import (LINF_MAX_D, CubePartition, PLTable, base_k_index_map,
                                build_clip_net, build_gap_rcnet, build_linf_rcnet, build_lp_rcnet,
                                build_mid_net, build_phi1, build_phi2, integer_root, linf_delta,
                                lp_delta, clip_level, payload_bits)
from rcnet.errors import ValidationError
from rcnet.netcore import eval_net
from rcnet.targets import abs1, constant, sinpi
from rcnet.verify import measure_errors, trifling_mask


class TestPartition:
    def test_integer_root(self):
        assert [integer_root(r, d) for r, d in [(16, 2), (27, 3), (26, 3), (64, 1), (1, 4)]] == \
            [4, 3, 2, 64, 1]

    def test_single_cube_has_no_slabs(self):
        part = CubePartition(2, 1, 1 / 3)
        assert not part.trifling(np.random.default_rng(0).random((50, 2))).any()

    def test_rejects_delta(self):
        with pytest.raises(ValidationError):
            CubePartition(1, 4, 0.2)

    def test_representatives_in_own_cube(self):
        part = CubePartition(3, 4, 1 / 12)
        assert np.array_equal(part.cube_of(part.representatives()), part.indices())


class TestIndexMap:
    def test_example(self):
        assert base_k_index_map(2, 4)([1.0, 2.0])[0] == pytest.approx(0.3125)

    def test_zero(self):
        assert base_k_index_map(3, 5)([0.0, 0, 0])[0] == 0.0

    @pytest.mark.parametrize("d,K", [(d, K) for d in (1, 2, 3) for K in (1, 2, 5, 8)])
    def test_injective(self, d, K):
        betas = np.array(list(itertools.product(range(K), repeat=d)), dtype=float)
        images = base_k_index_map(d, K)(betas)[:, 0]
        assert len(np.unique(images)) == K ** d


class TestPhi1:
    def test_example(self):
        assert np.allclose(build_phi1(2, 16, 1 / 12)([0.3, 0.6]), [1, 2], atol=1e-12)

    @pytest.mark.parametrize("d,K", [(1, 5), (2, 3), (2, 5), (3, 3)])
    def test_exact_on_cubes(self, d, K):
        r = K ** d
        delta = 1 / (3 * K)
        net = build_phi1(d, r, delta)
        part = CubePartition(d, K, delta)
        rng = np.random.default_rng(d * 10 + K)
        betas = part.indices()
        for beta in betas[:: max(1, len(betas) // 12)]:
            hi = (beta + 1) / K - delta * (beta <= K - 2)
            x = beta / K + rng.random((100, d)) * (hi - beta / K)
            assert np.max(np.abs(net(x) - beta)) <= 1e-8
        assert np.max(np.abs(net(part.representatives()) - betas)) <= 1e-8
        assert net.reps == r - 1 and net.block.size() == (9 * d, 1, 5 * d, 5 * d)


class TestTable:
    @pytest.mark.parametrize("f", [abs1(1), abs1(2), sinpi(1), sinpi(2), constant(2, 0.4)])
    def test_invariants(self, f):
        K = 4
        t = PLTable(f, K)
        part = CubePartition(f.d, K, 1 / (3 * K))
        from rcnet.approximator import node_index
        j = node_index(part.indices(), K)
        assert np.allclose(t.values[j], f.shifted(part.representatives()), atol=1e-12)
        assert t.values[-1] == pytest.approx(f.shifted(np.ones((1, f.d)))[0])
        root = math.sqrt(f.d)
        assert t.max_step <= max(f.omega(root / K), f.omega(root) / K) + 1e-12

    def test_phi2_bound(self):
        f = abs1(1)
        t = PLTable(f, 4)
        phi2 = build_phi2(t, 4)
        betas = np.arange(4) / 4
        got = phi2((np.arange(4) / 8)[:, None])[:, 0]
        assert np.max(np.abs(got - f.shifted(betas[:, None]))) <= f.omega(1 / 4) + 1e-12
        want = t.epsilon * np.floor(t.values[[0, 1, 2, 3]] / t.epsilon)
        assert np.allclose(got, want, atol=1e-12)

    def test_phi2_constant(self):
        f = constant(1, 0.7)
        t = PLTable(f, 3)
        got = build_phi2(t, 3)((np.arange(3) / 6)[:, None])[:, 0]
        assert np.allclose(got, f.shifted(np.zeros((3, 1))), atol=1e-12)


def gap_errors(f, r):
    net = build_gap_rcnet(f, f.d, r)
    K = integer_root(r, f.d)
    return net, measure_errors(net, f, K=K, delta=1 / (3 * K))


class TestGap:
    @pytest.mark.parametrize("d,r", [(1, 4), (1, 16), (2, 16)])
    def test_sizes(self, d, r):
        net = build_gap_rcnet(abs1(d), d, r)
        assert net.block.size() == (39 * d + 24, 3, 5 * d + 3, 5 * d + 3)
        assert net.reps == 3 * r - 1

    @pytest.mark.parametrize("f,r", [(abs1(1), 4), (abs1(1), 16), (sinpi(1), 4), (sinpi(1), 16),
                                     (abs1(2), 16), (sinpi(2), 16), (constant(1, 0.3), 4),
                                     (constant(2, -0.4), 16)])
    def test_bound(self, f, r):
        _, rep = gap_errors(f, r)
        assert rep.sup_error_off_trifling <= 5 * math.sqrt(f.d) * f.omega(r ** (-1 / f.d)) + 1e-12

    def test_constant_exact(self):
        _, rep = gap_errors(constant(1, 0.3), 9)
        assert rep.sup_error_off_trifling <= 1e-12

    def test_decay(self):
        errs = [gap_errors(abs1(1), r)[1].sup_error_off_trifling for r in (4, 16, 64)]
        assert errs[0] >= errs[1] >= errs[2]

    def test_delta_validation(self):
        with pytest.raises(ValidationError):
            build_gap_rcnet(abs1(1), 1, 4, 0.5)
        with pytest.raises(ValidationError):
            build_gap_rcnet(abs1(2), 1, 4)


class TestClipAndMid:
    def test_clip(self):
        g = build_clip_net(2.0)
        assert [eval_net(g, [x])[0] for x in (3.0, 0.0, -4.0, 1.5)] == [2.0, 0.0, -2.0, 1.5]
        assert g.size() == (4, 2, 1, 1)

    def test_clip_rejects(self):
        with pytest.raises(ValidationError):
            build_clip_net(0.0)

    def test_mid_examples(self):
        mid = build_mid_net()
        assert eval_net(mid, [1.0, 3.0, 2.0])[0] == 2.0
        assert mid.width <= 14 and mid.depth == 2

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    def test_mid_duplicate(self, a, b):
        assert eval_net(build_mid_net(), [a, a, b])[0] == pytest.approx(a, abs=1e-9 * (1 + abs(a) + abs(b)))

    def test_mid_random(self):
        x = np.random.default_rng(0).normal(size=(100_000, 3))
        assert np.max(np.abs(eval_net(build_mid_net(), x)[:, 0] - np.median(x, axis=1))) <= 1e-12


class TestLp:
    def test_sizes_and_bound(self):
        f = abs1(1)
        net = build_lp_rcnet(f, 1, 8, 2.0)
        assert net.block.size() == (117, 5, 10, 10) and net.reps == 25
        rep = measure_errors(net, f, p=2.0, samples=20_000)
        assert rep.lp_error <= 6 * f.omega(1 / 8)

    def test_constant(self):
        net = build_lp_rcnet(constant(1, 0.25), 1, 4, 1.0)
        rep = measure_errors(net, constant(1, 0.25), p=1.0, samples=5000)
        assert rep.lp_error <= 1e-12

    def test_delta_condition(self):
        f = abs1(1)
        for r, p in [(8, 1.0), (8, 2.0), (27, 2.0)]:
            M = clip_level(f)
            delta = lp_delta(f, r, p, M)
            K = integer_root(r, 1)
            assert K * delta * (2 * M) ** p <= f.omega(r ** -1.0) ** p * (1 + 1e-12)
            assert delta <= 1 / (3 * K)

    def test_rejects_p(self):
        with pytest.raises(ValidationError):
            build_lp_rcnet(abs1(1), 1, 4, 0.5)


class TestLinf:
    def test_sizes(self):
        net = build_linf_rcnet(abs1(1), 1, 4)
        assert net.block.size() == (4096, 5, 26, 26) and net.reps == 13

    def test_bound_everywhere(self):
        f = abs1(1)
        rep = measure_errors(build_linf_rcnet(f, 1, 8), f)
        assert rep.sup_error_full <= 6 * f.omega(1 / 8)

    def test_constant(self):
        # exact up to binary64 rounding in the selector layers (they scale by M ~ 2^11)
        f = constant(1, 0.6)
        assert measure_errors(build_linf_rcnet(f, 1, 4), f).sup_error_full <= 1e-10

    def test_mid_extension_preserves_bound(self):
        # full-grid error after the mid steps <= off-slab error before + d omega(delta)
        f = sinpi(1)
        r = 8
        delta = linf_delta(f, r)
        gap = build_gap_rcnet(f, 1, r, delta, A=2.0)
        eps = measure_errors(gap, f, K=r, delta=delta).sup_error_off_trifling
        full = measure_errors(build_linf_rcnet(f, 1, r), f).sup_error_full
        assert full <= eps + f.omega(delta) + 1e-12

    def test_d2_structure(self):
        net = build_linf_rcnet(abs1(2), 2, 4)
        assert net.d_block == 3 ** 2 * 14 - 1 and net.reps == 3 * 4 + 3
        assert net.block.depth == 3 + 4

    def test_cap(self):
        assert LINF_MAX_D == 2
        with pytest.raises(ValidationError, match="width"):
            build_linf_rcnet(abs1(3), 3, 8)
