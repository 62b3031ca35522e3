"""Fold L3 o g2^r2 o L2 o g1^r1 o L1 into a single repeated block.

Run: python3 demos/merge_pipeline.py
"""
import numpy as np

from rcnet import AffineMap, FeedForwardNet, merge_with_affines, sequential_pipeline_oracle

rng = np.random.default_rng(0)


def affine(out_dim, in_dim):
    return AffineMap(rng.normal(scale=0.6, size=(out_dim, in_dim)), rng.normal(scale=0.3, size=out_dim))


g1 = FeedForwardNet((affine(5, 2), affine(2, 5)))
g2 = FeedForwardNet((affine(4, 3), affine(4, 4), affine(3, 4)))
L1, L2, L3 = affine(2, 2), affine(3, 2), affine(1, 3)

net = merge_with_affines(L1, g1, 3, L2, g2, 2, L3, A=1.0, d=3)
print("merged block size:", net.block.size(), "reps:", net.reps)
print("expected width:", g1.width + g2.width + 6 * 3 + 2,
      "expected depth:", max(g1.depth + 2, g2.depth + 1))
print("selector bound M:", net.certificate.bound_M, "required bits:", net.required_bits)

x = rng.uniform(-1, 1, (1000, 2))
diff = np.abs(net(x) - sequential_pipeline_oracle(L1, g1, 3, L2, g2, 2, L3, x))
print(f"max difference from stage-by-stage evaluation on 1000 points: {diff.max():.2e}")
