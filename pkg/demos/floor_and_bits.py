"""Floor, bit extraction and point fitting with one shared block each.

Run: python3 demos/floor_and_bits.py
"""
import numpy as np

from rcnet import (FloorNetSpec, PointFitSpec, build_floor_rcnet, build_point_fit_rcnet,
                   extract_prefix_sum)
from rcnet.bits import BitString

# A floor net: k on every plateau [k, k + 1 - delta], built from one 9-unit block.
net = build_floor_rcnet(FloorNetSpec(n=4, m=4, delta=0.25))
xs = np.array([0.0, 0.7, 1.2, 2.74, 3.0, 3.99])
print("floor net block size (width, depth, in, out):", net.block.size(), "reps:", net.reps)
for x, y in zip(xs, net(xs[:, None])[:, 0]):
    print(f"  floor({x:5.2f}) -> {y:.12f}")

# Bit extraction: the same block peels one bit per application.
bits = BitString((1, 0, 1, 1, 0, 1))
print("\nprefix sums of", bits.bits)
print("  ", [round(extract_prefix_sum(len(bits), k, bits), 12) for k in range(len(bits) + 1)])

# Point fitting: values at 0..n-1 matched to within epsilon.
values = (0.1, 0.35, 0.2, 0.4, 0.6, 0.5)
fit = build_point_fit_rcnet(PointFitSpec(values, epsilon=0.25, m=len(values)))
got = fit(np.arange(len(values), dtype=float)[:, None])[:, 0]
print("\npoint fit with epsilon 0.25")
for k, (v, g) in enumerate(zip(values, got)):
    print(f"  k={k}: target {v:.2f}  net {g:.4f}  |diff| {abs(v - g):.4f}")
