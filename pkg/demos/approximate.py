"""Approximate a 1-Lipschitz target in three senses and measure the errors.

Run: python3 demos/approximate.py
"""
import math

from rcnet import build_gap_rcnet, build_linf_rcnet, build_lp_rcnet, measure_errors
from rcnet.approximator import gap_plan
from rcnet.targets import abs1

f = abs1(1)
for r in (4, 16, 64):
    plan = gap_plan(f, r)
    net = build_gap_rcnet(f, 1, r)
    rep = measure_errors(net, f, K=plan.K, delta=plan.delta, grid_size=4001)
    print(f"gap net r={r:3d}: block {net.block.size()}, reps {net.reps}, "
          f"sup off slabs {rep.sup_error_off_trifling:.4f}, full {rep.sup_error_full:.4f}, "
          f"bound {5 * r ** -1.0:.4f}")

for r in (8, 27):
    net = build_lp_rcnet(f, 1, r, 2.0)
    rep = measure_errors(net, f, p=2.0, samples=100_000)
    print(f"L2 net  r={r:3d}: block {net.block.size()}, L2 error {rep.lp_error:.4f}, "
          f"bound {6 / r:.4f}")

for r in (4, 8, 27):
    net = build_linf_rcnet(f, 1, r)
    rep = measure_errors(net, f, grid_size=4001)
    print(f"Linf net r={r:3d}: width {net.block.width}, depth {net.block.depth}, "
          f"dims {net.d_block}, sup error {rep.sup_error_full:.4f}, bound {6 / r:.4f}")

print("the d=2 gap net at r=16:", end=" ")
f2 = abs1(2)
plan = gap_plan(f2, 16)
rep = measure_errors(build_gap_rcnet(f2, 2, 16), f2, K=plan.K, delta=plan.delta, grid_size=161)
print(f"sup off slabs {rep.sup_error_off_trifling:.4f} <= {5 * math.sqrt(2) / 4:.4f}")
