"""Pareto frontier over total training memory and compute overhead.

Sweeps sparsity x precision x microbatch x checkpointing on WRN-28-2 and
marks the points no other configuration beats on both axes.  The classic
progression (FP16 -> +checkpointing -> +microbatching -> +sparsity) walks
down the frontier from ~400 MB to under 3 MB.
"""

from trainmem import CheckpointStrategy, build_wrn
from trainmem.numerics import NumericFormat
from trainmem.pareto import SweepSpec, sweep

if __name__ == "__main__":
    g = build_wrn(28, 2, 10)
    spec = SweepSpec(
        densities=[1.0, 0.3, 0.2, 0.1],
        precisions=[NumericFormat.FP32, NumericFormat.FP16],
        microbatches=[100, 10, 4],
        strategies=[CheckpointStrategy.parse(s) for s in ("none", "residual_star:2")],
        minibatch=100,
    )
    points = sweep(g, spec)
    print(f"{len(points)} configurations, {sum(p.on_frontier for p in points)} on the frontier\n")
    print(f"{'density':>8s} {'prec':>5s} {'micro':>6s} {'strategy':>16s} "
          f"{'total':>10s} {'ratio':>6s}  frontier")
    for p in points:
        d = p.config.density.get("conv", 1.0)
        print(f"{d:8.2f} {p.config.precision.name.lower():>5s} {p.config.microbatch:6d} "
              f"{str(p.config.strategy):>16s} {p.memory.total_mb:8.2f}MB "
              f"{p.flops_ratio:6.3f}  {'*' if p.on_frontier else ''}")
