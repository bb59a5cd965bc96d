"""By-period debiasing on the linear benchmark.

With the second-differences family at sensitivity zero, the block-bias path
is pinned to the straight line through each cohort's last two pre values,
and subtracting the implied bias is a pure debiasing step.  One cohort here
carries a linear deviation, so its own line removes it almost exactly.  The
aggregated series instead learns one pooled slope, which belongs to neither
cohort: its corrected points drift in the late periods that only the early
cohort identifies.
"""

from blockdid import (
    BootstrapSpec,
    aggregate,
    aggregated_system,
    bootstrap_vcov,
    build_layout,
    build_w_imputation,
    by_period_target,
    corrected_point,
    gen_example2,
    invert,
)
from blockdid.inference import _corrected_se

sim = gen_example2(seed=31)
panel = sim.panel
layout = build_layout(panel)
coeffs = bootstrap_vcov(panel, BootstrapSpec(300, 31, "imputation"))
cells = coeffs.cells
bm = invert(build_w_imputation(layout, cells))

agg = aggregate(coeffs, layout)
alay, acells, acoe, amap = aggregated_system(agg)

print(f"true effect {sim.effect}\n")
print(f"{'s':>2} {'anchored':>9} {'(se)':>7} {'aggregated':>11} {'supported by':>14}")
for s in (1, 2, 3, 4):
    target = by_period_target(layout, cells, s)
    point = corrected_point(coeffs, "sd", bm, target)
    se = _corrected_se(coeffs, "sd", bm, target)
    apoint = corrected_point(acoe, "sd", amap, by_period_target(alay, acells, s))
    who = sorted(
        {
            cells.cell(p).cohort_time
            for p in range(len(cells))
            if target.weights[p] > 0
        }
    )
    print(f"{s:>2} {point:>9.2f} {se:>7.2f} {apoint:>11.2f} {str(who):>14}")

print(
    "\nlate periods are identified only by the early cohort, whose own pre"
    "\nrecord is mild; the pooled slope misses it and the aggregated points"
    "\ndrift away from the truth."
)
