"""Show how the per-epoch step plan interleaves active and passive batches.

Run:  python3 demos/demo_injection_plan.py
"""

import math

from batchinject.training import plan_epoch


def sketch(plan, width=80):
    tags = "".join("a" if tag == "A" else "P" for tag, _ in plan.steps)
    return tags if len(tags) <= width else tags[:width] + "..."


for n, g in ((12, 4), (30, 10), (250, 100), (10, 1), (500, math.inf)):
    plan = plan_epoch(n, g)
    print(f"N={n:>4} g={g!s:>4}: {plan.active_count} active + {plan.passive_count} passive "
          f"steps = {len(plan.steps)} total")
    print(f"            {sketch(plan)}")
    print()

print("the rule: a passive step (P) lands right after every active step whose")
print("1-based index is divisible by g; the counter resets at each epoch;")
print("g=inf never injects, which is exactly the single-head baseline.")
