"""All four benchmark problems at a small resolution.

For each problem the final objective and constraint values are printed,
along with which projection solver handled the iterations. Multi-material
budgets are separable and go to per-block bisection; the centre-of-mass
problem couples two rows and needs the Newton solver.
"""
from collections import Counter

from pgdto import (
    PgdSettings,
    Problem,
    com_constrained,
    min_compliance,
    min_volume,
    multi_material,
    run_pgd,
)

CASES = {
    "minimum compliance": min_compliance(48, 24),
    "minimum volume": min_volume(48, 24),
    "four materials": multi_material(32, 16),
    "centre of mass": com_constrained(48, 24),
}

for label, spec in CASES.items():
    problem = Problem(spec)
    result = run_pgd(problem, PgdSettings(K_max=150))
    paths = Counter(r.projection_path for r in result.history)
    values = ", ".join(f"{name} {v:+.2e}" for name, v in
                       zip(problem.constraint_names, result.final.constraint_values))
    print(f"{label:20s} objective {result.final.objective:10.4f} | g - G: {values}")
    print(f"{'':20s} solver paths {dict(paths)}")
