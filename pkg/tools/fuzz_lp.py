"""Stress the embedded simplex against scipy.optimize.linprog on random LPs.

Not part of the test suite (tests carry a trimmed version); this is the
development loop used to shake out pivoting bugs quickly.

Usage: python tools/fuzz_lp.py [count]
"""

import sys

import numpy as np
from scipy.optimize import linprog

from recopt import lp


def random_program(rng: np.random.Generator) -> lp.LinearProgram:
    n = int(rng.integers(1, 9))
    m = int(rng.integers(1, 9))
    builder = lp.ProgramBuilder("fuzz")
    for j in range(n):
        kind = rng.integers(0, 4)
        if kind == 0:
            lo, hi = 0.0, np.inf
        elif kind == 1:
            lo, hi = float(rng.uniform(-5, 0)), float(rng.uniform(0, 5))
        elif kind == 2:
            lo, hi = -np.inf, float(rng.uniform(-2, 5))
        else:
            lo, hi = -np.inf, np.inf
        builder.add_variable(f"x{j}", lo, hi, cost=float(rng.normal()))
    for _ in range(m):
        support = rng.choice(n, size=rng.integers(1, n + 1), replace=False)
        terms = [(int(j), float(rng.normal())) for j in support]
        relation = [lp.LESS_EQUAL, lp.GREATER_EQUAL, lp.EQUAL][rng.integers(0, 3)]
        builder.add_constraint(terms, relation, float(rng.normal() * 3))
    return builder.build()


def scipy_reference(program: lp.LinearProgram):
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    matrix = program.dense_matrix()
    for row, relation in enumerate(program.relations):
        if relation == lp.LESS_EQUAL:
            a_ub.append(matrix[row])
            b_ub.append(program.rhs[row])
        elif relation == lp.GREATER_EQUAL:
            a_ub.append(-matrix[row])
            b_ub.append(-program.rhs[row])
        else:
            a_eq.append(matrix[row])
            b_eq.append(program.rhs[row])
    return linprog(
        program.objective,
        A_ub=np.array(a_ub) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq) if a_eq else None,
        b_eq=np.array(b_eq) if b_eq else None,
        bounds=list(zip(program.lower, program.upper)),
        method="highs",
    )


def main(count: int):
    rng = np.random.default_rng(20260815)
    mismatches = 0
    statuses = {}
    for trial in range(count):
        program = random_program(rng)
        mine = lp.solve_lp(program)
        ref = scipy_reference(program)
        ref_status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(
            ref.status, f"scipy-{ref.status}")
        statuses[mine.status] = statuses.get(mine.status, 0) + 1
        ok = True
        if mine.status == "optimal" and ref_status == "optimal":
            scale = 1.0 + abs(ref.fun)
            if abs(mine.objective - ref.fun) > 1e-6 * scale:
                ok = False
            if lp.verify_solution(program, mine.x) > 1e-7:
                ok = False
            bound = lp.dual_bound(program, mine.duals)
            if abs(bound - mine.objective) > 1e-6 * scale:
                ok = False
                print(f"trial {trial}: weak duality gap "
                      f"{bound - mine.objective:.3e}")
        elif mine.status != ref_status:
            ok = False
        if not ok:
            mismatches += 1
            print(f"trial {trial}: mine={mine.status} {mine.objective:.9g} "
                  f"scipy={ref_status} {getattr(ref, 'fun', None)}")
    print(f"{count} trials, {mismatches} mismatches, statuses {statuses}")
    return mismatches


if __name__ == "__main__":
    sys.exit(1 if main(int(sys.argv[1]) if len(sys.argv) > 1 else 500) else 0)
