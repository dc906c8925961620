"""Self-contained linear and mixed-integer programming backend.

Implements a bounded-variable revised simplex (dense, two-phase, Dantzig
pricing with a Bland fallback against cycling, dual simplex pivots to
repair warm-started bases after the right-hand side moved) plus a
best-first branch and bound that handles binary variables and SOS1 pairs
(at most one member of a pair nonzero).  Problem sizes in this package are
small enough that dense numpy linear algebra with an explicitly maintained
basis inverse is both simple and fast.

The module is deliberately dependency-free so the rest of the package never
needs an external solver; `to_lp_text` dumps any program in LP text format
for cross-checking against one when debugging.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

FEASIBILITY_TOL = 1e-7   # max constraint violation accepted in a solution
MILP_GAP = 1e-6          # absolute incumbent/bound gap at which B&B stops
_DUAL_TOL = 1e-9         # reduced-cost threshold for optimality
_PIVOT_TOL = 1e-9        # smallest acceptable pivot magnitude
_STALL_LIMIT = 100       # non-improving pivots before switching to Bland
_REFACTOR_EVERY = 128    # pivots between basis refactorizations

LESS_EQUAL = "<="
GREATER_EQUAL = ">="
EQUAL = "=="

_STATUS_OPTIMAL = "optimal"
_STATUS_INFEASIBLE = "infeasible"
_STATUS_UNBOUNDED = "unbounded"
_STATUS_ITERATION_LIMIT = "iteration_limit"


class _NumericalBreakdown(Exception):
    """Basis factorization failed mid-solve; the caller restarts cold."""

# nonbasic/basic markers
_BASIC = 0
_AT_LB = 1
_AT_UB = 2
_FREE = 3


class ProgramBuilder:
    """Incremental construction of a LinearProgram."""

    def __init__(self, name: str = "program"):
        self.name = name
        self._lower: list[float] = []
        self._upper: list[float] = []
        self._objective: list[float] = []
        self._names: list[str] = []
        self._rows: list[tuple[list[int], list[float]]] = []
        self._relations: list[str] = []
        self._rhs: list[float] = []
        self._row_names: list[str] = []
        self._binaries: list[int] = []
        self._sos1_pairs: list[tuple[int, int]] = []
        self.objective_constant = 0.0

    def add_variable(self, name: str, lower=0.0, upper=np.inf, cost=0.0,
                     binary: bool = False) -> int:
        index = len(self._lower)
        if binary:
            lower, upper = 0.0, 1.0
            self._binaries.append(index)
        if lower > upper:
            raise ValueError(f"variable {name}: lower {lower} > upper {upper}")
        self._lower.append(float(lower))
        self._upper.append(float(upper))
        self._objective.append(float(cost))
        self._names.append(name)
        return index

    def add_cost(self, index: int, cost: float):
        self._objective[index] += float(cost)

    def add_constraint(self, terms, relation: str, rhs: float, name: str = ""):
        """terms is an iterable of (variable index, coefficient) pairs."""
        if relation not in (LESS_EQUAL, GREATER_EQUAL, EQUAL):
            raise ValueError(f"unknown relation {relation!r}")
        merged: dict[int, float] = {}
        for index, coef in terms:
            merged[index] = merged.get(index, 0.0) + float(coef)
        indices = sorted(merged)
        self._rows.append((indices, [merged[i] for i in indices]))
        self._relations.append(relation)
        self._rhs.append(float(rhs))
        self._row_names.append(name)

    def add_sos1(self, first: int, second: int):
        self._sos1_pairs.append((first, second))

    def build(self) -> "LinearProgram":
        return LinearProgram(
            name=self.name,
            lower=np.array(self._lower, dtype=float),
            upper=np.array(self._upper, dtype=float),
            objective=np.array(self._objective, dtype=float),
            rows=[(np.array(i, dtype=int), np.array(c, dtype=float))
                  for i, c in self._rows],
            relations=list(self._relations),
            rhs=np.array(self._rhs, dtype=float),
            binaries=tuple(self._binaries),
            sos1_pairs=tuple(self._sos1_pairs),
            names=list(self._names),
            row_names=list(self._row_names),
            objective_constant=self.objective_constant,
        )


@dataclass
class LinearProgram:
    """min objective . x  subject to rows, bounds, binaries and SOS1 pairs."""

    name: str
    lower: np.ndarray
    upper: np.ndarray
    objective: np.ndarray
    rows: list
    relations: list
    rhs: np.ndarray
    binaries: tuple = ()
    sos1_pairs: tuple = ()
    names: list = field(default_factory=list)
    row_names: list = field(default_factory=list)
    objective_constant: float = 0.0

    @property
    def variable_count(self) -> int:
        return self.objective.shape[0]

    @property
    def row_count(self) -> int:
        return self.rhs.shape[0]

    def dense_matrix(self) -> np.ndarray:
        matrix = np.zeros((self.row_count, self.variable_count))
        for row, (indices, coefs) in enumerate(self.rows):
            matrix[row, indices] = coefs
        return matrix


@dataclass
class Solution:
    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray | None = None
    iterations: int = 0
    basis: tuple = ()
    at_upper: frozenset = frozenset()
    nodes: int = 0
    bound: float = np.nan


def verify_solution(program: LinearProgram, x: np.ndarray,
                    tol: float = FEASIBILITY_TOL) -> float:
    """Largest constraint/bound violation of x; raises nothing."""
    worst = 0.0
    worst = max(worst, float(np.max(program.lower - x, initial=0.0)))
    worst = max(worst, float(np.max(x - program.upper, initial=0.0)))
    for row, (indices, coefs) in enumerate(program.rows):
        value = float(coefs @ x[indices])
        rhs = program.rhs[row]
        relation = program.relations[row]
        if relation == LESS_EQUAL:
            worst = max(worst, value - rhs)
        elif relation == GREATER_EQUAL:
            worst = max(worst, rhs - value)
        else:
            worst = max(worst, abs(value - rhs))
    return worst


class _Simplex:
    """Two-phase bounded-variable revised simplex on one program instance."""

    def __init__(self, program: LinearProgram, lower: np.ndarray,
                 upper: np.ndarray, max_iter: int):
        m = program.row_count
        n = program.variable_count
        self.m, self.n = m, n
        self.max_iter = max_iter
        self.iterations = 0

        # columns: [structural | slacks | artificials]
        total = n + 2 * m
        self.matrix = np.zeros((m, n + 2 * m))
        for row, (indices, coefs) in enumerate(program.rows):
            self.matrix[row, indices] = coefs
        self.matrix[:, n:n + m] = np.eye(m)

        self.lower = np.full(total, -np.inf)
        self.upper = np.full(total, np.inf)
        self.lower[:n] = lower
        self.upper[:n] = upper
        for row, relation in enumerate(program.relations):
            if relation == LESS_EQUAL:
                self.lower[n + row], self.upper[n + row] = 0.0, np.inf
            elif relation == GREATER_EQUAL:
                self.lower[n + row], self.upper[n + row] = -np.inf, 0.0
            else:
                self.lower[n + row], self.upper[n + row] = 0.0, 0.0
        self.lower[n + m:] = 0.0
        self.b = program.rhs.copy()

        self.cost = np.zeros(total)
        self.cost[:n] = program.objective

        self.status = np.empty(total, dtype=np.int8)
        self.x = np.zeros(total)
        for j in range(n + m):
            if np.isfinite(self.lower[j]):
                self.status[j], self.x[j] = _AT_LB, self.lower[j]
            elif np.isfinite(self.upper[j]):
                self.status[j], self.x[j] = _AT_UB, self.upper[j]
            else:
                self.status[j], self.x[j] = _FREE, 0.0

        residual = self.b - self.matrix[:, :n + m] @ self.x[:n + m]
        sigma = np.where(residual >= 0.0, 1.0, -1.0)
        self.matrix[np.arange(m), n + m + np.arange(m)] = sigma
        self.basis = np.arange(n + m, n + 2 * m)
        self.status[self.basis] = _BASIC
        self.x[self.basis] = np.abs(residual)
        self.binv = np.diag(sigma)  # inverse of the ±1 artificial basis
        self.artificial_start = n + m
        self.pivots_since_refactor = 0

    def invert_basis(self, basis, binv_cache):
        """Inverse of the chosen basis columns, memoized per program.

        binv_cache maps basis bytes to a pristine inverse; branch and
        bound nodes that keep their parent's basis then skip the dense
        inversion, which would otherwise dominate a warm solve.  Returns
        None when the columns are singular."""
        key = None if binv_cache is None else basis.tobytes()
        if key is not None and key in binv_cache:
            return binv_cache[key].copy()
        try:
            binv = np.linalg.inv(self.matrix[:, basis])
        except np.linalg.LinAlgError:
            return None
        if key is not None:
            self.store_binv(binv_cache, key, binv)
        return binv

    def store_binv(self, binv_cache, key, binv):
        """Keep a pristine inverse copy, evicting oldest entries first."""
        if len(binv_cache) >= 8:
            binv_cache.pop(next(iter(binv_cache)))
        binv_cache[key] = binv.copy()

    def prepare_basis(self, basis, binv_cache=None):
        """Vet a warm basis and repair a singular one.

        Returns an invertible basis array (the input, or a repaired copy)
        or None when the basis is structurally unusable.  Does not touch
        any solver state, so a None result needs no rebuild."""
        basis = np.asarray(basis, dtype=int)
        if basis.shape[0] != self.m or np.unique(basis).shape[0] != self.m:
            return None
        if np.any(basis < 0) or np.any(basis >= self.matrix.shape[1]):
            return None
        if self.invert_basis(basis, binv_cache) is not None:
            return basis
        repaired = self.repair_basis(basis)
        if repaired is None or self.invert_basis(repaired, binv_cache) is None:
            return None
        return repaired

    def repair_basis(self, basis):
        """Swap linearly dependent warm-basis columns for unit columns.

        A warm basis can go singular when constraint coefficients moved
        between two programs of the same shape (a sliding planning window
        shifts which steps feed which aggregate rows).  The QR diagonal
        flags each column that is dependent on its predecessors.  Every
        flagged column is swapped for the slack or artificial column of a
        row picked from the orthogonal complement of the kept columns:
        a unit column restores rank exactly when its row has complement
        mass, so the picks (deflated after each choice) guarantee an
        invertible result.  The dual repair pass then cleans up the
        disturbance.  Returns the repaired basis or None to fall back to
        a cold solve."""
        diag = np.abs(np.diag(np.linalg.qr(self.matrix[:, basis], mode="r")))
        scale = float(diag.max(initial=0.0))
        if scale <= 0.0:
            return None
        bad = np.flatnonzero(diag <= max(1e-12, 1e-9 * scale))
        if bad.shape[0] == 0 or bad.shape[0] > 64:
            return None
        keep = np.delete(np.arange(self.m), bad)
        full = np.linalg.qr(self.matrix[:, basis[keep]], mode="complete")[0]
        null_rows = full[:, keep.shape[0]:].copy()
        out = basis.copy()
        taken = set(int(j) for j in basis)
        for k in bad:
            weight = np.einsum("ij,ij->i", null_rows, null_rows)
            replacement, chosen = None, -1
            for row in np.argsort(-weight):
                if weight[row] <= 1e-12:
                    break
                for unit in (self.n + int(row), self.artificial_start + int(row)):
                    if unit not in taken:
                        replacement, chosen = unit, int(row)
                        break
                if replacement is not None:
                    break
            if replacement is None:
                return None
            taken.add(replacement)
            out[k] = replacement
            direction = null_rows[chosen] / np.linalg.norm(null_rows[chosen])
            null_rows = null_rows - np.outer(null_rows @ direction, direction)
        return out

    def try_basis(self, basis, at_upper, binv_cache=None) -> bool:
        """Install a caller-supplied basis if it is square, invertible and
        primal feasible under the current bounds; returns success.

        Basic artificial indices are tolerated (a degenerate phase 1 can
        leave one on a redundant row); they are pinned to zero first, so a
        nonzero value simply fails the feasibility check here and is
        driven out by the dual repair instead."""
        basis = np.asarray(basis, dtype=int)
        if basis.shape[0] != self.m or np.unique(basis).shape[0] != self.m:
            return False
        if np.any(basis < 0) or np.any(basis >= self.matrix.shape[1]):
            return False
        binv = self.invert_basis(basis, binv_cache)
        if binv is None:
            return False
        # artificials stay pinned at zero for a warm start
        self.upper[self.artificial_start:] = 0.0
        status = np.empty_like(self.status)
        x = np.zeros_like(self.x)
        for j in range(self.artificial_start):
            if j in at_upper and np.isfinite(self.upper[j]):
                status[j], x[j] = _AT_UB, self.upper[j]
            elif np.isfinite(self.lower[j]):
                status[j], x[j] = _AT_LB, self.lower[j]
            elif np.isfinite(self.upper[j]):
                status[j], x[j] = _AT_UB, self.upper[j]
            else:
                status[j], x[j] = _FREE, 0.0
        status[self.artificial_start:] = _AT_LB
        x[self.artificial_start:] = 0.0
        status[basis] = _BASIC
        nonbasic_value = x.copy()
        nonbasic_value[basis] = 0.0
        xb = binv @ (self.b - self.matrix[:, :self.artificial_start]
                     @ nonbasic_value[:self.artificial_start])
        if np.any(xb < self.lower[basis] - FEASIBILITY_TOL):
            return False
        if np.any(xb > self.upper[basis] + FEASIBILITY_TOL):
            return False
        x[basis] = xb
        self.basis = basis.copy()
        self.status = status
        self.x = x
        self.binv = binv
        return True

    def install_dual_basis(self, basis, at_upper, binv_cache=None):
        """Install a basis for dual repair, tolerating primal infeasibility.

        Returns the cost vector run_dual should price with, or None when
        the basis is structurally unusable.  Reduced costs that violate
        dual feasibility (the objective moved since the basis was optimal)
        are shifted to zero in a copy of the costs, so the dual pivots
        always start dual feasible; phase 2 then reoptimizes against the
        true objective from the repaired, primal-feasible basis."""
        basis = np.asarray(basis, dtype=int)
        if basis.shape[0] != self.m or np.unique(basis).shape[0] != self.m:
            return None
        if np.any(basis < 0) or np.any(basis >= self.matrix.shape[1]):
            return None
        binv = self.invert_basis(basis, binv_cache)
        if binv is None:
            return None
        self.upper[self.artificial_start:] = 0.0
        status = np.empty_like(self.status)
        x = np.zeros_like(self.x)
        for j in range(self.artificial_start):
            if j in at_upper and np.isfinite(self.upper[j]):
                status[j], x[j] = _AT_UB, self.upper[j]
            elif np.isfinite(self.lower[j]):
                status[j], x[j] = _AT_LB, self.lower[j]
            elif np.isfinite(self.upper[j]):
                status[j], x[j] = _AT_UB, self.upper[j]
            else:
                status[j], x[j] = _FREE, 0.0
        status[self.artificial_start:] = _AT_LB
        x[self.artificial_start:] = 0.0
        status[basis] = _BASIC
        limit = self.artificial_start
        duals = self.cost[basis] @ binv
        reduced = self.cost[:limit] - duals @ self.matrix[:, :limit]
        tol = 1e-7 * (1.0 + float(np.abs(self.cost[:limit]).max(initial=0.0)))
        st = status[:limit]
        movable = self.lower[:limit] < self.upper[:limit]
        bad = movable & (
            ((st == _AT_LB) & (reduced < -tol))
            | ((st == _AT_UB) & (reduced > tol))
            | ((st == _FREE) & (np.abs(reduced) > tol))
        )
        cost = self.cost
        if np.any(bad):
            cost = self.cost.copy()
            cost[:limit][bad] -= reduced[bad]
        nonbasic_value = x.copy()
        nonbasic_value[basis] = 0.0
        x[basis] = binv @ (self.b - self.matrix[:, :limit]
                           @ nonbasic_value[:limit])
        self.basis = basis.copy()
        self.status = status
        self.x = x
        self.binv = binv
        return cost

    def run_dual(self, cost: np.ndarray, price_limit: int,
                 limit: int | None = None) -> str:
        """Dual simplex pivots until every basic value is inside its bounds.

        Requires the dual-feasible start of install_dual_basis and prices
        with the cost vector it returned (the true objective, or a shifted
        copy that only steers the repair).  Returns "feasible" on success
        and "stalled" when the pivot budget runs out or no entering column
        exists; the caller then solves cold.
        """
        if limit is None:
            limit = 2 * self.m + 50
        for _ in range(limit):
            if self.iterations >= self.max_iter:
                return "stalled"
            if self.pivots_since_refactor >= _REFACTOR_EVERY:
                self.refactor()
            xb = self.x[self.basis]
            below = self.lower[self.basis] - xb
            above = xb - self.upper[self.basis]
            violation = np.maximum(below, above)
            row = int(np.argmax(violation))
            if violation[row] <= FEASIBILITY_TOL:
                return "feasible"
            self.iterations += 1
            leaving = self.basis[row]
            # sigma, +1: the leaving value must come down to its upper bound
            sigma = 1.0 if above[row] >= below[row] else -1.0
            target = self.upper[leaving] if sigma > 0.0 else self.lower[leaving]
            signed_row = sigma * (self.binv[row] @ self.matrix[:, :price_limit])
            st = self.status[:price_limit]
            movable = self.lower[:price_limit] < self.upper[:price_limit]
            eligible = np.flatnonzero(
                ((st == _AT_LB) & movable & (signed_row > _PIVOT_TOL))
                | ((st == _AT_UB) & movable & (signed_row < -_PIVOT_TOL))
                | ((st == _FREE) & (np.abs(signed_row) > _PIVOT_TOL))
            )
            if eligible.shape[0] == 0:
                return "stalled"
            duals = self.cost_basis(cost) @ self.binv
            reduced = (cost[eligible]
                       - duals @ self.matrix[:, eligible])
            # entering keeps all reduced-cost signs valid (dual ratio test)
            ratios = np.abs(reduced) / np.abs(signed_row[eligible])
            ties = eligible[ratios <= float(ratios.min()) + 1e-12]
            entering = int(ties[np.argmax(np.abs(signed_row[ties]))])
            d = self.binv @ self.matrix[:, entering]
            if abs(d[row]) <= _PIVOT_TOL:
                return "stalled"
            step = (self.x[leaving] - target) / d[row]
            self.x[self.basis] = xb - step * d
            self.x[entering] = self.x[entering] + step
            self.x[leaving] = target
            self.status[leaving] = _AT_UB if sigma > 0.0 else _AT_LB
            self.status[entering] = _BASIC
            self.basis[row] = entering
            self.binv[row, :] /= d[row]
            others = np.arange(self.m) != row
            self.binv[others, :] -= np.outer(d[others], self.binv[row, :])
            self.pivots_since_refactor += 1
        return "stalled"

    def refactor(self):
        try:
            self.binv = np.linalg.inv(self.matrix[:, self.basis])
        except np.linalg.LinAlgError as exc:
            # accumulated near-tolerance pivots can leave the basis
            # numerically singular; the solve restarts cold
            raise _NumericalBreakdown(str(exc)) from exc
        nonbasic_value = self.x.copy()
        nonbasic_value[self.basis] = 0.0
        self.x[self.basis] = self.binv @ (self.b - self.matrix @ nonbasic_value)
        self.pivots_since_refactor = 0

    def drive_out_artificials(self):
        """Swap basic artificials left at zero by phase 1 for structural or
        slack columns via degenerate pivots, so the final basis is reusable
        as a warm start.  A row whose columns all cancel is redundant and
        keeps its artificial."""
        for row in np.flatnonzero(self.basis >= self.artificial_start):
            if self.pivots_since_refactor >= _REFACTOR_EVERY:
                self.refactor()
            coefs = self.binv[row] @ self.matrix[:, :self.artificial_start]
            coefs[self.status[:self.artificial_start] == _BASIC] = 0.0
            entering = int(np.argmax(np.abs(coefs)))
            if abs(coefs[entering]) <= _PIVOT_TOL:
                continue
            leaving = self.basis[row]
            d = self.binv @ self.matrix[:, entering]
            # zero-length pivot: the artificial already sits at zero
            self.x[leaving] = 0.0
            self.status[leaving] = _AT_LB
            self.status[entering] = _BASIC
            self.basis[row] = entering
            self.binv[row, :] /= d[row]
            others = np.arange(self.m) != row
            self.binv[others, :] -= np.outer(d[others], self.binv[row, :])
            self.pivots_since_refactor += 1

    def run_phase(self, cost: np.ndarray, price_limit: int) -> str:
        """Minimize cost over the current feasible basis; price_limit bounds
        the columns eligible to enter (excludes artificials in phase 2)."""
        bland = False
        stall = 0
        last_objective = np.inf
        while True:
            if self.iterations >= self.max_iter:
                return _STATUS_ITERATION_LIMIT
            self.iterations += 1
            if self.pivots_since_refactor >= _REFACTOR_EVERY:
                self.refactor()

            duals = self.cost_basis(cost) @ self.binv
            reduced = cost[:price_limit] - duals @ self.matrix[:, :price_limit]
            status = self.status[:price_limit]
            movable = self.lower[:price_limit] < self.upper[:price_limit]
            down_ok = (status == _AT_LB) | (status == _FREE)
            up_ok = (status == _AT_UB) | (status == _FREE)
            eligible = movable & (
                (down_ok & (reduced < -_DUAL_TOL))
                | (up_ok & (reduced > _DUAL_TOL))
            )
            candidates = np.flatnonzero(eligible)
            if candidates.shape[0] == 0:
                return _STATUS_OPTIMAL
            if bland:
                entering = int(candidates[0])
            else:
                entering = int(candidates[np.argmax(np.abs(reduced[candidates]))])
            direction = 1.0 if reduced[entering] < 0.0 else -1.0

            outcome = self.pivot(entering, direction, bland)
            if outcome == "unbounded":
                return _STATUS_UNBOUNDED

            objective = float(cost @ self.x)
            if objective < last_objective - 1e-12 * (1.0 + abs(last_objective)):
                stall = 0
            else:
                stall += 1
                if stall >= _STALL_LIMIT:
                    bland = True
            last_objective = objective

    def cost_basis(self, cost: np.ndarray) -> np.ndarray:
        return cost[self.basis]

    def pivot(self, entering: int, direction: float, bland: bool) -> str:
        d = self.binv @ self.matrix[:, entering]
        step_basic = np.full(self.m, np.inf)
        signed = direction * d
        decreasing = signed > _PIVOT_TOL
        increasing = signed < -_PIVOT_TOL
        xb = self.x[self.basis]
        with np.errstate(invalid="ignore"):
            step_basic[decreasing] = (
                (xb[decreasing] - self.lower[self.basis[decreasing]])
                / signed[decreasing]
            )
            step_basic[increasing] = (
                (xb[increasing] - self.upper[self.basis[increasing]])
                / signed[increasing]
            )
        step_basic = np.maximum(step_basic, 0.0)  # tolerate tiny overshoot

        flip_step = self.upper[entering] - self.lower[entering]
        best_row = int(np.argmin(step_basic)) if self.m else -1
        best_step = step_basic[best_row] if self.m else np.inf

        if not np.isfinite(best_step) and not np.isfinite(flip_step):
            return "unbounded"

        if flip_step <= best_step:
            # entering variable travels to its other bound; basis unchanged
            self.x[self.basis] = xb - flip_step * signed
            if self.status[entering] == _AT_LB:
                self.status[entering] = _AT_UB
                self.x[entering] = self.upper[entering]
            else:
                self.status[entering] = _AT_LB
                self.x[entering] = self.lower[entering]
            return "flipped"

        ties = np.flatnonzero(step_basic <= best_step + 1e-12)
        if bland:
            row = int(ties[np.argmin(self.basis[ties])])
        else:
            row = int(ties[np.argmax(np.abs(d[ties]))])
        leaving = self.basis[row]
        step = step_basic[row]

        self.x[self.basis] = xb - step * signed
        if self.status[entering] == _AT_UB:
            self.x[entering] = self.upper[entering] - step
        elif self.status[entering] == _AT_LB:
            self.x[entering] = self.lower[entering] + step
        else:
            self.x[entering] = direction * step
        self.x[leaving] = (self.lower[leaving] if signed[row] > 0.0
                           else self.upper[leaving])
        self.status[leaving] = _AT_LB if signed[row] > 0.0 else _AT_UB
        self.status[entering] = _BASIC
        self.basis[row] = entering

        # product-form update of the basis inverse
        pivot_value = d[row]
        self.binv[row, :] /= pivot_value
        others = np.arange(self.m) != row
        self.binv[others, :] -= np.outer(d[others], self.binv[row, :])
        self.pivots_since_refactor += 1
        return "pivoted"


def solve_lp(program: LinearProgram, *, basis=None, at_upper=frozenset(),
             max_iter: int | None = None,
             bounds_override: dict | None = None,
             binv_cache: dict | None = None) -> Solution:
    """Solve the LP relaxation of `program` (binaries relaxed to [0, 1],
    SOS1 pairs ignored).

    An optional (basis, at_upper) pair from a previous Solution warm-starts
    phase 2 when it is still primal feasible; otherwise the basis is
    repaired with dual simplex pivots, shifting any reduced costs that
    turned dual infeasible (right-hand side and objective may both have
    moved since the basis was optimal) before reoptimizing against the
    true objective.  An unusable or stalled basis falls back to a cold
    two-phase solve.  bounds_override maps variable index -> (lower, upper)
    without mutating the program.
    """
    lower = program.lower.copy()
    upper = program.upper.copy()
    if bounds_override:
        for index, (lo, hi) in bounds_override.items():
            lower[index], upper[index] = lo, hi
    if np.any(lower > upper + 1e-12):
        return Solution(_STATUS_INFEASIBLE, np.zeros(program.variable_count),
                        np.inf)
    upper = np.maximum(upper, lower)

    m, n = program.row_count, program.variable_count
    if max_iter is None:
        max_iter = 50 * (m + n) + 2000
    core = _Simplex(program, lower, upper, max_iter)

    try:
        warm = False
        if basis is not None and len(basis) == m:
            prepared = core.prepare_basis(basis, binv_cache)
            if prepared is not None:
                warm = core.try_basis(prepared, at_upper, binv_cache)
                if not warm:
                    pricing = core.install_dual_basis(prepared, at_upper,
                                                      binv_cache)
                    if (pricing is not None
                            and core.run_dual(pricing, core.artificial_start)
                            == "feasible"):
                        warm = True
                    else:
                        core = _Simplex(program, lower, upper, max_iter)

        if not warm:
            phase1 = np.zeros(core.cost.shape[0])
            phase1[core.artificial_start:] = 1.0
            status = core.run_phase(phase1, core.cost.shape[0])
            if status == _STATUS_ITERATION_LIMIT:
                return Solution(status, core.x[:n].copy(), np.inf,
                                iterations=core.iterations)
            infeasibility = float(phase1 @ core.x)
            if infeasibility > FEASIBILITY_TOL * (1.0 + float(np.abs(core.b).max(initial=0.0))):
                return Solution(_STATUS_INFEASIBLE, core.x[:n].copy(), np.inf,
                                iterations=core.iterations)
            core.upper[core.artificial_start:] = 0.0
            core.x[core.artificial_start:][core.status[core.artificial_start:] != _BASIC] = 0.0
            core.drive_out_artificials()

        status = core.run_phase(core.cost, core.artificial_start)
        x = core.x[:n].copy()
        objective = float(program.objective @ x) + program.objective_constant
        if status == _STATUS_OPTIMAL:
            worst = verify_solution(program, x)
            # bounds may be overridden for branch and bound nodes
            if bounds_override:
                worst = max(
                    worst,
                    float(np.max(lower - x, initial=0.0)),
                    float(np.max(x - upper, initial=0.0)),
                )
            if worst > FEASIBILITY_TOL * (1.0 + float(np.abs(program.rhs).max(initial=0.0))):
                core.refactor()
                x = core.x[:n].copy()
                objective = float(program.objective @ x) + program.objective_constant
                worst = verify_solution(program, x)
                if worst > 10.0 * FEASIBILITY_TOL * (1.0 + float(np.abs(program.rhs).max(initial=0.0))):
                    if basis is not None:
                        # a bad warm start must never poison the result
                        return solve_lp(program, max_iter=max_iter,
                                        bounds_override=bounds_override)
                    raise RuntimeError(
                        f"simplex returned an infeasible optimum for {program.name} "
                        f"(violation {worst:.3e})"
                    )
    except _NumericalBreakdown:
        if basis is not None:
            # drop the degraded warm path entirely and resolve from scratch
            return solve_lp(program, max_iter=max_iter,
                            bounds_override=bounds_override)
        raise RuntimeError(
            f"simplex basis factorization broke down for {program.name}")
    if binv_cache is not None and status == _STATUS_OPTIMAL:
        # children warm-starting from this exact basis skip the inversion
        core.store_binv(binv_cache, core.basis.tobytes(), core.binv)
    duals = core.cost_basis(core.cost) @ core.binv
    at_upper_out = frozenset(
        int(j) for j in np.flatnonzero(core.status[:n] == _AT_UB)
    )
    if status == _STATUS_UNBOUNDED:
        objective = -np.inf
    return Solution(
        status=status,
        x=x,
        objective=objective,
        duals=duals,
        iterations=core.iterations,
        basis=tuple(int(j) for j in core.basis),
        at_upper=at_upper_out,
    )


def dual_bound(program: LinearProgram, duals: np.ndarray,
               bounds_override: dict | None = None) -> float:
    """Lagrangian lower bound from row multipliers (weak duality).

    Computed over the equality form (rows plus slack bounds); equals the
    primal objective at an optimal basis by complementary slackness.
    """
    lower = program.lower.copy()
    upper = program.upper.copy()
    if bounds_override:
        for index, (lo, hi) in bounds_override.items():
            lower[index], upper[index] = lo, hi
    matrix = program.dense_matrix()
    reduced = program.objective - duals @ matrix
    bound = float(duals @ program.rhs) + program.objective_constant
    for j in range(program.variable_count):
        if reduced[j] > _DUAL_TOL:
            term = reduced[j] * lower[j]
        elif reduced[j] < -_DUAL_TOL:
            term = reduced[j] * upper[j]
        else:
            term = 0.0
        bound += term if np.isfinite(term) else -np.inf
    # slack contributions: slack cost is zero, so reduced cost is -dual
    for row, relation in enumerate(program.relations):
        rc = -duals[row]
        if relation == LESS_EQUAL:
            slack_lo, slack_hi = 0.0, np.inf
        elif relation == GREATER_EQUAL:
            slack_lo, slack_hi = -np.inf, 0.0
        else:
            continue
        if rc > _DUAL_TOL:
            term = rc * slack_lo
        elif rc < -_DUAL_TOL:
            term = rc * slack_hi
        else:
            term = 0.0
        bound += term if np.isfinite(term) else -np.inf
    return bound


def _violations(program: LinearProgram, x: np.ndarray):
    """Most-violated unresolved branching condition, or None if integral.

    Binaries score by fractionality, SOS1 pairs by the smaller member's
    magnitude; the largest score wins, first occurrence breaking ties.
    """
    best = None
    for index in program.binaries:
        fraction = abs(x[index] - round(x[index]))
        if fraction > 1e-6 and (best is None or fraction > best[1] + 1e-15):
            best = ("binary", fraction, index)
    for first, second in program.sos1_pairs:
        overlap = min(abs(x[first]), abs(x[second]))
        if overlap > 1e-7 and (best is None or overlap > best[1] + 1e-15):
            best = ("sos1", overlap, (first, second))
    return best


def solve_milp(program: LinearProgram, *, node_limit: int = 50000,
               gap: float = MILP_GAP, basis=None,
               at_upper=frozenset()) -> Solution:
    """Best-first branch and bound over binaries and SOS1 pairs.

    Returns the proven optimum, or the best incumbent with status
    "iteration_limit" when node_limit is exhausted.  basis and at_upper
    warm-start the root relaxation; an unusable basis is ignored.
    """
    for first, second in program.sos1_pairs:
        for member in (first, second):
            if program.lower[member] > 0.0 or program.upper[member] < 0.0:
                raise ValueError(
                    f"SOS1 member {member} cannot be pinned to zero, its "
                    f"bounds are [{program.lower[member]}, "
                    f"{program.upper[member]}]"
                )
    binv_cache: dict = {}
    root = solve_lp(program, basis=basis, at_upper=at_upper,
                    binv_cache=binv_cache)
    if root.status in (_STATUS_INFEASIBLE, _STATUS_UNBOUNDED):
        return root
    incumbent: Solution | None = None
    best_bound = root.objective
    # ties pop newest-first, so equal-bound nodes are explored as a dive
    # straight to an integer-feasible leaf instead of breadth-first
    counter = 0
    heap = [(root.objective, -counter, {}, root)]
    nodes = 0

    while heap:
        bound, _, overrides, relaxed = heapq.heappop(heap)
        if incumbent is not None and bound >= incumbent.objective - gap:
            best_bound = incumbent.objective
            break
        best_bound = bound
        violation = _violations(program, relaxed.x)
        if violation is None:
            if incumbent is None or relaxed.objective < incumbent.objective:
                incumbent = relaxed
            continue
        if nodes >= node_limit:
            result = incumbent if incumbent is not None else relaxed
            return Solution(
                status=_STATUS_ITERATION_LIMIT, x=result.x,
                objective=result.objective, duals=result.duals,
                iterations=result.iterations, basis=result.basis,
                at_upper=result.at_upper, nodes=nodes, bound=best_bound,
            )

        kind, _, payload = violation
        if kind == "binary":
            near = float(round(relaxed.x[payload]))
            # push the rounding-toward child last so ties dive through it
            children = [
                {**overrides, payload: (1.0 - near, 1.0 - near)},
                {**overrides, payload: (near, near)},
            ]
        else:
            first, second = payload
            if abs(relaxed.x[first]) > abs(relaxed.x[second]):
                first, second = second, first
            # pinning the smaller member stays closest to the relaxation
            children = [
                {**overrides, second: (0.0, 0.0)},
                {**overrides, first: (0.0, 0.0)},
            ]
        for child in children:
            nodes += 1
            solution = solve_lp(program, basis=relaxed.basis,
                                at_upper=relaxed.at_upper,
                                bounds_override=child,
                                binv_cache=binv_cache)
            if solution.status == _STATUS_UNBOUNDED:
                return solution
            if solution.status != _STATUS_OPTIMAL:
                continue
            if incumbent is not None and solution.objective >= incumbent.objective - gap:
                continue
            counter += 1
            heapq.heappush(heap, (solution.objective, -counter, child, solution))

    if incumbent is None:
        return Solution(_STATUS_INFEASIBLE, root.x, np.inf, nodes=nodes)
    return Solution(
        status=_STATUS_OPTIMAL, x=incumbent.x, objective=incumbent.objective,
        duals=incumbent.duals, iterations=incumbent.iterations,
        basis=incumbent.basis, at_upper=incumbent.at_upper,
        nodes=nodes, bound=incumbent.objective,
    )


def to_lp_text(program: LinearProgram) -> str:
    """Render the program in LP text format (debugging aid)."""
    def var(j):
        return program.names[j] if program.names else f"x{j}"

    def terms(indices, coefs):
        parts = []
        for index, coef in zip(indices, coefs):
            sign = "+" if coef >= 0 else "-"
            parts.append(f"{sign} {abs(coef):.12g} {var(index)}")
        return " ".join(parts) if parts else "0"

    lines = [f"\\ {program.name}", "Minimize"]
    obj_indices = np.flatnonzero(program.objective)
    lines.append(" obj: " + terms(obj_indices, program.objective[obj_indices]))
    lines.append("Subject To")
    for row, (indices, coefs) in enumerate(program.rows):
        symbol = {LESS_EQUAL: "<=", GREATER_EQUAL: ">=", EQUAL: "="}[
            program.relations[row]]
        label = f"c{row}"
        if program.row_names and program.row_names[row]:
            label = program.row_names[row]
        lines.append(f" {label}: {terms(indices, coefs)} {symbol} "
                     f"{program.rhs[row]:.12g}")
    lines.append("Bounds")
    for j in range(program.variable_count):
        lo, hi = program.lower[j], program.upper[j]
        if lo == hi:
            lines.append(f" {var(j)} = {lo:.12g}")
        elif np.isinf(lo) and np.isinf(hi):
            lines.append(f" {var(j)} free")
        else:
            lo_text = "-inf" if np.isinf(lo) else f"{lo:.12g}"
            hi_text = "+inf" if np.isinf(hi) else f"{hi:.12g}"
            lines.append(f" {lo_text} <= {var(j)} <= {hi_text}")
    if program.binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(var(j) for j in program.binaries))
    if program.sos1_pairs:
        lines.append("SOS")
        for rank, (first, second) in enumerate(program.sos1_pairs):
            lines.append(f" s{rank}: S1 :: {var(first)}:1 {var(second)}:2")
    lines.append("End")
    return "\n".join(lines) + "\n"
