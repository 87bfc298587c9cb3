"""Strictly convex QP solver with duals, active sets, and support counting.

Programs have the shape

    min  U' R_total U + lin' U
    s.t. bound_lhs  U <= bound_rhs                      (deterministic rows)
         comfort_lhs U <= comfort_rhs[i]  for each scenario i

The comfort left-hand side is shared by every scenario; only the right-hand
side varies. Residuals and directional products over all scenario rows
therefore reduce to one small matrix product plus a broadcast, which is what
makes hundreds of thousands of rows tractable without materializing them.

The solver is a primal active-set method on the equivalent
min 1/2 U' P U + c' U with P = 2 R_total. It maintains a working set of
active rows (always linearly independent: a blocking row is never a
combination of working rows), returns KKT-certified optima with one
nonnegative multiplier per row, and is deterministic for a fixed program:
ties in blocking and dropping are broken by lowest row index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr
from scipy.optimize import linprog, nnls

from .errors import ConvergenceError, ValidationError

DEFAULT_FEAS_TOL = 1e-8
DEFAULT_DUAL_TOL_REL = 1e-6
DEFAULT_SUPPORT_TOL_REL = 1e-6

# above this many matrix entries, phase-1 refuses to materialize the rows
_PHASE1_ENTRY_LIMIT = 5_000_000


@dataclass(frozen=True)
class ScenarioProgram:
    """Quadratic program with deterministic rows plus per-scenario row blocks.

    Row indexing is: bound rows first (0 .. n_bound-1), then scenario blocks
    in order, each of comfort block size. `comfort_meta = (n_zones, M)`
    lets `row_tag` decode a comfort row into (scenario, zone, step); rows
    inside a block are ordered step-major.
    """

    quad_cost: np.ndarray  # (d, d), symmetric positive definite
    lin_cost: np.ndarray  # (d,)
    bound_lhs: np.ndarray  # (n_bound, d)
    bound_rhs: np.ndarray  # (n_bound,)
    comfort_lhs: np.ndarray | None = None  # (m_block, d)
    comfort_rhs: np.ndarray | None = None  # (n_scenarios, m_block)
    comfort_meta: tuple[int, int] | None = None  # (n_zones, M)
    bound_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        d = self.quad_cost.shape[0]
        if self.quad_cost.shape != (d, d):
            raise ValidationError(f"quad_cost must be square, got {self.quad_cost.shape}")
        if not np.allclose(self.quad_cost, self.quad_cost.T, atol=1e-12):
            raise ValidationError("quad_cost must be symmetric")
        if self.lin_cost.shape != (d,):
            raise ValidationError(f"lin_cost must have shape ({d},), got {self.lin_cost.shape}")
        if self.bound_lhs.ndim != 2 or self.bound_lhs.shape[1] != d:
            raise ValidationError(f"bound_lhs must have {d} columns, got {self.bound_lhs.shape}")
        if self.bound_rhs.shape != (self.bound_lhs.shape[0],):
            raise ValidationError("bound_rhs length must match bound_lhs rows")
        if (self.comfort_lhs is None) != (self.comfort_rhs is None):
            raise ValidationError("comfort_lhs and comfort_rhs must be given together")
        if self.comfort_lhs is not None:
            if self.comfort_lhs.shape[1] != d:
                raise ValidationError("comfort_lhs column count must equal decision dimension")
            if self.comfort_rhs.ndim != 2 or self.comfort_rhs.shape[1] != self.comfort_lhs.shape[0]:
                raise ValidationError(
                    "comfort_rhs must be (n_scenarios, comfort block size), got "
                    f"{self.comfort_rhs.shape}"
                )

    @property
    def dim(self) -> int:
        return self.quad_cost.shape[0]

    @property
    def n_bound(self) -> int:
        return self.bound_lhs.shape[0]

    @property
    def block_size(self) -> int:
        return 0 if self.comfort_lhs is None else self.comfort_lhs.shape[0]

    @property
    def n_scenarios(self) -> int:
        return 0 if self.comfort_rhs is None else self.comfort_rhs.shape[0]

    @property
    def n_rows(self) -> int:
        return self.n_bound + self.n_scenarios * self.block_size

    def cost(self, U: np.ndarray) -> float:
        return float(U @ self.quad_cost @ U + self.lin_cost @ U)

    def residuals(self, U: np.ndarray) -> np.ndarray:
        """Slack b - A U for every row (negative means violated)."""
        out = np.empty(self.n_rows)
        out[: self.n_bound] = self.bound_rhs - self.bound_lhs @ U
        if self.comfort_lhs is not None and self.n_scenarios:
            block = self.comfort_lhs @ U
            out[self.n_bound :] = (self.comfort_rhs - block[None, :]).ravel()
        return out

    def dot_rows(self, p: np.ndarray) -> np.ndarray:
        """A p for every row; scenario blocks share the same values."""
        out = np.empty(self.n_rows)
        out[: self.n_bound] = self.bound_lhs @ p
        if self.comfort_lhs is not None and self.n_scenarios:
            block = self.comfort_lhs @ p
            out[self.n_bound :] = np.tile(block, self.n_scenarios)
        return out

    def row_lhs(self, i: int) -> np.ndarray:
        if i < 0 or i >= self.n_rows:
            raise ValidationError(f"row index {i} out of range [0, {self.n_rows})")
        if i < self.n_bound:
            return self.bound_lhs[i]
        return self.comfort_lhs[(i - self.n_bound) % self.block_size]

    def row_rhs(self, i: int) -> float:
        if i < self.n_bound:
            return float(self.bound_rhs[i])
        r = i - self.n_bound
        return float(self.comfort_rhs[r // self.block_size, r % self.block_size])

    def row_tag(self, i: int):
        """('input-bound', k) or ('comfort', scenario, zone, step)."""
        if i < 0 or i >= self.n_rows:
            raise ValidationError(f"row index {i} out of range [0, {self.n_rows})")
        if i < self.n_bound:
            label = self.bound_labels[i] if self.bound_labels else "input-bound"
            return (label, i)
        r = i - self.n_bound
        scenario, pos = divmod(r, self.block_size)
        if self.comfort_meta is not None:
            n_zones, _ = self.comfort_meta
            return ("comfort", scenario, pos % n_zones, pos // n_zones)
        return ("comfort", scenario, pos)

    def scenario_rows(self, scenario: int) -> range:
        """Row indices belonging to one scenario block."""
        if not (0 <= scenario < self.n_scenarios):
            raise ValidationError(f"scenario {scenario} out of range [0, {self.n_scenarios})")
        start = self.n_bound + scenario * self.block_size
        return range(start, start + self.block_size)


@dataclass
class SolveResult:
    U_star: np.ndarray
    cost: float
    duals: np.ndarray
    active_set: np.ndarray  # rows with ~zero slack
    status: str  # "optimal" | "infeasible"
    n_iterations: int = 0
    working_set: tuple[int, ...] = field(default_factory=tuple)


def _materialize(program: ScenarioProgram) -> tuple[np.ndarray, np.ndarray]:
    rows = [program.bound_lhs]
    rhs = [program.bound_rhs]
    if program.comfort_lhs is not None and program.n_scenarios:
        rows.append(np.tile(program.comfort_lhs, (program.n_scenarios, 1)))
        rhs.append(program.comfort_rhs.ravel())
    return np.vstack(rows), np.concatenate(rhs)


def _phase1_start(program: ScenarioProgram, exclude_mask: np.ndarray, feas_tol: float):
    """LP phase 1: minimize the uniform inflation t with A U - t <= b.

    Returns a feasible U or None. Materializes the rows, so it is reserved
    for modest program sizes; large scenario programs should pass an
    explicit start instead.
    """
    if program.n_rows * program.dim > _PHASE1_ENTRY_LIMIT:
        raise ValidationError(
            "program too large for phase-1 initialization; supply a feasible start"
        )
    A, b = _materialize(program)
    keep = ~exclude_mask
    A, b = A[keep], b[keep]
    d = program.dim
    c = np.zeros(d + 1)
    c[-1] = 1.0
    A_ub = np.hstack([A, -np.ones((A.shape[0], 1))])
    bounds = [(None, None)] * d + [(0.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if not res.success or res.x[-1] > feas_tol:
        return None
    return res.x[:d]


def solve_qp(
    program: ScenarioProgram,
    *,
    feas_tol: float = DEFAULT_FEAS_TOL,
    max_iter: int | None = None,
    start: np.ndarray | None = None,
    warm_working_set: Iterable[int] | None = None,
    exclude_rows: Sequence[int] = (),
    stop_if_moved: tuple[np.ndarray, float] | None = None,
) -> SolveResult:
    """Solve the program to a KKT-certified optimum.

    `start` must be feasible if given (it is checked); otherwise a phase-1
    LP finds one, or the program is reported infeasible. `exclude_rows`
    removes rows without copying the program, which is what removal-based
    support counting uses. `warm_working_set` seeds the active-set iteration
    (rows not active at the start point are dropped from it).

    `stop_if_moved = (U_ref, tol)` returns early with status "moved" once
    the iterate leaves the max-norm ball around U_ref: the objective
    decreases strictly along the iteration, so for a strictly convex
    program any such move certifies that the optimum differs from U_ref.
    Support counting uses this to avoid walking all the way to the
    relaxed optimum.
    """
    d = program.dim
    P = 2.0 * program.quad_cost
    c = program.lin_cost.astype(float)
    try:
        P_chol = cho_factor(P)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("quadratic cost must be positive definite") from exc

    exclude_mask = np.zeros(program.n_rows, dtype=bool)
    for i in exclude_rows:
        exclude_mask[i] = True

    def residuals(U):
        r = program.residuals(U)
        r[exclude_mask] = np.inf
        return r

    x = None
    if start is not None:
        start = np.asarray(start, dtype=float)
        if start.shape != (d,):
            raise ValidationError(f"start must have shape ({d},), got {start.shape}")
        if residuals(start).min() >= -feas_tol:
            x = start.copy()
    if x is None:
        x = _phase1_start(program, exclude_mask, feas_tol)
        if x is None:
            return SolveResult(
                U_star=np.full(d, np.nan),
                cost=np.nan,
                duals=np.zeros(program.n_rows),
                active_set=np.empty(0, dtype=int),
                status="infeasible",
            )

    if max_iter is None:
        max_iter = 100 * d + 1000

    working: list[int] = []
    W_rows = np.empty((0, d))
    if warm_working_set is not None:
        res0 = residuals(x)
        cand = sorted(
            int(i) for i in warm_working_set if not exclude_mask[i] and abs(res0[i]) <= feas_tol
        )
        if cand:
            A_cand = np.array([program.row_lhs(i) for i in cand])
            # one rank-revealing QR picks a linearly independent subset
            _, r, piv = qr(A_cand.T, pivoting=True, mode="economic")
            diag = np.abs(np.diag(r))
            if diag.size and diag[0] > 0.0:
                rank = int((diag > diag[0] * max(A_cand.shape) * np.finfo(float).eps).sum())
            else:
                rank = 0
            keep = sorted(piv[:rank])
            working = [cand[k] for k in keep]
            W_rows = A_cand[keep]

    n_iter = 0
    while True:
        n_iter += 1
        if n_iter > max_iter:
            raise ConvergenceError(
                f"active-set iteration cap {max_iter} exceeded", best_iterate=x
            )
        g = P @ x + c
        if working:
            PiW = cho_solve(P_chol, W_rows.T)  # P^{-1} A_W'
            S = W_rows @ PiW
            rhs = -(W_rows @ cho_solve(P_chol, g))
            try:
                lam = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                lam = np.linalg.lstsq(S, rhs, rcond=None)[0]
            step = -cho_solve(P_chol, g + W_rows.T @ lam)
        else:
            lam = np.empty(0)
            step = -cho_solve(P_chol, g)

        scale = max(1.0, float(np.linalg.norm(x)))
        if np.linalg.norm(step) <= 1e-12 * scale:
            if lam.size == 0 or lam.min() >= -1e-10 * max(1.0, abs(lam).max()):
                duals = np.zeros(program.n_rows)
                for idx, row in zip(working, lam):
                    duals[idx] = max(row, 0.0)
                res = residuals(x)
                res[exclude_mask] = np.inf
                active = np.flatnonzero(res <= feas_tol)
                return SolveResult(
                    U_star=x,
                    cost=program.cost(x),
                    duals=duals,
                    active_set=active,
                    status="optimal",
                    n_iterations=n_iter,
                    working_set=tuple(working),
                )
            # drop the most negative multiplier; lowest index on ties
            drop_pos = int(np.lexsort((working, lam))[0])
            del working[drop_pos]
            W_rows = np.delete(W_rows, drop_pos, axis=0)
            continue

        # ratio test over rows not in the working set
        Ad = program.dot_rows(step)
        res = residuals(x)
        Ad[exclude_mask] = -1.0
        if working:
            Ad[np.asarray(working)] = -1.0  # never re-block a working row
        pos = Ad > 1e-12 * max(1.0, float(np.abs(step).max()))
        alpha = 1.0
        blocking = -1
        if pos.any():
            ratios = np.maximum(res[pos], 0.0) / Ad[pos]
            k = int(np.argmin(ratios))  # first minimum = lowest row index
            if ratios[k] < alpha:
                alpha = float(ratios[k])
                blocking = int(np.flatnonzero(pos)[k])
        x = x + alpha * step
        if stop_if_moved is not None:
            ref, move_tol = stop_if_moved
            if float(np.abs(x - ref).max()) > move_tol:
                return SolveResult(
                    U_star=x,
                    cost=program.cost(x),
                    duals=np.zeros(program.n_rows),
                    active_set=np.empty(0, dtype=int),
                    status="moved",
                    n_iterations=n_iter,
                    working_set=tuple(working),
                )
        if blocking >= 0:
            working.append(blocking)
            W_rows = np.vstack([W_rows, program.row_lhs(blocking)])


def active_constraints(result: SolveResult, tol: float | None = None) -> np.ndarray:
    """Rows whose dual exceeds tol (default 1e-6 relative to the largest)."""
    if result.status != "optimal":
        raise ValidationError("active_constraints requires an optimal result")
    if tol is None:
        tol = DEFAULT_DUAL_TOL_REL * max(1.0, float(np.abs(result.duals).max(initial=0.0)))
    return np.flatnonzero(result.duals > tol)


def _changed(U_a: np.ndarray, U_b: np.ndarray, tol: float) -> bool:
    return float(np.abs(U_a - U_b).max()) > tol


def _certificate_survives(program: ScenarioProgram, result: SolveResult, removed) -> bool:
    """True when the optimum provably stays in place after removing `removed`:
    the negative gradient is still a nonnegative combination of the remaining
    active rows (a KKT certificate at the unchanged optimum, checked by
    nonnegative least squares)."""
    removed = set(removed)
    g = 2.0 * program.quad_cost @ result.U_star + program.lin_cost
    g_scale = max(1.0, float(np.linalg.norm(g)))
    keep = [int(i) for i in result.active_set if int(i) not in removed]
    if not keep:
        return float(np.linalg.norm(g)) <= 1e-8 * g_scale
    A_cols = np.array([program.row_lhs(i) for i in keep]).T
    _, resid = nnls(A_cols, -g)
    return resid <= 1e-8 * g_scale


def _removal_moves_optimum(
    program: ScenarioProgram,
    result: SolveResult,
    removed,
    change_tol: float,
    feas_tol: float,
) -> bool:
    """Removal test for one row (or row block): certificate pre-filter, then
    an early-stopping re-solve from the incumbent optimum."""
    if _certificate_survives(program, result, removed):
        return False
    removed = set(removed)
    sub = solve_qp(
        program,
        feas_tol=feas_tol,
        start=result.U_star,
        warm_working_set=[w for w in result.working_set if w not in removed],
        exclude_rows=tuple(sorted(removed)),
        stop_if_moved=(result.U_star, change_tol),
    )
    if sub.status == "moved":
        return True
    if sub.status != "optimal":
        raise ConvergenceError(
            f"re-solve without rows {sorted(removed)} failed", best_iterate=None
        )
    return _changed(sub.U_star, result.U_star, change_tol)


def count_support_constraints(
    program: ScenarioProgram,
    result: SolveResult,
    *,
    change_tol: float | None = None,
    feas_tol: float = DEFAULT_FEAS_TOL,
) -> tuple[int, list[int]]:
    """Removal-based support count over individual rows.

    Only geometrically active rows can be of support in a convex program,
    so those are the only candidates examined. A row is of support when
    re-solving without it moves the optimizer by more than `change_tol`
    (default 1e-6 relative to the optimizer's magnitude); rows whose KKT
    certificate survives the removal are skipped without a re-solve.
    """
    if result.status != "optimal":
        raise ValidationError("support counting requires an optimal result")
    if change_tol is None:
        change_tol = DEFAULT_SUPPORT_TOL_REL * max(1.0, float(np.abs(result.U_star).max()))
    support = []
    for i in sorted(int(i) for i in result.active_set):
        if _removal_moves_optimum(program, result, (i,), change_tol, feas_tol):
            support.append(i)
    return len(support), support


def count_support_scenarios(
    program: ScenarioProgram,
    result: SolveResult,
    *,
    change_tol: float | None = None,
    feas_tol: float = DEFAULT_FEAS_TOL,
) -> tuple[int, list[int]]:
    """Removal-based support count at scenario granularity: a scenario is of
    support when dropping its whole comfort block changes the optimizer.
    Candidates are scenarios owning at least one active row."""
    if result.status != "optimal":
        raise ValidationError("support counting requires an optimal result")
    if change_tol is None:
        change_tol = DEFAULT_SUPPORT_TOL_REL * max(1.0, float(np.abs(result.U_star).max()))
    if program.n_scenarios == 0:
        return 0, []
    candidates = sorted(
        {
            (int(i) - program.n_bound) // program.block_size
            for i in result.active_set
            if i >= program.n_bound
        }
    )
    support = []
    for s in candidates:
        rows = program.scenario_rows(s)
        if _removal_moves_optimum(program, result, rows, change_tol, feas_tol):
            support.append(s)
    return len(support), support


def dump_program(program: ScenarioProgram, path) -> None:
    """Write the program in a plain-text row-major format for debugging.

    Layout: a header line `qp-dump v1 d=<d> rows=<n>`, then the quadratic
    cost (d lines), the linear cost (1 line), and one `a_1 ... a_d | b`
    line per constraint row. Scenario structure is flattened.
    """
    A, b = _materialize(program)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"qp-dump v1 d={program.dim} rows={A.shape[0]}\n")
        for row in program.quad_cost:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(" ".join(repr(float(v)) for v in program.lin_cost) + "\n")
        for row, rhs in zip(A, b):
            fh.write(" ".join(repr(float(v)) for v in row) + " | " + repr(float(rhs)) + "\n")


def load_program(path) -> ScenarioProgram:
    """Read a program written by `dump_program` (all rows become bound rows)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:2] != ["qp-dump", "v1"]:
            raise ValidationError(f"unrecognized dump header: {' '.join(header)}")
        d = int(header[2].split("=")[1])
        n = int(header[3].split("=")[1])
        quad = np.array([[float(v) for v in fh.readline().split()] for _ in range(d)])
        lin = np.array([float(v) for v in fh.readline().split()])
        rows, rhs = [], []
        for _ in range(n):
            left, right = fh.readline().split("|")
            rows.append([float(v) for v in left.split()])
            rhs.append(float(right))
    return ScenarioProgram(
        quad_cost=quad,
        lin_cost=lin,
        bound_lhs=np.array(rows).reshape(n, d),
        bound_rhs=np.array(rhs),
    )
