"""First-order solve engine.

The internal path is a primal log-barrier method: finite bounds and general
inequality constraints enter the barrier, affine equalities are eliminated
exactly through a null-space reparameterization, and each barrier
subproblem is minimized by gradient-only descent (an L-BFGS memory built
from gradients) with monotone Armijo backtracking. sca_solve wraps the
whole transform-and-solve step in an outer loop that re-linearizes at each
new point, with a proximal term and a descent check so the iteration cannot
ping-pong between linearization corners.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .convexify import ConvexifyPolicy, ConvexProblem, convexify_problem
from .curvature import SignContext, curvature_of
from .errors import SolverInfeasibleError, SolverNumericalError
from .expr import (
    Add,
    Assignment,
    Const,
    Mul,
    Neg,
    Pow,
    ScalarExpr,
    Var,
    compile_fn,
    differentiate,
    evaluate,
    simplify,
)
from .problem import Direction, Problem, default_reference_point

_MATH_ERRORS = (ValueError, ZeroDivisionError, OverflowError)


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class BackendId:
    """Solve path: internal fast paths or an external script target that is
    only ever rendered as text, never executed here."""

    kind: str  # "internal-affine" | "internal-barrier" | "script"
    script_name: str | None = None

    @classmethod
    def internal_affine(cls) -> BackendId:
        return cls("internal-affine")

    @classmethod
    def internal_barrier(cls) -> BackendId:
        return cls("internal-barrier")

    @classmethod
    def script(cls, name: str) -> BackendId:
        return cls("script", name)

    @property
    def is_script(self) -> bool:
        return self.kind == "script"

    def __str__(self):
        return f"script:{self.script_name}" if self.is_script else self.kind


@dataclass(frozen=True)
class SolveOptions:
    max_inner: int = 400          # descent iterations per barrier stage
    initial_step: float = 1.0     # first trial step of each line search
    kkt_tol: float = 1e-8
    mu0: float = 10.0
    mu_shrink: float = 10.0
    mu_min: float = 1e-9
    backtrack_beta: float = 0.5
    armijo_c: float = 1e-4
    sca_max_rounds: int = 60
    sca_step_tol: float = 1e-6
    sca_prox: float = 1.0
    restore_iters: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.kkt_tol <= 0 or self.mu_min <= 0 or self.sca_step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_inner < 1 or self.sca_max_rounds < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass(frozen=True)
class Solution:
    status: SolveStatus
    x: Assignment | None
    value: float | None
    iterations: int
    residuals: dict = field(default_factory=dict)

    @property
    def has_point(self) -> bool:
        return self.x is not None


def select_backend(pc: ConvexProblem, prefer_script: str | None = None) -> BackendId:
    """All-affine problems go to the affine fast path, anything smooth to
    the barrier path; prefer_script redirects to emission-only backends."""
    if prefer_script:
        return BackendId.script(prefer_script)
    pb = pc.problem
    ctx = SignContext.for_problem(pb)
    exprs = [pb.objective, *pb.ineq, *pb.eq]
    if all(curvature_of(e, ctx).is_affine for e in exprs):
        return BackendId.internal_affine()
    return BackendId.internal_barrier()


class _Compiled:
    """Value and gradient callables for one expression over a fixed
    variable order, parameters baked in."""

    def __init__(self, expr: ScalarExpr, names: list[str], params: dict):
        self.value = compile_fn(expr, names, params)
        self.grad_fns = [
            compile_fn(simplify(differentiate(expr, v)), names, params) for v in names
        ]

    def grad(self, x: list[float]) -> np.ndarray:
        return np.array([g(x) for g in self.grad_fns])


def _project_into_box(x0: Assignment, pb: Problem, margin: float = 1e-9) -> np.ndarray:
    out = []
    for v in pb.variables:
        value = x0.get(v.name, 0.0)
        width = v.ub - v.lb if math.isfinite(v.ub - v.lb) else 1.0
        pad = margin * max(1.0, abs(width))
        if math.isfinite(v.lb):
            value = max(value, v.lb + pad)
        if math.isfinite(v.ub):
            value = min(value, v.ub - pad)
        out.append(value)
    return np.array(out, dtype=float)


class _BarrierCore:
    def __init__(self, pc: ConvexProblem, opts: SolveOptions):
        pb = pc.problem
        self.pb = pb
        self.opts = opts
        self.names = pb.var_names()
        self.n = len(self.names)
        params = pb.parameters
        objective = pb.objective
        if pb.direction is Direction.MAXIMIZE:
            objective = Neg(objective)
        self.f = _Compiled(objective, self.names, params)
        self.gs = [_Compiled(g, self.names, params) for g in pb.ineq]
        self.bound_rows: list[tuple[np.ndarray, float]] = []
        for i, v in enumerate(pb.variables):
            if math.isfinite(v.lb):
                a = np.zeros(self.n)
                a[i] = -1.0
                self.bound_rows.append((a, -v.lb))
            if math.isfinite(v.ub):
                a = np.zeros(self.n)
                a[i] = 1.0
                self.bound_rows.append((a, v.ub))
        self.m = len(self.gs) + len(self.bound_rows)
        self.iterations = 0
        self._setup_equalities(pb, params)

    def _setup_equalities(self, pb: Problem, params: dict) -> None:
        if not pb.eq:
            self.A = None
            self.b = None
            self.xp = np.zeros(self.n)
            self.N = np.eye(self.n)
            return
        k = len(pb.eq)
        A = np.zeros((k, self.n))
        b = np.zeros(k)
        zero = [0.0] * self.n
        for row, h in enumerate(pb.eq):
            hf = _Compiled(h, self.names, params)
            try:
                A[row] = hf.grad(zero)
                b[row] = -hf.value(zero)
            except _MATH_ERRORS as exc:
                raise SolverNumericalError(f"equality row {row}: {exc}") from None
        xp, *_ = np.linalg.lstsq(A, b, rcond=None)
        scale = 1.0 + (np.max(np.abs(b)) if k else 0.0)
        if np.max(np.abs(A @ xp - b)) > 1e-8 * scale:
            raise SolverInfeasibleError("equality system is inconsistent")
        _, s, vt = np.linalg.svd(A)
        rank = int(np.sum(s > 1e-10 * (s[0] if s.size else 1.0)))
        self.A = A
        self.b = b
        self.xp = xp
        self.N = vt[rank:].T

    # -- geometry ------------------------------------------------------------

    def x_of(self, z: np.ndarray) -> np.ndarray:
        return self.xp + self.N @ z

    def z_of(self, x: np.ndarray) -> np.ndarray:
        return self.N.T @ (x - self.xp)

    def ineq_vals(self, x: np.ndarray) -> np.ndarray:
        xl = list(x)
        vals = [g.value(xl) for g in self.gs]
        vals.extend(float(a @ x) - rhs for a, rhs in self.bound_rows)
        return np.array(vals) if vals else np.zeros(0)

    def ineq_jac(self, x: np.ndarray) -> np.ndarray:
        xl = list(x)
        rows = [g.grad(xl) for g in self.gs]
        rows.extend(a for a, _ in self.bound_rows)
        return np.array(rows) if rows else np.zeros((0, self.n))

    # -- restoration ----------------------------------------------------------

    def restore(self, z: np.ndarray, margin: float) -> np.ndarray | None:
        """Penalty descent on sum max(0, g + 2*margin)^2 toward a strictly
        interior point."""
        alpha = 1.0
        prev: tuple[np.ndarray, np.ndarray] | None = None
        for _ in range(self.opts.restore_iters):
            x = self.x_of(z)
            try:
                vals = self.ineq_vals(x)
            except _MATH_ERRORS:
                return None
            if vals.size == 0 or float(np.max(vals)) <= -margin:
                return z
            shifted = np.maximum(vals + 2.0 * margin, 0.0)
            try:
                jac = self.ineq_jac(x)
            except _MATH_ERRORS:
                return None
            gz = self.N.T @ (2.0 * shifted @ jac)
            gn2 = float(gz @ gz)
            if gn2 < 1e-28:
                return None
            pval = float(shifted @ shifted)
            if prev is not None:
                s = z - prev[0]
                y = gz - prev[1]
                sy = float(s @ y)
                if sy > 1e-16:
                    alpha = float(s @ s) / sy
            alpha = min(max(alpha, 1e-10), 1e6)
            a = alpha
            accepted = False
            for _ in range(60):
                zt = z - a * gz
                try:
                    vt = self.ineq_vals(self.x_of(zt))
                except _MATH_ERRORS:
                    a *= 0.5
                    continue
                st = np.maximum(vt + 2.0 * margin, 0.0)
                pt = float(st @ st)
                if pt < pval - 1e-4 * a * gn2:
                    accepted = True
                    break
                a *= 0.5
            if not accepted:
                break
            prev = (z.copy(), gz.copy())
            z = z - a * gz
            self.iterations += 1
        x = self.x_of(z)
        try:
            worst = float(np.max(self.ineq_vals(x)))
        except _MATH_ERRORS:
            return None
        return z if worst <= -margin * 0.1 else None

    # -- barrier stages --------------------------------------------------------

    def phi_value(self, z: np.ndarray, mu: float) -> float | None:
        x = self.x_of(z)
        try:
            fv = self.f.value(list(x))
            gvals = self.ineq_vals(x)
        except _MATH_ERRORS:
            return None
        if gvals.size and float(np.max(gvals)) >= 0.0:
            return None
        val = fv - mu * float(np.sum(np.log(-gvals))) if gvals.size else fv
        return val if math.isfinite(val) else None

    def phi_grad(self, z: np.ndarray, mu: float) -> tuple[np.ndarray, float]:
        x = self.x_of(z)
        fg = self.f.grad(list(x))
        fscale = float(np.max(np.abs(fg))) if fg.size else 0.0
        gx = fg
        if self.m:
            gvals = self.ineq_vals(x)
            jac = self.ineq_jac(x)
            gx = gx + (mu / (-gvals)) @ jac
        return self.N.T @ gx, fscale

    def minimize(self, z: np.ndarray) -> tuple[np.ndarray, SolveStatus, float]:
        """Returns the final point, a status, and a relative first-order
        stationarity proxy: the scaled projected-gradient norm, or once the
        barrier path has completed all stages, the central-path duality-gap
        bound mu*m, whichever certificate is smaller."""
        opts = self.opts
        d = self.N.shape[1]
        mu = opts.mu0 if self.m else 0.0
        exhausted = False
        rel_proxy = 0.0
        while True:
            val = self.phi_value(z, mu)
            if val is None:
                return z, SolveStatus.NUMERICAL_FAILURE, math.inf
            gz, fscale = self.phi_grad(z, mu)
            if self.m:
                stage_tol = max(opts.kkt_tol * (1.0 + fscale), mu * 1e-2)
            else:
                stage_tol = opts.kkt_tol * (1.0 + fscale)
            gn = float(np.max(np.abs(gz))) if d else 0.0
            memory: list[tuple[np.ndarray, np.ndarray, float]] = []
            converged = d == 0
            for _ in range(opts.max_inner):
                if gn <= stage_tol:
                    converged = True
                    break
                direction = self._lbfgs_direction(gz, memory)
                slope = float(gz @ direction)
                if slope >= 0.0:
                    direction = -gz
                    slope = -float(gz @ gz)
                step = opts.initial_step
                accepted = False
                for _ in range(60):
                    zt = z + step * direction
                    vt = self.phi_value(zt, mu)
                    if vt is not None and vt < val \
                            and vt <= val + opts.armijo_c * step * slope:
                        accepted = True
                        break
                    step *= opts.backtrack_beta
                if not accepted:
                    # progress below float resolution; the stage is as
                    # centered as the arithmetic allows
                    converged = True
                    break
                gt, fscale = self.phi_grad(zt, mu)
                s = zt - z
                y = gt - gz
                sy = float(s @ y)
                if sy > 1e-14:
                    memory.append((s, y, 1.0 / sy))
                    if len(memory) > 12:
                        memory.pop(0)
                z, val, gz = zt, vt, gt
                gn = float(np.max(np.abs(gz))) if d else 0.0
                self.iterations += 1
            if not converged:
                exhausted = True
            rel_proxy = gn / (1.0 + fscale) if d else 0.0
            if not self.m or mu <= opts.mu_min * (1.0 + 1e-9):
                break
            mu /= opts.mu_shrink
        if not exhausted and self.m:
            try:
                fval = abs(self.f.value(list(self.x_of(z))))
            except _MATH_ERRORS:
                fval = 0.0
            gap_proxy = mu * self.m / (1.0 + fval)
            rel_proxy = min(rel_proxy, gap_proxy)
        status = SolveStatus.MAX_ITERATIONS if exhausted else SolveStatus.OPTIMAL
        return z, status, rel_proxy

    @staticmethod
    def _lbfgs_direction(gz: np.ndarray, memory) -> np.ndarray:
        q = gz.copy()
        alphas = []
        for s, y, rho in reversed(memory):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if memory:
            s, y, _ = memory[-1]
            q *= float(s @ y) / float(y @ y)
        for (s, y, rho), a in zip(memory, reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return -q


def solve(pc: ConvexProblem, x0: Assignment | None = None,
          opts: SolveOptions | None = None) -> Solution:
    """Minimize the certified-convex problem (maximize is handled by
    negation and reported in the original direction)."""
    opts = opts or SolveOptions()
    pb = pc.problem
    if not pb.variables:
        try:
            value = evaluate(pb.objective, pb.parameters)
        except Exception:
            return Solution(SolveStatus.NUMERICAL_FAILURE, None, None, 0)
        return Solution(SolveStatus.OPTIMAL, Assignment({}), value, 0)
    if x0 is None:
        x0 = default_reference_point(pb)
    try:
        core = _BarrierCore(pc, opts)
    except SolverInfeasibleError:
        return Solution(SolveStatus.INFEASIBLE, None, None, 0)
    except SolverNumericalError:
        return Solution(SolveStatus.NUMERICAL_FAILURE, None, None, 0)

    x_start = _project_into_box(x0, pb)
    z = core.z_of(x_start)

    if core.m:
        x = core.x_of(z)
        try:
            worst = float(np.max(core.ineq_vals(x)))
        except _MATH_ERRORS:
            worst = math.inf
        if worst >= -1e-9:
            restored = core.restore(z, margin=1e-6)
            if restored is None:
                return Solution(SolveStatus.INFEASIBLE, None, None, core.iterations)
            z = restored

    z, status, proxy = core.minimize(z)
    if status is SolveStatus.NUMERICAL_FAILURE:
        return Solution(status, None, None, core.iterations)

    x = core.x_of(z)
    assignment = Assignment(dict(zip(core.names, (float(v) for v in x))))
    try:
        value = evaluate(pb.objective, pb.full_assignment(assignment))
    except Exception:
        return Solution(SolveStatus.NUMERICAL_FAILURE, None, None, core.iterations)
    try:
        res_ineq = float(np.max(core.ineq_vals(x))) if core.m else 0.0
    except _MATH_ERRORS:
        res_ineq = math.inf
    res_eq = float(np.max(np.abs(core.A @ x - core.b))) if pb.eq else 0.0
    residuals = {"max_ineq": res_ineq, "max_eq": res_eq, "stationarity": proxy}
    if status is SolveStatus.OPTIMAL:
        feas_scale = 1e-6
        if res_ineq > feas_scale or res_eq > feas_scale or proxy > opts.kkt_tol:
            status = SolveStatus.MAX_ITERATIONS
    return Solution(status, assignment, value, core.iterations, residuals)


@dataclass(frozen=True)
class ScaRound:
    round: int
    surrogate_value: float | None
    true_value: float | None
    step_norm: float
    prox_weight: float


@dataclass(frozen=True)
class ScaResult:
    solution: Solution
    rounds: tuple[ScaRound, ...]
    convex_problem: ConvexProblem | None
    failed_round: int | None = None


def _prox_objective(pb: Problem, x_ref: Assignment, tau: float) -> ScalarExpr:
    terms = [
        Mul((Const(0.5 * tau), Pow(Add((Var(v.name), Neg(Const(x_ref[v.name])))), 2.0)))
        for v in pb.variables
    ]
    prox = Add(tuple(terms)) if len(terms) > 1 else terms[0]
    if pb.direction is Direction.MAXIMIZE:
        return Add((pb.objective, Neg(prox)))
    return Add((pb.objective, prox))


def _minimize_sense(pb: Problem, x: Assignment) -> float | None:
    try:
        value = evaluate(pb.objective, pb.full_assignment(x))
    except Exception:
        return None
    return -value if pb.direction is Direction.MAXIMIZE else value


def sca_solve(pb: Problem, opts: SolveOptions | None = None,
              x0: Assignment | None = None,
              policy: ConvexifyPolicy | None = None) -> ScaResult:
    """Outer convexify-solve loop: re-linearize at each accepted point until
    the iterates stop moving. An already-convex input reduces to one plain
    solve."""
    opts = opts or SolveOptions()
    x = x0 or default_reference_point(pb)
    tau = opts.sca_prox
    rounds: list[ScaRound] = []
    total_iters = 0
    pc: ConvexProblem | None = None
    last_solution: Solution | None = None

    for t in range(opts.sca_max_rounds):
        try:
            pc = convexify_problem(pb, x, policy)
        except Exception:
            sol = Solution(SolveStatus.NUMERICAL_FAILURE, None, None, total_iters)
            return ScaResult(sol, tuple(rounds), None, failed_round=t)
        if not pc.record.entries:
            sol = solve(pc, x, opts)
            rounds.append(ScaRound(t, sol.value, sol.value, 0.0, tau))
            return ScaResult(sol, tuple(rounds), pc)

        surrogate = replace(pc.problem, objective=_prox_objective(pc.problem, x, tau))
        prox_pc = ConvexProblem(surrogate, pc.record, pb, x)
        sol = solve(prox_pc, x, opts)
        total_iters += sol.iterations
        if not sol.has_point:
            return ScaResult(
                replace(sol, iterations=total_iters), tuple(rounds), pc, failed_round=t
            )
        candidate = sol.x
        current_val = _minimize_sense(pb, x)
        cand_val = _minimize_sense(pb, candidate)

        # descent check with halving toward the current point
        if current_val is not None:
            halvings = 0
            while cand_val is None or (
                cand_val > current_val - 1e-12 * (1.0 + abs(current_val))
                and halvings < 30
            ):
                halvings += 1
                candidate = Assignment({
                    name: 0.5 * (candidate[name] + x[name]) for name in candidate
                })
                cand_val = _minimize_sense(pb, candidate)
            if halvings:
                tau = min(tau * 2.0, 1e8)
            if cand_val is None or cand_val > current_val - 1e-12 * (1.0 + abs(current_val)):
                candidate = x
                cand_val = current_val

        step = max(
            (abs(candidate[name] - x[name]) for name in candidate), default=0.0
        )
        true_value = None
        if cand_val is not None:
            true_value = -cand_val if pb.direction is Direction.MAXIMIZE else cand_val
        rounds.append(ScaRound(t, sol.value, true_value, step, tau))
        x = candidate
        last_solution = sol
        if step <= opts.sca_step_tol:
            break

    final_value = None
    try:
        final_value = evaluate(pb.objective, pb.full_assignment(x))
    except Exception:
        pass
    status = last_solution.status if last_solution else SolveStatus.MAX_ITERATIONS
    final = Solution(
        status,
        x,
        final_value,
        total_iters,
        last_solution.residuals if last_solution else {},
    )
    return ScaResult(final, tuple(rounds), pc)
