"""Self-contained LP / MILP kernel.

Linear programs are solved with a bounded-variable revised simplex
(dense basis inverse, Dantzig pricing, Bland's rule fallback against
cycling). Mixed-integer models are solved with best-first branch and
bound over the binary variables. Quadratic generator costs enter as
convex piecewise-linear chords so the whole stack stays linear.

Solvers report statuses, never raise for infeasible or unbounded
models. All tie-breaking rules are fixed, so identical models produce
identical solutions and node counts.
"""

from __future__ import annotations

import heapq
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

INF = math.inf

FEAS_TOL = 1e-7      # constraint feasibility at reported solutions
BOUND_TOL = 1e-9     # variable bound feasibility at reported solutions
DUAL_TOL = 1e-7      # reduced-cost optimality margin
INT_TOL = 1e-6       # integrality tolerance for binaries
PIVOT_TOL = 1e-9     # smallest usable pivot magnitude


class KernelError(Exception):
    pass


class NonConvexCost(KernelError):
    """Quadratic coefficient a < 0: chords would under-estimate."""


class BinariesPresent(KernelError):
    """solve_lp called on a model with unfixed binary variables."""


class PwlCost:
    """Convex piecewise-linear cost given by its breakpoints.

    Breakpoints are (p, cost) pairs with strictly increasing p and
    non-decreasing chord slopes. The function equals the chord
    interpolation between breakpoints, which for a convex generator
    curve is the max of the chord lines.
    """

    def __init__(self, breakpoints):
        pts = [(float(p), float(v)) for p, v in breakpoints]
        if len(pts) < 2:
            raise KernelError("PwlCost needs at least 2 breakpoints")
        for (p0, _), (p1, _) in zip(pts, pts[1:]):
            if not p1 > p0:
                raise KernelError("PwlCost breakpoints must increase in P")
        slopes = [(v1 - v0) / (p1 - p0)
                  for (p0, v0), (p1, v1) in zip(pts, pts[1:])]
        for s0, s1 in zip(slopes, slopes[1:]):
            if s1 < s0 - 1e-9:
                raise KernelError("PwlCost slopes must be non-decreasing")
        self.breakpoints = pts
        self.slopes = slopes

    def segments(self):
        """Yield (slope, intercept) of each chord line."""
        for (p0, v0), s in zip(self.breakpoints, self.slopes):
            yield s, v0 - s * p0

    def value(self, p: float) -> float:
        """PWL value at p; the max of the chords for in-range p."""
        return max(s * p + i for s, i in self.segments())


def pwl_quadratic(a: float, b: float, c: float, p_min: float, p_max: float,
                  n_seg: int) -> PwlCost:
    """Chords of a*P^2 + b*P + c on n_seg equal-width segments.

    Over-estimates the quadratic between breakpoints; the max gap is
    a * ((p_max - p_min) / n_seg)^2 / 4 at segment midpoints.
    """
    if a < 0:
        raise NonConvexCost(f"quadratic coefficient a={a} < 0")
    if not p_min < p_max:
        raise KernelError("need p_min < p_max")
    if n_seg < 1:
        raise KernelError("need n_seg >= 1")
    ps = np.linspace(p_min, p_max, n_seg + 1)
    return PwlCost([(p, a * p * p + b * p + c) for p in ps])


@dataclass
class _Var:
    name: str
    lb: float
    ub: float
    binary: bool = False


class OptModel:
    """Linear model: variables with bounds, linear rows, PWL objective."""

    def __init__(self, name: str = ""):
        self.name = name
        self.vars: list[_Var] = []
        self.rows: list[tuple[dict[int, float], str, float, str]] = []
        self.obj: dict[int, float] = {}
        self.obj_const: float = 0.0
        self.pwl_terms: list[tuple[int, PwlCost]] = []
        self._names: dict[str, int] = {}

    def add_var(self, name: str, lb: float = -INF, ub: float = INF,
                binary: bool = False) -> int:
        if name in self._names:
            raise KernelError(f"duplicate variable name {name!r}")
        if lb > ub:
            raise KernelError(f"variable {name!r}: lb {lb} > ub {ub}")
        if binary:
            lb = max(lb, 0.0)
            ub = min(ub, 1.0)
        self.vars.append(_Var(name, lb, ub, binary))
        idx = len(self.vars) - 1
        self._names[name] = idx
        return idx

    def var_index(self, name: str) -> int:
        return self._names[name]

    def set_bounds(self, idx: int, lb: float, ub: float) -> None:
        if lb > ub:
            raise KernelError(f"variable {self.vars[idx].name}: lb > ub")
        self.vars[idx].lb = lb
        self.vars[idx].ub = ub

    def add_constr(self, coefs: dict[int, float], sense: str, rhs: float,
                   name: str = "") -> int:
        if sense not in ("<=", "=", ">="):
            raise KernelError(f"bad sense {sense!r}")
        for j in coefs:
            if not 0 <= j < len(self.vars):
                raise KernelError(f"row {name!r}: unknown variable index {j}")
        self.rows.append((dict(coefs), sense, float(rhs), name))
        return len(self.rows) - 1

    def add_obj(self, idx: int, coef: float) -> None:
        self.obj[idx] = self.obj.get(idx, 0.0) + coef

    def add_pwl_cost(self, idx: int, pwl: PwlCost) -> None:
        self.pwl_terms.append((idx, pwl))

    def binary_indices(self) -> list[int]:
        return [j for j, v in enumerate(self.vars) if v.binary]

    def lp_text(self) -> str:
        """Model dump in LP text format for external cross-checking."""
        aux_names = [f"_pwl{k}" for k in range(len(self.pwl_terms))]
        terms = [f"{c:+.17g} {self.vars[j].name}"
                 for j, c in sorted(self.obj.items())]
        terms += [f"+1 {nm}" for nm in aux_names]
        out = ["Minimize", " obj: " + " ".join(terms), "Subject To"]
        for r, (coefs, sense, rhs, name) in enumerate(self.rows):
            lhs = " ".join(f"{c:+.17g} {self.vars[j].name}"
                           for j, c in sorted(coefs.items()))
            op = {"<=": "<=", ">=": ">=", "=": "="}[sense]
            out.append(f" c{r}{('_' + name) if name else ''}: "
                       f"{lhs} {op} {rhs:.17g}")
        for k, (j, pwl) in enumerate(self.pwl_terms):
            for si, (s, i) in enumerate(pwl.segments()):
                out.append(f" pwl{k}_{si}: {s:+.17g} {self.vars[j].name} "
                           f"-1 {aux_names[k]} <= {-i:.17g}")
        out.append("Bounds")
        for v in self.vars:
            out.append(f" {v.lb if v.lb > -INF else '-inf'} <= {v.name} <= "
                       f"{v.ub if v.ub < INF else '+inf'}")
        bins = [self.vars[j].name for j in self.binary_indices()]
        if bins:
            out.append("Binary")
            out.append(" " + " ".join(bins))
        out.append("End")
        return "\n".join(out)


@dataclass
class Solution:
    """Solver outcome. x covers the model's variables in declared order."""

    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    wall_time_s: float = 0.0
    node_count: int = 0
    gap: float | None = None
    duals: np.ndarray | None = None
    dual_bound: float | None = None
    max_primal_infeas: float = 0.0
    max_dual_infeas: float = 0.0

    def value(self, idx: int) -> float:
        return float(self.x[idx])


# ---------------------------------------------------------------------------
# lowering: OptModel -> standard arrays (PWL terms become epigraph rows)

def _lower(model: OptModel):
    n = len(model.vars)
    n_aux = len(model.pwl_terms)
    n_tot = n + n_aux
    lb = np.array([v.lb for v in model.vars] + [-INF] * n_aux)
    ub = np.array([v.ub for v in model.vars] + [INF] * n_aux)
    c = np.zeros(n_tot)
    for j, coef in model.obj.items():
        c[j] += coef
    rows = []
    senses = []
    rhs = []
    for coefs, sense, r, _ in model.rows:
        rows.append(coefs)
        senses.append(sense)
        rhs.append(r)
    for k, (j, pwl) in enumerate(model.pwl_terms):
        aux = n + k
        c[aux] += 1.0
        # epigraph: aux >= s*P + i  <=>  s*P - aux <= -i
        for s, i in pwl.segments():
            rows.append({j: s, aux: -1.0})
            senses.append("<=")
            rhs.append(-i)
    m = len(rows)
    A = np.zeros((m, n_tot))
    for r, coefs in enumerate(rows):
        for j, coef in coefs.items():
            A[r, j] = coef
    return c, A, senses, np.array(rhs, dtype=float), lb, ub


# ---------------------------------------------------------------------------
# bounded-variable revised simplex

_LO, _UP, _FREE, _BASIC = 0, 1, 2, 3


class _Simplex:
    """Two-phase bounded simplex on A x + s = b with slack columns."""

    def __init__(self, c, A, senses, b, lb, ub):
        m, n = A.shape
        # flip >= rows so every inequality slack is [0, inf)
        flip = np.array([s == ">=" for s in senses])
        A = A.copy()
        b = b.copy()
        A[flip] *= -1.0
        b[flip] *= -1.0
        eq = np.array([s == "=" for s in senses])
        self.flip = flip
        self.m, self.n = m, n
        self.E = np.hstack([A, np.eye(m)])
        # every column past the structural block is sign * e_row, so the
        # hot products handle that tail by gather instead of dgemv
        self.As = A
        self.colnz = [np.nonzero(A[:, j])[0] for j in range(n)]
        self.colval = [A[self.colnz[j], j].copy() for j in range(n)]
        self.tail_row = np.arange(m)
        self.tail_sign = np.ones(m)
        self.b = b
        self.c = np.concatenate([c, np.zeros(m)])
        self.lb = np.concatenate([lb, np.where(eq, 0.0, 0.0)])
        self.ub = np.concatenate([ub, np.where(eq, 0.0, INF)])
        self.N = n + m
        self._ger = np.empty((m, m))   # scratch for basis inverse updates

    def _ftran(self, j):
        """Binv @ (column j of E), using the column's sparsity."""
        if j >= self.n:
            k = j - self.n
            return self.tail_sign[k] * self.Binv[:, self.tail_row[k]]
        return self.Binv[:, self.colnz[j]] @ self.colval[j]

    def _row_times_E(self, br):
        """br @ E with the identity-like tail gathered, not multiplied."""
        out = np.empty(self.N)
        out[:self.n] = br @ self.As
        out[self.n:] = br[self.tail_row] * self.tail_sign
        return out

    def _nonbasic_value(self, j):
        if self.stat[j] == _LO:
            return self.lb[j]
        if self.stat[j] == _UP:
            return self.ub[j]
        return 0.0

    def _nonbasic_vector(self):
        """Values of all columns, basics zeroed."""
        xn = np.where(self.stat == _LO, self.lb,
                      np.where(self.stat == _UP, self.ub, 0.0))
        xn[self.stat == _BASIC] = 0.0
        return xn

    def _set_xb(self):
        self.xB = self.Binv @ (self.b - self.E @ self._nonbasic_vector())

    def _refactor(self):
        B = self.E[:, self.basis]
        try:
            self.Binv = np.linalg.solve(B, np.eye(self.m))
        except np.linalg.LinAlgError:
            return False
        self._set_xb()
        return True

    def solve(self, max_iter: int | None = None):
        m, n, N = self.m, self.n, self.N
        # start: structural vars at the finite bound nearest zero
        self.stat = np.full(N, _FREE, dtype=np.int8)
        for j in range(N):
            if self.lb[j] > -INF:
                self.stat[j] = _LO
            elif self.ub[j] < INF:
                self.stat[j] = _UP
        xn_all = np.array([self._nonbasic_value(j) for j in range(N)])
        resid = self.b - self.E @ xn_all

        # slack basis; rows whose slack value violates its range get an
        # artificial column absorbing the violation (phase 1 drives it out)
        art_cols = []
        art_of_row = {}
        for i in range(m):
            s = n + i
            val = resid[i] + xn_all[s]  # slack absorbs the full residual
            if val < self.lb[s] - 1e-12 or val > self.ub[s] + 1e-12:
                art_of_row[i] = len(art_cols)
                art_cols.append(i)
        n_art = len(art_cols)
        if n_art:
            Eart = np.zeros((m, n_art))
            for k, i in enumerate(art_cols):
                s = n + i
                # clamp slack to its nearest bound, artificial takes the rest
                pin = min(max(resid[i], self.lb[s]), self.ub[s])
                Eart[i, k] = 1.0 if resid[i] - pin >= 0 else -1.0
            self.E = np.hstack([self.E, Eart])
            art_rows = np.array(art_cols, dtype=int)
            self.tail_row = np.concatenate([self.tail_row, art_rows])
            self.tail_sign = np.concatenate(
                [self.tail_sign, Eart[art_rows, np.arange(n_art)]])
            self.lb = np.concatenate([self.lb, np.zeros(n_art)])
            self.ub = np.concatenate([self.ub, np.full(n_art, INF)])
            self.c = np.concatenate([self.c, np.zeros(n_art)])
            self.stat = np.concatenate([self.stat, np.full(n_art, _LO,
                                                           dtype=np.int8)])
            self.N = N = N + n_art

        self.basis = np.empty(m, dtype=int)
        for i in range(m):
            if i in art_of_row:
                jb = n + m + art_of_row[i]
                s = n + i
                self.stat[s] = _LO if abs(self.lb[s]) < INF else _UP
            else:
                jb = n + i
            self.basis[i] = jb
            self.stat[jb] = _BASIC
        self._refactor()

        if max_iter is None:
            max_iter = 2000 * (m + N) + 10000

        if n_art:
            c1 = np.zeros(N)
            c1[n + m:] = 1.0
            status = self._iterate(c1, max_iter, phase1=True)
            if status != "Optimal":
                return "NumericalProblem"
            p1 = c1 @ self._full_x()
            if p1 > 1e-7 * max(1.0, np.max(np.abs(self.b)) if m else 1.0):
                return "Infeasible"
            # freeze artificials at zero for phase 2
            self.lb[n + m:] = 0.0
            self.ub[n + m:] = 0.0
            for j in range(n + m, N):
                if self.stat[j] != _BASIC:
                    self.stat[j] = _LO

        return self._iterate(self.c, max_iter, phase1=False)

    def _full_x(self):
        x = self._nonbasic_vector()
        x[self.basis] = self.xB
        return x

    def snapshot(self):
        """(basis, stat) if expressible without artificial columns."""
        width = self.n + self.m
        if int(self.basis.max()) >= width:
            if not self._pivot_out_artificials():
                return None
        return (self.basis.astype(np.int32),
                self.stat[:width].astype(np.int8))

    def _pivot_out_artificials(self):
        """Swap basic artificials (necessarily at zero) for real columns.
        Fails only on redundant rows, which keep their artificial."""
        width = self.n + self.m
        for r in range(self.m):
            if self.basis[r] < width:
                continue
            rho = self._row_times_E(self.Binv[r])[:width]
            rho[self.basis[self.basis < width]] = 0.0
            j = int(np.argmax(np.abs(rho)))
            if abs(rho[j]) <= 1e-7:
                return False
            w = self._ftran(j)
            jl = self.basis[r]
            self.stat[jl] = _LO
            self.basis[r] = j
            self.stat[j] = _BASIC
            piv = w[r]
            row = self.Binv[r] / piv
            np.multiply.outer(w, row, out=self._ger)
            self.Binv -= self._ger
            self.Binv[r] = row
            self._set_xb()
        return True

    def restore(self, lb_struct, ub_struct, basis, stat, Binv=None):
        """Install a basis and structural bounds; slack bounds stay.

        With Binv given (a trusted copy for this basis) the refactor
        solve is skipped and only the basic values are recomputed.
        False means the basis is singular and cannot be used.
        """
        k = len(lb_struct)
        self.lb[:k] = lb_struct
        self.ub[:k] = ub_struct
        self.basis = np.asarray(basis, dtype=int).copy()
        self.stat = np.asarray(stat, dtype=np.int8).copy()
        if Binv is not None:
            self.Binv = Binv.copy()
            self._set_xb()
            return True
        return self._refactor()

    def warm_solve(self, max_iter=None):
        """Dual simplex from the installed basis (see restore).

        The caller guarantees the basis was optimal for some bounds and
        only bounds have changed, so reduced costs are unchanged and the
        start is dual feasible. Returns Optimal, Infeasible (the usual
        outcome names for the primal problem), IterationLimit or
        NumericalProblem; the last two mean fall back to a cold solve.
        """
        if max_iter is None:
            max_iter = 200 + 4 * (self.m + self.N)
        return self._dual_iterate(max_iter)

    def _dual_iterate(self, max_iter):
        cvec = self.c

        def price():
            y = cvec[self.basis] @ self.Binv
            d = cvec - self._row_times_E(y)
            d[self.basis] = 0.0
            return d

        d = price()
        movable = (self.lb < self.ub) & (self.stat != _BASIC)
        bad = ((movable & (self.stat == _LO) & (d < -1e-6))
               | (movable & (self.stat == _UP) & (d > 1e-6))
               | (movable & (self.stat == _FREE) & (np.abs(d) > 1e-6)))
        if bad.any():
            return "NumericalProblem"

        stall = 0
        since_refactor = 0
        # steepest-edge row weights: beta_i = ||row i of Binv||^2; picking
        # the leaving row by viol^2/beta instead of raw violation keeps
        # degenerate warm solves from churning through near-ties
        beta = np.einsum("ij,ij->i", self.Binv, self.Binv)
        for it in range(max_iter):
            if since_refactor >= 128:
                if not self._refactor():
                    return "NumericalProblem"
                d = price()
                beta = np.einsum("ij,ij->i", self.Binv, self.Binv)
                since_refactor = 0
            since_refactor += 1

            bl = self.lb[self.basis]
            bu = self.ub[self.basis]
            below = bl - self.xB
            above = self.xB - bu
            viol = np.maximum(below, above)
            if viol.max(initial=0.0) <= BOUND_TOL:
                self.y = cvec[self.basis] @ self.Binv
                self.d = price()
                return "Optimal"
            score = np.where(viol > BOUND_TOL, viol * viol / beta, -1.0)
            r = int(np.argmax(score))
            target = bl[r] if below[r] >= above[r] else bu[r]
            delta = self.xB[r] - target   # sign encodes the violation side

            rho = self._row_times_E(self.Binv[r])
            sig = rho * delta
            elig = ((self.stat != _BASIC) & (self.lb < self.ub)
                    & (np.abs(rho) > PIVOT_TOL)
                    & (((self.stat == _LO) & (sig > 0.0))
                       | ((self.stat == _UP) & (sig < 0.0))
                       | (self.stat == _FREE)))
            idxs = np.nonzero(elig)[0]
            if idxs.size == 0:
                return "Infeasible"

            ratios = np.abs(d[idxs]) / np.abs(rho[idxs])
            j = int(idxs[np.argmin(ratios)])

            step_j = delta / rho[j]
            if abs(step_j) <= 1e-12:
                stall += 1
                if stall > 80:
                    return "IterationLimit"
            else:
                stall = 0
            w = self._ftran(j)
            enter_val = self._nonbasic_value(j) + step_j
            theta = d[j] / rho[j]
            d -= theta * rho
            self.xB -= w * step_j
            jl = self.basis[r]
            self.stat[jl] = _LO if target == self.lb[jl] else _UP
            self.basis[r] = j
            self.stat[j] = _BASIC
            self.xB[r] = enter_val
            d[j] = 0.0
            d[jl] = -theta
            piv = w[r]
            row = self.Binv[r] / piv
            np.multiply.outer(w, row, out=self._ger)
            self.Binv -= self._ger
            self.Binv[r] = row
        return "IterationLimit"

    def _iterate(self, cvec, max_iter, phase1):
        m = self.m
        bland = False
        stall = 0
        last_obj = INF
        for it in range(max_iter):
            if it % 128 == 127:
                if not self._refactor():
                    return "NumericalProblem"
            cB = cvec[self.basis]
            y = cB @ self.Binv
            d = cvec - self._row_times_E(y)
            d[self.basis] = 0.0

            movable = self.lb < self.ub  # fixed vars never enter
            elig_lo = (self.stat == _LO) & (d < -DUAL_TOL) & movable
            elig_up = (self.stat == _UP) & (d > DUAL_TOL) & movable
            elig_fr = (self.stat == _FREE) & (np.abs(d) > DUAL_TOL)
            elig = elig_lo | elig_up | elig_fr
            if not elig.any():
                self.y = y
                self.d = d
                return "Optimal"
            idxs = np.nonzero(elig)[0]
            if bland:
                j = int(idxs[0])
            else:
                j = int(idxs[np.argmax(np.abs(d[idxs]))])

            sigma = 1.0 if (self.stat[j] == _LO
                            or (self.stat[j] == _FREE and d[j] < 0)) else -1.0
            w = self._ftran(j)
            step = sigma * w  # basic values move by -step * t

            # ratio test: keep every basic variable inside its bounds
            t_max = self.ub[j] - self.lb[j] if self.stat[j] != _FREE else INF
            leave = -1
            dec = step > PIVOT_TOL
            inc = step < -PIVOT_TOL
            lims = np.full(m, INF)
            bl = self.lb[self.basis]
            bu = self.ub[self.basis]
            lims[dec] = (self.xB[dec] - bl[dec]) / step[dec]
            lims[inc] = (self.xB[inc] - bu[inc]) / step[inc]
            lims = np.maximum(lims, 0.0)
            i_min = int(np.argmin(lims)) if m else -1
            t_basic = lims[i_min] if m else INF
            if t_basic < t_max:
                # among blockers within tolerance prefer the biggest pivot
                close = np.nonzero(lims <= t_basic + 1e-9)[0]
                leave = int(close[np.argmax(np.abs(step[close]))])
                t = lims[leave]
            else:
                t = t_max
            if not np.isfinite(t):
                if phase1:
                    return "NumericalProblem"
                self.y = y
                self.d = d
                return "Unbounded"

            # cycling guard: count non-improving steps, fall back to Bland
            if t <= 1e-12:
                stall += 1
                if stall > 60:
                    bland = True
            else:
                stall = 0
                bland = False

            if leave < 0:
                # bound flip: j crosses to its other bound, basis unchanged
                self.xB -= step * t
                self.stat[j] = _UP if self.stat[j] == _LO else _LO
                continue

            jl = self.basis[leave]
            # leaving variable lands on the bound it hit
            self.stat[jl] = _LO if step[leave] > 0 else _UP
            if self.lb[jl] <= -INF and self.ub[jl] >= INF:
                self.stat[jl] = _FREE
            enter_val = self._nonbasic_value(j) + sigma * t
            self.xB -= step * t
            self.xB[leave] = enter_val
            self.basis[leave] = j
            self.stat[j] = _BASIC
            # product-form update of the dense basis inverse
            piv = w[leave]
            row = self.Binv[leave] / piv
            np.multiply.outer(w, row, out=self._ger)
            self.Binv -= self._ger
            self.Binv[leave] = row
        return "IterationLimit"


def _certify(c, A, senses, b, lb, ub, x, y):
    """Primal feasibility and reduced-cost optimality margins."""
    ax = A @ x
    viol = 0.0
    for i, s in enumerate(senses):
        if s == "<=":
            viol = max(viol, ax[i] - b[i])
        elif s == ">=":
            viol = max(viol, b[i] - ax[i])
        else:
            viol = max(viol, abs(ax[i] - b[i]))
    bviol = max(np.max(np.maximum(lb - x, 0.0), initial=0.0),
                np.max(np.maximum(x - ub, 0.0), initial=0.0))
    d = c - y @ A
    dviol = 0.0
    at_lo = x <= lb + 1e-7
    at_up = x >= ub - 1e-7
    for j in range(len(c)):
        if lb[j] >= ub[j] - 1e-15:
            continue  # fixed variable, any reduced cost is fine
        if at_lo[j] and not at_up[j]:
            dviol = max(dviol, -d[j])
        elif at_up[j] and not at_lo[j]:
            dviol = max(dviol, d[j])
        elif not at_lo[j] and not at_up[j]:
            dviol = max(dviol, abs(d[j]))
    # dual feasibility on row multipliers: y_i <= 0 for <=-rows (min form)
    for i, s in enumerate(senses):
        if s == "<=":
            dviol = max(dviol, y[i])
        elif s == ">=":
            dviol = max(dviol, -y[i])
    return max(viol, bviol), dviol


def _dual_objective(senses, b, lb, ub, y, d):
    """Lagrangian dual bound: y'b + sum of bound terms on reduced costs."""
    val = float(y @ b)
    for j in range(len(d)):
        if d[j] > 0 and lb[j] > -INF:
            val += d[j] * lb[j]
        elif d[j] < 0 and ub[j] < INF:
            val += d[j] * ub[j]
    return val


def _solve_arrays(c, A, senses, b, lb, ub):
    sx = _Simplex(c, A, senses, b, lb, ub)
    status = sx.solve()
    if status != "Optimal":
        return status, None, None, None, None
    x = sx._full_x()[:len(c)]
    y = sx.y[:sx.m].copy()
    y = np.where(sx.flip, -y, y)
    # reduced costs in the original row orientation for the dual bound
    d = c - y @ A
    return status, x, y, float(c @ x), d


def solve_lp(model: OptModel, allow_binaries: bool = False) -> Solution:
    """Solve a continuous model. Binary flags must be absent (or fixed)."""
    t0 = time.perf_counter()
    if not allow_binaries:
        for j in model.binary_indices():
            if model.vars[j].lb < model.vars[j].ub:
                raise BinariesPresent(
                    f"variable {model.vars[j].name!r} is binary; "
                    "use solve_milp")
    c, A, senses, b, lb, ub = _lower(model)
    status, x, y, obj, d = _solve_arrays(c, A, senses, b, lb, ub)
    wall = time.perf_counter() - t0
    if status != "Optimal":
        return Solution(status=status, wall_time_s=wall)
    pinf, dinf = _certify(c, A, senses, b, lb, ub, x, y)
    dual = _dual_objective(senses, b, lb, ub, y, d) + model.obj_const
    return Solution(status="Optimal", x=x[:len(model.vars)],
                    objective=obj + model.obj_const, wall_time_s=wall,
                    duals=y[:len(model.rows)], dual_bound=dual,
                    max_primal_infeas=pinf, max_dual_infeas=dinf)


def variable_ranges(model: OptModel,
                    var_indices: Sequence[int]) -> list[tuple[float, float]]:
    """Min/max each listed variable over the model's LP relaxation.

    Binary flags are relaxed to their box bounds. Returns one (lo, hi)
    per index; a side that fails to solve falls back to the variable's
    own bound. The model's objective is ignored. After the first probe
    the optimal basis stays primal feasible for every later objective,
    so the remaining probes re-price instead of solving from scratch.
    """
    c, A, senses, b, lb, ub = _lower(model)
    sx = None
    out = []
    for j in var_indices:
        if not 0 <= j < len(model.vars):
            raise KernelError(f"variable index {j} out of range")
        pair = []
        for sign, fallback in ((1.0, lb[j]), (-1.0, ub[j])):
            if sx is None:
                cj = np.zeros_like(c)
                cj[j] = sign
                sx = _Simplex(cj, A, senses, b, lb, ub)
                status = sx.solve()
            else:
                cj = np.zeros(sx.N)
                cj[j] = sign
                status = sx._iterate(cj, 2000 * (sx.m + sx.N) + 10000,
                                     phase1=False)
            if status == "Optimal":
                pair.append(float(sx._full_x()[j]))
            else:
                pair.append(fallback)
                sx = None   # broken state: next probe starts cold
        out.append((pair[0], pair[1]))
    return out


def solve_milp(model: OptModel, time_limit_s: float = 60.0) -> Solution:
    """Best-first branch and bound over the model's binary variables.

    Both children of a branching are solved when the branching is made,
    so the heap orders nodes by true LP bounds and infeasible children
    die at birth. Child solves warm-start a dual simplex from the
    parent's optimal basis, which stays dual feasible because only
    bounds change; a cold two-phase solve is the fallback. The branching
    variable comes from pseudocosts (average observed bound degradation
    per direction, product rule), falling back to most-fractional until
    a variable has history. A rounding dive runs periodically so an
    incumbent exists early enough to prune. On the time limit the best
    incumbent and its optimality gap are returned with status TimeLimit.
    """
    t0 = time.perf_counter()
    c, A, senses, b, lb0, ub0 = _lower(model)
    bins = model.binary_indices()
    n_model = len(model.vars)
    n_tot = len(c)
    pc_sum = {j: [0.0, 0.0] for j in bins}   # [down, up] degradations
    pc_cnt = {j: [0, 0] for j in bins}

    tmpl = _Simplex(c, A, senses, b, lb0, ub0)

    def cold(lbv, ubv):
        sx = _Simplex(c, A, senses, b, lbv, ubv)
        status = sx.solve()
        if status != "Optimal":
            return status, None, None, None, None
        x = sx._full_x()[:n_tot]
        snap = sx.snapshot()
        return "Optimal", x, float(c @ x), snap, (sx.Binv if snap else None)

    def warm(lbv, ubv, snap, Binv):
        tmpl.restore(lbv, ubv, snap[0], snap[1], Binv)
        status = tmpl.warm_solve()
        if status == "Optimal":
            x = tmpl._full_x()[:n_tot]
            return "Optimal", x, float(c @ x), tmpl.snapshot(), tmpl.Binv
        if status == "Infeasible":
            return "Infeasible", None, None, None, None
        return cold(lbv, ubv)   # numerical trouble: start from scratch

    def fractional(x):
        out = []
        for j in bins:
            f = min(x[j] - math.floor(x[j]), math.ceil(x[j]) - x[j])
            if f > INT_TOL:
                out.append((j, x[j] - math.floor(x[j])))
        return out

    def pc_score(j, f):
        eps = 1e-6
        dn = pc_sum[j][0] / max(pc_cnt[j][0], 1)
        up = pc_sum[j][1] / max(pc_cnt[j][1], 1)
        return max(dn * f, eps) * max(up * (1.0 - f), eps)

    def pick_branch(x, lbv, ubv, snap, Binv, bound):
        """Pseudocost product rule; candidates without history on both
        sides are first scored by solving their children (the solves are
        warm, so this reliability pass is cheap and it seeds the
        pseudocosts everything later reuses)."""
        cand = fractional(x)
        if not cand:
            return -1
        fresh = [(j, f) for j, f in cand
                 if not (pc_cnt[j][0] and pc_cnt[j][1])]
        if fresh and snap is not None and not out_of_time():
            fresh.sort(key=lambda jf: -min(jf[1], 1.0 - jf[1]))
            for j, f in fresh[:8]:
                for side, fix in ((0, 0.0), (1, 1.0)):
                    if pc_cnt[j][side]:
                        continue
                    keep_lo, keep_hi = lbv[j], ubv[j]
                    lbv[j] = ubv[j] = fix
                    st, _, objc, _, _ = warm(lbv, ubv, snap, Binv)
                    lbv[j], ubv[j] = keep_lo, keep_hi
                    dist = f if side == 0 else 1.0 - f
                    if st != "Optimal":
                        pc_sum[j][side] += 10.0 * (1.0 + abs(bound))
                    else:
                        pc_sum[j][side] += ((objc - bound)
                                            / max(dist, 1e-6))
                    pc_cnt[j][side] += 1
        best, best_score = cand[0][0], -1.0
        for j, f in cand:
            score = pc_score(j, f)
            if score > best_score:
                best, best_score = j, score
        return best

    def out_of_time():
        return time.perf_counter() - t0 > time_limit_s

    def dive(lbv, ubv, x, snap, Binv):
        """Round binaries one at a time, re-solving in between; fixes
        every already-integral binary in bulk first. Each accepted step
        warm-starts the next. Returns an integer feasible (obj, x) or
        None."""
        nonlocal nodes
        lbv, ubv = lbv.copy(), ubv.copy()
        x_cur, obj_cur = x, None
        for _ in range(len(bins) + 1):
            if out_of_time():
                return None
            cand = fractional(x_cur)
            if not cand:
                if obj_cur is None:   # starting point already integral
                    return None
                return obj_cur, x_cur
            j = max(cand, key=lambda jf: min(jf[1], 1.0 - jf[1]))[0]
            for k in bins:
                if (k != j and ubv[k] - lbv[k] > 0.5
                        and min(x_cur[k], 1.0 - x_cur[k]) <= INT_TOL):
                    lbv[k] = ubv[k] = round(x_cur[k])
            first = round(x_cur[j])
            step = None
            for v in (first, 1.0 - first):
                lbv[j] = ubv[j] = v
                if snap is not None:
                    st, xs, obj, snap2, Binv2 = warm(lbv, ubv, snap, Binv)
                else:
                    st, xs, obj, snap2, Binv2 = cold(lbv, ubv)
                nodes += 1
                if st == "Optimal":
                    step = (xs, obj, snap2, Binv2)
                    break
            if step is None:
                return None
            x_cur, obj_cur, snap, Binv = step
        return None

    status, x0, obj0, snap0, _ = cold(lb0, ub0)
    nodes = 1
    if status == "Unbounded":
        return Solution(status="Unbounded", node_count=nodes,
                        wall_time_s=time.perf_counter() - t0)
    if status != "Optimal":
        return Solution(status="Infeasible", node_count=nodes,
                        wall_time_s=time.perf_counter() - t0)

    inc_x = None
    inc_obj = INF
    if not fractional(x0):
        inc_x, inc_obj = x0, obj0
    seq = 0
    # heap entries carry the node's own LP bound, solution and basis
    heap: list = []
    cur = None     # (bound, seq, lb, ub, x, snap, live Binv) to plunge into
    if inc_x is None:
        cur = (obj0, seq, lb0.copy(), ub0.copy(), x0, snap0, None)
    hit_limit = False
    next_dive = 0

    while cur is not None or heap:
        if cur is not None:
            bound, sq, lbv, ubv, x, snap, live_Binv = cur
            cur = None
        else:
            bound, sq, lbv, ubv, x, snap = heapq.heappop(heap)
            live_Binv = None
        if bound >= inc_obj - 1e-9:
            continue
        if out_of_time():
            hit_limit = True
            heapq.heappush(heap, (bound, sq, lbv, ubv, x, snap))
            break
        par_Binv = None
        if snap is not None:
            if live_Binv is not None:
                par_Binv = live_Binv
            elif tmpl.restore(lbv, ubv, snap[0], snap[1]):
                # one refactor serves both children and any dive
                par_Binv = tmpl.Binv.copy()
            else:
                snap = None   # singular saved basis: solve children cold
        if nodes >= next_dive:
            # more eager while no incumbent bounds the tree
            next_dive = nodes + (16 if inc_x is None else 64)
            dived = dive(lbv, ubv, x, snap, par_Binv)
            if dived is not None and dived[0] < inc_obj - 1e-9:
                inc_obj, inc_x = dived
        j = pick_branch(x, lbv, ubv, snap, par_Binv, bound)
        if j < 0:       # integral nodes never enter the heap
            continue
        f = x[j] - math.floor(x[j])
        kept = []
        for side, fix in ((0, 0.0), (1, 1.0)):
            lbc, ubc = lbv.copy(), ubv.copy()
            lbc[j] = ubc[j] = fix
            if snap is not None:
                st, xc, objc, snapc, Binvc = warm(lbc, ubc, snap, par_Binv)
            else:
                st, xc, objc, snapc, Binvc = cold(lbc, ubc)
            nodes += 1
            dist = f if side == 0 else 1.0 - f
            if st != "Optimal":
                # infeasible child: count as a strong degradation
                pc_sum[j][side] += 10.0 * (1.0 + abs(bound))
                pc_cnt[j][side] += 1
                continue
            pc_sum[j][side] += (objc - bound) / max(dist, 1e-6)
            pc_cnt[j][side] += 1
            if objc >= inc_obj - 1e-9:
                continue
            if not fractional(xc):
                inc_obj, inc_x = objc, xc
                continue
            # the template's Binv is clobbered by the next solve
            kept.append((objc, lbc, ubc, xc, snapc,
                         None if Binvc is None else Binvc.copy()))
        # plunge: continue depth-first into the cheaper child, which
        # keeps the warm-start basis one bound change away
        kept.sort(key=lambda t: t[0])
        for rank, (objc, lbc, ubc, xc, snapc, Binvc) in enumerate(kept):
            seq += 1
            if rank == 0:
                cur = (objc, seq, lbc, ubc, xc, snapc, Binvc)
            else:
                heapq.heappush(heap, (objc, seq, lbc, ubc, xc, snapc))

    wall = time.perf_counter() - t0
    open_bounds = [h[0] for h in heap if h[0] < inc_obj - 1e-9]
    best_bound = min(open_bounds) if open_bounds else inc_obj
    if inc_x is None:
        if hit_limit:
            return Solution(status="TimeLimit", node_count=nodes,
                            wall_time_s=wall, gap=INF)
        return Solution(status="Infeasible", node_count=nodes,
                        wall_time_s=wall)
    gap = abs(inc_obj - best_bound) / max(1.0, abs(inc_obj))
    pinf, dinf = _certify(c, A, senses, b, lb0, ub0, inc_x,
                          np.zeros(A.shape[0]))
    status = "TimeLimit" if hit_limit else "Optimal"
    return Solution(status=status, x=inc_x[:n_model],
                    objective=inc_obj + model.obj_const,
                    wall_time_s=wall, node_count=nodes, gap=gap,
                    max_primal_infeas=pinf)
