"""Dense primal active-set solver for small convex quadratic programs.

Solves::

    minimise    0.5 x'Qx + q'x + offset
    subject to  a'x  = b            (optional, a single row)
                lo  <= x <= hi
                G x <= h

with ``Q`` symmetric positive semidefinite.

Constraint ids used in :attr:`QpSolution.active_set`: ``0`` is the equality,
``1 + j`` the lower bound of ``x[j]``, ``1 + n + j`` its upper bound and
``1 + 2n + k`` the general row ``k``.

The working-set KKT matrix is kept as an explicit inverse and updated by
bordering/deletion, so an iteration costs O(k^2) instead of a fresh O(k^3)
factorisation. Working sets whose KKT matrix is singular (directions of zero
curvature) fall back to a null-space computation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

PRIMAL_TOL = 1e-9
KKT_TOL = 1e-8
_REFRESH_EVERY = 150
_BLAND_AFTER = 25


class QpError(ValueError):
    """Malformed problem (shape, symmetry, bounds, curvature)."""


class UnboundedQpError(QpError):
    pass


@dataclass(frozen=True, eq=False)
class QpProblem:
    Q: np.ndarray
    q: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    eq_coef: np.ndarray | None = None
    eq_rhs: float = 0.0
    ineq_coef: np.ndarray | None = None
    ineq_rhs: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).ravel()
        n = q.size
        Q = np.asarray(self.Q, dtype=float).reshape(n, n)
        lo = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.ineq_coef is None:
            G, h = np.zeros((0, n)), np.zeros(0)
        else:
            G = np.atleast_2d(np.asarray(self.ineq_coef, dtype=float)).reshape(-1, n)
            h = np.asarray(self.ineq_rhs, dtype=float).ravel()
        a = None if self.eq_coef is None else np.asarray(self.eq_coef, float).ravel()
        for name, value in (("Q", Q), ("q", q), ("lower", lo), ("upper", hi),
                            ("eq_coef", a), ("ineq_coef", G), ("ineq_rhs", h)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "eq_rhs", float(self.eq_rhs))

    @property
    def dim(self) -> int:
        return self.q.size

    @property
    def n_ineq(self) -> int:
        return self.ineq_rhs.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.q @ x + self.offset)

    def violation(self, x) -> float:
        """Largest constraint violation at ``x``."""
        x = np.asarray(x, dtype=float)
        v = max(0.0, float(np.max(self.lower - x, initial=0.0)),
                float(np.max(x - self.upper, initial=0.0)))
        if self.n_ineq:
            v = max(v, float(np.max(self.ineq_coef @ x - self.ineq_rhs)))
        if self.eq_coef is not None:
            v = max(v, abs(float(self.eq_coef @ x) - self.eq_rhs))
        return v


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    objective: float
    active_set: frozenset
    iterations: int
    status: str
    eq_multiplier: float = 0.0
    lower_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    upper_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ineq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


def check_problem(problem: QpProblem) -> None:
    n = problem.dim
    Q = problem.Q
    scale = max(1.0, float(np.max(np.abs(Q), initial=0.0)))
    if not np.all(np.isfinite(Q)) or not np.all(np.isfinite(problem.q)):
        raise QpError("Q and q must be finite")
    if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-12 * scale:
        raise QpError("Q is not symmetric")
    if problem.lower.shape != (n,) or problem.upper.shape != (n,):
        raise QpError("bounds must have one entry per variable")
    if np.any(problem.lower > problem.upper):
        raise QpError("lower bound exceeds upper bound")
    if problem.eq_coef is not None and problem.eq_coef.shape != (n,):
        raise QpError("equality row has the wrong length")
    if problem.ineq_coef.shape[0] != problem.ineq_rhs.size:
        raise QpError("inequality rows and right-hand sides differ in count")
    if n == 0:
        return
    offdiag = Q - np.diag(np.diag(Q))
    if not offdiag.any():
        if np.min(np.diag(Q)) < -1e-10 * scale:
            raise QpError("Q is not positive semidefinite")
        return
    try:
        np.linalg.cholesky(Q + 1e-10 * scale * np.eye(n))
    except np.linalg.LinAlgError:
        raise QpError("Q is not positive semidefinite") from None


def kkt_certificate(problem: QpProblem, sol: QpSolution) -> dict:
    """Residuals of the optimality conditions certified by ``sol``'s multipliers."""
    x = sol.x
    grad = problem.Q @ x + problem.q
    stat = grad - sol.lower_multipliers + sol.upper_multipliers
    if problem.eq_coef is not None:
        stat = stat + sol.eq_multiplier * problem.eq_coef
    if problem.n_ineq:
        stat = stat + problem.ineq_coef.T @ sol.ineq_multipliers
    comp = [0.0]
    with np.errstate(invalid="ignore"):
        lo_slack = np.where(np.isfinite(problem.lower), x - problem.lower, 0.0)
        hi_slack = np.where(np.isfinite(problem.upper), problem.upper - x, 0.0)
    comp.append(float(np.max(np.abs(sol.lower_multipliers * lo_slack), initial=0.0)))
    comp.append(float(np.max(np.abs(sol.upper_multipliers * hi_slack), initial=0.0)))
    if problem.n_ineq:
        slack = problem.ineq_rhs - problem.ineq_coef @ x
        comp.append(float(np.max(np.abs(sol.ineq_multipliers * slack))))
    mults = np.concatenate(
        [sol.lower_multipliers, sol.upper_multipliers, sol.ineq_multipliers, [0.0]]
    )
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "complementarity": max(comp),
        "dual_feasibility": float(np.min(mults)),
        "primal_feasibility": problem.violation(x),
    }


def solve_qp(problem: QpProblem, max_iter: int | None = None) -> QpSolution:
    check_problem(problem)
    if max_iter is None:
        max_iter = 50 * (problem.dim + problem.n_ineq) + 100
    x0 = _phase1(problem)
    if x0 is None:
        return QpSolution(
            x=np.clip(np.zeros(problem.dim), problem.lower, problem.upper),
            objective=float("nan"),
            active_set=frozenset(),
            iterations=0,
            status=INFEASIBLE,
            lower_multipliers=np.zeros(problem.dim),
            upper_multipliers=np.zeros(problem.dim),
            ineq_multipliers=np.zeros(problem.n_ineq),
        )
    return _ActiveSet(problem).run(x0, max_iter)


# -- phase 1 -----------------------------------------------------------------


def _crash_point(problem: QpProblem) -> np.ndarray:
    """Minimiser of the separable (diagonal) model clipped into the box."""
    d = np.diag(problem.Q)
    q = problem.q
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(d > 0, -q / np.where(d > 0, d, 1.0), 0.0)
    x = np.where(d > 0, x, np.where(q < 0, problem.upper, np.where(q > 0, problem.lower, 0.0)))
    x[~np.isfinite(x)] = 0.0
    return np.clip(x, problem.lower, problem.upper)


def project_equality_box(x0, a, b, lo, hi):
    """Euclidean projection of ``x0`` onto ``{a'x = b, lo <= x <= hi}``.

    The projection is ``clip(x0 + tau * a)`` for the ``tau`` solving a
    monotone piecewise-linear equation; returns ``None`` when the set is empty.
    """
    x0 = np.asarray(x0, float)
    nz = a != 0
    if not nz.any():
        return x0.copy() if abs(b) <= PRIMAL_TOL else None
    tol = PRIMAL_TOL * max(1.0, abs(b))
    lo_val = float(np.sum(np.where(a > 0, a * lo, a * hi)[nz]))
    hi_val = float(np.sum(np.where(a > 0, a * hi, a * lo)[nz]))
    if b < lo_val - tol or b > hi_val + tol:
        return None

    def value(tau):
        return float(a @ np.clip(x0 + tau * a, lo, hi))

    t_lo, t_hi = -1.0, 1.0
    while value(t_lo) > b:
        t_lo *= 2.0
    while value(t_hi) < b:
        t_hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (t_lo + t_hi)
        if mid in (t_lo, t_hi):
            break
        if value(mid) < b:
            t_lo = mid
        else:
            t_hi = mid
    v_lo, v_hi = value(t_lo), value(t_hi)
    tau = t_lo + (b - v_lo) * (t_hi - t_lo) / (v_hi - v_lo) if v_hi > v_lo else t_hi
    x = np.clip(x0 + tau * a, lo, hi)
    return _repair_equality(x, a, b, lo, hi)


def _repair_equality(x, a, b, lo, hi):
    """Absorb the rounding residual of ``a'x = b`` into variables with room."""
    for _ in range(3):
        r = b - float(a @ x)
        if abs(r) <= 1e-15 * max(1.0, abs(b)):
            break
        room = np.where(a * r > 0, hi - x, x - lo)
        order = np.argsort(-(np.abs(a) * (room > 0)), kind="stable")
        for j in order:
            if a[j] == 0 or room[j] <= 0:
                continue
            step = np.clip(r / a[j], lo[j] - x[j], hi[j] - x[j])
            x[j] += step
            r = b - float(a @ x)
            if abs(r) <= 1e-15 * max(1.0, abs(b)):
                break
    return x


def _repair_inequalities(problem: QpProblem, x: np.ndarray) -> np.ndarray:
    """Greedy repair of violated rows using variables outside the equality."""
    G, h = problem.ineq_coef, problem.ineq_rhs
    lo, hi = problem.lower, problem.upper
    movable = np.ones(problem.dim, bool) if problem.eq_coef is None else problem.eq_coef == 0
    for _ in range(3):
        viol = G @ x - h
        bad = np.flatnonzero(viol > 0)
        if bad.size == 0:
            break
        for k in bad:
            excess = float(G[k] @ x - h[k])
            if excess <= 0:
                continue
            row = G[k]
            cand = np.flatnonzero((row != 0) & movable)
            for j in cand[np.argsort(-np.abs(row[cand]), kind="stable")]:
                target = x[j] - excess / row[j]
                new = float(np.clip(target, lo[j], hi[j]))
                excess -= row[j] * (x[j] - new)
                x[j] = new
                if excess <= 0:
                    break
    return x


def _phase1(problem: QpProblem):
    x = _crash_point(problem)
    if problem.eq_coef is not None:
        x = project_equality_box(x, problem.eq_coef, problem.eq_rhs,
                                 problem.lower, problem.upper)
        if x is None:
            return None
    if problem.n_ineq:
        x = _repair_inequalities(problem, x)
        worst = float(np.max(problem.ineq_coef @ x - problem.ineq_rhs))
        if worst > PRIMAL_TOL:
            x = _elastic_phase1(problem, x, worst)
    return x


def _elastic_phase1(problem: QpProblem, x, worst):
    """Minimise one artificial slack added to every general row."""
    n, m = problem.dim, problem.n_ineq
    aux = QpProblem(
        Q=np.zeros((n + 1, n + 1)),
        q=np.r_[np.zeros(n), 1.0],
        lower=np.r_[problem.lower, 0.0],
        upper=np.r_[problem.upper, np.inf],
        eq_coef=None if problem.eq_coef is None else np.r_[problem.eq_coef, 0.0],
        eq_rhs=problem.eq_rhs,
        ineq_coef=np.hstack([problem.ineq_coef, -np.ones((m, 1))]),
        ineq_rhs=problem.ineq_rhs,
    )
    sol = _ActiveSet(aux).run(np.r_[x, worst], 50 * (n + m) + 100)
    if sol.status != OPTIMAL or sol.x[-1] > PRIMAL_TOL:
        return None
    return sol.x[:n]


# -- working-set linear algebra ----------------------------------------------


class _KktInverse:
    """Inverse of ``[[Q_FF, A_RF'], [A_RF, 0]]`` over labelled slots.

    A slot is ``(0, j)`` for free variable ``j`` or ``(1, r)`` for working
    row ``r``.
    """

    def __init__(self, Q, rows):
        self.Q = Q
        self.rows = rows
        self.slots: list[tuple[int, int]] = []
        self.inv: np.ndarray | None = None
        self.updates = 0

    # matrix entries between slots
    def _block(self, left, right):
        out = np.zeros((len(left), len(right)))
        for a, (ka, ia) in enumerate(left):
            for b, (kb, ib) in enumerate(right):
                if ka == 0 and kb == 0:
                    out[a, b] = self.Q[ia, ib]
                elif ka == 0 and kb == 1:
                    out[a, b] = self.rows[ib, ia]
                elif ka == 1 and kb == 0:
                    out[a, b] = self.rows[ia, ib]
        return out

    def _columns(self, new):
        kinds = np.array([k for k, _ in self.slots], dtype=int)
        ids = np.array([i for _, i in self.slots], dtype=int)
        V = np.zeros((len(self.slots), len(new)))
        vpos = np.flatnonzero(kinds == 0)
        rpos = np.flatnonzero(kinds == 1)
        for c, (k, i) in enumerate(new):
            if k == 0:
                V[vpos, c] = self.Q[ids[vpos], i]
                V[rpos, c] = self.rows[ids[rpos], i]
            else:
                V[vpos, c] = self.rows[i, ids[vpos]]
        return V

    def matrix(self):
        kinds = np.array([k for k, _ in self.slots], dtype=int)
        ids = np.array([i for _, i in self.slots], dtype=int)
        vpos = np.flatnonzero(kinds == 0)
        rpos = np.flatnonzero(kinds == 1)
        M = np.zeros((len(self.slots), len(self.slots)))
        M[np.ix_(vpos, vpos)] = self.Q[np.ix_(ids[vpos], ids[vpos])]
        A = self.rows[np.ix_(ids[rpos], ids[vpos])]
        M[np.ix_(rpos, vpos)] = A
        M[np.ix_(vpos, rpos)] = A.T
        return M

    def rebuild(self, slots):
        self.slots = list(slots)
        self.updates = 0
        k = len(self.slots)
        if k == 0:
            self.inv = np.zeros((0, 0))
            return True
        M = self.matrix()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
        d = np.abs(np.diag(lu))
        if d.min() <= 1e-11 * max(1.0, d.max()):
            self.inv = None
            return False
        self.inv = scipy.linalg.lu_solve((lu, piv), np.eye(k), check_finite=False)
        return True

    def border(self, new) -> bool:
        """Append slots ``new``; False (and invalid) if the result is singular."""
        if self.inv is None:
            self.slots.extend(new)
            return False
        V = self._columns(new)
        D = self._block(new, new)
        W = self.inv @ V
        VW = V.T @ W
        S = D - VW
        ref = max(1e-300, float(np.max(np.abs(D), initial=0.0) + np.max(np.abs(VW), initial=0.0)))
        sv = np.linalg.svd(S, compute_uv=False)
        self.slots.extend(new)
        if sv.min() <= 1e-10 * max(ref, sv.max()):
            self.inv = None
            return False
        Sinv = np.linalg.inv(S)
        WS = W @ Sinv
        k, b = self.inv.shape[0], len(new)
        out = np.empty((k + b, k + b))
        out[:k, :k] = self.inv + WS @ W.T
        out[:k, k:] = -WS
        out[k:, :k] = -WS.T
        out[k:, k:] = Sinv
        self.inv = out
        self.updates += 1
        return True

    def delete(self, drop) -> bool:
        """Remove the slots in ``drop``; False (and invalid) if singular."""
        pos = [self.slots.index(s) for s in drop]
        keep = [i for i in range(len(self.slots)) if i not in set(pos)]
        self.slots = [self.slots[i] for i in keep]
        if self.inv is None:
            return False
        P = self.inv
        Pkk = P[np.ix_(pos, pos)]
        sv = np.linalg.svd(Pkk, compute_uv=False)
        ref = float(np.max(np.abs(P[pos]), initial=0.0))
        if sv.min() <= 1e-11 * max(ref, 1e-300):
            self.inv = None
            return False
        Pk = P[np.ix_(keep, pos)]
        self.inv = P[np.ix_(keep, keep)] - Pk @ np.linalg.solve(Pkk, Pk.T)
        self.updates += 1
        return True


class _ActiveSet:
    def __init__(self, problem: QpProblem):
        self.p = problem
        n = problem.dim
        self.n = n
        self.has_eq = problem.eq_coef is not None
        eq = [problem.eq_coef] if self.has_eq else []
        self.rows = np.vstack(eq + [problem.ineq_coef]) if (eq or problem.n_ineq) else np.zeros((0, n))
        self.rhs = np.r_[[problem.eq_rhs] if self.has_eq else [], problem.ineq_rhs]
        self.first_ineq = 1 if self.has_eq else 0
        self.fixed = np.zeros(n, dtype=np.int8)  # -1 lower, +1 upper
        self.work_rows: list[int] = []  # row indices into self.rows
        self.kkt = _KktInverse(problem.Q, self.rows)

    # ids
    def _bound_id(self, j):
        return 1 + j if self.fixed[j] < 0 else 1 + self.n + j

    def _row_id(self, r):
        return 0 if (self.has_eq and r == 0) else 1 + 2 * self.n + (r - self.first_ineq)

    def _free(self):
        return np.flatnonzero(self.fixed == 0)

    def _slots(self):
        eqs = [(1, 0)] if self.has_eq else []
        return [(0, int(j)) for j in self._free()] + eqs + [(1, r) for r in self.work_rows]

    def _all_rows(self):
        return ([0] if self.has_eq else []) + self.work_rows

    def _initial_working_set(self, x):
        p = self.p
        tol = PRIMAL_TOL
        with np.errstate(invalid="ignore"):
            at_lo = np.isfinite(p.lower) & (x <= p.lower + tol * np.maximum(1.0, np.abs(p.lower)))
            at_hi = np.isfinite(p.upper) & (x >= p.upper - tol * np.maximum(1.0, np.abs(p.upper)))
        self.fixed[:] = 0
        self.fixed[at_hi] = 1
        self.fixed[at_lo] = -1
        x[at_lo] = p.lower[at_lo]
        x[at_hi & ~at_lo] = p.upper[at_hi & ~at_lo]
        if self.has_eq:
            # the equality needs at least one free variable to act on
            a = self.rows[0]
            if not np.any(a[self.fixed == 0] != 0):
                j = int(np.flatnonzero(a != 0)[0])
                self.fixed[j] = 0
        cand = []
        if p.n_ineq:
            slack = self.rhs[self.first_ineq:] - p.ineq_coef @ x
            cand = list(self.first_ineq + np.flatnonzero(slack <= tol))
        self.work_rows = []
        if cand:
            free = self._free()
            C = self.rows[np.ix_(cand, free)]
            if C.shape[1] == 0:
                return
            if self.has_eq:
                # the equality is always kept, so select among rows orthogonal to it
                a = self.rows[0, free]
                if a @ a > 0:
                    C = C - np.outer(C @ a / (a @ a), a)
            norms = np.linalg.norm(C, axis=1)
            live = np.flatnonzero(norms > 1e-10 * max(1.0, float(norms.max(initial=0.0))))
            if live.size == 0:
                return
            # column pivoting yields a maximal independent subset
            _, r, piv = scipy.linalg.qr(C[live].T, mode="economic", pivoting=True)
            diag = np.abs(np.diag(r))
            rank = int(np.sum(diag > 1e-10 * max(diag[0], 1e-300)))
            self.work_rows = sorted(int(cand[live[k]]) for k in piv[:rank])

    # search directions
    def _direction_fast(self, g):
        slots = self.kkt.slots
        rhs = np.zeros(len(slots))
        var_pos = [i for i, (k, _) in enumerate(slots) if k == 0]
        var_ids = [j for k, j in slots if k == 0]
        rhs[var_pos] = -g[var_ids]
        sol = self.kkt.inv @ rhs
        p = np.zeros(self.n)
        p[var_ids] = sol[var_pos]
        nu = {j: sol[i] for i, (k, j) in enumerate(slots) if k == 1}
        return p, nu

    def _direction_slow(self, g):
        free = self._free()
        rows = self._all_rows()
        p = np.zeros(self.n)
        if free.size == 0:
            return p, False
        A = self.rows[np.ix_(rows, free)] if rows else np.zeros((0, free.size))
        if A.shape[0]:
            _, s, vt = np.linalg.svd(A, full_matrices=True)
            rank = int(np.sum(s > 1e-12 * max(1.0, s.max())))
            Z = vt[rank:].T
        else:
            Z = np.eye(free.size)
        if Z.shape[1] == 0:
            return p, False
        H = Z.T @ self.p.Q[np.ix_(free, free)] @ Z
        r = Z.T @ g[free]
        w, V = np.linalg.eigh(H)
        flat = w <= 1e-10 * max(1.0, float(np.max(np.abs(w), initial=0.0)))
        rr = V.T @ r
        if np.linalg.norm(rr[flat]) > 1e-12 * max(1.0, float(np.max(np.abs(g)))):
            p[free] = Z @ (-(V[:, flat] @ rr[flat]))
            return p, True
        p[free] = Z @ (-(V[:, ~flat] @ (rr[~flat] / w[~flat])))
        return p, False

    def _multipliers(self, g):
        """Row multipliers (dict) and signed bound multipliers at stationarity."""
        rows = self._all_rows()
        if self.kkt.inv is not None:
            _, nu = self._direction_fast(g)
            lam = np.array([nu[r] for r in rows])
        else:
            free = self._free()
            A = self.rows[np.ix_(rows, free)]
            lam = np.linalg.lstsq(A.T, -g[free], rcond=None)[0] if rows else np.zeros(0)
        red = g + (lam @ self.rows[rows] if rows else 0.0)
        bound = np.where(self.fixed < 0, red, np.where(self.fixed > 0, -red, 0.0))
        return dict(zip(rows, lam)), bound

    def _pick_drop(self, nu, bound, g, bland):
        tol = 1e-10 * max(1.0, float(np.max(np.abs(g), initial=0.0)))
        cands = []
        for r in self.work_rows:
            if nu[r] < -tol:
                cands.append((self._row_id(r), nu[r], ("row", r)))
        for j in np.flatnonzero((self.fixed != 0) & (bound < -tol)):
            cands.append((self._bound_id(j), bound[j], ("var", int(j))))
        if not cands:
            return None
        if bland:
            return min(cands)[2]
        return min(cands, key=lambda c: (c[1], c[0]))[2]

    def _refresh(self):
        return self.kkt.rebuild(self._slots())

    def run(self, x, max_iter):
        x = np.array(x, dtype=float)
        self._initial_working_set(x)
        self._refresh()
        p = self.p
        G = p.ineq_coef
        it = 0
        at_min = False
        degenerate = 0
        bland = False
        status = MAX_ITER
        while it < max_iter:
            it += 1
            g = p.Q @ x + p.q
            if self.kkt.inv is None or self.kkt.updates >= _REFRESH_EVERY:
                self._refresh()
            if not at_min:
                if self.kkt.inv is not None:
                    d, _ = self._direction_fast(g)
                    ray = False
                else:
                    d, ray = self._direction_slow(g)
                if not ray and np.max(np.abs(d), initial=0.0) <= 1e-13 * max(1.0, np.max(np.abs(x), initial=0.0)):
                    at_min = True
            if at_min:
                nu, bound = self._multipliers(g)
                drop = self._pick_drop(nu, bound, g, bland)
                if drop is None:
                    x, done = self._polish(x)
                    if done:
                        status = OPTIMAL
                        break
                    at_min = False
                    continue
                kind, idx = drop
                if kind == "row":
                    self.work_rows.remove(idx)
                    self.kkt.delete([(1, idx)])
                else:
                    self.fixed[idx] = 0
                    self.kkt.border([(0, idx)])
                at_min = False
                continue

            # ratio test
            alpha, block, block_id = np.inf, None, None
            free = self._free()
            dmax = float(np.max(np.abs(d)))
            pf = d[free]
            mv = np.abs(pf) > 1e-12 * dmax
            with np.errstate(divide="ignore", invalid="ignore"):
                lo_r = np.where(mv & (pf < 0), (p.lower[free] - x[free]) / pf, np.inf)
                hi_r = np.where(mv & (pf > 0), (p.upper[free] - x[free]) / pf, np.inf)
            lo_r = np.maximum(lo_r, 0.0)
            hi_r = np.maximum(hi_r, 0.0)
            cands = []
            if lo_r.size:
                alpha = min(alpha, float(lo_r.min()), float(hi_r.min()))
            if p.n_ineq:
                Gd = G @ d
                scale = np.abs(G) @ np.abs(d)
                inact = np.ones(p.n_ineq, bool)
                inact[[r - self.first_ineq for r in self.work_rows]] = False
                up = inact & (Gd > 1e-12 * scale) & (Gd > 0)
                slack = np.maximum(p.ineq_rhs - G @ x, 0.0)
                with np.errstate(divide="ignore", invalid="ignore"):
                    gr = np.where(up, slack / Gd, np.inf)
                alpha = min(alpha, float(gr.min()))
            if np.isfinite(alpha):
                tie = alpha * (1 + 1e-12) + 1e-300
                for j in np.flatnonzero(lo_r <= tie):
                    cands.append((1 + int(free[j]), ("var", int(free[j]), -1)))
                for j in np.flatnonzero(hi_r <= tie):
                    cands.append((1 + self.n + int(free[j]), ("var", int(free[j]), 1)))
                if p.n_ineq:
                    for k in np.flatnonzero(gr <= tie):
                        cands.append((1 + 2 * self.n + int(k), ("row", self.first_ineq + int(k), 0)))
                block_id, block = min(cands)
            if ray and block is None:
                raise UnboundedQpError("objective is unbounded below on the feasible set")
            step = alpha if ray else min(1.0, alpha)
            x = x + step * d
            if block is not None and (ray or alpha <= 1.0):
                kind, idx, side = block
                if kind == "var":
                    x[idx] = p.lower[idx] if side < 0 else p.upper[idx]
                    self.fixed[idx] = side
                    self.kkt.delete([(0, idx)])
                else:
                    self.work_rows.append(idx)
                    self.kkt.border([(1, idx)])
                at_min = False
            else:
                at_min = True
            x[free] = np.clip(x[free], p.lower[free], p.upper[free])
            if step * dmax <= 1e-12 * max(1.0, float(np.max(np.abs(x)))):
                degenerate += 1
                bland = bland or degenerate > _BLAND_AFTER
            else:
                degenerate = 0

        return self._solution(x, it, status)

    def _polish(self, x):
        """Re-solve the final working set from scratch and re-check optimality.

        Returns the (possibly updated) point and whether it is certified.
        """
        p = self.p
        ok = self._refresh()
        free = self._free()
        rows = self._all_rows()
        if ok and self.kkt.inv.shape[0]:
            slots = self.kkt.slots
            xf = np.where(self.fixed < 0, p.lower, np.where(self.fixed > 0, p.upper, 0.0))
            rhs = np.zeros(len(slots))
            for i, (k, j) in enumerate(slots):
                if k == 0:
                    rhs[i] = -(p.q[j] + p.Q[j] @ xf)
                else:
                    rhs[i] = self.rhs[j] - self.rows[j] @ xf
            sol = self.kkt.inv @ rhs
            y = xf.copy()
            for i, (k, j) in enumerate(slots):
                if k == 0:
                    y[j] = sol[i]
            if p.violation(y) <= PRIMAL_TOL:
                x = y
        elif rows and free.size:
            # singular working set: minimum-norm correction onto active rows
            A = self.rows[np.ix_(rows, free)]
            resid = self.rhs[rows] - self.rows[rows] @ x
            y = x.copy()
            y[free] += np.linalg.lstsq(A, resid, rcond=None)[0]
            if p.violation(y) <= p.violation(x):
                x = y
        g = p.Q @ x + p.q
        nu, bound = self._multipliers(g)
        if self._pick_drop(nu, bound, g, False) is not None:
            return x, False
        sol = self._solution(x, 0, OPTIMAL)
        cert = kkt_certificate(p, sol)
        if cert["primal_feasibility"] > PRIMAL_TOL:
            return x, False
        return x, True

    def _solution(self, x, iterations, status):
        p = self.p
        g = p.Q @ x + p.q
        nu, bound = self._multipliers(g) if status == OPTIMAL else ({}, np.zeros(self.n))
        lower = np.where(self.fixed < 0, np.maximum(bound, 0.0), 0.0)
        upper = np.where(self.fixed > 0, np.maximum(bound, 0.0), 0.0)
        ineq = np.zeros(p.n_ineq)
        for r in self.work_rows:
            ineq[r - self.first_ineq] = max(nu.get(r, 0.0), 0.0)
        active = {self._bound_id(int(j)) for j in np.flatnonzero(self.fixed)}
        active |= {self._row_id(r) for r in self._all_rows()}
        return QpSolution(
            x=x,
            objective=p.objective(x),
            active_set=frozenset(active),
            iterations=iterations,
            status=status,
            eq_multiplier=float(nu.get(0, 0.0)) if self.has_eq else 0.0,
            lower_multipliers=lower,
            upper_multipliers=upper,
            ineq_multipliers=ineq,
        )
