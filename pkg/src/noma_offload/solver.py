"""Primal log-barrier interior-point solver for perspective-log programs.

Problems handled here have the form

    maximize    c @ x
    subject to  A x <= b
                w_i * t_i * ln(1 + g_i * s_i / t_i) >= a_i @ x + b_i
                lower <= x <= upper

where ``t_i`` and ``s_i`` are single variables. Each perspective row is an
exponential-cone constraint (a_i x + b_i) / w_i <= t ln((t + g s) / t), so the
barrier -log(q - l) - log(t) - log(t + g s) is self-concordant and Newton
centering with backtracking is well behaved.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

MU_FACTOR = 0.2
ARMIJO_C = 1e-4
SHRINK = 0.5
DEFAULT_TOL = 1e-8
PHASE1_BOX = 1e3
CENTER_LOOSE = 0.125
CENTER_FINAL = 1e-7
FULL_STEP_BELOW = 0.5


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class ConvexSubproblem:
    """Declarative problem description; build it with :class:`ProblemBuilder`."""

    layout: dict[str, slice]
    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    scale: np.ndarray
    hint: np.ndarray
    lin_a: np.ndarray
    lin_b: np.ndarray
    lin_labels: list[str]
    p_time: np.ndarray
    p_slack: np.ndarray
    p_weight: np.ndarray
    p_gain: np.ndarray
    p_a: np.ndarray
    p_b: np.ndarray
    p_labels: list[str]

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    @property
    def n_linear(self) -> int:
        return len(self.lin_b)

    @property
    def n_perspective(self) -> int:
        return len(self.p_b)

    def block(self, x, name):
        return np.asarray(x)[self.layout[name]]

    def perspective_values(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        t = x[self.p_time]
        s = x[self.p_slack]
        return self.p_weight * t * np.log1p(self.p_gain * s / t)

    def linear_residuals(self, x) -> np.ndarray:
        """b - A x; negative entries are violations."""
        return self.lin_b - self.lin_a @ np.asarray(x, float)

    def perspective_residuals(self, x) -> np.ndarray:
        """q(t, s) - (a x + b); negative entries are violations."""
        x = np.asarray(x, float)
        return self.perspective_values(x) - (self.p_a @ x + self.p_b)

    def bound_residuals(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.minimum(x - self.lower, self.upper - x)

    def max_violation(self, x) -> float:
        parts = [self.bound_residuals(x)]
        if self.n_linear:
            parts.append(self.linear_residuals(x))
        if self.n_perspective:
            parts.append(self.perspective_residuals(x))
        return max(0.0, -float(np.min(np.concatenate(parts))))

    def row_labels(self) -> list[str]:
        return list(self.lin_labels) + list(self.p_labels)


class ProblemBuilder:
    """Incrementally assembles a :class:`ConvexSubproblem` from named blocks."""

    def __init__(self):
        self._layout: dict[str, slice] = {}
        self._lo: list[float] = []
        self._hi: list[float] = []
        self._scale: list[float] = []
        self._hint: list[float] = []
        self._obj: dict[int, float] = {}
        self._lin: list[tuple[dict[int, float], float, str]] = []
        self._persp: list[tuple[int, int, float, float, dict[int, float], float, str]] = []

    @property
    def n_vars(self) -> int:
        return len(self._lo)

    def add_block(self, name, size, lower=-np.inf, upper=np.inf, scale=1.0, hint=None) -> slice:
        start = self.n_vars
        sl = slice(start, start + size)
        self._layout[name] = sl
        self._lo.extend(np.broadcast_to(np.asarray(lower, float), (size,)))
        self._hi.extend(np.broadcast_to(np.asarray(upper, float), (size,)))
        self._scale.extend(np.broadcast_to(np.asarray(scale, float), (size,)))
        if hint is None:
            hint = np.nan
        self._hint.extend(np.broadcast_to(np.asarray(hint, float), (size,)))
        return sl

    def index(self, name, k=0) -> int:
        sl = self._layout[name]
        i = sl.start + k
        if not sl.start <= i < sl.stop:
            raise IndexError(f"{name}[{k}] out of range")
        return i

    def fix(self, idx, value=0.0):
        self._lo[idx] = value
        self._hi[idx] = value

    def maximize(self, coeffs: dict[int, float]):
        self._obj = dict(coeffs)

    def add_linear(self, coeffs: dict[int, float], sense: str, rhs: float, label: str):
        """sum coeffs[j] x_j (<= | >=) rhs."""
        if sense == "<=":
            self._lin.append((dict(coeffs), float(rhs), label))
        elif sense == ">=":
            self._lin.append(({j: -v for j, v in coeffs.items()}, -float(rhs), label))
        else:
            raise ValueError(f"bad sense {sense!r}")

    def add_perspective(self, time: int, slack: int, weight: float, gain: float,
                        rhs_coeffs: dict[int, float], rhs_const: float, label: str):
        """weight * x_time * ln(1 + gain * x_slack / x_time) >= rhs_coeffs @ x + rhs_const."""
        self._persp.append((time, slack, float(weight), float(gain), dict(rhs_coeffs),
                            float(rhs_const), label))

    def build(self) -> ConvexSubproblem:
        n = self.n_vars
        obj = np.zeros(n)
        for j, v in self._obj.items():
            obj[j] += v
        lin_a = np.zeros((len(self._lin), n))
        for r, (coeffs, _, _) in enumerate(self._lin):
            for j, v in coeffs.items():
                lin_a[r, j] += v
        p_a = np.zeros((len(self._persp), n))
        for r, row in enumerate(self._persp):
            for j, v in row[4].items():
                p_a[r, j] += v
        lo = np.array(self._lo)
        hi = np.array(self._hi)
        hint = np.array(self._hint)
        hint = np.where(np.isnan(hint), _default_hint(lo, hi), hint)
        return ConvexSubproblem(
            layout=dict(self._layout), objective=obj, lower=lo, upper=hi,
            scale=np.array(self._scale), hint=hint,
            lin_a=lin_a, lin_b=np.array([r[1] for r in self._lin], float),
            lin_labels=[r[2] for r in self._lin],
            p_time=np.array([r[0] for r in self._persp], dtype=int),
            p_slack=np.array([r[1] for r in self._persp], dtype=int),
            p_weight=np.array([r[2] for r in self._persp], float),
            p_gain=np.array([r[3] for r in self._persp], float),
            p_a=p_a, p_b=np.array([r[5] for r in self._persp], float),
            p_labels=[r[6] for r in self._persp],
        )


def _default_hint(lo, hi):
    both = np.isfinite(lo) & np.isfinite(hi)
    mid = np.zeros_like(lo)
    mid[both] = 0.5 * (lo[both] + hi[both])
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    mid[only_lo] = lo[only_lo] + 1.0
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    mid[only_hi] = hi[only_hi] - 1.0
    return mid


@dataclass
class SolveOutcome:
    x: np.ndarray
    objective: float
    status: Status
    kkt_residual: float
    newton_steps: int = 0
    phase1_steps: int = 0
    diagnosis: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


class _Barrier:
    """Barrier oracle over the free (non-fixed) variables of a problem.

    Every affine barrier argument (bounds, linear rows, t and t + g s of the
    perspective rows) is stacked as u = bu - au @ x; the perspective rows add
    r = w t ln(1 + g s / t) - pa @ x - pb.
    """

    def __init__(self, p: ConvexSubproblem, x_full: np.ndarray):
        free = p.lower < p.upper
        self.free = free
        self.x_full = x_full.copy()
        fixed_part = x_full * ~free
        ridx = -np.ones(p.n_vars, dtype=int)
        ridx[free] = np.arange(free.sum())
        if np.any(ridx[p.p_time] < 0) or np.any(ridx[p.p_slack] < 0):
            raise ValueError("perspective rows must reference free variables")
        n = self.n = int(free.sum())
        self.c = p.objective[free]
        self.pa = p.p_a[:, free]
        self.pb = p.p_b + p.p_a @ fixed_part
        self.ti = ridx[p.p_time]
        self.si = ridx[p.p_slack]
        self.w = p.p_weight
        self.g = p.p_gain
        k = self.k = len(self.pb)
        lo, hi = p.lower[free], p.upper[free]
        eye = np.eye(n)
        lo_rows = np.isfinite(lo)
        hi_rows = np.isfinite(hi)
        t_rows = np.zeros((k, n))
        t_rows[np.arange(k), self.ti] = 1.0
        z_rows = t_rows.copy()
        z_rows[np.arange(k), self.si] += self.g
        self.au = np.vstack([-eye[lo_rows], eye[hi_rows], p.lin_a[:, free], -t_rows, -z_rows])
        self.bu = np.concatenate([-lo[lo_rows], hi[hi_rows], p.lin_b - p.lin_a @ fixed_part,
                                  np.zeros(2 * k)])
        # barrier parameter: one per affine row, one more per exp-cone row
        self.nu = len(self.bu) + k
        self._rows = np.arange(k)
        # flat positions of the 2x2 perspective Hessian blocks
        self._hidx = np.concatenate([self.ti * n + self.ti, self.ti * n + self.si,
                                     self.si * n + self.ti, self.si * n + self.si])

    def expand(self, xr):
        x = self.x_full.copy()
        x[self.free] = xr
        return x

    def reduce(self, x):
        return np.asarray(x, float)[self.free]

    def slacks(self, x):
        """Affine and perspective barrier arguments, or None if any is nonpositive."""
        u = self.bu - self.au @ x
        if u.size and not u.min() > 0:
            return None
        if not self.k:
            return u, u[:0]
        t = x[self.ti]
        r = self.w * t * np.log1p(self.g * x[self.si] / t) - (self.pa @ x + self.pb)
        if not r.min() > 0:
            return None
        return u, r

    def value(self, x, tt, sl=None):
        if sl is None:
            sl = self.slacks(x)
            if sl is None:
                return math.inf
        return -tt * float(self.c @ x) - float(np.log(sl[0]).sum()) - float(np.log(sl[1]).sum())

    def derivatives(self, x, tt, sl):
        u, r = sl
        inv = 1.0 / u
        grad = -tt * self.c + self.au.T @ inv
        hess = (self.au.T * (inv * inv)) @ self.au
        if self.k:
            t = x[self.ti]
            gs = self.g * x[self.si]
            z = t + gs
            jr = -self.pa.copy()
            jr[self._rows, self.ti] += self.w * (np.log1p(gs / t) - gs / z)
            jr[self._rows, self.si] += self.w * self.g * t / z
            inv_r = 1.0 / r
            grad -= jr.T @ inv_r
            hess += (jr.T * (inv_r * inv_r)) @ jr
            # curvature of the concave perspective terms: -hess(q) / r is PSD
            c = self.w / (z * z) * inv_r
            h_tt = c * gs * gs / t
            h_ts = -c * self.g * gs
            h_ss = c * self.g * self.g * t
            hess += np.bincount(self._hidx, np.concatenate([h_tt, h_ts, h_ts, h_ss]),
                                minlength=self.n * self.n).reshape(self.n, self.n)
        return grad, hess

    def max_step(self, x, dx):
        """Largest step keeping the affine barrier arguments positive."""
        du = self.au @ dx
        grow = du > 0
        if not np.any(grow):
            return math.inf
        u = self.bu - self.au @ x
        return float(np.min(u[grow] / du[grow]))


def _newton_direction(grad, hess):
    d = np.sqrt(np.abs(np.diag(hess)))
    d[d == 0] = 1.0
    hs = hess / np.outer(d, d)
    try:
        step = np.linalg.solve(hs, -grad / d)
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(hs + 1e-14 * np.eye(len(d)), -grad / d, rcond=None)[0]
    return step / d


@dataclass
class _PathResult:
    x: np.ndarray
    t: float
    steps: int
    ok: bool
    stationarity: float  # Newton decrement / t


def _path_follow(bar: _Barrier, x0, tol, t0=None, max_newton=600, stop=None) -> _PathResult:
    """Barrier path following; ``stop(x)`` allows early exit (phase I)."""
    x = x0.copy()
    tt = _initial_t(bar, x) if t0 is None else t0
    steps = 0
    dec2 = math.inf
    while True:
        for _ in range(80):
            sl = bar.slacks(x)
            grad, hess = bar.derivatives(x, tt, sl)
            dx = _newton_direction(grad, hess)
            if not np.all(np.isfinite(dx)):
                return _PathResult(x, tt, steps, False, math.inf)
            dec2 = max(float(-grad @ dx), 0.0)
            final = bar.nu / tt <= 0.5 * tol
            if dec2 / 2 <= (CENTER_FINAL if final else CENTER_LOOSE):
                break
            lam = math.sqrt(dec2)
            alpha = min(1.0, 0.99 * bar.max_step(x, dx))
            xn = None
            if lam < FULL_STEP_BELOW and alpha == 1.0:
                # quadratic region: the full step is feasible and contracts lam,
                # while barrier values are too large here to compare reliably
                if bar.slacks(x + dx) is not None:
                    xn = x + dx
            f0 = bar.value(x, tt, sl)
            slope = float(grad @ dx)
            for _ls in range(0 if xn is not None else 60):
                cand = x + alpha * dx
                sln = bar.slacks(cand)
                if sln is not None and bar.value(cand, tt, sln) <= f0 + ARMIJO_C * alpha * slope:
                    xn = cand
                    break
                alpha *= SHRINK
            steps += 1
            if xn is None:
                # no decrease representable in floating point: accept the current center
                break
            x = xn
            if stop is not None and stop(x):
                return _PathResult(x, tt, steps, True, math.sqrt(dec2) / tt)
            if steps >= max_newton:
                return _PathResult(x, tt, steps, False, math.sqrt(dec2) / tt)
        # the final stage leaves half of tol for the centering error term
        if bar.nu / tt <= 0.5 * tol:
            return _PathResult(x, tt, steps, dec2 / 2 <= 1e-6, math.sqrt(dec2) / tt)
        tt = min(tt / MU_FACTOR, 2.0 * bar.nu / tol)


def _initial_t(bar: _Barrier, x) -> float:
    """Barrier weight under which ``x`` is closest to centered.

    Minimizes the Newton decrement || t c' + grad_barrier ||_{H^-1} over t,
    where c' is the objective gradient (c' = -c for maximization).
    """
    sl = bar.slacks(x)
    g0, hess = bar.derivatives(x, 0.0, sl)
    g1, _ = bar.derivatives(x, 1.0, sl)
    c = g1 - g0
    try:
        hc = np.linalg.solve(hess, c)
    except np.linalg.LinAlgError:
        return 1.0
    denom = float(c @ hc)
    if not denom > 0:
        return 1.0
    t = -float(g0 @ hc) / denom
    return max(t, 1.0)


def _interior_start(p: ConvexSubproblem, x0) -> np.ndarray:
    x = np.array(p.hint if x0 is None else x0, dtype=float)
    lo, hi = p.lower, p.upper
    free = lo < hi
    width = np.where(np.isfinite(hi - lo), hi - lo, np.inf)
    margin = np.minimum(1e-3 * width, 1e-3 * np.maximum(1.0, np.abs(x)))
    x = np.where(free, np.clip(x, lo + margin, hi - margin), lo)
    return x


def _phase_one(p: ConvexSubproblem, x0: np.ndarray, tol: float):
    """Find a strictly feasible point by minimizing the worst row violation."""
    n = p.n_vars
    aug_lin = np.hstack([p.lin_a, -np.ones((p.n_linear, 1))])
    aug_p = np.hstack([p.p_a, -np.ones((p.n_perspective, 1))])
    viol = 0.0
    if p.n_linear:
        viol = max(viol, float(-p.linear_residuals(x0).min()))
    if p.n_perspective:
        viol = max(viol, float(-p.perspective_residuals(x0).min()))
    sigma0 = viol + 1.0
    # unbounded variables would drift off to infinity under a zero objective,
    # so phase I boxes them around the starting point
    radius = PHASE1_BOX * np.maximum(1.0, np.abs(x0))
    lo = np.where(np.isfinite(p.lower), p.lower, x0 - radius)
    hi = np.where(np.isfinite(p.upper), p.upper, x0 + radius)
    q = ConvexSubproblem(
        layout={**p.layout, "_sigma": slice(n, n + 1)},
        objective=np.concatenate([np.zeros(n), [-1.0]]),
        lower=np.concatenate([lo, [-np.inf]]), upper=np.concatenate([hi, [np.inf]]),
        scale=np.concatenate([p.scale, [1.0]]), hint=np.concatenate([x0, [sigma0]]),
        lin_a=aug_lin, lin_b=p.lin_b, lin_labels=p.lin_labels,
        p_time=p.p_time, p_slack=p.p_slack, p_weight=p.p_weight, p_gain=p.p_gain,
        p_a=aug_p, p_b=p.p_b, p_labels=p.p_labels,
    )
    xq = np.concatenate([x0, [sigma0]])
    bar = _Barrier(q, xq)
    target = -1e-3

    res = _path_follow(bar, bar.reduce(xq), tol=tol, t0=1.0, stop=lambda xr: xr[-1] < target)
    sigma = res.x[-1]
    x = bar.expand(res.x)[:n]
    if sigma < 0:
        return x, res.steps, ()
    # rows still binding at the phase-I optimum explain the infeasibility
    labels = p.row_labels()
    resid = np.concatenate([p.linear_residuals(x), p.perspective_residuals(x)])
    worst = np.argsort(resid)
    culprits = tuple(dict.fromkeys(labels[i] for i in worst if resid[i] <= -0.5 * sigma))
    if not res.ok:
        return None, res.steps, ("phase I stalled",) + culprits
    return None, res.steps, culprits or ("bounds",)


def solve(problem: ConvexSubproblem, tol: float = DEFAULT_TOL, x0=None, t0: float | None = None) -> SolveOutcome:
    """Maximize ``problem.objective @ x`` to duality-gap tolerance ``tol``.

    ``x0`` is a starting guess; if it is strictly feasible phase I is skipped.
    """
    _validate(problem)
    for cand in (x0, problem.hint):
        if cand is not None and is_strictly_feasible(problem, np.asarray(cand, float)):
            x_start = np.array(cand, float)
            break
    else:
        x_start = _interior_start(problem, x0)
    phase1 = 0
    if not is_strictly_feasible(problem, x_start):
        x_feas, phase1, diagnosis = _phase_one(problem, x_start, tol)
        if x_feas is None:
            return SolveOutcome(x=x_start, objective=float("nan"), status=Status.INFEASIBLE,
                                kkt_residual=math.inf, phase1_steps=phase1, diagnosis=diagnosis)
        x_start = x_feas
    bar = _Barrier(problem, x_start)
    res = _path_follow(bar, bar.reduce(x_start), tol=tol, t0=t0)
    x = bar.expand(res.x)
    # the gap bound of an approximately centered point, Newton decrement lam:
    # (nu + lam sqrt(nu)) / t; stationarity is measured in the local Hessian norm
    lam = res.stationarity * res.t
    gap = (bar.nu + lam * math.sqrt(bar.nu)) / res.t
    primal = problem.max_violation(x)
    kkt = max(gap, res.stationarity, primal)
    status = Status.OPTIMAL if res.ok and kkt <= tol else Status.NUMERICAL_FAILURE
    return SolveOutcome(x=x, objective=float(problem.objective @ x), status=status,
                        kkt_residual=kkt, newton_steps=res.steps, phase1_steps=phase1)


def is_strictly_feasible(p: ConvexSubproblem, x) -> bool:
    """Inside every row and bound with positive margin (fixed variables must match)."""
    free = p.lower < p.upper
    if np.any(x[~free] != p.lower[~free]):
        return False
    if np.any((x[free] <= p.lower[free]) | (x[free] >= p.upper[free])):
        return False
    if p.n_linear and p.linear_residuals(x).min() <= 0:
        return False
    if p.n_perspective and not p.perspective_residuals(x).min() > 0:
        return False
    return True


def _validate(p: ConvexSubproblem):
    if np.any(p.lower > p.upper):
        raise ValueError("lower bound above upper bound")
    if p.n_perspective:
        if np.any(p.p_weight <= 0) or np.any(p.p_gain <= 0):
            raise ValueError("perspective rows need positive weight and gain")
        if np.any(p.lower[p.p_time] <= 0):
            raise ValueError("perspective time variables need a positive lower bound")
        if np.any(p.lower[p.p_slack] < 0):
            raise ValueError("perspective slack variables must be nonnegative")


def concavity_probe(problem: ConvexSubproblem, n_samples: int = 1000, seed=0,
                    atol: float = 1e-10) -> bool:
    """Randomized midpoint-concavity check of every perspective row.

    Pairs (t, s) are drawn inside the variables' bounds (capped to a unit box
    when unbounded); the check passes if
    q(lam x + (1 - lam) y) >= lam q(x) + (1 - lam) q(y) - atol everywhere.
    """
    rng = np.random.default_rng(seed)
    for r in range(problem.n_perspective):
        w, g = problem.p_weight[r], problem.p_gain[r]
        ti, si = problem.p_time[r], problem.p_slack[r]
        lo = np.array([max(problem.lower[ti], 1e-6), max(problem.lower[si], 0.0)])
        hi = np.array([problem.upper[ti], problem.upper[si]])
        hi = np.where(np.isfinite(hi) & (hi > lo), hi, lo + 1.0)
        a = rng.uniform(lo, hi, size=(n_samples, 2))
        b = rng.uniform(lo, hi, size=(n_samples, 2))
        lam = rng.uniform(0.0, 1.0, size=(n_samples, 1))
        mid = lam * a + (1 - lam) * b

        def q(v):
            return w * v[:, 0] * np.log1p(g * v[:, 1] / v[:, 0])

        gap = q(mid) - (lam[:, 0] * q(a) + (1 - lam[:, 0]) * q(b))
        if np.any(gap < -atol):
            return False
    return True
