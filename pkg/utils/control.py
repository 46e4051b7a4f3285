"""Redundant tension allocation and open-loop inverse kinematics.

The allocation problem for a desired configuration q is

    min  tau^T W tau      s.t.   D tau = K q,   tau_min <= tau_i <= tau_max

solved with a primal active-set method. The equality rows are scaled by
max|D| so that tensions (N) and moment-arm terms are of comparable size.
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from utils.errors import (AngleOutOfRange, ConfigurationOutOfRange, Infeasible, InvalidParams,
                          MaxIterationsExceeded, ToleranceNotMet, ValidationError)
from utils.logger import logger
from utils.model import (Configuration, TendonCommand, build_D, displacements_from_tensions)

LOWER = -1
UPPER = 1


@dataclass(frozen=True)
class ControlOptions:
    tension_min: float = 0.5
    tension_max: float = 40.0
    qp_tolerance: float = 1e-9
    qp_max_iterations: int = 100
    # Diagonal of the energy weight W; identity when None
    weights: Optional[tuple] = None

    def __post_init__(self):
        if not (math.isfinite(self.tension_min) and self.tension_min >= 0):
            raise ValidationError(f"tension_min must be finite and >= 0, got {self.tension_min}")
        if math.isnan(self.tension_max) or not self.tension_max > self.tension_min:
            raise ValidationError(
                f"tension_max ({self.tension_max}) must exceed tension_min ({self.tension_min})")
        if not self.qp_tolerance > 0:
            raise ValidationError(f"qp_tolerance must be > 0, got {self.qp_tolerance}")
        if int(self.qp_max_iterations) < 1:
            raise ValidationError(f"qp_max_iterations must be >= 1, got {self.qp_max_iterations}")
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            if not all(math.isfinite(v) and v > 0 for v in w):
                raise ValidationError(f"Energy weights must be finite and > 0, got {w}")
            object.__setattr__(self, "weights", w)


@dataclass(frozen=True, eq=False)
class AllocationResult:
    tensions: np.ndarray
    # Lower bounds are 0..n-1, upper bounds n..2n-1
    active_set: tuple
    objective_value: float
    kkt_residual: float
    multipliers: np.ndarray
    iterations: int


@dataclass(frozen=True, eq=False)
class ActiveSetSolution:
    x: np.ndarray
    working: dict
    eq_multipliers: np.ndarray
    bound_multipliers: dict
    iterations: int


class ActiveSetSolver:
    """Primal active-set method for  min 1/2 x^T H x  s.t.  A x = b,  lower <= x <= upper.

    H must be symmetric positive definite, A full row rank and x0 feasible.
    The working set maps a variable index to LOWER or UPPER.
    """

    def __init__(self, max_iter=100, tol=1e-12):
        self.max_iter = max_iter
        self.tol = tol

    def solve(self, H, A, b, lower, upper, x0, working=None):
        n = H.shape[0]
        x = np.clip(np.asarray(x0, dtype=float).copy(), lower, upper)
        W = dict(working or {})
        for i, side in W.items():
            x[i] = lower[i] if side == LOWER else upper[i]

        for iteration in range(1, self.max_iter + 1):
            free = [i for i in range(n) if i not in W]
            target, lam = self._equality_qp(H, A, b, x, W, free)
            p = target - x
            if np.linalg.norm(p, np.inf) <= self.tol * (1.0 + np.linalg.norm(x, np.inf)):
                x = target
                mu = self._bound_multipliers(H, A, x, lam, W)
                scale = 1.0 + np.linalg.norm(H @ x, np.inf)
                if not mu or min(mu.values()) >= -self.tol * scale:
                    return ActiveSetSolution(x, W, lam, mu, iteration)
                drop = min(mu, key=mu.get)
                del W[drop]
                continue

            alpha, block = 1.0, None
            for i in free:
                if p[i] < 0 and x[i] + p[i] < lower[i]:
                    step = (lower[i] - x[i]) / p[i]
                    if step < alpha:
                        alpha, block = step, (i, LOWER)
                elif p[i] > 0 and x[i] + p[i] > upper[i]:
                    step = (upper[i] - x[i]) / p[i]
                    if step < alpha:
                        alpha, block = step, (i, UPPER)
            x = x + max(alpha, 0.0) * p
            if block is not None:
                i, side = block
                x[i] = lower[i] if side == LOWER else upper[i]
                W[i] = side
        raise MaxIterationsExceeded(f"Active-set solver did not converge in {self.max_iter} iterations")

    @staticmethod
    def _equality_qp(H, A, b, x, W, free):
        """Minimise over the free variables with the working-set variables held at their bounds"""
        fixed = list(W)
        m = A.shape[0]
        H_ff = H[np.ix_(free, free)]
        A_f = A[:, free]
        rhs_top = -H[np.ix_(free, fixed)] @ x[fixed] if fixed else np.zeros(len(free))
        rhs_bot = b - (A[:, fixed] @ x[fixed] if fixed else 0.0)
        kkt = np.block([[H_ff, A_f.T], [A_f, np.zeros((m, m))]])
        rhs = np.concatenate([rhs_top, rhs_bot])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        target = x.copy()
        target[free] = sol[:len(free)]
        # Stationarity is H x = A^T lam + sum mu_i a_i
        lam = -sol[len(free):]
        return target, lam

    @staticmethod
    def _bound_multipliers(H, A, x, lam, W):
        r = H @ x - A.T @ lam
        return {i: -side * r[i] for i, side in W.items()}


@lru_cache(maxsize=32)
def _pretension_direction(tendon_xy):
    """Strictly positive null-space vector of D (tensions that cancel all moments), or None"""
    xy = np.asarray(tendon_xy, dtype=float)
    D = np.vstack([-xy[:, 1], xy[:, 0]])
    scale = np.abs(D).max()
    n = D.shape[1]
    res = linprog(np.ones(n), A_eq=D / scale, b_eq=np.zeros(2), bounds=[(1.0, None)] * n, method="highs")
    if res.status != 0:
        logger.debug("Tendon layout admits no strictly positive pretension direction")
        return None
    return np.asarray(res.x)


def _feasible_start(params, A, b, lower, upper):
    """A point satisfying the bounds and (to solver precision) A x = b"""
    x_p = np.linalg.pinv(A) @ b
    v = _pretension_direction(params.tendon_xy)
    if v is not None:
        t = np.max((lower - x_p) / v)
        x0 = x_p + t * v
        if np.all(x0 <= upper + 1e-12 * np.maximum(1.0, np.abs(upper))):
            return np.clip(x0, lower, upper)

    logger.debug("Pretension start violates the upper bound, falling back to linprog phase one")
    bounds = [(lo, None if math.isinf(hi) else hi) for lo, hi in zip(lower, upper)]
    res = linprog(np.ones(A.shape[1]), A_eq=A, b_eq=b, bounds=bounds, method="highs")
    if res.status == 2:
        raise Infeasible("Desired configuration cannot be reached within the tension bounds")
    if res.status != 0:
        raise Infeasible(f"Phase-one feasibility search failed: {res.message}")
    return np.clip(res.x, lower, upper)


def _initial_working_set(A, x, lower, upper):
    n = A.shape[1]
    m = np.linalg.matrix_rank(A)
    W = {}
    for i in range(n):
        for side, bound in ((LOWER, lower[i]), (UPPER, upper[i])):
            if math.isinf(bound) or abs(x[i] - bound) > 1e-12 * max(1.0, abs(bound)):
                continue
            free = [j for j in range(n) if j != i and j not in W]
            if len(free) >= m and np.linalg.matrix_rank(A[:, free]) == m:
                W[i] = side
                x[i] = bound
            break
    return W


def _kkt_residual(H, A, b, x, lam, mu, W, lower, upper):
    """Largest KKT violation, each term relative to the size of the quantities it compares"""
    Hx = H @ x
    r = Hx - A.T @ lam
    for i, side in W.items():
        r[i] += side * mu[i]
    grad_scale = 1.0 + np.linalg.norm(Hx, np.inf)
    stationarity = np.linalg.norm(r, np.inf) / grad_scale
    primal = np.linalg.norm(A @ x - b, np.inf) / (1.0 + np.linalg.norm(b, np.inf))
    finite = np.abs(np.concatenate([lower, upper]))
    finite = finite[np.isfinite(finite)]
    bounds = max(0.0, float(np.max(lower - x)), float(np.max(x - upper))) / (1.0 + float(np.max(finite, initial=0.0)))
    dual = max([0.0] + [-v for v in mu.values()]) / grad_scale
    return max(stationarity, primal, bounds, dual)


def allocate_tensions(params, q_des, opts):
    """Minimum-energy tensions reaching q_des within [tension_min, tension_max]"""
    D = build_D(params)
    if q_des.curvature > params.kappa_max * (1.0 + 1e-12):
        raise ConfigurationOutOfRange(
            f"Curvature {q_des.curvature:.6g} 1/m exceeds the device limit {params.kappa_max:.6g} 1/m")
    n = params.n_tendons
    w = np.ones(n) if opts.weights is None else np.asarray(opts.weights, dtype=float)
    if w.shape != (n,):
        raise InvalidParams(f"Expected {n} energy weights, got {w.shape[0]}")

    scale = np.abs(D).max()
    A = D / scale
    b = params.bending_stiffness * q_des.as_array() / scale
    H = 2.0 * np.diag(w)
    lower = np.full(n, float(opts.tension_min))
    upper = np.full(n, float(opts.tension_max))

    x0 = _feasible_start(params, A, b, lower, upper)
    W0 = _initial_working_set(A, x0, lower, upper)
    solver = ActiveSetSolver(max_iter=int(opts.qp_max_iterations), tol=float(opts.qp_tolerance))
    sol = solver.solve(H, A, b, lower, upper, x0, W0)

    tau = np.clip(sol.x, lower, upper)
    kkt = _kkt_residual(H, A, b, tau, sol.eq_multipliers, sol.bound_multipliers, sol.working, lower, upper)
    moment = params.bending_stiffness * q_des.as_array()
    eq_err = np.linalg.norm(D @ tau - moment)
    if eq_err > opts.qp_tolerance * (1.0 + np.linalg.norm(moment)) or kkt > opts.qp_tolerance:
        raise ToleranceNotMet(f"Allocation residuals above qp_tolerance {opts.qp_tolerance:.3g}: "
                              f"moment error {eq_err:.3g}, KKT {kkt:.3g}")

    active = []
    for i in range(n):
        if abs(tau[i] - lower[i]) <= 1e-12 * max(1.0, abs(lower[i])):
            active.append(i)
        elif abs(tau[i] - upper[i]) <= 1e-12 * max(1.0, abs(upper[i])):
            active.append(n + i)
    result = AllocationResult(
        tensions=tau,
        active_set=tuple(active),
        objective_value=float(tau @ (w * tau)),
        kkt_residual=float(kkt),
        multipliers=sol.eq_multipliers / scale,
        iterations=sol.iterations,
    )
    logger.debug(f"Allocated tensions {np.round(tau, 6).tolist()} in {sol.iterations} iterations")
    return result


def command_from_tensions(params, tensions):
    y = displacements_from_tensions(params, tensions)
    return TendonCommand(
        tensions=np.asarray(tensions, dtype=float),
        displacements=y,
        motor_positions=params.transmission_ratio * y,
    )


def inverse_kinematics(params, q_des, opts):
    """Motor setpoints for q_des: allocate tensions, then y = G tau and motor = rho * y"""
    return command_from_tensions(params, allocate_tensions(params, q_des, opts).tensions)


def naive_command(params, q_des, opts=None):
    """Conventional single-tendon pull without pretension.

    Only the tendon best aligned with the required moment carries tension; the
    displacements are y = G tau for that tension, so a slack-free plant tracks
    axis-aligned targets exactly. Any slack has to be taken up by the pull itself.
    """
    n = params.n_tendons
    xy = np.asarray(params.tendon_xy, dtype=float)
    D = np.vstack([-xy[:, 1], xy[:, 0]])
    moment = params.bending_stiffness * q_des.as_array()
    tensions = np.zeros(n)
    if np.linalg.norm(moment) > 0:
        norms = np.linalg.norm(D, axis=0)
        alignment = np.where(norms > 0, (D.T @ moment) / np.where(norms > 0, norms, 1.0), -np.inf)
        j = int(np.argmax(alignment))
        if alignment[j] > 0:
            tensions[j] = float(D[:, j] @ moment) / norms[j] ** 2
    return command_from_tensions(params, tensions)


def angle_to_config(bending_angle_deg, bending_plane_deg, params):
    """kappa = theta / l0 split along the bending plane"""
    if not (math.isfinite(bending_angle_deg) and math.isfinite(bending_plane_deg)):
        raise AngleOutOfRange(f"Angles must be finite, got ({bending_angle_deg}, {bending_plane_deg})")
    if abs(bending_angle_deg) > params.max_bending_angle_deg:
        raise AngleOutOfRange(
            f"Bending angle {bending_angle_deg} deg exceeds the device limit {params.max_bending_angle_deg} deg")
    kappa = math.radians(bending_angle_deg) / params.bending_length
    phi = math.radians(bending_plane_deg)
    return Configuration(kappa * math.cos(phi), kappa * math.sin(phi))


def config_from_axis_angles(ap_deg, rl_deg, params):
    """Configuration from signed per-axis bending angles (inverse of model.axis_angles)"""
    magnitude = math.hypot(ap_deg, rl_deg)
    plane = math.degrees(math.atan2(rl_deg, ap_deg)) if magnitude > 0 else 0.0
    return angle_to_config(magnitude, plane, params)
