"""Constant-curvature statics and kinematics of the tendon-driven bending section.

Units are SI throughout (m, N, rad); degrees appear only in TipPose and in the
per-axis angle helpers used at the experiment/CLI boundary.

    K q = D tau                    moment balance
    y   = G tau                    tendon displacements, G = D^T L0 K^-1 D + Lt Kt^-1
    q   = K^-1 D G^-1 y            forward kinematics
"""
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import linalg

import settings
from utils.common import rotate_xy, wrap_angle_deg
from utils.errors import DegenerateLayout, InvalidParams, InvalidTension, SingularCompliance, ValidationError

# Below this curvature the arc is evaluated by its series expansion
STRAIGHT_KAPPA = 1e-9
# sigma_min / sigma_max threshold for a usable tendon layout
RANK_TOL = 1e-12
# lambda_min / lambda_max threshold for an invertible compliance matrix
COMPLIANCE_TOL = 1e-12


@dataclass(frozen=True)
class RobotParams:
    bending_stiffness: float
    tendon_xy: tuple
    bending_length: float
    tendon_lengths: tuple
    tendon_stiffnesses: tuple
    transmission_ratio: float = 3.0
    max_bending_angle_deg: float = 180.0

    def __post_init__(self):
        try:
            xy = tuple((float(x), float(y)) for x, y in self.tendon_xy)
            lengths = tuple(float(v) for v in self.tendon_lengths)
            stiffnesses = tuple(float(v) for v in self.tendon_stiffnesses)
        except (TypeError, ValueError) as e:
            raise InvalidParams(f"Malformed tendon description: {e}") from e
        object.__setattr__(self, "tendon_xy", xy)
        object.__setattr__(self, "tendon_lengths", lengths)
        object.__setattr__(self, "tendon_stiffnesses", stiffnesses)
        for name in ("bending_stiffness", "bending_length", "transmission_ratio", "max_bending_angle_deg"):
            value = float(getattr(self, name))
            object.__setattr__(self, name, value)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParams(f"{name} must be finite and > 0, got {value}")
        if self.max_bending_angle_deg > 360.0:
            raise InvalidParams(f"max_bending_angle_deg must be <= 360, got {self.max_bending_angle_deg}")
        n = len(xy)
        if n < 1:
            raise InvalidParams("At least one tendon is required")
        if len(lengths) != n or len(stiffnesses) != n:
            raise InvalidParams(
                f"Tendon count mismatch: {n} positions, {len(lengths)} lengths, {len(stiffnesses)} stiffnesses")
        if not all(math.isfinite(c) for p in xy for c in p):
            raise InvalidParams("Tendon coordinates must be finite")
        if not all(math.isfinite(v) and v > 0 for v in lengths):
            raise InvalidParams(f"Tendon lengths must be finite and > 0, got {lengths}")
        # +inf is the rigid-tendon limit
        if not all(v > 0 and not math.isnan(v) for v in stiffnesses):
            raise InvalidParams(f"Tendon stiffnesses must be > 0, got {stiffnesses}")

    @classmethod
    def default(cls):
        """The declared 4-tendon fixture (d = 1 mm, K_b = 1e-3 N m^2, l0 = 50 mm)"""
        return cls.from_dict(settings.get_default_config()["robot"])

    @classmethod
    def from_dict(cls, data):
        return cls(
            bending_stiffness=data["bending_stiffness"],
            tendon_xy=data["tendon_xy"],
            bending_length=data["bending_length"],
            tendon_lengths=data["tendon_lengths"],
            tendon_stiffnesses=data["tendon_stiffnesses"],
            transmission_ratio=data.get("transmission_ratio", 3.0),
            max_bending_angle_deg=data.get("max_bending_angle_deg", 180.0),
        )

    def to_dict(self):
        return {
            "bending_stiffness": self.bending_stiffness,
            "tendon_xy": [list(p) for p in self.tendon_xy],
            "bending_length": self.bending_length,
            "tendon_lengths": list(self.tendon_lengths),
            "tendon_stiffnesses": list(self.tendon_stiffnesses),
            "transmission_ratio": self.transmission_ratio,
            "max_bending_angle_deg": self.max_bending_angle_deg,
        }

    @property
    def n_tendons(self):
        return len(self.tendon_xy)

    @property
    def kappa_max(self):
        return math.radians(self.max_bending_angle_deg) / self.bending_length


@dataclass(frozen=True)
class Configuration:
    kappa_x: float
    kappa_y: float

    def __post_init__(self):
        kx, ky = float(self.kappa_x), float(self.kappa_y)
        if not (math.isfinite(kx) and math.isfinite(ky)):
            raise ValidationError(f"Curvatures must be finite, got ({kx}, {ky})")
        object.__setattr__(self, "kappa_x", kx)
        object.__setattr__(self, "kappa_y", ky)

    @classmethod
    def from_array(cls, q):
        return cls(float(q[0]), float(q[1]))

    def as_array(self):
        return np.array([self.kappa_x, self.kappa_y])

    @property
    def curvature(self):
        return math.hypot(self.kappa_x, self.kappa_y)

    def bending_angle(self, params):
        """Bending angle theta = l0 * kappa in radians (always >= 0)"""
        return params.bending_length * self.curvature


@dataclass(frozen=True, eq=False)
class TendonCommand:
    tensions: np.ndarray
    displacements: np.ndarray
    motor_positions: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.tensions) < 0):
            raise InvalidTension(f"Tendon tensions must be >= 0, got {self.tensions}")


@dataclass(frozen=True, eq=False)
class TipPose:
    position: np.ndarray
    bending_angle: float
    bending_plane: float

    @property
    def position_mm(self):
        return np.asarray(self.position) * 1e3


def _layout_matrix(params):
    xy = np.asarray(params.tendon_xy, dtype=float).reshape(-1, 2)
    return np.vstack([-xy[:, 1], xy[:, 0]])


@lru_cache(maxsize=64)
def _checked_layout(params):
    D = _layout_matrix(params)
    sv = np.linalg.svd(D, compute_uv=False)
    if sv.size < 2 or not sv[0] > 0 or sv[-1] <= RANK_TOL * sv[0]:
        raise DegenerateLayout(f"Tendon layout matrix has rank < 2 (singular values {sv.tolist()})")
    D.setflags(write=False)
    return D


def build_D(params):
    """2 x n moment-arm matrix with rows [-d_y; d_x]; raises DegenerateLayout when rank < 2"""
    return _checked_layout(params).copy()


def _tension_vector(params, tensions):
    if isinstance(tensions, TendonCommand):
        tensions = tensions.tensions
    tau = np.asarray(tensions, dtype=float).reshape(-1)
    if tau.shape != (params.n_tendons,):
        raise ValidationError(f"Expected {params.n_tendons} tensions, got {tau.shape[0]}")
    if not np.all(np.isfinite(tau)):
        raise ValidationError(f"Tensions must be finite, got {tau}")
    return tau


def statics_forward(params, tensions):
    """Solve the moment balance K q = D tau for q"""
    tau = _tension_vector(params, tensions)
    if np.any(tau < 0):
        raise InvalidTension(f"A tendon cannot push: negative tension in {tau}")
    q = _layout_matrix(params) @ tau / params.bending_stiffness
    return Configuration.from_array(q)


@lru_cache(maxsize=64)
def _compliance(params):
    D = _layout_matrix(params)
    lt = np.asarray(params.tendon_lengths)
    kt = np.asarray(params.tendon_stiffnesses)
    if np.any(kt <= 0) or params.bending_stiffness <= 0:
        raise InvalidParams("Stiffnesses must be positive")
    G = (params.bending_length / params.bending_stiffness) * (D.T @ D) + np.diag(lt / kt)
    G = 0.5 * (G + G.T)
    G.setflags(write=False)
    return G


def compliance_matrix(params):
    """Compliance G = D^T L0 K^-1 D + Lt Kt^-1 mapping tensions to displacements"""
    return _compliance(params).copy()


@lru_cache(maxsize=64)
def compliance_factor(params):
    """Cholesky factor of G for repeated solves; raises SingularCompliance"""
    G = _compliance(params)
    eig = np.linalg.eigvalsh(G)
    if not np.all(np.isfinite(eig)) or eig[0] <= COMPLIANCE_TOL * eig[-1]:
        raise SingularCompliance(
            f"Compliance matrix is singular (eigenvalues {eig.tolist()}); tendon stiffness must be finite")
    try:
        return linalg.cho_factor(G)
    except linalg.LinAlgError as e:
        raise SingularCompliance(f"Compliance matrix is not positive definite: {e}") from e


def displacements_from_tensions(params, tensions):
    """y = G tau"""
    if isinstance(tensions, TendonCommand):
        tensions = tensions.tensions
    tau = np.asarray(tensions, dtype=float).reshape(-1)
    if tau.shape != (params.n_tendons,) or not np.all(np.isfinite(tau)):
        raise ValidationError(f"Expected {params.n_tendons} finite tensions, got {tau}")
    return _compliance(params) @ tau


def tensions_from_displacements(params, displacements):
    """tau = G^-1 y (signed; no slack handling)"""
    y = np.asarray(displacements, dtype=float).reshape(-1)
    if y.shape != (params.n_tendons,) or not np.all(np.isfinite(y)):
        raise ValidationError(f"Expected {params.n_tendons} finite displacements, got {y}")
    return linalg.cho_solve(compliance_factor(params), y)


def forward_kinematics(params, displacements):
    """q = K^-1 D G^-1 y"""
    tau = tensions_from_displacements(params, displacements)
    q = _layout_matrix(params) @ tau / params.bending_stiffness
    return Configuration.from_array(q)


def _arc_offsets(kappa, s):
    """Radial and axial offsets of arc points at arc-length s for curvature kappa >= 0"""
    s = np.asarray(s, dtype=float)
    if kappa < STRAIGHT_KAPPA:
        radial = kappa * s ** 2 / 2.0 - kappa ** 3 * s ** 4 / 24.0
        axial = s - kappa ** 2 * s ** 3 / 6.0
    else:
        radial = 2.0 * np.sin(0.5 * kappa * s) ** 2 / kappa
        axial = np.sin(kappa * s) / kappa
    return radial, axial


def config_to_tip_pose(params, q):
    kappa = q.curvature
    phi = math.atan2(q.kappa_y, q.kappa_x) if kappa > 0 else 0.0
    radial, axial = _arc_offsets(kappa, params.bending_length)
    position = np.array([float(radial) * math.cos(phi), float(radial) * math.sin(phi), float(axial)])
    return TipPose(
        position=position,
        bending_angle=math.degrees(params.bending_length * kappa),
        bending_plane=wrap_angle_deg(math.degrees(phi)),
    )


def backbone_points(params, q, samples=200):
    """Points along the constant-curvature backbone from base (row 0) to tip"""
    if samples < 2:
        raise ValidationError("At least two backbone samples are required")
    kappa = q.curvature
    phi = math.atan2(q.kappa_y, q.kappa_x) if kappa > 0 else 0.0
    s = np.linspace(0.0, params.bending_length, samples)
    radial, axial = _arc_offsets(kappa, s)
    return np.column_stack([radial * math.cos(phi), radial * math.sin(phi), axial])


def axis_angles(params, q):
    """Signed per-axis bending angles (AP from kappa_x, RL from kappa_y) in degrees"""
    l0 = params.bending_length
    return math.degrees(l0 * q.kappa_x), math.degrees(l0 * q.kappa_y)


def rotate_layout(params, angle_deg):
    """Copy of params with every tendon rotated about the central axis"""
    xy = rotate_xy(params.tendon_xy, angle_deg)
    return replace(params, tendon_xy=tuple(map(tuple, xy.tolist())))


def scale_stiffness(params, factor):
    return replace(params, bending_stiffness=params.bending_stiffness * factor)


def layout_offset_deg(params):
    """Angular position of tendon 1 about the central axis"""
    x, y = params.tendon_xy[0]
    return math.degrees(math.atan2(y, x))
