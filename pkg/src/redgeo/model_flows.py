"""Model families of time-dependent metrics on space forms.

Every flow in scope is homogeneous: g(tau) = a(tau)^2 * g0, where g0 is the
unit simply-connected space form of curvature kappa in {-1, 0, +1}, written
in geodesic polar coordinates (rho, angles) about a fixed base point.  For
n = 1 only the flat full-line chart is supported and rho is a signed
coordinate.

Because the spatial geometry is exactly known, every curvature and flow
quantity sampled here is closed-form: h = (a'/a) g, H = n a'/a, Ric = the
constant-curvature tensor of g0, which is scale invariant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

SPHERE_CHART_MARGIN = 0.1

STATIC = "static"
BACKWARD_RICCI = "backward_ricci"
BACKWARD_K_RICCI = "backward_k_ricci"
TABULATED = "tabulated"

_VARIANTS = (STATIC, BACKWARD_RICCI, BACKWARD_K_RICCI, TABULATED)


class FlowDomainError(ValueError):
    """Raised when a flow or sample point violates its domain constraints."""


@dataclass(frozen=True)
class ModelSpaceSpec:
    """Spatial model: dimension and curvature sign of the unit space form."""

    n: int
    kappa: int

    def __post_init__(self):
        if int(self.n) < 1:
            raise FlowDomainError(f"dimension must be >= 1, got {self.n}")
        if self.kappa not in (-1, 0, 1):
            raise FlowDomainError(f"kappa must be -1, 0 or +1, got {self.kappa}")
        if self.n == 1 and self.kappa != 0:
            raise FlowDomainError("n = 1 supports only the flat line (kappa = 0)")

    @property
    def rho_min(self) -> float:
        return -math.inf if self.n == 1 else 0.0

    @property
    def rho_max(self) -> float:
        # Sphere chart stops short of the cut locus so minimal geodesics stay unique.
        if self.kappa == 1:
            return math.pi - SPHERE_CHART_MARGIN
        return math.inf

    def contains_rho(self, rho) -> bool:
        r = np.asarray(rho, dtype=float)
        return bool(np.all(r >= self.rho_min - 1e-12) and np.all(r <= self.rho_max + 1e-12))

    def sn(self, rho):
        """Warped factor of g0: sin, identity or sinh depending on kappa."""
        rho = np.asarray(rho, dtype=float)
        if self.kappa == 1:
            return np.sin(rho)
        if self.kappa == -1:
            return np.sinh(rho)
        return rho

    def sn_ratio(self, rho):
        """sn'(rho)/sn(rho); the radial Laplacian first-order coefficient."""
        rho = np.asarray(rho, dtype=float)
        if self.kappa == 1:
            return np.cos(rho) / np.sin(rho)
        if self.kappa == -1:
            return np.cosh(rho) / np.sinh(rho)
        return 1.0 / rho


@dataclass(frozen=True)
class ScaleFlowSpec:
    """Time profile of the conformal scale a(tau)."""

    variant: str
    a0: float = 1.0
    K: float = 0.0
    table: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise FlowDomainError(f"unknown scale variant {self.variant!r}")
        if self.variant != TABULATED and not self.a0 > 0.0:
            raise FlowDomainError("initial scale a0 must be positive")
        if self.variant == BACKWARD_K_RICCI and self.K < 0.0:
            raise FlowDomainError("backward_k_ricci requires K >= 0")
        if self.variant == TABULATED:
            if self.table is None:
                raise FlowDomainError("tabulated variant needs (tau, a) samples")
            taus, avals = self.table
            if len(taus) < 4 or len(taus) != len(avals):
                raise FlowDomainError("tabulated profile needs >= 4 matched samples")
            if np.any(np.diff(taus) <= 0):
                raise FlowDomainError("tabulated tau samples must be strictly increasing")
            if np.any(np.asarray(avals) <= 0):
                raise FlowDomainError("tabulated scale samples must be strictly positive")

    @classmethod
    def static(cls, a0: float = 1.0) -> "ScaleFlowSpec":
        return cls(STATIC, a0=a0)

    @classmethod
    def backward_ricci(cls, a0: float = 1.0) -> "ScaleFlowSpec":
        return cls(BACKWARD_RICCI, a0=a0)

    @classmethod
    def backward_k_ricci(cls, K: float, a0: float = 1.0) -> "ScaleFlowSpec":
        return cls(BACKWARD_K_RICCI, a0=a0, K=float(K))

    @classmethod
    def tabulated(cls, taus, avals) -> "ScaleFlowSpec":
        return cls(TABULATED, table=(tuple(float(t) for t in taus), tuple(float(a) for a in avals)))


@dataclass(frozen=True)
class MetricSample:
    """All scale-flow quantities at one backward time tau."""

    tau: float
    a: float
    a_prime: float
    a_second: float
    H: float
    dH_dtau: float
    ric_unit: float
    h_unit: float
    h_norm_sq: float
    gradH_radial: float = 0.0


@dataclass(frozen=True)
class SpaceTimePoint:
    """A point (rho, tau) in the polar chart times backward time."""

    rho: float
    tau: float

    def __post_init__(self):
        if self.tau < 0:
            raise FlowDomainError(f"backward time must be >= 0, got {self.tau}")


class FlowMetric:
    """A homogeneous scale flow g(tau) = a(tau)^2 g0 on a model space.

    Immutable after construction; all sampling is pure, so instances can be
    shared freely across worker threads or processes.
    """

    def __init__(self, model: ModelSpaceSpec, scale: ScaleFlowSpec, tau_domain: tuple[float, float]):
        tau_min, tau_max = float(tau_domain[0]), float(tau_domain[1])
        if not (0.0 <= tau_min < tau_max):
            raise FlowDomainError(f"tau domain must satisfy 0 <= min < max, got {tau_domain}")
        self.model = model
        self.scale = scale
        self.tau_domain = (tau_min, tau_max)
        self._spline = None
        if scale.variant == TABULATED:
            taus, avals = scale.table
            if tau_min < taus[0] - 1e-12 or tau_max > taus[-1] + 1e-12:
                raise FlowDomainError("tau domain exceeds tabulated sample range")
            self._spline = CubicSpline(np.asarray(taus), np.asarray(avals))
            self._spline_d1 = self._spline.derivative(1)
            self._spline_d2 = self._spline.derivative(2)
        self._check_positive()

    # -- scale profile ---------------------------------------------------

    def _lam(self) -> float:
        """(n-1)*kappa, the curvature coefficient of the scale ODEs."""
        return (self.model.n - 1) * self.model.kappa

    def a_squared(self, tau):
        tau = np.asarray(tau, dtype=float)
        v, a0, lam, K = self.scale.variant, self.scale.a0, self._lam(), self.scale.K
        if v == STATIC:
            return np.full_like(tau, a0 * a0)
        if v == BACKWARD_RICCI:
            return a0 * a0 + 2.0 * lam * tau
        if v == BACKWARD_K_RICCI:
            if K == 0.0:
                return a0 * a0 + 2.0 * lam * tau
            # y' = 2K y + 2 lam, y(0) = a0^2
            return a0 * a0 * np.exp(2.0 * K * tau) + lam * np.expm1(2.0 * K * tau) / K
        return self._spline(tau) ** 2

    def a(self, tau):
        return np.sqrt(self.a_squared(tau))

    def a_prime(self, tau):
        tau = np.asarray(tau, dtype=float)
        v, lam, K = self.scale.variant, self._lam(), self.scale.K
        if v == STATIC:
            return np.zeros_like(tau)
        if v == BACKWARD_RICCI:
            return lam / self.a(tau)
        if v == BACKWARD_K_RICCI:
            a = self.a(tau)
            return K * a + lam / a
        return self._spline_d1(tau)

    def a_second(self, tau):
        tau = np.asarray(tau, dtype=float)
        v, lam, K = self.scale.variant, self._lam(), self.scale.K
        if v == STATIC:
            return np.zeros_like(tau)
        if v == BACKWARD_RICCI:
            a = self.a(tau)
            return -(lam ** 2) / a ** 3
        if v == BACKWARD_K_RICCI:
            a = self.a(tau)
            ap = K * a + lam / a
            return ap * (2.0 * K - ap / a)
        return self._spline_d2(tau)

    def _check_positive(self):
        taus = np.linspace(self.tau_domain[0], self.tau_domain[1], 4097)
        if np.any(self.a_squared(taus) <= 0.0):
            raise FlowDomainError("scale profile a(tau)^2 is not positive on the tau domain")

    # -- sampling --------------------------------------------------------

    def contains_tau(self, tau) -> bool:
        t = np.asarray(tau, dtype=float)
        lo, hi = self.tau_domain
        return bool(np.all(t >= lo - 1e-12) and np.all(t <= hi + 1e-12))

    def validate_point(self, p: SpaceTimePoint):
        if not self.contains_tau(p.tau):
            raise FlowDomainError(f"tau = {p.tau} outside domain {self.tau_domain}")
        if not self.model.contains_rho(p.rho):
            raise FlowDomainError(f"rho = {p.rho} outside chart bounds")

    def h_unit(self, tau):
        return self.a_prime(tau) / self.a(tau)

    def H(self, tau):
        return self.model.n * self.h_unit(tau)

    def dH_dtau(self, tau):
        a = self.a(tau)
        return self.model.n * (self.a_second(tau) * a - self.a_prime(tau) ** 2) / a ** 2

    def ric_unit(self, tau):
        """Ricci eigenvalue Ric(v, v) on g(tau)-unit vectors."""
        return self._lam() / self.a_squared(tau)

    def scalar_curvature(self, tau):
        return self.model.n * self._lam() / self.a_squared(tau)

    def sample(self, tau: float) -> MetricSample:
        if not self.contains_tau(tau):
            raise FlowDomainError(f"tau = {tau} outside domain {self.tau_domain}")
        tau = float(tau)
        a = float(self.a(tau))
        ap = float(self.a_prime(tau))
        app = float(self.a_second(tau))
        hu = ap / a
        n = self.model.n
        return MetricSample(
            tau=tau,
            a=a,
            a_prime=ap,
            a_second=app,
            H=n * hu,
            dH_dtau=n * (app * a - ap * ap) / (a * a),
            ric_unit=self._lam() / (a * a),
            h_unit=hu,
            h_norm_sq=n * hu * hu,
        )

    def __repr__(self):
        return (f"FlowMetric(n={self.model.n}, kappa={self.model.kappa}, "
                f"scale={self.scale.variant}, tau={self.tau_domain})")

    def describe(self) -> dict:
        d = {
            "model.n": self.model.n,
            "model.kappa": self.model.kappa,
            "scale.variant": self.scale.variant,
            "scale.a0": self.scale.a0,
            "tau.min": self.tau_domain[0],
            "tau.max": self.tau_domain[1],
        }
        if self.scale.variant == BACKWARD_K_RICCI:
            d["scale.K"] = self.scale.K
        return d


def make_flow(model: ModelSpaceSpec, scale: ScaleFlowSpec, tau_domain: tuple[float, float]) -> FlowMetric:
    """Build a flow after validating domain positivity of the scale profile."""
    return FlowMetric(model, scale, tau_domain)


def metric_sample(flow: FlowMetric, tau: float) -> MetricSample:
    return flow.sample(tau)


# -- radial Laplace-Beltrami ----------------------------------------------

def laplace_beltrami_radial(flow: FlowMetric, field, tau: float, rho: float, h: float | None = None) -> float:
    """Laplacian of a radial scalar u(rho) with respect to g(tau).

    `field` is a callable of rho.  Derivatives come from Richardson-refined
    central differences; at rho = 0 the removable polar singularity is
    handled by even extension, Delta u(0) = n u''(0) / a^2, and the field is
    required to be even there.
    """
    if not flow.contains_tau(tau):
        raise FlowDomainError(f"tau = {tau} outside domain {flow.tau_domain}")
    model = flow.model
    if not model.contains_rho(rho):
        raise FlowDomainError(f"rho = {rho} outside chart bounds")
    a2 = float(flow.a_squared(tau))
    if h is None:
        h = 1e-3 * max(1.0, abs(rho))

    def d1(x, step):
        return (field(x + step) - field(x - step)) / (2.0 * step)

    def d2(x, step):
        return (field(x + step) - 2.0 * field(x) + field(x - step)) / step ** 2

    at_pole = model.n >= 2 and abs(rho) < 1e-12
    if at_pole:
        # even extension: u(-h) = u(h); reject fields with a genuine kink
        upp = 2.0 * (field(h) - field(0.0)) / h ** 2
        upp_half = 2.0 * (field(h / 2) - field(0.0)) / (h / 2) ** 2
        upp = (4.0 * upp_half - upp) / 3.0
        slope = (4.0 * field(h / 2) - 3.0 * field(0.0) - field(h)) / h
        scale = max(1.0, abs(upp) * h, abs(field(0.0)))
        if abs(slope) > 1e-6 * scale:
            raise FlowDomainError("field is not even at rho = 0")
        return model.n * upp / a2

    u1 = (4.0 * d1(rho, h / 2) - d1(rho, h)) / 3.0
    u2 = (4.0 * d2(rho, h / 2) - d2(rho, h)) / 3.0
    if model.n == 1:
        return u2 / a2
    return (u2 + (model.n - 1) * float(model.sn_ratio(rho)) * u1) / a2


def radial_laplacian_grid(flow: FlowMetric, rho: np.ndarray, values: np.ndarray, tau) -> np.ndarray:
    """Vectorized radial Laplacian of grid data values[..., i] ~ u(rho[i]).

    Uses second-order central differences inside, second-order one-sided
    stencils at the ends, and the even-extension limit at poles (rho = 0,
    and rho = pi on the sphere) when the grid touches them.
    """
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(values, dtype=float)
    hstep = rho[1] - rho[0]
    if not np.allclose(np.diff(rho), hstep, rtol=0, atol=1e-10 * abs(hstep)):
        raise FlowDomainError("radial grid must be uniform")
    from .fd import d1 as _d1, d2 as _d2

    u1 = _d1(u, hstep, axis=-1)
    u2 = _d2(u, hstep, axis=-1)
    a2 = np.asarray(flow.a_squared(tau), dtype=float)
    if a2.ndim == 1:
        a2 = a2[:, None]
    n = flow.model.n
    if n == 1:
        return u2 / a2
    ratio = np.empty_like(rho)
    interior = np.ones_like(rho, dtype=bool)
    pole0 = abs(rho[0]) < 1e-12
    pole_pi = flow.model.kappa == 1 and abs(rho[-1] - math.pi) < 1e-12
    interior[0] = not pole0
    interior[-1] = not pole_pi
    ratio[interior] = flow.model.sn_ratio(rho[interior])
    lap = np.empty_like(u)
    lap[..., interior] = (u2[..., interior] + (n - 1) * ratio[interior] * u1[..., interior])
    if pole0:
        lap[..., 0] = n * 2.0 * (u[..., 1] - u[..., 0]) / hstep ** 2
    if pole_pi:
        lap[..., -1] = n * 2.0 * (u[..., -2] - u[..., -1]) / hstep ** 2
    return lap / a2


# -- classification --------------------------------------------------------

@dataclass
class ClassificationReport:
    """Scalar-test classification of a flow over a tau grid."""

    K: float
    tau_grid: np.ndarray
    super_residual: np.ndarray       # ric_unit - h_unit
    minus_k_residual: np.ndarray     # ric_unit - h_unit + K
    H_values: np.ndarray
    c_tau: np.ndarray                # smallest admissibility constants
    is_super_ricci_flow: bool = field(init=False)
    super_is_equality: bool = field(init=False)
    is_minus_k_super: bool = field(init=False)
    minus_k_is_equality: bool = field(init=False)
    H_nonnegative: bool = field(init=False)

    _EQ_TOL = 1e-10

    def __post_init__(self):
        self.is_super_ricci_flow = bool(np.min(self.super_residual) >= -self._EQ_TOL)
        self.super_is_equality = bool(np.max(np.abs(self.super_residual)) <= self._EQ_TOL)
        self.is_minus_k_super = bool(np.min(self.minus_k_residual) >= -self._EQ_TOL)
        self.minus_k_is_equality = bool(np.max(np.abs(self.minus_k_residual)) <= self._EQ_TOL)
        self.H_nonnegative = bool(np.min(self.H_values) >= -self._EQ_TOL)

    @property
    def admissible(self) -> bool:
        return bool(np.all(np.isfinite(self.c_tau)))

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "super_ricci_flow": self.is_super_ricci_flow,
            "super_equality": self.super_is_equality,
            "minus_k_super": self.is_minus_k_super,
            "minus_k_equality": self.minus_k_is_equality,
            "H_nonnegative": self.H_nonnegative,
            "admissible": self.admissible,
            "min_super_residual": float(np.min(self.super_residual)),
            "min_minus_k_residual": float(np.min(self.minus_k_residual)),
            "min_H": float(np.min(self.H_values)),
            "max_c_tau": float(np.max(self.c_tau)),
        }


def classify_flow(flow: FlowMetric, K: float = 0.0, tau_grid: np.ndarray | None = None) -> ClassificationReport:
    """Scalar-test report: super / (-K)-super flow inequalities, H >= 0, c_tau."""
    if tau_grid is None:
        tau_grid = np.linspace(flow.tau_domain[0], flow.tau_domain[1], 257)
    tau_grid = np.asarray(tau_grid, dtype=float)
    hu = flow.h_unit(tau_grid)
    ric = flow.ric_unit(tau_grid)
    res = ric - hu
    c_tau = np.maximum.accumulate(np.maximum(0.0, -hu))
    return ClassificationReport(
        K=float(K),
        tau_grid=tau_grid,
        super_residual=res,
        minus_k_residual=res + float(K),
        H_values=flow.model.n * hu,
        c_tau=c_tau,
    )


# -- configuration ingestion ------------------------------------------------

def parse_keyvalue(path) -> dict:
    """Parse a flat `key = value` document with # comments."""
    out: dict = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FlowDomainError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        for conv in (int, float):
            try:
                out[key] = conv(value)
                break
            except ValueError:
                continue
        else:
            out[key] = value
    return out


def load_profile_csv(path) -> tuple[list[float], list[float]]:
    """Read a two-column (tau, a) CSV profile; a header row is optional."""
    taus, avals = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                t, a = float(row[0]), float(row[1])
            except ValueError:
                continue  # header
            taus.append(t)
            avals.append(a)
    if len(taus) < 4:
        raise FlowDomainError(f"profile {path} has fewer than 4 usable rows")
    return taus, avals


def flow_from_config(cfg, base_dir: Path | None = None) -> FlowMetric:
    """Build a FlowMetric from a key-value document or an already parsed dict.

    Recognized keys: model.n, model.kappa, scale.variant, scale.a0, scale.K,
    scale.table (CSV path for tabulated profiles), tau.min, tau.max.
    """
    if not isinstance(cfg, dict):
        base_dir = Path(cfg).parent
        cfg = parse_keyvalue(cfg)
    try:
        model = ModelSpaceSpec(n=int(cfg["model.n"]), kappa=int(cfg["model.kappa"]))
        variant = str(cfg["scale.variant"])
        tau_domain = (float(cfg["tau.min"]), float(cfg["tau.max"]))
    except KeyError as exc:
        raise FlowDomainError(f"missing config key {exc}") from exc
    a0 = float(cfg.get("scale.a0", 1.0))
    if variant == STATIC:
        scale = ScaleFlowSpec.static(a0)
    elif variant == BACKWARD_RICCI:
        scale = ScaleFlowSpec.backward_ricci(a0)
    elif variant == BACKWARD_K_RICCI:
        scale = ScaleFlowSpec.backward_k_ricci(float(cfg.get("scale.K", 0.0)), a0)
    elif variant == TABULATED:
        table_path = Path(cfg["scale.table"])
        if base_dir is not None and not table_path.is_absolute():
            table_path = base_dir / table_path
        scale = ScaleFlowSpec.tabulated(*load_profile_csv(table_path))
    else:
        raise FlowDomainError(f"unknown scale.variant {variant!r}")
    return make_flow(model, scale, tau_domain)
