"""Length functional, minimal geodesics and reduced-distance fields.

The functional over space-time curves gamma(tau) from the base point is

    int_0^taubar sqrt(tau) * (H(tau) + a(tau)^2 rho'(tau)^2) dtau

for radial curves; radial competitors dominate on homogeneous flows, so the
minimization is one-dimensional.  Everything is computed in the regular
parameter s = sqrt(tau), which removes the 1/(2 tau) drift of the geodesic
ODE: the radial equation becomes rho_ss + 4 s (a'/a) rho_s = 0 and the
quantity c = sqrt(tau) a^2 rho' = a^2 rho_s / 2 is a first integral, which
doubles as an integration-quality certificate.

Three mutually checking solvers are provided: a first-integral quadrature
solve (primary), ODE shooting over the initial parameter v_inf =
lim sqrt(tau) rho' (generic), and a discrete variational descent
(independent oracle).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .model_flows import FlowDomainError, FlowMetric, SpaceTimePoint

DRIFT_TOL = 1e-6
_QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-12, limit=200)


class LGeodesicError(RuntimeError):
    """Raised when a geodesic solve or length evaluation cannot proceed."""


# -- quadratures in s = sqrt(tau) -------------------------------------------

def _segment_quad(fun, s_lo: float, s_hi: float) -> float:
    if s_hi <= s_lo:
        return 0.0
    val, _ = quad(fun, s_lo, s_hi, **_QUAD_OPTS)
    return val


def inverse_scale_integral(flow: FlowMetric, tau_bar: float) -> float:
    """I(taubar) = int_0^taubar dtau / (sqrt(tau) a^2) = 2 int_0^s ds / a^2."""
    return _segment_quad(lambda s: 2.0 / flow.a_squared(s * s), 0.0, np.sqrt(tau_bar))


def trace_h_integral(flow: FlowMetric, tau_bar: float) -> float:
    """J_H(taubar) = int_0^taubar sqrt(tau) H dtau."""
    return _segment_quad(lambda s: 2.0 * s * s * flow.H(s * s), 0.0, np.sqrt(tau_bar))


def cumulative_row_integrals(flow: FlowMetric, tau_grid: np.ndarray) -> dict[str, np.ndarray]:
    """Cumulative quadratures shared by every node of a tau row.

    Besides I and J_H this also carries the pieces of the path integrals of
    the trace Harnack and curvature quantities along minimal geodesics: each
    splits as P + c^2 Q with c the first integral, because the tangent norm
    along a minimal geodesic is |X|^2 = c^2 / (tau a^2).
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    if np.any(tau_grid <= 0) or np.any(np.diff(tau_grid) <= 0):
        raise LGeodesicError("tau grid must be positive and strictly increasing")
    s_knots = np.concatenate(([0.0], np.sqrt(tau_grid)))

    def h_u(s):
        return flow.h_unit(s * s)

    integrands = {
        "I": lambda s: 2.0 / flow.a_squared(s * s),
        "JH": lambda s: 2.0 * s * s * flow.H(s * s),
        # trace Harnack quantity along the curve: -dH/dtau - H/tau + 2 h(X, X)
        "PH": lambda s: -2.0 * s ** 4 * flow.dH_dtau(s * s) - 2.0 * s * s * flow.H(s * s),
        "QH": lambda s: 4.0 * s * s * h_u(s) / flow.a_squared(s * s),
        # curvature quantity, c-independent part: -dH/dtau - 2|h|^2
        "PD": lambda s: 2.0 * s ** 4 * (-flow.dH_dtau(s * s) - 2.0 * flow.model.n * h_u(s) ** 2),
        # (Ric - h)(X, X) part, coefficient of 2 c^2
        "QD": lambda s: 4.0 * s * s * (flow.ric_unit(s * s) - h_u(s)) / flow.a_squared(s * s),
    }
    out = {}
    for name, fun in integrands.items():
        pieces = [_segment_quad(fun, s_knots[i], s_knots[i + 1]) for i in range(len(tau_grid))]
        out[name] = np.cumsum(pieces)
    return out


# -- curves and geodesics ----------------------------------------------------

@dataclass(frozen=True)
class SampledCurve:
    """A radial curve rho(tau) on tau knots in (0, taubar], anchored at the base.

    order = 1 interpolates linearly in s = sqrt(tau), order = 3 with a cubic
    spline in s.  The curve always starts at the base point in the limit
    tau -> 0+.
    """

    taus: np.ndarray
    rhos: np.ndarray
    order: int = 3

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        rhos = np.asarray(self.rhos, dtype=float)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "rhos", rhos)
        if taus.ndim != 1 or taus.shape != rhos.shape:
            raise LGeodesicError("knot arrays must be matching 1-d arrays")
        if len(taus) < 16:
            raise LGeodesicError("need at least 16 knots")
        if taus[0] <= 0 or np.any(np.diff(taus) <= 0):
            raise LGeodesicError("tau knots must be positive and strictly increasing")
        if self.order not in (1, 3):
            raise LGeodesicError("interpolation order must be 1 or 3")

    @property
    def tau_bar(self) -> float:
        return float(self.taus[-1])

    def s_knots(self) -> np.ndarray:
        return np.concatenate(([0.0], np.sqrt(self.taus)))

    def rho_knots(self) -> np.ndarray:
        return np.concatenate(([0.0], self.rhos))

    def interpolant(self):
        s, r = self.s_knots(), self.rho_knots()
        if self.order == 1:
            return lambda x: np.interp(x, s, r)
        return CubicSpline(s, r)


@dataclass(frozen=True)
class LGeodesic:
    """A solved curve with tangent data and certified length."""

    curve: SampledCurve
    tangents: np.ndarray          # X(tau) = rho'(tau) at the knots
    l_length: float
    v_inf: float                  # lim sqrt(tau) X
    first_integral: float         # c = sqrt(tau) a^2 X
    drift: float                  # relative variation of c along the curve
    flow: FlowMetric

    @property
    def is_certified(self) -> bool:
        return self.drift <= DRIFT_TOL


def _measure_first_integral(flow: FlowMetric, taus: np.ndarray, tangents: np.ndarray) -> tuple[float, float]:
    c_vals = np.sqrt(taus) * flow.a_squared(taus) * tangents
    c_ref = float(np.median(c_vals))
    scale = max(abs(c_ref), 1e-30)
    drift = float(np.max(np.abs(c_vals - c_ref)) / scale)
    return c_ref, drift


def _check_chart(flow: FlowMetric, rhos: np.ndarray):
    if not flow.model.contains_rho(rhos):
        raise LGeodesicError("curve exits the coordinate chart")


def l_length(flow: FlowMetric, curve: SampledCurve) -> float:
    """Length of the curve by adaptive quadrature in s; abs tolerance 1e-9."""
    if not flow.contains_tau(curve.tau_bar):
        raise FlowDomainError(f"curve end {curve.tau_bar} outside flow domain")
    _check_chart(flow, curve.rhos)
    s = curve.s_knots()
    interp = curve.interpolant()
    if curve.order == 1:
        r = curve.rho_knots()
        slopes = np.diff(r) / np.diff(s)

        def make_integrand(slope):
            return lambda x: 2.0 * x * x * flow.H(x * x) + 0.5 * flow.a_squared(x * x) * slope ** 2

        return float(sum(
            _segment_quad(make_integrand(slopes[i]), s[i], s[i + 1])
            for i in range(len(slopes))
        ))
    deriv = interp.derivative()

    def integrand(x):
        return 2.0 * x * x * flow.H(x * x) + 0.5 * flow.a_squared(x * x) * deriv(x) ** 2

    return float(sum(_segment_quad(integrand, s[i], s[i + 1]) for i in range(len(s) - 1)))


def integrate_l_geodesic(flow: FlowMetric, v_inf: float, tau_bar: float,
                         n_knots: int = 64, rtol: float = 1e-10) -> LGeodesic:
    """Integrate the radial geodesic ODE from the base point, in s = sqrt(tau).

    Initial data is the shooting parameter v_inf = lim sqrt(tau) rho', i.e.
    rho_s(0) = 2 v_inf.  The state is augmented with the running length so
    the returned value is a quadrature along the actual trajectory.
    """
    if tau_bar <= 0:
        raise LGeodesicError("tau_bar must be positive")
    if not flow.contains_tau(tau_bar):
        raise FlowDomainError(f"tau_bar = {tau_bar} outside flow domain")
    s_end = float(np.sqrt(tau_bar))

    def rhs(s, y):
        tau = s * s
        hu = float(flow.h_unit(tau))
        a2 = float(flow.a_squared(tau))
        return [y[1], -4.0 * s * hu * y[1], 2.0 * tau * flow.H(tau) + 0.5 * a2 * y[1] ** 2]

    events = []
    rho_cap = flow.model.rho_max
    if np.isfinite(rho_cap):
        def exit_event(s, y):
            return y[0] - rho_cap
        exit_event.terminal = True
        events.append(exit_event)

    sol = solve_ivp(rhs, (0.0, s_end), [0.0, 2.0 * v_inf, 0.0], method="RK45",
                    rtol=rtol, atol=1e-12, dense_output=True, events=events or None)
    if not sol.success:
        raise LGeodesicError(f"geodesic ODE integration failed: {sol.message}")
    if events and sol.t_events[0].size:
        raise LGeodesicError("curve exits chart before tau_bar")

    s_knots = np.linspace(0.0, s_end, n_knots + 1)[1:]
    states = sol.sol(s_knots)
    taus = s_knots ** 2
    rhos = states[0]
    _check_chart(flow, rhos)
    tangents = states[1] / (2.0 * s_knots)
    c_ref, drift = _measure_first_integral(flow, taus, tangents)
    curve = SampledCurve(taus=taus, rhos=rhos, order=3)
    return LGeodesic(curve=curve, tangents=tangents, l_length=float(sol.sol(s_end)[2]),
                     v_inf=float(v_inf), first_integral=c_ref, drift=drift, flow=flow)


def _geodesic_from_first_integral(flow: FlowMetric, c: float, tau_bar: float,
                                  n_knots: int = 64, row: dict | None = None) -> LGeodesic:
    s_end = float(np.sqrt(tau_bar))
    s_knots = np.linspace(0.0, s_end, n_knots + 1)[1:]
    # rho(s) = 2 c int_0^s ds' / a^2, by the conserved quantity
    pieces = [_segment_quad(lambda x: 2.0 / flow.a_squared(x * x), lo, hi)
              for lo, hi in zip(np.concatenate(([0.0], s_knots[:-1])), s_knots)]
    rhos = c * np.cumsum(pieces)
    _check_chart(flow, rhos)
    taus = s_knots ** 2
    tangents = c / (np.sqrt(taus) * flow.a_squared(taus))
    if row is None:
        big_i = inverse_scale_integral(flow, tau_bar)
        jh = trace_h_integral(flow, tau_bar)
    else:
        big_i, jh = row["I"], row["JH"]
    length = jh + c * c * big_i
    c_ref, drift = _measure_first_integral(flow, taus, tangents)
    curve = SampledCurve(taus=taus, rhos=rhos, order=3)
    a0 = float(flow.a(0.0)) if flow.contains_tau(0.0) else float(flow.a(flow.tau_domain[0]))
    return LGeodesic(curve=curve, tangents=tangents, l_length=float(length),
                     v_inf=c / a0 ** 2, first_integral=c_ref, drift=drift, flow=flow)


def solve_minimal_l_geodesic(flow: FlowMetric, target: SpaceTimePoint,
                             method: str = "first_integral", n_knots: int = 64) -> LGeodesic:
    """Minimal geodesic from the base point to target = (rho, tau).

    first_integral: root solve of c * I(taubar) = rho over the conserved
    quantity (bracketing + Brent to 1e-10), then closed reconstruction.
    shooting: damped bracketing root solve over v_inf with the ODE
    integrator; generic but slower.
    """
    if target.tau <= 0:
        raise LGeodesicError("target must have tau > 0")
    flow.validate_point(target)
    rho_bar, tau_bar = float(target.rho), float(target.tau)

    if method == "first_integral":
        big_i = inverse_scale_integral(flow, tau_bar)

        if rho_bar == 0.0:
            return _geodesic_from_first_integral(flow, 0.0, tau_bar, n_knots)
        sign = 1.0 if rho_bar > 0 else -1.0
        cap = flow.model.rho_max
        c_hi = (min(cap, abs(rho_bar) * 2.0 + 1.0) / big_i) * (1.0 + 1e-9)
        f = lambda c: c * big_i - abs(rho_bar)
        if f(c_hi) < 0.0:
            raise LGeodesicError("no bracketing root within the chart")
        c = brentq(f, 0.0, c_hi, xtol=1e-14, rtol=8.9e-16)
        geo = _geodesic_from_first_integral(flow, sign * c, tau_bar, n_knots)
    elif method == "shooting":
        geo = _solve_by_shooting(flow, rho_bar, tau_bar, n_knots)
    else:
        raise ValueError(f"unknown method {method!r}")

    if abs(geo.curve.rhos[-1] - rho_bar) > 1e-8:
        raise LGeodesicError("boundary condition not met to 1e-8")
    return geo


def _solve_by_shooting(flow: FlowMetric, rho_bar: float, tau_bar: float, n_knots: int) -> LGeodesic:
    sign = 1.0 if rho_bar >= 0 else -1.0
    target = abs(rho_bar)
    cap = flow.model.rho_max

    def endpoint(v):
        try:
            return integrate_l_geodesic(flow, v, tau_bar, n_knots=n_knots).curve.rhos[-1]
        except LGeodesicError:
            return cap  # exited the chart: endpoint saturates beyond any target

    if target == 0.0:
        return integrate_l_geodesic(flow, 0.0, tau_bar, n_knots=n_knots)
    v_hi = max(target, 1.0)
    for _ in range(60):
        if endpoint(v_hi) >= target:
            break
        v_hi *= 2.0
    else:
        raise LGeodesicError("no bracketing root within the chart")
    v = brentq(lambda x: endpoint(x) - target, 0.0, v_hi, xtol=1e-13, rtol=8.9e-16)
    geo = integrate_l_geodesic(flow, sign * v, tau_bar, n_knots=n_knots)
    return geo


# -- independent variational oracle ------------------------------------------

def _segment_weights(flow: FlowMetric, s_knots: np.ndarray) -> np.ndarray:
    """w_i = int_seg a^2 ds / (2 ds_i^2); the discrete energy is sum w_i drho_i^2."""
    ds = np.diff(s_knots)
    ints = np.array([_segment_quad(lambda x: flow.a_squared(x * x), s_knots[i], s_knots[i + 1])
                     for i in range(len(ds))])
    return ints / (2.0 * ds ** 2)


def discrete_l_length(flow: FlowMetric, curve: SampledCurve) -> float:
    """Length of the piecewise-linear-in-s interpolant through the knots."""
    s = curve.s_knots()
    w = _segment_weights(flow, s)
    energy = float(np.sum(w * np.diff(curve.rho_knots()) ** 2))
    return trace_h_integral(flow, curve.tau_bar) + energy


def variational_refine(flow: FlowMetric, curve: SampledCurve, iters: int = 2000,
                       grad_tol: float = 1e-13) -> LGeodesic:
    """Minimize the discretized length over interior knots, endpoints fixed.

    Conjugate-gradient descent with exact line search on the (convex
    quadratic) discrete energy; each step strictly decreases the functional,
    so the returned discrete length never exceeds the input's.
    """
    _check_chart(flow, curve.rhos)
    s = curve.s_knots()
    w = _segment_weights(flow, s)
    rho = curve.rho_knots().copy()
    jh = trace_h_integral(flow, curve.tau_bar)

    def energy(r):
        return float(np.sum(w * np.diff(r) ** 2))

    def gradient(r):
        d = np.diff(r)
        g = np.zeros_like(r)
        g[1:-1] = 2.0 * (w[:-1] * d[:-1] - w[1:] * d[1:])
        return g

    e0 = energy(rho)
    g = gradient(rho)
    direction = -g
    for _ in range(iters):
        gnorm = float(np.max(np.abs(g[1:-1]))) if len(rho) > 2 else 0.0
        if gnorm <= grad_tol * max(1.0, e0):
            break
        dd = np.diff(direction)
        quad_term = float(np.sum(w * dd ** 2))
        if quad_term <= 0.0:
            break
        alpha = -0.5 * float(np.dot(g[1:-1], direction[1:-1])) / quad_term
        new_rho = rho + alpha * direction
        if energy(new_rho) > energy(rho) + 1e-15 * max(1.0, e0):
            raise LGeodesicError("iteration budget exhausted without descent")
        rho = new_rho
        g_new = gradient(rho)
        beta = max(0.0, float(np.dot(g_new[1:-1], g_new[1:-1] - g[1:-1])) /
                   max(float(np.dot(g[1:-1], g[1:-1])), 1e-300))
        direction = -g_new + beta * direction
        g = g_new
    _check_chart(flow, rho[1:])
    refined = SampledCurve(taus=curve.taus, rhos=rho[1:], order=1)
    slopes = np.diff(rho) / np.diff(s)
    # per-segment conserved quantity (mean a^2) * rho_s / 2 = w_i * drho_i
    c_segments = w * np.diff(rho)
    c_ref = float(np.median(c_segments))
    drift = float(np.max(np.abs(c_segments - c_ref)) / max(abs(c_ref), 1e-30))
    # knot tangents X = rho_s / (2 s) from adjacent segment slopes
    mid = 0.5 * (slopes[:-1] + slopes[1:])
    knot_slopes = np.concatenate((mid, [slopes[-1]]))
    tangents = knot_slopes / (2.0 * np.sqrt(refined.taus))
    a0 = float(flow.a(0.0)) if flow.contains_tau(0.0) else float(flow.a(flow.tau_domain[0]))
    return LGeodesic(curve=refined, tangents=tangents,
                     l_length=jh + energy(rho), v_inf=c_ref / a0 ** 2,
                     first_integral=c_ref, drift=drift, flow=flow)


# -- reduced field ------------------------------------------------------------

@dataclass
class ReducedField:
    """Grid of length/reduced-distance values over (rho, tau).

    Arrays are indexed [tau, rho].  `c` holds the first integral of the
    minimal geodesic to each node, which later feeds the path integrals of
    the verification module.  dfrak^2 = Lbar = 4 tau ell holds by
    construction.
    """

    rho: np.ndarray
    tau: np.ndarray
    L: np.ndarray
    ell: np.ndarray
    Lbar: np.ndarray
    dfrak: np.ndarray
    smooth: np.ndarray
    c: np.ndarray
    flow: FlowMetric
    failures: list = field(default_factory=list)

    def node(self, j: int, i: int) -> dict:
        return {
            "rho": float(self.rho[i]), "tau": float(self.tau[j]),
            "L": float(self.L[j, i]), "ell": float(self.ell[j, i]),
            "Lbar": float(self.Lbar[j, i]), "dfrak": float(self.dfrak[j, i]),
            "smooth": bool(self.smooth[j, i]),
        }


def reduced_field(flow: FlowMetric, rho_grid, tau_grid, scan_points: int = 17,
                  seed: int | None = None) -> ReducedField:
    """Solve the minimal-geodesic problem at every grid node.

    On these homogeneous flows the shooting map c -> rho(taubar) = c I(taubar)
    is evaluated in closed quadrature, so nodes of one tau row share their
    integrals.  A bracket scan over the admissible range of the first
    integral (jittered when a seed is supplied) looks for multiple solutions
    matching in length within 1e-6; any such node gets smooth = False and is
    excluded from derivative checks downstream.
    """
    rho_grid = np.asarray(rho_grid, dtype=float)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if np.any(np.diff(rho_grid) <= 0) or np.any(np.diff(tau_grid) <= 0):
        raise LGeodesicError("grids must be strictly increasing")
    if not flow.model.contains_rho(rho_grid):
        raise LGeodesicError("rho grid exceeds chart bounds")
    if np.any(tau_grid <= 0) or not flow.contains_tau(tau_grid):
        raise LGeodesicError("tau grid must be positive and inside the flow domain")

    rows = cumulative_row_integrals(flow, tau_grid)
    big_i, jh = rows["I"], rows["JH"]
    n_tau, n_rho = len(tau_grid), len(rho_grid)

    c = rho_grid[None, :] / big_i[:, None]
    L = jh[:, None] + c * c * big_i[:, None]
    ell = L / (2.0 * np.sqrt(tau_grid)[:, None])
    Lbar = 4.0 * tau_grid[:, None] * ell
    dfrak = np.sqrt(np.maximum(Lbar, 0.0))
    smooth = np.ones((n_tau, n_rho), dtype=bool)
    failures: list = []

    if scan_points >= 3:
        rng = np.random.default_rng(seed)
        cap = flow.model.rho_max
        for j in range(n_tau):
            lo = rho_grid[0] if flow.model.n == 1 else 0.0
            hi = min(cap, max(abs(rho_grid[-1]), abs(lo)) * 2.0 + 1.0)
            c_scan = np.linspace(-hi if flow.model.n == 1 else 0.0, hi, scan_points) / big_i[j]
            if seed is not None and len(c_scan) > 2:
                jitter = rng.uniform(-0.25, 0.25, size=len(c_scan) - 2)
                c_scan[1:-1] += jitter * np.diff(c_scan).min()
                c_scan = np.sort(c_scan)
            endpoints = c_scan * big_i[j]
            for i in range(n_rho):
                sign_changes = np.nonzero(np.diff(np.sign(endpoints - rho_grid[i])))[0]
                if len(sign_changes) > 1:
                    roots = [brentq(lambda x: x * big_i[j] - rho_grid[i],
                                    c_scan[k], c_scan[k + 1]) for k in sign_changes]
                    lengths = [jh[j] + r * r * big_i[j] for r in roots]
                    distinct = np.ptp(roots) > 1e-9 * max(1.0, abs(roots[0]))
                    if distinct and np.ptp(lengths) < 1e-6:
                        smooth[j, i] = False
    return ReducedField(rho=rho_grid, tau=tau_grid, L=L, ell=ell, Lbar=Lbar,
                        dfrak=dfrak, smooth=smooth, c=c, flow=flow, failures=failures)


def reduced_field_to_csv(fieldobj: ReducedField, path) -> None:
    with open(path, "w") as fh:
        fh.write("rho,tau,L,ell,Lbar,dfrak,smooth\n")
        for j, tau in enumerate(fieldobj.tau):
            for i, rho in enumerate(fieldobj.rho):
                fh.write(f"{rho!r},{tau!r},{fieldobj.L[j, i]!r},{fieldobj.ell[j, i]!r},"
                         f"{fieldobj.Lbar[j, i]!r},{fieldobj.dfrak[j, i]!r},"
                         f"{int(fieldobj.smooth[j, i])}\n")


def reduced_field_report(fieldobj: ReducedField) -> dict:
    return {
        "schema": "redgeo.reduced_field/1",
        "flow": fieldobj.flow.describe(),
        "grid": {
            "rho_min": float(fieldobj.rho[0]), "rho_max": float(fieldobj.rho[-1]),
            "rho_nodes": int(len(fieldobj.rho)),
            "tau_min": float(fieldobj.tau[0]), "tau_max": float(fieldobj.tau[-1]),
            "tau_nodes": int(len(fieldobj.tau)),
        },
        "ell_min": float(np.min(fieldobj.ell)),
        "ell_max": float(np.max(fieldobj.ell)),
        "nonsmooth_nodes": int(np.sum(~fieldobj.smooth)),
        "failures": list(fieldobj.failures),
    }


def reduced_field_to_json(fieldobj: ReducedField, path) -> None:
    with open(path, "w") as fh:
        json.dump(reduced_field_report(fieldobj), fh, indent=2, sort_keys=True)
        fh.write("\n")
