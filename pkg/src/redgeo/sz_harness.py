"""Localized gradient-estimate harness and Liouville classification.

The space-time cut-off is a product psi(r, tau) = eta(r) chi(tau) of C-inf
mollifier transitions (built from exp(-1/s)); its derivative-to-power
quotients are certified on a dense grid and the smallest validated constants
feed the explicit closed-form constants of the estimate

    |grad u| / u <= C_n (1/R + 1/sqrt(T) + sqrt(K)) (1 + log(A/u))

on the region Q_{R/2, T/4}, where regions Q are balls of the reduced-distance
radius dfrak = sqrt(4 tau ell), never of the Riemannian distance.  The
Liouville sweep applies the estimate on nested regions Q_{R, R^2} and
classifies solutions by the decay of the resulting gradient bounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import fd
from .backward_heat import HeatSolution
from .lgeodesic import (ReducedField, inverse_scale_integral, reduced_field,
                        trace_h_integral)
from .model_flows import FlowMetric, SpaceTimePoint, classify_flow
from .quantities import _scan_hypotheses

PSI_FLOOR = 1e-300


# -- mollifier smoothstep -----------------------------------------------------

def _bump_parts(x: np.ndarray):
    """p = exp(-1/x), q = exp(-1/(1-x)) and derivative building blocks."""
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xs = np.where(inside, x, 0.5)
    y = 1.0 - xs
    with np.errstate(over="ignore", under="ignore"):
        p = np.exp(-1.0 / xs)
        q = np.exp(-1.0 / y)
    return inside, xs, y, p, q


def smoothstep(x):
    inside, xs, y, p, q = _bump_parts(x)
    val = p / (p + q)
    return np.where(inside, val, np.where(np.asarray(x) <= 0.0, 0.0, 1.0))


def smoothstep_d1(x):
    inside, xs, y, p, q = _bump_parts(x)
    m = 1.0 / xs ** 2 + 1.0 / y ** 2
    val = p * q * m / (p + q) ** 2
    return np.where(inside, val, 0.0)


def smoothstep_d2(x):
    inside, xs, y, p, q = _bump_parts(x)
    m = 1.0 / xs ** 2 + 1.0 / y ** 2
    m_prime = -2.0 / xs ** 3 + 2.0 / y ** 3
    w = p + q
    n_val = p * q * m
    n_prime = p * q * (1.0 / xs ** 2 - 1.0 / y ** 2) * m + p * q * m_prime
    w_prime = p / xs ** 2 - q / y ** 2
    val = (n_prime * w - 2.0 * n_val * w_prime) / w ** 3
    return np.where(inside, val, 0.0)


# -- cut-off -------------------------------------------------------------------

@dataclass
class Cutoff:
    """Product cut-off with certified derivative-quotient constants.

    psi == 1 on [0, R/2] x [0, T/4], psi == 0 once r >= R or tau >= T/2,
    d/dr psi <= 0 everywhere and vanishes for r <= R/2.  The constants are
    the largest grid values of |d_r psi| R / psi^alpha, |d_rr psi| R^2 /
    psi^alpha and |d_tau psi| T / psi^{1/2}; the transition profiles are
    functions of r/R and tau/T, so the constants carry no R or T dependence.
    """

    R: float
    T: float
    alpha: float
    C_alpha_emp: float
    C_emp: float
    grid_n: int

    def _u(self, r):
        return (self.R - np.asarray(r, dtype=float)) / (self.R / 2.0)

    def _v(self, tau):
        return (self.T / 2.0 - np.asarray(tau, dtype=float)) / (self.T / 4.0)

    def eta(self, r):
        return smoothstep(self._u(r))

    def chi(self, tau):
        return smoothstep(self._v(tau))

    def psi(self, r, tau):
        return self.eta(r) * self.chi(tau)

    def dpsi_dr(self, r, tau):
        return -(2.0 / self.R) * smoothstep_d1(self._u(r)) * self.chi(tau)

    def d2psi_dr2(self, r, tau):
        return (4.0 / self.R ** 2) * smoothstep_d2(self._u(r)) * self.chi(tau)

    def dpsi_dtau(self, r, tau):
        return -(4.0 / self.T) * self.eta(r) * smoothstep_d1(self._v(tau))


class CutoffCertificationError(RuntimeError):
    pass


def build_cutoff(R: float, T: float, alpha: float = 0.75, grid_n: int = 2048) -> Cutoff:
    """Construct the cut-off and certify its three quotient bounds on a grid.

    The grid covers the full support [0, R] x [0, T/2]; nodes with psi below
    the floor 1e-300 are excluded (there the quotients tend to zero anyway).
    Non-finite quotients indicate a profile bug and abort certification.
    """
    if R <= 0 or T <= 0:
        raise ValueError("R and T must be positive")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    cut = Cutoff(R=float(R), T=float(T), alpha=float(alpha),
                 C_alpha_emp=math.nan, C_emp=math.nan, grid_n=int(grid_n))
    r = np.linspace(0.0, R, grid_n)
    taus = np.linspace(0.0, T / 2.0, grid_n)
    c_alpha = 0.0
    c_time = 0.0
    block = max(1, (1 << 22) // grid_n)
    for start in range(0, grid_n, block):
        tt = taus[start:start + block][:, None]
        psi = cut.psi(r[None, :], tt)
        mask = psi > PSI_FLOOR
        if not np.any(mask):
            continue
        pa = np.where(mask, psi, 1.0) ** alpha
        ph = np.where(mask, psi, 1.0) ** 0.5
        q1 = np.abs(cut.dpsi_dr(r[None, :], tt)) * R / pa
        q2 = np.abs(cut.d2psi_dr2(r[None, :], tt)) * R ** 2 / pa
        q3 = np.abs(cut.dpsi_dtau(r[None, :], tt)) * T / ph
        for q in (q1, q2, q3):
            if not np.all(np.isfinite(q[mask])):
                raise CutoffCertificationError("quotient blow-up at support edge")
        c_alpha = max(c_alpha, float(np.max(q1[mask])), float(np.max(q2[mask])))
        c_time = max(c_time, float(np.max(q3[mask])))
    cut.C_alpha_emp = c_alpha
    cut.C_emp = c_time
    return cut


def verify_cutoff_bounds(cut: Cutoff, grid_n: int = 2048, headroom: float = 1.0) -> dict:
    """Re-check the three quotient bounds with the stored constants.

    On the certification grid the worst ratios are exactly 1 by construction;
    an offset or refined grid may need a small headroom because the stored
    constants are grid maxima of a continuous profile.
    """
    r = np.linspace(0.0, cut.R, grid_n)
    taus = np.linspace(0.0, cut.T / 2.0, grid_n)
    worst = {"dr": 0.0, "drr": 0.0, "dtau": 0.0}
    block = max(1, (1 << 22) // grid_n)
    for start in range(0, grid_n, block):
        tt = taus[start:start + block][:, None]
        psi = cut.psi(r[None, :], tt)
        mask = psi > PSI_FLOOR
        if not np.any(mask):
            continue
        pa = np.where(mask, psi, 1.0) ** cut.alpha
        ph = np.where(mask, psi, 1.0) ** 0.5
        q1 = np.abs(cut.dpsi_dr(r[None, :], tt)) * cut.R / pa
        q2 = np.abs(cut.d2psi_dr2(r[None, :], tt)) * cut.R ** 2 / pa
        q3 = np.abs(cut.dpsi_dtau(r[None, :], tt)) * cut.T / ph
        worst["dr"] = max(worst["dr"], float(np.max(q1[mask])) / cut.C_alpha_emp)
        worst["drr"] = max(worst["drr"], float(np.max(q2[mask])) / cut.C_alpha_emp)
        worst["dtau"] = max(worst["dtau"], float(np.max(q3[mask])) / cut.C_emp)
    worst["pass"] = all(v <= headroom for k, v in worst.items() if k != "pass")
    return worst


# -- explicit constants ----------------------------------------------------------

@dataclass
class EstimateConstants:
    """Closed-form constants of the estimate, kept in exact rationals."""

    n: int
    C34: Fraction
    C: Fraction
    Cbar_n: Fraction
    Ct1: Fraction
    Ct2: Fraction
    c_n: Fraction
    C_n: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "C_3_4": float(self.C34),
            "C": float(self.C),
            "Cbar_n": float(self.Cbar_n),
            "Ct1": float(self.Ct1),
            "Ct2": float(self.Ct2),
            "c_n": float(self.c_n),
            "C_n": self.C_n,
        }


def estimate_constants(n: int, cutoff: Cutoff) -> EstimateConstants:
    """Evaluate the explicit constants in exact rational arithmetic.

    Cbar_n = 24 C34^2 (n^2 + 9/4 + (657/64) C34^2), Ct1 = 6 C^2,
    Ct2 = 24 (1 + C34^2/4); the final constant is max(...)^(1/4).
    """
    c34 = Fraction(cutoff.C_alpha_emp)
    c = Fraction(cutoff.C_emp)
    cbar = 24 * c34 ** 2 * (Fraction(n) ** 2 + Fraction(9, 4) + Fraction(657, 64) * c34 ** 2)
    ct1 = 6 * c ** 2
    ct2 = 24 * (1 + c34 ** 2 / 4)
    c_n = max(cbar, ct1, ct2)
    return EstimateConstants(n=int(n), C34=c34, C=c, Cbar_n=cbar, Ct1=ct1, Ct2=ct2,
                             c_n=c_n, C_n=float(c_n) ** 0.25)


def rhs_factor(R: float, T: float, K: float) -> float:
    return 1.0 / R + 1.0 / math.sqrt(T) + math.sqrt(K)


# -- gradient-estimate check -------------------------------------------------------

@dataclass
class EstimateReport:
    status: str                   # "checked" | "inapplicable"
    reason: str
    R: float
    T: float
    K: float
    A: float
    constants: EstimateConstants | None
    nodes: list
    worst_ratio: float
    worst_node: tuple | None
    margin: float
    region: str = "Q balls of the reduced-distance radius dfrak(x, tau)"

    @property
    def passed(self) -> bool:
        return self.status != "checked" or self.worst_ratio <= 1.0 + 1e-6

    def to_dict(self) -> dict:
        return {
            "schema": "redgeo.estimate_report/1",
            "status": self.status,
            "reason": self.reason,
            "R": self.R, "T": self.T, "K": self.K, "A": self.A,
            "constants": self.constants.to_dict() if self.constants else None,
            "region": self.region,
            "worst_ratio": self.worst_ratio,
            "worst_node": list(self.worst_node) if self.worst_node else None,
            "margin": self.margin,
            "n_nodes": len(self.nodes),
            "pass": self.passed,
        }


def _gradient_norm_over_u(sol: HeatSolution) -> np.ndarray:
    h_r = float(sol.rho[1] - sol.rho[0])
    u_r = fd.d1(sol.values, h_r, axis=1)
    a = np.sqrt(sol.flow.a_squared(sol.tau))[:, None]
    return np.abs(u_r) / (a * sol.values)


def gradient_estimate_check(flow: FlowMetric, sol: HeatSolution, fieldobj: ReducedField,
                            R: float, T: float, K: float, A: float,
                            constants: EstimateConstants | None = None,
                            v_mags: tuple = (0.0, 0.5, 1.0, 2.0)) -> EstimateReport:
    """Check the local gradient estimate on Q_{R/2, T/4}.

    Preconditions are scanned first (flow is a (-K)-super flow, curvature
    and Harnack assumptions hold, u is positive and bounded by A on
    Q_{R, T}); scan failure yields an `inapplicable` report rather than an
    estimate failure.  The left side |grad u| / u comes from finite
    differences; nodes are restricted to dfrak <= R/2 and tau <= T/4.
    """
    if sol.rho.shape != fieldobj.rho.shape or not np.allclose(sol.rho, fieldobj.rho) \
            or not np.allclose(sol.tau, fieldobj.tau):
        raise ValueError("solution and reduced field must share one grid")

    def inapplicable(reason):
        return EstimateReport(status="inapplicable", reason=reason, R=R, T=T, K=K, A=A,
                              constants=None, nodes=[], worst_ratio=math.nan,
                              worst_node=None, margin=math.nan)

    cls = classify_flow(flow, K)
    if not cls.is_minus_k_super:
        return inapplicable("flow fails the (-K)-super inequality")
    hyp = _scan_hypotheses(flow, fieldobj.tau, K, v_mags)
    if not (hyp["D_ok"] and hyp["harnack_ok"] and hyp["H_ok"]):
        return inapplicable("curvature/Harnack assumption scan failed")

    region = (fieldobj.dfrak <= R) & (fieldobj.tau[:, None] <= T)
    if not np.any(region):
        return inapplicable("no grid nodes inside Q_{R,T}")
    if np.min(sol.values[region]) <= 0.0:
        return inapplicable("solution not positive on Q_{R,T}")
    if np.max(sol.values[region]) > A * (1.0 + 1e-12):
        return inapplicable("bound u <= A fails on Q_{R,T}")

    if constants is None:
        constants = estimate_constants(flow.model.n, build_cutoff(R, T))
    lhs = _gradient_norm_over_u(sol)
    rhs = constants.C_n * rhs_factor(R, T, K) * (1.0 + np.log(A / sol.values))
    inner = (fieldobj.dfrak <= R / 2.0) & (fieldobj.tau[:, None] <= T / 4.0) & fieldobj.smooth
    if not np.any(inner):
        return inapplicable("no grid nodes inside Q_{R/2,T/4}")

    ratio = np.where(inner, lhs / rhs, -np.inf)
    flat = int(np.argmax(ratio))
    j, i = np.unravel_index(flat, ratio.shape)
    worst = float(ratio[j, i])
    nodes = [
        {"rho": float(fieldobj.rho[ii]), "tau": float(fieldobj.tau[jj]),
         "lhs": float(lhs[jj, ii]), "rhs": float(rhs[jj, ii])}
        for jj, ii in zip(*np.nonzero(inner))
    ]
    return EstimateReport(status="checked", reason="", R=R, T=T, K=K, A=A,
                          constants=constants, nodes=nodes, worst_ratio=worst,
                          worst_node=(int(j), int(i), float(fieldobj.rho[i]),
                                      float(fieldobj.tau[j])),
                          margin=1.0 - worst)


# -- Liouville sweep ----------------------------------------------------------------

@dataclass
class LiouvilleReport:
    mode: str                     # "positive" | "signed"
    probe: SpaceTimePoint
    R_list: list
    A_R: list
    bounds: list
    lhs_probe: list
    sound: list
    classification: str
    C_n: float

    def to_dict(self) -> dict:
        return {
            "schema": "redgeo.liouville_report/1",
            "mode": self.mode,
            "probe": {"rho": self.probe.rho, "tau": self.probe.tau},
            "R_list": self.R_list,
            "A_R": self.A_R,
            "bounds": self.bounds,
            "lhs_probe": self.lhs_probe,
            "sound": self.sound,
            "classification": self.classification,
            "C_n": self.C_n,
        }


def _probe_gradient(sol: HeatSolution, flow: FlowMetric, probe: SpaceTimePoint) -> float:
    if sol.evaluator is None:
        raise ValueError("the sweep needs an evaluatable (catalog) solution")
    h = 1e-5 * max(1.0, abs(probe.rho))
    ev = sol.evaluator
    u_r = (float(ev(probe.rho + h, probe.tau)) - float(ev(probe.rho - h, probe.tau))) / (2 * h)
    return abs(u_r) / float(flow.a(probe.tau))


def _region_grid(flow: FlowMetric, R: float, tau_probe: float, nx: int, nt: int):
    """A (rho, tau) grid whose dfrak range covers the ball of radius R."""
    cap = flow.model.rho_max
    rho_hi = min(R / float(np.min(flow.a(np.linspace(*flow.tau_domain, 65)))) * 1.05,
                 cap if np.isfinite(cap) else math.inf)
    tau_min = min(tau_probe / 2.0, R * R * 1e-3)
    tau_grid = np.linspace(tau_min, min(R * R, flow.tau_domain[1]), nt)
    if flow.model.n == 1:
        rho_grid = np.linspace(-rho_hi, rho_hi, nx)
    else:
        rho_grid = np.linspace(0.0, rho_hi, nx)
    return rho_grid, tau_grid


def liouville_sweep(flow: FlowMetric, sol: HeatSolution, R_list, probe: SpaceTimePoint,
                    constants: EstimateConstants | None = None,
                    nx: int = 201, nt: int = 101) -> LiouvilleReport:
    """Classify a solution by the decay of nested gradient bounds.

    For each R the solution is scanned over Q_{R, R^2} (grid max, no
    continuity correction) and the bound of the dichotomy argument is
    evaluated at the probe: (2 C_n / R)(1 + log(A_R + 1)) for positive
    solutions (estimate applied to u + 1), and 6 (1 + log 3) C_n Abar_R / R
    for signed ones (applied to u + 2 Abar_R).  Bounds decaying to a small
    fraction of their initial value classify the solution as
    consistent-with-constant, otherwise growth-condition-violated.
    """
    R_list = [float(R) for R in R_list]
    if min(R_list) <= 0 or any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must be positive and increasing")
    if constants is None:
        constants = estimate_constants(flow.model.n, build_cutoff(1.0, 1.0))
    if sol.evaluator is None:
        raise ValueError("the sweep needs an evaluatable (catalog) solution")

    # probe must sit inside Q_{R/2, R^2/4} for every R
    flow.validate_point(probe)
    big_i = inverse_scale_integral(flow, probe.tau)
    ell_probe = (trace_h_integral(flow, probe.tau) + probe.rho ** 2 / big_i) \
        / (2.0 * math.sqrt(probe.tau))
    probe_dfrak = math.sqrt(max(4.0 * probe.tau * ell_probe, 0.0))
    positive_mode = sol.positive
    u_probe = float(sol.evaluator(probe.rho, probe.tau))
    grad_probe = _probe_gradient(sol, flow, probe)

    A_Rs, bounds, lhs_vals, sound = [], [], [], []
    for R in R_list:
        if probe_dfrak > R / 2.0 or probe.tau > R * R / 4.0:
            raise ValueError(f"probe outside Q_{{R/2, R^2/4}} for R = {R}")
        rho_grid, tau_grid = _region_grid(flow, R, probe.tau, nx, nt)
        fld = reduced_field(flow, rho_grid, tau_grid, scan_points=0)
        u_vals = np.empty_like(fld.ell)
        for j, t in enumerate(tau_grid):
            u_vals[j] = np.asarray(sol.evaluator(rho_grid, np.full_like(rho_grid, t)), dtype=float)
        in_region = fld.dfrak <= R
        if positive_mode:
            A_R = float(np.max(u_vals[in_region]))
            bound = (2.0 * constants.C_n / R) * (1.0 + math.log(A_R + 1.0))
            lhs = grad_probe / (u_probe + 1.0)
        else:
            A_R = float(np.max(np.abs(u_vals[in_region])))
            bound = 6.0 * (1.0 + math.log(3.0)) * constants.C_n * A_R / R
            lhs = grad_probe
        A_Rs.append(A_R)
        bounds.append(bound)
        lhs_vals.append(lhs)
        sound.append(bool(lhs <= bound * (1.0 + 1e-6) + 1e-9))

    decaying = all(b2 < b1 for b1, b2 in zip(bounds, bounds[1:])) \
        and bounds[-1] <= 0.5 * bounds[0]
    return LiouvilleReport(
        mode="positive" if positive_mode else "signed",
        probe=probe, R_list=R_list, A_R=A_Rs, bounds=bounds, lhs_probe=lhs_vals,
        sound=sound,
        classification="consistent-with-constant" if decaying else "growth-condition-violated",
        C_n=constants.C_n)


def report_to_json(report, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
