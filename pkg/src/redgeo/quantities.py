"""Curvature/Harnack quantities and derivative-formula verification.

On homogeneous scale flows the spatially varying terms vanish identically
(Delta H = 0, div h = 0, grad H = 0), so both quadratic-form quantities
reduce to closed forms in a, a', a'' and the radial vector magnitude:

    D(V) = -dH/dtau - 2|h|^2 + 2 (Ric - h)(V, V)
    H(V) = -dH/dtau - H/tau + 2 h(V, V)

The verifier recomputes the reduced-distance derivative identities by finite
differences on a ReducedField grid and compares them with the path-integral
forms, where K_H and K_D are quadratures along each node's minimal geodesic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import fd
from .lgeodesic import LGeodesic, ReducedField, cumulative_row_integrals, DRIFT_TOL
from .model_flows import FlowMetric, SpaceTimePoint

CONVENTION_DEFINITION = "definition"
CONVENTION_REMARK = "remark"


@dataclass(frozen=True)
class QuantitySample:
    """Both quadratic-form quantities and their raw components at one point."""

    point: SpaceTimePoint
    vmag: float
    d: float
    d0: float
    r: float
    trace_harnack: float
    components: dict


def muller_d(flow: FlowMetric, p: SpaceTimePoint, vmag: float,
             convention: str = CONVENTION_DEFINITION) -> QuantitySample:
    """Assemble the curvature quantity D(V) for a radial V with |V| = vmag."""
    flow.validate_point(p)
    s = flow.sample(p.tau)
    v2 = float(vmag) ** 2
    components = {
        "neg_dtau_H": -s.dH_dtau,
        "neg_lap_H": 0.0,
        "neg_2_h_sq": -2.0 * s.h_norm_sq,
        "four_div_h": 0.0,
        "neg_2_gradH_V": 0.0,
        "two_ric_VV": 2.0 * s.ric_unit * v2,
        "neg_2_h_VV": -2.0 * s.h_unit * v2,
    }
    d0 = (components["neg_dtau_H"] + components["neg_lap_H"] + components["neg_2_h_sq"]
          + components["four_div_h"] + components["neg_2_gradH_V"])
    r = (s.ric_unit - s.h_unit) * v2
    if convention == CONVENTION_DEFINITION:
        d = d0 + 2.0 * r
    elif convention == CONVENTION_REMARK:
        d = d0 + r  # halved static value, see the classification CLI switch
    else:
        raise ValueError(f"unknown convention {convention!r}")
    hv = trace_harnack_h(flow, p, vmag) if p.tau > 0 else math.nan
    return QuantitySample(point=p, vmag=float(vmag), d=d, d0=d0, r=r,
                          trace_harnack=hv, components=components)


def trace_harnack_h(flow: FlowMetric, p: SpaceTimePoint, vmag: float) -> float:
    """H(V) = -dH/dtau - H/tau + 2 h(V, V); undefined at tau = 0."""
    if p.tau <= 0:
        raise ValueError("trace Harnack quantity needs tau > 0")
    flow.validate_point(p)
    s = flow.sample(p.tau)
    return -s.dH_dtau - s.H / p.tau + 2.0 * s.h_unit * float(vmag) ** 2


@dataclass(frozen=True)
class PathIntegrals:
    """K_H and K_D along a minimal geodesic, certified quadratures."""

    K_H: float
    K_D: float
    tau_bar: float
    first_integral: float


def path_integrals(flow: FlowMetric, geo: LGeodesic,
                   convention: str = CONVENTION_DEFINITION) -> PathIntegrals:
    """tau^{3/2}-weighted integrals of H(X) and D(X) along the geodesic.

    Uses the first integral c (|X|^2 = c^2 / (tau a^2)) after checking the
    certificate, and the s = sqrt(tau) substitution throughout.
    """
    if not geo.is_certified:
        raise ValueError(f"geodesic is uncertified: first-integral drift {geo.drift:.3e} > {DRIFT_TOL}")
    tau_bar = geo.curve.tau_bar
    rows = cumulative_row_integrals(flow, np.array([tau_bar]))
    c2 = geo.first_integral ** 2
    k_h = rows["PH"][-1] + c2 * rows["QH"][-1]
    r_part = c2 * rows["QD"][-1]
    k_d = rows["PD"][-1] + (r_part if convention == CONVENTION_DEFINITION else 0.5 * r_part)
    return PathIntegrals(K_H=float(k_h), K_D=float(k_d), tau_bar=float(tau_bar),
                         first_integral=float(geo.first_integral))


# -- derivative formula verification -----------------------------------------

@dataclass
class CheckResult:
    name: str
    kind: str                  # "equality" | "one_sided" | "bound"
    value: float               # max |residual| or min slack
    worst_node: tuple          # (j, i, rho, tau)
    passed: bool
    fd_error_max: float
    applicable: bool = True
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "max_residual" if self.kind == "equality" else "min_slack": self.value,
            "worst_node": list(self.worst_node),
            "pass": self.passed,
            "fd_error_max": self.fd_error_max,
            "applicable": self.applicable,
            "note": self.note,
        }


@dataclass
class FormulaReport:
    checks: dict[str, CheckResult]
    excluded: list
    grad_dfrak_sq_max: float
    hypotheses: dict
    convention: str
    grid: dict

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks.values() if c.applicable)

    def to_dict(self) -> dict:
        return {
            "schema": "redgeo.formula_report/1",
            "convention": self.convention,
            "grid": self.grid,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
            "excluded": self.excluded,
            "grad_dfrak_sq_max": self.grad_dfrak_sq_max,
            "hypotheses": self.hypotheses,
            "all_pass": self.all_pass,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _scan_hypotheses(flow: FlowMetric, tau_grid: np.ndarray, K: float,
                     v_mags: tuple, tol: float = 1e-9) -> dict:
    """Grid scan of the standing curvature/Harnack assumptions."""
    taus = np.asarray(tau_grid, dtype=float)
    hu = flow.h_unit(taus)
    H = flow.model.n * hu
    dH = flow.dH_dtau(taus)
    ric = flow.ric_unit(taus)
    worst_d = math.inf
    worst_harnack = math.inf
    for vm in v_mags:
        v2 = float(vm) ** 2
        d_vals = -dH - 2.0 * flow.model.n * hu ** 2 + 2.0 * (ric - hu) * v2
        worst_d = min(worst_d, float(np.min(d_vals + 2.0 * K * (H + v2))))
        # H(V) + H/tau = -dH/dtau + 2 h(V, V) on homogeneous flows
        worst_harnack = min(worst_harnack, float(np.min(-dH + 2.0 * hu * v2)))
    return {
        "D_plus_2K_min": worst_d,
        "harnack_min": worst_harnack,
        "H_min": float(np.min(H)),
        "D_ok": worst_d >= -tol,
        "harnack_ok": worst_harnack >= -tol,
        "H_ok": bool(np.min(H) >= -tol),
        "v_mags": list(v_mags),
    }


def _make_worst(rho: np.ndarray, tau: np.ndarray, mask: np.ndarray):
    """First-index deterministic max/min over masked grid values."""

    def worst(values: np.ndarray, largest: bool = True) -> tuple[float, tuple]:
        vals = np.where(mask, values, -np.inf if largest else np.inf)
        flat = np.argmax(vals) if largest else np.argmin(vals)
        j, i = np.unravel_index(flat, values.shape)
        return float(values[j, i]), (int(j), int(i), float(rho[i]), float(tau[j]))

    return worst


def verify_derivative_formulas(flow: FlowMetric, fieldobj: ReducedField, K: float = 0.0,
                               v_mags: tuple = (0.0, 0.5, 1.0, 2.0),
                               equality_tol: float = 1e-3,
                               convention: str = CONVENTION_DEFINITION) -> FormulaReport:
    """Finite-difference verification of the reduced-distance identities.

    At every smooth node the report checks, against the path integrals K_H
    and K_D of the node's minimal geodesic:

      time_derivative   d ell/dtau = H - ell/tau + K_H / (2 tau^{3/2})
      gradient_norm     |grad ell|^2 = -H + ell/tau - K_H / tau^{3/2}
      laplacian_bound   Lap ell <= -H + n/(2 tau) - (K_H + K_D)/(2 tau^{3/2})
      kh_free_identity  2 d ell/dtau + |grad ell|^2 = H - ell/tau
      heat_bound        (Lap + d/dtau) Lbar <= 2n - (2/sqrt(tau)) K_D
      k_heat_bound      (Lap + d/dtau) Lbar <= 2n + 2 K Lbar
      dfrak_gradient    |grad dfrak|^2 <= 3

    One-sided checks pass with slack >= -(local FD error estimate + 1e-6);
    the last two are marked inapplicable when their hypotheses fail on the
    flow.
    """
    rho, tau = fieldobj.rho, fieldobj.tau
    if len(rho) < 7 or len(tau) < 7:
        raise ValueError("grid too coarse: need at least 5 interior nodes per direction")
    h_rho = float(rho[1] - rho[0])
    h_tau = float(tau[1] - tau[0])
    if not (np.allclose(np.diff(rho), h_rho) and np.allclose(np.diff(tau), h_tau)):
        raise ValueError("verification requires uniform grids")

    n = flow.model.n
    ell, Lbar = fieldobj.ell, fieldobj.Lbar
    a2 = flow.a_squared(tau)[:, None]
    H = flow.H(tau)[:, None]
    tau_col = tau[:, None]

    ell_t = fd.d1(ell, h_tau, axis=0)
    ell_r = fd.d1(ell, h_rho, axis=1)
    ell_rr = fd.d2(ell, h_rho, axis=1)
    err_t = fd.d1_error(ell, h_tau, axis=0)
    err_r = fd.d1_error(ell, h_rho, axis=1)
    err_rr = fd.d2_error(ell, h_rho, axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        sn_ratio = flow.model.sn_ratio(rho)[None, :] if n >= 2 else 0.0
    grad_sq = ell_r ** 2 / a2
    if n >= 2:
        lap = (ell_rr + (n - 1) * sn_ratio * ell_r) / a2
    else:
        lap = ell_rr / a2

    rows = cumulative_row_integrals(flow, tau)
    c2 = fieldobj.c ** 2
    K_H = rows["PH"][:, None] + c2 * rows["QH"][:, None]
    r_part = c2 * rows["QD"][:, None]
    K_D = rows["PD"][:, None] + (r_part if convention == CONVENTION_DEFINITION else 0.5 * r_part)

    Lbar_t = fd.d1(Lbar, h_tau, axis=0)
    Lbar_r = fd.d1(Lbar, h_rho, axis=1)
    Lbar_rr = fd.d2(Lbar, h_rho, axis=1)
    errL_t = fd.d1_error(Lbar, h_tau, axis=0)
    errL_r = fd.d1_error(Lbar, h_rho, axis=1)
    errL_rr = fd.d2_error(Lbar, h_rho, axis=1)
    if n >= 2:
        lap_Lbar = (Lbar_rr + (n - 1) * sn_ratio * Lbar_r) / a2
        lap_err = (err_rr + (n - 1) * np.abs(sn_ratio) * err_r) / a2
        lapL_err = (errL_rr + (n - 1) * np.abs(sn_ratio) * errL_r) / a2
    else:
        lap_Lbar = Lbar_rr / a2
        lap_err = err_rr / a2
        lapL_err = errL_rr / a2

    dfrak_r = fd.d1(fieldobj.dfrak, h_rho, axis=1)
    err_dfrak = fd.d1_error(fieldobj.dfrak, h_rho, axis=1)
    grad_dfrak_sq = dfrak_r ** 2 / a2

    mask = fieldobj.smooth.copy()
    # keep rho = 0 nodes out of gradient checks on n >= 2 charts: |grad dfrak|
    # has a conical vertex there and sn'/sn is singular
    if n >= 2:
        mask &= np.abs(rho)[None, :] > 1e-12
    excluded = [[int(j), int(i), "non-smooth"] for j, i in zip(*np.nonzero(~fieldobj.smooth))]

    hyp = _scan_hypotheses(flow, tau, K, v_mags)
    worst = _make_worst(rho, tau, mask)
    checks: dict[str, CheckResult] = {}

    def equality(name, residual, err):
        val, node = worst(np.abs(residual))
        checks[name] = CheckResult(name, "equality", val, node, val <= equality_tol,
                                   float(np.max(err[mask])))

    def one_sided(name, slack, err, applicable=True, note=""):
        min_slack, _ = worst(slack, largest=False)
        val, node = worst(slack + err + 1e-6, largest=False)
        checks[name] = CheckResult(name, "one_sided", min_slack, node,
                                   (val >= 0.0) if applicable else True,
                                   float(np.max(err[mask])), applicable=applicable, note=note)

    grad_err = 2.0 * np.abs(ell_r) * err_r / a2
    equality("time_derivative",
             ell_t - (H - ell / tau_col + K_H / (2.0 * tau_col ** 1.5)), err_t)
    equality("gradient_norm",
             grad_sq - (-H + ell / tau_col - K_H / tau_col ** 1.5), grad_err)
    one_sided("laplacian_bound",
              (-H + n / (2.0 * tau_col) - (K_H + K_D) / (2.0 * tau_col ** 1.5)) - lap,
              lap_err)
    equality("kh_free_identity",
             2.0 * ell_t + grad_sq - (H - ell / tau_col), 2.0 * err_t + grad_err)

    heat = lap_Lbar + Lbar_t
    heat_err = lapL_err + errL_t
    one_sided("heat_bound", (2.0 * n - (2.0 / np.sqrt(tau_col)) * K_D) - heat, heat_err)
    one_sided("k_heat_bound", (2.0 * n + 2.0 * K * Lbar) - heat, heat_err,
              applicable=hyp["D_ok"] and hyp["H_ok"],
              note="" if hyp["D_ok"] and hyp["H_ok"]
              else "hypotheses D(V) >= -2K(H+|V|^2), H >= 0 fail on this flow")

    grad_d_err = 2.0 * np.abs(dfrak_r) * err_dfrak / a2
    one_sided("dfrak_gradient", 3.0 - grad_dfrak_sq, grad_d_err,
              applicable=hyp["harnack_ok"] and hyp["H_ok"],
              note="" if hyp["harnack_ok"] and hyp["H_ok"]
              else "hypotheses H(V) >= -H/tau, H >= 0 fail on this flow")

    return FormulaReport(
        checks=checks,
        excluded=excluded,
        grad_dfrak_sq_max=float(np.max(grad_dfrak_sq[mask])),
        hypotheses=hyp,
        convention=convention,
        grid={"rho_nodes": len(rho), "tau_nodes": len(tau),
              "h_rho": h_rho, "h_tau": h_tau},
    )
