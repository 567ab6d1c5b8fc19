"""Acceptance battery: one callable per criterion, shared by tests and CLI.

Each criterion returns a CriterionResult with a pass flag, the measured
quantities that decided it, and its runtime; stated runtime budgets are part
of the pass condition.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field
from fractions import Fraction

import numpy as np

from . import fd
from .backward_heat import Constant, Eigen, ExpLine, LinearLine, exact_solution
from .k_scaling import (ForwardScaleFlow, k_trace_harnack_check, kfrdv_check,
                        sigma_eval, sigma_inv, transform_to_ricci_flow)
from .lgeodesic import (SampledCurve, reduced_field, solve_minimal_l_geodesic,
                        variational_refine)
from .model_flows import (FlowMetric, ModelSpaceSpec, ScaleFlowSpec, SpaceTimePoint,
                          make_flow)
from .quantities import muller_d, path_integrals, verify_derivative_formulas
from .sz_harness import (build_cutoff, estimate_constants, gradient_estimate_check,
                         liouville_sweep, rhs_factor)


@dataclass
class CriterionResult:
    index: int
    title: str
    passed: bool
    seconds: float
    budget: float | None = None
    details: dict = dc_field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.index}: {self.title} ({self.seconds:.1f}s)"


def _sphere_flow(n: int = 2, a0: float = 1.0, tau_max: float = 2.0) -> FlowMetric:
    return make_flow(ModelSpaceSpec(n, 1), ScaleFlowSpec.backward_ricci(a0), (0.0, tau_max))


def criterion_1() -> CriterionResult:
    t0 = time.perf_counter()
    worst = 0.0
    for n in (2, 3):
        flow = make_flow(ModelSpaceSpec(n, 0), ScaleFlowSpec.static(1.0), (0.0, 2.5))
        rho = np.linspace(0.04, 2.0, 50)
        tau = np.linspace(0.04, 2.0, 50)
        fld = reduced_field(flow, rho, tau)
        exact = rho[None, :] ** 2 / (4.0 * tau[:, None])
        rel = np.abs(fld.ell - exact) / np.maximum(1.0, np.abs(exact))
        worst = max(worst, float(np.max(rel)))
    dt = time.perf_counter() - t0
    return CriterionResult(1, "static exactness of the reduced field",
                           worst <= 1e-8 and dt <= 10.0, dt, budget=10.0,
                           details={"max_rel_err": worst})


def criterion_2() -> CriterionResult:
    t0 = time.perf_counter()
    flow = _sphere_flow()
    worst = 0.0
    for rho_bar in np.linspace(0.2, 2.2, 5):
        for tau_bar in np.linspace(0.2, 1.0, 5):
            target = SpaceTimePoint(float(rho_bar), float(tau_bar))
            l_fi = solve_minimal_l_geodesic(flow, target).l_length
            l_sh = solve_minimal_l_geodesic(flow, target, method="shooting").l_length
            s = np.linspace(0.0, math.sqrt(tau_bar), 257)[1:]
            init = SampledCurve(taus=s ** 2, rhos=rho_bar * s / math.sqrt(tau_bar), order=1)
            l_var = variational_refine(flow, init).l_length
            scale = max(abs(l_fi), abs(l_sh), abs(l_var))
            worst = max(worst,
                        abs(l_fi - l_sh) / scale,
                        abs(l_fi - l_var) / scale,
                        abs(l_sh - l_var) / scale)
    dt = time.perf_counter() - t0
    return CriterionResult(2, "oracle triple agreement on the shrinking sphere",
                           worst <= 1e-4 and dt <= 60.0, dt, budget=60.0,
                           details={"max_pairwise_rel": worst})


def criterion_3() -> CriterionResult:
    t0 = time.perf_counter()
    flow = _sphere_flow()
    grids = {}
    for tag, m in (("base", 100), ("fine", 400)):
        rho = np.linspace(0.01, 1.0, m)
        tau = np.linspace(0.7, 1.69, m)
        fld = reduced_field(flow, rho, tau, scan_points=0 if m > 100 else 17)
        grids[tag] = verify_derivative_formulas(flow, fld)
    base, fine = grids["base"], grids["fine"]
    identity = base.checks["kh_free_identity"].value
    contraction = identity / max(fine.checks["kh_free_identity"].value, 1e-300)
    one_sided_ok = all(base.checks[k].passed for k in
                       ("laplacian_bound", "heat_bound", "k_heat_bound"))
    spacing_ok = base.grid["h_rho"] <= 0.01 + 1e-12 and base.grid["h_tau"] <= 0.01 + 1e-12
    dt = time.perf_counter() - t0
    return CriterionResult(3, "derivative formulas and one-sided bounds",
                           identity <= 1e-3 and contraction >= 3.0
                           and one_sided_ok and spacing_ok, dt,
                           details={"identity_residual": identity,
                                    "contraction": contraction,
                                    "one_sided_ok": one_sided_ok})


def criterion_4() -> CriterionResult:
    t0 = time.perf_counter()
    flows = {
        "static_flat": make_flow(ModelSpaceSpec(2, 0), ScaleFlowSpec.static(1.0), (0.0, 2.0)),
        "static_sphere": make_flow(ModelSpaceSpec(2, 1), ScaleFlowSpec.static(1.0), (0.0, 2.0)),
        "shrinking_sphere": _sphere_flow(),
    }
    details, ok = {}, True
    for name, flow in flows.items():
        rho = np.linspace(0.02, 2.0, 80)
        tau = np.linspace(0.1, 1.9, 80)
        fld = reduced_field(flow, rho, tau, scan_points=0)
        a = np.sqrt(flow.a_squared(tau))[:, None]
        grad_sq = (fd.d1(fld.dfrak, float(rho[1] - rho[0]), axis=1) / a) ** 2
        smooth = fld.smooth
        details[name] = {"max": float(np.max(grad_sq[smooth])),
                         "min": float(np.min(grad_sq[smooth]))}
        ok &= details[name]["max"] <= 3.0 + 1e-2
        if name.startswith("static"):
            ok &= abs(details[name]["max"] - 1.0) <= 1e-6
            ok &= abs(details[name]["min"] - 1.0) <= 1e-6
    dt = time.perf_counter() - t0
    return CriterionResult(4, "universal bound on the reduced-radius gradient",
                           bool(ok), dt, details=details)


def criterion_5() -> CriterionResult:
    t0 = time.perf_counter()
    sphere = _sphere_flow()
    sol = exact_solution(sphere, Eigen(shift=4.0),
                         np.linspace(0.3, 2.6, 240), np.linspace(0.3, 1.0, 150))
    from .backward_heat import verify_f_w_identities
    checks = verify_f_w_identities(sphere, sol.scaled(1.0 / 8.0))
    line = make_flow(ModelSpaceSpec(1, 0), ScaleFlowSpec.static(1.0), (0.0, 8.0))
    exp_sol = exact_solution(line, ExpLine(), np.linspace(-2.0, 2.0, 64),
                             np.linspace(0.5, 2.0, 32))
    ok = (checks["log_heat"].value <= 1e-3
          and checks["grad_evolution"].value <= 1e-3
          and checks["w_inequality"].value >= -1e-3
          and exp_sol.residual_max == 0.0)
    dt = time.perf_counter() - t0
    return CriterionResult(5, "log-solution heat identities", bool(ok), dt,
                           details={k: c.value for k, c in checks.items()}
                           | {"exp_line_residual": exp_sol.residual_max})


def criterion_6() -> CriterionResult:
    t0 = time.perf_counter()
    cut = build_cutoff(1.0, 1.0, grid_n=2048)
    from .sz_harness import verify_cutoff_bounds
    cert = verify_cutoff_bounds(cut, grid_n=2048)
    ec = estimate_constants(2, cut)
    c34, c = Fraction(cut.C_alpha_emp), Fraction(cut.C_emp)
    exact = (ec.Cbar_n == 24 * c34 ** 2 * (Fraction(4) + Fraction(9, 4) + Fraction(657, 64) * c34 ** 2)
             and ec.Ct1 == 6 * c ** 2
             and ec.Ct2 == 24 * (1 + c34 ** 2 / 4))
    dt = time.perf_counter() - t0
    return CriterionResult(6, "explicit constants in rational arithmetic",
                           bool(exact and cert["pass"]), dt,
                           details={"exact_rational": exact} | cert)


def criterion_7() -> CriterionResult:
    t0 = time.perf_counter()
    sphere = _sphere_flow()
    rho = np.linspace(0.0, 2.9, 110)
    tau = np.linspace(0.02, 1.0, 100)
    fld = reduced_field(sphere, rho, tau, scan_points=0)
    base = exact_solution(sphere, Eigen(shift=4.0), rho, tau)
    worst = -math.inf
    reports = {}
    for R, T in ((2.0, 1.0), (2.8, 1.0), (2.0, 0.64)):
        region = (fld.dfrak <= R) & (tau[:, None] <= T)
        sol = base.scaled(1.0 / float(np.max(base.values[region])))
        rep = gradient_estimate_check(sphere, sol, fld, R=R, T=T, K=0.0, A=1.0)
        reports[f"R={R},T={T}"] = {"status": rep.status, "worst_ratio": rep.worst_ratio}
        if rep.status != "checked":
            worst = math.inf
        else:
            worst = max(worst, rep.worst_ratio)
    dt = time.perf_counter() - t0
    return CriterionResult(7, "gradient-estimate soundness on nested regions",
                           worst <= 1.0 + 1e-6 and dt <= 120.0, dt, budget=120.0,
                           details=reports | {"worst_ratio": worst})


def criterion_8() -> CriterionResult:
    t0 = time.perf_counter()
    line = make_flow(ModelSpaceSpec(1, 0), ScaleFlowSpec.static(1.0), (0.0, 1100.0))
    probe = SpaceTimePoint(0.5, 1.0)
    constants = estimate_constants(1, build_cutoff(1.0, 1.0, grid_n=1024))
    xg = np.linspace(-3.0, 3.0, 41)
    tg = np.linspace(0.5, 3.0, 33)
    r_list = [4.0, 8.0, 16.0, 32.0]
    results = {}
    for kind in (Constant(5.0), ExpLine(), LinearLine(1.0, 0.0)):
        sol = exact_solution(line, kind, xg, tg)
        rep = liouville_sweep(line, sol, r_list, probe, constants=constants)
        results[kind.name] = {"classification": rep.classification,
                              "bounds": rep.bounds, "sound": all(rep.sound)}
    const_bounds = results["constant"]["bounds"]
    inv_r = all(abs(b * R - const_bounds[0] * r_list[0]) <= 1e-9 * const_bounds[0] * r_list[0]
                for b, R in zip(const_bounds, r_list))
    ok = (results["constant"]["classification"] == "consistent-with-constant" and inv_r
          and results["exp_line"]["classification"] == "growth-condition-violated"
          and results["linear_line"]["classification"] == "growth-condition-violated"
          and all(r["sound"] for r in results.values()))
    dt = time.perf_counter() - t0
    return CriterionResult(8, "Liouville dichotomy and sharpness witnesses",
                           bool(ok), dt, details=results | {"inv_r_decay": inv_r})


def criterion_9() -> CriterionResult:
    t0 = time.perf_counter()
    details: dict = {}
    sigma_err = 0.0
    for K in (0.1, 0.5, 1.0):
        t = np.linspace(0.0, 3.0, 10001)
        sigma_err = max(sigma_err, float(np.max(np.abs(sigma_eval(K, sigma_inv(K, t)) - t))))
    details["sigma_roundtrip"] = sigma_err

    model = ModelSpaceSpec(2, 1)
    fwd = ForwardScaleFlow(model, K=0.3, a0=1.0, t_domain=(0.0, 0.5))
    details["transform_residual"] = transform_to_ricci_flow(fwd).residual_max

    harnack_min = math.inf
    for K, t_hi in ((0.0, 0.45), (0.3, 0.55), (1.0, 1.5)):
        f = ForwardScaleFlow(model, K=K, a0=1.0, t_domain=(0.0, t_hi))
        rep = k_trace_harnack_check(f, np.linspace(0.01, t_hi * 0.95, 200))
        harnack_min = min(harnack_min, rep["min_lhs"])
    details["harnack_min_lhs"] = harnack_min

    kfrdv_worst = 0.0
    for K in (0.0, 0.1, 0.5, 1.0):
        for n in (2, 3):
            flow = make_flow(ModelSpaceSpec(n, 1), ScaleFlowSpec.backward_k_ricci(K, 1.0),
                             (0.0, 1.0))
            rep = kfrdv_check(flow)
            kfrdv_worst = max(kfrdv_worst, rep["evolution_residual"],
                              rep["muller_identity_residual"], rep["trace_identity_residual"])
    details["kfrdv_worst"] = kfrdv_worst
    ok = (sigma_err <= 1e-12 and details["transform_residual"] <= 1e-6
          and harnack_min >= -1e-9 and kfrdv_worst <= 1e-8)
    dt = time.perf_counter() - t0
    return CriterionResult(9, "conformal-time machinery", bool(ok), dt, details=details)


def criterion_10() -> CriterionResult:
    t0 = time.perf_counter()
    worst_d = 0.0
    worst_kd = 0.0
    cases = [(2, 1, 1.0), (3, 1, 1.5), (2, -1, 0.2)]
    for n, kappa, tau_max in cases:
        flow = make_flow(ModelSpaceSpec(n, kappa), ScaleFlowSpec.backward_ricci(1.5),
                         (0.0, tau_max))
        for tau in np.linspace(tau_max / 10.0, tau_max * 0.9, 7):
            for vmag in (0.0, 0.5, 1.0, 2.0):
                q = muller_d(flow, SpaceTimePoint(0.0, float(tau)), vmag)
                worst_d = max(worst_d, abs(q.d))
            target = SpaceTimePoint(0.4 if kappa != -1 else 0.2, float(tau))
            geo = solve_minimal_l_geodesic(flow, target)
            worst_kd = max(worst_kd, abs(path_integrals(flow, geo).K_D))
    dt = time.perf_counter() - t0
    return CriterionResult(10, "vanishing curvature quantity on equality flows",
                           worst_d <= 1e-9 and worst_kd <= 1e-9, dt,
                           details={"max_abs_D": worst_d, "max_abs_K_D": worst_kd})


CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}


def run_criterion(index: int) -> CriterionResult:
    return CRITERIA[index]()


def run_all(indices=None) -> list[CriterionResult]:
    indices = sorted(CRITERIA) if indices is None else list(indices)
    return [run_criterion(i) for i in indices]
