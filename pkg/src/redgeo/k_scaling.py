"""Conformal-time bridge between K-shifted and plain scale Ricci flows.

Forward-time flows live here with their own t parameter; the translation
t = -tau to the backward modules happens explicitly at the CLI layer, never
implicitly.  The monotone reparametrization

    sigma(s) = -log(1 - 2Ks) / (2K),   sigma^{-1}(t) = (1 - e^{-2Kt}) / (2K)

turns a forward flow with a a' = K a^2 - (n-1) kappa (the K-shifted flow)
into a plain one via abar(s) = e^{-K sigma(s)} a(sigma(s)), and transports
the scalar-curvature Harnack expression accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model_flows import FlowDomainError, FlowMetric, ModelSpaceSpec
from .quantities import muller_d
from .model_flows import SpaceTimePoint


# -- sigma map -------------------------------------------------------------------

def sigma_domain(K: float) -> tuple[float, float]:
    if K > 0:
        return (-math.inf, 1.0 / (2.0 * K))
    if K < 0:
        return (1.0 / (2.0 * K), math.inf)
    return (-math.inf, math.inf)


def sigma_eval(K: float, s):
    """t = sigma(s); identity for K = 0."""
    s = np.asarray(s, dtype=float)
    if K == 0.0:
        return s + 0.0
    lo, hi = sigma_domain(K)
    if np.any(s <= lo) or np.any(s >= hi):
        raise FlowDomainError(f"s outside the admissible interval {(lo, hi)}")
    return -np.log1p(-2.0 * K * s) / (2.0 * K)


def sigma_inv(K: float, t):
    """s = sigma^{-1}(t) = (1 - e^{-2Kt}) / (2K); identity for K = 0."""
    t = np.asarray(t, dtype=float)
    if K == 0.0:
        return t + 0.0
    return -np.expm1(-2.0 * K * t) / (2.0 * K)


# -- forward flows ----------------------------------------------------------------

FORWARD_K_RICCI = "k_ricci"
FORWARD_RICCI = "ricci"


class ForwardScaleFlow:
    """Forward-time scale flow a(t)^2 g0 with a a' = K a^2 - (n-1) kappa."""

    def __init__(self, model: ModelSpaceSpec, K: float, a0: float,
                 t_domain: tuple[float, float]):
        if not a0 > 0:
            raise FlowDomainError("a0 must be positive")
        self.model = model
        self.K = float(K)
        self.a0 = float(a0)
        self.t_domain = (float(t_domain[0]), float(t_domain[1]))
        ts = np.linspace(*self.t_domain, 2049)
        if np.any(self.a_squared(ts) <= 0.0):
            raise FlowDomainError("forward profile hits zero inside the t domain")

    def _lam(self) -> float:
        return (self.model.n - 1) * self.model.kappa

    def a_squared(self, t):
        t = np.asarray(t, dtype=float)
        lam, K = self._lam(), self.K
        if K == 0.0:
            return self.a0 ** 2 - 2.0 * lam * t
        # y' = 2K y - 2 lam
        return self.a0 ** 2 * np.exp(2.0 * K * t) - lam * np.expm1(2.0 * K * t) / K

    def a(self, t):
        return np.sqrt(self.a_squared(t))

    def scalar_curvature(self, t):
        n = self.model.n
        return n * self._lam() / self.a_squared(t)

    def dS_dt(self, t):
        n, lam, K = self.model.n, self._lam(), self.K
        y = self.a_squared(t)
        return -n * lam * (2.0 * K * y - 2.0 * lam) / y ** 2

    def ric_unit(self, t):
        return self._lam() / self.a_squared(t)

    def k_ricci_residual(self, t):
        """a a' - K a^2 + (n-1) kappa; zero on an exact K-shifted flow."""
        y = self.a_squared(t)
        yprime = 2.0 * self.K * y - 2.0 * self._lam()
        return 0.5 * yprime - self.K * y + self._lam()


@dataclass
class TransformedFlow:
    """The plain-flow image abar(s) = e^{-K sigma(s)} a(sigma(s))."""

    source: ForwardScaleFlow
    K: float
    s_domain: tuple[float, float]
    residual_max: float

    def abar(self, s):
        s = np.asarray(s, dtype=float)
        sig = sigma_eval(self.K, s)
        return np.exp(-self.K * sig) * self.source.a(sig)

    def abar_squared(self, s):
        return self.abar(s) ** 2


def transform_to_ricci_flow(source: ForwardScaleFlow, K: float | None = None,
                            n_check: int = 257) -> TransformedFlow:
    """Reparametrize a K-shifted flow into a plain flow and verify it.

    The source must satisfy its defining scalar identity to 1e-8; the image
    is checked by central differences to satisfy d/ds abar^2 = -2 (n-1) kappa
    with residual <= 1e-6.
    """
    if K is None:
        K = source.K
    t_lo, t_hi = source.t_domain
    ts = np.linspace(t_lo, t_hi, n_check)
    res_src = float(np.max(np.abs(source.k_ricci_residual(ts))))
    if res_src > 1e-8:
        raise FlowDomainError(f"source fails the K-shifted scalar test: {res_src:.3e}")

    s_lo = float(sigma_inv(K, t_lo))
    s_hi = float(sigma_inv(K, t_hi))
    out = TransformedFlow(source=source, K=float(K), s_domain=(s_lo, s_hi),
                          residual_max=math.nan)
    ss = np.linspace(s_lo, s_hi, n_check)[1:-1]
    h = (s_hi - s_lo) * 1e-6
    dy = (out.abar_squared(ss + h) - out.abar_squared(ss - h)) / (2.0 * h)
    lam = (source.model.n - 1) * source.model.kappa
    out.residual_max = float(np.max(np.abs(dy + 2.0 * lam)))
    if out.residual_max > 1e-6:
        raise FlowDomainError(f"transformed flow fails the plain-flow test: {out.residual_max:.3e}")
    return out


# -- Harnack scans -----------------------------------------------------------------

def k_trace_harnack_check(flow: ForwardScaleFlow, t_grid, v_mags=(0.0, 0.5, 1.0, 2.0),
                          ancient: bool = False, tol: float = 1e-9) -> dict:
    """Scan the scalar trace Harnack expression of a K-shifted flow.

    Finite-window form: dS/dt + 2KS/(1 - e^{-2Kt}) - 2 g(grad S, V)
    + 2 Ric(V, V) with grad S = 0 here; at K = 0 the coefficient becomes
    the limit 1/t.  With ancient=True the parallel-translation limit is
    scanned instead: the 2KS term for K > 0, and no zeroth-order term for
    K <= 0.  Flows without non-negative curvature are reported as skipped.
    """
    if flow.model.kappa != 1:
        return {"status": "skipped", "reason": "curvature operator not non-negative (kappa <= 0)",
                "pass": True}
    t_grid = np.asarray(t_grid, dtype=float)
    if not ancient and np.any(t_grid <= 0.0):
        raise FlowDomainError("finite-window scan needs t > 0")
    S = flow.scalar_curvature(t_grid)
    dS = flow.dS_dt(t_grid)
    ric = flow.ric_unit(t_grid)
    K = flow.K
    if ancient:
        zeroth = 2.0 * K * S if K > 0 else np.zeros_like(S)
    elif K == 0.0:
        zeroth = S / t_grid
    else:
        zeroth = 2.0 * K * S / (-np.expm1(-2.0 * K * t_grid))
    worst = math.inf
    worst_at = None
    for vm in v_mags:
        lhs = dS + zeroth + 2.0 * ric * float(vm) ** 2
        k = int(np.argmin(lhs))
        if lhs[k] < worst:
            worst, worst_at = float(lhs[k]), {"t": float(t_grid[k]), "vmag": float(vm)}
    return {"status": "checked", "ancient": ancient, "K": K,
            "min_lhs": worst, "worst_at": worst_at, "pass": worst >= -tol}


def kfrdv_check(flow: FlowMetric, tau_grid=None, v_mags=(0.0, 0.5, 1.0, 2.0),
                tol: float = 1e-8) -> dict:
    """Closed-form identities of backward (-K)-shifted flows.

    (a) the scalar-curvature evolution residual dS/dtau + Lap S + 2 |Ric|^2
        + 2 K S (Lap S = 0 on these homogeneous flows);
    (b) D(V) = -2K (H + |V|^2) over sampled magnitudes;
    (c) the trace identity H = S + n K.
    """
    if flow.scale.variant != "backward_k_ricci":
        raise FlowDomainError("kfrdv check applies to backward_k_ricci flows")
    if tau_grid is None:
        tau_grid = np.linspace(flow.tau_domain[0], flow.tau_domain[1], 129)
    tau_grid = np.asarray(tau_grid, dtype=float)
    n, K = flow.model.n, flow.scale.K
    lam = (n - 1) * flow.model.kappa
    y = flow.a_squared(tau_grid)
    S = n * lam / y
    yprime = 2.0 * K * y + 2.0 * lam
    dS = -n * lam * yprime / y ** 2
    ric_sq = n * (lam / y) ** 2
    evolution = dS + 0.0 + 2.0 * ric_sq + 2.0 * K * S
    res_a = float(np.max(np.abs(evolution)))

    res_b = 0.0
    for vm in v_mags:
        for tau in tau_grid[:: max(1, len(tau_grid) // 16)]:
            q = muller_d(flow, SpaceTimePoint(rho=0.0, tau=float(tau)), vm)
            H = flow.H(tau)
            res_b = max(res_b, abs(q.d + 2.0 * K * (float(H) + float(vm) ** 2)))

    res_c = float(np.max(np.abs(n * flow.h_unit(tau_grid) - S - n * K)))
    return {
        "status": "checked",
        "K": K,
        "evolution_residual": res_a,
        "muller_identity_residual": res_b,
        "trace_identity_residual": res_c,
        "pass": max(res_a, res_b, res_c) <= tol,
    }
