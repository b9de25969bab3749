"""Time-derivative extraction at t=0 and smoothness checks of the flow.

The derivative pair (scalar-factor rate, fiber-map rate) at t=0 is what the
generator supplies; recovering it from the flow alone — by one-sided finite
differences, since t=0 is a boundary — and matching it against the generator
closes the loop numerically.  The integral form of the Riccati system and
finite-difference u-derivatives on the open half-space round out the module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dims, Tolerances, as_point, in_domain, in_domain_interior
from .flow import as_flow_source
from .verify import CheckReport

__all__ = [
    "DerivativeEstimate",
    "EmpiricalDerivativeEstimate",
    "FRExtrapolationError",
    "estimate_FR",
    "estimate_FR_from_samples",
    "riccati_consistency",
    "u_jacobian",
]


class FRExtrapolationError(RuntimeError):
    """Raised when the Richardson tableau stops converging."""


@dataclass(frozen=True)
class DerivativeEstimate:
    """Extrapolated t=0 derivatives of the transform pair at one argument.

    ``error_estimate`` is the last extrapolation increment — the observed
    change from adding the finest step — and bounds the remaining truncation
    error for smooth flows.
    """

    u: np.ndarray
    F_hat: complex
    R_hat: np.ndarray
    step_schedule: np.ndarray
    extrapolation_order: int
    error_estimate: float

    def __post_init__(self):
        if self.error_estimate < 0:
            raise ValueError("error_estimate must be nonnegative")
        if not (np.isfinite(self.F_hat.real) and np.isfinite(self.F_hat.imag)
                and np.all(np.isfinite(self.R_hat.view(np.float64)))):
            raise ValueError("derivative estimates must be finite")


def _richardson(rows: np.ndarray, scale: float):
    """Neville tableau for a first-order one-sided difference with step ratio 2.

    ``rows`` holds D(h_i) per schedule entry (coarse to fine), each a flat
    complex vector.  Returns the extrapolant and the sequence of top-row
    increments; increments must decrease strictly until they hit the
    rounding floor, else the sequence is declared non-convergent.
    """
    tableau = [rows]
    while len(tableau[-1]) > 1:
        prev = tableau[-1]
        j = len(tableau)
        fac = 2.0**j
        tableau.append([(fac * prev[i + 1] - prev[i]) / (fac - 1.0)
                        for i in range(len(prev) - 1)])
    tops = [level[0] for level in tableau]
    increments = [float(np.max(np.abs(tops[j + 1] - tops[j]))) for j in range(len(tops) - 1)]
    floor = 1e-13 * max(1.0, scale)
    for j in range(1, len(increments)):
        if increments[j] >= increments[j - 1] and increments[j] > floor:
            raise FRExtrapolationError(
                f"extrapolation increments stopped decreasing "
                f"({increments[j - 1]:.3e} -> {increments[j]:.3e}); "
                "the flow is not smooth enough at this argument or the steps are too coarse"
            )
    return tops[-1], (increments[-1] if increments else 0.0)


def estimate_FR(flow_source, u, h_schedule=(1e-2, 5e-3, 2.5e-3),
                dims: Dims | None = None) -> DerivativeEstimate:
    """Estimate the t=0 rates of the transform pair by one-sided differences.

    Forward quotients (Phi(h,u) - 1)/h and (psi(h,u) - u)/h over a step-halving
    schedule, Richardson-extrapolated; t=0 being a boundary rules out central
    differences.  Raises :class:`FRExtrapolationError` when the increments do
    not shrink.
    """
    source = as_flow_source(flow_source)
    hs = np.asarray(sorted(h_schedule, reverse=True), dtype=float)
    if hs.size < 2:
        raise ValueError("need at least two steps to extrapolate")
    if np.any(hs <= 0) or np.any(np.abs(hs[:-1] / hs[1:] - 2.0) > 1e-9):
        raise ValueError("step schedule must be positive with ratio 2")
    u_arr = np.asarray(u, dtype=np.complex128)
    rows = []
    for h in hs:
        ev = source.at(float(h), u_arr)
        if not ev.in_Q:
            raise FRExtrapolationError(f"flow left its domain at step h={h}")
        rows.append(np.concatenate([[(ev.phi - 1.0) / h], (ev.psi - u_arr) / h]))
    scale = float(np.max(np.abs(rows[-1])))
    ext, err = _richardson(rows, scale)
    return DerivativeEstimate(
        u=u_arr,
        F_hat=complex(ext[0]),
        R_hat=np.asarray(ext[1:]),
        step_schedule=hs,
        extrapolation_order=hs.size - 1,
        error_estimate=err,
    )


@dataclass(frozen=True)
class EmpiricalDerivativeEstimate:
    """Single-step derivative estimate from a sample-recovered flow.

    ``noise_floor`` is the standard error divided by the step — the
    statistical contribution to the quotient, which doubles when the step
    halves.  Steps should stay coarse enough that this term dominates the
    O(h) truncation bias; the field makes the trade-off visible instead of
    silently truncating.
    """

    u: np.ndarray
    F_hat: complex
    R_hat: np.ndarray
    h: float
    F_stderr: float
    R_stderr: np.ndarray
    n_paths: int
    noise_floor: float


def estimate_FR_from_samples(source, dims: Dims, u, h: float, n_paths: int, seed: int,
                             probe_scale: float = 1.0) -> EmpiricalDerivativeEstimate:
    """Forward-difference derivative estimate from Monte Carlo flow recovery.

    Recovers the transform pair at times {0, h} from simulated paths and
    forms the one-sided quotients; standard errors propagate from the
    empirical transform through the log and the difference.  No
    extrapolation — the step trades O(h) truncation bias against an
    O(1/(h sqrt(n))) noise term, and since the bias-to-noise ratio shrinks
    like h^(3/2), a small-but-not-tiny step is the usable regime.  Steps so
    small that the noise term swamps the estimates themselves are refused
    with an explicit error instead of being silently adjusted.
    """
    from .empirical import recover_phi_psi

    if h <= 0:
        raise ValueError("the step must be positive")
    u_arr = np.asarray(u, dtype=np.complex128)
    evals = recover_phi_psi(source, dims, [0.0, float(h)], u_arr, n_paths, seed,
                            probe_scale=probe_scale)
    ev = evals[-1]
    f_hat = (ev.phi - 1.0) / h
    r_hat = (ev.psi - u_arr) / h
    f_se = ev.phi_stderr / h
    r_se = ev.psi_stderr / h
    noise = float(max(f_se, np.max(r_se, initial=0.0)))
    scale = max(1.0, abs(f_hat), float(np.max(np.abs(r_hat), initial=0.0)))
    if noise > scale:
        raise ValueError(
            f"step {h} is below the noise floor for {n_paths} paths: the quotient "
            f"standard error {noise:.3g} exceeds the estimate scale {scale:.3g}; "
            "increase the step or the path count"
        )
    return EmpiricalDerivativeEstimate(
        u=u_arr, F_hat=complex(f_hat), R_hat=r_hat, h=float(h),
        F_stderr=float(f_se), R_stderr=r_se, n_paths=n_paths,
        noise_floor=noise,
    )


def riccati_consistency(flow_source, gen, t: float, u, quad_nodes: int = 12,
                        threshold: float = 1e-8, dims: Dims | None = None,
                        max_refinements: int = 8) -> CheckReport:
    """Integral form of the Riccati system along the flow.

    Checks that the generator integrated along the fiber map reproduces the
    flow itself: the integral of R(psi(s,u)) over [0,t] must equal
    psi(t,u) - u, and the integral of F(psi(s,u)) must equal the continuous
    logarithm of the scalar factor.  Composite Gauss-Legendre quadrature is
    refined (panel doubling) until the integrals settle to a tenth of the
    threshold; failure to settle is a quadrature error, not a check failure.
    """
    source = as_flow_source(flow_source)
    u_arr = np.asarray(u, dtype=np.complex128)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return CheckReport("riccati_consistency", "t=0, both sides vanish", 0.0, threshold)
    nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)

    def integrate(n_panels: int):
        edges = np.linspace(0.0, t, n_panels + 1)
        ss, ws = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            half = 0.5 * (b - a)
            ss.append(half * nodes + 0.5 * (a + b))
            ws.append(half * weights)
        ss = np.concatenate(ss)
        ws = np.concatenate(ws)
        order = np.argsort(ss)
        evals = source.on_grid(ss[order].tolist(), [u_arr])
        psi_at = np.empty((ss.size, u_arr.size), dtype=np.complex128)
        for rank, idx in enumerate(order):
            psi_at[idx] = evals[rank][0].psi
        r_vals = np.stack([np.atleast_1d(np.asarray(gen.R(p), dtype=np.complex128))
                           for p in psi_at])
        f_vals = np.array([complex(gen.F(p)) for p in psi_at])
        return ws @ r_vals, complex(ws @ f_vals)

    n_panels = 1
    int_r, int_f = integrate(n_panels)
    for _ in range(max_refinements):
        n_panels *= 2
        r_new, f_new = integrate(n_panels)
        delta = max(float(np.max(np.abs(r_new - int_r))), abs(f_new - int_f))
        int_r, int_f = r_new, f_new
        if delta <= 0.1 * threshold:
            break
    else:
        raise RuntimeError(
            f"quadrature did not settle below {0.1 * threshold:.1e} "
            f"after {max_refinements} refinements"
        )

    ev = source.at(float(t), u_arr)
    res_r = float(np.max(np.abs(int_r - (ev.psi - u_arr))))
    res_f = abs(int_f - ev.log_phi)
    violation = max(res_r, res_f)
    witnesses = []
    if violation > threshold:
        witnesses.append({
            "inputs": {"t": t, "u": u_arr},
            "observed": {"fiber_residual": res_r, "scalar_residual": res_f,
                         "panels": n_panels},
            "expected": f"<= {threshold}",
        })
    return CheckReport(
        "riccati_consistency",
        f"t={t}, {quad_nodes}-node Gauss-Legendre x {n_panels} panels",
        violation,
        threshold,
        witnesses,
    )


def u_jacobian(flow_source, dims: Dims, t: float, u, fd_step: float = 1e-6,
               tol: Tolerances = Tolerances()) -> np.ndarray:
    """Central-difference derivatives of the transform pair in the cone arguments.

    Returns a (1 + d) x m complex matrix: row 0 holds the scalar-factor
    derivatives, rows 1..d the fiber-map derivatives, one column per cone
    component.  The argument must be strictly interior; steps shrink to half
    the distance to the boundary and underflow raises.
    """
    source = as_flow_source(flow_source)
    u_arr = as_point(u, dims)
    if not in_domain_interior(u_arr, dims, tol):
        raise ValueError("u-derivatives need a strictly interior argument")
    out = np.empty((1 + dims.d, dims.m), dtype=np.complex128)
    for col, i in enumerate(range(dims.m)):
        delta = min(fd_step, abs(u_arr[i].real) / 2.0)
        if delta < 1e-12:
            raise ValueError(
                f"finite-difference step underflowed at component {i}: "
                f"argument too close to the boundary (Re u_i = {u_arr[i].real:.3e})"
            )
        e = np.zeros(dims.d, dtype=np.complex128)
        e[i] = delta
        hi = source.at(float(t), u_arr + e)
        lo = source.at(float(t), u_arr - e)
        out[0, col] = (hi.phi - lo.phi) / (2 * delta)
        out[1:, col] = (hi.psi - lo.psi) / (2 * delta)
    return out
