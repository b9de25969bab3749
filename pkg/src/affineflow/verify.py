"""Structural checks on transform flows.

Every check returns a :class:`CheckReport` with a scalar violation measure and
a pinned threshold; statistical checks report the violation in units of the
propagated standard error.  Witnesses record the worst offending probes so a
failure can be replayed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .core import Dims, Region, Tolerances, as_point, classify_region, in_domain_interior
from .flow import FlowEvaluation, as_flow_source, matrix_exp

__all__ = [
    "CheckReport",
    "LinearFitResult",
    "TestFunction",
    "check_semiflow",
    "check_monotonicity",
    "check_property_A",
    "extract_beta",
    "fit_linearity",
    "posdef_certificate",
    "feller_decay",
    "sample_interior_points",
    "sample_imaginary_points",
    "report_to_json",
]


@dataclass
class CheckReport:
    """Outcome of one verification check.

    ``passed`` is always ``max_violation <= threshold``; witnesses are
    (inputs, observed, expected) triples and must be nonempty on failure.
    """

    check_name: str
    grid_spec: str
    max_violation: float
    threshold: float
    witnesses: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.threshold)

    def require(self) -> "CheckReport":
        if not self.passed:
            raise AssertionError(
                f"check {self.check_name} failed: violation {self.max_violation:.3e} "
                f"> threshold {self.threshold:.3e}; witnesses {self.witnesses[:3]}"
            )
        return self


def _jsonable(obj):
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()] if obj.dtype.kind == "c" else obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def report_to_json(report: CheckReport) -> str:
    payload = {
        "check_name": report.check_name,
        "passed": report.passed,
        "max_violation": report.max_violation,
        "threshold": report.threshold,
        "grid_spec": report.grid_spec,
        "witnesses": _jsonable(report.witnesses),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _top_witnesses(entries, k=5):
    """Keep the k worst (violation, witness) entries, ordered worst first."""
    ranked = sorted(entries, key=lambda e: -e[0])
    return [w for _, w in ranked[:k]]


# ----------------------------------------------------------------------------
# probe construction


def sample_interior_points(dims: Dims, count: int, rng: np.random.Generator,
                           re_range=(-2.0, -0.05), im_range=(-2.0, 2.0)) -> list[np.ndarray]:
    """Random transform arguments strictly inside the half-space."""
    out = []
    for _ in range(count):
        u = np.zeros(dims.d, dtype=np.complex128)
        if dims.m:
            u[dims.I] = rng.uniform(*re_range, dims.m) + 1j * rng.uniform(*im_range, dims.m)
        if dims.n:
            u[dims.J] = 1j * rng.uniform(*im_range, dims.n)
        out.append(u)
    return out


def sample_imaginary_points(dims: Dims, count: int, rng: np.random.Generator,
                            im_range=(-2.0, 2.0)) -> list[np.ndarray]:
    """Random purely imaginary transform arguments."""
    return [1j * rng.uniform(*im_range, dims.d) + 0j for _ in range(count)]


# ----------------------------------------------------------------------------
# flow-identity checks


def check_semiflow(flow_source, t_grid, s_grid, u_set, threshold: float = 1e-8) -> CheckReport:
    """Composition identity of the transform pair over a (t, s, u) grid.

    Both composition orders are exercised: evolving by t then s must match the
    direct evaluation at t+s in the scalar factor and the fiber map, and
    symmetrically with the roles of t and s swapped.
    """
    source = as_flow_source(flow_source)
    ts = sorted({float(t) for t in t_grid})
    ss = sorted({float(s) for s in s_grid})
    entries = []
    max_violation = 0.0
    for u in u_set:
        sums = sorted({t + s for t in ts for s in ss})
        base_times = sorted(set(ts) | set(ss) | set(sums))
        column = {ev.t: ev for row in source.on_grid(base_times, [u]) for ev in row}
        inner_t = {t: source.on_grid(ss, [column[t].psi]) for t in ts}
        inner_s = {s: source.on_grid(ts, [column[s].psi]) for s in ss}
        for t in ts:
            for i_s, s in enumerate(ss):
                direct = column[t + s]
                stepped = inner_t[t][i_s][0]
                v_phi = abs(direct.phi - column[t].phi * stepped.phi)
                v_psi = float(np.max(np.abs(direct.psi - stepped.psi)))
                mirrored = inner_s[s][ts.index(t)][0]
                v_phi_m = abs(direct.phi - column[s].phi * mirrored.phi)
                v_psi_m = float(np.max(np.abs(direct.psi - mirrored.psi)))
                v = max(v_phi, v_psi, v_phi_m, v_psi_m)
                if not math.isfinite(v):
                    v = math.inf
                max_violation = max(max_violation, v)
                if v > threshold:
                    entries.append((v, {
                        "inputs": {"t": t, "s": s, "u": u},
                        "observed": {"phi_gap": v_phi, "psi_gap": v_psi,
                                     "phi_gap_mirrored": v_phi_m, "psi_gap_mirrored": v_psi_m},
                        "expected": f"<= {threshold}",
                    }))
    return CheckReport(
        "semiflow",
        f"t_grid={ts}, s_grid={ss}, {len(list(u_set))} u points, both orders",
        max_violation,
        threshold,
        _top_witnesses(entries),
    )


def check_monotonicity(flow_source, t_grid, pairs, threshold: float = 1e-8) -> CheckReport:
    """Domination of the flow by its evaluation at the real upper argument.

    For pairs (u, w) with Re u <= Re w componentwise (both admissible) the
    modulus of the scalar factor at u is bounded by its value at Re w, and the
    real part of the fiber map at u by the fiber map at Re w; the evaluations
    at the real argument must themselves be real, which is asserted as part of
    the same violation measure.
    """
    source = as_flow_source(flow_source)
    entries = []
    max_violation = 0.0
    for u, w in pairs:
        u_arr = np.asarray(u, dtype=np.complex128)
        w_arr = np.asarray(w, dtype=np.complex128)
        if np.any(u_arr.real > w_arr.real + 1e-14):
            raise ValueError(f"pair ({u_arr}, {w_arr}) violates Re u <= Re w")
        w_real = w_arr.real.astype(np.complex128)
        for t in t_grid:
            ev_u = source.at(float(t), u_arr)
            ev_w = source.at(float(t), w_real)
            realness = max(abs(ev_w.phi.imag), float(np.max(np.abs(ev_w.psi.imag), initial=0.0)))
            v_phi = abs(ev_u.phi) - ev_w.phi.real
            v_psi = float(np.max(ev_u.psi.real - ev_w.psi.real, initial=-np.inf))
            v = max(v_phi, v_psi, realness)
            max_violation = max(max_violation, v)
            if v > threshold:
                entries.append((v, {
                    "inputs": {"t": float(t), "u": u_arr, "w": w_arr},
                    "observed": {"phi_excess": v_phi, "psi_excess": v_psi, "imag_leak": realness},
                    "expected": f"<= {threshold}",
                }))
    return CheckReport(
        "monotonicity",
        f"{len(list(t_grid))} times x {len(list(pairs))} pairs",
        max_violation,
        threshold,
        _top_witnesses(entries),
    )


def check_property_A(flow_source, t_grid, u_set, dims: Dims,
                     tol: Tolerances = Tolerances()) -> CheckReport:
    """The fiber map keeps strictly interior arguments strictly interior.

    Probes must be strictly interior themselves (boundary probes are
    rejected); the violation is the worst excursion of the cone components'
    real part above ``-region_eps`` over the whole grid.
    """
    source = as_flow_source(flow_source)
    for u in u_set:
        if not in_domain_interior(u, dims, tol):
            raise ValueError(f"probe {np.asarray(u)} is not strictly interior")
    entries = []
    max_violation = 0.0
    times = sorted(float(t) for t in t_grid if t > 0)
    for u in u_set:
        for row in source.on_grid(times, [u]):
            ev = row[0]
            v = 0.0
            if not ev.in_Q:
                v = math.inf
            else:
                if dims.m:
                    v = max(0.0, float(np.max(ev.psi.real[dims.I])) + tol.region_eps)
                if dims.n:
                    free_leak = float(np.max(np.abs(ev.psi.real[dims.J])))
                    v = max(v, free_leak - tol.region_eps)
            max_violation = max(max_violation, v)
            if v > 0.0:
                entries.append((v, {
                    "inputs": {"t": ev.t, "u": np.asarray(u)},
                    "observed": {"re_psi_cone": ev.psi.real[dims.I], "re_psi_free": ev.psi.real[dims.J]},
                    "expected": f"cone real parts < -{tol.region_eps}, free real parts within {tol.region_eps}",
                }))
    return CheckReport(
        "property_a",
        f"{len(list(u_set))} interior points x {len(times)} times",
        max_violation,
        0.0,
        _top_witnesses(entries),
    )


# ----------------------------------------------------------------------------
# linear structure on the free components


class MatrixLogError(RuntimeError):
    """Raised when the probed one-step matrix admits no principal logarithm."""


def extract_beta(flow_source, dims: Dims, t_probe: float = 0.5, threshold: float = 1e-8,
                 check_times=(0.3, 0.7, 1.4), check_seed: int = 1234,
                 ) -> tuple[np.ndarray, CheckReport]:
    """Recover the drift matrix of the free components from flow probes.

    Columns of the one-step matrix are the fiber map at ``i e_j`` for free
    unit vectors ``e_j``, divided by i; the drift matrix is its principal
    matrix logarithm over the probe time.  A validation pass on an
    independent (t, u) grid checks the exponential action and the realness of
    the recovered matrix.  For n=0 the matrix is empty and the report is
    vacuously passing.
    """
    n = dims.n
    if n == 0:
        beta = np.zeros((0, 0))
        return beta, CheckReport("property_b", "no free components (n=0), vacuous", 0.0, threshold)
    if t_probe <= 0:
        raise ValueError("t_probe must be positive")
    source = as_flow_source(flow_source)

    cols = []
    for j in range(n):
        e = np.zeros(dims.d, dtype=np.complex128)
        e[dims.m + j] = 1j
        ev = source.at(float(t_probe), e)
        cols.append(ev.psi[dims.J] / 1j)
    m_mat = np.column_stack(cols)
    imag_leak = float(np.max(np.abs(m_mat.imag)))
    m_real = m_mat.real

    eigvals = np.linalg.eigvals(m_real)
    if np.any(np.abs(eigvals) < 1e-300):
        raise MatrixLogError(f"one-step matrix is singular (eigenvalues {eigvals})")
    on_cut = (eigvals.real <= 0) & (np.abs(eigvals.imag) <= 1e-12 * np.abs(eigvals.real))
    if np.any(on_cut):
        raise MatrixLogError(
            f"one-step matrix has eigenvalues on the closed negative real axis ({eigvals})"
        )
    log_m = scipy.linalg.logm(m_real)
    beta_imag = float(np.max(np.abs(log_m.imag))) if np.iscomplexobj(log_m) else 0.0
    beta = (log_m.real if np.iscomplexobj(log_m) else log_m) / t_probe

    rng = np.random.default_rng(check_seed)
    entries = []
    max_violation = max(imag_leak, beta_imag)
    for t in check_times:
        e_tb = matrix_exp(beta, float(t))
        for u in sample_imaginary_points(dims, 3, rng):
            ev = source.at(float(t), u)
            predicted = e_tb @ u[dims.J]
            v = float(np.max(np.abs(ev.psi[dims.J] - predicted), initial=0.0))
            max_violation = max(max_violation, v)
            if v > threshold:
                entries.append((v, {
                    "inputs": {"t": float(t), "u": u},
                    "observed": ev.psi[dims.J],
                    "expected": predicted,
                }))
    report = CheckReport(
        "property_b",
        f"probe t={t_probe}, validation times {list(check_times)} x 3 imaginary points",
        max_violation,
        threshold,
        _top_witnesses(entries),
    )
    return beta, report


@dataclass(frozen=True)
class LinearFitResult:
    """Least-squares linear coefficients of one fiber-map component.

    ``zeta`` is constrained real; any real part of the samples (which a
    genuinely linear imaginary-argument component cannot have) is folded into
    the residual rather than the coefficients.
    """

    component: int
    zeta: np.ndarray
    residual: float
    sample_radius: float


def fit_linearity(samples: Sequence[tuple[np.ndarray, complex]], component: int,
                  k_indices: Sequence[int], radius: float) -> LinearFitResult:
    """Fit psi_component(t, iy) ~ <zeta, i y_K> over real probe vectors y.

    ``samples`` are (y, value) pairs with y supported on ``k_indices`` and
    |y| < radius.  Needs at least as many samples as coefficients.
    """
    k_idx = list(k_indices)
    if len(samples) < len(k_idx):
        raise ValueError(f"need at least {len(k_idx)} samples, got {len(samples)}")
    ys = np.array([np.asarray(y, dtype=float) for y, _ in samples])
    vals = np.array([complex(v) for _, v in samples])
    norms = np.linalg.norm(ys, axis=1)
    if np.any(norms >= radius):
        raise ValueError("samples must lie strictly inside the stated radius")
    off_support = np.delete(ys, k_idx, axis=1)
    if off_support.size and np.max(np.abs(off_support)) > 0:
        raise ValueError("samples must be supported on the fitted index set")
    design = ys[:, k_idx]
    zeta, *_ = np.linalg.lstsq(design, vals.imag, rcond=None)
    fitted = design @ zeta
    residual = float(np.sqrt(np.mean(vals.real**2 + (vals.imag - fitted) ** 2)))
    return LinearFitResult(component, zeta, residual, radius)


# ----------------------------------------------------------------------------
# positive definiteness


def posdef_certificate(theta: Callable[[np.ndarray], complex], probe_pairs,
                       threshold: float = 1e-10) -> CheckReport:
    """Certificate that a candidate characteristic function is positive definite.

    For each probe pair (y, z) the 3x3 matrix with entries theta(t_i - t_j)
    over the points {0, y, -z} must be positive semidefinite.  The violation
    combines the product inequality
    |theta(y+z) - theta(y)theta(z)|^2 <= (1-|theta(y)|^2)(1-|theta(z)|^2),
    the determinant sign, the Hermitian-symmetry defect, and the smallest
    eigenvalue of the (symmetrized) matrix; the eigenvalue term is the one
    that rejects candidates whose modulus exceeds 1, which slip through the
    first two.
    """
    probe_pairs = list(probe_pairs)
    if not probe_pairs:
        raise ValueError("need at least one probe pair")
    zero = np.zeros_like(np.asarray(probe_pairs[0][0], dtype=float))
    th0 = complex(theta(zero))
    if abs(th0 - 1.0) > 1e-12:
        raise ValueError(f"theta(0) must equal 1 (got {th0})")
    entries = []
    max_violation = -math.inf
    for y, z in probe_pairs:
        y_arr = np.asarray(y, dtype=float)
        z_arr = np.asarray(z, dtype=float)
        ty, tz = complex(theta(y_arr)), complex(theta(z_arr))
        tyz = complex(theta(y_arr + z_arr))
        # points t = (0, y, -z); entry (i, j) is theta(t_i - t_j)
        m = np.array([
            [th0, complex(theta(-y_arr)), tz],
            [ty, th0, tyz],
            [complex(theta(-z_arr)), complex(theta(-y_arr - z_arr)), th0],
        ])
        ineq = abs(tyz - ty * tz) ** 2 - (1 - abs(ty) ** 2) * (1 - abs(tz) ** 2)
        det = float(np.linalg.det(m).real)
        herm_defect = float(np.max(np.abs(m - m.conj().T)))
        min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (m + m.conj().T))))
        v = max(ineq, -det, -min_eig, herm_defect)
        max_violation = max(max_violation, v)
        if v > threshold:
            entries.append((v, {
                "inputs": {"y": y_arr, "z": z_arr},
                "observed": {"product_inequality": ineq, "det": det,
                             "min_eigenvalue": min_eig, "hermitian_defect": herm_defect},
                "expected": f"all tests >= -{threshold} (defect <= {threshold})",
            }))
    return CheckReport(
        "posdef",
        f"{len(probe_pairs)} probe pairs",
        max_violation,
        threshold,
        _top_witnesses(entries),
    )


# ----------------------------------------------------------------------------
# Feller decay


_WINDOWS = {
    "bump": lambda s: np.where(np.abs(s) < 1.0, np.exp(-1.0 / np.maximum(1e-300, 1.0 - s**2)), 0.0),
    "hann": lambda s: np.where(np.abs(s) < 1.0, np.cos(0.5 * np.pi * s) ** 2, 0.0),
}


@dataclass(frozen=True)
class TestFunction:
    """Separable test function: exponential in the cone, windowed Fourier in the free part.

    ``u_I`` must have strictly negative real parts; the window is a named
    compactly supported smooth density on the support box, discretized on a
    per-axis trapezoid grid (the integrand vanishes smoothly at the box edge,
    so the trapezoid rule converges superalgebraically).
    """

    u_I: np.ndarray
    window: str = "bump"
    support: tuple = (-2.0, 2.0)
    n_nodes: int = 257

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u_I, dtype=np.complex128))
        object.__setattr__(self, "u_I", u)
        if u.size and np.max(u.real) >= 0:
            raise ValueError("cone arguments of a test function need Re < 0")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}; known: {sorted(_WINDOWS)}")

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights of the normalized windowed density on the box."""
        lo, hi = self.support
        ys = np.linspace(lo, hi, self.n_nodes)
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        g = _WINDOWS[self.window]((ys - mid) / half)
        w = np.full(self.n_nodes, (hi - lo) / (self.n_nodes - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        mass = float(np.sum(w * g))
        return ys, w * g / mass


def feller_decay(model, test_fn: TestFunction, t: float, ray,
                 tol: Tolerances = Tolerances(), flow_source=None,
                 decay_ratio: float = 0.05) -> CheckReport:
    """Decay of the propagated test function along a ray to infinity.

    The time-t expectation of the test function is assembled from the flow by
    Fourier quadrature over the window; along the given ray of states the
    modulus must decay below ``decay_ratio`` of its initial value, and its
    envelope over consecutive thirds of the ray must be nonincreasing (the
    pointwise values oscillate along free-component rays, so monotonicity is
    asserted for the envelope, not per sample).
    """
    dims = model.dims
    if dims.n != 1:
        raise ValueError("the decay probe is implemented for exactly one free component")
    if model.beta is None:
        raise ValueError("model must carry its free-component drift matrix")
    source = as_flow_source(flow_source) if flow_source is not None else None
    if source is None:
        from .flow import flow_source_for

        source = flow_source_for(model, tol)

    ys, gw = test_fn.quadrature()
    u_list = []
    for y in ys:
        u = np.zeros(dims.d, dtype=np.complex128)
        u[dims.I] = test_fn.u_I
        u[dims.m] = 1j * y
        u_list.append(u)
    if t > 0:
        evals = source.on_grid([float(t)], u_list)[0]
    else:
        evals = [FlowEvaluation(0.0, u, 1 + 0j, u.copy(), 0j) for u in u_list]
    phis = np.array([ev.phi for ev in evals])
    psis = np.stack([ev.psi for ev in evals])
    scale = float(matrix_exp(model.beta, float(t))[0, 0])

    ray_pts = [np.asarray(x, dtype=float) for x in ray]
    values = np.empty(len(ray_pts))
    for i, x in enumerate(ray_pts):
        cone_part = np.exp(psis[:, dims.I] @ x[dims.I]) if dims.m else 1.0
        free_phase = np.exp(1j * ys * scale * x[dims.m])
        integrand = phis * np.ravel(cone_part) * free_phase * gw
        values[i] = abs(np.sum(integrand))

    initial = values[0]
    if initial <= 0:
        raise ValueError("test function vanished at the ray start")
    final_ratio = values[-1] / initial
    third = max(1, len(values) // 3)
    env = [float(np.max(values[i * third: (i + 1) * third if i < 2 else len(values)]))
           for i in range(3)]
    env_violation = max(env[1] / env[0] - 1.0, env[2] / env[1] - 1.0)
    max_violation = max(final_ratio - decay_ratio, env_violation)
    witnesses = []
    if max_violation > 0:
        witnesses = [{
            "inputs": {"t": float(t), "ray_start": ray_pts[0], "ray_end": ray_pts[-1]},
            "observed": {"final_ratio": final_ratio, "envelope": env},
            "expected": f"final ratio < {decay_ratio}, nonincreasing envelope",
        }]
    return CheckReport(
        "feller_decay",
        f"t={t}, {len(ray_pts)} ray points, window={test_fn.window} on {test_fn.support}",
        max_violation,
        0.0,
        witnesses,
    )
