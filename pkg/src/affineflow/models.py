"""Model catalog: generator pairs, closed-form flows and path samplers.

Three affine families cover the state-space shapes (pure free part, pure cone,
mixed), plus a deliberately non-affine control process used to falsify the
statistical checks.  Samplers draw from one RNG stream per path, derived by
seed-sequence spawning from ``(seed, path_index)``, so results are bit-for-bit
reproducible and independent of how paths are batched.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Dims, as_state
from .flow import FlowEvaluation

__all__ = [
    "GeneratorPair",
    "AffineModel",
    "RealPath",
    "Path",
    "make_levy",
    "make_cir",
    "make_heston_like",
    "make_nonaffine_control",
    "model_from_spec",
    "MODEL_FACTORIES",
    "simulate",
    "sample_grid",
    "state_source",
    "uniform_times",
    "write_paths_csv",
    "read_paths_csv",
]


@dataclass(frozen=True)
class GeneratorPair:
    """The derivative pair of the transform flow at t=0.

    ``F`` maps a transform argument to a complex scalar, ``R`` to a complex
    vector of the same dimension; both must be finite on the admissible
    half-space and satisfy F(0) = 0, R(0) = 0.
    """

    F: Callable[[np.ndarray], complex]
    R: Callable[[np.ndarray], np.ndarray]


@dataclass
class RealPath:
    """A cadlag piecewise-constant record of a path on a sorted time grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.values.ndim != 2:
            raise ValueError("need 1-d times and 2-d values")
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        if len(self.times) == 0 or self.times[0] != 0.0:
            raise ValueError("paths start at time 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def value_at(self, t: float) -> np.ndarray:
        """Piecewise-constant lookup: the value at the largest grid time <= t."""
        if t < self.times[0]:
            raise ValueError(f"time {t} precedes the path start")
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[idx]


class Path(RealPath):
    """A path constrained to the state space (cone components nonnegative)."""

    def __init__(self, times, values, dims: Dims):
        self.dims = dims
        super().__init__(times, values)
        if self.values.shape[1] != dims.d:
            raise ValueError(f"values have {self.values.shape[1]} components, expected {dims.d}")
        if dims.m and np.min(self.values[:, dims.I]) < 0:
            raise ValueError("cone components of a state path must be nonnegative")


@dataclass(frozen=True)
class AffineModel:
    """A catalog entry: dimensions, generator, optional closed flow, sampler.

    ``beta`` is the linear-drift matrix acting on the free components (the
    flow restricted to those components is u_J -> exp(t*beta) u_J).
    ``sampler_kind`` flags whether transitions are sampled exactly or by an
    Euler scheme with full truncation on the cone.
    """

    name: str
    dims: Dims
    gen: GeneratorPair | None
    sampler: object
    sampler_kind: str
    closed_flow: Callable[[float, np.ndarray], FlowEvaluation] | None = None
    beta: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    x0_default: np.ndarray | None = None


# ----------------------------------------------------------------------------
# samplers


class GaussianIncrementSampler:
    """Exact transitions for the homogeneous Gaussian model (pure free part)."""

    supports_antithetic = True

    def __init__(self, drift: np.ndarray, scale: np.ndarray):
        self.drift = drift
        self.scale = scale  # matrix square root of the covariance

    def sample_chunk(self, x0, times, rngs, signs=None):
        dts = np.diff(times)
        sqdt = np.sqrt(dts)
        d = len(x0)
        out = np.empty((len(rngs), len(times), d))
        out[:, 0] = x0
        for p, rng in enumerate(rngs):
            xi = rng.standard_normal((len(dts), d))
            if signs is not None:
                xi *= signs[p]
            incr = dts[:, None] * self.drift + (xi @ self.scale.T) * sqdt[:, None]
            out[p, 1:] = x0 + np.cumsum(incr, axis=0)
        return out


class CirExactSampler:
    """Exact square-root-diffusion transitions via the Poisson-gamma mixture.

    Each step draws N ~ Poisson(nc/2) and then a gamma variate of shape
    df/2 + N, which together realize the scaled noncentral chi-square
    transition law; shape 0 degenerates to the point mass at 0, so the
    absorbing a=0 case is exact as well.
    """

    supports_antithetic = False

    def __init__(self, a: float, b: float, sigma: float):
        self.a = a
        self.b = b
        self.sigma = sigma

    def sample_chunk(self, x0, times, rngs, signs=None):
        dts = np.diff(times)
        ebd = np.exp(-self.b * dts)
        # E(dt) = (1 - e^{-b dt})/b, continuous at b=0
        if self.b == 0.0:
            e_fac = dts.copy()
        else:
            e_fac = -np.expm1(-self.b * dts) / self.b
        c = 0.25 * self.sigma**2 * e_fac
        df2 = 2.0 * self.a / self.sigma**2  # df/2
        out = np.empty((len(rngs), len(times), 1))
        out[:, 0, 0] = x0[0]
        for p, rng in enumerate(rngs):
            x = x0[0]
            row = out[p, :, 0]
            for k in range(len(dts)):
                nc2 = x * ebd[k] / (2.0 * c[k])
                n_mix = rng.poisson(nc2)
                x = 2.0 * c[k] * rng.standard_gamma(df2 + n_mix)
                row[k + 1] = x
        return out


class HestonEulerSampler:
    """Euler scheme with full truncation on the cone component.

    The record grid is refined internally to substeps no longer than
    ``max_dt``; the signed internal volatility state may dip below zero but
    only its positive part enters drift and diffusion, and recorded values
    are clamped onto the state space.
    """

    supports_antithetic = True

    def __init__(self, a, b, sigma, rho, lam, max_dt=1e-3):
        self.a = a
        self.b = b
        self.sigma = sigma
        self.rho = rho
        self.rho_c = math.sqrt(max(0.0, 1.0 - rho**2))
        self.lam = lam
        self.max_dt = max_dt

    def _substep_plan(self, times):
        dts = np.diff(times)
        counts = np.maximum(1, np.ceil(dts / self.max_dt - 1e-12).astype(int))
        return dts, counts

    def sample_chunk(self, x0, times, rngs, signs=None):
        dts, counts = self._substep_plan(times)
        total = int(np.sum(counts))
        c = len(rngs)
        noise = np.empty((c, total, 2))
        for p, rng in enumerate(rngs):
            xi = rng.standard_normal((total, 2))
            if signs is not None:
                xi *= signs[p]
            noise[p] = xi

        out = np.empty((c, len(times), 2))
        out[:, 0, 0] = x0[0]
        out[:, 0, 1] = x0[1]
        v = np.full(c, x0[0])
        y = np.full(c, x0[1])
        pos = 0
        for k in range(len(dts)):
            eta = dts[k] / counts[k]
            se = math.sqrt(eta)
            for _ in range(counts[k]):
                xi1 = noise[:, pos, 0]
                xi2 = noise[:, pos, 1]
                vp = np.maximum(v, 0.0)
                sq = np.sqrt(vp)
                v = v + (self.a - self.b * vp) * eta + self.sigma * sq * se * xi1
                y = y + (-self.lam * y) * eta + sq * se * (self.rho * xi1 + self.rho_c * xi2)
                pos += 1
            out[:, k + 1, 0] = np.maximum(v, 0.0)
            out[:, k + 1, 1] = y
        return out


class SquaredStartBrownianSampler:
    """Control process X_t = x0^2 + W_t for t > 0: Markov in name only.

    Its time-t law depends on the start through x0^2, which breaks the affine
    factorization of the exponential functional; the whole path is generated
    from one Brownian motion so the square map is applied exactly once.
    """

    supports_antithetic = True

    def sample_chunk(self, x0, times, rngs, signs=None):
        dts = np.diff(times)
        sqdt = np.sqrt(dts)
        out = np.empty((len(rngs), len(times), 1))
        out[:, 0, 0] = x0[0]
        base = x0[0] ** 2
        for p, rng in enumerate(rngs):
            xi = rng.standard_normal(len(dts))
            if signs is not None:
                xi *= signs[p]
            out[p, 1:, 0] = base + np.cumsum(xi * sqdt)
        return out


# ----------------------------------------------------------------------------
# factories


def _psd_scale(cov: np.ndarray) -> np.ndarray:
    """Matrix square root of a PSD covariance (tolerant eigenvalue clip)."""
    w, v = np.linalg.eigh(cov)
    if np.min(w) < -1e-10 * max(1.0, np.max(np.abs(w))):
        raise ValueError(f"covariance is not positive semidefinite (eigenvalues {w})")
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T


def make_levy(drift, cov) -> AffineModel:
    """Homogeneous Gaussian model on a pure free part (m=0).

    The fiber map is the identity, the scalar factor exp(t*kappa(u)) with
    kappa(u) = <drift, u> + u' cov u / 2, and transitions are sampled exactly.
    """
    drift = np.atleast_1d(np.asarray(drift, dtype=float))
    n = len(drift)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (n, n):
        raise ValueError(f"covariance must be {n}x{n}, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    scale = _psd_scale(cov)
    dims = Dims(0, n)

    def F(u):
        return complex(drift @ u + 0.5 * (u @ cov @ u))

    def R(u):
        return np.zeros(n, dtype=np.complex128)

    def closed(t, u):
        u_arr = np.asarray(u, dtype=np.complex128)
        log_phi = t * F(u_arr)
        return FlowEvaluation(float(t), u_arr, complex(np.exp(log_phi)), u_arr.copy(), log_phi)

    return AffineModel(
        name="levy",
        dims=dims,
        gen=GeneratorPair(F, R),
        sampler=GaussianIncrementSampler(drift, scale),
        sampler_kind="exact",
        closed_flow=closed,
        beta=np.zeros((n, n)),
        params={"drift": drift.tolist(), "cov": cov.tolist()},
        x0_default=np.zeros(n),
    )


def make_cir(a: float, b: float, sigma: float) -> AffineModel:
    """Square-root diffusion on the half-line (m=1, n=0).

    Flow in closed form: with E(t) = (1 - e^{-bt})/b,

        psi(t, u) = u e^{-bt} / (1 - sigma^2 u E(t)/2)
        log phi(t, u) = -(2a/sigma^2) log(1 - sigma^2 u E(t)/2)

    For Re u <= 0 the log argument stays in the right half-plane, so the
    principal branch is already the continuous one.
    """
    if a < 0:
        raise ValueError("a must be nonnegative")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    dims = Dims(1, 0)
    sig2 = sigma**2

    def F(u):
        return complex(a * u[0])

    def R(u):
        return np.array([0.5 * sig2 * u[0] ** 2 - b * u[0]], dtype=np.complex128)

    def closed(t, u):
        u_arr = np.asarray(u, dtype=np.complex128)
        uu = u_arr[0]
        e_fac = t if b == 0.0 else -math.expm1(-b * t) / b
        w = 1.0 - 0.5 * sig2 * uu * e_fac
        psi = np.array([uu * np.exp(-b * t) / w])
        log_phi = -(2.0 * a / sig2) * np.log(w)
        return FlowEvaluation(float(t), u_arr, complex(np.exp(log_phi)), psi, complex(log_phi))

    return AffineModel(
        name="cir",
        dims=dims,
        gen=GeneratorPair(F, R),
        sampler=CirExactSampler(a, b, sigma),
        sampler_kind="exact",
        closed_flow=closed,
        beta=np.zeros((0, 0)),
        params={"a": a, "b": b, "sigma": sigma},
        x0_default=np.array([1.0]),
    )


def _heston_closed_factory(a, b, sigma, rho):
    """Closed flow for the mixed model without free-component drift (lam=0).

    Solves the scalar Riccati A x^2 + B x + C with A = sigma^2/2,
    B = rho sigma u2 - b, C = u2^2/2 along the branch-stable root convention
    (Re d >= 0, decaying exponentials only), so the principal logarithm is the
    continuous one on the half-space.
    """
    A = 0.5 * sigma**2

    def closed(t, u):
        u_arr = np.asarray(u, dtype=np.complex128)
        u1, u2 = u_arr
        B = rho * sigma * u2 - b
        C = 0.5 * u2 * u2
        d = np.sqrt(B * B - 4.0 * A * C)
        if d.real < 0:
            d = -d
        if abs(d) < 1e-13 * max(1.0, abs(B)):
            # double root
            r = -B / (2.0 * A)
            denom = 1.0 - A * (u1 - r) * t
            psi1 = r + (u1 - r) / denom
            log_phi = a * (r * t - (2.0 / sigma**2) * np.log(denom))
        else:
            rp = (-B + d) / (2.0 * A)
            rm = (-B - d) / (2.0 * A)
            if abs(u1 - rp) < 1e-14 * max(1.0, abs(rp)):
                psi1 = rp
                log_phi = a * rp * t
            else:
                kt = (u1 - rm) / (u1 - rp)
                e = np.exp(-d * t)
                psi1 = (rm - rp * kt * e) / (1.0 - kt * e)
                log_phi = a * (rm * t - (2.0 / sigma**2) * np.log((1.0 - kt * e) / (1.0 - kt)))
        psi = np.array([psi1, u2])
        return FlowEvaluation(float(t), u_arr, complex(np.exp(log_phi)), psi, complex(log_phi))

    return closed


def make_heston_like(a: float, b: float, sigma: float, rho: float, lam: float,
                     euler_dt: float = 1e-3) -> AffineModel:
    """Stochastic-volatility pair (m=1, n=1): cone factor v, free factor y.

        dv = (a - b v) dt + sigma sqrt(v) dW1
        dy = -lam y dt + sqrt(v) (rho dW1 + sqrt(1-rho^2) dW2)

    lam = 0 makes the free component drift-free in the flow (semi-homogeneous
    case, closed flow available); lam != 0 gives the 1x1 drift matrix (-lam).
    """
    if a < 0:
        raise ValueError("a must be nonnegative")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if abs(rho) > 1:
        raise ValueError("rho must lie in [-1, 1]")
    dims = Dims(1, 1)
    sig2 = sigma**2

    def F(u):
        return complex(a * u[0])

    def R(u):
        u1, u2 = u[0], u[1]
        r1 = 0.5 * sig2 * u1 * u1 + (rho * sigma * u2 - b) * u1 + 0.5 * u2 * u2
        r2 = -lam * u2
        return np.array([r1, r2], dtype=np.complex128)

    return AffineModel(
        name="heston",
        dims=dims,
        gen=GeneratorPair(F, R),
        sampler=HestonEulerSampler(a, b, sigma, rho, lam, max_dt=euler_dt),
        sampler_kind="euler-full-truncation",
        closed_flow=_heston_closed_factory(a, b, sigma, rho) if lam == 0.0 else None,
        beta=np.array([[-lam]]),
        params={"a": a, "b": b, "sigma": sigma, "rho": rho, "lam": lam, "euler_dt": euler_dt},
        x0_default=np.array([0.3, 0.5]),
    )


def make_nonaffine_control() -> AffineModel:
    """Non-affine control process on the line: X_t = x0^2 + W_t for t > 0.

    Carries no generator or flow; it exists so the statistical checks have a
    process that must fail the affine factorization.
    """
    return AffineModel(
        name="nonaffine_control",
        dims=Dims(0, 1),
        gen=None,
        sampler=SquaredStartBrownianSampler(),
        sampler_kind="exact",
        closed_flow=None,
        beta=None,
        params={},
        x0_default=np.array([0.7]),
    )


MODEL_FACTORIES: dict[str, Callable[..., AffineModel]] = {
    "levy": make_levy,
    "cir": make_cir,
    "heston": make_heston_like,
    "nonaffine_control": make_nonaffine_control,
}


def model_from_spec(name: str, params: dict | None = None) -> AffineModel:
    """Build a catalog model from a name and parameter map; unknown names fail hard."""
    if name not in MODEL_FACTORIES:
        raise ValueError(f"unknown model {name!r}; known: {sorted(MODEL_FACTORIES)}")
    return MODEL_FACTORIES[name](**(params or {}))


# ----------------------------------------------------------------------------
# simulation


def uniform_times(horizon: float, grid_step: float) -> np.ndarray:
    """The uniform grid 0, h, 2h, ..., horizon (horizon must sit on the grid)."""
    if horizon <= 0 or grid_step <= 0:
        raise ValueError("horizon and grid_step must be positive")
    n_steps = int(round(horizon / grid_step))
    if n_steps < 1 or abs(n_steps * grid_step - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of grid_step {grid_step}")
    return np.arange(n_steps + 1) * grid_step


def _path_stream(seed, index: int) -> np.random.SeedSequence:
    """The ``index``-th spawned child of ``seed``, built without spawning predecessors.

    Equivalent to ``SeedSequence(seed).spawn(index + 1)[index]`` — spawn-key
    children are addressable directly, which lets callers materialize any
    slice of the path streams without paying for the whole family.
    """
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.SeedSequence(entropy=root.entropy,
                                  spawn_key=tuple(root.spawn_key) + (index,))


def sample_grid(model: AffineModel, x0, record_times, n_paths: int, seed,
                antithetic: bool = False, chunk_size: int = 4096,
                path_offset: int = 0, total_paths: int | None = None) -> np.ndarray:
    """Sample path values on ``record_times`` for ``n_paths`` paths.

    Returns an array of shape (n_paths, len(record_times), d).  Path p always
    consumes stream p regardless of chunking, so chunk size never changes the
    result; with ``antithetic`` paths 2k and 2k+1 share stream k with negated
    Gaussian draws (only meaningful for normal-driven samplers).  The
    ``path_offset``/``total_paths`` pair asks for a window of a larger run:
    the result equals rows [offset, offset+n) of the full ``total_paths``
    array bit for bit, so callers can stream big ensembles in slices.
    """
    times = np.asarray(record_times, dtype=float)
    if times.ndim != 1 or len(times) < 2 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("record_times must be strictly increasing and start at 0")
    x0_arr = as_state(x0, model.dims)
    if n_paths < 1:
        raise ValueError("need at least one path")
    if antithetic and not getattr(model.sampler, "supports_antithetic", False):
        raise ValueError(f"sampler of model {model.name!r} does not support antithetic pairing")
    total = n_paths + path_offset if total_paths is None else int(total_paths)
    if path_offset < 0 or path_offset + n_paths > total:
        raise ValueError(f"window [{path_offset}, {path_offset + n_paths}) exceeds {total} paths")

    if antithetic:
        stream_idx = [(path_offset + p) // 2 for p in range(n_paths)]
        sign_of = np.array([1.0 if (path_offset + p) % 2 == 0 else -1.0 for p in range(n_paths)])
    else:
        stream_idx = [path_offset + p for p in range(n_paths)]
        sign_of = None

    out = np.empty((n_paths, len(times), model.dims.d))
    for lo in range(0, n_paths, chunk_size):
        hi = min(lo + chunk_size, n_paths)
        rngs = [np.random.default_rng(_path_stream(seed, stream_idx[p])) for p in range(lo, hi)]
        signs = sign_of[lo:hi] if sign_of is not None else None
        out[lo:hi] = model.sampler.sample_chunk(x0_arr, times, rngs, signs)
    return out


def simulate(model: AffineModel, x0, horizon: float, grid_step: float, n_paths: int,
             seed, antithetic: bool = False) -> list[Path]:
    """Simulate paths on a uniform grid, materialized as Path objects."""
    times = uniform_times(horizon, grid_step)
    values = sample_grid(model, x0, times, n_paths, seed, antithetic=antithetic)
    return [Path(times, values[p], model.dims) for p in range(n_paths)]


def state_source(model: AffineModel):
    """Adapter: (x0, record_times, n_paths, seed) -> value array for a model."""

    def source(x0, record_times, n_paths, seed):
        return sample_grid(model, x0, record_times, n_paths, seed)

    return source


# ----------------------------------------------------------------------------
# path CSV (long format with a path_id column)


def write_paths_csv(paths: list[RealPath], file_path, transformed: bool = False) -> None:
    """Write paths in long format: path_id, t, x1..xd (one row per grid point)."""
    if not paths:
        raise ValueError("no paths to write")
    d = paths[0].d
    with open(file_path, "w", newline="") as fh:
        if transformed:
            fh.write("# frame=transformed\n")
        writer = csv.writer(fh)
        writer.writerow(["path_id", "t"] + [f"x{i + 1}" for i in range(d)])
        for pid, path in enumerate(paths):
            for t, row in zip(path.times, path.values):
                writer.writerow([pid, repr(float(t))] + [repr(float(v)) for v in row])


def read_paths_csv(file_path, dims: Dims | None = None) -> list[RealPath]:
    """Read a long-format path CSV back into path objects.

    Returns Path objects when ``dims`` is given (state-space validation on),
    plain RealPath otherwise.
    """
    groups: dict[int, list[tuple[float, list[float]]]] = {}
    with open(file_path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if header[:2] != ["path_id", "t"]:
        raise ValueError(f"unexpected path CSV header: {header}")
    for row in body:
        pid = int(row[0])
        groups.setdefault(pid, []).append((float(row[1]), [float(v) for v in row[2:]]))
    out: list[RealPath] = []
    for pid in sorted(groups):
        pts = sorted(groups[pid], key=lambda p: p[0])
        times = np.array([p[0] for p in pts])
        values = np.array([p[1] for p in pts])
        out.append(Path(times, values, dims) if dims is not None else RealPath(times, values))
    return out
