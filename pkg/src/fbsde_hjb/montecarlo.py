"""Jump-diffusion Monte Carlo for the forward state and backward reconstruction.

Every path owns an independent Philox4x64 stream keyed by ``(seed, path)``,
so results do not depend on how paths are split across worker threads.
"""
from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np

from .benchmarks import tail_integral
from .driver import _coupling_args
from .errors import InvalidProblemError, NonFiniteError
from .field import DecouplingField, lift_K, lift_Z
from .model import JumpMeasure, ProblemSpec

CHUNK = 2048


def path_stream(seed: int, path: int) -> np.random.Generator:
    """Generator for one path; identical for a given ``(seed, path)`` pair."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, path], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _map_chunks(fn, n_paths: int, threads: int):
    starts = list(range(0, n_paths, CHUNK))
    spans = [(s, min(s + CHUNK, n_paths)) for s in starts]
    if threads <= 1 or len(spans) == 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), spans))


def draw_noise(seed: int, n_paths: int, n_steps: int, dt: float, measure: JumpMeasure,
               threads: int = 1):
    """Brownian increments ``(paths, steps)`` and per-atom jump counts ``(paths, steps, A)``."""
    rates = measure.weights * dt
    A = measure.n_atoms
    dB = np.empty((n_paths, n_steps))
    counts = np.zeros((n_paths, n_steps, A), dtype=np.int64)
    sq = math.sqrt(dt)

    def work(a, b):
        for p in range(a, b):
            g = path_stream(seed, p)
            dB[p] = g.standard_normal(n_steps) * sq
            if A:
                counts[p] = g.poisson(rates, size=(n_steps, A))

    _map_chunks(work, n_paths, threads)
    return dB, counts


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated paths of ``(X, Y, Z, K, u)`` plus the noise that drove them.

    ``X`` and ``Y`` have ``steps + 1`` columns; ``dB``, ``u`` and ``Z`` have
    one column per step; ``jump_counts`` and ``K`` carry a trailing atom axis.
    """

    n_paths: int
    dt: float
    times: np.ndarray
    X: np.ndarray
    dB: np.ndarray
    jump_counts: np.ndarray
    u: np.ndarray
    seed: int
    control_policy_id: str
    measure: JumpMeasure
    coupling: DecouplingField | None = None
    Y: np.ndarray | None = None
    Z: np.ndarray | None = None
    K: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.dB.shape[1]

    @property
    def jump_marks(self) -> list[list[tuple[int, int]]]:
        """Per path, ``(time index, atom index)`` for every jump (repeated by count)."""
        marks = []
        for p in range(self.n_paths):
            steps, atoms = np.nonzero(self.jump_counts[p])
            row = []
            for n, a in zip(steps, atoms):
                row.extend([(int(n), int(a))] * int(self.jump_counts[p, n, a]))
            marks.append(row)
        return marks

    def compensated_increments(self) -> np.ndarray:
        return self.jump_counts - self.measure.weights * self.dt

    def stats(self) -> dict:
        XT = self.X[:, -1]
        n = self.n_paths
        out = {
            "n_paths": n,
            "n_steps": self.n_steps,
            "dt": self.dt,
            "seed": self.seed,
            "policy": self.control_policy_id,
            "X_T_mean": float(XT.mean()),
            "X_T_std": float(XT.std(ddof=1)) if n > 1 else 0.0,
            "X_T_std_err": float(XT.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
            "dB_mean": float(self.dB.mean()),
            "dB_var": float(self.dB.var()),
            "jumps_per_path_mean": float(self.jump_counts.sum(axis=(1, 2)).mean()),
        }
        return out


class Policy(NamedTuple):
    fn: Callable
    policy_id: str


def as_policy(policy, spec: ProblemSpec) -> Policy:
    """Normalize a constant, callable ``u(t, x)`` or solve report into a policy."""
    if isinstance(policy, Policy):
        return policy
    if hasattr(policy, "control_field") and hasattr(policy, "field"):
        grid = policy.field.grid
        holder = DecouplingField(grid, policy.control_field)
        ctrl = spec.controls

        def from_report(t, x):
            return ctrl.project(holder.interpolate(holder.y_values, t, x))

        digest = hashlib.sha256(policy.control_field.tobytes()).hexdigest()[:8]
        return Policy(from_report, f"control-field:{grid.n_steps}x{grid.n_x}:{digest}")
    if callable(policy):
        return Policy(policy, f"callable:{getattr(policy, '__name__', 'policy')}")
    c = float(policy)
    return Policy(lambda t, x: np.full(np.shape(x), c), f"constant:{c!r}")


def _step_count(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9:
        raise InvalidProblemError(f"dt={dt} does not divide the horizon T={T}")
    return n


def simulate_forward(spec: ProblemSpec, policy, n_paths: int, dt: float, seed: int = 42,
                     *, coupling: DecouplingField | None = None, threads: int = 1,
                     x0: float | None = None) -> PathBundle:
    """Euler-Maruyama for the controlled forward equation with compensated jumps.

    Per step: ``X += alpha dt + beta dB + sum_a gamma_a (N_a - w_a dt)``.
    When ``coupling`` is given, the coefficients receive ``(y, z, k)`` read
    from that field at the current state; otherwise those arguments are zero.
    """
    if n_paths < 1:
        raise InvalidProblemError("need at least one path")
    M = _step_count(spec.T, dt)
    dt = spec.T / M
    pol = as_policy(policy, spec)
    nu = spec.jumps
    w = nu.weights
    c = spec.coefficients
    times = np.linspace(0.0, spec.T, M + 1)
    dB, counts = draw_noise(seed, n_paths, M, dt, nu, threads)

    X = np.empty((n_paths, M + 1))
    U = np.empty((n_paths, M))
    X[:, 0] = spec.x0 if x0 is None else x0
    for n in range(M):
        t = times[n]
        x = X[:, n]
        u = np.broadcast_to(np.asarray(pol.fn(t, x), dtype=float), x.shape)
        bad = ~np.isfinite(u)
        if bad.any():
            p = int(np.flatnonzero(bad)[0])
            raise NonFiniteError(f"policy undefined at t={t:g}, x={x[p]:g} (path {p})")
        U[:, n] = u
        y, z, k = _coupling_args(coupling, t, x, nu.n_atoms)
        step = c.alpha(t, x, y, z, k, u) * dt + c.beta(t, x, y, z, k, u) * dB[:, n]
        for a, zeta in enumerate(nu.zetas):
            step = step + c.gamma(t, x, y, z, k, u, zeta) * (counts[:, n, a] - w[a] * dt)
        X[:, n + 1] = x + step
        bad = ~np.isfinite(X[:, n + 1])
        if bad.any():
            raise NonFiniteError(f"state became non-finite on path {int(np.flatnonzero(bad)[0])}")
    return PathBundle(n_paths, dt, times, X, dB, counts, U, int(seed), pol.policy_id, nu, coupling)


def reconstruct_backward(field: DecouplingField, bundle: PathBundle, spec: ProblemSpec) -> PathBundle:
    """Fill ``Y = y(t, X)``, ``Z = z + y' beta`` and ``K`` via the jump lift."""
    if field.mode != "deterministic":
        raise InvalidProblemError("reconstruction expects a deterministic field")
    c = spec.coefficients
    nu = spec.jumps
    M = bundle.n_steps
    Y = np.empty_like(bundle.X)
    Z = np.empty((bundle.n_paths, M))
    K = np.empty((bundle.n_paths, M, nu.n_atoms))
    for n in range(M + 1):
        t = bundle.times[n]
        x = bundle.X[:, n]
        Y[:, n] = field.interpolate(field.y_values, t, x)
        if n == M:
            break
        u = bundle.u[:, n]
        yf = Y[:, n]
        zf = field.interpolate(field.z_values, t, x)
        kf = field.interpolate(field.k_values, t, x)
        yp = field.derivatives_at(t, x).y_prime
        beta = np.broadcast_to(c.beta(t, x, yf, zf, kf, u), x.shape)
        Z[:, n] = lift_Z(zf, yp, beta)
        for a, zeta in enumerate(nu.zetas):
            gam = np.broadcast_to(c.gamma(t, x, yf, zf, kf, u, zeta), x.shape)
            K[:, n, a] = lift_K(field, t, x, gam, a)
    return replace(bundle, Y=Y, Z=Z, K=K)


class BSDEResidual(NamedTuple):
    rms: float
    mean: float
    max_abs: float
    integrated_rms: float
    terminal_mismatch: float


def bsde_residual(spec: ProblemSpec, bundle: PathBundle) -> BSDEResidual:
    """Per-step defect of the backward equation along reconstructed paths.

    ``r_n = Y_{n+1} - Y_n + g_n dt - Z_n dB_n - sum_a K_{n,a} dN~_{n,a}``.
    ``rms`` is over all paths and steps; ``integrated_rms`` is the RMS over
    paths of the summed defect ``sum_n r_n``; ``terminal_mismatch`` is
    ``max |Y_M - h(X_M)|``.
    """
    if bundle.Y is None or bundle.Z is None or bundle.K is None:
        raise InvalidProblemError("bundle has no reconstructed Y/Z/K; run reconstruct_backward")
    c = spec.coefficients
    dN = bundle.compensated_increments()
    r = np.empty(bundle.dB.shape)
    for n in range(bundle.n_steps):
        t = bundle.times[n]
        x, y = bundle.X[:, n], bundle.Y[:, n]
        g = np.broadcast_to(c.g_driver(t, x, y, bundle.Z[:, n], bundle.K[:, n], bundle.u[:, n]),
                            x.shape)
        r[:, n] = (bundle.Y[:, n + 1] - y + g * bundle.dt - bundle.Z[:, n] * bundle.dB[:, n]
                   - (bundle.K[:, n] * dN[:, n]).sum(axis=-1))
    term = np.abs(bundle.Y[:, -1] - np.broadcast_to(c.h_terminal(bundle.X[:, -1]), bundle.Y[:, -1].shape))
    total = r.sum(axis=1)
    return BSDEResidual(
        float(np.sqrt(np.mean(r**2))), float(r.mean()), float(np.abs(r).max()),
        float(np.sqrt(np.mean(total**2))), float(term.max()),
    )


@dataclass(frozen=True)
class GirsanovEstimate:
    entropy_hat: float
    std_err: float
    n_paths: int
    closed_form: float
    gamma_mean: float
    gamma_std_err: float

    @property
    def z_score(self) -> float:
        diff = self.entropy_hat - self.closed_form
        if self.std_err == 0:
            return 0.0 if diff == 0 else math.inf
        return diff / self.std_err


def girsanov_entropy(b_curve, sigma_curve, T: float, n_paths: int, dt: float, seed: int = 42,
                     threads: int = 1) -> GirsanovEstimate:
    """Monte Carlo relative entropy of the density ``Gamma(T)``.

    ``log Gamma`` is stepped exactly per interval:
    ``log Gamma += -theta dB - theta^2 dt / 2`` with ``theta = b / sigma``
    at the left end point. The estimate is the sample mean of
    ``Gamma(T) ln Gamma(T)``; ``closed_form`` is the Simpson value of
    ``int_0^T theta^2 / 2``.
    """
    b = b_curve if callable(b_curve) else (lambda t, c=float(b_curve): c + 0.0 * np.asarray(t))
    s = sigma_curve if callable(sigma_curve) else (lambda t, c=float(sigma_curve): c + 0.0 * np.asarray(t))
    lattice = np.linspace(0.0, T, 1001)
    if np.min(np.abs(s(lattice))) <= 1e-8:
        raise InvalidProblemError("volatility too close to zero for the density")
    M = _step_count(T, dt)
    dt = T / M
    times = np.linspace(0.0, T, M + 1)[:-1]
    theta = np.broadcast_to(b(times) / s(times), times.shape)
    drift = -0.5 * np.sum(theta**2) * dt
    log_gamma = np.empty(n_paths)
    sq = math.sqrt(dt)

    def work(a, z):
        for p in range(a, z):
            g = path_stream(seed, p)
            log_gamma[p] = drift - np.dot(theta, g.standard_normal(M)) * sq

    _map_chunks(work, n_paths, threads)
    gam = np.exp(log_gamma)
    vals = gam * log_gamma
    closed = tail_integral(lambda t: 0.5 * (b(t) / s(t)) ** 2, 0.0, T)
    se = float(vals.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    gse = float(gam.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return GirsanovEstimate(float(vals.mean()), se, n_paths, float(closed), float(gam.mean()), gse)


def write_bundle_csv(bundle: PathBundle, path):
    """One row per path and time: ``path, t, X, Y, Z, K_1..K_A``."""
    A = bundle.measure.n_atoms
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t", "X", "Y", "Z"] + [f"K_{a + 1}" for a in range(A)])
        for p in range(bundle.n_paths):
            for n, t in enumerate(bundle.times):
                y = "" if bundle.Y is None else format(bundle.Y[p, n], ".17g")
                inside = n < bundle.n_steps
                z = format(bundle.Z[p, n], ".17g") if bundle.Z is not None and inside else ""
                ks = ([format(v, ".17g") for v in bundle.K[p, n]] if bundle.K is not None and inside
                      else [""] * A)
                w.writerow([p, format(t, ".17g"), format(bundle.X[p, n], ".17g"), y, z] + ks)
