"""Ground-truth solution operators.

Forced pendulum (RK4), periodic variable-coefficient elliptic problem (finite
differences + conjugate gradients), Allen-Cahn (implicit-explicit finite
differences), scalar conservation laws (Lax-Friedrichs), the exact entropy
solution of Burgers' equation for shifted-sine data, and a masked integral
functional.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .fourier import TWO_PI


class ConvergenceError(RuntimeError):
    """An iterative solver did not reach its tolerance."""


# ---------------------------------------------------------------------------
# Pendulum


def solve_pendulum(forcing, gamma=1.0, T=1.0, steps=100):
    """Integrate ``v1' = v2, v2' = -gamma sin(v1) + u(t)`` from ``v(0) = 0`` with classical RK4.

    Parameters
    ----------
    forcing : callable
        ``forcing(t)`` returns the forcing at time ``t``; a vector of shape (N,)
        integrates N independent forcings at once.
    gamma, T : float
    steps : int
        Number of fixed steps of size ``T / steps``.

    Returns
    -------
    t : ndarray of shape (steps + 1,)
    v : ndarray of shape (steps + 1, 2) or (steps + 1, N, 2)
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if not T > 0:
        raise ValueError("T must be positive")
    h = T / steps
    t = np.linspace(0.0, T, steps + 1)
    u0 = np.asarray(forcing(0.0), dtype=float)
    v = np.zeros(u0.shape + (2,))
    out = np.empty((steps + 1,) + v.shape)
    out[0] = v

    def rhs(s, v, u):
        return np.stack([v[..., 1], -gamma * np.sin(v[..., 0]) + u], axis=-1)

    u_start = u0
    for n in range(steps):
        s = t[n]
        u_mid = np.asarray(forcing(s + 0.5 * h), dtype=float)
        u_end = np.asarray(forcing(s + h), dtype=float)
        k1 = rhs(s, v, u_start)
        k2 = rhs(s, v + 0.5 * h * k1, u_mid)
        k3 = rhs(s, v + 0.5 * h * k2, u_mid)
        k4 = rhs(s, v + h * k3, u_end)
        v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[n + 1] = v
        u_start = u_end
    return t, out


# ---------------------------------------------------------------------------
# Elliptic


def _elliptic_apply(a_half, u, dx):
    out = np.zeros_like(u)
    for axis, ah in enumerate(a_half):
        forward = np.roll(u, -1, axis=axis) - u
        flux = ah * forward
        out -= (flux - np.roll(flux, 1, axis=axis)) / dx**2
    return out


def conjugate_gradient(apply, b, tol=1e-10, maxiter=None, project=None):
    """Conjugate gradients for a symmetric positive (semi-)definite operator.

    ``project`` maps iterates back onto the subspace where the operator is
    definite. Stops when ``||r|| <= tol * ||b||``.

    Returns
    -------
    x : ndarray
    iterations : int
    """
    project = project if project is not None else (lambda z: z)
    b = project(b)
    maxiter = maxiter if maxiter is not None else 10 * b.size
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    p = r.copy()
    rr = np.vdot(r, r)
    for it in range(1, maxiter + 1):
        Ap = project(apply(p))
        alpha = rr / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        rr_new = np.vdot(r, r)
        if np.sqrt(rr_new) <= tol * bnorm:
            return x, it
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise ConvergenceError(f"CG stalled at relative residual {np.sqrt(rr) / bnorm:.3e} after {maxiter} iterations")


def solve_elliptic(a, f, tol=1e-10, maxiter=None):
    """Solve ``-div(a grad u) = f`` on the periodic box with zero-mean ``u``.

    Second-order centered differences with face coefficients averaged from the
    nodes; the singular system is solved by CG on the mean-zero subspace.

    Parameters
    ----------
    a, f : ndarray or FieldSample
        Node values on a periodic grid of shape (n,) or (n, n). The mean of
        ``f`` is removed before solving.
    tol : float
        Relative residual tolerance.

    Returns
    -------
    ndarray
        Zero-mean solution values on the grid.
    """
    a = np.asarray(getattr(a, "values", a), dtype=float)
    f = np.asarray(getattr(f, "values", f), dtype=float)
    if a.shape != f.shape:
        raise ValueError("a and f must live on the same grid")
    if np.min(a) <= 0:
        raise ValueError(f"coefficient is not coercive: min a = {np.min(a):.3e}")
    dx = TWO_PI / a.shape[0]
    a_half = [0.5 * (a + np.roll(a, -1, axis=ax)) for ax in range(a.ndim)]

    def project(z):
        return z - z.mean()

    u, _ = conjugate_gradient(lambda z: _elliptic_apply(a_half, z, dx), f - f.mean(), tol, maxiter, project)
    return u - u.mean()


# ---------------------------------------------------------------------------
# Allen-Cahn


def allen_cahn_nonlinearity(v):
    return v - v**3


def laplacian_symbol(m, dx):
    """Eigenvalues of the periodic second-difference matrix in FFT order."""
    k = np.arange(m)
    return -4.0 / dx**2 * np.sin(np.pi * k / m) ** 2


def resolvent_matrix(m, dt, dx=None):
    """Dense ``(I - dt D)^{-1}`` for the periodic 1-D second-difference matrix ``D``."""
    dx = TWO_PI / m if dx is None else dx
    D = (np.diag(np.full(m, -2.0)) + np.diag(np.ones(m - 1), 1) + np.diag(np.ones(m - 1), -1)) / dx**2
    D[0, -1] = D[-1, 0] = 1.0 / dx**2
    if m == 2:
        D = np.array([[-2.0, 2.0], [2.0, -2.0]]) / dx**2
    return np.linalg.inv(np.eye(m) - dt * D)


def apply_resolvent(v, dt, dx):
    """``(I - dt D)^{-1} v`` along the last axis via the DFT diagonalization of ``D``."""
    m = v.shape[-1]
    symbol = 1.0 / (1.0 - dt * laplacian_symbol(m, dx))
    return np.fft.ifft(np.fft.fft(v, axis=-1) * symbol, axis=-1).real


def solve_allen_cahn(U0, dt, n_steps, dx=None, nonlinearity=allen_cahn_nonlinearity, check=True):
    """Run ``U^{k+1} = R (U^k + dt f(U^k))`` with ``R = (I - dt D)^{-1}`` on a periodic 1-D grid.

    Parameters
    ----------
    U0 : ndarray of shape (..., m)
        Initial grid values (leading axes are a batch).
    dt : float
        Time step, at most 1/2.
    n_steps : int
    dx : float, optional
        Grid spacing; ``2 pi / m`` by default.
    nonlinearity : callable
        Pointwise reaction term, ``v - v^3`` by default.
    check : bool
        Enforce ``|U0| <= 1`` and ``dt <= 1/2``.
    """
    U = np.array(U0, dtype=float)
    m = U.shape[-1]
    dx = TWO_PI / m if dx is None else dx
    if check:
        if not 0 < dt <= 0.5:
            raise ValueError(f"dt = {dt} outside (0, 1/2]")
        if np.max(np.abs(U)) > 1.0 + 1e-12:
            raise ValueError("initial data must satisfy |U0| <= 1")
    symbol = 1.0 / (1.0 - dt * laplacian_symbol(m, dx))
    for _ in range(n_steps):
        U = np.fft.ifft(np.fft.fft(U + dt * nonlinearity(U), axis=-1) * symbol, axis=-1).real
    return U


# ---------------------------------------------------------------------------
# Scalar conservation laws


FLUXES = {
    "burgers": (lambda u: 0.5 * u * u, lambda u: u),
    "linear": (lambda u: u, lambda u: np.ones_like(u)),
}


def lxf_step(u, dt, dx, flux="burgers"):
    f, _ = FLUXES[flux]
    up = np.roll(u, -1, axis=-1)
    um = np.roll(u, 1, axis=-1)
    return 0.5 * (up + um) - 0.5 * dt / dx * (f(up) - f(um))


def solve_conslaw_lxf(u0, T, cfl=0.9, flux="burgers", dx=None, callback=None):
    """Lax-Friedrichs for ``u_t + f(u)_x = 0`` on a periodic grid of cell averages.

    The step is recomputed every iteration so that ``max|f'(u)| dt / dx <= cfl``;
    the last step is shortened to land exactly on ``T``. A batch of initial data
    (leading axes) shares the most restrictive step.

    Parameters
    ----------
    callback : callable, optional
        Called as ``callback(u, t)`` after every step.
    """
    if not 0 < cfl <= 1:
        raise ValueError("cfl must lie in (0, 1]")
    u = np.array(u0, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial data must be finite")
    dx = TWO_PI / u.shape[-1] if dx is None else dx
    _, df = FLUXES[flux]
    t = 0.0
    while t < T:
        speed = np.max(np.abs(df(u)))
        dt = T - t if speed == 0 else min(cfl * dx / speed, T - t)
        u = lxf_step(u, dt, dx, flux)
        t = T if dt == T - t else t + dt
        if callback is not None:
            callback(u, t)
    return u


def total_variation(u):
    return np.sum(np.abs(np.roll(u, -1, axis=-1) - u), axis=-1)


def cell_averages_of_shifted_sine(m, shift=0.0):
    """Exact cell averages of ``-sin(x - shift)`` on m equal cells of [0, 2pi]."""
    edges = TWO_PI * np.arange(m + 1) / m
    dx = TWO_PI / m
    shift = np.asarray(shift, dtype=float)[..., None]
    return (np.cos(edges[1:] - shift) - np.cos(edges[:-1] - shift)) / dx


# ---------------------------------------------------------------------------
# Burgers: exact solution for -sin(x - shift)


def _shock_foot(t):
    # foot x0* > 0 of the characteristic reaching the stationary shock at time t
    if t <= 1.0:
        return 0.0
    return brentq(lambda x: t * np.sin(x) - x, np.arccos(1.0 / t), np.pi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def burgers_exact_shifted_sine(shift, t, points, tol=1e-13, maxiter=200):
    """Entropy solution of Burgers' equation at time ``t`` for ``u0 = -sin(x - shift)``.

    The data is odd about ``shift``, so the shock that forms at ``t = 1`` stays at
    ``x = shift``. For ``xi = x - shift`` in (0, pi] the foot ``x0`` of the
    characteristic solves ``x0 - t sin(x0) = xi`` on the branch ``[x0*, pi]`` and the
    solution is ``-sin(x0)``; negative ``xi`` follows by odd symmetry. At the shock
    itself the value is the mean of the two states, 0.

    Parameters
    ----------
    shift : float or ndarray of shape (N,)
    t : float
        Time in [0, pi/2].
    points : ndarray of shape (P,)

    Returns
    -------
    ndarray of shape (P,) or (N, P)
    """
    if not 0 <= t <= np.pi / 2 + 1e-14:
        raise ValueError("implemented for 0 <= t <= pi/2")
    shift_arr = np.atleast_1d(np.asarray(shift, dtype=float))
    x = np.asarray(points, dtype=float)
    xi = np.mod(x[None, :] - shift_arr[:, None] + np.pi, TWO_PI) - np.pi
    a_abs = np.abs(xi)
    lo_val = _shock_foot(t)
    lo = np.full_like(a_abs, lo_val)
    hi = np.full_like(a_abs, np.pi)
    x0 = np.clip(a_abs + t * np.sin(a_abs), lo, hi)
    converged = False
    for _ in range(maxiter):
        F = x0 - t * np.sin(x0) - a_abs
        done = np.abs(F) <= tol
        if np.all(done):
            converged = True
            break
        lo = np.where(F < 0, x0, lo)
        hi = np.where(F > 0, x0, hi)
        dF = 1.0 - t * np.cos(x0)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x0 - F / dF
        bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
        x0 = np.where(done, x0, np.where(bad, 0.5 * (lo + hi), newton))
        if np.all(hi - lo <= 1e-15):
            converged = True
            break
    if not converged:
        F = np.abs(x0 - t * np.sin(x0) - a_abs)
        worst = np.unravel_index(np.argmax(F), F.shape)
        raise ConvergenceError(f"Newton failed at x = {x[worst[1]]:.6f} (residual {F[worst]:.2e})")
    out = -np.sign(xi) * np.sin(x0)
    if t > 1.0:
        out = np.where(xi == 0.0, 0.0, out)
    return out if np.ndim(shift) else out[0]


# ---------------------------------------------------------------------------
# Linear functional


def integral_functional(u, mask, weight=None):
    """Masked trapezoidal quadrature ``sum_{x in mask} w u(x)`` on a periodic grid.

    ``u`` may be a batch with leading axes; ``mask`` matches the trailing grid axes.
    """
    values = np.asarray(getattr(u, "values", u), dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if values.shape[-mask.ndim :] != mask.shape:
        raise ValueError("mask does not match the grid")
    if weight is None:
        weight = (TWO_PI / mask.shape[0]) ** mask.ndim
    axes = tuple(range(-mask.ndim, 0))
    return weight * np.sum(values * mask, axis=axes)


def triangle_mask(n):
    """Default 2-D integration region: the triangle with vertices (pi/2, pi/2), (3pi/2, pi/2), (3pi/2, 3pi/2)."""
    x = TWO_PI * np.arange(n) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    return (X >= np.pi / 2) & (X <= 3 * np.pi / 2) & (Y >= np.pi / 2) & (Y <= X)


# ---------------------------------------------------------------------------
# Operator descriptors


@dataclass(frozen=True)
class OperatorSpec:
    """Tagged description of a ground-truth operator and its discretization.

    ``tag`` is one of ``Pendulum``, ``Elliptic``, ``AllenCahn``, ``ConsLaw`` or
    ``IntegralFunctional``; ``params`` holds the tag-specific settings (see
    :data:`OPERATOR_DEFAULTS`).
    """

    tag: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in OPERATOR_DEFAULTS:
            raise ValueError(f"unknown operator {self.tag!r}")
        merged = dict(OPERATOR_DEFAULTS[self.tag])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.tag}: {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        if "T" in merged and not merged["T"] > 0:
            raise ValueError("T must be positive")
        if self.tag == "AllenCahn" and not 0 < merged["dt"] <= 0.5:
            raise ValueError("AllenCahn needs 0 < dt <= 1/2")
        if self.tag == "ConsLaw" and not 0 < merged["cfl"] <= 1:
            raise ValueError("cfl must lie in (0, 1]")

    def to_dict(self):
        return {"tag": self.tag, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data):
        return cls(data["tag"], dict(data.get("params", {})))

    def output_grid(self):
        """Output nodes (n_out, n_dim) and their quadrature weights."""
        p = self.params
        if self.tag == "Pendulum":
            t = np.linspace(0.0, p["T"], p["steps"] + 1)
            w = np.full(t.size, p["T"] / p["steps"])
            w[[0, -1]] *= 0.5
            return t[:, None], w
        if self.tag == "IntegralFunctional":
            return np.zeros((1, 1)), np.ones(1)
        n = p["gridN"]
        x = TWO_PI * np.arange(n) / n
        return x[:, None], np.full(n, TWO_PI / n)

    def input_grid(self):
        """Grid on which input functions are discretized for this operator."""
        from .measures import PeriodicGrid

        p = self.params
        if self.tag == "Pendulum":
            return PeriodicGrid(p["gridN"], 1)
        if self.tag == "IntegralFunctional":
            return PeriodicGrid(p["gridN"], 2)
        return PeriodicGrid(p["gridN"], 1)

    def apply(self, spec, latents, input_grid=None):
        """Evaluate the operator on a batch of samples given by their latent variables.

        Inputs are evaluated exactly from their expansions; the exact Burgers
        solution is used for shifted-sine data when ``exact`` is set.

        Returns
        -------
        ndarray of shape (N, n_out)
        """
        from . import measures

        p = self.params
        latents = np.atleast_2d(latents)
        if self.tag == "Pendulum":
            T = p["T"]

            def forcing(t):
                return measures.evaluate(spec, latents, np.array([TWO_PI * t / T]))[:, 0]

            _, v = solve_pendulum(forcing, p["gamma"], T, p["steps"])
            return v[..., p["component"]].T
        if self.tag == "ConsLaw" and spec.family == "ShiftedSine":
            n = p["gridN"]
            if p["exact"]:
                return burgers_exact_shifted_sine(latents[:, 0], p["T"], TWO_PI * np.arange(n) / n)
            return solve_conslaw_lxf(cell_averages_of_shifted_sine(n, latents[:, 0]), p["T"], p["cfl"], p["flux"])
        grid = input_grid or self.input_grid()
        vals = measures.evaluate(spec, latents, grid.points()).reshape((-1,) + grid.shape)
        return self.apply_values(vals, grid)

    def apply_values(self, values, grid=None):
        """Evaluate the operator on a batch of inputs given by periodic grid values.

        Off-grid input values (pendulum forcing times) use trigonometric interpolation.
        Allen-Cahn inputs are clamped to [-1, 1] so decoded data that overshoots
        slightly stays admissible.
        """
        from .fourier import trig_interpolate, upsample

        p = self.params
        grid = grid or self.input_grid()
        values = np.asarray(values, dtype=float).reshape((-1,) + grid.shape)
        if self.tag == "Pendulum":
            T = p["T"]

            def forcing(t):
                return trig_interpolate(values, np.array([TWO_PI * t / T]))[:, 0]

            _, v = solve_pendulum(forcing, p["gamma"], T, p["steps"])
            return v[..., p["component"]].T
        if self.tag == "IntegralFunctional":
            return integral_functional(values, triangle_mask(grid.n))[:, None]
        n = p["gridN"]
        if grid.n != n:
            if grid.n > n:
                raise ValueError(f"input grid ({grid.n}) finer than the operator grid ({n})")
            values = upsample(values, n)
        if self.tag == "Elliptic":
            x = TWO_PI * np.arange(n) / n
            f = np.cos(x) if p["f"] == "cos" else np.asarray(p["f"], dtype=float)
            return np.array([solve_elliptic(a, f, p["tol"]) for a in values])
        if self.tag == "AllenCahn":
            steps = int(round(p["T"] / p["dt"]))
            return solve_allen_cahn(np.clip(values, -1.0, 1.0), p["T"] / steps, steps)
        return solve_conslaw_lxf(values, p["T"], p["cfl"], p["flux"])


OPERATOR_DEFAULTS = {
    "Pendulum": {"gamma": 1.0, "T": 1.0, "steps": 100, "component": 0, "gridN": 64},
    "Elliptic": {"f": "cos", "tol": 1e-10, "gridN": 64},
    "AllenCahn": {"T": 0.5, "dt": 0.01, "gridN": 64},
    "ConsLaw": {"flux": "burgers", "T": np.pi / 2, "gridN": 256, "cfl": 0.9, "exact": True},
    "IntegralFunctional": {"gridN": 64},
}
