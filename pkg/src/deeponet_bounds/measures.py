"""Probability measures on periodic function spaces and empirical covariance spectra.

Three families are supported:

``GaussianKernel``
    Centered Gaussian field with the periodized squared-exponential covariance,
    sampled through its Karhunen-Loeve expansion in the real Fourier basis.
``ParamFourier``
    ``u = mean + sum_k Y_k alpha_k e_k`` with ``Y_k`` iid uniform on [-1, 1].
``ShiftedSine``
    ``u(x) = -sin(x - s)`` with the shift ``s`` uniform on [0, 2pi].
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fourier import TWO_PI, basis_matrix, trig_interpolate, wavenumbers_in_box

FAMILIES = ("GaussianKernel", "ParamFourier", "ShiftedSine")

# Truncations are chosen so the dropped eigenvalues are below this ratio.
KL_TRUNCATION_RATIO = 1e-14


@dataclass(frozen=True)
class PeriodicGrid:
    """Equispaced grid ``x_j = 2 pi j / n`` on the periodic box [0, 2pi]^dim."""

    n: int
    dim: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("grid size must be positive")
        if self.dim not in (1, 2):
            raise ValueError("only dim 1 and 2 are supported")

    @property
    def axis(self):
        return TWO_PI * np.arange(self.n) / self.n

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n**self.dim

    @property
    def weight(self):
        """Trapezoidal quadrature weight of every node."""
        return (TWO_PI / self.n) ** self.dim

    def points(self):
        """Nodes as an array of shape (size, dim), C-ordered like ``values.ravel()``."""
        if self.dim == 1:
            return self.axis[:, None]
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def inner(self, f, g):
        """Quadrature inner product over the trailing grid axes."""
        axes = tuple(range(-self.dim, 0))
        return self.weight * np.sum(np.asarray(f) * np.asarray(g), axis=axes)

    def norm(self, f):
        return np.sqrt(np.maximum(self.inner(f, f), 0.0))


@dataclass(frozen=True)
class MeasureSpec:
    """Tagged description of a probability measure on L2([0, 2pi]^dim).

    Parameters
    ----------
    family : {"GaussianKernel", "ParamFourier", "ShiftedSine"}
    dim : int
    ell : float
        Correlation length of the Gaussian kernel.
    K : int, optional
        Truncation ``|k|_inf <= K`` of the expansion. A default is derived from the
        decay so that dropped modes are negligible at double precision.
    alpha_decay : dict, optional
        ``{"C": C_alpha, "ell": ell}`` giving ``alpha_k = C exp(-ell |k|_inf)`` for
        the ``ParamFourier`` family.
    alpha : tuple of float, optional
        Explicit ``alpha_k`` in enumeration order of the box ``|k|_inf <= K``;
        overrides ``alpha_decay``.
    mean : float
        Constant mean field.
    """

    family: str
    dim: int = 1
    ell: float = 0.5
    K: Optional[int] = None
    alpha_decay: Optional[dict] = None
    alpha: Optional[tuple] = None
    mean: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown measure family {self.family!r}; expected one of {FAMILIES}")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if not self.ell > 0:
            raise ValueError("ell must be positive")
        if self.family == "ShiftedSine" and self.dim != 1:
            raise ValueError("ShiftedSine is one-dimensional")
        if self.alpha is not None:
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
            if any(a < 0 for a in self.alpha):
                raise ValueError("alpha_k must be non-negative")
            if self.K is None:
                raise ValueError("explicit alpha requires K")
            if len(self.alpha) != (2 * self.K + 1) ** self.dim:
                raise ValueError("alpha must have (2K+1)^dim entries")
        if self.alpha_decay is not None:
            decay = dict(self.alpha_decay)
            if decay.get("C", 1.0) < 0 or decay.get("ell", self.ell) <= 0:
                raise ValueError("alpha_decay needs C >= 0 and ell > 0")

    @property
    def truncation(self):
        if self.K is not None:
            return int(self.K)
        if self.family == "GaussianKernel":
            return int(math.ceil(math.sqrt(2.0 * math.log(1.0 / KL_TRUNCATION_RATIO)) / self.ell))
        if self.family == "ParamFourier":
            ell = (self.alpha_decay or {}).get("ell", self.ell)
            return int(math.ceil(math.log(1.0 / KL_TRUNCATION_RATIO) / ell))
        return 1

    def modes(self):
        """Wavenumbers of the expansion and the scale multiplying each latent variable."""
        if self.family == "ShiftedSine":
            raise ValueError("ShiftedSine has no linear latent expansion")
        ks = wavenumbers_in_box(self.truncation, self.dim)
        if self.family == "GaussianKernel":
            return ks, np.sqrt(gaussian_kernel_eigenvalue(self.ell, ks))
        return ks, self.alphas(ks)

    def alphas(self, wavenumbers):
        """``alpha_k`` for the given wavenumbers (``ParamFourier`` only)."""
        wavenumbers = np.atleast_2d(np.asarray(wavenumbers, dtype=int))
        if wavenumbers.shape[1] != self.dim:
            wavenumbers = wavenumbers.reshape(-1, self.dim)
        radius = np.max(np.abs(wavenumbers), axis=1)
        if self.alpha is not None:
            box = wavenumbers_in_box(self.K, self.dim)
            lookup = {tuple(k): a for k, a in zip(box, self.alpha)}
            return np.array([lookup.get(tuple(k), 0.0) for k in wavenumbers])
        decay = self.alpha_decay or {}
        C = float(decay.get("C", 1.0))
        ell = float(decay.get("ell", self.ell))
        out = C * np.exp(-ell * radius)
        return np.where(radius <= self.truncation, out, 0.0)

    def to_dict(self):
        out = {"family": self.family, "ell": self.ell, "K": self.K, "dim": self.dim}
        if self.alpha_decay is not None:
            out["alphaDecay"] = dict(self.alpha_decay)
        if self.alpha is not None:
            out["alpha"] = list(self.alpha)
        if self.mean:
            out["mean"] = self.mean
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {"family", "ell", "K", "alphaDecay", "alpha", "dim", "mean"}
        if unknown:
            raise ValueError(f"unknown MeasureSpec fields: {sorted(unknown)}")
        return cls(
            family=data["family"],
            dim=int(data.get("dim", 1)),
            ell=float(data.get("ell", 0.5)),
            K=None if data.get("K") is None else int(data["K"]),
            alpha_decay=data.get("alphaDecay"),
            alpha=None if data.get("alpha") is None else tuple(data["alpha"]),
            mean=float(data.get("mean", 0.0)),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class FieldSample:
    """Values of a function on a periodic grid, optionally with its generating latent variables."""

    grid: PeriodicGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def analytic(self):
        return "spec" in self.meta and "latent" in self.meta

    def evaluate(self, points):
        """Values at arbitrary points: exact when the latent expansion is known,
        trigonometric interpolation of the grid values otherwise."""
        if self.analytic:
            return evaluate(self.meta["spec"], self.meta["latent"], points)
        return trig_interpolate(self.values, points)


def gaussian_kernel_eigenvalue(ell, k):
    """Covariance eigenvalue ``prod_i sqrt(2 pi) ell exp(-(ell k_i)^2 / 2)`` of the periodized
    squared-exponential kernel for wavenumber(s) ``k`` (last axis = dimension)."""
    k = np.asarray(k, dtype=float)
    one_d = np.sqrt(TWO_PI) * ell * np.exp(-0.5 * (ell * k) ** 2)
    return np.prod(one_d, axis=-1) if k.ndim == 2 else one_d


def gaussian_kernel_eigenvalues(ell, K, dim=1):
    """Map ``k -> lambda_k`` for all ``|k|_inf <= K`` (int keys for dim 1, tuple keys otherwise)."""
    if not ell > 0:
        raise ValueError("ell must be positive")
    ks = wavenumbers_in_box(K, dim)
    lams = gaussian_kernel_eigenvalue(ell, ks)
    if dim == 1:
        return {int(k[0]): float(lam) for k, lam in zip(ks, lams)}
    return {tuple(int(c) for c in k): float(lam) for k, lam in zip(ks, lams)}


def _as_points(points, dim):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        if dim != 1:
            raise ValueError("points must have shape (P, dim)")
        pts = pts[:, None]
    if pts.shape[1] != dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, measure has {dim}")
    return pts


def evaluate(spec, latent, points):
    """Evaluate sample(s) with the given latent variables at ``points``.

    ``latent`` is a vector for one sample or a 2-D array (N, n_latent) for a batch;
    the result has shape (P,) or (N, P).
    """
    pts = _as_points(points, spec.dim)
    latent = np.asarray(latent, dtype=float)
    batched = latent.ndim == 2
    lat = latent if batched else latent[None]
    if spec.family == "ShiftedSine":
        out = -np.sin(pts[None, :, 0] - lat[:, :1])
    else:
        ks, scales = spec.modes()
        out = spec.mean + (lat * scales) @ basis_matrix(ks, pts)
    return out if batched else out[0]


def draw_latent(spec, rng):
    """Latent variables of one sample: Z ~ N(0, I), Y ~ U[-1, 1], or the shift."""
    if spec.family == "ShiftedSine":
        return rng.uniform(0.0, TWO_PI, size=1)
    n_modes = (2 * spec.truncation + 1) ** spec.dim
    if spec.family == "GaussianKernel":
        return rng.standard_normal(n_modes)
    return rng.uniform(-1.0, 1.0, size=n_modes)


def sample_rng(seed, index):
    """Independent stream for sample ``index`` under master ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def sample(spec, grid, rng):
    """Draw one sample of ``spec`` on ``grid``."""
    if grid.dim != spec.dim:
        raise ValueError(f"grid dimension {grid.dim} does not match measure dimension {spec.dim}")
    latent = draw_latent(spec, rng)
    values = evaluate(spec, latent, grid.points()).reshape(grid.shape)
    return FieldSample(grid, values, {"spec": spec, "latent": latent})


def sample_batch(spec, grid, n, seed, start=0):
    """Draw samples ``start, ..., start + n - 1`` of the stream keyed by ``seed``.

    Sample ``i`` depends only on ``(seed, i)``, so prefixes and subsets of a batch
    reproduce exactly (common random numbers).

    Returns
    -------
    values : ndarray of shape (n,) + grid.shape
    latents : ndarray of shape (n, n_latent)
    """
    if grid.dim != spec.dim:
        raise ValueError(f"grid dimension {grid.dim} does not match measure dimension {spec.dim}")
    latents = np.array([draw_latent(spec, sample_rng(seed, start + i)) for i in range(n)])
    values = evaluate(spec, latents, grid.points()).reshape((n,) + grid.shape)
    return values, latents


@dataclass
class SpectrumEstimate:
    """Leading eigenpairs of a (possibly empirical) covariance operator.

    ``eigenvectors[i]`` is a grid function, orthonormal under the quadrature
    ``weights``. ``total_variance`` is the trace, so tail sums beyond the stored
    pairs remain available.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sample_count: int
    mean_field: np.ndarray
    weights: np.ndarray
    total_variance: float
    grid: Optional[PeriodicGrid] = None
    basis_fn: Optional[Callable] = None

    def tail_sum(self, p):
        """``sum_{k > p} lambda_k`` (clipped at zero)."""
        head = float(np.sum(self.eigenvalues[:p]))
        return max(self.total_variance - head, 0.0)

    def truncate(self, p):
        return SpectrumEstimate(
            self.eigenvalues[:p],
            self.eigenvectors[:p],
            self.sample_count,
            self.mean_field,
            self.weights,
            self.total_variance,
            self.grid,
            None if self.basis_fn is None else _truncated(self.basis_fn, p),
        )

    def evaluate(self, points):
        """Eigenfunctions at arbitrary points, shape (p, P)."""
        if self.basis_fn is not None:
            return self.basis_fn(points)[: len(self.eigenvalues)]
        if self.grid is None:
            raise ValueError("off-grid evaluation needs a periodic grid or an analytic basis")
        return trig_interpolate(self.eigenvectors, points)


def _truncated(fn, p):
    return lambda points: fn(points)[:p]


def _stack_samples(samples, grid):
    if isinstance(samples, np.ndarray):
        return samples, grid
    samples = list(samples)
    if not samples:
        raise ValueError("no samples given")
    grid = samples[0].grid
    for s in samples:
        if s.grid != grid:
            raise ValueError("all samples must share the same grid")
    return np.stack([s.values for s in samples]), grid


def empirical_spectrum(samples, p=None, grid=None, weights=None):
    """Eigen-decomposition of the empirical covariance operator of a sample set.

    The covariance is normalized by the number of samples and its eigenproblem is
    posed in L2 with quadrature ``weights`` (trapezoidal weights of ``grid`` by
    default), so eigenvalues approximate those of the integral operator.

    Parameters
    ----------
    samples : sequence of FieldSample or ndarray of shape (N, ...)
    p : int, optional
        Number of eigenpairs to keep; all nonzero pairs when omitted.
    grid : PeriodicGrid, optional
        Grid of array-valued samples.
    weights : ndarray, optional
        Quadrature weights per grid node; overrides the grid weights.

    Returns
    -------
    SpectrumEstimate
    """
    values, grid = _stack_samples(samples, grid)
    n = values.shape[0]
    if n < 2:
        raise ValueError("empirical_spectrum needs at least 2 samples")
    flat = values.reshape(n, -1)
    size = flat.shape[1]
    if weights is None:
        if grid is None:
            raise ValueError("provide a grid or quadrature weights")
        weights = np.full(size, grid.weight)
    weights = np.broadcast_to(np.asarray(weights, dtype=float).ravel(), (size,))
    rank = min(n, size)
    if p is None:
        p = rank
    if p > rank:
        raise ValueError(f"p = {p} exceeds min(sample count, grid size) = {rank}")
    mean = flat.mean(axis=0)
    sqrt_w = np.sqrt(weights)
    A = (flat - mean) * sqrt_w / np.sqrt(n)
    total = float(np.sum(A * A))
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    lams = np.maximum(s[:p] ** 2, 0.0)
    vecs = vt[:p] / sqrt_w
    # fix signs: largest-magnitude entry positive
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(p), idx])
    signs[signs == 0] = 1.0
    vecs = vecs * signs[:, None]
    shape = values.shape[1:]
    return SpectrumEstimate(
        eigenvalues=lams,
        eigenvectors=vecs.reshape((p,) + shape),
        sample_count=n,
        mean_field=mean.reshape(shape),
        weights=weights.reshape(shape),
        total_variance=total,
        grid=grid,
    )


def gaussian_kernel_spectrum(ell, count, grid, K=None):
    """Exact leading eigenpairs of the Gaussian-kernel covariance, in enumeration order
    within equal eigenvalues, with an analytic evaluator for off-grid points."""
    dim = grid.dim
    if K is None:
        K = MeasureSpec("GaussianKernel", dim=dim, ell=ell).truncation
    ks = wavenumbers_in_box(K, dim)
    lams = gaussian_kernel_eigenvalue(ell, ks)
    order = np.argsort(-lams, kind="stable")
    ks, lams = ks[order], lams[order]
    if count > len(ks):
        raise ValueError("count exceeds the truncated expansion")

    def basis_fn(points, ks=ks):
        return basis_matrix(ks, _as_points(points, dim))

    vecs = basis_fn(grid.points())[:count].reshape((count,) + grid.shape)
    spec = SpectrumEstimate(
        eigenvalues=lams[:count],
        eigenvectors=vecs,
        sample_count=0,
        mean_field=np.zeros(grid.shape),
        weights=np.full(grid.shape, grid.weight),
        total_variance=float(lams.sum()),
        grid=grid,
        basis_fn=basis_fn,
    )
    spec.all_eigenvalues = lams
    spec.all_wavenumbers = ks
    return spec
