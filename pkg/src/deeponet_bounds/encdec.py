"""Encoders (point values, cell averages), decoders and encoding-error estimators."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import erfc
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .fourier import TWO_PI, trig_interpolate, upsample, wavenumbers_in_box, basis_matrix
from .measures import FieldSample, PeriodicGrid, evaluate, sample_batch
from .stats import jackknife_of_mean, rms_with_stderr


class SingularSensorError(ValueError):
    """The sensor matrix is too ill-conditioned to define a pseudoinverse decoder."""


@dataclass(frozen=True)
class SensorSet:
    """Sensor locations in [0, 2pi]^d.

    ``kind`` is ``"equispaced"``, ``"random"`` or ``"cellCenters"``; cell centers
    carry the cell width ``dx``.
    """

    locations: np.ndarray
    kind: str = "equispaced"
    dx: Optional[float] = None

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        if np.any(loc < 0) or np.any(loc > TWO_PI):
            raise ValueError("sensor locations must lie in [0, 2pi]^d")
        object.__setattr__(self, "locations", loc)

    @property
    def m(self):
        return self.locations.shape[0]

    @property
    def dim(self):
        return self.locations.shape[1]

    @classmethod
    def equispaced(cls, m, dim=1):
        """``m`` equispaced points per axis (``m**dim`` sensors), starting at 0."""
        grid = PeriodicGrid(m, dim)
        return cls(grid.points(), "equispaced")

    @classmethod
    def random(cls, M, rng, dim=1):
        return cls(rng.uniform(0.0, TWO_PI, size=(M, dim)), "random")

    @classmethod
    def cell_centers(cls, m):
        dx = TWO_PI / m
        return cls((np.arange(m) + 0.5) * dx, "cellCenters", dx)


# ---------------------------------------------------------------------------
# encoders


def _evaluate_at(u, points):
    if isinstance(u, FieldSample):
        return u.evaluate(points)
    if callable(u):
        return np.asarray(u(points), dtype=float)
    raise TypeError("u must be a FieldSample or a callable")


def encode_pointwise(u, sensors):
    """Point values ``(u(x_1), ..., u(x_m))``.

    ``u`` is a :class:`FieldSample` (exact evaluation when its latent expansion is
    known, trigonometric interpolation otherwise) or a callable on an array of
    points of shape (m, d).
    """
    pts = sensors.locations
    if callable(u) and not isinstance(u, FieldSample):
        return np.asarray(u(pts[:, 0] if sensors.dim == 1 else pts), dtype=float)
    return _evaluate_at(u, pts)


def encode_cell_average(u, cells, subpoints=8):
    """Cell averages ``(1/dx) int_{C_j} u`` by composite midpoint quadrature.

    Parameters
    ----------
    u : FieldSample or callable
    cells : SensorSet
        Cell centers with width ``dx`` (one-dimensional).
    subpoints : int
        Midpoint subcells per cell (at least 8).
    """
    if cells.kind != "cellCenters" or cells.dx is None:
        raise ValueError("encode_cell_average needs a cellCenters sensor set")
    if subpoints < 8:
        raise ValueError("use at least 8 subpoints per cell")
    offsets = ((np.arange(subpoints) + 0.5) / subpoints - 0.5) * cells.dx
    pts = (cells.locations[:, 0][:, None] + offsets[None, :]).ravel()
    vals = _evaluate_at(u, pts[:, None]) if isinstance(u, FieldSample) else np.asarray(u(pts), dtype=float)
    return vals.reshape(cells.m, subpoints).mean(axis=1)


class PointwiseEncoder(TransformerMixin, BaseEstimator):
    """Transformer mapping periodic grid data to values at sensor locations.

    Parameters
    ----------
    sensors : SensorSet
    grid : PeriodicGrid
        Grid of the incoming rows of ``X`` (flattened ``grid.shape``).
    """

    def __init__(self, sensors=None, grid=None):
        self.sensors = sensors
        self.grid = grid

    def fit(self, X=None, y=None):
        if self.sensors is None or self.grid is None:
            raise ValueError("PointwiseEncoder needs sensors and grid")
        if self.sensors.dim != self.grid.dim:
            raise ValueError("sensor and grid dimensions differ")
        self.n_features_in_ = self.grid.size
        return self

    def transform(self, X):
        X = check_array(X, ensure_min_samples=1)
        if X.shape[1] != self.grid.size:
            raise ValueError(f"expected {self.grid.size} grid values per row, got {X.shape[1]}")
        values = X.reshape((-1,) + self.grid.shape)
        idx = self._on_grid_index()
        if idx is not None:
            return X[:, idx]
        pts = self.sensors.locations
        return trig_interpolate(values, pts if self.grid.dim > 1 else pts[:, 0])

    def _on_grid_index(self):
        h = TWO_PI / self.grid.n
        pos = self.sensors.locations / h
        ipos = np.rint(pos)
        if not np.allclose(pos, ipos, atol=1e-9):
            return None
        ipos = ipos.astype(int) % self.grid.n
        if self.grid.dim == 1:
            return ipos[:, 0]
        return ipos[:, 0] * self.grid.n + ipos[:, 1]


class CellAverageEncoder(TransformerMixin, BaseEstimator):
    """Transformer mapping 1-D periodic grid data to averages over ``m`` equal cells.

    Grid values are interpolated trigonometrically at ``subpoints`` midpoints per cell.
    """

    def __init__(self, m=16, grid=None, subpoints=8):
        self.m = m
        self.grid = grid
        self.subpoints = subpoints

    def fit(self, X=None, y=None):
        if self.grid is None or self.grid.dim != 1:
            raise ValueError("CellAverageEncoder needs a 1-D grid")
        self.cells_ = SensorSet.cell_centers(self.m)
        self.n_features_in_ = self.grid.size
        return self

    def transform(self, X):
        X = check_array(X)
        offsets = ((np.arange(self.subpoints) + 0.5) / self.subpoints - 0.5) * self.cells_.dx
        pts = (self.cells_.locations[:, 0][:, None] + offsets[None, :]).ravel()
        vals = trig_interpolate(X, pts)
        return vals.reshape(X.shape[0], self.m, self.subpoints).mean(axis=2)


# ---------------------------------------------------------------------------
# decoders


def shrink(y):
    """Clamp to [-1, 1]."""
    return np.clip(y, -1.0, 1.0)


def dft_coefficients(v):
    """Discrete Fourier coefficients ``u_k``, ``|k| <= K``, of data on ``m = 2K + 1``
    equispaced nodes ``x_j = 2 pi j / m`` (ordered k = -K..K)."""
    v = np.asarray(v, dtype=float)
    m = v.shape[-1]
    if m % 2 == 0:
        raise ValueError("decode_dft needs an odd number of sensors m = 2K + 1")
    c = np.fft.fft(v, axis=-1) / m
    return np.fft.fftshift(c, axes=-1)


def decode_dft(v, n_out=None, dim=1):
    """Trigonometric interpolant of equispaced data, returned on a finer periodic grid.

    Parameters
    ----------
    v : ndarray
        Values at ``m = 2K + 1`` equispaced sensors per axis (shape ``(m,)*dim``).
    n_out : int, optional
        Output grid size per axis; ``4 m`` by default.

    Returns
    -------
    FieldSample
    """
    v = np.asarray(v, dtype=float)
    m = v.shape[-1]
    if m % 2 == 0:
        raise ValueError("decode_dft needs an odd number of sensors m = 2K + 1")
    n_out = 4 * m if n_out is None else n_out
    values = upsample(v, n_out, dim=dim)
    return FieldSample(PeriodicGrid(n_out, dim), values, {"decoder": "dft", "m": m})


class DFTDecoder:
    """Batch pseudo-spectral decoder for ``m = 2K + 1`` equispaced sensors per axis."""

    def __init__(self, m, dim=1):
        if m % 2 == 0:
            raise ValueError("decode_dft needs an odd number of sensors m = 2K + 1")
        self.m = m
        self.dim = dim

    def decode(self, V, grid):
        V = np.asarray(V, dtype=float).reshape((-1,) + (self.m,) * self.dim)
        if grid.n < self.m:
            raise ValueError("output grid coarser than the sensor grid")
        return upsample(V, grid.n, dim=self.dim)


@dataclass
class PseudoinverseDecoder:
    """Least-squares projection onto the leading eigenfunctions from sensor values.

    Attributes
    ----------
    phi : ndarray of shape (m_eig, M)
        Eigenfunctions at the sensors, ``phi[i, j] = phi_i(X_j)``.
    pinv : ndarray of shape (m_eig, M)
        ``(phi phi^T)^{-1} phi``.
    sigma_min : float
        Smallest singular value of ``(|D| / M) phi phi^T``.
    """

    phi: np.ndarray
    pinv: np.ndarray
    sigma_min: float
    sensors: SensorSet
    basis_fn: Callable

    @property
    def m_eig(self):
        return self.phi.shape[0]

    def coefficients(self, V):
        return np.asarray(V, dtype=float) @ self.pinv.T

    def decode(self, V, grid):
        coeffs = self.coefficients(V)
        basis = self.basis_fn(grid.points())
        out = coeffs @ basis
        return out.reshape(out.shape[:-1] + grid.shape)


def make_pseudoinverse_decoder(eigs, sensors, threshold=1e-8):
    """Build the pseudoinverse decoder for the first eigenfunctions of ``eigs``.

    Parameters
    ----------
    eigs : SpectrumEstimate or callable
        Provides ``m_eig`` eigenfunctions; a callable maps points (P, d) to an
        (m_eig, P) array.
    sensors : SensorSet
        ``M >= m_eig`` locations.
    threshold : float
        Minimum accepted ``sigma_min((|D| / M) phi phi^T)``.
    """
    basis_fn = eigs if callable(eigs) else eigs.evaluate
    phi = np.asarray(basis_fn(sensors.locations), dtype=float)
    m_eig, M = phi.shape
    if M < m_eig:
        raise ValueError(f"need M >= m_eig sensors, got M = {M} < {m_eig}")
    gram = phi @ phi.T
    volume = TWO_PI**sensors.dim
    sigma_min = float(np.linalg.svd(volume / M * gram, compute_uv=False)[-1])
    if sigma_min < threshold:
        raise SingularSensorError(f"sigma_min = {sigma_min:.3e} below threshold {threshold:.1e}")
    pinv = np.linalg.solve(gram, phi)
    return PseudoinverseDecoder(phi, pinv, sigma_min, sensors, basis_fn)


def decode_shrink(v, spec, n_out=None):
    """Shrink-based decoder for the ``ParamFourier`` family.

    Subtracts the mean, takes discrete Fourier coefficients in the real basis,
    divides by ``alpha_k`` and clamps to [-1, 1], then rebuilds ``u(.; Y_hat)``.

    Parameters
    ----------
    v : ndarray
        Values on the regular grid with ``2N + 1`` points per axis.
    spec : MeasureSpec
        ``ParamFourier`` measure supplying ``alpha_k`` and the mean.
    n_out : int, optional
        Output grid size per axis (``4 (2N + 1)`` by default).

    Returns
    -------
    field : FieldSample
        ``u(.; Y_hat)`` with ``Y_hat`` as its latent vector (analytic).
    y_hat : ndarray
        Recovered coefficients aligned with ``spec.modes()``.
    """
    if spec.family != "ParamFourier":
        raise ValueError("decode_shrink needs a ParamFourier measure")
    v = np.asarray(v, dtype=float)
    dim = spec.dim
    m = v.shape[-1]
    if m % 2 == 0 or v.shape != (m,) * dim:
        raise ValueError("input must live on a (2N+1)^d regular grid")
    N = (m - 1) // 2
    grid = PeriodicGrid(m, dim)
    centered = v.ravel() - spec.mean
    ks_n = wavenumbers_in_box(N, dim)
    coeff = (TWO_PI**dim / grid.size) * (basis_matrix(ks_n, grid.points()) @ centered)
    alphas = spec.alphas(ks_n)
    negligible = np.abs(coeff) <= 1e-12 * max(1.0, np.max(np.abs(coeff)))
    bad = (alphas == 0) & ~negligible
    if np.any(bad):
        k = ks_n[np.argmax(bad)]
        raise ValueError(f"alpha_k = 0 for retained mode k = {tuple(k)} with nonzero coefficient")
    with np.errstate(divide="ignore", invalid="ignore"):
        y_tilde = np.where(alphas > 0, coeff / np.where(alphas > 0, alphas, 1.0), 0.0)
    y_local = shrink(y_tilde)
    ks_all, _ = spec.modes()
    lookup = {tuple(k): y for k, y in zip(ks_n, y_local)}
    y_hat = np.array([lookup.get(tuple(k), 0.0) for k in ks_all])
    n_out = 4 * m if n_out is None else n_out
    out_grid = PeriodicGrid(n_out, dim)
    values = evaluate(spec, y_hat, out_grid.points()).reshape(out_grid.shape)
    return FieldSample(out_grid, values, {"spec": spec, "latent": y_hat}), y_hat


# ---------------------------------------------------------------------------
# error estimators


def aliasing_error(eigs, decoder, tail_range=None, ratio=1e-12):
    """``sqrt(sum_{l > m} lambda_l ||pinv phi_l(X)||^2)`` over the spectral tail.

    Parameters
    ----------
    eigs : SpectrumEstimate
        Eigenvalues with an evaluator covering the tail (e.g. the full analytic
        Gaussian-kernel spectrum).
    decoder : PseudoinverseDecoder
    tail_range : (int, int), optional
        Index range of tail eigenpairs; starts at ``decoder.m_eig`` and runs until
        ``lambda_l / lambda_1 < ratio`` by default.
    """
    lams = np.asarray(eigs.eigenvalues, dtype=float)
    if tail_range is None:
        start = decoder.m_eig
        keep = np.nonzero(lams >= ratio * lams[0])[0]
        stop = int(keep[-1]) + 1 if keep.size else start
        tail_range = (start, max(start, stop))
    start, stop = tail_range
    if stop <= start:
        return 0.0
    B = eigs.evaluate(decoder.sensors.locations)[start:stop]
    C = B @ decoder.pinv.T
    return float(np.sqrt(np.sum(lams[start:stop] * np.sum(C * C, axis=1))))


@dataclass
class MCEstimate:
    """Monte-Carlo RMS estimate with its jackknife standard error and per-sample errors."""

    estimate: float
    stderr: float
    n: int
    per_sample: np.ndarray

    def squared(self):
        """Mean of squared errors and its standard error."""
        return jackknife_of_mean(self.per_sample**2)

    @classmethod
    def from_errors(cls, errors):
        errors = np.asarray(errors, dtype=float)
        est, se = rms_with_stderr(errors)
        return cls(float(est), float(se), errors.size, errors)


def encoding_error_mc(spec, encoder, decoder, n_mc, seed, grid=None, start=0):
    """RMS of ``||D(E(u)) - u||_{L2}`` over fresh samples of ``spec``.

    Parameters
    ----------
    spec : MeasureSpec
    encoder : callable or transformer
        Maps a batch of grid values (N, size) to sensor values (N, M); objects with
        a ``transform`` method are used through it.
    decoder : object with ``decode(V, grid)``
    n_mc : int
        Number of samples (>= 2).
    seed : int
        Master seed; sample i uses stream ``(seed, start + i)``.
    grid : PeriodicGrid, optional
        Reference grid for samples and norms.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    if grid is None:
        raise ValueError("a reference grid is required")
    values, _ = sample_batch(spec, grid, n_mc, seed, start)
    flat = values.reshape(n_mc, -1)
    encode = encoder.transform if hasattr(encoder, "transform") else encoder
    decoded = decoder.decode(encode(flat), grid)
    errors = grid.norm(decoded.reshape(values.shape) - values)
    return MCEstimate.from_errors(errors)


def gaussian_encoding_bound(ell, m):
    """Closed-form bound ``sqrt(4 pi erfc(floor(m/2) ell / sqrt 2))`` for the DFT pair."""
    return float(np.sqrt(4.0 * np.pi * erfc((m // 2) * ell / np.sqrt(2.0))))


def random_sensor_count(m, dim=1, kappa=4, omega_sq=None):
    """``ceil(kappa |D| m omega^2 log m)`` sensors; ``omega^2 = 1/pi^d`` for the Fourier basis."""
    omega_sq = (1.0 / np.pi) ** dim if omega_sq is None else omega_sq
    return int(np.ceil(kappa * TWO_PI**dim * m * omega_sq * np.log(m)))
