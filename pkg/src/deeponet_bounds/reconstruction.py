"""Affine trunk reconstructions, dual-basis projections and reconstruction errors.

Output functions are stored as values on a fixed set of output nodes together with
their quadrature weights, so the same code serves periodic grids and time grids.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import eval_legendre
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .encdec import MCEstimate
from .fourier import TWO_PI, basis_matrix, enumerate_wavenumbers
from .measures import empirical_spectrum

MAX_GRAM_CONDITION = 1e12
TRUNK_KINDS = ("fourier", "legendre", "pca", "neural")


class IllConditionedBasisError(ValueError):
    """Gram matrix of a trunk basis is numerically singular."""


@dataclass
class TrunkBasis:
    """Affine basis ``tau_0, tau_1..tau_p`` sampled on the output nodes.

    Attributes
    ----------
    members : ndarray of shape (p, n_out)
    bias : ndarray of shape (n_out,)
    weights : ndarray of shape (n_out,)
        Quadrature weights of the output nodes.
    tag : str
        One of ``fourier``, ``legendre``, ``pca``, ``neural``.
    """

    members: np.ndarray
    bias: np.ndarray
    weights: np.ndarray
    tag: str = "neural"

    def __post_init__(self):
        self.members = np.atleast_2d(np.asarray(self.members, dtype=float))
        n_out = self.members.shape[1]
        self.bias = np.zeros(n_out) if self.bias is None else np.asarray(self.bias, dtype=float).ravel()
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=float), (n_out,)).copy()
        if self.members.shape[0] < 1:
            raise ValueError("a trunk basis needs p >= 1 members")
        if self.bias.shape != (n_out,):
            raise ValueError("bias and members live on different output grids")
        if self.tag not in TRUNK_KINDS:
            raise ValueError(f"unknown trunk tag {self.tag!r}")

    @property
    def p(self):
        return self.members.shape[0]

    def gram(self):
        return (self.members * self.weights) @ self.members.T


@dataclass
class ProjectionOperator:
    """Dual members ``tau*_k`` with ``<tau_l, tau*_k> = delta_lk`` and the bias reference."""

    duals: np.ndarray
    bias: np.ndarray
    weights: np.ndarray

    @property
    def p(self):
        return self.duals.shape[0]


def inner(f, g, weights):
    return np.sum(np.asarray(f) * np.asarray(g) * weights, axis=-1)


def reconstruct(alpha, basis):
    """``tau_0 + sum_k alpha_k tau_k`` on the output nodes; ``alpha`` may be a batch (N, p)."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[-1] != basis.p:
        raise ValueError(f"expected {basis.p} coefficients, got {alpha.shape[-1]}")
    return basis.bias + alpha @ basis.members


def dual_basis(basis, max_condition=MAX_GRAM_CONDITION):
    """Dual basis ``tau*_k = sum_l (G^{-1})_{kl} tau_l``.

    Raises
    ------
    IllConditionedBasisError
        If the Gram matrix condition number reaches ``max_condition``.
    """
    G = basis.gram()
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond >= max_condition:
        raise IllConditionedBasisError(f"Gram matrix condition number {cond:.3e} >= {max_condition:.1e}")
    duals = np.linalg.solve(G, basis.members)
    return ProjectionOperator(duals, basis.bias.copy(), basis.weights.copy())


def project(u, proj):
    """Coefficients ``<u - tau_0, tau*_k>``; ``u`` may be a batch (N, n_out)."""
    u = np.asarray(u, dtype=float)
    return (u - proj.bias) * proj.weights @ proj.duals.T


def pca_reconstruction(samples, p, weights):
    """Optimal affine reconstruction from pushforward samples.

    Parameters
    ----------
    samples : ndarray of shape (N, n_out)
    p : int
    weights : float or ndarray
        Output quadrature weights.

    Returns
    -------
    basis : TrunkBasis
        Empirical mean as bias and leading covariance eigenvectors as members.
    proj : ProjectionOperator
        Orthogonal projection (duals equal the members).
    """
    samples = np.asarray(samples, dtype=float)
    samples = samples.reshape(samples.shape[0], -1)
    w = np.broadcast_to(np.asarray(weights, dtype=float), (samples.shape[1],))
    spectrum = empirical_spectrum(samples, p=p, weights=w)
    basis = TrunkBasis(spectrum.eigenvectors, spectrum.mean_field, w, "pca")
    proj = ProjectionOperator(basis.members.copy(), basis.bias.copy(), basis.weights.copy())
    return basis, proj


class PCATrunk(TransformerMixin, BaseEstimator):
    """Transformer projecting output functions onto their leading principal components.

    Parameters
    ----------
    n_components : int
    weights : float or ndarray
        Quadrature weights of the output nodes.
    """

    def __init__(self, n_components=8, weights=1.0):
        self.n_components = n_components
        self.weights = weights

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        self.basis_, self.projection_ = pca_reconstruction(X, self.n_components, self.weights)
        self.spectrum_ = empirical_spectrum(X, weights=self.basis_.weights)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return project(check_array(X), self.projection_)

    def inverse_transform(self, A):
        check_is_fitted(self, "basis_")
        return reconstruct(check_array(A), self.basis_)


def _orthonormalize(V, weights):
    # Weighted Gram-Schmidt (QR of sqrt(w) V^T) preserving the leading span order.
    sw = np.sqrt(weights)
    Q, R = np.linalg.qr((V * sw).T)
    Q = Q * np.sign(np.diag(R))
    return (Q.T / sw)


def analytic_trunk(kind, p, nodes, weights, T=TWO_PI):
    """Fourier or Legendre trunk on the output nodes, bias zero.

    Parameters
    ----------
    kind : {"fourier", "legendre"}
    p : int
    nodes : ndarray of shape (n_out,) or (n_out, d)
        Output nodes in [0, T]^d.
    weights : float or ndarray
        Output quadrature weights.
    T : float
        Interval length; nodes are mapped to [0, 2pi] for the Fourier trunk.

    Notes
    -----
    Legendre members are the shifted polynomials ``P_n(2t/T - 1)`` orthonormalized
    under the discrete quadrature, so their Gram matrix is the identity to rounding.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    nodes = np.asarray(nodes, dtype=float)
    pts = nodes[:, None] if nodes.ndim == 1 else nodes
    w = np.broadcast_to(np.asarray(weights, dtype=float), (pts.shape[0],))
    if kind == "fourier":
        dim = pts.shape[1]
        ks = enumerate_wavenumbers(p, dim)
        scale = TWO_PI / T
        members = basis_matrix(ks, pts * scale) * scale ** (dim / 2)
    elif kind == "legendre":
        if pts.shape[1] != 1:
            raise ValueError("legendre trunk is one-dimensional")
        s = 2.0 * pts[:, 0] / T - 1.0
        raw = np.array([eval_legendre(n, s) * np.sqrt((2 * n + 1) / T) for n in range(p)])
        members = _orthonormalize(raw, w)
    else:
        raise ValueError(f"unknown analytic trunk {kind!r}")
    return TrunkBasis(members, None, w, kind)


def reconstruction_error_mc(samples, basis, proj):
    """RMS of ``||R(P(v_i)) - v_i||`` over pushforward samples, with jackknife stderr."""
    samples = np.asarray(samples, dtype=float)
    samples = samples.reshape(samples.shape[0], -1)
    if samples.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    residual = reconstruct(project(samples, proj), basis) - samples
    errors = np.sqrt(np.maximum(inner(residual, residual, basis.weights), 0.0))
    return MCEstimate.from_errors(errors)


def spectral_lower_bound(eigenvalues, p, total=None):
    """``sqrt(sum_{k > p} lambda_k)``.

    ``total`` (the trace) may be given when only the leading eigenvalues are stored.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size > 1 and np.any(np.diff(lam) > 1e-12 * max(lam[0], 1.0)):
        raise ValueError("eigenvalues must be nonincreasing")
    tail = (total - lam[:p].sum()) if total is not None else lam[p:].sum()
    return float(np.sqrt(max(tail, 0.0)))


def power_iteration_norm(A, iters=500, tol=1e-12, seed=0):
    """Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration."""
    A = np.asarray(A, dtype=float)
    x = np.random.default_rng(seed).normal(size=A.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = A @ x
        new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            lam = new
            break
        lam = new
    return lam


def reconstruction_lipschitz(basis):
    """Operator norm of ``alpha -> sum alpha_k tau_k`` from l2 to L2."""
    return float(np.sqrt(power_iteration_norm(basis.gram())))


def projection_lipschitz(proj):
    """Operator norm of ``u -> (<u, tau*_k>)_k`` from L2 to l2."""
    dual_gram = (proj.duals * proj.weights) @ proj.duals.T
    return float(np.sqrt(power_iteration_norm(dual_gram)))
