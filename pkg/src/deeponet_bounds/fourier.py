"""Real Fourier basis on the periodic box [0, 2pi]^d and trigonometric interpolation."""

import itertools

import numpy as np

TWO_PI = 2.0 * np.pi


def normalization(k):
    """Constant making the basis function for wavenumber ``k`` unit-norm in L2([0, 2pi]^d)."""
    k = np.atleast_1d(np.asarray(k))
    d = k.shape[-1] if k.ndim > 1 else k.size
    nonzero = np.any(k != 0, axis=-1) if k.ndim > 1 else np.any(k != 0)
    return np.where(nonzero, np.sqrt(2.0 / TWO_PI**d), np.sqrt(1.0 / TWO_PI**d))


def _is_cosine(wavenumbers):
    # lexicographic sign: sign of the first nonzero component, zero counts as cosine
    w = np.asarray(wavenumbers)
    nz = w != 0
    first = np.argmax(nz, axis=1)
    lead = w[np.arange(len(w)), first]
    return lead >= 0


def fourier_basis(k, x):
    """Evaluate the real Fourier basis function ``e_k`` at ``x``.

    ``e_k = C_k cos(k.x)`` when ``k`` is lexicographically non-negative (its first
    nonzero component is positive, or ``k = 0``) and ``C_k sin(k.x)`` otherwise. In one
    dimension this is the sign of ``k``; in higher dimensions it keeps ``(0, 1)`` and
    ``(0, -1)`` from both mapping to the same cosine.

    Parameters
    ----------
    k : int or sequence of int
        Wavenumber; an int is treated as a one-dimensional wavenumber.
    x : float or array-like
        Points. For ``d == 1`` any shape is accepted; for ``d > 1`` the last axis
        must have length ``d``.

    Returns
    -------
    ndarray
        Basis values with the shape of ``x`` (minus the coordinate axis when ``d > 1``).
    """
    k = np.atleast_1d(np.asarray(k, dtype=int))
    x = np.asarray(x, dtype=float)
    if k.size == 1:
        phase = k[0] * x
    else:
        if x.shape[-1] != k.size:
            raise ValueError(f"points have dimension {x.shape[-1]}, wavenumber has {k.size}")
        phase = x @ k.astype(float)
    c = normalization(k)
    return c * (np.cos(phase) if _is_cosine(k[None, :])[0] else np.sin(phase))


def enumerate_wavenumbers(count, dim=1):
    """First ``count`` wavenumbers ordered by (|k|_inf, k_1, ..., k_d).

    Returns
    -------
    ndarray of shape (count, dim)
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    out = []
    radius = 0
    while len(out) < count:
        # (2r+1)^d - (2r-1)^d members on shell r
        shell = [
            k
            for k in itertools.product(range(-radius, radius + 1), repeat=dim)
            if max(abs(c) for c in k) == radius
        ]
        out.extend(sorted(shell))
        radius += 1
    return np.array(out[:count], dtype=int)


def wavenumbers_in_box(K, dim=1):
    """All wavenumbers with |k|_inf <= K, in enumeration order."""
    return enumerate_wavenumbers((2 * K + 1) ** dim, dim)


def basis_matrix(wavenumbers, points):
    """Matrix ``B[i, j] = e_{k_i}(x_j)``.

    Parameters
    ----------
    wavenumbers : array of shape (n_modes, d)
    points : array of shape (n_points, d) or (n_points,) when d == 1
    """
    wavenumbers = np.asarray(wavenumbers, dtype=int)
    if wavenumbers.ndim == 1:
        wavenumbers = wavenumbers[:, None]
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    phase = wavenumbers.astype(float) @ pts.T
    c = normalization(wavenumbers)[:, None]
    is_cos = _is_cosine(wavenumbers)[:, None]
    return c * np.where(is_cos, np.cos(phase), np.sin(phase))


def _axis_exponentials(n, coords):
    # Columns follow np.fft ordering; the Nyquist column of an even grid is
    # a cosine so the interpolant of real data stays real.
    ks = np.fft.fftfreq(n, d=1.0 / n)
    E = np.exp(1j * np.outer(coords, ks))
    if n % 2 == 0:
        E[:, n // 2] = np.cos(0.5 * n * coords)
    return E


def trig_interpolate(values, points):
    """Evaluate the trigonometric interpolant of periodic grid data at arbitrary points.

    Parameters
    ----------
    values : ndarray
        Grid values of shape ``(n,)*d`` or a batch ``(N,) + (n,)*d``.
    points : ndarray
        Shape ``(P,)`` for d == 1 or ``(P, d)``.

    Returns
    -------
    ndarray of shape (P,) or (N, P)
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    d = pts.shape[1]
    values = np.asarray(values, dtype=float)
    batched = values.ndim == d + 1
    if not batched:
        values = values[None]
    n = values.shape[-1]
    coeffs = np.fft.fftn(values, axes=tuple(range(1, d + 1))) / n**d
    if d == 1:
        out = coeffs @ _axis_exponentials(n, pts[:, 0]).T
    elif d == 2:
        E1 = _axis_exponentials(n, pts[:, 0])
        E2 = _axis_exponentials(n, pts[:, 1])
        out = np.einsum("pa,nab,pb->np", E1, coeffs, E2, optimize=True)
    else:
        raise ValueError("only d = 1, 2 are supported")
    out = out.real
    return out if batched else out[0]


def upsample(values, n_fine, dim=1):
    """Trigonometric interpolant of (batched) periodic grid data on a finer grid.

    The last ``dim`` axes of ``values`` are the grid axes.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if n_fine < n:
        raise ValueError("n_fine must be >= the current grid size")
    if n_fine == n:
        return values.copy()
    axes = tuple(range(values.ndim - dim, values.ndim))
    coeffs = np.fft.fftn(values, axes=axes)
    padded = _zero_pad(coeffs, n, n_fine, axes)
    return np.fft.ifftn(padded, axes=axes).real * (n_fine / n) ** dim


def _zero_pad(coeffs, n, n_fine, axes):
    out = coeffs
    for ax in axes:
        shape = list(out.shape)
        shape[ax] = n_fine
        new = np.zeros(shape, dtype=complex)
        half = (n - 1) // 2
        src_pos = [slice(None)] * out.ndim
        dst_pos = [slice(None)] * out.ndim
        src_pos[ax] = slice(0, half + 1)
        dst_pos[ax] = slice(0, half + 1)
        new[tuple(dst_pos)] = out[tuple(src_pos)]
        src_neg = [slice(None)] * out.ndim
        dst_neg = [slice(None)] * out.ndim
        src_neg[ax] = slice(n - half, n)
        dst_neg[ax] = slice(n_fine - half, n_fine)
        new[tuple(dst_neg)] = out[tuple(src_neg)]
        if n % 2 == 0:
            nyq = [slice(None)] * out.ndim
            nyq[ax] = n // 2
            pos = [slice(None)] * out.ndim
            neg = [slice(None)] * out.ndim
            pos[ax] = n // 2
            neg[ax] = n_fine - n // 2
            new[tuple(pos)] = 0.5 * out[tuple(nyq)]
            new[tuple(neg)] = 0.5 * out[tuple(nyq)]
        out = new
    return out
