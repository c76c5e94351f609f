"""Polar grids, Gaussian quadrature and finite differences.

Everything downstream works on scalar fields sampled at polar nodes
(y_i, phi_j): y is the distance to the rotation locus in the symmetry
plane, phi the angle around it. The natural pairing for spectral work
carries the backward-heat weight exp(-y^2/4) together with the polar
area element y dy dphi, so the quadrature weights fold both in.

Radial weights are built from exact integrals of the piecewise linear
hat functions against the weighted measure (the weight has an erf-type
antiderivative), which keeps the total mass exact.  On top of that a
rank-1 correction is applied so that the discrete pairing of 1 with
y^2 - 4 vanishes to machine precision; those two functions are
orthogonal in the continuum and a lot of the mode bookkeeping assumes
the discrete version agrees.
"""

import math

import numpy as np

from .errors import ParameterError, ShapeError

_erf = np.vectorize(math.erf, otypes=[float])


def _gaussian_antiderivatives(y):
    """Antiderivatives (from 0) of s*exp(-s^2/4) and s^2*exp(-s^2/4)."""
    e = np.exp(-0.25 * y * y)
    i0 = 2.0 * (1.0 - e)
    i1 = -2.0 * y * e + 2.0 * math.sqrt(math.pi) * _erf(0.5 * y)
    return i0, i1


def _hat_weights(nodes, j0, j1):
    """Quadrature weights of linear hat functions for a measure with
    cumulative antiderivatives j0 (mass) and j1 (first moment) at the nodes."""
    h = np.diff(nodes)
    d0 = np.diff(j0)
    d1 = np.diff(j1)
    w = np.zeros_like(nodes)
    w[:-1] += (nodes[1:] * d0 - d1) / h
    w[1:] += (d1 - nodes[:-1] * d0) / h
    return w


def _fd_coeffs(x, target, order):
    """Differentiation weights at `target` from values at abscissae x."""
    x = np.asarray(x, dtype=float)
    k = len(x)
    a = np.vander(x - target, k, increasing=True).T
    b = np.zeros(k)
    b[order] = math.factorial(order)
    return np.linalg.solve(a, b)


class PolarGrid:
    """Immutable tensor grid: radial nodes starting at the origin times a
    uniform periodic angle grid.

    Carries two sets of quadrature weights (Gaussian-weighted for the
    spectral pairing, plain area for geometric integrals) and
    precomputed 3-point differentiation stencils. The pole row uses
    values reflected through the origin, f(-y, phi) = f(y, phi + pi),
    which is why n_phi must be even.
    """

    def __init__(self, nodes, n_phi):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 4:
            raise ParameterError("need at least 4 radial nodes")
        if nodes[0] != 0.0:
            raise ParameterError("first radial node must sit at the origin")
        if np.any(np.diff(nodes) <= 0.0):
            raise ParameterError("radial nodes must be strictly increasing")
        if n_phi < 4 or n_phi % 2 != 0:
            raise ParameterError("n_phi must be even and at least 4")

        self.y = nodes
        self.y.setflags(write=False)
        self.n_r = len(nodes) - 1
        self.n_phi = int(n_phi)
        self.y_max = float(nodes[-1])
        self.dphi = 2.0 * math.pi / n_phi
        self.phi = np.arange(n_phi) * self.dphi
        self.phi.setflags(write=False)

        j0, j1 = _gaussian_antiderivatives(nodes)
        rw = _hat_weights(nodes, j0, j1)
        # rank-1 correction: make sum w*(y^2-4) vanish exactly
        t = nodes * nodes - 4.0
        for _ in range(2):
            rw = rw * (1.0 - (rw @ t) / (rw @ (t * t)) * t)
        self.radial_weights = rw
        self.weights = np.outer(rw, np.full(n_phi, self.dphi))
        self.radial_area_weights = _hat_weights(
            nodes, 0.5 * nodes**2, nodes**3 / 3.0
        )
        self.area_weights = np.outer(
            self.radial_area_weights, np.full(n_phi, self.dphi)
        )
        for a in (self.radial_weights, self.weights,
                  self.radial_area_weights, self.area_weights):
            a.setflags(write=False)

        self._build_stencils()

    @property
    def shape(self):
        return (self.n_r + 1, self.n_phi)

    def _build_stencils(self):
        n = self.n_r + 1
        y = self.y
        coeff = {1: np.zeros((n, 3)), 2: np.zeros((n, 3))}
        for order in (1, 2):
            c = coeff[order]
            c[0] = _fd_coeffs([-y[1], 0.0, y[1]], 0.0, order)
            for i in range(1, n - 1):
                c[i] = _fd_coeffs(y[i - 1:i + 2], y[i], order)
            c[n - 1] = _fd_coeffs(y[n - 3:n], y[n - 1], order)
            c.setflags(write=False)
        # a 3-point one-sided 2nd derivative is only 1st order accurate,
        # so the outer edge uses 4 points for order 2
        self._edge_d2 = _fd_coeffs(y[n - 4:n], y[n - 1], 2)
        self._edge_d2.setflags(write=False)
        self._radial_coeffs = coeff

    def radial_derivative(self, values, order):
        """Apply the precomputed radial stencils to a (n_r+1, n_phi) array."""
        c = self._radial_coeffs[order]
        out = np.empty_like(values)
        out[1:-1] = (
            c[1:-1, 0:1] * values[:-2]
            + c[1:-1, 1:2] * values[1:-1]
            + c[1:-1, 2:3] * values[2:]
        )
        reflected = np.roll(values[1], self.n_phi // 2)
        out[0] = c[0, 0] * reflected + c[0, 1] * values[0] + c[0, 2] * values[1]
        if order == 2:
            e = self._edge_d2
            out[-1] = (
                e[0] * values[-4] + e[1] * values[-3]
                + e[2] * values[-2] + e[3] * values[-1]
            )
        else:
            out[-1] = (
                c[-1, 0] * values[-3]
                + c[-1, 1] * values[-2]
                + c[-1, 2] * values[-1]
            )
        return out

    def angular_derivative(self, values, order):
        if order == 1:
            return (np.roll(values, -1, axis=1) - np.roll(values, 1, axis=1)) / (
                2.0 * self.dphi
            )
        return (
            np.roll(values, -1, axis=1) - 2.0 * values + np.roll(values, 1, axis=1)
        ) / self.dphi**2

    def __eq__(self, other):
        return (
            isinstance(other, PolarGrid)
            and self.n_phi == other.n_phi
            and len(self.y) == len(other.y)
            and bool(np.array_equal(self.y, other.y))
        )

    def __hash__(self):
        return hash((self.n_r, self.n_phi, self.y_max))

    def __repr__(self):
        return f"PolarGrid(n_r={self.n_r}, n_phi={self.n_phi}, y_max={self.y_max:g})"


class ScalarField:
    """Values on a PolarGrid. Immutable after construction.

    Fields describing compact bodies clamp to 0 outside; analytic
    constructors additionally stash the smooth signed continuation of
    the squared profile in `w_signed`, which lets derivative-based
    diagnostics stay exact across the free boundary.
    """

    __slots__ = ("grid", "values", "w_signed")

    def __init__(self, grid, values, w_signed=None, copy=True):
        arr = np.array(values, dtype=float, copy=copy)
        if arr.shape != grid.shape:
            raise ShapeError(
                f"field shape {arr.shape} does not match grid {grid.shape}"
            )
        arr.setflags(write=False)
        if w_signed is not None:
            w_signed = np.array(w_signed, dtype=float, copy=copy)
            if w_signed.shape != grid.shape:
                raise ShapeError("w_signed shape does not match grid")
            w_signed.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "w_signed", w_signed)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    def with_values(self, values, w_signed=None, copy=True):
        return ScalarField(self.grid, values, w_signed=w_signed, copy=copy)


def build_grid(n_r, n_phi, y_max, stretching="uniform", focus=None, strength=3.0):
    """Construct a polar grid.

    n_r is the number of radial cells (n_r + 1 nodes including the
    origin), n_phi the number of uniformly spaced angles. stretching is
    'uniform' or 'tanh-clustered'; the latter concentrates nodes around
    `focus` (default y_max/3, about where a moving tip radius tends to
    sit at desk scale) with dimensionless strength `strength`.
    """
    if n_r < 8:
        raise ParameterError("n_r must be at least 8")
    if n_phi < 4 or n_phi % 2 != 0:
        raise ParameterError("n_phi must be even and at least 4")
    if not y_max > 0.0:
        raise ParameterError("y_max must be positive")

    u = np.linspace(0.0, 1.0, n_r + 1)
    if stretching == "uniform":
        nodes = y_max * u
    elif stretching == "tanh-clustered":
        yc = y_max / 3.0 if focus is None else float(focus)
        if not 0.0 < yc < y_max:
            raise ParameterError("focus must lie strictly inside (0, y_max)")
        s = float(strength)
        if not s > 0.0:
            raise ParameterError("strength must be positive")
        ratio = yc / y_max
        u0 = (0.5 / s) * math.log(
            (1.0 + (math.exp(s) - 1.0) * ratio)
            / (1.0 + (math.exp(-s) - 1.0) * ratio)
        )
        nodes = yc * (1.0 + np.sinh(s * (u - u0)) / math.sinh(s * u0))
        nodes[0] = 0.0
        nodes[-1] = y_max
    else:
        raise ParameterError(f"unknown stretching {stretching!r}")
    return PolarGrid(nodes, n_phi)


def inner_product_H(f, g):
    """Gaussian-weighted pairing of two fields on the same grid."""
    if f.grid != g.grid:
        raise ShapeError("fields live on different grids")
    return float(np.sum(f.grid.weights * f.values * g.values))


def norm_H(f):
    return math.sqrt(max(inner_product_H(f, f), 0.0))


def diff(f, direction, order=1):
    """Finite-difference derivative of a field.

    Radial stencils are centered 3-point (2nd order on smooth node
    distributions), one-sided at the outer edge, and use the reflection
    f(-y, phi) = f(y, phi+pi) at the pole. Angular differences wrap
    periodically.
    """
    if order not in (1, 2):
        raise ParameterError("order must be 1 or 2")
    g = f.grid
    if direction == "y":
        if g.n_r + 1 < 4:
            raise ParameterError("need at least 4 radial nodes")
        out = g.radial_derivative(f.values, order)
    elif direction == "phi":
        if g.n_phi < 4:
            raise ParameterError("need at least 4 angular nodes")
        out = g.angular_derivative(f.values, order)
    else:
        raise ParameterError(f"unknown direction {direction!r}")
    return ScalarField(g, out, copy=False)


def diff_phi_fft(values, order=1):
    """Spectral angular derivative of a (..., n_phi) array of ring samples."""
    n = values.shape[-1]
    m = np.fft.rfftfreq(n, d=1.0 / n)
    fh = np.fft.rfft(values, axis=-1)
    fh *= (1j * m) ** order
    return np.fft.irfft(fh, n=n, axis=-1)


def angular_lowpass(values, m_max):
    """Drop angular Fourier content above m_max.

    m_max may be a scalar or a per-ring integer array; rings with
    m_max >= n_phi/2 pass through untouched.
    """
    n = values.shape[-1]
    m = np.fft.rfftfreq(n, d=1.0 / n)
    fh = np.fft.rfft(values, axis=-1)
    cap = np.asarray(m_max)
    if cap.ndim == 0:
        fh[..., m > cap] = 0.0
    else:
        fh[m[None, :] > cap[:, None]] = 0.0
    return np.fft.irfft(fh, n=n, axis=-1)


def save_field(f, path):
    """Write a field as CSV: a comment header with the grid metadata, then
    one row `i, j, y_i, phi_j, value` per node in row-major order."""
    g = f.grid
    with open(path, "w") as fh:
        fh.write(f"# y_nodes={g.n_r} phi_nodes={g.n_phi} y_max={g.y_max:.17g}\n")
        for i in range(g.n_r + 1):
            yi = g.y[i]
            for j in range(g.n_phi):
                fh.write(
                    f"{i}, {j}, {yi:.17g}, {g.phi[j]:.17g}, "
                    f"{f.values[i, j]:.17g}\n"
                )


def load_field(path, grid=None):
    """Read a field written by save_field. If `grid` is given the file must
    match it; otherwise the grid is rebuilt from the stored nodes."""
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for part in line[1:].split():
                    if "=" in part:
                        k, v = part.split("=", 1)
                        meta[k] = v
                continue
            rows.append([float(tok) for tok in line.split(",")])
    if not meta or "y_nodes" not in meta or "phi_nodes" not in meta:
        raise ParameterError(f"{path}: missing grid header")
    n_r = int(meta["y_nodes"])
    n_phi = int(meta["phi_nodes"])
    data = np.asarray(rows)
    if data.shape[0] != (n_r + 1) * n_phi:
        raise ShapeError(f"{path}: expected {(n_r + 1) * n_phi} rows, got {data.shape[0]}")
    values = data[:, 4].reshape(n_r + 1, n_phi)
    if grid is None:
        nodes = data[:: n_phi, 2]
        grid = PolarGrid(nodes, n_phi)
    else:
        if grid.n_r != n_r or grid.n_phi != n_phi:
            raise ShapeError(f"{path}: stored grid does not match the given one")
    return ScalarField(grid, values)
