"""Centering transformations and the orthogonality solver.

A renormalized flow can be translated, time-shifted, dilated and
rotated; at the profile level all of these act by rescaling the graph
function and its arguments.  This module implements that action, the
Gaussian pairing maps whose zeros single out a canonical member of each
orbit, and a damped Newton solver that finds those zeros with a
finite-difference Jacobian.

Raw parameters (alpha, beta, gamma, phi_rot) live at the unrescaled
level; at a renormalized time tau they induce the working triple
(a, b, Gamma) through

    a = e^(tau/2) alpha,   b = sqrt(1 + beta e^tau) - 1,
    Gamma = (gamma - log(1 + beta e^tau)) / tau,

and the profile transforms as

    v'(y, tau) = (1+b) v((R_(-phi) y - a)/(1+b), (1+Gamma) tau).

Histories come in two flavors: recorded FlowHistory objects, resampled
by linear interpolation in tau and bilinear interpolation in space, and
SyntheticHistory generators that evaluate a closed-form profile family
exactly.  The synthetic flavor is what makes solver validation sharp:
round trips through known parameters are then limited only by the
Newton tolerance, not by resampling error.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BudgetError,
    CoverageError,
    DegeneracyError,
    ParameterError,
)
from .grid import ScalarField
from .spectral import cutoff_profile, get_basis

SQRT2 = math.sqrt(2.0)
SQRT8 = math.sqrt(8.0)

TWO_PARAM = "two-param"
FOUR_PARAM = "four-param+rotation"


# ---------------------------------------------------------------------------
# parameter bookkeeping


@dataclass(frozen=True)
class TransformParams:
    """Centering parameters of one flow, stored at the unrescaled level.

    alpha is the spatial translation in the symmetry plane, beta the
    time shift, gamma the log dilation, phi_rot the rotation angle.
    The renormalized working parameters depend on the time at which the
    transformation is read off and are exposed as methods.
    """

    alpha: tuple
    beta: float
    gamma: float
    phi_rot: float = 0.0

    def _stretch(self, tau):
        s = 1.0 + self.beta * math.exp(tau)
        if s <= 0.0:
            raise ParameterError(
                f"time shift beta={self.beta:g} empties the flow before "
                f"tau={tau:g} (1 + beta e^tau = {s:g})"
            )
        return s

    def a(self, tau):
        return math.exp(tau / 2.0) * np.asarray(self.alpha, dtype=float)

    def b(self, tau):
        return math.sqrt(self._stretch(tau)) - 1.0

    def Gamma(self, tau):
        if tau == 0.0:
            raise ParameterError("Gamma is undefined at tau = 0")
        return (self.gamma - math.log(self._stretch(tau))) / tau

    @classmethod
    def from_renormalized(cls, tau, a=(0.0, 0.0), b=0.0, Gamma=0.0,
                          phi_rot=0.0):
        """Invert the derived triple back to raw parameters at time tau."""
        if tau == 0.0:
            raise ParameterError("conversion is undefined at tau = 0")
        if b <= -1.0:
            raise ParameterError(f"need 1 + b > 0, got b = {b:g}")
        stretch = (1.0 + b) ** 2
        beta = math.exp(-tau) * (stretch - 1.0)
        gamma = Gamma * tau + math.log(stretch)
        a = np.asarray(a, dtype=float)
        alpha = tuple(math.exp(-tau / 2.0) * a)
        return cls(alpha=alpha, beta=beta, gamma=gamma,
                   phi_rot=float(phi_rot) % (2.0 * math.pi))


# ---------------------------------------------------------------------------
# histories


class SyntheticHistory:
    """Closed-form profile family posing as a recorded history.

    fn(y, phi, tau) must broadcast over array arguments.  Sampling is
    exact at any point and any time inside the span, which removes
    every resampling error from solver round trips.
    """

    def __init__(self, fn, grid, span):
        lo, hi = float(span[0]), float(span[1])
        if not lo < hi:
            raise ParameterError(f"empty time span ({lo:g}, {hi:g})")
        self.fn = fn
        self.grid = grid
        self.span = (lo, hi)

    def _check(self, tau):
        lo, hi = self.span
        if tau < lo - 1.0e-9 or tau > hi + 1.0e-9:
            raise CoverageError(
                f"time {tau:.6g} outside synthetic span [{lo:.6g}, {hi:.6g}]"
            )

    def sample(self, y, phi, tau):
        self._check(tau)
        return np.asarray(self.fn(y, phi, tau), dtype=float)

    def at(self, tau):
        vals = self.sample(
            self.grid.y[:, None], self.grid.phi[None, :], tau
        ) * np.ones(self.grid.shape)
        return ScalarField(self.grid, vals, copy=False)


def normal_form_history(grid, tau0, half_width=0.25):
    """Synthetic history of the inward-quadratic profile around tau0."""
    if tau0 >= 0.0:
        raise ParameterError(f"tau0 must be negative, got {tau0:g}")

    def fn(y, phi, tau):
        return SQRT2 - (y**2 - 4.0) / (SQRT8 * abs(tau)) + 0.0 * phi

    span = (tau0 * (1.0 + half_width), tau0 * (1.0 - half_width))
    return SyntheticHistory(fn, grid, span)


def _history_grid(history):
    if hasattr(history, "grid"):
        return history.grid
    return history.states[0].v.grid


# ---------------------------------------------------------------------------
# the transformation


def transform_profile(history, b, Gamma, tau0):
    """Scaled and time-dilated profile (1+b) v(y/(1+b), (1+Gamma) tau0)
    resampled onto the history's own grid."""
    if b <= -1.0:
        raise ParameterError(f"need 1 + b > 0, got b = {b:g}")
    grid = _history_grid(history)
    tau_src = (1.0 + Gamma) * tau0
    radii = grid.y / (1.0 + b)
    if isinstance(history, SyntheticHistory):
        vals = history.sample(radii[:, None], grid.phi[None, :], tau_src)
        vals = vals * np.ones(grid.shape)
    else:
        src = history.at(tau_src)
        clipped = int(np.count_nonzero(radii > grid.y_max))
        if clipped:
            warnings.warn(
                f"{clipped} radii beyond y_max={grid.y_max:g} clamped to "
                "the boundary ring",
                stacklevel=2,
            )
        vals = np.empty(grid.shape)
        for j in range(grid.n_phi):
            vals[:, j] = np.interp(radii, grid.y, src.values[:, j])
    return ScalarField(grid, (1.0 + b) * vals, copy=False)


def transform_full(history, a, b, Gamma, phi_rot, tau0):
    """Full action with plane translation a and rotation phi_rot:
    (1+b) v((R_(-phi) y - a)/(1+b), (1+Gamma) tau0).

    Recorded histories are resampled bilinearly in (y, phi); pullback
    points beyond the grid radius are clamped to the boundary ring and
    reported through a warning.
    """
    if b <= -1.0:
        raise ParameterError(f"need 1 + b > 0, got b = {b:g}")
    a = np.asarray(a, dtype=float)
    if a.shape != (2,):
        raise ParameterError("translation a must be a plane vector")
    grid = _history_grid(history)
    tau_src = (1.0 + Gamma) * tau0

    y = grid.y[:, None]
    phi = grid.phi[None, :]
    c, s = np.cos(phi - phi_rot), np.sin(phi - phi_rot)
    qx = y * c - a[0]
    qy = y * s - a[1]
    r = np.hypot(qx, qy) / (1.0 + b)
    ang = np.mod(np.arctan2(qy, qx), 2.0 * math.pi)

    if isinstance(history, SyntheticHistory):
        vals = history.sample(r, ang, tau_src)
        return ScalarField(grid, (1.0 + b) * vals, copy=False)

    src = history.at(tau_src).values
    clipped = int(np.count_nonzero(r > grid.y_max))
    if clipped:
        warnings.warn(
            f"{clipped} pullback points beyond y_max={grid.y_max:g} "
            "clamped to the boundary ring",
            stacklevel=2,
        )
    r = np.minimum(r, grid.y_max)

    dphi = 2.0 * math.pi / grid.n_phi
    j0 = np.floor(ang / dphi).astype(int) % grid.n_phi
    j1 = (j0 + 1) % grid.n_phi
    tphi = ang / dphi - np.floor(ang / dphi)
    i1 = np.clip(np.searchsorted(grid.y, r), 1, grid.y.size - 1)
    i0 = i1 - 1
    ty = (r - grid.y[i0]) / (grid.y[i1] - grid.y[i0])
    vals = (
        src[i0, j0] * (1.0 - ty) * (1.0 - tphi)
        + src[i1, j0] * ty * (1.0 - tphi)
        + src[i0, j1] * (1.0 - ty) * tphi
        + src[i1, j1] * ty * tphi
    )
    return ScalarField(grid, (1.0 + b) * vals, copy=False)


# ---------------------------------------------------------------------------
# pairing maps


def _pairings(field, theta):
    """Gaussian pairings of the truncated deviation with the six modes."""
    basis = get_basis(field.grid)
    chi = cutoff_profile(field.values, theta)
    u = chi * (field.values - SQRT2)
    w = field.grid.weights
    return np.array(
        [float(np.sum(w * u * basis.functions[k])) for k in range(6)]
    ), basis


def psi2(history, tau0, b, Gamma, theta=0.2):
    """Two centering conditions: the constant pairing of the deviation
    and the quadratic pairing measured against the locked inward slope
    -1/(sqrt(8)|tau0|)."""
    if tau0 >= 0.0:
        raise ParameterError(f"tau0 must be negative, got {tau0:g}")
    f = transform_profile(history, b, Gamma, tau0)
    p, basis = _pairings(f, theta)
    lock = basis.normsq[3] / (SQRT8 * abs(tau0))
    return np.array([p[0], p[3] + lock])


def psi4(history, tau0, a, b, Gamma, theta=0.2):
    """Four centering conditions: the two of psi2 plus the translation
    pairings against y cos phi and y sin phi, all at phi_rot = 0."""
    if tau0 >= 0.0:
        raise ParameterError(f"tau0 must be negative, got {tau0:g}")
    f = transform_full(history, a, b, Gamma, 0.0, tau0)
    p, basis = _pairings(f, theta)
    lock = basis.normsq[3] / (SQRT8 * abs(tau0))
    return np.array([p[0], p[1], p[2], p[3] + lock])


def rotation_angle(field, theta=0.2):
    """Rotation parameter that zeroes the y^2 sin 2phi pairing.

    Of the two half-angle candidates the one leaving the y^2 cos 2phi
    pairing nonnegative is returned, in [0, 2 pi).  A field without
    quadrupole content returns 0.
    """
    p, basis = _pairings(field, theta)
    c_pair, s_pair = p[4], p[5]
    scale = max(basis.normsq[4], basis.normsq[5])
    if math.hypot(c_pair, s_pair) < 1.0e-14 * scale:
        return 0.0
    return 0.5 * math.atan2(-s_pair, c_pair) % (2.0 * math.pi)


# ---------------------------------------------------------------------------
# the solver


def measure_kappa(history, tau0, theta=0.2):
    """Gaussian distance (scaled by |tau0|) of the truncated profile
    from the inward-quadratic state; sets the search box size."""
    if tau0 >= 0.0:
        raise ParameterError(f"tau0 must be negative, got {tau0:g}")
    f = history.at(tau0)
    grid = f.grid
    chi = cutoff_profile(f.values, theta)
    target = SQRT2 - (grid.y[:, None] ** 2 - 4.0) / (SQRT8 * abs(tau0))
    dev = chi * f.values - target
    norm = math.sqrt(max(float(np.sum(grid.weights * dev * dev)), 0.0))
    return abs(tau0) * norm


def _in_box(x, tau0, radius_sq):
    return tau0**2 * x[-2] ** 2 + x[-1] ** 2 <= radius_sq


def jacobian_det(history, tau0, b, Gamma, theta=0.2, step=1.0e-6):
    """Determinant of the central finite-difference Jacobian of psi2
    in the (b, Gamma) plane."""
    J = np.empty((2, 2))
    for k, h in enumerate((step, step)):
        lo = [b, Gamma]
        hi = [b, Gamma]
        lo[k] -= h
        hi[k] += h
        J[:, k] = (
            psi2(history, tau0, hi[0], hi[1], theta=theta)
            - psi2(history, tau0, lo[0], lo[1], theta=theta)
        ) / (2.0 * h)
    return float(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])


def _fd_jacobian(F, x, steps):
    n = x.size
    r0 = F(x)
    J = np.empty((r0.size, n))
    for k in range(n):
        h = steps[k]
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (F(xp) - F(xm)) / (2.0 * h)
    return J


def solve_psi(history, tau0, mode=TWO_PARAM, start=None, theta=0.2,
              tol=1.0e-10, max_iter=50):
    """Damped Newton search for the canonical zero of the pairing map.

    Two-param mode solves psi2 over (b, Gamma); four-param mode solves
    psi4 over (a1, a2, b, Gamma) and then fixes the rotation by the
    closed-form half-angle.  Iterates are confined to the box
    |tau0|^2 b^2 + Gamma^2 <= 100 kappa^2 with kappa measured from the
    history.  A nonpositive psi2 Jacobian determinant inside the box is
    a degeneracy; running past max_iter exhausts the budget.
    """
    if tau0 >= 0.0:
        raise ParameterError(f"tau0 must be negative, got {tau0:g}")
    if mode not in (TWO_PARAM, FOUR_PARAM):
        raise ParameterError(
            f"mode must be {TWO_PARAM!r} or {FOUR_PARAM!r}, got {mode!r}"
        )
    kappa = max(measure_kappa(history, tau0, theta=theta), 1.0e-8)
    radius_sq = 100.0 * kappa**2

    if mode == TWO_PARAM:
        dim = 2

        def F(x):
            return psi2(history, tau0, x[0], x[1], theta=theta)

        steps = np.array([1.0e-7, 1.0e-6])
    else:
        dim = 4

        def F(x):
            return psi4(history, tau0, x[:2], x[2], x[3], theta=theta)

        steps = np.array([1.0e-6, 1.0e-6, 1.0e-7, 1.0e-6])

    x = np.zeros(dim) if start is None else np.asarray(start, dtype=float)
    if x.shape != (dim,):
        raise ParameterError(f"start must have {dim} components")
    if not _in_box(x, tau0, radius_sq):
        raise ParameterError("start lies outside the search box")

    res = F(x)
    for _ in range(max_iter):
        if float(np.linalg.norm(res)) < tol:
            break
        J = _fd_jacobian(F, x, steps)
        det2 = (
            J[0, -2] * J[-1, -1] - J[0, -1] * J[-1, -2]
            if dim == 2
            else float(np.linalg.det(J))
        )
        if dim == 2 and det2 <= 0.0:
            raise DegeneracyError(
                f"psi2 Jacobian determinant {det2:g} <= 0 inside the box"
            )
        if dim == 4 and det2 == 0.0:
            raise DegeneracyError("psi4 Jacobian is singular")
        try:
            d = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError as err:
            raise DegeneracyError(f"Jacobian solve failed: {err}") from err
        lam = 1.0
        while not _in_box(x + lam * d, tau0, radius_sq):
            lam *= 0.5
            if lam < 1.0e-12:
                raise BudgetError(
                    "Newton direction pinned to the box boundary"
                )
        base = float(np.linalg.norm(res))
        for _ in range(30):
            try:
                trial = F(x + lam * d)
            except CoverageError:
                lam *= 0.5
                continue
            if float(np.linalg.norm(trial)) < base or lam < 1.0e-10:
                break
            lam *= 0.5
        else:
            raise BudgetError("damping failed to reduce the residual")
        x = x + lam * d
        res = trial
    if float(np.linalg.norm(res)) >= tol:
        raise BudgetError(
            f"no convergence in {max_iter} Newton iterations "
            f"(|psi| = {float(np.linalg.norm(res)):.3g})"
        )

    if mode == TWO_PARAM:
        return TransformParams.from_renormalized(
            tau0, a=(0.0, 0.0), b=x[0], Gamma=x[1]
        )
    field = transform_full(history, x[:2], x[2], x[3], 0.0, tau0)
    phi = rotation_angle(field, theta=theta)
    return TransformParams.from_renormalized(
        tau0, a=x[:2], b=x[2], Gamma=x[3], phi_rot=phi
    )
