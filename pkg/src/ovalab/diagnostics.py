"""Pointwise verification of geometric estimates on flow snapshots.

The stepper produces profile fields and tip tables; the functions here
measure how closely a snapshot follows the structures that convex
rotational ancient flows develop, each as a single number or a small
report over the grid:

* ``asymptotics_report``: sup distance to the inward-quadratic bulge
  over the plane, to the square-root intermediate profile, and of the
  zoomed tip to the translating bowl.
* ``concavity_margin``: the almost-concavity of the squared radius as a
  worst generalized eigenvalue of its corrected plane Hessian against
  the induced metric, per node.
* ``collar_deviation``: sup of |y (v^2)_y + 4| over the collar band,
  where a near-Gaussian profile makes that combination vanish.
* ``cylindrical_estimate``: largest scaled derivative over the region
  where the profile is bounded away from zero.
* ``huisken_density``: Gaussian-weighted area of an unrescaled slice,
  the monotone quantity that calibrates extinction scales.
* ``tip_weight`` / ``poincare_check``: the hybrid tip weight built from
  the inverse profile and the bowl, and the weighted Poincare ratio it
  is designed to make uniform.

Everything is a pure function of immutable snapshots.  Fields are
expected to carry the signed squared profile (every constructor and the
stepper in this package provide it); derivatives are always taken on
that smooth continuation, never on the square-rooted values whose rim
kink would pollute the stencils.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CoverageError, DomainError, ParameterError
from .evolve import (
    V_FLOOR,
    FlowHistory,
    FlowState,
    TipField,
    _rim_index,
    _signed_w,
    zoomed_tip,
)
from .grid import ScalarField, diff_phi_fft
from .shrinkers import solve_bowl

SQRT2 = math.sqrt(2.0)

# Gaussian densities of the two product shrinkers, plane x circle and
# line x sphere; closed forms sqrt(2 pi / e) and 4 / e.
DENSITY_SHEET = math.sqrt(2.0 * math.pi / math.e)
DENSITY_NECK = 4.0 / math.e

REGION_NAMES = ("exterior", "soliton", "collar", "cylindrical")


@lru_cache(maxsize=1)
def _reference_bowl():
    return solve_bowl()


def region_bounds(tau, theta=0.2, L=10.0):
    """Profile-value boundaries of the standard regions at time tau.

    Returned as a dict of (low, high) bands in v; the tip band overlaps
    the cylindrical one by construction.
    """
    if tau == 0.0:
        raise ParameterError("region boundaries need a nonzero time")
    s = math.sqrt(abs(tau))
    return {
        "soliton": (0.0, L / s),
        "collar": (L / s, 2.0 * theta),
        "tip": (0.0, 2.0 * theta),
        "cylindrical": (theta, math.inf),
    }


# ---------------------------------------------------------------------------
# closed-form reference states


def normal_form_field(grid, tau):
    """Inward-quadratic bulge sqrt(2) - (y^2-4)/(sqrt(8)|tau|) at tau < 0.

    The expression is clipped at zero far out; the signed square keeps
    the analytic continuation so derivative stencils stay clean.
    """
    if not tau < 0.0:
        raise ParameterError("the quadratic normal form needs tau < 0")
    y = grid.y[:, None]
    v = (SQRT2 - (y**2 - 4.0) / (math.sqrt(8.0) * abs(tau))) * np.ones(
        (1, grid.n_phi)
    )
    w = np.sign(v) * v**2
    return ScalarField(grid, np.maximum(v, 0.0), w_signed=w)


def normal_form_tip(tau, theta=0.2, n_phi=32, n_nodes=33):
    """Round tip table of the square-root intermediate profile.

    Inverts v = sqrt(2 - y^2/|tau|) (with the +4 plane offset of the
    quadratic bulge) on [0, 2 theta]; a convenient synthetic geometry
    for exercising the weight and Poincare machinery at large |tau|.
    """
    if not tau < 0.0:
        raise ParameterError("the model tip needs tau < 0")
    v = np.linspace(0.0, 2.0 * theta, n_nodes)
    Y = np.sqrt(abs(tau) * (2.0 - v**2) + 4.0)
    return TipField(v, Y[:, None] * np.ones((1, n_phi)), theta)


# ---------------------------------------------------------------------------
# sharp asymptotics


@dataclass(frozen=True)
class AsymptoticsReport:
    """Sup-norm distances to the three model profiles.

    ``tip`` is NaN when the state carries no tip patch.
    """

    parabolic: float
    intermediate: float
    tip: float
    epsilon: float


def asymptotics_report(state, epsilon, bowl=None):
    """Measure a renormalized snapshot against its three model regions.

    (i) |tau| * sup_{y <= 1/eps} |v - sqrt(2) + (y^2-4)/(sqrt(8)|tau|)|,
    (ii) sup_{z <= sqrt(2)-eps} |v(sqrt(|tau|) z) - sqrt(2 - z^2)|,
    (iii) sup_{rho <= 1/eps} |Z - Z_bowl| for the zoomed tip.

    Accepts a FlowState or a FlowHistory (its final snapshot is used).
    """
    if isinstance(state, FlowHistory):
        if not state.states:
            raise CoverageError("empty history")
        state = state.states[-1]
    if not 0.0 < epsilon < 1.0:
        raise ParameterError("epsilon must lie in (0, 1)")
    tau = state.tau
    if tau >= 0.0:
        raise ParameterError("asymptotics are measured at tau < 0")
    at = abs(tau)
    grid = state.v.grid
    y = grid.y
    v = state.v.values

    cap = 1.0 / epsilon
    if cap > grid.y_max:
        raise CoverageError(
            f"plane window y <= {cap:g} exceeds the grid (y_max="
            f"{grid.y_max:g})"
        )
    rows = y <= cap
    model = SQRT2 - (y[rows, None] ** 2 - 4.0) / (math.sqrt(8.0) * at)
    parabolic = at * float(np.abs(v[rows, :] - model).max())

    reach = math.sqrt(at) * (SQRT2 - epsilon)
    if reach > grid.y_max:
        raise CoverageError(
            f"intermediate window y <= {reach:g} exceeds the grid"
        )
    rows = y <= reach
    model = np.sqrt(2.0 - (y[rows, None] / math.sqrt(at)) ** 2)
    intermediate = float(np.abs(v[rows, :] - model).max())

    if state.tip is None:
        tip_err = float("nan")
    else:
        rho, Z = zoomed_tip(state)
        bowl = bowl if bowl is not None else _reference_bowl()
        sel = rho <= cap
        tip_err = float(np.abs(Z[sel, :] - bowl(rho[sel])[:, None]).max())

    return AsymptoticsReport(parabolic, intermediate, tip_err, epsilon)


# ---------------------------------------------------------------------------
# almost concavity of the squared radius


def _plane_derivatives(Q, grid):
    """Cartesian gradient and Hessian of a plane field given in polar
    samples; the pole row comes from first-ring Fourier data, the rest
    from the polar chain rule."""
    y = grid.y[:, None]
    Qy = grid.radial_derivative(Q, 1)
    Qyy = grid.radial_derivative(Q, 2)
    Qp = diff_phi_fft(Q, order=1)
    Qpp = diff_phi_fft(Q, order=2)
    Qyp = diff_phi_fft(Qy, order=1)
    c = np.cos(grid.phi)[None, :]
    s = np.sin(grid.phi)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        Q1 = c * Qy - s * Qp / y
        Q2 = s * Qy + c * Qp / y
        Q11 = (
            c**2 * Qyy
            - 2.0 * s * c * Qyp / y
            + s**2 * Qpp / y**2
            + s**2 * Qy / y
            + 2.0 * s * c * Qp / y**2
        )
        Q22 = (
            s**2 * Qyy
            + 2.0 * s * c * Qyp / y
            + c**2 * Qpp / y**2
            + c**2 * Qy / y
            - 2.0 * s * c * Qp / y**2
        )
        Q12 = (
            s * c * Qyy
            + (c**2 - s**2) * Qyp / y
            - s * c * Qpp / y**2
            - s * c * Qy / y
            - (c**2 - s**2) * Qp / y**2
        )

    ring = Q[1, :]
    y1 = grid.y[1]
    spec = np.fft.rfft(ring) / grid.n_phi
    c1c, c1s = 2.0 * spec[1].real, -2.0 * spec[1].imag
    c2c, c2s = 2.0 * spec[2].real, -2.0 * spec[2].imag
    tr = 4.0 * (spec[0].real - Q[0, 0]) / y1**2
    d = 4.0 * c2c / y1**2
    Q1[0, :] = c1c / y1
    Q2[0, :] = c1s / y1
    Q11[0, :] = 0.5 * (tr + d)
    Q22[0, :] = 0.5 * (tr - d)
    Q12[0, :] = 2.0 * c2s / y1**2
    return Q1, Q2, Q11, Q12, Q22


@dataclass(frozen=True)
class ConcavityReport:
    """Largest generalized eigenvalue of the corrected Hessian pencil
    per node (NaN outside the body), with the worst node singled out."""

    margins: np.ndarray
    worst: float
    worst_y: float
    worst_phi: float
    delta: float
    labels: np.ndarray

    def region_name(self, code):
        return REGION_NAMES[int(code)]


def concavity_margin(field, t, delta, v_floor=V_FLOOR, theta=0.2, L=10.0):
    """Worst eigenvalue of Hess(V^2) - (gamma+delta) g on plane directions.

    Works on an unrescaled profile V at time t <= -e.  The Hessian is
    the intrinsic one of the surface metric g_ij = delta_ij + V_i V_j
    restricted to directions orthogonal to the rotation (the metric is
    block diagonal, so no angular components enter), with Christoffel
    correction Gamma^k_ij = V_k V_ij / (1+|DV|^2) and weight
    gamma = ((-t)/log(-t))^(3/2) V^(-3).  A nonpositive margin
    everywhere is the almost-concavity property.
    """
    if not t <= -math.e:
        raise DomainError(
            "almost concavity is weighted by ((-t)/log(-t))^(3/2); "
            f"it needs log(-t) >= 1, got t = {t:g}"
        )
    if delta < 0.0:
        raise ParameterError("delta must be nonnegative")
    grid = field.grid
    W = _signed_w(field)
    V = field.values
    mask = V > v_floor
    safe = np.where(mask, V, 1.0)

    Q1, Q2, Q11, Q12, Q22 = _plane_derivatives(W, grid)
    V1 = Q1 / (2.0 * safe)
    V2 = Q2 / (2.0 * safe)
    V11 = Q11 / (2.0 * safe) - Q1**2 / (4.0 * safe**3)
    V12 = Q12 / (2.0 * safe) - Q1 * Q2 / (4.0 * safe**3)
    V22 = Q22 / (2.0 * safe) - Q2**2 / (4.0 * safe**3)

    dv2 = V1**2 + V2**2
    slope = (V1 * Q1 + V2 * Q2) / (1.0 + dv2)
    gamma = ((-t) / math.log(-t)) ** 1.5 / safe**3
    eps = gamma + delta
    A11 = Q11 - V11 * slope - eps * (1.0 + V1**2)
    A12 = Q12 - V12 * slope - eps * V1 * V2
    A22 = Q22 - V22 * slope - eps * (1.0 + V2**2)

    det_g = 1.0 + dv2
    tr_b = (
        (1.0 + V2**2) * A11
        - 2.0 * V1 * V2 * A12
        + (1.0 + V1**2) * A22
    ) / det_g
    det_b = (A11 * A22 - A12**2) / det_g
    disc = np.maximum(tr_b**2 - 4.0 * det_b, 0.0)
    lam = 0.5 * (tr_b + np.sqrt(disc))
    margins = np.where(mask, lam, np.nan)

    flat = np.nanargmax(np.where(mask, lam, -np.inf))
    i, j = np.unravel_index(flat, lam.shape)

    v_ren = V / math.sqrt(-t)
    cut = L / math.sqrt(math.log(-t))
    labels = np.zeros(V.shape, dtype=np.int8)
    labels[mask] = 1
    labels[mask & (v_ren >= cut)] = 2
    labels[mask & (v_ren >= 2.0 * theta)] = 3
    return ConcavityReport(
        margins=margins,
        worst=float(lam[i, j]),
        worst_y=float(grid.y[i]),
        worst_phi=float(grid.phi[j]),
        delta=float(delta),
        labels=labels,
    )


# ---------------------------------------------------------------------------
# collar and cylindrical estimates


@dataclass(frozen=True)
class CollarReport:
    """Sup of |y (v^2)_y + 4| over the collar band and its argmax."""

    deviation: float
    y: float
    phi: float
    nodes: int


def collar_deviation(field, tau, theta=0.2, L=10.0):
    """Sup of |y (v^2)_y + 4| over the band L/sqrt(|tau|) <= v <= 2 theta.

    Near-Gaussian collars make the combination vanish; spheres fail it
    loudly, which makes this a useful discriminator.
    """
    if tau == 0.0:
        raise ParameterError("the collar band needs a nonzero time")
    s = math.sqrt(abs(tau))
    v = field.values
    band = (v >= L / s) & (v <= 2.0 * theta)
    if not band.any():
        raise CoverageError(
            f"collar band {L / s:.3g} <= v <= {2.0 * theta:.3g} is empty"
        )
    W = field.w_signed if field.w_signed is not None else v**2
    wy = field.grid.radial_derivative(W, 1)
    dev = np.abs(field.grid.y[:, None] * wy + 4.0)
    dev = np.where(band, dev, -np.inf)
    flat = np.argmax(dev)
    i, j = np.unravel_index(flat, dev.shape)
    return CollarReport(
        deviation=float(dev[i, j]),
        y=float(field.grid.y[i]),
        phi=float(field.grid.phi[j]),
        nodes=int(band.sum()),
    )


def cylindrical_estimate(field, tau, L=10.0, v_floor=V_FLOOR):
    """Largest |v^(k+l-1) y^(-k) d_phi^k d_y^l v| for 1 <= k+l <= 2
    over the region v >= L/sqrt(|tau|).

    Derivatives are taken through the signed square, so the estimate is
    meaningful arbitrarily close to the region boundary.  The pole row
    only contributes the purely radial terms; the angular ones have an
    explicit 1/y weight.
    """
    if tau == 0.0:
        raise ParameterError("the cylindrical region needs a nonzero time")
    s = math.sqrt(abs(tau))
    v = field.values
    region = v >= max(L / s, 2.0 * v_floor)
    if not region.any():
        raise CoverageError(
            f"cylindrical region v >= {L / s:.3g} is empty"
        )
    grid = field.grid
    W = _signed_w(field)
    safe = np.where(region, v, 1.0)
    wy = grid.radial_derivative(W, 1)
    wyy = grid.radial_derivative(W, 2)
    wp = diff_phi_fft(W, order=1)
    wpp = diff_phi_fft(W, order=2)
    wyp = diff_phi_fft(wy, order=1)
    vy = wy / (2.0 * safe)
    vyy = wyy / (2.0 * safe) - wy**2 / (4.0 * safe**3)
    vp = wp / (2.0 * safe)
    vpp = wpp / (2.0 * safe) - wp**2 / (4.0 * safe**3)
    vyp = wyp / (2.0 * safe) - wy * wp / (4.0 * safe**3)

    best = 0.0
    radial = [np.abs(vy), np.abs(safe * vyy)]
    for term in radial:
        best = max(best, float(term[region].max()))
    y = grid.y[:, None]
    inner = region.copy()
    inner[0, :] = False
    if inner.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            angular = [
                np.abs(vp) / y,
                np.abs(safe * vpp) / y**2,
                np.abs(safe * vyp) / y,
            ]
        for term in angular:
            best = max(best, float(term[inner].max()))
    return best


# ---------------------------------------------------------------------------
# Gaussian density


def huisken_density(field, r, tail=None):
    """Gaussian-weighted area of an unrescaled slice at t = -r^2.

    Computes (4 pi r^2)^(-3/2) times the integral over the plane of
    2 pi sqrt(W + |DW|^2/4) exp(-(y^2 + W)/(4 r^2)), which is the
    rotationally reduced surface measure written in the squared profile
    W = V^2.  Columns are integrated up to the exact rim crossing so the
    integrand's kink there costs nothing.  ``tail="flat"`` continues the
    boundary ring cylindrically to infinity and adds its Gaussian tail
    in closed form, for slices of noncompact model bodies.
    """
    if not r > 0.0:
        raise ParameterError("the density scale r must be positive")
    if tail not in (None, "flat"):
        raise ParameterError(f"unknown tail treatment {tail!r}")
    grid = field.grid
    W = _signed_w(field)
    y = grid.y
    wy = grid.radial_derivative(W, 1)
    wp = diff_phi_fft(W, order=1)
    grad2 = wy**2
    with np.errstate(divide="ignore", invalid="ignore"):
        grad2 = grad2 + np.where(
            y[:, None] > 0.0, (wp / y[:, None]) ** 2, 0.0
        )
    body = W > 0.0
    dens = np.where(
        body,
        2.0
        * np.pi
        * np.sqrt(np.maximum(W, 0.0) + 0.25 * grad2)
        * np.exp(-(y[:, None] ** 2 + np.maximum(W, 0.0)) / (4.0 * r**2)),
        0.0,
    )

    i0 = _rim_index(W)
    n = W.shape[0]
    total = 0.0
    for j in range(grid.n_phi):
        k = int(i0[j])
        if k == 0:
            continue
        if k >= n:
            total += float(np.trapezoid(dens[:, j] * y, y))
            if tail == "flat":
                total += float(dens[-1, j]) * 2.0 * r**2
            continue
        frac = W[k - 1, j] / (W[k - 1, j] - W[k, j])
        y_rim = y[k - 1] + frac * (y[k] - y[k - 1])
        wy_rim = wy[k - 1, j] + frac * (wy[k, j] - wy[k - 1, j])
        f_rim = (
            2.0
            * np.pi
            * 0.5
            * abs(wy_rim)
            * math.exp(-(y_rim**2) / (4.0 * r**2))
        )
        ys = np.append(y[:k], y_rim)
        fs = np.append(dens[:k, j], f_rim)
        total += float(np.trapezoid(fs * ys, ys))
    dphi = grid.phi[1] - grid.phi[0]
    return (4.0 * math.pi * r**2) ** -1.5 * total * dphi


def huisken_profile(history, t_extinct=0.0, times=None):
    """Densities of an unrescaled history at scales r = sqrt(t_e - t).

    Returns (radii, densities) in increasing r.  The monotone quantity
    should be nondecreasing in r along any flow.
    """
    states = history.states
    if not states:
        raise CoverageError("empty history")
    if times is None:
        times = [s.time for s in states]
    radii = []
    dens = []
    for t in times:
        if t >= t_extinct:
            raise CoverageError(
                f"slice at t = {t:g} is at or past extinction"
            )
        state = history.state_at(t)
        if state.renormalized:
            raise ParameterError(
                "density profiles are defined on unrescaled histories"
            )
        r = math.sqrt(t_extinct - t)
        radii.append(r)
        dens.append(huisken_density(state.v, r))
    order = np.argsort(radii)
    return np.asarray(radii)[order], np.asarray(dens)[order]


# ---------------------------------------------------------------------------
# tip weight and weighted Poincare ratio


def _zeta(v, theta):
    """C^2 quintic ramp: 0 below theta/8, 1 above theta/4."""
    x = np.clip((np.asarray(v, dtype=float) - theta / 8.0) / (theta / 8.0),
                0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


@dataclass(frozen=True)
class WeightField:
    """Hybrid tip weight mu over the tip nodes, one column per angle.

    Above a quarter of the ceiling mu is minus a quarter of the squared
    inverse profile; below an eighth its v-derivative is the bowl's
    (1 + Y_B,v^2)/v, which makes exp(mu) vanish linearly at the tip.
    """

    v_nodes: np.ndarray
    mu: np.ndarray
    zeta: np.ndarray
    bowl_height: np.ndarray
    bowl_slope: np.ndarray
    theta: float
    tau: float

    @property
    def dv(self):
        return float(self.v_nodes[1] - self.v_nodes[0])


def tip_weight(tip, tau, bowl=None):
    """Build the hybrid weight from a tip table at renormalized time tau.

    mu(v) = -Y(theta)^2/4 + integral from v to theta of
    [zeta (Y^2/4)_v' - (1-zeta) (1+Y_B,v'^2)/v'] dv', by composite
    trapezoid on the tip nodes.  The half-ceiling theta must itself be
    a node (odd node count), so the anchor of the integral is exact.
    """
    if not tau < 0.0:
        raise ParameterError("the tip weight needs tau < 0")
    nodes = tip.v_nodes
    n = nodes.size
    if n % 2 == 0:
        raise ParameterError(
            "the weight integral anchors at the half-ceiling; "
            "use an odd number of tip nodes"
        )
    mid = (n - 1) // 2
    theta = tip.theta
    if abs(nodes[mid] - theta) > 1.0e-12:
        raise ParameterError("tip nodes must place theta at the midpoint")
    dv = tip.dv
    bowl = bowl if bowl is not None else _reference_bowl()
    slope = bowl.tip_slope(nodes, tau)
    height = bowl.tip_profile(nodes, tau)
    zeta = _zeta(nodes, theta)

    q = tip.values**2 / 4.0
    dq = np.gradient(q, dv, axis=0)
    with np.errstate(divide="ignore"):
        sink = (1.0 - zeta) * (1.0 + slope**2) / nodes
    integrand = zeta[:, None] * dq - sink[:, None]

    inner = integrand[1:, :]
    steps = 0.5 * dv * (inner[1:, :] + inner[:-1, :])
    cum = np.concatenate(
        [np.zeros((1, integrand.shape[1])), np.cumsum(steps, axis=0)]
    )
    mu = np.empty_like(integrand)
    mu[1:, :] = -q[mid, :][None, :] + (cum[mid - 1, :][None, :] - cum)
    mu[0, :] = -np.inf
    return WeightField(
        v_nodes=nodes.copy(),
        mu=mu,
        zeta=zeta,
        bowl_height=height,
        bowl_slope=slope,
        theta=theta,
        tau=float(tau),
    )


def poincare_check(F, weight, tip, tau=None):
    """Measured constant |tau| * LHS/RHS of the weighted Poincare pair

    integral F^2 e^mu dv  <=  (C/|tau|) integral F_v^2/(1+Y_v^2) e^mu dv

    maximized over angles.  F must be flat at v = 0 and vanish at the
    ceiling 2 theta; it may be a single column or one per angle.
    """
    tau = weight.tau if tau is None else tau
    if tau == 0.0:
        raise ParameterError("the ratio is scaled by a nonzero |tau|")
    nodes = weight.v_nodes
    n = nodes.size
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != n:
        raise ParameterError("test function must live on the tip nodes")
    if tip.values.shape[0] != n:
        raise ParameterError("tip table and weight nodes disagree")
    fmax = float(np.abs(F).max())
    if fmax == 0.0:
        return 0.0
    if np.abs(F[-1, :]).max() > 1.0e-12 * fmax:
        raise ParameterError("support must stay inside [0, 2 theta)")
    dv = weight.dv
    slope0 = np.abs(-3.0 * F[0, :] + 4.0 * F[1, :] - F[2, :]) / (2.0 * dv)
    if slope0.max() > 0.05 * fmax / weight.theta:
        raise ParameterError("test function must be flat at v = 0")

    mu = weight.mu - np.max(weight.mu[np.isfinite(weight.mu)])
    w = np.exp(mu)
    Yv = np.gradient(tip.values, dv, axis=0)
    Fv = np.gradient(F, dv, axis=0)
    lhs = np.trapezoid(F**2 * w, dx=dv, axis=0)
    rhs = np.trapezoid(Fv**2 / (1.0 + Yv**2) * w, dx=dv, axis=0)
    ratios = np.zeros(max(lhs.shape[0], rhs.shape[0]))
    lhs, rhs = np.broadcast_arrays(lhs, rhs)
    for j in range(lhs.shape[0]):
        if rhs[j] > 0.0:
            ratios[j] = lhs[j] / rhs[j]
        elif lhs[j] > 0.0:
            ratios[j] = math.inf
    return abs(tau) * float(ratios.max())
