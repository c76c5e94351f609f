"""Time-stepping engine for the profile equations.

Two coordinate patches mirror the geometry: the profile v(y, phi) as a
graph over the symmetry plane wherever v is not too small, and the
per-angle inverse profile Y(v, phi) on a tip patch v in [0, 2 theta]
where the v-graph degenerates.  The renormalized system is

    v_tau = quasilinear(v) - (1/2) y v_y + v/2 - 1/v,

with the quasilinear part written in polar form including all angular
cross terms; dropping the two rescaling terms gives the unrescaled
equation d/dt V = ... - 1/V used for extinction hunting.  Both appear
verbatim in rhs_renormalized_v / rhs_unrescaled_V.

Stepping works on the squared profile W = v^2, which obeys the same
equation rewritten as

    W_t = Lap W - [Hess_W(DW, DW) + 2|DW|^2] / (4W + |DW|^2) - 2

(plus -(1/2) y W_y + W in the renormalized gauge).  W is the smooth
variable: it crosses the free boundary linearly where v has a square
root, every quadric model body is an exact polynomial state of the
discrete operators, and the -1/v sink becomes the harmless constant -2.
Nodes outside the body hold a smooth continuation of W rebuilt from the
interior after every stage, so stencils near the rim never see a cliff.

Time integration is explicit midpoint under a parabolic CFL bound from
the radial spacing; a per-ring angular low-pass keeps the polar axis
from tightening that bound.
"""

import json
import math
import os
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .errors import (
    BudgetError,
    CoverageError,
    DegeneracyError,
    DomainError,
    ParameterError,
    StepSizeError,
)
from .grid import (
    PolarGrid,
    ScalarField,
    angular_lowpass,
    build_grid,
    diff_phi_fft,
    load_field,
    save_field,
)

SQRT2 = math.sqrt(2.0)
V_FLOOR = 1.0e-6


# ---------------------------------------------------------------------------
# tip patch


class TipField:
    """Per-angle inverse profile Y(v, phi) on uniform nodes in [0, 2 theta].

    The smooth-tip boundary condition Y_v(0, phi) = 0 is built into the
    reflection stencils rather than stored.  Y decreasing in v holds for
    convex bodies and is monitored, not enforced.
    """

    def __init__(self, v_nodes, values, theta):
        self.v_nodes = np.asarray(v_nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.theta = float(theta)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.v_nodes):
            raise ParameterError("tip value table shape mismatch")
        if np.any(self.values <= 0.0):
            raise DomainError("tip radius table must be positive")

    @property
    def n_phi(self):
        return self.values.shape[1]

    @property
    def dv(self):
        return self.v_nodes[1] - self.v_nodes[0]

    def tip_radius(self):
        """Radius of the tip point, per angle."""
        return self.values[0, :]

    def monotone(self):
        return bool(np.all(np.diff(self.values, axis=0) < 0.0))

    def profile_at(self, y, j):
        """Invert the angle-j column: plane radius y -> fiber radius v."""
        col = np.minimum.accumulate(self.values[:, j])
        return np.interp(y, col[::-1], self.v_nodes[::-1],
                         left=self.v_nodes[-1], right=0.0)

    @classmethod
    def from_profile(cls, field, theta=0.2, n_nodes=17):
        """Build the table by monotone inversion of v near the rim.

        Levels are located in the squared profile, which crosses the rim
        linearly and so keeps the interpolation uniformly second order;
        when the field carries the signed continuation the rim row lands
        at the true zero crossing instead of the last live node.
        """
        g = field.grid
        v_nodes = np.linspace(0.0, 2.0 * theta, n_nodes)
        w_levels = v_nodes**2
        w = field.values**2 if field.w_signed is None else field.w_signed
        vals = np.empty((n_nodes, g.n_phi))
        for j in range(g.n_phi):
            col = w[:, j]
            i_peak = int(np.argmax(col))
            tail = np.minimum.accumulate(col[i_peak:])
            if tail[0] <= w_levels[-1]:
                raise DegeneracyError(
                    f"profile max {math.sqrt(max(tail[0], 0)):.4g} at angle "
                    f"{j} does not reach the tip-patch ceiling {2 * theta:.4g}"
                )
            if tail[-1] > w_levels[0]:
                raise DegeneracyError(f"rim not contained in grid at angle {j}")
            # tail is nonincreasing; locate each level by linear interp
            idx = np.searchsorted(-tail, -w_levels, side="left")
            idx = np.clip(idx, 1, len(tail) - 1)
            w_hi = tail[idx - 1]
            w_lo = tail[idx]
            gap = np.where(w_hi > w_lo, w_hi - w_lo, 1.0)
            frac = np.where(w_hi > w_lo, (w_hi - w_levels) / gap, 0.0)
            ys = g.y[i_peak + idx - 1] + frac * (
                g.y[i_peak + idx] - g.y[i_peak + idx - 1]
            )
            vals[:, j] = ys
        return cls(v_nodes, vals, theta)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(
                f"# v_nodes={len(self.v_nodes)} phi_nodes={self.n_phi} "
                f"theta={self.theta:.17g}\n"
            )
            for k, vk in enumerate(self.v_nodes):
                for j in range(self.n_phi):
                    fh.write(
                        f"{k}, {j}, {vk:.17g}, "
                        f"{2.0 * math.pi * j / self.n_phi:.17g}, "
                        f"{self.values[k, j]:.17g}\n"
                    )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("#"):
                raise ParameterError(f"{path}: missing tip-table header")
            meta = dict(tok.split("=") for tok in header[1:].split())
            n_v = int(meta["v_nodes"])
            n_phi = int(meta["phi_nodes"])
            theta = float(meta["theta"])
            vals = np.empty((n_v, n_phi))
            v_nodes = np.empty(n_v)
            for line in fh:
                k_s, j_s, v_s, _phi, y_s = line.split(",")
                v_nodes[int(k_s)] = float(v_s)
                vals[int(k_s), int(j_s)] = float(y_s)
        return cls(v_nodes, vals, theta)


# ---------------------------------------------------------------------------
# right-hand sides of the profile equations (reference form, on v)


def _radial_derivs(grid, values):
    return grid.radial_derivative(values, 1), grid.radial_derivative(values, 2)


def _pole_cartesian_rhs(values, grid, renormalized, active0):
    """RHS at the origin via the Cartesian form of the equation.

    Gradient and Hessian at the pole come from the first-ring Fourier
    coefficients (m = 0, 1, 2), accurate to O(dy^2); the radial drift
    vanishes at the origin.
    """
    if not active0:
        return 0.0
    v0 = values[0, 0]
    ring = values[1, :]
    y1 = grid.y[1]
    spec = np.fft.rfft(ring) / grid.n_phi
    c0 = spec[0].real
    c1c, c1s = 2.0 * spec[1].real, -2.0 * spec[1].imag
    c2c, c2s = 2.0 * spec[2].real, -2.0 * spec[2].imag
    gx = c1c / y1
    gy = c1s / y1
    tr_h = 4.0 * (c0 - v0) / y1**2
    d_h = 4.0 * c2c / y1**2
    f_xy = 2.0 * c2s / y1**2
    h11 = 0.5 * (tr_h + d_h)
    h22 = 0.5 * (tr_h - d_h)
    g2 = gx * gx + gy * gy
    quad = (h11 * gx * gx + 2.0 * f_xy * gx * gy + h22 * gy * gy) / (1.0 + g2)
    out = tr_h - quad - 1.0 / v0
    if renormalized:
        out += 0.5 * v0
    return out


def _graph_rhs(field, renormalized, method, v_floor):
    g = field.grid
    v = field.values
    active = v > v_floor
    idx = np.arange(v.shape[0])[:, None]
    last_active = np.max(np.where(active, idx, -1), axis=0)
    if np.any((~active) & (idx < last_active[None, :])):
        raise DomainError("profile vanishes strictly inside the body")

    if method == "exact":
        if field.w_signed is None:
            raise ParameterError(
                "exact evaluation needs the signed squared profile"
            )
        w = field.w_signed
        wy, wyy = _radial_derivs(g, w)
        wp = diff_phi_fft(w, order=1)
        wpp = diff_phi_fft(w, order=2)
        wyp = diff_phi_fft(wy, order=1)
        safe = np.where(active, v, 1.0)
        vy = wy / (2.0 * safe)
        vyy = wyy / (2.0 * safe) - wy**2 / (4.0 * safe**3)
        vp = wp / (2.0 * safe)
        vpp = wpp / (2.0 * safe) - wp**2 / (4.0 * safe**3)
        vyp = wyp / (2.0 * safe) - wy * wp / (4.0 * safe**3)
    elif method == "fd":
        vy, vyy = _radial_derivs(g, v)
        vp = g.angular_derivative(v, 1)
        vpp = g.angular_derivative(v, 2)
        vyp = g.angular_derivative(vy, 1)
    else:
        raise ParameterError(f"unknown rhs method {method!r}")

    y = g.y[:, None]
    out = np.zeros_like(v)
    den = y**2 * (1.0 + vy**2) + vp**2
    num = (y**2 + vp**2) * vyy - 2.0 * vy * vp * vyp + (1.0 + vy**2) * vpp
    with np.errstate(divide="ignore", invalid="ignore"):
        first = (2.0 / y**2 - (1.0 + vy**2) / den) * y * vy
        body = num / den + first - 1.0 / np.where(active, v, 1.0)
    if renormalized:
        body = body - 0.5 * y * vy + 0.5 * v
    out[1:, :] = np.where(active[1:, :], body[1:, :], 0.0)
    out[0, :] = _pole_cartesian_rhs(v, g, renormalized, bool(active[0, 0]))
    return field.with_values(out, copy=False)


def rhs_renormalized_v(field, method="fd", v_floor=V_FLOOR):
    """Full polar right-hand side of the renormalized graph equation."""
    return _graph_rhs(field, True, method, v_floor)


def rhs_unrescaled_V(field, method="fd", v_floor=V_FLOOR):
    """Unrescaled graph equation: the renormalized form without the
    drift and dilation terms."""
    return _graph_rhs(field, False, method, v_floor)


def rhs_renormalized_Y(tip, tau=None):
    """Right-hand side of the inverse-profile equation on the tip patch.

    The (1/v) Y_v factor is regular at the tip: by the even reflection
    Y_v / v -> Y_vv at v = 0.
    """
    Y = tip.values
    if np.any(Y <= 0.0):
        raise DomainError("tip radius must stay positive")
    dv = tip.dv
    v = tip.v_nodes[:, None]
    ext = np.vstack([Y[1:2, :], Y])  # even reflection across v = 0
    Yv = (ext[2:, :] - ext[:-2, :]) / (2.0 * dv)
    Yvv = (ext[2:, :] - 2.0 * ext[1:-1, :] + ext[:-2, :]) / dv**2
    last = Y[-4:, :]
    c1 = np.array([-1.0 / 3.0, 1.5, -3.0, 11.0 / 6.0]) / dv
    c2 = np.array([-1.0, 4.0, -5.0, 2.0]) / dv**2
    Yv = np.vstack([Yv, c1 @ last])
    Yvv = np.vstack([Yvv, c2 @ last])
    Yp = diff_phi_fft(Y, order=1)
    Ypp = diff_phi_fft(Y, order=2)
    Yvp = diff_phi_fft(Yv, order=1)

    den = Y**2 * (1.0 + Yv**2) + Yp**2
    num = (Y**2 + Yp**2) * Yvv - 2.0 * Yp * Yv * Yvp + (1.0 + Yv**2) * Ypp
    with np.errstate(divide="ignore", invalid="ignore"):
        drift = (1.0 / v - 0.5 * v) * Yv
    drift[0, :] = Yvv[0, :]  # limit of Y_v / v at the smooth tip
    return num / den + drift - Yp**2 / (Y * den) + 0.5 * Y - 1.0 / Y


# ---------------------------------------------------------------------------
# squared-profile stepping core


def _rim_index(W):
    """Per-column first row past the last strictly positive node."""
    pos = W > 0.0
    n = W.shape[0]
    last = n - 1 - np.argmax(pos[::-1, :], axis=0)
    last = np.where(pos.any(axis=0), last, -1)
    return last + 1


def _rebuild_halo(W, grid):
    """Overwrite nodes outside the body with the interior continuation.

    Three-term recursion along each column extends the last interior
    values exactly for parabolic profiles.  Rows are rebuilt out to two
    past the outermost rim, which is as far as any stencil or ring
    transform containing interior nodes can reach; beyond that the
    array keeps whatever it held (never read).
    """
    n = W.shape[0]
    i0 = _rim_index(W)
    lo = int(i0.min())
    if lo >= n:
        return W
    hi = min(int(i0.max()) + 3, n)
    for i in range(max(lo, 1), hi):
        m = i0 <= i
        if i >= 3:
            ext = 3.0 * W[i - 1, m] - 3.0 * W[i - 2, m] + W[i - 3, m]
        elif i == 2:
            ext = 2.0 * W[i - 1, m] - W[i - 2, m]
        else:
            # sub-cell endgame: continue as a round cap
            ext = W[0, m] - grid.y[i] ** 2
        # the continuation of a convex body is nonpositive outside the
        # rim; clamping keeps ragged endgame columns from seeding fake
        # interior nodes
        W[i, m] = np.minimum(ext, 0.0)
    return W


def _signed_w(field):
    """Writable signed squared profile for a state, building the outside
    continuation when the field only carries clamped values."""
    if field.w_signed is not None:
        return np.array(field.w_signed)
    W = field.values**2
    return _rebuild_halo(W, field.grid)


def _pole_w_rhs(W, grid, renormalized):
    """Squared-profile RHS at the origin from first-ring Fourier data."""
    W0 = W[0, 0]
    ring = W[1, :]
    y1 = grid.y[1]
    spec = np.fft.rfft(ring) / grid.n_phi
    c0 = spec[0].real
    c1c, c1s = 2.0 * spec[1].real, -2.0 * spec[1].imag
    c2c, c2s = 2.0 * spec[2].real, -2.0 * spec[2].imag
    gx = c1c / y1
    gy = c1s / y1
    tr_h = 4.0 * (c0 - W0) / y1**2
    d_h = 4.0 * c2c / y1**2
    f_xy = 2.0 * c2s / y1**2
    h11 = 0.5 * (tr_h + d_h)
    h22 = 0.5 * (tr_h - d_h)
    g2 = gx * gx + gy * gy
    den = 4.0 * W0 + g2
    quad = h11 * gx * gx + 2.0 * f_xy * gx * gy + h22 * gy * gy + 2.0 * g2
    out = tr_h - (quad / den if den > 1.0e-4 else 0.0) - 2.0
    if renormalized:
        out += W0  # radial drift vanishes at the origin
    return out


def _w_rhs(W, grid, renormalized, mask=None):
    """RHS of the squared-profile equation, zero outside the body.

    The equation is regular through the rim (the denominator 4W + |DW|^2
    stays positive where the gradient is transversal), so a caller may
    pass the mask of an earlier stage: cells that dip below zero mid-step
    still get a genuine update instead of freezing at a positive remnant.
    """
    interior = W > 0.0 if mask is None else mask
    Wy, Wyy = _radial_derivs(grid, W)
    Wp = diff_phi_fft(W, order=1)
    Wpp = diff_phi_fft(W, order=2)
    Wyp = diff_phi_fft(Wy, order=1)
    y = grid.y[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        lap = Wyy + Wy / y + Wpp / y**2
        g2 = Wy**2 + Wp**2 / y**2
        hess = (
            Wy**2 * Wyy
            + 2.0 * Wy * Wp * Wyp / y**2
            - 2.0 * Wy * Wp**2 / y**3
            + Wp**2 * Wpp / y**4
            + Wp**2 * Wy / y**3
        )
        # the quotient denominator vanishes only at rim cusps (W ~ 0 with
        # flat gradient, e.g. the saddle between two dying lobes); there
        # the graph quotient is pure noise, so freeze it rather than
        # divide.  Healthy rim columns have |DW| = O(1) and never trip.
        den = 4.0 * W + g2
        rat = np.where(den > 1.0e-4, (hess + 2.0 * g2) / np.where(den > 1.0e-4, den, 1.0), 0.0)
        out = lap - rat - 2.0
        if renormalized:
            out = out - 0.5 * y * Wy + W
    out[0, :] = _pole_w_rhs(W, grid, renormalized)
    return np.where(interior, out, 0.0)


def _filter_w(W, grid):
    """Per-ring angular low-pass: ring i keeps modes m <= max(2, 2.5 i),
    which caps the angular diffusion number below the radial one near
    the pole.  W is smooth across the rim, so filtering whole rings is
    safe everywhere."""
    caps = np.maximum(2, (2.5 * np.arange(grid.n_r + 1)).astype(int))
    out = angular_lowpass(W, caps)
    out[0, :] = out[0, :].mean()
    return out


def _midpoint_w(W, grid, dtau, renormalized):
    mask = W > 0.0
    k1 = _w_rhs(W, grid, renormalized, mask=mask)
    W1 = _rebuild_halo(W + 0.5 * dtau * k1, grid)
    k2 = _w_rhs(W1, grid, renormalized, mask=mask)
    Wn = W + dtau * k2

    w_max = float(W.max())
    core = W > 0.5 * w_max
    if np.any(Wn[core] < 0.0) and float(Wn.max()) > 0.5 * w_max:
        raise StepSizeError(
            f"interior sign change at dt={dtau:.3e}", suggested_dt=0.5 * dtau
        )
    # the squared profile obeys a maximum principle (growth at most e^dt
    # in the renormalized gauge), so any faster inflation is a blown step
    if float(Wn.max()) > w_max * (1.0 + 4.0 * dtau) + 1.0e-14:
        raise StepSizeError(
            f"maximum principle violation at dt={dtau:.3e}",
            suggested_dt=0.5 * dtau,
        )
    return _filter_w(_rebuild_halo(Wn, grid), grid)


# ---------------------------------------------------------------------------
# flow state and stepping


@dataclass(frozen=True)
class FlowState:
    """One snapshot of the evolving surface in either time gauge."""

    time: float
    v: ScalarField
    tip: TipField | None = None
    renormalized: bool = True
    theta: float = 0.2
    L: float = 10.0

    @property
    def tau(self):
        if not self.renormalized:
            raise ParameterError("state is in unrescaled time")
        return self.time

    @property
    def t_unrescaled(self):
        return -math.exp(-self.time) if self.renormalized else self.time

    def tip_radius(self):
        if self.tip is None:
            raise ParameterError("state has no tip patch")
        return self.tip.tip_radius()


def _substep_tip(tip, dtau, cfl=0.2):
    n_sub = max(1, int(math.ceil(dtau / (cfl * tip.dv**2))))
    h = dtau / n_sub
    Y = tip.values
    t = tip
    for _ in range(n_sub):
        k1 = rhs_renormalized_Y(t)
        mid = TipField(tip.v_nodes, Y + 0.5 * h * k1, tip.theta)
        k2 = rhs_renormalized_Y(mid)
        Y = Y + h * k2
        t = TipField(tip.v_nodes, Y, tip.theta)
    return t


def _inject_from_tip(W, tip, grid, theta):
    """Dirichlet side of the patch coupling: graph nodes below the
    handover level take their values from the tip table, blended in
    over v in [theta/2, theta] so no kink forms at the seam."""
    half = 0.5 * theta
    for j in range(tip.n_phi):
        col = np.minimum.accumulate(tip.values[:, j])
        y_top = float(np.interp(theta, tip.v_nodes, tip.values[:, j]))
        y_rim = float(col[0])
        i_lo = int(np.searchsorted(grid.y, y_top))
        i_hi = int(np.searchsorted(grid.y, y_rim))
        if i_lo >= i_hi:
            continue
        ys = grid.y[i_lo:i_hi]
        v_t = np.interp(ys, col[::-1], tip.v_nodes[::-1])
        lam = np.clip((theta - v_t) / half, 0.0, 1.0)
        s = lam * lam * (3.0 - 2.0 * lam)
        W[i_lo:i_hi, j] = (1.0 - s) * W[i_lo:i_hi, j] + s * v_t**2
    return W


def _sync_patches(W, tip, grid, theta):
    """Couple the patches: tip rows with v >= theta are rebuilt from the
    graph by monotone inversion, rows below keep the Y-step; the graph
    in turn takes its rim-side boundary from the updated tip."""
    field = ScalarField(grid, np.sqrt(np.maximum(W, 0.0)), w_signed=W, copy=True)
    inverted = TipField.from_profile(field, theta=theta, n_nodes=len(tip.v_nodes))
    merged = np.where(
        tip.v_nodes[:, None] >= theta - 1.0e-12, inverted.values, tip.values
    )
    new_tip = TipField(tip.v_nodes, merged, tip.theta)
    W = _rebuild_halo(_inject_from_tip(W, new_tip, grid, theta), grid)
    return W, new_tip


def step(state, dtau, v_floor=V_FLOOR):
    """Advance one explicit midpoint step, then synchronize patches."""
    if dtau <= 0.0:
        raise ParameterError(f"time step must be positive, got {dtau}")
    g = state.v.grid
    W = _midpoint_w(_signed_w(state.v), g, dtau, state.renormalized)
    if state.tip is not None:
        if not state.renormalized:
            raise ParameterError("tip patch requires the renormalized gauge")
        new_tip = _substep_tip(state.tip, dtau)
        W, new_tip = _sync_patches(W, new_tip, g, state.theta)
    else:
        new_tip = None
    field = ScalarField(g, np.sqrt(np.maximum(W, 0.0)), w_signed=W, copy=False)
    return FlowState(
        time=state.time + dtau,
        v=field,
        tip=new_tip,
        renormalized=state.renormalized,
        theta=state.theta,
        L=state.L,
    )


class FlowHistory:
    """Snapshots ordered in time with linear interpolation between them.

    An optional window keeps only the trailing span (ring buffer), which
    is all the recentring layer needs.
    """

    def __init__(self, window=None):
        self._times = []
        self._states = []
        self.window = window

    @property
    def times(self):
        return np.asarray(self._times)

    @property
    def states(self):
        return list(self._states)

    def append(self, state):
        if self._times and state.time <= self._times[-1] + 1.0e-15:
            raise ParameterError("history times must increase")
        self._times.append(state.time)
        self._states.append(state)
        if self.window is not None:
            t_last = self._times[-1]
            while self._times and self._times[0] < t_last - self.window - 1.0e-12:
                self._times.pop(0)
                self._states.pop(0)

    def state_at(self, t):
        t = float(t)
        ts = self._times
        if not ts:
            raise CoverageError("empty history")
        if t < ts[0] - 1.0e-9 or t > ts[-1] + 1.0e-9:
            raise CoverageError(
                f"time {t:.6g} outside history [{ts[0]:.6g}, {ts[-1]:.6g}]"
            )
        if len(ts) == 1:
            return self._states[0]
        k = min(max(bisect_left(ts, t) - 1, 0), len(ts) - 2)
        s0, s1 = self._states[k], self._states[k + 1]
        lam = (t - ts[k]) / (ts[k + 1] - ts[k])
        lam = min(max(lam, 0.0), 1.0)
        vals = (1.0 - lam) * s0.v.values + lam * s1.v.values
        w = None
        if s0.v.w_signed is not None and s1.v.w_signed is not None:
            w = (1.0 - lam) * s0.v.w_signed + lam * s1.v.w_signed
        tip = None
        if s0.tip is not None and s1.tip is not None:
            tip = TipField(
                s0.tip.v_nodes,
                (1.0 - lam) * s0.tip.values + lam * s1.tip.values,
                s0.tip.theta,
            )
        return FlowState(
            time=t,
            v=ScalarField(s0.v.grid, vals, w_signed=w, copy=False),
            tip=tip,
            renormalized=s0.renormalized,
            theta=s0.theta,
            L=s0.L,
        )

    def at(self, t):
        return self.state_at(t).v

    def save_dir(self, path):
        os.makedirs(path, exist_ok=True)
        index = []
        for k, (t, st) in enumerate(zip(self._times, self._states)):
            name = f"snap_{k:05d}"
            save_field(st.v, os.path.join(path, name + ".csv"))
            entry = {
                "time": t,
                "field": name + ".csv",
                "renormalized": st.renormalized,
                "theta": st.theta,
                "L": st.L,
            }
            if st.tip is not None:
                st.tip.save(os.path.join(path, name + "_tip.csv"))
                entry["tip"] = name + "_tip.csv"
            index.append(entry)
        with open(os.path.join(path, "history.json"), "w") as fh:
            json.dump(index, fh, indent=1)

    @classmethod
    def load_dir(cls, path, window=None):
        with open(os.path.join(path, "history.json")) as fh:
            index = json.load(fh)
        hist = cls(window=window)
        grid = None
        for entry in index:
            f = load_field(os.path.join(path, entry["field"]), grid=grid)
            grid = f.grid
            tip = None
            if "tip" in entry:
                tip = TipField.load(os.path.join(path, entry["tip"]))
            hist.append(
                FlowState(
                    time=entry["time"],
                    v=f,
                    tip=tip,
                    renormalized=entry["renormalized"],
                    theta=entry["theta"],
                    L=entry["L"],
                )
            )
        return hist


def cfl_dt(grid, cfl=0.2):
    """Parabolic step bound c * h^2 from the finest effective spacing.

    With the per-ring angular filter the effective angular spacing never
    drops below the radial one, so the radial spacing governs.
    """
    dy_min = float(np.min(np.diff(grid.y)))
    return cfl * dy_min**2


def _alive(field, v_floor):
    """A centered convex body dies at the origin last, so life requires
    the innermost rings positive, not just a scattered node count."""
    vals = field.values
    return (
        int(np.count_nonzero(vals > 2.0 * v_floor)) >= 4
        and float(vals[0:2, :].max()) > 2.0 * v_floor
    )


def _step_retry(state, dtau, v_floor, tries=12):
    """Step, backing off along the rejection's suggested dt."""
    for _ in range(tries):
        try:
            return step(state, dtau, v_floor=v_floor)
        except StepSizeError as err:
            dtau = err.suggested_dt
            if dtau is None or dtau < 1.0e-12:
                raise
    return step(state, dtau, v_floor=v_floor)


def _march_step(state, dtau, v_floor):
    """One forward step for the extinction marches.

    Returns None when the step cannot be stabilized and the body is
    already at the resolution floor: an anisotropic endgame can become
    unsteppable a few cells before the node count drops, and at that
    point the body is extinct as far as the grid can tell.
    """
    try:
        return _step_retry(state, dtau, v_floor)
    except StepSizeError:
        g = state.v.grid
        if float(state.v.values.max()) < 6.0 * float(np.min(np.diff(g.y))):
            return None
        raise


def run(state, t_end, snapshot_every=0.05, cfl=0.2, v_floor=V_FLOOR, window=None,
        stop_when=None):
    """March to t_end, recording snapshots every snapshot_every.

    Returns the history; the final recorded state is at the last time
    reached (t_end, or earlier if stop_when fired or the body became
    extinct).
    """
    if t_end < state.time:
        raise ParameterError(
            f"t_end={t_end:.6g} precedes state time {state.time:.6g}"
        )
    hist = FlowHistory(window=window)
    hist.append(state)
    if t_end == state.time:
        return hist
    dt0 = cfl_dt(state.v.grid, cfl)
    next_snap = state.time + snapshot_every
    cur = state
    while cur.time < t_end - 1.0e-12:
        dt = min(dt0, t_end - cur.time)
        nxt = _march_step(cur, dt, v_floor)
        if nxt is None:
            if cur.time > hist.times[-1] + 1.0e-15:
                hist.append(cur)
            break
        cur = nxt
        done = stop_when is not None and stop_when(cur)
        dead = not _alive(cur.v, v_floor)
        if done or dead:
            hist.append(cur)
            break
        if cur.time >= next_snap - 1.0e-12 or cur.time >= t_end - 1.0e-12:
            hist.append(cur)
            while next_snap <= cur.time + 1.0e-12:
                next_snap += snapshot_every
    return hist


# ---------------------------------------------------------------------------
# extinction and renormalization


@dataclass(frozen=True)
class ExtinctionResult:
    t_extinct: float
    t_last_alive: float
    t_first_dead: float
    steps: int


def find_extinction(initial, t_start, cfl=0.2, v_floor=V_FLOOR, rel_tol=1.0e-3):
    """Locate the collapse time of a compact convex body by bisection on
    the predicate "the body survives until t".

    A forward march brackets the death step; memoized snapshots along
    the way let the bisection re-run only short final segments.  The
    bracket is narrowed until it is below rel_tol of the elapsed
    lifetime (a CFL-step march usually starts below that already).
    """
    g = initial.grid
    if float(initial.values[-1, :].max()) > v_floor:
        raise DomainError("initial body touches the grid boundary; not compact")
    if not _alive(initial, v_floor):
        raise DomainError("initial body is already extinct")

    cur = FlowState(time=t_start, v=initial, tip=None, renormalized=False)
    dt = cfl_dt(g, cfl)
    memo = [cur]
    memo_every = 2000
    steps = 0
    while _alive(cur.v, v_floor):
        prev = cur
        nxt = _march_step(cur, dt, v_floor)
        if nxt is None:
            cur = FlowState(
                time=cur.time + dt,
                v=cur.v,
                tip=cur.tip,
                renormalized=cur.renormalized,
                theta=cur.theta,
                L=cur.L,
            )
            break
        cur = nxt
        steps += 1
        if steps % memo_every == 0 and _alive(cur.v, v_floor):
            memo.append(cur)
        if steps > 5_000_000:
            raise BudgetError("extinction march exceeded the step budget")
    lo, hi = prev.time, cur.time

    def survives(t):
        s = memo[bisect_left([m.time for m in memo], t) - 1] if t > memo[0].time else memo[0]
        while s.time < t - 1.0e-12 and _alive(s.v, v_floor):
            s = _march_step(s, min(dt, t - s.time), v_floor)
            if s is None:
                return False
        return _alive(s.v, v_floor)

    tol = rel_tol * max(hi - t_start, 1.0e-6)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if survives(mid):
            lo = mid
        else:
            hi = mid
    return ExtinctionResult(
        t_extinct=0.5 * (lo + hi),
        t_last_alive=lo,
        t_first_dead=hi,
        steps=steps,
    )


def renormalize(field, t, t_e, grid_out=None, margin=1.15):
    """Rescale an unrescaled snapshot to the renormalized gauge.

    v = V / sqrt(t_e - t) resampled radially (linearly in the squared
    profile, which is the smooth variable through the rim), with
    tau = -log(t_e - t).
    """
    if t >= t_e:
        raise DomainError(f"time {t} is at or past extinction {t_e}")
    scale = 1.0 / math.sqrt(t_e - t)
    tau = -math.log(t_e - t)
    g_in = field.grid
    if grid_out is None:
        live = np.any(field.values > 0.0, axis=1)
        y_rim = g_in.y[np.max(np.nonzero(live))] if np.any(live) else g_in.y_max
        grid_out = build_grid(g_in.n_r, g_in.n_phi, max(scale * y_rim * margin, 1.0))
    w_in = field.values**2 if field.w_signed is None else field.w_signed
    y_src = grid_out.y / scale
    w_out = np.empty(grid_out.shape)
    for j in range(grid_out.n_phi):
        w_out[:, j] = scale**2 * np.interp(y_src, g_in.y, w_in[:, j])
    _rebuild_halo(w_out, grid_out)
    v_out = np.sqrt(np.maximum(w_out, 0.0))
    out = ScalarField(grid_out, v_out, w_signed=w_out, copy=False)
    return out, tau


def renormalized_state(field, t, t_e, theta=0.2, L=10.0, grid_out=None,
                       tip_nodes=17):
    """Renormalize and attach a freshly inverted tip patch."""
    v, tau = renormalize(field, t, t_e, grid_out=grid_out)
    tip = TipField.from_profile(v, theta=theta, n_nodes=tip_nodes)
    return FlowState(time=tau, v=v, tip=tip, renormalized=True, theta=theta, L=L)


def zoomed_tip(state, j=None):
    """Zoomed tip profile Z(rho) = sqrt(|tau|) (Y(rho/sqrt(|tau|)) - Y(0)).

    Returns (rho, Z) with Z of shape (n_nodes, n_angles); j selects a
    single angle column.
    """
    if state.tip is None:
        raise ParameterError("state has no tip patch")
    tau = state.tau
    s = math.sqrt(abs(tau))
    rho = s * state.tip.v_nodes
    Z = s * (state.tip.values - state.tip.values[0:1, :])
    if j is not None:
        Z = Z[:, j]
    return rho, Z
