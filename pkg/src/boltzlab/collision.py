"""Collision operator for product kernels K = Phi(t,x,|v|) Psi(v,u,omega).

The (u, omega) quadrature is reduced, per velocity grid node, to precomputed
bilinear forms acting on the velocity profile of the fields, so that full-grid
applications run as dense matrix algebra. Probe solutions that depend on v
alone are evaluated exactly at the quadrature queries (no grid interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .transport import Field, Grid


class CollisionError(ValueError):
    pass


def post_collision(u, v, omega):
    """Elastic post-collision velocities u' = u - [(u-v).w]w, v' = v + [(u-v).w]w."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    norms = np.einsum("...i,...i->...", omega, omega)
    if not np.allclose(norms, 1.0, atol=1e-12):
        raise CollisionError("omega must be a unit vector (|omega| = 1 within 1e-12)")
    proj = np.einsum("...i,...i->...", u - v, omega)[..., None] * omega
    return u - proj, v + proj


def p_weight(v_star, u, omega):
    """Probe weight (1 - e^{|(u-v*).w|^2})(e^{-|(u-v*).w|^2} - e^{-|u-v*|^2}).

    Equals the gain/loss combination of the Gaussian/constant probe pair
    evaluated at v = v*; nonpositive everywhere.
    """
    v_star = np.asarray(v_star, dtype=float)
    u = np.asarray(u, dtype=float)
    omega = np.asarray(omega, dtype=float)
    norms = np.einsum("...i,...i->...", omega, omega)
    if not np.allclose(norms, 1.0, atol=1e-12):
        raise CollisionError("omega must be a unit vector")
    d = u - v_star
    proj2 = np.einsum("...i,...i->...", d, omega) ** 2
    dist2 = np.einsum("...i,...i->...", d, d)
    return (1.0 - np.exp(proj2)) * (np.exp(-proj2) - np.exp(-dist2))


@dataclass
class KernelSpec:
    """Product collision kernel K = Phi(t, x, |v|) Psi(v, u, omega).

    phi(t, x, r) and psi(v, u, omega) broadcast over a leading point axis.
    r_u is the radius of the u-quadrature ball (centered at the local v);
    M bounds the sampled admissibility norm; c0 is the Psi lower bound on
    B_3(v) x S^1 used by the probe-weight floor.
    """

    phi: Callable
    psi: Callable
    r_u: float = 4.0
    M: float = 0.0
    c0: float = 1.0
    name: str = "custom"

    def phi_on_grid(self, grid: Grid) -> np.ndarray:
        """Phi sampled at all grid nodes, shaped (ntx, nvnodes)."""
        t, xa, xb = np.meshgrid(
            grid.t_nodes, grid.x_nodes, grid.x_nodes, indexing="ij"
        )
        pts_t = t.ravel()
        pts_x = np.stack([xa.ravel(), xb.ravel()], axis=-1)
        va, vb = np.meshgrid(grid.v_nodes, grid.v_nodes, indexing="ij")
        speeds = np.hypot(va.ravel(), vb.ravel())
        out = np.empty((pts_t.size, speeds.size))
        for k, r in enumerate(speeds):
            out[:, k] = self.phi(pts_t, pts_x, np.full(pts_t.size, r))
        return out


@dataclass
class CollisionQuadrature:
    """Tensor u-offset nodes on the ball |e| <= R_u plus uniform circle angles.

    u-nodes are cell centers of an n_u x n_u tensor grid over the bounding
    square; centers outside the ball are dropped and the remaining weights are
    rescaled to the exact ball area. Omega weights sum to |S^1| = 2 pi.
    """

    u_offsets: np.ndarray  # (Nu, 2), relative to the local center
    u_weights: np.ndarray  # (Nu,)
    omega: np.ndarray      # (Nw, 2) unit vectors
    omega_weights: np.ndarray  # (Nw,)

    @classmethod
    def build(cls, r_u: float, n_u: int = 8, n_omega: int = 16) -> "CollisionQuadrature":
        h = 2.0 * r_u / n_u
        c = -r_u + (np.arange(n_u) + 0.5) * h
        ea, eb = np.meshgrid(c, c, indexing="ij")
        e = np.stack([ea.ravel(), eb.ravel()], axis=-1)
        keep = np.einsum("ij,ij->i", e, e) <= r_u**2
        e = e[keep]
        w = np.full(len(e), h * h)
        w *= np.pi * r_u**2 / w.sum()
        ang = (np.arange(n_omega) + 0.5) * (2.0 * np.pi / n_omega)
        omega = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        ow = np.full(n_omega, 2.0 * np.pi / n_omega)
        if w.min() <= 0 or ow.min() <= 0:
            raise CollisionError("quadrature weights must be positive")
        return cls(e, w, omega, ow)

    def pair_nodes(self, center: np.ndarray):
        """All (u, omega) pairs for a u-ball centered at `center`.

        Returns (u (Q,2), omega (Q,2), weights (Q,)) with Q = Nu * Nw.
        """
        u = center[None, :] + self.u_offsets
        nu, nw = len(u), len(self.omega)
        uu = np.repeat(u, nw, axis=0)
        ww = np.tile(self.omega, (nu, 1))
        wq = (self.u_weights[:, None] * self.omega_weights[None, :]).ravel()
        return uu, ww, wq


def _bilinear_weights(w: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Dense clamped-bilinear interpolation weights of points w (Q,2) on the
    tensor velocity grid; returns (Q, len(nodes)**2)."""
    n = len(nodes)
    v0, dv = nodes[0], nodes[1] - nodes[0]
    out = np.zeros((len(w), n * n))
    u1 = np.clip((w[:, 0] - v0) / dv, 0.0, n - 1)
    u2 = np.clip((w[:, 1] - v0) / dv, 0.0, n - 1)
    i1 = np.minimum(u1.astype(int), n - 2)
    i2 = np.minimum(u2.astype(int), n - 2)
    f1 = u1 - i1
    f2 = u2 - i2
    rows = np.arange(len(w))
    out[rows, i1 * n + i2] += (1 - f1) * (1 - f2)
    out[rows, (i1 + 1) * n + i2] += f1 * (1 - f2)
    out[rows, i1 * n + i2 + 1] += (1 - f1) * f2
    out[rows, (i1 + 1) * n + i2 + 1] += f1 * f2
    return out


class CollisionOperator:
    """Full-grid collision application with precomputed per-velocity-node forms.

    For fields decomposed as F_m = s_m(v) + G_m (static velocity profile plus
    gridded correction), the (u, omega) quadrature of

        Q(F1, F2)(t,x,v) = Phi(t,x,|v|) * sum_q w_q Psi [F1(u')F2(v') - F1(u)F2(v)]

    reduces, per velocity node, to a constant, two linear forms, and a bilinear
    form in the velocity profiles of G1, G2.
    """

    def __init__(self, kernel: KernelSpec, quad: CollisionQuadrature, grid: Grid):
        self.kernel = kernel
        self.quad = quad
        self.grid = grid
        v_nodes = grid.v_nodes
        va, vb = np.meshgrid(v_nodes, v_nodes, indexing="ij")
        self.v_flat = np.stack([va.ravel(), vb.ravel()], axis=-1)
        self.n_vnodes = len(self.v_flat)
        self._phi_cols = kernel.phi_on_grid(grid)

        self._uprime = []
        self._vprime = []
        self._u = []
        self._psi_w = []       # psi-weighted pair weights (Q,)
        self._w_uprime = []    # (Q, nvn) interpolation weights
        self._w_vprime = []
        self._w_u = []
        self._m_gain = []      # (nvn, nvn)
        self._l_loss = []      # (nvn,)
        for k in range(self.n_vnodes):
            vk = self.v_flat[k]
            uu, ww, wq = quad.pair_nodes(vk)
            psi_vals = kernel.psi(np.broadcast_to(vk, uu.shape), uu, ww)
            if np.any(psi_vals < 0):
                raise CollisionError("Psi must be nonnegative at quadrature nodes")
            pw = wq * psi_vals
            up, vp = post_collision(uu, np.broadcast_to(vk, uu.shape), ww)
            wu = _bilinear_weights(uu, v_nodes)
            wup = _bilinear_weights(up, v_nodes)
            wvp = _bilinear_weights(vp, v_nodes)
            self._uprime.append(up)
            self._vprime.append(vp)
            self._u.append(uu)
            self._psi_w.append(pw)
            self._w_uprime.append(wup)
            self._w_vprime.append(wvp)
            self._w_u.append(wu)
            self._m_gain.append(np.einsum("q,qi,qj->ij", pw, wup, wvp))
            self._l_loss.append(pw @ wu)
        self.out_of_hull = self._count_out_of_hull()

    def _count_out_of_hull(self) -> int:
        # Diagnostic: post-collision queries that fall outside the velocity hull
        # are clamped; a large count indicates a misconfigured R_v.
        rv = self.grid.rv
        count = 0
        for up, vp in zip(self._uprime, self._vprime):
            count += int(np.sum(np.max(np.abs(up), axis=1) > rv))
            count += int(np.sum(np.max(np.abs(vp), axis=1) > rv))
        return count

    def static_profile_terms(self, s1: Optional[Callable], s2: Optional[Callable]):
        """Per-node constants and linear forms contributed by static profiles."""
        nvn = self.n_vnodes
        const = np.zeros(nvn)
        lin1 = np.zeros((nvn, nvn))  # coefficient of G1 velocity profile
        lin2 = np.zeros((nvn, nvn))
        for k in range(nvn):
            pw = self._psi_w[k]
            s1up = s1(self._uprime[k]) if s1 is not None else 0.0
            s1u = s1(self._u[k]) if s1 is not None else 0.0
            s2vp = s2(self._vprime[k]) if s2 is not None else 0.0
            s2k = float(s2(self.v_flat[k : k + 1])[0]) if s2 is not None else 0.0
            if s1 is not None and s2 is not None:
                const[k] = pw @ (s1up * s2vp) - s2k * (pw @ s1u)
            if s1 is not None:
                # pairs s1 with the gridded part of F2
                lin2[k] = (pw * s1up) @ self._w_vprime[k]
                lin2[k, k] -= pw @ s1u
            if s2 is not None:
                lin1[k] = (pw * s2vp) @ self._w_uprime[k]
                lin1[k] -= s2k * self._l_loss[k]
        return const, lin1, lin2

    def apply_grid(
        self,
        g1: Optional[np.ndarray],
        g2: Optional[np.ndarray],
        static_terms=None,
    ) -> np.ndarray:
        """Collision source on the full grid, shaped like Field values.

        g1, g2 are the gridded corrections (may be None for purely static
        fields); static_terms comes from static_profile_terms.
        """
        g = self.grid
        ntx = (g.nt + 1) * g.nx * g.nx
        nvn = self.n_vnodes
        out = np.zeros((ntx, nvn))
        x1 = g1.reshape(ntx, nvn) if g1 is not None else None
        x2 = g2.reshape(ntx, nvn) if g2 is not None else None
        # identically-zero corrections contribute nothing; skip their algebra
        if x1 is not None and not x1.any():
            x1 = None
        if x2 is not None and not x2.any():
            x2 = None
        if static_terms is not None:
            const, lin1, lin2 = static_terms
            out += const[None, :]
            if x1 is not None:
                out += x1 @ lin1.T
            if x2 is not None:
                out += x2 @ lin2.T
        if x1 is not None and x2 is not None:
            for k in range(nvn):
                gain = np.einsum("ij,ij->i", x1 @ self._m_gain[k], x2)
                loss = (x1 @ self._l_loss[k]) * x2[:, k]
                out[:, k] += gain - loss
        out *= self._phi_cols
        return out.reshape(g.shape)

    def source_from_fields(self, f1: Field, f2: Field) -> Field:
        """Q(F1, F2) for gridded fields on the operator's grid."""
        vals = self.apply_grid(f1.values, f2.values)
        return Field(self.grid, vals)


def apply_Q(
    kernel: KernelSpec,
    f1,
    f2,
    quad: CollisionQuadrature,
    t,
    x,
    v,
) -> np.ndarray:
    """Pointwise collision operator at query points (t, x, v).

    f1, f2 are Fields or plain callables of velocity (exact probe profiles).
    Intended for verification and tests; the solver uses CollisionOperator.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    out = np.empty(t.shape)
    for p in range(len(t)):
        uu, ww, wq = quad.pair_nodes(v[p])
        up, vp = post_collision(uu, np.broadcast_to(v[p], uu.shape), ww)
        psi_vals = kernel.psi(np.broadcast_to(v[p], uu.shape), uu, ww)
        tp = np.full(len(uu), t[p])
        xp = np.broadcast_to(x[p], uu.shape)

        def fval(f, vel):
            if isinstance(f, Field):
                return f.eval(tp, xp, vel)
            return f(vel)

        def fval_at(f, vel_one):
            if isinstance(f, Field):
                return f.eval(t[p : p + 1], x[p : p + 1], vel_one)[0]
            return f(vel_one)[0]

        gain = fval(f1, up) * fval(f2, vp)
        loss = fval(f1, uu) * fval_at(f2, v[p : p + 1])
        phi = kernel.phi(t[p : p + 1], x[p : p + 1], np.hypot(v[p, 0], v[p, 1])[None])[0]
        out[p] = phi * np.sum(wq * psi_vals * (gain - loss))
    return out


def admissibility_norm(kernel: KernelSpec, quad: CollisionQuadrature, t, x, v) -> float:
    """Sampled L^inf_t,x,v L^1_{u,omega} norm of |K| over the given points."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    speeds = np.hypot(v[:, 0], v[:, 1])
    phi_abs = np.abs(kernel.phi(t, x, speeds))
    best = 0.0
    seen = {}
    for p in range(len(t)):
        key = (round(v[p, 0], 12), round(v[p, 1], 12))
        if key not in seen:
            uu, ww, wq = quad.pair_nodes(v[p])
            psi_vals = kernel.psi(np.broadcast_to(v[p], uu.shape), uu, ww)
            seen[key] = float(np.sum(wq * np.abs(psi_vals)))
        best = max(best, phi_abs[p] * seen[key])
    return best


def theta_set_measure(a: float, b: float) -> float:
    """Arc measure of {omega in S^1 : a <= omega . e <= b} for a unit vector e."""
    return 2.0 * (np.arccos(a) - np.arccos(b))


def p_weight_floor(c0: float, a: float = 0.2, b: float = 0.3) -> float:
    """Lower bound for |integral Psi P| from the angular-window construction."""
    if not (0.0 < a <= b < 1.0 / 3.0):
        raise CollisionError("window parameters must satisfy 0 < a <= b < 1/3")
    ball_area = np.pi  # |B_1| in R^2
    return (
        c0
        * theta_set_measure(a, b)
        * ball_area
        * (np.exp(a**2) - 1.0)
        * (np.exp(-9.0 * b**2) - np.exp(-1.0))
    )


def psi_p_constant(
    v_star,
    kernel: KernelSpec,
    quad: CollisionQuadrature,
    a: float = 0.2,
    b: float = 0.3,
    check_floor: bool = True,
) -> float:
    """C_Psi(v*) = integral Psi(v*, u, omega) P(v*, u, omega) domega du.

    Nonpositive; its magnitude must clear the angular-window floor, otherwise
    Psi violates the lower-bound condition near v* and the configuration is
    rejected.
    """
    v_star = np.asarray(v_star, dtype=float)
    if kernel.r_u < 3.0:
        raise CollisionError("u-quadrature ball must cover B_3(v*): need r_u >= 3")
    uu, ww, wq = quad.pair_nodes(v_star)
    psi_vals = kernel.psi(np.broadcast_to(v_star, uu.shape), uu, ww)
    pw = p_weight(np.broadcast_to(v_star, uu.shape), uu, ww)
    val = float(np.sum(wq * psi_vals * pw))
    if check_floor:
        floor = p_weight_floor(kernel.c0, a, b)
        if val > 0.0 or -val < floor:
            raise CollisionError(
                f"Psi probe constant {val:.3e} fails the floor {-floor:.3e}; "
                "Psi violates its lower-bound condition near v*"
            )
    return val


# ---------------------------------------------------------------------------
# Kernel presets


def _bump(s):
    """Smooth compactly supported bump: exp(1 - 1/(1 - s^2)) for |s| < 1, else 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    return out


def psi_constant(value: float = 1.0, r_u: float = 4.0) -> KernelSpec:
    """Phi-free angular kernel Psi identically equal to `value` (Phi must be set
    by the caller via replace); returned spec has Phi = 0."""
    if value <= 0:
        raise CollisionError("psi_constant needs a positive value")
    return KernelSpec(
        phi=lambda t, x, r: np.zeros(np.shape(t)),
        psi=lambda v, u, w: np.full(len(np.atleast_2d(u)), value),
        r_u=r_u,
        c0=value,
        name="psi_constant",
    )


def psi_mollified(
    base: float = 1.0, amplitude: float = 0.5, width: float = 2.0, r_u: float = 4.0
) -> KernelSpec:
    """Smooth Psi = base + amplitude * exp(-|u - v|^2 / width^2), bounded below
    by `base` everywhere (so c0 = base on B_3 x S^1)."""
    if base <= 0 or amplitude < 0:
        raise CollisionError("psi_mollified needs base > 0 and amplitude >= 0")

    def psi(v, u, w):
        d = np.atleast_2d(u) - np.atleast_2d(v)
        return base + amplitude * np.exp(-np.einsum("ij,ij->i", d, d) / width**2)

    return KernelSpec(
        phi=lambda t, x, r: np.zeros(np.shape(t)),
        psi=psi,
        r_u=r_u,
        c0=base,
        name="psi_mollified",
    )


def phi_gaussian_bump(
    amplitude: float = 0.08,
    t_center: float = 0.5,
    t_width: float = 0.3,
    x_radius: float = 0.6,
    r_scale: float = 4.0,
):
    """Time-space-speed amplitude: compact bump in t and x, Gaussian in speed.

    Supported in (t_center - t_width, t_center + t_width) x B_{x_radius},
    strictly inside (0, T) x Omega at the defaults.
    """

    def phi(t, x, r):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.atleast_1d(np.asarray(r, dtype=float))
        rad = np.hypot(x[:, 0], x[:, 1])
        return (
            amplitude
            * _bump((t - t_center) / t_width)
            * _bump(rad / x_radius)
            * np.exp(-((r / r_scale) ** 2))
        )

    return phi


def phi_zero():
    return lambda t, x, r: np.zeros(np.shape(np.atleast_1d(t)))


def make_kernel(
    psi_name: str = "psi_constant",
    phi_name: str = "phi_gaussian_bump",
    psi_params: Optional[dict] = None,
    phi_params: Optional[dict] = None,
    r_u: float = 4.0,
) -> KernelSpec:
    """Assemble a KernelSpec from preset names; unknown names raise with the
    offending field."""
    psi_params = dict(psi_params or {})
    phi_params = dict(phi_params or {})
    if psi_name == "psi_constant":
        spec = psi_constant(r_u=r_u, **psi_params)
    elif psi_name == "psi_mollified":
        spec = psi_mollified(r_u=r_u, **psi_params)
    else:
        raise CollisionError(f"unknown psi preset: {psi_name!r}")
    if phi_name == "phi_gaussian_bump":
        spec.phi = phi_gaussian_bump(**phi_params)
    elif phi_name == "phi_zero":
        spec.phi = phi_zero()
    else:
        raise CollisionError(f"unknown phi preset: {phi_name!r}")
    spec.name = f"{psi_name}+{phi_name}"
    return spec


def static_source_profile(
    kernel: KernelSpec,
    quad: CollisionQuadrature,
    s1: Callable,
    s2: Callable,
    v,
    chunk: int = 1024,
) -> np.ndarray:
    """C(v) = sum_q w_q Psi(v,u,omega)[s1(u')s2(v') - s1(u)s2(v)] at velocity
    points v, for static velocity profiles s1, s2.

    This is the exact (u, omega)-quadrature of the collision integrand for
    fields that depend on v alone; the spatial amplitude Phi multiplies it
    outside. Vectorized and chunked over the query points.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n_pts = len(v)
    e = quad.u_offsets
    om = quad.omega
    wq = (quad.u_weights[:, None] * quad.omega_weights[None, :]).ravel()
    e_full = np.repeat(e, len(om), axis=0)
    om_full = np.tile(om, (len(e), 1))
    out = np.empty(n_pts)
    for i0 in range(0, n_pts, chunk):
        vb = v[i0 : i0 + chunk]
        nb = len(vb)
        u = vb[:, None, :] + e_full[None, :, :]
        w = np.broadcast_to(om_full[None, :, :], u.shape)
        vv = np.broadcast_to(vb[:, None, :], u.shape)
        psi = kernel.psi(
            vv.reshape(-1, 2), u.reshape(-1, 2), w.reshape(-1, 2)
        ).reshape(nb, -1)
        up, vp = post_collision(u, vv, w)
        gain = s1(up.reshape(-1, 2)).reshape(nb, -1) * s2(vp.reshape(-1, 2)).reshape(
            nb, -1
        )
        loss = s1(u.reshape(-1, 2)).reshape(nb, -1) * s2(vb)[:, None]
        out[i0 : i0 + chunk] = (psi * (gain - loss)) @ wq
    return out
