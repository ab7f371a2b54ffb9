"""Disk domain, characteristic exit times, and boundary phase-space quadrature."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """Bounded convex domain: the ball B_d in R^n, with time horizon T."""

    n: int = 2
    d: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise GeometryError(f"dimension must be >= 2, got {self.n}")
        if self.d <= 0:
            raise GeometryError(f"radius must be positive, got {self.d}")
        if self.T <= 0:
            raise GeometryError(f"horizon must be positive, got {self.T}")

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,...i->...", x, x) <= self.d**2


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))


@dataclass
class BoundarySample:
    x: np.ndarray
    v: np.ndarray
    weight: float
    normal: np.ndarray


@dataclass
class BoundarySet:
    """Quadrature samples on the outgoing boundary set {x on dOmega, v.n(x) > 0}.

    Weights discretize the measure d(xi) = |n(x).v| dsigma_x dv, so summing
    weight * f(x, v) approximates the Gamma_+ integral of f.
    """

    x: np.ndarray       # (N, n) points on the sphere |x| = d
    v: np.ndarray       # (N, n) velocities with v.n > 0
    weight: np.ndarray  # (N,)
    normal: np.ndarray  # (N, n) unit outward normals

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> BoundarySample:
        return BoundarySample(self.x[i], self.v[i], float(self.weight[i]), self.normal[i])

    total_weight: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.total_weight = float(self.weight.sum())


def exit_time(domain: Domain, x, v, sign: int = +1):
    """Travel time from x to the boundary along +-v: sup{s >= 0 : x +- s v in Omega}.

    Vectorized over leading axes of x, v. Points outside the closed ball get the
    largest root of the crossing quadratic clamped to 0 (used for padding grid
    nodes only; the physical pipeline queries x in the closed ball).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if sign not in (+1, -1):
        raise GeometryError("sign must be +1 or -1")
    w = sign * v
    vv = np.einsum("...i,...i->...", w, w)
    if np.any(vv == 0.0):
        raise GeometryError("exit time is unbounded for zero velocity")
    # |x + s w|^2 = d^2: s = (-x.w + sqrt((x.w)^2 - |w|^2 (|x|^2 - d^2))) / |w|^2
    xw = np.einsum("...i,...i->...", x, w)
    xx = np.einsum("...i,...i->...", x, x)
    disc = xw**2 - vv * (xx - domain.d**2)
    root = (-xw + np.sqrt(np.maximum(disc, 0.0))) / vv
    out = np.where(disc >= 0.0, np.maximum(root, 0.0), 0.0)
    return out if out.ndim else float(out)


def entry_exit_times(domain: Domain, x, v):
    """Interval [s_in, s_out] of times s with x + s v inside the closed ball.

    Returns (s_in, s_out, hits). For rays missing the ball, hits is False and
    both times are 0. s_in is clamped at 0 (no backward extension).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    vv = np.einsum("...i,...i->...", v, v)
    xw = np.einsum("...i,...i->...", x, v)
    xx = np.einsum("...i,...i->...", x, x)
    disc = xw**2 - vv * (xx - domain.d**2)
    hits = disc > 0.0
    sq = np.sqrt(np.maximum(disc, 0.0))
    s_out = (-xw + sq) / vv
    s_in = np.maximum((-xw - sq) / vv, 0.0)
    hits = hits & (s_out > 0.0)
    s_out = np.where(hits, s_out, 0.0)
    s_in = np.where(hits, s_in, 0.0)
    return s_in, s_out, hits


def boundary_nodes(domain: Domain, n_boundary: int):
    """Cell-centered angular nodes on the circle |x| = d with arc weights."""
    theta = (np.arange(n_boundary) + 0.5) * (2.0 * np.pi / n_boundary)
    x = domain.d * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    normal = x / domain.d
    dsigma = np.full(n_boundary, domain.d * 2.0 * np.pi / n_boundary)
    return x, normal, dsigma


def half_ball_velocity_nodes(normal: np.ndarray, n_velocity: int, r_v: float):
    """Polar velocity nodes in the outgoing half ball {|v| <= R_v, v.n > 0}.

    Polar coordinates relative to the normal keep both the speed cut and the
    sign condition exact; nodes are cell-centered, so no node is tangential.
    Returns (v, dv_weight) with dv_weight the plain dv measure (no |v.n|).
    """
    n_rho = max(2, n_velocity // 2)
    n_phi = n_velocity
    rho = (np.arange(n_rho) + 0.5) * (r_v / n_rho)
    phi = -np.pi / 2 + (np.arange(n_phi) + 0.5) * (np.pi / n_phi)
    theta_n = np.arctan2(normal[1], normal[0])
    ang = theta_n + phi[None, :]
    v = np.stack(
        [rho[:, None] * np.cos(ang), rho[:, None] * np.sin(ang)], axis=-1
    ).reshape(-1, 2)
    w = (rho[:, None] * (r_v / n_rho) * (np.pi / n_phi)) * np.ones((n_rho, n_phi))
    return v, w.reshape(-1)


def outgoing_quadrature(
    domain: Domain, n_boundary: int, n_velocity: int, r_v: float
) -> BoundarySet:
    """Quadrature for the outgoing set Gamma_+ truncated to speeds |v| <= R_v."""
    if n_boundary < 4 or n_velocity < 4:
        raise GeometryError("quadrature counts must be >= 4")
    if domain.n != 2:
        raise GeometryError("boundary quadrature implemented for n = 2")
    xb, normals, dsigma = boundary_nodes(domain, n_boundary)
    xs, vs, ws, ns = [], [], [], []
    for i in range(n_boundary):
        v, dv = half_ball_velocity_nodes(normals[i], n_velocity, r_v)
        vn = v @ normals[i]
        xs.append(np.broadcast_to(xb[i], v.shape).copy())
        vs.append(v)
        ws.append(np.abs(vn) * dv * dsigma[i])
        ns.append(np.broadcast_to(normals[i], v.shape).copy())
    return BoundarySet(
        x=np.concatenate(xs),
        v=np.concatenate(vs),
        weight=np.concatenate(ws),
        normal=np.concatenate(ns),
    )


def disk_quadrature(radius: float, n_rho: int, n_theta: int):
    """Cell-centered polar quadrature over the disk B_radius: (points, weights)."""
    rho = (np.arange(n_rho) + 0.5) * (radius / n_rho)
    theta = (np.arange(n_theta) + 0.5) * (2.0 * np.pi / n_theta)
    pts = np.stack(
        [
            rho[:, None] * np.cos(theta)[None, :],
            rho[:, None] * np.sin(theta)[None, :],
        ],
        axis=-1,
    ).reshape(-1, 2)
    w = (rho[:, None] * (radius / n_rho) * (2.0 * np.pi / n_theta)) * np.ones(
        (n_rho, n_theta)
    )
    return pts, w.reshape(-1)


@dataclass
class TransportedQuad:
    """Quadrature nodes for functionals of the form

        int phi(y, v) G(T, y + T v, v) dy dv            (rays still inside at T)
      + int_{Gamma_+} (v.n) psi G dt dsigma dv           (rays exiting before T)

    with psi(t,x,v) = phi(x - t v, v). The change of variables y = x - t v maps
    the outgoing-boundary measure |v.n| dsigma_x dt to dy exactly, so both terms
    become one weighted sum over (y, v) nodes: each ray is sampled where it is
    last seen (exit point, or final time), and rays that never meet the domain
    before T carry zero weight.
    """

    y: np.ndarray      # (N, 2) ray offsets
    v: np.ndarray      # (N, 2) velocities
    t: np.ndarray      # (N,) sample times
    x: np.ndarray      # (N, 2) sample positions y + t v
    weight: np.ndarray # (N,) quadrature weights (zero for non-interacting rays)
    kind: np.ndarray   # (N,) 0 = boundary sample, 1 = final sample, 2 = null


def transported_quadrature(
    domain: Domain, y: np.ndarray, v: np.ndarray, weight: np.ndarray
) -> TransportedQuad:
    """Classify rays x(t) = y + t v and build the unified sample set."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    weight = np.asarray(weight, dtype=float).copy()
    T = domain.T
    s_in, s_out, hits = entry_exit_times(domain, y, v)
    null = (~hits) | (s_in >= T)
    boundary = (~null) & (s_out <= T)
    final = (~null) & (~boundary)
    t = np.where(final, T, np.where(boundary, s_out, 0.0))
    x = y + t[:, None] * v
    kind = np.full(len(y), 2, dtype=np.int8)
    kind[boundary] = 0
    kind[final] = 1
    weight[null] = 0.0
    return TransportedQuad(y=y, v=v, t=t, x=x, weight=weight, kind=kind)
