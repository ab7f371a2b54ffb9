"""Linear transport solves by direct evaluation of the explicit solution formula.

The solution of dF/dt + v.grad F = f with incoming data g and initial data h is
evaluated pointwise:

    F(t,x,v) = g(t - tau, x - tau v, v)        if t >= tau   (tau = backward exit time)
             = h(x - t v, v)                   if t <  tau
             + integral_0^{min(t, tau)} f(t - s, x - s v, v) ds

At the tie t == tau the incoming-data branch wins (Heaviside convention H(0) = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import Domain, exit_time
from .numerics import field_eval_points, line_integral_grid, line_integral_points

DEFAULT_SOURCE_NODES = 64


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    """Tensor phase-space grid: uniform nodes in t on [0,T], x on [-d,d]^2,
    v on [-R_v, R_v]^2."""

    domain: Domain
    nt: int = 64        # time intervals; nt + 1 nodes
    nx: int = 16        # spatial nodes per axis
    nv: int = 8         # velocity nodes per axis
    rv: float = 4.0     # velocity truncation radius

    def __post_init__(self):
        if self.nt < 2 or self.nx < 2 or self.nv < 2:
            raise TransportError("grid sizes must be >= 2 per axis")

    @property
    def t_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.domain.T, self.nt + 1)

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(-self.domain.d, self.domain.d, self.nx)

    @property
    def v_nodes(self) -> np.ndarray:
        return np.linspace(-self.rv, self.rv, self.nv)

    @property
    def shape(self):
        return (self.nt + 1, self.nx, self.nx, self.nv, self.nv)

    def phase_nodes(self):
        """All (x, v) node combinations: arrays of shape (nx, nx, nv, nv, 2)."""
        xa, xb, va, vb = np.meshgrid(
            self.x_nodes, self.x_nodes, self.v_nodes, self.v_nodes, indexing="ij"
        )
        x = np.stack([xa, xb], axis=-1)
        v = np.stack([va, vb], axis=-1)
        return x, v

    def backward_exit_times(self) -> np.ndarray:
        x, v = self.phase_nodes()
        return exit_time(self.domain, x, v, sign=-1)


@dataclass
class Field:
    """Sampled function of (t, x, v) on a tensor grid with multilinear
    off-grid evaluation, clamped to the grid hull."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise TransportError(
                f"value shape {self.values.shape} != grid shape {self.grid.shape}"
            )

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    def eval(self, t, x, v) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        g = self.grid
        return field_eval_points(
            self.values,
            t, x[:, 0], x[:, 1], v[:, 0], v[:, 1],
            0.0, g.domain.T / g.nt,
            -g.domain.d, 2 * g.domain.d / (g.nx - 1),
            -g.rv, 2 * g.rv / (g.nv - 1),
        )

    def __add__(self, other):
        return Field(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, a: float):
        return Field(self.grid, self.values * a)

    __rmul__ = __mul__


def _vals(f):
    return f.values if isinstance(f, Field) else f


def sup_norm(f) -> float:
    v = _vals(f)
    return float(np.max(np.abs(v))) if v.size else 0.0


@dataclass
class DataPair:
    """Incoming boundary data g(t, x, v) and initial data h(x, v).

    Both callables accept broadcast arrays (t: (N,), x: (N,2), v: (N,2)) and are
    evaluable off their nominal domains (needed at padding grid nodes outside
    the disk). When the data are traces of a function of v alone, set
    velocity_profile; solvers then evaluate the free-streaming part exactly.
    """

    g: Callable
    h: Callable
    amplitude_bound: float
    velocity_profile: Optional[Callable] = None

    @classmethod
    def zero(cls) -> "DataPair":
        return cls(
            g=lambda t, x, v: np.zeros(np.shape(t)),
            h=lambda x, v: np.zeros(len(np.atleast_2d(x))),
            amplitude_bound=0.0,
            velocity_profile=lambda v: np.zeros(len(np.atleast_2d(v))),
        )

    @classmethod
    def from_velocity_profile(cls, profile: Callable, bound: float) -> "DataPair":
        return cls(
            g=lambda t, x, v: profile(v),
            h=lambda x, v: profile(v),
            amplitude_bound=bound,
            velocity_profile=profile,
        )

    def scaled(self, a: float) -> "DataPair":
        prof = None
        if self.velocity_profile is not None:
            prof = lambda v, _p=self.velocity_profile: a * _p(v)
        return DataPair(
            g=lambda t, x, v: a * self.g(t, x, v),
            h=lambda x, v: a * self.h(x, v),
            amplitude_bound=a * self.amplitude_bound,
            velocity_profile=prof,
        )


def combine_data(d1: DataPair, e1: float, d2: DataPair, e2: float) -> DataPair:
    prof = None
    if d1.velocity_profile is not None and d2.velocity_profile is not None:
        prof = lambda v: e1 * d1.velocity_profile(v) + e2 * d2.velocity_profile(v)
    return DataPair(
        g=lambda t, x, v: e1 * d1.g(t, x, v) + e2 * d2.g(t, x, v),
        h=lambda x, v: e1 * d1.h(x, v) + e2 * d2.h(x, v),
        amplitude_bound=e1 * d1.amplitude_bound + e2 * d2.amplitude_bound,
        velocity_profile=prof,
    )


def homogeneous_at(domain: Domain, data: DataPair, t, x, v) -> np.ndarray:
    """Exact data part of the solution formula at arbitrary points (no source)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if data.velocity_profile is not None:
        return np.broadcast_to(data.velocity_profile(v), t.shape).copy()
    tau = exit_time(domain, x, v, sign=-1)
    tau = np.atleast_1d(tau)
    from_g = t >= tau
    out = np.empty(t.shape)
    if np.any(from_g):
        tg = t[from_g] - tau[from_g]
        xg = x[from_g] - tau[from_g, None] * v[from_g]
        out[from_g] = data.g(tg, xg, v[from_g])
    from_h = ~from_g
    if np.any(from_h):
        xh = x[from_h] - t[from_h, None] * v[from_h]
        out[from_h] = data.h(xh, v[from_h])
    return out


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise TransportError(f"non-finite {what} value at grid node {tuple(bad)}")


def solve_linear(
    grid: Grid,
    source,
    data: DataPair,
    n_source_nodes: int = DEFAULT_SOURCE_NODES,
    taum: Optional[np.ndarray] = None,
) -> Field:
    """Evaluate the explicit solution formula at every grid node.

    source may be None (homogeneous), a Field (interpolated along
    characteristics), or a callable f(t, x, v) evaluated exactly. The
    characteristic integral uses composite midpoint quadrature with
    n_source_nodes nodes.
    """
    g = grid
    if taum is None:
        taum = g.backward_exit_times()
    x, v = g.phase_nodes()
    t_nodes = g.t_nodes

    nphase = g.nx * g.nx * g.nv * g.nv
    xf = x.reshape(nphase, 2)
    vf = v.reshape(nphase, 2)
    values = np.empty(g.shape)
    for it, t in enumerate(t_nodes):
        tcol = np.full(nphase, t)
        values[it] = homogeneous_at(g.domain, data, tcol, xf, vf).reshape(
            g.nx, g.nx, g.nv, g.nv
        )

    if isinstance(source, Field):
        _check_finite(source.values, "source")
        values += line_integral_grid(
            source.values, taum, t_nodes, g.x_nodes, g.v_nodes, n_source_nodes
        )
    elif callable(source):
        values += _integrate_callable_source(g, source, taum, n_source_nodes)
    elif source is not None:
        raise TransportError("source must be None, a Field, or a callable")

    _check_finite(values, "solution")
    return Field(g, values)


def _integrate_callable_source(grid, f, taum, nq):
    g = grid
    x, v = g.phase_nodes()
    nphase = g.nx * g.nx * g.nv * g.nv
    xf = x.reshape(nphase, 2)
    vf = v.reshape(nphase, 2)
    tauf = taum.reshape(nphase)
    out = np.zeros(g.shape)
    for it, t in enumerate(g.t_nodes):
        if t == 0.0:
            continue
        smax = np.minimum(t, tauf)
        h = smax / nq
        acc = np.zeros(nphase)
        for q in range(nq):
            s = (q + 0.5) * h
            vals = f(t - s, xf - s[:, None] * vf, vf)
            _check_finite(np.asarray(vals), "source")
            acc += vals
        out[it] = (acc * h).reshape(g.nx, g.nx, g.nv, g.nv)
    return out


def solution_with_source_at(
    grid: Grid,
    data: DataPair,
    source_field: Field,
    t,
    x,
    v,
    n_source_nodes: int = DEFAULT_SOURCE_NODES,
) -> np.ndarray:
    """Exact-location evaluation of the solution formula at query points,
    with the source term taken from a gridded Field (interpolated along the
    characteristic). Used for boundary traces and off-grid measurements."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    out = homogeneous_at(grid.domain, data, t, x, v)
    tau = np.atleast_1d(exit_time(grid.domain, x, v, sign=-1))
    out += line_integral_points(
        source_field.values,
        t, x[:, 0], x[:, 1], v[:, 0], v[:, 1],
        tau, grid.t_nodes, grid.x_nodes, grid.v_nodes, n_source_nodes,
    )
    return out


def phi_line_integral(
    domain: Domain, phi: Callable, t, x, v, nq: int = 32
) -> np.ndarray:
    """integral_0^{min(t, tau)} phi(t - s, x - s v, |v|) ds for a callable
    spatial amplitude phi(t, x, r), by composite midpoint quadrature.

    Evaluates the amplitude exactly along the characteristic, so separable
    sources phi(t,x,|v|) c(v) incur no grid interpolation error.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    tau = np.atleast_1d(exit_time(domain, x, v, sign=-1))
    smax = np.minimum(t, tau)
    h = smax / nq
    r = np.hypot(v[:, 0], v[:, 1])
    acc = np.zeros(t.shape)
    for q in range(nq):
        s = (q + 0.5) * h
        acc += phi(t - s, x - s[:, None] * v, r)
    return acc * h
