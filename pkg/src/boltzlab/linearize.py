"""Second-order linearization of the measurement map.

Probing the nonlinear problem with data epsilon_1 V_1 + epsilon_2 V_2 and
forming the mixed second difference

    D^2 A = (A(e1, e2) - A(e1, 0) - A(0, e2)) / (e1 e2)

isolates the bilinear response W11, the transport solve driven by the mixed
collision source S11. This module builds the probe data, the expansion terms
(V, W, S, remainder), the order diagnostics, and the integral identity that
links D^2 of the measurements to a weighted space-time integral of S11.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .boltzmann import (
    NonlinearSolution,
    Smallness,
    SolveError,
    evaluate_solution,
    solve_nonlinear,
)
from .collision import CollisionOperator, CollisionQuadrature, KernelSpec, static_source_profile
from .transport import DataPair, Field, Grid, phi_line_integral, solve_linear, sup_norm


class LinearizeError(RuntimeError):
    pass


def gaussian_probe_profile(v_star: np.ndarray) -> Callable:
    """V1(v) = exp(-|v - v*|^2)."""
    v_star = np.asarray(v_star, dtype=float)

    def profile(v):
        d = np.atleast_2d(v) - v_star
        return np.exp(-np.einsum("ij,ij->i", d, d))

    return profile


def constant_probe_profile() -> Callable:
    """V2 = 1."""
    return lambda v: np.ones(len(np.atleast_2d(v)))


def probe_data(v_star: np.ndarray) -> Tuple[DataPair, DataPair]:
    """Data pairs whose boundary/initial traces generate the probe solutions.

    The amplitude bound of each pair is sup|g| + sup|h| = 2, so the combined
    data e1*d1 + e2*d2 carries the bound 2(e1 + e2) used by the smallness guard.
    """
    d1 = DataPair.from_velocity_profile(gaussian_probe_profile(v_star), bound=2.0)
    d2 = DataPair.from_velocity_profile(constant_probe_profile(), bound=2.0)
    return d1, d2


def second_difference(a_11, a_10, a_01, e1: float, e2: float):
    """(A(e1,e2) - A(e1,0) - A(0,e2)) / (e1 e2); the value at (0,0) vanishes.

    Works on any objects supporting - and * float (arrays, Fields,
    Measurements).
    """
    if e1 <= 0 or e2 <= 0:
        raise LinearizeError("finite-difference amplitudes must be positive")
    return (a_11 - a_10 - a_01) * (1.0 / (e1 * e2))


def s11_velocity_profile(
    kernel: KernelSpec, quad: CollisionQuadrature, v_star: np.ndarray, v
) -> np.ndarray:
    """Velocity profile C(v) of the mixed source: S11(t,x,v) = Phi(t,x,|v|) C(v).

    C is the symmetrized bilinear collision profile of the probe pair
    (Gaussian, constant); at v = v* it reduces to the probe-weight constant
    C_Psi(v*).
    """
    s1 = gaussian_probe_profile(np.asarray(v_star, dtype=float))
    s2 = constant_probe_profile()
    return static_source_profile(kernel, quad, s1, s2, v) + static_source_profile(
        kernel, quad, s2, s1, v
    )


def source_S(
    op: CollisionOperator, v_star: np.ndarray, which: Tuple[int, int]
) -> Field:
    """Quadratic expansion source S_(k1,k2) on the operator's grid.

    which is (2,0), (1,1), or (0,2); the (1,1) source is symmetric in the two
    probes by construction.
    """
    s1 = gaussian_probe_profile(np.asarray(v_star, dtype=float))
    s2 = constant_probe_profile()
    if which == (2, 0):
        c = static_source_profile(op.kernel, op.quad, s1, s1, op.v_flat)
    elif which == (0, 2):
        c = static_source_profile(op.kernel, op.quad, s2, s2, op.v_flat)
    elif which == (1, 1):
        c = s11_velocity_profile(op.kernel, op.quad, v_star, op.v_flat)
    else:
        raise LinearizeError(f"unknown source index {which!r}")
    vals = (op._phi_cols * c[None, :]).reshape(op.grid.shape)
    return Field(op.grid, vals)


def solve_W(grid: Grid, source: Field, n_source_nodes: int = 64) -> Field:
    """Transport solve with zero data driven by an expansion source."""
    return solve_linear(grid, source, DataPair.zero(), n_source_nodes)


def w11_at(
    op: CollisionOperator,
    v_star: np.ndarray,
    t,
    x,
    v,
    n_phi_nodes: int = 32,
) -> np.ndarray:
    """Exact-separable evaluation of W11 at arbitrary points.

    W11(t,x,v) = C(v) * integral of Phi along the backward characteristic;
    both factors are evaluated exactly (no phase-space grid involved).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    uniq, inverse = np.unique(v, axis=0, return_inverse=True)
    c = s11_velocity_profile(op.kernel, op.quad, v_star, uniq)[inverse]
    return c * phi_line_integral(op.grid.domain, op.kernel.phi, t, x, v, n_phi_nodes)


@dataclass
class SecondOrderBundle:
    """All expansion terms for one probe pair at amplitudes (e1, e2).

    Fields live on the solver grid. remainders maps the three evaluated
    amplitude pairs to R = F - e1 V1 - e2 V2 - e1^2 W20 - e1 e2 W11 - e2^2 W02.
    """

    op: CollisionOperator
    v_star: np.ndarray
    e1: float
    e2: float
    solutions: Dict[Tuple[float, float], NonlinearSolution]
    V1: Field
    V2: Field
    W20: Field
    W11: Field
    W02: Field
    S20: Field
    S11: Field
    S02: Field
    remainders: Dict[Tuple[float, float], Field]

    def d2_field(self) -> Field:
        return second_difference(
            self.solutions[(self.e1, self.e2)].field,
            self.solutions[(self.e1, 0.0)].field,
            self.solutions[(0.0, self.e2)].field,
            self.e1,
            self.e2,
        )

    def d2_remainder(self) -> Field:
        return second_difference(
            self.remainders[(self.e1, self.e2)],
            self.remainders[(self.e1, 0.0)],
            self.remainders[(0.0, self.e2)],
            self.e1,
            self.e2,
        )

    def identity_residual(self) -> float:
        """Relative sup-norm of D^2 F - W11 - D^2 R (algebraically zero)."""
        lhs = self.d2_field()
        rhs = self.W11 + self.d2_remainder()
        scale = max(sup_norm(self.W11), 1e-300)
        return sup_norm(lhs - rhs) / scale


def expansion_bundle(
    op: CollisionOperator,
    v_star: np.ndarray,
    e1: float,
    e2: float,
    smallness: Optional[Smallness] = None,
    tol: float = 1e-12,
    n_source_nodes: int = 64,
) -> SecondOrderBundle:
    """Three nonlinear solves plus all second-order expansion terms."""
    v_star = np.asarray(v_star, dtype=float)
    d1, d2 = probe_data(v_star)
    grid = op.grid

    from .transport import combine_data

    solutions: Dict[Tuple[float, float], NonlinearSolution] = {}
    for pair in [(e1, e2), (e1, 0.0), (0.0, e2)]:
        data = combine_data(d1, pair[0], d2, pair[1])
        solutions[pair] = solve_nonlinear(
            op, data, smallness, tol=tol, n_source_nodes=n_source_nodes
        )

    x, v = grid.phase_nodes()
    vf = v.reshape(-1, 2)
    shape = v.shape[:-1]
    v1_vals = np.broadcast_to(
        gaussian_probe_profile(v_star)(vf).reshape(shape)[None], grid.shape
    ).copy()
    v2_vals = np.ones(grid.shape)
    V1 = Field(grid, v1_vals)
    V2 = Field(grid, v2_vals)

    S20 = source_S(op, v_star, (2, 0))
    S11 = source_S(op, v_star, (1, 1))
    S02 = source_S(op, v_star, (0, 2))
    W20 = solve_W(grid, S20, n_source_nodes)
    W11 = solve_W(grid, S11, n_source_nodes)
    W02 = solve_W(grid, S02, n_source_nodes)

    remainders = {}
    for (a1, a2), sol in solutions.items():
        remainders[(a1, a2)] = (
            sol.field
            - a1 * V1
            - a2 * V2
            - (a1 * a1) * W20
            - (a1 * a2) * W11
            - (a2 * a2) * W02
        )
    return SecondOrderBundle(
        op=op,
        v_star=v_star,
        e1=e1,
        e2=e2,
        solutions=solutions,
        V1=V1,
        V2=V2,
        W20=W20,
        W11=W11,
        W02=W02,
        S20=S20,
        S11=S11,
        S02=S02,
        remainders=remainders,
    )


def integral_identity_check(
    op: CollisionOperator,
    v_star,
    y_star,
    rho: float = 0.5,
    e: float = 1e-4,
    smallness: Optional[Smallness] = None,
    n_disk: Tuple[int, int] = (8, 12),
    n_t: int = 24,
    n_source_nodes: int = 64,
    n_phi_nodes: int = 32,
) -> Dict[str, float]:
    """Weak-form consistency of the second difference of measurements.

    For a test function phi(y, v) supported in B_rho(y*) x B_rho(v*), the
    transport duality gives, exactly in the continuum,

        integral phi(y,v) D^2A(y,v) dy dv
            = integral phi(x - t v, v) [S11 + D^2 Shat](t, x, v) dt dx dv,

    where D^2A pairs the outgoing trace and final snapshot through the
    characteristic change of variables, and Shat is the non-separable part of
    the collision source (the separable quadratic parts cancel in D^2 up to
    the surviving S11). Returns both sides, the bias term, and the residual
    relative to the S11 term. The residual is pure quadrature/interpolation
    error and shrinks as n_disk / n_t / the solver grid are refined.
    """
    from .collision import _bump
    from .geometry import disk_quadrature, transported_quadrature

    v_star = np.asarray(v_star, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    d1, d2 = probe_data(v_star)
    from .transport import combine_data

    solutions = {}
    for pair in [(e, e), (e, 0.0), (0.0, e)]:
        data = combine_data(d1, pair[0], d2, pair[1])
        solutions[pair] = solve_nonlinear(
            op, data, smallness, tol=1e-12, n_source_nodes=n_source_nodes
        )

    zy, wy = disk_quadrature(rho, *n_disk)
    phi_y = wy * _bump(np.linalg.norm(zy, axis=1) / rho)
    zv, wv = disk_quadrature(rho, *n_disk)
    phi_v = wv * _bump(np.linalg.norm(zv, axis=1) / rho)
    ny, nv = len(zy), len(zv)
    y_full = np.repeat(y_star[None, :] + zy, nv, axis=0)
    v_full = np.tile(v_star[None, :] + zv, (ny, 1))
    w_full = np.repeat(phi_y, nv) * np.tile(phi_v, ny)

    # left side: transported pairing with the measurement second difference
    tq = transported_quadrature(op.grid.domain, y_full, v_full, w_full)
    vals = {
        pair: evaluate_solution(
            op, sol, tq.t, tq.x, tq.v, n_source_nodes, n_phi_nodes
        )
        for pair, sol in solutions.items()
    }
    d2a = second_difference(vals[(e, e)], vals[(e, 0.0)], vals[(0.0, e)], e, e)
    lhs = float(tq.weight @ d2a)

    # right side: time quadrature of the transported source integrals
    uniq, inverse = np.unique(v_full, axis=0, return_inverse=True)
    c11 = s11_velocity_profile(op.kernel, op.quad, v_star, uniq)[inverse]
    d2shat = second_difference(
        solutions[(e, e)].grid_source,
        solutions[(e, 0.0)].grid_source,
        solutions[(0.0, e)].grid_source,
        e,
        e,
    )
    T = op.grid.domain.T
    dt = T / n_t
    rhs_s11 = 0.0
    rhs_bias = 0.0
    speeds = np.linalg.norm(v_full, axis=1)
    for k in range(n_t):
        tk = (k + 0.5) * dt
        xk = y_full + tk * v_full
        tt = np.full(len(xk), tk)
        phi_vals = op.kernel.phi(tt, xk, speeds)
        rhs_s11 += dt * float(w_full @ (phi_vals * c11))
        rhs_bias += dt * float(w_full @ d2shat.eval(tt, xk, v_full))
    scale = max(abs(rhs_s11), 1e-300)
    residual = abs(lhs - rhs_s11 - rhs_bias) / scale
    return {
        "lhs": lhs,
        "rhs_s11": rhs_s11,
        "rhs_bias": rhs_bias,
        "residual": residual,
    }


def fit_loglog_slope(eps: np.ndarray, norms: np.ndarray) -> float:
    mask = norms > 0
    if mask.sum() < 2:
        raise LinearizeError("not enough nonzero norms for a slope fit")
    return float(np.polyfit(np.log(eps[mask]), np.log(norms[mask]), 1)[0])


def remainder_order_study(
    op: CollisionOperator,
    v_star: np.ndarray,
    eps_list: List[float],
    smallness: Smallness,
    n_source_nodes: int = 64,
):
    """Sup-norms of the first- and third-order remainders over an amplitude
    sweep, with fitted log-log slopes.

    Returns (rows, slope_first, slope_third) where each row is
    (eps, ||F - eps V1 - eps V2||, ||R||).
    """
    for e in eps_list:
        if 4.0 * e > smallness.kappa * (1.0 + 1e-12):
            raise LinearizeError(
                f"amplitude {e:.3e} violates the probe guard 4 eps <= kappa"
            )
    rows = []
    for e in sorted(eps_list, reverse=True):
        bundle = expansion_bundle(op, v_star, e, e, smallness, n_source_nodes=n_source_nodes)
        sol = bundle.solutions[(e, e)]
        first = sup_norm(sol.field - e * bundle.V1 - e * bundle.V2)
        third = sup_norm(bundle.remainders[(e, e)])
        rows.append((e, first, third))
    eps = np.array([r[0] for r in rows])
    slope_first = fit_loglog_slope(eps, np.array([r[1] for r in rows]))
    slope_third = fit_loglog_slope(eps, np.array([r[2] for r in rows]))
    return rows, slope_first, slope_third
