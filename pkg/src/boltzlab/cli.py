"""Command-line front end: configuration, the five canonical runs, reports.

Configuration is an INI file (sections/keys below, all optional — defaults
reproduce the desk-scale experiments); command-line flags override the file.
Every run writes its tables as commented CSV plus a JSON manifest carrying
the config hash, versions, and wall-clock.
"""

from __future__ import annotations

import argparse
import configparser
import io
import os
import sys
import time
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from . import reports
from .boltzmann import Smallness, pick_smallness, solve_nonlinear
from .collision import (
    CollisionError,
    CollisionOperator,
    CollisionQuadrature,
    admissibility_norm,
    make_kernel,
)
from .geometry import Domain
from .transport import Grid

MODES = ("forward", "expand-check", "identity-check", "reconstruct", "sweep", "selftest")
WORKERS_ENV = "BOLTZLAB_WORKERS"


class ConfigError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    # domain
    d: float = 1.0
    T: float = 1.0
    r_v: float = 4.0
    # grid
    nt: int = 32
    nx: int = 12
    nv: int = 8
    # kernel
    psi: str = "psi_mollified"
    phi: str = "phi_gaussian_bump"
    r_u: float = 4.0
    psi_params: Dict[str, float] = field(default_factory=dict)
    phi_params: Dict[str, float] = field(default_factory=dict)
    # probe
    r: float = 1.0
    angle: float = 0.0
    lam: float = 0.0          # 0 -> auto
    eps: float = 0.0          # 0 -> auto
    n_offsets: int = 24
    n_directions: int = 16
    n_source_nodes: int = 16
    # noise
    deltas: List[float] = field(default_factory=list)
    seed: int = 0
    # run
    mode: str = "reconstruct"
    out: str = "."
    workers: int = 0          # 0 -> env or 1

    def v_star(self) -> np.ndarray:
        return self.r * np.array([np.cos(self.angle), np.sin(self.angle)])

    def domain(self) -> Domain:
        return Domain(d=self.d, T=self.T)

    def grid(self) -> Grid:
        return Grid(self.domain(), nt=self.nt, nx=self.nx, nv=self.nv, rv=self.r_v)


_SECTIONS = {
    "domain": ("d", "T", "r_v"),
    "grid": ("nt", "nx", "nv"),
    "kernel": ("psi", "phi", "r_u"),
    "probe": ("r", "angle", "lam", "eps", "n_offsets", "n_directions", "n_source_nodes"),
    "noise": ("deltas", "seed"),
    "run": ("mode", "out", "workers"),
}
_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = ExperimentConfig()
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if key in keys:
                _assign(cfg, section, key, raw)
            elif section == "kernel" and key.startswith(("psi_", "phi_")):
                prefix, name = key.split("_", 1)
                getattr(cfg, f"{prefix}_params")[name] = float(raw)
            else:
                raise ConfigError(f"unknown config key [{section}] {key}")
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
    if cfg.mode not in MODES:
        raise ConfigError(f"[run] mode must be one of {MODES}, got {cfg.mode!r}")
    return cfg


def _assign(cfg: ExperimentConfig, section: str, key: str, raw: str) -> None:
    if key == "deltas":
        cfg.deltas = [float(s) for s in raw.replace(",", " ").split()]
        return
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            setattr(cfg, key, int(raw))
        elif kind == "float":
            setattr(cfg, key, float(raw))
        else:
            setattr(cfg, key, raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text; parse -> serialize is idempotent."""
    out = io.StringIO()
    for section, keys in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for key in keys:
            if key == "deltas":
                val = " ".join(repr(v) for v in cfg.deltas)
            else:
                v = getattr(cfg, key)
                val = repr(v) if isinstance(v, float) else str(v)
            out.write(f"{key} = {val}\n")
        if section == "kernel":
            for name in sorted(cfg.psi_params):
                out.write(f"psi_{name} = {cfg.psi_params[name]!r}\n")
            for name in sorted(cfg.phi_params):
                out.write(f"phi_{name} = {cfg.phi_params[name]!r}\n")
        out.write("\n")
    return out.getvalue()


def _build_operator(cfg: ExperimentConfig):
    try:
        kernel = make_kernel(cfg.psi, cfg.phi, cfg.psi_params, cfg.phi_params, cfg.r_u)
    except CollisionError as exc:
        raise ConfigError(f"[kernel] {exc}") from exc
    quad = CollisionQuadrature.build(r_u=cfg.r_u)
    op = CollisionOperator(kernel, quad, cfg.grid())
    return op


def _smallness(cfg: ExperimentConfig, op: CollisionOperator) -> Smallness:
    grid = op.grid
    x, v = grid.phase_nodes()
    xs = x.reshape(-1, 2)[::5]
    vs = v.reshape(-1, 2)[::5]
    k = min(len(xs), len(vs))
    ts = np.resize(grid.t_nodes, k)
    M = admissibility_norm(op.kernel, op.quad, ts, xs[:k], vs[:k])
    return pick_smallness(max(M, 1e-12), grid.domain.T)


def _probe_eps(cfg: ExperimentConfig, smallness: Smallness) -> float:
    return cfg.eps if cfg.eps > 0 else smallness.kappa / 16.0


# ---------------------------------------------------------------------------
# Modes


def _mode_forward(cfg, op, smallness, outdir, comments):
    from .geometry import outgoing_quadrature
    from .boltzmann import measure
    from .linearize import probe_data
    from .transport import combine_data

    eps = _probe_eps(cfg, smallness)
    d1, d2 = probe_data(cfg.v_star())
    data = combine_data(d1, eps, d2, eps)
    sol = solve_nonlinear(op, data, smallness, n_source_nodes=cfg.n_source_nodes)

    bset = outgoing_quadrature(op.grid.domain, 16, 8, cfg.r_v)
    n_time = 8
    t_nodes = (np.arange(n_time) + 0.5) * (op.grid.domain.T / n_time)
    t_out = np.repeat(t_nodes, len(bset))
    x_out = np.tile(bset.x, (n_time, 1))
    v_out = np.tile(bset.v, (n_time, 1))
    x_fin, v_fin = op.grid.phase_nodes()
    xf = x_fin.reshape(-1, 2)[::4]
    vf = v_fin.reshape(-1, 2)[::4]
    k = min(len(xf), len(vf))
    meas = measure(op, sol, t_out, x_out, v_out, xf[:k], vf[:k],
                   n_source_nodes=cfg.n_source_nodes)
    rows = [
        ("outgoing", t_out[i], x_out[i, 0], x_out[i, 1], v_out[i, 0],
         v_out[i, 1], meas.outgoing[i])
        for i in range(len(t_out))
    ] + [
        ("final", op.grid.domain.T, xf[j, 0], xf[j, 1], vf[j, 0], vf[j, 1],
         meas.final[j])
        for j in range(k)
    ]
    reports.write_csv(
        os.path.join(outdir, "forward_measurements.csv"),
        ["kind", "t", "x1", "x2", "v1", "v2", "value"],
        rows, comments,
    )
    return {"iterations": sol.report.iterations}


def _mode_expand_check(cfg, op, smallness, outdir, comments):
    from .linearize import remainder_order_study

    eps_list = [smallness.kappa / k for k in (8, 16, 32, 64)]
    rows, slope_first, slope_third = remainder_order_study(
        op, cfg.v_star(), eps_list, smallness, n_source_nodes=cfg.n_source_nodes
    )
    out_rows = [
        (e, first, third, slope_first, slope_third) for e, first, third in rows
    ]
    reports.write_csv(
        os.path.join(outdir, "expansion_orders.csv"),
        ["eps", "first_order_norm", "third_order_norm", "slope_first", "slope_third"],
        out_rows, comments,
    )
    return {"slope_first": slope_first, "slope_third": slope_third}


def _mode_identity_check(cfg, op, smallness, outdir, comments):
    from .linearize import integral_identity_check

    eps = min(_probe_eps(cfg, smallness), smallness.kappa / 4.0)
    res = integral_identity_check(
        op, cfg.v_star(), np.array([0.1, -0.2]), rho=0.5, e=eps,
        smallness=smallness, n_source_nodes=cfg.n_source_nodes,
    )
    reports.write_csv(
        os.path.join(outdir, "integral_identity.csv"),
        ["lhs", "rhs_s11", "rhs_bias", "residual"],
        [(res["lhs"], res["rhs_s11"], res["rhs_bias"], res["residual"])],
        comments,
    )
    return res


def _reconstruction_config(cfg: ExperimentConfig, delta: float):
    from .rayrecover import ReconstructionConfig

    return ReconstructionConfig(
        r=cfg.r,
        n_offsets=cfg.n_offsets,
        n_directions=cfg.n_directions,
        lam=cfg.lam or None,
        eps=cfg.eps or None,
        n_source_nodes=cfg.n_source_nodes,
        noise_delta=delta,
        seed=cfg.seed,
    )


def _export_field(path, field_vals, t_axis, x_axis, comments):
    rows = []
    for i, t in enumerate(t_axis):
        for a, x1 in enumerate(x_axis):
            for b, x2 in enumerate(x_axis):
                rows.append((t, x1, x2, field_vals[i, a, b]))
    reports.write_csv(path, ["t", "x1", "x2", "value"], rows, comments)


def _mode_reconstruct(cfg, op, smallness, outdir, comments):
    from . import rayrecover as rr

    delta = cfg.deltas[0] if cfg.deltas else 0.0
    rcfg = _reconstruction_config(cfg, delta)
    res = rr.reconstruct(op, smallness, rcfg)
    truth = rr.truth_on_grid(op.kernel.phi, cfg.r, res.t_axis, res.x_axis)
    norms = rr.error_norms(res.field, truth, res.t_axis, res.x_axis)
    ref = rr.error_norms(np.zeros_like(truth), truth, res.t_axis, res.x_axis)
    reports.write_csv(
        os.path.join(outdir, "reconstruction_errors.csv"),
        ["delta", "eps", "lam", "hm1", "l2", "linf", "rel_l2", "imag_residue"],
        [(delta, res.eps, res.lam, norms["hm1"], norms["l2"], norms["linf"],
          norms["l2"] / max(ref["l2"], 1e-300), res.imag_residue)],
        comments,
    )
    _export_field(os.path.join(outdir, "reconstruction_field.csv"),
                  res.field, res.t_axis, res.x_axis, comments)
    rr.save_light_ray(os.path.join(outdir, "light_ray.txt"), res.light_ray)
    rr.save_slab(os.path.join(outdir, "spectral_slab.txt"), res.slab)
    return {"rel_l2": norms["l2"] / max(ref["l2"], 1e-300)}


def _mode_sweep(cfg, op, smallness, outdir, comments):
    from . import rayrecover as rr

    deltas = cfg.deltas or [1e-2, 1e-4, 1e-6]
    rows = rr.stability_sweep(op, smallness, deltas, _reconstruction_config(cfg, 0.0))
    reports.write_csv(
        os.path.join(outdir, "stability_sweep.csv"),
        ["delta", "eps", "lam", "hm1", "l2", "linf"],
        rows, comments,
    )
    return {"rows": len(rows)}


def _mode_selftest(cfg, op, smallness, outdir, comments):
    from .collision import post_collision
    from .rayrecover import budget_partials, mollifier_mass, optimal_probe_parameters

    checks = []
    rng = np.random.default_rng(cfg.seed)
    u = rng.normal(size=(1000, 2))
    v = rng.normal(size=(1000, 2))
    ang = rng.uniform(0, 2 * np.pi, 1000)
    om = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    up, vp = post_collision(u, v, om)
    mom = np.max(np.abs(up + vp - u - v))
    en = np.max(np.abs(
        np.einsum("ij,ij->i", up, up) + np.einsum("ij,ij->i", vp, vp)
        - np.einsum("ij,ij->i", u, u) - np.einsum("ij,ij->i", v, v)
    ))
    checks.append(("collision_conservation", max(mom, en), 1e-12))
    checks.append(("mollifier_mass", abs(mollifier_mass() - 1.0), 1e-4))
    e_opt, l_opt = optimal_probe_parameters(1e-4, smallness.kappa)
    pe, pl = budget_partials(e_opt, l_opt, 1e-4, smallness.kappa)
    checks.append(("optimal_parameter_partials", max(abs(pe), abs(pl)), 1e-10))
    checks.append(("contraction_bound", smallness.contraction_bound, 1.0))
    rows = [(name, val, tol, "pass" if val < tol else "fail")
            for name, val, tol in checks]
    reports.write_csv(
        os.path.join(outdir, "selftest.csv"),
        ["check", "value", "tolerance", "status"],
        rows, comments,
    )
    if any(r[3] == "fail" for r in rows):
        raise RuntimeError("selftest failures: "
                           + ", ".join(r[0] for r in rows if r[3] == "fail"))
    return {"checks": len(rows)}


_MODE_FUNCS = {
    "forward": _mode_forward,
    "expand-check": _mode_expand_check,
    "identity-check": _mode_identity_check,
    "reconstruct": _mode_reconstruct,
    "sweep": _mode_sweep,
    "selftest": _mode_selftest,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute one configured run; returns a process exit status."""
    from .numerics import set_worker_count

    workers = cfg.workers or int(os.environ.get(WORKERS_ENV, "1"))
    set_worker_count(workers)
    config_text = serialize_config(cfg)
    outdir = cfg.out
    os.makedirs(outdir, exist_ok=True)
    comments = {
        "config_hash": reports.config_hash(config_text),
        "mode": cfg.mode,
        "seed": str(cfg.seed),
    }
    start = time.time()
    stage = "setup"
    try:
        op = _build_operator(cfg)
        stage = "smallness"
        smallness = _smallness(cfg, op)
        stage = cfg.mode
        summary = _MODE_FUNCS[cfg.mode](cfg, op, smallness, outdir, comments)
    except (ConfigError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"stage {stage!r} failed: {exc}", file=sys.stderr)
        return 1
    manifest = reports.run_manifest(config_text, cfg.seed, cfg.mode, time.time() - start)
    manifest.update({k: str(v) for k, v in summary.items()})
    reports.write_manifest(os.path.join(outdir, "manifest.json"), manifest, config_text)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="boltzlab",
        description="Kinetic-measurement experiments: forward solves, "
                    "linearization checks, and amplitude reconstruction.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)

    text = ""
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 2
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cfg.mode = args.subcommand
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
