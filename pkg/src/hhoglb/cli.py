"""Command-line benchmark driver.

Examples::

    hhoglb --problem laplace --domain lshape --k 2 --refine adaptive --out runs/lshape
    hhoglb --problem gamma --domain "triangle:(0,0),(1,0),(0,1)" --k 1
    hhoglb --problem elasticity --domain cook --mu 0.5 --kappa 1000
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import platform
import re
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .adapt import COLUMNS, AdaptiveConfig, adaptive_loop
from .bounds import c_tr, certify_gamma, default_sigma, korn_bound, mesh_rho
from .mesh import cook_mesh, lshape_mesh, read_mesh, square_mesh, triangle_mesh, write_mesh

PROBLEMS = ("laplace", "steklov", "elasticity", "gamma")
_POINT = re.compile(r"\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)")


@dataclass
class RunConfig:
    problem: str = "laplace"
    domain: str = "lshape"
    k: int = 1
    sigma: float | None = None
    refine: str = "adaptive"
    theta: float = 0.5
    j: int = 1
    max_ndof: int = 200_000
    max_levels: int = 40
    mu: float = 0.5
    kappa: float = 1000.0
    gamma: float | None = None
    out: str = "hhoglb-out"
    seed: int = 0
    tol: float = 1e-3
    max_iter: int = 12
    refinements: int = 3

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}")
        if self.refine not in ("uniform", "adaptive"):
            raise ValueError("refine must be 'uniform' or 'adaptive'")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.k < 0 or (self.problem == "elasticity" and self.k < 1):
            raise ValueError("k must be >= 0 (>= 1 for elasticity)")
        for name in ("sigma", "gamma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.mu <= 0 or self.kappa <= 0:
            raise ValueError("mu and kappa must be positive")
        if self.j < 1 or self.max_ndof < 1 or self.max_levels < 1:
            raise ValueError("j and caps must be positive")
        if self.problem == "gamma" and not self.domain.startswith("triangle:"):
            raise ValueError("the gamma problem needs --domain triangle:(x,y),(x,y),(x,y)")
        return self


def parse_float(text: str) -> float:
    """Strict float parsing: the whole token must be a number."""
    text = text.strip()
    if not re.fullmatch(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?", text):
        raise ValueError(f"not a number: {text!r}")
    return float(text)


def parse_triangle(spec: str) -> np.ndarray:
    pts = [(parse_float(a), parse_float(b)) for a, b in _POINT.findall(spec)]
    if len(pts) != 3:
        raise ValueError(f"expected three points in {spec!r}")
    return np.array(pts)


def load_domain(domain: str, problem: str):
    tag = "neumann" if problem in ("steklov", "gamma") else "dirichlet"
    if domain == "lshape":
        return lshape_mesh(tag)
    if domain == "square":
        return square_mesh(tag)
    if domain == "cook":
        return cook_mesh()
    if domain.startswith("triangle:"):
        return triangle_mesh(parse_triangle(domain[len("triangle:"):]), tag)
    path = Path(domain)
    if path.exists():
        return read_mesh(path)
    raise ValueError(f"unknown domain {domain!r}")


def read_config_file(path) -> dict:
    """key=value lines; '#' starts a comment; keys may use '-' or '_'."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hhoglb", description="Guaranteed lower eigenvalue bounds with HHO methods.")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--domain", help="lshape | square | cook | triangle:(x,y),(x,y),(x,y) | mesh file")
    p.add_argument("--k", type=int)
    p.add_argument("--sigma", type=parse_float)
    p.add_argument("--refine", choices=("uniform", "adaptive"))
    p.add_argument("--theta", type=parse_float)
    p.add_argument("--j", type=int)
    p.add_argument("--max-ndof", type=int)
    p.add_argument("--max-levels", type=int)
    p.add_argument("--mu", type=parse_float)
    p.add_argument("--kappa", type=parse_float)
    p.add_argument("--gamma", type=parse_float, help="certified embedding constant (elasticity)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=parse_float, help="gamma: relative stopping tolerance")
    p.add_argument("--max-iter", type=int, help="gamma: iteration cap")
    p.add_argument("--refinements", type=int, help="gamma: uniform refinements of the triangle")
    p.add_argument("-q", "--quiet", action="store_true", help="do not echo rows to stdout")
    return p


def config_from_args(argv=None) -> RunConfig:
    return _config(build_parser().parse_args(argv))


def _config(args) -> RunConfig:
    values = {}
    types = {f: type(v) for f, v in asdict(RunConfig()).items()}
    if args.config:
        for key, raw in read_config_file(args.config).items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            if key in ("sigma", "gamma", "theta", "mu", "kappa", "tol"):
                values[key] = parse_float(raw)
            elif key in ("k", "j", "max_ndof", "max_levels", "seed", "max_iter", "refinements"):
                values[key] = int(raw)
            else:
                values[key] = raw
    for key in types:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return RunConfig(**values).validate()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def header_lines(meta: dict) -> list[str]:
    return [f"# {k}={_fmt(v) if v is not None else 'none'}" for k, v in meta.items()]


def history_csv(meta: dict, reports) -> str:
    buf = io.StringIO()
    for line in header_lines(meta):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in reports:
        w.writerow([_fmt(v) for v in r.row()])
    return buf.getvalue()


def _versions() -> dict:
    return {"hhoglb": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def run(cfg: RunConfig, stream=sys.stdout) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh = load_domain(cfg.domain, cfg.problem)
    meta = dict(asdict(cfg))
    meta["c_tr"] = c_tr()
    meta.update(_versions())

    if cfg.problem == "gamma":
        tri = mesh.vertices[mesh.cells[0]]
        cert = certify_gamma(tri, cfg.k, sigma_0=cfg.sigma, tol=cfg.tol, max_iter=cfg.max_iter,
                             refinements=cfg.refinements)
        meta["sigma_0"] = cert.trace[0][1]
        meta["rho"] = mesh_rho(mesh)
        meta["c_korn"] = float(korn_bound(mesh_rho(mesh)))
        meta["stopped"] = cert.stopped
        text = "".join(line + "\n" for line in header_lines(meta)) + cert.to_csv()
        (out / "gamma_trace.csv").write_text(text)
        stream.write(cert.to_csv())
        stream.write(f"gamma_star={_fmt(cert.gamma)}\n")
        return 0

    acfg = AdaptiveConfig(cfg.problem, cfg.k, cfg.sigma, cfg.refine, cfg.theta, cfg.j, cfg.max_ndof,
                          cfg.max_levels, cfg.mu, cfg.kappa, cfg.gamma, cfg.seed)
    spec = acfg.problem_spec()
    sigma = cfg.sigma if cfg.sigma is not None else default_sigma(spec, mesh)
    meta["sigma"] = sigma
    if cfg.problem == "elasticity":
        meta["rho"] = mesh_rho(mesh)
        meta["c_korn"] = float(korn_bound(mesh_rho(mesh)))
    acfg.sigma = sigma
    stream.write("\n".join(header_lines(meta)) + "\n")
    stream.write(",".join(COLUMNS) + "\n")

    def echo(rep, _mesh):
        stream.write(",".join(_fmt(v) for v in rep.row()) + "\n")
        stream.flush()

    hist = adaptive_loop(acfg, mesh, callback=echo)
    meta["stop_reason"] = hist.stop_reason
    (out / "history.csv").write_text(history_csv(meta, hist.reports))
    if hist.mesh is not None:
        write_mesh(hist.mesh, out / "final.mesh")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except (ValueError, OSError) as exc:
        print(f"hhoglb: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING)
    try:
        return run(cfg, io.StringIO() if args.quiet else sys.stdout)
    except Exception as exc:  # noqa: BLE001 - report any failure as a nonzero exit
        print(f"hhoglb: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
