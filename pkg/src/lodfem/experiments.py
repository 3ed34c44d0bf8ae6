"""Model problems, error metrics and convergence/eigenvalue studies."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .assembly import (
    AssembledForms, assemble_forms, assemble_stiffness, cell_values, load_vector, read_field,
)
from .config import ConfigError, ExperimentConfig
from .correctors import compute_corrections
from .eigen import (
    gpe_post_process, gpe_problem, gpe_solve, solve_fine_evp, solve_linear_evp,
)
from .grid import BoundarySpec, DomainRect, TwoScaleMesh, full_patch_k, mesh_from_sizes
from .solve import build_lod_system, fine_bvp, fine_solve, solve_bvp, solve_lod
from .sparse import EigOptions

log = logging.getLogger(__name__)

_EXPR_NS = {name: getattr(np, name) for name in ("sin", "cos", "exp", "sqrt", "abs", "tanh", "pi", "log")}


def expr_function(expr) -> Callable | float | None:
    """Scalar constant or a string expression in x and y."""
    if expr is None or isinstance(expr, (int, float)):
        return expr
    if not isinstance(expr, str):
        raise ConfigError(f"cannot interpret {expr!r} as a function")
    code = compile(expr, "<expr>", "eval")

    def fn(x, y):
        return np.broadcast_to(eval(code, {"__builtins__": {}}, {**_EXPR_NS, "x": x, "y": y}), np.shape(x))

    return fn


def gen_checkerboard_kappa(mesh: TwoScaleMesh, seed: int, contrast: float) -> np.ndarray:
    """Per-fine-cell values drawn i.i.d. from {1, contrast}."""
    if contrast < 1:
        raise ValueError("contrast must be at least 1")
    rng = np.random.default_rng(seed)
    return np.where(rng.integers(0, 2, size=mesh.N_Th) == 1, float(contrast), 1.0)


def gen_kronig_penney_V(mesh: TwoScaleMesh, gamma: float, wave_k: float) -> np.ndarray:
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    mid = mesh.cell_midpoints("fine")
    s = np.cos(np.pi * wave_k * (mid[:, 0] + 0.1)) * np.cos(np.pi * wave_k * mid[:, 1])
    return np.where(s > 0, float(gamma), 0.0)


def error_norms(u: np.ndarray, v: np.ndarray, M_h, A_unit) -> tuple[float, float]:
    if np.shape(u) != np.shape(v):
        raise ValueError("vectors differ in length")
    e = np.asarray(u) - np.asarray(v)
    l2 = float(e @ (M_h @ e))
    h1 = l2 + float(e @ (A_unit @ e))
    return math.sqrt(max(l2, 0.0)), math.sqrt(max(h1, 0.0))


def eoc(err_coarse: float, err_fine: float) -> float:
    if err_coarse <= 0 or err_fine <= 0:
        return float("nan")
    return math.log2(err_coarse / err_fine)


@dataclass
class ResultRow:
    problem: str
    H: float
    k: int
    values: dict[str, float] = field(default_factory=dict)
    # position in the layer list; EOCs pair rows of the same series
    series: int = 0

    def as_dict(self) -> dict[str, Any]:
        return {"problem": self.problem, "H": self.H, "k": self.k, **self.values}


def write_csv(path, rows: list[ResultRow]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    header = list(rows[0].as_dict())
    for r in rows[1:]:
        header += [c for c in r.as_dict() if c not in header]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            d = r.as_dict()
            wr.writerow([_fmt(d.get(c, "")) for c in header])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12e}"
    return str(v)


# problem setup ---------------------------------------------------------

def make_mesh(cfg: ExperimentConfig, H: float) -> TwoScaleMesh:
    return mesh_from_sizes(DomainRect(*cfg.domain), H, cfg.h)


def make_bc(cfg: ExperimentConfig) -> BoundarySpec:
    try:
        return BoundarySpec.from_dict(cfg.bc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def make_field(mesh: TwoScaleMesh, spec: dict[str, Any], kind: str) -> np.ndarray:
    t = spec.get("type", "constant")
    if t == "none":
        return np.zeros(mesh.N_Th)
    if t == "constant":
        return np.full(mesh.N_Th, float(spec.get("value", 1.0)))
    if t == "checkerboard":
        return gen_checkerboard_kappa(mesh, int(spec.get("seed", 0)), float(spec.get("contrast", 1.0)))
    if t == "kronig_penney":
        return gen_kronig_penney_V(mesh, float(spec.get("gamma", 2e4)), float(spec.get("wave_k", 8)))
    if t == "expr":
        return cell_values(mesh, expr_function(spec["expr"]))
    if t == "file":
        vals = read_field(spec["path"])
        if vals.size != mesh.N_Th:
            raise ConfigError(f"{kind} file has {vals.size} values, fine mesh has {mesh.N_Th} cells")
        return vals
    raise ConfigError(f"unknown {kind} type {t!r}")


def make_forms(cfg: ExperimentConfig, H: float) -> AssembledForms:
    mesh = make_mesh(cfg, H)
    kappa = make_field(mesh, cfg.coefficient, "coefficient")
    V = make_field(mesh, cfg.potential, "potential")
    return assemble_forms(mesh, make_bc(cfg), kappa, V)


def eig_options(cfg: ExperimentConfig, n_ev: int) -> EigOptions:
    return EigOptions(n_ev=n_ev, method=cfg.eig_method)


class ReferenceCache:
    """Fine reference results stored by content hash; disabled without a directory."""

    def __init__(self, directory: str | None):
        self.directory = directory
        if directory:
            os.makedirs(directory, exist_ok=True)

    @staticmethod
    def key(*parts) -> str:
        h = hashlib.sha256()
        for p in parts:
            if isinstance(p, np.ndarray):
                h.update(np.ascontiguousarray(p).tobytes())
            else:
                h.update(json.dumps(p, sort_keys=True, default=str).encode())
        return h.hexdigest()[:24]

    def get(self, key: str, compute: Callable[[], dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
        if not self.directory:
            return compute()
        path = os.path.join(self.directory, f"{key}.npz")
        if os.path.exists(path):
            with np.load(path) as data:
                return {k: data[k] for k in data.files}
        out = compute()
        np.savez(path, **out)
        return out


def _ref_key(cfg: ExperimentConfig, forms: AssembledForms, what: str, *extra):
    return ReferenceCache.key(what, cfg.domain, cfg.h, cfg.bc, forms.kappa, forms.V, *extra)


def _unit_stiffness(forms: AssembledForms):
    return assemble_stiffness(forms.mesh, 1.0)


# studies ---------------------------------------------------------------

def _add_eoc(rows: list[ResultRow], names: tuple[str, ...]) -> None:
    last: dict[int, ResultRow] = {}
    for r in rows:
        prev = last.get(r.series)
        for n in names:
            r.values[f"eoc_{n}"] = eoc(prev.values[f"err_{n}"], r.values[f"err_{n}"]) if prev else float("nan")
        last[r.series] = r


def _sweep(cfg: ExperimentConfig, row_fn) -> list[ResultRow]:
    rows = []
    for H in cfg.H:
        forms = make_forms(cfg, H)
        for j, k in enumerate(cfg.layers(H, full_patch_k(forms.mesh))):
            r = row_fn(forms, H, k)
            r.series = j
            rows.append(r)
    return rows


def run_poisson_convergence(cfg: ExperimentConfig) -> list[ResultRow]:
    cache = ReferenceCache(cfg.cache_dir)
    f = expr_function(cfg.f)

    def row(forms: AssembledForms, H: float, k: int) -> ResultRow:
        f_h = load_vector(forms.mesh, f)
        ref = cache.get(
            _ref_key(cfg, forms, "poisson", cfg.f),
            lambda: {"u": fine_solve(forms.A_total, f_h, forms.Bh)},
        )["u"]
        t0 = time.perf_counter()
        cm = compute_corrections(forms, k, threads=cfg.threads)
        t1 = time.perf_counter()
        _, u = solve_lod(build_lod_system(forms.A_total, forms.P, cm.Q, forms.BH, f_h, cfg.rhs))
        t2 = time.perf_counter()
        l2, h1 = error_norms(u, ref, forms.M_h, _unit_stiffness(forms))
        log.info("poisson H=%g k=%d L2=%.3e H1=%.3e", H, k, l2, h1)
        return ResultRow(cfg.problem, H, k, {"err_L2": l2, "err_H1": h1, "t_corr": t1 - t0, "t_LOD": t2 - t1})

    rows = _sweep(cfg, row)
    _add_eoc(rows, ("L2", "H1"))
    return rows


def run_bvp(cfg: ExperimentConfig) -> list[ResultRow]:
    cache = ReferenceCache(cfg.cache_dir)
    f, g, q = expr_function(cfg.f), expr_function(cfg.g), expr_function(cfg.q)

    def row(forms: AssembledForms, H: float, k: int) -> ResultRow:
        ref = cache.get(
            _ref_key(cfg, forms, "bvp", cfg.f, cfg.g, cfg.q),
            lambda: {"u": fine_bvp(forms, f, g, q)},
        )["u"]
        t0 = time.perf_counter()
        res = solve_bvp(forms, f, g, q, k, cfg.fs_mode, cfg.rhs, cfg.threads)
        t1 = time.perf_counter()
        l2, h1 = error_norms(res.u, ref, forms.M_h, _unit_stiffness(forms))
        log.info("bvp H=%g k=%d L2=%.3e H1=%.3e", H, k, l2, h1)
        return ResultRow(cfg.problem, H, k, {"err_L2": l2, "err_H1": h1, "t_LOD": t1 - t0})

    rows = _sweep(cfg, row)
    _add_eoc(rows, ("L2", "H1"))
    return rows


def run_evp(cfg: ExperimentConfig) -> list[ResultRow]:
    """Coarse FEM, LOD and fine eigenvalues with relative errors and timings."""
    cache = ReferenceCache(cfg.cache_dir)
    n_ev = cfg.n_ev

    def row(forms: AssembledForms, H: float, k: int) -> ResultRow:
        def full():
            t = time.perf_counter()
            lam = solve_fine_evp(forms, n_ev, eig_options(cfg, n_ev)).lambdas
            return {"lambdas": lam, "t_full": np.array(time.perf_counter() - t)}

        ref = cache.get(_ref_key(cfg, forms, "evp", n_ev, cfg.eig_method), full)
        lam_full = ref["lambdas"]
        t0 = time.perf_counter()
        lam_coarse = solve_linear_evp(forms, None, n_ev, eig_options(cfg, n_ev)).lambdas
        t1 = time.perf_counter()
        cm = compute_corrections(forms, k, threads=cfg.threads)
        t2 = time.perf_counter()
        lam_lod = solve_linear_evp(forms, cm.Q, n_ev, eig_options(cfg, n_ev)).lambdas
        t3 = time.perf_counter()
        err_c = float(np.max(np.abs(lam_coarse - lam_full) / lam_full))
        err_l = float(np.max(np.abs(lam_lod - lam_full) / lam_full))
        log.info("evp H=%g k=%d err_coarse=%.3e err_LOD=%.3e", H, k, err_c, err_l)
        vals = {
            "err_coarse": err_c, "err_LOD": err_l,
            "t_coarse": t1 - t0, "t_full": float(ref["t_full"]), "t_corr": t2 - t1, "t_LOD": t3 - t2,
            "lambda0_LOD": float(lam_lod[0]), "lambda0_full": float(lam_full[0]),
        }
        return ResultRow(cfg.problem, H, k, vals)

    rows = _sweep(cfg, row)
    last: dict[int, ResultRow] = {}
    for r in rows:
        prev = last.get(r.series)
        r.values["eoc_LOD"] = eoc(prev.values["err_LOD"], r.values["err_LOD"]) if prev else float("nan")
        last[r.series] = r
    return rows


def run_gpe(cfg: ExperimentConfig) -> list[ResultRow]:
    cache = ReferenceCache(cfg.cache_dir)

    def row(forms: AssembledForms, H: float, k: int) -> ResultRow:
        def full():
            st = gpe_solve(gpe_problem(forms, cfg.beta, fine=True), cfg.delta_tol, cfg.max_iter)
            return {"u": st.u_fine, "lam": np.array(st.lambda_val)}

        ref = cache.get(_ref_key(cfg, forms, "gpe", cfg.beta, cfg.delta_tol), full)
        cm = compute_corrections(forms, k, threads=cfg.threads)
        prob = gpe_problem(forms, cfg.beta, Q=cm.Q)
        st = gpe_solve(prob, cfg.delta_tol, cfg.max_iter)
        lam_post, _ = gpe_post_process(prob, st)
        l2, h1 = error_norms(st.u_fine, ref["u"], forms.M_h, _unit_stiffness(forms))
        lam_ref = float(ref["lam"])
        vals = {
            "lambda_LOD": st.lambda_val, "lambda_post": lam_post, "lambda_h": lam_ref,
            "iterations": int(st.nu), "ratio": st.ratio, "err_L2": l2, "err_H1": h1,
        }
        log.info("gpe H=%g k=%d lambda=%.10f iters=%d", H, k, st.lambda_val, st.nu)
        return ResultRow(cfg.problem, H, k, vals)

    rows = _sweep(cfg, row)
    _add_eoc(rows, ("L2", "H1"))
    return rows


RUNNERS = {
    "poisson": run_poisson_convergence,
    "bvp": run_bvp,
    "evp": run_evp,
    "kronig_penney": run_evp,
    "gpe": run_gpe,
}


def run(cfg: ExperimentConfig) -> list[ResultRow]:
    return RUNNERS[cfg.problem](cfg)
