"""Command line driver: configs, presets, runs and CSV outputs."""
import argparse
import csv
import dataclasses
import logging
import math
import os
import sys
import time

import numpy as np

from .backends import AcaBackend, DenseBackend, FmmBackend
from .contour import build_contour, quadrature_count
from .gcq import System, solve_gcq, solve_gcq_uniform_dense
from .mesh import load_mesh, save_mesh, unit_cube
from .problem import (
    ERROR_ORDER,
    arrival_times,
    cube_problem,
    interior_eval,
    lmax_error,
    midpoint_values,
    stage_times,
)
from .rk import radau_iia_2

log = logging.getLogger("tdbem")

FMM_LEVELS = {1: 1, 2: 2, 3: 2, 4: 3, 5: 4}
TABLE_STEPS = {1: 10, 2: 20, 3: 40, 4: 80, 5: 160}
STEP_RATIO = 0.7
CAUSALITY_FRACTION = 1e-3


@dataclasses.dataclass
class RunConfig:
    problem: str = "dirichlet"
    level: int = 1
    mesh: str = ""
    c: float = 1.0
    T: float = 3.0
    N: int = 0
    schedule: str = ""
    backend: str = "dense"
    eps_aca: float = 1e-4
    eps: float = 0.0
    fmm_levels: int = 1
    fmm_order: int = 1
    b_min: int = 20
    eta: float = 0.8
    r_max: int = 0
    tol: float = 0.0
    max_iter: int = 2000
    probes: str = "0,0,0; -0.1,0.1,-0.1"
    out: str = "out"
    preset: str = ""

    def __post_init__(self):
        if self.problem not in ("dirichlet", "mixed"):
            raise ValueError(f"problem must be dirichlet or mixed, got {self.problem!r}")
        if self.backend not in ("dense", "aca", "fmm"):
            raise ValueError(f"backend must be dense, aca or fmm, got {self.backend!r}")
        if self.eps <= 0:
            self.eps = 100.0 * self.eps_aca
        if self.tol <= 0:
            self.tol = self.eps_aca

    def probe_points(self):
        pts = [p for p in self.probes.split(";") if p.strip()]
        return np.array([[float(v) for v in p.split(",")] for p in pts]).reshape(-1, 3)


def preset(name):
    """Reference parameter set of refinement level L (tolerances, FMM tree, step count)."""
    if not name.startswith("paper-level-"):
        raise ValueError(f"unknown preset {name!r}")
    L = int(name.rsplit("-", 1)[1])
    if L not in FMM_LEVELS:
        raise ValueError(f"no preset for level {L}")
    return {"level": L, "eps_aca": 10.0 ** -(3 + L), "fmm_levels": FMM_LEVELS[L],
            "fmm_order": L, "N": TABLE_STEPS[L], "b_min": 20, "eta": 0.8, "T": 3.0, "c": 1.0}


def _coerce(name, text):
    kind = {f.name: f.type for f in dataclasses.fields(RunConfig)}[name]
    kind = kind if isinstance(kind, str) else kind.__name__
    return {"int": int, "float": float}.get(kind, str)(text)


def parse_config(text):
    """Flat ``key = value`` lines, ``#`` starts a comment. Returns a dict."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace(".", "_").replace("-", "_")
        if key not in known:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise ValueError(f"line {lineno}: bad value for {key}: {value!r}") from None
    return out


def make_config(values):
    values = dict(values)
    merged = {}
    if values.get("preset"):
        merged.update(preset(values["preset"]))
    merged.update(values)
    return RunConfig(**merged)


def load_config(path):
    with open(path) as fh:
        return make_config(parse_config(fh.read()))


def build_mesh(cfg):
    return load_mesh(cfg.mesh) if cfg.mesh else unit_cube(cfg.level)


def step_schedule(cfg, mesh):
    if cfg.schedule:
        steps = np.array([float(v) for v in cfg.schedule.replace(";", ",").split(",") if v.strip()])
        if np.any(steps <= 0):
            raise ValueError("step sizes must be positive")
        return steps
    n = cfg.N
    if n <= 0:
        if not cfg.mesh and cfg.level in TABLE_STEPS:
            n = TABLE_STEPS[cfg.level]
        else:
            n = math.ceil(cfg.T * cfg.c / (STEP_RATIO * mesh.h) - 1e-9)
    return np.full(n, cfg.T / n)


def make_backend(cfg, layout, nodes):
    if cfg.backend == "dense":
        return DenseBackend(layout, nodes)
    r_max = cfg.r_max or None
    if cfg.backend == "aca":
        return AcaBackend(layout, nodes, cfg.eps_aca, cfg.eps, cfg.b_min, cfg.eta, r_max)
    return FmmBackend(layout, nodes, cfg.fmm_levels, cfg.fmm_order, cfg.eps, r_max)


@dataclasses.dataclass
class RunResult:
    config: RunConfig
    mesh: object
    problem: object
    steps: np.ndarray
    contour: object
    X: np.ndarray
    lmax: float
    lmax_pressure: float
    t_mid: np.ndarray
    backends: dict
    timings: dict
    probes: np.ndarray = None
    probe_values: np.ndarray = None
    causality: dict = None
    iterations: int = 0


def run_problem(cfg, probes=True):
    tab = radau_iia_2()
    mesh = build_mesh(cfg)
    steps = step_schedule(cfg, mesh)
    timings = {}
    t0 = time.perf_counter()
    prob = cube_problem(mesh, cfg.problem, cfg.c)
    contour = build_contour(steps, tab, quadrature_count(len(steps), tab.stages))
    timings["setup"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    lhs = make_backend(cfg, prob.lhs_layout, contour.half_nodes)
    rhs = make_backend(cfg, prob.rhs_layout, contour.half_nodes)
    timings["matrix"] = time.perf_counter() - t0
    system = System(lhs, rhs, prob.lhs_local, prob.rhs_local)
    Y = prob.stage_data(steps, tab)
    uniform = np.ptp(steps) <= 1e-14 * steps.max()
    t0 = time.perf_counter()
    if cfg.backend == "dense" and uniform:
        X, stepper = solve_gcq_uniform_dense(system, steps[0], len(steps), Y, tab, contour,
                                             cfg.tol, cfg.max_iter)
    else:
        X, stepper = solve_gcq(system, steps, Y, tab, contour, cfg.tol, cfg.max_iter)
    timings["time_loop"] = time.perf_counter() - t0
    timings.update(stepper.timings)
    lq, lu, t_mid, _, _ = lmax_error(prob, X, steps, tab)
    iters = sum(i.iterations for infos in stepper.state.info for i in infos)
    res = RunResult(cfg, mesh, prob, steps, contour, X, lq, lu, t_mid,
                    {"lhs": lhs, "rhs": rhs}, timings, iterations=iters)
    pts = cfg.probe_points() if probes else np.zeros((0, 3))
    if len(pts):
        t0 = time.perf_counter()
        vals = interior_eval(prob, pts, X, steps, tab, contour)
        res.probes = pts
        res.probe_values = midpoint_values(vals, tab)
        ts = stage_times(steps, tab)
        flat = np.moveaxis(vals, 2, 1).reshape(-1, len(pts))
        res.causality = causality_check(prob, pts, flat, ts.ravel())
        timings["interior"] = time.perf_counter() - t0
    return res


def causality_check(problem, points, values, times):
    """Largest |u| before the wavefront, relative to the peak over all probes.

    ``values`` is (n_times, n_points) at ``times``.  The main check uses the
    distance to the boundary; ``ratio_via_source`` uses the first arrival of
    the manufactured field and is reported for information.
    """
    peak = float(np.abs(values).max())
    out = {"peak": peak}
    for tag, via in (("", False), ("_via_source", True)):
        arrival = arrival_times(problem, points, via_source=via)
        early = times[:, None] < arrival[None, :]
        before = float(np.abs(values[early]).max()) if early.any() else 0.0
        out["arrival" + tag] = arrival
        out["ratio" + tag] = before / peak if peak > 0 else 0.0
    out["ok"] = out["ratio"] < CAUSALITY_FRACTION
    return out


# ---------------------------------------------------------------------------
# outputs


def write_traces(path, res):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n_p = 0 if res.probes is None else len(res.probes)
        w.writerow(["step", "t_mid"] + [f"probe_{i}" for i in range(n_p)])
        for n, t in enumerate(res.t_mid):
            row = [n + 1, repr(float(t))]
            if n_p:
                row += [repr(float(v)) for v in res.probe_values[n]]
            w.writerow(row)


def write_errors(path, rows):
    """rows: dicts with level, h, dt, Lmax; eoc is filled in between consecutive rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "h", "dt", "Lmax", "eoc"])
        prev = None
        for r in rows:
            eoc = "" if prev is None else repr(math.log2(prev / r["Lmax"]))
            w.writerow([r["level"], repr(r["h"]), repr(r["dt"]), repr(r["Lmax"]), eoc])
            prev = r["Lmax"]


def eoc_values(lmax):
    return [math.log2(a / b) for a, b in zip(lmax[:-1], lmax[1:])]


def backend_stats(res):
    return {name: b.stats() for name, b in res.backends.items()}


def write_stats(outdir, res, stats=None):
    stats = stats or backend_stats(res)
    nodes = res.contour.half_nodes
    total_bytes = sum(s["nbytes"] for s in stats.values())
    total_dense = sum(b.dense_nbytes() for b in res.backends.values())
    with open(os.path.join(outdir, "compression.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["operator", "compression", "nbytes", "dense_nbytes"])
        for name, s in stats.items():
            w.writerow([name, repr(float(s["compression"])), s["nbytes"],
                        res.backends[name].dense_nbytes()])
        w.writerow(["total", repr(total_bytes / total_dense), total_bytes, total_dense])
    with open(os.path.join(outdir, "ranks.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["operator", "block", "admissible", "rank"])
        for name, s in stats.items():
            for i, (r, a) in enumerate(zip(s["ranks"], s["admissible"])):
                w.writerow([name, i, int(bool(a)), int(r)])
    with open(os.path.join(outdir, "freq_histogram.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "re_s", "im_s", "count"])
        hist = sum(s["histogram"] for s in stats.values())
        for i, (s_l, cnt) in enumerate(zip(nodes, hist)):
            w.writerow([i, repr(float(s_l.real)), repr(float(s_l.imag)), int(cnt)])
    return stats


def rank_summary(ranks):
    ranks = np.asarray(ranks, dtype=float)
    if ranks.size == 0:
        return 0.0, 0.0, 0.0
    return float(ranks.min()), float(ranks.mean()), float(ranks.max())


def write_manifest(path, cfg, res=None, stats=None, failure=None):
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    if res is not None:
        c = res.contour
        lines += [f"contour.q = {c.q!r}", f"contour.k = {c.k!r}", f"contour.N_Q = {c.n_q}",
                  f"steps = {len(res.steps)}", f"dt_min = {res.steps.min()!r}",
                  f"dt_max = {res.steps.max()!r}", f"mesh.vertices = {res.mesh.n_vertices}",
                  f"mesh.triangles = {res.mesh.n_triangles}", f"mesh.h = {res.mesh.h!r}",
                  f"error.quadrature_order = {ERROR_ORDER}",
                  f"Lmax = {res.lmax!r}", f"Lmax_pressure = {res.lmax_pressure!r}",
                  f"solver.iterations = {res.iterations}"]
        for k, v in res.timings.items():
            lines.append(f"time.{k} = {v:.6f}")
        if res.causality is not None:
            lines += [f"causality.ratio = {res.causality['ratio']!r}",
                      f"causality.ratio_via_source = {res.causality['ratio_via_source']!r}",
                      f"causality.ok = {res.causality['ok']}"]
        for name, s in (stats or {}).items():
            lo, mean, hi = rank_summary(s["ranks"])
            lines += [f"{name}.compression = {float(s['compression'])!r}",
                      f"{name}.rank_min = {lo}", f"{name}.rank_mean = {mean!r}",
                      f"{name}.rank_max = {hi}", f"{name}.capped_blocks = {s['capped']}"]
    if failure:
        lines.append(f"failure = {failure}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_and_write(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    manifest = os.path.join(cfg.out, "manifest.txt")
    try:
        res = run_problem(cfg)
        stats = write_stats(cfg.out, res)
        write_traces(os.path.join(cfg.out, "traces.csv"), res)
        dt = float(res.steps.max())
        write_errors(os.path.join(cfg.out, "errors.csv"),
                     [{"level": cfg.level if not cfg.mesh else 0, "h": res.mesh.h, "dt": dt,
                       "Lmax": res.lmax}])
    except Exception as exc:
        write_manifest(manifest, cfg, failure=f"{type(exc).__name__}: {exc}")
        raise
    write_manifest(manifest, cfg, res, stats)
    return res


# ---------------------------------------------------------------------------
# subcommands


def _levels(text):
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",")]


def cmd_mesh(args):
    if args.shape != "cube":
        raise ValueError("only the cube mesh family is built in")
    mesh = unit_cube(args.level)
    save_mesh(mesh, args.out)
    print(f"{args.out}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, h = {mesh.h:.6g}")


def cmd_run(args):
    cfg = load_config(args.config)
    res = run_and_write(cfg)
    print(f"Lmax = {res.lmax:.6e}  (pressure {res.lmax_pressure:.6e})  -> {cfg.out}")


def cmd_stats(args):
    cfg = load_config(args.config)
    res = run_and_write(cfg)
    stats = backend_stats(res)
    for name, s in stats.items():
        lo, mean, hi = rank_summary(s["ranks"])
        print(f"{name}: compression {float(s['compression']):.4g}, rank min/mean/max "
              f"{lo:g}/{mean:.3g}/{hi:g}")
    for k, v in res.timings.items():
        print(f"time {k}: {v:.3f} s")


def cmd_convergence(args):
    rows = []
    os.makedirs(args.out, exist_ok=True)
    for L in _levels(args.levels):
        cfg = make_config({"preset": f"paper-level-{L}", "problem": args.problem,
                           "backend": args.backend, "out": os.path.join(args.out, f"level{L}")})
        res = run_and_write(cfg)
        rows.append({"level": L, "h": 2.0 ** -L, "dt": float(res.steps[0]), "Lmax": res.lmax})
        print(f"level {L}: Lmax = {res.lmax:.6e}")
    write_errors(os.path.join(args.out, "errors.csv"), rows)
    for L, e in zip([r["level"] for r in rows[1:]], eoc_values([r["Lmax"] for r in rows])):
        print(f"eoc {L - 1}->{L}: {e:.3f}")


def build_parser():
    p = argparse.ArgumentParser(prog="tdbem", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    m = sub.add_parser("mesh", help="write a refined cube surface mesh as OFF")
    m.add_argument("shape", choices=["cube"])
    m.add_argument("--level", type=int, required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mesh)
    r = sub.add_parser("run", help="solve one problem from a config file")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("stats", help="run and print compression, rank and timing statistics")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_stats)
    c = sub.add_parser("convergence", help="run preset levels and report eoc")
    c.add_argument("--problem", choices=["dirichlet", "mixed"], default="dirichlet")
    c.add_argument("--levels", default="1..3")
    c.add_argument("--backend", choices=["dense", "aca", "fmm"], default="dense")
    c.add_argument("--out", default="convergence")
    c.set_defaults(func=cmd_convergence)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"tdbem: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
