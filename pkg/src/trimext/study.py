"""Convergence, condition-number, surface and diagnostics studies over shifted meshes.

Each (p, h, shift) case builds the geometry and the Nitsche system once and
then loops over the requested gamma values.  Per-shift rows go to
``<study>.csv``; worst-case rows and fitted slopes go to
``<study>_summary.csv`` and ``<study>_slopes.csv``.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .diagnostics import drift, lemma_constants, worst_case
from .extension import build_extension
from .geometry import classify_and_clip, cone_map, identity_map, named_domain
from .linalg import DENSE_CAP, SolverError, condition_number
from .mesh import BackgroundMesh, SplineSpace, active_extract
from .nitsche import (assemble, bean_solution, boundary_residual, constant_solution, error_norms,
                      evaluate_points, problem_from, reduced_matrix, solve_reduced)

log = logging.getLogger(__name__)

STUDIES = ("convergence", "condition", "surface", "diagnostics")
WEIGHT_ALIASES = {"cut-area": "cut-area", "uniform": "uniform", "single": "single-element",
                  "single-element": "single-element"}
CSV_COLUMNS = ("study", "p", "gamma", "h", "shift_id", "shift_x", "shift_y", "dofs_full", "dofs_large",
               "errL2", "errH1", "cond_raw", "cond_diag", "sh_diam_ratio", "status", "walltime_s")
SUMMARY_COLUMNS = ("study", "p", "gamma", "h", "n_ok", "n_failed", "errL2", "errH1", "cond_raw",
                   "cond_diag", "sh_diam_ratio")
SLOPE_METRICS = ("errL2", "errH1", "cond_raw", "cond_diag")


class StudyError(RuntimeError):
    pass


@dataclass
class StudyConfig:
    study: str = "convergence"
    domain: str = "bean"
    p: list = field(default_factory=lambda: [2])
    gamma: list = field(default_factory=lambda: [1.0])
    h: list = field(default_factory=lambda: [1 / 8, 1 / 16, 1 / 32, 1 / 64])
    shifts: int = 10
    beta: Optional[float] = None
    weights: str = "cut-area"
    quad_order: Optional[int] = None
    seed: int = 0
    out: str = "results"
    n_segments: Optional[int] = None
    surface_map: str = "cone"
    solution: str = "ansatz"
    dense_cap: int = DENSE_CAP
    n_samples: int = 50
    cond_kinds: list = field(default_factory=lambda: ["raw", "diag"])
    timing: bool = True
    workers: int = 1

    def __post_init__(self):
        self.p = [int(v) for v in np.atleast_1d(self.p)]
        self.gamma = [float(v) for v in np.atleast_1d(self.gamma)]
        self.h = [float(v) for v in np.atleast_1d(self.h)]
        self.weights = WEIGHT_ALIASES.get(self.weights, self.weights)

    def validate(self):
        if self.study not in STUDIES:
            raise StudyError(f"unknown study {self.study!r}")
        if self.shifts < 1:
            raise StudyError("shifts must be >= 1")
        if any(b >= a for a, b in zip(self.h, self.h[1:])) or any(v <= 0 for v in self.h):
            raise StudyError("h values must be positive and strictly decreasing")
        if any(g < 0 for g in self.gamma):
            raise StudyError("gamma must be non-negative")
        if any(p not in (1, 2, 3) for p in self.p):
            raise StudyError("p must be 1, 2 or 3")
        if self.weights not in ("cut-area", "uniform", "single-element"):
            raise StudyError(f"unknown weight mode {self.weights!r}")
        if self.surface_map not in ("cone", "identity"):
            raise StudyError(f"unknown surface map {self.surface_map!r}")
        if not set(self.cond_kinds) <= {"raw", "diag"}:
            raise StudyError(f"unknown condition kinds {self.cond_kinds!r}")
        if self.solution not in ("ansatz", "constant"):
            raise StudyError(f"unknown solution {self.solution!r}")
        return self

    @classmethod
    def from_json(cls, path, **overrides):
        data = json.loads(Path(path).read_text())
        data = {k.replace("-", "_"): v for k, v in data.items()}
        data.update({k: v for k, v in overrides.items() if v is not None})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise StudyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        d = self.to_dict()
        for k in ("out", "workers", "timing"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def quad_for(self, p):
        return self.quad_order if self.quad_order is not None else 2 * p + 2


@dataclass
class StudyRecord:
    study: str
    p: int
    gamma: float
    h: float
    shift_id: int
    shift_x: float
    shift_y: float
    dofs_full: int = 0
    dofs_large: int = 0
    errL2: float = math.nan
    errH1: float = math.nan
    cond_raw: float = math.nan
    cond_diag: float = math.nan
    sh_diam_ratio: float = math.nan
    status: str = "ok"
    walltime_s: float = 0.0

    @property
    def ok(self):
        return self.status == "ok"

    def row(self):
        out = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            if isinstance(v, float):
                out.append("" if math.isnan(v) else repr(v))
            else:
                out.append(str(v))
        return out


def shift_offsets(seed, h, n):
    """Seeded uniform offsets in [0, h)^2, independent per mesh size."""
    rng = np.random.default_rng([int(seed), int(round(1e6 * h))])
    return rng.uniform(0.0, h, size=(n, 2))


def _curve(cfg):
    return named_domain(cfg.domain)


def build_case(curve, p, h, shift, quad_order, n_segments=None):
    """Background mesh, trimmed domain and active mesh for one shifted configuration."""
    mesh = BackgroundMesh.around(curve.bbox(), h, p, tuple(shift))
    dom = classify_and_clip(curve, mesh, quad_order, n_segments)
    active = active_extract(SplineSpace(mesh, p), dom)
    return mesh, dom, active


def _smap(cfg):
    if cfg.study != "surface":
        return None
    return cone_map() if cfg.surface_map == "cone" else identity_map()


def _solution(cfg):
    return constant_solution(1.0) if cfg.solution == "constant" else bean_solution()


def _run_task(cfg, p, h, shift_id, shift):
    """All gamma values for one (p, h, shift); returns a list of StudyRecords."""
    t0 = time.perf_counter()
    recs = []
    base = dict(study=cfg.study, p=p, h=h, shift_id=shift_id,
                shift_x=float(shift[0]), shift_y=float(shift[1]))
    try:
        curve = _curve(cfg)
        _, dom, active = build_case(curve, p, h, shift, cfg.quad_for(p), cfg.n_segments)
        sol = _solution(cfg)
        smap = _smap(cfg)
        system = assemble(active, dom, problem_from(sol, smap), cfg.beta, smap)
    except Exception as exc:  # geometry or assembly failure: every gamma fails
        log.warning("case p=%d h=%g shift=%d failed: %s", p, h, shift_id, exc)
        return [StudyRecord(gamma=g, status=f"failed:{type(exc).__name__}", **base) for g in cfg.gamma]
    t_shared = time.perf_counter() - t0
    for g in cfg.gamma:
        t1 = time.perf_counter()
        rec = StudyRecord(gamma=g, dofs_full=active.n_dofs, **base)
        try:
            ext = build_extension(active, dom, g, cfg.weights)
            rec.dofs_large = ext.part.n_large_dofs
            rec.sh_diam_ratio = ext.part.sh_diam_ratio
            _, uE = solve_reduced(system, ext.Eh)
            rec.errL2, rec.errH1 = error_norms(active, dom, uE, sol)
            if cfg.study == "condition":
                Ar = reduced_matrix(system, ext.Eh)
                if "raw" in cfg.cond_kinds:
                    rec.cond_raw = condition_number(Ar, "none", cfg.dense_cap)
                if "diag" in cfg.cond_kinds:
                    rec.cond_diag = condition_number(Ar, "diagonal", cfg.dense_cap)
        except (SolverError, ValueError, ArithmeticError, RuntimeError) as exc:
            log.warning("p=%d gamma=%g h=%g shift=%d failed: %s", p, g, h, shift_id, exc)
            rec.status = f"failed:{type(exc).__name__}"
        if cfg.timing:
            rec.walltime_s = round(t_shared + time.perf_counter() - t1, 6)
        recs.append(rec)
    return recs


def _tasks(cfg):
    for p in cfg.p:
        for h in cfg.h:
            for k, s in enumerate(shift_offsets(cfg.seed, h, cfg.shifts)):
                yield p, h, k, s


def run_records(cfg):
    """Run every case of a convergence/condition/surface study."""
    cfg.validate()
    tasks = list(_tasks(cfg))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(_run_task, *zip(*[(cfg,) + t for t in tasks])))
    else:
        chunks = [_run_task(cfg, *t) for t in tasks]
    recs = [r for chunk in chunks for r in chunk]
    recs.sort(key=lambda r: (r.p, r.gamma, -r.h, r.shift_id))
    return recs


def _finite_max(vals):
    vals = [v for v in vals if not math.isnan(v)]
    return max(vals) if vals else math.nan


def summarize(records):
    """Worst case over shifts per (p, gamma, h)."""
    groups = {}
    for r in records:
        groups.setdefault((r.study, r.p, r.gamma, r.h), []).append(r)
    out = []
    for (study, p, g, h), rs in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][2], -kv[0][3])):
        good = [r for r in rs if r.ok]
        row = dict(study=study, p=p, gamma=g, h=h, n_ok=len(good), n_failed=len(rs) - len(good))
        for m in ("errL2", "errH1", "cond_raw", "cond_diag", "sh_diam_ratio"):
            row[m] = _finite_max([getattr(r, m) for r in good])
        out.append(row)
    return out


def fit_slope(h, v, last=3):
    """Least-squares slope of log v against log h over the ``last`` finest sizes."""
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    order = np.argsort(-h)
    h, v = h[order][-last:], v[order][-last:]
    ok = np.isfinite(v) & (v > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(h[ok]), np.log(v[ok]), 1)[0])


def slopes(summary):
    groups = {}
    for row in summary:
        groups.setdefault((row["study"], row["p"], row["gamma"]), []).append(row)
    out = []
    for (study, p, g), rows in groups.items():
        rec = dict(study=study, p=p, gamma=g)
        for m in SLOPE_METRICS:
            rec[m] = fit_slope([r["h"] for r in rows], [r[m] for r in rows])
        out.append(rec)
    return out


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def records_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def dicts_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def read_records(path):
    """Parse a study CSV back into StudyRecords."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise StudyError(f"{path}: line 1: unexpected header")
    out = []
    types = {f.name: f.type for f in dataclasses.fields(StudyRecord)}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_COLUMNS):
            raise StudyError(f"{path}: line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        kw = {}
        for name, text in zip(CSV_COLUMNS, row):
            t = types[name]
            try:
                if t == "int":
                    kw[name] = int(text)
                elif t == "float":
                    kw[name] = float(text) if text else math.nan
                else:
                    kw[name] = text
            except ValueError:
                raise StudyError(f"{path}: line {lineno}: bad value {text!r} for {name}") from None
        out.append(StudyRecord(**kw))
    return out


def versions():
    import numba
    import scipy
    import shapely

    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "shapely": shapely.__version__, "numba": numba.__version__, "trimext": __version__,
            "kernel_backend": _kernels.BACKEND}


def write_manifest(cfg, outdir, files, extra=None):
    manifest = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "versions": versions(),
                "outputs": sorted(files)}
    if extra:
        manifest.update(extra)
    path = Path(outdir) / f"{cfg.study}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    return path


def _write_tables(cfg, records):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(records)
    slope_rows = slopes(summary)
    files = {f"{cfg.study}.csv": records_csv(records),
             f"{cfg.study}_summary.csv": dicts_csv(summary, SUMMARY_COLUMNS),
             f"{cfg.study}_slopes.csv": dicts_csv(slope_rows, ("study", "p", "gamma") + SLOPE_METRICS)}
    for name, text in files.items():
        (out / name).write_text(text)
    return summary, slope_rows, list(files)


def run_convergence(cfg):
    cfg.study = "convergence"
    recs = run_records(cfg)
    summary, sl, files = _write_tables(cfg, recs)
    write_manifest(cfg, cfg.out, files, {"slopes": sl})
    return recs, summary, sl


def run_condition(cfg):
    cfg.study = "condition"
    recs = run_records(cfg)
    summary, sl, files = _write_tables(cfg, recs)
    write_manifest(cfg, cfg.out, files, {"slopes": sl})
    return recs, summary, sl


def _sample_surface(cfg, p, h, shift, n=41):
    """Lifted discrete solution on a reference grid clipped to the domain: rows (x, y, z, u)."""
    curve = _curve(cfg)
    _, dom, active = build_case(curve, p, h, shift, cfg.quad_for(p), cfg.n_segments)
    smap = _smap(cfg)
    sol = _solution(cfg)
    system = assemble(active, dom, problem_from(sol, smap), cfg.beta, smap)
    ext = build_extension(active, dom, cfg.gamma[0], cfg.weights)
    _, uE = solve_reduced(system, ext.Eh)
    x0, y0, x1, y1 = dom.bbox
    X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n))
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts = pts[dom.contains(pts)]
    val, _ = evaluate_points(active, uE, pts)
    xyz = smap(pts)
    resid = boundary_residual(active, dom, uE, sol.u)
    return np.column_stack([xyz, val]), resid


def run_surface(cfg):
    """Mapped Dirichlet problem; per-shift errors plus a lifted solution dump."""
    cfg.study = "surface"
    recs = run_records(cfg)
    summary, sl, files = _write_tables(cfg, recs)
    p, h = cfg.p[-1], cfg.h[-1]
    shift = shift_offsets(cfg.seed, h, cfg.shifts)[0]
    samples, resid = _sample_surface(cfg, p, h, shift)
    buf = io.StringIO()
    np.savetxt(buf, samples, delimiter=",", header="x,y,z,u", comments="", fmt="%.12g")
    name = "surface_solution.csv"
    (Path(cfg.out) / name).write_text(buf.getvalue())
    files.append(name)
    report = {"p": p, "h": h, "gamma": cfg.gamma[0], "boundary_residual_max": resid}
    write_manifest(cfg, cfg.out, files, {"slopes": sl, "boundary_report": report})
    return recs, summary, sl, report


DIAG_COLUMNS = ("p", "gamma", "h", "shift_id", "shift_x", "shift_y", "pi_stability", "oswald", "jump_m0",
                "jump_m1", "ext_stability_m0", "ext_stability_m1", "dof_c1", "dof_c2", "overlap",
                "inverse_ratio", "sh_diam_ratio")


def run_diagnostics(cfg):
    """Measured lemma constants per shift, their worst case per h and the drift between sizes."""
    cfg.study = "diagnostics"
    cfg.validate()
    curve = _curve(cfg)
    rows, worst = [], {}
    for p in cfg.p:
        for h in cfg.h:
            per_gamma = {g: [] for g in cfg.gamma}
            for k, s in enumerate(shift_offsets(cfg.seed, h, cfg.shifts)):
                _, dom, active = build_case(curve, p, h, s, cfg.quad_for(p), cfg.n_segments)
                for g in cfg.gamma:
                    ext = build_extension(active, dom, g, cfg.weights)
                    rng = np.random.default_rng([cfg.seed, int(round(1e6 * h)), k, p])
                    c = lemma_constants(ext, dom, cfg.n_samples, rng)
                    per_gamma[g].append(c)
                    rows.append(dict(p=p, gamma=g, h=h, shift_id=k, shift_x=float(s[0]),
                                     shift_y=float(s[1]), **c.as_dict()))
            for g, cs in per_gamma.items():
                worst[(p, g, h)] = worst_case(cs)
    drifts = []
    for p in cfg.p:
        for g in cfg.gamma:
            for hc, hf in zip(cfg.h, cfg.h[1:]):
                d = drift(worst[(p, g, hc)], worst[(p, g, hf)])
                drifts.append(dict(p=p, gamma=g, h_coarse=hc, h_fine=hf, **d))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"diagnostics.csv": dicts_csv(rows, DIAG_COLUMNS)}
    wrows = [dict(p=p, gamma=g, h=h, shift_id=-1, shift_x=math.nan, shift_y=math.nan, **v)
             for (p, g, h), v in worst.items()]
    files["diagnostics_summary.csv"] = dicts_csv(wrows, DIAG_COLUMNS)
    for name, text in files.items():
        (out / name).write_text(text)
    write_manifest(cfg, out, list(files), {"drift": drifts})
    return rows, worst, drifts
