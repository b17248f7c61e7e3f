"""Experiment runners behind the command-line subcommands.

Every runner takes an :class:`ExperimentConfig` and an output directory,
writes CSV files there and returns the rows it wrote so callers (and tests)
can inspect them without re-reading.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy

from . import baselines, imageio, metrics
from .config import ExperimentConfig
from .perception import AxonMapModel, ImplantGrid, PatientParams, PerceptGrid
from .solver import SolverOptions, encode, encode_batch
from .sparse import (CsrMatrix, mass_weighted_histogram, read_spmx, sparsity_stats,
                     spmv, truncate, write_spmx)

log = logging.getLogger(__name__)

RUN_HEADER = ["patient", "implant", "method", "image", "ssim_lin", "psnr_lin", "mae_lin",
              "ssim_nl", "psnr_nl", "mae_nl", "iters", "seconds"]
TIMING_COLUMNS = {"seconds", "seconds_cumulative", "mean_ms", "std_ms", "cold_load_s",
                  "per_iteration_ms", "crossover_seconds"}


# ---------------------------------------------------------------- data

def synthetic_images(count: int, size: int, seed: int) -> np.ndarray:
    """Random soft-edged strokes, uint8 ``(count, size, size)``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.zeros((count, size, size))
    for i in range(count):
        for _ in range(rng.integers(1, 4)):
            cy, cx = rng.uniform(0.25, 0.75, 2) * size
            sy, sx = rng.uniform(0.05, 0.2, 2) * size
            out[i] += np.exp(-((yy - cy) ** 2 / (2 * sy ** 2) + (xx - cx) ** 2 / (2 * sx ** 2)))
    out = np.clip(out, 0, 1)
    return np.round(out * 255).astype(np.uint8)


def load_images(cfg: ExperimentConfig, subset: int | None = None) -> np.ndarray:
    """Dataset images as uint8 ``(B, h, w)``, first ``subset`` only."""
    n = subset if subset is not None else cfg.subset
    ds = cfg.dataset
    if ds.format == "synthetic":
        return synthetic_images(n or ds.count, ds.size, cfg.seed)
    if ds.format == "idx":
        data = imageio.load_idx(ds.path).pixels
        return np.array(data[:n] if n else data)
    p = Path(ds.path)
    files = sorted(p.glob("*.pgm")) if p.is_dir() else [p]
    files = files[:n] if n else files
    return np.stack([imageio.quantize(imageio.read_pgm(f)) for f in files])


def make_targets(imgs: np.ndarray, grid: PerceptGrid) -> np.ndarray:
    """Column-stacked targets ``(M, B)``."""
    cols = [imageio.to_target(im, grid.shape, resample=True) for im in imgs]
    return np.column_stack(cols) if cols else np.zeros((grid.n_pixels, 0))


def translated_sequence(img, frames: int = 10, shift: int = 1) -> list[np.ndarray]:
    """``img`` moved right by ``shift`` pixels per frame, zero-filled."""
    img = np.asarray(img)
    seq = []
    for t in range(frames):
        d = t * shift
        f = np.zeros_like(img)
        if d < img.shape[1]:
            f[:, d:] = img[:, :img.shape[1] - d]
        seq.append(f)
    return seq


# ---------------------------------------------------------------- matrices

@lru_cache(maxsize=None)
def model_for(patient: PatientParams, implant: ImplantGrid, grid: PerceptGrid) -> AxonMapModel:
    return AxonMapModel(patient, implant, grid)


@lru_cache(maxsize=None)
def full_matrix(patient: PatientParams, implant: ImplantGrid, grid: PerceptGrid) -> CsrMatrix:
    return model_for(patient, implant, grid).perception_matrix(tau=0.0)


def matrix_for(patient, implant, grid, tau: float) -> CsrMatrix:
    P0 = full_matrix(patient, implant, grid)
    return P0 if tau == 0 else truncate(P0, tau)


def matrix_name(patient: PatientParams, implant: ImplantGrid) -> str:
    return f"P_{patient.label}_{implant.label}.spmx"


# ---------------------------------------------------------------- encoding

@dataclass
class MethodRun:
    method: str
    stimuli: np.ndarray          # (N, B) feasible stimuli
    linear_stimuli: np.ndarray   # (N, B) stimuli used for linear evaluation
    iters: np.ndarray
    seconds: np.ndarray
    results: list = field(default_factory=list)


def run_method(method: str, P: CsrMatrix, X: np.ndarray, imgs: np.ndarray,
               implant: ImplantGrid, opts: SolverOptions, pinv_cap: int) -> MethodRun:
    B = X.shape[1]
    t0 = time.perf_counter()
    if method in ("nearest", "lanczos"):
        kernel = "nearest" if method == "nearest" else "lanczos3"
        S = np.zeros((P.cols, B))
        for b, im in enumerate(imgs):
            h, w = im.shape
            spec = baselines.ResampleSpec(w, h, implant.cols, implant.rows, kernel)
            s = baselines.downsample(im / 255.0, spec)
            S[:, b], _ = baselines.rescale_to_target(s, P, X[:, b])
        dt = (time.perf_counter() - t0) / max(B, 1)
        return MethodRun(method, S, S, np.zeros(B, int), np.full(B, dt))
    if method == "pinv":
        pinv = baselines.pseudo_inverse(P, pinv_cap)
        S = np.zeros((P.cols, B))
        raw = np.zeros((P.cols, B))
        for b in range(B):
            r = baselines.pseudo_inverse_encode(P, X[:, b], pinv)
            S[:, b], raw[:, b] = r.stimulus, r.raw
        dt = (time.perf_counter() - t0) / max(B, 1)
        return MethodRun(method, S, raw, np.zeros(B, int), np.full(B, dt))
    if method == "ours":
        res = encode_batch(P, X, None, opts)
        S = np.column_stack([r.s_best for r in res]) if res else np.zeros((P.cols, 0))
        iters = np.array([r.iterations_run for r in res], dtype=int)
        secs = np.array([r.iterations_run * r.per_iteration_seconds for r in res])
        return MethodRun(method, S, S, iters, secs, res)
    raise ValueError(f"unknown method {method!r}")


def evaluate_block(Y: np.ndarray, X: np.ndarray, shape) -> list[metrics.MetricReport]:
    return [metrics.evaluate(Y[:, b], X[:, b], shape) for b in range(X.shape[1])]


@dataclass
class RunRecord:
    patient: str
    implant: str
    method: str
    image: int
    linear: metrics.MetricReport
    nonlinear: metrics.MetricReport
    iters: int
    seconds: float

    def row(self) -> list:
        return [self.patient, self.implant, self.method, self.image,
                self.linear.ssim, self.linear.psnr_db, self.linear.mae,
                self.nonlinear.ssim, self.nonlinear.psnr_db, self.nonlinear.mae,
                self.iters, self.seconds]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.floating):
        return repr(float(v))
    return v


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def encode_condition(cfg: ExperimentConfig, patient, implant, imgs, X, tau=None,
                     methods=None, opts=None, eval_matrix: CsrMatrix | None = None):
    """Run ``methods`` for one patient/implant and evaluate them.

    Returns ``(runs, records)``.  The linear evaluation uses the unclipped
    percept ``P s`` (the raw unconstrained solution for ``pinv``); the
    nonlinear evaluation uses the feasible stimuli.
    """
    grid = cfg.grid_for(implant)
    tau = cfg.tau if tau is None else tau
    P = matrix_for(patient, implant, grid, tau)
    Pe = P if eval_matrix is None else eval_matrix
    model = model_for(patient, implant, grid)
    runs = {}
    for m in methods or cfg.methods:
        try:
            runs[m] = run_method(m, P, X, imgs, implant, opts or cfg.solver, cfg.pinv_cap)
        except MemoryError as exc:
            log.warning("skipping %s for %s/%s: %s", m, patient.label, implant.label, exc)
    if not runs:
        return runs, []
    allS = np.concatenate([r.stimuli for r in runs.values()], axis=1)
    Ynl = model.forward_nonlinear(allS)
    records = []
    off = 0
    B = X.shape[1]
    for m, r in runs.items():
        lin = evaluate_block(spmv(Pe, r.linear_stimuli), X, grid.shape)
        nl = evaluate_block(Ynl[:, off:off + B], X, grid.shape)
        r.percepts = Ynl[:, off:off + B]
        off += B
        for b in range(B):
            records.append(RunRecord(patient.label, implant.label, m, b, lin[b], nl[b],
                                     int(r.iters[b]), float(r.seconds[b])))
    return runs, records


def summarize(records: list[RunRecord]) -> list[list]:
    """Per (patient, implant, method) means over images."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.patient, r.implant, r.method), []).append(r)
    rows = []
    for (p, i, m), rs in groups.items():
        vals = np.array([[x.linear.ssim, x.linear.psnr_db, x.linear.mae,
                          x.nonlinear.ssim, x.nonlinear.psnr_db, x.nonlinear.mae,
                          x.iters, x.seconds] for x in rs], dtype=np.float64)
        rows.append([p, i, m, len(rs), *[float(v) for v in vals.mean(axis=0)]])
    return rows


SUMMARY_HEADER = ["patient", "implant", "method", "images", "ssim_lin", "psnr_lin", "mae_lin",
                  "ssim_nl", "psnr_nl", "mae_nl", "iters", "seconds"]


def cmd_encode(cfg: ExperimentConfig, out: Path) -> list[RunRecord]:
    out = Path(out)
    (out / "stimuli").mkdir(parents=True, exist_ok=True)
    imgs = load_images(cfg)
    records = []
    for implant in cfg.implants:
        grid = cfg.grid_for(implant)
        X = make_targets(imgs, grid)
        for patient in cfg.patients:
            log.info("encode %s / %s on %d images", patient.label, implant.label, X.shape[1])
            runs, recs = encode_condition(cfg, patient, implant, imgs, X)
            records += recs
            stem = f"{patient.label}_{implant.label}"
            for m, r in runs.items():
                np.save(out / "stimuli" / f"{stem}_{m}.npy", r.stimuli.T)
                if m == "pinv":
                    np.save(out / "stimuli" / f"{stem}_{m}_raw.npy", r.linear_stimuli.T)
                if cfg.save_percepts:
                    pdir = out / "percepts" / stem / m
                    pdir.mkdir(parents=True, exist_ok=True)
                    for b in range(X.shape[1]):
                        imageio.write_pgm(r.percepts[:, b].reshape(grid.shape),
                                          pdir / f"{b:05d}.pgm")
                        imageio.write_pgm(r.stimuli[:, b].reshape(implant.rows, implant.cols),
                                          pdir / f"{b:05d}_stim.pgm")
    write_csv(out / "runs.csv", RUN_HEADER, [r.row() for r in records])
    write_csv(out / "summary.csv", SUMMARY_HEADER, summarize(records))
    return records


def audit_encode(cfg: ExperimentConfig, out: Path, tol: float = 1e-9) -> list[str]:
    """Recompute every metric in ``runs.csv`` from the saved stimuli.

    Returns a list of mismatch descriptions (empty when consistent).
    """
    out = Path(out)
    rows = read_csv(out / "runs.csv")
    imgs = load_images(cfg)
    problems = []
    cache = {}
    for implant in cfg.implants:
        grid = cfg.grid_for(implant)
        X = make_targets(imgs, grid)
        for patient in cfg.patients:
            stem = f"{patient.label}_{implant.label}"
            P = matrix_for(patient, implant, grid, cfg.tau)
            model = model_for(patient, implant, grid)
            for m in cfg.methods:
                f = out / "stimuli" / f"{stem}_{m}.npy"
                if not f.exists():
                    continue
                S = np.load(f).T
                Slin = np.load(out / "stimuli" / f"{stem}_{m}_raw.npy").T if m == "pinv" else S
                lin = evaluate_block(spmv(P, Slin), X, grid.shape)
                nl = evaluate_block(model.forward_nonlinear(S), X, grid.shape)
                for b in range(X.shape[1]):
                    cache[(patient.label, implant.label, m, b)] = (lin[b], nl[b])
    for row in rows:
        key = (row["patient"], row["implant"], row["method"], int(row["image"]))
        if key not in cache:
            problems.append(f"{key}: no stimulus file")
            continue
        lin, nl = cache[key]
        want = {"ssim_lin": lin.ssim, "psnr_lin": lin.psnr_db, "mae_lin": lin.mae,
                "ssim_nl": nl.ssim, "psnr_nl": nl.psnr_db, "mae_nl": nl.mae}
        for k, v in want.items():
            got = float(row[k])
            if not (got == v or abs(got - v) <= tol * max(1.0, abs(v))):
                problems.append(f"{key} {k}: stored {got!r}, recomputed {v!r}")
    return problems


# ---------------------------------------------------------------- matrices on disk

def cmd_gen_matrix(cfg: ExperimentConfig, out: Path, bins: int = 20) -> list[list]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows, hist_rows = [], []
    for implant in cfg.implants:
        grid = cfg.grid_for(implant)
        for patient in cfg.patients:
            t0 = time.perf_counter()
            P = matrix_for(patient, implant, grid, cfg.tau)
            gen_s = time.perf_counter() - t0
            write_spmx(P, out / matrix_name(patient, implant))
            st = sparsity_stats(P)
            rows.append([patient.label, implant.label, patient.rho_um, patient.lambda_um,
                         P.rows, P.cols, cfg.tau, st["nnz"], st["density_percent"],
                         st["bytes_estimate"], 4 * P.rows * P.cols, gen_s])
            if P.nnz:
                mass, edges = mass_weighted_histogram(P, bins)
                for b in range(bins):
                    hist_rows.append([patient.label, implant.label, edges[b], edges[b + 1],
                                      float(mass[b])])
    write_csv(out / "sparsity.csv",
              ["patient", "implant", "rho_um", "lambda_um", "rows", "cols", "tau", "nnz",
               "density_percent", "bytes_estimate", "dense_f32_bytes", "seconds"], rows)
    write_csv(out / "mass_histogram.csv",
              ["patient", "implant", "bin_lo", "bin_hi", "mass"], hist_rows)
    return rows


# ---------------------------------------------------------------- anytime

def checkpoint_schedule(max_iters: int, dense_until: int = 32, growth: float = 1.25) -> list[int]:
    ks = list(range(0, min(dense_until, max_iters) + 1))
    k = float(dense_until)
    while True:
        k *= growth
        ki = int(round(k))
        if ki >= max_iters:
            break
        if ki > ks[-1]:
            ks.append(ki)
    if ks[-1] != max_iters:
        ks.append(max_iters)
    return ks


def best_iterate_snapshots(P: CsrMatrix, X: np.ndarray, opts: SolverOptions, checkpoints,
                           S0=None):
    """Best-so-far stimuli at each checkpoint iteration, ``{k: (N, B)}``."""
    B = X.shape[1]
    S_best = np.zeros((P.cols, B)) if S0 is None else np.clip(np.array(S0, dtype=float), 0, 1)
    R = spmv(P, S_best) - X
    F_best = 0.5 * np.einsum("ij,ij->j", R, R)
    want = set(checkpoints)
    snaps = {0: S_best.copy()} if 0 in want else {}
    f_snaps = {0: F_best.copy()} if 0 in want else {}
    state = {"k": 0}

    def fill(upto):
        # carry the current best forward over iterations where nothing changed
        for k in range(state["k"] + 1, upto + 1):
            if k in want:
                snaps[k] = S_best.copy()
                f_snaps[k] = F_best.copy()
        state["k"] = upto

    def cb(k, cols, S, F):
        fill(k - 1)
        better = F < F_best[cols]
        F_best[cols[better]] = F[better]
        S_best[:, cols[better]] = S[:, better]
        fill(k)

    o = SolverOptions(max_iters=max(checkpoints), grad_tol=opts.grad_tol,
                      rel_residual_tol=opts.rel_residual_tol, record_history=False)
    res = encode_batch(P, X, S0, o, cb)
    fill(max(checkpoints))
    return snaps, f_snaps, res


def timing_per_iteration(P: CsrMatrix, x: np.ndarray, iters: int = 1000) -> tuple[float, float]:
    """Mean and standard deviation (seconds) of single-image iteration times."""
    o = SolverOptions(max_iters=iters, grad_tol=0.0, rel_residual_tol=0.0)
    res = encode(P, x, None, o)
    dt = np.diff(np.asarray(res.seconds_history))
    if dt.size == 0:
        return 0.0, 0.0
    return float(dt.mean()), float(dt.std())


def warm_start_study(P: CsrMatrix, frames, slack: float = 1.05, converge_iters: int = 10_000,
                     cap: int = 10_000) -> list[dict]:
    """Iterations needed to reach ``slack * f_converged`` per frame, warm vs cold."""
    rows = []
    s_prev = None
    # reference optima are independent per frame, so solve them together
    X = np.column_stack([np.asarray(x, dtype=np.float64) for x in frames])
    converged = encode_batch(P, X, None, SolverOptions(max_iters=converge_iters,
                                                       record_history=False))
    for t, (x, conv) in enumerate(zip(frames, converged)):
        target = slack * conv.f_best
        opts = SolverOptions(max_iters=cap, target_f=target, record_history=False)
        warm = encode(P, x, s_prev, opts)
        cold = encode(P, x, None, opts)
        rows.append({"frame": t, "f_converged": conv.f_best, "target": target,
                     "iters_warm": warm.iterations_run, "iters_cold": cold.iterations_run,
                     "reached_warm": warm.f_best <= target})
        s_prev = warm.s_last
    return rows


def cmd_anytime(cfg: ExperimentConfig, out: Path) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    a = cfg.anytime
    max_iters = int(a.get("max_iters", 1000))
    checkpoints = checkpoint_schedule(max_iters)
    timing_iters = int(a.get("timing_iters", 200))
    imgs = load_images(cfg)
    curve_rows, cross_rows, warm_rows = [], [], []
    for implant in cfg.implants:
        grid = cfg.grid_for(implant)
        X = make_targets(imgs, grid)
        for patient in cfg.patients:
            P = matrix_for(patient, implant, grid, cfg.tau)
            model = model_for(patient, implant, grid)
            lanc = run_method("lanczos", P, X, imgs, implant, cfg.solver, cfg.pinv_cap)
            Yl = model.forward_nonlinear(lanc.stimuli)
            lanczos_ssim = float(np.mean([m.ssim for m in evaluate_block(Yl, X, grid.shape)]))
            snaps, fs, _ = best_iterate_snapshots(P, X, cfg.solver, checkpoints)
            allS = np.concatenate([snaps[k] for k in checkpoints], axis=1)
            Y = model.forward_nonlinear(allS)
            per_it, _ = timing_per_iteration(P, X[:, 0], timing_iters)
            B = X.shape[1]
            crossover = None
            for j, k in enumerate(checkpoints):
                s_mean = float(np.mean([m.ssim for m in
                                        evaluate_block(Y[:, j * B:(j + 1) * B], X, grid.shape)]))
                curve_rows.append([patient.label, implant.label, k, k * per_it, s_mean,
                                   float(np.mean(fs[k]))])
                if crossover is None and s_mean >= lanczos_ssim:
                    crossover = k
            cross_rows.append([patient.label, implant.label, lanczos_ssim,
                               "" if crossover is None else crossover,
                               "" if crossover is None else crossover * per_it, per_it * 1e3])
            if a.get("warm_start", True):
                frames = [imageio.to_target(f, grid.shape, resample=True)
                          for f in translated_sequence(imgs[0], int(a.get("frames", 10)))]
                for r in warm_start_study(P, frames, converge_iters=cfg.solver.max_iters,
                                          cap=cfg.solver.max_iters):
                    warm_rows.append([patient.label, implant.label, r["frame"], r["f_converged"],
                                      r["iters_warm"], r["iters_cold"]])
    write_csv(out / "anytime.csv", ["patient", "implant", "iter", "seconds_cumulative",
                                    "ssim", "f_best_mean"], curve_rows)
    write_csv(out / "crossover.csv", ["patient", "implant", "lanczos_ssim", "crossover_iter",
                                      "crossover_seconds", "per_iteration_ms"], cross_rows)
    if warm_rows:
        write_csv(out / "warmstart.csv", ["patient", "implant", "frame", "f_converged",
                                          "iters_warm", "iters_cold"], warm_rows)
    return {"curve": curve_rows, "crossover": cross_rows, "warm": warm_rows}


# ---------------------------------------------------------------- ablations

DEFAULT_TAUS = (0.0, 0.01, 0.05, 0.1, 0.2)


def cmd_truncation_ablation(cfg: ExperimentConfig, out: Path, taus=None) -> list[list]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    taus = list(taus if taus is not None else cfg.truncation.get("taus", DEFAULT_TAUS))
    imgs = load_images(cfg)
    rows = []
    for implant in cfg.implants:
        grid = cfg.grid_for(implant)
        X = make_targets(imgs, grid)
        for patient in cfg.patients:
            P0 = matrix_for(patient, implant, grid, 0.0)
            for tau in taus:
                _, recs = encode_condition(cfg, patient, implant, imgs, X, tau=tau,
                                           methods=["ours"], eval_matrix=P0)
                st = sparsity_stats(truncate(P0, tau))
                (s,) = summarize(recs)
                rows.append([patient.label, implant.label, tau, st["nnz"],
                             st["density_percent"], *s[4:10]])
    write_csv(out / "truncation.csv",
              ["patient", "implant", "tau", "nnz", "density_percent", "ssim_lin", "psnr_lin",
               "mae_lin", "ssim_nl", "psnr_nl", "mae_nl"], rows)
    return rows


DEFAULT_RHO_VALUES = (150.0, 250.0, 400.0, 800.0)
DEFAULT_LAMBDA_VALUES = (100.0, 200.0, 500.0, 1500.0)


def mismatch_cell(cfg: ExperimentConfig, true: PatientParams, assumed: PatientParams,
                  implant: ImplantGrid, imgs, X, rescale_ours: bool = True,
                  opts: SolverOptions | None = None) -> tuple[float, float]:
    """Mean nonlinear SSIM of (ours, lanczos) when optimising with ``assumed``
    but scaling and evaluating with ``true``."""
    grid = cfg.grid_for(implant)
    P_true = matrix_for(true, implant, grid, cfg.tau)
    P_assumed = matrix_for(assumed, implant, grid, cfg.tau)
    model = model_for(true, implant, grid)
    ours = run_method("ours", P_assumed, X, imgs, implant, opts or cfg.solver, cfg.pinv_cap)
    S = ours.stimuli
    if rescale_ours:
        S = np.column_stack([baselines.rescale_to_target(S[:, b], P_true, X[:, b])[0]
                             for b in range(X.shape[1])])
    lanc = run_method("lanczos", P_true, X, imgs, implant, cfg.solver, cfg.pinv_cap)
    Y = model.forward_nonlinear(np.concatenate([S, lanc.stimuli], axis=1))
    B = X.shape[1]
    s_ours = float(np.mean([m.ssim for m in evaluate_block(Y[:, :B], X, grid.shape)]))
    s_lanc = float(np.mean([m.ssim for m in evaluate_block(Y[:, B:], X, grid.shape)]))
    return s_ours, s_lanc


def cmd_mismatch_grid(cfg: ExperimentConfig, out: Path, rho_values=None,
                      lambda_values=None) -> list[list]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mm = cfg.mismatch
    rho_values = list(rho_values or mm.get("rho_values", DEFAULT_RHO_VALUES))
    lambda_values = list(lambda_values or mm.get("lambda_values", DEFAULT_LAMBDA_VALUES))
    fixed_lambda = float(mm.get("fixed_lambda", 200.0))
    fixed_rho = float(mm.get("fixed_rho", 250.0))
    rescale_ours = bool(mm.get("rescale_ours", True))
    base = cfg.patients[0]
    imgs = load_images(cfg)
    rows = []
    for implant in cfg.implants:
        X = make_targets(imgs, cfg.grid_for(implant))
        panels = [("rho", rho_values, lambda v: base.with_params(rho_um=v, lambda_um=fixed_lambda)),
                  ("lambda", lambda_values, lambda v: base.with_params(rho_um=fixed_rho, lambda_um=v))]
        for panel, values, mk in panels:
            for tv in values:
                for av in values:
                    s_o, s_l = mismatch_cell(cfg, mk(tv), mk(av), implant, imgs, X, rescale_ours)
                    rows.append([implant.label, panel, tv, av, s_o, s_l, s_o - s_l])
    write_csv(out / "mismatch.csv", ["implant", "panel", "true_value", "assumed_value",
                                     "ssim_ours", "ssim_lanczos", "gain"], rows)
    return rows


# ---------------------------------------------------------------- benchmark

def machine_info() -> dict:
    import os
    return {"platform": platform.platform(), "processor": platform.processor(),
            "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "cpu_count": os.cpu_count()}


def cmd_bench(cfg: ExperimentConfig, out: Path, matrix_dir: Path | None = None) -> list[list]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    iters = max(int(cfg.bench.get("iters", 1000)), 1000)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for implant in cfg.implants:
        grid = cfg.grid_for(implant)
        for patient in cfg.patients:
            t0 = time.perf_counter()
            f = Path(matrix_dir) / matrix_name(patient, implant) if matrix_dir else None
            if f is not None and f.exists():
                P = read_spmx(f)
                source = "spmx"
            else:
                P = matrix_for(patient, implant, grid, cfg.tau)
                source = "generated"
            cold = time.perf_counter() - t0
            x = rng.uniform(0.0, 1.0, P.rows)
            mean, std = timing_per_iteration(P, x, iters)
            rows.append([patient.label, implant.label, P.nnz, iters, mean * 1e3, std * 1e3,
                         cold, source])
    write_csv(out / "bench.csv", ["patient", "implant", "nnz", "iters", "mean_ms", "std_ms",
                                  "cold_load_s", "matrix_source"], rows)
    (out / "machine.json").write_text(json.dumps(machine_info(), indent=2))
    return rows
