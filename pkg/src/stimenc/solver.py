"""Projected residual-norm steepest descent for box-constrained least squares.

Minimises ``f(s) = 0.5 * ||P s - x||^2`` over ``s in [0, 1]^N``.  Each step
takes the exact line-search length of the unconstrained quadratic along the
negative gradient and then clips onto the box.  Because the clipped step can
raise ``f``, the best iterate seen is tracked alongside the last one.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .sparse import CsrMatrix, spmv, spmv_transpose

TINY_DENOMINATOR = 1e-300
WINDOW = 10


@dataclass
class SolverOptions:
    max_iters: int = 10_000
    grad_tol: float = 1e-10
    rel_residual_tol: float = 1e-9
    record_history: bool = True
    target_f: Optional[float] = None
    debug: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol < 0 or self.rel_residual_tol < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass
class EncodeResult:
    s_best: np.ndarray
    f_best: float
    s_last: np.ndarray
    f_last: float
    f_initial: float
    iterations_run: int
    best_iteration: int
    stop_reason: str
    per_iteration_seconds: float
    residual_history: list = field(default_factory=list)
    seconds_history: list = field(default_factory=list)

    def write_history_csv(self, path) -> None:
        """Write ``iter,f,seconds_cumulative``; row 0 is the starting point."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "f", "seconds_cumulative"])
            for k, (f, t) in enumerate(zip(self.residual_history, self.seconds_history)):
                w.writerow([k, repr(float(f)), repr(float(t))])


def _check_inputs(P: CsrMatrix, x: np.ndarray):
    if x.shape[0] != P.rows:
        raise ValueError(f"target has {x.shape[0]} pixels, matrix has {P.rows} rows")
    if not np.all(np.isfinite(x)):
        raise ValueError("target contains non-finite values")


def objective(P: CsrMatrix, s, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    _check_inputs(P, x)
    r = spmv(P, s) - x
    return 0.5 * float(r @ r)


def gradient(P: CsrMatrix, s, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_inputs(P, x)
    return spmv_transpose(P, spmv(P, s) - x)


def step_size(P: CsrMatrix, g) -> float:
    """Exact minimiser ``||g||^2 / ||P g||^2`` of ``f(s - a g)`` along ``g``.

    Returns ``inf`` when ``P g`` vanishes (``g`` in the null space), which
    callers treat as stagnation.
    """
    g = np.asarray(g, dtype=np.float64)
    num = float(g @ g)
    if num == 0.0:
        raise ValueError("zero gradient has no step size")
    pg = spmv(P, g)
    den = float(pg @ pg)
    if den < TINY_DENOMINATOR:
        return float("inf")
    return num / den


def encode(P: CsrMatrix, x, s0=None, opts: SolverOptions | None = None,
           callback: Callable[[int, np.ndarray], None] | None = None) -> EncodeResult:
    """Encode one target percept ``x`` into a stimulus on ``[0, 1]^N``.

    ``callback(k, s)`` sees every accepted iterate ``s^(k)``, ``k >= 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    s0 = None if s0 is None else np.asarray(s0, dtype=np.float64)[:, None]
    cb = None if callback is None else (lambda k, cols, S, F: callback(k, S[:, 0].copy()))
    return encode_batch(P, x[:, None], s0, opts, cb)[0]


def encode_batch(P: CsrMatrix, X, S0=None, opts: SolverOptions | None = None,
                 callback=None) -> list[EncodeResult]:
    """Run :func:`encode` independently on every column of ``X`` (``M x B``).

    Columns stop individually; the matrix products of still-active columns
    are batched.  ``callback(k, cols, S, F)`` receives the new iterates and
    objective values of the columns ``cols`` updated at step ``k``.  ``per_iteration_seconds`` is the batch wall time amortised
    over all iterations performed.
    """
    opts = opts or SolverOptions()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be M x B")
    _check_inputs(P, X)
    B = X.shape[1]
    if S0 is None:
        S = np.zeros((P.cols, B))
    else:
        S = np.asarray(S0, dtype=np.float64).reshape(P.cols, B)
        if not np.all(np.isfinite(S)):
            raise ValueError("initial stimulus contains non-finite values")
        S = np.clip(S, 0.0, 1.0)

    t_start = time.perf_counter()
    R = spmv(P, S) - X
    F = 0.5 * np.einsum("ij,ij->j", R, R)
    f0 = F.copy()
    S_best = S.copy()
    F_best = F.copy()
    best_it = np.zeros(B, dtype=np.int64)
    iters = np.zeros(B, dtype=np.int64)
    reason = ["max_iters"] * B
    hist = [[float(f)] for f in F] if opts.record_history else [[] for _ in range(B)]
    times = [[0.0] for _ in range(B)] if opts.record_history else [[] for _ in range(B)]
    window = np.full((WINDOW + 1, B), np.inf)
    window[0] = F_best

    active = np.arange(B)
    if opts.target_f is not None:
        done = F_best <= opts.target_f
        for b in np.flatnonzero(done):
            reason[b] = "target"
        active = active[~done]

    for k in range(1, opts.max_iters + 1):
        if active.size == 0:
            break
        Sa = S[:, active]
        G = spmv_transpose(P, R[:, active])
        gn2 = np.einsum("ij,ij->j", G, G)
        PG = spmv(P, G)
        den = np.einsum("ij,ij->j", PG, PG)

        stop = np.zeros(active.size, dtype=bool)
        for i in np.flatnonzero(np.sqrt(gn2) <= opts.grad_tol):
            reason[active[i]] = "grad_tol"
            stop[i] = True
        for i in np.flatnonzero(~stop & (den < TINY_DENOMINATOR)):
            reason[active[i]] = "stagnation"
            stop[i] = True

        go = ~stop
        alpha = np.zeros(active.size)
        alpha[go] = gn2[go] / den[go]
        S_new = np.clip(Sa - alpha * G, 0.0, 1.0)
        fixed = go & np.all(S_new == Sa, axis=0)
        for i in np.flatnonzero(fixed):
            reason[active[i]] = "fixed_point"
        go &= ~fixed
        if opts.debug and not np.all((S_new >= 0.0) & (S_new <= 1.0)):
            raise AssertionError("iterate left the feasible box")

        cols = active[go]
        if cols.size:
            S_new = S_new[:, go]
            S[:, cols] = S_new
            Rn = spmv(P, S_new) - X[:, cols]
            R[:, cols] = Rn
            Fn = 0.5 * np.einsum("ij,ij->j", Rn, Rn)
            F[cols] = Fn
            iters[cols] = k
            better = Fn < F_best[cols]
            imp = cols[better]
            F_best[imp] = Fn[better]
            S_best[:, imp] = S_new[:, better]
            best_it[imp] = k
            if callback is not None:
                callback(k, cols, S_new, Fn)
            if opts.record_history:
                now = time.perf_counter() - t_start
                for b, f in zip(cols, Fn):
                    hist[b].append(float(f))
                    times[b].append(now)

            window[k % (WINDOW + 1), cols] = F_best[cols]
            keep = np.ones(cols.size, dtype=bool)
            if k >= WINDOW:
                old = window[(k + 1) % (WINDOW + 1), cols]
                stalled = (old - F_best[cols]) < opts.rel_residual_tol * old
                for i in np.flatnonzero(stalled):
                    reason[cols[i]] = "rel_residual_tol"
                keep &= ~stalled
            if opts.target_f is not None:
                hit = F_best[cols] <= opts.target_f
                for i in np.flatnonzero(hit & keep):
                    reason[cols[i]] = "target"
                keep &= ~hit
            active = cols[keep]
        else:
            active = cols

    elapsed = time.perf_counter() - t_start
    total = int(iters.sum())
    per_it = elapsed / total if total else 0.0
    out = []
    for b in range(B):
        out.append(EncodeResult(
            s_best=S_best[:, b].copy(), f_best=float(F_best[b]),
            s_last=S[:, b].copy(), f_last=float(F[b]), f_initial=float(f0[b]),
            iterations_run=int(iters[b]), best_iteration=int(best_it[b]),
            stop_reason=reason[b], per_iteration_seconds=per_it,
            residual_history=hist[b], seconds_history=times[b]))
    return out


def encode_sequence(P: CsrMatrix, frames: Sequence, iters_per_frame: int, s0=None,
                    opts: SolverOptions | None = None,
                    targets: Sequence[float] | None = None) -> list[EncodeResult]:
    """Encode frames in order, starting each from the previous frame's last iterate.

    ``targets`` optionally gives a per-frame ``target_f`` stopping value.
    """
    if len(frames) == 0:
        raise ValueError("no frames to encode")
    if iters_per_frame < 1:
        raise ValueError("iters_per_frame must be >= 1")
    base = opts or SolverOptions()
    s = s0
    results = []
    for t, x in enumerate(frames):
        o = SolverOptions(max_iters=iters_per_frame, grad_tol=base.grad_tol,
                          rel_residual_tol=base.rel_residual_tol,
                          record_history=base.record_history, debug=base.debug,
                          target_f=None if targets is None else targets[t])
        res = encode(P, x, s, o)
        results.append(res)
        s = res.s_last
    return results
