"""Reference encoders: image downsampling to the electrode grid and the
clipped pseudo-inverse solution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse import CsrMatrix, spmv

LANCZOS_A = 3
DENSE_CAP = 10_000_000


@dataclass(frozen=True)
class ResampleSpec:
    src_w: int
    src_h: int
    dst_w: int
    dst_h: int
    kernel: str = "lanczos3"

    def __post_init__(self):
        if min(self.src_w, self.src_h, self.dst_w, self.dst_h) < 1:
            raise ValueError("resample sizes must be positive")
        if self.kernel not in ("nearest", "lanczos3"):
            raise ValueError(f"unknown kernel {self.kernel!r}")


def lanczos_kernel(u, a: int = LANCZOS_A):
    u = np.asarray(u, dtype=np.float64)
    return np.where(np.abs(u) < a, np.sinc(u) * np.sinc(u / a), 0.0)


def _centres(n_src, n_dst):
    scale = n_src / n_dst
    return (np.arange(n_dst) + 0.5) * scale - 0.5, scale


def nearest_matrix(n_src: int, n_dst: int) -> np.ndarray:
    c, _ = _centres(n_src, n_dst)
    # ties go to the lower index
    idx = np.clip(np.ceil(c - 0.5).astype(np.int64), 0, n_src - 1)
    W = np.zeros((n_dst, n_src))
    W[np.arange(n_dst), idx] = 1.0
    return W


def lanczos_matrix(n_src: int, n_dst: int, a: int = LANCZOS_A) -> np.ndarray:
    """1-D resampling weights, support widened by the downscale factor."""
    c, scale = _centres(n_src, n_dst)
    stretch = max(scale, 1.0)
    src = np.arange(n_src)
    W = lanczos_kernel((src[None, :] - c[:, None]) / stretch, a)
    return W / W.sum(axis=1, keepdims=True)


def downsample(img, spec: ResampleSpec) -> np.ndarray:
    """Resample an ``src_h x src_w`` image to a row-major stimulus on the
    ``dst_h x dst_w`` electrode grid, clipped to ``[0, 1]``."""
    img = np.asarray(img, dtype=np.float64).reshape(spec.src_h, spec.src_w)
    make = nearest_matrix if spec.kernel == "nearest" else lanczos_matrix
    Wy = make(spec.src_h, spec.dst_h)
    Wx = make(spec.src_w, spec.dst_w)
    out = Wy @ img @ Wx.T
    return np.clip(out, 0.0, 1.0).ravel()


def rescale_to_target(s, P: CsrMatrix, x):
    """Scale ``s`` so the brightest linear percept pixel matches ``max(x)``.

    Returns ``(s_new, alpha)``; ``alpha`` is ``None`` when the linear percept
    is identically zero, in which case ``s`` comes back unchanged.
    """
    s = np.asarray(s, dtype=np.float64)
    peak = float(np.max(spmv(P, s))) if s.size else 0.0
    if peak <= 0.0:
        return s.copy(), None
    alpha = float(np.max(x)) / peak
    return np.clip(alpha * s, 0.0, 1.0), alpha


def pseudo_inverse(P: CsrMatrix, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense Moore-Penrose inverse ``(N x M)`` via SVD."""
    if P.rows * P.cols > cap:
        raise MemoryError(f"dense pseudo-inverse needs {P.rows * P.cols} entries (cap {cap})")
    A = P.to_dense()
    U, sig, Vt = np.linalg.svd(A, full_matrices=False)
    if sig.size == 0 or sig[0] == 0:
        return np.zeros((P.cols, P.rows))
    rcond = max(A.shape) * np.finfo(np.float64).eps * sig[0]
    inv = np.zeros_like(sig)
    big = sig > rcond
    inv[big] = 1.0 / sig[big]
    return (Vt.T * inv) @ U.T


@dataclass
class PinvStimulus:
    raw: np.ndarray       # unconstrained P^+ x
    stimulus: np.ndarray  # clipped at zero, rescaled, feasible
    alpha: float | None


def pseudo_inverse_encode(P: CsrMatrix, x, pinv: np.ndarray | None = None,
                          cap: int = DENSE_CAP) -> PinvStimulus:
    x = np.asarray(x, dtype=np.float64)
    if pinv is None:
        pinv = pseudo_inverse(P, cap)
    raw = pinv @ x
    s, alpha = rescale_to_target(np.maximum(raw, 0.0), P, x)
    return PinvStimulus(raw, np.clip(s, 0.0, 1.0), alpha)
