"""Simplified axon-map perception model.

Every percept pixel is the soma of a straight axon running to the optic
disc.  The axon is sampled at ``axon_segments`` evenly spaced points; an
electrode activates a segment with a Gaussian falloff in distance (scale
``rho_um``) damped exponentially by the arc length from the soma (scale
``lambda_um``).  A pixel's brightness is the strongest activation along its
axon.

Coordinates are retinal micrometres with ``y`` pointing up; image row 0 is
the top row, for both the percept grid and the electrode array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sparse import CsrMatrix, build_from_coo, truncate

WEIGHT_EPS = 1e-6
DEFAULT_TAU = 0.05


@dataclass(frozen=True)
class PatientParams:
    rho_um: float
    lambda_um: float
    optic_disc_um: tuple[float, float] = (4000.0, 0.0)
    axon_segments: int = 300
    name: str = ""

    def __post_init__(self):
        if not (self.rho_um > 0 and self.lambda_um > 0):
            raise ValueError("rho_um and lambda_um must be positive")
        if self.axon_segments < 2:
            raise ValueError("axon_segments must be at least 2")
        object.__setattr__(self, "optic_disc_um", tuple(float(v) for v in self.optic_disc_um))

    @property
    def label(self) -> str:
        return self.name or f"rho{self.rho_um:g}_lam{self.lambda_um:g}"

    def with_params(self, rho_um=None, lambda_um=None, name="") -> "PatientParams":
        return PatientParams(self.rho_um if rho_um is None else rho_um,
                             self.lambda_um if lambda_um is None else lambda_um,
                             self.optic_disc_um, self.axon_segments, name)


# Patients 1-4 (rho, lambda in um).
STANDARD_PATIENTS = (
    PatientParams(150.0, 100.0, name="P1"),
    PatientParams(150.0, 1500.0, name="P2"),
    PatientParams(800.0, 100.0, name="P3"),
    PatientParams(800.0, 1500.0, name="P4"),
)


@dataclass(frozen=True)
class ImplantGrid:
    rows: int
    cols: int
    pitch_h_um: float
    pitch_v_um: float
    center_um: tuple[float, float] = (0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("implant needs at least one electrode")
        if not (self.pitch_h_um > 0 and self.pitch_v_um > 0):
            raise ValueError("electrode pitch must be positive")
        object.__setattr__(self, "center_um", tuple(float(v) for v in self.center_um))

    @property
    def n_electrodes(self) -> int:
        return self.rows * self.cols

    @property
    def label(self) -> str:
        return self.name or f"{self.rows}x{self.cols}"

    def positions(self) -> np.ndarray:
        """Electrode centres, shape ``(N, 2)``, row-major from the top-left."""
        cx, cy = self.center_um
        xs = cx + (np.arange(self.cols) - (self.cols - 1) / 2) * self.pitch_h_um
        ys = cy + ((self.rows - 1) / 2 - np.arange(self.rows)) * self.pitch_v_um
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def bounds(self) -> tuple[float, float, float, float]:
        pos = self.positions()
        return (pos[:, 0].min(), pos[:, 0].max(), pos[:, 1].min(), pos[:, 1].max())


IMPLANT_15 = ImplantGrid(15, 15, 400.0, 400.0, name="15x15")
IMPLANT_28 = ImplantGrid(28, 28, 200.0, 200.0, name="28x28")
IMPLANT_100 = ImplantGrid(100, 100, 100.0, 100.0, name="100x100")
STANDARD_IMPLANTS = (IMPLANT_15, IMPLANT_28, IMPLANT_100)


@dataclass(frozen=True)
class PerceptGrid:
    width_px: int
    height_px: int
    x_range: tuple[float, float]
    y_range: tuple[float, float]

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError("percept grid must have at least one pixel")
        (x0, x1), (y0, y1) = self.x_range, self.y_range
        if (self.width_px > 1 and not x1 > x0) or (self.height_px > 1 and not y1 > y0):
            raise ValueError("degenerate percept grid extent")

    @classmethod
    def for_implant(cls, implant: ImplantGrid, px: int = 28, margin_um: float = 0.0,
                    height_px: int | None = None) -> "PerceptGrid":
        x0, x1, y0, y1 = implant.bounds()
        return cls(px, px if height_px is None else height_px,
                   (x0 - margin_um, x1 + margin_um), (y0 - margin_um, y1 + margin_um))

    @property
    def n_pixels(self) -> int:
        return self.width_px * self.height_px

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)

    def positions(self) -> np.ndarray:
        """Pixel centres, shape ``(M, 2)``, row-major from the top-left."""
        xs = _centres(self.x_range, self.width_px)
        ys = _centres(self.y_range, self.height_px)[::-1]
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


def _centres(rng, n):
    lo, hi = rng
    if n == 1:
        return np.array([(lo + hi) / 2])
    return np.linspace(lo, hi, n)


def axon_segments(pixel_pos, patient: PatientParams):
    """Segment positions ``(S, 2)`` and arc lengths ``(S,)`` for one soma."""
    soma = np.asarray(pixel_pos, dtype=np.float64)
    disc = np.asarray(patient.optic_disc_um)
    frac = np.linspace(0.0, 1.0, patient.axon_segments)
    pos = soma + frac[:, None] * (disc - soma)
    return pos, frac * float(np.hypot(*(disc - soma)))


def axon_weight(pixel_pos, electrode_pos, patient: PatientParams) -> np.ndarray:
    """Activation of each axon segment of ``pixel_pos`` by one electrode."""
    seg, t = axon_segments(pixel_pos, patient)
    d2 = np.sum((seg - np.asarray(electrode_pos, dtype=np.float64)) ** 2, axis=1)
    return np.exp(-d2 / (2 * patient.rho_um ** 2)) * np.exp(-t / patient.lambda_um)


class AxonMapModel:
    """Patient + implant + grid bundle that evaluates the forward model.

    Weights below ``WEIGHT_EPS`` are treated as zero.  The same pruned
    weights feed both the perception matrix and the nonlinear forward pass,
    so a single-electrode nonlinear percept equals its untruncated column.
    """

    def __init__(self, patient: PatientParams, implant: ImplantGrid, grid: PerceptGrid):
        self.patient = patient
        self.implant = implant
        self.grid = grid
        self.electrodes = implant.positions()
        self.pixels = grid.positions()
        p = patient
        self._dist_cut = p.rho_um * math.sqrt(2 * math.log(1 / WEIGHT_EPS))
        self._arc_cut = p.lambda_um * math.log(1 / WEIGHT_EPS)

    @property
    def n_pixels(self) -> int:
        return self.pixels.shape[0]

    @property
    def n_electrodes(self) -> int:
        return self.electrodes.shape[0]

    def pixel_block(self, p: int):
        """Nonzero weights for pixel ``p``.

        Returns ``(cols, W)`` with ``W[j, k]`` the activation of segment ``j``
        by electrode ``cols[k]``; segments beyond the arc-length cutoff and
        electrodes farther than the distance cutoff from every kept segment
        are omitted.
        """
        pat = self.patient
        seg, t = axon_segments(self.pixels[p], pat)
        nseg = int(np.searchsorted(t, self._arc_cut, side="right"))
        seg, t = seg[:nseg], t[:nseg]
        lo = seg.min(axis=0) - self._dist_cut
        hi = seg.max(axis=0) + self._dist_cut
        e = self.electrodes
        cand = np.flatnonzero(np.all((e >= lo) & (e <= hi), axis=1))
        if cand.size == 0 or nseg == 0:
            return cand[:0], np.zeros((nseg, 0))
        d2 = ((seg[:, None, :] - e[None, cand, :]) ** 2).sum(axis=2)
        W = np.exp(-d2 / (2 * pat.rho_um ** 2) - (t / pat.lambda_um)[:, None])
        W[W < WEIGHT_EPS] = 0.0
        used = np.any(W > 0, axis=0)
        return cand[used], W[:, used]

    def perception_matrix(self, tau: float = DEFAULT_TAU) -> CsrMatrix:
        """Column ``n`` is the percept of a unit stimulus on electrode ``n``."""
        rows, cols, vals = [], [], []
        for p in range(self.n_pixels):
            c, W = self.pixel_block(p)
            if c.size == 0:
                continue
            v = W.max(axis=0)
            rows.append(np.full(c.size, p, dtype=np.int64))
            cols.append(c)
            vals.append(v)
        if rows:
            r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        else:
            r = c = np.empty(0, np.int64)
            v = np.empty(0)
        P = build_from_coo(r, c, v, self.n_pixels, self.n_electrodes)
        return truncate(P, tau) if tau > 0 else P

    def forward_nonlinear(self, s) -> np.ndarray:
        """Nonlinear percept(s) for stimulus vector ``(N,)`` or block ``(N, B)``.

        Per segment the electrode contributions add; the pixel takes the
        maximum over its segments, clipped to ``[0, 1]``.
        """
        s = np.asarray(s, dtype=np.float64)
        single = s.ndim == 1
        S = s[:, None] if single else s
        if S.shape[0] != self.n_electrodes:
            raise ValueError(f"stimulus has {S.shape[0]} entries, implant has {self.n_electrodes}")
        Y = np.zeros((self.n_pixels, S.shape[1]))
        for p in range(self.n_pixels):
            c, W = self.pixel_block(p)
            if c.size:
                Y[p] = (W @ S[c]).max(axis=0)
        np.clip(Y, 0.0, 1.0, out=Y)
        return Y[:, 0] if single else Y


def build_perception_matrix(patient: PatientParams, implant: ImplantGrid, grid: PerceptGrid,
                            tau: float = DEFAULT_TAU) -> CsrMatrix:
    return AxonMapModel(patient, implant, grid).perception_matrix(tau)


def forward_nonlinear(s, patient: PatientParams, implant: ImplantGrid, grid: PerceptGrid):
    return AxonMapModel(patient, implant, grid).forward_nonlinear(s)


def forward_linear(P: CsrMatrix, s, clip: bool = True) -> np.ndarray:
    """Linearised percept ``P @ s``; clipped to ``[0, 1]`` for display by default."""
    y = P @ s
    return np.clip(y, 0.0, 1.0) if clip else y
