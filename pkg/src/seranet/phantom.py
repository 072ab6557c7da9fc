"""Procedural brain phantoms and spin-echo image synthesis.

Generates 2D tissue label maps (background / CSF / gray matter / white
matter) as nested, randomly deformed ellipses, and turns them into
complex-valued MR images with a closed-form spin-echo signal model and a
smooth low-order polynomial phase field. Everything is a pure function of
its explicit seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Label ids, in channel order used everywhere downstream.
BACKGROUND, CSF, GM, WM = 0, 1, 2, 3
TISSUE_NAMES = ("background", "csf", "gm", "wm")
NUM_CLASSES = 4

MIN_DIM = 32


@dataclass(frozen=True)
class TissueParams:
    """MR physical parameters of one tissue class.

    T1/T2 are relaxation times in seconds, PD is the unitless proton
    density in [0, 1]. PD == 0 marks a signal-free tissue (background).
    """

    tissue_id: int
    T1: float
    T2: float
    PD: float

    def __post_init__(self):
        if not 0 <= self.tissue_id < NUM_CLASSES:
            raise ValueError(f"tissue_id must be in 0..3, got {self.tissue_id}")
        if self.T1 <= 0 or self.T2 <= 0:
            raise ValueError(f"T1 and T2 must be positive, got T1={self.T1}, T2={self.T2}")
        if self.T2 >= self.T1:
            raise ValueError(f"T2 must be smaller than T1, got T1={self.T1}, T2={self.T2}")
        if not 0.0 <= self.PD <= 1.0:
            raise ValueError(f"PD must lie in [0, 1], got {self.PD}")


# Default tissue table. Relaxation values follow common digital-phantom
# conventions; they are configuration defaults, not ground truth.
DEFAULT_TISSUES = (
    TissueParams(BACKGROUND, T1=1.0, T2=0.1, PD=0.0),
    TissueParams(CSF, T1=2.569, T2=0.329, PD=1.0),
    TissueParams(GM, T1=0.833, T2=0.083, PD=0.86),
    TissueParams(WM, T1=0.500, T2=0.070, PD=0.77),
)


def load_tissue_table(path) -> tuple[TissueParams, ...]:
    """Load a tissue table from a JSON file.

    Expected layout: ``{"csf": {"T1": 2.569, "T2": 0.329, "PD": 1.0}, ...}``
    with one entry per tissue name in ``TISSUE_NAMES``.
    """
    raw = json.loads(Path(path).read_text())
    missing = [n for n in TISSUE_NAMES if n not in raw]
    if missing:
        raise ValueError(f"tissue table is missing entries for: {', '.join(missing)}")
    table = []
    for tissue_id, name in enumerate(TISSUE_NAMES):
        entry = raw[name]
        try:
            table.append(TissueParams(tissue_id, T1=float(entry["T1"]),
                                      T2=float(entry["T2"]), PD=float(entry["PD"])))
        except KeyError as exc:
            raise ValueError(f"tissue {name!r} is missing key {exc}") from exc
    return tuple(table)


def save_tissue_table(table, path) -> None:
    data = {TISSUE_NAMES[t.tissue_id]: {"T1": t.T1, "T2": t.T2, "PD": t.PD} for t in table}
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SequenceParams:
    """Spin-echo acquisition timing: echo time TE and repetition time TR, seconds."""

    TE: float
    TR: float

    def __post_init__(self):
        if self.TE < 0 or self.TR <= 0:
            raise ValueError(f"need TE >= 0 and TR > 0, got TE={self.TE}, TR={self.TR}")


# Nominal timing and the +-5% variation window used by the scanner model.
NOMINAL_TE = 0.080
NOMINAL_TR = 3.0
TIMING_VARIATION = 0.05


@dataclass
class LabelMap:
    """Per-pixel tissue labels for one slice."""

    labels: np.ndarray  # (H, W) uint8, values in {0..3}
    seed: int
    brain_id: int = 0
    slice_id: int = 0

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass
class ComplexImage:
    """Complex image stored as stacked real/imaginary channels, shape (2, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[0] != 2:
            raise ValueError(f"expected shape (2, H, W), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("complex image contains non-finite values")

    @property
    def re(self) -> np.ndarray:
        return self.data[0]

    @property
    def im(self) -> np.ndarray:
        return self.data[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.data[0], self.data[1])


def generate_label_map(seed: int, height: int, width: int,
                       brain_id: int = 0, slice_id: int = 0) -> LabelMap:
    """Generate a procedural brain-like label map.

    Layout: deformed concentric ellipses with a CSF rim, a GM band and a WM
    core, plus 2-5 CSF "ventricle" blobs inside the WM. Background fills
    everything outside the head, including the full image border.
    Deterministic per seed.
    """
    if height < MIN_DIM or width < MIN_DIM:
        raise ValueError(f"phantom dimensions must be >= {MIN_DIM}, got {height}x{width}")

    rng = np.random.default_rng(seed)

    cy = height / 2 + rng.uniform(-0.02, 0.02) * height
    cx = width / 2 + rng.uniform(-0.02, 0.02) * width
    ry = rng.uniform(0.36, 0.42) * height
    rx = rng.uniform(0.36, 0.42) * width

    # Low-order radial deformation of the outer boundary, shared by all rings.
    amps = rng.uniform(0.0, 0.03, size=2)
    phases = rng.uniform(0.0, 2 * math.pi, size=2)

    wm_edge = rng.uniform(0.55, 0.64)
    gm_edge = rng.uniform(0.80, 0.88)

    yy = np.arange(height, dtype=np.float64)[:, None]
    xx = np.arange(width, dtype=np.float64)[None, :]
    dy = (yy - cy) / ry
    dx = (xx - cx) / rx
    theta = np.arctan2(dy, dx)
    rho = 1.0 + amps[0] * np.cos(2 * theta + phases[0]) + amps[1] * np.cos(3 * theta + phases[1])
    u = np.hypot(dy, dx) / rho

    labels = np.full((height, width), BACKGROUND, dtype=np.uint8)
    labels[u <= 1.0] = CSF
    labels[u <= gm_edge] = GM
    labels[u <= wm_edge] = WM

    # CSF ventricles: small ellipses that only ever overwrite WM pixels.
    n_vents = int(rng.integers(2, 6))
    for _ in range(n_vents):
        ang = rng.uniform(0.0, 2 * math.pi)
        rad = rng.uniform(0.05, 0.38)
        vy = cy + rad * ry * math.sin(ang)
        vx = cx + rad * rx * math.cos(ang)
        vry = max(1.5, rng.uniform(0.025, 0.06) * min(height, width))
        vrx = max(1.5, rng.uniform(0.025, 0.06) * min(height, width))
        tilt = rng.uniform(0.0, math.pi)
        oy = yy - vy
        ox = xx - vx
        ra = oy * math.cos(tilt) - ox * math.sin(tilt)
        rb = oy * math.sin(tilt) + ox * math.cos(tilt)
        inside = (ra / vry) ** 2 + (rb / vrx) ** 2 <= 1.0
        labels[inside & (labels == WM)] = CSF

    # Geometry already keeps the head away from the edges; make the border
    # contract explicit anyway.
    labels[[0, -1], :] = BACKGROUND
    labels[:, [0, -1]] = BACKGROUND

    present = set(np.unique(labels).tolist())
    if present != {BACKGROUND, CSF, GM, WM}:  # pragma: no cover - geometry guarantees this
        raise RuntimeError(f"phantom lost a tissue class, present={sorted(present)}")

    return LabelMap(labels=labels, seed=seed, brain_id=brain_id, slice_id=slice_id)


def sample_sequence_params(seed: int) -> SequenceParams:
    """Draw TE/TR uniformly within +-5% of the nominal 80 ms / 3 s timing."""
    rng = np.random.default_rng(seed)
    te = rng.uniform(NOMINAL_TE * (1 - TIMING_VARIATION), NOMINAL_TE * (1 + TIMING_VARIATION))
    tr = rng.uniform(NOMINAL_TR * (1 - TIMING_VARIATION), NOMINAL_TR * (1 + TIMING_VARIATION))
    return SequenceParams(TE=float(te), TR=float(tr))


def spin_echo_signal(params: TissueParams, seq: SequenceParams) -> float:
    """Closed-form spin-echo magnitude: PD * (1 - exp(-TR/T1)) * exp(-TE/T2)."""
    if params.T1 <= 0 or params.T2 <= 0:
        raise ValueError(f"T1 and T2 must be positive, got T1={params.T1}, T2={params.T2}")
    return params.PD * (1.0 - math.exp(-seq.TR / params.T1)) * math.exp(-seq.TE / params.T2)


def synthesize_complex_image(labels: LabelMap, tissue_table, seq: SequenceParams,
                             phase_seed: int, phase_coeffs=None) -> ComplexImage:
    """Render a label map into a complex image under the spin-echo model.

    Per-pixel magnitude is the spin-echo signal of the pixel's tissue. The
    phase is a smooth bilinear field a0 + a1*x + a2*y + a3*x*y over unit
    coordinates, with coefficients drawn uniformly from (-pi/4, pi/4) using
    ``phase_seed`` (or given explicitly via ``phase_coeffs``).
    """
    table = {t.tissue_id: t for t in tissue_table}
    present = set(np.unique(labels.labels).tolist())
    missing = sorted(present - set(table))
    if missing:
        raise ValueError(f"tissue table has no entry for label(s) {missing}")

    lut = np.zeros(NUM_CLASSES, dtype=np.float64)
    for tissue_id in present:
        lut[tissue_id] = spin_echo_signal(table[tissue_id], seq)
    magnitude = lut[labels.labels]

    if phase_coeffs is None:
        rng = np.random.default_rng(phase_seed)
        phase_coeffs = rng.uniform(-math.pi / 4, math.pi / 4, size=4)
    a0, a1, a2, a3 = (float(a) for a in phase_coeffs)
    h, w = labels.labels.shape
    xn = np.linspace(0.0, 1.0, w)[None, :]
    yn = np.linspace(0.0, 1.0, h)[:, None]
    phase = a0 + a1 * xn + a2 * yn + a3 * xn * yn

    data = np.stack((magnitude * np.cos(phase), magnitude * np.sin(phase)))
    return ComplexImage(data)


def labels_to_onehot(labels) -> np.ndarray:
    """One-hot encode a label grid into a (4, H, W) float32 mask."""
    grid = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    if grid.ndim != 2:
        raise ValueError(f"expected a 2D label grid, got shape {grid.shape}")
    if grid.min() < 0 or grid.max() >= NUM_CLASSES:
        raise ValueError(f"labels must lie in 0..{NUM_CLASSES - 1}, "
                         f"got range [{grid.min()}, {grid.max()}]")
    onehot = np.zeros((NUM_CLASSES,) + grid.shape, dtype=np.float32)
    for c in range(NUM_CLASSES):
        onehot[c] = grid == c
    return onehot
