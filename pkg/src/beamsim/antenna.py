"""Element pattern, array responses and DFT codebooks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geometry import DeviceDesign, PanelLayout, angles_to_unit, unit_to_angles, wrap_angle


@dataclass(frozen=True)
class ElementPattern:
    """3GPP single-element patch pattern parameters."""

    g_max_dbi: float = 8.0
    theta_3db: float = 65.0
    phi_3db: float = 65.0
    sla_v: float = 30.0
    a_max: float = 30.0

    def __post_init__(self):
        if min(self.theta_3db, self.phi_3db, self.sla_v, self.a_max) <= 0:
            raise ValueError("pattern parameters must be positive")


ISOTROPIC = ElementPattern(g_max_dbi=0.0, theta_3db=1e12, phi_3db=1e12)


def element_gain_db(pattern: ElementPattern, phi, theta):
    """Element power gain in dBi for azimuth ``phi`` and zenith ``theta`` (rad)."""
    phi_deg = np.degrees(wrap_angle(phi))
    theta_deg = np.degrees(np.asarray(theta, dtype=float))
    a_v = -np.minimum(12.0 * ((theta_deg - 90.0) / pattern.theta_3db) ** 2, pattern.sla_v)
    a_h = -np.minimum(12.0 * (phi_deg / pattern.phi_3db) ** 2, pattern.a_max)
    return pattern.g_max_dbi - np.minimum(-(a_v + a_h), pattern.a_max)


def element_gain(pattern: ElementPattern, phi, theta):
    """Linear amplitude gain ``g_a(phi, theta)``."""
    return 10.0 ** (element_gain_db(pattern, phi, theta) / 20.0)


def steering_axis(n: int, phase_arg) -> np.ndarray:
    """``[exp(j*pi*k*phase_arg)]`` for k = 0..n-1; broadcasts over ``phase_arg``."""
    if n < 1:
        raise ValueError("empty axis")
    arg = np.asarray(phase_arg, dtype=float)
    return np.exp(1j * np.pi * arg[..., None] * np.arange(n))


def panel_gain(panel: PanelLayout, pattern: ElementPattern, phi, theta):
    """Element gain for panel-local angles, evaluated in the boresight frame."""
    if np.array_equal(panel.element_axes, np.eye(3)):
        return element_gain(pattern, phi, theta)
    local = angles_to_unit(phi, theta)
    ephi, etheta = unit_to_angles(local @ panel.element_axes)
    return element_gain(pattern, ephi, etheta)


def array_response(panel: PanelLayout, pattern: ElementPattern, phi, theta) -> np.ndarray:
    """Array response ``g_a / sqrt(N_a) * a_z (x) a_y (x) a_x``.

    Angles are panel-local. Scalar angles give a vector of length N_a, array
    angles of shape (L,) give an (L, N_a) matrix.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    nx, ny, nz = panel.grid
    st = np.sin(theta)
    ax = steering_axis(nx, st * np.cos(phi))
    ay = steering_axis(ny, st * np.sin(phi))
    az = steering_axis(nz, np.cos(theta))
    # kron(a_z, kron(a_y, a_x)) along the last axis
    v = (az[..., :, None, None] * ay[..., None, :, None] * ax[..., None, None, :]).reshape(
        *phi.shape, nx * ny * nz
    )
    g = panel_gain(panel, pattern, phi, theta)
    return (g / math.sqrt(panel.n_elements))[..., None] * v


def dft_matrix(n: int) -> np.ndarray:
    """Unitary n-point DFT; column k is the beam steered to phase_arg 2k/n."""
    k = np.arange(n)
    return np.exp(2j * np.pi * np.outer(k, k) / n) / math.sqrt(n)


@dataclass(frozen=True)
class Codebook:
    """Beam vectors, one per row, plus the panel owning each beam.

    For a single panel ``vectors`` is an (n_beams, N_a) array. For a UT union
    codebook ``blocks`` holds one such array per panel and ``panel_of[j]``
    names the panel of global combiner j.
    """

    blocks: tuple[np.ndarray, ...]
    panel_of: np.ndarray

    @property
    def size(self) -> int:
        return len(self.panel_of)

    @property
    def vectors(self) -> np.ndarray:
        if len(self.blocks) != 1:
            raise ValueError("union codebook has panels of different sizes; use blocks")
        return self.blocks[0]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(b) for b in self.blocks])])

    def panel_slice(self, p: int) -> slice:
        off = self.offsets
        return slice(int(off[p]), int(off[p + 1]))

    def __iter__(self):
        for block in self.blocks:
            yield from block


def dft_codebook(panel: PanelLayout) -> Codebook:
    """Kronecker DFT codebook, beams ordered row-major over (k_z, k_y, k_x)."""
    nx, ny, nz = panel.grid
    W = np.kron(dft_matrix(nz), np.kron(dft_matrix(ny), dft_matrix(nx)))
    vectors = np.ascontiguousarray(W.T)
    return Codebook((vectors,), np.zeros(len(vectors), dtype=int))


def ut_codebook(design: DeviceDesign) -> Codebook:
    blocks = tuple(dft_codebook(p).vectors for p in design.panels)
    panel_of = np.concatenate([np.full(len(b), p) for p, b in enumerate(blocks)])
    return Codebook(blocks, panel_of)


def export_codebook_csv(codebook: Codebook, path) -> None:
    """CSV rows: beam index, panel, then interleaved re/im weights."""
    n_max = max(b.shape[1] for b in codebook.blocks)
    header = ["beam", "panel"]
    for k in range(n_max):
        header += [f"re{k}", f"im{k}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j, (vec, p) in enumerate(zip(codebook, codebook.panel_of)):
            row = [j, int(p)]
            for c in vec:
                row += [repr(float(c.real)), repr(float(c.imag))]
            w.writerow(row)


def read_codebook_csv(path) -> list[np.ndarray]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            vals = [float(x) for x in row[2:] if x != ""]
            out.append(np.array(vals[0::2]) + 1j * np.array(vals[1::2]))
    return out


@dataclass
class Coverage:
    azimuth_deg: np.ndarray  # (n_az,)
    zenith_deg: np.ndarray  # (n_zen,)
    gain: np.ndarray  # (n_zen, n_az), linear power

    @property
    def gain_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.gain)

    def cdf(self) -> tuple[np.ndarray, np.ndarray]:
        """Solid-angle weighted CDF of the gain in dB: (sorted gains, probabilities)."""
        w = np.broadcast_to(np.sin(np.radians(self.zenith_deg))[:, None], self.gain.shape).ravel()
        g = self.gain_db.ravel()
        order = np.argsort(g, kind="stable")
        cw = np.cumsum(w[order])
        return g[order], cw / cw[-1]

    def percentile(self, q: float) -> float:
        g, p = self.cdf()
        return float(g[np.searchsorted(p, q / 100.0)])


def coverage_gain(design: DeviceDesign, pattern: ElementPattern, directions) -> np.ndarray:
    """Max over all UT beams of ``|v_j^H a^(p(j))|^2`` for device-frame directions."""
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    best = np.zeros(len(d))
    for panel in design.panels:
        phi, theta = unit_to_angles(d @ panel.local_axes)
        a = array_response(panel, pattern, phi, theta)
        beams = dft_codebook(panel).vectors
        gains = np.abs(a @ beams.conj().T) ** 2
        best = np.maximum(best, gains.max(axis=1))
    return best.reshape(np.shape(directions)[:-1])


def spherical_coverage(design: DeviceDesign, pattern: ElementPattern, step_deg: float = 2.0) -> Coverage:
    """Coverage map over azimuth [-180, 180) and zenith [0, 180] in the device frame."""
    n_az = 360.0 / step_deg
    if abs(n_az - round(n_az)) > 1e-9 or abs(180.0 / step_deg - round(180.0 / step_deg)) > 1e-9:
        raise ValueError("grid step must divide 180 degrees")
    az = -180.0 + step_deg * np.arange(int(round(n_az)))
    zen = step_deg * np.arange(int(round(180.0 / step_deg)) + 1)
    dirs = angles_to_unit(np.radians(az)[None, :], np.radians(zen)[:, None])
    return Coverage(az, zen, coverage_gain(design, pattern, dirs))


def write_coverage_csv(cov: Coverage, path) -> None:
    gdb = cov.gain_db
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["azimuth", "elevation", "max_gain_db"])
        for iz, zen in enumerate(cov.zenith_deg):
            for ia, az in enumerate(cov.azimuth_deg):
                w.writerow([f"{az:g}", f"{zen:g}", f"{gdb[iz, ia]:.6f}"])


def ap_panel(grid=(1, 8, 8)) -> PanelLayout:
    """AP UPA in its LCS yz-plane, boresight +x."""
    return PanelLayout(tuple(grid), (1.0, 0.0, 0.0), np.eye(3))


__all__ = [
    "Codebook",
    "Coverage",
    "ElementPattern",
    "ISOTROPIC",
    "ap_panel",
    "array_response",
    "coverage_gain",
    "dft_codebook",
    "dft_matrix",
    "element_gain",
    "element_gain_db",
    "export_codebook_csv",
    "panel_gain",
    "read_codebook_csv",
    "spherical_coverage",
    "steering_axis",
    "ut_codebook",
    "write_coverage_csv",
]
