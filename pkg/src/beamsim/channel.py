"""Shoebox image-method ray tracer, per-panel channel matrices and RSS tables.

Units: powers in watts internally, dBm at the file boundary. A path's
``power_db`` is its received power in dBm for a 0 dBm isotropic transmitter,
i.e. the path gain in dB; ``power_rho`` is the same value in linear scale.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import constants

from .antenna import Codebook, ElementPattern, ap_panel, array_response
from .geometry import DeviceDesign, Pose, direction_to_panel_angles, mod_2pi, rotation_matrix, unit_to_angles

TWO_PI = 2.0 * math.pi


def dbm_to_watt(x):
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float)) + 30.0


def friis_loss_db(distance_m: float, carrier_hz: float) -> float:
    """Free-space path loss ``20 log10(4 pi d / lambda)``."""
    lam = constants.c / carrier_hz
    return 20.0 * math.log10(4.0 * math.pi * distance_m / lam)


@dataclass(frozen=True)
class Scene:
    room: tuple[float, float, float] = (7.0, 7.0, 3.0)
    # 0.1 m off the x=0 wall so the AP is strictly inside the room
    ap_pose: Pose = field(default_factory=lambda: Pose((0.1, 3.5, 2.0), (0.0, 0.0, 0.0)))
    ap_grid: tuple[int, int, int] = (1, 8, 8)
    reflection_loss_db: float = 10.0
    carrier_hz: float = 60e9
    max_order: int = 2
    random_phase: bool = False

    def __post_init__(self):
        if min(self.room) <= 0:
            raise ValueError("room extents must be positive")
        if self.max_order not in (0, 1, 2):
            raise ValueError("max_order must be 0, 1 or 2")
        if not self.contains(self.ap_pose.position):
            raise ValueError("AP pose out of bounds")

    @property
    def wavelength(self) -> float:
        return constants.c / self.carrier_hz

    @property
    def n_ap(self) -> int:
        nx, ny, nz = self.ap_grid
        return nx * ny * nz

    def contains(self, p, strict=True) -> bool:
        p = np.asarray(p, dtype=float)
        lo, hi = np.zeros(3), np.asarray(self.room)
        if strict:
            return bool(np.all(p > lo) and np.all(p < hi))
        return bool(np.all(p >= lo) and np.all(p <= hi))

    def to_dict(self) -> dict:
        return {
            "room": list(self.room),
            "ap_position": list(self.ap_pose.position),
            "ap_rotation": list(self.ap_pose.rotation),
            "ap_grid": list(self.ap_grid),
            "reflection_loss_db": self.reflection_loss_db,
            "carrier_hz": self.carrier_hz,
            "max_order": self.max_order,
            "random_phase": self.random_phase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            room=tuple(d["room"]),
            ap_pose=Pose(tuple(d["ap_position"]), tuple(d["ap_rotation"])),
            ap_grid=tuple(d["ap_grid"]),
            reflection_loss_db=float(d["reflection_loss_db"]),
            carrier_hz=float(d["carrier_hz"]),
            max_order=int(d["max_order"]),
            random_phase=bool(d["random_phase"]),
        )


class Path(NamedTuple):
    """One multipath component."""

    power_db: float
    phase: float
    aod_az: float
    aod_el: float
    aoa_dir: tuple[float, float, float]
    is_los: bool

    @property
    def power_rho(self) -> float:
        return 10.0 ** (self.power_db / 10.0)


# walls as (axis, coordinate selector): selector 0 is the plane at 0, 1 the far plane
WALLS = [(a, s) for a in range(3) for s in (0, 1)]


def _reflect(p: np.ndarray, wall: int, room) -> np.ndarray:
    axis, side = WALLS[wall]
    q = p.copy()
    q[axis] = 2.0 * (room[axis] * side) - q[axis]
    return q


def image_paths(src, dst, room, max_order: int):
    """Valid specular paths from ``src`` to ``dst`` inside an axis-aligned box.

    Returns a list of ``(walls, image, hit_points)`` tuples. Wall sequences with
    an immediate repeat are skipped; every other sequence is kept only if the
    unfolded ray actually hits its walls, in order, inside the wall bounds.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    room = np.asarray(room, dtype=float)
    out = [((), src.copy(), [])]
    eps = 1e-12
    for order in range(1, max_order + 1):
        for seq in itertools.product(range(6), repeat=order):
            if any(a == b for a, b in zip(seq, seq[1:])):
                continue
            images = [src]
            for w in seq:
                images.append(_reflect(images[-1], w, room))
            q = dst
            hits = []
            ok = True
            for m in range(order, 0, -1):
                axis, side = WALLS[seq[m - 1]]
                plane = room[axis] * side
                img = images[m]
                den = img[axis] - q[axis]
                if abs(den) < eps:
                    ok = False
                    break
                t = (plane - q[axis]) / den
                if not eps < t < 1.0 - eps:
                    ok = False
                    break
                hit = q + t * (img - q)
                others = [k for k in range(3) if k != axis]
                if np.any(hit[others] < -1e-9) or np.any(hit[others] > room[others] + 1e-9):
                    ok = False
                    break
                hits.append(hit)
                q = hit
            if ok:
                out.append((seq, images[-1], hits[::-1]))
    return out


def trace_rays(scene: Scene, ut_pose: Pose, rng: np.random.Generator | None = None) -> list[Path]:
    """LOS plus image-method reflections up to ``scene.max_order``."""
    ut = np.asarray(ut_pose.position)
    if not scene.contains(ut):
        raise ValueError("pose out of bounds")
    ap = np.asarray(scene.ap_pose.position)
    lam = scene.wavelength
    R_ap = rotation_matrix(scene.ap_pose.rotation)
    if scene.random_phase and rng is None:
        raise ValueError("random_phase needs an rng")
    paths = []
    for walls, image, hits in image_paths(ap, ut, scene.room, scene.max_order):
        d = float(np.linalg.norm(ut - image))
        k = len(walls)
        power_db = -friis_loss_db(d, scene.carrier_hz) - k * scene.reflection_loss_db
        if scene.random_phase:
            phase = float(rng.uniform(0.0, TWO_PI))
        else:
            phase = float(mod_2pi(-TWO_PI * d / lam))
        first = hits[0] if hits else ut
        dep = (first - ap) / np.linalg.norm(first - ap)
        aod_az, aod_el = unit_to_angles(dep @ R_ap)
        arr = (image - ut) / d
        paths.append(
            Path(
                float(power_db),
                phase,
                float(aod_az),
                float(aod_el),
                tuple(float(v) for v in arr),
                k == 0,
            )
        )
    return paths


def drop_los(paths: Iterable[Path]) -> list[Path]:
    return [p for p in paths if not p.is_los]


@dataclass
class ChannelMatrix:
    """Per-panel matrices ``H[p]`` of shape (N_UT^(p), N_AP)."""

    blocks: list[np.ndarray]

    def __getitem__(self, p: int) -> np.ndarray:
        return self.blocks[p]

    def __len__(self) -> int:
        return len(self.blocks)

    def scaled(self, factor: float) -> "ChannelMatrix":
        return ChannelMatrix([factor * H for H in self.blocks])


def assemble_channel(
    paths: Sequence[Path],
    scene: Scene,
    ut_pose: Pose,
    design: DeviceDesign,
    pattern: ElementPattern,
) -> ChannelMatrix:
    """``H^(p) = sum_l sqrt(rho_l) e^{j phase_l} a_UT^(p)(aoa) a_AP(aod)^H``."""
    n_ap = scene.n_ap
    if not paths:
        return ChannelMatrix([np.zeros((p.n_elements, n_ap), dtype=complex) for p in design.panels])
    power_db = np.array([p.power_db for p in paths])
    phase = np.array([p.phase for p in paths])
    coef = np.sqrt(10.0 ** (power_db / 10.0)) * np.exp(1j * phase)
    a_ap = array_response(
        ap_panel(scene.ap_grid),
        pattern,
        np.array([p.aod_az for p in paths]),
        np.array([p.aod_el for p in paths]),
    )
    aoa = np.array([p.aoa_dir for p in paths])
    blocks = []
    for panel in design.panels:
        phi, theta = direction_to_panel_angles(aoa, ut_pose, panel)
        a_ut = array_response(panel, pattern, phi, theta)
        blocks.append((a_ut * coef[:, None]).T @ a_ap.conj())
    return ChannelMatrix(blocks)


@dataclass
class RssTable:
    """``values[i, j]``: RSS in watts of AP beam i and UT combiner j."""

    values: np.ndarray
    noise_seed: int | None = None

    @property
    def dbm(self) -> np.ndarray:
        return watt_to_dbm(self.values)


def measure_rss(
    H: ChannelMatrix,
    ap_codebook: Codebook,
    ut_codebook: Codebook,
    p_ap_dbm: float = 24.0,
    sigma_n_dbm: float = -84.0,
    rng: np.random.Generator | int | None = None,
    noisy: bool = False,
    symbol: complex = 1.0,
) -> RssTable:
    """``R[i, j] = |sqrt(P_AP) v_j^H H^(p(j)) u_i s + v_j^H n|^2`` for all pairs.

    The combined noise ``v_j^H n`` with n ~ CN(0, sigma^2 I) is drawn directly as
    CN(0, sigma^2 ||v_j||^2), one fresh value per (i, j).
    """
    U = ap_codebook.vectors
    if len(H) != len(ut_codebook.blocks):
        raise ValueError("dimension mismatch: panel count")
    for Hp, Vp in zip(H.blocks, ut_codebook.blocks):
        if Hp.shape != (Vp.shape[1], U.shape[1]):
            raise ValueError(f"dimension mismatch: H block {Hp.shape} vs codebooks")
    amp = math.sqrt(float(dbm_to_watt(p_ap_dbm))) * symbol
    y = np.concatenate([(Vp.conj() @ Hp @ U.T) for Hp, Vp in zip(H.blocks, ut_codebook.blocks)]).T
    y = amp * y
    seed = None
    if noisy:
        if rng is None or isinstance(rng, (int, np.integer)):
            seed = None if rng is None else int(rng)
            rng = np.random.default_rng(seed)
        sigma = math.sqrt(float(dbm_to_watt(sigma_n_dbm)))
        vnorm = np.concatenate([np.linalg.norm(Vp, axis=1) for Vp in ut_codebook.blocks])
        z = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + (sigma / math.sqrt(2.0)) * vnorm[None, :] * z
    return RssTable(np.abs(y) ** 2, seed)


def add_noise(rss_noiseless: np.ndarray, sigma_n_dbm: float, rng: np.random.Generator) -> np.ndarray:
    """Noisy RSS from noiseless RSS for unit-norm combiners.

    ``|sqrt(R0) + w|^2`` with w ~ CN(0, sigma^2) has the same law as the
    measurement with the true complex amplitude, since w is circularly
    symmetric.
    """
    r0 = np.asarray(rss_noiseless, dtype=float)
    sigma = math.sqrt(float(dbm_to_watt(sigma_n_dbm)))
    z = rng.standard_normal(r0.shape) + 1j * rng.standard_normal(r0.shape)
    return np.abs(np.sqrt(r0) + (sigma / math.sqrt(2.0)) * z) ** 2


def snr_of(rss_noiseless, sigma_n_dbm: float = -84.0):
    r = np.asarray(rss_noiseless, dtype=float)
    if np.any(r < 0):
        raise ValueError("negative RSS")
    return r / dbm_to_watt(sigma_n_dbm)


# ---------------------------------------------------------------------------
# ray-dump files

RAY_FIELDS = [
    "sample_id",
    "ut_x",
    "ut_y",
    "ut_z",
    "ut_alpha",
    "ut_beta",
    "ut_gamma",
    "is_los",
    "power_dbm",
    "phase_rad",
    "aod_az",
    "aod_el",
    "aoa_x",
    "aoa_y",
    "aoa_z",
]
RAY_MAGIC = b"BRAY1"
_RAY_DTYPE = np.dtype(
    [("sample_id", "<u8"), ("pose", "<f8", (6,)), ("kind", "u1"), ("vals", "<f8", (7,))]
)
_KIND_EMPTY = 2
_CSV_DTYPE = np.dtype(
    [("sample_id", "<i8"), ("pose", "<f8", (6,)), ("kind", "<i8"), ("vals", "<f8", (7,))]
)


class RaySample(NamedTuple):
    sample_id: int
    ut_pose: Pose
    paths: list[Path]


def _check_unit(v, where: str):
    if abs(math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2) - 1.0) > 1e-9:
        raise ValueError(f"{where}: non-unit AoA vector")


def write_rays_csv(samples: Iterable[RaySample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAY_FIELDS)
        for s in samples:
            head = [s.sample_id, *map(repr, s.ut_pose.position), *map(repr, s.ut_pose.rotation)]
            if not s.paths:
                w.writerow(head + [""] * 8)
            for p in s.paths:
                w.writerow(
                    head
                    + [int(p.is_los)]
                    + [repr(float(v)) for v in (p.power_db, p.phase, p.aod_az, p.aod_el, *p.aoa_dir)]
                )


def _assemble_samples(sids, poses, kinds, vals) -> list[RaySample]:
    """Group flat per-path records (already validated) into samples."""
    if len(sids) == 0:
        return []
    starts = np.flatnonzero(np.r_[True, sids[1:] != sids[:-1]])
    stops = np.r_[starts[1:], len(sids)]
    vals = vals.tolist()
    los = (kinds == 1).tolist()
    empty = (kinds == _KIND_EMPTY).tolist()
    sid_list = sids[starts].tolist()
    pose_list = poses[starts].tolist()
    out: list[RaySample] = []
    for sid, pose, a, b in zip(sid_list, pose_list, starts.tolist(), stops.tolist()):
        paths = [
            Path(v[0], v[1], v[2], v[3], (v[4], v[5], v[6]), los[r])
            for r, v in zip(range(a, b), vals[a:b])
            if not empty[r]
        ]
        out.append(RaySample(sid, Pose(pose[:3], pose[3:]), paths))
    return out


def _csv_row_error(lineno: int, row: list[str]) -> str:
    """Describe why one CSV row is malformed (slow path, only on failure)."""
    if len(row) != len(RAY_FIELDS):
        return f"line {lineno}: expected {len(RAY_FIELDS)} fields, got {len(row)}"
    try:
        int(row[0])
        [float(x) for x in row[1:7]]
        if row[7] == "":
            if any(row[8:]):
                raise ValueError("empty-sample row carries path values")
        else:
            if row[7] not in ("0", "1"):
                raise ValueError("is_los must be 0 or 1")
            vals = [float(x) for x in row[8:]]
            _check_unit(vals[4:7], f"line {lineno}")
    except ValueError as exc:
        if "non-unit" in str(exc):
            raise
        return f"line {lineno}: malformed record ({exc})"
    return ""


def read_rays_csv(path) -> list[RaySample]:
    with open(path, newline="") as fh:
        head = fh.readline()
        body = fh.read()
    header = next(csv.reader([head]), None)
    if header != RAY_FIELDS:
        unknown = sorted(set(header or []) - set(RAY_FIELDS))
        raise ValueError(f"line 1: bad ray-dump header (unknown fields: {unknown})")
    if body and not body.endswith("\n"):
        body += "\n"
    # empty-sample rows leave the path fields blank; give them a sentinel kind
    filled = body.replace(",,,,,,,,\n", f",{_KIND_EMPTY},0,0,0,0,0,0,0\n")
    try:
        arr = np.loadtxt(io.StringIO(filled), delimiter=",", dtype=_CSV_DTYPE, ndmin=1)
        if np.any((arr["kind"] < 0) | (arr["kind"] > _KIND_EMPTY)):
            raise ValueError("bad kind")
    except ValueError:
        for k, line in enumerate(body.split("\n")[:-1]):
            msg = _csv_row_error(k + 2, line.rstrip("\r").split(","))
            if msg:
                raise ValueError(msg) from None
        raise ValueError("malformed ray dump") from None
    full = arr["kind"] != _KIND_EMPTY
    norms = np.sqrt(np.sum(arr["vals"][:, 4:7] ** 2, axis=1))
    bad = np.nonzero(full & (np.abs(norms - 1.0) > 1e-9))[0]
    if len(bad):
        raise ValueError(f"line {bad[0] + 2}: non-unit AoA vector")
    return _assemble_samples(arr["sample_id"], arr["pose"], arr["kind"], arr["vals"])


def write_rays_bin(samples: Iterable[RaySample], path) -> None:
    rows = []
    for s in samples:
        pose = (*s.ut_pose.position, *s.ut_pose.rotation)
        if not s.paths:
            rows.append((s.sample_id, pose, _KIND_EMPTY, (0.0,) * 7))
        for p in s.paths:
            rows.append(
                (s.sample_id, pose, int(p.is_los), (p.power_db, p.phase, p.aod_az, p.aod_el, *p.aoa_dir))
            )
    arr = np.array(rows, dtype=_RAY_DTYPE)
    with open(path, "wb") as fh:
        fh.write(RAY_MAGIC)
        fh.write(np.uint64(len(arr)).astype("<u8").tobytes())
        fh.write(arr.tobytes())


def read_rays_bin(path) -> list[RaySample]:
    with open(path, "rb") as fh:
        if fh.read(len(RAY_MAGIC)) != RAY_MAGIC:
            raise ValueError("not a BRAY1 ray dump")
        n = int(np.frombuffer(fh.read(8), "<u8")[0])
        body = fh.read()
    if len(body) != n * _RAY_DTYPE.itemsize:
        raise ValueError(f"record {len(body) // _RAY_DTYPE.itemsize}: truncated ray dump")
    arr = np.frombuffer(body, dtype=_RAY_DTYPE)
    bad = np.nonzero(arr["kind"] > _KIND_EMPTY)[0]
    if len(bad):
        raise ValueError(f"record {bad[0]}: malformed record (kind {arr['kind'][bad[0]]})")
    paths_mask = arr["kind"] != _KIND_EMPTY
    norms = np.linalg.norm(arr["vals"][:, 4:7], axis=1)
    bad = np.nonzero(paths_mask & (np.abs(norms - 1.0) > 1e-9))[0]
    if len(bad):
        raise ValueError(f"record {bad[0]}: non-unit AoA vector")
    return _assemble_samples(arr["sample_id"], arr["pose"], arr["kind"], arr["vals"])


def ingest_rays(path) -> list[RaySample]:
    """Read a ray dump in either the CSV or the BRAY1 binary layout."""
    with open(path, "rb") as fh:
        magic = fh.read(len(RAY_MAGIC))
    if magic == RAY_MAGIC:
        return read_rays_bin(path)
    return read_rays_csv(path)
