"""Dataset generation, splits and the BRSS1 RSS dataset file."""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .antenna import ElementPattern, ap_panel, dft_codebook, ut_codebook
from .channel import RaySample, Scene, assemble_channel, drop_los, measure_rss, trace_rays, watt_to_dbm
from .geometry import DeviceDesign, Pose, orientation_mode, sample_orientation

RSS_MAGIC = b"BRSS1"
RSS_VERSION = 1

UT_MARGIN = 0.5  # metres kept free along the walls
UT_HEIGHT = (0.8, 1.5)


class Sample(NamedTuple):
    id: int
    pose: Pose
    mode: str
    los: bool
    rss_dbm: np.ndarray  # (N_AP, N_UT), noiseless
    labels: tuple[int, int, int]


def panel_of_sizes(panel_sizes) -> np.ndarray:
    return np.concatenate([np.full(n, p) for p, n in enumerate(panel_sizes)])


@dataclass
class Dataset:
    """Columnar store of samples; the noiseless RSS in dBm is canonical."""

    ids: np.ndarray
    positions: np.ndarray
    rotations: np.ndarray
    los: np.ndarray
    rss_dbm: np.ndarray
    design: str
    panel_sizes: list[int]
    seed: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_ap(self) -> int:
        return self.rss_dbm.shape[1]

    @property
    def n_ut(self) -> int:
        return self.rss_dbm.shape[2]

    @property
    def panel_of(self) -> np.ndarray:
        return panel_of_sizes(self.panel_sizes)

    @property
    def rss(self) -> np.ndarray:
        """Noiseless RSS in watts."""
        return 10.0 ** ((self.rss_dbm - 30.0) / 10.0)

    @property
    def modes(self) -> list[str]:
        return [orientation_mode(r) for r in self.rotations]

    @property
    def labels(self) -> np.ndarray:
        """(n, 3) array of oracle (i*, j*, p*) from the stored noiseless RSS."""
        flat = self.rss_dbm.reshape(len(self), -1)
        k = np.argmax(flat, axis=1)
        i, j = np.divmod(k, self.n_ut)
        return np.column_stack([i, j, self.panel_of[j]])

    def pose(self, k: int) -> Pose:
        return Pose(tuple(self.positions[k]), tuple(self.rotations[k]))

    def sample(self, k: int) -> Sample:
        lab = self.labels[k]
        return Sample(
            int(self.ids[k]),
            self.pose(k),
            orientation_mode(self.rotations[k]),
            bool(self.los[k]),
            self.rss_dbm[k],
            (int(lab[0]), int(lab[1]), int(lab[2])),
        )

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            self.ids[rows],
            self.positions[rows],
            self.rotations[rows],
            self.los[rows],
            self.rss_dbm[rows],
            self.design,
            list(self.panel_sizes),
            self.seed,
            dict(self.meta),
        )

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))


def pose_features(positions, rotations, room) -> np.ndarray:
    """Pose scaled to [-1, 1] with the room extents and canonical angle ranges."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    rotations = np.atleast_2d(np.asarray(rotations, dtype=float))
    loc = 2.0 * positions / np.asarray(room, dtype=float) - 1.0
    ang = np.column_stack(
        [rotations[:, 0] / math.pi, rotations[:, 1] / (math.pi / 2), rotations[:, 2] / math.pi - 1.0]
    )
    return np.hstack([loc, ang])


def sample_plan(k: int) -> tuple[str, bool]:
    """Mode and LOS flag of the k-th sample; balanced in every block of four."""
    mode = "portrait" if k % 2 == 0 else "landscape"
    los = k % 4 in (0, 3)
    return mode, los


def sample_rng(seed: int, sample_id: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, sample_id, stream])


def draw_pose(scene: Scene, mode: str, rng: np.random.Generator) -> Pose:
    lx, ly, _ = scene.room
    pos = (
        rng.uniform(UT_MARGIN, lx - UT_MARGIN),
        rng.uniform(UT_MARGIN, ly - UT_MARGIN),
        rng.uniform(*UT_HEIGHT),
    )
    return Pose(pos, sample_orientation(mode, rng))


def sample_paths(scene: Scene, pose: Pose, los: bool, rng=None):
    paths = trace_rays(scene, pose, rng)
    return paths if los else drop_los(paths)


def replay_sample(ds: "Dataset", k: int, scene: Scene):
    """Re-trace row ``k`` of a dataset from its seed; returns (pose, paths)."""
    sid = int(ds.ids[k])
    rng = sample_rng(ds.seed, sid)
    pose = draw_pose(scene, ds.modes[k], rng)
    if pose != ds.pose(k):
        raise ValueError(f"sample {sid} does not replay to its stored pose")
    return pose, sample_paths(scene, pose, bool(ds.los[k]), rng)


def replay_rays(ds: "Dataset", scene: Scene) -> list[RaySample]:
    return [RaySample(int(ds.ids[k]), *replay_sample(ds, k, scene)) for k in range(len(ds))]


def _simulate(args):
    scene, design, pattern, seed, id_offset, start, stop, p_ap_dbm = args
    U = dft_codebook(ap_panel(scene.ap_grid))
    V = ut_codebook(design)
    out = []
    for k in range(start, stop):
        sid = id_offset + k
        mode, los = sample_plan(k)
        rng = sample_rng(seed, sid)
        pose = draw_pose(scene, mode, rng)
        paths = sample_paths(scene, pose, los, rng)
        H = assemble_channel(paths, scene, pose, design, pattern)
        rss = measure_rss(H, U, V, p_ap_dbm=p_ap_dbm).values
        if not np.any(rss > 0):
            raise ValueError(f"degenerate sample {sid}: no propagation path")
        out.append((sid, pose.position, pose.rotation, los, watt_to_dbm(rss)))
    return out


def worker_count() -> int:
    cap = os.environ.get("BEAMSIM_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def generate(
    scene: Scene,
    design: DeviceDesign,
    n_samples: int,
    seed: int,
    pattern: ElementPattern | None = None,
    id_offset: int = 0,
    p_ap_dbm: float = 24.0,
    workers: int | None = None,
) -> Dataset:
    """Simulate ``n_samples`` poses with their full noiseless RSS tables.

    Sample k is portrait for even k and LOS for k % 4 in {0, 3}; its pose and
    rays depend only on (seed, id_offset + k), so results do not depend on
    the worker count.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pattern = pattern or ElementPattern()
    workers = workers or worker_count()
    chunk = max(1, math.ceil(n_samples / (4 * workers)))
    jobs = [
        (scene, design, pattern, seed, id_offset, s, min(s + chunk, n_samples), p_ap_dbm)
        for s in range(0, n_samples, chunk)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_simulate, jobs))
    else:
        parts = [_simulate(j) for j in jobs]
    rows = [r for part in parts for r in part]
    return Dataset(
        np.array([r[0] for r in rows], dtype=np.int64),
        np.array([r[1] for r in rows], dtype=float),
        np.array([r[2] for r in rows], dtype=float),
        np.array([r[3] for r in rows], dtype=bool),
        np.stack([r[4] for r in rows]),
        design.name,
        design.panel_sizes,
        seed,
        {"scene": scene.to_dict(), "p_ap_dbm": p_ap_dbm, "id_offset": id_offset},
    )


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Disjoint train/val/test split, stratified by (mode, LOS).

    Within each stratum samples are shuffled and spread evenly over [0, 1);
    all samples are then ordered by that position, so every prefix (and so
    every part) holds each stratum in proportion, to within one sample.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 or f > 1 for f in fractions):
        raise ValueError("fraction out of range")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = len(dataset)
    rng = np.random.default_rng(seed)
    key = np.empty(n)
    strata = [(m, bool(l)) for m, l in zip(dataset.modes, dataset.los)]
    for s in sorted(set(strata)):
        rows = np.array([k for k, t in enumerate(strata) if t == s])
        rows = rows[rng.permutation(len(rows))]
        key[rows] = (np.arange(len(rows)) + 0.5) / len(rows)
    order = np.argsort(key, kind="stable")
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    return tuple(dataset.subset(np.sort(p)) for p in parts)


# ---------------------------------------------------------------------------
# BRSS1 files


def _record_dtype(n_ap: int, n_ut: int) -> np.dtype:
    return np.dtype(
        [
            ("sample_id", "<i8"),
            ("position", "<f8", (3,)),
            ("rotation", "<f8", (3,)),
            ("los", "u1"),
            ("rss_dbm", "<f8", (n_ap * n_ut,)),
        ]
    )


def save_dataset(ds: Dataset, path) -> None:
    """Write the BRSS1 file: magic, JSON header, fixed-size little-endian records."""
    header = {
        "version": RSS_VERSION,
        "n_ap": ds.n_ap,
        "n_ut": ds.n_ut,
        "design": ds.design,
        "panel_sizes": list(ds.panel_sizes),
        "seed": ds.seed,
        "n_samples": len(ds),
        "meta": ds.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    rec = np.empty(len(ds), dtype=_record_dtype(ds.n_ap, ds.n_ut))
    rec["sample_id"] = ds.ids
    rec["position"] = ds.positions
    rec["rotation"] = ds.rotations
    rec["los"] = ds.los
    rec["rss_dbm"] = ds.rss_dbm.reshape(len(ds), -1)
    with open(path, "wb") as fh:
        fh.write(RSS_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(rec.tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(len(RSS_MAGIC)) != RSS_MAGIC:
            raise ValueError("not a BRSS1 dataset file")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size))
        body = fh.read()
    if header["version"] != RSS_VERSION:
        raise ValueError(f"unsupported dataset version {header['version']}")
    n_ap, n_ut, n = header["n_ap"], header["n_ut"], header["n_samples"]
    dt = _record_dtype(n_ap, n_ut)
    if len(body) != n * dt.itemsize:
        raise ValueError("truncated dataset file")
    rec = np.frombuffer(body, dtype=dt)
    return Dataset(
        rec["sample_id"].astype(np.int64),
        rec["position"].astype(float),
        rec["rotation"].astype(float),
        rec["los"].astype(bool),
        rec["rss_dbm"].astype(float).reshape(n, n_ap, n_ut),
        header["design"],
        list(header["panel_sizes"]),
        header["seed"],
        header["meta"],
    )
