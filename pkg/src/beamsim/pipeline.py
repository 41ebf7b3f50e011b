"""Run configuration and the dataset / train / eval / coverage commands."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .antenna import ElementPattern, spherical_coverage, write_coverage_csv
from .channel import Scene, write_rays_bin, write_rays_csv
from .dataset import Dataset, generate, load_dataset, pose_features, replay_rays, save_dataset
from .evaluation import Methods, summary_table, sweep, write_results_csv
from .geometry import Pose, get_design
from .mlp import (
    TrainConfig,
    build_net1,
    build_net2,
    build_sn,
    load_model,
    save_model,
    train,
    write_loss_csv,
)
from .selection import gifp_build

log = logging.getLogger("beamsim")

TEST_ID_OFFSET = 1_000_000_000
METHODS = ("sn", "mnps", "mnbs", "gifp", "hpbs")
TRAINABLE = ("sn", "mnps", "mnbs")


@dataclass
class RunConfig:
    """Everything a run depends on; written next to its outputs as config.toml."""

    seed: int = 0
    design: str = "edge-face"
    out: str = "run"
    scale: float = 1.0
    n_train: int = 56000
    n_test: int = 14000
    train_size: int = 0  # 0 -> whole training file
    rays: str = ""  # "", "csv" or "bin"
    room_x: float = 7.0
    room_y: float = 7.0
    room_z: float = 3.0
    ap_x: float = 0.1
    ap_y: float = 3.5
    ap_z: float = 2.0
    reflection_loss_db: float = 10.0
    carrier_hz: float = 60e9
    max_order: int = 2
    p_ap_dbm: float = 24.0
    sigma_n_dbm: float = -84.0
    n_hidden: int = 5
    width: int = 128
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1
    top_k: int = 0  # 0 -> every AP beam
    methods: tuple = METHODS
    n_b: tuple = (5, 10, 20, 40)
    n_rf: tuple = ()  # empty -> (1, number of panels)
    coverage_step: float = 2.0

    def validate(self) -> "RunConfig":
        def need(ok, msg):
            if not ok:
                raise ValueError(f"invalid config: {msg}")

        need(self.scale > 0, "scale must be positive")
        need(min(self.n_train, self.n_test) >= 1, "dataset sizes must be >= 1")
        need(self.train_size >= 0, "train_size must be >= 0")
        need(self.rays in ("", "csv", "bin"), "rays must be '', 'csv' or 'bin'")
        need(min(self.room_x, self.room_y, self.room_z) > 0, "room extents must be positive")
        need(self.max_order in (0, 1, 2), "max_order must be 0, 1 or 2")
        need(self.carrier_hz > 0, "carrier_hz must be positive")
        need(self.n_hidden >= 1, "n_hidden must be >= 1")
        need(self.width >= 2 and self.width % 2 == 0, "width must be even")
        need(self.width >= 1 and self.batch_size >= 1 and self.epochs >= 0, "bad training sizes")
        need(0 < self.lr < 1, "lr out of range")
        need(0 <= self.val_fraction < 1, "val_fraction out of range")
        need(self.patience >= 1, "patience must be >= 1")
        need(self.top_k >= 0, "top_k must be >= 0")
        need(len(self.methods) > 0 and all(m in METHODS for m in self.methods), f"methods must be from {METHODS}")
        need(len(self.n_b) > 0 and all(1 <= b <= 200 for b in self.n_b), "N_b must be in [1, 200]")
        need(all(r >= 1 for r in self.n_rf), "N_RF must be >= 1")
        need(self.coverage_step > 0, "coverage_step must be positive")
        design = get_design(self.design)
        need(all(r <= design.n_panels for r in self.n_rf), f"N_RF must be <= {design.n_panels}")
        self.scene()
        return self

    def rf_list(self) -> tuple[int, ...]:
        if self.n_rf:
            return tuple(self.n_rf)
        n_p = get_design(self.design).n_panels
        return (1, n_p) if n_p > 1 else (1,)

    def scene(self) -> Scene:
        return Scene(
            room=(self.room_x, self.room_y, self.room_z),
            ap_pose=Pose((self.ap_x, self.ap_y, self.ap_z), (0.0, 0.0, 0.0)),
            reflection_loss_db=self.reflection_loss_db,
            carrier_hz=self.carrier_hz,
            max_order=self.max_order,
        )

    def sizes(self) -> dict:
        def scaled(n):
            return max(1, int(round(n * self.scale)))

        return {"train": scaled(self.n_train), "test": scaled(self.n_test)}

    def train_config(self, stream: int) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            val_fraction=self.val_fraction,
            patience=self.patience,
            seed=self.seed * 100 + stream,
        )

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def to_toml(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, str):
                lines.append(f"{f.name} = {json.dumps(v)}")
            elif isinstance(v, tuple):
                lines.append(f"{f.name} = [{', '.join(json.dumps(x) for x in v)}]")
            elif isinstance(v, float):
                lines.append(f"{f.name} = {v!r}")
            else:
                lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in data.items():
            if k not in known:
                raise ValueError(f"invalid config: unknown key {k!r}")
            default = known[k].default
            if isinstance(default, tuple):
                kw[k] = tuple(v)
            elif isinstance(default, bool):
                kw[k] = bool(v)
            elif isinstance(default, int):
                if isinstance(v, float) and not v.is_integer():
                    raise ValueError(f"invalid config: {k} must be an integer")
                kw[k] = int(v)
            elif isinstance(default, float):
                kw[k] = float(v)
            else:
                kw[k] = str(v)
        return cls(**kw)


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _prepare_out(cfg: RunConfig) -> Path:
    out = cfg.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise RuntimeError(f"unwritable output dir {out}: {exc}") from exc
    (out / "config.toml").write_text(cfg.to_toml())
    return out


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_dataset(cfg: RunConfig) -> dict:
    out = _prepare_out(cfg)
    scene, design = cfg.scene(), get_design(cfg.design)
    sizes = cfg.sizes()
    manifest = {
        "scene": scene.to_dict(),
        "design": design.name,
        "n_panels": design.n_panels,
        "panel_sizes": design.panel_sizes,
        "n_ap": scene.n_ap,
        "n_ut": design.n_elements,
        "seed": cfg.seed,
        "sizes": sizes,
        "p_ap_dbm": cfg.p_ap_dbm,
        "files": {},
    }
    for name, n, offset in (("train", sizes["train"], 0), ("test", sizes["test"], TEST_ID_OFFSET)):
        log.info("generating %s set: %d samples", name, n)
        ds = generate(scene, design, n, cfg.seed, id_offset=offset, p_ap_dbm=cfg.p_ap_dbm)
        save_dataset(ds, out / f"{name}.brss")
        manifest["files"][name] = f"{name}.brss"
        if cfg.rays:
            samples = replay_rays(ds, scene)
            ext = "csv" if cfg.rays == "csv" else "bray"
            (write_rays_csv if cfg.rays == "csv" else write_rays_bin)(samples, out / f"rays_{name}.{ext}")
            manifest["files"][f"rays_{name}"] = f"rays_{name}.{ext}"
    _json_dump(manifest, out / "manifest.json")
    return manifest


def _load_split(cfg: RunConfig, name: str) -> Dataset:
    path = cfg.out_dir / f"{name}.brss"
    if not path.is_file():
        raise FileNotFoundError(f"missing dataset {path}; run the dataset command first")
    return load_dataset(path)


def training_set(cfg: RunConfig) -> Dataset:
    ds = _load_split(cfg, "train")
    return ds.head(cfg.train_size) if cfg.train_size else ds


def _say(msg: str) -> None:
    print(msg, flush=True)


def cmd_train(cfg: RunConfig, methods=None) -> dict:
    methods = [m for m in (methods or cfg.methods) if m in TRAINABLE]
    if not methods:
        raise ValueError("nothing to train: choose from sn, mnps, mnbs")
    out = _prepare_out(cfg)
    ds = training_set(cfg)
    scene = cfg.scene()
    x = pose_features(ds.positions, ds.rotations, scene.room)
    lab = ds.labels
    n_ap, n_ut, n_p = ds.n_ap, ds.n_ut, len(ds.panel_sizes)
    arch = dict(n_hidden=cfg.n_hidden, width=cfg.width)
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    counts = {}

    def fit(name, model, xs, y, idx=None, stream=0):
        res = train(model, xs, y, idx, cfg.train_config(stream))
        save_model(res.model, models_dir / f"{name}.bmlp")
        write_loss_csv(res.history, out / f"loss_{name}.csv")
        log.info("%s: best epoch %d, train loss %.4f", name, res.best_epoch, res.final_loss)
        return res.model

    net1 = None
    if "mnps" in methods or "mnbs" in methods:
        net1 = fit("net1", build_net1(n_ap, seed=cfg.seed * 100 + 11, **arch), x[:, :3], lab[:, 0], stream=1)
    if "sn" in methods:
        sn = fit("sn", build_sn(n_ap, n_ut, seed=cfg.seed * 100 + 10, **arch), x, lab[:, 0] * n_ut + lab[:, 1], stream=0)
        counts["sn"] = sn.parameter_count()
        _say(f"parameters: {counts['sn']}")
    if "mnps" in methods:
        net2 = fit("net2_ps", build_net2(n_ap, n_p, seed=cfg.seed * 100 + 12, **arch), x, lab[:, 2], lab[:, 0], stream=2)
        c1, c2 = net1.parameter_count(), net2.parameter_count()
        counts["mnps"] = c1 + c2
        _say(f"parameters: {c1 + c2} (net1 {c1} + net2 {c2})")
    if "mnbs" in methods:
        net2 = fit("net2_bs", build_net2(n_ap, n_ut, seed=cfg.seed * 100 + 13, **arch), x, lab[:, 1], lab[:, 0], stream=3)
        counts["mnbs"] = net1.parameter_count() + net2.parameter_count()
        _say(f"parameters: {counts['mnbs']}")
    _json_dump({"methods": methods, "n_train": len(ds), "parameters": counts}, out / "train_manifest.json")
    return counts


def _load_models(cfg: RunConfig, methods, train_ds: Dataset) -> Methods:
    d = cfg.out_dir / "models"

    def get(name):
        p = d / f"{name}.bmlp"
        if not p.is_file():
            raise FileNotFoundError(f"missing model {p}; run the train command first")
        return load_model(p)

    m = Methods(top_k=cfg.top_k or None)
    if "sn" in methods:
        m.sn = get("sn")
    if "mnps" in methods or "mnbs" in methods:
        m.net1 = get("net1")
    if "mnps" in methods:
        m.net2_ps = get("net2_ps")
    if "mnbs" in methods:
        m.net2_bs = get("net2_bs")
    if "gifp" in methods:
        lab = train_ds.labels
        m.gifp = gifp_build(
            train_ds.positions, train_ds.rotations, lab[:, :2], train_ds.n_ap, train_ds.n_ut, cfg.scene().room
        )
    return m


def cmd_eval(cfg: RunConfig, methods=None):
    methods = list(methods or cfg.methods)
    out = _prepare_out(cfg)
    test = _load_split(cfg, "test")
    train_ds = training_set(cfg)
    models = _load_models(cfg, methods, train_ds)
    res = sweep(
        methods,
        models,
        test,
        cfg.n_b,
        cfg.rf_list(),
        cfg.scene(),
        get_design(cfg.design),
        seed=cfg.seed,
        p_ap_dbm=cfg.p_ap_dbm,
        sigma_n_dbm=cfg.sigma_n_dbm,
        n_train=len(train_ds),
    )
    write_results_csv(res, out / "results.csv")
    _say(summary_table(res.results))
    for v in res.violations:
        log.error("invariant violation: %s", v)
    return res


def cmd_coverage(cfg: RunConfig) -> Path:
    out = _prepare_out(cfg)
    design = get_design(cfg.design)
    cov = spherical_coverage(design, ElementPattern(), cfg.coverage_step)
    path = out / f"coverage_{design.name}.csv"
    write_coverage_csv(cov, path)
    _say(f"coverage: {design.name} 5th percentile {cov.percentile(5.0):.2f} dB")
    return path
