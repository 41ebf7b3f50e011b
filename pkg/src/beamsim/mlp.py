"""Small numpy feed-forward networks: dense + embedding layers, softmax output.

Three architectures are built here:

* SN: pose (6) -> N_h dense relu layers of width n_h -> N_UT*N_AP logits.
* NET_I: location (3) -> N_h dense relu layers -> N_AP logits.
* NET_II: [dense 6 -> n_h/2 | embedding N_AP -> n_h/2] concatenated, relu,
  then N_h - 1 dense relu layers -> out_dim logits.

Models are trained with Adam on mean cross-entropy. Everything is float64 and
deterministic given the seeds.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

MODEL_MAGIC = b"BMLP1"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" or "embedding"
    in_dim: int  # input width, or vocabulary size for an embedding
    out_dim: int
    activation: str = "none"  # "relu" or "none"

    def __post_init__(self):
        if self.kind not in ("dense", "embedding"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be >= 1")
        if self.kind == "embedding" and self.activation != "none":
            raise ValueError("embedding layers have no activation")


@dataclass
class MlpModel:
    """Layer specs with their parameter tensors.

    With ``merge=True`` the first two layers are parallel branches: a dense
    layer on the continuous input and an embedding indexed by an integer
    input. Their outputs are concatenated and passed through relu.
    """

    specs: list[LayerSpec]
    params: list[dict[str, np.ndarray]]
    merge: bool = False
    name: str = ""
    trained: bool = False

    @property
    def input_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].out_dim

    def parameter_count(self) -> int:
        return sum(a.size for p in self.params for a in p.values())

    def arrays(self) -> list[np.ndarray]:
        return [p[k] for p in self.params for k in sorted(p)]

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)


def parameter_count(model: MlpModel) -> int:
    return model.parameter_count()


def _init_params(specs, rng: np.random.Generator):
    params = []
    for s in specs:
        if s.kind == "dense":
            lim = math.sqrt(6.0 / s.in_dim)
            params.append(
                {"W": rng.uniform(-lim, lim, (s.in_dim, s.out_dim)), "b": np.zeros(s.out_dim)}
            )
        else:
            params.append({"E": rng.uniform(-0.05, 0.05, (s.in_dim, s.out_dim))})
    return params


def _trunk(in_dim, n_hidden, width, out_dim):
    specs = []
    d = in_dim
    for _ in range(n_hidden):
        specs.append(LayerSpec("dense", d, width, "relu"))
        d = width
    specs.append(LayerSpec("dense", d, out_dim))
    return specs


def build_sn(n_ap: int, n_ut: int, n_hidden: int = 5, width: int = 128, seed: int = 0) -> MlpModel:
    specs = _trunk(6, n_hidden, width, n_ut * n_ap)
    return MlpModel(specs, _init_params(specs, np.random.default_rng(seed)), name="sn")


def build_net1(n_ap: int, n_hidden: int = 5, width: int = 128, seed: int = 0) -> MlpModel:
    specs = _trunk(3, n_hidden, width, n_ap)
    return MlpModel(specs, _init_params(specs, np.random.default_rng(seed)), name="net1")


def build_net2(n_ap: int, out_dim: int, n_hidden: int = 5, width: int = 128, seed: int = 0) -> MlpModel:
    if width % 2:
        raise ValueError("n_h must be even for the embedding branch")
    if n_hidden < 1:
        raise ValueError("net2 needs at least one hidden layer")
    half = width // 2
    specs = [LayerSpec("dense", 6, half), LayerSpec("embedding", n_ap, half)]
    specs += _trunk(width, n_hidden - 1, width, out_dim)
    return MlpModel(specs, _init_params(specs, np.random.default_rng(seed)), merge=True, name="net2")


def sn_param_formula(n_ap, n_ut, n_hidden, width):
    return 7 * width + (n_hidden - 1) * (width + 1) * width + (width + 1) * n_ut * n_ap


def net1_param_formula(n_ap, n_hidden, width):
    return 4 * width + (n_hidden - 1) * (width + 1) * width + (width + 1) * n_ap


def net2_param_formula(n_ap, out_dim, n_hidden, width):
    return (7 + n_ap) * width // 2 + (n_hidden - 1) * (width + 1) * width + (width + 1) * out_dim


# ---------------------------------------------------------------------------
# forward / backward


def _relu(z):
    return np.maximum(z, 0.0)


def _check_inputs(model, x, idx):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.input_dim:
        raise ValueError(f"dimension mismatch: model expects {model.input_dim} inputs, got {x.shape[1]}")
    if model.merge:
        if idx is None:
            raise ValueError("merge model needs an index input")
        idx = np.broadcast_to(np.asarray(idx, dtype=np.int64), (len(x),))
        if np.any(idx < 0) or np.any(idx >= model.specs[1].in_dim):
            raise ValueError("embedding index out of range")
    return x, idx


def logits(model: MlpModel, x, idx=None, cache: list | None = None) -> np.ndarray:
    """Pre-softmax outputs. If ``cache`` is a list, layer inputs are appended."""
    x, idx = _check_inputs(model, x, idx)
    layers = list(zip(model.specs, model.params))
    if model.merge:
        (_, pa), (_, pe) = layers[:2]
        z = np.concatenate([x @ pa["W"] + pa["b"], pe["E"][idx]], axis=1)
        h = _relu(z)
        if cache is not None:
            cache.append(("merge", x, idx, z))
        layers = layers[2:]
    else:
        h = x
    for spec, p in layers:
        z = h @ p["W"] + p["b"]
        if cache is not None:
            cache.append(("dense", h, z))
        h = _relu(z) if spec.activation == "relu" else z
    return h


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: MlpModel, x, idx=None) -> np.ndarray:
    """Softmax probabilities, one row per input."""
    return softmax(logits(model, x, idx))


def cross_entropy(model: MlpModel, x, y, idx=None) -> float:
    z = logits(model, x, idx)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    y = np.asarray(y, dtype=np.int64)
    return float(np.mean(lse - z[np.arange(len(y)), y]))


def loss_and_grads(model: MlpModel, x, y, idx=None):
    """Mean cross-entropy and its gradients (same structure as ``model.params``)."""
    cache: list = []
    z = logits(model, x, idx, cache)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    zs = z - z.max(axis=1, keepdims=True)
    ez = np.exp(zs)
    s = ez.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(s[:, 0]) - zs[np.arange(n), y]))
    dz = ez / s
    dz[np.arange(n), y] -= 1.0
    dz /= n

    grads: list[dict] = [None] * len(model.params)  # type: ignore[list-item]
    offset = 2 if model.merge else 0
    for k in range(len(cache) - (1 if model.merge else 0) - 1, -1, -1):
        li = k + offset
        _, h, zk = cache[k + (1 if model.merge else 0)]
        spec, p = model.specs[li], model.params[li]
        if spec.activation == "relu":
            dz = dz * (zk > 0)
        grads[li] = {"W": h.T @ dz, "b": dz.sum(axis=0)}
        dz = dz @ p["W"].T
    if model.merge:
        _, x0, idx0, zm = cache[0]
        dz = dz * (zm > 0)
        half = model.specs[0].out_dim
        da, de = dz[:, :half], dz[:, half:]
        grads[0] = {"W": x0.T @ da, "b": da.sum(axis=0)}
        gE = np.zeros_like(model.params[1]["E"])
        np.add.at(gE, idx0, de)
        grads[1] = {"E": gE}
    return loss, grads


def grad_check(model: MlpModel, x, y, idx=None, step: float = 1e-6, floor: float = 1e-8) -> float:
    """Max relative error between backprop and central differences.

    Relative error is ``|a - n| / max(|a| + |n|, floor)`` over every parameter.
    """
    _, grads = loss_and_grads(model, x, y, idx)
    worst = 0.0
    for p, g in zip(model.params, grads):
        for key, arr in p.items():
            ga = g[key]
            flat = arr.reshape(-1)
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + step
                lp = cross_entropy(model, x, y, idx)
                flat[k] = old - step
                lm = cross_entropy(model, x, y, idx)
                flat[k] = old
                num = (lp - lm) / (2.0 * step)
                ana = ga.reshape(-1)[k]
                rel = abs(ana - num) / max(abs(ana) + abs(num), floor)
                worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 200
    val_fraction: float = 0.1
    patience: int = 20
    seed: int = 0


@dataclass
class TrainResult:
    model: MlpModel
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def final_loss(self) -> float:
        return self.history[self.best_epoch][1] if self.history else float("nan")


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        corr1 = 1.0 - c.beta1**self.t
        corr2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            for k in p:
                m[k] *= c.beta1
                m[k] += (1.0 - c.beta1) * g[k]
                v[k] *= c.beta2
                v[k] += (1.0 - c.beta2) * g[k] ** 2
                p[k] -= c.lr * (m[k] / corr1) / (np.sqrt(v[k] / corr2) + c.eps)


def train(model: MlpModel, x, y, idx=None, cfg: TrainConfig | None = None) -> TrainResult:
    """Adam on mean cross-entropy with early stopping on a validation split.

    Returns a trained copy; ``history`` rows are (epoch, train_loss, val_loss)
    with epoch 0 holding the losses at initialisation. The model restored at
    the end is the one with the lowest validation loss (or the last one when
    there is no validation split).
    """
    cfg = cfg or TrainConfig()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n == 0:
        raise ValueError("empty dataset")
    if np.any(y < 0) or np.any(y >= model.output_dim):
        raise ValueError("label out of range")
    if idx is not None:
        idx = np.asarray(idx, dtype=np.int64)
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n >= 10 else 0
    val, tr = perm[:n_val], perm[n_val:]

    def sub(rows):
        return x[rows], y[rows], (None if idx is None else idx[rows])

    xt, yt, it = sub(tr)
    xv, yv, iv = sub(val)

    def val_loss():
        return cross_entropy(model, xv, yv, iv) if n_val else float("nan")

    opt = Adam(model.params, cfg)
    history = [(0, cross_entropy(model, xt, yt, it), val_loss())]
    best = (history[0][2], 0, copy.deepcopy(model.params))
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(tr))
        for start in range(0, len(order), cfg.batch_size):
            b = order[start : start + cfg.batch_size]
            _, grads = loss_and_grads(model, xt[b], yt[b], None if it is None else it[b])
            opt.step(model.params, grads)
        vl = val_loss()
        history.append((epoch, cross_entropy(model, xt, yt, it), vl))
        if n_val:
            if vl < best[0]:
                best = (vl, epoch, copy.deepcopy(model.params))
            elif epoch - best[1] >= cfg.patience:
                break
    if n_val:
        model.params = best[2]
        best_epoch = best[1]
    else:
        best_epoch = history[-1][0]
    model.trained = True
    return TrainResult(model, history, best_epoch)


def write_loss_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tl, vl in history:
            w.writerow([epoch, repr(float(tl)), repr(float(vl))])


# ---------------------------------------------------------------------------
# model files


def save_model(model: MlpModel, path) -> None:
    header = {
        "version": MODEL_VERSION,
        "name": model.name,
        "merge": model.merge,
        "trained": model.trained,
        "specs": [asdict(s) for s in model.specs],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in model.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        if fh.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
            raise ValueError("not a BMLP1 model file")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size))
        if header["version"] != MODEL_VERSION:
            raise ValueError(f"unsupported model version {header['version']}")
        specs = [LayerSpec(**s) for s in header["specs"]]
        params = []
        for s in specs:
            shapes = {"W": (s.in_dim, s.out_dim), "b": (s.out_dim,)} if s.kind == "dense" else {
                "E": (s.in_dim, s.out_dim)
            }
            p = {}
            for key in sorted(shapes):
                count = int(np.prod(shapes[key]))
                p[key] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shapes[key]).astype(float)
            params.append(p)
        if fh.read(1):
            raise ValueError("trailing bytes in model file")
    return MlpModel(specs, params, merge=header["merge"], name=header["name"], trained=header["trained"])
