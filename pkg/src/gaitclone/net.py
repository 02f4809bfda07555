"""Feed-forward policy network with analytic backpropagation and Adam.

Three ReLU hidden layers, identity output. Inputs are standardized with
statistics stored inside the model; targets are standardized the same way
during training, so the reported MSE is in normalized action units while
``forward`` always returns raw setpoints. Parameters live in one flat
float64 vector (per layer: weight matrix row-major, then bias), which keeps
Adam, serialization and the single-sample inference kernel trivial.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "TrainConfig",
    "Mlp",
    "AdamState",
    "forward",
    "loss",
    "loss_and_grads",
    "adam_step",
    "save_mlp",
    "load_mlp",
    "train_mlp",
]

MAGIC = b"MLPB"
VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 12
    seed: int = 0
    holdout_fraction: float = 0.1
    sample_stride: int = 5

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError("lr must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must be in [0, 1)")
        if not (0.0 < self.holdout_fraction < 0.5):
            raise ValueError("holdout_fraction must be in (0, 0.5)")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")


def _param_count(dims) -> int:
    return int(sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1)))


def _layer_views(params, dims):
    out = []
    off = 0
    for nin, nout in zip(dims[:-1], dims[1:]):
        w = params[off:off + nin * nout].reshape(nout, nin)
        off += nin * nout
        b = params[off:off + nout]
        off += nout
        out.append((w, b))
    return out


class Mlp:
    """Policy network plus its input/output standardizers and a tag naming
    the goal conditioning it was trained for ("cc", "tcc", "vc")."""

    def __init__(self, dims, params, in_mean, in_std, out_mean, out_std, tag=""):
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) < 2:
            raise ValueError("need at least input and output dims")
        if params.shape != (_param_count(self.dims),):
            raise ValueError("parameter vector does not match dims")
        if np.any(in_std <= 0.0) or np.any(out_std <= 0.0):
            raise ValueError("normalizer std must be > 0 per feature")
        self.params = np.asarray(params, dtype=np.float64)
        self.in_mean = np.asarray(in_mean, dtype=np.float64)
        self.in_std = np.asarray(in_std, dtype=np.float64)
        self.out_mean = np.asarray(out_mean, dtype=np.float64)
        self.out_std = np.asarray(out_std, dtype=np.float64)
        self.tag = tag

    @classmethod
    def create(cls, dims, seed: int = 0, tag: str = "") -> "Mlp":
        """He-style scaled-uniform fan-in init, deterministic under seed."""
        rng = np.random.default_rng(seed)
        chunks = []
        for nin, nout in zip(dims[:-1], dims[1:]):
            lim = math.sqrt(6.0 / nin)
            chunks.append(rng.uniform(-lim, lim, nin * nout))
            chunks.append(np.zeros(nout))
        params = np.concatenate(chunks)
        d0, dl = dims[0], dims[-1]
        return cls(dims, params, np.zeros(d0), np.ones(d0),
                   np.zeros(dl), np.ones(dl), tag=tag)

    def layer_views(self):
        """(W, b) views into the flat parameter vector, per layer."""
        return _layer_views(self.params, self.dims)

    def set_normalizers(self, in_mean, in_std, out_mean, out_std):
        if np.any(np.asarray(in_std) <= 0.0) or np.any(np.asarray(out_std) <= 0.0):
            raise ValueError("normalizer std must be > 0 per feature")
        self.in_mean = np.asarray(in_mean, dtype=np.float64).copy()
        self.in_std = np.asarray(in_std, dtype=np.float64).copy()
        self.out_mean = np.asarray(out_mean, dtype=np.float64).copy()
        self.out_std = np.asarray(out_std, dtype=np.float64).copy()

    def dims_array(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=np.int64)


def _core_forward(net: Mlp, x: np.ndarray):
    """Normalized-space forward pass keeping every activation for backprop."""
    xn = (x - net.in_mean) / net.in_std
    acts = [xn]
    pre = []
    layers = net.layer_views()
    h = xn
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        pre.append(z)
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return h, acts, pre


def forward(net: Mlp, x) -> np.ndarray:
    """Raw-unit network output for one sample or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.dims[0]:
        raise ValueError(f"input dim {x.shape[1]} != network input {net.dims[0]}")
    z, _, _ = _core_forward(net, x)
    y = z * net.out_std + net.out_mean
    return y[0] if single else y


def loss(net: Mlp, x, y) -> float:
    """Mean squared error in normalized action units."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z, _, _ = _core_forward(net, x)
    t = (y - net.out_mean) / net.out_std
    r = z - t
    return float(np.mean(r * r))


def loss_and_grads(net: Mlp, x, y) -> tuple[float, np.ndarray]:
    """Analytic gradients of the normalized MSE wrt every parameter."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    z, acts, pre = _core_forward(net, x)
    t = (y - net.out_mean) / net.out_std
    r = z - t
    n_total = r.size
    lval = float(np.mean(r * r))

    layers = net.layer_views()
    grads = np.zeros_like(net.params)
    gviews = _layer_views(grads, net.dims)
    delta = 2.0 * r / n_total
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = gviews[i]
        gw += delta.T @ acts[i]
        gb += delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w) * (pre[i - 1] > 0.0)
    return lval, grads


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_net(cls, net: Mlp) -> "AdamState":
        return cls(np.zeros_like(net.params), np.zeros_like(net.params))


def adam_step(net: Mlp, grads: np.ndarray, state: AdamState, cfg: TrainConfig):
    """Standard Adam update with bias correction, in place."""
    if grads.shape != net.params.shape:
        raise ValueError("gradient vector does not match parameters")
    state.step += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    mhat = state.m / (1.0 - cfg.beta1 ** state.step)
    vhat = state.v / (1.0 - cfg.beta2 ** state.step)
    net.params -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


@njit(cache=True)
def mlp_forward_kernel(params, dims, in_mean, in_std, out_mean, out_std, x, out):
    """Single-sample raw-unit forward pass for the 1 kHz rollout loop."""
    n0 = dims[0]
    buf = np.empty(n0)
    for i in range(n0):
        buf[i] = (x[i] - in_mean[i]) / in_std[i]
    off = 0
    nlay = dims.shape[0] - 1
    for li in range(nlay):
        nin = dims[li]
        nout = dims[li + 1]
        w = params[off:off + nout * nin].reshape(nout, nin)
        off += nout * nin
        y = np.dot(w, buf) + params[off:off + nout]
        off += nout
        if li < nlay - 1:
            for j in range(nout):
                if y[j] < 0.0:
                    y[j] = 0.0
        buf = y
    for j in range(dims[nlay]):
        out[j] = buf[j] * out_std[j] + out_mean[j]


def save_mlp(net: Mlp, path):
    """magic + version + tag + dims + normalizers + parameters, all little
    endian, floats as 8-byte doubles. Round-trips bit-exactly."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        tag = net.tag.encode("ascii")
        f.write(struct.pack("<I", len(tag)))
        f.write(tag)
        f.write(struct.pack("<I", len(net.dims)))
        f.write(struct.pack(f"<{len(net.dims)}I", *net.dims))
        for arr in (net.in_mean, net.in_std, net.out_mean, net.out_std, net.params):
            f.write(arr.astype("<f8").tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated model file while reading {what}")
    return buf


def load_mlp(path) -> Mlp:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise ValueError("not a model file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise ValueError(f"unsupported model file version {version}")
        (tlen,) = struct.unpack("<I", _read_exact(f, 4, "tag length"))
        tag = _read_exact(f, tlen, "tag").decode("ascii")
        (nd,) = struct.unpack("<I", _read_exact(f, 4, "dim count"))
        dims = struct.unpack(f"<{nd}I", _read_exact(f, 4 * nd, "dims"))
        d0, dl = dims[0], dims[-1]
        in_mean = np.frombuffer(_read_exact(f, 8 * d0, "in_mean"), dtype="<f8")
        in_std = np.frombuffer(_read_exact(f, 8 * d0, "in_std"), dtype="<f8")
        out_mean = np.frombuffer(_read_exact(f, 8 * dl, "out_mean"), dtype="<f8")
        out_std = np.frombuffer(_read_exact(f, 8 * dl, "out_std"), dtype="<f8")
        n = _param_count(dims)
        params = np.frombuffer(_read_exact(f, 8 * n, "parameters"), dtype="<f8")
        if f.read(1):
            raise ValueError("trailing bytes after model parameters")
    return Mlp(dims, params.copy(), in_mean.copy(), in_std.copy(),
               out_mean.copy(), out_std.copy(), tag=tag)


def train_mlp(net: Mlp, x, y, cfg: TrainConfig, x_val=None, y_val=None,
              log_path=None) -> list[tuple[int, float, float]]:
    """Minibatch Adam on (x, y); returns (epoch, train_mse, holdout_mse)
    rows and optionally writes them as CSV. Deterministic under cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_net(net)
    n = x.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        tot, cnt = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            lval, grads = loss_and_grads(net, x[idx], y[idx])
            adam_step(net, grads, state, cfg)
            tot += lval * idx.size
            cnt += idx.size
        val = loss(net, x_val, y_val) if x_val is not None and x_val.shape[0] else float("nan")
        history.append((epoch, tot / cnt, val))
    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_mse", "holdout_mse"])
            for row in history:
                w.writerow([row[0], repr(row[1]), repr(row[2])])
    return history
