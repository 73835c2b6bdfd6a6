"""Feed-forward blocks (linear -> batch norm -> activation) with
hand-written backpropagation, Adam, per-block freezing and checkpoints.

Everything runs in float64.  A frozen block keeps its parameters and
its batch-norm running statistics fixed and normalises with the running
statistics even in train mode; gradients still flow through it to the
layers (and LE encoders) below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from .embed import FittedEmbedder

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ACTIVATIONS = ("tanh", "relu", "none")
PARAM_NAMES = ("W", "b", "gamma", "beta")


class NetworkError(ValueError):
    pass


@dataclass
class LayerBlock:
    W: np.ndarray  # (out, in)
    b: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    activation: str = "relu"
    use_bn: bool = True
    frozen: bool = False

    @property
    def in_width(self) -> int:
        return self.W.shape[1]

    @property
    def out_width(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "gamma": self.gamma, "beta": self.beta}


def init_block(n_in: int, n_out: int, activation: str, rng: np.random.Generator,
               use_bn: bool = True, zero: bool = False) -> LayerBlock:
    """Uniform fan-in init; ``zero`` gives an all-zero linear layer."""
    if activation not in ACTIVATIONS:
        raise NetworkError(f"unknown activation {activation!r}")
    r = 1.0 / np.sqrt(n_in)
    if zero:
        W = np.zeros((n_out, n_in))
        b = np.zeros(n_out)
    else:
        W = rng.uniform(-r, r, size=(n_out, n_in))
        b = rng.uniform(-r, r, size=n_out)
    return LayerBlock(W, b, np.ones(n_out), np.zeros(n_out), np.zeros(n_out), np.ones(n_out),
                      activation, use_bn)


@dataclass
class Network:
    blocks: list[LayerBlock]
    input_width: int
    mode: str = "train"
    trunk_size: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        prev = self.input_width
        for i, blk in enumerate(self.blocks):
            if blk.in_width != prev:
                raise NetworkError(f"block {i} expects width {blk.in_width}, previous gives {prev}")
            prev = blk.out_width

    @property
    def output_width(self) -> int:
        return self.blocks[-1].out_width if self.blocks else self.input_width

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, blk in enumerate(self.blocks):
            for k, v in blk.params().items():
                out[f"{i}.{k}"] = v
        return out

    def frozen_names(self) -> set[str]:
        return {f"{i}.{k}" for i, blk in enumerate(self.blocks) if blk.frozen for k in PARAM_NAMES}

    def copy(self) -> "Network":
        blocks = [LayerBlock(*(np.array(getattr(b, a)) for a in
                               ("W", "b", "gamma", "beta", "running_mean", "running_var")),
                             b.activation, b.use_bn, b.frozen) for b in self.blocks]
        return Network(blocks, self.input_width, self.mode, self.trunk_size, dict(self.meta))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, blk in enumerate(self.blocks):
            for a in ("W", "b", "gamma", "beta", "running_mean", "running_var"):
                out[f"net.{i}.{a}"] = getattr(blk, a)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for i, blk in enumerate(self.blocks):
            for a in ("W", "b", "gamma", "beta", "running_mean", "running_var"):
                getattr(blk, a)[...] = arrays[f"net.{i}.{a}"]


def build_trunk(input_width: int, n_blocks: int, width: int = 256, seed: int = 0) -> Network:
    """Pretrainable stack: tanh in the first block, relu afterwards."""
    rng = np.random.default_rng([int(seed), 11])
    blocks = []
    prev = input_width
    for i in range(n_blocks):
        blocks.append(init_block(prev, width, "tanh" if i == 0 else "relu", rng))
        prev = width
    return Network(blocks, input_width, trunk_size=n_blocks, meta={"trunk_seed": int(seed)})


def build_network(input_width: int, widths: list[int], activations: list[str],
                  use_bn: list[bool] | None = None, seed: int = 0) -> Network:
    rng = np.random.default_rng([int(seed), 13])
    use_bn = use_bn if use_bn is not None else [True] * len(widths)
    blocks, prev = [], input_width
    for w, act, bn in zip(widths, activations, use_bn):
        blocks.append(init_block(prev, w, act, rng, use_bn=bn))
        prev = w
    return Network(blocks, input_width, meta={"seed": int(seed)})


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def forward(net: Network, X: np.ndarray, update_stats: bool = True):
    """Return ``(output, caches)``.  Train mode normalises with batch statistics."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_width:
        raise NetworkError(f"batch has shape {X.shape}, network expects width {net.input_width}")
    train = net.mode == "train"
    if train and X.shape[0] < 2:
        raise NetworkError("train-mode forward needs a batch of at least 2 rows")
    caches = []
    h = X
    for blk in net.blocks:
        z = h @ blk.W.T + blk.b
        bn = None
        if blk.use_bn:
            if train and not blk.frozen:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (z - mu) * inv_std
                if update_stats:
                    B = z.shape[0]
                    blk.running_mean *= 1.0 - BN_MOMENTUM
                    blk.running_mean += BN_MOMENTUM * mu
                    blk.running_var *= 1.0 - BN_MOMENTUM
                    blk.running_var += BN_MOMENTUM * var * B / (B - 1)
                bn = ("batch", xhat, inv_std)
            else:
                inv_std = 1.0 / np.sqrt(blk.running_var + BN_EPS)
                xhat = (z - blk.running_mean) * inv_std
                bn = ("running", xhat, inv_std)
            y = blk.gamma * xhat + blk.beta
        else:
            y = z
        if blk.activation == "tanh":
            a = np.tanh(y)
        elif blk.activation == "relu":
            a = np.maximum(y, 0.0)
        else:
            a = y
        caches.append((h, bn, y, a))
        h = a
    return h, caches


def backward(net: Network, caches, dout: np.ndarray):
    """Return ``(param_grads, input_grad)`` for upstream gradient ``dout``."""
    if caches is None or len(caches) != len(net.blocks):
        raise NetworkError("missing or stale forward cache")
    grads = {}
    g = np.asarray(dout, dtype=np.float64)
    for i in range(len(net.blocks) - 1, -1, -1):
        blk = net.blocks[i]
        h, bn, y, a = caches[i]
        if g.shape != a.shape:
            raise NetworkError("upstream gradient does not match cached activations")
        if blk.activation == "tanh":
            dy = g * (1.0 - a * a)
        elif blk.activation == "relu":
            dy = g * (y > 0)
        else:
            dy = g
        if blk.use_bn:
            kind, xhat, inv_std = bn
            dgamma = np.sum(dy * xhat, axis=0)
            dbeta = np.sum(dy, axis=0)
            dxhat = dy * blk.gamma
            if kind == "batch":
                B = dy.shape[0]
                dz = (inv_std / B) * (B * dxhat - dxhat.sum(axis=0)
                                      - xhat * np.sum(dxhat * xhat, axis=0))
            else:
                dz = dxhat * inv_std
        else:
            dgamma = np.zeros_like(blk.gamma)
            dbeta = np.zeros_like(blk.beta)
            dz = dy
        if blk.frozen:
            grads[f"{i}.W"] = np.zeros_like(blk.W)
            grads[f"{i}.b"] = np.zeros_like(blk.b)
            grads[f"{i}.gamma"] = np.zeros_like(blk.gamma)
            grads[f"{i}.beta"] = np.zeros_like(blk.beta)
        else:
            grads[f"{i}.W"] = dz.T @ h
            grads[f"{i}.b"] = dz.sum(axis=0)
            grads[f"{i}.gamma"] = dgamma
            grads[f"{i}.beta"] = dbeta
        g = dz @ blk.W
    return grads, g


def predict(net: Network, X: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Eval-mode forward in chunks; leaves ``net.mode`` as it was."""
    mode = net.mode
    net.eval()
    try:
        outs = [forward(net, X[i:i + batch_size])[0] for i in range(0, X.shape[0], batch_size)]
    finally:
        net.mode = mode
    return np.concatenate(outs) if outs else np.zeros((0, net.output_width))


# ---------------------------------------------------------------------------
# optimisation / freezing
# ---------------------------------------------------------------------------

@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             frozen=frozenset()) -> None:
        """Bias-corrected Adam update, in place; frozen names are untouched."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            if name in frozen:
                continue
            g = grads[name]
            if g.shape != p.shape:
                raise NetworkError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        header = {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                  "t": self.t, "names": sorted(self.m)}
        arrays = {}
        for name in sorted(self.m):
            arrays[f"opt.m.{name}"] = self.m[name]
            arrays[f"opt.v.{name}"] = self.v[name]
        return header, arrays

    @classmethod
    def from_state(cls, header, arrays) -> "Adam":
        opt = cls(header["lr"], header["beta1"], header["beta2"], header["eps"], header["t"])
        for name in header["names"]:
            opt.m[name] = arrays[f"opt.m.{name}"]
            opt.v[name] = arrays[f"opt.v.{name}"]
        return opt


def adam_step(opt: Adam, params, grads, frozen=frozenset()):
    opt.step(params, grads, frozen)
    return params


def freeze_prefix(net: Network, k: int) -> Network:
    """Freeze the first ``k`` blocks and unfreeze the rest."""
    if not 0 <= k <= len(net.blocks):
        raise NetworkError(f"cannot freeze {k} of {len(net.blocks)} blocks")
    for i, blk in enumerate(net.blocks):
        blk.frozen = i < k
    return net


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _topology(net: Network) -> list[dict]:
    return [{"in": b.in_width, "out": b.out_width, "activation": b.activation,
             "bn": b.use_bn, "frozen": b.frozen} for b in net.blocks]


def checkpoint_bytes(net: Network, embedder: FittedEmbedder | None, opt: Adam | None = None,
                     seeds: dict | None = None) -> bytes:
    header = {
        "topology": _topology(net),
        "input_width": net.input_width,
        "trunk_size": net.trunk_size,
        "meta": net.meta,
        "seeds": seeds or {},
        "schema_hash": embedder.schema.schema_hash() if embedder is not None else None,
    }
    arrays = net.state_arrays()
    if embedder is not None:
        eh, ea = embedder.state()
        header["embedder"] = eh
        arrays.update(ea)
    else:
        header["embedder"] = None
    if opt is not None:
        oh, oa = opt.state()
        header["optimizer"] = oh
        arrays.update(oa)
    else:
        header["optimizer"] = None
    return container.dumps("network", header, arrays)


def save_checkpoint(path, net: Network, embedder: FittedEmbedder | None,
                    opt: Adam | None = None, seeds: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(net, embedder, opt, seeds))


def load_checkpoint(path):
    """Return ``(net, embedder, opt, header)``; nothing is built on failure."""
    _, header, arrays = container.load(path, expect_tag="network")
    blocks = []
    for t in header["topology"]:
        blk = LayerBlock(np.zeros((t["out"], t["in"])), np.zeros(t["out"]), np.zeros(t["out"]),
                         np.zeros(t["out"]), np.zeros(t["out"]), np.zeros(t["out"]),
                         t["activation"], t["bn"], t["frozen"])
        blocks.append(blk)
    net = Network(blocks, header["input_width"], mode="eval", trunk_size=header["trunk_size"],
                  meta=header["meta"])
    net.load_state_arrays(arrays)
    emb = FittedEmbedder.from_state(header["embedder"], arrays) if header["embedder"] else None
    opt = Adam.from_state(header["optimizer"], arrays) if header["optimizer"] else None
    return net, emb, opt, header
