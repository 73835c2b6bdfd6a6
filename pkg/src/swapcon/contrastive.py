"""Swap augmentation, the cosine-similarity NCE loss and the pretraining loop."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .embed import EmbeddedSample, FittedEmbedder
from .flowdata import FlowTable
from .neuralnet import Adam, Network, backward, forward


class ContrastiveError(ValueError):
    pass


@dataclass
class ContrastiveConfig:
    temperature: float = 1.0
    batch_size: int = 512
    epochs: int = 2
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ContrastiveError("temperature must be positive")
        if self.batch_size < 2:
            raise ContrastiveError("batch_size must be at least 2 so a negative exists")
        if self.epochs < 0:
            raise ContrastiveError("epochs must be non-negative")


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def draw_permutations(rng: np.random.Generator, n: int, n_features: int) -> np.ndarray:
    """One uniform permutation per row; an identity draw is redrawn once."""
    if n_features < 2:
        raise ContrastiveError("swap augmentation needs at least 2 feature blocks")
    perms = np.argsort(rng.random((n, n_features)), axis=1, kind="stable")
    ident = np.all(perms == np.arange(n_features), axis=1)
    if ident.any():
        perms[ident] = np.argsort(rng.random((int(ident.sum()), n_features)), axis=1, kind="stable")
    return perms


def apply_permutations(blocks: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """``out[b, f] = blocks[b, perms[b, f]]`` for a ``(B, F, d)`` tensor."""
    return np.take_along_axis(blocks, perms[:, :, None], axis=1)


def unpermute_grad(grad: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Route gradients of permuted blocks back to their source positions."""
    out = np.zeros_like(grad)
    np.put_along_axis(out, perms[:, :, None].repeat(grad.shape[2], axis=2), grad, axis=1)
    return out


def swap_augment(sample: EmbeddedSample, seed) -> EmbeddedSample:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    blocks = np.asarray(sample.blocks)
    perm = draw_permutations(rng, 1, blocks.shape[0])[0]
    return EmbeddedSample(blocks[perm].copy(), sample.label)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def nce_loss(H: np.ndarray, tau: float = 1.0):
    """Mean NCE loss over all 2N anchors and its gradient w.r.t. ``H``.

    Rows ``0..N-1`` are the originals and rows ``N..2N-1`` their augmented
    views; row ``i`` is paired with ``(i + N) mod 2N``.  The softmax runs
    over every other row (the positive included), excluding only the
    anchor itself.  Zero rows have similarity 0 to everything and get a
    zero gradient.
    """
    H = np.asarray(H, dtype=np.float64)
    M = H.shape[0]
    if M < 4 or M % 2:
        raise ContrastiveError("need an even number of at least 4 embeddings (2N, N >= 2)")
    N = M // 2
    norms = np.linalg.norm(H, axis=1)
    nz = norms > 0
    inv = np.where(nz, 1.0 / np.where(nz, norms, 1.0), 0.0)
    U = H * inv[:, None]
    S = U @ U.T / tau
    if not np.all(np.isfinite(S)):
        raise ContrastiveError("non-finite similarity")
    pos = (np.arange(M) + N) % M
    logits = S.copy()
    np.fill_diagonal(logits, -np.inf)
    lse = _logsumexp_rows(logits)
    per_anchor = lse - S[np.arange(M), pos]
    loss = float(per_anchor.mean())

    P = np.exp(logits - lse[:, None])  # softmax, diagonal exactly 0
    P[np.arange(M), pos] -= 1.0
    dS = P / M
    dU = (dS + dS.T) @ U / tau
    radial = np.sum(U * dU, axis=1, keepdims=True)
    dH = (dU - U * radial) * inv[:, None]
    return loss, dH


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------

def pretrain(net: Network, embedder: FittedEmbedder, data: FlowTable, cfg: ContrastiveConfig,
             opt: Adam | None = None, on_step=None):
    """Contrastive pretraining; returns ``(net, embedder, loss_curve)``.

    ``loss_curve`` is a list of ``(step, epoch, loss)``.  LE encoder
    weights train alongside the network and are frozen at the end.
    """
    if net.input_width != embedder.input_width:
        raise ContrastiveError(
            f"network input width {net.input_width} != embedder width {embedder.input_width}"
        )
    curve: list[tuple[int, int, float]] = []
    if cfg.epochs == 0 or len(data) < 2:
        return net, embedder, curve
    opt = opt or Adam(lr=cfg.lr)
    rng = np.random.default_rng([int(cfg.seed), 21])
    n = len(data)
    F, d = embedder.n_features, embedder.d
    net.train()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            B = idx.size
            if B < 2:
                continue
            numeric = data.numeric[idx]
            X = embedder.embed_arrays(numeric, data.categorical[idx])
            perms = draw_permutations(rng, B, F)
            Xa = apply_permutations(X, perms)
            inp = np.concatenate([X.reshape(B, F * d), Xa.reshape(B, F * d)])
            out, caches = forward(net, inp)
            loss, dout = nce_loss(out, cfg.temperature)
            grads, dinp = backward(net, caches, dout)
            params = net.params()
            if embedder.trainable:
                g_blocks = dinp[:B].reshape(B, F, d) + unpermute_grad(dinp[B:].reshape(B, F, d), perms)
                dw, db = embedder.le_grads(numeric, g_blocks)
                params["emb.le_w"] = embedder.le_w
                params["emb.le_b"] = embedder.le_b
                grads["emb.le_w"] = dw
                grads["emb.le_b"] = db
            opt.step(params, grads, net.frozen_names())
            curve.append((step, epoch, loss))
            if on_step is not None:
                on_step(step, epoch, loss)
            step += 1
    embedder.frozen = True
    return net, embedder, curve


def write_loss_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "loss"])
        for step, epoch, loss in curve:
            w.writerow([step, epoch, repr(float(loss))])
