"""Memory-based continuous-time graph encoder with a link decoder.

Each node carries one memory vector (its latest embedding) plus the time of
its last update. A batch of events is encoded as a whole: layer 1 mixes the
two endpoint memories, the event features and a time encoding; layer 2
refines; a final projection yields per-event source and destination
embeddings whose halves overwrite the endpoint memories. The augmentation
hook fires on the intermediate batch after layer 1 or layer 2.

Within a batch, all memory reads see the state at batch start; writes are
applied in event order, so when a node appears several times the latest
event's update is the one that persists.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import (ConfigError, DataError, DimensionError, DomainError,
                     TrainingError)
from .numcore import Rng, Tensor
from .tgraph import batches as split_batches
from .tgraph import sample_negatives
from .ummu import MODE_EVAL, MODE_TRAIN, AugmentDraw, UmmuConfig, ummu_apply


@dataclass(frozen=True)
class TrainConfig:
    """Host model and optimization settings."""

    embed_dim: int = 100
    batch_size: int = 200
    epochs: int = 10
    learning_rate: float = 1e-3
    dropout_rate: float = 0.1
    seed: int = 0
    time_dim: int = 8

    def __post_init__(self):
        if self.embed_dim < 1 or self.batch_size < 1 or self.time_dim < 1:
            raise ConfigError("embed_dim, batch_size and time_dim must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0,1), got {self.dropout_rate}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


PARAM_NAMES = ("w1", "b1", "w2", "b2", "w_mem", "b_mem",
               "w_dec1", "b_dec1", "w_dec2", "b_dec2")


class ModelParams:
    """Named weight tensors, all tracked for gradients.

    Shapes for embed dim D, feature dim F, time dim T (decoder hidden = D):
    w1 (2D+F+T, D), w2 (D, D), w_mem (D, 2D), w_dec1 (2D, D), w_dec2 (D, 1),
    plus one bias row per weight.
    """

    def __init__(self, tensors, dims):
        self.tensors = tensors
        self.dims = dims  # (embed_dim, feature_dim, time_dim)

    @classmethod
    def init(cls, rng, embed_dim, feature_dim, time_dim):
        d, f, t = embed_dim, feature_dim, time_dim
        in1 = 2 * d + f + t

        def weight(rows, cols):
            scale = 1.0 / math.sqrt(rows)
            return Tensor(rng.standard_normal((rows, cols)) * scale, requires_grad=True)

        def bias(cols):
            return Tensor(np.zeros((1, cols)), requires_grad=True)

        tensors = {
            "w1": weight(in1, d), "b1": bias(d),
            "w2": weight(d, d), "b2": bias(d),
            "w_mem": weight(d, 2 * d), "b_mem": bias(2 * d),
            "w_dec1": weight(2 * d, d), "b_dec1": bias(d),
            "w_dec2": weight(d, 1), "b_dec2": bias(1),
        }
        return cls(tensors, (d, f, t))

    @classmethod
    def zeros(cls, embed_dim, feature_dim, time_dim):
        params = cls.init(Rng(0).stream("unused"), embed_dim, feature_dim, time_dim)
        for tens in params.tensors.values():
            tens.data[:] = 0.0
        return params

    def __getitem__(self, name):
        return self.tensors[name]

    def ordered(self):
        return [self.tensors[n] for n in PARAM_NAMES]

    def n_parameters(self):
        return sum(t.data.size for t in self.tensors.values())

    def copy(self):
        tensors = {n: Tensor(t.data.copy(), requires_grad=True)
                   for n, t in self.tensors.items()}
        return ModelParams(tensors, self.dims)


@dataclass
class MemoryState:
    """Per-node memory vectors and last-update times, zero for unseen nodes."""

    src_memory: np.ndarray
    dst_memory: np.ndarray
    last_update_src: np.ndarray
    last_update_dst: np.ndarray

    @classmethod
    def zeros(cls, n_src, n_dst, embed_dim):
        return cls(np.zeros((n_src, embed_dim)), np.zeros((n_dst, embed_dim)),
                   np.zeros(n_src), np.zeros(n_dst))

    def copy(self):
        return MemoryState(self.src_memory.copy(), self.dst_memory.copy(),
                           self.last_update_src.copy(), self.last_update_dst.copy())

    def load(self, other):
        np.copyto(self.src_memory, other.src_memory)
        np.copyto(self.dst_memory, other.dst_memory)
        np.copyto(self.last_update_src, other.last_update_src)
        np.copyto(self.last_update_dst, other.last_update_dst)


@dataclass
class EncodeContext:
    """Mode, augmentation and regularization context for one encode pass."""

    mode: str = MODE_EVAL
    ummu_cfg: UmmuConfig = field(default_factory=lambda: UmmuConfig(enabled=False))
    ummu_rng: Rng | None = None
    variant: str | None = None
    dropout_rate: float = 0.0
    dropout_rng: Rng | None = None
    ummu_draw: AugmentDraw | None = None    # frozen-draw injection for checks
    dropout_mask: np.ndarray | None = None  # frozen dropout for checks


def time_frequencies(time_dim):
    """Log-spaced cosine frequencies from 1 down to 1e-4."""
    if time_dim == 1:
        return np.ones(1)
    k = np.arange(time_dim, dtype=np.float64)
    return 10.0 ** (-k * 4.0 / (time_dim - 1))


def time_encode(delta_t, time_dim):
    """cos(w_k * delta_t) for the fixed frequency ladder; entries in [-1, 1]."""
    if delta_t < 0:
        raise DomainError(f"time_encode: negative time delta {delta_t}")
    return np.cos(time_frequencies(time_dim) * float(delta_t))


def _time_encode_rows(deltas, time_dim):
    return np.cos(np.outer(deltas, time_frequencies(time_dim)))


def _last_occurrence(ids):
    # positions of the final event touching each unique id, in id order
    uniq, rev_index = np.unique(ids[::-1], return_index=True)
    return uniq, len(ids) - 1 - rev_index


def _hook(z, hook_name, ctx):
    if ctx.ummu_cfg.hook_layer != hook_name:
        return z
    if ctx.ummu_draw is None and ctx.ummu_rng is None:
        return z
    return ummu_apply(z, ctx.ummu_rng, ctx.ummu_cfg, ctx.mode,
                      variant=ctx.variant, draw=ctx.ummu_draw)


def encode_batch(params, memory, batch, ctx):
    """Encode one time-ordered batch; returns (z_src, z_dst, new_memory).

    The input memory is left untouched; the returned state has the endpoint
    rows of every event overwritten with fresh embeddings (last event wins
    for duplicate nodes) and their update times set to the event times.

    In train mode the returned embeddings carry dropout and the augmentation
    hook, but the memory write always uses the clean inference-path values:
    training noise regularizes the loss without contaminating the recurrent
    state that evaluation reads.
    """
    d, _, time_dim = params.dims
    if len(batch) == 0:
        raise DomainError("cannot encode an empty batch")
    if batch.src.max() >= memory.src_memory.shape[0] or batch.src.min() < 0:
        raise DataError("source id out of memory range")
    if batch.dst.max() >= memory.dst_memory.shape[0] or batch.dst.min() < 0:
        raise DataError("destination id out of memory range")

    m_src = memory.src_memory[batch.src]
    m_dst = memory.dst_memory[batch.dst]
    deltas = batch.t - memory.last_update_src[batch.src]
    x = Tensor(np.concatenate(
        [m_src, m_dst, batch.features, _time_encode_rows(deltas, time_dim)], axis=1))

    h = nc.tanh(nc.add_row(nc.matmul(x, params["w1"]), params["b1"]))
    h_clean = h
    if ctx.mode == MODE_TRAIN and ctx.dropout_rate > 0.0:
        if ctx.dropout_mask is not None:
            keep = ctx.dropout_mask
        elif ctx.dropout_rng is not None:
            keep = (ctx.dropout_rng.uniform(size=h.shape) >= ctx.dropout_rate)
        else:
            raise ConfigError("dropout requires a dropout rng or a frozen mask")
        h = nc.mul(h, Tensor(keep / (1.0 - ctx.dropout_rate)))
    h = _hook(h, "after_layer_1", ctx)

    z2_pre = nc.tanh(nc.add_row(nc.matmul(h, params["w2"]), params["b2"]))
    z2 = _hook(z2_pre, "after_layer_2", ctx)

    m_out = nc.tanh(nc.add_row(nc.matmul(z2, params["w_mem"]), params["b_mem"]))
    z_src = nc.slice_cols(m_out, 0, d)
    z_dst = nc.slice_cols(m_out, d, 2 * d)

    if h is h_clean and z2 is z2_pre:
        write_src, write_dst = z_src.data, z_dst.data
    else:
        # clean path, constants only (no tape): what eval mode would compute
        hc = h_clean.data
        z2c = np.tanh(hc @ params["w2"].data + params["b2"].data)
        moc = np.tanh(z2c @ params["w_mem"].data + params["b_mem"].data)
        write_src, write_dst = moc[:, :d], moc[:, d:]

    new_memory = memory.copy()
    src_ids, src_rows = _last_occurrence(batch.src)
    dst_ids, dst_rows = _last_occurrence(batch.dst)
    new_memory.src_memory[src_ids] = write_src[src_rows]
    new_memory.dst_memory[dst_ids] = write_dst[dst_rows]
    new_memory.last_update_src[src_ids] = batch.t[src_rows]
    new_memory.last_update_dst[dst_ids] = batch.t[dst_rows]
    return z_src, z_dst, new_memory


def score_links(params, z_src, z_cand):
    """sigmoid(MLP([z_src ; z_cand])) per row; probabilities in (0, 1)."""
    if z_src.rows != z_cand.rows:
        raise DimensionError(
            f"score_links: row counts differ ({z_src.shape} vs {z_cand.shape})")
    x = nc.concat_cols(z_src, z_cand)
    hidden = nc.tanh(nc.add_row(nc.matmul(x, params["w_dec1"]), params["b_dec1"]))
    return nc.sigmoid(nc.add_row(nc.matmul(hidden, params["w_dec2"]), params["b_dec2"]))


PROB_CLAMP = 1e-7


def bce_loss(pos_scores, neg_scores):
    """Mean binary cross-entropy over all positive and negative terms."""
    p = nc.clamp(pos_scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = nc.clamp(nc.add(nc.mul(neg_scores, -1.0), 1.0), PROB_CLAMP, 1.0 - PROB_CLAMP)
    n_terms = p.rows * p.cols + q.rows * q.cols
    joint = nc.add(nc.total(nc.log(p), "all"), nc.total(nc.log(q), "all"))
    return nc.mul(joint, -1.0 / n_terms)


class Adam:
    """Adam with bias correction; updates leaf tensors in place between tapes."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}

    def step(self, grads):
        self.t += 1
        for name, p in self.params.tensors.items():
            g = grads.get(p)
            if g is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainStreams:
    """The named random sub-streams one training run consumes."""

    augment: Rng
    dropout: Rng
    negatives: Rng

    @classmethod
    def for_seed(cls, seed):
        root = Rng(seed)
        return cls(augment=root.stream("augment"),
                   dropout=root.stream("dropout"),
                   negatives=root.stream("train_negatives"))


def train_epoch(params, memory, train_stream, config, ummu_cfg, streams, optimizer):
    """One pass over the train split; advances `memory` in place.

    The caller resets the memory to zeros at epoch start. Each batch is
    encoded in train mode and each event's fresh source embedding is scored
    against the pre-batch memory of its true destination and of one uniform
    negative, mirroring how evaluation scores candidates.
    """
    state = memory
    losses = []
    for i, batch in enumerate(split_batches(train_stream, config.batch_size)):
        negs = sample_negatives(streams.negatives, batch, 1,
                                train_stream.n_dst_nodes)
        pos_emb = Tensor(state.dst_memory[batch.dst])
        neg_emb = Tensor(state.dst_memory[negs[:, 0]])
        ctx = EncodeContext(mode=MODE_TRAIN, ummu_cfg=ummu_cfg,
                            ummu_rng=streams.augment,
                            dropout_rate=config.dropout_rate,
                            dropout_rng=streams.dropout)
        z_src, z_dst, state = encode_batch(params, state, batch, ctx)
        pos = score_links(params, z_src, pos_emb)
        neg = score_links(params, z_src, neg_emb)
        loss = bce_loss(pos, neg)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at batch {i}")
        grads = nc.backward(loss, wrt=params.ordered())
        optimizer.step(grads)
        losses.append(value)
    memory.load(state)
    return float(np.mean(losses)) if losses else 0.0


def advance_memory(params, memory, stream, batch_size):
    """Run the encoder over a stream in eval mode, updating memory only."""
    state = memory
    for batch in split_batches(stream, batch_size):
        _, _, state = encode_batch(params, state, batch, EncodeContext(mode=MODE_EVAL))
    memory.load(state)


CHECKPOINT_FORMAT = "tglink-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, config_echo):
    """Versioned JSON container: named float64 arrays (base64, little-endian
    row-major) plus a config echo."""
    arrays = {}
    for name, tens in params.tensors.items():
        arrays[name] = {
            "shape": list(tens.shape),
            "data": base64.b64encode(
                np.ascontiguousarray(tens.data, dtype="<f8").tobytes()).decode("ascii"),
        }
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": list(params.dims),
        "config": config_echo,
        "arrays": arrays,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint; returns (ModelParams, config echo dict)."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    tensors = {}
    for name, spec in payload["arrays"].items():
        raw = np.frombuffer(base64.b64decode(spec["data"]), dtype="<f8")
        tensors[name] = Tensor(raw.reshape(spec["shape"]).copy(), requires_grad=True)
    params = ModelParams(tensors, tuple(payload["dims"]))
    return params, payload["config"]
