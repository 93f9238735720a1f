"""Encoder-decoder Transformer with graph-biased attention.

Encoder self-attention logits receive ``lambda_intra * B_intra``; decoder
cross-attention logits receive ``lambda_cross * B_cross`` when a cross bias is
supplied (teacher-forced training only).  Positions are encoded with clipped
relative key embeddings instead of absolute sinusoids.
"""

from __future__ import annotations

import dataclasses
import io
import math
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from retrograph import tensor as T
from retrograph.priors import BiasMode, IntraBiasConfig
from retrograph.tensor import Tensor
from retrograph.vocab import PAD_ID

MASK_VALUE = -1e9
CHECKPOINT_MAGIC = b"RETROGRAPH-CKPT\n"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    layers_enc: int = 6
    layers_dec: int = 6
    heads: int = 8
    d_model: int = 256
    d_ff: int = 2048
    dropout: float = 0.3
    max_relative_distance: int = 4
    lambda_intra: float = 1.0
    lambda_cross: float = 1.0
    bias_mode: str = "gaussian"
    sigma: float = 1.0
    hop_weights: tuple[float, float, float, float] = (1.0, 0.5, 0.25, 0.125)
    relative_positions: bool = True

    def __post_init__(self):
        self.bias_mode = BiasMode(self.bias_mode).value
        self.hop_weights = tuple(float(w) for w in self.hop_weights)
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.max_relative_distance < 1:
            raise ValueError("max_relative_distance must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the specials plus at least one token")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def intra_config(self) -> IntraBiasConfig:
        mode = BiasMode(self.bias_mode)
        return IntraBiasConfig(mode, self.hop_weights, self.sigma, self.lambda_intra)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> ModelConfig:
        raw = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(**{k: _coerce_field(cls, k, v) for k, v in raw.items()})


def _coerce_field(cls, name: str, value: str):
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    if name not in types:
        raise KeyError(f"unknown config key {name!r}")
    kind = str(types[name])
    value = value.strip()
    if kind.startswith("tuple"):
        return tuple(float(x) for x in value.split(","))
    if kind == "bool":
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got {value!r}")
        return value.lower() in ("true", "1", "yes")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


@dataclass
class AttentionBiasBundle:
    """Masks and (already lambda-scaled) additive biases for one batch.

    ``src_pad``/``tgt_pad`` are true at padding positions.  ``enc_self_bias``
    is (B, Tx, Tx); ``cross_bias`` is (B, Ty, Tx), i.e. decoder-query rows.
    """

    src_pad: np.ndarray
    tgt_pad: np.ndarray | None = None
    enc_self_bias: np.ndarray | None = None
    cross_bias: np.ndarray | None = None


def causal_mask(n: int) -> np.ndarray:
    """True where query t may attend key s, i.e. s <= t."""
    return np.tril(np.ones((n, n), dtype=bool))


def relative_index(q_len: int, k_len: int, clip: int) -> np.ndarray:
    offsets = np.arange(k_len)[None, :] - np.arange(q_len)[:, None]
    return np.clip(offsets, -clip, clip) + clip


def relative_position_logits(q: Tensor, rel_emb: Tensor, clip: int, k_len: int | None = None) -> Tensor:
    """``q_i . r[clip(j - i)]`` for every query i and key j (unscaled)."""
    if rel_emb.shape[0] != 2 * clip + 1:
        raise T.ShapeMismatch(f"{rel_emb.shape[0]} relative embeddings for clip {clip}")
    q_len = q.shape[-2]
    scores = T.matmul(q, T.transpose_last2(rel_emb))
    return T.gather_lastdim(scores, relative_index(q_len, k_len or q_len, clip))


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    bias=None,
    mask=None,
    rel_emb: Tensor | None = None,
    clip: int | None = None,
    dropout_p: float = 0.0,
    rng_seed=0,
    training: bool = False,
) -> Tensor:
    """softmax(fill(QK^T/sqrt(d_k) + bias, not mask, -1e9)) V.

    ``mask`` is true where attention is allowed.  Relative-position scores
    are added to QK^T before the 1/sqrt(d_k) scaling.
    """
    d_k = q.shape[-1]
    if k.shape[-1] != d_k or k.shape[-2] != v.shape[-2]:
        raise T.ShapeMismatch(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    s = T.matmul(q, T.transpose_last2(k))
    if rel_emb is not None:
        s = T.add(s, relative_position_logits(q, rel_emb, clip, k.shape[-2]))
    s = T.scale(s, 1.0 / math.sqrt(d_k))
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape[-2:] != s.shape[-2:]:
            raise T.ShapeMismatch(f"bias {bias.shape} vs logits {s.shape}")
        s = T.add(s, bias)
    if mask is not None:
        s = T.masked_fill(s, ~np.asarray(mask, dtype=bool), MASK_VALUE)
    w = T.softmax_lastdim(s)
    w = T.dropout(w, dropout_p, rng_seed, training)
    return T.matmul(w, v)


class Transformer:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.dropout_seed = seed
        self._dropout_calls = 0
        self._init_params(np.random.default_rng(seed))

    # -- parameters -------------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True)

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        d, dff = c.d_model, c.d_ff

        def xavier(n_in, n_out):
            a = math.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-a, a, size=(n_in, n_out))

        def attn(prefix, relative):
            for w in ("wq", "wk", "wv", "wo"):
                self._add(f"{prefix}.{w}", xavier(d, d))
            if relative and c.relative_positions:
                n_rel = 2 * c.max_relative_distance + 1
                self._add(f"{prefix}.rel", rng.normal(0.0, c.d_head**-0.5, size=(n_rel, c.d_head)))

        def norm(prefix):
            self._add(f"{prefix}.g", np.ones(d))
            self._add(f"{prefix}.b", np.zeros(d))

        def ff(prefix):
            self._add(f"{prefix}.w1", xavier(d, dff))
            self._add(f"{prefix}.b1", np.zeros(dff))
            self._add(f"{prefix}.w2", xavier(dff, d))
            self._add(f"{prefix}.b2", np.zeros(d))

        self._add("embed", rng.normal(0.0, 0.5 * d**-0.5, size=(c.vocab_size, d)))
        for layer in range(c.layers_enc):
            p = f"enc.{layer}"
            norm(f"{p}.ln1")
            attn(f"{p}.self", relative=True)
            norm(f"{p}.ln2")
            ff(f"{p}.ff")
        norm("enc.ln")
        for layer in range(c.layers_dec):
            p = f"dec.{layer}"
            norm(f"{p}.ln1")
            attn(f"{p}.self", relative=True)
            norm(f"{p}.ln2")
            attn(f"{p}.cross", relative=False)
            norm(f"{p}.ln3")
            ff(f"{p}.ff")
        norm("dec.ln")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- building blocks --------------------------------------------------

    def _next_seed(self):
        self._dropout_calls += 1
        return (self.dropout_seed, self._dropout_calls)

    def _dropout(self, x: Tensor, training: bool) -> Tensor:
        if not training or self.config.dropout == 0.0:
            return x
        return T.dropout(x, self.config.dropout, self._next_seed(), True)

    def _norm(self, x: Tensor, prefix: str) -> Tensor:
        return T.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _ff(self, x: Tensor, prefix: str, training: bool) -> Tensor:
        p = self.params
        h = T.relu(T.add(T.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
        h = self._dropout(h, training)
        return T.add(T.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])

    def _split_heads(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        c = self.config
        return T.permute(T.reshape(x, (b, t, c.heads, c.d_head)), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        b, _, t, _ = x.shape
        return T.reshape(T.permute(x, (0, 2, 1, 3)), (b, t, self.config.d_model))

    def _mha(self, prefix, x_q, x_kv, mask, bias, training, vanilla=False) -> Tensor:
        p = self.params
        q = self._split_heads(T.matmul(x_q, p[f"{prefix}.wq"]))
        k = self._split_heads(T.matmul(x_kv, p[f"{prefix}.wk"]))
        v = self._split_heads(T.matmul(x_kv, p[f"{prefix}.wv"]))
        rel = None if vanilla else p.get(f"{prefix}.rel")
        if bias is not None and not vanilla:
            bias = np.asarray(bias)[:, None, :, :]
        else:
            bias = None
        seed = self._next_seed() if training and self.config.dropout > 0 else 0
        out = attention(
            q, k, v, bias, mask, rel, self.config.max_relative_distance,
            self.config.dropout, seed, training,
        )
        return T.matmul(self._merge_heads(out), p[f"{prefix}.wo"])

    def _embed(self, ids: np.ndarray, training: bool) -> Tensor:
        x = T.scale(T.embedding_lookup(self.params["embed"], ids), math.sqrt(self.config.d_model))
        return self._dropout(x, training)

    # -- public API -------------------------------------------------------

    def encode(self, src: np.ndarray, bundle: AttentionBiasBundle, training: bool = False,
               vanilla: bool = False) -> Tensor:
        """Contextual memory (B, Tx, d_model) for padded source ids (B, Tx).

        ``vanilla`` skips every bias and relative-position code path.
        """
        src = np.asarray(src, dtype=np.int64)
        if src.ndim != 2 or src.shape[1] == 0:
            raise ValueError("encode needs a non-empty (batch, length) id array")
        if src.max() >= self.config.vocab_size:
            raise T.ShapeMismatch("source id outside the vocabulary")
        mask = ~np.asarray(bundle.src_pad, dtype=bool)[:, None, None, :]
        x = self._embed(src, training)
        for layer in range(self.config.layers_enc):
            p = f"enc.{layer}"
            h = self._norm(x, f"{p}.ln1")
            h = self._mha(f"{p}.self", h, h, mask, bundle.enc_self_bias, training, vanilla)
            x = T.add(x, self._dropout(h, training))
            x = T.add(x, self._dropout(self._ff(self._norm(x, f"{p}.ln2"), f"{p}.ff", training), training))
        return self._norm(x, "enc.ln")

    def decode(self, memory: Tensor, tgt_in: np.ndarray, bundle: AttentionBiasBundle,
               training: bool = False, vanilla: bool = False) -> Tensor:
        """Next-token logits (B, Ty, V) for every decoder input position."""
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        b, t = tgt_in.shape
        self_mask = causal_mask(t)[None, None, :, :]
        if bundle.tgt_pad is not None:
            self_mask = self_mask & ~np.asarray(bundle.tgt_pad, dtype=bool)[:, None, None, :]
        cross_mask = ~np.asarray(bundle.src_pad, dtype=bool)[:, None, None, :]
        cross_bias = bundle.cross_bias
        if cross_bias is not None and cross_bias.shape[1] != t:
            raise T.ShapeMismatch(f"cross bias rows {cross_bias.shape[1]} vs decoder length {t}")
        x = self._embed(tgt_in, training)
        for layer in range(self.config.layers_dec):
            p = f"dec.{layer}"
            h = self._norm(x, f"{p}.ln1")
            x = T.add(x, self._dropout(self._mha(f"{p}.self", h, h, self_mask, None, training, vanilla), training))
            h = self._norm(x, f"{p}.ln2")
            x = T.add(x, self._dropout(
                self._mha(f"{p}.cross", h, memory, cross_mask, cross_bias, training, vanilla), training))
            x = T.add(x, self._dropout(self._ff(self._norm(x, f"{p}.ln3"), f"{p}.ff", training), training))
        h = self._norm(x, "dec.ln")
        return T.matmul(h, T.transpose_last2(self.params["embed"]))

    def decode_step(self, memory: Tensor, prefix: np.ndarray, src_pad: np.ndarray,
                    cross_bias: np.ndarray | None = None) -> np.ndarray:
        """Logits (B, V) for the token after ``prefix`` (B, t), which starts with BOS."""
        prefix = np.asarray(prefix, dtype=np.int64)
        if prefix.ndim != 2 or prefix.shape[1] == 0:
            raise T.ShapeMismatch("decode_step needs a non-empty (batch, t) prefix")
        bundle = AttentionBiasBundle(src_pad=src_pad, cross_bias=cross_bias)
        with T.no_grad():
            logits = self.decode(memory, prefix, bundle)
        return logits.data[:, -1, :]

    def loss(self, batch, label_smoothing: float = 0.0, training: bool = False) -> Tensor:
        memory = self.encode(batch.src, batch.bundle, training)
        logits = self.decode(memory, batch.tgt_in, batch.bundle, training)
        return T.cross_entropy(logits, batch.tgt_out, PAD_ID, label_smoothing)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Transformer, vocab_tokens: list[str]) -> Path:
    """Write a versioned little-endian binary checkpoint atomically."""
    path = Path(path)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    for block in (model.config.to_text(), "\n".join(vocab_tokens)):
        raw = block.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    buf.write(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", t.data.ndim))
        buf.write(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[Transformer, list[str]]:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"truncated checkpoint {path}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    def u32():
        return struct.unpack("<I", take(4))[0]

    if bytes(take(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a retrograph checkpoint")
    version = u32()
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = ModelConfig.from_text(bytes(take(u32())).decode("utf-8"))
    vocab_tokens = bytes(take(u32())).decode("utf-8").split("\n")
    model = Transformer(config)
    n_params = u32()
    loaded = {}
    for _ in range(n_params):
        name = bytes(take(u32())).decode("utf-8")
        rank = u32()
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        loaded[name] = arr
    if set(loaded) != set(model.params):
        raise ValueError("checkpoint parameters do not match its config")
    for name, arr in loaded.items():
        if arr.shape != model.params[name].shape:
            raise ValueError(f"shape mismatch for {name}")
        model.params[name] = Tensor(arr, requires_grad=True)
    return model, vocab_tokens
