"""Visual feature extraction and transformer report generation.

Two grayscale views pass through one shared-weight conv stack. The pooled
pair vector feeds a topic-classification head; the per-patch features of both
views form the encoder memory the decoder cross-attends to while emitting
report tokens. Everything runs on the local autodiff engine.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, LabelError, LengthError, ShapeError
from .validation import rng_from_seed

PAD_ID, START_ID, END_ID = 0, 1, 2

_CKPT_MAGIC = b"RGEN"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; see :func:`desk_config` and :func:`full_config`."""

    vocab_size: int
    k_topics: int
    d_model: int = 64
    n_heads: int = 4
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    d_ff: int = 128
    max_len: int = 40
    image_size: int = 32
    conv_channels: tuple[int, ...] = (8, 16, 32)
    memory_mode: str = "patches"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if self.memory_mode not in ("patches", "pooled"):
            raise ConfigError(f"unknown memory_mode {self.memory_mode!r}")
        if self.image_size % (2 ** len(self.conv_channels)):
            raise ConfigError("image_size must divide by 2 per conv stage")
        if self.vocab_size < 5 or self.k_topics < 1:
            raise ConfigError("vocab_size must cover the reserved tokens and k_topics >= 1")

    @property
    def d_visual(self) -> int:
        return self.conv_channels[-1]

    @property
    def feature_side(self) -> int:
        return self.image_size // (2 ** len(self.conv_channels))

    @property
    def patches_per_image(self) -> int:
        return self.feature_side**2


def desk_config(vocab_size: int, k_topics: int, **overrides) -> ModelConfig:
    """Laptop-scale preset: d_model 64, 4 heads, 2+2 layers, 32px inputs."""
    base = dict(d_model=64, n_heads=4, n_layers_enc=2, n_layers_dec=2, d_ff=128,
                max_len=40, image_size=32, conv_channels=(8, 16, 32))
    base.update(overrides)
    return ModelConfig(vocab_size=vocab_size, k_topics=k_topics, **base)


def full_config(vocab_size: int, k_topics: int, **overrides) -> ModelConfig:
    """Full-scale preset: d_model 512, 8 heads, 3+3 layers, 150-token reports."""
    base = dict(d_model=512, n_heads=8, n_layers_enc=3, n_layers_dec=3, d_ff=2048,
                max_len=150, image_size=224, conv_channels=(64, 128, 256, 512, 2048))
    base.update(overrides)
    return ModelConfig(vocab_size=vocab_size, k_topics=k_topics, **base)


@dataclass
class VisualFeatures:
    """Per-patch sequence and pooled pair vector for one batch of image pairs."""

    patch_seq: Tensor  # (B, 2P, d_model)
    pooled_pair: Tensor  # (B, 2 * d_visual)

    @property
    def kmve_logits_input(self) -> Tensor:
        return self.pooled_pair


@dataclass
class GenerationOutput:
    """Decoded ids plus recorded decoder-to-memory attention."""

    token_ids: list[int]
    attention: np.ndarray = field(repr=False)  # (layers, heads, generated, memory)

    def attention_table(self) -> np.ndarray:
        """Final-layer, head-averaged attention: one row per generated token."""
        return self.attention[-1].mean(axis=0)


class _Linear:
    def __init__(self, model: "ReportModel", name: str, fan_in: int, fan_out: int):
        bound = 1.0 / np.sqrt(fan_in)
        self.w = model._param(f"{name}.w", model._rng.uniform(-bound, bound, (fan_in, fan_out)))
        self.b = model._param(f"{name}.b", model._rng.uniform(-bound, bound, fan_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class _LayerNorm:
    def __init__(self, model: "ReportModel", name: str, width: int):
        self.gamma = model._param(f"{name}.gamma", np.ones(width))
        self.beta = model._param(f"{name}.beta", np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class _MultiHeadAttention:
    def __init__(self, model: "ReportModel", name: str, d_model: int, n_heads: int):
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = _Linear(model, f"{name}.wq", d_model, d_model)
        self.wk = _Linear(model, f"{name}.wk", d_model, d_model)
        self.wv = _Linear(model, f"{name}.wv", d_model, d_model)
        self.wo = _Linear(model, f"{name}.wo", d_model, d_model)

    def __call__(self, queries: Tensor, memory: Tensor, mask: np.ndarray | None = None):
        batch, t_q, d_model = queries.shape
        t_k = memory.shape[1]
        h, d_head = self.n_heads, self.d_head

        def split(x, length):
            return ad.transpose(ad.reshape(x, (batch, length, h, d_head)), (0, 2, 1, 3))

        q = split(self.wq(queries), t_q)
        k = split(self.wk(memory), t_k)
        v = split(self.wv(memory), t_k)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d_head))
        if mask is not None:
            scores = ad.add(scores, Tensor(mask))
        attn = ad.softmax(scores, axis=-1)
        context = ad.matmul(attn, v)  # (B, H, Tq, d_head)
        merged = ad.reshape(ad.transpose(context, (0, 2, 1, 3)), (batch, t_q, d_model))
        return self.wo(merged), attn


class _FeedForward:
    def __init__(self, model: "ReportModel", name: str, d_model: int, d_ff: int):
        self.inner = _Linear(model, f"{name}.inner", d_model, d_ff)
        self.outer = _Linear(model, f"{name}.outer", d_ff, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(ad.relu(self.inner(x)))


class _EncoderLayer:
    def __init__(self, model, name, cfg: ModelConfig):
        self.attn = _MultiHeadAttention(model, f"{name}.attn", cfg.d_model, cfg.n_heads)
        self.norm1 = _LayerNorm(model, f"{name}.norm1", cfg.d_model)
        self.ffn = _FeedForward(model, f"{name}.ffn", cfg.d_model, cfg.d_ff)
        self.norm2 = _LayerNorm(model, f"{name}.norm2", cfg.d_model)

    def __call__(self, x: Tensor) -> Tensor:
        attended, _ = self.attn(x, x)
        x = self.norm1(ad.add(x, attended))
        return self.norm2(ad.add(x, self.ffn(x)))


class _DecoderLayer:
    def __init__(self, model, name, cfg: ModelConfig):
        self.self_attn = _MultiHeadAttention(model, f"{name}.self", cfg.d_model, cfg.n_heads)
        self.norm1 = _LayerNorm(model, f"{name}.norm1", cfg.d_model)
        self.cross_attn = _MultiHeadAttention(model, f"{name}.cross", cfg.d_model, cfg.n_heads)
        self.norm2 = _LayerNorm(model, f"{name}.norm2", cfg.d_model)
        self.ffn = _FeedForward(model, f"{name}.ffn", cfg.d_model, cfg.d_ff)
        self.norm3 = _LayerNorm(model, f"{name}.norm3", cfg.d_model)

    def __call__(self, x: Tensor, memory: Tensor, causal_mask: np.ndarray):
        attended, _ = self.self_attn(x, x, causal_mask)
        x = self.norm1(ad.add(x, attended))
        crossed, cross_weights = self.cross_attn(x, memory)
        x = self.norm2(ad.add(x, crossed))
        return self.norm3(ad.add(x, self.ffn(x))), cross_weights


class ReportModel:
    """Shared-weight visual encoder, topic head and transformer generator."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._rng = rng_from_seed(seed)
        cfg = config

        self._conv_weights = []
        in_ch = 1
        for i, out_ch in enumerate(cfg.conv_channels):
            bound = 1.0 / np.sqrt(in_ch * 9)
            w = self._param(f"conv.{i}.w", self._rng.uniform(-bound, bound, (out_ch, in_ch, 3, 3)))
            b = self._param(f"conv.{i}.b", self._rng.uniform(-bound, bound, out_ch))
            self._conv_weights.append((w, b))
            in_ch = out_ch

        self.kmve_head = _Linear(self, "kmve.head", 2 * cfg.d_visual, cfg.k_topics)
        self.patch_proj = _Linear(self, "gen.patch_proj", cfg.d_visual, cfg.d_model)
        self.pooled_proj = _Linear(self, "gen.pooled_proj", 2 * cfg.d_visual, cfg.d_model)
        self.tok_emb = self._param(
            "gen.tok_emb", self._rng.normal(0.0, 0.02, (cfg.vocab_size, cfg.d_model))
        )
        self.pos_emb = self._param(
            "gen.pos_emb", self._rng.normal(0.0, 0.02, (cfg.max_len, cfg.d_model))
        )
        self.encoder_layers = [
            _EncoderLayer(self, f"gen.enc.{i}", cfg) for i in range(cfg.n_layers_enc)
        ]
        self.decoder_layers = [
            _DecoderLayer(self, f"gen.dec.{i}", cfg) for i in range(cfg.n_layers_dec)
        ]
        self.out_proj = _Linear(self, "gen.out_proj", cfg.d_model, cfg.vocab_size)

    def _param(self, name: str, data) -> Tensor:
        tensor = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)
        self.params[name] = tensor
        return tensor

    def param_groups(self) -> dict[str, list[str]]:
        """Visual/topic parameters versus generator parameters."""
        visual = [n for n in self.params if n.startswith(("conv.", "kmve."))]
        generator = [n for n in self.params if n.startswith("gen.")]
        return {"visual": visual, "generator": generator}

    # -- visual pathway ----------------------------------------------------

    def encode_images(self, images: np.ndarray) -> VisualFeatures:
        """Run the shared conv stack over both views of every pair.

        ``images`` is (B, 2, H, W) with values in [0, 1]; both views pass
        through the same weight tensors, so sharing is structural.
        """
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[1] != 2:
            raise ShapeError(f"expected images (B, 2, H, W), got {images.shape}")
        if images.shape[2] != images.shape[3] or images.shape[2] != self.config.image_size:
            raise ShapeError(
                f"expected {self.config.image_size}px square images, got {images.shape}"
            )
        batch = images.shape[0]
        x = Tensor(images.reshape(batch * 2, 1, *images.shape[2:]))
        for w, b in self._conv_weights:
            x = ad.relu(ad.conv2d(x, w, b, stride=2, pad=1))
        side = self.config.feature_side
        pooled = ad.reshape(ad.avg_pool(x, side), (batch, 2 * self.config.d_visual))
        patches = ad.reshape(
            ad.transpose(x, (0, 2, 3, 1)),
            (batch, 2 * self.config.patches_per_image, self.config.d_visual),
        )
        return VisualFeatures(patch_seq=self.patch_proj(patches), pooled_pair=pooled)

    def kmve_logits(self, pooled_pair: Tensor) -> Tensor:
        return self.kmve_head(pooled_pair)

    def kmve_loss(self, pooled_pair: Tensor, topics: Sequence[int]) -> Tensor:
        """Cross entropy of the projected pair feature against the topic label."""
        topics = np.asarray(topics, dtype=np.int64)
        if topics.min() < 0 or topics.max() >= self.config.k_topics:
            raise LabelError(
                f"topic labels must lie in [0, {self.config.k_topics}), got {topics}"
            )
        return ad.cross_entropy(self.kmve_logits(pooled_pair), topics)

    # -- report generator ---------------------------------------------------

    def encode_memory(self, vis: VisualFeatures) -> Tensor:
        if self.config.memory_mode == "pooled":
            batch = vis.pooled_pair.shape[0]
            x = ad.reshape(self.pooled_proj(vis.pooled_pair), (batch, 1, self.config.d_model))
        else:
            x = vis.patch_seq
        for layer in self.encoder_layers:
            x = layer(x)
        return x

    def decode(self, memory: Tensor, token_ids: np.ndarray):
        """Teacher-forced decoding; returns logits and per-layer cross attention."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.ndim != 2:
            raise ShapeError("token_ids must be (B, T)")
        t = token_ids.shape[1]
        if t > self.config.max_len:
            raise LengthError(f"prefix length {t} exceeds max_len {self.config.max_len}")
        x = ad.add(
            ad.embedding_lookup(self.tok_emb, token_ids),
            ad.embedding_lookup(self.pos_emb, np.arange(t)),
        )
        causal = np.triu(np.full((t, t), -1e9, dtype=np.float32), k=1)
        cross_attention = []
        for layer in self.decoder_layers:
            x, weights = layer(x, memory, causal)
            cross_attention.append(weights)
        return self.out_proj(x), cross_attention

    def tf_loss(self, logits: Tensor, targets: np.ndarray) -> Tensor:
        """Per-token cross entropy of next-token predictions, padding ignored."""
        return ad.cross_entropy(logits, targets, ignore_index=PAD_ID)

    def forward_losses(self, images, token_ids, topics):
        """Teacher-forced pass: (kmve loss, tf loss, decoder softmax rows, memory)."""
        vis = self.encode_images(images)
        loss_kmve = self.kmve_loss(vis.pooled_pair, topics)
        memory = self.encode_memory(vis)
        token_ids = np.asarray(token_ids, dtype=np.int64)
        logits, _ = self.decode(memory, token_ids[:, :-1])
        loss_tf = self.tf_loss(logits, token_ids[:, 1:])
        return loss_kmve, loss_tf, logits, memory

    # -- autoregressive generation ------------------------------------------

    def generate(
        self,
        images: np.ndarray,
        mode: str = "greedy",
        beam_width: int = 1,
        max_len: int | None = None,
    ) -> list[GenerationOutput]:
        """Decode from ``<start>``; stops at ``<end>`` or the length cap.

        Greedy picks the argmax at each step, ties resolving to the lowest
        token index. Beam search keeps ``beam_width`` hypotheses scored by
        summed log-probability.
        """
        limit = min(max_len or self.config.max_len, self.config.max_len)
        with ad.no_grad():
            vis = self.encode_images(images)
            memory = self.encode_memory(vis)
            if mode == "greedy":
                return self._generate_greedy(memory, limit)
            if mode == "beam":
                if beam_width < 1:
                    raise ConfigError("beam width must be >= 1")
                return [
                    self._generate_beam(_slice_memory(memory, i), beam_width, limit)
                    for i in range(memory.shape[0])
                ]
        raise ConfigError(f"unknown generation mode {mode!r}")

    def _attention_for(self, memory: Tensor, ids: np.ndarray) -> np.ndarray:
        _, cross = self.decode(memory, ids)
        return np.stack([w.data for w in cross], axis=0)  # (L, B, H, T, M)

    def _generate_greedy(
        self, memory: Tensor, limit: int, with_attention: bool = True
    ) -> list[GenerationOutput]:
        batch = memory.shape[0]
        stepper = _IncrementalDecoder(self, memory.data)
        ids = np.full((batch, 1), START_ID, dtype=np.int64)
        finished = np.zeros(batch, dtype=bool)
        while ids.shape[1] < limit and not finished.all():
            logits = stepper.step(ids[:, -1])
            next_ids = np.argmax(logits, axis=-1)
            next_ids[finished] = PAD_ID
            ids = np.concatenate([ids, next_ids[:, None]], axis=1)
            finished |= next_ids == END_ID
        if with_attention:
            attention = self._attention_for(memory, ids)
        outputs = []
        for b in range(batch):
            seq = list(ids[b])
            if END_ID in seq:
                seq = seq[: seq.index(END_ID) + 1]
            n_generated = len(seq) - 1
            outputs.append(
                GenerationOutput(
                    token_ids=[int(t) for t in seq],
                    attention=attention[:, b, :, :n_generated, :].copy()
                    if with_attention
                    else np.zeros((len(self.decoder_layers), self.config.n_heads, 0, memory.shape[1])),
                )
            )
        return outputs

    def _generate_beam(self, memory: Tensor, width: int, limit: int) -> GenerationOutput:
        beams = [([START_ID], 0.0, False)]
        for _ in range(limit - 1):
            if all(done for _, _, done in beams):
                break
            candidates = []
            for seq, score, done in beams:
                if done:
                    candidates.append((seq, score, True))
                    continue
                logits, _ = self.decode(memory, np.array([seq]))
                row = logits.data[0, -1].astype(np.float64)
                logp = row - row.max()
                logp -= np.log(np.exp(logp).sum())
                order = np.argsort(-logp, kind="stable")[:width]
                for tok in order:
                    candidates.append(
                        (seq + [int(tok)], score + float(logp[tok]), int(tok) == END_ID)
                    )
            candidates.sort(key=lambda c: (-c[1], c[0]))
            beams = candidates[:width]
        seq = beams[0][0]
        attention = self._attention_for(memory, np.array([seq]))
        return GenerationOutput(
            token_ids=seq, attention=attention[:, 0, :, : len(seq) - 1, :].copy()
        )

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path, vocab_tokens: Sequence[str]):
        """Write a self-contained checkpoint; round trips are byte-exact."""
        header = {
            "config": {**asdict(self.config), "conv_channels": list(self.config.conv_channels)},
            "vocab": list(vocab_tokens),
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(struct.pack("<I", _CKPT_VERSION))
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", len(self.params)))
            for name in sorted(self.params):
                data = self.params[name].data.astype("<f4")
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<I", data.ndim))
                fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
                fh.write(data.tobytes())

    @classmethod
    def load(cls, path: str | Path) -> tuple["ReportModel", list[str]]:
        with open(path, "rb") as fh:
            if fh.read(4) != _CKPT_MAGIC:
                raise ConfigError(f"{path} is not a model checkpoint")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _CKPT_VERSION:
                raise ConfigError(f"unsupported checkpoint version {version}")
            (json_len,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(json_len).decode("utf-8"))
            config_payload = dict(header["config"])
            config_payload["conv_channels"] = tuple(config_payload["conv_channels"])
            config = ModelConfig(**config_payload)
            model = cls(config, seed=0)
            (n_tensors,) = struct.unpack("<I", fh.read(4))
            for _ in range(n_tensors):
                (name_len,) = struct.unpack("<I", fh.read(4))
                name = fh.read(name_len).decode("utf-8")
                (ndim,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                count = int(np.prod(shape)) if ndim else 1
                data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
                if name not in model.params:
                    raise ConfigError(f"checkpoint tensor {name!r} not in model")
                model.params[name].data = data.astype(np.float32).copy()
        return model, list(header["vocab"])


def _slice_memory(memory: Tensor, index: int) -> Tensor:
    return Tensor(memory.data[index : index + 1])


class _IncrementalDecoder:
    """Plain-numpy greedy decoding with per-layer key/value caches.

    Matches the graph decoder to float32 rounding (within 1e-5) at a fraction
    of the per-step cost; used only where no gradients are needed.
    """

    def __init__(self, model: ReportModel, memory: np.ndarray):
        self.model = model
        cfg = model.config
        self.h, self.dk = cfg.n_heads, cfg.d_model // cfg.n_heads
        self.scale = 1.0 / np.sqrt(self.dk)
        self.position = 0
        self.self_k: list[np.ndarray | None] = [None] * len(model.decoder_layers)
        self.self_v: list[np.ndarray | None] = [None] * len(model.decoder_layers)
        self.cross_k, self.cross_v = [], []
        batch, m, _ = memory.shape
        for layer in model.decoder_layers:
            k = self._project(memory, layer.cross_attn.wk)  # (B, M, D)
            v = self._project(memory, layer.cross_attn.wv)
            self.cross_k.append(k.reshape(batch, m, self.h, self.dk).transpose(0, 2, 1, 3))
            self.cross_v.append(v.reshape(batch, m, self.h, self.dk).transpose(0, 2, 1, 3))

    @staticmethod
    def _project(x: np.ndarray, linear: _Linear) -> np.ndarray:
        return x @ linear.w.data + linear.b.data

    @staticmethod
    def _layer_norm(x: np.ndarray, norm: _LayerNorm) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + 1e-5) * norm.gamma.data + norm.beta.data

    @staticmethod
    def _softmax(x: np.ndarray) -> np.ndarray:
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def _heads(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[0], self.h, self.dk)

    def step(self, token_ids: np.ndarray) -> np.ndarray:
        """Feed one token per sequence; returns next-token logits (B, V)."""
        model = self.model
        x = model.tok_emb.data[token_ids] + model.pos_emb.data[self.position]
        for i, layer in enumerate(model.decoder_layers):
            q = self._heads(self._project(x, layer.self_attn.wq))
            k_new = self._heads(self._project(x, layer.self_attn.wk))[:, :, None, :]
            v_new = self._heads(self._project(x, layer.self_attn.wv))[:, :, None, :]
            self.self_k[i] = k_new if self.self_k[i] is None else np.concatenate(
                [self.self_k[i], k_new], axis=2)
            self.self_v[i] = v_new if self.self_v[i] is None else np.concatenate(
                [self.self_v[i], v_new], axis=2)
            attn = self._softmax(
                np.einsum("bhd,bhtd->bht", q, self.self_k[i]) * self.scale)
            context = np.einsum("bht,bhtd->bhd", attn, self.self_v[i])
            merged = context.reshape(x.shape[0], -1)
            x = self._layer_norm(x + self._project(merged, layer.self_attn.wo), layer.norm1)

            q = self._heads(self._project(x, layer.cross_attn.wq))
            attn = self._softmax(
                np.einsum("bhd,bhtd->bht", q, self.cross_k[i]) * self.scale)
            context = np.einsum("bht,bhtd->bhd", attn, self.cross_v[i])
            merged = context.reshape(x.shape[0], -1)
            x = self._layer_norm(x + self._project(merged, layer.cross_attn.wo), layer.norm2)

            inner = np.maximum(self._project(x, layer.ffn.inner), 0.0)
            x = self._layer_norm(x + self._project(inner, layer.ffn.outer), layer.norm3)
        self.position += 1
        return self._project(x, model.out_proj)


def export_attention(output: GenerationOutput, vocab_tokens: Sequence[str]) -> tuple[list[str], np.ndarray]:
    """Rows are generated tokens, columns memory patches, final layer head-mean."""
    table = output.attention_table()
    labels = [vocab_tokens[t] for t in output.token_ids[1:]]
    return labels, table


def write_attention_csv(path: str | Path, output: GenerationOutput, vocab_tokens: Sequence[str]):
    labels, table = export_attention(output, vocab_tokens)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("token," + ",".join(f"patch{i}" for i in range(table.shape[1])) + "\n")
        for label, row in zip(labels, table):
            fh.write(label + "," + ",".join(repr(float(v)) for v in row) + "\n")
