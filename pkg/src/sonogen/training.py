"""Combined-loss training loop with frozen-generation similarity scoring.

Each batch runs three phases: a teacher-forced forward pass for the topic and
token losses, a full autoregressive generation pass with weights frozen (no
gradients recorded, parameter buffers hashed before and after), and a global
similarity loss between predicted and reference report embeddings. The
weighted sum is optimized by Adam with separate learning rates for the
visual/topic parameters and the generator parameters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import TokenizedReport, Vocabulary
from .embedding import N_RESERVED, TfidfEmbedder
from .errors import ConfigError, DegenerateEmbedding, NumericsError
from .model import END_ID, PAD_ID, ReportModel
from .validation import rng_from_seed

_SC_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters (defaults follow the full-scale recipe)."""

    lambdas: tuple[float, float, float] = (0.4, 0.6, 0.4)
    lr_kmve: float = 5e-4
    lr_rg: float = 1e-4
    lr_decay_per_epoch: float = 0.8
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    sc_mode: str = "soft"

    def __post_init__(self):
        if any(v < 0 for v in self.lambdas):
            raise ConfigError("loss weights must be non-negative")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ConfigError("lr decay must lie in (0, 1]")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("patience, max_epochs and batch_size must be >= 1")
        if self.sc_mode not in ("soft", "discrete-eval-only"):
            raise ConfigError(f"unknown sc_mode {self.sc_mode!r}")


def desk_train_config(**overrides) -> TrainConfig:
    """Desk-scale preset: small batches, flat learning rate, long horizon."""
    base = dict(batch_size=8, lr_kmve=1e-3, lr_rg=1e-3, lr_decay_per_epoch=1.0,
                max_epochs=500, patience=50)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    kmve: float
    tf: float
    sc: float
    val_loss: float
    lr_kmve: float
    lr_rg: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "mean_loss": self.mean_loss,
            "kmve": self.kmve,
            "tf": self.tf,
            "sc": self.sc,
            "val_loss": self.val_loss,
            "lr_kmve": self.lr_kmve,
            "lr_rg": self.lr_rg,
        }


class Adam:
    """Bias-corrected Adam over named parameter groups."""

    def __init__(self, params: dict[str, Tensor], group_of: dict[str, str],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.group_of = group_of
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, lrs: dict[str, float]):
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for parameter {name!r}")
            lr = lrs[self.group_of[name]]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


class EarlyStopper:
    """Stop after ``patience`` epochs without a new strict minimum."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_value = float("inf")
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


# --------------------------------------------------------------------------
# Similarity comparer
# --------------------------------------------------------------------------


def sc_similarity(pred, truth) -> Tensor:
    """Relu-clamped cosine similarity, bounded to [0, 1].

    ``truth`` must be a nonzero vector; ``pred`` may be a tensor (gradient
    flows through it) or a plain array.
    """
    truth_arr = truth.data if isinstance(truth, Tensor) else np.asarray(truth)
    if not np.any(np.linalg.norm(np.atleast_2d(truth_arr), axis=-1) > 0):
        raise DegenerateEmbedding("reference embedding is the zero vector")
    return ad.relu(ad.cosine_similarity(pred, truth))


class SimilarityComparer:
    """Embeds reports as idf-weighted token counts and scores batches.

    The soft path feeds the teacher-forced decoder distributions through the
    same embedding (expected token counts), so the loss is differentiable;
    the discrete path embeds generated token ids and carries no gradient.
    Reserved vocabulary entries get zero idf so sentinels never count.
    """

    def __init__(self, vocab: Vocabulary, train_reports: Sequence[TokenizedReport]):
        embedder = TfidfEmbedder(vocab).fit(train_reports)
        self.vocab_size = len(vocab)
        self.idf_full = np.zeros(self.vocab_size, dtype=np.float32)
        self.idf_full[N_RESERVED:] = embedder.idf_

    def embed_ids(self, token_ids: Sequence[int]) -> np.ndarray:
        counts = np.bincount(
            np.asarray(token_ids, dtype=np.int64), minlength=self.vocab_size
        ).astype(np.float32)
        return counts * self.idf_full

    def truth_rows(self, batch_ids: np.ndarray) -> np.ndarray:
        rows = np.stack([self.embed_ids(row[row != PAD_ID]) for row in batch_ids])
        if np.any(np.linalg.norm(rows, axis=1) == 0):
            raise DegenerateEmbedding("a reference report embeds to the zero vector")
        return rows

    def soft_loss(self, probs: Tensor, target_ids: np.ndarray, truth: np.ndarray) -> Tensor:
        """Negative log similarity from expected token counts, summed over reports."""
        batch, t, _ = probs.shape
        mask = (target_ids != PAD_ID).astype(np.float32)
        masked = ad.mul(probs, Tensor(np.ascontiguousarray(
            np.broadcast_to(mask[:, :, None], probs.shape))))
        counts = ad.mul(ad.mean(masked, axis=1), float(t))
        pred = ad.mul(counts, Tensor(self.idf_full))
        similarity = sc_similarity(pred, Tensor(truth))
        return ad.mul(ad.mean(ad.log(similarity, floor=_SC_FLOOR)), -float(batch))

    def discrete_loss(self, generated: Sequence[Sequence[int]], truth: np.ndarray) -> float:
        total = 0.0
        for ids, ref in zip(generated, truth):
            pred = self.embed_ids(list(ids))
            norm = np.linalg.norm(pred) * np.linalg.norm(ref)
            similarity = max(0.0, float(pred @ ref / norm)) if norm > 0 else 0.0
            total -= float(np.log(np.clip(similarity, _SC_FLOOR, 1.0)))
        return total


# --------------------------------------------------------------------------
# Trainer
# --------------------------------------------------------------------------


@dataclass
class TrainExample:
    record_id: str
    images: np.ndarray  # (2, H, W) float32 in [0, 1]
    token_ids: np.ndarray  # (L,) int64, sentinel wrapped
    topic: int


def build_examples(
    reports: Sequence[TokenizedReport],
    vocab: Vocabulary,
    topics: dict[str, int],
    images: dict[str, np.ndarray],
    max_len: int,
) -> list[TrainExample]:
    """Join tokenized reports, topic labels and image pairs into examples.

    ``images`` maps record id to a (2, H, W) uint8 or float array. Sequences
    longer than ``max_len`` are truncated with the end sentinel retained.
    Reports absent from ``topics`` (validation/test reports; pseudo-labels
    exist for the training corpus only) get topic -1, and the topic loss
    skips them.
    """
    examples = []
    for rep in reports:
        ids = vocab.encode(rep.tokens)
        if ids.shape[0] > max_len:
            ids = np.concatenate([ids[: max_len - 1], [END_ID]])
        pair = np.asarray(images[rep.id], dtype=np.float32)
        if pair.max() > 1.0:
            pair = pair / 255.0
        examples.append(
            TrainExample(record_id=rep.id, images=pair, token_ids=ids,
                         topic=topics.get(rep.id, -1))
        )
    return examples


def _pad_batch(examples: Sequence[TrainExample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    longest = max(e.token_ids.shape[0] for e in examples)
    ids = np.full((len(examples), longest), PAD_ID, dtype=np.int64)
    for i, e in enumerate(examples):
        ids[i, : e.token_ids.shape[0]] = e.token_ids
    images = np.stack([e.images for e in examples])
    topics = np.array([e.topic for e in examples], dtype=np.int64)
    return images, ids, topics


def parameter_hash(params: dict[str, Tensor]) -> str:
    digest = hashlib.sha256()
    for name in sorted(params):
        digest.update(name.encode("utf-8"))
        digest.update(params[name].data.tobytes())
    return digest.hexdigest()


@dataclass
class FitResult:
    records: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    best_path: Path | None
    last_path: Path | None


class Trainer:
    """Drives the freeze-generate-compare training schedule."""

    def __init__(
        self,
        model: ReportModel,
        config: TrainConfig,
        comparer: SimilarityComparer,
        vocab_tokens: Sequence[str],
        checkpoint_dir: str | Path | None = None,
        log_path: str | Path | None = None,
        keep_all_checkpoints: bool = False,
    ):
        self.model = model
        self.config = config
        self.comparer = comparer
        self.vocab_tokens = list(vocab_tokens)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.log_path = Path(log_path) if log_path else None
        self.keep_all_checkpoints = keep_all_checkpoints
        self.optimizer = Adam(model.params, self._group_map())
        self.lr = {"visual": float(config.lr_kmve), "generator": float(config.lr_rg)}
        self._last_checkpoint: Path | None = None
        self.freeze_checks_passed = 0

    def _group_map(self) -> dict[str, str]:
        groups = self.model.param_groups()
        mapping = {}
        for name in groups["visual"]:
            mapping[name] = "visual"
        for name in groups["generator"]:
            mapping[name] = "generator"
        missing = set(self.model.params) - set(mapping)
        if missing:
            raise ConfigError(f"parameters without a group: {sorted(missing)}")
        return mapping

    def _check_finite(self, value: float, epoch: int):
        if not np.isfinite(value):
            where = self._last_checkpoint or "no checkpoint written yet"
            raise NumericsError(
                f"non-finite loss in epoch {epoch}; last good checkpoint: {where}"
            )

    def train_epoch(self, batches: Sequence[Sequence[TrainExample]], epoch: int) -> EpochRecord:
        """One pass over the batches; returns epoch-mean loss components.

        Per batch: teacher-forced losses, frozen full generation (parameter
        hash verified unchanged), similarity loss, one Adam step with the two
        group learning rates.
        """
        lam1, lam2, lam3 = self.config.lambdas
        sums = np.zeros(3, dtype=np.float64)
        for batch in batches:
            images, ids, topics = _pad_batch(batch)
            loss_kmve, loss_tf, logits, memory = self.model.forward_losses(images, ids, topics)

            frozen = parameter_hash(self.model.params)
            with ad.no_grad():
                generated = self.model._generate_greedy(
                    memory, self.model.config.max_len, with_attention=False
                )
            if parameter_hash(self.model.params) != frozen:
                raise NumericsError("parameter buffers changed during frozen generation")
            self.freeze_checks_passed += 1

            targets = ids[:, 1:]
            truth = self.comparer.truth_rows(targets)
            if self.config.sc_mode == "soft":
                probs = ad.softmax(logits, axis=-1)
                loss_sc = self.comparer.soft_loss(probs, targets, truth)
                sc_value = float(loss_sc.data)
                total = ad.add(
                    ad.add(ad.mul(loss_kmve, lam1), ad.mul(loss_tf, lam2)),
                    ad.mul(loss_sc, lam3),
                )
            else:
                sc_value = self.comparer.discrete_loss(
                    [g.token_ids for g in generated], truth
                )
                total = ad.add(ad.mul(loss_kmve, lam1), ad.mul(loss_tf, lam2))

            kmve_value, tf_value = float(loss_kmve.data), float(loss_tf.data)
            self._check_finite(lam1 * kmve_value + lam2 * tf_value + lam3 * sc_value, epoch)
            ad.backward(total)
            self.optimizer.step(self.lr)
            self.optimizer.zero_grad()
            sums += (kmve_value, tf_value, sc_value)

        means = sums / max(len(batches), 1)
        mean_loss = lam1 * means[0] + lam2 * means[1] + lam3 * means[2]
        return EpochRecord(
            epoch=epoch,
            mean_loss=float(mean_loss),
            kmve=float(means[0]),
            tf=float(means[1]),
            sc=float(means[2]),
            val_loss=float("nan"),
            lr_kmve=self.lr["visual"],
            lr_rg=self.lr["generator"],
        )

    def validation_loss(self, examples: Sequence[TrainExample]) -> float:
        """Weighted loss with the similarity term from real generated reports.

        The topic component covers only examples that carry a pseudo-label
        (validation reports usually do not).
        """
        lam1, lam2, lam3 = self.config.lambdas
        total = 0.0
        batches = _chunk(examples, self.config.batch_size)
        for batch in batches:
            images, ids, topics = _pad_batch(batch)
            with ad.no_grad():
                vis = self.model.encode_images(images)
                memory = self.model.encode_memory(vis)
                logits, _ = self.model.decode(memory, ids[:, :-1])
                tf_value = float(self.model.tf_loss(logits, ids[:, 1:]).data)
                labeled = topics >= 0
                kmve_value = 0.0
                if labeled.any():
                    pooled = Tensor(vis.pooled_pair.data[labeled])
                    kmve_value = float(self.model.kmve_loss(pooled, topics[labeled]).data)
                generated = self.model._generate_greedy(
                    memory, self.model.config.max_len, with_attention=False
                )
            truth = self.comparer.truth_rows(ids[:, 1:])
            sc_value = self.comparer.discrete_loss([g.token_ids for g in generated], truth)
            total += lam1 * kmve_value + lam2 * tf_value + lam3 * sc_value
        return total / max(len(batches), 1)

    def fit(
        self,
        train_examples: Sequence[TrainExample],
        val_examples: Sequence[TrainExample],
    ) -> FitResult:
        """Train with per-epoch checkpoints, lr decay and early stopping."""
        if not train_examples or not val_examples:
            raise ConfigError("train and validation splits must both be non-empty")
        stopper = EarlyStopper(self.config.patience)
        records: list[EpochRecord] = []
        rng = rng_from_seed(self.config.seed)
        best_path = self.checkpoint_dir / "model.ckpt" if self.checkpoint_dir else None
        log_handle = open(self.log_path, "w", encoding="utf-8") if self.log_path else None
        try:
            for epoch in range(1, self.config.max_epochs + 1):
                order = rng.permutation(len(train_examples))
                shuffled = [train_examples[i] for i in order]
                batches = _chunk(shuffled, self.config.batch_size)
                record = self.train_epoch(batches, epoch)
                record.val_loss = self.validation_loss(val_examples)
                self._check_finite(record.val_loss, epoch)
                records.append(record)
                if log_handle:
                    log_handle.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
                    log_handle.flush()
                if self.checkpoint_dir:
                    name = f"epoch_{epoch:04d}.ckpt" if self.keep_all_checkpoints else "last.ckpt"
                    self._last_checkpoint = self.checkpoint_dir / name
                    self.model.save(self._last_checkpoint, self.vocab_tokens)
                improved = record.val_loss < stopper.best_value
                stop = stopper.update(epoch, record.val_loss)
                if improved and best_path:
                    self.model.save(best_path, self.vocab_tokens)
                self.lr = {k: v * self.config.lr_decay_per_epoch for k, v in self.lr.items()}
                if stop:
                    break
        finally:
            if log_handle:
                log_handle.close()
        return FitResult(
            records=records,
            best_epoch=stopper.best_epoch,
            best_val_loss=stopper.best_value,
            best_path=best_path,
            last_path=self._last_checkpoint,
        )


def _chunk(items: Sequence, size: int) -> list[list]:
    return [list(items[i : i + size]) for i in range(0, len(items), size)]
