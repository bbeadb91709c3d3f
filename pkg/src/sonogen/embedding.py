"""Report embedding: bag-of-words, TF-IDF and pluggable external providers.

Embedders follow the scikit-learn estimator protocol (``fit`` learns corpus
statistics, ``transform`` produces a dense float32 matrix with one row per
report). Sentinel tokens are never counted and the four reserved vocabulary
entries are excluded from the feature columns.
"""

from __future__ import annotations

import csv
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .corpus import TokenizedReport, Vocabulary
from .errors import ConfigError, EmbedderUnavailable, EmptyCorpus
from .validation import as_float32

N_RESERVED = 4


@dataclass
class EmbeddingMatrix:
    """Dense report embeddings with their method tag and row ids."""

    rows: np.ndarray
    method_tag: str
    report_ids: tuple[str, ...]

    def __post_init__(self):
        self.rows = as_float32(self.rows, "rows", ndim=2)
        if self.rows.shape[0] != len(self.report_ids):
            raise ConfigError("row count must match the number of report ids")
        if self.rows.shape[1] == 0:
            raise ConfigError("embedding width must be positive")


def _bodies(reports: Sequence[TokenizedReport]) -> list[tuple[str, ...]]:
    if len(reports) == 0:
        raise EmptyCorpus("no reports to embed")
    return [rep.body for rep in reports]


class BowEmbedder(TransformerMixin, BaseEstimator):
    """Raw token-count vectors over the non-reserved vocabulary.

    Parameters
    ----------
    vocabulary: optional prebuilt :class:`Vocabulary`. When absent, ``fit``
        builds one from the reports it receives (training split only by
        convention).
    """

    method_tag = "bow"

    def __init__(self, vocabulary: Vocabulary | None = None):
        self.vocabulary = vocabulary

    def fit(self, reports: Sequence[TokenizedReport], y=None):
        _bodies(reports)
        self.vocabulary_ = self.vocabulary or Vocabulary.build(reports)
        self.feature_tokens_ = self.vocabulary_.tokens[N_RESERVED:]
        self._column = {t: i for i, t in enumerate(self.feature_tokens_)}
        return self

    def _check_fitted(self):
        if not hasattr(self, "vocabulary_"):
            raise NotFittedError(f"{type(self).__name__} must be fitted before transform")

    def _count_rows(self, reports: Sequence[TokenizedReport]) -> np.ndarray:
        out = np.zeros((len(reports), len(self.feature_tokens_)), dtype=np.float32)
        for i, body in enumerate(_bodies(reports)):
            for token, count in Counter(body).items():
                j = self._column.get(token)
                if j is not None:
                    out[i, j] = count
        return out

    def transform(self, reports: Sequence[TokenizedReport]) -> np.ndarray:
        self._check_fitted()
        return self._count_rows(reports)

    def embed(self, reports: Sequence[TokenizedReport]) -> EmbeddingMatrix:
        return EmbeddingMatrix(
            rows=self.transform(reports),
            method_tag=self.method_tag,
            report_ids=tuple(r.id for r in reports),
        )


class TfidfEmbedder(BowEmbedder):
    """Count vectors weighted by smoothed inverse document frequency.

    ``idf(j) = ln((1 + n) / (1 + df_j)) + 1`` and every nonzero row is
    L2-normalized; all-zero rows are left at zero.
    """

    method_tag = "tfidf"

    def fit(self, reports: Sequence[TokenizedReport], y=None):
        super().fit(reports)
        n = len(reports)
        df = np.zeros(len(self.feature_tokens_), dtype=np.float64)
        for body in _bodies(reports):
            for token in set(body):
                j = self._column.get(token)
                if j is not None:
                    df[j] += 1
        self.idf_ = (np.log((1.0 + n) / (1.0 + df)) + 1.0).astype(np.float32)
        return self

    def _check_fitted(self):
        if not hasattr(self, "idf_"):
            raise NotFittedError(f"{type(self).__name__} must be fitted before transform")

    def transform(self, reports: Sequence[TokenizedReport]) -> np.ndarray:
        self._check_fitted()
        rows = self._count_rows(reports) * self.idf_
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        np.divide(rows, norms, out=rows, where=norms > 0)
        return rows


Provider = Callable[[Sequence[tuple[str, ...]]], np.ndarray]


class ExternalEmbedder(TransformerMixin, BaseEstimator):
    """Sentence-embedding adapter for pretrained providers.

    ``provider`` receives the sentinel-free token sequences and must return a
    fixed-width 2-D array. Without a provider this falls back to
    :class:`TfidfEmbedder`, bit for bit.
    """

    method_tag = "external"

    def __init__(self, provider: Provider | None = None):
        self.provider = provider

    def fit(self, reports: Sequence[TokenizedReport], y=None):
        self._fallback = None
        if self.provider is None:
            self._fallback = TfidfEmbedder().fit(reports)
        self.n_fit_ = len(reports)
        return self

    def transform(self, reports: Sequence[TokenizedReport]) -> np.ndarray:
        if not hasattr(self, "n_fit_"):
            raise NotFittedError("ExternalEmbedder must be fitted before transform")
        if self._fallback is not None:
            return self._fallback.transform(reports)
        bodies = _bodies(reports)
        try:
            vectors = self.provider(bodies)
        except Exception as exc:
            raise EmbedderUnavailable(f"embedding provider failed: {exc}") from exc
        try:
            arr = np.asarray(vectors, dtype=np.float32)
        except ValueError as exc:
            raise EmbedderUnavailable("provider returned ragged vectors") from exc
        if arr.ndim != 2 or arr.shape[0] != len(bodies):
            raise EmbedderUnavailable(
                f"provider must return one fixed-width vector per report, got shape {arr.shape}"
            )
        return arr

    def embed(self, reports: Sequence[TokenizedReport]) -> EmbeddingMatrix:
        return EmbeddingMatrix(
            rows=self.transform(reports),
            method_tag=self.method_tag,
            report_ids=tuple(r.id for r in reports),
        )


def bow_embed(reports: Sequence[TokenizedReport], vocabulary: Vocabulary) -> EmbeddingMatrix:
    return BowEmbedder(vocabulary).fit(reports).embed(reports)


def tfidf_embed(reports: Sequence[TokenizedReport], vocabulary: Vocabulary) -> EmbeddingMatrix:
    return TfidfEmbedder(vocabulary).fit(reports).embed(reports)


def external_embed(
    reports: Sequence[TokenizedReport], provider: Provider | None = None
) -> EmbeddingMatrix:
    return ExternalEmbedder(provider).fit(reports).embed(reports)


# --------------------------------------------------------------------------
# Matrix persistence: CSV with a header row, or flat little-endian binary.
# --------------------------------------------------------------------------

_MAGIC = b"EMB1"


def save_matrix_csv(path: str | Path, rows: np.ndarray, header: Sequence[str] | None = None) -> None:
    rows = as_float32(rows, "rows", ndim=2)
    names = list(header) if header is not None else [f"dim{i}" for i in range(rows.shape[1])]
    if len(names) != rows.shape[1]:
        raise ConfigError("header length must match the number of columns")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def load_matrix_csv(path: str | Path) -> tuple[np.ndarray, list[str]]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(v) for v in row] for row in reader if row]
    return np.asarray(data, dtype=np.float32), header


def save_matrix_bin(path: str | Path, rows: np.ndarray) -> None:
    """16-byte header (magic, u32 rows, u32 cols, u32 pad) then f32 row-major."""
    rows = as_float32(rows, "rows", ndim=2)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", rows.shape[0], rows.shape[1], 0))
        fh.write(rows.astype("<f4").tobytes())


def load_matrix_bin(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != _MAGIC:
            raise ConfigError(f"{path} is not an EMB1 matrix file")
        n, m, _ = struct.unpack("<III", head[4:])
        data = np.frombuffer(fh.read(4 * n * m), dtype="<f4")
    if data.size != n * m:
        raise ConfigError(f"{path} is truncated")
    return data.reshape(n, m).copy()
