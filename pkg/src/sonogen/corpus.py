"""Report ingestion: normalization, tokenization, splits and synthetic fixtures.

A corpus is a list of :class:`RawRecord` (report text plus exactly two image
references). Reports pass through measurement normalization, then word
segmentation, and finally vocabulary indexing. A deterministic synthetic
corpus generator stands in for clinical data and returns the planted topic
label of every record so downstream clustering can be scored.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DatasetTooSmall, EmptyReport
from .validation import check_positive_int, rng_from_seed

PAD = "<pad>"
START = "<start>"
END = "<end>"
UNK = "<unk>"
RESERVED = (PAD, START, END, UNK)

# Measurement rewriting. A dimension is a decimal number with a cm/mm unit,
# optionally separated by whitespace; dimensions are joined by a times sign.
# Three-dimensional sizes must be rewritten before two-dimensional ones so
# the 2-D pattern cannot eat a prefix of a 3-D size.
_NUM = r"\d+(?:\.\d+)?"
_DIM = _NUM + r"\s*(?:cm|mm)"
_SEP = r"\s*[×x]\s*"
_RULES = (
    (re.compile(_DIM + _SEP + _DIM + _SEP + _DIM), "_3DS_"),
    (re.compile(_DIM + _SEP + _DIM), "_2DS_"),
    (re.compile(r"(?<!\d)(?:1[0-2]|[1-9])\s*o['’]clock position"), "_Loc_"),
    (re.compile(_NUM + r"\s*cm"), "_SCM_"),
    (re.compile(_NUM + r"\s*mm"), "_SMM_"),
)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class RawRecord:
    """One patient case: a report and exactly two image references."""

    id: str
    report_text: str
    image_refs: tuple[str, str]

    def __post_init__(self):
        if len(self.image_refs) != 2:
            raise ConfigError(f"record {self.id!r} must reference exactly 2 images")


@dataclass(frozen=True)
class TokenizedReport:
    """A sentinel-wrapped token sequence for one report."""

    id: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 2 or self.tokens[0] != START or self.tokens[-1] != END:
            raise ConfigError(f"report {self.id!r} is not sentinel-wrapped")
        if START in self.tokens[1:-1] or END in self.tokens[1:-1]:
            raise ConfigError(f"report {self.id!r} has interior sentinel tokens")

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def body(self) -> tuple[str, ...]:
        """Tokens without the start/end sentinels."""
        return self.tokens[1:-1]


def normalize_measurements(text: str) -> str:
    """Replace sizes, clock positions and scalar measurements with tokens.

    Rules are applied longest-match-first (3-D, 2-D, clock position, cm
    scalar, mm scalar); all other text is preserved byte for byte. The
    function is idempotent because no replacement token matches a rule.
    """
    for pattern, token in _RULES:
        text = pattern.sub(token, text)
    return text


def default_segmenter(text: str) -> list[str]:
    """Split on whitespace, keeping punctuation marks as their own tokens."""
    return _TOKEN_RE.findall(text)


def tokenize(
    text: str,
    segmenter: Callable[[str], list[str]] | None = None,
    report_id: str = "",
) -> TokenizedReport:
    """Segment a normalized report and wrap it in start/end sentinels."""
    words = (segmenter or default_segmenter)(text)
    if not words:
        raise EmptyReport(f"report {report_id!r} has no tokens")
    return TokenizedReport(id=report_id, tokens=(START, *words, END))


class Vocabulary:
    """Bijective token index with fixed reserved entries.

    ``<pad>`` is 0, ``<start>`` is 1, ``<end>`` is 2 and ``<unk>`` is 3.
    Remaining tokens are sorted so the mapping does not depend on corpus
    order. Build it from the training split only.
    """

    def __init__(self, tokens: Iterable[str] = ()):
        ordered = [t for t in sorted(set(tokens)) if t not in RESERVED]
        self._tokens: list[str] = list(RESERVED) + ordered
        self._index = {t: i for i, t in enumerate(self._tokens)}

    @classmethod
    def build(cls, reports: Iterable[TokenizedReport]) -> "Vocabulary":
        seen: set[str] = set()
        for report in reports:
            seen.update(report.body)
        return cls(seen)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self._tokens)

    def index(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    def token(self, index: int) -> str:
        return self._tokens[index]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self._tokens[int(i)] for i in ids]

    def to_json(self) -> dict:
        return {"tokens": self._tokens}

    @classmethod
    def from_json(cls, payload: dict) -> "Vocabulary":
        vocab = cls.__new__(cls)
        vocab._tokens = list(payload["tokens"])
        vocab._index = {t: i for i, t in enumerate(vocab._tokens)}
        if vocab._tokens[:4] != list(RESERVED):
            raise ConfigError("vocabulary file lacks the reserved token prefix")
        return vocab


@dataclass(frozen=True)
class SplitManifest:
    """Disjoint train/val/test id sets plus the seed that produced them."""

    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int

    def to_json(self) -> dict:
        return {
            "train": list(self.train_ids),
            "val": list(self.val_ids),
            "test": list(self.test_ids),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SplitManifest":
        return cls(
            train_ids=tuple(payload["train"]),
            val_ids=tuple(payload["val"]),
            test_ids=tuple(payload["test"]),
            seed=int(payload["seed"]),
        )


def split_dataset(
    ids: Sequence[str], ratios: tuple[int, int, int] = (7, 1, 2), seed: int = 0
) -> SplitManifest:
    """Shuffle ids by seed and split train/val/test by the given ratios.

    Validation and test sizes are floored; the remainder goes to train so
    the training split is never starved.
    """
    n = len(ids)
    if n < 10:
        raise DatasetTooSmall(f"need at least 10 ids to split, got {n}")
    if len(set(ids)) != n:
        raise ConfigError("dataset ids must be unique")
    total = sum(ratios)
    n_val = n * ratios[1] // total
    n_test = n * ratios[2] // total
    order = list(ids)
    rng_from_seed(seed).shuffle(order)
    val = order[:n_val]
    test = order[n_val : n_val + n_test]
    train = order[n_val + n_test :]
    return SplitManifest(tuple(train), tuple(val), tuple(test), int(seed))


# --------------------------------------------------------------------------
# Synthetic fixtures
# --------------------------------------------------------------------------

# Fixed bank of report templates. Each template has a distinctive trunk so
# bag-of-words vectors of different templates are far apart, while records of
# the same template differ only in filler words and measurement slots.
TEMPLATE_BANK: tuple[str, ...] = (
    "bilateral breast glands show clear structure . echo distribution is uniform"
    " . no obvious nodule or mass seen . CDFI shows no abnormal blood flow signal",
    "a hypoechoic nodule is seen in the breast at {clock} measuring {size2}"
    " . the border is smooth . CDFI shows spot blood flow signal around the nodule",
    "the thyroid lobe shows a cystic lesion measuring {size3} . internal echo is"
    " clear . posterior enhancement visible . no internal flow detected",
    "liver size and shape are normal . capsule is smooth . intrahepatic duct"
    " system shows no dilation . a strong echo spot of {scm} seen near the gallbladder",
    "subcutaneous fat layer thickness {smm} . glandular tissue shows scattered low"
    " echo areas . axilla lymph node visible with clear cortex",
    "the spleen is enlarged with thickness {scm} . pancreas outline appears fuzzy"
    " . pancreatic duct slightly widened . portal vein diameter within normal range",
    "right kidney shows a round anechoic area of {size2} . the margin is sharp"
    " . bile duct not dilated . no separation of the collecting system",
    "a solid tumour echo is noted in the breast lesion region . shape is irregular"
    " . margin unclear . rich blood flow signal inside",
)

_FILLERS = (
    "routine", "follow", "initial", "review", "standard", "detailed", "bedside",
    "clinic", "morning", "afternoon", "urgent", "repeat", "annual", "screening",
    "outpatient", "inpatient", "baseline", "comparison", "supine", "lateral",
    "oblique", "extended", "focused", "brief",
)

IMAGE_SIZE = 32
_BLOB_RADIUS = 3


@dataclass
class SyntheticCorpus:
    """Records, planted topic labels and rendered image pixels."""

    records: list[RawRecord]
    labels: dict[str, int]
    images: dict[str, np.ndarray] = field(repr=False)
    n_templates: int = 0


def _fill_slots(template: str, rng: np.random.Generator) -> str:
    def dim() -> str:
        return f"{rng.integers(1, 40) / 10:.1f}"

    out = template
    if "{size3}" in out:
        out = out.replace("{size3}", f"{dim()}cm×{dim()}cm×{dim()}cm")
    if "{size2}" in out:
        sep = " × " if rng.integers(2) else "×"
        out = out.replace("{size2}", f"{dim()}cm{sep}{dim()}cm")
    if "{clock}" in out:
        out = out.replace("{clock}", f"{rng.integers(1, 13)} o'clock position")
    if "{scm}" in out:
        out = out.replace("{scm}", f"{dim()}cm")
    if "{smm}" in out:
        out = out.replace("{smm}", f"{dim()}mm")
    return out


def _render_image(template_id: int, n_templates: int, rng: np.random.Generator) -> np.ndarray:
    """Draw bright discs on a per-template background level.

    Background level and disc count are functions of the template id only, so
    templates are separable by mean intensity; disc positions and brightness
    are jittered per image, so every record stays visually unique.
    """
    background = int(round(20 + 200 * (template_id + 0.5) / n_templates))
    img = np.full((IMAGE_SIZE, IMAGE_SIZE), background, dtype=np.uint8)
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    for _ in range(template_id + 1):
        cy = int(rng.integers(_BLOB_RADIUS, IMAGE_SIZE - _BLOB_RADIUS))
        cx = int(rng.integers(_BLOB_RADIUS, IMAGE_SIZE - _BLOB_RADIUS))
        level = min(255, background + 50 + int(rng.integers(-12, 13)))
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= _BLOB_RADIUS**2
        img[mask] = level
    return img


def generate_synthetic_corpus(
    n_templates: int, n_records: int, seed: int = 0, image_dir: str = "images"
) -> SyntheticCorpus:
    """Generate a deterministic report/image corpus with known topic labels.

    Each record takes a template trunk (round-robin over templates), three
    filler words sampled without replacement, and random measurement slot
    values that normalization collapses to shared tokens. The paired images
    encode the template id in background intensity and disc count.
    """
    check_positive_int(n_templates, "n_templates", minimum=2)
    check_positive_int(n_records, "n_records", minimum=1)
    if n_templates > len(TEMPLATE_BANK):
        raise ConfigError(f"n_templates must be <= {len(TEMPLATE_BANK)}")
    if n_records < n_templates:
        raise ConfigError("n_records must be >= n_templates")

    rng = rng_from_seed(seed)
    width = len(str(n_records - 1))
    records: list[RawRecord] = []
    labels: dict[str, int] = {}
    images: dict[str, np.ndarray] = {}
    for i in range(n_records):
        template_id = i % n_templates
        fillers = rng.choice(len(_FILLERS), size=3, replace=False)
        preamble = " ".join(_FILLERS[j] for j in fillers) + " examination ."
        report = preamble + " " + _fill_slots(TEMPLATE_BANK[template_id], rng)
        rec_id = f"rec{i:0{width}d}"
        refs = tuple(f"{image_dir}/{rec_id}_{k}.pgm" for k in range(2))
        for ref in refs:
            images[ref] = _render_image(template_id, n_templates, rng)
        records.append(RawRecord(id=rec_id, report_text=report, image_refs=refs))
        labels[rec_id] = template_id
    return SyntheticCorpus(records, labels, images, n_templates)


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------


def write_corpus_jsonl(path: str | Path, records: Iterable[RawRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            line = json.dumps(
                {"id": rec.id, "report": rec.report_text, "images": list(rec.image_refs)},
                ensure_ascii=False,
                sort_keys=True,
            )
            fh.write(line + "\n")


def read_corpus_jsonl(path: str | Path) -> list[RawRecord]:
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            payload = json.loads(line)
            if payload["id"] in seen:
                raise ConfigError(f"duplicate record id {payload['id']!r}")
            seen.add(payload["id"])
            records.append(
                RawRecord(
                    id=payload["id"],
                    report_text=payload["report"],
                    image_refs=tuple(payload["images"]),
                )
            )
    return records


def write_tokens_jsonl(path: str | Path, reports: Iterable[TokenizedReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(
                json.dumps({"id": rep.id, "tokens": list(rep.tokens)}, ensure_ascii=False)
                + "\n"
            )


def read_tokens_jsonl(path: str | Path) -> list[TokenizedReport]:
    reports = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                payload = json.loads(line)
                reports.append(TokenizedReport(id=payload["id"], tokens=tuple(payload["tokens"])))
    return reports


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write an 8-bit grayscale image as binary PGM (P5)."""
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ConfigError("PGM writer expects a 2-D uint8 array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5" or fields[3] != b"255":
        raise ConfigError(f"{path} is not an 8-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ConfigError(f"{path} is truncated")
    return pixels.reshape(h, w).copy()


def read_image(path: str | Path) -> np.ndarray:
    """Read a grayscale image (PGM or PNG) as a uint8 array."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)
