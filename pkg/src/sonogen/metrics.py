"""Report-quality metrics: BLEU, ROUGE-L, METEOR and entity-level scores.

All text metrics operate on token sequences with sentinels already stripped.
The METEOR variant uses exact unigram matching only (no stemming or synonym
table): alignments maximize matches and, among those, minimize the number of
chunks.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, PairingError

TokenSeq = Sequence[str]

_METEOR_ALPHA = 0.9
_METEOR_BETA = 3.0
_METEOR_GAMMA = 0.5
_CHUNK_SEARCH_BUDGET = 200_000


def _check_pairs(candidates, references):
    if len(candidates) != len(references):
        raise PairingError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    if len(candidates) == 0:
        raise PairingError("no candidate/reference pairs to score")


def _ngrams(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq], max_n: int = 4) -> list[float]:
    """Corpus-level BLEU-1..max_n with clipped counts and brevity penalty.

    ``BLEU-k = BP * exp(mean of ln p_n for n <= k)``; any zero precision
    zeroes every k that includes it. ``BP = min(1, exp(1 - r/c))``.
    """
    _check_pairs(candidates, references)
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cand_counts = _ngrams(cand, n)
            ref_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if cand_len == 0:
        return [0.0] * max_n
    bp = min(1.0, math.exp(1.0 - ref_len / cand_len))
    precisions = [m / t if t > 0 else 0.0 for m, t in zip(matches, totals)]
    scores = []
    for k in range(1, max_n + 1):
        if any(p == 0.0 for p in precisions[:k]):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in precisions[:k]) / k))
    return scores


def _lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            current.append(prev[j - 1] + 1 if x == y else max(prev[j], current[j - 1]))
        prev = current
    return prev[-1]


def rouge_l(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq]) -> float:
    """Mean per-pair LCS F-score: ``F = 2PR / (P + R)``."""
    _check_pairs(candidates, references)
    total = 0.0
    for cand, ref in zip(candidates, references):
        lcs = _lcs_length(cand, ref)
        p = lcs / len(cand) if cand else 0.0
        r = lcs / len(ref) if ref else 0.0
        total += 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return total / len(candidates)


def _greedy_alignment_chunks(cand: TokenSeq, ref: TokenSeq, need: Counter) -> int:
    """Chunk count of a left-to-right alignment preferring chunk continuation."""
    by_token: dict[str, list[int]] = {}
    for j, tok in enumerate(ref):
        by_token.setdefault(tok, []).append(j)
    used = set()
    remaining = Counter(need)
    chunks = 0
    prev = None  # (cand index, ref index) of last match
    for i, tok in enumerate(cand):
        if remaining[tok] <= 0:
            continue
        positions = [j for j in by_token.get(tok, ()) if j not in used]
        if not positions:
            continue
        if prev is not None and prev[0] == i - 1 and prev[1] + 1 in positions:
            j = prev[1] + 1
        else:
            j = positions[0]
        chunks += 0 if (prev is not None and prev == (i - 1, j - 1)) else 1
        used.add(j)
        remaining[tok] -= 1
        prev = (i, j)
    return chunks


def _min_chunks(cand: TokenSeq, ref: TokenSeq) -> tuple[int, int]:
    """(matches, minimum chunks) over all maximum exact-match alignments.

    Branch-and-bound over candidate positions; a greedy alignment seeds the
    incumbent so near-identical pairs prune immediately. The search budget
    caps pathological repeated-token inputs, falling back to the incumbent.
    """
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    need = Counter({t: min(c, ref_counts[t]) for t, c in cand_counts.items() if ref_counts[t]})
    matches = sum(need.values())
    if matches == 0:
        return 0, 0

    best = [_greedy_alignment_chunks(cand, ref, need)]
    by_token: dict[str, list[int]] = {}
    for j, tok in enumerate(ref):
        by_token.setdefault(tok, []).append(j)
    suffix: list[Counter] = [Counter() for _ in range(len(cand) + 1)]
    for i in range(len(cand) - 1, -1, -1):
        suffix[i] = suffix[i + 1].copy()
        suffix[i][cand[i]] += 1
    budget = [_CHUNK_SEARCH_BUDGET]

    def dfs(i: int, used: set, remaining: Counter, chunks: int, prev: tuple[int, int] | None):
        if chunks >= best[0] or budget[0] <= 0:
            return
        budget[0] -= 1
        if i == len(cand):
            if not +remaining:
                best[0] = min(best[0], chunks)
            return
        tok = cand[i]
        if remaining[tok] > 0:
            options = [j for j in by_token[tok] if j not in used]
            if prev is not None and prev[0] == i - 1 and prev[1] + 1 in options:
                options.remove(prev[1] + 1)
                options.insert(0, prev[1] + 1)
            for j in options:
                extra = 0 if (prev is not None and prev == (i - 1, j - 1)) else 1
                used.add(j)
                remaining[tok] -= 1
                dfs(i + 1, used, remaining, chunks + extra, (i, j))
                used.remove(j)
                remaining[tok] += 1
        # Skipping is allowed only when later occurrences still cover the need.
        if suffix[i + 1][tok] >= remaining[tok]:
            dfs(i + 1, used, remaining, chunks, prev)

    dfs(0, set(), Counter(need), 0, None)
    return matches, best[0]


def meteor_exact(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq]) -> float:
    """Exact-match METEOR: recall-weighted F-mean with a fragmentation penalty.

    ``F = PR / (alpha P + (1 - alpha) R)``, penalty
    ``gamma * (chunks / matches) ** beta``; score is the mean over pairs.
    """
    _check_pairs(candidates, references)
    total = 0.0
    for cand, ref in zip(candidates, references):
        m, chunks = _min_chunks(cand, ref)
        if m == 0 or not cand or not ref:
            continue
        p = m / len(cand)
        r = m / len(ref)
        f_mean = p * r / (_METEOR_ALPHA * p + (1 - _METEOR_ALPHA) * r)
        penalty = _METEOR_GAMMA * (chunks / m) ** _METEOR_BETA
        total += f_mean * (1.0 - penalty)
    return total / len(candidates)


# --------------------------------------------------------------------------
# Clinical efficacy metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EntityLexicon:
    """Named entities with the token phrases that signal a mention."""

    entities: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        if len(self.entities) == 0:
            raise ConfigError("lexicon must contain at least one entity")
        for name, forms in self.entities:
            if not forms:
                raise ConfigError(f"entity {name!r} has no surface forms")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entities)

    def mentions(self, tokens: TokenSeq) -> set[int]:
        """Indices of entities whose surface form occurs in the token list."""
        lowered = [t.lower() for t in tokens]
        found = set()
        for idx, (_, forms) in enumerate(self.entities):
            for form in forms:
                phrase = form.lower().split()
                span = len(phrase)
                if any(lowered[i : i + span] == phrase
                       for i in range(len(lowered) - span + 1)):
                    found.add(idx)
                    break
        return found

    def to_json(self) -> dict:
        return {
            "entities": [
                {"name": name, "surface_forms": list(forms)} for name, forms in self.entities
            ]
        }

    @classmethod
    def from_json(cls, payload: dict) -> "EntityLexicon":
        return cls(
            entities=tuple(
                (e["name"], tuple(e["surface_forms"])) for e in payload["entities"]
            )
        )

    @classmethod
    def load(cls, path: str | Path) -> "EntityLexicon":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def builtin_lexicon(name: str) -> EntityLexicon:
    """Load one of the packaged organ lexicons (breast, thyroid, liver)."""
    try:
        text = resources.files("sonogen.data").joinpath(f"lexicon_{name}.json").read_text("utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"no builtin lexicon named {name!r}") from exc
    return EntityLexicon.from_json(json.loads(text))


def ce_metrics(
    candidates: Sequence[TokenSeq],
    references: Sequence[TokenSeq],
    lexicon: EntityLexicon,
) -> dict[str, float]:
    """Example-based multi-label scores over entity mentions.

    Accuracy is the exact-match ratio of the full entity vector. Precision
    and recall are vacuously 1 when the predicted (resp. true) entity set is
    empty, which keeps recall at 1 whenever the prediction covers the truth.
    """
    _check_pairs(candidates, references)
    acc = prec = rec = f1 = 0.0
    for cand, ref in zip(candidates, references):
        pred = lexicon.mentions(cand)
        truth = lexicon.mentions(ref)
        overlap = len(pred & truth)
        acc += 1.0 if pred == truth else 0.0
        p = 1.0 if not pred else overlap / len(pred)
        r = 1.0 if not truth else overlap / len(truth)
        prec += p
        rec += r
        f1 += 0.0 if p + r == 0 else 2 * p * r / (p + r)
    n = len(candidates)
    return {"accuracy": acc / n, "precision": prec / n, "recall": rec / n, "f1": f1 / n}


@dataclass
class EvalReport:
    """Aggregated metric values for one prediction set."""

    bleu: tuple[float, float, float, float]
    rouge_l: float
    meteor: float
    ce: dict[str, float]
    n_pairs: int

    def to_json(self) -> dict:
        return {
            "bleu": list(self.bleu),
            "rouge_l": self.rouge_l,
            "meteor": self.meteor,
            "ce": dict(sorted(self.ce.items())),
            "n_pairs": self.n_pairs,
        }

    CSV_HEADER = "n_pairs,bleu1,bleu2,bleu3,bleu4,rouge_l,meteor,ce_accuracy,ce_precision,ce_recall,ce_f1"

    def to_csv_row(self) -> str:
        values = [self.n_pairs, *self.bleu, self.rouge_l, self.meteor,
                  self.ce["accuracy"], self.ce["precision"], self.ce["recall"], self.ce["f1"]]
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def evaluate_pairs(
    candidates: Sequence[TokenSeq],
    references: Sequence[TokenSeq],
    lexicon: EntityLexicon,
) -> EvalReport:
    scores = bleu(candidates, references)
    return EvalReport(
        bleu=tuple(scores),
        rouge_l=rouge_l(candidates, references),
        meteor=meteor_exact(candidates, references),
        ce=ce_metrics(candidates, references, lexicon),
        n_pairs=len(candidates),
    )
