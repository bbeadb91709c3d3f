import itertools
import math
from collections import Counter
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonogen.errors import PairingError
from sonogen.metrics import (
    EntityLexicon,
    bleu,
    builtin_lexicon,
    ce_metrics,
    evaluate_pairs,
    meteor_exact,
    rouge_l,
)

# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------


def oracle_bleu(cands, refs, max_n=4):
    """Naive corpus BLEU: enumerate n-grams with dictionaries."""
    scores = []
    c_total = sum(len(c) for c in cands)
    r_total = sum(len(r) for r in refs)
    bp = min(1.0, math.exp(1 - r_total / c_total)) if c_total else 0.0
    precisions = []
    for n in range(1, max_n + 1):
        match = 0
        total = 0
        for cand, ref in zip(cands, refs):
            cg = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
            rg = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
            total += len(cg)
            used = Counter()
            for g in cg:
                if used[g] < rg[g]:
                    used[g] += 1
                    match += 1
        precisions.append(match / total if total else 0.0)
    for k in range(1, max_n + 1):
        if 0.0 in precisions[:k]:
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in precisions[:k]) / k))
    return scores


def oracle_lcs(a, b):
    """Recursive memoized longest common subsequence."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def oracle_rouge_l(cands, refs):
    total = 0.0
    for cand, ref in zip(cands, refs):
        lcs = oracle_lcs(cand, ref)
        p = lcs / len(cand) if cand else 0.0
        r = lcs / len(ref) if ref else 0.0
        total += 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return total / len(cands)


def oracle_min_chunks(cand, ref):
    """Exhaustive search over all maximum exact-match alignments."""
    need = Counter(
        {t: min(c, Counter(ref)[t]) for t, c in Counter(cand).items() if Counter(ref)[t]}
    )
    matches = sum(need.values())
    if matches == 0:
        return 0, 0
    positions = {t: [j for j, x in enumerate(ref) if x == t] for t in need}
    cand_slots = {t: [i for i, x in enumerate(cand) if x == t] for t in need}
    best = [matches + 1]

    ordered_types = sorted(need)

    def alignments():
        # Choose which candidate slots are matched per type, then every
        # injective assignment of those slots to reference positions.
        slot_choices = [
            itertools.combinations(cand_slots[t], need[t]) for t in ordered_types
        ]
        for chosen in itertools.product(*slot_choices):
            ref_choices = [
                itertools.permutations(positions[t], need[t]) for t in ordered_types
            ]
            for assigned in itertools.product(*ref_choices):
                pairs = []
                for slots, refs_for in zip(chosen, assigned):
                    pairs.extend(zip(slots, refs_for))
                yield sorted(pairs)

    for pairs in alignments():
        ref_used = [j for _, j in pairs]
        if len(set(ref_used)) < len(ref_used):
            continue
        chunks = 0
        prev = None
        for i, j in pairs:
            chunks += 0 if (prev is not None and prev == (i - 1, j - 1)) else 1
            prev = (i, j)
        best[0] = min(best[0], chunks)
    return matches, best[0]


def oracle_meteor(cands, refs, alpha=0.9, beta=3.0, gamma=0.5):
    total = 0.0
    for cand, ref in zip(cands, refs):
        m, chunks = oracle_min_chunks(cand, ref)
        if m == 0:
            continue
        p, r = m / len(cand), m / len(ref)
        f_mean = p * r / (alpha * p + (1 - alpha) * r)
        total += f_mean * (1 - gamma * (chunks / m) ** beta)
    return total / len(cands)


def token_pairs(seed, n_pairs, alphabet=("a", "b", "c", "d"), max_len=8):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        lc = int(rng.integers(1, max_len + 1))
        lr = int(rng.integers(1, max_len + 1))
        pairs.append(
            (
                [alphabet[i] for i in rng.integers(0, len(alphabet), lc)],
                [alphabet[i] for i in rng.integers(0, len(alphabet), lr)],
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


class TestBleu:
    def test_identity(self):
        tokens = ["the", "breast", "gland", "is", "clear"]
        assert bleu([tokens], [list(tokens)]) == [1.0, 1.0, 1.0, 1.0]

    def test_hand_counted_overlap(self):
        scores = bleu([["a", "b", "c"]], [["a", "b", "d"]])
        assert abs(scores[0] - 2 / 3) < 1e-12
        assert abs(scores[1] - math.sqrt(2 / 3 * 1 / 2)) < 1e-12

    def test_brevity_penalty(self):
        scores = bleu([["a"]], [["a", "b", "c", "d"]])
        assert abs(scores[0] - math.exp(1 - 4)) < 1e-12

    def test_matches_oracle(self):
        pairs = token_pairs(0, 30)
        cands = [c for c, _ in pairs]
        refs = [r for _, r in pairs]
        ours = bleu(cands, refs)
        theirs = oracle_bleu(cands, refs)
        assert np.allclose(ours, theirs, atol=1e-9)

    def test_non_increasing_in_k(self):
        for seed in range(5):
            pairs = token_pairs(100 + seed, 10)
            scores = bleu([c for c, _ in pairs], [r for _, r in pairs])
            assert all(scores[i] >= scores[i + 1] - 1e-12 for i in range(3))

    def test_pairing_error(self):
        with pytest.raises(PairingError):
            bleu([["a"]], [])
        with pytest.raises(PairingError):
            bleu([], [])

    def test_order_invariance_all_metrics(self):
        pairs = token_pairs(7, 12)
        cands = [c for c, _ in pairs]
        refs = [r for _, r in pairs]
        lexicon = builtin_lexicon("breast")
        assert bleu(cands, refs) == bleu(cands[::-1], refs[::-1])
        # Means accumulate in corpus order, so permutations agree to the ulp.
        assert rouge_l(cands, refs) == pytest.approx(rouge_l(cands[::-1], refs[::-1]), abs=1e-12)
        assert meteor_exact(cands, refs) == pytest.approx(
            meteor_exact(cands[::-1], refs[::-1]), abs=1e-12)
        forward = ce_metrics(cands, refs, lexicon)
        backward = ce_metrics(cands[::-1], refs[::-1], lexicon)
        assert forward == pytest.approx(backward, abs=1e-12)


class TestRougeL:
    def test_identity(self):
        assert rouge_l([["x", "y"]], [["x", "y"]]) == 1.0

    def test_hand_example(self):
        value = rouge_l([["a", "b", "c", "d"]], [["a", "c", "d"]])
        assert abs(value - 2 * 0.75 * 1.0 / 1.75) < 1e-12

    def test_disjoint(self):
        assert rouge_l([["a", "b"]], [["c", "d"]]) == 0.0

    def test_matches_oracle(self):
        pairs = token_pairs(1, 40)
        ours = rouge_l([c for c, _ in pairs], [r for _, r in pairs])
        theirs = oracle_rouge_l([c for c, _ in pairs], [r for _, r in pairs])
        assert abs(ours - theirs) < 1e-9


class TestMeteor:
    def test_single_token(self):
        assert abs(meteor_exact([["a"]], [["a"]]) - 0.5) < 1e-12

    def test_four_token_identity(self):
        expected = 1.0 * (1 - 0.5 * (1 / 4) ** 3)
        assert abs(meteor_exact([["a", "b", "c", "d"]], [["a", "b", "c", "d"]]) - expected) < 1e-12

    def test_zero_overlap(self):
        assert meteor_exact([["a"]], [["z"]]) == 0.0

    def test_matches_exhaustive_oracle(self):
        pairs = token_pairs(2, 25, alphabet=("a", "b", "c"), max_len=6)
        ours = meteor_exact([c for c, _ in pairs], [r for _, r in pairs])
        theirs = oracle_meteor([c for c, _ in pairs], [r for _, r in pairs])
        assert abs(ours - theirs) < 1e-9

    @given(st.lists(st.sampled_from("ab"), min_size=1, max_size=6),
           st.lists(st.sampled_from("ab"), min_size=1, max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_chunks_match_oracle_property(self, cand, ref):
        from sonogen.metrics import _min_chunks

        assert _min_chunks(cand, ref) == oracle_min_chunks(cand, ref)


class TestCeMetrics:
    @pytest.fixture()
    def lexicon(self):
        return EntityLexicon(
            entities=(
                ("breast", ("breast",)),
                ("nodule", ("nodule", "nodules")),
                ("lymph node", ("lymph node",)),
            )
        )

    def test_exact_match(self, lexicon):
        scores = ce_metrics([["breast", "nodule"]], [["nodule", "in", "breast"]], lexicon)
        assert scores == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}

    def test_partial_recall(self, lexicon):
        scores = ce_metrics([["breast", "clear"]], [["breast", "nodule", "echo"]], lexicon)
        assert scores["accuracy"] == 0.0
        assert scores["precision"] == 1.0
        assert scores["recall"] == 0.5
        assert abs(scores["f1"] - 2 / 3) < 1e-12

    def test_phrase_matching(self, lexicon):
        assert lexicon.mentions(["enlarged", "lymph", "node", "seen"]) == {2}
        assert lexicon.mentions(["lymph", "only"]) == set()

    def test_empty_sets_convention(self, lexicon):
        scores = ce_metrics([["plain", "text"]], [["nothing", "here"]], lexicon)
        assert scores == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}

    def test_superset_prediction_gives_full_recall(self, lexicon):
        rng = np.random.default_rng(3)
        names = ["breast", "nodule", "lymph node"]
        for _ in range(20):
            truth_entities = [n for n in names if rng.random() < 0.5]
            extra = [n for n in names if rng.random() < 0.5]
            truth_tokens = " ".join(truth_entities).split()
            pred_tokens = " ".join(truth_entities + extra).split()
            scores = ce_metrics([pred_tokens or ["x"]], [truth_tokens or ["y"]], lexicon)
            assert scores["recall"] == 1.0

    def test_breast_lexicon_contents(self):
        lexicon = builtin_lexicon("breast")
        assert lexicon.names == (
            "breast", "gland", "CDFI", "axilla", "echogenicity", "nodule",
            "lymph node", "duct", "lesion", "subcutaneous fat layer", "tumour",
        )

    def test_json_round_trip(self, lexicon, tmp_path):
        path = tmp_path / "lex.json"
        path.write_text(__import__("json").dumps(lexicon.to_json()), encoding="utf-8")
        assert EntityLexicon.load(path) == lexicon


def test_evaluate_pairs_bundles_everything():
    lexicon = builtin_lexicon("breast")
    cands = [["breast", "gland", "clear"], ["nodule", "seen"]]
    refs = [["breast", "gland", "clear"], ["nodule", "visible"]]
    report = evaluate_pairs(cands, refs, lexicon)
    assert report.n_pairs == 2
    assert 0.0 <= report.rouge_l <= 1.0
    assert all(0.0 <= v <= 1.0 for v in report.bleu)
    assert set(report.ce) == {"accuracy", "precision", "recall", "f1"}
    row = report.to_csv_row()
    assert row.count(",") == report.CSV_HEADER.count(",")
