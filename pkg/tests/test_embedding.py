import math
from collections import Counter

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

import sonogen.corpus as corpus
import sonogen.embedding as emb
from sonogen.errors import EmbedderUnavailable, EmptyCorpus


def report(text, rid="r"):
    return corpus.tokenize(text, report_id=rid)


@pytest.fixture()
def two_doc_corpus():
    return [report("nodule seen", "a"), report("nodule clear", "b")]


class TestBow:
    def test_counts(self, two_doc_corpus):
        vocab = corpus.Vocabulary.build(two_doc_corpus)
        matrix = emb.bow_embed(two_doc_corpus, vocab)
        tokens = vocab.tokens[emb.N_RESERVED:]
        assert tokens == ("clear", "nodule", "seen")
        assert np.array_equal(matrix.rows, [[0, 1, 1], [1, 1, 0]])
        assert matrix.method_tag == "bow"

    def test_unk_only_report_is_zero_row(self, two_doc_corpus):
        vocab = corpus.Vocabulary.build(two_doc_corpus)
        embedder = emb.BowEmbedder(vocab).fit(two_doc_corpus)
        rows = embedder.transform([report("totally different words", "c")])
        assert np.all(rows == 0)

    def test_row_sums_equal_body_lengths(self):
        syn = corpus.generate_synthetic_corpus(4, 24, 5)
        reports = [report(corpus.normalize_measurements(r.report_text), r.id) for r in syn.records]
        matrix = emb.bow_embed(reports, corpus.Vocabulary.build(reports))
        for rep, row in zip(reports, matrix.rows):
            assert row.sum() == len(rep.body)

    def test_row_matches_hand_count(self):
        reports = [report("a b a . c", "x"), report("c c b", "y")]
        vocab = corpus.Vocabulary.build(reports)
        matrix = emb.bow_embed(reports, vocab)
        for i, rep in enumerate(reports):
            counts = Counter(rep.body)
            expected = [counts.get(t, 0) for t in vocab.tokens[emb.N_RESERVED:]]
            assert np.array_equal(matrix.rows[i], expected)

    def test_same_template_rows_identical_up_to_slots(self):
        syn = corpus.generate_synthetic_corpus(5, 40, 9)
        reports = [report(corpus.normalize_measurements(r.report_text), r.id) for r in syn.records]
        vocab = corpus.Vocabulary.build(reports)
        matrix = emb.bow_embed(reports, vocab)
        feature_tokens = vocab.tokens[emb.N_RESERVED:]
        by_template = {}
        for rec, row in zip(syn.records, matrix.rows):
            by_template.setdefault(syn.labels[rec.id], []).append(row)
        # Columns that differ within one template must all be filler slots;
        # every trunk token count is identical across the template's records.
        fillers = set(corpus._FILLERS)
        for rows in by_template.values():
            rows = np.stack(rows)
            differing = np.flatnonzero(~np.all(rows == rows[0], axis=0))
            assert all(feature_tokens[j] in fillers for j in differing)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            emb.bow_embed([], corpus.Vocabulary([]))

    def test_not_fitted(self, two_doc_corpus):
        with pytest.raises(NotFittedError):
            emb.BowEmbedder().transform(two_doc_corpus)


class TestTfidf:
    def test_hand_idf_values(self, two_doc_corpus):
        embedder = emb.TfidfEmbedder().fit(two_doc_corpus)
        tokens = embedder.feature_tokens_
        idf = dict(zip(tokens, embedder.idf_))
        assert math.isclose(idf["nodule"], math.log(3 / 3) + 1, rel_tol=1e-6)
        assert math.isclose(idf["seen"], math.log(3 / 2) + 1, rel_tol=1e-6)
        assert abs(idf["seen"] - 1.4055) < 1e-4

    def test_rows_l2_normalized(self):
        syn = corpus.generate_synthetic_corpus(3, 21, 2)
        reports = [report(corpus.normalize_measurements(r.report_text), r.id) for r in syn.records]
        matrix = emb.tfidf_embed(reports, corpus.Vocabulary.build(reports))
        norms = np.linalg.norm(matrix.rows, axis=1)
        assert np.all(np.abs(norms - 1.0) < 1e-6)

    def test_zero_row_left_zero(self, two_doc_corpus):
        embedder = emb.TfidfEmbedder().fit(two_doc_corpus)
        rows = embedder.transform([report("unrelated words only", "z")])
        assert np.all(rows == 0)

    def test_token_in_every_doc_has_min_idf(self, two_doc_corpus):
        embedder = emb.TfidfEmbedder().fit(two_doc_corpus)
        idf = dict(zip(embedder.feature_tokens_, embedder.idf_))
        assert math.isclose(idf["nodule"], 1.0, rel_tol=1e-6)
        assert all(v >= 1.0 - 1e-6 for v in embedder.idf_)


class TestExternal:
    def test_default_provider_matches_tfidf_bitwise(self, two_doc_corpus):
        via_external = emb.external_embed(two_doc_corpus)
        via_tfidf = emb.TfidfEmbedder().fit(two_doc_corpus).transform(two_doc_corpus)
        assert via_external.rows.tobytes() == via_tfidf.tobytes()
        assert via_external.method_tag == "external"

    def test_fixed_width_provider(self, two_doc_corpus):
        def provider(bodies):
            return np.ones((len(bodies), 768), dtype=np.float32)

        matrix = emb.external_embed(two_doc_corpus, provider)
        assert matrix.rows.shape == (2, 768)

    def test_ragged_provider_rejected(self, two_doc_corpus):
        def provider(bodies):
            return [[1.0, 2.0], [1.0]]

        with pytest.raises(EmbedderUnavailable):
            emb.external_embed(two_doc_corpus, provider)

    def test_failing_provider_rejected(self, two_doc_corpus):
        def provider(bodies):
            raise RuntimeError("backend down")

        with pytest.raises(EmbedderUnavailable):
            emb.external_embed(two_doc_corpus, provider)


def test_permutation_permutes_rows():
    syn = corpus.generate_synthetic_corpus(4, 20, 8)
    reports = [report(corpus.normalize_measurements(r.report_text), r.id) for r in syn.records]
    vocab = corpus.Vocabulary.build(reports)
    forward = emb.tfidf_embed(reports, vocab)
    perm = np.random.default_rng(0).permutation(len(reports))
    shuffled = emb.tfidf_embed([reports[i] for i in perm], vocab)
    assert np.array_equal(shuffled.rows, forward.rows[perm])
    assert shuffled.report_ids == tuple(forward.report_ids[i] for i in perm)


class TestPersistence:
    def test_csv_round_trip(self, tmp_path):
        rows = np.array([[1.5, -2.25], [0.0, 3.125]], dtype=np.float32)
        path = tmp_path / "m.csv"
        emb.save_matrix_csv(path, rows, header=["alpha", "beta"])
        loaded, header = emb.load_matrix_csv(path)
        assert header == ["alpha", "beta"]
        assert np.array_equal(loaded, rows)

    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        rows = rng.normal(size=(7, 5)).astype(np.float32)
        path = tmp_path / "m.emb"
        emb.save_matrix_bin(path, rows)
        assert np.array_equal(emb.load_matrix_bin(path), rows)
        header = path.read_bytes()[:16]
        assert header[:4] == b"EMB1"
        assert int.from_bytes(header[4:8], "little") == 7
        assert int.from_bytes(header[8:12], "little") == 5
