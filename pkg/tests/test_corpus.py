import numpy as np
import pytest

from plainer import corpus as C
from plainer.corpus import SentencePair, Vocabulary


# ---------------------------------------------------------------------------
# Anonymization
# ---------------------------------------------------------------------------


def test_anonymize_basic_placeholders():
    pair = SentencePair("john lives in paris".split(), "john is in paris".split())
    out, emap = C.anonymize_entities(
        pair,
        normal_spans=[(0, 1, "PER"), (3, 4, "LOC")],
        simple_spans=[(0, 1, "PER"), (3, 4, "LOC")],
    )
    assert out.normal == ["PER@1", "lives", "in", "LOC@1"]
    assert out.simple == ["PER@1", "is", "in", "LOC@1"]
    assert emap == {"PER@1": "john", "LOC@1": "paris"}


def test_anonymize_numbers_by_first_appearance():
    pair = SentencePair("alice met bob".split(), "bob met alice".split())
    out, emap = C.anonymize_entities(
        pair,
        normal_spans=[(0, 1, "PER"), (2, 3, "PER")],
        simple_spans=[(0, 1, "PER"), (2, 3, "PER")],
    )
    assert out.normal == ["PER@1", "met", "PER@2"]
    assert out.simple == ["PER@2", "met", "PER@1"]
    assert emap == {"PER@1": "alice", "PER@2": "bob"}


def test_anonymize_no_annotations_is_identity():
    pair = SentencePair("just words".split(), "words".split())
    out, emap = C.anonymize_entities(pair)
    assert out.normal == pair.normal and out.simple == pair.simple
    assert emap == {}


def test_anonymize_multi_token_span():
    pair = SentencePair("the new york times".split(), "the new york times".split())
    out, emap = C.anonymize_entities(pair, normal_spans=[(1, 3, "LOC")])
    assert out.normal == ["the", "LOC@1", "times"]
    assert emap["LOC@1"] == "new york"


def test_anonymize_idempotent_on_own_output():
    pair = SentencePair("john lives in paris".split(), "john is in paris".split())
    once, _ = C.anonymize_entities(pair, normal_spans=[(0, 1, "PER")], simple_spans=[(0, 1, "PER")])
    twice, emap = C.anonymize_entities(once)
    assert twice.normal == once.normal and twice.simple == once.simple
    assert emap == {}


def test_anonymize_rejects_overlap_and_bad_spans():
    pair = SentencePair("a b c".split(), "a".split())
    with pytest.raises(C.AnnotationError):
        C.anonymize_entities(pair, normal_spans=[(0, 2, "PER"), (1, 3, "LOC")])
    with pytest.raises(C.AnnotationError):
        C.anonymize_entities(pair, normal_spans=[(2, 4, "PER")])
    with pytest.raises(C.AnnotationError):
        C.anonymize_entities(pair, normal_spans=[(0, 1, "XYZ")])


def test_gazetteer_spans_longest_match():
    spans = C.gazetteer_spans(
        "the new york times and york".split(),
        {"new york": "LOC", "york": "LOC"},
    )
    assert spans == [(1, 3, "LOC"), (5, 6, "LOC")]


def test_annotation_sidecar_round_trip(tmp_path):
    path = tmp_path / "spans.tsv"
    path.write_text("0\t0\t1\tPER\n0\t3\t4\tLOC\n2\t1\t2\tORG\n", encoding="utf-8")
    spans = C.load_annotations(path)
    assert spans == {0: [(0, 1, "PER"), (3, 4, "LOC")], 2: [(1, 2, "ORG")]}


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


def corpus_with_counts(counts: dict[str, int]) -> list[SentencePair]:
    tokens = [t for t, c in counts.items() for _ in range(c)]
    return [SentencePair([t], ["x"]) for t in tokens]


def test_vocab_threshold_boundary():
    pairs = corpus_with_counts({"rare": 3, "common": 4})
    vocab = Vocabulary.build(pairs, min_count=3)
    assert vocab.id_of("rare") == C.UNK_ID
    assert vocab.id_of("common") != C.UNK_ID


def test_vocab_min_count_zero_keeps_everything():
    pairs = corpus_with_counts({"a": 1, "b": 2})
    vocab = Vocabulary.build(pairs, min_count=0)
    assert vocab.id_of("a") != C.UNK_ID
    assert vocab.id_of("b") != C.UNK_ID


def test_vocab_rejects_empty_corpus():
    with pytest.raises(C.CorpusError):
        Vocabulary.build([], min_count=3)


def test_vocab_reserved_ids_fixed():
    vocab = Vocabulary.build(corpus_with_counts({"w": 5}), min_count=0)
    assert vocab.token_of(0) == C.PAD
    assert vocab.token_of(1) == C.BOS
    assert vocab.token_of(2) == C.EOS
    assert vocab.token_of(3) == C.UNK


def test_vocab_every_frequent_token_has_valid_id():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(30)]
    pairs = [
        SentencePair(list(rng.choice(words, size=5)), list(rng.choice(words, size=4)))
        for _ in range(40)
    ]
    min_count = 2
    vocab = Vocabulary.build(pairs, min_count=min_count)
    for pair in pairs:
        for token in pair.normal + pair.simple:
            tid = vocab.id_of(token)
            assert 0 <= tid < len(vocab)
            if vocab.frequencies[token] <= min_count:
                assert tid == C.UNK_ID
            else:
                assert vocab.token_of(tid) == token


def test_encode_appends_eos_and_maps_oov():
    vocab = Vocabulary.build(corpus_with_counts({"hello": 5}), min_count=0)
    ids = vocab.encode(["hello", "martian"])
    assert ids[-1] == C.EOS_ID
    assert ids[1] == C.UNK_ID


def test_encode_decode_round_trip():
    pairs = [SentencePair("the cat sat".split(), "cat sat".split())] * 2
    vocab = Vocabulary.build(pairs, min_count=0)
    sentence = "the cat sat".split()
    assert vocab.decode(vocab.encode(sentence)) == sentence


def test_decode_restores_entities():
    pairs = [SentencePair(["PER@1", "ran"], ["PER@1"])] * 2
    vocab = Vocabulary.build(pairs, min_count=0)
    ids = vocab.encode(["PER@1", "ran"])
    assert vocab.decode(ids, entity_map={"PER@1": "john"}) == ["john", "ran"]


def test_decode_rejects_unknown_id():
    vocab = Vocabulary.build(corpus_with_counts({"a": 5}), min_count=0)
    with pytest.raises(IndexError):
        vocab.decode([len(vocab)])


def test_vocab_save_load_stable(tmp_path):
    vocab = Vocabulary.build(corpus_with_counts({"aa": 5, "bb": 7, "cc": 2}), min_count=1)
    path = tmp_path / "vocab.tsv"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert len(loaded) == len(vocab)
    for idx in range(len(vocab)):
        assert loaded.token_of(idx) == vocab.token_of(idx)
    assert loaded.frequencies == vocab.frequencies


# ---------------------------------------------------------------------------
# Parallel loading
# ---------------------------------------------------------------------------


def write_lines(path, sentences):
    path.write_text("".join(s + "\n" for s in sentences), encoding="utf-8")


def test_load_parallel_two_lines(tmp_path):
    write_lines(tmp_path / "n.txt", ["a b c", "d e"])
    write_lines(tmp_path / "s.txt", ["a b", "d"])
    pairs = C.load_parallel(tmp_path / "n.txt", tmp_path / "s.txt")
    assert len(pairs) == 2
    assert pairs[0].normal == ["a", "b", "c"]
    assert pairs[1].simple == ["d"]
    assert pairs[0].references == []


def test_load_parallel_with_eight_references(tmp_path):
    write_lines(tmp_path / "n.txt", ["a b"])
    ref_paths = []
    for k in range(8):
        p = tmp_path / f"ref{k}.txt"
        write_lines(p, [f"r{k}"])
        ref_paths.append(p)
    pairs = C.load_parallel(tmp_path / "n.txt", reference_paths=ref_paths)
    assert len(pairs[0].references) == 8
    assert pairs[0].simple == ["r0"]


def test_load_parallel_mismatch_reports_counts(tmp_path):
    write_lines(tmp_path / "n.txt", ["a", "b", "c"])
    write_lines(tmp_path / "s.txt", ["a", "b"])
    with pytest.raises(C.AlignmentError, match="2.*3"):
        C.load_parallel(tmp_path / "n.txt", tmp_path / "s.txt")


def test_load_parallel_truncates_long_sentences(tmp_path, caplog):
    write_lines(tmp_path / "n.txt", ["w " * 40])
    write_lines(tmp_path / "s.txt", ["v v"])
    with caplog.at_level("WARNING"):
        pairs = C.load_parallel(tmp_path / "n.txt", tmp_path / "s.txt", max_len=10)
    assert len(pairs[0].normal) == 10
    assert "truncated" in caplog.text


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


def test_embeddings_full_coverage(tmp_path):
    vocab = Vocabulary.build(corpus_with_counts({"aa": 5, "bb": 5}), min_count=0)
    lines = [f"{vocab.token_of(i)} " + " ".join(["0.5"] * 4) for i in range(len(vocab))]
    write_lines(tmp_path / "emb.txt", lines)
    emb, coverage = C.load_embeddings(tmp_path / "emb.txt", vocab, 4, np.random.default_rng(0))
    assert coverage == 1.0
    assert emb.shape == (len(vocab), 4)
    np.testing.assert_allclose(emb.data, 0.5)


def test_embeddings_empty_file_seeded_random(tmp_path):
    (tmp_path / "emb.txt").write_text("", encoding="utf-8")
    vocab = Vocabulary.build(corpus_with_counts({"aa": 5}), min_count=0)
    emb1, cov1 = C.load_embeddings(tmp_path / "emb.txt", vocab, 3, np.random.default_rng(7))
    emb2, _ = C.load_embeddings(tmp_path / "emb.txt", vocab, 3, np.random.default_rng(7))
    assert cov1 == 0.0
    assert (np.abs(emb1.data) < 0.1).all()
    assert (emb1.data == emb2.data).all()


def test_embeddings_dimension_mismatch(tmp_path):
    write_lines(tmp_path / "emb.txt", ["aa 0.1 0.2"])
    vocab = Vocabulary.build(corpus_with_counts({"aa": 5}), min_count=0)
    with pytest.raises(C.EmbeddingFormatError):
        C.load_embeddings(tmp_path / "emb.txt", vocab, 3, np.random.default_rng(0))
