import pytest

from densecap.errors import DataError
from densecap.synth import TopicGrammar
from densecap.vocab import BOS, EOS, UNK, Vocabulary, build_vocab, tokenize


class TestTokenize:
    def test_lowercases_and_strips_punctuation(self):
        assert tokenize("A Person, slices; the ONION!") == [
            "a", "person", "slices", "the", "onion",
        ]

    def test_whitespace_split(self):
        assert tokenize("  a\tb\nc  ") == ["a", "b", "c"]

    def test_empty(self):
        assert tokenize("...") == []


class TestBuildVocab:
    def test_small_corpus(self):
        vocab = build_vocab(["a b", "a"], min_count=1)
        assert set(vocab.tokens) == {BOS, EOS, UNK, "a", "b"}

    def test_min_count_maps_to_unk(self):
        vocab = build_vocab(["a b", "a"], min_count=2)
        assert "b" not in vocab.index
        assert vocab.encode("a b") == [vocab.index["a"], vocab.unk]

    def test_ordering_frequency_then_lexicographic(self):
        vocab = build_vocab(["c c b b a"], min_count=1)
        assert vocab.tokens[3:] == ["b", "c", "a"]

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError):
            build_vocab([], min_count=1)

    def test_grammar_terminals_exactly_recovered(self):
        grammar = TopicGrammar.default(6)
        rng_captions = [
            f"a person {v} the {o}"
            for t in range(6)
            for v in grammar.verbs[t]
            for o in grammar.objects[t]
        ]
        vocab = build_vocab(rng_captions, min_count=1)
        assert set(vocab.tokens) - {BOS, EOS, UNK} == grammar.terminals()

    def test_deterministic(self):
        caps = ["the cat sat", "a cat ran", "the dog sat"]
        assert build_vocab(caps).tokens == build_vocab(caps).tokens


class TestVocabulary:
    def test_reserved_required(self):
        with pytest.raises(DataError):
            Vocabulary(tokens=["a", "b"])

    def test_encode_decode_roundtrip(self):
        vocab = build_vocab(["a person swims the lake"])
        ids = vocab.encode("a person swims the lake")
        assert vocab.decode(ids + [vocab.eos]) == ["a", "person", "swims", "the", "lake"]

    def test_save_load(self, tmp_path):
        vocab = build_vocab(["x y z"])
        vocab.save(tmp_path / "vocab.json")
        back = Vocabulary.load(tmp_path / "vocab.json")
        assert back.tokens == vocab.tokens


class TestGrammarInvariants:
    def test_every_topic_has_multiple_surface_captions(self):
        grammar = TopicGrammar.default(12)
        for t in range(12):
            forms = {
                f"a person {v} the {o}"
                for v in grammar.verbs[t]
                for o in grammar.objects[t]
            }
            assert len(forms) >= 2

    def test_pairwise_terminal_overlap_at_most_half(self):
        grammar = TopicGrammar.default(12)
        for a in range(12):
            ta = grammar.terminals(a)
            for b in range(a + 1, 12):
                tb = grammar.terminals(b)
                overlap = len(ta & tb) / min(len(ta), len(tb))
                assert overlap <= 0.5
