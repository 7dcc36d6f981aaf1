import pytest
from hypothesis import given, settings, strategies as st

import oracles
from modimg.ingest import PatientMetadata
from modimg.textmeta import (
    BASE_VOCAB,
    CLS_ID,
    CONTEXT_LENGTH,
    PAD_ID,
    UNUSED_ID,
    BpeModel,
    detokenize,
    load_tokenizer,
    save_tokenizer,
    serialize_metadata,
    token_strings,
    tokenize,
    train_bpe,
)

META = PatientMetadata(
    stay_id="s1",
    sex="F",
    age=63,
    ethnicity="white",
    insurance="medicare",
    cxr_findings="mild edema",
    cxr_impressions="stable",
    ecg_machine_measurements="sinus rhythm",
    icd_diagnoses=["I10", "E11"],
    medication_names=["Propofol", "Fentanyl"],
)


class TestSerialize:
    def test_template(self):
        prompt = serialize_metadata(META)
        assert prompt.text == (
            "sex: F; age: 63; ethnicity: white; insurance: medicare."
            " findings: mild edema. impressions: stable. ecg: sinus rhythm."
            " diagnoses: I10, E11. medications: Propofol, Fentanyl."
        )

    def test_diagnoses_omitted_for_phenotyping(self):
        prompt = serialize_metadata(META, include_diagnoses=False)
        assert "diagnoses" not in prompt.text
        assert "medications: Propofol" in prompt.text
        assert "diagnoses" not in [name for name, _ in prompt.section_spans]

    def test_section_spans_cover_text_exactly(self):
        prompt = serialize_metadata(META)
        data = prompt.text.encode("utf-8")
        pos = 0
        for name, (start, end) in prompt.section_spans:
            assert start == pos
            pos = end
        assert pos == len(data)

    def test_deterministic(self):
        assert serialize_metadata(META) == serialize_metadata(META)

    def test_integer_age_has_no_decimal_point(self):
        prompt = serialize_metadata(META)
        assert "age: 63;" in prompt.text


class TestTrainBpe:
    def test_first_merge_is_most_frequent_pair(self):
        # [DERIVED] in "ababab": pairs (a,b) x3, (b,a) x2 -> merge (a,b)
        model = train_bpe(["ababab"], BASE_VOCAB + 1)
        assert model.merges == [(b"a", b"b")]

    def test_tie_broken_lexicographically(self):
        # [DERIVED] "abcd": pairs (a,b), (b,c), (c,d) all once -> (a,b) wins
        model = train_bpe(["abcd"], BASE_VOCAB + 1)
        assert model.merges == [(b"a", b"b")]

    def test_merges_match_oracle_counts(self):
        corpus = ["the cat sat", "the cat", "a hat"]
        model = train_bpe(corpus, BASE_VOCAB + 3)
        # replay: at each step the chosen pair must have maximal count in the
        # oracle's tally of the current tokenization
        texts = [[bytes([b]) for b in t.encode()] for t in corpus]
        for left, right in model.merges:
            counts = oracles.bpe_pair_counts(texts)
            best_count = max(counts.values())
            assert counts[(left, right)] == best_count
            assert (left, right) == min(
                (p for p, c in counts.items() if c == best_count)
            )
            merged = left + right
            texts = [
                _apply_merge(toks, left, right, merged) for toks in texts
            ]

    def test_stops_when_no_pairs_left(self):
        model = train_bpe(["ab"], BASE_VOCAB + 10)
        assert len(model.merges) == 1

    def test_vocab_size_accounts_for_specials(self):
        model = train_bpe(["hello world"] * 3, BASE_VOCAB + 5)
        assert model.vocab_size == BASE_VOCAB + 5
        assert BASE_VOCAB == 259  # 256 bytes + pad/cls/unused

    def test_rejects_empty_corpus(self):
        with pytest.raises(ValueError):
            train_bpe([], 300)


def _apply_merge(toks, left, right, merged):
    out = []
    i = 0
    while i < len(toks):
        if i + 1 < len(toks) and toks[i] == left and toks[i + 1] == right:
            out.append(merged)
            i += 2
        else:
            out.append(toks[i])
            i += 1
    return out


class TestTokenize:
    def test_cls_first_pad_fill(self):
        model = BpeModel()
        ids = tokenize("hi", model, context_length=8)
        assert ids[0] == CLS_ID
        assert ids[1:3] == [ord("h"), ord("i")]
        assert ids[3:] == [PAD_ID] * 5

    def test_fixed_length_always(self):
        model = train_bpe(["aaaa bbbb"], BASE_VOCAB + 2)
        for text in ("", "a", "a" * 2000):
            assert len(tokenize(text, model)) == CONTEXT_LENGTH

    def test_truncation_keeps_prefix(self):
        model = BpeModel()
        ids = tokenize("abcdef", model, context_length=4)
        assert ids == [CLS_ID, ord("a"), ord("b"), ord("c")]

    def test_merges_applied(self):
        model = train_bpe(["abab"], BASE_VOCAB + 1)
        ids = tokenize("abab", model, context_length=8)
        merged_id = BASE_VOCAB  # first merge token
        assert ids[1] == merged_id and ids[2] == merged_id

    @given(st.text(max_size=120))
    def test_round_trip_byte_exact(self, text):
        model = train_bpe(["common words and bytes é世"], BASE_VOCAB + 8)
        ids = tokenize(text, model, context_length=4096)
        assert detokenize(ids, model) == text

    @given(st.text(max_size=2000))
    def test_never_exceeds_512(self, text):
        model = BpeModel()
        ids = tokenize(text, model)
        assert len(ids) == 512
        assert all(0 <= i < BASE_VOCAB for i in ids)

    def test_utf8_multibyte_round_trip(self):
        model = BpeModel()
        text = "temp 38.5°C — 世界"
        assert detokenize(tokenize(text, model, 4096), model) == text


def test_token_strings_names_specials():
    model = BpeModel()
    names = token_strings([CLS_ID, ord("a"), PAD_ID, UNUSED_ID], model)
    assert names == ["<cls>", "a", "<pad>", "<unused>"]


def test_tokenizer_round_trip_file(tmp_path):
    model = train_bpe(["the quick brown fox"] * 5, BASE_VOCAB + 12)
    path = tmp_path / "tok.json"
    save_tokenizer(path, model)
    loaded = load_tokenizer(path)
    assert loaded.merges == model.merges
    text = "quick fox"
    assert tokenize(text, loaded, 64) == tokenize(text, model, 64)
