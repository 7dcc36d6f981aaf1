"""Patient metadata as deterministic text plus a byte-level BPE tokenizer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .ingest import PatientMetadata

PAD_ID = 256
CLS_ID = 257
UNUSED_ID = 258
N_SPECIALS = 3
BASE_VOCAB = 256 + N_SPECIALS
CONTEXT_LENGTH = 512


@dataclass
class TextPrompt:
    stay_id: str
    text: str
    section_spans: list[tuple[str, tuple[int, int]]]


def _fmt_age(age: float) -> str:
    return str(int(age)) if float(age).is_integer() else str(age)


def serialize_metadata(meta: PatientMetadata, include_diagnoses: bool = True) -> TextPrompt:
    """Fixed prompt template; demographics first so truncation keeps the
    always-present fields. The diagnoses section is omitted entirely for the
    phenotyping task, since those are the prediction targets."""
    sections = [
        (
            "demographics",
            f"sex: {meta.sex}; age: {_fmt_age(meta.age)}; "
            f"ethnicity: {meta.ethnicity}; insurance: {meta.insurance}.",
        ),
        ("cxr_findings", f" findings: {meta.cxr_findings}."),
        ("cxr_impressions", f" impressions: {meta.cxr_impressions}."),
        ("ecg_measurements", f" ecg: {meta.ecg_machine_measurements}."),
    ]
    if include_diagnoses:
        sections.append(("diagnoses", f" diagnoses: {', '.join(meta.icd_diagnoses)}."))
    sections.append(("medications", f" medications: {', '.join(meta.medication_names)}."))
    text = ""
    spans = []
    for name, chunk in sections:
        start = len(text.encode("utf-8"))
        text += chunk
        spans.append((name, (start, len(text.encode("utf-8")))))
    return TextPrompt(stay_id=meta.stay_id, text=text, section_spans=spans)


@dataclass
class BpeModel:
    merges: list[tuple[bytes, bytes]] = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        return BASE_VOCAB + len(self.merges)

    def token_table(self) -> list[bytes]:
        """id -> byte string; specials map to empty bytes."""
        table = [bytes([i]) for i in range(256)] + [b"", b"", b""]
        lookup = {t: i for i, t in enumerate(table[:256])}
        for left, right in self.merges:
            table.append(left + right)
        return table


def train_bpe(corpus: list[str], vocab_size: int) -> BpeModel:
    """Byte-level BPE: repeatedly merge the most frequent adjacent token pair,
    breaking frequency ties by lexicographic pair order."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    if vocab_size < BASE_VOCAB:
        raise ValueError(f"vocab_size must be >= {BASE_VOCAB}")
    texts = [[bytes([b]) for b in t.encode("utf-8")] for t in corpus]
    merges: list[tuple[bytes, bytes]] = []
    while BASE_VOCAB + len(merges) < vocab_size:
        counts: dict[tuple[bytes, bytes], int] = {}
        for toks in texts:
            for pair in zip(toks, toks[1:]):
                counts[pair] = counts.get(pair, 0) + 1
        if not counts:
            break
        best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        merged = best[0] + best[1]
        for ti, toks in enumerate(texts):
            out = []
            i = 0
            while i < len(toks):
                if i + 1 < len(toks) and toks[i] == best[0] and toks[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(toks[i])
                    i += 1
            texts[ti] = out
    return BpeModel(merges=merges)


def tokenize(text: str, model: BpeModel, context_length: int = CONTEXT_LENGTH) -> list[int]:
    """CLS + BPE ids, truncated and PAD-filled to context_length."""
    toks = [bytes([b]) for b in text.encode("utf-8")]
    for left, right in model.merges:
        merged = left + right
        out = []
        i = 0
        while i < len(toks):
            if i + 1 < len(toks) and toks[i] == left and toks[i + 1] == right:
                out.append(merged)
                i += 2
            else:
                out.append(toks[i])
                i += 1
        toks = out
    table = model.token_table()
    index = {t: i for i, t in enumerate(table) if t}
    ids = [CLS_ID] + [index[t] for t in toks]
    ids = ids[:context_length]
    ids += [PAD_ID] * (context_length - len(ids))
    return ids


def detokenize(ids: list[int], model: BpeModel) -> str:
    table = model.token_table()
    return b"".join(table[i] for i in ids if i not in (PAD_ID, CLS_ID, UNUSED_ID)).decode("utf-8")


def token_strings(ids: list[int], model: BpeModel) -> list[str]:
    table = model.token_table()
    names = {PAD_ID: "<pad>", CLS_ID: "<cls>", UNUSED_ID: "<unused>"}
    return [names.get(i) or table[i].decode("utf-8", errors="replace") for i in ids]


def save_tokenizer(path: str | Path, model: BpeModel) -> None:
    payload = {
        "specials": {"pad": PAD_ID, "cls": CLS_ID, "unused": UNUSED_ID},
        "merges": [[list(l), list(r)] for l, r in model.merges],
        "vocab_size": model.vocab_size,
    }
    Path(path).write_text(json.dumps(payload))


def load_tokenizer(path: str | Path) -> BpeModel:
    payload = json.loads(Path(path).read_text())
    return BpeModel(merges=[(bytes(l), bytes(r)) for l, r in payload["merges"]])
