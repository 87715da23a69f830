"""Output label encodings: characters, Myanmar syllables and BPE sub-words.

All three tokenizers are lossless: joining the tokens (or :func:`bpe_decode`
for BPE) reproduces the input string.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

from .errors import ContractViolation, DataError

BLANK = "<blank>"
UNK = "<unk>"

# -- character level ---------------------------------------------------------


def char_tokenize(text: str) -> List[str]:
    """One token per code point; whitespace is kept as its own token."""
    return list(text)


# -- Myanmar syllables -------------------------------------------------------

VIRAMA = "္"
ASAT = "်"
MEDIALS = frozenset("ျြွှ")
# independent vowels and syllabic symbols that open a syllable
INDEPENDENT = frozenset("ဣဤဥဦဧဩဪဿ")
# punctuation / abbreviation symbols that sylbreak always breaks before
BREAK_SYMBOLS = frozenset("၊။၌၍၏")

_MM, _MM_DIGIT, _SPACE, _OTHER = range(4)


def _is_consonant(ch: str) -> bool:
    return "က" <= ch <= "အ"


def _char_class(ch: str) -> int:
    if ch.isspace():
        return _SPACE
    if "၀" <= ch <= "၉":
        return _MM_DIGIT
    if "က" <= ch <= "႟":
        return _MM
    return _OTHER


def _opens_syllable(text: str, i: int) -> bool:
    ch = text[i]
    if ch in BREAK_SYMBOLS:
        return True
    if not (_is_consonant(ch) or ch in INDEPENDENT):
        return False
    if i > 0 and text[i - 1] == VIRAMA:
        return False
    j = i + 1
    if j < len(text) and text[j] in MEDIALS:
        j += 1
    # a consonant killed by asat, or stacked under a virama, closes the
    # previous syllable instead of opening one
    if j < len(text) and text[j] in (ASAT, VIRAMA):
        return False
    return True


def syllable_tokenize(text: str) -> List[str]:
    """Split text into Myanmar syllables following the sylbreak rules.

    Digit runs and non-Myanmar runs stay whole; each whitespace character is
    its own token.
    """
    tokens: List[str] = []
    start = 0
    for i in range(1, len(text)):
        prev_cls, cls = _char_class(text[i - 1]), _char_class(text[i])
        if cls != prev_cls or cls == _SPACE or (cls == _MM and _opens_syllable(text, i)):
            tokens.append(text[start:i])
            start = i
    if text:
        tokens.append(text[start:])
    return tokens


# -- BPE ---------------------------------------------------------------------


@dataclass
class BpeModel:
    merges: List[Tuple[str, str]]
    base_alphabet: List[str]
    target_size: int
    _ranks: Dict[Tuple[str, str], int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._alphabet = frozenset(self.base_alphabet)

    @property
    def symbols(self) -> List[str]:
        """Base alphabet followed by merged symbols in creation order."""
        return list(self.base_alphabet) + [a + b for a, b in self.merges]


def _split_words(text: str) -> List[str]:
    # whitespace characters are standalone units; everything else groups into words
    units, word = [], []
    for ch in text:
        if ch.isspace():
            if word:
                units.append("".join(word))
                word = []
            units.append(ch)
        else:
            word.append(ch)
    if word:
        units.append("".join(word))
    return units


def _merge_word(symbols: Tuple[str, ...], pair: Tuple[str, str]) -> Tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(pair[0] + pair[1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_train(texts: Iterable[str], target_size: int) -> BpeModel:
    """Learn BPE merges by greedy most-frequent-pair merging within words.

    Training stops once the symbol inventory (alphabet plus merges) reaches
    ``target_size`` or no adjacent pair occurs at least twice. Equal counts
    are broken by the lexicographically smallest ``(left, right)`` pair.
    """
    word_counts: Counter = Counter()
    alphabet = set()
    for text in texts:
        alphabet.update(text)
        for unit in _split_words(text):
            if not unit.isspace():
                word_counts[tuple(unit)] += 1
    base = sorted(alphabet)
    if target_size <= len(base):
        raise ValueError(
            f"target_size {target_size} must exceed the alphabet size {len(base)}"
        )

    words = dict(word_counts)
    merges: List[Tuple[str, str]] = []
    while len(base) + len(merges) < target_size:
        pairs: Counter = Counter()
        for symbols, count in words.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += count
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        if best[1] < 2:
            break
        pair = best[0]
        merges.append(pair)
        merged: Dict[Tuple[str, ...], int] = {}
        for symbols, count in words.items():
            new = _merge_word(symbols, pair) if len(symbols) > 1 else symbols
            merged[new] = merged.get(new, 0) + count
        words = merged
    return BpeModel(merges, base, target_size)


def _encode_word(model: BpeModel, word: str) -> List[str]:
    symbols = [ch if ch in model._alphabet else UNK for ch in word]
    while len(symbols) > 1:
        ranked = [
            (model._ranks.get((a, b)), i)
            for i, (a, b) in enumerate(zip(symbols, symbols[1:]))
            if (a, b) in model._ranks
        ]
        if not ranked:
            break
        rank = min(ranked)[0]
        symbols = list(_merge_word(tuple(symbols), model.merges[rank]))
    return symbols


def bpe_encode(model: BpeModel, text: str) -> List[str]:
    """Encode text by applying the learned merges in training order.

    Characters outside the model's alphabet become :data:`UNK`.
    """
    tokens: List[str] = []
    for unit in _split_words(text):
        if unit.isspace():
            tokens.append(unit if unit in model._alphabet else UNK)
        else:
            tokens.extend(_encode_word(model, unit))
    return tokens


def bpe_decode(model: BpeModel, tokens: Sequence[str]) -> str:
    return "".join(tokens)


def save_bpe(path, model: BpeModel) -> None:
    lines = [
        "#bpe v1",
        "#alphabet " + json.dumps(model.base_alphabet, ensure_ascii=True),
        f"#target_size {model.target_size}",
    ]
    lines += [f"{a} {b}" for a, b in model.merges]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_bpe(path) -> BpeModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != "#bpe v1":
        raise DataError(f"{path}: missing '#bpe v1' header")
    alphabet, target_size, merges = None, None, []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if line.startswith("#alphabet "):
            alphabet = json.loads(line[len("#alphabet "):])
        elif line.startswith("#target_size "):
            target_size = int(line.split()[1])
        else:
            parts = line.split(" ")
            if len(parts) != 2 or not all(parts):
                raise DataError(f"{path}: line {line_no}: malformed merge {line!r}")
            merges.append((parts[0], parts[1]))
    if alphabet is None:
        # older files without metadata: recover what the merges imply
        alphabet = sorted({ch for a, b in merges for ch in a + b})
    if target_size is None:
        target_size = len(alphabet) + len(merges)
    return BpeModel(merges, alphabet, target_size)


# -- vocabulary --------------------------------------------------------------


class Vocabulary:
    """Token <-> id map. Real tokens take ids ``0..n-1``; the blank is ``n``."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise ContractViolation("vocabulary tokens must be distinct")
        for tok in tokens:
            if not tok or tok == BLANK or "\n" in tok:
                raise ContractViolation(f"invalid vocabulary token {tok!r}")
        self.tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @property
    def blank_id(self) -> int:
        return len(self.tokens)

    @property
    def num_classes(self) -> int:
        """Real tokens plus blank."""
        return len(self.tokens) + 1

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def token_id(self, token: str) -> int:
        return self._ids[token]

    def __contains__(self, token):
        return token in self._ids

    def encode(self, tokens: Sequence[str]) -> List[int]:
        unk = self._ids.get(UNK)
        ids = []
        for tok in tokens:
            i = self._ids.get(tok, unk)
            if i is None:
                raise DataError(f"token {tok!r} not in vocabulary")
            ids.append(i)
        return ids

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids]

    def to_text(self) -> str:
        return "".join(tok + "\n" for tok in self.tokens)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
        if text and not text.endswith("\n"):
            text += "\n"
        return cls(text.split("\n")[:-1])


def build_vocab(token_lists: Iterable[Sequence[str]], extra: Sequence[str] = ()) -> Vocabulary:
    """Sorted distinct tokens (plus ``extra``); blank id is one past the last."""
    seen = set(extra)
    for toks in token_lists:
        seen.update(toks)
    return Vocabulary(sorted(seen))


# -- tokenizer selection -----------------------------------------------------


class Tokenizer:
    """Bundles a tokenizer kind ("char", "syllable" or "bpe:<size>") with an optional BPE model."""

    def __init__(self, kind: str, bpe: BpeModel | None = None):
        if kind not in ("char", "syllable") and not kind.startswith("bpe:"):
            raise ValueError(f"unknown tokenizer kind {kind!r}")
        if kind.startswith("bpe:") and bpe is None:
            raise ValueError("bpe tokenizer needs a trained BpeModel")
        self.kind = kind
        self.bpe = bpe

    def tokenize(self, text: str) -> List[str]:
        if self.kind == "char":
            return char_tokenize(text)
        if self.kind == "syllable":
            return syllable_tokenize(text)
        return bpe_encode(self.bpe, text)

    def detokenize(self, tokens: Sequence[str]) -> str:
        if self.bpe is not None:
            return bpe_decode(self.bpe, tokens)
        return "".join(tokens)


def parse_kind(kind: str) -> Tuple[str, int | None]:
    if kind in ("char", "syllable"):
        return kind, None
    if kind == "bpe":
        raise ValueError("bpe tokenizer requires a size, e.g. bpe:100")
    if kind.startswith("bpe:"):
        try:
            size = int(kind[4:])
        except ValueError:
            raise ValueError(f"bad bpe size in {kind!r}") from None
        if size < 2:
            raise ValueError("bpe size must be at least 2")
        return "bpe", size
    raise ValueError(f"unknown tokenizer kind {kind!r}")

