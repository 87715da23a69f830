"""Shared oracles and generators for the test suite."""

import itertools
import math
import re

import numpy as np
from hypothesis import strategies as st

from ctc_seq.ctc import collapse_alignment, log_softmax

# Myanmar letters, medials, asat/virama, digits, punctuation plus some ASCII
MYANMAR_POOL = (
    [chr(c) for c in range(0x1000, 0x1022)]
    + list("ဣဤဥဦဧဩဪဿ")
    + list("ါာိီုူေဲံ့း")
    + list("ျြွှ်္")
    + [chr(c) for c in range(0x1040, 0x104A)]
    + list("၊။၌၍၏")
)
ASCII_POOL = list("abcxyz019 .,-")
mixed_text = st.text(alphabet=st.sampled_from(MYANMAR_POOL + ASCII_POOL), max_size=40)


def random_mixed_strings(count, seed, max_len=40):
    rng = np.random.default_rng(seed)
    pool = MYANMAR_POOL + ASCII_POOL
    return ["".join(rng.choice(pool, size=int(rng.integers(0, max_len + 1))))
            for _ in range(count)]


# Reference syllable-break regex in the style of the sylbreak project,
# applied per Myanmar letter run; digits, spaces and other text are split
# off first.
_SYL_ONSET = (
    r"(?<!္)[က-အဣ-ဧဩဪဿ]"
    r"(?![ျ-ှ]?[်္])"
)
_SYL_BREAK = re.compile(_SYL_ONSET + r"|[၊။၌၍၏]")
_RUNS = re.compile(
    r"\s|[၀-၉]+|[က-ဿ၊-႟]+|[^က-႟\s]+"
)


def regex_syllables(text):
    out = []
    for run in _RUNS.findall(text):
        if "က" <= run[0] <= "႟" and not "၀" <= run[0] <= "၉":
            marked = _SYL_BREAK.sub(lambda m: "\x00" + m.group(0), run)
            out.extend(piece for piece in marked.split("\x00") if piece)
        else:
            out.append(run)
    return out


def random_lattice(rng, T, C, peaked=1.0):
    return log_softmax(peaked * rng.standard_normal((T, C)))


def reachable(T, labels, num_labels):
    """Brute force: does any length-T alignment collapse to ``labels``?"""
    blank = num_labels
    target = list(labels)
    return any(collapse_alignment(a, blank) == target
               for a in itertools.product(range(num_labels + 1), repeat=T))


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def central_diff(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        up = f()
        x[idx] = old - eps
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def all_token_lists(alphabet, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def logsumexp(values):
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def toy_examples(count, seed, prefix="tone", factor=4):
    """In-memory tone clips as training examples (char tokens over the 4 tone symbols)."""
    from ctc_seq.features import downsample_time, log_spectrogram
    from ctc_seq.model import Example
    from ctc_seq.toy import TONE_CHARS, TOY_FEATURES, synth_clip, tone_sequences

    rng = np.random.default_rng(seed)
    out = []
    for i, seq in enumerate(tone_sequences(count, rng)):
        clip = synth_clip(seq, rng)
        frames = downsample_time(log_spectrogram(clip, TOY_FEATURES), factor).frames
        out.append(Example(f"{prefix}{i:03d}", frames, list(seq), "".join(TONE_CHARS[s] for s in seq)))
    return out


def toy_detokenize(ids):
    from ctc_seq.toy import TONE_CHARS

    return "".join(TONE_CHARS[i] for i in ids)
