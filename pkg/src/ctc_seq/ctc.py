"""Connectionist temporal classification: loss, gradients and decoding.

Lattices are ``(T, C)`` arrays of per-frame log-probabilities, where ``C`` is
the number of real tokens plus one blank column. Unless given explicitly the
blank is the last column, matching :attr:`Vocabulary.blank_id`.

Every recursion runs in log space.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, InfeasibleTargetError

NEG_INF = -np.inf
BRUTE_FORCE_LIMIT = 10 ** 7


@dataclass
class CtcResult:
    loss: float
    grad: Optional[np.ndarray] = None


def _blank_of(log_probs: np.ndarray, blank: Optional[int]) -> int:
    return log_probs.shape[1] - 1 if blank is None else blank


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def check_lattice(log_probs: np.ndarray, tol: float = 1e-5) -> None:
    """Raise ContractViolation unless every row is a log-distribution."""
    if log_probs.ndim != 2:
        raise ContractViolation(f"lattice must be 2-D, got shape {log_probs.shape}")
    if log_probs.shape[0] == 0:
        return
    if np.any(np.isnan(log_probs)) or np.any(log_probs > tol):
        raise ContractViolation("lattice entries must be log-probabilities (<= 0, not NaN)")
    with np.errstate(divide="ignore"):
        sums = np.exp(log_probs).sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise ContractViolation(
            f"row {bad[0]} of the lattice sums to {sums[bad[0]]:.8g}, not 1"
        )


def collapse_alignment(alignment: Sequence[int], blank: int) -> List[int]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for a in alignment:
        if a != prev and a != blank:
            out.append(a)
        prev = a
    return out


def min_alignment_length(labels: Sequence[int]) -> int:
    """Shortest alignment that collapses to ``labels``: a blank must separate each repeat."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_validity(num_frames: int, labels: Sequence[int]) -> bool:
    return num_frames >= min_alignment_length(labels)


def _extend(labels: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _skip_mask(ext: np.ndarray, blank: int) -> np.ndarray:
    # position s may be entered from s-2 when it holds a token different from s-2
    skip = np.zeros(len(ext), dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return skip


def _forward_backward(log_probs: np.ndarray, labels: Sequence[int], blank: int):
    """Return (log P(Y|X), alpha, beta) over the blank-extended label sequence.

    ``alpha[t, s]`` includes the emission at ``t``; ``beta[t, s]`` covers
    frames after ``t`` only, so ``alpha + beta`` is the log mass of all
    alignments passing through ``(t, s)``.
    """
    T = log_probs.shape[0]
    ext = _extend(labels, blank)
    S = len(ext)
    skip = _skip_mask(ext, blank)
    emit = log_probs[:, ext]  # (T, S)

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[skip] = np.logaddexp(acc[skip], prev[np.flatnonzero(skip) - 2])
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_from = np.flatnonzero(skip) - 2  # s that may jump forward to s+2
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[skip_from] = np.logaddexp(acc[skip_from], nxt[skip_from + 2])
        beta[t] = acc

    log_p = alpha[T - 1, S - 1]
    if S > 1:
        log_p = np.logaddexp(log_p, alpha[T - 1, S - 2])
    return float(log_p), alpha, beta, ext


def _occupancy(log_probs, alpha, beta, ext, log_p) -> np.ndarray:
    """Posterior probability that frame t emits class k, shape (T, C)."""
    T, C = log_probs.shape
    with np.errstate(invalid="ignore", over="ignore"):
        post = np.exp(alpha + beta - log_p)
    gamma = np.zeros((T, C))
    np.add.at(gamma, (slice(None), ext), post)
    return gamma


def _prepare(log_probs, labels, blank):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    blank = _blank_of(log_probs, blank)
    labels = [int(y) for y in labels]
    C = log_probs.shape[1]
    for y in labels:
        if y == blank or not 0 <= y < C:
            raise ContractViolation(f"label id {y} is out of range or equals blank {blank}")
    T = log_probs.shape[0]
    if not ctc_validity(T, labels):
        raise InfeasibleTargetError(T, min_alignment_length(labels))
    return log_probs, labels, blank


def _ctc_raw(log_probs, labels, blank, want_grad):
    # no normalization check: finite-difference tests perturb entries freely
    T, C = log_probs.shape
    if T == 0:
        return CtcResult(0.0, np.zeros((0, C)) if want_grad else None)
    log_p, alpha, beta, ext = _forward_backward(log_probs, labels, blank)
    loss = -log_p
    grad = None
    if want_grad:
        grad = -_occupancy(log_probs, alpha, beta, ext, log_p)
    return CtcResult(loss, grad)


def ctc_loss(log_probs, labels, want_grad: bool = False, blank: Optional[int] = None) -> CtcResult:
    """Negative log-likelihood of ``labels`` under a normalized lattice.

    The gradient, when requested, is taken with respect to the lattice
    entries themselves (it equals minus the per-frame class occupancy).

    Raises
    ------
    InfeasibleTargetError
        If the lattice has fewer frames than the minimum alignment length.
    ContractViolation
        If rows are not valid log-distributions or labels are out of range.
    """
    log_probs, labels, blank = _prepare(log_probs, labels, blank)
    check_lattice(log_probs)
    return _ctc_raw(log_probs, labels, blank, want_grad)


def ctc_loss_unchecked(log_probs, labels, want_grad: bool = False, blank: Optional[int] = None) -> CtcResult:
    """Same recursion as :func:`ctc_loss` but without the row-normalization check."""
    log_probs, labels, blank = _prepare(log_probs, labels, blank)
    return _ctc_raw(log_probs, labels, blank, want_grad)


def ctc_loss_from_scores(scores, labels, blank: Optional[int] = None) -> Tuple[float, np.ndarray]:
    """CTC loss of ``log_softmax(scores)`` and its gradient w.r.t. the raw scores.

    This is the composition the trainer uses: the gradient is
    ``softmax(scores) - occupancy``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    log_probs = log_softmax(scores)
    log_probs, labels, blank = _prepare(log_probs, labels, blank)
    res = _ctc_raw(log_probs, labels, blank, want_grad=True)
    return res.loss, np.exp(log_probs) + res.grad


# -- exhaustive oracles ------------------------------------------------------

def _all_alignments(log_probs):
    T, C = log_probs.shape
    if C ** T > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{C}^{T} alignments exceed the brute-force limit of {BRUTE_FORCE_LIMIT}")
    for path in itertools.product(range(C), repeat=T):
        yield path, math.exp(sum(log_probs[t, a] for t, a in enumerate(path)))


def brute_force_ctc(log_probs, labels, blank: Optional[int] = None) -> float:
    """-log P(Y|X) by summing over every alignment; +inf if none collapses to Y."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    blank = _blank_of(log_probs, blank)
    target = [int(y) for y in labels]
    terms = [p for path, p in _all_alignments(log_probs)
             if collapse_alignment(path, blank) == target]
    total = math.fsum(terms)
    return math.inf if total == 0.0 else -math.log(total)


def enumerate_labelings(log_probs, blank: Optional[int] = None) -> Dict[Tuple[int, ...], float]:
    """P(Y|X) for every label sequence reachable from the lattice."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    blank = _blank_of(log_probs, blank)
    terms: Dict[Tuple[int, ...], List[float]] = {}
    for path, p in _all_alignments(log_probs):
        terms.setdefault(tuple(collapse_alignment(path, blank)), []).append(p)
    return {y: math.fsum(ps) for y, ps in terms.items()}


# -- decoding ----------------------------------------------------------------

def best_path(log_probs, blank: Optional[int] = None) -> Tuple[List[int], float]:
    """Per-frame argmax path (ties go to the lowest id) and its log-probability."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.shape[0] == 0:
        return [], 0.0
    path = np.argmax(log_probs, axis=1)
    score = float(log_probs[np.arange(len(path)), path].sum())
    return [int(a) for a in path], score


def greedy_decode(log_probs, blank: Optional[int] = None) -> List[int]:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    path, _ = best_path(log_probs)
    return collapse_alignment(path, _blank_of(log_probs, blank))


def sequence_log_prob(log_probs, labels, blank: Optional[int] = None) -> float:
    """Exact log P(Y|X); -inf when Y cannot be aligned to the lattice."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    blank = _blank_of(log_probs, blank)
    if not ctc_validity(log_probs.shape[0], labels):
        return -math.inf
    if log_probs.shape[0] == 0:
        return 0.0
    return _forward_backward(log_probs, list(labels), blank)[0]


def prefix_beam_search(log_probs, beam_width: int, blank: Optional[int] = None):
    """LM-free CTC prefix beam search.

    Each prefix carries two log-probabilities: alignments ending in blank
    and alignments ending in its last token. At every frame the ``beam_width``
    most probable prefixes survive (ties broken by the prefix itself).

    Returns
    -------
    list of (prefix, log_prob)
        Surviving prefixes, best first. ``log_prob`` counts only the
        alignments that stayed inside the beam, so it is a lower bound on
        the exact probability.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    log_probs = np.asarray(log_probs, dtype=np.float64)
    blank = _blank_of(log_probs, blank)
    T, C = log_probs.shape
    lae = np.logaddexp

    beams: Dict[Tuple[int, ...], Tuple[float, float]] = {(): (0.0, -math.inf)}
    for t in range(T):
        row = log_probs[t]
        prefixes = list(beams)
        p_b = np.array([beams[p][0] for p in prefixes])
        p_nb = np.array([beams[p][1] for p in prefixes])
        total = lae(p_b, p_nb)

        # prefixes that stay the same: emit blank, or repeat the last token
        nxt = {}
        for i, prefix in enumerate(prefixes):
            stay_nb = p_nb[i] + row[prefix[-1]] if prefix else -math.inf
            nxt[prefix] = [total[i] + row[blank], stay_nb]

        # extensions by one token; a repeat must follow a blank
        ext = total[:, None] + row[None, :]
        ext[:, blank] = -math.inf
        for i, prefix in enumerate(prefixes):
            if prefix:
                ext[i, prefix[-1]] = p_b[i] + row[prefix[-1]]
        index = {p: i for i, p in enumerate(prefixes)}
        for prefix in prefixes:
            parent = index.get(prefix[:-1]) if prefix else None
            if parent is not None:
                nxt[prefix][1] = lae(nxt[prefix][1], ext[parent, prefix[-1]])
                ext[parent, prefix[-1]] = -math.inf

        # a new prefix has a single source, so only the top few can survive
        flat = ext.ravel()
        k = min(beam_width, flat.size)
        if k:
            cutoff = np.partition(flat, flat.size - k)[flat.size - k]
            for j in np.flatnonzero((flat >= cutoff) & (flat > -math.inf)):
                i, c = divmod(int(j), C)
                nxt[prefixes[i] + (c,)] = [-math.inf, float(flat[j])]

        scored = [(float(lae(*v)), p, v) for p, v in nxt.items()]
        scored = [s for s in scored if s[0] > -math.inf]
        scored.sort(key=lambda s: (-s[0], s[1]))
        beams = {p: (v[0], v[1]) for _, p, v in scored[:beam_width]}

    out = [(list(p), float(lae(*v))) for p, v in beams.items()]
    out.sort(key=lambda r: (-r[1], r[0]))
    return out


def beam_search_decode(log_probs, beam_width: int, blank: Optional[int] = None,
                       return_score: bool = False):
    """Most probable labeling found by prefix beam search.

    Candidates from the final beams of every width up to ``beam_width``,
    plus the greedy labeling, are rescored with their exact probability and
    the best one wins. Widening the beam therefore never lowers the score,
    and width 1 is never worse than greedy decoding.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    log_probs = np.asarray(log_probs, dtype=np.float64)
    blank = _blank_of(log_probs, blank)
    candidates = {tuple(greedy_decode(log_probs, blank))}
    for width in range(1, beam_width + 1):
        candidates.update(tuple(p) for p, _ in prefix_beam_search(log_probs, width, blank))
    scored = sorted((-sequence_log_prob(log_probs, c, blank), c) for c in candidates)
    best_neg, best = scored[0]
    if return_score:
        return list(best), -best_neg
    return list(best)
