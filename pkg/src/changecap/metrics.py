"""Corpus caption metrics: BLEU-1..4, ROUGE-L, CIDEr-D and exact-match METEOR.

Candidates are word lists, one per image; references are lists of word lists.
"""
from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

Sentence = Sequence[str]


def ngrams(words: Sentence, n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def _check(candidates, references):
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} reference sets")
    for refs in references:
        if len(refs) == 0:
            raise ValueError("every image needs at least one reference")


def _closest_ref_len(c_len: int, refs) -> int:
    return min((abs(len(r) - c_len), len(r)) for r in refs)[1]


def bleu_n(candidates, references, n: int = 4) -> float:
    """Corpus BLEU from pooled clipped n-gram counts with brevity penalty."""
    if not 1 <= n <= 4:
        raise ValueError(f"BLEU order must be 1..4, got {n}")
    _check(candidates, references)
    matches = [0] * n
    totals = [0] * n
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        c_len += len(cand)
        r_len += _closest_ref_len(len(cand), refs)
        for k in range(1, n + 1):
            counts = ngrams(cand, k)
            max_ref = Counter()
            for r in refs:
                max_ref |= ngrams(r, k)
            matches[k - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[k - 1] += sum(counts.values())
    if c_len == 0 or min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / n
    bp = math.exp(min(0.0, 1.0 - r_len / c_len))
    return bp * math.exp(log_p)


def lcs_length(a: Sentence, b: Sentence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(cand: Sentence, refs, beta: float = 1.2) -> float:
    best = 0.0
    if not cand:
        return 0.0
    for r in refs:
        lcs = lcs_length(cand, r)
        if lcs == 0:
            continue
        prec, rec = lcs / len(cand), lcs / len(r)
        best = max(best, (1 + beta ** 2) * prec * rec / (rec + beta ** 2 * prec))
    return best


def rouge_l(candidates, references, beta: float = 1.2) -> float:
    _check(candidates, references)
    return sum(rouge_l_sentence(c, r, beta) for c, r in zip(candidates, references)) / len(candidates)


def _tfidf(words: Sentence, n: int, df: Counter, log_docs: float):
    vec = {g: tf * (log_docs - math.log(max(1.0, df[g]))) for g, tf in ngrams(words, n).items()}
    norm = math.sqrt(sum(v * v for v in vec.values()))
    return vec, norm


def cider_d_scores(candidates, references, sigma: float = 6.0, max_n: int = 4) -> list[float]:
    """Per-image CIDEr-D (x10 scale)."""
    _check(candidates, references)
    if len(candidates) < 2:
        warnings.warn("CIDEr-D on a single image: document frequencies are degenerate")
    df = [Counter() for _ in range(max_n)]
    for refs in references:
        for k in range(max_n):
            df[k].update(set().union(*(ngrams(r, k + 1) for r in refs)))
    log_docs = math.log(float(len(references)))
    scores = []
    for cand, refs in zip(candidates, references):
        per_order = []
        for k in range(max_n):
            cv, cn = _tfidf(cand, k + 1, df[k], log_docs)
            total = 0.0
            for r in refs:
                rv, rn = _tfidf(r, k + 1, df[k], log_docs)
                num = sum(min(v, rv[g]) * rv[g] for g, v in cv.items() if g in rv)
                sim = num / (cn * rn) if cn != 0 and rn != 0 else 0.0
                delta = len(cand) - len(r)
                total += sim * math.exp(-(delta ** 2) / (2 * sigma ** 2))
            per_order.append(total / len(refs))
        scores.append(10.0 * sum(per_order) / max_n)
    return scores


def cider_d(candidates, references, sigma: float = 6.0) -> float:
    s = cider_d_scores(candidates, references, sigma)
    return sum(s) / len(s)


def _align(cand: Sentence, ref: Sentence) -> list[tuple[int, int]]:
    """Each candidate word, left to right, takes the leftmost unused equal reference word."""
    used = [False] * len(ref)
    pairs = []
    for i, w in enumerate(cand):
        for j, r in enumerate(ref):
            if not used[j] and r == w:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def meteor_sentence(cand: Sentence, ref: Sentence) -> float:
    pairs = _align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    chunks = 1 + sum(1 for (i0, j0), (i1, j1) in zip(pairs, pairs[1:])
                     if not (i1 == i0 + 1 and j1 == j0 + 1))
    prec, rec = m / len(cand), m / len(ref)
    f_mean = 10 * prec * rec / (rec + 9 * prec)
    return f_mean * (1.0 - 0.5 * (chunks / m) ** 3)


def meteor_x(candidates, references) -> float:
    """Simplified METEOR: exact unigram matches only, no stemming or synonyms."""
    _check(candidates, references)
    per = [max(meteor_sentence(c, r) for r in refs) for c, refs in zip(candidates, references)]
    return sum(per) / len(per)


@dataclass
class EvalReport:
    bleu: list
    rouge_l: float
    cider_d: float
    meteor_x: float
    per_image: Optional[list] = field(default=None)

    def to_dict(self, include_per_image: bool = True) -> dict:
        d = asdict(self)
        if not include_per_image or self.per_image is None:
            d.pop("per_image")
        return d

    def to_json(self, include_per_image: bool = True) -> str:
        return json.dumps(self.to_dict(include_per_image), indent=1)


def evaluate_captions(candidates, references, ids: Optional[Sequence[str]] = None) -> EvalReport:
    _check(candidates, references)
    ciders = cider_d_scores(candidates, references)
    per_image = None
    if ids is not None:
        per_image = [
            {"id": i, "candidate": " ".join(c), "bleu4": bleu_n([c], [r], 4),
             "rouge_l": rouge_l_sentence(c, r), "cider_d": s,
             "meteor_x": max(meteor_sentence(c, x) for x in r)}
            for i, c, r, s in zip(ids, candidates, references, ciders)]
    return EvalReport(
        bleu=[bleu_n(candidates, references, k) for k in range(1, 5)],
        rouge_l=rouge_l(candidates, references),
        cider_d=sum(ciders) / len(ciders),
        meteor_x=meteor_x(candidates, references),
        per_image=per_image,
    )
