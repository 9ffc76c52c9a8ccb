"""Caption evaluation: corpus BLEU-1..4, ROUGE-L, and CIDEr, from scratch.

Conventions (the usual ones from the captioning evaluation literature):
BLEU uses clipped modified n-gram precision, a geometric mean over orders,
no smoothing, and the closest-reference-length brevity penalty (ties to
the shorter length).  ROUGE-L is the LCS F-measure with beta = 1.2, max
over references per image, mean over the corpus.  CIDEr is the TF-IDF
n-gram cosine (orders 1..4 averaged, mean over references, scaled by 10)
without the CIDEr-D length penalty; IDF comes from the reference corpus.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

_PUNCT = str.maketrans("", "", ".,;:")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip . , ; : and split on whitespace.  Idempotent."""
    return [t for t in text.lower().translate(_PUNCT).split() if t]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


Corpus = Sequence[Sequence[str]]  # one token list per image
RefCorpus = Sequence[Sequence[Sequence[str]]]  # several token lists per image


def _check_corpus(candidates: Corpus, references: RefCorpus) -> None:
    if not candidates:
        raise ValueError("metric evaluation needs a non-empty corpus")
    if len(candidates) != len(references):
        raise ValueError(
            f"candidate/reference count mismatch: {len(candidates)} vs {len(references)}"
        )
    for refs in references:
        if not refs:
            raise ValueError("every image needs at least one reference")


def bleu(candidates: Corpus, references: RefCorpus, n_max: int = 4) -> list[float]:
    """Corpus-level BLEU-1..BLEU-n_max.  Zero precision at some order
    zeroes every B-n from that order up (no smoothing)."""
    _check_corpus(candidates, references)
    correct = [0] * n_max
    guess = [0] * n_max
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        cand_len += len(cand)
        ref_len += min(
            (abs(len(r) - len(cand)), len(r)) for r in refs
        )[1]
        for n in range(1, n_max + 1):
            counts = _ngrams(cand, n)
            max_ref = Counter()
            for r in refs:
                for gram, c in _ngrams(r, n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            guess[n - 1] += max(0, len(cand) - n + 1)
            correct[n - 1] += sum(min(c, max_ref[gram]) for gram, c in counts.items())
    if cand_len == 0:
        return [0.0] * n_max
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    scores = []
    log_sum = 0.0
    dead = False
    for n in range(1, n_max + 1):
        if guess[n - 1] == 0 or correct[n - 1] == 0:
            dead = True
        if dead:
            scores.append(0.0)
            continue
        log_sum += math.log(correct[n - 1] / guess[n - 1])
        scores.append(bp * math.exp(log_sum / n))
    return scores


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidates: Corpus, references: RefCorpus, beta: float = 1.2) -> float:
    """LCS F-measure; per image the max over references, corpus mean."""
    _check_corpus(candidates, references)
    total = 0.0
    for cand, refs in zip(candidates, references):
        best = 0.0
        for ref in refs:
            lcs = _lcs_length(cand, ref)
            if lcs == 0:
                continue
            prec = lcs / len(cand)
            rec = lcs / len(ref)
            f = ((1 + beta**2) * prec * rec) / (rec + beta**2 * prec)
            best = max(best, f)
        total += best
    return total / len(candidates)


def cider(candidates: Corpus, references: RefCorpus, n_max: int = 4) -> float:
    """TF-IDF n-gram cosine similarity, orders averaged, x10."""
    scores = cider_per_image(candidates, references, n_max)
    return sum(scores) / len(scores)


def cider_per_image(candidates: Corpus, references: RefCorpus, n_max: int = 4) -> list[float]:
    """Per-image CIDEr under the corpus-wide reference IDF."""
    _check_corpus(candidates, references)
    num_images = len(references)
    doc_freq: list[dict] = [defaultdict(int) for _ in range(n_max)]
    for refs in references:
        seen = [set() for _ in range(n_max)]
        for ref in refs:
            for n in range(1, n_max + 1):
                seen[n - 1].update(_ngrams(ref, n).keys())
        for n in range(n_max):
            for gram in seen[n]:
                doc_freq[n][gram] += 1

    def tfidf(tokens, n):
        vec = {}
        for gram, count in _ngrams(tokens, n + 1).items():
            idf = math.log(num_images / max(1.0, doc_freq[n][gram]))
            vec[gram] = count * idf
        return vec

    def cosine(u, v):
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        num = sum(x * v[g] for g, x in u.items() if g in v)
        return num / (nu * nv)

    scores = []
    for cand, refs in zip(candidates, references):
        per_order = 0.0
        for n in range(n_max):
            cvec = tfidf(cand, n)
            per_order += sum(cosine(cvec, tfidf(r, n)) for r in refs) / len(refs)
        scores.append(10.0 * per_order / n_max)
    return scores


@dataclass
class ImageScores:
    image_id: str
    candidate: str
    bleu: list[float]
    rouge_l: float
    cider: float


@dataclass
class EvalReport:
    bleu: list[float]
    cider: float
    rouge_l: float
    per_image: list[ImageScores] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "cider": self.cider,
            "rouge_l": self.rouge_l,
            "per_image": [
                {
                    "image_id": s.image_id,
                    "candidate": s.candidate,
                    "bleu": s.bleu,
                    "rouge_l": s.rouge_l,
                    "cider": s.cider,
                }
                for s in self.per_image
            ],
        }

    def table(self) -> str:
        header = f"{'B-1':>7} {'B-2':>7} {'B-3':>7} {'B-4':>7} {'C':>7} {'R':>7}"
        row = " ".join(f"{v:7.3f}" for v in [*self.bleu, self.cider, self.rouge_l])
        return header + "\n" + row


def score_corpus(candidates: Corpus, references: RefCorpus) -> tuple[list[float], float, float]:
    return (
        bleu(candidates, references),
        cider(candidates, references),
        rouge_l(candidates, references),
    )


def evaluate_split(params, vocabulary, samples, beam: int, max_len: int, n_objects: int, patch_scale: float, workers: int = 1) -> EvalReport:
    """Decode every sample and score against its references."""
    from concurrent.futures import ThreadPoolExecutor

    from .decoder import beam_decode
    from .features import compute_raw_features, project_features

    def decode(sample):
        raw = compute_raw_features(sample, n_objects, patch_scale)
        stack = project_features(raw, params)
        return vocabulary.decode(beam_decode(stack, params, beam, max_len))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            candidates = list(pool.map(decode, samples))
    else:
        candidates = [decode(s) for s in samples]
    references = [[tokenize(c) for c in s.captions] for s in samples]
    corpus_bleu, corpus_cider, corpus_rouge = score_corpus(candidates, references)
    image_cider = cider_per_image(candidates, references)
    per_image = [
        ImageScores(
            image_id=s.image_id,
            candidate=" ".join(cand),
            bleu=bleu([cand], [refs]),
            rouge_l=rouge_l([cand], [refs]),
            cider=ic,
        )
        for s, cand, refs, ic in zip(samples, candidates, references, image_cider)
    ]
    return EvalReport(
        bleu=corpus_bleu, cider=corpus_cider, rouge_l=corpus_rouge, per_image=per_image
    )
