"""Corpus BLEU, length-bucketed BLEU, and gold-paraphrase-set accuracy.

BLEU is aggregated at the corpus level: clipped n-gram matches and lengths
are summed over all sentence pairs before taking ratios, then
bleu = BP * exp(mean(log p_n)) with uniform weights, or 0 if any p_n is 0.
BP = exp(1 - r/c) when the total candidate length c falls short of the total
reference length r, else 1.

Tallies are associative, so shards can be scored independently and merged.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import PairCorpus, tokenize
from .errors import FormatError, IntegrityError


def _ngrams(seq, n):
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


@dataclass
class BleuTally:
    """Mergeable corpus-level n-gram counts."""

    max_n: int = 4
    matched: list[int] = field(default_factory=list)
    total: list[int] = field(default_factory=list)
    candidate_len: int = 0
    reference_len: int = 0
    pairs: int = 0

    def __post_init__(self):
        if not self.matched:
            self.matched = [0] * self.max_n
        if not self.total:
            self.total = [0] * self.max_n

    def add_pair(self, candidate, reference):
        candidate = list(candidate)
        reference = list(reference)
        self.candidate_len += len(candidate)
        self.reference_len += len(reference)
        self.pairs += 1
        for n in range(1, self.max_n + 1):
            cand_counts = Counter(_ngrams(candidate, n))
            ref_counts = Counter(_ngrams(reference, n))
            self.matched[n - 1] += sum(
                min(c, ref_counts[g]) for g, c in cand_counts.items())
            self.total[n - 1] += max(len(candidate) - n + 1, 0)

    def __add__(self, other: "BleuTally") -> "BleuTally":
        if self.max_n != other.max_n:
            raise ValueError("cannot merge tallies of different max_n")
        return BleuTally(
            max_n=self.max_n,
            matched=[a + b for a, b in zip(self.matched, other.matched)],
            total=[a + b for a, b in zip(self.total, other.total)],
            candidate_len=self.candidate_len + other.candidate_len,
            reference_len=self.reference_len + other.reference_len,
            pairs=self.pairs + other.pairs,
        )


@dataclass
class BleuReport:
    bleu: float
    precisions: tuple
    brevity_penalty: float
    candidate_len: int
    reference_len: int
    pairs: int = 0


def bleu_tally(candidates, references, max_n: int = 4) -> BleuTally:
    if len(candidates) != len(references):
        raise ValueError(
            f"{len(candidates)} candidates vs {len(references)} references")
    tally = BleuTally(max_n=max_n)
    for cand, ref in zip(candidates, references):
        tally.add_pair(cand, ref)
    return tally


def bleu_from_tally(tally: BleuTally) -> BleuReport:
    c, r = tally.candidate_len, tally.reference_len
    precisions = tuple(
        (m / t) if t > 0 else 0.0 for m, t in zip(tally.matched, tally.total))
    if c == 0:
        bp = 0.0
    elif c >= r:
        bp = 1.0
    else:
        bp = math.exp(1.0 - r / c)
    if all(p > 0.0 for p in precisions) and c > 0:
        bleu = bp * math.exp(sum(math.log(p) for p in precisions) / tally.max_n)
    else:
        bleu = 0.0
    return BleuReport(bleu=bleu, precisions=precisions, brevity_penalty=bp,
                      candidate_len=c, reference_len=r, pairs=tally.pairs)


def bleu_corpus(candidates, references, max_n: int = 4) -> BleuReport:
    """Corpus BLEU with a single reference per candidate."""
    return bleu_from_tally(bleu_tally(candidates, references, max_n=max_n))


def sentence_bleu_smoothed(candidate, reference, max_n: int = 4) -> float:
    """Add-one smoothed sentence BLEU, for diagnostics only."""
    tally = BleuTally(max_n=max_n)
    tally.add_pair(candidate, reference)
    c, r = tally.candidate_len, tally.reference_len
    if c == 0:
        return 0.0
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    logp = sum(
        math.log((m + 1) / (t + 1)) for m, t in zip(tally.matched, tally.total))
    return bp * math.exp(logp / max_n)


BUCKETS = ("<=5", "6-10", ">10")


def length_bucket(source_len: int) -> str:
    if source_len <= 5:
        return BUCKETS[0]
    if source_len <= 10:
        return BUCKETS[1]
    return BUCKETS[2]


def bleu_by_length_bucket(sources, candidates, references, max_n: int = 4):
    """Corpus BLEU per source-length bucket (<=5, 6-10, >10 tokens).

    Returns {bucket: BleuReport} with empty buckets absent; bucket pair
    counts always sum to the corpus size.
    """
    if not (len(sources) == len(candidates) == len(references)):
        raise ValueError("sources, candidates, references must align")
    tallies: dict[str, BleuTally] = {}
    for src, cand, ref in zip(sources, candidates, references):
        bucket = length_bucket(len(src))
        if bucket not in tallies:
            tallies[bucket] = BleuTally(max_n=max_n)
        tallies[bucket].add_pair(cand, ref)
    return {b: bleu_from_tally(tallies[b]) for b in BUCKETS if b in tallies}


# ---------------------------------------------------------------------------
# paraphrase sets

class ParaphraseInventory:
    """scenario -> paraphrase sets of normalized event descriptions.

    Within a scenario, no sentence may belong to two sets (rejected at
    construction); a lookup that matches sets in two scenarios is also an
    integrity error, because the target's set would be ambiguous.
    """

    def __init__(self):
        self.scenarios: dict[str, dict[str, set[tuple[str, ...]]]] = {}
        self._index: dict[tuple[str, ...], list[tuple[str, str]]] = {}

    def add(self, scenario: str, set_id: str, sentence) -> None:
        tokens = tuple(tokenize(sentence)) if isinstance(sentence, str) else tuple(sentence)
        if not tokens:
            raise ValueError("empty paraphrase sentence")
        sets = self.scenarios.setdefault(scenario, {})
        for other_id, members in sets.items():
            if other_id != set_id and tokens in members:
                raise IntegrityError(
                    f"sentence {' '.join(tokens)!r} is in two sets of scenario "
                    f"{scenario!r}: {other_id!r} and {set_id!r}")
        sets.setdefault(set_id, set()).add(tokens)
        homes = self._index.setdefault(tokens, [])
        if (scenario, set_id) not in homes:
            homes.append((scenario, set_id))

    def set_of(self, tokens) -> set | None:
        """Members of the unique set containing ``tokens``, or None."""
        homes = self._index.get(tuple(tokens))
        if not homes:
            return None
        if len(homes) > 1:
            raise IntegrityError(
                f"sentence {' '.join(tokens)!r} belongs to {len(homes)} sets "
                f"across scenarios: {homes}")
        scenario, set_id = homes[0]
        return self.scenarios[scenario][set_id]

    def num_sets(self) -> int:
        return sum(len(s) for s in self.scenarios.values())

    @classmethod
    def load(cls, path) -> "ParaphraseInventory":
        inv = cls()
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise FormatError("expected scenario<TAB>set_id<TAB>sentence",
                                      path=path, line=lineno)
                try:
                    inv.add(parts[0], parts[1], parts[2])
                except ValueError:
                    raise FormatError("empty sentence", path=path, line=lineno) from None
        return inv

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for scenario in self.scenarios:
                for set_id, members in self.scenarios[scenario].items():
                    for tokens in sorted(members):
                        f.write(f"{scenario}\t{set_id}\t{' '.join(tokens)}\n")


@dataclass
class AccuracyReport:
    evaluated_pairs: int
    correct: int
    accuracy: float
    near_misses: list  # (source tokens, target tokens, predicted tokens)


def paraphrase_accuracy(predictions, targets, inventory: ParaphraseInventory,
                        sources=None) -> AccuracyReport:
    """Token-identical membership of each prediction in its target's gold set.

    Pairs whose target is in no gold set are excluded; incorrect evaluated
    pairs are exported as near-miss candidates for human review.
    """
    if len(predictions) != len(targets):
        raise ValueError("predictions and targets must align")
    if sources is None:
        sources = [()] * len(targets)
    if len(sources) != len(targets):
        raise ValueError("sources must align with targets")
    evaluated = correct = 0
    near_misses = []
    for src, tgt, pred in zip(sources, targets, predictions):
        members = inventory.set_of(tgt)
        if members is None:
            continue
        evaluated += 1
        if tuple(pred) in members:
            correct += 1
        else:
            near_misses.append((tuple(src), tuple(tgt), tuple(pred)))
    accuracy = correct / evaluated if evaluated else 0.0
    return AccuracyReport(evaluated_pairs=evaluated, correct=correct,
                          accuracy=accuracy, near_misses=near_misses)


def select_gold_subset(corpus: PairCorpus, inventory: ParaphraseInventory) -> PairCorpus:
    """Pairs whose target is a member of some gold paraphrase set."""
    kept = [p for p in corpus if inventory.set_of(p.target) is not None]
    return PairCorpus(kept, name=f"{corpus.name}/gold-subset")


# ---------------------------------------------------------------------------
# report rendering

def render_report(bleu: BleuReport, buckets: dict | None = None,
                  accuracy: AccuracyReport | None = None) -> str:
    """Stable key=value metrics report; accuracy keys only when evaluated."""
    lines = [f"bleu={bleu.bleu!r}"]
    for i, p in enumerate(bleu.precisions, start=1):
        lines.append(f"p{i}={p!r}")
    lines.append(f"brevity_penalty={bleu.brevity_penalty!r}")
    lines.append(f"candidate_len={bleu.candidate_len}")
    lines.append(f"reference_len={bleu.reference_len}")
    lines.append(f"pairs={bleu.pairs}")
    if buckets is not None:
        for name in BUCKETS:
            if name in buckets:
                lines.append(f"bucket[{name}].bleu={buckets[name].bleu!r}")
                lines.append(f"bucket[{name}].pairs={buckets[name].pairs}")
    if accuracy is not None:
        lines.append(f"evaluated_pairs={accuracy.evaluated_pairs}")
        lines.append(f"correct={accuracy.correct}")
        lines.append(f"accuracy={accuracy.accuracy!r}")
        lines.append(f"near_misses={len(accuracy.near_misses)}")
    return "\n".join(lines) + "\n"
