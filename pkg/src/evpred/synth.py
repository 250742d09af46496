"""Deterministic synthetic event-chain corpora.

Each scenario gets a fixed successor permutation over its events; every
event has a handful of deterministic surface paraphrases. Pairs map a source
paraphrase to the canonical (first) paraphrase of the successor event. The
pair list is emitted ``rounds`` times, rotated by one position per round, so
every distinct pair lands on several different positions mod 10 and the
positional 8/1/1 split leaves no pair unseen in training.

In ambiguous mode every event has two possible successors, selected by a cue
token at the *end* of the source sentence while the event phrase sits at the
start, separated by filler: a summary that favors recent tokens must drag
the whole event identity across the filler span, whereas a backward encoder
pass reads it fresh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .evaluation import ParaphraseInventory
from .rng import stream_rng

DEFAULT_POOL = (
    "mix", "pour", "bake", "chop", "wash", "slice", "stir", "heat", "cool",
    "grab", "open", "close", "fill", "empty", "check", "fold", "wipe", "move",
    "pan", "bowl", "oven", "cake", "dough", "batter", "knife", "spoon",
    "plate", "towel", "table", "timer", "rack", "tray", "lid", "cup",
    "flour", "sugar", "butter", "salt", "water", "milk",
)

CUE_A, CUE_B = "early", "late"


@dataclass
class SyntheticSpec:
    num_scenarios: int = 5
    events_per_scenario: int = 10
    paraphrases_per_event: int = 3
    vocab_pool: tuple = DEFAULT_POOL
    seed: int = 0
    rounds: int = 4
    ambiguous: bool = False
    filler_len: int = 6          # ambiguous mode: tokens between event and cue

    def __post_init__(self):
        if min(self.num_scenarios, self.events_per_scenario,
               self.paraphrases_per_event, self.rounds) < 1:
            raise ValueError("all synthetic-spec counts must be >= 1")
        if self.filler_len < 0:
            raise ValueError("filler_len must be >= 0")
        free = len(self.vocab_pool) - self.num_scenarios
        if free < 2 or free * free < self.events_per_scenario:
            raise ValueError("vocab pool too small for the requested shape")


def _variant(v: int, verb: str, obj: str, scen: str) -> tuple[str, ...]:
    if v == 0:
        return (verb, "the", obj, "in", scen)
    if v == 1:
        return (verb, obj, "in", scen)
    if v == 2:
        return ("please", verb, "the", obj, "in", scen)
    return (verb, "the", obj, "in", scen, f"v{v}")


@dataclass
class SynthResult:
    pairs: list                      # (source tokens, target tokens) in file order
    meta: list                       # (scenario, src_event, tgt_event, cue|None), aligned
    inventory: ParaphraseInventory
    variants: dict = field(default_factory=dict)    # (si, ei) -> [token tuples]
    successors: dict = field(default_factory=dict)  # si -> {cue|None: permutation list}

    def write_pairs(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for src, tgt in self.pairs:
                f.write(f"{' '.join(src)}\t{' '.join(tgt)}\n")

    def write_inventory(self, path):
        self.inventory.save(path)


def generate(spec: SyntheticSpec) -> SynthResult:
    rng = stream_rng(spec.seed, "synth")
    pool = [str(w) for w in spec.vocab_pool]
    order = rng.permutation(len(pool))
    scen_nouns = [pool[i] for i in order[:spec.num_scenarios]]
    rest = [pool[i] for i in order[spec.num_scenarios:]]

    result = SynthResult(pairs=[], meta=[], inventory=ParaphraseInventory())
    base: list[tuple[tuple, tuple]] = []
    base_meta: list[tuple] = []
    k, p = spec.events_per_scenario, spec.paraphrases_per_event
    for si in range(spec.num_scenarios):
        scen = scen_nouns[si]
        combo_ids = rng.choice(len(rest) * len(rest), size=k, replace=False)
        events = [(rest[c // len(rest)], rest[c % len(rest)]) for c in combo_ids]
        variants = {}
        for ei, (verb, obj) in enumerate(events):
            variants[ei] = [_variant(v, verb, obj, scen) for v in range(p)]
            result.variants[(si, ei)] = variants[ei]
            for tokens in variants[ei]:
                result.inventory.add(f"scenario{si}", f"event{ei}", tokens)
        if spec.ambiguous:
            succ_a = [int(x) for x in rng.permutation(k)]
            succ_b = [int(x) for x in rng.permutation(k)]
            result.successors[si] = {CUE_A: succ_a, CUE_B: succ_b}
            for v in range(p):
                for ei in range(k):
                    for cue, succ in ((CUE_A, succ_a), (CUE_B, succ_b)):
                        filler = tuple(
                            rest[i] for i in rng.choice(len(rest), size=spec.filler_len)
                        ) if spec.filler_len else ()
                        src = variants[ei][v] + filler + (cue,)
                        base.append((src, variants[succ[ei]][0]))
                        base_meta.append((si, ei, succ[ei], cue))
        else:
            succ = [int(x) for x in rng.permutation(k)]
            result.successors[si] = {None: succ}
            for v in range(p):
                for ei in range(k):
                    base.append((variants[ei][v], variants[succ[ei]][0]))
                    base_meta.append((si, ei, succ[ei], None))

    for r in range(spec.rounds):
        off = r % len(base)
        result.pairs.extend(base[off:] + base[:off])
        result.meta.extend(base_meta[off:] + base_meta[:off])
    return result
