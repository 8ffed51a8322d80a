"""Data model for knowledge-intensive examples, JSONL persistence, a seeded
synthetic world/task generator, and a toy unigram-overlap retriever.

The synthetic worlds stand in for real Wikipedia-backed corpora: entities with
attribute/value facts, rendered through fixed sentence templates. Every
generator output is a pure function of (config, seed).
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .evaluation import normalize_answer, tokens

TASK_KINDS = ("qa", "fact", "dialogue")
FACT_VERDICTS = ("SUPPORTS", "REFUTES")
LABEL_METHODS = ("strinc", "lexical", "cxmi")


class SchemaError(ValueError):
    """A dataset record violates the JSONL schema or a type invariant."""


class ConfigError(ValueError):
    """A generation/run configuration is out of its stated range."""


@dataclass
class Passage:
    pid: str
    title: str
    text: str
    rank: int
    score: float


@dataclass
class PseudoAnswer:
    text: str
    prompt_kind: str  # concise | speculative | reasoned
    source: str  # simulator | imported


@dataclass
class SilverLabels:
    passage_labels: list[int]
    pseudo_label: int
    method: str
    scores: list[float]
    pseudo_score: float


@dataclass
class Example:
    id: str
    task_kind: str
    query: str
    gold_answers: list[str]
    passages: list[Passage]
    pseudo: PseudoAnswer | None = None
    silver: SilverLabels | None = None


def validate_example(ex: Example):
    """Check every type invariant; raise SchemaError naming the example and field."""

    def fail(fieldname, msg):
        raise SchemaError(f"example {ex.id!r}, field {fieldname!r}: {msg}")

    if ex.task_kind not in TASK_KINDS:
        fail("task_kind", f"unknown kind {ex.task_kind!r}")
    if not ex.gold_answers:
        fail("gold_answers", "must be non-empty")
    if ex.task_kind == "fact":
        if len(ex.gold_answers) != 1 or ex.gold_answers[0] not in FACT_VERDICTS:
            fail("gold_answers", f"fact examples need exactly one of {FACT_VERDICTS}")
    k = len(ex.passages)
    ranks = sorted(p.rank for p in ex.passages)
    if ranks != list(range(1, k + 1)):
        fail("passages", f"ranks must be a permutation of 1..{k}, got {ranks}")
    by_rank = sorted(ex.passages, key=lambda p: p.rank)
    for a, b in zip(by_rank, by_rank[1:]):
        if b.score > a.score:
            fail("passages", f"score increases from rank {a.rank} to {b.rank}")
    for p in by_rank:
        if not p.text:
            fail("passages", f"passage {p.pid!r} has empty text")
    if ex.pseudo is not None:
        if not ex.pseudo.text:
            fail("pseudo", "text must be non-empty")
        if ex.pseudo.prompt_kind not in ("concise", "speculative", "reasoned"):
            fail("pseudo", f"unknown prompt_kind {ex.pseudo.prompt_kind!r}")
        if ex.pseudo.source not in ("simulator", "imported"):
            fail("pseudo", f"unknown source {ex.pseudo.source!r}")
    if ex.silver is not None:
        s = ex.silver
        if len(s.passage_labels) != k or len(s.scores) != k:
            fail("silver", f"labels/scores length must equal K={k}")
        if s.method not in LABEL_METHODS:
            fail("silver", f"unknown method {s.method!r}")
        all_scores = list(s.scores) + [s.pseudo_score]
        all_labels = list(s.passage_labels) + [s.pseudo_label]
        if any(l not in (0, 1) for l in all_labels):
            fail("silver", "labels must be 0 or 1")
        for sc, lb in zip(all_scores, all_labels):
            if s.method == "strinc" and (sc not in (0.0, 1.0) or int(sc) != lb):
                fail("silver", f"strinc score must be 0/1 and equal its label, got {sc}/{lb}")
            if s.method == "lexical" and not 0.0 <= sc <= 1.0:
                fail("silver", f"lexical score {sc} outside [0, 1]")
            if s.method == "cxmi" and not 0.0 < sc < 1.0:
                fail("silver", f"cxmi score {sc} outside (0, 1)")


def example_to_dict(ex: Example) -> dict:
    return {
        "id": ex.id,
        "task_kind": ex.task_kind,
        "query": ex.query,
        "gold_answers": list(ex.gold_answers),
        "passages": [asdict(p) for p in ex.passages],
        "pseudo": asdict(ex.pseudo) if ex.pseudo else None,
        "silver": asdict(ex.silver) if ex.silver else None,
    }


def example_from_dict(d: dict, where: str = "") -> Example:
    try:
        passages = [Passage(**p) for p in d["passages"]]
        pseudo = PseudoAnswer(**d["pseudo"]) if d.get("pseudo") else None
        silver = SilverLabels(**d["silver"]) if d.get("silver") else None
        ex = Example(
            id=d["id"],
            task_kind=d["task_kind"],
            query=d["query"],
            gold_answers=list(d["gold_answers"]),
            passages=passages,
            pseudo=pseudo,
            silver=silver,
        )
    except (KeyError, TypeError) as e:
        raise SchemaError(f"{where}: missing or malformed field: {e}") from e
    validate_example(ex)
    return ex


def save_dataset(split: list[Example], path) -> None:
    """One JSON object per line, UTF-8, stable field order."""
    with open(path, "w", encoding="utf-8") as f:
        for ex in split:
            f.write(json.dumps(example_to_dict(ex), ensure_ascii=False) + "\n")


def load_dataset(path) -> list[Example]:
    """Load and validate a JSONL split; reject the whole file on first violation."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{lineno}: malformed JSON: {e}") from e
            out.append(example_from_dict(d, where=f"{path}:{lineno}"))
    return out


# --- synthetic worlds ------------------------------------------------------

_CONSONANTS = "bdfgklmnprtvz"
_VOWELS = "aeiou"

ATTRIBUTE_POOL = ["hue", "mass", "size", "age", "mood", "shape", "taste", "sound"]
VALUE_POOL = [
    "ruby", "jade", "onyx", "opal", "teal", "plum", "gold", "mint",
    "rust", "coal", "snow", "dusk", "fern", "clay", "sand", "wine",
]

TEMPLATES = {
    "qa_query": "what is the {attr} of {entity}?",
    "fact_sentence": "the {attr} of {entity} is {value}.",
}


@functools.lru_cache(maxsize=1)
def _entity_name_pool() -> list[str]:
    """Deterministic CVCV names, filtered against value/attribute collisions."""
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    reserved = VALUE_POOL + ATTRIBUTE_POOL
    pool = []
    for s1 in syllables:
        for s2 in syllables:
            name = s1 + s2
            if any(w in name or name in w for w in reserved):
                continue
            pool.append(name)
    return pool


@dataclass
class SynthConfig:
    n_entities: int = 16
    n_attributes: int = 4
    n_values: int = 10
    n_train: int = 64
    n_dev: int = 32
    n_test: int = 32
    k: int = 5
    distractor_rate: float = 0.3
    p_fact: float = 0.0
    facts_per_passage: int = 1

    def validate(self):
        if self.n_entities < 4:
            raise ConfigError("n_entities must be >= 4")
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("every split needs >= 1 example")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise ConfigError("distractor_rate must lie in [0, 1]")
        if not 0.0 <= self.p_fact <= 1.0:
            raise ConfigError("p_fact must lie in [0, 1]")
        if not 1 <= self.facts_per_passage <= 6:
            raise ConfigError("facts_per_passage must lie in 1..6")
        if self.n_attributes > len(ATTRIBUTE_POOL):
            raise ConfigError(
                f"vocabulary overflow: {self.n_attributes} attributes > pool of {len(ATTRIBUTE_POOL)}"
            )
        if self.n_values > len(VALUE_POOL):
            raise ConfigError(
                f"vocabulary overflow: {self.n_values} values > pool of {len(VALUE_POOL)}"
            )
        if self.n_values < 2:
            raise ConfigError("need >= 2 values to build distractors")


@dataclass
class SyntheticWorld:
    seed: int
    entities: list[str]
    attributes: dict[str, dict[str, str]]  # entity -> attr -> value
    templates: dict[str, str] = field(default_factory=lambda: dict(TEMPLATES))

    def facts(self) -> list[tuple[str, str, str]]:
        """All (entity, attr, value) triples in a fixed order."""
        out = []
        for e in self.entities:
            for a, v in self.attributes[e].items():
                out.append((e, a, v))
        return out

    def fact_text(self, entity: str, attr: str) -> str:
        value = self.attributes[entity][attr]
        return self.templates["fact_sentence"].format(attr=attr, entity=entity, value=value)

    def values(self) -> list[str]:
        return sorted({v for m in self.attributes.values() for v in m.values()})

    def pair_for_query(self, query: str) -> tuple[str, str] | None:
        """Recover the (entity, attribute) a synthetic query talks about."""
        q = f" {normalize_answer(query)} "
        ent = next((e for e in self.entities if f" {e} " in q), None)
        if ent is None:
            return None
        attrs = self.attributes[ent]
        attr = next((a for a in attrs if f" {a} " in q), None)
        return (ent, attr) if attr else None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "entities": list(self.entities),
            "attributes": {e: dict(v) for e, v in self.attributes.items()},
            "templates": dict(self.templates),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticWorld":
        return cls(
            seed=d["seed"],
            entities=list(d["entities"]),
            attributes={e: dict(v) for e, v in d["attributes"].items()},
            templates=dict(d["templates"]),
        )


def save_world(world: SyntheticWorld, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(world.to_dict(), f, ensure_ascii=False, indent=2)
        f.write("\n")


def load_world(path) -> SyntheticWorld:
    with open(path, "r", encoding="utf-8") as f:
        return SyntheticWorld.from_dict(json.load(f))


def build_world(config: SynthConfig, rng: np.random.Generator) -> SyntheticWorld:
    config.validate()
    pool = _entity_name_pool()
    if config.n_entities > len(pool):
        raise ConfigError(f"vocabulary overflow: {config.n_entities} entities > pool of {len(pool)}")
    entities = [pool[i] for i in rng.choice(len(pool), size=config.n_entities, replace=False)]
    attrs = ATTRIBUTE_POOL[: config.n_attributes]
    values = VALUE_POOL[: config.n_values]
    attributes = {
        e: {a: values[int(rng.integers(len(values)))] for a in attrs} for e in entities
    }
    return SyntheticWorld(seed=0, entities=entities, attributes=attributes)


@dataclass
class SynthOutput:
    world: SyntheticWorld
    splits: dict[str, list[Example]]
    corpus: list[Passage]


def _corpus_passages(world: SyntheticWorld, facts_per_passage: int) -> list[Passage]:
    """One passage per (entity, leading attr) group of consecutive facts."""
    out = []
    for e in world.entities:
        attrs = list(world.attributes[e])
        for i in range(0, len(attrs), facts_per_passage):
            group = attrs[i : i + facts_per_passage]
            text = " ".join(world.fact_text(e, a) for a in group)
            out.append(Passage(pid=f"{e}-{group[0]}", title=e, text=text, rank=len(out) + 1, score=0.0))
    return out


def _passage_for(world, entity, attr, facts_per_passage, pid_suffix=""):
    attrs = list(world.attributes[entity])
    i = attrs.index(attr) // facts_per_passage * facts_per_passage
    group = attrs[i : i + facts_per_passage]
    text = " ".join(world.fact_text(entity, a) for a in group)
    return Passage(pid=f"{entity}-{group[0]}{pid_suffix}", title=entity, text=text, rank=0, score=0.0)


def _contains_any(text: str, norm_golds: list[str]) -> bool:
    norm = normalize_answer(text)
    return any(g in norm for g in norm_golds)


def _make_example(
    ex_id: str,
    kind: str,
    world: SyntheticWorld,
    pair: tuple[str, str],
    config: SynthConfig,
    rng: np.random.Generator,
) -> Example:
    entity, attr = pair
    value = world.attributes[entity][attr]
    if kind == "qa":
        query = world.templates["qa_query"].format(attr=attr, entity=entity)
        golds = [value]
    else:
        supports = bool(rng.integers(2))
        if supports:
            claimed = value
        else:
            others = [v for v in world.values() if v != value]
            claimed = others[int(rng.integers(len(others)))]
        query = world.templates["fact_sentence"].format(attr=attr, entity=entity, value=claimed)
        golds = ["SUPPORTS" if supports else "REFUTES"]

    norm_golds = [normalize_answer(g) for g in golds]
    evidence = _passage_for(world, entity, attr, config.facts_per_passage)
    include_evidence = rng.random() >= config.distractor_rate

    candidates = [
        (e, a)
        for e in world.entities
        if e != entity
        for a in list(world.attributes[e])[:: config.facts_per_passage]
    ]
    order = rng.permutation(len(candidates))
    chosen: list[Passage] = []
    needed = config.k - (1 if include_evidence else 0)
    for idx in order:
        if len(chosen) >= needed:
            break
        e, a = candidates[int(idx)]
        p = _passage_for(world, e, a, config.facts_per_passage)
        if kind == "qa" and _contains_any(p.text, norm_golds):
            continue
        if any(q.pid == p.pid for q in chosen):
            continue
        chosen.append(p)
    if len(chosen) < needed:
        raise ConfigError(
            f"world too small to draw {needed} distractor passages for example {ex_id}"
        )

    slots: list[Passage] = list(chosen)
    if include_evidence:
        slots.insert(int(rng.integers(len(chosen) + 1)), evidence)
    passages = []
    for rank, p in enumerate(slots, 1):
        passages.append(Passage(pid=p.pid, title=p.title, text=p.text, rank=rank, score=round(1.0 / rank, 6)))

    return Example(id=ex_id, task_kind=kind, query=query, gold_answers=golds, passages=passages)


def synth_generate(config: SynthConfig, seed: int) -> SynthOutput:
    """Build a world plus train/dev/test splits, deterministically from seed.

    QA-example (entity, attribute) pairs are sampled without replacement
    across all three splits while supply lasts, so dev/test stay disjoint
    from train whenever the world is big enough.
    """
    config.validate()
    ss = np.random.SeedSequence(seed)
    world_rng, *split_rngs = [np.random.default_rng(s) for s in ss.spawn(4)]
    world = build_world(config, world_rng)
    world.seed = seed

    all_pairs = [(e, a) for e in world.entities for a in world.attributes[e]]
    pair_order = [all_pairs[i] for i in world_rng.permutation(len(all_pairs))]
    pair_cursor = 0

    splits: dict[str, list[Example]] = {}
    for split_name, count, rng in zip(
        ("train", "dev", "test"), (config.n_train, config.n_dev, config.n_test), split_rngs
    ):
        examples = []
        for i in range(count):
            kind = "fact" if rng.random() < config.p_fact else "qa"
            if pair_cursor < len(pair_order):
                pair = pair_order[pair_cursor]
                pair_cursor += 1
            else:
                pair = all_pairs[int(rng.integers(len(all_pairs)))]
            examples.append(
                _make_example(f"{split_name}-{kind}-{i:04d}", kind, world, pair, config, rng)
            )
        splits[split_name] = examples
    return SynthOutput(world=world, splits=splits, corpus=_corpus_passages(world, config.facts_per_passage))


# --- toy retriever ---------------------------------------------------------


def retrieve_topk(query: str, corpus: list[Passage], k: int) -> list[Passage]:
    """Top-k passages by shared-normalized-unigram count; ties break on pid.

    If k exceeds the corpus size, every passage is returned, ranked.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not corpus:
        raise ValueError("corpus must be non-empty")
    q_tokens = set(tokens(query))
    scored = []
    for p in corpus:
        overlap = len(q_tokens & set(tokens(p.title + " " + p.text)))
        scored.append((-overlap, p.pid, p))
    scored.sort(key=lambda t: (t[0], t[1]))
    out = []
    for rank, (neg, _, p) in enumerate(scored[:k], 1):
        out.append(Passage(pid=p.pid, title=p.title, text=p.text, rank=rank, score=float(-neg)))
    return out


def save_corpus(corpus: list[Passage], path):
    with open(path, "w", encoding="utf-8") as f:
        for p in corpus:
            f.write(json.dumps(asdict(p), ensure_ascii=False) + "\n")


def load_corpus(path) -> list[Passage]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(Passage(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise SchemaError(f"{path}:{lineno}: bad corpus record: {e}") from e
    return out
