"""Pseudo-answer provisioning: prompt rendering for the three prompt kinds,
a seeded answer simulator with controllable correctness, and offline import
of externally generated pseudo-answers.

There is deliberately no live LLM client here; network generation is neither
deterministic nor verifiable in CI. Real-LLM pseudo-answers enter through
``import_pseudo`` files produced elsewhere with the rendered prompts.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .corpus import ConfigError, Example, PseudoAnswer, SyntheticWorld
from .labeling import strinc_label

log = logging.getLogger(__name__)

PROMPT_KINDS = ("concise", "speculative", "reasoned")
MAX_PSEUDO_TOKENS = 200  # whitespace tokens


@functools.lru_cache(maxsize=None)
def _template(kind: str) -> str:
    return resources.files("afg").joinpath(f"pseudo_templates/{kind}.txt").read_text("utf-8")


def render_prompt(kind: str, query: str) -> str:
    """The prompt an external LLM would receive for this query and prompt kind."""
    if kind not in PROMPT_KINDS:
        raise ValueError(f"unknown prompt kind {kind!r}; expected one of {PROMPT_KINDS}")
    if not query.strip():
        raise ValueError("query must be non-empty")
    return _template(kind).format(query=query)


@dataclass
class SimulatorConfig:
    p_correct: dict[str, float] = field(
        default_factory=lambda: {"concise": 0.8, "speculative": 0.6, "reasoned": 0.7}
    )
    hedge_templates: list[str] = field(
        default_factory=lambda: ["possibly {answer}", "likely {answer}", "it may be {answer}"]
    )
    rationale_template: str = "{answer}, because the {attr} of {entity} is {value}."
    seed: int = 0

    def validate(self):
        for kind in PROMPT_KINDS:
            p = self.p_correct.get(kind)
            if p is None or not 0.0 <= p <= 1.0:
                raise ConfigError(f"p_correct[{kind!r}] must lie in [0, 1], got {p}")
        if not self.hedge_templates:
            raise ConfigError("need at least one hedge template")


def _wrong_value(world: SyntheticWorld, avoid: str, rng: np.random.Generator) -> str:
    pool = [v for v in world.values() if v != avoid]
    if not pool:
        raise ConfigError("world has a single value; cannot simulate a wrong answer")
    return pool[int(rng.integers(len(pool)))]


def simulate_pseudo(
    example: Example,
    kind: str,
    config: SimulatorConfig,
    rng: np.random.Generator,
    world: SyntheticWorld | None = None,
) -> PseudoAnswer:
    """Simulated LLM answer: correct with probability p_correct[kind], else a
    plausible wrong value from the same world. Deterministic given the rng state."""
    if kind not in PROMPT_KINDS:
        raise ValueError(f"unknown prompt kind {kind!r}")
    config.validate()
    if world is None:
        raise ValueError(
            f"example {example.id!r} has no synthetic world attached; "
            "use import_pseudo for non-synthetic data"
        )
    pair = world.pair_for_query(example.query)
    if pair is None:
        raise ValueError(
            f"example {example.id!r}: query does not match the world; use import_pseudo"
        )
    entity, attr = pair
    true_value = world.attributes[entity][attr]
    correct = bool(rng.random() < config.p_correct[kind])

    if example.task_kind == "fact":
        verdict = example.gold_answers[0].lower()
        other = "refutes" if verdict == "supports" else "supports"
        answer = verdict if correct else other
        stated = true_value if correct else _wrong_value(world, true_value, rng)
    else:
        answer = example.gold_answers[0] if correct else _wrong_value(world, example.gold_answers[0], rng)
        stated = answer

    if kind == "concise":
        text = answer
    elif kind == "speculative":
        tpl = config.hedge_templates[int(rng.integers(len(config.hedge_templates)))]
        text = tpl.format(answer=answer)
    else:
        text = config.rationale_template.format(answer=answer, attr=attr, entity=entity, value=stated)
    return PseudoAnswer(text=text, prompt_kind=kind, source="simulator")


def simulate_split(
    split: list[Example],
    config: SimulatorConfig,
    world: SyntheticWorld,
    kind: str = "mix",
) -> list[Example]:
    """Fill every example's pseudo-answer; kind "mix" draws uniformly per example."""
    rng = np.random.default_rng(config.seed)
    for ex in split:
        k = PROMPT_KINDS[int(rng.integers(len(PROMPT_KINDS)))] if kind == "mix" else kind
        ex.pseudo = simulate_pseudo(ex, k, config, rng, world=world)
    return split


def import_pseudo(path, split: list[Example]) -> list[Example]:
    """Merge a JSONL file of {id, text, prompt_kind} records into the split by id."""
    import json

    by_id = {ex.id: ex for ex in split}
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            ex_id = rec["id"]
            if ex_id not in by_id:
                raise ValueError(f"{path}:{lineno}: unknown example id {ex_id!r}")
            if ex_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate example id {ex_id!r}")
            seen.add(ex_id)
            kind = rec.get("prompt_kind", "concise")
            if kind not in PROMPT_KINDS:
                raise ValueError(f"{path}:{lineno}: unknown prompt_kind {kind!r}")
            words = rec["text"].split()
            if len(words) > MAX_PSEUDO_TOKENS:
                log.warning(
                    "%s:%d: pseudo-answer for %s truncated from %d to %d tokens",
                    path, lineno, ex_id, len(words), MAX_PSEUDO_TOKENS,
                )
                rec["text"] = " ".join(words[:MAX_PSEUDO_TOKENS])
            by_id[ex_id].pseudo = PseudoAnswer(text=rec["text"], prompt_kind=kind, source="imported")
    return split


def pseudo_recall(split: list[Example]) -> float:
    """Fraction of examples whose pseudo-answer contains a gold answer (strinc rule)."""
    if not split:
        return 0.0
    total = 0
    for ex in split:
        if ex.pseudo is None:
            raise ValueError(f"example {ex.id!r} has no pseudo-answer")
        total += strinc_label(ex.pseudo.text, ex.gold_answers)
    return total / len(split)
