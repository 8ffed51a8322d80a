"""Silver "contains the answer" labels for passages and pseudo-answers.

Three strategies:
  strinc  — normalized gold answer is a substring of the context
  lexical — best answer-token recall over the context's sentences, thresholded
  cxmi    — does conditioning the generator on the context raise the gold
            answer's likelihood? Normalized to (0,1) so one threshold applies.

Thresholding uses >= everywhere, so boundary scores label deterministically.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .corpus import ConfigError, Example, SilverLabels
from .evaluation import normalize_answer, tokens

_SENTENCE_SPLITTERS = {
    "default": re.compile(r"(?<=[.?!])\s+"),
}


@dataclass
class LabelConfig:
    method: str = "strinc"
    t0: float = 0.5  # cxmi threshold
    t_lex: float = 0.5  # lexical recall threshold
    sentence_split: str = "default"

    def validate(self):
        if self.method not in ("strinc", "lexical", "cxmi"):
            raise ConfigError(f"unknown labeling method {self.method!r}")
        if not 0.0 < self.t0 < 1.0:
            raise ConfigError(f"t0 must lie in (0, 1), got {self.t0}")
        if not 0.0 < self.t_lex <= 1.0:
            raise ConfigError(f"t_lex must lie in (0, 1], got {self.t_lex}")
        if self.sentence_split not in _SENTENCE_SPLITTERS:
            raise ConfigError(f"unknown sentence_split rule {self.sentence_split!r}")


def split_sentences(text: str, rule: str = "default") -> list[str]:
    parts = _SENTENCE_SPLITTERS[rule].split(text)
    return [p for p in (part.strip() for part in parts) if p]


def strinc_label(context: str, gold_answers: list[str]) -> int:
    """1 iff any normalized gold answer is a substring of the normalized context."""
    if not context:
        raise ValueError("strinc_label: empty context")
    norm_ctx = normalize_answer(context)
    return int(any(g and g in norm_ctx for g in (normalize_answer(a) for a in gold_answers)))


def lexical_label(
    context: str, gold_answers: list[str], t_lex: float = 0.5, sentence_split: str = "default"
) -> tuple[int, float]:
    """Best per-sentence answer-token recall; label 1 iff it reaches t_lex."""
    if not context:
        raise ValueError("lexical_label: empty context")
    answer_sets = []
    for a in gold_answers:
        toks = set(tokens(a))
        if not toks:
            raise ValueError(f"gold answer {a!r} has no tokens after normalization")
        answer_sets.append(toks)
    score = 0.0
    for sentence in split_sentences(context, sentence_split):
        sent_tokens = set(tokens(sentence))
        for answer in answer_sets:
            score = max(score, len(answer & sent_tokens) / len(answer))
    return int(score >= t_lex), score


def cxmi_score(query: str, gold_answer: str, context: str | None, lm) -> float:
    """Likelihood-ratio score in (0, 1); 0.5 means the context changes nothing.

    With l1 = log p(answer | query, context) and l0 = log p(answer | query),
    the score is exp(l1 - l0) / (1 + exp(l1 - l0)).
    """
    l1 = lm.answer_log_prob(query, gold_answer, context=context)
    l0 = lm.answer_log_prob(query, gold_answer, context=None)
    d = l1 - l0
    if d >= 0:
        s = 1.0 / (1.0 + math.exp(-d))
    else:
        e = math.exp(d)
        s = e / (1.0 + e)
    return min(max(s, 1e-15), 1.0 - 1e-15)


def _score_context(context: str, example: Example, config: LabelConfig, lm) -> tuple[int, float]:
    if config.method == "strinc":
        label = strinc_label(context, example.gold_answers)
        return label, float(label)
    if config.method == "lexical":
        return lexical_label(context, example.gold_answers, config.t_lex, config.sentence_split)
    best = max(
        cxmi_score(example.query, gold, context, lm) for gold in example.gold_answers
    )
    return int(best >= config.t0), best


def label_example(example: Example, config: LabelConfig, lm=None) -> SilverLabels:
    """Label all K passages and the pseudo-answer; attaches and returns the result."""
    config.validate()
    if example.pseudo is None:
        raise ValueError(
            f"example {example.id!r} has no pseudo-answer; run pseudo generation/import first"
        )
    if config.method == "cxmi" and lm is None:
        raise ValueError("cxmi labeling needs a generator handle (lm)")
    labels, scores = [], []
    for passage in example.passages:
        label, score = _score_context(passage.text, example, config, lm)
        labels.append(label)
        scores.append(score)
    pseudo_label, pseudo_score = _score_context(example.pseudo.text, example, config, lm)
    silver = SilverLabels(
        passage_labels=labels,
        pseudo_label=pseudo_label,
        method=config.method,
        scores=scores,
        pseudo_score=pseudo_score,
    )
    example.silver = silver
    return silver


def label_split(split: list[Example], config: LabelConfig, lm=None) -> list[Example]:
    for ex in split:
        label_example(ex, config, lm=lm)
    return split
