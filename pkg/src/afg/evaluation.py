"""Answer normalization, QA metrics (EM, unigram F1, accuracy, top-k recall),
and end-to-end scoring of a model over a dataset split.

Normalization follows the SQuAD convention and is shared by the metrics, the
string-inclusion labeler, and the toy retriever, so labels and scores always
agree on what counts as "the same answer".
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

TASK_METRICS = {"qa": "em", "fact": "acc", "dialogue": "f1"}


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = text.lower()
    text = text.translate(_PUNCT_TABLE)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


def exact_match(pred: str, golds: list[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold answer."""
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1_single(pred: str, gold: str) -> float:
    pred_tokens = tokens(pred)
    gold_tokens = tokens(gold)
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(pred_tokens)
    recall = num_same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def unigram_f1(pred: str, golds: list[str]) -> float:
    """Token-multiset F1 against each gold answer; best gold wins."""
    return max(_f1_single(pred, g) for g in golds)


def accuracy(pred: str, gold: str) -> int:
    """Exact verdict match after normalization (fact-verification tasks)."""
    return int(normalize_answer(pred) == normalize_answer(gold))


def topk_recall(example, k: int) -> int:
    """1 iff any gold answer appears (normalized substring) in a rank-<=k passage."""
    norm_golds = [normalize_answer(g) for g in example.gold_answers]
    for passage in example.passages:
        if passage.rank > k:
            continue
        text = normalize_answer(passage.text)
        if any(g and g in text for g in norm_golds):
            return 1
    return 0


def score_prediction(example, prediction: str) -> tuple[str, float]:
    """Score one prediction with its task's headline metric."""
    metric = TASK_METRICS[example.task_kind]
    if metric == "em":
        return metric, float(exact_match(prediction, example.gold_answers))
    if metric == "acc":
        return metric, float(accuracy(prediction, example.gold_answers[0]))
    return metric, unigram_f1(prediction, example.gold_answers)


@dataclass
class MetricsReport:
    metrics: dict[str, float]
    n_examples: int
    mode: str
    checkpoint_id: str
    records: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "n_examples": self.n_examples,
            "mode": self.mode,
            "checkpoint_id": self.checkpoint_id,
        }


def evaluate(model, split, mode: str, metric: str | None = None, checkpoint_id: str = "") -> MetricsReport:
    """Greedy-decode every example (packed per ``mode``) and score it.

    ``metric`` may force a single metric name; it must match every example's
    task kind, otherwise the task's own metric is used per example.
    """
    from .model import pack_input  # late import; model depends on numerics only

    records = []
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    total = 0.0
    for ex in split:
        if metric is not None and TASK_METRICS[ex.task_kind] != metric:
            raise ValueError(
                f"metric {metric!r} does not apply to task_kind {ex.task_kind!r} (example {ex.id})"
            )
        fi = pack_input(ex, mode, model.tokenizer, model.config)
        enc = model.encode(fi)
        out = model.generate_greedy(enc, model.config.max_output_len)
        prediction = model.tokenizer.decode(out.tokens)
        name, score = score_prediction(ex, prediction)
        records.append(
            {
                "id": ex.id,
                "prediction": prediction,
                "gold_answers": list(ex.gold_answers),
                "metric": name,
                "score": score,
            }
        )
        sums[name] = sums.get(name, 0.0) + score
        counts[name] = counts.get(name, 0) + 1
        total += score
    metrics = {name: sums[name] / counts[name] for name in sorted(sums)}
    metrics["dev_metric"] = total / len(split) if split else 0.0
    return MetricsReport(
        metrics=metrics,
        n_examples=len(split),
        mode=mode,
        checkpoint_id=checkpoint_id,
        records=records,
    )


def save_report(report: MetricsReport, out_dir) -> Path:
    """Write report.json (aggregate) and records.jsonl (per example)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, ensure_ascii=False, indent=2)
        f.write("\n")
    with open(out_dir / "records.jsonl", "w", encoding="utf-8") as f:
        for rec in report.records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return path


def render_table(rows: list[dict], title: str = "") -> str:
    """Plain-text comparison table: one row per report, one column per metric."""
    names = sorted({m for row in rows for m in row["metrics"]})
    header = ["run"] + names
    lines = [[str(row.get("label", row.get("checkpoint_id", "?")))] + [
        f"{row['metrics'].get(m, float('nan')):.4f}" for m in names
    ] for row in rows]
    widths = [max(len(h), *(len(line[i]) for line in lines)) if lines else len(h) for i, h in enumerate(header)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    out = []
    if title:
        out.append(title)
    out.append(fmt(header))
    out.append(fmt(["-" * w for w in widths]))
    out.extend(fmt(line) for line in lines)
    return "\n".join(out)
