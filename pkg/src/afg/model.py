"""The filtering generator network: a shared transformer encoder, an
autoregressive decoder scored by teacher forcing, and a cross-attention
classification head that predicts, per packed context field, whether it
contains the answer.

Inputs are packed as  query <sep> pseudo <sep> passage_1 <sep> ... <sep> passage_K <eos>
with a span map recording where each field landed, so the classification head
can slice the same encoder states the generator consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .lora import effective_weight
from .numerics import ParamStore, Tensor, no_grad
from .tokenizer import DEFAULT_CHARSET, EOS, PAD, SEP, CharTokenizer

MODES = ("full", "e2e", "silver")


@dataclass
class ModelConfig:
    d_model: int = 32
    d_k: int | None = None  # attention scale + cls FFN width; defaults to d_model
    d_ff: int | None = None  # feedforward width; defaults to 2 * d_model
    n_layers_enc: int = 1
    n_layers_dec: int = 1
    n_heads: int = 2
    max_input_len: int = 128
    max_output_len: int = 16
    charset: str = DEFAULT_CHARSET
    cls_projections: bool = False  # learned q/k/v maps in the cls head (off: literal raw attention)
    share_cls_ffn: bool = True  # one FFN for passage and pseudo branches

    def __post_init__(self):
        if self.d_k is None:
            self.d_k = self.d_model
        if self.d_ff is None:
            self.d_ff = 2 * self.d_model
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        for name in ("d_model", "d_k", "d_ff", "n_layers_enc", "n_layers_dec", "n_heads",
                     "max_input_len", "max_output_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def vocab_size(self) -> int:
        return CharTokenizer(self.charset).vocab_size

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model, "d_k": self.d_k, "d_ff": self.d_ff,
            "n_layers_enc": self.n_layers_enc, "n_layers_dec": self.n_layers_dec,
            "n_heads": self.n_heads, "max_input_len": self.max_input_len,
            "max_output_len": self.max_output_len, "charset": self.charset,
            "cls_projections": self.cls_projections, "share_cls_ffn": self.share_cls_ffn,
        }


@dataclass
class FieldedInput:
    ids: np.ndarray
    q_span: tuple[int, int]
    s_span: tuple[int, int]
    passage_spans: list[tuple[int, int]]
    passage_indices: list[int]  # positions into the source example's passage list

    def validate(self):
        spans = [self.q_span, self.s_span] + list(self.passage_spans)
        covered = []
        prev_end = 0
        for start, end in spans:
            if start < prev_end or end <= start:
                raise ValueError(f"spans must be ordered, disjoint, non-empty: {spans}")
            covered.extend(range(start, end))
            prev_end = end
        non_field = [i for i in range(len(self.ids)) if i not in set(covered)]
        for i in non_field:
            if self.ids[i] not in (SEP, EOS):
                raise ValueError(f"token at {i} is outside every span but not a separator")


@dataclass
class ClsPrediction:
    epsilon: list[float]  # per packed passage: P(contains answer)
    xi: float  # pseudo-answer branch
    passage_probs: list[Tensor] = field(default_factory=list)  # (1, 2) rows on the tape
    pseudo_probs: Tensor | None = None


@dataclass
class GenerationOutput:
    tokens: list[int]
    step_log_probs: list[float]

    @property
    def log_prob(self) -> float:
        return float(sum(self.step_log_probs))


def pack_input(example, mode: str, tokenizer: CharTokenizer, config: ModelConfig) -> FieldedInput:
    """Tokenize and pack one example's fields for the selected mode.

    silver mode keeps only label-1 passages, falling back to the rank-1
    passage when every label is 0. Over-budget inputs lose passage tail
    tokens first (longest passage first), then pseudo tail tokens; the query
    is never truncated.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not example.query.strip():
        raise ValueError(f"example {example.id!r} has an empty query")
    if example.pseudo is None:
        raise ValueError(
            f"example {example.id!r} has no pseudo-answer; generate or import pseudo-answers first"
        )
    ordered = sorted(range(len(example.passages)), key=lambda i: example.passages[i].rank)
    if mode == "silver":
        if example.silver is None:
            raise ValueError(f"example {example.id!r} has no silver labels; label the split first")
        kept = [i for i in ordered if example.silver.passage_labels[i] == 1]
        if not kept and ordered:
            kept = [ordered[0]]  # all-zero fallback: keep the top-ranked passage
        ordered = kept

    q = list(tokenizer.encode(example.query))
    s = list(tokenizer.encode(example.pseudo.text))
    ps = [list(tokenizer.encode(example.passages[i].text)) for i in ordered]

    budget = config.max_input_len
    def total():
        return len(q) + len(s) + sum(len(p) for p in ps) + (1 + len(ps)) + 1  # separators + eos

    while total() > budget:
        trimmable = [p for p in ps if len(p) > 1]
        if trimmable:
            longest = max(trimmable, key=len)
            # among equally long passages trim the lowest-ranked (last) one
            for p in reversed(ps):
                if len(p) == len(longest):
                    del p[-1]
                    break
        elif len(s) > 1:
            del s[-1]
        else:
            raise ValueError(
                f"example {example.id!r}: query alone exceeds max_input_len={budget}"
            )

    ids: list[int] = []
    spans: list[tuple[int, int]] = []
    for fld in [q, s] + ps:
        if ids:
            ids.append(SEP)
        spans.append((len(ids), len(ids) + len(fld)))
        ids.extend(fld)
    ids.append(EOS)
    return FieldedInput(
        ids=np.array(ids, dtype=np.int64),
        q_span=spans[0],
        s_span=spans[1],
        passage_spans=spans[2:],
        passage_indices=ordered,
    )


def _causal_mask(n: int, dtype) -> np.ndarray:
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = -1e9
    return mask


class Model:
    """Weights plus the forward passes; all state lives in the ParamStore."""

    def __init__(self, config: ModelConfig, store: ParamStore, tokenizer: CharTokenizer):
        self.config = config
        self.store = store
        self.tokenizer = tokenizer

    # --- construction ----------------------------------------------------

    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0, dtype=np.float64) -> "Model":
        rng = np.random.default_rng(seed)
        store = ParamStore(dtype=dtype)
        tok = CharTokenizer(config.charset)
        d, v = config.d_model, tok.vocab_size

        def mat(name, d_in, d_out):
            std = math.sqrt(2.0 / (d_in + d_out))
            store.add(f"{name}.w", rng.normal(0.0, std, size=(d_in, d_out)))
            store.add(f"{name}.b", np.zeros(d_out))

        def ln(name):
            store.add(f"{name}.g", np.ones(d))
            store.add(f"{name}.b", np.zeros(d))

        def attn(prefix):
            for part in ("q", "k", "v", "o"):
                mat(f"{prefix}.{part}", d, d)

        store.add("tok_emb", rng.normal(0.0, 1.0 / math.sqrt(d), size=(v, d)))
        store.add("pos_enc", rng.normal(0.0, 1.0 / math.sqrt(d), size=(config.max_input_len, d)))
        store.add("pos_dec", rng.normal(0.0, 1.0 / math.sqrt(d), size=(config.max_output_len, d)))
        for i in range(config.n_layers_enc):
            ln(f"enc{i}.ln1"); attn(f"enc{i}.attn")
            ln(f"enc{i}.ln2"); mat(f"enc{i}.ffn.1", d, config.d_ff); mat(f"enc{i}.ffn.2", config.d_ff, d)
        ln("enc_ln")
        for i in range(config.n_layers_dec):
            ln(f"dec{i}.ln1"); attn(f"dec{i}.self")
            ln(f"dec{i}.ln2"); attn(f"dec{i}.cross")
            ln(f"dec{i}.ln3"); mat(f"dec{i}.ffn.1", d, config.d_ff); mat(f"dec{i}.ffn.2", config.d_ff, d)
        ln("dec_ln")
        mat("out", d, v)
        if config.cls_projections:
            for part in ("q", "k", "v"):
                mat(f"cls_proj.{part}", d, d)
        mat("cls.1", d, config.d_k)
        mat("cls.2", config.d_k, 2)
        if not config.share_cls_ffn:
            mat("cls_pseudo.1", d, config.d_k)
            mat("cls_pseudo.2", config.d_k, 2)
        return cls(config, store, tok)

    # --- shared building blocks -------------------------------------------

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return nm.add(nm.matmul(x, effective_weight(self.store, f"{name}.w")), self.store[f"{name}.b"])

    def _ln(self, x: Tensor, name: str) -> Tensor:
        return nm.layer_norm(x, self.store[f"{name}.g"], self.store[f"{name}.b"])

    def _attention(self, q_in: Tensor, kv_in: Tensor, prefix: str, mask: np.ndarray | None = None) -> Tensor:
        cfg = self.config
        q = self._linear(q_in, f"{prefix}.q")
        k = self._linear(kv_in, f"{prefix}.k")
        v = self._linear(kv_in, f"{prefix}.v")
        dh = cfg.d_model // cfg.n_heads
        heads = []
        for h in range(cfg.n_heads):
            lo, hi = h * dh, (h + 1) * dh
            qh, kh, vh = (nm.slice_cols(t, lo, hi) for t in (q, k, v))
            scores = nm.scale(nm.matmul(qh, nm.transpose(kh)), 1.0 / math.sqrt(dh))
            probs = nm.softmax_rows(scores, additive_mask=mask)
            heads.append(nm.matmul(probs, vh))
        merged = heads[0] if len(heads) == 1 else nm.concat_cols(heads)
        return self._linear(merged, f"{prefix}.o")

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        return self._linear(nm.relu(self._linear(x, f"{prefix}.1")), f"{prefix}.2")

    # --- encoder -----------------------------------------------------------

    def encode_ids(self, ids: np.ndarray) -> Tensor:
        n = len(ids)
        if n > self.config.max_input_len:
            raise ValueError(
                f"input length {n} exceeds max_input_len {self.config.max_input_len}; "
                "pack_input must truncate first"
            )
        x = nm.add(
            nm.embedding_lookup(self.store["tok_emb"], ids),
            nm.embedding_lookup(self.store["pos_enc"], np.arange(n)),
        )
        for i in range(self.config.n_layers_enc):
            h = self._ln(x, f"enc{i}.ln1")
            x = nm.add(x, self._attention(h, h, f"enc{i}.attn"))
            x = nm.add(x, self._ffn(self._ln(x, f"enc{i}.ln2"), f"enc{i}.ffn"))
        return self._ln(x, "enc_ln")

    def encode(self, fi: FieldedInput) -> Tensor:
        return self.encode_ids(fi.ids)

    # --- generator -----------------------------------------------------------

    def _decode_probs(self, enc_states: Tensor, dec_ids: np.ndarray) -> Tensor:
        n = len(dec_ids)
        if n > self.config.max_output_len:
            raise ValueError(f"decoder length {n} exceeds max_output_len {self.config.max_output_len}")
        y = nm.add(
            nm.embedding_lookup(self.store["tok_emb"], dec_ids),
            nm.embedding_lookup(self.store["pos_dec"], np.arange(n)),
        )
        mask = _causal_mask(n, self.store.dtype)
        for i in range(self.config.n_layers_dec):
            h = self._ln(y, f"dec{i}.ln1")
            y = nm.add(y, self._attention(h, h, f"dec{i}.self", mask=mask))
            y = nm.add(y, self._attention(self._ln(y, f"dec{i}.ln2"), enc_states, f"dec{i}.cross"))
            y = nm.add(y, self._ffn(self._ln(y, f"dec{i}.ln3"), f"dec{i}.ffn"))
        y = self._ln(y, "dec_ln")
        return nm.softmax_rows(self._linear(y, "out"))

    def target_ids(self, answer: str) -> np.ndarray:
        """Tokenize a gold answer as decoder target, eos-terminated and length-capped."""
        toks = list(self.tokenizer.encode(answer))[: self.config.max_output_len - 1]
        return np.array(toks + [EOS], dtype=np.int64)

    def gen_loss(self, enc_states: Tensor, target: np.ndarray) -> Tensor:
        """Teacher-forced negative log-likelihood of the target sequence (a sum)."""
        target = np.asarray(target)
        if target.size == 0:
            raise ValueError("empty generation target")
        if target[-1] != EOS:
            raise ValueError("generation target must end with <eos>")
        dec_in = np.concatenate([[PAD], target[:-1]])
        probs = self._decode_probs(enc_states, dec_in)
        return nm.cross_entropy(probs, target, reduction="sum")

    def seq_log_prob(self, enc_states: Tensor, target: np.ndarray) -> float:
        """Log of the sequence probability (sum of per-step log-probs); <= 0."""
        with no_grad():
            return -self.gen_loss(enc_states, target).item()

    def generate_greedy(self, enc_states: Tensor, max_len: int | None = None) -> GenerationOutput:
        """Argmax decoding until <eos> or the length cap; deterministic."""
        cap = min(max_len or self.config.max_output_len, self.config.max_output_len)
        toks: list[int] = []
        logps: list[float] = []
        floor = nm.log_floor(self.store.dtype)
        with no_grad():
            for _ in range(cap):
                dec_in = np.array([PAD] + toks, dtype=np.int64)
                row = self._decode_probs(enc_states, dec_in).data[-1]
                nxt = int(np.argmax(row))
                logps.append(float(np.log(max(float(row[nxt]), floor))))
                toks.append(nxt)
                if nxt == EOS:
                    break
        return GenerationOutput(tokens=toks, step_log_probs=logps)

    # --- classification head ---------------------------------------------

    def _cls_pool(self, q_states: Tensor, ctx_states: Tensor) -> Tensor:
        """Eq-style raw cross-attention of query states over one context span, mean-pooled."""
        if self.config.cls_projections:
            q_states = self._linear(q_states, "cls_proj.q")
            keys = self._linear(ctx_states, "cls_proj.k")
            vals = self._linear(ctx_states, "cls_proj.v")
        else:
            keys = vals = ctx_states
        scores = nm.scale(nm.matmul(q_states, nm.transpose(keys)), 1.0 / math.sqrt(self.config.d_k))
        probs = nm.softmax_rows(scores)
        return nm.mean_rows(nm.matmul(probs, vals))

    def _cls_ffn(self, pooled: Tensor, pseudo_branch: bool) -> Tensor:
        prefix = "cls_pseudo" if (pseudo_branch and not self.config.share_cls_ffn) else "cls"
        logits = self._linear(nm.relu(self._linear(pooled, f"{prefix}.1")), f"{prefix}.2")
        return nm.softmax_rows(logits)

    def cls_forward(self, enc_states: Tensor, fi: FieldedInput) -> ClsPrediction:
        """Probability that each packed passage (and the pseudo-answer) contains the answer."""
        if fi.s_span[1] <= fi.s_span[0]:
            raise ValueError("fielded input has no pseudo-answer span")
        q_states = nm.slice_rows(enc_states, *fi.q_span)
        passage_probs = []
        epsilon = []
        for start, end in fi.passage_spans:
            pooled = self._cls_pool(q_states, nm.slice_rows(enc_states, start, end))
            probs = self._cls_ffn(pooled, pseudo_branch=False)
            passage_probs.append(probs)
            epsilon.append(float(probs.data[0, 1]))
        pooled = self._cls_pool(q_states, nm.slice_rows(enc_states, *fi.s_span))
        pseudo_probs = self._cls_ffn(pooled, pseudo_branch=True)
        return ClsPrediction(
            epsilon=epsilon,
            xi=float(pseudo_probs.data[0, 1]),
            passage_probs=passage_probs,
            pseudo_probs=pseudo_probs,
        )

    # --- handles used by labeling ------------------------------------------

    def answer_log_prob(self, query: str, answer: str, context: str | None = None) -> float:
        """Teacher-forced log-probability of `answer` given the query (and one context)."""
        target = self.target_ids(answer)
        if len(target) <= 1:
            raise ValueError("answer tokenizes to an empty sequence")
        ids = list(self.tokenizer.encode(query))
        if context is not None:
            ctx = list(self.tokenizer.encode(context))
            room = self.config.max_input_len - len(ids) - 2  # sep + eos
            ids = ids + [SEP] + ctx[: max(room, 1)]
        ids = ids[: self.config.max_input_len - 1] + [EOS]
        with no_grad():
            enc = self.encode_ids(np.array(ids, dtype=np.int64))
            return self.seq_log_prob(enc, target)

    # --- bookkeeping -----------------------------------------------------

    def param_count(self, trainable_only: bool = False) -> int:
        return self.store.param_count(trainable_only=trainable_only)

    def decoder_param_names(self) -> list[str]:
        """Parameters used only by the generation branch."""
        return [n for n in self.store.names()
                if n.startswith(("dec", "out.", "pos_dec"))]

    def cls_param_names(self) -> list[str]:
        """Parameters used only by the classification branch."""
        return [n for n in self.store.names() if n.startswith(("cls.", "cls_proj.", "cls_pseudo."))]


def param_count(store: ParamStore, trainable_only: bool = False) -> int:
    return store.param_count(trainable_only=trainable_only)
