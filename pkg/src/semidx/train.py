"""Desk-scale contrastive training of the toy encoder.

The objective sums a fully parametric term with a semi-parametric one:

    l_para      = L(V(q), V(p))
    l_semi_para = L(V(q), BoT(p))/2 + L(BoT(q), V(p))/2
    l_final     = l_para + l_semi_para

where L is a bidirectional softmax cross-entropy over the batch pool: each
query row normalizes over every pooled passage, and each positive's column
normalizes over the batch's queries.

Gradients are analytic.  Top-k sparsification in the forward pass is
treated straight-through: pruned dimensions stay pruned and pass no
gradient, so the analytic result matches central finite differences at any
point whose top-k support and max-pool winners are locally stable.

Negative mining searches the fixed bag-of-tokens index with the current
query encoding, rejects every candidate containing an answer string, and
picks uniformly with a SplitMix64 stream so any runtime can replay the
choice.  The index is never touched by training.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, ToyEncoderParams, toy_encode
from .errors import ContractError, FormatError, MinerError, NumericError, TrainingError
from .eval import contains_answer
from .index import BotIndex, Passage, search_bot
from .pipelines import Query
from .rng import SplitMix64
from .sparsevec import SparseVec
from .vocab import TokenSeq, Vocabulary, tokenize


@dataclass(frozen=True)
class TrainExample:
    query: str
    positive_id: str
    answers: tuple[str, ...] = ()


def read_train_jsonl(path) -> list[TrainExample]:
    """JSON lines {query, positive_passage_id, answers?}."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(TrainExample(query=str(obj["query"]),
                                        positive_id=str(obj["positive_passage_id"]),
                                        answers=tuple(str(a) for a in obj.get("answers", []))))
            except (json.JSONDecodeError, KeyError) as e:
                raise FormatError(f"{path}:{lineno}: bad training record: {e}") from None
    return out


@dataclass
class TrainBatch:
    """N query sequences plus the scoring pool; pool_seqs[i] is the positive
    for query i, remaining entries are the batch's negatives."""

    query_seqs: list[TokenSeq]
    pool_seqs: list[TokenSeq]
    pool_ids: list[str]

    def __post_init__(self):
        if not self.query_seqs:
            raise ContractError("a batch needs at least one instance")
        if len(self.pool_seqs) < len(self.query_seqs):
            raise ContractError("pool must contain one positive per query")
        if len(self.pool_seqs) != len(self.pool_ids):
            raise ContractError("pool sequences and ids disagree")

    @property
    def n(self) -> int:
        return len(self.query_seqs)


@dataclass
class LossBreakdown:
    l_para: float
    l_semi_para: float
    l_final: float
    grad_embed: np.ndarray
    grad_project: np.ndarray


def contrastive_loss(scores: np.ndarray, positives: np.ndarray) -> tuple[float, np.ndarray]:
    """Bidirectional cross-entropy over an N x |B| score matrix.

    Row direction normalizes each query over the pool; column direction
    normalizes each positive's column over the batch's queries.  Returns the
    summed loss and its gradient with respect to the scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ContractError("scores must be a 2-d matrix")
    if not np.isfinite(scores).all():
        raise NumericError("non-finite scores in contrastive loss")
    n, b = scores.shape
    positives = np.asarray(positives, dtype=np.int64)
    if positives.shape != (n,) or (positives < 0).any() or (positives >= b).any():
        raise ContractError("positives must hold one valid pool column per row")

    row_max = scores.max(axis=1, keepdims=True)
    row_exp = np.exp(scores - row_max)
    row_lse = np.log(row_exp.sum(axis=1)) + row_max[:, 0]
    pos_scores = scores[np.arange(n), positives]
    loss = float(np.sum(row_lse - pos_scores))

    grad = row_exp / row_exp.sum(axis=1, keepdims=True)
    grad[np.arange(n), positives] -= 1.0

    for i in range(n):
        c = positives[i]
        col = scores[:, c]
        cmax = col.max()
        cexp = np.exp(col - cmax)
        loss += float(np.log(cexp.sum()) + cmax - col[i])
        grad[:, c] += cexp / cexp.sum()
        grad[i, c] -= 1.0
    return loss, grad


class _EncCache:
    """Intermediates of one toy-encoder forward pass, kept for backprop."""

    __slots__ = ("ids", "logits", "winners", "mask", "dense")

    def __init__(self, ids, logits, winners, mask, dense):
        self.ids = ids
        self.logits = logits      # (n, |V|)
        self.winners = winners    # argmax token row per dimension
        self.mask = mask          # 1.0 on surviving dims after top-k
        self.dense = dense        # pooled activations, zeroed outside survivors


def _elu1p(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def _elu1p_prime(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def forward_cached(params: ToyEncoderParams, ids, k: int) -> _EncCache:
    if len(ids) == 0:
        raise ContractError("cannot encode an empty token sequence")
    # divergence is detected by finiteness checks, not by runtime warnings
    with np.errstate(over="ignore", invalid="ignore"):
        logits = params.embed[list(ids)] @ params.project
        act = _elu1p(logits)
    winners = act.argmax(axis=0)
    pooled = act[winners, np.arange(act.shape[1])]
    v = pooled.size
    mask = np.ones(v, dtype=np.float64)
    if k < v:
        order = np.lexsort((np.arange(v), -pooled))
        mask = np.zeros(v, dtype=np.float64)
        mask[order[:k]] = 1.0
    return _EncCache(tuple(ids), logits, winners, mask, pooled * mask)


def backward_cached(params: ToyEncoderParams, cache: _EncCache, g_dense: np.ndarray,
                    grad_embed: np.ndarray, grad_project: np.ndarray) -> None:
    """Route a gradient on the sparse output back into the parameters."""
    v = cache.mask.size
    cols = np.arange(v)
    g_pooled = g_dense * cache.mask
    deriv = _elu1p_prime(cache.logits[cache.winners, cols])
    g_logits = np.zeros_like(cache.logits)
    g_logits[cache.winners, cols] = g_pooled * deriv
    rows = params.embed[list(cache.ids)]
    grad_project += rows.T @ g_logits
    np.add.at(grad_embed, list(cache.ids), g_logits @ params.project.T)


def _bot_matrix(seqs: list[TokenSeq], vocab_size: int) -> np.ndarray:
    out = np.zeros((len(seqs), vocab_size), dtype=np.float64)
    for i, seq in enumerate(seqs):
        out[i, sorted(set(seq.ids))] = 1.0
    return out


def loss_final(batch: TrainBatch, params: ToyEncoderParams,
               cfg: EncoderConfig) -> LossBreakdown:
    """Loss and full parameter gradients for one batch."""
    if cfg.vocab_size != params.vocab_size:
        raise ContractError("config and parameters disagree on vocab size")
    n = batch.n
    q_caches = [forward_cached(params, s.ids, cfg.k_query) for s in batch.query_seqs]
    p_caches = [forward_cached(params, s.ids, cfg.k_doc) for s in batch.pool_seqs]
    q_mat = np.stack([c.dense for c in q_caches])          # (N, |V|)
    p_mat = np.stack([c.dense for c in p_caches])          # (B, |V|)
    bq = _bot_matrix(batch.query_seqs, cfg.vocab_size)     # (N, |V|)
    bp = _bot_matrix(batch.pool_seqs, cfg.vocab_size)      # (B, |V|)
    positives = np.arange(n)

    with np.errstate(over="ignore", invalid="ignore"):
        s_para = q_mat @ p_mat.T
        s_qb = q_mat @ bp.T
        s_bp = bq @ p_mat.T
    l_para, g_para = contrastive_loss(s_para, positives)
    l_qb, g_qb = contrastive_loss(s_qb, positives)
    l_bp, g_bp = contrastive_loss(s_bp, positives)
    l_semi = 0.5 * l_qb + 0.5 * l_bp

    grad_q = g_para @ p_mat + 0.5 * (g_qb @ bp)            # (N, |V|)
    grad_p = g_para.T @ q_mat + 0.5 * (g_bp.T @ bq)        # (B, |V|)

    grad_embed = np.zeros_like(params.embed)
    grad_project = np.zeros_like(params.project)
    for cache, g in zip(q_caches, grad_q):
        backward_cached(params, cache, g, grad_embed, grad_project)
    for cache, g in zip(p_caches, grad_p):
        backward_cached(params, cache, g, grad_embed, grad_project)
    return LossBreakdown(l_para=l_para, l_semi_para=l_semi, l_final=l_para + l_semi,
                         grad_embed=grad_embed, grad_project=grad_project)


# --- negative mining ------------------------------------------------------


@dataclass(frozen=True)
class MinerConfig:
    index: BotIndex
    m: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ContractError("miner pool size m must be >= 1")


def mine_negative_ordinal(ix: BotIndex, query_vec: SparseVec, answers,
                          m: int, seed: int) -> int:
    """Ordinal of a mined negative.  Beta-search the top m, keep candidates
    that fail the answer test, pick one uniformly; with none available, scan
    the corpus from a seeded random start for any passage failing the test."""
    answers = tuple(a for a in answers if a)
    if not answers:
        raise ContractError("negative mining requires at least one answer string")
    rng = SplitMix64(seed)
    ranked = search_bot(ix, query_vec, m)
    negatives = [ix.ordinal_of(pid) for pid, _ in ranked
                 if not contains_answer(ix.content(ix.ordinal_of(pid)), answers)]
    if negatives:
        return negatives[rng.randrange(len(negatives))]
    if len(ix) == 0:
        raise MinerError("cannot mine a negative from an empty corpus")
    start = rng.randrange(len(ix))
    for step in range(len(ix)):
        ordinal = (start + step) % len(ix)
        if not contains_answer(ix.content(ordinal), answers):
            return ordinal
    raise MinerError("every corpus passage contains an answer string")


def mine_negatives(query: Query, cfg: MinerConfig, provider) -> Passage:
    """Mine one negative passage for a query carrying answer strings."""
    vec = provider.encode(query.id, query.text)
    ordinal = mine_negative_ordinal(cfg.index, vec, query.answers, cfg.m, cfg.seed)
    ix = cfg.index
    return Passage(id=ix.passage_ids[ordinal], title=ix.titles[ordinal],
                   text=ix.texts[ordinal])


# --- training loop --------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    l_para: float
    l_semi_para: float
    l_final: float
    heldout_beta_top1: float


def write_metrics_csv(rows: list[EpochMetrics], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "l_para", "l_semi_para", "l_final", "heldout_beta_top1"])
        for r in rows:
            w.writerow([r.epoch, repr(r.l_para), repr(r.l_semi_para),
                        repr(r.l_final), repr(r.heldout_beta_top1)])


def beta_top1_accuracy(examples: list[TrainExample], ix: BotIndex,
                       params: ToyEncoderParams, vocab: Vocabulary, k_query: int) -> float:
    """Fraction of examples whose beta-search top passage is their positive."""
    if not examples:
        return 0.0
    hits = 0
    for ex in examples:
        vec = toy_encode(params, tokenize(vocab, ex.query), k_query)
        ranked = search_bot(ix, vec, 1)
        if ranked and ranked[0][0] == ex.positive_id:
            hits += 1
    return hits / len(examples)


def train_toy(examples: list[TrainExample], ix: BotIndex, vocab: Vocabulary,
              epochs: int, lr: float, seed: int, *, d: int = 8,
              cfg: EncoderConfig | None = None, miner_m: int | None = None,
              heldout: list[TrainExample] | None = None,
              batch_size: int | None = None,
              params: ToyEncoderParams | None = None
              ) -> tuple[ToyEncoderParams, list[EpochMetrics]]:
    """Plain gradient descent on l_final over the example set.

    With miner_m set, each instance's negative is mined from the fixed
    bag-of-tokens index using the current parameters; otherwise negatives
    are seeded random corpus passages distinct from the positive.  The
    held-out split (training examples when absent) is scored by beta-search
    top-1 after every epoch.
    """
    if not examples:
        raise ContractError("training needs at least one example")
    if len(ix) < 2:
        raise ContractError("training needs a corpus with at least two passages")
    cfg = cfg or EncoderConfig(vocab_size=vocab.size,
                               k_doc=min(768, vocab.size), k_query=min(768, vocab.size))
    params = params.copy() if params is not None else ToyEncoderParams.init(vocab.size, d, seed)
    master = SplitMix64(seed)
    eval_set = heldout if heldout is not None else examples
    pos_ordinals = []
    for ex in examples:
        try:
            pos_ordinals.append(ix.ordinal_of(ex.positive_id))
        except KeyError:
            raise FormatError(f"positive passage {ex.positive_id!r} not in the index") from None
    query_seqs = [tokenize(vocab, ex.query) for ex in examples]
    passage_seq_cache: dict[int, TokenSeq] = {}

    def passage_seq(ordinal: int) -> TokenSeq:
        if ordinal not in passage_seq_cache:
            passage_seq_cache[ordinal] = tokenize(vocab, ix.content(ordinal))
        return passage_seq_cache[ordinal]

    step = batch_size if batch_size and batch_size > 0 else len(examples)
    history: list[EpochMetrics] = []
    for epoch in range(epochs):
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, len(examples), step):
            idxs = range(start, min(start + step, len(examples)))
            neg_ordinals = []
            for i in idxs:
                if miner_m is not None:
                    qvec = toy_encode(params, query_seqs[i], cfg.k_query)
                    neg = mine_negative_ordinal(ix, qvec, examples[i].answers,
                                                miner_m, master.next_u64())
                else:
                    neg = master.randrange(len(ix))
                    while neg == pos_ordinals[i]:
                        neg = master.randrange(len(ix))
                neg_ordinals.append(neg)
            pool_ordinals = [pos_ordinals[i] for i in idxs] + neg_ordinals
            batch = TrainBatch(
                query_seqs=[query_seqs[i] for i in idxs],
                pool_seqs=[passage_seq(o) for o in pool_ordinals],
                pool_ids=[ix.passage_ids[o] for o in pool_ordinals])
            try:
                br = loss_final(batch, params, cfg)
            except NumericError as e:
                raise TrainingError(f"training diverged at epoch {epoch}: {e}") from None
            if not (np.isfinite(br.l_final) and np.isfinite(br.grad_embed).all()
                    and np.isfinite(br.grad_project).all()):
                raise TrainingError(f"non-finite loss or gradient at epoch {epoch}")
            params.embed -= lr * br.grad_embed
            params.project -= lr * br.grad_project
            sums += (br.l_para, br.l_semi_para, br.l_final)
            n_batches += 1
        try:
            top1 = beta_top1_accuracy(eval_set, ix, params, vocab, cfg.k_query)
        except ContractError:
            raise TrainingError(f"parameters overflowed at epoch {epoch}") from None
        history.append(EpochMetrics(epoch=epoch, l_para=sums[0] / n_batches,
                                    l_semi_para=sums[1] / n_batches,
                                    l_final=sums[2] / n_batches,
                                    heldout_beta_top1=top1))
    return params, history
