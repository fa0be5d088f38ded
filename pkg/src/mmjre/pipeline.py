"""End-to-end forward pass over sentence-image records, head training,
alpha/lambda sweeps and matrix exports."""

from __future__ import annotations

import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import channels as ch
from .config import PipelineConfig
from .corpus import Record, infer_vocabulary
from .encoder import (
    FFN, CrossAttentionParams, TransformerBlockParams, cross_modal_attention, encode_graph,
    load_checkpoint, project_visual, save_checkpoint,
)
from .errors import InputError, MMJREError, NumericalError, ShapeError
from .graphs import (
    HashedEmbeddings, LabelVocabulary, VectorTable, build_textual_graph, embed_edges, embed_nodes,
)
from .ot import AlignmentResult, dump_alignment, fused_align
from .rng import Streams
from .tagging import (
    Counts, PredictionHead, TagGrid, TagVocabulary, decode_grid, encode_quintuples, grid_logits,
    head_gradients, joint_loss, main_loss_from_logits, match_counts,
)
from .tsv import write_matrix

log = logging.getLogger(__name__)

STAGES = ("graphs", "encoder", "align", "cross", "channels", "predict")


@dataclass
class Model:
    """All parameters of the pipeline; everything but the head stays at its seeded initialisation."""

    config: PipelineConfig
    vocab: LabelVocabulary
    tags: TagVocabulary
    text_edges: VectorTable
    visual_edges: VectorTable
    text_blocks: list
    visual_blocks: list
    visual_proj: FFN
    cross: CrossAttentionParams
    pos_table: VectorTable
    sd_table: np.ndarray
    co_table: np.ndarray
    channel_params: dict
    fusion: ch.MLP
    head: PredictionHead
    text_source: object = None
    visual_source: object = None

    @classmethod
    def init(cls, config: PipelineConfig, vocab: LabelVocabulary,
             text_source=None, visual_source=None) -> "Model":
        c = config
        rs = Streams(c.seed).child("model")
        tags = TagVocabulary.from_labels(vocab)
        if not tags.relation_types:
            raise InputError("vocabulary has no relation types")
        return cls(
            config=c,
            vocab=vocab,
            tags=tags,
            text_edges=VectorTable.random(vocab.dependency_labels, c.d_z, rs("text_edges")),
            visual_edges=VectorTable.random(vocab.visual_relation_labels, c.d_z, rs("visual_edges")),
            text_blocks=[TransformerBlockParams.init(c.d_T, c.d_z, rs(f"text_block{i}"),
                                                     c.ffn_mult, c.ln_eps)
                         for i in range(c.encoder_layers)],
            visual_blocks=[TransformerBlockParams.init(c.d_T, c.d_z, rs(f"visual_block{i}"),
                                                       c.ffn_mult, c.ln_eps)
                           for i in range(c.encoder_layers)],
            visual_proj=FFN.init(c.d_I, c.d_T, c.d_T, rs("visual_proj")),
            cross=CrossAttentionParams.init(c.d_T, c.heads, rs("cross"), c.ln_eps),
            pos_table=VectorTable.random(vocab.pos_labels, c.d_l, rs("pos_table"),
                                         kind="pos tag", reserved=()),
            sd_table=rs("sd_table").standard_normal((c.sd_cap + 1, c.d_l)),
            co_table=rs("co_table").standard_normal((c.co_cap + 2, c.d_l)),
            channel_params={name: ch.ChannelParams.init(c.d_l, c.d_T, rs(f"wgcn_{name}"))
                            for name in ("Pos", "Sd", "Co")},
            fusion=ch.MLP.init((3 * c.d_T, c.d_T, c.d_T), rs("fusion")),
            head=PredictionHead.init(c.d_T, len(tags), rs("head")),
            text_source=text_source or HashedEmbeddings(c.seed, c.d_T),
            visual_source=visual_source or HashedEmbeddings(c.seed, c.d_I),
        )


@dataclass
class Features:
    """Everything computed for one record up to (not including) the prediction head."""

    record: Record
    S: np.ndarray
    alignment: AlignmentResult
    sd: np.ndarray
    co: np.ndarray
    channel_weights: dict
    cross_weights: np.ndarray
    timings: dict = field(default_factory=dict)


def compute_features(model: Model, record: Record, pmi: ch.PMIStats) -> Features:
    c = model.config
    t = {}
    t0 = time.perf_counter()
    sent, scene = record.sentence, record.scene
    g_text = build_textual_graph(sent)
    X_T = embed_nodes(sent.tokens, model.text_source, f"{record.id}/text")
    X_I = embed_nodes(scene.object_labels, model.visual_source, f"{record.id}/image")
    Z_T = embed_edges(g_text, model.text_edges)
    Z_I = embed_edges(scene, model.visual_edges)
    t["graphs"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    H_T = encode_graph(X_T, Z_T, g_text.adjacency, model.text_blocks)
    H_I = encode_graph(project_visual(X_I, model.visual_proj), Z_I, scene.adjacency,
                       model.visual_blocks)
    t["encoder"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    alignment = fused_align(H_I, H_T, scene.adjacency, g_text.adjacency, c.alpha, c.epsilon,
                            c.sinkhorn_outer, c.sinkhorn_inner, init=c.align_init)
    t["align"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    O, cross_w = cross_modal_attention(H_T, H_I, model.cross, return_weights=True)
    t["cross"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sd = ch.build_sd_matrix(g_text)
    co = ch.pmi_matrix(pmi, sent.tokens, c.co_cap)
    tensors = {
        "Pos": ch.build_pos_channel(sent, model.pos_table),
        "Sd": ch.sd_channel(sd, model.sd_table, c.sd_cap),
        "Co": ch.co_channel(co, model.co_table, c.co_cap),
    }
    outs, weights = {}, {}
    for name, R in tensors.items():
        outs[name], weights[name] = ch.w_gcn(R, O, model.channel_params[name], return_weights=True)
    S = ch.fuse_channels(outs["Pos"], outs["Sd"], outs["Co"], model.fusion)
    t["channels"] = time.perf_counter() - t0
    if not np.all(np.isfinite(S)):
        raise NumericalError("non-finite word representations")
    return Features(record, S, alignment, sd, co, weights, cross_w, t)


@dataclass
class RecordResult:
    id: str
    wd_cost: float
    gwd_cost: float
    loss_graph: float
    l_main: float
    joint: float
    predicted: list
    counts: Counts
    features: Features = field(repr=False)
    pred_grid: TagGrid = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "wd_cost": self.wd_cost,
            "gwd_cost": self.gwd_cost,
            "loss_graph": self.loss_graph,
            "l_main": self.l_main,
            "joint": self.joint,
            "n_pred": self.counts.predicted,
            "n_gold": self.counts.gold,
            "n_correct": self.counts.correct,
        }


def score_record(model: Model, feats: Features, lam: float | None = None) -> RecordResult:
    rec = feats.record
    lam = model.config.lam if lam is None else lam
    t0 = time.perf_counter()
    gold = encode_quintuples(rec.gold, rec.sentence.n, model.tags)
    logits = grid_logits(feats.S, model.head)
    l_main = main_loss_from_logits(logits, gold)
    pred_grid = TagGrid(np.argmax(logits, axis=-1).astype(np.int64), model.tags)
    predicted = decode_grid(pred_grid)
    feats.timings["predict"] = time.perf_counter() - t0
    a = feats.alignment
    return RecordResult(
        id=rec.id,
        wd_cost=a.wd_cost,
        gwd_cost=a.gwd_cost,
        loss_graph=a.loss_graph,
        l_main=l_main,
        joint=joint_loss(l_main, a.loss_graph, lam),
        predicted=predicted,
        counts=match_counts(predicted, rec.gold),
        features=feats,
        pred_grid=pred_grid,
    )


@dataclass
class RunReport:
    config: PipelineConfig
    records: list
    timings: dict

    @property
    def counts(self) -> Counts:
        total = Counts()
        for r in self.records:
            total = total + r.counts
        return total

    @property
    def metrics(self) -> tuple[float, float, float]:
        return self.counts.prf()

    def to_dict(self, include_timings: bool = False) -> dict:
        p, r, f = self.metrics
        out = {
            "config": self.config.to_dict(),
            "n_records": len(self.records),
            "records": [rec.to_dict() for rec in self.records],
            "metrics": {"precision": round(p, 4), "recall": round(r, 4), "f1": round(f, 4)},
        }
        if include_timings:
            out["timings"] = self.timings
        return out

    def to_json(self, include_timings: bool = False) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2) + "\n"

    def summary(self) -> str:
        p, r, f = self.metrics
        lines = [f"records: {len(self.records)}",
                 f"precision {p:.4f}  recall {r:.4f}  f1 {f:.4f}"]
        if self.records:
            lines.append("mean loss_graph %.6f  mean l_main %.4f" % (
                np.mean([x.loss_graph for x in self.records]),
                np.mean([x.l_main for x in self.records])))
        lines.append("stage seconds: " + ", ".join(
            f"{k}={self.timings.get(k, 0.0):.3f}" for k in STAGES))
        return "\n".join(lines)


def _with_id(rid: str, exc: MMJREError) -> MMJREError:
    return type(exc)(f"record {rid!r}: {exc}")


def pmi_for(records: Sequence[Record], cache=None) -> ch.PMIStats:
    if cache is not None and Path(cache).exists():
        return ch.PMIStats.load(cache)
    stats = ch.PMIStats.from_corpus(r.sentence for r in records)
    if cache is not None:
        stats.save(cache)
    return stats


def build_model(config: PipelineConfig, records: Sequence[Record],
                vocab: LabelVocabulary | None = None, **sources) -> Model:
    return Model.init(config, infer_vocabulary(records, vocab), **sources)


def run_records(model: Model, records: Sequence[Record], pmi: ch.PMIStats | None = None,
                lam: float | None = None) -> RunReport:
    if pmi is None:
        pmi = pmi_for(records)
    results, timings = [], defaultdict(float)
    for rec in records:
        try:
            feats = compute_features(model, rec, pmi)
            res = score_record(model, feats, lam)
        except MMJREError as exc:
            raise _with_id(rec.id, exc) from exc
        for k, v in feats.timings.items():
            timings[k] += v
        results.append(res)
    return RunReport(model.config, results, dict(timings))


def run_pipeline(config: PipelineConfig, records: Sequence[Record],
                 vocab: LabelVocabulary | None = None, pmi_cache=None, head=None) -> RunReport:
    model = build_model(config, records, vocab)
    if head is not None:
        model.head = head
    return run_records(model, records, pmi_for(records, pmi_cache))


# ---------------------------------------------------------------------------
# head training


@dataclass
class FitResult:
    head: PredictionHead
    history: list
    best_epoch: int
    stopped_epoch: int


@dataclass
class TrainResult(FitResult):
    model: Model = field(default=None, repr=False)


def _gold_grids(model, feats):
    return [encode_quintuples(f.record.gold, f.record.sentence.n, model.tags) for f in feats]


def corpus_loss(head: PredictionHead, pairs) -> float:
    """Summed cross-entropy over a list of ``(S, gold grid)`` pairs."""
    return float(sum(main_loss_from_logits(grid_logits(S, head), g) for S, g in pairs))


def cell_accuracy(head: PredictionHead, pairs) -> float:
    hit = total = 0
    for S, g in pairs:
        cells = g.cells if isinstance(g, TagGrid) else np.asarray(g)
        hit += int(np.sum(np.argmax(grid_logits(S, head), axis=-1) == cells))
        total += cells.size
    return hit / total if total else 0.0


def quintuple_prf(head: PredictionHead, pairs, golds, tags: TagVocabulary):
    total = Counts()
    for (S, _), gold in zip(pairs, golds):
        grid = TagGrid(np.argmax(grid_logits(S, head), axis=-1).astype(np.int64), tags)
        total = total + match_counts(decode_grid(grid), gold)
    return total.prf()


def fit_head(head: PredictionHead, train, dev, config: PipelineConfig) -> FitResult:
    """Gradient descent on the head over ``(S, gold grid)`` pairs, one step per training grid.

    The learning rate is multiplied by ``lr_decay`` after every epoch whose
    dev loss does not improve; training stops ``patience`` epochs after the
    best dev epoch, and the head from that epoch is returned. With an empty
    dev set the training loss plays its role.
    """
    head = head.copy()
    lr = config.learning_rate
    dev = dev if len(dev) else train

    def losses():
        return corpus_loss(head, train), corpus_loss(head, dev)

    tr_loss, dev_loss = losses()
    history = [{"epoch": 0, "train_loss": tr_loss, "dev_loss": dev_loss, "lr": lr}]
    best_loss, best_epoch, best_head = dev_loss, 0, head.copy()
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        step = lr
        # overflow shows up as a non-finite loss below
        with np.errstate(over="ignore", invalid="ignore"):
            for S, g in train:
                gW, gb = head_gradients(S, g, head)
                head.W_p -= step * gW
                head.b_p -= step * gb
            tr_loss, dev_loss = losses()
        if not (math.isfinite(tr_loss) and math.isfinite(dev_loss)):
            raise NumericalError(f"training diverged at epoch {epoch} "
                                 f"(train loss {tr_loss}, dev loss {dev_loss}, lr {step})")
        history.append({"epoch": epoch, "train_loss": tr_loss, "dev_loss": dev_loss, "lr": step})
        log.info("epoch %d train %.4f dev %.4f lr %.3g", epoch, tr_loss, dev_loss, step)
        if dev_loss < best_loss:
            best_loss, best_epoch, best_head = dev_loss, epoch, head.copy()
        else:
            lr *= config.lr_decay
            if epoch - best_epoch >= config.patience:
                break
    return FitResult(best_head, history, best_epoch, epoch)


def train_head(config: PipelineConfig, train: Sequence[Record], dev: Sequence[Record],
               vocab: LabelVocabulary | None = None) -> TrainResult:
    """Fit the prediction head on frozen upstream features of ``train``, early-stopping on ``dev``."""
    model = build_model(config, list(train) + list(dev), vocab)
    pmi = pmi_for(train)

    def pairs_of(records):
        feats = []
        for rec in records:
            try:
                feats.append(compute_features(model, rec, pmi))
            except MMJREError as exc:
                raise _with_id(rec.id, exc) from exc
        return [(f.S, g) for f, g in zip(feats, _gold_grids(model, feats))]

    fit = fit_head(model.head, pairs_of(train), pairs_of(dev), config)
    model.head = fit.head
    return TrainResult(fit.head, fit.history, fit.best_epoch, fit.stopped_epoch, model)


def save_head(path, head: PredictionHead) -> None:
    save_checkpoint(path, {"head.W_p": head.W_p, "head.b_p": head.b_p})


def load_head(path) -> PredictionHead:
    data = load_checkpoint(path)
    try:
        return PredictionHead(data["head.W_p"], data["head.b_p"])
    except KeyError as exc:
        raise InputError(f"{path}: checkpoint lacks tensor {exc.args[0]}") from None


def check_head(model: Model, head: PredictionHead) -> None:
    want = (len(model.tags), 2 * model.config.d_T)
    if head.W_p.shape != want or head.b_p.shape != (want[0],):
        raise ShapeError(f"checkpoint head has shape {head.W_p.shape}, model expects {want}")


# ---------------------------------------------------------------------------
# sweep and export


def sweep(config: PipelineConfig, records: Sequence[Record], alphas, lambdas,
          vocab: LabelVocabulary | None = None, head=None) -> list[dict]:
    """One row per (alpha, lambda); the forward pass is shared across lambdas."""
    for a in alphas:
        config.updated(alpha=a)
    for lam in lambdas:
        config.updated(lam=lam)
    pmi = pmi_for(records)
    rows = []
    for a in alphas:
        model = build_model(config.updated(alpha=a), records, vocab)
        if head is not None:
            model.head = head
        base = run_records(model, records, pmi)
        p, r, f = base.metrics
        for lam in lambdas:
            joint = [joint_loss(x.l_main, x.loss_graph, lam) for x in base.records]
            rows.append({
                "alpha": float(a),
                "lambda": float(lam),
                "wd_cost": [x.wd_cost for x in base.records],
                "gwd_cost": [x.gwd_cost for x in base.records],
                "loss_graph": [x.loss_graph for x in base.records],
                "l_main": [x.l_main for x in base.records],
                "joint": joint,
                "precision": round(p, 4),
                "recall": round(r, 4),
                "f1": round(f, 4),
            })
    return rows


def export_matrices(report: RunReport, record_id: str, out_dir) -> list[Path]:
    """Write plan, costs, predicted tags and channel matrices of one processed record."""
    match = [r for r in report.records if r.id == record_id]
    if not match:
        raise InputError(f"unknown record id {record_id!r}")
    res = match[0]
    feats = res.features
    rec = feats.record
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokens = [f"{i}_{t}" for i, t in enumerate(rec.sentence.tokens)]
    objects = [f"{i}_{o}" for i, o in enumerate(rec.scene.object_labels)]
    paths = dump_alignment(feats.alignment, out_dir, objects, tokens)
    for name, mat in (("tags", res.pred_grid.names()), ("sd", feats.sd), ("co", feats.co)):
        path = out_dir / f"{name}.tsv"
        write_matrix(path, mat, tokens, tokens)
        paths.append(path)
    for name, w in feats.channel_weights.items():
        path = out_dir / f"wgcn_{name.lower()}.tsv"
        write_matrix(path, w, tokens, tokens)
        paths.append(path)
    return paths
