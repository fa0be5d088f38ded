"""Sentence-image records: one JSON object per line.

Fields: ``id``, ``tokens``, ``pos``, ``heads``, ``dep_labels``,
``scene_graph`` (inline ``{objects, relations}`` or a path relative to the
corpus file) and ``gold_quintuples`` (lists of
``[start1, end1, type1, start2, end2, type2, relation]``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputError
from .graphs import (
    DEFAULT_ENTITY_TYPES, MAX_OBJECTS, SELF_LABEL, MAX_TOKENS, LabelVocabulary, TokenizedSentence,
    VisualGraph, iter_records, load_scene_graph, parse_scene_graph, sentence_from_record,
)
from .tagging import Quintuple


@dataclass(frozen=True)
class Record:
    id: str
    sentence: TokenizedSentence
    scene: VisualGraph
    gold: tuple[Quintuple, ...]


def record_from_dict(rec: dict, base_dir: Path, max_tokens: int, max_objects: int) -> Record:
    if "id" not in rec:
        raise InputError("missing field(s): id")
    sent = sentence_from_record(rec)
    if sent.n > max_tokens:
        raise InputError(f"record {rec['id']!r} has {sent.n} tokens (max_tokens={max_tokens})")
    sg = rec.get("scene_graph")
    if isinstance(sg, str):
        scene = load_scene_graph(base_dir / sg, max_objects)
    elif isinstance(sg, dict):
        scene = parse_scene_graph(sg, max_objects)
    else:
        raise InputError("scene_graph must be an object or a file path")
    gold = []
    for item in rec.get("gold_quintuples", []):
        q = Quintuple.from_list(item).canonical()
        if q.e2[1] >= sent.n:
            raise InputError(f"quintuple {item!r} exceeds sentence length {sent.n}")
        gold.append(q)
    return Record(str(rec["id"]), sent, scene, tuple(sorted(set(gold))))


def load_corpus(path, max_tokens: int = MAX_TOKENS, max_objects: int = MAX_OBJECTS) -> list[Record]:
    path = Path(path)
    out, seen = [], set()
    for lineno, rec in iter_records(path):
        try:
            r = record_from_dict(rec, path.parent, max_tokens, max_objects)
        except InputError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
        if r.id in seen:
            raise InputError(f"{path}:{lineno}: duplicate record id {r.id!r}")
        seen.add(r.id)
        out.append(r)
    return out


def record_to_dict(r: Record) -> dict:
    s = r.sentence
    return {
        "id": r.id,
        "tokens": list(s.tokens),
        "pos": list(s.pos_tags),
        "heads": list(s.dep_heads),
        "dep_labels": list(s.dep_labels),
        "gold_quintuples": [q.as_list() for q in r.gold],
    }


def write_corpus(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=False) + "\n")


def infer_vocabulary(records: Sequence[Record], base: LabelVocabulary | None = None) -> LabelVocabulary:
    """Fill empty vocabulary lists from the labels that occur in ``records``."""
    base = base or LabelVocabulary()
    ents, rels, deps, pos, vis = set(), set(), set(), set(), set()
    for r in records:
        for q in r.gold:
            ents.update((q.t1, q.t2))
            rels.add(q.r)
        deps.update(r.sentence.dep_labels)
        pos.update(r.sentence.pos_tags)
        for lab in r.scene.edge_labels.ravel():
            if lab is not None and lab != SELF_LABEL:
                vis.add(lab)
    entity_types = base.entity_types or DEFAULT_ENTITY_TYPES
    missing = ents - set(entity_types)
    if missing:
        entity_types = tuple(entity_types) + tuple(sorted(missing))
    return LabelVocabulary(
        entity_types=tuple(entity_types),
        relation_types=base.relation_types or tuple(sorted(rels)),
        dependency_labels=base.dependency_labels or tuple(sorted(deps)),
        pos_labels=base.pos_labels or tuple(sorted(pos)),
        visual_relation_labels=base.visual_relation_labels or tuple(sorted(vis)),
    )
