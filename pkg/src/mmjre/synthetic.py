"""Planted synthetic corpus.

Every sentence has one person followed, in this order, by an optional
award (two tokens), an optional organisation and an optional location;
each entity word belongs to exactly one lexicon. Relations are fixed by the
ordered pair of entity types:

    PER -> MISC : awarded       PER -> ORG : member_of
    PER -> LOC  : present_in    ORG -> LOC : locate_at

so the tag of a word pair is determined by the lexicon classes of its two
words. Scene graphs contain one object per entity (a person, a trophy, a
logo, a building) plus low-score distractors, joined by visual relations
that mirror the textual ones (``holding`` for an award, ``wearing`` for an
organisation, ``near`` for a location).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import write_corpus
from .graphs import LabelVocabulary, save_vocabulary
from .rng import stream

PERSONS = ("Curry", "Thompson", "Kobe", "Arsene", "Lili", "Messi", "Serena", "Jordan",
           "Ronaldo", "Federer", "Bolt", "Biles", "Nadal", "Pele")
AWARDS = (("O'Brien", "Trophy"), ("World", "Cup"), ("Golden", "Ball"), ("MVP", "Award"),
          ("Davis", "Cup"), ("Ballon", "d'Or"))
ORGS = ("NBA", "Warriors", "Arsenal", "Lakers", "FIFA", "UEFA", "Juventus", "Celtics")
LOCS = ("Paris", "London", "Boston", "Oakland", "Tokyo", "Madrid", "Chicago", "Denver")

FILLERS = (
    ("the", "DET", "det"), ("a", "DET", "det"), ("with", "ADP", "prep"),
    ("at", "ADP", "prep"), ("in", "ADP", "prep"), ("and", "CCONJ", "cc"),
    ("after", "ADP", "prep"), ("game", "NOUN", "pobj"), ("season", "NOUN", "pobj"),
    ("night", "NOUN", "npadvmod"), ("fans", "NOUN", "conj"), ("great", "ADJ", "amod"),
    ("again", "ADV", "advmod"), (",", "PUNCT", "punct"),
)
VERBS = ("won", "celebrates", "joined", "lifted", "visits")

RELATIONS = {
    ("PER", "MISC"): "awarded",
    ("PER", "ORG"): "member_of",
    ("PER", "LOC"): "present_in",
    ("ORG", "LOC"): "locate_at",
}
ENTITY_TYPES = ("PER", "LOC", "ORG", "MISC")
RELATION_TYPES = ("awarded", "member_of", "present_in", "locate_at")
VISUAL_RELATIONS = ("holding", "wearing", "near", "behind", "on")
OBJECT_FOR = {"PER": ("man", "woman"), "MISC": ("trophy",), "ORG": ("logo",),
              "LOC": ("building",)}
VISUAL_FOR = {"MISC": "holding", "ORG": "wearing", "LOC": "near"}
DISTRACTORS = ("ball", "shirt", "crowd", "chair", "light", "sign", "hat", "car")


def vocabulary() -> LabelVocabulary:
    deps = sorted({f[2] for f in FILLERS} | {"ROOT", "nsubj", "dobj", "compound", "pobj",
                                             "punct", "npadvmod"})
    pos = sorted({f[1] for f in FILLERS} | {"PROPN", "VERB"})
    return LabelVocabulary(ENTITY_TYPES, RELATION_TYPES, tuple(deps), tuple(pos),
                           VISUAL_RELATIONS)


def _fillers(rng, count):
    return [FILLERS[i] for i in rng.integers(0, len(FILLERS), count)]


def make_record(rng: np.random.Generator, rid: str, length: int | None = None,
                n_objects: int | None = None) -> dict:
    """One planted record; ``length``/``n_objects`` pad the sentence and scene to a fixed size."""
    entities = [("PER", (PERSONS[rng.integers(len(PERSONS))],))]
    if rng.random() < 0.5:
        entities.append(("MISC", AWARDS[rng.integers(len(AWARDS))]))
    if rng.random() < 0.6:
        entities.append(("ORG", (ORGS[rng.integers(len(ORGS))],)))
    if rng.random() < 0.5 or len(entities) == 1:
        entities.append(("LOC", (LOCS[rng.integers(len(LOCS))],)))

    # (word, pos, dep, entity index or None)
    words: list[tuple[str, str, str, int | None]] = []
    for w in _fillers(rng, rng.integers(0, 2)):
        words.append((*w, None))
    for e_idx, (etype, toks) in enumerate(entities):
        if e_idx == 1:
            words.append((VERBS[rng.integers(len(VERBS))], "VERB", "ROOT", None))
        for w in _fillers(rng, rng.integers(0, 3)):
            words.append((*w, None))
        for t_idx, tok in enumerate(toks):
            dep = "compound" if t_idx < len(toks) - 1 else ("nsubj" if etype == "PER" else "dobj")
            words.append((tok, "PROPN", dep, e_idx))
    words.append((".", "PUNCT", "punct", None))
    if length is not None:
        while len(words) < length:
            pos = int(rng.integers(0, len(words)))
            words.insert(pos, (*_fillers(rng, 1)[0], None))

    tokens = [w[0] for w in words]
    n = len(tokens)
    root = next(i for i, w in enumerate(words) if w[2] == "ROOT")
    spans: dict[int, list[int]] = {}
    for i, w in enumerate(words):
        if w[3] is not None:
            spans.setdefault(w[3], []).append(i)
    heads = [root] * n
    dep_labels = [w[2] for w in words]
    for e_idx, idxs in spans.items():
        for i in idxs[:-1]:
            heads[i] = idxs[-1]
    attach = sorted(i for idxs in spans.values() for i in idxs) + [root]
    for i, w in enumerate(words):
        if w[3] is None and i != root and rng.random() < 0.5:
            heads[i] = int(attach[rng.integers(len(attach))])
    heads[root] = root

    quints = []
    for a in range(len(entities)):
        for b in range(a + 1, len(entities)):
            rel = RELATIONS.get((entities[a][0], entities[b][0]))
            if rel is None:
                continue
            sa, sb = spans[a], spans[b]
            quints.append([sa[0], sa[-1], entities[a][0], sb[0], sb[-1], entities[b][0], rel])

    objects, relations = [], []
    person = OBJECT_FOR["PER"][rng.integers(2)]
    objects.append({"label": person, "score": round(float(rng.uniform(0.85, 0.99)), 4)})
    for etype, _ in entities[1:]:
        objects.append({"label": OBJECT_FOR[etype][0],
                        "score": round(float(rng.uniform(0.6, 0.95)), 4)})
        relations.append([0, VISUAL_FOR[etype], len(objects) - 1])
    extra = n_objects - len(objects) if n_objects is not None else int(rng.integers(1, 4))
    for _ in range(max(extra, 0)):
        objects.append({"label": DISTRACTORS[rng.integers(len(DISTRACTORS))],
                        "score": round(float(rng.uniform(0.05, 0.55)), 4)})
        if rng.random() < 0.5:
            relations.append([len(objects) - 1,
                              VISUAL_RELATIONS[rng.integers(3, len(VISUAL_RELATIONS))],
                              int(rng.integers(0, len(objects) - 1))])
    return {
        "id": rid,
        "tokens": tokens,
        "pos": [w[1] for w in words],
        "heads": heads,
        "dep_labels": dep_labels,
        "scene_graph": {"objects": objects, "relations": relations},
        "gold_quintuples": quints,
    }


def generate(count: int, seed: int, prefix: str = "syn", length: int | None = None,
             n_objects: int | None = None) -> list[dict]:
    rng = stream(seed, f"synthetic/{prefix}")
    return [make_record(rng, f"{prefix}-{i:04d}", length, n_objects) for i in range(count)]


def write_synthetic(out_dir, count: int, seed: int, prefix: str = "syn",
                    length: int | None = None, n_objects: int | None = None) -> tuple[Path, Path]:
    """Write ``<prefix>.jsonl`` and ``vocab.txt`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = out_dir / f"{prefix}.jsonl"
    vocab = out_dir / "vocab.txt"
    write_corpus(corpus, generate(count, seed, prefix, length, n_objects))
    save_vocabulary(vocabulary(), vocab)
    return corpus, vocab


def token_classes(record) -> list[str]:
    """Entity type of every token of a loaded record, ``"O"`` outside entities."""
    out = ["O"] * record.sentence.n
    for q in record.gold:
        for (s, e), t in ((q.e1, q.t1), (q.e2, q.t2)):
            out[s:e + 1] = [t] * (e - s + 1)
    return out


def planted_features(records, dim: int, seed: int, noise: float = 0.1) -> list[np.ndarray]:
    """Word representations that carry each token's entity class through a fixed codebook.

    With at most one entity per type in a sentence, the tag of a word pair is
    a function of the two classes that a linear pair head can represent, so
    the resulting grids are linearly separable.
    """
    rng = stream(seed, "synthetic/codebook")
    classes = ("O",) + ENTITY_TYPES
    book = dict(zip(classes, rng.standard_normal((len(classes), dim))))
    out = []
    for r in records:
        jitter = stream(seed, f"synthetic/noise/{r.id}").standard_normal((r.sentence.n, dim))
        out.append(np.stack([book[c] for c in token_classes(r)]) + noise * jitter)
    return out
