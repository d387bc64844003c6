"""Primitive knowledge about classes and their parts/attributes.

A knowledge base holds an ordered class list, an ordered part/attribute
list, the binary class-attribute association matrix, one semantic embedding
per class and per attribute, and the base/novel class split.  Attributes
are "seen" when at least one base class is associated with them; the rest
are "unseen" and only ever receive transferred feature distributions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numeric import as_vector


@dataclass(frozen=True)
class KnowledgeBase:
    classes: tuple[str, ...]
    attributes: tuple[str, ...]
    assoc: np.ndarray  # (n_classes, n_attributes), entries in {0, 1}
    sem_class: dict[str, np.ndarray]
    sem_attr: dict[str, np.ndarray]
    base_classes: frozenset[str]

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class ids")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError("duplicate attribute ids")
        assoc = np.asarray(self.assoc)
        if assoc.shape != (len(self.classes), len(self.attributes)):
            raise ValueError(
                f"assoc shape {assoc.shape} does not match "
                f"{len(self.classes)} classes x {len(self.attributes)} attributes"
            )
        if not np.isin(assoc, (0, 1)).all():
            raise ValueError("assoc entries must be 0 or 1")
        assoc = assoc.astype(np.int8, copy=True)
        assoc.setflags(write=False)
        object.__setattr__(self, "assoc", assoc)
        if not self.base_classes <= set(self.classes):
            raise ValueError("base_classes contains unknown class ids")
        dims = set()
        for name, table, keys in (
            ("class", self.sem_class, self.classes),
            ("attribute", self.sem_attr, self.attributes),
        ):
            if set(table) != set(keys):
                raise ValueError(f"semantic embeddings must cover every {name}")
            for k in keys:
                v = as_vector(table[k], f"embedding of {name} {k!r}")
                dims.add(v.shape[0])
        if len(dims) > 1:
            raise ValueError(f"mixed semantic embedding dimensions: {sorted(dims)}")

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def embedding_dim(self) -> int:
        return self.sem_class[self.classes[0]].shape[0]

    @property
    def novel_classes(self) -> frozenset[str]:
        return frozenset(self.classes) - self.base_classes

    def class_index(self, class_id: str) -> int:
        try:
            return self.classes.index(class_id)
        except ValueError:
            raise KeyError(f"unknown class {class_id!r}") from None

    def attributes_of(self, class_id: str) -> tuple[str, ...]:
        """Attribute ids associated with ``class_id``, in attribute order."""
        row = self.assoc[self.class_index(class_id)]
        return tuple(a for a, flag in zip(self.attributes, row) if flag)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return (
            self.classes == other.classes
            and self.attributes == other.attributes
            and np.array_equal(self.assoc, other.assoc)
            and self.base_classes == other.base_classes
            and all(np.array_equal(self.sem_class[c], other.sem_class[c]) for c in self.classes)
            and all(np.array_equal(self.sem_attr[a], other.sem_attr[a]) for a in self.attributes)
        )


@dataclass(frozen=True)
class AttrSplit:
    """Partition of the attribute set by base-class usage."""

    seen: tuple[str, ...]
    unseen: tuple[str, ...]
    # unseen attributes associated with no class at all; kept, but flagged
    orphans: tuple[str, ...] = field(default=())


def load_knowledge(path) -> KnowledgeBase:
    """Read a knowledge JSON file and validate every invariant.

    Schema::

        {"embedding_dim": int,
         "classes":    [{"id": str, "base": bool, "embedding": [float...]}],
         "attributes": [{"id": str, "embedding": [float...]}],
         "assoc":      [[0|1, ...], ...]}   # rows: classes, cols: attributes
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"cannot parse knowledge file {path}: {exc}") from exc
    try:
        dim = int(raw["embedding_dim"])
        classes = tuple(str(c["id"]) for c in raw["classes"])
        base = frozenset(str(c["id"]) for c in raw["classes"] if c["base"])
        sem_class = {str(c["id"]): as_vector(c["embedding"]) for c in raw["classes"]}
        attributes = tuple(str(a["id"]) for a in raw["attributes"])
        sem_attr = {str(a["id"]): as_vector(a["embedding"]) for a in raw["attributes"]}
        assoc = np.asarray(raw["assoc"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"knowledge file {path} missing or malformed field: {exc}") from exc
    if not np.isin(assoc, (0.0, 1.0)).all():
        raise ValueError("assoc entries must be exactly 0 or 1")
    for k, v in list(sem_class.items()) + list(sem_attr.items()):
        if v.shape[0] != dim:
            raise ValueError(
                f"embedding of {k!r} has dimension {v.shape[0]}, expected {dim}"
            )
    return KnowledgeBase(
        classes=classes,
        attributes=attributes,
        assoc=assoc.astype(np.int8),
        sem_class=sem_class,
        sem_attr=sem_attr,
        base_classes=base,
    )


def save_knowledge(kb: KnowledgeBase, path) -> None:
    payload = {
        "embedding_dim": kb.embedding_dim,
        "classes": [
            {
                "id": c,
                "base": c in kb.base_classes,
                "embedding": kb.sem_class[c].tolist(),
            }
            for c in kb.classes
        ],
        "attributes": [
            {"id": a, "embedding": kb.sem_attr[a].tolist()} for a in kb.attributes
        ],
        "assoc": kb.assoc.astype(int).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def split_attributes(kb: KnowledgeBase) -> AttrSplit:
    """Partition attributes into seen (used by >= 1 base class) and unseen.

    Attributes used by no class at all land in ``unseen`` and are also
    flagged in ``orphans``.
    """
    base_rows = [kb.class_index(c) for c in sorted(kb.base_classes)]
    if base_rows:
        base_usage = kb.assoc[base_rows].any(axis=0)
    else:
        base_usage = np.zeros(kb.n_attributes, dtype=bool)
    any_usage = kb.assoc.any(axis=0)
    seen = tuple(a for a, s in zip(kb.attributes, base_usage) if s)
    unseen = tuple(a for a, s in zip(kb.attributes, base_usage) if not s)
    orphans = tuple(a for a, u in zip(kb.attributes, any_usage) if not u)
    return AttrSplit(seen=seen, unseen=unseen, orphans=orphans)


def inject_noise(kb: KnowledgeBase, gamma: float, rng: np.random.Generator) -> KnowledgeBase:
    """Flip each class-attribute association independently with probability
    ``gamma``; a flip either adds or removes a part/attribute.  Semantic
    embeddings and the class split are untouched.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    flips = rng.random(kb.assoc.shape) < gamma
    noisy = np.where(flips, 1 - kb.assoc, kb.assoc).astype(np.int8)
    return KnowledgeBase(
        classes=kb.classes,
        attributes=kb.attributes,
        assoc=noisy,
        sem_class=kb.sem_class,
        sem_attr=kb.sem_attr,
        base_classes=kb.base_classes,
    )
