"""Embedding storage, episode sampling and base-class statistics.

The interchange unit is a pre-extracted feature vector, not an image: a
store holds labelled float64 feature vectors partitioned into a base split
(abundant labels, drives all training) and novel validation/test splits
(seen only when sampling evaluation episodes).

The module also provides the synthetic attribute-compositional generator
used by the acceptance suite: class centers are sums of per-attribute
latent vectors plus a class offset, samples drop attribute contributions
at random, and semantic embeddings are noisy copies of the latents so that
semantics genuinely predict feature-space structure.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from .knowledge import KnowledgeBase
from .numeric import STD_FLOOR, DiagGaussian, as_vector

SPLIT_NAMES = ("base", "novel-val", "novel-test")
_SPLIT_ALIASES = {
    "base": 0, "0": 0,
    "novel-val": 1, "val": 1, "1": 1,
    "novel-test": 2, "test": 2, "2": 2,
}


def split_code(split: str | int) -> int:
    key = str(split).strip().lower()
    if key not in _SPLIT_ALIASES:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLIT_NAMES}")
    return _SPLIT_ALIASES[key]


class EmbeddingStore:
    """Immutable collection of (feature, class_id, split) records."""

    def __init__(self, features, class_ids, splits, kb: KnowledgeBase | None = None):
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError("features must be a non-empty (n, d) array")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite entries")
        if len(class_ids) != feats.shape[0] or len(splits) != feats.shape[0]:
            raise ValueError("features, class_ids and splits must have equal length")
        feats = feats.copy()
        feats.setflags(write=False)
        self.features = feats
        self.class_ids = tuple(str(c) for c in class_ids)
        codes = np.array([split_code(s) for s in splits], dtype=np.int8)
        codes.setflags(write=False)
        self.split_codes = codes
        # populated by the synthetic generator only: planted class centers
        self.true_centers: dict[str, np.ndarray] | None = None
        if kb is not None:
            self._validate_against(kb)

    def _validate_against(self, kb: KnowledgeBase) -> None:
        known = set(kb.classes)
        for cid in set(self.class_ids):
            if cid not in known:
                raise ValueError(f"class {cid!r} not in knowledge base")
        base = np.array([c in kb.base_classes for c in self.class_ids])
        if np.any(base & (self.split_codes != 0)):
            raise ValueError("base-class records must carry the base split")
        if np.any(~base & (self.split_codes == 0)):
            raise ValueError("base-split records must belong to base classes")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def classes_in_split(self, split) -> tuple[str, ...]:
        code = split_code(split)
        found = {c for c, s in zip(self.class_ids, self.split_codes) if s == code}
        return tuple(sorted(found))

    def indices_of(self, class_id: str, split=None) -> np.ndarray:
        mask = np.array([c == class_id for c in self.class_ids])
        if split is not None:
            mask &= self.split_codes == split_code(split)
        return np.flatnonzero(mask)

    def features_of(self, class_id: str, split=None) -> np.ndarray:
        return self.features[self.indices_of(class_id, split)]


@dataclass(frozen=True)
class Episode:
    """One N-way K-shot task: labelled support set plus query set."""

    classes: tuple[str, ...]
    support_features: np.ndarray  # (n_way * k_shot, d)
    support_labels: np.ndarray  # int indices into classes
    query_features: np.ndarray  # (n_way * m_query, d)
    query_labels: np.ndarray

    @property
    def n_way(self) -> int:
        return len(self.classes)

    @property
    def k_shot(self) -> int:
        return self.support_features.shape[0] // len(self.classes)

    @property
    def dim(self) -> int:
        return self.support_features.shape[1]

    def support_of(self, class_index: int) -> np.ndarray:
        return self.support_features[self.support_labels == class_index]


def sample_episode(
    store: EmbeddingStore,
    n_way: int,
    k_shot: int,
    m_query: int,
    split,
    rng: np.random.Generator,
) -> Episode:
    """Draw an N-way K-shot episode from one split.

    Classes and records are drawn without replacement, so the support and
    query sets never share a record.
    """
    if n_way < 1 or k_shot < 1 or m_query < 0:
        raise ValueError("need n_way >= 1, k_shot >= 1, m_query >= 0")
    candidates = store.classes_in_split(split)
    need = k_shot + m_query
    eligible = [c for c in candidates if store.indices_of(c, split).size >= need]
    if len(eligible) < n_way:
        raise ValueError(
            f"split {split!r} has {len(eligible)} classes with >= {need} records, "
            f"need {n_way}"
        )
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=n_way, replace=False)]
    sup_feats, sup_labels, qry_feats, qry_labels = [], [], [], []
    for label, cid in enumerate(chosen):
        idx = store.indices_of(cid, split)
        picked = idx[rng.choice(idx.size, size=need, replace=False)]
        sup_feats.append(store.features[picked[:k_shot]])
        sup_labels.extend([label] * k_shot)
        qry_feats.append(store.features[picked[k_shot:]])
        qry_labels.extend([label] * m_query)
    d = store.dim
    return Episode(
        classes=tuple(chosen),
        support_features=np.concatenate(sup_feats),
        support_labels=np.array(sup_labels, dtype=np.intp),
        query_features=(
            np.concatenate(qry_feats) if m_query > 0 else np.empty((0, d))
        ),
        query_labels=np.array(qry_labels, dtype=np.intp),
    )


def class_prototype(features) -> np.ndarray:
    """Arithmetic mean of a non-empty list of equal-dimension vectors."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[None, :]
    if feats.shape[0] == 0:
        raise ValueError("cannot average an empty feature list")
    return feats.mean(axis=0)


def base_class_prototypes(store: EmbeddingStore) -> dict[str, np.ndarray]:
    """Per-class mean over all base-split samples."""
    return {
        c: class_prototype(store.features_of(c, "base"))
        for c in store.classes_in_split("base")
    }


def class_centers(store: EmbeddingStore, split=None) -> dict[str, np.ndarray]:
    """Empirical class centers: mean over every record of each class.

    With abundant samples per class this is the reference prototype that
    estimated prototypes are compared against.
    """
    classes = (
        store.classes_in_split(split)
        if split is not None
        else tuple(sorted(set(store.class_ids)))
    )
    return {c: class_prototype(store.features_of(c, split)) for c in classes}


def attribute_distribution(
    store: EmbeddingStore, kb: KnowledgeBase, attribute: str
) -> DiagGaussian:
    """Feature distribution of a seen part/attribute.

    Mean and population std (divisor = member count) over every base-split
    sample whose class is associated with the attribute.
    """
    try:
        col = kb.attributes.index(attribute)
    except ValueError:
        raise KeyError(f"unknown attribute {attribute!r}") from None
    member_classes = [
        c
        for c in kb.classes
        if c in kb.base_classes and kb.assoc[kb.class_index(c), col]
    ]
    chunks = [store.features_of(c, "base") for c in member_classes]
    chunks = [f for f in chunks if f.shape[0] > 0]
    if not chunks:
        raise ValueError(
            f"attribute {attribute!r} has no base-class samples (unseen); "
            "its distribution must be inferred from semantics instead"
        )
    feats = np.concatenate(chunks)
    mean = feats.mean(axis=0)
    std = np.maximum(feats.std(axis=0), STD_FLOOR)
    return DiagGaussian(mean=mean, std=std)


def seen_attribute_distributions(
    store: EmbeddingStore, kb: KnowledgeBase, seen: tuple[str, ...]
) -> dict[str, DiagGaussian]:
    return {a: attribute_distribution(store, kb, a) for a in seen}


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def save_embeddings(store: EmbeddingStore, path) -> None:
    """Write the binary embedding format.

    One UTF-8 JSON header line ``{"dim": d, "count": n}`` followed by ``n``
    records of ``[class_id_len: u32 LE][class_id bytes][split: u8][d x f64 LE]``.
    """
    with open(path, "wb") as fh:
        fh.write(
            json.dumps({"dim": store.dim, "count": len(store)}).encode("utf-8")
        )
        fh.write(b"\n")
        for feat, cid, code in zip(store.features, store.class_ids, store.split_codes):
            raw = cid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("B", int(code)))
            fh.write(feat.astype("<f8").tobytes())


def _load_embeddings_binary(path, kb):
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
            dim = int(header["dim"])
            count = int(header["count"])
        except (ValueError, KeyError) as exc:
            raise ValueError(f"bad embedding header in {path}: {exc}") from exc
        if count < 1:
            raise ValueError(f"embedding file {path} declares no records")
        feats = np.empty((count, dim), dtype=np.float64)
        cids, codes = [], []
        rec_tail = 1 + 8 * dim
        for i in range(count):
            raw_len = fh.read(4)
            if len(raw_len) < 4:
                raise ValueError(f"truncated record {i} in {path}")
            (id_len,) = struct.unpack("<I", raw_len)
            body = fh.read(id_len + rec_tail)
            if len(body) < id_len + rec_tail:
                raise ValueError(f"truncated record {i} in {path}")
            cids.append(body[:id_len].decode("utf-8"))
            codes.append(body[id_len])
            feats[i] = np.frombuffer(body[id_len + 1 :], dtype="<f8")
        if fh.read(1):
            raise ValueError(f"trailing bytes after {count} records in {path}")
    return EmbeddingStore(feats, cids, codes, kb=kb)


def _load_embeddings_csv(path, kb):
    feats, cids, codes = [], [], []
    dim = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if len(row) < 3:
                raise ValueError(f"row {row_no} in {path}: need class_id,split,f0,...")
            values = as_vector([float(x) for x in row[2:]], f"row {row_no}")
            if dim is None:
                dim = values.shape[0]
            elif values.shape[0] != dim:
                raise ValueError(
                    f"row {row_no} in {path} has {values.shape[0]} features, expected {dim}"
                )
            cids.append(row[0].strip())
            codes.append(split_code(row[1]))
            feats.append(values)
    if not feats:
        raise ValueError(f"no records in {path}")
    return EmbeddingStore(np.stack(feats), cids, codes, kb=kb)


def load_embeddings(path, kb: KnowledgeBase | None = None) -> EmbeddingStore:
    """Load the binary embedding format, or the CSV fallback
    ``class_id,split,f0,...``; validates against ``kb`` when given."""
    with open(path, "rb") as fh:
        first = fh.read(1)
    if first == b"{":
        return _load_embeddings_binary(path, kb)
    return _load_embeddings_csv(path, kb)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

# semantic embeddings are latents plus noise at this fraction of attr_scale
_SEMANTIC_NOISE_FRACTION = 0.05


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the attribute-compositional generator.

    The defaults carve out a regime where prototype completion genuinely
    pays off: enough base classes for the completion network to generalize
    past them, more attributes than feature dimensions so semantic transfer
    is identifiable, and heavy per-sample attribute dropout so one-shot
    prototypes actually miss feature mass that priors can restore.
    """

    n_base_classes: int = 48
    n_novel_classes: int = 5
    n_attributes: int = 24
    attrs_per_class: int = 4
    dim: int = 16
    samples_per_class: int = 50
    attr_scale: float = 1.0
    class_offset_scale: float = 0.25
    sample_noise_scale: float = 0.4
    incompleteness_rate: float = 0.5

    def __post_init__(self):
        counts = (
            self.n_base_classes,
            self.n_novel_classes,
            self.n_attributes,
            self.attrs_per_class,
            self.dim,
            self.samples_per_class,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all synthetic counts must be >= 1")
        if self.attrs_per_class > self.n_attributes:
            raise ValueError("attrs_per_class exceeds n_attributes")
        if not (self.attr_scale > 0 and self.class_offset_scale > 0 and self.sample_noise_scale > 0):
            raise ValueError("all synthetic scales must be > 0")
        if not 0.0 <= self.incompleteness_rate <= 1.0:
            raise ValueError("incompleteness_rate must be in [0, 1]")


def generate_synthetic(
    spec: SyntheticSpec, rng: np.random.Generator
) -> tuple[EmbeddingStore, KnowledgeBase]:
    """Sample a store and knowledge base from the compositional model.

    Each attribute owns a latent vector ``z_a ~ N(0, attr_scale^2 I)``; a
    class center is the sum of its attribute latents (scaled by the expected
    keep rate) plus a private offset that no attribute can explain.  Samples
    drop each attribute contribution independently with probability
    ``incompleteness_rate`` and add isotropic noise.  A slice of attributes
    is reserved for novel classes only, so the unseen-attribute transfer
    path always has work to do.  Novel classes go to the novel-test split.
    """
    d = spec.dim
    n_classes = spec.n_base_classes + spec.n_novel_classes
    class_ids = [f"base{i:02d}" for i in range(spec.n_base_classes)] + [
        f"novel{i:02d}" for i in range(spec.n_novel_classes)
    ]
    latents = rng.normal(0.0, spec.attr_scale, size=(spec.n_attributes, d))

    # Reserve ~15% of attributes for novel classes (never in a base row),
    # as long as base rows still have enough attributes to draw from.
    n_reserved = max(1, round(0.15 * spec.n_attributes))
    n_reserved = min(n_reserved, spec.n_attributes - spec.attrs_per_class)
    n_reserved = max(n_reserved, 0)
    perm = rng.permutation(spec.n_attributes)
    reserved = np.sort(perm[:n_reserved])
    open_attrs = np.sort(perm[n_reserved:])

    assoc = np.zeros((n_classes, spec.n_attributes), dtype=np.int8)
    for row in range(spec.n_base_classes):
        picked = rng.choice(open_attrs, size=spec.attrs_per_class, replace=False)
        assoc[row, picked] = 1
    for j in range(spec.n_novel_classes):
        row = spec.n_base_classes + j
        if reserved.size > 0:
            unseen_pick = reserved[j % reserved.size]
            rest_pool = np.setdiff1d(np.arange(spec.n_attributes), [unseen_pick])
            rest = rng.choice(rest_pool, size=spec.attrs_per_class - 1, replace=False)
            assoc[row, unseen_pick] = 1
            assoc[row, rest] = 1
        else:
            picked = rng.choice(spec.n_attributes, size=spec.attrs_per_class, replace=False)
            assoc[row, picked] = 1

    offsets = rng.normal(0.0, spec.class_offset_scale, size=(n_classes, d))

    feats, cids, codes = [], [], []
    for row, cid in enumerate(class_ids):
        members = np.flatnonzero(assoc[row])
        split = 0 if row < spec.n_base_classes else 2
        for _ in range(spec.samples_per_class):
            kept = members[rng.random(members.size) >= spec.incompleteness_rate]
            x = offsets[row] + latents[kept].sum(axis=0)
            x = x + rng.normal(0.0, spec.sample_noise_scale, size=d)
            feats.append(x)
            cids.append(cid)
            codes.append(split)

    sem_noise = _SEMANTIC_NOISE_FRACTION * spec.attr_scale
    attr_ids = [f"attr{i:02d}" for i in range(spec.n_attributes)]
    sem_attr = {
        a: latents[i] + rng.normal(0.0, sem_noise, size=d)
        for i, a in enumerate(attr_ids)
    }
    sem_class = {}
    for row, cid in enumerate(class_ids):
        members = np.flatnonzero(assoc[row])
        sem_class[cid] = latents[members].mean(axis=0) + rng.normal(
            0.0, sem_noise, size=d
        )

    kb = KnowledgeBase(
        classes=tuple(class_ids),
        attributes=tuple(attr_ids),
        assoc=assoc,
        sem_class=sem_class,
        sem_attr=sem_attr,
        base_classes=frozenset(class_ids[: spec.n_base_classes]),
    )
    store = EmbeddingStore(np.stack(feats), cids, codes, kb=kb)
    keep = 1.0 - spec.incompleteness_rate
    store.true_centers = {
        cid: offsets[row] + keep * latents[np.flatnonzero(assoc[row])].sum(axis=0)
        for row, cid in enumerate(class_ids)
    }
    return store, kb
