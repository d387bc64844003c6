import json

import numpy as np
import pytest

from protofuse.knowledge import (
    KnowledgeBase,
    inject_noise,
    load_knowledge,
    save_knowledge,
    split_attributes,
)
from protofuse.numeric import make_rng


def tiny_kb(assoc, base=("c0",), dim=3, n_attrs=None):
    n_classes = len(assoc)
    n_attrs = n_attrs if n_attrs is not None else len(assoc[0])
    classes = tuple(f"c{i}" for i in range(n_classes))
    attributes = tuple(f"a{i}" for i in range(n_attrs))
    rng = make_rng(0)
    return KnowledgeBase(
        classes=classes,
        attributes=attributes,
        assoc=np.asarray(assoc),
        sem_class={c: rng.standard_normal(dim) for c in classes},
        sem_attr={a: rng.standard_normal(dim) for a in attributes},
        base_classes=frozenset(base),
    )


def write_kb_json(path, **overrides):
    payload = {
        "embedding_dim": 2,
        "classes": [
            {"id": "cat", "base": True, "embedding": [0.1, 0.2]},
            {"id": "owl", "base": False, "embedding": [0.3, 0.4]},
        ],
        "attributes": [{"id": "tail", "embedding": [0.5, 0.6]}],
        "assoc": [[1], [0]],
    }
    payload.update(overrides)
    path.write_text(json.dumps(payload))
    return path


class TestLoadKnowledge:
    def test_minimal_file(self, tmp_path):
        kb = load_knowledge(write_kb_json(tmp_path / "kb.json"))
        assert kb.n_attributes == 1
        assert kb.base_classes == {"cat"}
        assert kb.attributes_of("cat") == ("tail",)

    def test_non_binary_assoc_rejected(self, tmp_path):
        p = write_kb_json(tmp_path / "kb.json", assoc=[[0.5], [0]])
        with pytest.raises(ValueError, match="0 or 1"):
            load_knowledge(p)

    def test_mixed_embedding_dims_rejected(self, tmp_path):
        p = write_kb_json(
            tmp_path / "kb.json",
            attributes=[{"id": "tail", "embedding": [0.5, 0.6, 0.7]}],
        )
        with pytest.raises(ValueError, match="dimension"):
            load_knowledge(p)

    def test_parse_error(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        with pytest.raises(ValueError, match="parse"):
            load_knowledge(p)

    def test_assoc_shape_mismatch(self, tmp_path):
        p = write_kb_json(tmp_path / "kb.json", assoc=[[1]])
        with pytest.raises(ValueError, match="shape"):
            load_knowledge(p)

    def test_round_trip_bit_identical(self, tmp_path):
        rng = make_rng(42)
        src = tmp_path / "src.json"
        write_kb_json(
            src,
            embedding_dim=4,
            classes=[
                {"id": "cat", "base": True, "embedding": rng.standard_normal(4).tolist()},
                {"id": "owl", "base": False, "embedding": rng.standard_normal(4).tolist()},
            ],
            attributes=[
                {"id": "tail", "embedding": rng.standard_normal(4).tolist()},
                {"id": "beak", "embedding": rng.standard_normal(4).tolist()},
            ],
            assoc=[[1, 0], [1, 1]],
        )
        kb = load_knowledge(src)
        out = tmp_path / "out.json"
        save_knowledge(kb, out)
        assert load_knowledge(out) == kb


class TestSplitAttributes:
    def test_novel_only_attribute_is_unseen(self):
        kb = tiny_kb([[1, 0], [0, 1]], base=("c0",))
        split = split_attributes(kb)
        assert split.seen == ("a0",)
        assert split.unseen == ("a1",)

    def test_shared_attribute_is_seen(self):
        kb = tiny_kb([[1, 1], [0, 1]], base=("c0",))
        split = split_attributes(kb)
        assert "a1" in split.seen

    def test_orphan_attribute_flagged(self):
        kb = tiny_kb([[1, 0], [1, 0]], base=("c0",))
        split = split_attributes(kb)
        assert split.unseen == ("a1",)
        assert split.orphans == ("a1",)

    def test_partition_property(self):
        rng = make_rng(5)
        for _ in range(50):
            assoc = (rng.random((4, 6)) < 0.3).astype(int)
            kb = tiny_kb(assoc.tolist(), base=("c0", "c1"))
            split = split_attributes(kb)
            assert set(split.seen) | set(split.unseen) == set(kb.attributes)
            assert set(split.seen) & set(split.unseen) == set()


class TestInjectNoise:
    def test_gamma_zero_is_identity(self):
        kb = tiny_kb([[1, 0], [0, 1]])
        out = inject_noise(kb, 0.0, make_rng(1))
        np.testing.assert_array_equal(out.assoc, kb.assoc)

    def test_gamma_one_complements(self):
        kb = tiny_kb([[1, 0], [0, 1]])
        out = inject_noise(kb, 1.0, make_rng(1))
        np.testing.assert_array_equal(out.assoc, 1 - kb.assoc)

    def test_flip_count_binomial(self):
        kb = tiny_kb(np.zeros((100, 100), dtype=int).tolist(), n_attrs=100)
        counts = []
        for seed in range(50):
            out = inject_noise(kb, 0.1, make_rng(seed))
            counts.append(int(np.sum(out.assoc != kb.assoc)))
        # flips ~ Binomial(10000, 0.1): mean 1000, sd 30; mean of 50 runs
        # has sd 30/sqrt(50) ~ 4.24
        assert abs(np.mean(counts) - 1000.0) < 3 * 30 / np.sqrt(50)

    def test_shape_and_binarity_preserved(self):
        kb = tiny_kb([[1, 0, 1], [0, 1, 0]])
        for gamma in (0.0, 0.3, 0.7, 1.0):
            out = inject_noise(kb, gamma, make_rng(3))
            assert out.assoc.shape == kb.assoc.shape
            assert np.isin(out.assoc, (0, 1)).all()
            assert out.sem_attr is kb.sem_attr

    def test_gamma_out_of_range(self):
        kb = tiny_kb([[1]])
        with pytest.raises(ValueError):
            inject_noise(kb, 1.5, make_rng(0))
