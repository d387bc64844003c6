import numpy as np
import pytest

from protofuse.data import (
    EmbeddingStore,
    SyntheticSpec,
    attribute_distribution,
    class_centers,
    class_prototype,
    generate_synthetic,
    load_embeddings,
    sample_episode,
    save_embeddings,
)
from protofuse.knowledge import KnowledgeBase
from protofuse.numeric import STD_FLOOR, make_rng


def make_store(n_per_class=4, n_classes=3, d=4, splits=None):
    rng = make_rng(0)
    feats, cids, codes = [], [], []
    splits = splits or {}
    for i in range(n_classes):
        cid = f"c{i}"
        for _ in range(n_per_class):
            feats.append(rng.standard_normal(d))
            cids.append(cid)
            codes.append(splits.get(cid, "base"))
    return EmbeddingStore(np.stack(feats), cids, codes)


def kb_for(assoc, base, dim=4):
    classes = tuple(f"c{i}" for i in range(len(assoc)))
    attrs = tuple(f"a{i}" for i in range(len(assoc[0])))
    rng = make_rng(1)
    return KnowledgeBase(
        classes=classes,
        attributes=attrs,
        assoc=np.asarray(assoc),
        sem_class={c: rng.standard_normal(dim) for c in classes},
        sem_attr={a: rng.standard_normal(dim) for a in attrs},
        base_classes=frozenset(base),
    )


class TestStoreIO:
    def test_round_trip_binary(self, tmp_path):
        store = make_store(splits={"c2": "novel-test"})
        path = tmp_path / "emb.bin"
        save_embeddings(store, path)
        loaded = load_embeddings(path)
        np.testing.assert_array_equal(loaded.features, store.features)
        assert loaded.class_ids == store.class_ids
        np.testing.assert_array_equal(loaded.split_codes, store.split_codes)

    def test_two_record_csv(self, tmp_path):
        p = tmp_path / "emb.csv"
        p.write_text("c0,base,0.0,1.0,2.0,3.0\nc1,test,4.0,5.0,6.0,7.0\n")
        store = load_embeddings(p)
        assert len(store) == 2
        assert store.dim == 4
        assert store.classes_in_split("novel-test") == ("c1",)

    def test_csv_ragged_row_rejected(self, tmp_path):
        p = tmp_path / "emb.csv"
        p.write_text("c0,base,0.0,1.0,2.0,3.0\nc1,base,4.0,5.0,6.0\n")
        with pytest.raises(ValueError, match="expected 4"):
            load_embeddings(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "emb.csv"
        p.write_text("")
        with pytest.raises(ValueError, match="no records"):
            load_embeddings(p)

    def test_truncated_binary_rejected(self, tmp_path):
        store = make_store()
        path = tmp_path / "emb.bin"
        save_embeddings(store, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(ValueError, match="truncated"):
            load_embeddings(path)

    def test_kb_validation(self, tmp_path):
        store = make_store(n_classes=2)
        path = tmp_path / "emb.bin"
        save_embeddings(store, path)
        kb = kb_for([[1], [0]], base=("c0",))
        with pytest.raises(ValueError, match="base"):
            load_embeddings(path, kb=kb)  # c1 records say base but c1 is novel


class TestSampleEpisode:
    def test_standard_benchmark_shape(self):
        store = make_store(n_per_class=20, n_classes=6, splits={f"c{i}": "novel-test" for i in range(6)})
        ep = sample_episode(store, 5, 1, 15, "novel-test", make_rng(3))
        assert ep.support_features.shape[0] == 5
        assert ep.query_features.shape[0] == 75
        assert ep.n_way == 5 and ep.k_shot == 1

    def test_degenerate_episode(self):
        store = make_store(n_per_class=2, n_classes=1)
        ep = sample_episode(store, 1, 1, 0, "base", make_rng(3))
        assert ep.support_features.shape == (1, store.dim)
        assert ep.query_features.shape == (0, store.dim)

    def test_insufficient_classes(self):
        store = make_store(n_classes=3)
        with pytest.raises(ValueError, match="need 5"):
            sample_episode(store, 5, 1, 1, "base", make_rng(0))

    def test_support_query_disjoint_and_split_pure(self):
        store = make_store(n_per_class=10, n_classes=4, splits={"c3": "novel-test"})
        for seed in range(20):
            ep = sample_episode(store, 3, 2, 3, "base", make_rng(seed))
            assert "c3" not in ep.classes
            sup = {tuple(f) for f in ep.support_features}
            qry = {tuple(f) for f in ep.query_features}
            assert not sup & qry

    def test_seed_reproducible(self):
        store = make_store(n_per_class=10, n_classes=4)
        a = sample_episode(store, 2, 3, 4, "base", make_rng(11))
        b = sample_episode(store, 2, 3, 4, "base", make_rng(11))
        assert a.classes == b.classes
        np.testing.assert_array_equal(a.support_features, b.support_features)
        np.testing.assert_array_equal(a.query_features, b.query_features)


class TestClassPrototype:
    def test_single_sample(self):
        v = np.array([1.0, -2.0])
        np.testing.assert_array_equal(class_prototype([v]), v)

    def test_two_point_mean(self):
        out = class_prototype([np.zeros(2), np.full(2, 2.0)])
        np.testing.assert_array_equal(out, np.ones(2))

    def test_statistical_accuracy(self):
        rng = make_rng(21)
        c = rng.standard_normal(5)
        samples = c + rng.standard_normal((100, 5))
        assert np.all(np.abs(class_prototype(samples) - c) < 0.3)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            class_prototype(np.empty((0, 3)))


class TestAttributeDistribution:
    def test_single_base_class_reduces_to_class_stats(self):
        rng = make_rng(2)
        feats = rng.standard_normal((6, 4))
        store = EmbeddingStore(feats, ["c0"] * 6, ["base"] * 6)
        kb = kb_for([[1]], base=("c0",))
        g = attribute_distribution(store, kb, "a0")
        np.testing.assert_allclose(g.mean, feats.mean(axis=0))
        np.testing.assert_allclose(g.std, feats.std(axis=0))

    def test_identical_samples_floor_std(self):
        feats = np.tile([1.0, 2.0, 3.0, 4.0], (3, 1))
        store = EmbeddingStore(feats, ["c0"] * 3, ["base"] * 3)
        kb = kb_for([[1]], base=("c0",))
        g = attribute_distribution(store, kb, "a0")
        assert np.all(g.std == STD_FLOOR)

    def test_two_singleton_classes_population_divisor(self):
        store = EmbeddingStore(np.array([[0.0], [2.0]]), ["c0", "c1"], ["base", "base"])
        kb = kb_for([[1], [1]], base=("c0", "c1"), dim=1)
        g = attribute_distribution(store, kb, "a0")
        assert g.mean[0] == pytest.approx(1.0)
        assert g.std[0] == pytest.approx(1.0)  # population form, divisor 2

    def test_membership_matches_brute_force(self):
        rng = make_rng(9)
        spec = SyntheticSpec(samples_per_class=8, dim=6)
        store, kb = generate_synthetic(spec, rng)
        col = 0
        attr = kb.attributes[col]
        rows = [
            store.features_of(c, "base")
            for c in kb.classes
            if c in kb.base_classes and kb.assoc[kb.class_index(c), col]
        ]
        rows = [r for r in rows if r.size]
        if rows:
            member = np.concatenate(rows)
            g = attribute_distribution(store, kb, attr)
            np.testing.assert_allclose(g.mean, member.mean(axis=0), atol=1e-12)

    def test_unseen_attribute_rejected(self):
        store = EmbeddingStore(np.array([[0.0], [2.0]]), ["c0", "c1"], ["base", "novel-test"])
        kb = kb_for([[0], [1]], base=("c0",), dim=1)
        with pytest.raises(ValueError, match="unseen"):
            attribute_distribution(store, kb, "a0")


class TestGenerateSynthetic:
    def test_noiseless_limit(self):
        spec = SyntheticSpec(
            samples_per_class=3,
            sample_noise_scale=1e-12,
            incompleteness_rate=0.0,
            dim=8,
        )
        store, kb = generate_synthetic(spec, make_rng(4))
        centers = class_centers(store)
        for c in kb.classes:
            feats = store.features_of(c)
            assert np.all(np.abs(feats - centers[c]) < 1e-9)

    def test_determinism(self):
        spec = SyntheticSpec(samples_per_class=5, dim=6)
        s1, kb1 = generate_synthetic(spec, make_rng(7))
        s2, kb2 = generate_synthetic(spec, make_rng(7))
        np.testing.assert_array_equal(s1.features, s2.features)
        assert kb1 == kb2

    def test_base_prototypes_near_true_centers(self):
        # Monte-Carlo: with no attribute dropout, the 50-sample class mean
        # stays within 0.2 * sample_noise_scale * sqrt(d) of the planted
        # center (dropout adds scatter the bound does not cover)
        spec = SyntheticSpec(
            n_base_classes=10, n_novel_classes=5, n_attributes=20,
            attrs_per_class=4, dim=32, samples_per_class=50,
            sample_noise_scale=0.5, incompleteness_rate=0.0,
        )
        bound = 0.2 * spec.sample_noise_scale * np.sqrt(spec.dim)
        for seed in range(20):
            store, kb = generate_synthetic(spec, make_rng(seed))
            for c in sorted(kb.base_classes):
                proto = class_prototype(store.features_of(c, "base"))
                assert np.linalg.norm(proto - store.true_centers[c]) < bound

    def test_unseen_attributes_planted(self):
        from protofuse.knowledge import split_attributes

        for seed in range(10):
            _, kb = generate_synthetic(SyntheticSpec(samples_per_class=2), make_rng(seed))
            split = split_attributes(kb)
            assert len(split.unseen) > 0
            used_by_novel = set()
            for c in kb.classes:
                if c not in kb.base_classes:
                    used_by_novel |= set(kb.attributes_of(c))
            assert set(split.unseen) & used_by_novel

    def test_semantics_correlate_with_latents(self):
        store, kb = generate_synthetic(SyntheticSpec(samples_per_class=2), make_rng(3))
        # semantic embeddings should be near-copies of attribute latents:
        # distinct attributes must stay distinguishable
        sems = np.stack([kb.sem_attr[a] for a in kb.attributes])
        gram = sems @ sems.T
        diag = np.diag(gram)
        off = gram - np.diag(diag)
        assert diag.min() > np.abs(off).max() * 0.5

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SyntheticSpec(dim=0)
        with pytest.raises(ValueError):
            SyntheticSpec(attrs_per_class=30, n_attributes=20)
        with pytest.raises(ValueError):
            SyntheticSpec(incompleteness_rate=1.5)
