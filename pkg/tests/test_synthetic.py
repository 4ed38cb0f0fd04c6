import hashlib
import itertools

import numpy as np
import pytest

from compvqa import checkpoint
from compvqa.errors import ConfigError
from compvqa.synthetic import DEFAULT_GROUPS, TEMPLATES, SynthConfig, choose_combos, gen_synthetic, generate


def small(**kw):
    base = dict(n_base_combos=12, n_novel_combos=4, examples_per_base=40, novel_pool=10, val_per_base=2,
                val_per_novel=3, shots=(1, 5), d_obj=8, n_objects=4, seed=5)
    base.update(kw)
    return SynthConfig(**base)


def digest_dir(path):
    h = hashlib.sha256()
    for f in sorted(path.iterdir()):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def test_default_groups_shape():
    assert [len(v) for v in DEFAULT_GROUPS.values()] == [5, 8, 4]
    assert len(TEMPLATES) <= 50


def test_split_membership_and_counts():
    splits, features, m = generate(small())
    assert len(m.base) == 12 and len(m.novel) == 4
    assert not set(m.base) & set(m.novel)
    assert len(splits["train_base"]) == 12 * 40 and len(splits["val_novel"]) == 4 * 3
    assert all(m.counts[a] == 40 for a in m.base) and all(m.counts[a] == 10 for a in m.novel)
    assert set(m.shots) == {"1", "5"} and all(len(v) == 5 for v in m.shots["5"].values())
    for r in splits["train_base"][:5]:
        assert features[r.image_id].shape == (4, 8) and features[r.image_id].dtype == np.float32


def test_every_novel_attribute_appears_in_a_base_combo():
    cfg = SynthConfig(groups={"action": DEFAULT_GROUPS["action"], "object": DEFAULT_GROUPS["object"]},
                      n_base_combos=30, n_novel_combos=10, examples_per_base=40, novel_pool=10,
                      val_per_base=1, val_per_novel=1, shots=(1,), n_objects=3, d_obj=4, seed=11)
    _, _, m = generate(cfg)
    base_attrs = {u for a in m.base for u in a.split()}
    for answer in m.novel:
        assert set(answer.split()) <= base_attrs


def test_unseen_novel_attribute_is_config_error():
    cfg = small(base_combos=[["riding", "horse", "red"]], novel_combos=[["riding", "elephant", "red"]])
    with pytest.raises(ConfigError, match="elephant"):
        choose_combos(cfg, np.random.default_rng(0))


def test_zero_noise_gives_identical_prototypes():
    splits, features, _ = generate(small(noise=0.0))
    by_answer = {}
    for r in splits["train_base"]:
        by_answer.setdefault(r.answers[0][0], []).append(np.sort(features[r.image_id], axis=0))
    a, b = next(iter(by_answer.values()))[:2]
    # same combination: identical slot contents up to slot placement
    np.testing.assert_array_equal(a, b)


def test_each_attribute_occupies_its_own_slot():
    cfg = small(noise=0.0)
    splits, features, _ = generate(cfg)
    for r in splits["train_base"][:20]:
        f = features[r.image_id]
        assert int((np.abs(f).sum(axis=1) > 0).sum()) == len(cfg.groups)


def test_same_seed_gives_byte_identical_files(tmp_path):
    gen_synthetic(small(), tmp_path / "a")
    gen_synthetic(small(), tmp_path / "b")
    assert digest_dir(tmp_path / "a") == digest_dir(tmp_path / "b")
    gen_synthetic(small(seed=6), tmp_path / "c")
    assert digest_dir(tmp_path / "a") != digest_dir(tmp_path / "c")


def test_written_files(tmp_path):
    gen_synthetic(small(), tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"train_base.jsonl", "train_novel.jsonl", "val_base.jsonl", "val_novel.jsonl",
                     "features.cvqa", "manifest.json", "synth.json"}
    feats = checkpoint.load(tmp_path / "features.cvqa")
    assert len(feats) == 12 * 40 + 4 * 10 + 12 * 2 + 4 * 3


@pytest.mark.parametrize("kw", [dict(n_objects=2), dict(examples_per_base=39), dict(novel_pool=40),
                                dict(novel_pool=9), dict(noise=-1.0), dict(n_base_combos=200)])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        generate(small(**kw))


def test_combos_are_distinct_products():
    base, novel = choose_combos(small(), np.random.default_rng(0))
    universe = set(itertools.product(*DEFAULT_GROUPS.values()))
    assert len(set(base) | set(novel)) == 16 and set(base) | set(novel) <= universe
