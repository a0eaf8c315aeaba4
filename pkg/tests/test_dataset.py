import numpy as np
import pytest
from numpy.testing import assert_array_equal

from crpevi.adversary import AttackSpec
from crpevi.const import MODE_ADVERSARIAL_DYNAMICS, MODE_RANDOM_REWARD, TIMING_ON_THE_FLY, WELL_EXPLORED_PAIRS
from crpevi.dataset import OfflineDataset, collect, load_dataset, serialize_dataset
from crpevi.envs import Policy, build_tabular_mdp
from crpevi.errors import DatasetError, DatasetParseError, PolicyMismatchError


@pytest.fixture
def clean(linear_mdp, uniform_behavior):
    return collect(linear_mdp, uniform_behavior(linear_mdp.base), 20, seed=3)


@pytest.fixture
def saved(tmp_path, clean):
    prefix = str(tmp_path / "data")
    serialize_dataset(*clean, prefix)
    return prefix


def _rewrite(path, mutate):
    with open(path, encoding="utf-8") as f:
        lines = f.readlines()
    with open(path, "w", encoding="utf-8") as f:
        f.write("".join(mutate(lines)))


def test_clean_collection_layout(clean):
    ds, sidecar = clean
    assert len(ds) == 60
    assert ds.n == 20 and ds.H == 3
    assert_array_equal(ds.h[:6], [1, 2, 3, 1, 2, 3])
    assert_array_equal(ds.episode[:4], [0, 0, 0, 1])
    assert ds.is_chained()
    assert not sidecar.corrupted.any()
    assert_array_equal(sidecar.zeta, 0.0)
    assert_array_equal(sidecar.clean_r, ds.r)


def test_step_view_matches_records(clean):
    ds, _ = clean
    x, a, r, x_next = ds.step(2)
    rec = ds.records[4]
    assert (rec.episode, rec.h) == (1, 2)
    assert (x[1], a[1], r[1], x_next[1]) == (rec.x, rec.a, rec.r, rec.x_next)


def test_collection_is_seeded(linear_mdp, uniform_behavior):
    pi = uniform_behavior(linear_mdp.base)
    a, _ = collect(linear_mdp, pi, 20, seed=3)
    b, _ = collect(linear_mdp, pi, 20, seed=3)
    c, _ = collect(linear_mdp, pi, 20, seed=4)
    assert_array_equal(a.x, b.x)
    assert_array_equal(a.r, b.r)
    assert not (np.array_equal(a.x, c.x) and np.array_equal(a.a, c.a))


def test_records_are_immutable(clean):
    ds, _ = clean
    with pytest.raises(ValueError):
        ds.x[0] = 1


def test_clean_transitions_follow_the_kernel():
    mdp = build_tabular_mdp(S=3, A=2, H=2, seed=6)
    ds, _ = collect(mdp, Policy.uniform(2, 3, 2), 5000, seed=6)
    checked = 0
    for h in (1, 2):
        x, a, _, x_next = ds.step(h)
        for s in range(3):
            for action in range(2):
                hits = (x == s) & (a == action)
                if hits.sum() < WELL_EXPLORED_PAIRS:
                    continue
                freq = np.bincount(x_next[hits], minlength=3) / hits.sum()
                assert 0.5 * np.abs(freq - mdp.P[h - 1, s, action]).sum() <= 0.1
                checked += 1
    assert checked >= 2


def test_invalid_collection_arguments(linear_mdp, uniform_behavior):
    with pytest.raises(DatasetError):
        collect(linear_mdp, uniform_behavior(linear_mdp.base), 0, seed=0)
    with pytest.raises(PolicyMismatchError):
        collect(linear_mdp, Policy.uniform(2, 4, 2), 5, seed=0)


def test_column_lengths_are_checked():
    with pytest.raises(DatasetError):
        OfflineDataset(x=[0, 0], a=[0, 0], r=[0.0, 0.0], x_next=[0], n=1, H=2)


def test_saved_dataset_loads_back(saved, clean):
    ds, sidecar = clean
    loaded, loaded_sidecar = load_dataset(saved)
    assert_array_equal(loaded.x, ds.x)
    assert_array_equal(loaded.r, ds.r)
    assert_array_equal(loaded.x_next, ds.x_next)
    assert loaded.meta["mdp_sha256"] == ds.meta["mdp_sha256"]
    assert_array_equal(loaded_sidecar.clean_x_next, sidecar.clean_x_next)


def test_solver_view_hides_truth(saved):
    _, sidecar = load_dataset(saved, with_truth=False)
    assert sidecar is None


def test_truncated_last_line_is_reported(saved):
    _rewrite(saved + ".jsonl", lambda lines: lines[:-1] + [lines[-1].rstrip("\n")])
    with pytest.raises(DatasetParseError) as err:
        load_dataset(saved)
    assert err.value.line == 60
    assert "truncated" in str(err.value)


def test_malformed_json_names_line(saved):
    _rewrite(saved + ".jsonl", lambda lines: [lines[0], "{not json}\n"] + lines[2:])
    with pytest.raises(DatasetParseError) as err:
        load_dataset(saved)
    assert err.value.line == 2
    assert str(err.value).startswith(saved + ".jsonl:2:")


def test_out_of_order_records_are_rejected(saved):
    _rewrite(saved + ".jsonl", lambda lines: [lines[1], lines[0]] + lines[2:])
    with pytest.raises(DatasetParseError) as err:
        load_dataset(saved)
    assert err.value.line == 1


def test_missing_record_is_reported(saved):
    _rewrite(saved + ".jsonl", lambda lines: lines[:-1])
    with pytest.raises(DatasetParseError) as err:
        load_dataset(saved)
    assert err.value.line == 60


def test_on_the_fly_dynamics_attack_keeps_episodes_chained(linear_mdp, uniform_behavior):
    spec = AttackSpec(mode=MODE_ADVERSARIAL_DYNAMICS, c=0.3, eps=1.0, timing=TIMING_ON_THE_FLY, seed=3)
    ds, sidecar = collect(linear_mdp, uniform_behavior(linear_mdp.base), 20, seed=3, adversary=spec)
    assert ds.is_chained()
    assert sidecar.corrupted.sum() == spec.count(60)
    changed = ds.x_next != sidecar.clean_x_next
    assert not (changed & ~sidecar.corrupted).any()
    assert_array_equal(sidecar.zeta, changed.astype(float))
    assert ds.meta["adversary"]["mode"] == MODE_ADVERSARIAL_DYNAMICS


def test_post_hoc_attack_through_collect(linear_mdp, uniform_behavior):
    spec = AttackSpec(mode=MODE_RANDOM_REWARD, c=0.5, eps=0.2, seed=1)
    ds, sidecar = collect(linear_mdp, uniform_behavior(linear_mdp.base), 20, seed=3, adversary=spec)
    clean_ds, _ = collect(linear_mdp, uniform_behavior(linear_mdp.base), 20, seed=3)
    assert sidecar.corrupted.sum() == 30
    assert_array_equal(sidecar.clean_r, clean_ds.r)
    assert_array_equal(ds.r[~sidecar.corrupted], clean_ds.r[~sidecar.corrupted])
    assert (np.abs(ds.r[sidecar.corrupted]) <= 0.2).all()
