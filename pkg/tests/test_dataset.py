import json
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ROUNDS
from decoy.core import DamageEvent, Equipment, HitGroup, RoundOutcome
from decoy.damage import DamageLaw, FeatureSchema
from decoy.dataset import (FIXTURE_LAW, Round, SynthSpec, align_damage, dumps_rounds, loads_rounds, parse_rounds,
                           random_pair_corpus, round_pair_rows, split, split_sizes, synth_rounds, write_law,
                           write_rounds)
from decoy.errors import ContractError, RoundFormatError


def tiny_round(rid=0, T=5, events=(), n=2):
    pos = np.zeros((n, T, 3))
    pos[:, :, 0] = np.arange(T)
    return Round(rid, "test_map", ["T", "CT"][:n] + ["T"] * (n - 2), pos, np.zeros((n, T)),
                 np.full((n, T), 100.0), [Equipment() for _ in range(n)], list(events),
                 RoundOutcome("CT", "time_expired", 9300))


def test_shipped_fixture_shape(rounds):
    assert len(rounds) == 3
    for r in rounds:
        assert r.n_agents == 10 and r.teams.count("T") == 5
        assert r.positions.shape == (10, r.length, 3)
        r.validate()


def test_round_trip_is_byte_identical(tmp_path):
    text = ROUNDS.read_text()
    assert dumps_rounds(loads_rounds(text)) == text
    write_rounds(tmp_path / "r.json", parse_rounds(ROUNDS))
    assert (tmp_path / "r.json").read_text() == text


def test_mismatched_round_is_skipped_with_diagnostic():
    doc = json.loads(ROUNDS.read_text())
    doc["rounds"][1]["agents"][3]["states"].pop()
    diag = []
    got = loads_rounds(json.dumps(doc), "bad.json", diag)
    assert [r.round_id for r in got] == [0, 2]
    assert len(diag) == 1 and "round #1" in diag[0] and "sample counts" in diag[0]


def test_format_errors():
    with pytest.raises(RoundFormatError, match="line"):
        loads_rounds("{not json")
    with pytest.raises(RoundFormatError, match="not a"):
        loads_rounds('{"format": "other"}')
    with pytest.raises(RoundFormatError, match="version"):
        loads_rounds('{"format": "decoy-rounds", "version": 7}')


def test_validate_rules():
    r = tiny_round()
    r.health[0, 3] = 100.0
    r.health[0, 2] = 50.0
    with pytest.raises(RoundFormatError, match="increases"):
        r.validate()
    long = tiny_round(T=312)
    with pytest.raises(RoundFormatError, match="exceed"):
        long.validate()
    long.bomb_events = [{"type": "plant", "t": 100.0}]
    long.validate()
    tiny_round(T=311).validate()


def test_alignment_merges_onto_nearest_sample():
    ev = [DamageEvent(0, 1, 10, HitGroup.Chest, 1.1), DamageEvent(0, 1, 15, HitGroup.Chest, 1.2),
          DamageEvent(0, 1, 5, HitGroup.Chest, 0.25), DamageEvent(0, 1, 7, HitGroup.Head, 1.1)]
    got = align_damage(tiny_round(events=ev)).damage_events
    assert [(e.t, e.hit_group.name, e.damage) for e in got] == [(0.0, "Chest", 5.0), (1.0, "Head", 7.0),
                                                                 (1.0, "Chest", 25.0)]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 5), st.floats(0.5, 100), st.floats(0, 2)),
                max_size=30))
def test_alignment_conserves_damage(rows):
    ev = [DamageEvent(a, 1 - a, d, HitGroup(g), t) for a, g, d, t in rows]
    got = align_damage(tiny_round(events=ev)).damage_events
    for a in (0, 1):
        total = sum(e.damage for e in ev if e.attacker == a)
        assert sum(e.damage for e in got if e.attacker == a) == pytest.approx(total)
    assert all(e.t * 2 == int(e.t * 2) for e in got)
    keys = [(e.t, e.attacker, e.victim, e.hit_group) for e in got]
    assert len(keys) == len(set(keys))


def test_split_sizes_and_disjointness():
    assert split_sizes(10) == (8, 1, 1) and split_sizes(25) == (20, 2, 3)
    rs = [tiny_round(i) for i in range(25)]
    tr, va, te = split(rs, seed=0)
    ids = [r.round_id for r in tr + va + te]
    assert (len(tr), len(va), len(te)) == (20, 2, 3) and sorted(ids) == list(range(25))
    assert [r.round_id for r in split(rs, seed=0)[0]] == [r.round_id for r in tr]
    with pytest.raises(ContractError):
        split(rs[:9], seed=0)


@pytest.fixture(scope="module")
def synth(level, graph):
    spec = SynthSpec(level, graph, FIXTURE_LAW, n_rounds=2)
    return spec, synth_rounds(spec, 3)


def test_synth_is_seeded(synth):
    spec, rs = synth
    assert dumps_rounds(rs) == dumps_rounds(synth_rounds(spec, 3))
    assert dumps_rounds(rs) != dumps_rounds(synth_rounds(spec, 4))


def test_synth_empty(level, graph):
    assert synth_rounds(SynthSpec(level, graph, n_rounds=0), 0) == []


def test_synth_rounds_are_valid_and_obey_law(synth, level):
    _, rs = synth
    for r in rs:
        r.validate()
        assert r.outcome.winner in ("T", "CT")
        for e in r.damage_events:
            k = int(round(e.t * r.tick_rate))
            dist = np.linalg.norm(r.positions[e.attacker, k] - r.positions[e.victim, k])
            assert dist <= FIXTURE_LAW.engage_range + 1e-6
            assert r.teams[e.attacker] != r.teams[e.victim]
            lo, hi = FIXTURE_LAW.damage_ranges[int(e.hit_group)]
            assert e.damage <= hi
            assert (e.hit_group == HitGroup.Head) == (dist <= FIXTURE_LAW.head_range)


def test_round_pair_rows_labels_match_events(synth, level):
    _, rs = synth
    schema = FeatureSchema.for_level(level)
    X, y, d, g = round_pair_rows(rs, schema, level)
    assert X.shape[1] == schema.dim and len(X) == len(y) == len(d) == len(g)
    n_events = sum(len(align_damage(r).damage_events) for r in rs)
    assert y.sum() == n_events
    assert np.all(d[y == 1] > 0)


def test_pair_corpus_noise_rate(level, graph):
    c = random_pair_corpus(level, graph, 4000, FIXTURE_LAW, seed=0, label_noise=0.05)
    rate = np.mean(c.labels != c.clean_labels)
    assert abs(rate - 0.05) < 3 * np.sqrt(0.05 * 0.95 / 4000)
    np.testing.assert_array_equal(c.clean_labels, c.distances <= FIXTURE_LAW.engage_range)
    sub = c.take(np.arange(10))
    assert len(sub) == 10


def test_write_law_directory(tmp_path, level):
    schema = FeatureSchema.for_level(level)
    write_law(tmp_path, FIXTURE_LAW, schema)
    assert DamageLaw.from_dict(json.loads((tmp_path / "law.json").read_text())) == FIXTURE_LAW
    assert FeatureSchema.from_json((tmp_path / "features.schema").read_text()) == schema
