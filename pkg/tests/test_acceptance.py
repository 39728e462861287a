"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line."""
import contextlib
import json
import time

import numpy as np
import pytest

import conftest
from conftest import MAP
from decoy.cli import run
from decoy.damage import (DamageLaw, DipConfig, DipModel, DogConfig, DogModel, ModelBundle, dip_train, dog_train,
                          train_regression_baseline)
from decoy.dataset import FIXTURE_LAW, SynthSpec, parse_rounds, random_pair_corpus, synth_rounds
from decoy.engine import Env, SpeedReport, benchmark, random_walk_actions, run_round
from decoy.geometry import load_level
from decoy.metrics import dtw, frechet, roc_auc, wasserstein1d
from decoy.replay import replay_round
from decoy.waypoints import WaypointGraph, build_graph, nearest_waypoint, scc_labels, shortest_path, sweep_edge
from oracles import brute_dtw, brute_frechet, cdf_w1, enumerate_best_path, numeric_grad, rel_error, scan_nearest
from test_engine import REFERENCE_SPEED_ROWS
from test_waypoints import random_graph

HIT_MODES = np.array([100.0, 20.0])  # centers of the Head and Leg damage ranges of the default law


@contextlib.contextmanager
def criterion(name, budget):
    """Time the block, then record and print one PASS/FAIL line."""
    info = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        took = time.perf_counter() - t0
        if took > budget:
            ok = False
            info["budget"] = f"exceeded {budget} s"
        detail = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items())
        line = f"{'PASS' if ok else 'FAIL'}  {name}  [{took:.1f} s]  {detail}"
        conftest.ACCEPTANCE_LINES.append(line)
        print(line)
    assert took <= budget, f"{name} took {took:.1f} s"


def test_waypoint_guarantees():
    with criterion("waypoint guarantees", 60) as info:
        level = load_level(MAP)
        g = build_graph(level)
        _, sizes = scc_labels(g)
        bad = [e for e in g.edges() if sweep_edge(level, g.positions[e.src], g.positions[e.dst]) is None]
        info.update(nodes=g.n_nodes, edges=g.n_edges, components=len(sizes), min_out=int(g.out_degrees().min()),
                    unverified=len(bad))
        assert len(sizes) == 1
        assert g.out_degrees().min() >= 1
        assert not bad


def test_metric_oracle_equivalence():
    rng = np.random.default_rng(2024)
    worst = {"dtw": 0.0, "frechet": 0.0, "w1": 0.0}
    with criterion("metric-oracle equivalence", 60) as info:
        for _ in range(500):
            a = rng.normal(0, 10, (int(rng.integers(1, 6)), 2))
            b = rng.normal(0, 10, (int(rng.integers(1, 6)), 2))
            worst["dtw"] = max(worst["dtw"], abs(dtw(a, b) - brute_dtw(a, b)))
            worst["frechet"] = max(worst["frechet"], abs(frechet(a, b) - brute_frechet(a, b)))
            p = rng.normal(50, 20, int(rng.integers(1, 30)))
            q = rng.normal(50, 20, int(rng.integers(1, 30)))
            worst["w1"] = max(worst["w1"], abs(wasserstein1d(p, q) - cdf_w1(p, q)))
        path_mismatch = 0
        for _ in range(500):
            n = int(rng.integers(2, 8))
            g = random_graph(rng, n)
            s, t = int(rng.integers(n)), int(rng.integers(n))
            best = enumerate_best_path(n, [(e.src, e.dst, e.frames) for e in g.edges()], s, t)
            if best is None:
                with pytest.raises(Exception):
                    shortest_path(g, s, t)
                continue
            path = shortest_path(g, s, t)
            path_mismatch += (g.path_cost(path), path) != best
        near_mismatch = 0
        for _ in range(500):
            n = int(rng.integers(1, 40))
            pos = np.round(rng.uniform(0, 5, (n, 3)), 1)  # coarse grid forces ties
            g = WaypointGraph(0.7, pos, [])
            p = np.round(rng.uniform(-1, 6, 3), 1)
            near_mismatch += nearest_waypoint(g, p) != scan_nearest(pos, p)
        info.update(**{f"max_err_{k}": v for k, v in worst.items()}, path_mismatch=path_mismatch,
                    nearest_mismatch=near_mismatch)
        assert max(worst.values()) <= 1e-9
        assert path_mismatch == 0 and near_mismatch == 0


def _randomize(params, rng):
    # zero biases put whole layers on the relu kink; move every parameter off it
    for p in params:
        p += rng.normal(0, 0.3, p.shape)


def test_gradient_correctness():
    rng = np.random.default_rng(77)
    worst_dip = worst_dog = 0.0
    with criterion("gradient correctness", 120) as info:
        for _ in range(50):
            dim = int(rng.integers(3, 8))
            dip = DipModel.init(dim, DipConfig(encoder_hidden=(int(rng.integers(3, 7)),),
                                               cond_dim=int(rng.integers(2, 5))), rng)
            _randomize(dip.params(), rng)
            X, y = rng.normal(size=(8, dim)), rng.integers(0, 2, 8)
            _, grads = dip.loss_and_grads(X, y)
            num = numeric_grad(lambda: dip.loss_and_grads(X, y)[0], dip.params())
            worst_dip = max(worst_dip, max(rel_error(a, b) for a, b in zip(grads, num)))

            cfg = DogConfig(encoder_hidden=(int(rng.integers(3, 6)),), cond_dim=3, embed_dim=3,
                            latent_dim=int(rng.integers(1, 4)), vae_hidden=(4,), decoder_hidden=(5,),
                            lambda_d=float(rng.uniform(0.2, 2)), lambda_g=float(rng.uniform(0.2, 2)),
                            lambda_kl=float(rng.uniform(0.01, 1)))
            dog = DogModel.init(dim, cfg, rng)
            _randomize(dog.params(), rng)
            d, g = rng.uniform(1, 120, 8), rng.integers(0, 6, 8)
            eps = rng.standard_normal((8, dog.latent_dim))
            w = float(rng.uniform(0, 1))
            _, _, grads = dog.loss_terms(X, d, g, eps, w)
            num = numeric_grad(lambda: dog.loss_terms(X, d, g, eps, w)[0], dog.params())
            worst_dog = max(worst_dog, max(rel_error(a, b) for a, b in zip(grads, num)))
        info.update(worst_dip=worst_dip, worst_dog=worst_dog)
        assert worst_dip <= 1e-3 and worst_dog <= 1e-3


def test_simulator_determinism_and_speed(level, graph, schema):
    with criterion("simulator determinism and speed", 600) as info:
        logs = []
        for _ in range(2):
            env = Env(level, graph, ModelBundle.from_law(FIXTURE_LAW, schema))
            rng = np.random.default_rng(99)
            run_round(env, lambda e: random_walk_actions(e, rng), 99)
            logs.append(env.log_jsonl())
        reports = [benchmark(level, graph, n, 10_000, seed=0) for n in (2, 6, 10, 20)]
        tps = [r.ticks_per_sec for r in reports]
        scale10 = reports[2].time_scale
        info.update(identical_logs=logs[0] == logs[1], ticks_per_sec=[round(x) for x in tps], time_scale_10=scale10)
        assert logs[0] == logs[1] and len(logs[0]) > 0
        assert all(a > b for a, b in zip(tps, tps[1:]))
        assert scale10 > 1


def test_speed_report_identities():
    with criterion("SpeedReport identities", 5) as info:
        worst = 0.0
        for n, ticks, dec, wall, phys, tps, scale in REFERENCE_SPEED_ROWS:
            r = SpeedReport.from_counts(n, ticks, dec, wall)
            assert round(r.physics_time, 2) == phys
            # the printed wall time is rounded to 2 decimals; carry that uncertainty into both ratios
            assert ticks / (wall + 0.005) - 0.005 <= tps <= ticks / (wall - 0.005) + 0.005
            assert phys / (wall + 0.005) - 0.005 <= scale <= phys / (wall - 0.005) + 0.005
            assert r.ticks_per_sec == pytest.approx(ticks / wall) and r.time_scale == pytest.approx(ticks / 60 / wall)
            worst = max(worst, abs(r.time_scale - scale))
        info.update(rows=len(REFERENCE_SPEED_ROWS), max_time_scale_gap=worst)


def test_replay_self_consistency(level, graph, rounds):
    with criterion("replay self-consistency", 300) as info:
        extra = synth_rounds(SynthSpec(level, graph, FIXTURE_LAW, n_rounds=3), 21)
        devs, dtw_ok, n_agents = [], True, 0
        for rnd in list(rounds) + extra:
            rep = replay_round(level, graph, rnd, "movement")
            for i in range(rnd.n_agents):
                alive = rnd.health[i] > 0
                a, b = rnd.positions[i, alive, :2], rep.positions[i, alive, :2]
                pointwise = np.linalg.norm(a - b, axis=1)
                devs.extend(pointwise)
                # DTW may not exceed the cost of the one-to-one alignment of equal-length series
                dtw_ok &= dtw(a, b) <= pointwise.sum() + 1e-9
                n_agents += 1
        mean_dev = float(np.mean(devs))
        info.update(agents=n_agents, mean_euclidean_m=mean_dev, dtw_within_bound=bool(dtw_ok))
        assert mean_dev <= 0.7 and dtw_ok


def grid_f1(scores, labels, grid):
    """F1 of ``score > t`` for every t in ``grid``, in one broadcast."""
    pred = scores[None, :] > grid[:, None]
    y = labels.astype(bool)[None, :]
    tp = (pred & y).sum(1)
    return 2 * tp / (pred.sum(1) + y.sum())


def test_dip_desk_scale_learning(level, graph):
    with criterion("DIP desk-scale learning", 300) as info:
        c = random_pair_corpus(level, graph, 20000, DamageLaw(), 0, label_noise=0.05)
        tr, va = c.take(slice(0, 16000)), c.take(slice(16000, None))
        model, metrics = dip_train((tr.features, tr.labels), (va.features, va.labels), DipConfig(), 0)
        p = model.predict_proba(va.features)
        auc_clean = roc_auc(p, va.clean_labels)
        auc_noisy = roc_auc(p, va.labels)
        bayes_noisy = roc_auc(va.clean_labels.astype(float), va.labels)
        grid = np.linspace(0, 1, 1001)
        f1s = grid_f1(p, va.labels, grid)
        best = f1s.max()
        f1_gap = best - grid_f1(p, va.labels, np.array([model.threshold]))[0]
        t_gap = float(np.min(np.abs(grid[f1s >= best - 1e-12] - model.threshold)))
        info.update(auc_clean=auc_clean, auc_noisy=auc_noisy, bayes_noisy=bayes_noisy, threshold=model.threshold,
                    f1_gap=f1_gap, threshold_gap=t_gap)
        assert auc_clean >= 0.95
        assert auc_noisy >= bayes_noisy - 0.01
        assert f1_gap <= 0.01 and t_gap <= 0.01


def test_dog_joint_distribution_fidelity(level, graph):
    with criterion("DOG joint-distribution fidelity", 600) as info:
        c = random_pair_corpus(level, graph, 6000, DamageLaw(), 1)
        tr, va = c.take(slice(0, 5000)), c.take(slice(5000, None))
        model, metrics = dog_train((tr.features, tr.damage, tr.hit_group), (va.features, va.damage, va.hit_group),
                                   DogConfig(), 0)
        d, g = model.generate(va.features, np.random.default_rng(0))
        w1 = {k: wasserstein1d(d[g == k], va.damage[va.hit_group == k]) for k in np.unique(va.hit_group)}
        dog_modes = float(np.mean(np.abs(d[:, None] - HIT_MODES).min(1) <= 10))
        base = train_regression_baseline((tr.features, tr.damage), DogConfig(), 0)
        base_modes = float(np.mean(np.abs(base.predict(va.features)[:, None] - HIT_MODES).min(1) <= 10))
        info.update(w1_max=max(w1.values()), hit_group_accuracy=metrics["hit_group_accuracy"],
                    dog_mode_fraction=dog_modes, baseline_mode_fraction=base_modes)
        assert max(w1.values()) <= 10
        assert metrics["hit_group_accuracy"] >= 0.95
        assert dog_modes >= 0.8 and base_modes < 0.5


def test_end_to_end_pipeline(tmp_path, capsys):
    with criterion("end-to-end pipeline smoke", 600) as info:
        data, models, rep = tmp_path / "data", tmp_path / "models", tmp_path / "rep"
        # a deterministic law, so replay rng draws cannot change what a shot does
        (tmp_path / "law.json").write_text(json.dumps(FIXTURE_LAW.to_dict()))
        assert run(["synth", "--rounds", "10", "--seed", "5", "--law", str(tmp_path / "law.json"),
                    "--out", str(data)]) == 0
        train = ["--data", str(data), "--epochs", "2", "--out", str(models)]
        assert run(["train-dip", *train]) == 0 and run(["train-dog", *train]) == 0
        # oracle substitution: the law that generated the data resolves damage in the replay
        assert run(["replay", "--round", str(data), "--mode", "full", "--models", str(data / "law"),
                    "--out", str(rep)]) == 0
        assert run(["eval", "--original", str(data), "--replayed", str(rep),
                    "--report", str(tmp_path / "report.json")]) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        agreement = report["scalars"]["outcome_agreement"]
        info.update(rounds=len(parse_rounds(data / "rounds.json")), outcome_agreement=agreement,
                    trained=(models / "dip.model").exists() and (models / "dog.model").exists())
        assert agreement == 1.0
        assert (models / "dip.model").exists() and (models / "dog.model").exists()
