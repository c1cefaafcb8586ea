"""End-to-end acceptance checks, one per criterion.

Every check records a ``PASS``/``FAIL`` line with its measurement and
runtime; the lines are printed in pytest's terminal summary, or directly
when the file is run as a script (``python3 tests/test_acceptance.py``).
"""

import json
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from robustps import affinity, bounds, dataset, embed, gbm, pipeline, spectral, studies
from robustps.embed import EmbedParams
from robustps.fixtures import sampling_table_check
from robustps.gbm import BoostConfig
from robustps.pipeline import RunConfig

from conftest import random_dataset
from test_affinity import oracle_affinity
from test_embed import numeric_gradient
from test_gbm import exhaustive_best_gain, problem

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str, seconds: float) -> bool:
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.3f} s)"
    return ok


def test_1_sampling_table_reproduction():
    sampling_table_check()  # warm the fixture read
    t = time.perf_counter()
    chk = sampling_table_check(gamma=0.0)
    dt = time.perf_counter() - t
    worst = float(np.abs(chk.deltas).max())
    ok = chk.passed and dt < 1e-3
    assert record(1, ok, f"max |delta| {worst:.2e} (tol {chk.tolerance:g}), runtime < 1 ms: {dt < 1e-3}", dt)


def test_2_error_rate_bound():
    t = time.perf_counter()
    mc = bounds.monte_carlo(10_000, seed=0)
    rng = np.random.default_rng(1)
    dev = 0.0
    for _ in range(200):
        inst = bounds.random_instance(rng)
        same = bounds.BoundsInstance(inst.P, inst.P, inst.c)
        for k in range(same.d):
            if same.P[k].any():
                dev = max(dev, abs(bounds.error_rate_bound(same, k)[1] - 0.5))
    dt = time.perf_counter() - t
    held = 1 - mc["violations"] / mc["draws"]
    ok = mc["violations"] == 0 and dev <= 1e-12 and dt < 10
    detail = (f"bound held on {100 * held:.2f}% of {mc['draws']} instances "
              f"(max excess {mc['max_excess']:.3g}); |bound - 0.5| at P*=P {dev:.1e}")
    assert record(2, ok, detail, dt)


def test_3_clustering_recovery():
    t = time.perf_counter()
    aris = []
    for seed in range(10):
        data = dataset.synthesize(dataset.separated(1500), seed)
        aris.append(adjusted_rand_score(data.pattern, spectral.cluster(data, 3, seed=seed).labels))
    dt = time.perf_counter() - t
    ok = min(aris) >= 0.95 and dt < 30
    assert record(3, ok, f"min ARI {min(aris):.4f} over 10 seeds", dt)


def test_4_learner_correctness():
    t = time.perf_counter()
    worst_rise = -math.inf
    for seed in range(20):
        rng = np.random.default_rng(seed)
        data = random_dataset(seed, m=int(rng.integers(20, 200)), n_cont=int(rng.integers(1, 4)),
                              n_disc=int(rng.integers(0, 3)), d=int(rng.integers(2, 5)))
        hist = gbm.train(data, BoostConfig(num_classes=data.d, rounds=10)).history
        worst_rise = max(worst_rise, float(np.max(np.diff(hist))))
    fd_err = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 6))
        raw = rng.normal(scale=2, size=(1, d))
        Y = gbm.one_hot([int(rng.integers(d))], d)
        g, _ = gbm.gradients(Y, gbm.softprob(raw))
        for k in range(d):
            e = np.zeros_like(raw)
            e[0, k] = 1e-6
            num = (gbm.mlogloss(Y, gbm.softprob(raw + e)) - gbm.mlogloss(Y, gbm.softprob(raw - e))) / 2e-6
            fd_err = max(fd_err, abs(num - g[0, k]) / max(abs(g[0, k]), 1e-3))
    split_bad = 0
    for seed in range(300):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(2, 13))
        n_cont = int(rng.integers(0, 4))
        n_disc = int(rng.integers(0, 4 - n_cont)) if n_cont < 3 else 0
        if n_cont + n_disc == 0:
            n_cont = 1
        X, g, h = problem(seed, m, n_cont, n_disc, n_cat=int(rng.integers(2, 6)))
        cfg = BoostConfig(min_child_weight=0.0, reg_lambda=float(rng.uniform(0, 2)) + 1e-3,
                          reg_alpha=float(rng.choice([0.0, 0.05])))
        s = gbm.best_split(X, g, h, np.arange(m), cfg)
        best = max(exhaustive_best_gain(X, g, h, cfg), 0.0)
        found = max(s.gain, 0.0) if s is not None else 0.0
        split_bad += not math.isclose(found, best, rel_tol=1e-10, abs_tol=1e-12)
    dt = time.perf_counter() - t
    ok = worst_rise <= 1e-9 and fd_err <= 1e-6 and split_bad == 0
    detail = (f"max per-round loss change {worst_rise:.2e}; FD rel err {fd_err:.1e}; "
              f"split mismatches {split_bad}/300")
    assert record(4, ok, detail, dt)


def test_5_processed_subset_beats_raw_baseline():
    t = time.perf_counter()
    res = studies.robustness_study(seeds=range(5))
    dt = time.perf_counter() - t
    wins = {rate: res.wins(rate) for rate in (0.1, 0.2, 0.4)}
    ok = wins[0.2] >= 4 and wins[0.4] >= 4 and dt < 300
    for line in res.lines():
        print(line)
    detail = ", ".join(f"eps {r}: {w}/6" for r, w in wins.items()) + " covariates with processed SB <= raw"
    assert record(5, ok, detail, dt)


def test_6_embedding_contract():
    t = time.perf_counter()
    mass = sym = perp = 0.0
    kl_ok = True
    for seed in range(5):
        data = random_dataset(seed, m=60, n_cont=3, n_disc=2)
        D = embed.mixed_distance(data)
        C = embed.conditional_p(D, 15)
        P = embed.symmetrize(C)
        sym = max(sym, float(np.abs(P - P.T).max()))
        mass = max(mass, abs(P.sum() - 1))
        perp = max(perp, float(np.abs(embed.row_perplexity(C) - 15).max()))
        e = embed.run_embedding(D, EmbedParams(perplexity=15, iterations=300, seed=seed))
        kl_ok &= e.final_kl < e.initial_kl
    grad = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(10, 4))
        P = embed.symmetrize(embed.conditional_p(np.sqrt(affinity.squared_distances(X)), 3.0))
        Y = rng.normal(size=(10, 2))
        N = numeric_gradient(P, Y, "student_t")
        grad = max(grad, float(np.linalg.norm(embed.kl_gradient(P, Y) - N) / np.linalg.norm(N)))
    dt = time.perf_counter() - t
    ok = sym == 0 and mass <= 1e-10 and perp < 1e-3 and kl_ok and grad <= 1e-4
    detail = (f"asym {sym:.1e}; |mass-1| {mass:.1e}; perplexity err {perp:.1e}; "
              f"KL decreased {kl_ok}; gradient rel err {grad:.1e}")
    assert record(6, ok, detail, dt)


def test_7_affinity_properties():
    t = time.perf_counter()
    worst = -math.inf
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        data = random_dataset(1000 + seed, m=int(rng.integers(5, 51)), n_cont=int(rng.integers(1, 5)),
                              n_disc=int(rng.integers(0, 4)), n_cat=int(rng.integers(2, 6)))
        ev = np.linalg.eigvalsh(affinity.build_affinity(data).values)
        worst = max(worst, -ev[0] / ev[-1])
    exact = 0
    for seed in range(12):
        rng = np.random.default_rng(seed)
        data = random_dataset(seed, m=int(rng.integers(3, 21)), n_cont=int(rng.integers(0, 4)),
                              n_disc=int(rng.integers(1, 4)))
        A = affinity.build_affinity(data)
        exact += np.array_equal(A.values, oracle_affinity(data, A.sigma if A.sigma is not None else 1.0))
    dt = time.perf_counter() - t
    ok = worst <= 1e-8 and exact == 12
    assert record(7, ok, f"max -lambda_min/lambda_max {worst:.1e}; exact matches {exact}/12", dt)


def test_8_pipeline_determinism():
    cfg_path = Path(__file__).resolve().parents[1] / "scripts" / "configs" / "synthetic.json"
    t = time.perf_counter()
    hashes = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            cfg = RunConfig.load(cfg_path)
            pipeline.cmd_pipeline(cfg, out=Path(tmp) / f"run{k}")
            hashes.append(json.loads((Path(tmp) / f"run{k}" / "manifest.json").read_text())["artifacts"])
    dt = time.perf_counter() - t
    ok = hashes[0] == hashes[1] and len(hashes[0]) > 0
    assert record(8, ok, f"{len(hashes[0])} artifacts, identical hashes {hashes[0] == hashes[1]}", dt)


if __name__ == "__main__":
    import sys
    for name, fn in sorted((k, v) for k, v in list(globals().items()) if k.startswith("test_")):
        try:
            fn()
        except AssertionError:
            pass
    for n in sorted(RESULTS):
        print(RESULTS[n])
    sys.exit(0 if all("PASS" in line for line in RESULTS.values()) else 1)
