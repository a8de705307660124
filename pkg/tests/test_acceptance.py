"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Lines are collected and repeated in the terminal summary under
"acceptance criteria".
"""

import functools
import json
import math
import os
import time

import numpy as np

from logq.cli import main as cli_main
from logq.data import leave_one_out_split
from logq.evaluation import evaluate, ndcg_at_k, recall_at_k
from logq.losses import CorrectionMode, LossInput, estimate_p_pos, full_softmax_loss, logq_original_loss, logq_standard_loss
from logq.model import TwoTowerModel
from logq.oracle import audit_estimator, finite_diff_check, full_softmax_coeffs_oracle, popularity_aligned_scores, zipf_proposal
from logq.sketch import audit_sketch
from logq.synth import SynthConfig, synth_interactions
from logq.train import TrainConfig, train

from conftest import ACCEPTANCE_LINES

# Directional training runs: in-batch sampler with a batch large enough
# that the deduplicated pool carries most of the catalog's mass.
RUN_CONFIG = dict(sampler="in_batch", n_negatives=256, batch_size=2048, learning_rate=1e-2,
                  epochs=10, patience=3, dim=32)
SEEDS = range(5)


def report(number, name, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {name} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


@functools.lru_cache(maxsize=None)
def synth_split(seed):
    return leave_one_out_split(synth_interactions(SynthConfig(seed=seed)))


@functools.lru_cache(maxsize=None)
def trained_recall(seed, mode, q_source="exact"):
    t = time.perf_counter()
    model, _ = train(synth_split(seed), TrainConfig(loss_mode=mode, seed=seed, q_source=q_source,
                                                   **RUN_CONFIG))
    recall = evaluate(model, synth_split(seed), (20,))["recall@20"]
    return recall, time.perf_counter() - t


def skewed_instance(size, seed=0):
    q = zipf_proposal(size, 1.0)
    return popularity_aligned_scores(q, np.random.default_rng(seed)), q


def test_c1_gradient_faithfulness():
    rng = np.random.default_rng(1)
    t = time.perf_counter()
    worst = {}
    for mode in CorrectionMode:
        errs = []
        for k in range(1000):
            n = (1, 8, 256)[k % 3]
            inp = LossInput(rng.normal(scale=2), rng.normal(scale=2, size=n),
                            np.log(rng.dirichlet(np.ones(n + 1))[:n]),
                            float(np.log(rng.uniform(1e-3, 0.5))))
            errs.append(finite_diff_check(mode, inp))
        worst[mode.value] = max(errs)
    elapsed = time.perf_counter() - t
    ok = max(worst.values()) < 1e-6 and elapsed < 60
    detail = f"max rel err {max(worst.values()):.2e} (tol 1e-6), {elapsed:.1f}s (limit 60s)"
    assert report(1, "finite differences vs coefficients", ok, detail), worst


def test_c2_standard_equals_scaled_original():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 65))
        inp = LossInput(rng.normal(scale=3), rng.normal(scale=3, size=n),
                        np.log(rng.dirichlet(np.ones(n + 1))[:n]), float(np.log(rng.uniform(1e-4, 1))))
        std, orig = logq_standard_loss(inp), logq_original_loss(inp)
        scale = 1.0 - std.aux["v_up"]
        worst = max(worst, abs(std.coeff_pos - scale * orig.coeff_pos),
                    float(np.max(np.abs(std.coeff_negs - scale * orig.coeff_negs))))
    assert report(2, "standard = (1 - v_up) x original", worst <= 1e-12,
                  f"max abs diff {worst:.2e} over 10000 instances (tol 1e-12)")


def test_c3_factorization():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(2000):
        size = int(rng.integers(2, 40))
        scores = rng.normal(scale=3, size=size)
        p = int(rng.integers(size))
        out = full_softmax_coeffs_oracle(scores, p)
        others = np.arange(size) != p
        worst = max(worst, float(np.max(np.abs(out.coeffs[others] - out.scale * out.conditional[others]))))
    assert report(3, "full softmax factorization", worst <= 1e-14,
                  f"max abs diff {worst:.2e} over 2000 catalogs (tol 1e-14)")


def test_c4_consistency():
    scores, q = skewed_instance(100)
    t = time.perf_counter()
    ok, parts = True, []
    for mode in ("standard_logq", "improved"):
        reps = [audit_estimator(scores, 0, q, mode, n, 100_000, np.random.default_rng(40 + n))
                for n in (10, 50, 250)]
        for a, b in zip(reps, reps[1:]):
            slack = 3 * math.hypot(a.standard_error, b.standard_error)
            ok &= b.bias_l2 < a.bias_l2 + slack
        parts.append(mode + " " + "/".join(f"{r.bias_l2:.4f}" for r in reps))
    elapsed = time.perf_counter() - t
    ok &= elapsed < 300
    assert report(4, "bias decreases with n", ok,
                  f"bias_l2 at n=10/50/250: {'; '.join(parts)}; {elapsed:.1f}s (limit 300s)")


def test_c5_bias_ordering():
    scores, q = skewed_instance(50)
    t = time.perf_counter()
    r = {m: audit_estimator(scores, 0, q, m, 5, 100_000, np.random.default_rng(5))
         for m in ("none", "standard_logq", "improved")}
    elapsed = time.perf_counter() - t
    b = {m: x.bias_l2 for m, x in r.items()}
    gap1 = 3 * math.hypot(r["improved"].standard_error, r["standard_logq"].standard_error)
    gap2 = 3 * math.hypot(r["standard_logq"].standard_error, r["none"].standard_error)
    ok = (b["standard_logq"] - b["improved"] >= gap1 and b["none"] - b["standard_logq"] >= gap2
          and elapsed < 300)
    detail = (f"improved {b['improved']:.4f} < standard {b['standard_logq']:.4f} < none "
              f"{b['none']:.4f}, 3SE gaps {gap1:.4f}/{gap2:.4f}, {elapsed:.1f}s")
    assert report(5, "bias ordering", ok, detail)


def test_c6_p_hat():
    worst_sym = 0.0
    for size in (2, 3, 10, 50, 1000):
        for n in (1, 2, 7, 100, 5000):
            inp = LossInput(0.4, np.full(n, 0.4), np.full(n, -math.log(size - 1)))
            worst_sym = max(worst_sym, abs(estimate_p_pos(inp) * size - 1.0))
    rng = np.random.default_rng(6)
    errs, zs = [], []
    for _ in range(200):
        s = rng.normal(size=20)
        p = int(rng.integers(20))
        exact = full_softmax_loss(s, p).aux["p_pos"]
        draws = rng.choice(np.delete(np.arange(20), p), size=10_000)
        p_hat = estimate_p_pos(LossInput(s[p], s[draws], np.full(10_000, -math.log(19))))
        x = np.exp(s[draws]) * 19
        se = (1 - exact) * x.std() / (math.sqrt(len(x)) * x.mean())
        errs.append(abs(p_hat / exact - 1))
        zs.append(errs[-1] / se)
    median = float(np.median(errs))
    ok = worst_sym <= 1e-14 and median < 0.01 and max(zs) < 4
    detail = (f"symmetric rel err {worst_sym:.1e}; MC median rel err {median:.4f} (tol 0.01), "
              f"{np.mean(np.array(errs) < 0.01):.0%} within 1%, max |z| {max(zs):.2f} (tol 4)")
    assert report(6, "P-hat exactness and accuracy", ok, detail)


def test_c7_sketch():
    rng = np.random.default_rng(7)
    ranks = np.arange(1, 5001, dtype=np.float64)
    zipf = 1 / ranks
    stream = rng.choice(5000, size=100_000, p=zipf / zipf.sum())
    under, exceed = 0, []
    for seed in range(100):
        _, true, est, total = audit_sketch(stream, 2048, 5, seed)
        under += int(np.sum(est < true))
        exceed.append(np.mean(est - true > math.e / 2048 * total))
    for seed in range(20):
        other = rng.integers(0, 10**6, size=20_000)
        _, true, est, _ = audit_sketch(other, 256, 3, seed)
        under += int(np.sum(est < true))
    rate = float(np.mean(exceed))
    exact, _ = trained_recall(0, "improved")
    sketch, _ = trained_recall(0, "improved", "sketch")
    gap = abs(exact - sketch)
    ok = under == 0 and rate <= math.exp(-5) and gap < 0.005
    detail = (f"underestimates {under}; P[err > eN/w] {rate:.2e} (tol {math.exp(-5):.2e}); "
              f"recall@20 exact {exact:.4f} vs sketch {sketch:.4f}, gap {gap:.4f} (tol 0.005)")
    assert report(7, "count-min sketch", ok, detail)


def test_c8_directional_training():
    res = {m: [trained_recall(s, m) for s in SEEDS] for m in ("none", "standard_logq", "improved")}
    mean = {m: float(np.mean([r for r, _ in v])) for m, v in res.items()}
    elapsed = sum(t for v in res.values() for _, t in v)
    ok = (mean["none"] < mean["standard_logq"] and mean["improved"] >= mean["standard_logq"] - 0.005
          and elapsed < 1800)
    detail = (f"mean test recall@20 over 5 seeds: none {mean['none']:.4f}, standard "
              f"{mean['standard_logq']:.4f}, improved {mean['improved']:.4f}; {elapsed:.0f}s (limit 1800s)")
    assert report(8, "uncorrected < standard, improved >= standard - 0.005", ok, detail)


def test_c9_metric_identities():
    split = synth_split(0)
    model = TwoTowerModel.init(split.num_users, split.num_items, 32, np.random.default_rng(9))
    rep = evaluate(model, split, (20,), mask_seen=False)
    p = 20 / split.num_items
    sigma = math.sqrt(p * (1 - p) / rep.num_eval_points)
    dev = abs(rep["recall@20"] - p)
    ok = (ndcg_at_k(1, 20) == 1.0 and recall_at_k(1, 20) == 1.0
          and abs(ndcg_at_k(2, 2) - 1 / math.log2(3)) < 1e-15 and dev < 3 * sigma)
    detail = (f"ndcg(rank 2) {ndcg_at_k(2, 2):.5f}; random recall@20 {rep['recall@20']:.4f} vs "
              f"{p:.4f} (3 sigma {3 * sigma:.4f})")
    assert report(9, "metric identities", ok, detail)


def test_c10_replay_determinism(tmp_path):
    def run(argv):
        assert cli_main(argv) == 0, argv

    runs = {}
    runs["synth"] = tmp_path / "synth"
    run(["synth", "--users", "300", "--items", "80", "--clusters", "6", "--seed", "3",
         "--out", str(runs["synth"])])
    data = str(runs["synth"] / "interactions.csv")
    runs["ingest"] = tmp_path / "split"
    run(["ingest", "--input", data, "--out", str(runs["ingest"])])
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"data": {"split_dir": "split"}, "epochs": 2, "n_negatives": 16,
                               "batch_size": 128, "dim": 8, "learning_rate": 0.01}))
    runs["train"] = tmp_path / "train"
    run(["train", "--config", str(cfg), "--out", str(runs["train"])])
    runs["eval"] = tmp_path / "eval"
    run(["eval", "--checkpoint", str(runs["train"] / "model.npz"), "--split", str(runs["ingest"]),
         "--format", "csv", "--out", str(runs["eval"])])
    runs["bias-audit"] = tmp_path / "audit"
    run(["bias-audit", "--catalog", "30", "--n", "4", "--resamples", "20000",
         "--out", str(runs["bias-audit"])])
    runs["sketch-audit"] = tmp_path / "sketch"
    run(["sketch-audit", "--events", "20000", "--draws", "10", "--out", str(runs["sketch-audit"])])

    same = {}
    for name, out in runs.items():
        again = tmp_path / f"replay_{name}"
        run(["replay", "--manifest", str(out / "manifest.json"), "--out", str(again)])
        files = sorted(os.listdir(out))
        same[name] = files == sorted(os.listdir(again)) and all(
            (out / f).read_bytes() == (again / f).read_bytes() for f in files)
    ok = all(same.values())
    detail = ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items())
    assert report(10, "replay from manifest is byte-identical", ok, detail)
