"""The ten acceptance criteria, one test each, with their pinned tolerances.

Every test records a PASS/FAIL line, repeated in the "acceptance criteria"
section at the end of the pytest run.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from svmpool.argmin import SvmpLayerInput, finite_diff_jacobian, grad_wrt_input, gradient_check, solve_layer
from svmpool.argmin import toy_pipeline_train
from svmpool.errors import EtaUnreachable
from svmpool.evaluation import FIXTURE_POOL, anticipation_curve, compare_pooling, planted_fixture, timing_curve
from svmpool.features import FeatureBag, NegativeBag, load_dataset, save_dataset
from svmpool.joint import accuracy, train_joint
from svmpool.kernel_map import Kernel, max_normalized_error
from svmpool.pooling import PoolConfig, classified_fraction, compute_svmp, pool_dataset
from svmpool.svm import LabeledSet, brute_force_svm, train_svm
from svmpool.synth import SynthConfig, generate

SEEDS = range(5)


def test_solver_matches_oracle(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n, p = int(rng.integers(2, 51)), int(rng.integers(1, 11))
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        y[:2] = (1.0, -1.0)
        X = rng.standard_normal((n, p)) + 0.5 * y[:, None]
        data, c = LabeledSet(X, y), float(10 ** rng.uniform(-2, 2))
        ours, ref = train_svm(data, c).objective, brute_force_svm(data, c).objective
        worst = max(worst, abs(ours - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    criterion(1, "solver vs oracle", worst <= 1e-6 and elapsed < 60,
              f"max relative objective gap {worst:.2e} (<= 1e-6), {elapsed:.1f} s")


def test_eta_guarantee(criterion):
    t0 = time.perf_counter()
    ds, _ = generate(SynthConfig(num_classes=5, bags_per_class=100, frames_per_bag=20, dim=32, neg_count=30,
                                 seed=7))
    eta = 0.5
    descs = pool_dataset(ds, PoolConfig(eta=eta), threads=1)
    held = sum(classified_fraction(d.hyperplane, b) >= eta for d, b in zip(descs, ds.bags))
    rng = np.random.default_rng(0)
    same = FeatureBag(rng.standard_normal((50, 16)), 1, "same")
    try:
        compute_svmp(same, NegativeBag(rng.standard_normal((50, 16))), PoolConfig(eta=0.9), bag_id="same")
        fired = False
    except EtaUnreachable:
        fired = True
    elapsed = time.perf_counter() - t0
    ok = held == len(ds.bags) == 500 and fired and elapsed < 120
    criterion(2, "eta guarantee", ok,
              f"{held}/500 bags reach eta {eta}, indistinguishable bag raises: {fired}, {elapsed:.1f} s")


def test_pooling_ordering(criterion):
    t0 = time.perf_counter()
    gaps = []
    for seed in SEEDS:
        m = compare_pooling(planted_fixture(seed), FIXTURE_POOL, seed).metrics
        gaps.append((m["svmp"]["accuracy"] - m["average"]["accuracy"], m["svmp"]["accuracy"] - m["max"]["accuracy"]))
    elapsed = time.perf_counter() - t0
    ok = all(a >= 0.10 and b >= 0.10 for a, b in gaps) and elapsed < 300
    detail = ", ".join(f"s{s}: {a:+.2f} AP / {b:+.2f} MP" for s, (a, b) in zip(SEEDS, gaps))
    criterion(3, "SVMP beats AP and MP by 10 points", ok, detail)


def test_anticipation_trend(criterion):
    t0 = time.perf_counter()
    pairs = []
    for seed in SEEDS:
        k = anticipation_curve(planted_fixture(seed), FIXTURE_POOL, seed).metrics["k"]
        adv = [k[i]["svmp"]["accuracy"] - k[i]["average"]["accuracy"] for i in ("1", "5")]
        pairs.append(adv)
    elapsed = time.perf_counter() - t0
    ok = all(a1 >= a5 for a1, a5 in pairs) and elapsed < 300
    detail = ", ".join(f"s{s}: k1 {a1:+.2f} vs k5 {a5:+.2f}" for s, (a1, a5) in zip(SEEDS, pairs))
    criterion(4, "anticipation advantage", ok, detail)


def test_argmin_gradient(criterion):
    t0 = time.perf_counter()
    rep = gradient_check(n=12, p=5, lam=4.0, trials=100, seed=1, h=1e-5)
    # with zero loss weight every hinge is switched off
    rng = np.random.default_rng(5)
    off = SvmpLayerInput(rng.standard_normal((12, 5)), [1] * 6 + [-1] * 6, 0.0)
    jac = grad_wrt_input(solve_layer(off), off)
    zero_exact = not np.any(jac.blocks) and not np.any(finite_diff_jacobian(off).blocks)
    elapsed = time.perf_counter() - t0
    ok = rep["max_rel_error"] <= 1e-4 and rep["zero_law_violations"] == 0 and zero_exact and elapsed < 120
    criterion(5, "argmin Jacobian", ok,
              f"max relative error {rep['max_rel_error']:.1e} (<= 1e-4), "
              f"{rep['inactive_features']} inactive blocks all zero: {rep['zero_law_violations'] == 0 and zero_exact}, "
              f"{elapsed:.1f} s")


def test_kernel_map_fidelity(criterion):
    t0 = time.perf_counter()
    err = max_normalized_error(Kernel.CHI2, 3, 0.65, pairs=1000)
    elapsed = time.perf_counter() - t0
    criterion(6, "chi2 map at N=3, L=0.65", err <= 0.01 and elapsed < 30,
              f"max normalized error {err:.4f} (<= 0.01), {elapsed:.1f} s")


def test_block_coordinate_descent(criterion):
    t0 = time.perf_counter()
    worst = -np.inf
    for seed in range(20):
        r = np.random.default_rng(seed)
        cfg = SynthConfig(int(r.integers(2, 5)), 5, 20, 16, float(r.uniform(0.2, 0.5)), float(r.uniform(0.5, 2)),
                          float(r.uniform(0.1, 0.6)), 1.0, 40, 0.25, seed)
        state = train_joint(generate(cfg)[0], FIXTURE_POOL, float(10 ** r.uniform(-1, 1)), 5)
        worst = max(worst, float(np.max(np.diff(state.objective_trace), initial=-np.inf)))
    ds = planted_fixture(0)
    joint, frozen = train_joint(ds, FIXTURE_POOL, 1.0, 5), train_joint(ds, FIXTURE_POOL, 1.0, 1)
    acc_j = accuracy(joint.bank, joint.descriptors, ds.labels)
    acc_f = accuracy(frozen.bank, frozen.descriptors, ds.labels)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and acc_j >= acc_f and elapsed < 300
    criterion(7, "joint descent", ok,
              f"largest trace step {worst:+.1e} (<= 1e-9) on 20 fixtures, "
              f"training accuracy joint {acc_j:.3f} vs two-stage {acc_f:.3f}, {elapsed:.1f} s")


def test_toy_end_to_end(criterion):
    t0 = time.perf_counter()
    ds = generate(SynthConfig(2, 10, 20, 4, 0.2, 1.0, 0.1, 1.0, 20, None, 3))[0]
    joint = toy_pipeline_train(ds, 50, 3.0)
    frozen = toy_pipeline_train(ds, 50, 3.0, train_transform=False)
    monotone = bool(np.all(np.diff(joint.losses) <= 0)) and joint.losses[-1] < joint.losses[0]
    elapsed = time.perf_counter() - t0
    ok = monotone and joint.accuracy > frozen.accuracy and elapsed < 180
    criterion(8, "toy pipeline", ok,
              f"loss {joint.losses[0]:.3f} -> {joint.losses[-1]:.3f} monotone: {monotone}, "
              f"accuracy {joint.accuracy:.2f} vs frozen {frozen.accuracy:.2f}, {elapsed:.1f} s")


def _cli(*argv):
    return subprocess.run([sys.executable, "-m", "svmpool.cli", *argv], capture_output=True)


def test_determinism_and_round_trip(criterion, tmp_path):
    data = tmp_path / "ds.bin"
    assert _cli("synth", "--bags", "4", "--frames", "20", "--separation", "1.5", "--noise", "0.075",
                "--neg-sigma", "0.25", "--seed", "3", "--out", str(data)).returncode == 0
    outputs = []
    desc, model = tmp_path / "d.bin", tmp_path / "m.bin"  # paths are echoed into the artifacts
    for _ in range(2):
        flags = ("--eta", "0.2", "--normalize", "--threads", "1")
        p = _cli("pool", "--input", str(data), "--out", str(desc), *flags)
        t = _cli("train", "--input", str(data), "--out", str(model), "--max-outer", "4", *flags)
        assert p.returncode == 0 and t.returncode == 0
        outputs.append((desc.read_bytes(), (tmp_path / "d.bin.json").read_bytes(), model.read_bytes(), t.stdout))
    identical = outputs[0] == outputs[1]

    ds = load_dataset(data)
    again = tmp_path / "again.bin"
    save_dataset(ds, again)
    back = load_dataset(again)
    exact = data.read_bytes() == again.read_bytes() and all(
        a.features.tobytes() == b.features.tobytes() for a, b in zip(ds.bags, back.bags))
    criterion(9, "determinism and round trip", identical and exact,
              f"threads=1 pool/train outputs identical: {identical}, binary round trip bit-exact: {exact}")


def test_timing(criterion):
    rep = timing_curve([50, 100, 200], 4096, PoolConfig(), repeats=3)
    t = rep.timing_ms["per_descriptor_ms"]
    ratios = [t["100"] / t["50"], t["200"] / t["100"]]
    ok = t["50"] < 1000 and max(ratios) <= 2.5
    criterion(10, "timing", ok,
              f"n=50 p=4096 {t['50']:.0f} ms (< 1000), doubling ratios "
              f"{ratios[0]:.2f}, {ratios[1]:.2f} (<= 2.5)")
