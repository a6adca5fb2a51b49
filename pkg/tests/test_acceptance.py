"""Acceptance criteria 1-10, one test each.

Every test records PASS/FAIL, wall-clock time and a short note; the lines are
printed in the "acceptance criteria" section of the pytest terminal summary.
Criteria 6, 7 and 9 share one simulation of the periodic-occluder preset;
criterion 8 reuses the model trained for criterion 6.
"""
import itertools
import time
from contextlib import contextmanager

import numpy as np
import pytest

from mblab import presets
from mblab.channel import CodebookConfig, build_codebook, select_beam
from mblab.cli import main
from mblab.config import dump_scenario
from mblab.dataset import generate_dataset, leakage_free, make_label, window_count
from mblab.eval import (
    HandoverConfig, compare_training, handover_sim, metrics, proposed_fitter, snr_drop_db, sweep_pf,
)
from mblab.models import DESK, BlockagePredictor, BoxBaselinePredictor, ProposedModel, pack_baseline, pack_proposed
from mblab.models import predict_proba
from mblab.numcore import finite_diff_check
from mblab.pipeline import simulate
from support import brute_force_beam, leakage_oracle, logits_fn
from test_numcore import PRIMITIVES

pytestmark = pytest.mark.slow

SEEDS = range(10)
LEARN_EPOCHS = 20      # criterion 6, whose model criterion 8 reuses
ORDER_EPOCHS = 60      # criterion 7 needs epochs beyond 50
SWEEP_EPOCHS = 40      # reduced budget for the p/f sweep
MISS_PROB, JITTER = 0.3, 0.05


@contextmanager
def criterion(log, number, budget_s, offset_s=0.0):
    """Time a criterion body (plus ``offset_s`` of shared setup) and log the outcome."""
    note = {"text": ""}
    start = time.perf_counter()
    try:
        yield note
    except BaseException:
        log[number] = (False, time.perf_counter() - start + offset_s, note["text"])
        raise
    elapsed = time.perf_counter() - start + offset_s
    within = elapsed < budget_s
    log[number] = (within, elapsed, note["text"] + ("" if within else f" [over the {budget_s:.0f} s budget]"))
    assert within, f"criterion {number} took {elapsed:.1f} s, budget {budget_s:.0f} s"


def _timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def periodic():
    """Simulated periodic-occluder streams (preset seed 7) and their p=8, f=3 split."""
    cfg = presets.periodic_occluder()
    records, seconds = _timed(simulate, cfg)
    split = generate_dataset(cfg, records=records)
    return {"cfg": cfg, "records": records, "split": split, "seconds": seconds}


@pytest.fixture(scope="module")
def proposed(periodic):
    split = periodic["split"]
    est = BlockagePredictor(epochs=LEARN_EPOCHS, seed=0)
    _, seconds = _timed(est.fit, pack_proposed(split.train), split.train.labels,
                        pack_proposed(split.validation), split.validation.labels)
    return est, seconds


def _score_with_state(est, state, X, y):
    current = est.model_.state_dict()
    est.model_.load_state_dict(state)
    try:
        return float(est.score(X, y))
    finally:
        est.model_.load_state_dict(current)


# ---------------------------------------------------------------------------
# 1-5: unit-level suites
# ---------------------------------------------------------------------------

def test_criterion_01_gradient_suite(acceptance_log):
    with criterion(acceptance_log, 1, 120.0) as note:
        worst, skipped = 0.0, 0
        for name, seed in itertools.product(sorted(PRIMITIVES), SEEDS):
            fn, inputs = PRIMITIVES[name](np.random.default_rng(seed))
            res = finite_diff_check(fn, inputs, seed=seed)
            assert res.n_checked > 0, name
            worst = max(worst, res.max_rel_error)
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            model = ProposedModel(DESK, seed=seed).eval()
            images = rng.random((2, DESK.n_frames, DESK.image_size, DESK.image_size))
            beams = rng.integers(0, DESK.n_beams, (2, DESK.n_frames))
            named = list(model.named_parameters())
            # zero-initialised biases sit exactly on ReLU kinks; evaluate at a nearby point
            values = [p.data + 0.05 * rng.standard_normal(p.shape) for _, p in named]
            # thousands of ReLU inputs: a +-h step occasionally flips one, which shifts the central
            # difference by up to half the one-sided gap, so such coordinates are skipped above 1e-4
            res = finite_diff_check(logits_fn(model, [n for n, _ in named], images, beams), values,
                                    max_coords=4, seed=seed, kink_tol=1e-4)
            assert res.n_checked > 0 and len(res.kinks) <= 0.05 * (res.n_checked + len(res.kinks))
            worst = max(worst, res.max_rel_error)
            skipped += len(res.kinks)
        note["text"] = (f"{len(PRIMITIVES)} primitives + desk model x {len(SEEDS)} seeds, max rel err {worst:.2e}, "
                        f"{skipped} model coordinates on kinks skipped")
        assert worst < 1e-4


def test_criterion_02_codebook_suite(acceptance_log):
    with criterion(acceptance_log, 2, 1.0) as note:
        for N, M in [(4, 4), (16, 16), (128, 128)]:
            w = build_codebook(CodebookConfig(N, M)).vectors
            np.testing.assert_allclose(np.linalg.norm(w, axis=1), 1.0, atol=1e-12)
            np.testing.assert_allclose(np.abs(w), 1.0 / np.sqrt(M), atol=1e-12)
            np.testing.assert_allclose(np.angle(w[0]), 0.0, atol=1e-12)
        note["text"] = "(4,4) (16,16) (128,128): unit norm, constant modulus, equal-phase w_0"


def test_criterion_03_beam_selection_oracle(acceptance_log):
    with criterion(acceptance_log, 3, 5.0) as note:
        cb = build_codebook(CodebookConfig(16, 16))
        rng = np.random.default_rng(0)
        for _ in range(100):
            h = rng.standard_normal((8, 16)) + 1j * rng.standard_normal((8, 16))
            assert select_beam(h, cb)[0] == brute_force_beam(h, cb.vectors)[0]
        note["text"] = "100 channels, K=8 M=16 N=16, exact match"


def test_criterion_04_label_logic(acceptance_log):
    with criterion(acceptance_log, 4, 1.0) as note:
        for f in range(1, 7):
            for seq in itertools.product((0, 1), repeat=f):
                assert make_label(seq) == int(any(seq))
        n = 0
        for T in range(2, 51):
            for p in range(1, T):
                for f in range(1, T - p + 1):
                    assert window_count(T, p, f) == sum(1 for start in range(T) if start + p + f <= T)
                    n += 1
        note["text"] = f"2^f sequences for f=1..6, {n} (p, f, T) triples"


def test_criterion_05_leakage(acceptance_log):
    with criterion(acceptance_log, 5, 30.0) as note:
        for seed in range(20):
            split = generate_dataset(presets.random_street(seed, n_scenes=40), p=4, f=3)
            assert leakage_oracle(split) == [] and leakage_free(split), f"seed {seed}"
        note["text"] = "20 random-street seeds leakage-free"


# ---------------------------------------------------------------------------
# 6-10: end-to-end
# ---------------------------------------------------------------------------

def test_criterion_06_learnability(acceptance_log, periodic, proposed):
    est, train_s = proposed
    split = periodic["split"]
    with criterion(acceptance_log, 6, 600.0, offset_s=periodic["seconds"] + train_s) as note:
        probs = est.predict_proba(pack_proposed(split.test))[:, 1]
        report = metrics(probs, split.test.labels, threshold=0.5)
        note["text"] = (f"test accuracy {report.accuracy:.4f} on {len(split.test)} windows, "
                        f"{LEARN_EPOCHS} epochs (best epoch {est.history_.best_epoch})")
        assert report.accuracy >= 0.90


def test_criterion_07_robustness_ordering(acceptance_log, periodic):
    split = periodic["split"]
    with criterion(acceptance_log, 7, 1200.0, offset_s=periodic["seconds"]) as note:
        pack = lambda s: pack_baseline(s, 6, MISS_PROB, JITTER, seed=0)  # noqa: E731
        prop = BlockagePredictor(epochs=ORDER_EPOCHS, seed=0)
        prop.fit(pack_proposed(split.train), split.train.labels, pack_proposed(split.validation),
                 split.validation.labels)
        base = BoxBaselinePredictor(epochs=ORDER_EPOCHS, seed=0)
        base.fit(pack(split.train), split.train.labels, pack(split.validation), split.validation.labels)
        cmp = compare_training(prop.history_, base.history_, after_epoch=50)
        prop_test = _score_with_state(prop, prop.final_state_, pack_proposed(split.test), split.test.labels)
        base_test = _score_with_state(base, base.final_state_, pack(split.test), split.test.labels)
        note["text"] = (f"proposed >= baseline in {cmp.ordering_fraction:.0%} of {cmp.n_epochs} epochs after 50; "
                        f"final test {prop_test:.4f} vs {base_test:.4f}")
        assert cmp.n_epochs > 0 and cmp.ordering_fraction >= 0.8
        assert prop_test > base_test


def test_criterion_08_handover(acceptance_log, proposed):
    est, _ = proposed
    with criterion(acceptance_log, 8, 120.0) as note:
        cfg = presets.handover()
        records = sorted(simulate(cfg), key=lambda r: r.bs)
        hcfg = HandoverConfig(p=cfg.window.p, f=cfg.window.f, bandwidth_hz=cfg.channel.bandwidth_hz)
        none = handover_sim(records, "none", hcfg)
        oracle = handover_sim(records, "oracle", hcfg)
        model = handover_sim(records, lambda images, beams: predict_proba(est.model_, (images, beams)), hcfg)
        blocked = records[0].los.astype(bool)
        drop = snr_drop_db(records[0].snr_db, blocked)
        ratio = model.mean_capacity / oracle.mean_capacity
        note["text"] = (f"{int(blocked.sum())} blocked steps, drop {drop:.1f} dB; mean capacity none "
                        f"{none.mean_capacity / 1e9:.3f} / oracle {oracle.mean_capacity / 1e9:.3f} / model "
                        f"{model.mean_capacity / 1e9:.3f} Gbps ({ratio:.1%} of oracle)")
        assert blocked.any() and np.all(none.capacity_bps[blocked] == 0.0)
        assert drop >= 25.0
        assert np.all(oracle.capacity_bps > 0.0)
        assert oracle.mean_capacity > none.mean_capacity
        assert ratio >= 0.95


def test_criterion_09_pf_sweep(acceptance_log, periodic):
    with criterion(acceptance_log, 9, 1800.0, offset_s=periodic["seconds"]) as note:
        cfg = periodic["cfg"]
        result = sweep_pf(periodic["records"], [1, 8], [3, 12], proposed_fitter(epochs=SWEEP_EPOCHS, seed=0),
                          ratios=tuple(cfg.split), n_beams=cfg.codebook.n_beams)
        acc = {(p, f): result.accuracy(p, f) for p, f in [(1, 3), (8, 3), (8, 12)]}
        note["text"] = ", ".join(f"p={p} f={f}: {a:.4f}" for (p, f), a in acc.items()) + f" ({SWEEP_EPOCHS} epochs)"
        assert acc[8, 3] >= acc[1, 3]
        assert acc[8, 3] >= acc[8, 12]


def test_criterion_10_reproducibility(acceptance_log, tmp_path):
    with criterion(acceptance_log, 10, 720.0) as note:
        scenario = tmp_path / "scenario.yaml"
        dump_scenario(presets.periodic_occluder(n_scenes=200), scenario)
        for run in ("a", "b"):
            assert main(["generate", "--config", str(scenario), "--out", str(tmp_path / run / "data")]) == 0
            assert main(["train", "--dataset", str(tmp_path / run / "data" / "dataset.bin"), "--epochs", "5",
                         "--seed", "3", "--out", str(tmp_path / run / "model")]) == 0
        same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
                for name in ("data/dataset.bin", "model/history.csv", "model/model.ckpt", "model/last.ckpt")}
        note["text"] = "identical: " + ", ".join(f"{k}={v}" for k, v in same.items())
        assert all(same.values())
