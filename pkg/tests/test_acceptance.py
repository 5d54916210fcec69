"""The ten acceptance criteria, one test each; a PASS/FAIL summary is printed at the end of the run."""

import filecmp
import json
import math
import time

import numpy as np
import pytest

from coldnilm import cli, sns, toy
from coldnilm import model as M
from coldnilm import train as T
from coldnilm.asha import AshaConfig, asha_search
from coldnilm.config import builtin_path
from coldnilm.features import StftConfig, spectrogram
from coldnilm.signal import (NormalizationConfig, RejectionCode, SignatureRejected, estimate_fundamental,
                             normalize_signature, peak_voltage)
from coldnilm.sns import ScheduleEntry, SynthesisSchedule

from conftest import fd_failures, gc_instance


def test_criterion_01_shape(record_property):
    cfg = StftConfig(window_len=0.1, hop=0.02)
    x = np.random.default_rng(0).standard_normal(4000 * 5)
    t0 = time.perf_counter()
    spec = spectrogram(x, 4000.0, cfg)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"shape {spec.shape[0]}x{spec.shape[1]} in {elapsed:.3f} s")
    assert spec.shape == (251, 201) == cfg.shape(20000, 4000.0)
    assert elapsed < 1.0


def test_criterion_02_gradients(record_property):
    hp = M.ColdHyperParams(q=8, k=2, n_head=2, p_d=0.0, n_labels=4, v_in=6)
    params, X, Y = gc_instance(hp)
    assert X.shape == (1, 8, 6) and all(p.dtype == np.float64 for p in params.values())
    t0 = time.perf_counter()
    bad = fd_failures(params, X, Y, hp, eps=1e-3, rtol=1e-4, atol=1e-7)
    elapsed = time.perf_counter() - t0
    n = sum(p.size for p in params.values())
    record_property("detail", f"{n - len(bad)}/{n} parameters within 1e-4 rel in {elapsed:.1f} s")
    assert bad == []
    assert elapsed < 30


def test_criterion_03_permutation_invariance(record_property):
    hp = M.ColdHyperParams(q=8, k=2, n_head=2, p_d=0.1, n_labels=4, v_in=6)
    params = M.init_params(hp, 0)
    rng = np.random.default_rng(1)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(20):
        X = rng.standard_normal((1, 8, 6))
        y, _ = M.cold_forward(X, params, hp)
        for _ in range(5):
            yp, _ = M.cold_forward(X[:, rng.permutation(8)], params, hp)
            worst = max(worst, float(np.abs(yp - y).max()))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max deviation {worst:.2e} in {elapsed:.2f} s")
    assert worst <= 1e-6 and elapsed < 10


def _aggregate_oracle(components, window_len):
    total = np.zeros(window_len)
    for comp, off, shift in components:
        contrib = np.zeros(window_len)
        rolled = np.roll(comp, -shift)  # rolled[j] = comp[(j + shift) % len]
        a, b = max(off, 0), min(off + len(comp), window_len)
        if b > a:
            contrib[a:b] = rolled[a - off:b - off]
        total = total + contrib
    return total


def test_criterion_04_kirchhoff(desk_patterns, record_property):
    labels = sorted(desk_patterns)
    sched = SynthesisSchedule((ScheduleEntry(1, 8), ScheduleEntry(2, 28, 336), ScheduleEntry(3, 56, 672)),
                              t_obs=1.0, seed=4)
    by_id = {s.source_id: s for sigs in desk_patterns.values() for s in sigs}
    t0 = time.perf_counter()
    examples = list(sns.synthesize_collection(desk_patterns, sched, labels, 1000.0))[:1000]
    mismatched = 0
    for ex in examples:
        comps = [(by_id[p.source_id].current.samples, p.start_offset, p.phase_shift) for p in ex.placements]
        if ex.current.tobytes() != _aggregate_oracle(comps, 1000).tobytes():
            mismatched += 1
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{len(examples) - mismatched}/{len(examples)} bit-identical in {elapsed:.1f} s")
    assert len(examples) == 1000 and mismatched == 0
    assert elapsed < 10


def test_criterion_05_schedule_fidelity(record_property):
    entries = sns.read_schedule_table(builtin_path("full_train.csv"))
    corpus = toy.generate_corpus(toy.many_specs(55), 3, 1000.0, seed=0)
    patterns = {}
    for s in corpus:
        patterns.setdefault(s.label, []).append(s)
    assert len(patterns) == 55 and min(len(v) for v in patterns.values()) >= 3
    sched = SynthesisSchedule(entries, t_obs=5.0, seed=0)
    col = sns.Collection(patterns, sched, sorted(patterns), 1000.0)  # plans only, nothing rendered
    realized = {w: sorted(set(r)) for w, r in col.reprs_per_comb().items()}
    record_property("detail", f"reprs/comb {realized}, truncations {len(col.truncations())}")
    assert realized == {3: [12], 4: [12], 6: [6], 8: [3], 10: [3]}
    assert {e.w: e.reprs_per_comb for e in entries} == {3: 12, 4: 12, 6: 6, 8: 3, 10: 3}
    assert col.truncations() == []
    assert not {e.w for e in entries} & {1, 2, 5, 7, 9}
    assert {w: len(p) for w, p in col.plans.items()} == {e.w: e.b_comb for e in entries}


def _confusion_f1(y, yb):
    tp = fp = fn = 0
    for a, b in zip(y, yb):
        tp += a and b
        fp += (not a) and b
        fn += a and not b
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def test_criterion_06_metric_oracle(record_property):
    rng = np.random.default_rng(6)
    y = rng.random((10_000, 8)) < rng.random((10_000, 1))
    yb = rng.random((10_000, 8)) < rng.random((10_000, 1))
    ws = rng.integers(1, 6, 10_000)
    t0 = time.perf_counter()
    ref = [_confusion_f1(a.tolist(), b.tolist()) for a, b in zip(y, yb)]
    worst = max(abs(T.f1_example(a, b) - r) for a, b, r in zip(y[:2000], yb[:2000], ref))
    worst = max(worst, float(np.abs(T.f1_per_example(y, yb) - ref).max()))
    worst = max(worst, abs(T.mean_f1(y, yb) - math.fsum(ref) / len(ref)))
    per_w, counts = T.per_w_f1(y, yb, ws)
    groups = {int(w): [r for r, ww in zip(ref, ws) if ww == w] for w in np.unique(ws)}
    ref_w = math.fsum(len(g) / len(ref) * (math.fsum(g) / len(g)) for g in groups.values())
    worst = max(worst, abs(T.weighted_mf1(per_w, counts) - ref_w))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max deviation {worst:.1e} in {elapsed:.2f} s")
    assert worst <= 1e-12 and elapsed < 5


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """The built-in desk pipeline run twice with the same seed (the second with two threads)."""
    root = tmp_path_factory.mktemp("desk")
    timings = []
    for out, threads in ((root / "a", 1), (root / "b", 2)):
        t0 = time.perf_counter()
        for cmd in (["gen-toy"], ["normalize"], ["synthesize"], ["featurize"], ["train", "--quiet"],
                    ["evaluate"]):
            assert cli.main([*cmd, "--out", str(out), "--seed", "0", "--threads", str(threads)]) == 0, cmd
        timings.append(time.perf_counter() - t0)
    return root / "a", root / "b", timings


def test_criterion_07_desk_learning(desk_runs, record_property):
    a, _, timings = desk_runs
    report = json.loads((a / "runs" / "eval_test" / "report.json").read_text())
    per_w = {int(w): v for w, v in report["per_w"].items()}
    counts = json.loads((a / "datasets" / "train" / "dataset.json").read_text())["n_examples"]
    record_property("detail", f"test weighted mF1 {report['weighted_mf1']:.4f}, per-w "
                              + ", ".join(f"{w}:{v:.3f}" for w, v in sorted(per_w.items()))
                              + f", {counts} train examples, {timings[0]:.0f} s")
    assert report["weighted_mf1"] >= 0.85
    assert per_w[1] >= per_w[3]
    assert timings[0] < 600


def test_criterion_08_asha(record_property):
    lrs = [float(10 ** e) for e in np.arange(-5.0, -0.5, 0.5)]
    qs = [16, 32, 64]

    def objective(config, resource, trial_id):
        # peak at lr 1e-3, q 32; noise shrinks as the resource grows
        noise = np.random.default_rng([trial_id, int(resource)]).normal(0, 0.5 / resource)
        return -(math.log10(config["lr"]) + 3) ** 2 - 0.5 * (math.log2(config["q"]) - 5) ** 2 + noise

    cfg = AshaConfig(max_resource=27, reduction_factor=3, min_resource=1, n_trials=27,
                     space={"lr": lrs, "q": qs}, n_workers=4, seed=0)
    t0 = time.perf_counter()
    res = asha_search(cfg, objective)
    elapsed = time.perf_counter() - t0
    steps = (abs(lrs.index(res.best_config["lr"]) - 4), abs(qs.index(res.best_config["q"]) - 1))
    quotas = {k: math.ceil(res.completed[k] / 3) for k in res.promotions}
    record_property("detail", f"best {res.best_config} ({max(steps)} step off), "
                              f"promotions {res.promotions} vs quota {quotas}")
    assert max(steps) <= 1
    assert res.promotions == quotas
    assert elapsed < 30


def test_criterion_09_normalization(record_property):
    spec = toy.ToySignatureSpec("kettle", "Resistive", 6.0, mains=(60,), duration=(3.0, 3.5))
    raw = toy.generate_signatures(spec, 1, 30000.0, seed=9)[0]
    cfg = NormalizationConfig(f_down=4000.0, v_ref=311.0, f_ref=50.0, t_thd=0.1)
    t0 = time.perf_counter()
    out = normalize_signature(raw, cfg)
    f0 = estimate_fundamental(out.voltage)
    peak = peak_voltage(out.voltage)
    dirty = toy.generate_signatures(toy.ToySignatureSpec("dirty", "Resistive", 2.0, mains=(50,),
                                                         voltage_thd=0.15), 1, 4000.0, seed=9)[0]
    with pytest.raises(SignatureRejected) as rejected:
        normalize_signature(dirty, cfg)
    elapsed = time.perf_counter() - t0
    seconds = len(out) / out.rate
    record_property("detail", f"{out.rate:.0f} Hz, f0 {f0:.3f} Hz, peak {peak:.1f} V, {seconds:g} s; "
                              f"15% THD -> {rejected.value.code.value}")
    assert out.rate == 4000.0
    assert abs(f0 - 50.0) <= 0.5
    assert abs(peak - 311.0) <= 0.01 * 311.0
    assert seconds == int(seconds) >= 1
    assert rejected.value.code == RejectionCode.HIGH_THD
    assert elapsed < 5


def test_criterion_10_determinism(desk_runs, record_property):
    a, b, _ = desk_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    differing = [str(f) for f in files if not (b / f).is_file() or not filecmp.cmp(a / f, b / f, shallow=False)]
    extra = sorted(str(p.relative_to(b)) for p in b.rglob("*") if p.is_file() and not (a / p.relative_to(b)).exists())
    record_property("detail", f"{len(files) - len(differing)}/{len(files)} files byte-identical")
    assert any(f.suffix == ".ckpt" for f in files) and any(f.name == "samples.f32" for f in files)
    assert differing == [] and extra == []
