"""Acceptance suite: one test per criterion, tolerances pinned.

Each test records a PASS/FAIL line through the ``report`` fixture; the lines
are repeated in the pytest terminal summary.
"""
import time

import numpy as np
import pytest

import hybridfb.functional as F
from hybridfb.arch import QuantMode, QuantPlan, build_mobilenets_v1, build_tinynet
from hybridfb.cost import count_network, energy, evaluate, model_size, throughput
from hybridfb.gradcheck import check_gradients
from hybridfb.network import instantiate
from hybridfb.quant import TernaryMatrix
from hybridfb.spn import (SpnConvLayer, SpnTriple, make_canonical_strassen, matmul_bilinear_map,
                          count_shared_value_successes, shared_value_template,
                          spn_bilinear, spn_conv2d, spn_matmul, verify_spn_exact)
from hybridfb.tensor import Tensor
from hybridfb.train.checkpoint import checkpoint_bytes, load_checkpoint_bytes
from hybridfb.train.data import (RECORD_BYTES, DatasetError, SyntheticSpec, generate_synthetic,
                                 read_cifar10_records)
from hybridfb.train.experiments import BUILTIN_FILTERS, sensitivity_experiment
from hybridfb.train.trainer import PhaseConfig, TrainConfig, train

KB = 8 * 1024  # bits per KB
M = 1e6


def rel(a, b):
    return abs(a - b) / abs(b)


@pytest.fixture(scope="module")
def mb():
    return build_mobilenets_v1(0.5, 224)


# ---------------------------------------------------------------------------
# 1-3: cost model
# ---------------------------------------------------------------------------

PUBLISHED_STRASSEN = {  # rho: (muls M, adds M, size KB)
    0.5: (0.77, 158.54, 522.33),
    0.75: (1.16, 236.16, 631.76),
    1.0: (1.55, 313.78, 741.19),
    2.0: (3.11, 624.27, 1178.92),
}


def test_criterion_01_baseline_counts(mb, report):
    t0 = time.perf_counter()
    errs = []
    fp = count_network(mb, QuantPlan(QuantMode.FP16))
    fp_size = model_size(mb, QuantPlan(QuantMode.FP16)) / KB
    errs += [("fp16 macs", rel(fp.macs / M, 149.49), 0.01), ("fp16 size", rel(fp_size, 2590.07), 0.05)]
    twn = count_network(mb, QuantPlan(QuantMode.TWN))
    twn_size = model_size(mb, QuantPlan(QuantMode.TWN)) / KB
    errs += [("twn adds", rel(twn.adds / M, 149.49), 0.01), ("twn size", rel(twn_size, 323.75), 0.01)]
    for rho, (mu, ad, kb) in PUBLISHED_STRASSEN.items():
        plan = QuantPlan(QuantMode.STRASSEN, rho=rho)
        r = count_network(mb, plan)
        errs += [(f"st{rho} muls", rel(r.muls / M, mu), 0.05), (f"st{rho} adds", rel(r.adds / M, ad), 0.03),
                 (f"st{rho} macs", rel(r.macs / M, 8.69), 0.03),
                 (f"st{rho} size", rel(model_size(mb, plan) / KB, kb), 0.05)]
    dt = time.perf_counter() - t0
    bad = [(n, e, tol) for n, e, tol in errs if e > tol]
    worst = max(errs, key=lambda t: t[1] / t[2])
    ok = not bad and dt < 1.0
    report(1, "baseline and strassen counts", ok, f"{len(errs)} quantities, worst {worst[0]} {worst[1]:.2%} "
           f"(tol {worst[2]:.0%}), {dt:.3f}s")
    assert ok, bad


PUBLISHED_HYBRID = {  # (alpha, rho): (muls M, adds M, macs M, size KB)
    (0.25, 1.0): (1.16, 204.63, 43.76, 1004.67),
    (0.25, 1.33): (1.55, 270.95, 43.76, 1097.07),
    (0.25, 2.0): (2.33, 405.59, 43.76, 1284.65),
    (0.375, 1.0): (0.97, 157.84, 61.3, 1131.43),
    (0.375, 1.6): (1.55, 250.34, 61.3, 1260.44),
    (0.375, 2.0): (1.94, 312.01, 61.3, 1346.45),
    (0.5, 2.0): (1.55, 228.68, 78.83, 1327.88),
}


def test_criterion_02_hybrid_counts(mb, report):
    t0 = time.perf_counter()
    errs = []
    for (a, rho), (mu, ad, mac, kb) in PUBLISHED_HYBRID.items():
        plan = QuantPlan(QuantMode.HYBRID, alpha=a, rho=rho)
        r = count_network(mb, plan)
        tag = f"a{a}/r{rho}"
        errs += [(tag + " muls", rel(r.muls / M, mu), 0.05), (tag + " adds", rel(r.adds / M, ad), 0.03),
                 (tag + " macs", rel(r.macs / M, mac), 0.02),
                 (tag + " size", rel(model_size(mb, plan) / KB, kb), 0.05)]
    dt = time.perf_counter() - t0
    bad = [(n, e, tol) for n, e, tol in errs if e > tol]
    worst = max(errs, key=lambda t: t[1] / t[2])
    ok = not bad and dt < 1.0
    report(2, "hybrid counts", ok, f"7 rows x 4 quantities, worst {worst[0]} {worst[1]:.2%} "
           f"(tol {worst[2]:.0%}), {dt:.3f}s")
    assert ok, bad


# reported (muls M, adds M, macs M) -> (energy, throughput)
REPORTED = [
    ((0, 149.49, 0), 0.2, 2.0),
    ((0.77, 158.54, 8.69), 0.27, 1.69),
    ((1.16, 236.16, 8.69), 0.37, 1.17),
    ((1.55, 313.78, 8.69), 0.48, 0.9),
    ((3.11, 624.27, 8.69), 0.9, 0.46),
    ((1.16, 204.63, 43.76), 0.56, 1.02),
    ((1.55, 270.95, 43.76), 0.65, 0.83),
    ((2.33, 405.59, 43.76), 0.84, 0.6),
    ((0.97, 157.84, 61.3), 0.62, 1.06),
    ((1.55, 250.34, 61.3), 0.74, 0.8),
    ((1.94, 312.01, 61.3), 0.83, 0.68),
    ((1.28, 142.37, 78.83), 0.72, 1.0),
    ((1.55, 228.68, 78.83), 0.83, 0.77),
]


def test_criterion_03_energy_throughput(report):
    t0 = time.perf_counter()
    worst = 0.0
    for counts, e_ref, t_ref in REPORTED:
        e = energy(counts, 149.49)
        t = throughput(counts, 149.49)
        worst = max(worst, abs(e - e_ref), abs(t - t_ref))
    base = (0, 0, 149.49)
    worst = max(worst, abs(energy(base, 149.49) - 1), abs(throughput(base, 149.49) - 1))
    dt = time.perf_counter() - t0
    ok = worst <= 0.02 and dt < 1.0
    report(3, "energy/throughput regression", ok,
           f"{len(REPORTED) + 1} table entries, max abs deviation {worst:.4f} (tol 0.02)")
    assert ok


# ---------------------------------------------------------------------------
# 4-5: exact SPNs
# ---------------------------------------------------------------------------

def test_criterion_04_strassen_exact(report):
    t0 = time.perf_counter()
    st = make_canonical_strassen()
    rng = np.random.default_rng(4)
    A = rng.integers(-100, 101, (1000, 2, 2)).astype(np.float64)
    B = rng.integers(-100, 101, (1000, 2, 2)).astype(np.float64)
    # batched row-major vec(A), vec(B)
    out = spn_bilinear(*st, Tensor(A.reshape(1000, 4)), Tensor(B.reshape(1000, 4))).data.reshape(1000, 2, 2)
    exact_batch = np.array_equal(out, A @ B)
    exact_single = all(np.array_equal(spn_matmul(*st, a, b).data, a @ b) for a, b in zip(A[:50], B[:50]))
    basis = verify_spn_exact(st, matmul_bilinear_map(2, 2, 2))
    broken = SpnTriple(st.W_a, st.W_b, TernaryMatrix(np.roll(st.W_c.entries, 1, axis=1)))
    oracle_rejects = not verify_spn_exact(broken, matmul_bilinear_map(2, 2, 2))
    dt = time.perf_counter() - t0
    ok = exact_batch and exact_single and basis and oracle_rejects and dt < 1.0
    report(4, "Strassen exactness", ok, f"1000 integer pairs exact={exact_batch}, basis oracle={basis}, "
           f"oracle rejects corrupted W_c={oracle_rejects}, {dt:.3f}s")
    assert ok


def test_criterion_05_shared_value_h6(report):
    t0 = time.perf_counter()
    counts = [count_shared_value_successes(shared_value_template(), 6, seed=s) for s in range(5)]
    dt = time.perf_counter() - t0
    med = float(np.median(counts))
    ok = med >= 3 and dt < 300
    report(5, "shared-value h=6 existence", ok,
           f"successes per seed (20 trials) {counts}, median {med:g} (need >= 3), {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 6: gradients
# ---------------------------------------------------------------------------

def _grad_cases(rng):
    """(name, closure builder) pairs; each builder returns (fn, leaves)."""
    def leaf(*shape, positive=False):
        x = rng.normal(size=shape)
        if positive:
            x = np.abs(x) + 0.5
        return Tensor(x, requires_grad=True, dtype=np.float64)

    def scalarize(t_fn, out_shape):
        w = rng.normal(size=out_shape)
        return lambda: F.sum(F.mul(t_fn(), Tensor(w, dtype=np.float64)))

    n, c, h = rng.integers(1, 4), rng.integers(1, 4), rng.integers(4, 7)
    k = int(rng.choice([1, 3]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    r, s = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    cases = []

    a, b = leaf(r, s), leaf(r, s)
    cases.append(("add", scalarize(lambda: F.add(a, b), (r, s)), [a, b]))
    a2, b2 = leaf(r, s), leaf(1, s)
    cases.append(("add-broadcast", scalarize(lambda: F.add(a2, b2), (r, s)), [a2, b2]))
    a3, b3 = leaf(r, s), leaf(r, 1)
    cases.append(("sub", scalarize(lambda: F.sub(a3, b3), (r, s)), [a3, b3]))
    a4, b4 = leaf(r, s), leaf(s)
    cases.append(("mul", scalarize(lambda: F.mul(a4, b4), (r, s)), [a4, b4]))
    p = leaf(r, s, positive=True)
    cases.append(("reciprocal", scalarize(lambda: F.reciprocal(p), (r, s)), [p]))
    x = Tensor(rng.normal(size=(r, s)) + np.sign(rng.normal(size=(r, s))) * 0.1, requires_grad=True,
               dtype=np.float64)
    cases.append(("relu", scalarize(lambda: F.relu(x), (r, s)), [x]))
    q = leaf(r, s)
    cases.append(("square", scalarize(lambda: F.square(q), (r, s)), [q]))
    q2 = leaf(r, s)
    cases.append(("reshape", scalarize(lambda: F.reshape(q2, (s, r)), (s, r)), [q2]))
    q3 = leaf(r, s, 2)
    cases.append(("transpose", scalarize(lambda: F.transpose(q3, (2, 0, 1)), (2, r, s)), [q3]))
    q4 = leaf(r, s)
    cases.append(("getitem", scalarize(lambda: F.getitem(q4, (slice(None), slice(1, None))), (r, s - 1)), [q4]))
    q5 = leaf(r, s, 3)
    cases.append(("sum-axis", scalarize(lambda: F.sum(q5, axis=1, keepdims=True), (r, 1, 3)), [q5]))
    q6 = leaf(r, s, 3)
    cases.append(("mean-axis", scalarize(lambda: F.mean(q6, axis=(0, 2)), (s,)), [q6]))
    c1, c2 = leaf(r, s), leaf(r + 1, s)
    cases.append(("concat", scalarize(lambda: F.concat([c1, c2], axis=0), (2 * r + 1, s)), [c1, c2]))
    d1, d2 = leaf(n, c, h, h), leaf(n, 2, h, h)
    cases.append(("concat_channels", scalarize(lambda: F.concat_channels(d1, d2), (n, c + 2, h, h)), [d1, d2]))
    m1, m2 = leaf(r, s), leaf(s, 3)
    cases.append(("matmul", scalarize(lambda: F.matmul(m1, m2), (r, 3)), [m1, m2]))
    xd, wd, bd = leaf(r, s), leaf(3, s), leaf(3)
    cases.append(("dense", scalarize(lambda: F.dense(xd, wd, bd), (r, 3)), [xd, wd, bd]))

    ho = F.conv_output_size(h, k, stride, pad)
    xc = leaf(n, c, h, h)
    cases.append(("im2col", scalarize(lambda: F.im2col(xc, k, stride, pad), F.im2col(xc, k, stride, pad).shape),
                  [xc]))
    xc2, wc = leaf(n, c, h, h), leaf(2, c, k, k)
    cases.append(("conv2d", scalarize(lambda: F.conv2d(xc2, wc, stride, pad), (n, 2, ho, ho)), [xc2, wc]))
    xc3, wdw = leaf(n, c, h, h), leaf(c, 1, k, k)
    cases.append(("depthwise_conv2d", scalarize(lambda: F.depthwise_conv2d(xc3, wdw, stride, pad),
                                                (n, c, ho, ho)), [xc3, wdw]))
    xb, g, be = leaf(n + 1, c, h, h), leaf(c), leaf(c)
    rm, rv = np.zeros(c), np.ones(c)
    cases.append(("batchnorm-train", scalarize(lambda: F.batchnorm(xb, g, be, rm.copy(), rv.copy(), True),
                                               (n + 1, c, h, h)), [xb, g, be]))
    xe, ge, bee = leaf(n, c, h, h), leaf(c), leaf(c)
    rme, rve = rng.normal(size=c), np.abs(rng.normal(size=c)) + 0.5
    cases.append(("batchnorm-eval", scalarize(lambda: F.batchnorm(xe, ge, bee, rme, rve, False),
                                              (n, c, h, h)), [xe, ge, bee]))
    xg = leaf(n, c, h, h)
    cases.append(("global_avg_pool", scalarize(lambda: F.global_avg_pool(xg), (n, c)), [xg]))
    xl = leaf(r, s)
    cases.append(("log_softmax", scalarize(lambda: F.log_softmax(xl), (r, s)), [xl]))
    xs = leaf(r, s)
    labels = rng.integers(0, s, r)
    cases.append(("softmax_cross_entropy", lambda: F.softmax_cross_entropy(xs, labels), [xs]))
    xsc = leaf(r, s)
    probs = F.softmax(rng.normal(size=(r, s)))
    cases.append(("soft_cross_entropy", lambda: F.soft_cross_entropy(xsc, probs), [xsc]))
    xm = leaf(r, s)
    tgt = rng.normal(size=(r, s))
    cases.append(("mse", lambda: F.mse(xm, tgt), [xm]))
    hid = int(rng.integers(2, 6))
    wa, wb, wcc = leaf(hid, 4), leaf(hid, 4), leaf(4, hid)
    xa, xbb = leaf(r, 4), leaf(r, 4)
    cases.append(("spn_bilinear", scalarize(lambda: spn_bilinear(wa, wb, wcc, xa, xbb), (r, 4)),
                  [wa, wb, wcc, xa, xbb]))
    layer = SpnConvLayer(c, 2, k, hid, stride, pad, rng=rng, dtype=np.float64)
    xsp = leaf(n, c, h, h)
    leaves = [xsp] + layer.parameters()
    for t in leaves:
        t.requires_grad = True
    cases.append(("spn_conv2d", scalarize(lambda: spn_conv2d(layer, xsp), (n, 2, ho, ho)), leaves))
    return cases


def test_criterion_06_gradients(report):
    t0 = time.perf_counter()
    worst, worst_op, n_checks, failures = 0.0, "", 0, []
    for seed in range(3):
        for name, fn, leaves in _grad_cases(np.random.default_rng(seed)):
            err = check_gradients(fn, leaves)
            n_checks += 1
            if err > worst:
                worst, worst_op = err, name
            if not err < 1e-4:
                failures.append((seed, name, err))
    dt = time.perf_counter() - t0
    ok = not failures and dt < 60
    report(6, "gradient integrity", ok, f"{n_checks} op checks over 3 seeds, worst rel err {worst:.2e} "
           f"({worst_op}), tol 1e-4, {dt:.1f}s")
    assert ok, failures


# ---------------------------------------------------------------------------
# 7: folding
# ---------------------------------------------------------------------------

def test_criterion_07_folding_invariance(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        c_in, c_out = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        k = int(rng.choice([1, 3]))
        hidden = int(rng.integers(1, 2 * c_out + 1))
        layer = SpnConvLayer(c_in, c_out, k, hidden, int(rng.integers(1, 3)), k // 2, rng=rng)
        x = Tensor(rng.normal(size=(100, c_in, 6, 6)).astype(np.float32))
        layer.activate_quantization()
        before = layer(x).data.astype(np.float64)
        layer.freeze_and_fold()
        after = layer(x).data.astype(np.float64)
        denom = np.linalg.norm(before)
        change = np.linalg.norm(after - before) / denom if denom > 0 else np.linalg.norm(after)
        worst = max(worst, change)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 10
    report(7, "folding invariance", ok, f"10 layers x 100 inputs, max relative change {worst:.2e} "
           f"(tol 1e-5), {dt:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 8: sensitivity
# ---------------------------------------------------------------------------

def test_criterion_08_sensitivity(report):
    t0 = time.perf_counter()
    hs = list(range(2, 9))
    runs = []
    for seed in range(3):
        pts = sensitivity_experiment(BUILTIN_FILTERS["matmul2x2"], hs, num_pairs=10_000, seed=seed)
        runs.append([p.loss for p in pts])
    med = np.median(np.array(runs), axis=0)
    dt = time.perf_counter() - t0
    monotone = bool(np.all(np.diff(med) <= 0))
    ok = monotone and med[-1] < 1e-6 and dt < 600
    table = ", ".join(f"h{h}={v:.2e}" for h, v in zip(hs, med))
    report(8, "sensitivity monotonicity", ok, f"median of 3 seeds: {table}; non-increasing={monotone}, "
           f"{dt:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 9: parity
# ---------------------------------------------------------------------------

PARITY_DATA = SyntheticSpec(num_classes=10, n_train=1000, n_eval=500, separation=10.0)


def _parity_config(seed):
    return TrainConfig(phases=[PhaseConfig("FP_TRAIN", 10, 0.2, 2), PhaseConfig("QUANT_ACTIVE", 4, 0.02),
                               PhaseConfig("FROZEN", 2, 0.002)], batch_size=64, seed=seed)


def test_criterion_09_training_parity(report):
    t0 = time.perf_counter()
    spec = build_tinynet(10)
    gaps, accs = [], []
    for seed in range(3):
        ds = generate_synthetic(PARITY_DATA, seed)
        fp = train(instantiate(spec, QuantPlan(QuantMode.FP16), seed), ds, _parity_config(seed))
        hy = train(instantiate(spec, QuantPlan(QuantMode.HYBRID, alpha=0.5, rho=1.0), seed), ds,
                   _parity_config(seed))
        accs.append((fp.final_eval_accuracy, hy.final_eval_accuracy))
        gaps.append(fp.final_eval_accuracy - hy.final_eval_accuracy)
    med_gap = float(np.median(gaps))
    dt = time.perf_counter() - t0
    ok = med_gap <= 0.03 and dt < 1800
    pairs = ", ".join(f"{a:.3f}/{b:.3f}" for a, b in accs)
    report(9, "desk-scale training parity", ok, f"FP16/hybrid eval acc per seed {pairs}; median gap "
           f"{100 * med_gap:.2f}pp (tol 3pp), {dt:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 10: degeneracy
# ---------------------------------------------------------------------------

def _same_cost(a, b):
    return (a.muls, a.adds, a.macs, a.model_size_bits, a.energy_normalized, a.throughput_normalized) == \
        (b.muls, b.adds, b.macs, b.model_size_bits, b.energy_normalized, b.throughput_normalized)


def test_criterion_10_degeneracy(mb, report):
    t0 = time.perf_counter()
    tiny = build_tinynet(10)
    x = np.random.default_rng(10).normal(size=(8, 3, 32, 32)).astype(np.float32)
    results = {}
    for rho in (0.5, 1.0, 2.0):
        pairs = [(QuantPlan(QuantMode.HYBRID, alpha=1.0, rho=rho), QuantPlan(QuantMode.FP16), "a1=fp16"),
                 (QuantPlan(QuantMode.HYBRID, alpha=0.0, rho=rho), QuantPlan(QuantMode.STRASSEN, rho=rho),
                  "a0=strassen")]
        for hyb, ref, tag in pairs:
            cost_ok = all(_same_cost(evaluate(s, hyb), evaluate(s, ref)) for s in (mb, tiny))
            n1, n2 = instantiate(tiny, hyb, 3), instantiate(tiny, ref, 3)
            fwd_ok = True
            for net in (n1, n2):
                net.eval()
            fwd_ok &= np.array_equal(n1.forward(x).data, n2.forward(x).data)
            if ref.has_ternary_filters:
                for net in (n1, n2):
                    net.activate_quantization()
                fwd_ok &= np.array_equal(n1.forward(x).data, n2.forward(x).data)
                for net in (n1, n2):
                    net.freeze_and_fold()
                fwd_ok &= np.array_equal(n1.forward(x).data, n2.forward(x).data)
            results[(tag, rho)] = cost_ok and fwd_ok
    dt = time.perf_counter() - t0
    ok = all(results.values()) and dt < 10
    report(10, "degeneracy identities", ok, f"alpha=1 vs FP16 and alpha=0 vs STRASSEN at rho 0.5/1/2: "
           f"{sum(results.values())}/{len(results)} bitwise equal (cost + forward), {dt:.2f}s")
    assert ok, results


# ---------------------------------------------------------------------------
# 11: persistence
# ---------------------------------------------------------------------------

def test_criterion_11_persistence(tmp_path, report):
    t0 = time.perf_counter()
    spec = build_tinynet(10)
    x = np.random.default_rng(11).normal(size=(4, 3, 32, 32)).astype(np.float32)
    roundtrips = []
    for plan in (QuantPlan(QuantMode.FP16), QuantPlan(QuantMode.TWN),
                 QuantPlan(QuantMode.HYBRID, alpha=0.5, rho=1.0)):
        net = instantiate(spec, plan, 5)
        phases = [None]
        if plan.mode is not QuantMode.FP16:
            phases += ["activate", "freeze"]
        for step in phases:
            if step == "activate":
                net.activate_quantization()
            elif step == "freeze":
                net.freeze_and_fold()
            net.eval()
            blob = checkpoint_bytes(net, optimizer_state=[p.data * 0 + 1 for p in net.parameters()],
                                    rng_state={"k": 1}, cursor={"phase": 1, "epoch": 2})
            back = load_checkpoint_bytes(blob)
            back.network.eval()
            same_bytes = checkpoint_bytes(back.network, optimizer_state=back.optimizer_state,
                                          rng_state=back.rng_state, cursor=back.cursor) == blob
            same_out = np.array_equal(net.forward(x).data, back.network.forward(x).data)
            roundtrips.append(same_bytes and same_out)

    rng = np.random.default_rng(0)
    good = rng.integers(0, 256, (3, RECORD_BYTES), dtype=np.uint8)
    good[:, 0] = [0, 5, 9]
    (tmp_path / "good.bin").write_bytes(good.tobytes())
    images, labels = read_cifar10_records(tmp_path / "good.bin")
    reads_good = images.shape == (3, 3, 32, 32) and labels.tolist() == [0, 5, 9] and \
        np.array_equal(images.reshape(3, -1), good[:, 1:])
    bad_label = good.copy()
    bad_label[1, 0] = 10
    malformed = {"truncated": good.tobytes()[:-1], "bad-label": bad_label.tobytes(), "empty": b""}
    rejected = 0
    for name, data in malformed.items():
        (tmp_path / name).write_bytes(data)
        try:
            read_cifar10_records(tmp_path / name)
        except DatasetError:
            rejected += 1
    dt = time.perf_counter() - t0
    ok = all(roundtrips) and reads_good and rejected == len(malformed) and dt < 10
    report(11, "persistence", ok, f"{sum(roundtrips)}/{len(roundtrips)} checkpoint round trips byte- and "
           f"output-identical; CIFAR reader rejects {rejected}/{len(malformed)} malformed files, {dt:.2f}s")
    assert ok
