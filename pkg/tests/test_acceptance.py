"""Acceptance checks, one test per criterion.

Each test appends a ``criterion N: PASS|FAIL ...`` line to ``REPORT`` before
asserting; the conftest hook prints the collected lines at the end of the
session. Run this file directly for the same report without pytest.

Criterion 8 uses the Communities and Crimes CSV when ``FAIRKERNEL_CRIMES_CSV``
points at a headed copy of it, and the synthetic substitute otherwise.
"""

import json
import os
import time
from pathlib import Path

import numpy as np

from fairkernel.cli import main as cli_main
from fairkernel.dataset import synthetic_dataset
from fairkernel.decomposition import (
    decompose,
    decompose_path,
    oracle_decompose,
    protected_attributes,
    relative_error,
    residual_protected_norm,
)
from fairkernel.exceptions import DegenerateAttributeError
from fairkernel.experiments import ExperimentConfig, run_experiment
from fairkernel.kernels import eigen_bounds, rbf_kernel
from fairkernel.metrics import gdp, hgr_estimate, pairwise_fairness
from fairkernel.nystroem import NystroemParams, nystroem_inverse
from fairkernel.regressors import svr_duality_gap, svr_fit, svr_objectives

REPORT = []

GRID = {"n": (5, 20, 50), "d": (2, 5), "gamma": (0.05, 0.5), "alpha": (0.05, 0.1),
        "m": (1, 3, 10), "l": (1, 2)}
CRIMES_ENV = "FAIRKERNEL_CRIMES_CSV"
CRIMES_EXCLUDE = ("state", "county", "community", "communityname", "fold")


def record(number, ok, detail):
    REPORT.append(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def grid_instances(count=50, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        pick = {k: v[rng.integers(len(v))] for k, v in GRID.items()}
        X = rng.standard_normal((pick["n"], pick["d"]))
        P = rng.standard_normal((pick["n"], pick["l"]))
        out.append((pick, rbf_kernel(X, pick["gamma"]), P))
    return out


def _run(fn):
    try:
        return fn(), None
    except DegenerateAttributeError as exc:
        return None, exc


def test_criterion_1_oracle_equivalence():
    start = time.perf_counter()
    worst, agree, bad = 0.0, 0, []
    for idx, (g, K, P) in enumerate(grid_instances()):
        fast, e1 = _run(lambda: decompose(K, P, g["m"], g["alpha"])[0].data)
        slow, e2 = _run(lambda: oracle_decompose(K, P, g["m"], g["alpha"])[0])
        if e1 is not None or e2 is not None:
            same = (e1 is not None and e2 is not None and type(e1) is type(e2)
                    and e1.iteration == e2.iteration)
            agree += same
            if not same:
                bad.append((idx, repr(e1), repr(e2)))
            continue
        scale = np.linalg.norm(K.data)
        if g["m"] * g["l"] >= g["n"] and max(np.linalg.norm(fast), np.linalg.norm(slow)) <= 1e-8 * scale:
            agree += 1
            continue
        err = relative_error(fast, slow)
        worst = max(worst, err)
        if err <= 1e-8:
            agree += 1
        else:
            bad.append((idx, err))
    elapsed = time.perf_counter() - start
    record(1, not bad and elapsed < 30,
           f"{agree}/50 instances agree, worst rel. error {worst:.2e}, {elapsed:.1f}s"
           + (f", mismatches {bad[:3]}" if bad else ""))


def _iterates(K, P, g):
    """Distinct kernels K_(0..i) actually reached, stopping early on exhaustion."""
    path = decompose_path(K, P, range(g["m"] + 1), g["alpha"], saturate=True)
    seen, out = set(), []
    for Km, T in path:
        if T.m not in seen:
            seen.add(T.m)
            out.append(Km.data)
    return out


def test_criterion_2_psd_preservation():
    worst, checked = 0.0, 0
    for g, K, P in grid_instances():
        for Km in _iterates(K, P, g):
            lo, hi = eigen_bounds(Km)
            worst = min(worst, lo / hi if hi > 0 else 0.0)
            checked += 1
    record(2, worst >= -1e-8,
           f"{checked} kernels, worst min/max eigenvalue ratio {worst:.2e} (bound -1e-8)")


def test_criterion_3_null_space():
    worst_res, worst_dot = 0.0, 0.0
    for g, K, P in grid_instances():
        ks = _iterates(K, P, g)
        pnorm = np.linalg.norm(protected_attributes(P).data, axis=0)
        for Kp, Kn in zip(ks, ks[1:]):
            r = residual_protected_norm(Kp, Kn, P, g["alpha"])
            worst_res = max(worst_res, float(np.max(r / pnorm)))
        try:
            _, space = oracle_decompose(K, P, len(ks) - 1, g["alpha"])
        except DegenerateAttributeError:
            continue
        Ws = space.w_history
        for i in range(len(Ws)):
            for j in range(i):
                dots = np.abs(Ws[i].T @ Ws[j])
                norms = np.outer(np.linalg.norm(Ws[i], axis=0), np.linalg.norm(Ws[j], axis=0))
                worst_dot = max(worst_dot, float(np.max(dots / norms)))
    record(3, worst_res <= 1e-6 and worst_dot <= 1e-8,
           f"worst residual/||p|| {worst_res:.2e} (bound 1e-6), "
           f"worst |w_i.w_j|/(|w_i||w_j|) {worst_dot:.2e} (bound 1e-8)")


def ridge_r2(K, p, alpha):
    p = (p - p.mean()) / p.std()
    fit = K @ np.linalg.solve(K + alpha * np.eye(p.size), p)
    return 1.0 - np.sum((p - fit) ** 2) / np.sum(p**2)


def test_criterion_4_information_removal():
    start = time.perf_counter()
    data = synthetic_dataset(n=300, d=5, seed=0)
    p = data.P[:, 0]
    K = rbf_kernel(data.X, 0.05)
    (K0, _), (K20, T20) = decompose_path(K, p, [0, 20], 0.1, saturate=True)
    r0, r20 = ridge_r2(K0.data, p, 0.1), ridge_r2(K20.data, p, 0.1)
    elapsed = time.perf_counter() - start
    record(4, r0 > 0.5 and r20 < 0.05 and elapsed < 10,
           f"ridge R^2 of p: {r0:.3f} at m=0, {r20:.2e} at m=20 "
           f"({T20.m} iterations run), {elapsed:.2f}s")


def test_criterion_5_nystroem():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    K = rbf_kernel(rng.standard_normal((200, 4)), 0.1).data
    alpha = 0.1
    exact = np.linalg.inv(K + alpha * np.eye(200))
    full = nystroem_inverse(K, alpha, NystroemParams.from_fraction(200, 1.0, seed=0))
    full_err = relative_error(full, exact)
    fractions = (0.1, 0.25, 0.5, 1.0)
    means = []
    for f in fractions:
        errs = [relative_error(nystroem_inverse(K, alpha, NystroemParams.from_fraction(200, f, s)),
                               exact) for s in range(20)]
        means.append(float(np.mean(errs)))
    elapsed = time.perf_counter() - start
    monotone = all(b <= a for a, b in zip(means, means[1:]))
    record(5, full_err <= 1e-6 and monotone and elapsed < 60,
           f"fraction 1.0 rel. error {full_err:.2e}; mean errors "
           + ", ".join(f"{f}:{e:.3e}" for f, e in zip(fractions, means)) + f"; {elapsed:.1f}s")


def test_criterion_6_svr():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 51))
        X = rng.standard_normal((n, 3))
        K = rbf_kernel(X, float(rng.choice([0.1, 0.5, 1.0])))
        y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(n)
        model = svr_fit(K, y, epsilon=float(rng.choice([0.01, 0.1])),
                        C=float(rng.choice([0.5, 1.0, 10.0])))
        _, dual = svr_objectives(model, K, y)
        worst = max(worst, svr_duality_gap(model, K, y) / (1.0 + abs(dual)))
    X = rng.standard_normal((30, 2))
    K = rbf_kernel(X, 0.5)
    flat = svr_fit(K, np.full(30, 3.0), epsilon=0.0)
    y = rng.uniform(-1, 1, 30)
    wide = svr_fit(K, y, epsilon=5.0)
    degenerate = flat.support_indices.size == 0 and wide.support_indices.size == 0
    record(6, worst <= 1e-6 and degenerate,
           f"worst gap/(1+|dual|) {worst:.2e} over 20 instances; support vectors "
           f"constant target {flat.support_indices.size}, wide tube {wide.support_indices.size}")


def test_criterion_7_metric_sanity():
    rng = np.random.default_rng(7)
    p = rng.standard_normal(500)
    y = p + rng.standard_normal(500)
    const = np.full(500, 1.25)
    g0, pf0 = gdp(const, p), pairwise_fairness(y, const, p)
    hgr, gd, pf = [], [], []
    for s in range(20):
        r = np.random.default_rng(1000 + s)
        p, yhat, yy = r.standard_normal((3, 2000))
        hgr.append(hgr_estimate(yhat, p))
        gd.append(gdp(yhat, p) / yhat.std())
        pf.append(pairwise_fairness(yy, yhat, p))
    p = rng.standard_normal(1000)
    same = hgr_estimate(p, p)
    ok = (g0 == 0.0 and pf0 == 0.0 and np.mean(hgr) <= 0.15 and np.mean(gd) <= 0.05
          and np.mean(pf) <= 0.05 and same >= 0.95)
    record(7, ok,
           f"constant: gdp {g0}, pf {pf0}; independent means: hgr {np.mean(hgr):.3f}, "
           f"gdp/std {np.mean(gd):.4f}, pf {np.mean(pf):.4f}; hgr(p, p) {same:.3f}")


def monotone_with_slack(values, increasing):
    """At most one step against the trend, of at most 10% of the previous value."""
    inversions = []
    for a, b in zip(values, values[1:]):
        against = b < a if increasing else b > a
        if against:
            inversions.append(abs(b - a) / abs(a) if a != 0 else np.inf)
    return len(inversions) <= 1 and all(r <= 0.10 for r in inversions), inversions


def _trend_config():
    m_values = [0, 5, 30, 45, 60, 80]
    path = os.environ.get(CRIMES_ENV)
    if path:
        base = {"dataset": {"path": path, "target_column": "ViolentCrimesPerPop",
                            "protected_columns": ["racepctblack"],
                            "exclude_columns": list(CRIMES_EXCLUDE)}}
        source = f"crimes csv ({path})"
    else:
        base = {"synthetic": {"n": 300, "d": 5, "seed": 0}}
        source = "synthetic substitute (n=300)"
    svr = ExperimentConfig.from_dict({**base, "model": {"type": "svr"},
                                      "decomposition": {"m_values": m_values},
                                      "cv": {"k": 5, "seed": 0}})
    dummy = ExperimentConfig.from_dict({**base, "model": {"type": "dummy"},
                                        "decomposition": {"m_values": [0]},
                                        "cv": {"k": 5, "seed": 0}})
    return svr, dummy, source


def test_criterion_8_tradeoff_trend():
    start = time.perf_counter()
    svr_cfg, dummy_cfg, source = _trend_config()
    res = run_experiment(svr_cfg)
    base = run_experiment(dummy_cfg).aggregates[0]["mae"]["mean"]
    ms = list(svr_cfg.m_values)
    g = [res.aggregates[m]["gdp"]["mean"] for m in ms]
    e = [res.aggregates[m]["mae"]["mean"] for m in ms]
    g_ok, g_inv = monotone_with_slack(g, increasing=False)
    e_ok, e_inv = monotone_with_slack(e, increasing=True)
    beats = e[0] <= 0.8 * base
    elapsed = time.perf_counter() - start
    record(8, g_ok and e_ok and beats and elapsed < 900,
           f"{source}: gdp " + ", ".join(f"{v:.3f}" for v in g)
           + "; mae " + ", ".join(f"{v:.3f}" for v in e)
           + f"; dummy mae {base:.3f}; inversions gdp {len(g_inv)} mae {len(e_inv)}; "
           f"{len(res.warnings)} warnings; {elapsed:.1f}s")


def test_criterion_9_multi_protected():
    cfg = ExperimentConfig.from_dict({"synthetic": {"n": 300, "d": 5, "protected": 2, "seed": 0},
                                      "model": {"type": "svr"},
                                      "decomposition": {"m_values": [0, 20]},
                                      "cv": {"k": 5, "seed": 0}})
    agg = run_experiment(cfg).aggregates
    names = [k for k in agg[0] if k.startswith("gdp:")]
    drops = {k: (agg[0][k]["mean"], agg[20][k]["mean"]) for k in names}
    reduced = len(names) == 2 and all(after < before for before, after in drops.values())
    data = synthetic_dataset(n=120, d=4, seed=9)
    K = rbf_kernel(data.X, 0.5)
    worst = 0.0
    for m in (1, 5, 15):
        scalar, _ = decompose(K, data.P[:, 0], m, 0.1)
        matrix, _ = decompose(K, data.P[:, 0], m, 0.1, matrix_form=True)
        worst = max(worst, relative_error(matrix.data, scalar.data))
    record(9, reduced and worst <= 1e-10,
           "gdp m=0 -> m=20: " + ", ".join(f"{k} {a:.3f}->{b:.3f}" for k, (a, b) in drops.items())
           + f"; l=1 matrix vs scalar rel. error {worst:.2e}")


def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synthetic": {"n": 120, "seed": 3}, "model": {"type": "svr"},
                               "decomposition": {"m_values": [0, 3, 8]},
                               "cv": {"k": 4, "seed": 11}}))
    commands = {"run": [], "sweep-alpha": ["--values", "0.01,0.1,1"],
                "sweep-nystroem": ["--fractions", "0.25,0.5"]}
    mismatched, compared = [], 0
    for cmd, extra in commands.items():
        outs = []
        for rep, threads in (("a", "1"), ("b", "3")):
            out = tmp_path / f"{cmd}-{rep}"
            code = cli_main([cmd, "--config", str(cfg), "--output", str(out),
                             "--threads", threads, *extra])
            assert code == 0, f"{cmd} exited with {code}"
            outs.append(out)
        files = sorted(p.name for p in outs[0].iterdir())
        for name in files:
            compared += 1
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                mismatched.append(f"{cmd}/{name}")
    record(10, compared >= 6 and not mismatched,
           f"{compared} output files compared across repeated runs (1 vs 3 threads), "
           f"mismatches {mismatched}")


if __name__ == "__main__":
    import tempfile

    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as tmp:
                        fn(Path(tmp))
                else:
                    fn()
            except AssertionError:
                pass
    # sorted() puts criterion_10 after criterion_1; print in numeric order
    for line in sorted(REPORT, key=lambda s: int(s.split()[1].rstrip(":"))):
        print(line)
