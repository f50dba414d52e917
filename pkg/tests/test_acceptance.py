"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed as the tests run (visible with ``-s``) and again in
the "acceptance criteria" section of the terminal summary.

Criteria 10 and 11 train the auto-encoder at desk scale, which takes most
of an hour on one core. The trained parameters are cached under pytest's
cache directory, keyed by the training configuration, so reruns are fast;
``pytest --cache-clear`` forces a retrain.
"""

import hashlib
import json
import os
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, fd_point

from jointsparse.cli import main as cli_main
from jointsparse.experiments import (
    ExperimentConfig,
    evaluate,
    read_report,
    run_convergence_study,
    scenario_data,
    train_network,
)
from jointsparse.network import (
    NetworkArch,
    approximation_forward,
    encoder_forward,
    init_params,
    load_params,
    save_params,
)
from jointsparse.signal_model import (
    ComplexMatrix,
    NoiseModel,
    RngStream,
    SparsityConfig,
    complex_matmul,
    gen_measurement_matrix,
    gen_signals,
    gen_support,
    measure,
)
from jointsparse.solvers import (
    GroupLassoProblem,
    bcd_mmv,
    group_lasso_objective,
    kkt_threshold,
    pcd_mmv,
    row_update,
)
from jointsparse.training import finite_difference_gradients


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def instance(seed, N=50, L=15, M=4, p=0.1, sigma2=0.1, lam_frac=0.1):
    s = RngStream(1000 + seed)
    x = gen_signals(gen_support(SparsityConfig("iid", N, p=p), s.child(1)), N, M, s.child(2))
    a = gen_measurement_matrix(L, N, s.child(3))
    y = measure(a, x, NoiseModel(sigma2), s.child(4))
    return GroupLassoProblem(a, y, lam_frac * kkt_threshold(a, y)), x


INSTANCES = 20


def test_criterion_01_solver_cross_validation():
    t0 = time.perf_counter()
    worst_pair = worst_bcd = worst_pcd = 0.0
    for seed in range(INSTANCES):
        p, _ = instance(seed)
        ref = bcd_mmv(p, k_max=5000, stop_tol=0.0).objective_history[-1]
        fb = bcd_mmv(p).objective_history[-1]
        # PCD's diminishing step needs far more than 200 iterations to settle
        fp = pcd_mmv(p, k_max=5000, stop_tol=1e-13).objective_history[-1]
        worst_pair = max(worst_pair, abs(fb - fp) / ref)
        worst_bcd = max(worst_bcd, abs(fb - ref) / ref)
        worst_pcd = max(worst_pcd, abs(fp - ref) / ref)
    elapsed = time.perf_counter() - t0
    ok = worst_pair < 1e-3 and worst_bcd < 1e-4 and worst_pcd < 1e-4 and elapsed < 60
    record(1, ok, f"BCD vs PCD {worst_pair:.2e} (<1e-3), BCD vs ref {worst_bcd:.2e}, "
                  f"PCD vs ref {worst_pcd:.2e} (<1e-4), {elapsed:.1f} s (<60 s)")


def test_criterion_02_bcd_monotone_per_row():
    violations = updates = 0
    for seed in range(INSTANCES):
        p, _ = instance(seed)
        n, _, m = p.dims
        prev = [group_lasso_objective(p, ComplexMatrix.zeros(n, m))]

        def on_row(k, i, xr, xi):
            nonlocal violations, updates
            f = group_lasso_objective(p, ComplexMatrix(xr[:, 0], xi[:, 0]))
            updates += 1
            if f > prev[0] + 1e-12 * max(1.0, abs(prev[0])):
                violations += 1
            prev[0] = f

        bcd_mmv(p, on_row=on_row)
    record(2, violations == 0, f"{violations} increases over {updates} row updates")


def test_criterion_03_block_optimality():
    gen = np.random.default_rng(3)
    worst = -np.inf
    pairs = 0
    for seed in range(50):
        p, _ = instance(seed % INSTANCES, lam_frac=0.05)
        n, _, m = p.dims
        x = ComplexMatrix(gen.standard_normal((n, m)), gen.standard_normal((n, m)))
        i = int(gen.integers(n))
        row = row_update(p, x, i)
        re, im = x.re.copy(), x.im.copy()
        re[i], im[i] = row.re[0], row.im[0]
        best = group_lasso_objective(p, ComplexMatrix(re, im))
        for _ in range(100):
            d = gen.standard_normal(2 * m)
            d *= 1e-2 / np.linalg.norm(d)
            pr, pi = re.copy(), im.copy()
            pr[i] += d[:m]
            pi[i] += d[m:]
            worst = max(worst, best - group_lasso_objective(p, ComplexMatrix(pr, pi)))
        pairs += 1
    record(3, worst <= 1e-10, f"{pairs} pairs x 100 perturbations, "
                              f"max f(row) - f(perturbed) = {worst:.2e} (<=1e-10)")


def test_criterion_04_kkt_zero_solution():
    failures = []
    for seed in range(INSTANCES):
        p, _ = instance(seed)
        thr = kkt_threshold(p.a, p.y)
        above = GroupLassoProblem(p.a, p.y, 1.01 * thr)
        below = GroupLassoProblem(p.a, p.y, 0.99 * thr)
        for name, solve in (("BCD", bcd_mmv), ("PCD", pcd_mmv)):
            xa = solve(above).x_hat
            if np.any(xa.re != 0) or np.any(xa.im != 0):
                failures.append(f"{name} nonzero above threshold (instance {seed})")
            if not np.any(solve(below).x_hat.row_norms() > 0):
                failures.append(f"{name} all-zero below threshold (instance {seed})")
    record(4, not failures, f"{2 * INSTANCES} solves per side, failures: {failures or 'none'}")


def test_criterion_05_complex_real_equivalence():
    gen = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        r, k, c = (int(v) for v in gen.integers(1, 9, size=3))
        a = ComplexMatrix(gen.standard_normal((r, k)), gen.standard_normal((r, k)))
        x = ComplexMatrix(gen.standard_normal((k, c)), gen.standard_normal((k, c)))
        ref = np.zeros((r, c), dtype=complex)
        for i in range(r):
            for j in range(c):
                for t in range(k):
                    ref[i, j] += complex(a.re[i, t], a.im[i, t]) * complex(x.re[t, j],
                                                                             x.im[t, j])
        got = complex_matmul(a, x).to_complex()
        worst = max(worst, np.max(np.abs(got - ref)) / np.max(np.abs(ref)))
    record(5, worst < 1e-12, f"100 random shapes, max relative error {worst:.2e} (<1e-12)")


def test_criterion_06_unrolling_fidelity():
    worst = 0.0
    for seed in range(10):
        p, x = instance(seed)
        arch = NetworkArch(50, 15, 4, U=20, V=0, lam=float(p.lam))
        params = init_params(arch, RngStream(seed)).with_encoder(p.a)
        y = encoder_forward(params, x, NoiseModel(0.1), RngStream(seed, 9))
        states = approximation_forward(params, y, keep_states=True)
        ref = pcd_mmv(GroupLassoProblem(p.a, y, p.lam), k_max=20, stop_tol=0.0,
                      keep_iterates=True).iterates
        for k in range(1, 21):
            got = states[k].to_matrix()[0]
            worst = max(worst, np.max(np.abs(got.re - ref[k - 1].re)),
                        np.max(np.abs(got.im - ref[k - 1].im)))
    record(6, worst <= 1e-12, f"10 instances x 20 layers, max |layer - iterate| = {worst:.2e}")


def test_criterion_07_gradient_check():
    t0 = time.perf_counter()
    worst, worst_name = 0.0, ""
    for seed in range(20):
        params, x, noise, _, grads, _ = fd_point(seed)
        fd = finite_difference_gradients(params, x, noise, eps=1e-6)
        for name, g, f in zip(params.names(), grads.arrays(), fd):
            scale = max(np.max(np.abs(g)), np.max(np.abs(f)), 1e-12)
            err = np.max(np.abs(g - f)) / scale
            if err > worst:
                worst, worst_name = err, name
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 300
    record(7, ok, f"20 kink-free configurations, worst relative error {worst:.2e} "
                  f"({worst_name}), {elapsed:.1f} s (<300 s)")


def lasso_cd_oracle(a: np.ndarray, y: np.ndarray, lam: float, sweeps: int = 20000):
    """Scalar complex LASSO by plain coordinate descent."""
    n = a.shape[1]
    x = np.zeros(n, dtype=complex)
    r = y.astype(complex).copy()
    c = np.sum(np.abs(a) ** 2, axis=0)
    for _ in range(sweeps):
        biggest = 0.0
        for i in range(n):
            z = np.vdot(a[:, i], r) + c[i] * x[i]
            mag = abs(z)
            new = 0j if mag <= lam else (1 - lam / mag) * z / c[i]
            if new != x[i]:
                r -= a[:, i] * (new - x[i])
                biggest = max(biggest, abs(new - x[i]))
                x[i] = new
        if biggest < 1e-15:
            break
    return 0.5 * np.linalg.norm(a @ x - y) ** 2 + lam * np.sum(np.abs(x))


def test_criterion_08_smv_reduction():
    worst = 0.0
    for seed in range(INSTANCES):
        p, _ = instance(seed, M=1)
        f_ref = lasso_cd_oracle(p.a.to_complex(), p.y.to_complex()[:, 0], float(p.lam))
        fb = bcd_mmv(p, k_max=5000, stop_tol=1e-15).objective_history[-1]
        # the diminishing step settles slowly; give PCD room to converge
        fp = pcd_mmv(p, k_max=100_000, stop_tol=1e-15).objective_history[-1]
        worst = max(worst, abs(fb - f_ref) / f_ref, abs(fp - f_ref) / f_ref)
    record(8, worst < 1e-6, f"{INSTANCES} SMV instances, max relative objective gap "
                            f"{worst:.2e} (<1e-6)")


def test_criterion_09_convergence_trends():
    cfg = ExperimentConfig.from_dict({
        "scenario": {"N": 100, "L": 15, "M": 4, "mode": "iid", "p": 0.1, "sigma2": 0.1},
        "T": 100, "validation": 100, "reps": 5})
    res = run_convergence_study(cfg)
    kb = res.iterations_to_within("BCD")
    kp = res.iterations_to_within("PCD")
    tb, tp = res.per_iteration_s["BCD"], res.per_iteration_s["PCD"]
    cores = os.cpu_count()
    ok = kb < kp and tp < tb
    record(9, ok, f"within 10% of final MSE after BCD {kb} vs PCD {kp} iterations; "
                  f"per iteration BCD {tb * 1e3:.3g} ms vs PCD {tp * 1e3:.3g} ms "
                  f"on {cores} core(s), batch of 100 samples")


# -- desk-scale training (criteria 10 and 11) ---------------------------------

CORRELATED = {
    "scenario": {"N": 100, "L": 20, "M": 4, "mode": "grouped", "G": 10, "sigma2": 0.1},
    "T": 1000, "validation": 100, "seeds": {"data": 0, "noise": 1, "init": 2},
    "net": {"U": 20, "V": 3, "hidden": [64, 64], "lambda": 16.0,
            "schedule": {"form": "constant", "gamma0": 0.2}},
    "train": {"samples": 50000, "batch_size": 64, "epochs": 20, "lr": 3e-3},
}

_TRAINED = {}


def trained_network(request):
    """Train once per session; reuse a cached checkpoint when the
    configuration is unchanged."""
    key = hashlib.sha256(json.dumps(CORRELATED, sort_keys=True).encode()).hexdigest()[:16]
    if key in _TRAINED:
        return _TRAINED[key]
    cache = request.config.cache.mkdir("jointsparse") / f"correlated_{key}.json"
    cfg = ExperimentConfig.from_dict(CORRELATED)
    if cache.exists():
        params, train_s = load_params(cache), None
    else:
        t0 = time.perf_counter()
        params = train_network(cfg).params
        train_s = time.perf_counter() - t0
        save_params(cache, params)
    _TRAINED[key] = (cfg, params, train_s)
    return _TRAINED[key]


def correlated_rows(request):
    cfg, params, train_s = trained_network(request)
    data = scenario_data(cfg, cfg.scenario)
    rows = {alg: evaluate(alg, data, cfg, params if alg != "BCD" else None)
            for alg in ("BCD", "LEARNED", "GROUP_LASSO_DL")}
    return rows, train_s


@pytest.mark.slow
def test_criterion_10_learned_beats_iid_group_lasso(request):
    rows, train_s = correlated_rows(request)
    learned, iid = rows["LEARNED"].mse, rows["BCD"].mse
    budget = "cached checkpoint" if train_s is None else f"trained in {train_s / 60:.1f} min"
    ok = learned < iid and (train_s is None or train_s <= 7200)
    record(10, ok, f"LEARNED {learned:.4f} vs GROUP LASSO (IID) {iid:.4f} test MSE, "
                   f"T=1000, {budget} (<=120 min)")


@pytest.mark.slow
def test_criterion_11_learned_pilots_help_group_lasso(request):
    rows, _ = correlated_rows(request)
    dl, iid = rows["GROUP_LASSO_DL"].mse, rows["BCD"].mse
    record(11, dl <= iid, f"GROUP LASSO (DL) {dl:.4f} vs GROUP LASSO (IID) {iid:.4f} test MSE")


def test_criterion_12_cli_determinism(tmp_path):
    doc = {"scenario": {"N": 60, "L": 15, "M": 4, "mode": "iid", "p": 0.1, "sigma2": 0.1},
           "algorithms": ["BCD", "PCD", "AMP"], "T": 50, "validation": 20,
           "seeds": {"data": 11, "noise": 12, "init": 13}, "sweep": {"ratio": [0.2, 0.3]},
           "reps": 1}
    (tmp_path / "c.json").write_text(json.dumps(doc))
    runs = []
    for j in range(2):
        out = tmp_path / f"r{j}.csv"
        code = cli_main(["bench", "--study", "sweep", "--config", str(tmp_path / "c.json"),
                         "--output", str(out)])
        assert code == 0
        runs.append([r.mse for r in read_report(out)])
    ok = runs[0] == runs[1] and len(runs[0]) == 6
    record(12, ok, f"two CLI sweeps, {len(runs[0])} mse values, bit-identical: "
                   f"{runs[0] == runs[1]}")
