"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL summary that conftest prints at the
end of the session. Runtimes are asserted against the stated budgets.
"""
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from dagf import tensor as T
from dagf.data import (EvalProtocol, TrainConfig, dataset_l1, degrade, rmse, synthetic_dataset, train,
                       upsample_input)
from dagf.filters import BilateralParams, GIFParams, bilateral_filter, guided_image_filter, joint_bilateral_upsample
from dagf.gradsuite import END_TO_END_TOL, PRIMITIVE_TOL, run_suite
from dagf.kernels import apply_kernel_field, apply_kernel_field_naive
from dagf.losses import (DEFAULT_WEIGHTS, LossWeights, boundary_aware_loss, l1_loss, multi_stage_loss,
                         total_loss)
from dagf.network import DagfConfig, DagfModel, forward, init_params
from dagf.checkpoint import save_checkpoint
from dagf.tensor import Tensor

from oracles import bilateral_loop, gif_direct, jbu_loop

REPORT = []


@contextmanager
def criterion(number, title, budget_s, elapsed_before=0.0):
    """Time a criterion, record its PASS/FAIL line and enforce its runtime budget."""
    notes = []
    ok = False
    start = time.perf_counter()
    try:
        yield notes.append
        ok = True
    finally:
        elapsed = elapsed_before + time.perf_counter() - start
        over = elapsed > budget_s
        status = "PASS" if ok and not over else "FAIL"
        detail = notes[-1] if notes else ""
        if over:
            detail += f" (runtime over budget {budget_s:.0f}s)"
        REPORT.append((number, f"[{status}] criterion {number}: {title} - {detail} [{elapsed:.1f}s]"))
    assert not over, f"criterion {number} took {elapsed:.1f}s, budget {budget_s}s"


def criterion_lines():
    return [line for _, line in sorted(REPORT, key=lambda r: r[0])]


# 1 --------------------------------------------------------------------------------------
def test_c01_gif_oracle_equivalence():
    with criterion(1, "guided image filter vs direct kernel summation", 5.0) as note:
        rng = np.random.default_rng(101)
        worst = 0.0
        for _ in range(50):
            t, g = rng.random((16, 16)), rng.random((16, 16))
            for r in (1, 2, 4):
                for eps in (1e-4, 1e-2, 1.0):
                    out = guided_image_filter(t, g, GIFParams(r, eps))
                    worst = max(worst, float(np.max(np.abs(out - gif_direct(t, g, r, eps)))))
        note(f"max abs diff {worst:.2e} over 450 cases (tol 1e-5)")
        assert worst <= 1e-5


# 2 --------------------------------------------------------------------------------------
def test_c02_bilateral_and_jbu_oracles():
    with criterion(2, "bilateral and JBU vs naive double loops", 5.0) as note:
        rng = np.random.default_rng(202)
        worst_bf = worst_jbu = 0.0
        for _ in range(20):
            p = BilateralParams(sigma_s=rng.uniform(0.5, 1.5), sigma_r=rng.uniform(0.05, 0.5), radius=3)
            t, g = rng.random((8, 8)), rng.random((8, 8))
            out = bilateral_filter(t, g, p)
            worst_bf = max(worst_bf, float(np.max(np.abs(out - bilateral_loop(t, g, p.sigma_s, p.sigma_r, 3)))))
            t_lr, g_hr = rng.random((4, 4)), rng.random((8, 8))
            up = joint_bilateral_upsample(t_lr, g_hr, p, 2)
            ref = jbu_loop(t_lr, g_hr, p.sigma_s, p.sigma_r, 3, 2)
            worst_jbu = max(worst_jbu, float(np.max(np.abs(up - ref))))
        note(f"bilateral {worst_bf:.2e}, JBU {worst_jbu:.2e} (tol 1e-6)")
        assert worst_bf <= 1e-6 and worst_jbu <= 1e-6


# 3 --------------------------------------------------------------------------------------
def kernel_engine_outputs():
    outs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        for k in (1, 3, 5):
            f = rng.normal(size=(1, 3, 7, 6))
            w = rng.normal(size=(1, k * k, 7, 6))
            outs.append((apply_kernel_field(Tensor(f), Tensor(w)).data, apply_kernel_field_naive(f, w)))
    return outs


def test_c03_kernel_engine_oracle():
    with criterion(3, "kernel engine vs nested-loop oracle", 10.0) as note:
        with threadpool_limits(1):
            outs = kernel_engine_outputs()
        worst = max(float(np.max(np.abs(a - b))) for a, b in outs)
        rng = np.random.default_rng(3)
        exact = True
        for k in (1, 3, 5):
            f = rng.normal(size=(2, 4, 9, 8))
            w = np.zeros((2, k * k, 9, 8))
            w[:, (k * k) // 2] = 1.0
            exact &= np.array_equal(apply_kernel_field(Tensor(f), Tensor(w)).data, f)
        note(f"max abs diff {worst:.2e} over 300 cases (tol 1e-6); delta identity exact: {exact}")
        assert worst <= 1e-6 and exact


# 4 --------------------------------------------------------------------------------------
def test_c04_gradient_suite():
    with criterion(4, "finite-difference gradient suite", 120.0) as note:
        results = run_suite(seed=0)
        failed = [r for r in results if not r.passed]
        prim = max(r.error for r in results if r.tolerance == PRIMITIVE_TOL)
        e2e = max(r.error for r in results if r.tolerance == END_TO_END_TOL)
        note(f"{len(results)} checks, worst primitive/block {prim:.1e} (tol 1e-6), end-to-end {e2e:.1e} "
             f"(tol 1e-3), failures: {[r.name for r in failed]}")
        assert not failed


# 5 --------------------------------------------------------------------------------------
def test_c05_shape_grid():
    with criterion(5, "architecture shape grid (m, k) in {1..4} x {1,3,5,7} on 64x64", 60.0) as note:
        rng = np.random.default_rng(5)
        t = rng.random((1, 1, 64, 64)).astype(np.float32)
        g = rng.random((1, 3, 64, 64)).astype(np.float32)
        problems = []
        for m in (1, 2, 3, 4):
            for k in (1, 3, 5, 7):
                cfg = DagfConfig(m=m, k=k)
                params = init_params(cfg, seed=m * 10 + k)
                with T.no_grad():
                    out = forward(params, cfg, t, g)
                shapes = [o.shape for o in out.outputs]
                want = [(1, 1, 64 >> (m - 1 - i), 64 >> (m - 1 - i)) for i in range(m)]
                if shapes != want:
                    problems.append(f"m={m} k={k}: shapes {shapes}")
                if any(r.w.shape[1] != k * k for r in out.kernels):
                    problems.append(f"m={m} k={k}: kernel channels")
                att = np.concatenate([a.data.ravel() for a in out.attention_maps])
                if not (att.min() > 0 and att.max() < 1):
                    problems.append(f"m={m} k={k}: attention outside (0,1)")
                lambdas = [n for n in params if n.startswith("lambda")]
                if len(lambdas) != m - 1 or any(params[n].data.any() for n in lambdas):
                    problems.append(f"m={m} k={k}: lambdas {lambdas}")
        note(f"16 configurations, channels 32; problems: {problems or 'none'}")
        assert not problems


# 6 and 10 -------------------------------------------------------------------------------
TOY_CFG = DagfConfig(m=2, k=3, channels=8)
TOY_HYPER = TrainConfig(lr=1e-3, batch_size=8, patch_size=64, scale=16, mode="nearest", iterations=200, seed=0)


def toy_data():
    return synthetic_dataset(8, 64, seed=1), synthetic_dataset(4, 64, seed=99)


def toy_run(path=None, cfg=TOY_CFG, hyper=TOY_HYPER):
    data, _ = toy_data()
    with threadpool_limits(1):
        result = train(data, cfg, hyper)
    if path is not None:
        save_checkpoint(result.params, cfg, path, optimizer=result.optimizer, epoch=result.epoch)
    return result


@pytest.fixture(scope="module")
def toy_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("toy") / "run1.ckpt"
    start = time.perf_counter()
    result = toy_run(path)
    return path, result, time.perf_counter() - start


def test_c06_toy_training(toy_checkpoint):
    _, result, train_time = toy_checkpoint
    with criterion(6, "toy training run (8 pairs, 64x64, 16x nearest, m=2, channels=8, 200 iterations)",
                   600.0, elapsed_before=train_time) as note:
        data, held = toy_data()
        initial = dataset_l1(DagfModel(TOY_CFG, init_params(TOY_CFG, TOY_HYPER.seed)), data, TOY_HYPER)
        final = dataset_l1(DagfModel(TOY_CFG, result.params), data, TOY_HYPER)
        model = DagfModel(TOY_CFG, result.params)
        ours, base = [], []
        for guidance, gt in held:
            up = upsample_input(degrade(gt, 16, "nearest"), 16)
            ours.append(rmse(model(up, guidance), gt, EvalProtocol()))
            base.append(rmse(up, gt, EvalProtocol()))
        note(f"train L1 {initial:.4f} -> {final:.4f} (ratio {final / initial:.3f}, need <= 0.5); held-out RMSE "
             f"dagf {np.mean(ours):.2f} vs bicubic {np.mean(base):.2f} (per pair {np.round(ours, 1).tolist()} "
             f"vs {np.round(base, 1).tolist()}); {result.optimizer.step_count} steps in {train_time:.0f}s")
        assert result.optimizer.step_count == 200
        assert final <= 0.5 * initial
        assert np.mean(ours) < np.mean(base)


# 7 --------------------------------------------------------------------------------------
def test_c07_ablation_variants_differ():
    with criterion(7, "ablation mechanism: Model5 vs Model3 vs Model1 after toy training", 1800.0) as note:
        data, held = toy_data()
        hyper = TrainConfig(lr=1e-3, batch_size=8, patch_size=64, scale=16, iterations=40, seed=7)
        guidance, gt = held[0]
        up = upsample_input(degrade(gt, 16, "nearest"), 16)
        outs = {}
        for variant in ("Model5", "Model3", "Model1"):
            cfg = DagfConfig(m=2, k=3, channels=8, variant=variant)
            with threadpool_limits(1):
                res = train(data, cfg, hyper)
            outs[variant] = DagfModel(cfg, res.params)(up, guidance)
        diffs = {f"{a}/{b}": float(np.mean(np.abs(outs[a] - outs[b])))
                 for a, b in [("Model5", "Model3"), ("Model5", "Model1"), ("Model3", "Model1")]}
        note("pairwise output L1 " + ", ".join(f"{k} {v:.2e}" for k, v in diffs.items())
             + f" ({hyper.iterations} iterations each, shared seed and data)")
        assert all(v > 0 for v in diffs.values())


# 8 --------------------------------------------------------------------------------------
def test_c08_loss_identities():
    with criterion(8, "loss identities", 1.0) as note:
        rng = np.random.default_rng(8)
        gt = rng.random((1, 1, 16, 16))
        outs = [T.resize(Tensor(gt), 4, 4, "bicubic"), T.resize(Tensor(gt), 8, 8, "bicubic"), Tensor(gt)]
        const = np.full((1, 1, 16, 16), 0.3)
        exact = [Tensor(np.full((1, 1, 4, 4), 0.3)), Tensor(np.full((1, 1, 8, 8), 0.3)), Tensor(const)]
        _, terms = total_loss(exact, const, DEFAULT_WEIGHTS)
        checks = {
            "l1(gt, gt)": float(l1_loss(gt, gt).data),
            "ba(gt, gt)": float(boundary_aware_loss(gt, gt).data),
            "ms(all stages exact)": float(multi_stage_loss(exact, const).data),
            "total(all stages exact)": terms["total"],
            "ba(flat, flat + c)": float(boundary_aware_loss(const, const + 0.4).data),
        }
        final_epoch = 99
        w = LossWeights(end_epoch=final_epoch)
        sched = (w.omega3_at(0), w.omega3_at(final_epoch))
        note(", ".join(f"{k}={v:g}" for k, v in checks.items()) + f"; omega3 at epoch 0/final = {sched}")
        assert all(v == 0.0 for v in checks.values())
        assert sched == (1.0, 0.0)
        del outs


# 9 --------------------------------------------------------------------------------------
NYU_TARGETS = {4: 8.16, 8: 14.22, 16: 22.32}


def test_c09_nyu_bicubic_row(tmp_path):
    manifest = os.environ.get("DAGF_NYU_MANIFEST")
    if not manifest:
        REPORT.append((9, "[SKIP] criterion 9: NYU v2 bicubic row - dataset absent (set DAGF_NYU_MANIFEST to run)"))
        pytest.skip("NYU v2 test depth maps not available (set DAGF_NYU_MANIFEST)")
    from dagf import cli
    value_scale = os.environ.get("DAGF_NYU_VALUE_SCALE", "6553.5")
    with criterion(9, "NYU v2 bicubic row within 10%", 300.0) as note:
        out = tmp_path / "nyu.csv"
        code = cli.main(["eval", "--manifest", manifest, "--methods", "bicubic", "--scales", "4", "8", "16",
                         "--mode", "nearest", "--convention", "centimeters", "--value-scale", value_scale,
                         "--out", str(out)])
        assert code == 0
        import csv
        with open(out) as fh:
            rows = [r for r in csv.DictReader(fh) if r["image"] == "average"]
        got = {int(r["scale"]): float(r["rmse"]) for r in rows}
        rel = {s: abs(got[s] - v) / v for s, v in NYU_TARGETS.items()}
        note(f"RMSE {got} vs {NYU_TARGETS}, relative error {rel}")
        assert all(v <= 0.10 for v in rel.values())


# 10 -------------------------------------------------------------------------------------
def test_c10_determinism(toy_checkpoint, tmp_path):
    first_path, _, _ = toy_checkpoint
    with criterion(10, "strict-mode determinism of criteria 3 and 6", 600.0) as note:
        a = kernel_engine_outputs()
        with threadpool_limits(1):
            b = kernel_engine_outputs()
        same3 = all(x[0].tobytes() == y[0].tobytes() for x, y in zip(a, b))
        second = tmp_path / "run2.ckpt"
        toy_run(second)
        same6 = first_path.read_bytes() == second.read_bytes()
        note(f"kernel engine outputs identical: {same3}; toy checkpoints byte-identical: {same6}")
        assert same3 and same6
