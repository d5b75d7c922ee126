"""Acceptance gate: one test per criterion, each reported as PASS/FAIL in the summary.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest

from conftest import cantilever_bc
from oracles import brute_force_cone_weights, gaussian_elimination_solve, top88_port
from toporeparam.cnn import CnnArchitecture, cnn_forward, init_params
from toporeparam.fem import Grid, assemble, element_stiffness_matrix, solve
from toporeparam.optimizers import OcState, lbfgs_minimize, oc_step
from toporeparam.projection import project, project_backward
from toporeparam.runner import CnnObjective, bench, density_to_pgm, emit_artifacts, ensemble, run
from toporeparam.simp import ComplianceProblem, ConeFilter, SimpConfig, young_modulus
from toporeparam.tasks import builtin_task, builtin_tasks, parse_task

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def mbb():
    return builtin_task("mbb_beam_60x20", check_solvable=True)


@pytest.mark.criterion(1, "end-to-end CNN gradient vs central differences")
def test_end_to_end_gradient(record_property):
    start = time.perf_counter()
    task = parse_task(
        """
name: fd_cantilever_8x8
nelx: 8
nely: 8
volfrac: 0.4
supports:
  - {nodes: "edge(left)", axes: xy}
loads:
  - {nodes: "point(8, 4)", fy: -1.0}
"""
    )
    arch = CnnArchitecture(task.shape, latent_dim=4, dense_channels=4, conv_channels=(4, 3, 2, 2, 1))
    objective = CnnObjective(ComplianceProblem(task.bc, task.simp_config), task.volfrac, arch)
    params = init_params(arch, 0)
    params.biases = np.random.default_rng(1).normal(scale=0.1, size=5)
    theta = params.flatten()
    _, grad = objective(theta)
    h = 1e-6
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (objective(theta + e)[0] - objective(theta - e)[0]) / (2 * h)
    rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
    elapsed = time.perf_counter() - start
    record_property("detail", f"{theta.size} parameters, relative error {rel:.2e} (<= 1e-4), {elapsed:.1f}s (< 60s)")
    assert rel <= 1e-4
    assert elapsed < 60


@pytest.mark.criterion(2, "volume exactness over 1000 projections")
def test_volume_exactness(record_property):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        shape = tuple(rng.integers(1, 65, size=2))
        scale = 10 ** rng.uniform(-3, 2.5)
        xhat = rng.normal(size=shape) * scale + rng.normal() * 100
        volfrac = rng.uniform(0.01, 0.99)
        worst = max(worst, abs(project(xhat, volfrac).x.mean() - volfrac))
    record_property("detail", f"max |mean(x) - V0| = {worst:.2e} (<= 1e-6)")
    assert worst <= 1e-6


@pytest.mark.criterion(3, "OC parity with an independent 88-line port on MBB 60x20")
def test_oc_parity(mbb, record_property):
    start = time.perf_counter()
    ours = run(mbb, "oc")
    reference, _, _ = top88_port(60, 20, 0.5)
    rel = abs(ours.compliance - reference) / reference
    elapsed = time.perf_counter() - start
    record_property("detail", f"ours {ours.compliance:.4f} vs port {reference:.4f}, relative {rel:.2e} (<= 1e-2), {elapsed:.1f}s (< 120s)")
    assert rel <= 1e-2
    assert elapsed < 120


@pytest.mark.criterion(4, "MBB 60x20 method ranking at equal budgets")
def test_method_ranking(mbb, record_property):
    budget = 200
    oc = run(mbb, "oc", iters=budget).compliance
    pixel = run(mbb, "pixel-lbfgs", iters=budget).compliance
    cnn = ensemble(mbb, "cnn-lbfgs", range(5), iters=budget).best
    gap = cnn / oc - 1
    record_property("detail", f"OC {oc:.3f} <= pixel {pixel:.3f}; best-of-5 CNN {cnn:.3f} ({gap:+.2%} vs OC, within 5%)")
    assert oc <= pixel
    assert abs(gap) <= 0.05


@pytest.mark.criterion(5, "sparse solve vs dense oracle on every grid with <= 64 elements")
def test_solver_oracle(record_property):
    rng = np.random.default_rng(5)
    worst, count = 0.0, 0
    for nelx in range(1, 65):
        for nely in range(1, 64 // nelx + 1):
            bc = cantilever_bc(nelx, nely, load=float(rng.uniform(0.5, 2.0)))
            young = young_modulus(rng.uniform(0.1, 1.0, (nely, nelx)), SimpConfig())
            system = assemble(bc.grid, young, bc)
            u = solve(system, bc)[bc.free_dofs]
            ref = gaussian_elimination_solve(system.matrix.toarray(), bc.force[bc.free_dofs])
            worst = max(worst, np.linalg.norm(u - ref) / np.linalg.norm(ref))
            count += 1
    record_property("detail", f"{count} grids, max relative difference {worst:.2e} (<= 1e-8)")
    assert worst <= 1e-8


@pytest.mark.criterion(6, "bench over the built-in suite, 3 methods x 5 seeds")
def test_bench_suite(tmp_path, record_property):
    import json

    tasks = builtin_tasks(check_solvable=False)
    summary, results = bench(tasks, seeds=range(5), iters=3, out_dir=tmp_path)
    assert len(summary.tasks) >= 10 and len(summary.methods) == 3
    for res in results:
        task = next(t for t in tasks if t.name == res.task)
        assert not res.failures, res.failures
        for r in res.runs + ([res.typical] if res.typical else []):
            assert abs(r.density.mean() - task.volfrac) <= 1e-6
            assert r.density.min() >= 0 and r.density.max() <= 1
            assert r.design.min() >= 0 and r.design.max() <= 1
    for name in summary.tasks:
        assert min(r.score for r in summary.rows if r.task == name) == 0.0
    report = json.loads((tmp_path / "summary.json").read_text())
    counts = report["near_best_counts"]
    assert set(counts) == set(summary.methods)
    record_property(
        "detail",
        f"{len(summary.tasks)} tasks x 3 methods x 5 seeds, all feasible; near-best (score <= 0.005) counts {counts}",
    )


@pytest.mark.criterion(7, "byte-identical artifacts on repeat")
def test_determinism(mbb, tmp_path, record_property):
    checked = []
    for method in ("oc", "pixel-lbfgs", "cnn-lbfgs"):
        blobs = []
        for attempt in ("a", "b"):
            paths = emit_artifacts(run(mbb, method, seed=3, iters=10), tmp_path / method / attempt)
            blobs.append({k: paths[k].read_bytes() for k in ("design", "trace", "metadata")})
        assert blobs[0] == blobs[1], method
        checked.append(method)
    record_property("detail", f"design.pgm, trace.csv and metadata.json identical for {', '.join(checked)}")


@pytest.mark.criterion(8, "invariant suite")
def test_invariants(record_property):
    rng = np.random.default_rng(8)
    checks = []

    ke = element_stiffness_matrix()
    xy = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    modes = [np.tile([1.0, 0.0], 4), np.tile([0.0, 1.0], 4), np.column_stack([-xy[:, 1], xy[:, 0]]).ravel()]
    assert all(np.abs(ke @ m).max() <= 1e-12 for m in modes)
    assert np.sum(np.abs(np.linalg.eigvalsh(ke)) < 1e-10) == 3
    checks.append("rigid-body modes")

    for shape in [(1, 1), (3, 7), (9, 4), (12, 12)]:
        f = ConeFilter(shape)
        np.testing.assert_allclose(np.asarray(f.matrix.sum(axis=1)).ravel(), 1.0, atol=1e-14)
        assert f.matrix.min() >= 0
        np.testing.assert_allclose(f.matrix.toarray(), brute_force_cone_weights(*shape, 2.0), atol=1e-15)
        x, g = rng.normal(size=(2, *shape))
        assert abs(np.vdot(g, f.apply(x)) - np.vdot(f.adjoint(g), x)) <= 1e-12 * max(1, abs(np.vdot(g, f.apply(x))))
    checks.append("filter row-stochastic and transpose identity")

    for _ in range(20):
        n = int(rng.integers(2, 40))
        xhat = rng.normal(size=n) * 3
        res = project(xhat, float(rng.uniform(0.05, 0.95)))
        jac = np.stack([project_backward(res, e) for e in np.eye(n)])
        assert np.abs(jac.sum(axis=1)).max() <= 1e-13
        d = rng.normal(size=n)
        h = 1e-6
        dv = (project(xhat + h * d, res.volfrac).x.mean() - project(xhat - h * d, res.volfrac).x.mean()) / (2 * h)
        assert abs(dv) <= 1e-8
    checks.append("projection Jacobian column sums and first-order volume conservation")

    arch = CnnArchitecture((20, 60))
    _, tape = cnn_forward(init_params(arch, 0), arch)
    for y in tape.normalized:
        assert abs(y.mean()) <= 1e-6 and abs(y.std() - 1) <= 1e-6
    checks.append("normalization mean 0 / std 1")

    q, _ = np.linalg.qr(rng.normal(size=(50, 50)))
    a = q @ np.diag(np.geomspace(1, 10, 50)) @ q.T
    x_star = rng.normal(size=50)
    res = lbfgs_minimize(lambda x: (0.5 * (x - x_star) @ a @ (x - x_star), a @ (x - x_star)), np.zeros(50), max_iter=60, gtol=1e-9)
    assert np.linalg.norm(a @ (res.x - x_star)) <= 1e-8
    losses = [r.loss for r in res.history]
    assert all(b <= a_ for a_, b in zip(losses, losses[1:]))
    checks.append("L-BFGS quadratic convergence and monotone trace")

    problem = ComplianceProblem(cantilever_bc(20, 10))
    state = OcState(np.full((10, 20), 0.3))
    for _ in range(10):
        _, dc = problem(state.x)
        new = oc_step(state, dc, 0.3)
        assert np.abs(new.x - state.x).max() <= 0.2 + 1e-15
        assert abs(new.x.mean() - 0.3) <= 1e-9 and new.x.min() >= 0 and new.x.max() <= 1
        state = new
    checks.append("OC move limit and feasibility")

    record_property("detail", "; ".join(checks))
