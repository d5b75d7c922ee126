"""Running methods on tasks, seed ensembles, scoring and artifact output."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cnn import CnnArchitecture, CnnParams, cnn_backward, cnn_forward, init_params
from .optimizers import lbfgs_minimize, oc_minimize
from .projection import project, project_backward
from .simp import ComplianceProblem
from .tasks import Task

logger = logging.getLogger(__name__)

METHODS = ("cnn-lbfgs", "pixel-lbfgs", "oc")
DEFAULT_ITERS = {"cnn-lbfgs": 200, "pixel-lbfgs": 200, "oc": 100}
NEAR_BEST = 0.005
CDF_THRESHOLDS = (0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, math.inf)
TRACE_HEADER = ("iteration", "compliance", "volume", "grad_norm")
TIMING_HEADER = ("iteration", "elapsed_seconds")


# --- traces ----------------------------------------------------------------


@dataclass
class TraceRow:
    iteration: int
    compliance: float
    volume: float
    grad_norm: float
    elapsed: float = 0.0


@dataclass
class OptimizationTrace:
    task: str
    method: str
    seed: int | None
    rows: list[TraceRow] = field(default_factory=list)

    def best_row(self) -> TraceRow:
        return min(self.rows, key=lambda r: r.compliance)

    def to_csv(self) -> str:
        """Deterministic columns only; wall time lives in :meth:`timing_csv`."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for r in self.rows:
            writer.writerow([r.iteration, repr(r.compliance), repr(r.volume), repr(r.grad_norm)])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TIMING_HEADER)
        for r in self.rows:
            writer.writerow([r.iteration, f"{r.elapsed:.6f}"])
        return buf.getvalue()


def parse_trace_csv(text: str) -> list[TraceRow]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != TRACE_HEADER:
        raise ValueError(f"unexpected trace header {header}; expected {TRACE_HEADER}")
    return [TraceRow(int(i), float(c), float(v), float(g)) for i, c, v, g in reader]


# --- objectives ------------------------------------------------------------


class _DesignObjective:
    """Shared plumbing: parameters -> logits -> densities -> compliance."""

    def __init__(self, problem: ComplianceProblem, volfrac: float):
        self.problem = problem
        self.volfrac = volfrac
        self._last_params = None
        self._last_density = None

    def logits(self, params):
        raise NotImplementedError

    def logits_backward(self, cache, g_logits):
        raise NotImplementedError

    def __call__(self, params: np.ndarray):
        xhat, cache = self.logits(params)
        proj = project(xhat, self.volfrac)
        c, dc = self.problem(proj.x)
        grad = self.logits_backward(cache, project_backward(proj, dc))
        self._last_params, self._last_density = params.copy(), proj.x
        return c, grad

    def density(self, params: np.ndarray) -> np.ndarray:
        if self._last_params is not None and np.array_equal(params, self._last_params):
            return self._last_density
        return project(self.logits(params)[0], self.volfrac).x


class PixelObjective(_DesignObjective):
    """Logits are the optimization variables (flattened ``(nely, nelx)``)."""

    def logits(self, params):
        return params.reshape(self.problem.grid.shape), None

    def logits_backward(self, cache, g_logits):
        return g_logits.ravel()


class CnnObjective(_DesignObjective):
    """CNN weights and latent are the optimization variables."""

    def __init__(self, problem: ComplianceProblem, volfrac: float, arch: CnnArchitecture):
        super().__init__(problem, volfrac)
        self.arch = arch

    def logits(self, params):
        return cnn_forward(CnnParams.unflatten(params, self.arch), self.arch)

    def logits_backward(self, tape, g_logits):
        return cnn_backward(tape, g_logits).flatten()


# --- single runs -----------------------------------------------------------


@dataclass
class RunResult:
    task: str
    method: str
    seed: int | None
    init: str
    density: np.ndarray  # constrained x
    design: np.ndarray  # physical (filtered) densities
    compliance: float
    trace: OptimizationTrace
    config: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def cnn_architecture(task: Task, **overrides) -> CnnArchitecture:
    return CnnArchitecture(grid_shape=task.shape, **overrides)


def cnn_initial_logits(task: Task, seed: int, arch: CnnArchitecture | None = None) -> np.ndarray:
    """Output of the untrained CNN for ``seed``: the shared ensemble initialization."""
    arch = arch or cnn_architecture(task)
    return cnn_forward(init_params(arch, seed), arch)[0]


def run(
    task: Task,
    method: str,
    seed: int | None = 0,
    iters: int | None = None,
    init: str = "constant",
    arch_overrides: dict | None = None,
) -> RunResult:
    """Optimize ``task`` with ``method``; returns the lowest-compliance design.

    ``init`` only affects the pixel-space methods: ``"constant"`` starts from
    the uniform design, ``"cnn"`` from the untrained CNN's output for
    ``seed``. The CNN method always starts from ``init_params(seed)``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if init not in ("constant", "cnn"):
        raise ValueError(f"init must be 'constant' or 'cnn', got {init!r}")
    iters = DEFAULT_ITERS[method] if iters is None else int(iters)
    cfg = task.simp_config
    problem = ComplianceProblem(task.bc, cfg)
    arch = cnn_architecture(task, **(arch_overrides or {}))
    # constant-initialized baselines are deterministic and ignore the seed
    seed_used = None if method != "cnn-lbfgs" and init == "constant" else int(seed or 0)
    trace = OptimizationTrace(task.name, method, seed_used)
    config = {
        "task": task.to_dict(),
        "method": method,
        "seed": seed_used,
        "iters": iters,
        "init": init if method != "cnn-lbfgs" else "cnn",
        "simp": cfg.as_dict(),
    }
    if method == "cnn-lbfgs" or init == "cnn":
        config["cnn"] = arch.to_dict()

    if method == "oc":
        if init == "cnn":
            x0 = project(cnn_initial_logits(task, seed_used, arch), task.volfrac).x
        else:
            x0 = np.full(task.shape, task.volfrac)

        def record(it, x, c, g):
            trace.rows.append(TraceRow(it, float(c), float(x.mean()), float(np.linalg.norm(g))))

        result = oc_minimize(problem, x0, task.volfrac, max_iter=iters, callback=record)
        density = result.x
    else:
        if method == "cnn-lbfgs":
            objective = CnnObjective(problem, task.volfrac, arch)
            p0 = init_params(arch, seed_used).flatten()
        else:
            objective = PixelObjective(problem, task.volfrac)
            if init == "cnn":
                p0 = cnn_initial_logits(task, seed_used, arch).ravel()
            else:
                p0 = np.zeros(task.n_elements)

        def record(it, p, c, g):
            x = objective.density(p)
            trace.rows.append(TraceRow(it, float(c), float(x.mean()), float(np.linalg.norm(g))))

        result = lbfgs_minimize(objective, p0, max_iter=iters, callback=record)
        density = objective.density(result.x)
    for row, rec in zip(trace.rows, result.history):
        row.elapsed = rec.elapsed
    return RunResult(
        task=task.name,
        method=method,
        seed=seed_used,
        init=config["init"],
        density=density,
        # normalized filter rows can overshoot 1 by an ulp
        design=np.clip(problem.physical(density), 0.0, 1.0),
        compliance=float(result.fun),
        trace=trace,
        config=config,
    )


# --- ensembles and scoring ---------------------------------------------------


@dataclass
class EnsembleResult:
    task: str
    method: str
    runs: list[RunResult]
    failures: list[tuple[int | None, str]] = field(default_factory=list)
    typical: RunResult | None = None

    @property
    def compliances(self) -> list[float]:
        return [r.compliance for r in self.runs]

    @property
    def best(self) -> float:
        values = self.compliances + ([self.typical.compliance] if self.typical else [])
        return float(min(values))

    @property
    def median(self) -> float:
        """Typical performance: constant-init run if present, else median over seeds."""
        if self.typical is not None:
            return self.typical.compliance
        return float(np.median(self.compliances))

    @property
    def best_run(self) -> RunResult:
        candidates = self.runs + ([self.typical] if self.typical else [])
        return min(candidates, key=lambda r: r.compliance)


def _guarded_run(task, method, seed, iters, init, arch_overrides):
    try:
        return run(task, method, seed, iters, init, arch_overrides), None
    except Exception as exc:  # noqa: BLE001 - ensemble members fail independently
        return None, f"{type(exc).__name__}: {exc}"


def ensemble(
    task: Task,
    method: str,
    seeds,
    iters: int | None = None,
    include_typical: bool = False,
    arch_overrides: dict | None = None,
    n_jobs: int = 1,
) -> EnsembleResult:
    """Run ``method`` once per seed from the untrained-CNN initialization.

    Pixel-space methods start from ``cnn_initial_logits(task, seed)`` so every
    method shares the same initial designs. With ``include_typical`` the
    baselines also get their constant-initialization run, which then defines
    the typical (median) figure. Failed members are reported and skipped.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("ensemble needs at least one seed")
    jobs = [(task, method, s, iters, "cnn", arch_overrides) for s in seeds]
    if n_jobs == 1:
        outcomes = [_guarded_run(*job) for job in jobs]
    else:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=n_jobs)(delayed(_guarded_run)(*job) for job in jobs)
    out = EnsembleResult(task.name, method, [])
    for seed, (res, err) in zip(seeds, outcomes):
        if err is None:
            out.runs.append(res)
        else:
            warnings.warn(f"{task.name}/{method}/seed {seed} failed and is excluded: {err}", RuntimeWarning)
            out.failures.append((seed, err))
    if include_typical and method != "cnn-lbfgs":
        res, err = _guarded_run(task, method, None, iters, "constant", arch_overrides)
        if err is None:
            out.typical = res
        else:
            warnings.warn(f"{task.name}/{method}/constant init failed: {err}", RuntimeWarning)
            out.failures.append((None, err))
    if not out.runs and out.typical is None:
        raise RuntimeError(f"every ensemble member failed for {task.name}/{method}")
    return out


@dataclass
class SummaryRow:
    task: str
    method: str
    best_compliance: float
    median_compliance: float
    score: float
    typical_score: float


@dataclass
class BenchmarkSummary:
    rows: list[SummaryRow]
    thresholds: tuple[float, ...] = CDF_THRESHOLDS

    @property
    def methods(self) -> list[str]:
        return sorted({r.method for r in self.rows})

    @property
    def tasks(self) -> list[str]:
        return sorted({r.task for r in self.rows})

    def scores(self, method: str, typical: bool = False) -> list[float]:
        return [r.typical_score if typical else r.score for r in self.rows if r.method == method]

    def cdf(self, typical: bool = False) -> dict[str, list[float]]:
        """Per method: fraction of tasks with score <= each threshold."""
        out = {}
        for m in self.methods:
            s = np.array(self.scores(m, typical))
            out[m] = [float(np.mean(s <= t)) for t in self.thresholds]
        return out

    def near_best_counts(self, threshold: float = NEAR_BEST, typical: bool = False) -> dict[str, int]:
        return {m: int(sum(s <= threshold for s in self.scores(m, typical))) for m in self.methods}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f.name for f in dataclasses.fields(SummaryRow)])
        for r in self.rows:
            writer.writerow([r.task, r.method, repr(r.best_compliance), repr(r.median_compliance), repr(r.score), repr(r.typical_score)])
        return buf.getvalue()

    def cdf_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["mode", "method", *("inf" if math.isinf(t) else repr(t) for t in self.thresholds)])
        for typical in (False, True):
            for m, fracs in self.cdf(typical).items():
                writer.writerow(["typical" if typical else "best", m, *fracs])
        return buf.getvalue()


def relative_error(c: float, c_best: float) -> float:
    return c / c_best - 1.0


def summarize(results) -> BenchmarkSummary:
    """Score every (task, method) against the best design found for the task.

    ``results`` is an iterable of EnsembleResult, or of ``(task, method,
    best, median)`` tuples.
    """
    entries = []
    for r in results:
        if isinstance(r, EnsembleResult):
            entries.append((r.task, r.method, r.best, r.median))
        else:
            task, method, best, *rest = r
            entries.append((task, method, float(best), float(rest[0]) if rest else float(best)))
    best_per_task: dict[str, float] = {}
    for task, _, best, _ in entries:
        best_per_task[task] = min(best, best_per_task.get(task, math.inf))
    rows = [
        SummaryRow(
            task,
            method,
            best,
            median,
            relative_error(best, best_per_task[task]),
            relative_error(median, best_per_task[task]),
        )
        for task, method, best, median in entries
    ]
    return BenchmarkSummary(rows)


# --- artifacts ---------------------------------------------------------------


def density_to_pgm(design: np.ndarray) -> bytes:
    """Binary PGM (P5): one pixel per element, 0 = solid, 255 = void.

    Quantization is ``floor(255 * (1 - x) + 0.5)`` (round half up).
    """
    design = np.clip(np.asarray(design, dtype=float), 0.0, 1.0)
    pixels = np.floor(255.0 * (1.0 - design) + 0.5).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_pgm(blob: bytes) -> np.ndarray:
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def run_metadata(result: RunResult) -> dict:
    return {
        "task": result.task,
        "method": result.method,
        "seed": result.seed,
        "init": result.init,
        "compliance": result.compliance,
        "volume": float(result.density.mean()),
        "config_hash": result.config_hash,
        "config": result.config,
    }


def emit_artifacts(result: RunResult, out_dir, stem: str = "") -> dict[str, Path]:
    """Write ``design.pgm``, ``trace.csv``, ``timing.csv`` and ``metadata.json``."""
    out = Path(out_dir)
    prefix = f"{stem}_" if stem else ""
    paths = {
        "design": out / f"{prefix}design.pgm",
        "trace": out / f"{prefix}trace.csv",
        "timing": out / f"{prefix}timing.csv",
        "metadata": out / f"{prefix}metadata.json",
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["design"].write_bytes(density_to_pgm(result.design))
        paths["trace"].write_text(result.trace.to_csv())
        paths["timing"].write_text(result.trace.timing_csv())
        paths["metadata"].write_text(json.dumps(run_metadata(result), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"could not write artifacts to {out}: {exc}") from exc
    return paths


def bench(
    tasks,
    methods=METHODS,
    seeds=range(5),
    iters: int | None = None,
    out_dir=None,
    arch_overrides: dict | None = None,
    n_jobs: int = 1,
) -> tuple[BenchmarkSummary, list[EnsembleResult]]:
    """Every task x method x seed; writes per-(task, method) best designs and summaries."""
    seeds = list(seeds)
    results = []
    for task in tasks:
        for method in methods:
            logger.info("bench %s / %s (%d seeds)", task.name, method, len(seeds))
            results.append(
                ensemble(task, method, seeds, iters, include_typical=True, arch_overrides=arch_overrides, n_jobs=n_jobs)
            )
    summary = summarize(results)
    if out_dir is not None:
        out = Path(out_dir)
        for res in results:
            emit_artifacts(res.best_run, out / res.task, stem=res.method)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(summary.to_csv())
        (out / "cdf.csv").write_text(summary.cdf_csv())
        report = {
            "tasks": summary.tasks,
            "methods": summary.methods,
            "seeds": seeds,
            "iters": iters,
            "near_best_threshold": NEAR_BEST,
            "near_best_counts": summary.near_best_counts(),
            "near_best_counts_typical": summary.near_best_counts(typical=True),
            "failures": {f"{r.task}/{r.method}": [list(f) for f in r.failures] for r in results if r.failures},
        }
        (out / "summary.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return summary, results
