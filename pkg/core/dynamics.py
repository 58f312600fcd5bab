"""
Gradient flow and SGD on network parameters.

Losses expose value(params) and gradient(params) -> (∇α, ∇W). TensorLoss works
in function space through the metric Gram matrix and the pullback of d_tau;
DataLoss is the sample mean squared error. Trials of the teacher-student
experiment run on a thread pool, each with its own seeded generator.
"""
import logging
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field

import numpy as np

from config import (
    REFERENCE_EXPERIMENT, HOUSEHOLDER_WEIGHT, HOUSEHOLDER_TEACHER_EIGENVALUES, NORM_VARIANT_OPTIMIZER,
    CLUSTER_TOL, CONVERGENCE_RTOL, DIVERGENCE_NORM, MAX_BACKTRACKS, MONOTONE_SLACK, SCHEMA,
)
from core.errors import PreconditionError, SchemaError
from core.metrics import IID, MetricOperator, frobenius_metric, metric_from_spec
from core.network import NetworkParams, evaluate, pullback, tau
from core.quadlandscape import QuadMetric, critical_image_cover
from core.symtensor import SymTensor, exponent_array, monomial_features, rank_one

log = logging.getLogger(__name__)

INTEGRATORS = ("euler", "rk4")
OPTIMIZERS = ("sgd", "norm", "flow")
DATA_LAWS = ("gaussian", "uniform")


# ── Losses ──────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class TensorLoss:
    """‖tau(params) − teacher‖² under a metric operator."""

    metric: MetricOperator
    teacher: SymTensor

    def value(self, params: NetworkParams) -> float:
        return self.metric.distance_sq(tau(params), self.teacher)

    def gradient(self, params: NetworkParams) -> tuple[np.ndarray, np.ndarray]:
        return pullback(params, self.metric.gradient(tau(params), self.teacher))


@dataclass(frozen=True, eq=False)
class DataLoss:
    """Mean squared error of the network on (points, labels)."""

    points: np.ndarray
    labels: np.ndarray

    def value(self, params: NetworkParams, batch=None) -> float:
        X, y = self._select(batch)
        return float(np.mean((evaluate(params, X) - y) ** 2))

    def gradient(self, params: NetworkParams, batch=None) -> tuple[np.ndarray, np.ndarray]:
        X, y = self._select(batch)
        d = params.d
        proj = X @ params.W.T                               # (N, r)
        residual = proj ** d @ params.alpha - y
        scale = 2.0 / X.shape[0]
        grad_alpha = scale * residual @ proj ** d
        grad_W = scale * d * params.alpha[:, None] * ((residual[:, None] * proj ** (d - 1)).T @ X)
        return grad_alpha, grad_W

    def _select(self, batch):
        if batch is None:
            return self.points, self.labels
        return self.points[batch], self.labels[batch]


def _flat(grads: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[0], grads[1].ravel()])


# ── Gradient flow ───────────────────────────────────────────

@dataclass
class TrajectoryRecord:
    times: list[int] = field(default_factory=list)
    params: list[NetworkParams] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    deltas: list[np.ndarray] = field(default_factory=list)
    max_drift: float = 0.0
    min_loss: float = math.inf
    min_alpha: float = math.inf
    max_alpha: float = -math.inf
    final_step: float = 0.0
    steps_taken: int = 0
    backtracks: int = 0
    converged: bool = False
    diverged: bool = False

    @property
    def final(self) -> NetworkParams:
        return self.params[-1]

    def snapshot(self, step: int, params: NetworkParams, loss: float):
        self.times.append(step)
        self.params.append(params)
        self.losses.append(loss)
        self.deltas.append(params.deltas())

    def to_dict(self) -> dict:
        return {
            "kind": "trajectory",
            "times": self.times,
            "losses": self.losses,
            "deltas": [d.tolist() for d in self.deltas],
            "final": self.final.to_dict() if self.params else None,
            "max_drift": self.max_drift,
            "min_loss": self.min_loss,
            "steps_taken": self.steps_taken,
            "final_step": self.final_step,
            "backtracks": self.backtracks,
            "converged": self.converged,
            "diverged": self.diverged,
        }


def _advance(loss, x: np.ndarray, h: float, shape: tuple[int, int, int], integrator: str,
             k1: np.ndarray) -> np.ndarray:
    """One step from x, where k1 = −∇L(x)."""
    r, n, d = shape

    def field_at(v):
        return -_flat(loss.gradient(NetworkParams.from_vector(v, r, n, d)))

    if integrator == "euler":
        return x + h * k1
    k2 = field_at(x + 0.5 * h * k1)
    k3 = field_at(x + 0.5 * h * k2)
    k4 = field_at(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def run_flow(params0: NetworkParams, loss, step: float, steps: int, integrator: str = "rk4",
             record_every: int | None = None, stop_on_convergence: bool = True) -> TrajectoryRecord:
    """Integrate θ' = −∇L(θ) with step halving whenever the loss would increase."""
    if step <= 0 or steps < 0:
        raise PreconditionError(f"need step > 0 and steps >= 0, got {step}, {steps}")
    if integrator not in INTEGRATORS:
        raise PreconditionError(f"unknown integrator {integrator!r}; expected one of {INTEGRATORS}")
    record_every = record_every or max(1, steps // 1000)
    shape = (params0.r, params0.n, params0.d)
    record = TrajectoryRecord()
    x = params0.to_vector()
    params = params0
    current = loss.value(params)
    delta0 = params.deltas()
    record.snapshot(0, params, current)
    record.min_loss = current
    record.min_alpha, record.max_alpha = float(params.alpha.min()), float(params.alpha.max())
    h = step

    for k in range(1, steps + 1):
        gradient = _flat(loss.gradient(params))
        if stop_on_convergence and np.linalg.norm(gradient) < CONVERGENCE_RTOL * (1 + current):
            record.converged = True
            break
        for _ in range(MAX_BACKTRACKS + 1):
            candidate = _advance(loss, x, h, shape, integrator, -gradient)
            trial = NetworkParams.from_vector(candidate, *shape) if np.all(np.isfinite(candidate)) else None
            value = loss.value(trial) if trial is not None else math.inf
            if math.isfinite(value) and value <= current + MONOTONE_SLACK * (1 + abs(current)):
                break
            h /= 2
            record.backtracks += 1
        else:
            log.warning("flow stalled at step %d: no decreasing step down to h=%.3e", k, h)
            break
        x, params, current = candidate, trial, value
        record.steps_taken = k
        record.max_drift = max(record.max_drift, float(np.abs(params.deltas() - delta0).max()))
        record.min_loss = min(record.min_loss, current)
        record.min_alpha = min(record.min_alpha, float(params.alpha.min()))
        record.max_alpha = max(record.max_alpha, float(params.alpha.max()))
        if np.linalg.norm(x) > DIVERGENCE_NORM:
            record.diverged = True
            record.snapshot(k, params, current)
            break
        if k % record_every == 0 or k == steps:
            record.snapshot(k, params, current)
    if record.times[-1] != record.steps_taken:
        record.snapshot(record.steps_taken, params, current)
    record.final_step = h
    return record


def gradient_flow(params0: NetworkParams, metric: MetricOperator, teacher: SymTensor, step: float,
                  steps: int, integrator: str = "rk4", **kwargs) -> TrajectoryRecord:
    """Gradient flow of ‖tau(θ) − teacher‖²_metric from params0."""
    return run_flow(params0, TensorLoss(metric, teacher), step, steps, integrator, **kwargs)


def init_params(n: int, r: int, d: int, rng: np.random.Generator) -> NetworkParams:
    """Uniform on [−1/√n, 1/√n] per weight and [−1/√r, 1/√r] per output coefficient."""
    W = rng.uniform(-1 / math.sqrt(n), 1 / math.sqrt(n), size=(r, n))
    alpha = rng.uniform(-1 / math.sqrt(r), 1 / math.sqrt(r), size=r)
    return NetworkParams(alpha, W, d)


# ── Pathological landscapes ─────────────────────────────────

def negative_norm_teacher(n: int, d: int) -> SymTensor:
    """The tensor of −‖x‖^d for even d."""
    if d % 2:
        raise PreconditionError(f"−‖x‖^d is a polynomial only for even d, got {d}")
    half = d // 2
    coefficients = []
    for exps in exponent_array(n, d):
        if np.any(exps % 2):
            coefficients.append(0.0)
        else:
            coefficients.append(math.factorial(half) / math.prod(math.factorial(int(e) // 2) for e in exps))
    return -SymTensor.from_polynomial_coefficients(n, d, coefficients)


def sign_flipped_optimum(T: SymTensor, r: int, seed: int = 0) -> NetworkParams:
    """Least-squares output weights on fixed unit directions; fits T when their powers span it."""
    n, d = T.n, T.d
    if n == 2:
        angles = np.pi * np.arange(r) / r
        directions = np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        directions = np.random.default_rng(seed).normal(size=(r, n))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    root = np.sqrt(frobenius_metric(n, d).gram.diagonal())
    basis = np.column_stack([root * rank_one(u, 1.0, d).coeffs for u in directions])
    alpha, *_ = np.linalg.lstsq(basis, root * T.coeffs, rcond=None)
    return NetworkParams(alpha, directions, d)


@dataclass
class TrappedReport:
    initial_sign_condition: bool
    teacher_norm_sq: float
    min_loss: float
    final_loss: float
    alpha_stayed_positive: bool
    optimum_loss: float
    control_final_loss: float
    steps: int

    def to_dict(self) -> dict:
        return {"kind": "trapped_demo", **asdict(self)}


def _balanced_init(n: int, r: int, d: int, rng: np.random.Generator, sign: float) -> NetworkParams:
    W = rng.uniform(-1 / math.sqrt(n), 1 / math.sqrt(n), size=(r, n))
    alpha = sign * np.sqrt(np.sum(W ** 2, axis=1) / d + rng.uniform(0.1, 0.5, size=r))
    return NetworkParams(alpha, W, d)


def trapped_demo(n: int, r: int, d: int, seed: int, steps: int = 100_000, step: float = 1e-2,
                 control_steps: int | None = None) -> TrappedReport:
    """Positive outputs with α_i² > ‖w_i‖²/d can never fit a negative teacher."""
    if d % 2 or d < 2:
        raise PreconditionError(f"trapped demo needs an even degree, got {d}")
    teacher = negative_norm_teacher(n, d)
    metric = frobenius_metric(n, d)
    rng = np.random.default_rng(seed)
    start = _balanced_init(n, r, d, rng, +1.0)
    sign_ok = bool(np.all(start.alpha > 0) and np.all(start.deltas() > 0))

    trapped = gradient_flow(start, metric, teacher, step, steps, "rk4")
    control = gradient_flow(_balanced_init(n, r, d, rng, -1.0), metric, teacher, step,
                            control_steps if control_steps is not None else steps, "rk4")
    optimum = sign_flipped_optimum(teacher, r, seed)
    report = TrappedReport(
        initial_sign_condition=sign_ok,
        teacher_norm_sq=metric.norm_sq(teacher),
        min_loss=trapped.min_loss,
        final_loss=trapped.losses[-1],
        alpha_stayed_positive=trapped.min_alpha > 0,
        optimum_loss=metric.distance_sq(tau(optimum), teacher),
        control_final_loss=control.losses[-1],
        steps=trapped.steps_taken,
    )
    log.info("trapped demo: min loss %.6g vs ‖T‖² %.6g; control %.3g",
             report.min_loss, report.teacher_norm_sq, report.control_final_loss)
    return report


@dataclass(frozen=True)
class DivergingRow:
    tau: float
    loss: float
    param_norm: float


def diverging_minimizer_params(d: int, tau_value: float, n: int = 2) -> NetworkParams:
    """α = ±τ/(d−1), w_1 = e_1 + ((d−1)/d)·e_2/τ, w_2 = e_1: tends to x_1^{d−1}x_2 as τ grows."""
    W = np.zeros((2, n))
    W[0, 0], W[0, 1], W[1, 0] = 1.0, (d - 1) / (d * tau_value), 1.0
    return NetworkParams(np.array([tau_value / (d - 1), -tau_value / (d - 1)]), W, d)


def diverging_minimizer_demo(d: int, taus, n: int = 2) -> list[DivergingRow]:
    """Loss and parameter norm along a sequence whose loss tends to 0 while parameters diverge."""
    if d < 3 or n < 2:
        raise PreconditionError(f"diverging minimizer needs d >= 3 and n >= 2, got d={d}, n={n}")
    taus = sorted(float(t) for t in taus)
    if not taus or taus[0] <= 0:
        raise PreconditionError("tau values must be positive")
    exponents = np.zeros(n, dtype=int)
    exponents[0], exponents[1] = d - 1, 1
    coefficients = np.all(exponent_array(n, d) == exponents, axis=1).astype(float)
    teacher = SymTensor.from_polynomial_coefficients(n, d, coefficients)
    metric = frobenius_metric(n, d)
    rows = []
    for value in taus:
        params = diverging_minimizer_params(d, value, n)
        rows.append(DivergingRow(value, metric.distance_sq(tau(params), teacher), params.norm()))
    return rows


# ── Teacher-student experiment ──────────────────────────────

def householder_teacher() -> np.ndarray:
    """Vᵀ diag(β) V with the Householder-type V = I − (2/5) J."""
    beta = np.array(HOUSEHOLDER_TEACHER_EIGENVALUES)
    n = beta.shape[0]
    V = np.eye(n) - HOUSEHOLDER_WEIGHT * np.ones((n, n))
    return V.T @ np.diag(beta) @ V


def _optimizer(value) -> dict:
    """Copy an optimizer dict; the string "norm" names the Gaussian-norm descent preset."""
    return dict(NORM_VARIANT_OPTIMIZER) if value == "norm" else dict(value)


@dataclass
class ExperimentConfig:
    n: int
    r: int
    d: int
    seed: int
    trials: int
    samples: int
    optimizer: dict
    data: str = "gaussian"
    teacher: SymTensor | None = None
    threads: int = 4
    bins: int = 40

    def __post_init__(self):
        if self.seed is None:
            raise PreconditionError("experiments need an explicit seed")
        if min(self.n, self.r, self.d, self.trials, self.samples, self.threads, self.bins) < 1:
            raise PreconditionError("experiment counts must be positive")
        if self.data not in DATA_LAWS:
            raise PreconditionError(f"unknown data law {self.data!r}; expected one of {DATA_LAWS}")
        if self.optimizer == "norm":
            self.optimizer = dict(NORM_VARIANT_OPTIMIZER)
        if not isinstance(self.optimizer, dict) or self.optimizer.get("kind") not in OPTIMIZERS:
            raise PreconditionError(f"unknown optimizer {self.optimizer.get('kind')!r}")
        if self.teacher is None:
            if self.d != 2 or self.n != len(HOUSEHOLDER_TEACHER_EIGENVALUES):
                raise PreconditionError("the default teacher needs d = 2 and n = 5")
            self.teacher = SymTensor.from_dense(householder_teacher())
        if (self.teacher.n, self.teacher.d) != (self.n, self.d):
            raise PreconditionError("teacher shape does not match n and d")

    @classmethod
    def reference(cls, seed: int, **overrides) -> "ExperimentConfig":
        values = {k: v for k, v in REFERENCE_EXPERIMENT.items()}
        values["optimizer"] = _optimizer(values["optimizer"])
        values.update(overrides)
        return cls(seed=seed, **values)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "kind": "experiment", "n": self.n, "r": self.r, "d": self.d,
                "seed": self.seed, "trials": self.trials, "samples": self.samples,
                "optimizer": dict(self.optimizer), "data": self.data,
                "teacher": self.teacher.to_dict(), "threads": self.threads, "bins": self.bins}

    @classmethod
    def from_dict(cls, payload: dict, seed: int | None = None) -> "ExperimentConfig":
        try:
            teacher = payload.get("teacher")
            if isinstance(teacher, dict) and teacher.get("kind") == "symtensor":
                teacher = SymTensor.from_dict(teacher)
            elif teacher is not None and not isinstance(teacher, str):
                teacher = SymTensor.from_dense(np.asarray(teacher, dtype=float))
            else:
                teacher = None
            return cls(
                n=int(payload["n"]), r=int(payload["r"]), d=int(payload["d"]),
                seed=seed if seed is not None else payload.get("seed"),
                trials=int(payload["trials"]), samples=int(payload["samples"]),
                optimizer=_optimizer(payload["optimizer"]), data=payload.get("data", "gaussian"),
                teacher=teacher, threads=int(payload.get("threads", 4)),
                bins=int(payload.get("bins", 40)),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, PreconditionError):
                raise
            raise SchemaError(f"experiment config is malformed: {e}") from e


@dataclass
class TrialResult:
    trial: int
    student: np.ndarray
    eigenvalues: np.ndarray
    loss: float
    nearest_support: str | None = None
    nearest_distance: float | None = None
    nearest_index: int | None = None
    diverged: bool = False
    converged: bool = False

    def to_dict(self) -> dict:
        return {"trial": self.trial, "student": self.student.tolist(),
                "eigenvalues": self.eigenvalues.tolist(), "loss": self.loss,
                "nearest": {"support": self.nearest_support, "distance": self.nearest_distance,
                            "index": self.nearest_index},
                "diverged": self.diverged, "converged": self.converged}


@dataclass
class ExperimentReport:
    config: dict
    trials: list[TrialResult]
    histogram_edges: list[float]
    histogram_counts: list[int]
    reach_counts: dict[str, int]
    cluster_count: int
    mean_distance: float | None
    diverged_count: int
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "kind": "experiment_report", "config": self.config,
                "trials": [t.to_dict() for t in self.trials],
                "histogram": {"edges": self.histogram_edges, "counts": self.histogram_counts},
                "reach_counts": self.reach_counts, "cluster_count": self.cluster_count,
                "mean_distance": self.mean_distance, "diverged_count": self.diverged_count}

    def histogram_csv(self) -> str:
        lines = ["bin_left,bin_right,count"]
        edges, counts = self.histogram_edges, self.histogram_counts
        lines.extend(f"{edges[k]!r},{edges[k + 1]!r},{counts[k]}" for k in range(len(counts)))
        return "\n".join(lines) + "\n"


def _sample_data(config: ExperimentConfig, rng: np.random.Generator) -> DataLoss:
    shape = (config.samples, config.n)
    X = rng.standard_normal(shape) if config.data == "gaussian" else rng.uniform(-1.0, 1.0, shape)
    y = monomial_features(X, config.d) @ config.teacher.polynomial_coefficients()
    return DataLoss(X, y)


def _student(params: NetworkParams) -> np.ndarray:
    if params.d == 2:
        return params.W.T @ np.diag(params.alpha) @ params.W
    return tau(params).coeffs.copy()


def descend(x: np.ndarray, update, rounds: int) -> tuple[np.ndarray, bool]:
    """Apply update up to rounds times; on a non-finite or oversized iterate return the last good one."""
    last = x
    for _ in range(rounds):
        x = update(x)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            return last, True
        last = x
    return last, False


def _run_trial(trial: int, config: ExperimentConfig, data: DataLoss, seq: np.random.SeedSequence) -> TrialResult:
    rng = np.random.default_rng(seq)
    params = init_params(config.n, config.r, config.d, rng)
    shape = (config.r, config.n, config.d)
    opt = config.optimizer

    if opt["kind"] == "sgd":
        lr, batch = float(opt.get("lr", 1e-4)), int(opt.get("batch", 256))

        def epoch(x):
            order = rng.permutation(config.samples)
            for start in range(0, config.samples, batch):
                x = x - lr * _flat(data.gradient(NetworkParams.from_vector(x, *shape), order[start:start + batch]))
            return x

        x, diverged = descend(params.to_vector(), epoch, int(opt.get("epochs", 500)))
        params = NetworkParams.from_vector(x, *shape)
    elif opt["kind"] == "norm":
        loss = TensorLoss(metric_from_spec(IID.standard_gaussian(2 * config.d), config.n, config.d),
                          config.teacher)
        lr = float(opt.get("lr", 1e-3))
        x, diverged = descend(params.to_vector(),
                              lambda x: x - lr * _flat(loss.gradient(NetworkParams.from_vector(x, *shape))),
                              int(opt.get("iterations", 10_000)))
        params = NetworkParams.from_vector(x, *shape)
    else:
        loss = TensorLoss(metric_from_spec(IID.standard_gaussian(2 * config.d), config.n, config.d),
                          config.teacher)
        record = run_flow(params, loss, float(opt.get("step", 1e-2)), int(opt.get("steps", 10_000)),
                          opt.get("integrator", "rk4"))
        params, diverged = record.final, record.diverged

    student = _student(params)
    gradient = _flat(data.gradient(params))
    loss_value = data.value(params)
    eigenvalues = np.sort(np.linalg.eigvalsh(student)) if config.d == 2 else np.array([])
    converged = bool(np.linalg.norm(gradient) < CONVERGENCE_RTOL * (1 + loss_value))
    return TrialResult(trial, student, eigenvalues, loss_value, diverged=diverged, converged=converged)


def cluster_students(students, tol: float = CLUSTER_TOL) -> int:
    """Greedy representatives: every student lies within tol (Frobenius) of one of them."""
    if tol <= 0:
        raise PreconditionError(f"cluster tolerance must be positive, got {tol}")
    representatives = []
    for student in students:
        student = np.asarray(student, dtype=float)
        if not any(np.linalg.norm(student - rep) <= tol for rep in representatives):
            representatives.append(student)
    return len(representatives)


def run_teacher_student(config: ExperimentConfig) -> ExperimentReport:
    """Train config.trials students and match them against the predicted critical points."""
    started = time.time()
    root = np.random.SeedSequence(config.seed)
    data_seq, *trial_seqs = root.spawn(config.trials + 1)
    data = _sample_data(config, np.random.default_rng(data_seq))

    results = []
    with ThreadPoolExecutor(max_workers=config.threads) as executor:
        futures = {executor.submit(_run_trial, k, config, data, seq): k for k, seq in enumerate(trial_seqs)}
        for future in as_completed(futures):
            results.append(future.result())
    results.sort(key=lambda result: result.trial)

    predicted = []
    if config.d == 2:
        T = config.teacher.to_dense()
        predicted = critical_image_cover(T, QuadMetric.gaussian(), config.r)
    healthy = [res for res in results if not res.diverged]
    for res in healthy:
        if not predicted:
            break
        distances = [np.linalg.norm(res.student - p.S) for p in predicted]
        best = int(np.argmin(distances))
        res.nearest_support = ",".join(str(i + 1) for i in predicted[best].support)
        res.nearest_distance = float(distances[best])
        res.nearest_index = predicted[best].index

    if config.d == 2 and healthy:
        values = np.concatenate([res.eigenvalues for res in healthy])
        counts, edges = np.histogram(values, bins=config.bins)
    else:
        counts, edges = np.zeros(0, dtype=int), np.zeros(0)
    distances = [res.nearest_distance for res in healthy if res.nearest_distance is not None]
    report = ExperimentReport(
        config=config.to_dict(),
        trials=results,
        histogram_edges=[float(e) for e in edges],
        histogram_counts=[int(c) for c in counts],
        reach_counts=dict(sorted(Counter(res.nearest_support for res in healthy
                                         if res.nearest_support is not None).items())),
        cluster_count=cluster_students([res.student for res in healthy]),
        mean_distance=float(np.mean(distances)) if distances else None,
        diverged_count=len(results) - len(healthy),
        elapsed=time.time() - started,
    )
    log.info("experiment: %d trials, %d diverged, %d clusters", config.trials,
             report.diverged_count, report.cluster_count)
    return report
