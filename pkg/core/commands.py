"""
Command registry - every CLI subcommand as a handler returning a JSON-ready dict.

Handlers take the parsed argument dict and return {"result": ..., "csv": ...};
execute_command wraps them into success/error dicts, records warnings and logs
each call with RunLogger.
"""
import csv
import io
import time
import warnings

import numpy as np

from config import EXIT_INTERNAL, EXIT_OK, EXIT_PRECONDITION
from core.errors import PolylandWarning, PreconditionError, SchemaError
from core.settings import load_document, load_settings


# ── Input helpers ───────────────────────────────────────────

def _floats(text: str) -> list[float]:
    try:
        return [float(part) for part in str(text).split(",") if part.strip()]
    except ValueError as e:
        raise PreconditionError(f"expected a comma-separated list of numbers, got {text!r}") from e


def _load_matrix(path: str) -> np.ndarray:
    """Teacher matrix from a bare array, {"T": ...}, {"matrix": ...} or a degree-2 symtensor."""
    from core.symtensor import SymTensor

    payload = load_document(path)
    if isinstance(payload, dict):
        if payload.get("kind") == "symtensor":
            tensor = SymTensor.from_dict(payload)
            if tensor.d != 2:
                raise SchemaError(f"{path} holds a degree-{tensor.d} tensor; a matrix is needed")
            return tensor.to_dense()
        payload = payload.get("T", payload.get("matrix"))
    try:
        matrix = np.asarray(payload, dtype=float)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"{path} does not hold a numeric matrix: {e}") from e
    if matrix.ndim != 2:
        raise SchemaError(f"{path} does not hold a matrix")
    return matrix


def _load_tensor(path: str):
    from core.symtensor import SymTensor

    payload = load_document(path)
    if isinstance(payload, dict) and payload.get("kind") == "symtensor":
        return SymTensor.from_dict(payload)
    return SymTensor.from_dense(_load_matrix(path))


def _load_spec(args: dict, n: int):
    from core.metrics import IID, spec_from_dict

    if args.get("spec"):
        return spec_from_dict(load_document(args["spec"]))
    law = args.get("law") or "gaussian"
    if law == "gaussian":
        return IID.standard_gaussian(2 * int(args["d"]))
    if law == "uniform":
        return IID.uniform(1.0, 2 * int(args["d"]))
    raise PreconditionError(f"unknown data law {law!r}")


def _quad_metric(args: dict):
    from core.quadlandscape import QuadMetric

    kind = args.get("metric") or "frobenius"
    if kind == "iid":
        return QuadMetric.iid(float(args["mu2"]), float(args["mu4"]))
    return QuadMetric(kind)


def _csv(header: list[str], rows) -> str:
    fmt = load_settings()["csv_float_format"]
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([fmt % v if isinstance(v, float) else v for v in row] for row in rows)
    return buffer.getvalue()


# ── Handlers ────────────────────────────────────────────────

def _regime(a: dict) -> dict:
    from core.network import regime
    return {"result": regime(int(a["d"]), int(a["n"]), int(a["r"])).to_dict()}


def _fiber(a: dict) -> dict:
    from core.network import SignatureTriple, fiber_components
    sig = SignatureTriple(int(a["splus"]), int(a["sminus"]), int(a["szero"]))
    return {"result": {"signature": [sig.s_plus, sig.s_minus, sig.s_zero], "r": int(a["r"]),
                       "components": fiber_components(sig, int(a["r"]))}}


def _moments(a: dict) -> dict:
    from core.metrics import moment_tensor, spec_to_dict
    n, d = int(a["n"]), int(a["d"])
    spec = _load_spec(a, n)
    return {"result": {"spec": spec_to_dict(spec), "moment_tensor": moment_tensor(spec, n, d).to_dict()}}


def _metric(a: dict) -> dict:
    from core.metrics import metric_from_spec, spec_to_dict
    n, d = int(a["n"]), int(a["d"])
    spec = _load_spec(a, n)
    operator = metric_from_spec(spec, n, d)
    return {"result": {"spec": spec_to_dict(spec), "n": n, "d": d, "gram": operator.gram.tolist(),
                       "eigenvalues": operator.eigenvalues().tolist(), "psd": operator.is_psd()},
            "csv": operator.to_csv()}


def _critpoints(a: dict) -> dict:
    from core.quadlandscape import (
        CSV_HEADER, critical_image_cover, ey_frobenius_critical, ey_gaussian_critical,
        iid_rank1_critical,
    )
    T = _load_matrix(a["teacher"])
    metric = _quad_metric(a)
    r = int(a["r"])
    if metric.kind == "iid":
        if np.any(np.abs(T - np.diag(np.diag(T))) > 0):
            raise PreconditionError("the iid enumeration needs a diagonal teacher")
        if r != 1:
            raise PreconditionError("the iid enumeration covers the rank-one stratum; use --r 1")
        points = iid_rank1_critical(np.diag(T), metric.mu2, metric.mu4)
    elif a.get("cover"):
        points = critical_image_cover(T, metric, r)
    else:
        points = (ey_frobenius_critical if metric.kind == "frobenius" else ey_gaussian_critical)(T, r)
    return {"result": {"metric": metric.to_dict(), "r": r, "count": len(points),
                       "points": [p.to_dict() for p in points]},
            "csv": _csv(CSV_HEADER, (p.csv_row() for p in points))}


def _iid_count(a: dict) -> dict:
    from config import RESIDUAL_TOL
    from core.quadlandscape import iid_rank1_critical
    t = _floats(a["t"])
    n = int(a["n"])
    if len(t) != n:
        raise PreconditionError(f"--t lists {len(t)} values but --n is {n}")
    points = iid_rank1_critical(t, float(a["mu2"]), float(a["mu4"]), with_index=False)
    return {"result": {"count": len(points), "expected": (3 ** n - 1) // 2,
                       "all_residuals_ok": all(p.residual <= RESIDUAL_TOL for p in points)}}


def _train(a: dict) -> dict:
    from core.dynamics import ExperimentConfig, run_teacher_student
    settings = load_settings()
    payload = {**settings["experiment"], "threads": settings["threads"], "bins": settings["histogram_bins"],
               **load_document(a["config"], "experiment")}
    config = ExperimentConfig.from_dict(payload, seed=a["seed"])
    if a.get("threads"):
        config.threads = int(a["threads"])
    report = run_teacher_student(config)
    return {"result": report.to_dict(), "csv": report.histogram_csv()}


def _flow(a: dict) -> dict:
    from core.dynamics import gradient_flow, init_params
    from core.metrics import frobenius_metric, metric_from_spec, spec_from_dict
    teacher = _load_tensor(a["teacher"])
    if a.get("spec"):
        metric = metric_from_spec(spec_from_dict(load_document(a["spec"])), teacher.n, teacher.d)
    else:
        metric = frobenius_metric(teacher.n, teacher.d)
    params = init_params(teacher.n, int(a["r"]), teacher.d, np.random.default_rng(a["seed"]))
    record = gradient_flow(params, metric, teacher, float(a["step"]), int(a["steps"]), a["integrator"])
    rows = ((t, loss, *delta) for t, loss, delta in zip(record.times, record.losses, record.deltas))
    header = ["step", "loss"] + [f"delta_{i + 1}" for i in range(params.r)]
    return {"result": record.to_dict(), "csv": _csv(header, rows)}


def _demo_trapped(a: dict) -> dict:
    from core.dynamics import trapped_demo
    report = trapped_demo(int(a["n"]), int(a["r"]), int(a["d"]), a["seed"], steps=int(a["steps"]),
                          step=float(a["step"]))
    return {"result": report.to_dict()}


def _demo_diverge(a: dict) -> dict:
    from core.dynamics import diverging_minimizer_demo
    rows = diverging_minimizer_demo(int(a["d"]), _floats(a["taus"]), int(a["n"]))
    return {"result": {"d": int(a["d"]), "rows": [row.__dict__ for row in rows]},
            "csv": _csv(["tau", "loss", "param_norm"], ((r.tau, r.loss, r.param_norm) for r in rows))}


def _discriminant(a: dict) -> dict:
    from core.discriminant import (
        discriminant_2x2_frobenius, discriminant_2x2_iid, discriminant_2x2_iid_scale,
    )
    T = _load_matrix(a["teacher"])
    if a["case"] == "frobenius2x2":
        return {"result": {"case": a["case"], "value": discriminant_2x2_frobenius(T)}}
    mu2, mu4 = float(a["mu2"]), float(a["mu4"])
    return {"result": {"case": a["case"], "value": discriminant_2x2_iid(T, mu2, mu4),
                       "scale": discriminant_2x2_iid_scale(T, mu2, mu4)}}


def _focal_query(a: dict):
    from core.discriminant import Ellipse, FocalQuery, MetricPD, RankStratum
    if a["variety"] == "ellipse":
        sigma = MetricPD(_load_matrix(a["sigma"])) if a.get("sigma") else MetricPD.identity(2)
        return FocalQuery(Ellipse(float(a["a"]), float(a["b"])), np.array(_floats(a["teacher"])), sigma)
    T = _load_matrix(a["teacher"])
    return FocalQuery(RankStratum(T.shape[0], int(a["r"]), _quad_metric(a)), T)


def _focal(a: dict) -> dict:
    from core.discriminant import run_focal_query
    payload = run_focal_query(_focal_query(a))
    if payload["variety"] == "ellipse":
        rows = ((p["theta"], *p["point"], "" if p["index"] is None else p["index"], p["value"])
                for p in payload["critical_points"])
        text = _csv(["theta", "x", "y", "index", "value"], rows)
    else:
        rows = ((" ".join(map(str, p["support"])), p["index"], c["alpha"], c["multiplicity"])
                for p in payload["critical_points"] for c in p["crossings"])
        text = _csv(["support", "index", "alpha", "multiplicity"], rows)
    return {"result": payload, "csv": text}


def _stability(a: dict) -> dict:
    from core.discriminant import stability_probe
    query = _focal_query(a)
    report = stability_probe(query.teacher, query.variety, float(a["radius"]), int(a["samples"]),
                             a["seed"], sigma=query.sigma, strict=bool(a.get("strict")))
    return {"result": report.to_dict()}


_COMMAND_MAP = {
    "regime":       _regime,
    "fiber":        _fiber,
    "moments":      _moments,
    "metric":       _metric,
    "critpoints":   _critpoints,
    "iid-count":    _iid_count,
    "train":        _train,
    "flow":         _flow,
    "demo-trapped": _demo_trapped,
    "demo-diverge": _demo_diverge,
    "discriminant": _discriminant,
    "focal":        _focal,
    "stability":    _stability,
}


def exit_code(result: dict) -> int:
    if result.get("success"):
        return EXIT_OK
    return EXIT_PRECONDITION if result.get("error_kind") == "precondition" else EXIT_INTERNAL


def execute_command(name: str, args: dict) -> dict:
    """Execute a command by name. Returns a JSON-serialisable dict."""
    from core.logger import RunLogger

    started = time.time()
    func = _COMMAND_MAP.get(name)
    if not func:
        result = {"success": False, "error": f"Unknown command: {name}", "error_kind": "precondition"}
        RunLogger.log(name, args, result)
        return result
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PolylandWarning)
        try:
            result = {"success": True, **func(args)}
        except PreconditionError as e:
            result = {"success": False, "error": str(e), "error_kind": "precondition"}
        except Exception as e:
            result = {"success": False, "error": f"{type(e).__name__}: {e}", "error_kind": "internal"}
    notes = [str(w.message) for w in caught if issubclass(w.category, PolylandWarning)]
    if notes:
        result["warnings"] = notes
    RunLogger.log(name, args, {k: v for k, v in result.items() if k != "csv"}, time.time() - started)
    return result
