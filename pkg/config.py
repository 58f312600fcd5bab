"""
polyland - Configuration constants.
"""
import os

APP_NAME = "polyland"
VERSION = "1.0.0"
SCHEMA = "polyland/v1"
APP_DIR = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.path.join(APP_DIR, "data")

# ── Exit codes ──────────────────────────────────────────────
EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_PRECONDITION = 2
EXIT_USAGE = 64

# ── Numerical decisions ─────────────────────────────────────
RANK_RTOL = 1e-10           # singular values below this x largest are zero
WITNESS_TOL = 1e-8          # ‖∇P(w_i)‖ bound for critical-locus witnesses
RESIDUAL_TOL = 1e-9         # critical-point certification, relative to (‖T‖+‖S‖)²
EIGEN_GAP_RTOL = 1e-8       # "distinct eigenvalues" guard, relative to ‖T‖
NULLITY_RTOL = 1e-7         # Stiefel-chart Jacobian nullity threshold
FOCAL_GAP_RTOL = 1e-10      # eigen-gap threshold on segments, relative to ‖M_α‖
FOCAL_TIE_TOL = 1e-10       # crossings closer than this are reported as ties
HESSIAN_NEG_RTOL = 1e-6     # chart Hessian eigenvalue counted as negative below -this x scale
DEDUP_TOL = 1e-6

# ── Function-space regimes ──────────────────────────────────
# (d, n) pairs where r_thick exceeds the dimension count by one
EXCEPTIONAL_THICK = frozenset({(4, 3), (4, 4), (4, 5), (3, 5)})

# ── Ellipse / discriminant probes ───────────────────────────
ELLIPSE_SAMPLES = 4096
ROOT_XTOL = 1e-12
DEGENERATE_CURVATURE = 1e-9
CONTINUITY_FACTOR = 100.0   # perturbed critical points must lie within this x radius
COLLISION_GRID = 200

# ── Dynamics ────────────────────────────────────────────────
DIVERGENCE_NORM = 1e8
CONVERGENCE_RTOL = 1e-7
MONOTONE_SLACK = 1e-12
MAX_BACKTRACKS = 30
CLUSTER_TOL = 0.05

# ── Reference teacher-student experiment ──────────────────
HOUSEHOLDER_TEACHER_EIGENVALUES = (-4.0, -2.0, 1.0, 3.0, 5.0)
HOUSEHOLDER_WEIGHT = 2.0 / 5.0
REFERENCE_EXPERIMENT = {
    "n": 5,
    "r": 3,
    "d": 2,
    "samples": 50_000,
    "trials": 50,
    "optimizer": {"kind": "sgd", "lr": 1e-4, "batch": 256, "epochs": 500},
    "data": "gaussian",
}
NORM_VARIANT_OPTIMIZER = {"kind": "norm", "lr": 1e-3, "iterations": 10_000}

# ── Subcommands ─────────────────────────────────────────────
PURE_COMMANDS = (
    "regime", "fiber", "moments", "metric", "critpoints", "iid-count",
    "demo-diverge", "discriminant", "focal",
)
EXPERIMENT_COMMANDS = ("train", "flow", "demo-trapped", "stability")
