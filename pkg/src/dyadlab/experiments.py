"""Pinned experiment suites and sweep infrastructure.

Every suite here is fully determined by its index arithmetic and seeds, so a
calibration run, the acceptance tests, and the CLI all see byte-identical
instances.  The calibration file freezes the constants observed on these
suites; reruns must reproduce them.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from .grid import DyadicGrid, GridFunction, build_grid
from .weights import Weight, dual_weight, power_weight, random_a2_weight
from .shifts import (
    SimpleHaarShift,
    hilbert_shift,
    operator_norm,
    random_simple_shift,
)
from .corona import CoronaDecomposition, CubeSet, build_corona, qn_partition
from .estimates import ProfileFamily, h_functional, jn_check, testing_constants

WORKERS_ENV = "DYADLAB_WORKERS"

# pinned suite shapes
TWO_WEIGHT_COUNT = 200
TWO_WEIGHT_DEPTH = 10
CASCADE_COUNT = 100
CASCADE_DEPTH = 12
SWEEP_EXPONENTS = (0.0, 0.5, 0.75, 0.9, 0.95)
SWEEP_DEPTH = 16
ESSENCE_TAU = 2
ESSENCE_T_VALUES = tuple(range(1, 9))
WEAK_L1_DEPTH = 8
WEAK_L1_TRIALS = 100
JN_COUNT = 50
JN_DEPTH = 10


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# two-weight testing suite
# ---------------------------------------------------------------------------

def two_weight_instance(i: int, depth: int = TWO_WEIGHT_DEPTH):
    """Instance i of the pinned testing-condition suite.

    Three of every four instances use a dual pair (w, w^{-1}); the fourth an
    independent cascade pair.
    """
    grid = build_grid(1, depth)
    tau = 1 + i % 3
    T = random_simple_shift(tau, 2000 + i, grid)
    if i % 4 == 3:
        sigma = random_a2_weight(1 + i % 3, 1300 + i, grid)
        mu = random_a2_weight(1 + (i // 4) % 3, 1700 + i, grid)
    else:
        w = random_a2_weight(i % 6, 1000 + i, grid)
        sigma, mu = w, dual_weight(w)
    return T, sigma, mu


def _two_weight_row(i: int) -> dict:
    T, sigma, mu = two_weight_instance(i)
    rep = testing_constants(T, sigma, mu, norm_method="dense-svd")
    return {
        "index": i,
        "tau": rep.tau,
        "c_wb": rep.c_wb,
        "c_t1": rep.c_t1,
        "c_tstar1": rep.c_tstar1,
        "full_norm": rep.full_norm,
        "ratio": rep.full_norm / rep.testing_sum,
        "slack": rep.full_norm - max(rep.c_wb, rep.c_t1, rep.c_tstar1),
    }


def run_two_weight_suite(count: int = TWO_WEIGHT_COUNT) -> list[dict]:
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_two_weight_row, range(count)))
    return [_two_weight_row(i) for i in range(count)]


# ---------------------------------------------------------------------------
# cascade corona suite
# ---------------------------------------------------------------------------

def cascade_weight(i: int, depth: int = CASCADE_DEPTH) -> Weight:
    grid = build_grid(1, depth)
    return random_a2_weight(i % 8, 3000 + i, grid)


def corona_for(w: Weight, stopping_levels=None) -> CoronaDecomposition:
    grid = w.grid
    family = CubeSet.all_under(grid, grid.root())
    return build_corona(w, family, grid.root(), stopping_levels=stopping_levels)


# ---------------------------------------------------------------------------
# essence / stratification suite
# ---------------------------------------------------------------------------

def essence_shift(i: int, depth: int = CASCADE_DEPTH) -> SimpleHaarShift:
    grid = build_grid(1, depth)
    return random_simple_shift(ESSENCE_TAU, 4000 + i, grid, separated=True)


def essence_cases(weight_index: int, depth: int = CASCADE_DEPTH):
    """All (n, Q0, corona, L, fiber) cases of one cascade weight.

    Classes are taken over the scale-separated levels of the suite shift; Q0
    is the first cube of each class (level then index order), the corona is
    built over the class members under Q0 with stopping cubes restricted to
    the separated lattice.
    """
    w = cascade_weight(weight_index, depth)
    T = essence_shift(weight_index, depth)
    qn = qn_partition(w, levels=T.levels)
    out = []
    for n in qn.n_values():
        cls = qn.classes[n]
        q0 = cls.cubes()[0]
        members = cls.restrict_under(q0)
        corona = build_corona(w, members, q0, stopping_levels=T.levels)
        for L in corona.stopping_cubes():
            fiber = corona.corona_of(L)
            if fiber.count() == 0:
                continue
            out.append((n, q0, corona, L, fiber))
    return w, T, out


def collect_essence_distributions(weight_indices, depth: int = CASCADE_DEPTH):
    """Raw per-case data for threshold scans: sorted |H|/density values with
    the matching dual-cell masses, plus case totals."""
    data = []
    for i in weight_indices:
        w, T, cases = essence_cases(i, depth)
        dual_cells = w.grid.cell_volume / w.values
        for n, q0, corona, L, fiber in cases:
            h = h_functional(L, fiber, T, w)
            u = np.abs(L.cell_values(h.values)) / w.density(L)
            duals = L.cell_values(dual_cells)
            order = np.argsort(u)[::-1]
            u_sorted = u[order]
            dual_sorted = np.cumsum(duals[order])
            data.append({
                "weight": i,
                "n": n,
                "L": L,
                "u_sorted": u_sorted,
                "dual_cum": dual_sorted,
                "cell_volume": w.grid.cell_volume,
                "lebesgue_total": L.volume,
                "dual_total": float(duals.sum()),
            })
    return data


def essence_aggregate_masses(data, k_constant: float,
                             t_values=ESSENCE_T_VALUES):
    """Worst-case normalized superlevel masses over the collected cases.

    Returns (lebesgue, dual) tuples: at each t, the max over cases of the
    normalized mass |{|H| > K t w(L)/|L|}| / |L| and its dual-measure twin.
    """
    leb = np.zeros(len(t_values))
    dua = np.zeros(len(t_values))
    for case in data:
        u = case["u_sorted"]
        for idx, t in enumerate(t_values):
            cnt = int(np.searchsorted(-u, -k_constant * t, side="left"))
            if cnt == 0:
                continue
            leb[idx] = max(leb[idx], cnt * case["cell_volume"] / case["lebesgue_total"])
            dua[idx] = max(dua[idx], case["dual_cum"][cnt - 1] / case["dual_total"])
    return tuple(leb), tuple(dua)


def fit_slope(t_values, masses) -> float | None:
    """Least-squares slope of log(mass) against t over positive masses."""
    ts = [t for t, m in zip(t_values, masses) if m > 0]
    ms = [math.log(m) for m in masses if m > 0]
    if len(ts) < 2:
        return None
    tbar = sum(ts) / len(ts)
    mbar = sum(ms) / len(ms)
    den = sum((t - tbar) ** 2 for t in ts)
    if den == 0:
        return None
    return sum((t - tbar) * (m - mbar) for t, m in zip(ts, ms)) / den


def calibrate_essence_k(data, t_values=ESSENCE_T_VALUES,
                        slope_target: float = -0.5):
    """Smallest K on a fixed log grid whose aggregate curves decay at the
    target slope in both measures without being vacuous at t=1."""
    for k in np.geomspace(0.05, 50.0, 61):
        leb, dua = essence_aggregate_masses(data, k, t_values)
        if leb[0] <= 0.0:
            continue
        sl = fit_slope(t_values, leb)
        sd = fit_slope(t_values, dua)
        if sl is not None and sl <= slope_target and (sd is None or sd <= slope_target):
            return float(k)
    raise RuntimeError("no K on the grid achieves the target decay")


# ---------------------------------------------------------------------------
# weighted norm sweep (power weight family)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    weight_id: str
    a2: float
    norm: float
    c_wb: float
    c_t1: float
    c_tstar1: float
    stopping_count: int
    carleson_max: float
    runtime_ms: float

    def to_dict(self) -> dict:
        return {
            "weight_id": self.weight_id,
            "a2": self.a2,
            "norm": self.norm,
            "c_wb": self.c_wb,
            "c_t1": self.c_t1,
            "c_tstar1": self.c_tstar1,
            "stopping_count": self.stopping_count,
            "carleson_max": self.carleson_max,
            "runtime_ms": self.runtime_ms,
        }


def affine_r2(x, y) -> float:
    """Coefficient of determination of the affine least-squares fit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = ((y - y.mean()) ** 2).sum()
    if ss_tot == 0:
        return 1.0
    return float(1.0 - (resid ** 2).sum() / ss_tot)


def power_sweep_norms(exponents=SWEEP_EXPONENTS, depth: int = SWEEP_DEPTH):
    """Dual-measure norms of the dyadic Hilbert shift over the power family."""
    grid = build_grid(1, depth)
    T = hilbert_shift(grid)
    chars, norms = [], []
    for a in exponents:
        w = power_weight(a, grid)
        chars.append(w.a2_characteristic())
        norms.append(operator_norm(T, w, dual_weight(w)))
    return chars, norms


def sweep_models(chars, norms) -> dict:
    chars = np.asarray(chars)
    norms = np.asarray(norms)
    ratios = norms / chars
    return {
        "chars": [float(c) for c in chars],
        "norms": [float(n) for n in norms],
        "ratio_min": float(ratios.min()),
        "ratio_max": float(ratios.max()),
        "r2_linear": affine_r2(chars, norms),
        "r2_sqrt": affine_r2(np.sqrt(chars), norms),
        "r2_quadratic": affine_r2(chars ** 2, norms),
    }


# ---------------------------------------------------------------------------
# weak-L1 spike suite
# ---------------------------------------------------------------------------

def weak_l1_trial(tau: int, t: int, depth: int = WEAK_L1_DEPTH):
    """Shift and L1-normalized spike for trial t of the weak-type suite."""
    from .grid import haar_basis

    grid = build_grid(1, depth)
    T = random_simple_shift(tau, 5000 + 1000 * tau + t, grid)
    rng = np.random.default_rng(6000 + 1000 * tau + t)
    if t % 2 == 0:
        level = int(rng.integers(1, grid.N))
        flat = int(rng.integers(0, grid.level_count(level)))
        h = haar_basis(grid.cube(level, flat))[0].as_grid_function()
        f = h * (1.0 / h.l1_norm())
    else:
        vals = np.zeros(grid.cell_count)
        cells = rng.choice(grid.cell_count, size=8, replace=False)
        vals[cells] = rng.standard_normal(8)
        f = GridFunction(grid, vals)
        f = f * (1.0 / f.l1_norm())
    return T, f


# ---------------------------------------------------------------------------
# John-Nirenberg family suite
# ---------------------------------------------------------------------------

def jn_epsilon_family(grid: DyadicGrid, tau: int, eps: float,
                      seed: int) -> ProfileFamily:
    """Small random sign multiples of a fixed profile shape on every cube."""
    rng = np.random.default_rng(seed)
    m = 1 << (tau * grid.d)
    shape = np.concatenate([np.ones(m // 2), -np.ones(m - m // 2)])
    profiles = {}
    for j in range(0, grid.N - tau + 1):
        signs = rng.integers(0, 2, size=(grid.level_count(j), 1)) * 2.0 - 1.0
        profiles[j] = eps * signs * shape[None, :]
    return ProfileFamily(grid, tau, profiles)


def jn_boundary_family(i: int, depth: int = JN_DEPTH) -> ProfileFamily:
    """Random bounded family rescaled onto the level-set hypothesis boundary.

    The hypothesis superlevel measure is monotone in the family scale, so a
    bisection finds the largest passing scale; the returned family sits just
    inside it, which keeps the exponential-decay conclusion non-vacuous.
    """
    grid = build_grid(1, depth)
    tau = 1 + i % 3
    rng = np.random.default_rng(8000 + i)
    m = 1 << (tau * grid.d)
    raw = {
        j: rng.uniform(-1.0, 1.0, size=(grid.level_count(j), m))
        for j in range(0, grid.N - tau + 1)
    }
    base = ProfileFamily(grid, tau, raw)

    def passes(scale: float) -> bool:
        return jn_check(base.scaled(scale), t_values=(1,)).hypothesis_ok

    if passes(1.0):
        return base
    lo, hi = 0.0, 1.0
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return base.scaled(lo)


# ---------------------------------------------------------------------------
# sweep configuration for the CLI
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Deterministic sweep description; identical configs give identical bytes."""

    experiment_id: str = "a2-power-sweep"
    d: int = 1
    N: int = SWEEP_DEPTH
    shift_kind: str = "hilbert"
    tau: int = 2
    shift_seed: int = 0
    separated: bool = False
    weights: list = field(default_factory=lambda: [
        {"family": "power", "a": a} for a in SWEEP_EXPONENTS
    ])
    norm_method: str = "power-iteration"
    with_testing: bool = False
    with_corona: bool = False
    out_dir: str = "out"
    fmt: str = "csv"

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        cfg = cls()
        grid = obj.get("grid", {})
        cfg.d = int(grid.get("d", cfg.d))
        cfg.N = int(grid.get("N", cfg.N))
        shift = obj.get("shift", {})
        cfg.shift_kind = shift.get("kind", cfg.shift_kind)
        cfg.tau = int(shift.get("tau", cfg.tau))
        cfg.shift_seed = int(shift.get("seed", cfg.shift_seed))
        cfg.separated = bool(shift.get("separated", cfg.separated))
        cfg.experiment_id = obj.get("experiment_id", cfg.experiment_id)
        cfg.weights = obj.get("weights", cfg.weights)
        cfg.norm_method = obj.get("norm_method", cfg.norm_method)
        cfg.with_testing = bool(obj.get("with_testing", cfg.with_testing))
        cfg.with_corona = bool(obj.get("with_corona", cfg.with_corona))
        cfg.out_dir = obj.get("out_dir", cfg.out_dir)
        cfg.fmt = obj.get("format", cfg.fmt)
        return cfg

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "grid": {"d": self.d, "N": self.N},
            "shift": {
                "kind": self.shift_kind,
                "tau": self.tau,
                "seed": self.shift_seed,
                "separated": self.separated,
            },
            "weights": self.weights,
            "norm_method": self.norm_method,
            "with_testing": self.with_testing,
            "with_corona": self.with_corona,
            "format": self.fmt,
        }


def build_config_shift(cfg: ExperimentConfig, grid: DyadicGrid) -> SimpleHaarShift:
    from .shifts import martingale_transform, random_signs, zero_shift

    if cfg.shift_kind == "hilbert":
        return hilbert_shift(grid, separated=cfg.separated)
    if cfg.shift_kind == "martingale":
        return martingale_transform(random_signs(grid, cfg.shift_seed), grid,
                                    separated=cfg.separated)
    if cfg.shift_kind == "random":
        return random_simple_shift(cfg.tau, cfg.shift_seed, grid,
                                   separated=cfg.separated)
    if cfg.shift_kind == "zero":
        return zero_shift(grid, cfg.tau)
    raise ValueError(f"unknown shift kind {cfg.shift_kind!r}")


def build_config_weight(spec: dict, grid: DyadicGrid) -> tuple[str, Weight]:
    family = spec.get("family", "constant")
    if family == "constant":
        value = float(spec.get("value", 1.0))
        return f"constant:{value}", Weight(GridFunction.constant(grid, value))
    if family == "power":
        a = float(spec["a"])
        return f"power:a={a}", power_weight(a, grid)
    if family == "cascade":
        n = spec["n"]
        seed = int(spec.get("seed", 0))
        return f"cascade:n={n}:seed={seed}", random_a2_weight(n, seed, grid)
    if family == "file":
        from .serialize import load_weight
        return f"file:{spec['path']}", load_weight(spec["path"])
    raise ValueError(f"unknown weight family {family!r}")


def _sweep_row(args) -> SweepRow:
    cfg_dict, spec = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    grid = build_grid(cfg.d, cfg.N)
    T = build_config_shift(cfg, grid)
    start = perf_counter()
    wid, w = build_config_weight(spec, grid)
    wi = dual_weight(w)
    a2 = w.a2_characteristic()
    norm = operator_norm(T, w, wi, method=cfg.norm_method)
    c_wb = c_t1 = c_tstar1 = 0.0
    if cfg.with_testing:
        rep = testing_constants(T, w, wi, norm_method="power-iteration")
        c_wb, c_t1, c_tstar1 = rep.c_wb, rep.c_t1, rep.c_tstar1
    stopping_count, carleson_max = 0, 0.0
    if cfg.with_corona:
        from .corona import carleson_check
        corona = corona_for(w)
        stopping_count = corona.stopping.count()
        carleson_max = carleson_check(corona).worst_ratio
    runtime_ms = (perf_counter() - start) * 1000.0
    return SweepRow(wid, a2, norm, c_wb, c_t1, c_tstar1, stopping_count,
                    carleson_max, runtime_ms)


def run_sweep(cfg: ExperimentConfig) -> list[SweepRow]:
    jobs = [(cfg.to_dict(), spec) for spec in cfg.weights]
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_row, jobs))
    return [_sweep_row(j) for j in jobs]
