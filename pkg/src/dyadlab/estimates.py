"""Quantitative estimates: testing constants, paraproducts, partial-sum
functionals, corona splits, and distributional checks.

The central object is the localized partial sum H(Q0, F) = sum over family
cubes Q inside Q0 of <w, g_Q> gamma_Q, whose weighted norms drive every bound
here.  All scans share one trick: per-level "suffix" cell arrays accumulate
the output fields of all family levels at or below a level j, so quantities
indexed by every cube of the grid cost O(N 2^(Nd)) in total instead of one
operator application per cube.  Indicator testing (the T1-style constants)
additionally corrects the suffix field by the few ancestor profiles that see
the indicator cutoff; a brute-force oracle on small grids pins the fast path
down in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import (
    DyadicCube,
    DyadicGrid,
    GridError,
    GridFunction,
    ancestor_map,
    descendant_flat,
    expand,
    integral_pyramid,
    pool,
    scatter_subcells,
    subcell_matrix,
)
from .weights import Weight, a_infty_modulus, dual_weight, two_weight_a2
from .corona import CoronaDecomposition, CoronaStructureError, CubeSet, pn_alpha
from .shifts import SimpleHaarShift, operator_norm


def _cells_of(grid: DyadicGrid, w: Weight | None) -> np.ndarray:
    """Cell measures (value * cell volume); Lebesgue when w is None."""
    if w is None:
        return np.full(grid.cell_count, grid.cell_volume)
    return w.values * grid.cell_volume


def _local_ancestor(d: int, delta_from: int, delta_to: int, rel: int) -> int:
    """Ancestor of a local offset: depth delta_from -> depth delta_to under one cube."""
    t = delta_from - delta_to
    if d == 1:
        return rel >> t
    r0, r1 = rel >> delta_from, rel & ((1 << delta_from) - 1)
    return ((r0 >> t) << delta_to) + (r1 >> t)


# ---------------------------------------------------------------------------
# testing constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestingReport:
    """Two-weight testing constants of a shift against the pair (sigma, mu)."""

    c_wb: float
    c_t1: float
    c_tstar1: float
    full_norm: float
    tau: int
    witnesses: dict

    @property
    def testing_sum(self) -> float:
        return self.c_wb + self.c_t1 + self.c_tstar1

    def to_dict(self) -> dict:
        return {
            "c_wb": self.c_wb,
            "c_t1": self.c_t1,
            "c_tstar1": self.c_tstar1,
            "full_norm": self.full_norm,
            "tau": self.tau,
            "witnesses": {
                k: (v.address() if isinstance(v, DyadicCube)
                    else [c.address() for c in v])
                for k, v in self.witnesses.items()
            },
        }


class _IndicatorScan:
    """Shared state for scanning T(sigma 1_Q) over every cube Q.

    Builds, per level j, the suffix field S_j (the output of all family cubes
    at levels >= j with full-pairing coefficients, which is exact on Q for the
    sub-Q part of T(sigma 1_Q)), the ancestor pairing corrections, and pooled
    integrals against mu, enough to evaluate both the localized L2(mu) norms
    and arbitrary pair integrals without further operator applications.
    """

    def __init__(self, T: SimpleHaarShift, sigma: Weight | None, mu: Weight | None):
        grid = T.grid
        self.T = T
        self.grid = grid
        d, N, tau = grid.d, grid.N, T.tau
        self.sigma_cells = _cells_of(grid, sigma)
        self.mu_cells = _cells_of(grid, mu)
        self.sigma_sums = integral_pyramid(self.sigma_cells, d, N)
        self.mu_sums = integral_pyramid(self.mu_cells, d, N)
        fam = sorted(T.levels)
        self.fam = fam

        # full pairing coefficients and per-level fields
        self.cf = {}       # a -> (k, count_a)
        self.ynat = {}     # a -> flat level-(a+tau) output field values
        self.gval = {}     # a -> (count_{a+tau}, k) g profile value field
        self.gamval = {}   # a -> (count_{a+tau}, k) gamma profile value field
        for a in fam:
            sub = subcell_matrix(self.sigma_sums[a + tau], d, tau)
            self.cf[a] = np.einsum("kcm,cm->kc", T.g[a], sub)
            self.ynat[a] = scatter_subcells(
                np.einsum("kc,kcm->cm", self.cf[a], T.gamma[a]), d, tau
            )
            self.gval[a] = np.stack(
                [scatter_subcells(T.g[a][k], d, tau) for k in range(T.g[a].shape[0])],
                axis=-1,
            )
            self.gamval[a] = np.stack(
                [scatter_subcells(T.gamma[a][k], d, tau) for k in range(T.gamma[a].shape[0])],
                axis=-1,
            )

        # gamma-field integrals against mu, as full pyramids per ancestor level
        self.gmu = {}
        for a in fam:
            gam_cells = expand(self.gamval[a], d, N - (a + tau))
            self.gmu[a] = integral_pyramid(gam_cells * self.mu_cells[:, None], d, N)

        # ancestor pairings <sigma 1_Q, g_{P_a(Q)}>: ca[j][a] has shape (count_j, k)
        self.ca = [dict() for _ in range(N + 1)]
        for j in range(N + 1):
            for a in fam:
                if a >= j:
                    continue
                if j >= a + tau:
                    amap = ancestor_map(d, j, a + tau)
                    raw = self.gval[a][amap] * self.sigma_sums[j][:, None]
                else:
                    raw = pool(self.gval[a] * self.sigma_sums[a + tau][:, None],
                               d, (a + tau) - j)
                self.ca[j][a] = raw

        # descending sweep: suffix fields and their pooled mu-integrals
        self.ps1 = [None] * (N + 1)       # pyramids of S_j * mu
        self.ps2 = [None] * (N + 1)       # level-j integrals of S_j^2 * mu
        self.s_cells = [None] * (N + 1)   # kept for shallow cross terms
        s = np.zeros(grid.cell_count)
        for j in range(N, -1, -1):
            if j in T.g:
                s = s + expand(self.ynat[j], d, N - (j + tau))
            self.s_cells[j] = s
            self.ps1[j] = integral_pyramid(s * self.mu_cells, d, N)
            self.ps2[j] = pool(s * s * self.mu_cells, d, N - j)

    def localized_norm_sq(self, j: int) -> np.ndarray:
        """integral over Q of T(sigma 1_Q)^2 dmu, for every cube Q at level j."""
        grid, tau = self.grid, self.T.tau
        d, N = grid.d, grid.N
        count = grid.level_count(j)
        total = self.ps2[j].copy()
        ps1_j = self.ps1[j][j]
        mu_j = self.mu_sums[j]

        deep = [a for a in self.fam if a <= j - tau]
        shallow = [a for a in self.fam if j - tau < a < j]

        kappa = np.zeros(count)
        for a in deep:
            amap = ancestor_map(d, j, a + tau)
            kappa += (self.ca[j][a] * self.gamval[a][amap]).sum(axis=-1)
        total += 2.0 * kappa * ps1_j + kappa * kappa * mu_j

        if shallow:
            gam_cells = {
                a: expand(self.gamval[a], d, N - (a + tau)) for a in shallow
            }
            s_j = self.s_cells[j]
            for a in shallow:
                gs = pool(gam_cells[a] * (s_j * self.mu_cells)[:, None], d, N - j)
                gm = pool(gam_cells[a] * self.mu_cells[:, None], d, N - j)
                ca = self.ca[j][a]
                total += 2.0 * (ca * gs).sum(axis=-1)
                total += 2.0 * kappa * (ca * gm).sum(axis=-1)
            for a in shallow:
                for b in shallow:
                    prod = np.einsum(
                        "ck,cl->ckl", gam_cells[a], gam_cells[b]
                    ) * self.mu_cells[:, None, None]
                    pp = pool(prod.reshape(grid.cell_count, -1), d, N - j)
                    ka = self.ca[j][a].shape[1]
                    kb = self.ca[j][b].shape[1]
                    pp = pp.reshape(count, ka, kb)
                    total += np.einsum("ck,ckl,cl->c", self.ca[j][a], pp,
                                       self.ca[j][b])
        return total

    def pair_integral_parts(self, jq: int, dp: int, relp: int, ds: int, rels: int):
        """integral over Q'' of T(sigma 1_{Q'}) dmu for the aligned family.

        Q runs over level jq; Q' is its depth-dp descendant at local offset
        relp, Q'' the depth-ds one at rels.  Returns (values, q1, q2) flat
        index arrays at levels jq+dp and jq+ds.
        """
        grid, tau = self.grid, self.T.tau
        d = grid.d
        jp, js = jq + dp, jq + ds
        base = np.arange(grid.level_count(jq))
        q1 = descendant_flat(d, jq, jp, base, relp)
        q2 = descendant_flat(d, jq, js, base, rels)

        if ds <= dp and _local_ancestor(d, dp, ds, relp) == rels:
            loc = self.ps1[jp][jp][q1]          # Q' inside Q'': integrate over Q'
        elif dp < ds and _local_ancestor(d, ds, dp, rels) == relp:
            loc = self.ps1[jp][js][q2]          # Q'' strictly inside Q'
        else:
            loc = 0.0

        total = np.zeros(base.size) + loc
        for a in self.fam:
            if a >= jp:
                continue
            cvec = self.ca[jp][a][q1]           # (n, k)
            if a <= jq:
                gmu = self.gmu[a][js][q2]
            else:
                anc_q1 = ancestor_map(d, jp, a)[q1]
                if a <= js:
                    inside = ancestor_map(d, js, a)[q2] == anc_q1
                    gmu = np.where(inside[:, None], self.gmu[a][js][q2], 0.0)
                else:
                    covers = ancestor_map(d, a, js)[anc_q1] == q2
                    gmu = np.where(covers[:, None], self.gmu[a][a][anc_q1], 0.0)
            total += (cvec * gmu).sum(axis=-1)
        return total, q1, q2


def _t1_constant(scan: _IndicatorScan):
    grid = scan.grid
    best, wit = 0.0, None
    for j in range(grid.N + 1):
        num = scan.localized_norm_sq(j)
        ratio = num / scan.sigma_sums[j]
        k = int(np.argmax(ratio))
        if ratio[k] > best or wit is None:
            best, wit = float(ratio[k]), grid.cube(j, k)
    return math.sqrt(max(best, 0.0)), wit


def _wb_constant(scan: _IndicatorScan):
    grid, tau = scan.grid, scan.T.tau
    d, N = grid.d, grid.N
    best, wit = 0.0, (grid.root(), grid.root())
    for jq in range(N + 1):
        dmax = min(tau - 1, N - jq)
        for dp in range(dmax + 1):
            for relp in range(1 << (dp * d)):
                for ds in range(dmax + 1):
                    for rels in range(1 << (ds * d)):
                        vals, q1, q2 = scan.pair_integral_parts(jq, dp, relp, ds, rels)
                        den = np.sqrt(
                            scan.sigma_sums[jq + dp][q1] * scan.mu_sums[jq + ds][q2]
                        )
                        ratio = np.abs(vals) / den
                        k = int(np.argmax(ratio))
                        if ratio[k] > best:
                            best = float(ratio[k])
                            wit = (grid.cube(jq + dp, int(q1[k])),
                                   grid.cube(jq + ds, int(q2[k])))
    return best, wit


def testing_constants(T: SimpleHaarShift, sigma: Weight | None, mu: Weight | None,
                      norm_method: str = "auto") -> TestingReport:
    """Weak-boundedness and indicator-testing constants with the full norm.

    C_T1 maximizes ||1_Q T(sigma 1_Q)||_{L2(mu)} / sigma(Q)^(1/2) over all
    cubes; C_T*1 swaps the roles through the adjoint; C_WB maximizes the pair
    integrals over cubes Q', Q'' lying in a common Q at most tau-1 levels up.
    Each constant is a restricted-supremum lower bound for the norm of
    f -> T(sigma f) from L2(sigma) to L2(mu).
    """
    scan = _IndicatorScan(T, sigma, mu)
    c_t1, wit_t1 = _t1_constant(scan)
    scan_star = _IndicatorScan(T.adjoint(), mu, sigma)
    c_tstar1, wit_tstar1 = _t1_constant(scan_star)
    c_wb, wit_wb = _wb_constant(scan)
    full = operator_norm(T, sigma, mu, method=norm_method)
    return TestingReport(
        c_wb=c_wb, c_t1=c_t1, c_tstar1=c_tstar1, full_norm=full, tau=T.tau,
        witnesses={"t1": wit_t1, "tstar1": wit_tstar1, "wb": list(wit_wb)},
    )


def brute_testing_constants(T: SimpleHaarShift, sigma: Weight | None,
                            mu: Weight | None) -> TestingReport:
    """Oracle evaluation by one operator application per indicator (small grids)."""
    grid = T.grid
    if grid.cell_count > 4096:
        raise GridError("brute-force testing constants limited to 4096 cells")
    d, N, tau = grid.d, grid.N, T.tau
    mu_cells = _cells_of(grid, mu)
    sigma_sums = integral_pyramid(_cells_of(grid, sigma), d, N)
    mu_sums = integral_pyramid(mu_cells, d, N)

    def t1_side(op, s_sums, m_cells):
        best, wit = 0.0, grid.root()
        pyrs = {}
        for j in range(N + 1):
            for flat in range(grid.level_count(j)):
                cube = grid.cube(j, flat)
                ind = GridFunction.indicator(cube).values
                svals = ind if op[1] is None else ind * op[1].values
                out = op[0].apply_values(svals)
                pyrs[(j, flat)] = integral_pyramid(out * m_cells, d, N)
                num = float((cube.cell_values(out) ** 2 * cube.cell_values(m_cells)).sum())
                ratio = math.sqrt(num / s_sums[j][flat])
                if ratio > best:
                    best, wit = ratio, cube
        return best, wit, pyrs

    c_t1, wit_t1, pyrs = t1_side((T, sigma), sigma_sums, mu_cells)
    c_tstar1, wit_tstar1, _ = t1_side(
        (T.adjoint(), mu), mu_sums, _cells_of(grid, sigma)
    )

    c_wb, wit_wb = 0.0, (grid.root(), grid.root())
    for j in range(N + 1):
        for flat in range(grid.level_count(j)):
            q = grid.cube(j, flat)
            deep = min(tau - 1, N - j)
            members = [q]
            frontier = [q]
            for _ in range(deep):
                frontier = [c for f in frontier for c in f.children()]
                members.extend(frontier)
            for qp in members:
                pyr = pyrs[(qp.level, qp.flat)]
                for qs in members:
                    val = abs(pyr[qs.level][qs.flat])
                    den = math.sqrt(
                        sigma_sums[qp.level][qp.flat] * mu_sums[qs.level][qs.flat]
                    )
                    if val / den > c_wb:
                        c_wb, wit_wb = val / den, (qp, qs)
    full = operator_norm(T, sigma, mu, method="dense-svd")
    return TestingReport(
        c_wb=c_wb, c_t1=c_t1, c_tstar1=c_tstar1, full_norm=full, tau=T.tau,
        witnesses={"t1": wit_t1, "tstar1": wit_tstar1, "wb": list(wit_wb)},
    )


# ---------------------------------------------------------------------------
# paraproduct
# ---------------------------------------------------------------------------

def _weighted_level_averages(cells_values: np.ndarray, w_sums, w_cells,
                             d: int, N: int) -> list[np.ndarray]:
    """Per level: integral of the function against w over each cube / w(Q)."""
    pyr = integral_pyramid(cells_values * w_cells, d, N)
    return [pyr[j] / w_sums[j] for j in range(N + 1)]


def paraproduct_apply(f: GridFunction, T: SimpleHaarShift, sigma: Weight | None,
                      w: Weight) -> GridFunction:
    """Paraproduct pairing sigma-averages of f with the w-martingale
    differences of T(sigma 1), summed over all cubes with children."""
    grid = f.grid
    if grid != T.grid or grid != w.grid:
        raise GridError("grid mismatch")
    d, N = grid.d, grid.N
    sigma_cells = _cells_of(grid, sigma)
    sigma_sums = integral_pyramid(sigma_cells, d, N)
    g_cells = T.apply_values(sigma_cells / grid.cell_volume)  # T(sigma 1)
    a = [pool(f.values * sigma_cells, d, N - j) / sigma_sums[j] for j in range(N)]
    avg = _weighted_level_averages(g_cells, w.sums, _cells_of(grid, w), d, N)
    out = np.zeros(grid.cell_count)
    for j in range(N):
        diff = expand(avg[j + 1], d, N - (j + 1)) - expand(avg[j], d, N - j)
        out += expand(a[j], d, N - j) * diff
    return GridFunction(grid, out)


def paraproduct_identity(f: GridFunction, T: SimpleHaarShift, sigma: Weight | None,
                         w: Weight) -> tuple[float, float]:
    """Both sides of ||P f||^2_{L2(w)} = sum_Q a_Q^2 ||D_Q^w T(sigma 1)||^2_{L2(w)}."""
    grid = f.grid
    d, N = grid.d, grid.N
    w_cells = _cells_of(grid, w)
    sigma_cells = _cells_of(grid, sigma)
    sigma_sums = integral_pyramid(sigma_cells, d, N)
    p = paraproduct_apply(f, T, sigma, w)
    lhs = float((p.values ** 2 * w_cells).sum())

    g_cells = T.apply_values(sigma_cells / grid.cell_volume)
    avg = _weighted_level_averages(g_cells, w.sums, w_cells, d, N)
    a = [pool(f.values * sigma_cells, d, N - j) / sigma_sums[j] for j in range(N)]
    rhs = 0.0
    for j in range(N):
        diff = avg[j + 1] - expand(avg[j], d, 1)
        normsq = pool(w.sums[j + 1] * diff * diff, d, 1)
        rhs += float((a[j] ** 2 * normsq).sum())
    return lhs, rhs


# ---------------------------------------------------------------------------
# localized partial sums H and their suprema
# ---------------------------------------------------------------------------

def _masked_coefficients(T: SimpleHaarShift, w: Weight, cubes: CubeSet):
    coeffs = T.pairing_coefficients(w.values)
    masked = {}
    for a in T.levels:
        masked[a] = coeffs[a] * cubes.mask(a)[None, :]
    return masked


def h_functional(Q0: DyadicCube, cubes: CubeSet, T: SimpleHaarShift,
                 w: Weight) -> GridFunction:
    """Partial sum of <w, g_Q> gamma_Q over family cubes in `cubes` inside Q0."""
    grid = T.grid
    sel = cubes.restrict_under(Q0)
    masked = _masked_coefficients(T, w, sel)
    fields = T.output_fields(masked)
    out, prev = None, None
    for lev in sorted(fields):
        piece = fields[lev]
        out = piece if out is None else expand(out, grid.d, lev - prev) + piece
        prev = lev
    if out is None:
        return GridFunction.zeros(grid)
    return GridFunction(grid, expand(out, grid.d, grid.N - prev))


@dataclass(frozen=True)
class BoldHReport:
    value: float
    witness: DyadicCube | None
    restricted: bool


def bold_h(cubes: CubeSet, T: SimpleHaarShift, w: Weight,
           restrict_sup: bool = True) -> BoldHReport:
    """sup over Q0 of ||H(Q0, cubes)||_{L2(w^{-1})} / w(Q0)^(1/2).

    The supremum ranges over Q0 in `cubes` (the useful normalization) unless
    `restrict_sup` is disabled, in which case every cube competes.
    """
    grid = T.grid
    d, N = grid.d, grid.N
    masked = _masked_coefficients(T, w, cubes)
    dual_cells = grid.cell_volume / w.values
    ynat = {}
    for a in T.levels:
        ynat[a] = scatter_subcells(
            np.einsum("kc,kcm->cm", masked[a], T.gamma[a]), d, T.tau
        )
    best, wit = 0.0, None
    s = np.zeros(grid.cell_count)
    for j in range(N, -1, -1):
        if j in ynat:
            s = s + expand(ynat[j], d, N - (j + T.tau))
        cand_mask = cubes.mask(j) if restrict_sup else np.ones(grid.level_count(j), bool)
        if not cand_mask.any():
            continue
        norms = pool(s * s * dual_cells, d, N - j)
        ratio = np.where(cand_mask, norms / w.sums[j], -np.inf)
        k = int(np.argmax(ratio))
        if ratio[k] > best or wit is None:
            best, wit = float(max(ratio[k], 0.0)), grid.cube(j, k)
    return BoldHReport(math.sqrt(best), wit, restrict_sup)


# ---------------------------------------------------------------------------
# corona split A + 2B
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ABSplitReport:
    a_part: float
    b_part: float
    stopping_count: int
    single_value_dev: float


def corona_ab_split(Q0: DyadicCube, n: int, corona: CoronaDecomposition,
                    T: SimpleHaarShift, w: Weight,
                    tol: float = 1e-12) -> ABSplitReport:
    """Diagonal and off-diagonal parts of the stopping-family square expansion.

    A sums ||H_L||^2_{L2(w^{-1})} over stopping cubes; B sums the pairwise
    integrals of |H_L| against |H_L'| for nested stopping pairs.  Requires a
    scale-separated setup so H_L is single-valued on each strict stopping
    descendant; a violation raises CoronaStructureError.
    """
    grid = T.grid
    dual_cells = grid.cell_volume / w.values
    stops = [L for L in corona.stopping_cubes() if Q0.contains(L)]
    h_local = {}
    for L in stops:
        h = h_functional(L, corona.corona_of(L), T, w)
        h_local[(L.level, L.flat)] = np.abs(L.cell_values(h.values))
    a_part = 0.0
    for L in stops:
        vals = h_local[(L.level, L.flat)]
        a_part += float((vals ** 2 * L.cell_values(dual_cells)).sum())
    b_part = 0.0
    worst_dev = 0.0
    for L in stops:
        vals_l = h_local[(L.level, L.flat)]
        scale = max(1.0, float(vals_l.max()) if vals_l.size else 1.0)
        full_l = None
        if grid.d == 2:
            full_l = np.zeros(grid.cell_count)
            full_l[_flat_cells(L)] = vals_l
        for Lp in corona.stopping_descendants(L):
            if not Q0.contains(Lp):
                continue
            if grid.d == 1:
                lo = L.cell_slice().start
                sl = Lp.cell_slice()
                seg = vals_l[sl.start - lo:sl.stop - lo]
            else:
                seg = Lp.cell_values(full_l)
            dev = float(seg.max() - seg.min()) if seg.size else 0.0
            worst_dev = max(worst_dev, dev)
            if dev > tol * scale:
                raise CoronaStructureError(
                    "H is not single-valued on a stopping descendant; "
                    "build the decomposition on a scale-separated family"
                )
            b_part += float(
                (seg * h_local[(Lp.level, Lp.flat)] * Lp.cell_values(dual_cells)).sum()
            )
    return ABSplitReport(a_part, b_part, len(stops), worst_dev)


def _flat_cells(cube: DyadicCube) -> np.ndarray:
    grid = cube.grid
    if grid.d == 1:
        s = cube.cell_slice()
        return np.arange(s.start, s.stop)
    t = grid.N - cube.level
    m = 1 << grid.N
    r0 = np.arange(cube.index[0] << t, (cube.index[0] + 1) << t)
    r1 = np.arange(cube.index[1] << t, (cube.index[1] + 1) << t)
    return (r0[:, None] * m + r1[None, :]).reshape(-1)


# ---------------------------------------------------------------------------
# John-Nirenberg style check
# ---------------------------------------------------------------------------

class ProfileFamily:
    """Cube-indexed bounded profiles: phi_Q supported on Q, constant on the
    level(Q)+tau subcells, sup norm at most one."""

    __slots__ = ("grid", "tau", "levels", "profiles")

    def __init__(self, grid: DyadicGrid, tau: int, profiles: dict[int, np.ndarray],
                 validate: bool = True):
        self.grid = grid
        self.tau = int(tau)
        self.levels = tuple(sorted(profiles))
        self.profiles = {}
        for j in self.levels:
            block = np.asarray(profiles[j], dtype=np.float64)
            m = 1 << (self.tau * grid.d)
            if block.shape != (grid.level_count(j), m):
                raise GridError(f"profile block shape mismatch at level {j}")
            if validate and block.size and np.abs(block).max() > 1.0 + 1e-12:
                raise GridError("profile sup norm exceeds one")
            self.profiles[j] = block

    def scaled(self, s: float) -> "ProfileFamily":
        return ProfileFamily(
            self.grid, self.tau,
            {j: self.profiles[j] * s for j in self.levels}, validate=False,
        )


@dataclass(frozen=True)
class JNReport:
    hypothesis_ok: bool
    hypothesis_worst: float
    hypothesis_witness: DyadicCube | None
    conclusion_ok: bool | None
    conclusion_worst: dict | None
    t_values: tuple


def jn_check(family: ProfileFamily, t_values=tuple(range(1, 11))) -> JNReport:
    """Level-set hypothesis and exponential-decay conclusion for a profile family.

    Hypothesis: for every cube Q, |{x in Q : |sum_{Q' inside Q} phi_{Q'}| > 1}|
    is at most 2^(-tau d - 1) |Q|.  When it holds, the superlevel sets at
    heights 2 tau t must decay like tau 2^(-t+1) |Q|, checked at each t.
    """
    grid = family.grid
    d, N, tau = grid.d, grid.N, family.tau
    vol = grid.cell_volume
    suffix = np.zeros(grid.cell_count)
    hyp_worst, hyp_wit = 0.0, None
    conc_worst = {t: 0.0 for t in t_values}
    for j in range(N, -1, -1):
        if j in family.profiles:
            suffix = suffix + expand(
                scatter_subcells(family.profiles[j], d, tau), d, N - (j + tau)
            )
        absval = np.abs(suffix)
        over = pool((absval > 1.0).astype(np.float64) * vol, d, N - j)
        bound = (2.0 ** (-tau * d - 1)) * (2.0 ** (-j * d))
        ratio = over / bound
        k = int(np.argmax(ratio))
        if ratio[k] > hyp_worst or hyp_wit is None:
            hyp_worst, hyp_wit = float(ratio[k]), grid.cube(j, k)
        for t in t_values:
            over_t = pool((absval > 2.0 * tau * t).astype(np.float64) * vol, d, N - j)
            bound_t = tau * (2.0 ** (-t + 1)) * (2.0 ** (-j * d))
            conc_worst[t] = max(conc_worst[t], float((over_t / bound_t).max()))
    hyp_ok = hyp_worst <= 1.0 + 1e-12
    if not hyp_ok:
        return JNReport(False, hyp_worst, hyp_wit, None, None, tuple(t_values))
    conc_ok = all(v <= 1.0 + 1e-12 for v in conc_worst.values())
    return JNReport(True, hyp_worst, hyp_wit, conc_ok, conc_worst, tuple(t_values))


# ---------------------------------------------------------------------------
# distributional estimates on a corona fiber
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistributionCurve:
    """Superlevel masses of a localized sum at thresholds t * scale."""

    kind: str
    t_values: tuple
    masses: tuple
    total_mass: float
    scale: float

    def is_monotone(self) -> bool:
        return all(a >= b - 1e-15 for a, b in zip(self.masses, self.masses[1:]))

    def normalized(self) -> tuple:
        return tuple(m / self.total_mass for m in self.masses)

    def log_slope(self) -> float | None:
        """Least-squares slope of log(mass) against t over positive masses."""
        ts = [t for t, m in zip(self.t_values, self.masses) if m > 0]
        ms = [math.log(m) for m in self.masses if m > 0]
        if len(ts) < 2:
            return None
        tbar = sum(ts) / len(ts)
        mbar = sum(ms) / len(ms)
        den = sum((t - tbar) ** 2 for t in ts)
        if den == 0:
            return None
        return sum((t - tbar) * (m - mbar) for t, m in zip(ts, ms)) / den


@dataclass(frozen=True)
class EssenceReport:
    lebesgue_curve: DistributionCurve
    dual_curve: DistributionCurve
    seven_single_worst: float
    alpha_window_worst: float
    weak_type_worst: float
    k_constant: float
    alpha_values: tuple


def essence_check(L: DyadicCube, cubes: CubeSet, T: SimpleHaarShift, w: Weight,
                  k_constant: float, t_values=tuple(range(1, 9))) -> EssenceReport:
    """Distributional data for H(L, fiber) at thresholds K t w(L)/|L|.

    Returns the superlevel masses in Lebesgue and dual measure, the worst
    single-term ratio against w(Q)/|Q| (with its four-fold alpha-window bound),
    and the worst weak-type ratio of the alpha-class partial sums below their
    class members.
    """
    grid = T.grid
    d, N = grid.d, grid.N
    dens_l = w.density(L)
    dual_cells = grid.cell_volume / w.values
    h = h_functional(L, cubes, T, w)
    local = np.abs(L.cell_values(h.values))
    local_dual = L.cell_values(dual_cells)
    vol = grid.cell_volume

    leb_masses, dual_masses = [], []
    for t in t_values:
        thr = k_constant * t * dens_l
        sel = local > thr
        leb_masses.append(float(sel.sum()) * vol)
        dual_masses.append(float(local_dual[sel].sum()))
    leb_curve = DistributionCurve("lebesgue", tuple(t_values), tuple(leb_masses),
                                  L.volume, k_constant * dens_l)
    dual_curve = DistributionCurve("dual", tuple(t_values), tuple(dual_masses),
                                   float(local_dual.sum()), k_constant * dens_l)

    strata = pn_alpha(L, cubes, w)
    coeffs = _masked_coefficients(T, w, cubes)
    seven_worst, window_worst, weak_worst = 0.0, 0.0, 0.0
    for alpha in strata.alpha_values():
        members = strata.classes[alpha]
        band_cap = 4.0 * (2.0 ** (-alpha)) * dens_l
        for a in members.levels():
            if a not in T.g:
                continue
            sel = members.masks[a]
            idx = np.nonzero(sel)[0]
            if idx.size == 0:
                continue
            dens_q = w.sums[a][idx] * (2.0 ** (a * d))
            coef = coeffs[a][:, idx]
            sup_gamma = np.abs(T.gamma[a][:, idx, :]).max(axis=-1)
            term_peak = (np.abs(coef) * sup_gamma).max(axis=0)
            seven_worst = max(seven_worst, float((term_peak / dens_q).max()))
            window_worst = max(window_worst, float((dens_q / band_cap).max()))
        # weak-type ratio of the class partial sums below each class member
        masked = {a: coeffs[a] * members.mask(a)[None, :] for a in T.levels}
        fields = {}
        for a in T.levels:
            fields[a] = scatter_subcells(
                np.einsum("kc,kcm->cm", masked[a], T.gamma[a]), d, T.tau
            )
        s = np.zeros(grid.cell_count)
        for j in range(N, -1, -1):
            if j in fields:
                s = s + expand(fields[j], d, N - (j + T.tau))
            sel = members.mask(j)
            if not sel.any():
                continue
            rows = np.abs(subcell_matrix(s, d, N - j))
            rows = np.sort(rows, axis=1)[:, ::-1]
            counts = np.arange(1, rows.shape[1] + 1)
            weak = (rows * counts[None, :]).max(axis=1) * vol
            denom = (2.0 ** (-alpha)) * dens_l * (2.0 ** (-j * d))
            weak_worst = max(weak_worst, float((weak[sel] / denom).max()))
    return EssenceReport(
        lebesgue_curve=leb_curve, dual_curve=dual_curve,
        seven_single_worst=seven_worst, alpha_window_worst=window_worst,
        weak_type_worst=weak_worst, k_constant=k_constant,
        alpha_values=tuple(strata.alpha_values()),
    )


# ---------------------------------------------------------------------------
# derived weak boundedness and sufficiency experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WbFromT1Report:
    i2_worst: float
    i3_worst: float
    largescale_worst: float
    chain_worst: float
    a2: float

    def to_dict(self) -> dict:
        return {
            "i2_worst": self.i2_worst,
            "i3_worst": self.i3_worst,
            "largescale_worst": self.largescale_worst,
            "chain_worst": self.chain_worst,
            "a2": self.a2,
        }


def weak_boundedness_from_t1_check(T: SimpleHaarShift, w: Weight) -> WbFromT1Report:
    """Diagnostic ratios for deriving weak boundedness from indicator testing.

    Scans every cube pair (Q, R) with |R| within 2^(+-(tau+1)d) of |Q| for the
    pairing of T(w 1_Q) against w^{-1} 1_R normalized by ||w||_A2
    sqrt(w(Q) w^{-1}(R)); reports the worst such ratio, the indicator-testing
    ratio normalized by ||w||_A2^2 w(Q), the large-scale off-cube ratio
    against w(Q) w^{-1}(R)/|R| over nested pairs, and the elementary chain
    sqrt(w(Q) w^{-1}(R))/|R| <= sqrt(||w||_A2) over nested pairs.
    """
    grid = T.grid
    d, N, tau = grid.d, grid.N, T.tau
    a2 = w.a2_characteristic()
    dual = dual_weight(w)
    dual_cells = _cells_of(grid, dual)
    i2_worst = i3_worst = large_worst = chain_worst = 0.0
    for j in range(N + 1):
        for flat in range(grid.level_count(j)):
            q = grid.cube(j, flat)
            out = T.apply_values(GridFunction.indicator(q).values * w.values)
            pyr = integral_pyramid(out * dual_cells, d, N)
            wq = w.sums[j][flat]
            loc = float((q.cell_values(out) ** 2 * q.cell_values(dual_cells)).sum())
            i3_worst = max(i3_worst, loc / (a2 ** 2 * wq))
            for lr in range(max(0, j - (tau + 1)), min(N, j + (tau + 1)) + 1):
                rights = a2 * np.sqrt(wq * dual.sums[lr])
                i2_worst = max(i2_worst, float((np.abs(pyr[lr]) / rights).max()))
            for lr in range(max(0, j - (tau + 1)), j + 1):
                anc = q.ancestor_at(lr)
                inner = float(pyr[lr][anc.flat]) - float(pyr[j][flat])
                denom = wq * dual.sums[lr][anc.flat] * (2.0 ** (lr * d))
                if q != anc:
                    large_worst = max(large_worst, abs(inner) / denom)
                chain = math.sqrt(wq * dual.sums[lr][anc.flat]) * (2.0 ** (lr * d))
                chain_worst = max(chain_worst, chain / math.sqrt(a2))
    return WbFromT1Report(i2_worst, i3_worst, large_worst, chain_worst, a2)


@dataclass(frozen=True)
class SufficiencyReport:
    two_weight_a2: float
    a_infty_alpha: float
    a_infty_beta: float
    eps: float
    norms: tuple
    worst_norm: float
    ratio_to_sqrt_a2: float

    def to_dict(self) -> dict:
        return {
            "two_weight_a2": self.two_weight_a2,
            "a_infty_alpha": self.a_infty_alpha,
            "a_infty_beta": self.a_infty_beta,
            "eps": self.eps,
            "norms": list(self.norms),
            "worst_norm": self.worst_norm,
            "ratio_to_sqrt_a2": self.ratio_to_sqrt_a2,
        }


def sufficiency_experiment(alpha: Weight, beta: Weight, shifts,
                           eps: float = 0.5,
                           norm_method: str = "auto") -> SufficiencyReport:
    """Measure shift norms from L2(alpha) to L2(beta) against the pair constant.

    Reports the joint supremum constant sup_Q (alpha(Q)/|Q|)(beta(Q)/|Q|), the
    flatness moduli of both weights at the given eps, the measured norms over
    the shift family, and the worst norm normalized by the square root of the
    pair constant.
    """
    a2_pair = two_weight_a2(alpha, beta).characteristic
    mod_a = a_infty_modulus(alpha, eps)
    mod_b = a_infty_modulus(beta, eps)
    norms = tuple(
        operator_norm(T, sigma=alpha, mu=beta, method=norm_method) for T in shifts
    )
    worst = max(norms) if norms else 0.0
    return SufficiencyReport(
        two_weight_a2=a2_pair, a_infty_alpha=mod_a, a_infty_beta=mod_b, eps=eps,
        norms=norms, worst_norm=worst,
        ratio_to_sqrt_a2=worst / math.sqrt(a2_pair) if a2_pair > 0 else 0.0,
    )
