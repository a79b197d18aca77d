"""Haar shift operators on dyadic grids.

Two operator classes are implemented.  A simple shift of index tau pairs the
input against one localized mean-zero profile g_Q per cube and emits a second
profile gamma_Q, both stored as values on the level(Q)+tau subcells of Q and
sup-bounded by |Q|^(-1/2).  A generic shift stores sparse Haar-to-Haar
coefficients a_{Q',Q''} under a common parent with the size bound
sqrt(|Q'||Q''|)/|Q|.  Application is matrix-free: one integral pyramid, one
pairing pass per level, one expansion pass, costing O((2^(tau d) + N) 2^(Nd)).

The module also provides operator norms between weighted L^2 spaces (power
iteration against a dense SVD oracle), the dyadic Calderon-Zygmund
decomposition, and a weak-L1 superlevel diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    DyadicCube,
    DyadicGrid,
    GridError,
    GridFunction,
    expand,
    integral_pyramid,
    scatter_subcells,
    subcell_matrix,
)
from .weights import Weight


class ShiftError(ValueError):
    """Invalid shift data or incompatible operands."""


class OperatorNormError(RuntimeError):
    """Power iteration failed to converge; carries the last estimate bracket."""

    def __init__(self, message, bracket):
        super().__init__(message)
        self.bracket = bracket


def _check_profile_block(block: np.ndarray, level: int, tau: int, grid: DyadicGrid):
    """Profiles must be mean zero over their cube and sup-bounded by |Q|^(-1/2)."""
    count = grid.level_count(level)
    m = 1 << (tau * grid.d)
    if block.shape[-2:] != (count, m):
        raise ShiftError(
            f"profile block at level {level} must have shape (*, {count}, {m})"
        )
    bound = 2.0 ** (level * grid.d / 2.0)
    if block.size and np.abs(block).max() > bound * (1 + 1e-12):
        raise ShiftError(f"profile sup norm exceeds |Q|^(-1/2) at level {level}")
    if block.size and np.abs(block.sum(axis=-1)).max() > 1e-9 * max(bound, 1.0):
        raise ShiftError(f"profile not mean zero at level {level}")


def default_levels(grid: DyadicGrid, tau: int, separated: bool = False) -> tuple[int, ...]:
    """Cube family levels: all of 0..N-tau, or every tau-th level when separated."""
    top = grid.N - tau
    if top < 0:
        raise ShiftError(f"tau={tau} exceeds grid depth {grid.N}")
    step = tau if separated else 1
    return tuple(range(0, top + 1, step))


class SimpleHaarShift:
    """Sum over a cube family of single pairings <f, g_Q> gamma_Q.

    Profiles are stored per level as arrays of shape (terms, count, 2^(tau*d)):
    the values each profile takes on the level+tau subcells of its cube, in
    local row-major order.  Almost every shift has one term per cube; the d=2
    martingale transform carries one term per tensor Haar pattern.
    """

    __slots__ = ("grid", "tau", "levels", "g", "gamma", "separated", "meta")

    def __init__(self, grid, tau, levels, g, gamma, separated=False, meta=None,
                 validate=True):
        self.grid = grid
        self.tau = int(tau)
        if self.tau < 1:
            raise ShiftError("index tau must be a positive integer")
        self.levels = tuple(sorted(levels))
        self.g = {}
        self.gamma = {}
        for j in self.levels:
            if j + self.tau > grid.N:
                raise ShiftError(f"family level {j} too deep for tau={self.tau}")
            gb = np.asarray(g[j], dtype=np.float64)
            cb = np.asarray(gamma[j], dtype=np.float64)
            if gb.ndim == 2:
                gb = gb[None, :, :]
            if cb.ndim == 2:
                cb = cb[None, :, :]
            if validate:
                _check_profile_block(gb, j, self.tau, grid)
                _check_profile_block(cb, j, self.tau, grid)
            if gb.shape != cb.shape:
                raise ShiftError("g and gamma blocks must have matching shapes")
            self.g[j] = gb
            self.gamma[j] = cb
        self.separated = bool(separated)
        self.meta = dict(meta or {})

    def terms_at(self, level: int) -> int:
        return self.g[level].shape[0]

    def adjoint(self) -> "SimpleHaarShift":
        """Swap g and gamma per cube; the exact Lebesgue adjoint."""
        return SimpleHaarShift(
            self.grid, self.tau, self.levels, self.gamma, self.g,
            separated=self.separated, meta={**self.meta, "adjoint": True},
            validate=False,
        )

    def masked(self, level_masks: dict[int, np.ndarray]) -> "SimpleHaarShift":
        """Zero out the terms of cubes excluded by per-level boolean masks."""
        g, gamma = {}, {}
        for j in self.levels:
            mask = level_masks.get(j)
            if mask is None:
                keep = np.zeros(self.grid.level_count(j), dtype=bool)
            else:
                keep = np.asarray(mask, dtype=bool)
            g[j] = self.g[j] * keep[None, :, None]
            gamma[j] = self.gamma[j] * keep[None, :, None]
        return SimpleHaarShift(self.grid, self.tau, self.levels, g, gamma,
                               separated=self.separated, meta=self.meta, validate=False)

    def restricted_to_levels(self, levels) -> "SimpleHaarShift":
        levels = tuple(sorted(set(levels) & set(self.levels)))
        return SimpleHaarShift(
            self.grid, self.tau, levels,
            {j: self.g[j] for j in levels}, {j: self.gamma[j] for j in levels},
            separated=self.separated, meta=self.meta, validate=False,
        )

    # -- application -------------------------------------------------------

    def pairing_coefficients(self, cell_density: np.ndarray | None) -> dict[int, np.ndarray]:
        """<h, g_Q> for every family cube, h having the given cell densities.

        Returns per-level arrays of shape (terms, count).  `cell_density` is
        the integrand's cell values (not integrals); None means h = 1.
        """
        grid = self.grid
        cells = (np.ones(grid.cell_count) if cell_density is None else cell_density)
        pyr = integral_pyramid(cells * grid.cell_volume, grid.d, grid.N)
        return self._coefficients_from_pyramid(pyr)

    def _coefficients_from_pyramid(self, pyr) -> dict[int, np.ndarray]:
        out = {}
        for j in self.levels:
            sub = subcell_matrix(pyr[j + self.tau], self.grid.d, self.tau)
            out[j] = np.einsum("kcm,cm->kc", self.g[j], sub)
        return out

    def output_fields(self, coeffs: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
        """Per-level output pieces sum_k coef * gamma, laid out at level j+tau."""
        fields = {}
        for j in self.levels:
            mat = np.einsum("kc,kcm->cm", coeffs[j], self.gamma[j])
            fields[j + self.tau] = fields.get(j + self.tau, 0.0) + scatter_subcells(
                mat, self.grid.d, self.tau
            )
        return fields

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        """Matrix-free application to raw cell values (1D, or 2D batched columns)."""
        grid = self.grid
        values = np.asarray(values, dtype=np.float64)
        pyr = integral_pyramid(values * grid.cell_volume, grid.d, grid.N)
        acc = {}
        for j in self.levels:
            sub = subcell_matrix(pyr[j + self.tau], grid.d, self.tau)
            if values.ndim == 1:
                coef = np.einsum("kcm,cm->kc", self.g[j], sub)
                mat = np.einsum("kc,kcm->cm", coef, self.gamma[j])
            else:
                coef = np.einsum("kcm,cmn->kcn", self.g[j], sub)
                mat = np.einsum("kcn,kcm->cmn", coef, self.gamma[j])
            lev = j + self.tau
            piece = scatter_subcells(mat, grid.d, self.tau)
            acc[lev] = acc[lev] + piece if lev in acc else piece
        if not acc:
            return np.zeros_like(values)
        out = None
        for lev in sorted(acc):
            if out is None:
                out = acc[lev]
            else:
                out = expand(out, grid.d, lev - prev) + acc[lev]
            prev = lev
        return expand(out, grid.d, grid.N - prev)


class GenericHaarShift:
    """Sparse Haar-to-Haar shift: sum of a_{Q',Q''} <f, h_Q'> h_Q''.

    Entries are (Q, (Q', e'), (Q'', e''), a) with Q', Q'' inside Q, at most tau
    levels deeper, and |a| <= sqrt(|Q'||Q''|)/|Q|; e picks the tensor Haar
    pattern (always 0 for d=1).
    """

    __slots__ = ("grid", "tau", "entries", "meta")

    def __init__(self, grid, tau, entries, meta=None, validate=True):
        self.grid = grid
        self.tau = int(tau)
        norm_entries = []
        for ent in entries:
            parent, src, dst, a = ent
            qp, ep = src if isinstance(src, tuple) else (src, 0)
            qpp, epp = dst if isinstance(dst, tuple) else (dst, 0)
            if validate:
                for q, e in ((qp, ep), (qpp, epp)):
                    if not parent.contains(q):
                        raise ShiftError("entry cube not contained in its parent cube")
                    if q.level > parent.level + self.tau:
                        raise ShiftError("entry cube more than tau levels below parent")
                    if q.level >= grid.N:
                        raise ShiftError("Haar cube must be above the finest level")
                    if not 0 <= e < max(1, (1 << grid.d) - 1):
                        raise ShiftError("bad Haar pattern index")
                bound = math.sqrt(qp.volume * qpp.volume) / parent.volume
                if abs(a) > bound * (1 + 1e-12):
                    raise ShiftError("coefficient exceeds sqrt(|Q'||Q''|)/|Q|")
            norm_entries.append((parent, qp, ep, qpp, epp, float(a)))
        self.entries = tuple(norm_entries)
        self.meta = dict(meta or {})

    def adjoint(self) -> "GenericHaarShift":
        flipped = [(p, (qpp, epp), (qp, ep), a) for p, qp, ep, qpp, epp, a in self.entries]
        return GenericHaarShift(self.grid, self.tau, flipped,
                                meta={**self.meta, "adjoint": True}, validate=False)

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        grid = self.grid
        if values.ndim != 1:
            return np.stack(
                [self.apply_values(values[:, i]) for i in range(values.shape[1])], axis=1
            )
        pyr = integral_pyramid(values * grid.cell_volume, grid.d, grid.N)
        coefs = _haar_coefficient_arrays(grid, pyr)
        out_coefs = {
            j: np.zeros_like(coefs[j]) for j in range(grid.N)
        }
        for _, qp, ep, qpp, epp, a in self.entries:
            out_coefs[qpp.level][epp, qpp.flat] += a * coefs[qp.level][ep, qp.flat]
        return _haar_reconstruct(grid, out_coefs)


def _haar_sign_table(d: int) -> np.ndarray:
    """(patterns, children) sign matrix of the tensor Haar system."""
    if d == 1:
        return np.array([[1.0, -1.0]])
    eps = ((0, 1), (1, 0), (1, 1))
    return np.array(
        [[(-1.0) ** (e0 * (c >> 1) + e1 * (c & 1)) for c in range(4)] for e0, e1 in eps]
    )


def _haar_coefficient_arrays(grid: DyadicGrid, pyr) -> dict[int, np.ndarray]:
    """<f, h_Q^e> for all cubes from f's integral pyramid: level -> (patterns, count)."""
    signs = _haar_sign_table(grid.d)
    out = {}
    for j in range(grid.N):
        child = subcell_matrix(pyr[j + 1], grid.d, 1)      # (count_j, 2^d)
        out[j] = (2.0 ** (j * grid.d / 2.0)) * (signs @ child.T)
    return out


def _haar_reconstruct(grid: DyadicGrid, coefs: dict[int, np.ndarray]) -> np.ndarray:
    """Cell values of sum_{Q,e} c_{Q,e} h_Q^e."""
    signs = _haar_sign_table(grid.d)
    out = None
    prev = None
    for j in sorted(coefs):
        child_vals = (2.0 ** (j * grid.d / 2.0)) * (coefs[j].T @ signs)
        piece = scatter_subcells(child_vals, grid.d, 1)     # level j+1 values
        if out is None:
            out = piece
        else:
            out = expand(out, grid.d, (j + 1) - prev) + piece
        prev = j + 1
    if out is None:
        return np.zeros(grid.cell_count)
    return expand(out, grid.d, grid.N - prev)


# ---------------------------------------------------------------------------
# application and adjoint entry points
# ---------------------------------------------------------------------------

def apply_shift(T, f: GridFunction, sigma: Weight | None = None) -> GridFunction:
    """T(sigma f) as an exact finite sum; sigma=None applies T to f itself."""
    if f.grid != T.grid:
        raise GridError("grid mismatch between shift and argument")
    vals = f.values if sigma is None else f.values * sigma.values
    return GridFunction(T.grid, T.apply_values(vals))


def adjoint(T):
    """The Lebesgue-adjoint shift of the same class."""
    return T.adjoint()


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def hilbert_shift(grid: DyadicGrid, separated: bool = False) -> SimpleHaarShift:
    """The index-2 dyadic model of the Hilbert transform (d=1).

    Each cube maps its Haar function to the normalized difference of the
    children's Haar functions: g_Q = h_Q and gamma_Q = (h_{Q-} - h_{Q+})/sqrt(2),
    with profile sup norms exactly |Q|^(-1/2).
    """
    if grid.d != 1:
        raise ShiftError("the dyadic Hilbert shift is defined for d=1 only")
    if grid.N < 2:
        raise ShiftError("need depth N >= 2")
    tau = 2
    levels = default_levels(grid, tau, separated)
    g, gamma = {}, {}
    for j in levels:
        count = grid.level_count(j)
        scale = 2.0 ** (j / 2.0)
        g[j] = np.tile(scale * np.array([1.0, 1.0, -1.0, -1.0]), (count, 1))
        gamma[j] = np.tile(scale * np.array([1.0, -1.0, -1.0, 1.0]), (count, 1))
    return SimpleHaarShift(grid, tau, levels, g, gamma, separated=separated,
                           meta={"kind": "hilbert"})


def martingale_transform(signs, grid: DyadicGrid, separated: bool = False) -> SimpleHaarShift:
    """Haar multiplier T f = sum eps_Q <f, h_Q> h_Q with eps in {-1, +1}.

    `signs` maps DyadicCube -> sign for d=1, or (DyadicCube, pattern) -> sign
    for d=2 (one sign per tensor Haar pattern); missing keys default to +1.
    """
    tau = 1
    levels = default_levels(grid, tau, separated)
    sign_table = _haar_sign_table(grid.d)
    npat = sign_table.shape[0]
    g, gamma = {}, {}
    for j in levels:
        count = grid.level_count(j)
        scale = 2.0 ** (j * grid.d / 2.0)
        base = np.tile(sign_table[:, None, :] * scale, (1, count, 1))
        eps = np.ones((npat, count))
        for key, val in signs.items():
            cube, pat = key if isinstance(key, tuple) else (key, None)
            if cube.level != j:
                continue
            if val not in (-1, 1):
                raise ShiftError("signs must be -1 or +1")
            if pat is None:
                eps[:, cube.flat] = val
            else:
                eps[pat, cube.flat] = val
        g[j] = base
        gamma[j] = base * eps[:, :, None]
    return SimpleHaarShift(grid, tau, levels, g, gamma, separated=separated,
                           meta={"kind": "martingale"})


def random_signs(grid: DyadicGrid, seed: int) -> dict:
    """Seeded +/-1 sign assignment for every cube (and pattern at d=2)."""
    rng = np.random.default_rng(seed)
    out = {}
    npat = 1 if grid.d == 1 else 3
    for j in range(grid.N):
        draw = rng.integers(0, 2, size=(grid.level_count(j), npat)) * 2 - 1
        for flat in range(grid.level_count(j)):
            cube = grid.cube(j, flat)
            if grid.d == 1:
                out[cube] = int(draw[flat, 0])
            else:
                for p in range(npat):
                    out[(cube, p)] = int(draw[flat, p])
    return out


def random_simple_shift(tau: int, seed: int, grid: DyadicGrid,
                        separated: bool = False) -> SimpleHaarShift:
    """Seeded simple shift: uniform profiles projected to mean zero and
    rescaled to sup norm exactly |Q|^(-1/2)."""
    if tau < 1:
        raise ShiftError("tau must be at least 1")
    levels = default_levels(grid, tau, separated)
    rng = np.random.default_rng(seed)
    m = 1 << (tau * grid.d)
    g, gamma = {}, {}
    for j in levels:
        count = grid.level_count(j)
        scale = 2.0 ** (j * grid.d / 2.0)
        blocks = []
        for _ in range(2):
            raw = rng.uniform(-1.0, 1.0, size=(count, m))
            raw -= raw.mean(axis=1, keepdims=True)
            peak = np.abs(raw).max(axis=1)
            flat_rows = peak < 1e-12
            if flat_rows.any():
                raw[flat_rows] = np.tile(
                    np.concatenate([np.ones(m // 2), -np.ones(m - m // 2)]),
                    (int(flat_rows.sum()), 1),
                )
                peak = np.abs(raw).max(axis=1)
            blocks.append(raw * (scale / peak)[:, None])
        g[j], gamma[j] = blocks
    return SimpleHaarShift(grid, tau, levels, g, gamma, separated=separated,
                           meta={"kind": "random", "seed": seed})


def zero_shift(grid: DyadicGrid, tau: int = 1) -> SimpleHaarShift:
    levels = default_levels(grid, tau)
    m = 1 << (tau * grid.d)
    z = {j: np.zeros((grid.level_count(j), m)) for j in levels}
    return SimpleHaarShift(grid, tau, levels, z, z, meta={"kind": "zero"})


# ---------------------------------------------------------------------------
# operator norms
# ---------------------------------------------------------------------------

_POWER_SEED = 0x0D7AD1C


def _measure_scalings(grid, sigma, mu):
    vol = grid.cell_volume
    sv = np.ones(grid.cell_count) if sigma is None else sigma.values
    mv = np.ones(grid.cell_count) if mu is None else mu.values
    a = np.sqrt(sv / vol)   # input scaling: L2(sigma) isometry composed with (sigma .)
    b = np.sqrt(mv * vol)   # output scaling: L2(mu) isometry
    return a, b


def dense_matrix(T, sigma: Weight | None = None, mu: Weight | None = None) -> np.ndarray:
    """Dense matrix of f -> T(sigma f) between the scaled coordinates of
    L2(sigma) and L2(mu); its largest singular value is the operator norm."""
    grid = T.grid
    n = grid.cell_count
    if n > 4096:
        raise ShiftError("dense matrix limited to grids with at most 4096 cells")
    a, b = _measure_scalings(grid, sigma, mu)
    basis = np.diag(a)
    if isinstance(T, SimpleHaarShift):
        out = T.apply_values(basis)
    else:
        out = np.stack([T.apply_values(basis[:, i]) for i in range(n)], axis=1)
    return b[:, None] * out


def operator_norm(T, sigma: Weight | None = None, mu: Weight | None = None,
                  method: str = "power-iteration", tol: float = 1e-8,
                  max_iter: int = 10_000, seed: int = _POWER_SEED) -> float:
    """Norm of f -> T(sigma f) from L2(sigma) to L2(mu).

    `power-iteration` runs on the normal operator from a fixed seeded start
    vector and stops when the Aitken-extrapolated remainder of the singular
    value estimate drops below `tol` relative; `dense-svd` is the oracle for
    grids of at most 4096 cells; `auto` picks the oracle when it is available.
    """
    if method == "auto":
        method = "dense-svd" if T.grid.cell_count <= 4096 else "power-iteration"
    if method == "dense-svd":
        M = dense_matrix(T, sigma, mu)
        return float(np.linalg.svd(M, compute_uv=False)[0])
    if method != "power-iteration":
        raise ShiftError(f"unknown method {method!r}")

    grid = T.grid
    a, b = _measure_scalings(grid, sigma, mu)
    T_adj = T.adjoint()
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(grid.cell_count)
    v /= np.linalg.norm(v)
    est_prev, delta_prev = None, None
    for _ in range(max_iter):
        w = b * T.apply_values(a * v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        u = a * T_adj.apply_values(b * w)
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return est
        v = u / nu
        if est_prev is not None:
            delta = abs(est - est_prev)
            if delta <= 1e-15 * est:
                return est
            if delta_prev is not None and 0 < delta < delta_prev:
                r = delta / delta_prev
                remainder = delta * r / (1.0 - r)
                if remainder <= tol * est:
                    return est + remainder
            delta_prev = delta
        est_prev = est
    raise OperatorNormError(
        f"power iteration did not converge in {max_iter} iterations",
        bracket=(est_prev, est),
    )


# ---------------------------------------------------------------------------
# Calderon-Zygmund decomposition
# ---------------------------------------------------------------------------

@dataclass
class CZDecomposition:
    """Dyadic splitting f = g + sum_Q b_Q at height lam.

    Bad cubes are the maximal ones where the average of |f| exceeds lam; each
    bad part is the mean-zero localization (f - avg_Q f) 1_Q, and the good
    part equals f off the bad cubes and the cube average on them.
    """

    source: GridFunction
    lam: float
    good: GridFunction
    bad_cubes: list[DyadicCube]
    _bad_local: dict = field(repr=False, default_factory=dict)

    def bad_part(self, cube: DyadicCube) -> GridFunction:
        key = (cube.level, cube.flat)
        if key not in self._bad_local:
            raise ShiftError(f"{cube!r} is not a bad cube of this decomposition")
        vals = np.zeros(self.source.grid.cell_count)
        if self.source.grid.d == 1:
            vals[cube.cell_slice()] = self._bad_local[key]
        else:
            m = 1 << self.source.grid.N
            w = 1 << (self.source.grid.N - cube.level)
            vals.reshape(m, m)[
                cube.index[0] * w:(cube.index[0] + 1) * w,
                cube.index[1] * w:(cube.index[1] + 1) * w,
            ] = self._bad_local[key].reshape(w, w)
        return GridFunction(self.source.grid, vals)

    def bad_total(self) -> GridFunction:
        return self.source - self.good

    def bad_measure(self) -> float:
        return sum(c.volume for c in self.bad_cubes)


def cz_decompose(f: GridFunction, lam: float) -> CZDecomposition:
    """Dyadic Calderon-Zygmund decomposition of f at height lam > 0.

    When lam exceeds the root average of |f|, the good part is bounded by
    2^d lam and the bad cubes satisfy sum |Q| <= ||f||_1 / lam with constant 1.
    """
    if lam <= 0:
        raise ShiftError("height lam must be positive")
    grid = f.grid
    abs_pyr = integral_pyramid(np.abs(f.values) * grid.cell_volume, grid.d, grid.N)
    sgn_pyr = f.pyramid()
    good_vals = f.values.copy()
    bad_cubes, bad_local = [], {}
    alive = np.ones(1, dtype=bool)
    for j in range(grid.N + 1):
        dens = abs_pyr[j] * (2.0 ** (j * grid.d))
        is_bad = alive & (dens > lam)
        for flat in np.nonzero(is_bad)[0]:
            cube = grid.cube(j, int(flat))
            avg = sgn_pyr[j][flat] / cube.volume
            local = cube.cell_values(f.values) - avg
            bad_cubes.append(cube)
            bad_local[(j, int(flat))] = local
            if grid.d == 1:
                good_vals[cube.cell_slice()] = avg
            else:
                m = 1 << grid.N
                w = 1 << (grid.N - j)
                good_vals.reshape(m, m)[
                    cube.index[0] * w:(cube.index[0] + 1) * w,
                    cube.index[1] * w:(cube.index[1] + 1) * w,
                ] = avg
        if j < grid.N:
            alive = expand(alive & ~is_bad, grid.d, 1)
    return CZDecomposition(f, lam, GridFunction(grid, good_vals), bad_cubes, bad_local)


def weak_l1_ratio(T, f: GridFunction) -> float:
    """sup over lam > 0 of lam * |{|Tf| > lam}| / ||f||_1, scanned exactly.

    For cell-constant output the supremum is attained in the limit at the
    distinct values v of |Tf|, where it equals v * |{|Tf| >= v}|.
    """
    l1 = f.l1_norm()
    if l1 == 0.0:
        raise ShiftError("input must be nonzero")
    out = np.abs(apply_shift(T, f).values)
    vol = f.grid.cell_volume
    order = np.sort(out)[::-1]
    counts = np.arange(1, order.size + 1)
    best = float((order * counts).max()) * vol
    return best / l1
