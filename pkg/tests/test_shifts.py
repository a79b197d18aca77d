import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadlab import (
    GenericHaarShift,
    GridFunction,
    OperatorNormError,
    ShiftError,
    SimpleHaarShift,
    adjoint,
    apply_shift,
    build_grid,
    cz_decompose,
    dense_matrix,
    dual_weight,
    haar_basis,
    hilbert_shift,
    martingale_transform,
    operator_norm,
    random_a2_weight,
    random_signs,
    random_simple_shift,
    weak_l1_ratio,
    zero_shift,
)
from dyadlab.shifts import default_levels


# -- constructors -----------------------------------------------------------

def test_hilbert_shift_on_haar_function():
    g = build_grid(1, 6)
    T = hilbert_shift(g)
    cube = g.cube(2, 1)
    h = haar_basis(cube)[0].as_grid_function()
    out = apply_shift(T, h)
    hm = haar_basis(cube.child(0))[0].as_grid_function()
    hp = haar_basis(cube.child(1))[0].as_grid_function()
    expect = (2.0 ** -0.5) * (hm - hp)
    assert np.abs(out.values - expect.values).max() < 1e-12


def test_hilbert_shift_kills_constants():
    g = build_grid(1, 5)
    T = hilbert_shift(g)
    out = apply_shift(T, GridFunction.constant(g, 3.0))
    assert np.abs(out.values).max() == 0.0


def test_hilbert_shift_unweighted_norm_one():
    g = build_grid(1, 8)
    T = hilbert_shift(g)
    assert operator_norm(T) == pytest.approx(1.0, abs=1e-8)


def test_hilbert_shift_profile_sup_norms_exact():
    g = build_grid(1, 5)
    T = hilbert_shift(g)
    for j in T.levels:
        bound = 2.0 ** (j / 2.0)
        assert np.abs(T.g[j]).max() == pytest.approx(bound, abs=0)
        assert np.abs(T.gamma[j]).max() == pytest.approx(bound, abs=0)


def test_hilbert_shift_requires_d1_and_depth():
    with pytest.raises(ShiftError):
        hilbert_shift(build_grid(2, 4))
    with pytest.raises(ShiftError):
        hilbert_shift(build_grid(1, 1))


def test_martingale_all_plus_is_projection():
    g = build_grid(1, 7)
    T = martingale_transform({}, g)
    rng = np.random.default_rng(0)
    f = GridFunction(g, rng.standard_normal(g.cell_count))
    out = apply_shift(T, f)
    assert np.abs(out.values - (f.values - f.integral())).max() < 1e-10
    assert np.abs(apply_shift(T, GridFunction.constant(g, 1.0)).values).max() < 1e-15


def test_martingale_norm_one_any_signs():
    g = build_grid(1, 6)
    T = martingale_transform(random_signs(g, 3), g)
    assert operator_norm(T, method="dense-svd") == pytest.approx(1.0, abs=1e-10)
    assert operator_norm(T) == pytest.approx(1.0, abs=1e-6)


def test_martingale_self_adjoint():
    g = build_grid(1, 5)
    T = martingale_transform(random_signs(g, 1), g)
    M = dense_matrix(T)
    assert np.abs(M - M.T).max() < 1e-12


def test_martingale_d2_multi_term():
    g = build_grid(2, 3)
    T = martingale_transform(random_signs(g, 5), g)
    assert T.terms_at(0) == 3
    assert operator_norm(T, method="dense-svd") == pytest.approx(1.0, abs=1e-10)


def test_random_shift_profile_invariants():
    g = build_grid(1, 7)
    for tau in (1, 2, 3):
        T = random_simple_shift(tau, 11 + tau, g)
        for j in T.levels:
            bound = 2.0 ** (j / 2.0)
            for block in (T.g[j], T.gamma[j]):
                assert np.abs(block.sum(axis=-1)).max() < 1e-9 * max(bound, 1.0)
                row_peaks = np.abs(block).max(axis=-1)
                assert np.abs(row_peaks - bound).max() < 1e-9 * bound


def test_random_shift_tau1_is_haar_multiple():
    g = build_grid(1, 5)
    T = random_simple_shift(1, 9, g)
    for j in T.levels:
        scale = 2.0 ** (j / 2.0)
        for block in (T.g[j], T.gamma[j]):
            assert np.abs(np.abs(block[0, :, 0]) - scale).max() < 1e-12
            assert np.abs(block[0, :, 0] + block[0, :, 1]).max() < 1e-12


def test_separated_family_levels():
    g = build_grid(1, 9)
    assert default_levels(g, 2, separated=True) == (0, 2, 4, 6)
    assert default_levels(g, 3, separated=True) == (0, 3, 6)
    T = random_simple_shift(2, 4, g, separated=True)
    assert T.levels == (0, 2, 4, 6)
    with pytest.raises(ShiftError):
        default_levels(g, 10)


def test_profile_validation_errors():
    g = build_grid(1, 3)
    levels = (0,)
    good = np.array([[1.0, 1.0, -1.0, -1.0]])
    with pytest.raises(ShiftError):  # sup norm above |Q|^(-1/2) = 1
        SimpleHaarShift(g, 2, levels, {0: good * 1.5}, {0: good})
    with pytest.raises(ShiftError):  # not mean zero
        SimpleHaarShift(g, 2, levels, {0: np.array([[1.0, 1.0, 1.0, -1.0]]) * 0.5},
                        {0: good})


# -- application and adjoints -----------------------------------------------

def test_zero_shift_applies_to_zero():
    g = build_grid(1, 5)
    T = zero_shift(g, 2)
    rng = np.random.default_rng(2)
    f = GridFunction(g, rng.standard_normal(g.cell_count))
    assert np.abs(apply_shift(T, f).values).max() == 0.0
    assert operator_norm(T) == 0.0
    assert operator_norm(T, method="dense-svd") == pytest.approx(0.0, abs=1e-14)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 100))
@settings(max_examples=20, deadline=None)
def test_apply_linearity(alpha, beta, seed):
    g = build_grid(1, 5)
    T = random_simple_shift(2, 7, g)
    rng = np.random.default_rng(seed)
    f = GridFunction(g, rng.standard_normal(g.cell_count))
    h = GridFunction(g, rng.standard_normal(g.cell_count))
    lhs = apply_shift(T, alpha * f + beta * h).values
    rhs = alpha * apply_shift(T, f).values + beta * apply_shift(T, h).values
    assert np.abs(lhs - rhs).max() < 1e-12 * max(1.0, abs(alpha) + abs(beta))


def test_apply_grid_mismatch():
    T = random_simple_shift(1, 0, build_grid(1, 4))
    f = GridFunction.constant(build_grid(1, 5), 1.0)
    with pytest.raises(Exception):
        apply_shift(T, f)


def test_apply_with_sigma_multiplies_first():
    g = build_grid(1, 6)
    T = random_simple_shift(2, 3, g)
    w = random_a2_weight(2, 5, g)
    rng = np.random.default_rng(4)
    f = GridFunction(g, rng.standard_normal(g.cell_count))
    direct = apply_shift(T, GridFunction(g, f.values * w.values))
    assert np.abs(apply_shift(T, f, sigma=w).values - direct.values).max() < 1e-14


def test_adjoint_involution_and_pairing():
    g = build_grid(1, 7)
    T = random_simple_shift(2, 13, g)
    TT = adjoint(adjoint(T))
    for j in T.levels:
        assert np.array_equal(TT.g[j], T.g[j])
        assert np.array_equal(TT.gamma[j], T.gamma[j])
    rng = np.random.default_rng(5)
    from dyadlab import inner_product
    f = GridFunction(g, rng.standard_normal(g.cell_count))
    h = GridFunction(g, rng.standard_normal(g.cell_count))
    lhs = inner_product(apply_shift(T, f), h)
    rhs = inner_product(f, apply_shift(adjoint(T), h))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


# -- operator norms ----------------------------------------------------------

def test_power_iteration_matches_dense_oracle():
    for N in (6, 8, 10):
        g = build_grid(1, N)
        for seed in (0, 1):
            T = random_simple_shift(1 + seed + (N % 3), 40 + seed + N, g)
            w = random_a2_weight(2, 50 + seed + N, g)
            wi = dual_weight(w)
            pi = operator_norm(T, w, wi)
            dn = operator_norm(T, w, wi, method="dense-svd")
            assert abs(pi - dn) <= 1e-6 * dn


def test_operator_norm_methods_and_errors():
    g = build_grid(1, 5)
    T = random_simple_shift(2, 8, g)
    with pytest.raises(ShiftError):
        operator_norm(T, method="nope")
    with pytest.raises(OperatorNormError) as exc:
        operator_norm(T, max_iter=2)
    assert len(exc.value.bracket) == 2
    big = random_simple_shift(1, 0, build_grid(1, 13))
    with pytest.raises(ShiftError):
        operator_norm(big, method="dense-svd")
    assert operator_norm(big, method="auto") > 0  # falls back to power iteration


def test_norm_monotone_under_profile_zeroing():
    g = build_grid(1, 7)
    T = random_simple_shift(2, 21, g)
    rng = np.random.default_rng(6)
    masks = {j: rng.integers(0, 2, g.level_count(j)).astype(bool) for j in T.levels}
    sub = T.masked(masks)
    # dropping terms never increases the dense norm beyond tolerance
    assert operator_norm(sub, method="dense-svd") <= operator_norm(
        T, method="dense-svd"
    ) + 1e-10


def test_scale_block_orthogonality():
    g = build_grid(1, 8)
    T = random_simple_shift(2, 33, g)
    mats = {
        s: dense_matrix(T.restricted_to_levels([s])) for s in (0, 1, 3, 5, 6)
    }
    for s in mats:
        for sp in mats:
            if abs(s - sp) > T.tau:
                prod = mats[s] @ mats[sp].T
                prod2 = mats[s].T @ mats[sp]
                assert np.abs(prod).max() < 1e-10
                assert np.abs(prod2).max() < 1e-10


# -- Calderon-Zygmund decomposition -----------------------------------------

def test_cz_no_bad_cubes_for_flat_function():
    g = build_grid(1, 6)
    cz = cz_decompose(GridFunction.constant(g, 1.0), 2.0)
    assert cz.bad_cubes == []
    assert np.array_equal(cz.good.values, np.ones(g.cell_count))


def test_cz_spike_example():
    # f = 2^k on [0, 2^-k): at height 2 the single bad cube is [0, 1/4)
    g = build_grid(1, 8)
    for k in (2, 3, 5):
        vals = np.zeros(g.cell_count)
        vals[: g.cell_count >> k] = 2.0 ** k
        cz = cz_decompose(GridFunction(g, vals), 2.0)
        assert [(q.level, q.flat) for q in cz.bad_cubes] == [(2, 0)]


def test_cz_invariants_random():
    g = build_grid(1, 9)
    rng = np.random.default_rng(7)
    for trial in range(20):
        f = GridFunction(g, rng.standard_normal(g.cell_count))
        f = f * (1.0 / f.l1_norm())
        lam = 1.5 + rng.uniform(0, 2)
        cz = cz_decompose(f, lam)
        # reconstruction, mean-zero bad parts, packing, good-part bound
        recon = cz.good.values.copy()
        for q in cz.bad_cubes:
            part = cz.bad_part(q)
            assert abs(part.integral()) <= 1e-12
            assert np.abs(part.values[~np.isin(np.arange(g.cell_count),
                                               np.arange(*q.cell_slice().indices(g.cell_count)))]).max() == 0.0
            recon += part.values
        assert np.abs(recon - f.values).max() < 1e-12
        assert cz.bad_measure() <= 1.0 / lam + 1e-15
        assert cz.good.sup_norm() <= (2 ** g.d) * lam + 1e-12


def test_cz_rejects_nonpositive_height():
    g = build_grid(1, 4)
    with pytest.raises(ShiftError):
        cz_decompose(GridFunction.constant(g, 1.0), 0.0)


def test_cz_bad_part_requires_bad_cube():
    g = build_grid(1, 4)
    cz = cz_decompose(GridFunction.constant(g, 1.0), 2.0)
    with pytest.raises(ShiftError):
        cz.bad_part(g.root())


def test_off_support_vanishing_of_bad_parts():
    # T(1_Q b) vanishes off the tau-fold parent of each bad cube
    g = build_grid(1, 8)
    rng = np.random.default_rng(8)
    f = GridFunction(g, rng.standard_normal(g.cell_count) ** 2 * np.sign(
        rng.standard_normal(g.cell_count)))
    f = f * (1.0 / f.l1_norm())
    cz = cz_decompose(f, 2.0)
    for tau in (1, 2):
        T = random_simple_shift(tau, 70 + tau, g)
        for q in cz.bad_cubes[:6]:
            if q.level < tau:
                continue
            out = apply_shift(T, cz.bad_part(q)).values
            anc = q.parent(tau)
            mask = np.ones(g.cell_count, dtype=bool)
            mask[anc.cell_slice()] = False
            assert np.abs(out[mask]).max() < 1e-12


def test_parent_union_bound_exact():
    g = build_grid(1, 8)
    rng = np.random.default_rng(9)
    f = GridFunction(g, rng.standard_normal(g.cell_count))
    f = f * (1.0 / f.l1_norm())
    cz = cz_decompose(f, 2.0)
    tau = 2
    covered = np.zeros(g.cell_count, dtype=bool)
    total = 0.0
    for q in cz.bad_cubes:
        anc = q.parent(min(tau, q.level))
        covered[anc.cell_slice()] = True
        total += q.volume
    union = covered.sum() * g.cell_volume
    assert union <= (2 ** (tau * g.d)) * total + 1e-15


def test_weak_l1_zero_shift_and_zero_input():
    g = build_grid(1, 6)
    T = zero_shift(g, 1)
    f = GridFunction.constant(g, 1.0)
    assert weak_l1_ratio(T, f) == 0.0
    with pytest.raises(ShiftError):
        weak_l1_ratio(T, GridFunction.zeros(g))


def test_weak_l1_martingale_haar_spike():
    g = build_grid(1, 8)
    T = martingale_transform(random_signs(g, 2), g)
    h = haar_basis(g.cube(3, 5))[0].as_grid_function()
    spike = h * (1.0 / h.l1_norm())
    assert weak_l1_ratio(T, spike) <= 2.0 + 1e-12


# -- generic shifts -----------------------------------------------------------

def _diag_generic_martingale(g, signs):
    entries = []
    for j in range(g.N):
        for flat in range(g.level_count(j)):
            cube = g.cube(j, flat)
            entries.append((cube, cube, cube, float(signs[(j, flat)])))
    return GenericHaarShift(g, 1, entries)


def test_generic_shift_matches_simple_martingale():
    g = build_grid(1, 5)
    rng = np.random.default_rng(10)
    sgn = {}
    cube_signs = {}
    for j in range(g.N):
        for flat in range(g.level_count(j)):
            s = int(rng.integers(0, 2)) * 2 - 1
            sgn[(j, flat)] = s
            cube_signs[g.cube(j, flat)] = s
    Tg = _diag_generic_martingale(g, sgn)
    Ts = martingale_transform(cube_signs, g)
    f = GridFunction(g, rng.standard_normal(g.cell_count))
    assert np.abs(apply_shift(Tg, f).values - apply_shift(Ts, f).values).max() < 1e-12


def test_generic_shift_validation_and_adjoint():
    g = build_grid(1, 5)
    root = g.root()
    child = g.cube(1, 0)
    grand = g.cube(2, 3)
    ok = GenericHaarShift(g, 2, [(root, child, grand, 0.2)])
    with pytest.raises(ShiftError):  # coefficient above sqrt(|Q'||Q''|)/|Q|
        GenericHaarShift(g, 2, [(root, child, grand, 0.5)])
    with pytest.raises(ShiftError):  # too deep for tau=1
        GenericHaarShift(g, 1, [(root, child, grand, 0.1)])
    with pytest.raises(ShiftError):  # not contained
        GenericHaarShift(g, 2, [(child, g.cube(1, 1), child, 0.1)])
    from dyadlab import inner_product
    rng = np.random.default_rng(11)
    f = GridFunction(g, rng.standard_normal(g.cell_count))
    h = GridFunction(g, rng.standard_normal(g.cell_count))
    lhs = inner_product(apply_shift(ok, f), h)
    rhs = inner_product(f, apply_shift(adjoint(ok), h))
    assert abs(lhs - rhs) < 1e-12
    two = adjoint(adjoint(ok))
    assert two.entries == ok.entries
    assert operator_norm(ok, method="dense-svd") <= (
        operator_norm(ok, method="power-iteration") + 1e-6
    )


def test_generic_shift_d2_pattern_indices():
    g = build_grid(2, 2)
    root = g.root()
    child = g.cube(1, 0)
    T = GenericHaarShift(g, 1, [(root, (root, 0), (root, 2), 0.7),
                                (root, (child, 1), (child, 1), -0.2)])
    h = haar_basis(root)[0].as_grid_function()
    out = apply_shift(T, h)
    expect = 0.7 * haar_basis(root)[2].as_grid_function().values
    assert np.abs(out.values - expect).max() < 1e-12
    with pytest.raises(ShiftError):
        GenericHaarShift(g, 1, [(root, (root, 3), (root, 0), 0.1)])
