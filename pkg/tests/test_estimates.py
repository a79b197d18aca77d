import math

import numpy as np
import pytest

from dyadlab import (
    CubeSet,
    GridFunction,
    Weight,
    bold_h,
    brute_testing_constants,
    build_corona,
    build_grid,
    corona_ab_split,
    dual_weight,
    essence_check,
    h_functional,
    jn_check,
    martingale_transform,
    operator_norm,
    paraproduct_apply,
    paraproduct_identity,
    qn_partition,
    random_a2_weight,
    random_signs,
    random_simple_shift,
    sufficiency_experiment,
    weak_boundedness_from_t1_check,
    zero_shift,
)
from dyadlab.estimates import DistributionCurve, ProfileFamily
from dyadlab.estimates import testing_constants as eval_testing_constants
import dyadlab.experiments as exp


# -- testing constants ---------------------------------------------------------

def test_zero_shift_all_constants_vanish():
    g = build_grid(1, 6)
    T = zero_shift(g, 2)
    w = random_a2_weight(2, 1, g)
    rep = eval_testing_constants(T, w, dual_weight(w), norm_method="dense-svd")
    assert rep.c_wb == rep.c_t1 == rep.c_tstar1 == 0.0
    assert rep.full_norm == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("d,N,tau,seed", [
    (1, 4, 1, 0), (1, 5, 2, 1), (1, 5, 3, 2), (1, 6, 2, 3),
    (2, 3, 1, 4), (2, 3, 2, 5),
])
def test_fast_constants_match_brute_oracle(d, N, tau, seed):
    g = build_grid(d, N)
    w = random_a2_weight(1 + seed % 3, 100 + seed, g)
    sigma, mu = w, dual_weight(w)
    T = random_simple_shift(tau, 200 + seed, g)
    fast = eval_testing_constants(T, sigma, mu, norm_method="dense-svd")
    brute = brute_testing_constants(T, sigma, mu)
    assert fast.c_t1 == pytest.approx(brute.c_t1, abs=1e-10)
    assert fast.c_tstar1 == pytest.approx(brute.c_tstar1, abs=1e-10)
    assert fast.c_wb == pytest.approx(brute.c_wb, abs=1e-10)
    assert (fast.witnesses["t1"].level, fast.witnesses["t1"].flat) == (
        brute.witnesses["t1"].level, brute.witnesses["t1"].flat)


def test_fast_constants_match_oracle_lebesgue_and_multiterm():
    g = build_grid(1, 5)
    T = random_simple_shift(2, 42, g)
    fast = eval_testing_constants(T, None, None, norm_method="dense-svd")
    brute = brute_testing_constants(T, None, None)
    assert fast.c_t1 == pytest.approx(brute.c_t1, abs=1e-12)
    assert fast.c_wb == pytest.approx(brute.c_wb, abs=1e-12)
    g2 = build_grid(2, 3)
    Tm = martingale_transform(random_signs(g2, 4), g2)
    w = random_a2_weight(1, 6, g2)
    fast = eval_testing_constants(Tm, w, dual_weight(w), norm_method="dense-svd")
    brute = brute_testing_constants(Tm, w, dual_weight(w))
    assert fast.c_t1 == pytest.approx(brute.c_t1, abs=1e-12)
    assert fast.c_tstar1 == pytest.approx(brute.c_tstar1, abs=1e-12)
    assert fast.c_wb == pytest.approx(brute.c_wb, abs=1e-12)


def test_necessity_on_sample_instances():
    for i in (0, 1, 2, 3, 17, 30):
        T, sigma, mu = exp.two_weight_instance(i, depth=8)
        rep = eval_testing_constants(T, sigma, mu, norm_method="dense-svd")
        assert rep.c_wb <= rep.full_norm + 1e-9
        assert rep.c_t1 <= rep.full_norm + 1e-9
        assert rep.c_tstar1 <= rep.full_norm + 1e-9


def test_wb_range_is_tau_minus_one():
    # for tau=1 the scan degenerates to the diagonal (Q, Q, Q)
    g = build_grid(1, 5)
    T = random_simple_shift(1, 3, g)
    w = random_a2_weight(2, 4, g)
    rep = eval_testing_constants(T, w, dual_weight(w), norm_method="dense-svd")
    q1, q2 = rep.witnesses["wb"]
    assert (q1.level, q1.flat) == (q2.level, q2.flat)


# -- paraproduct ----------------------------------------------------------------

def test_paraproduct_zero_shift():
    g = build_grid(1, 6)
    T = zero_shift(g, 2)
    w = random_a2_weight(2, 7, g)
    f = GridFunction.constant(g, 1.0)
    assert np.abs(paraproduct_apply(f, T, None, w).values).max() == 0.0


def test_paraproduct_telescoping_identity():
    # with unit input and Lebesgue averages the paraproduct telescopes to the
    # mean-zero (in w) part of the shifted unit function
    g = build_grid(1, 7)
    T = random_simple_shift(2, 8, g)
    w = random_a2_weight(3, 9, g)
    one = GridFunction.constant(g, 1.0)
    p = paraproduct_apply(one, T, None, w)
    from dyadlab import apply_shift, inner_product
    tg = apply_shift(T, one)
    w_mean = inner_product(tg, one, w) / w.total_mass()
    assert np.abs(p.values - (tg.values - w_mean)).max() < 1e-10


@pytest.mark.parametrize("seed", range(6))
def test_paraproduct_norm_identity(seed):
    g = build_grid(1, 7)
    rng = np.random.default_rng(seed)
    w = random_a2_weight(1 + seed % 4, 300 + seed, g)
    sigma = random_a2_weight(seed % 3, 400 + seed, g) if seed % 2 else None
    T = random_simple_shift(1 + seed % 3, 500 + seed, g)
    f = GridFunction(g, rng.standard_normal(g.cell_count))
    lhs, rhs = paraproduct_identity(f, T, sigma, w)
    assert abs(lhs - rhs) <= 1e-10 * max(lhs, rhs, 1e-30)


# -- localized partial sums ------------------------------------------------------

def test_h_functional_trivial_cases():
    g = build_grid(1, 7)
    T = random_simple_shift(2, 10, g)
    w = random_a2_weight(2, 11, g)
    assert np.abs(h_functional(g.root(), CubeSet.empty(g), T, w).values).max() == 0.0
    one = Weight(GridFunction.constant(g, 1.0))
    fam = CubeSet.all_under(g, g.root())
    assert np.abs(h_functional(g.root(), fam, T, one).values).max() < 1e-12
    assert bold_h(CubeSet.empty(g), T, w).value == 0.0
    assert bold_h(fam, T, one).value < 1e-12


def test_h_functional_matches_masked_application():
    g = build_grid(1, 7)
    T = random_simple_shift(2, 12, g)
    w = random_a2_weight(3, 13, g)
    cubes = [g.cube(0, 0), g.cube(2, 1), g.cube(3, 6), g.cube(5, 17)]
    sel = CubeSet.from_cubes(g, cubes)
    got = h_functional(g.root(), sel, T, w)
    direct = np.zeros(g.cell_count)
    for c in cubes:
        mask = {c.level: np.zeros(g.level_count(c.level), dtype=bool)}
        mask[c.level][c.flat] = True
        direct += T.masked(mask).apply_values(w.values)
    assert np.abs(got.values - direct).max() < 1e-12
    # restriction under a smaller top drops the cubes outside it
    top = g.cube(1, 0)
    got_top = h_functional(top, sel, T, w)
    direct_top = np.zeros(g.cell_count)
    for c in cubes:
        if top.contains(c):
            mask = {c.level: np.zeros(g.level_count(c.level), dtype=bool)}
            mask[c.level][c.flat] = True
            direct_top += T.masked(mask).apply_values(w.values)
    assert np.abs(got_top.values - direct_top).max() < 1e-12


def test_bold_h_matches_direct_scan():
    g = build_grid(1, 6)
    T = random_simple_shift(2, 14, g)
    w = random_a2_weight(3, 15, g)
    qn = qn_partition(w)
    cls = qn.classes[max(qn.n_values())]
    rep = bold_h(cls, T, w)
    best = 0.0
    from dyadlab import l2_norm
    for q0 in cls.cubes():
        h = h_functional(q0, cls, T, w)
        best = max(best, l2_norm(h, dual_weight(w)) / math.sqrt(w.mass(q0)))
    assert rep.value == pytest.approx(best, rel=1e-12)
    unres = bold_h(cls, T, w, restrict_sup=False)
    assert unres.value >= rep.value - 1e-12


# -- corona split -----------------------------------------------------------------

def test_ab_split_trivial_cases():
    g = build_grid(1, 10)
    one = Weight(GridFunction.constant(g, 1.0))
    T = random_simple_shift(2, 16, g, separated=True)
    qn = qn_partition(one, levels=T.levels)
    cls = qn.classes[0]
    corona = build_corona(one, cls, g.root(), stopping_levels=T.levels)
    rep = corona_ab_split(g.root(), 0, corona, T, one)
    assert rep.a_part == pytest.approx(0.0, abs=1e-20)
    assert rep.b_part == pytest.approx(0.0, abs=1e-20)
    assert rep.stopping_count == 1  # single stopping cube forces B = 0


def test_ab_split_values_match_direct_sum():
    w, T, cases = exp.essence_cases(33)
    g = w.grid
    dual_cells = g.cell_volume / w.values
    seen = 0
    for n, q0, corona, L0, fiber in cases:
        rep = corona_ab_split(q0, n, corona, T, w)
        stops = [L for L in corona.stopping_cubes() if q0.contains(L)]
        a_direct, b_direct = 0.0, 0.0
        h_loc = {}
        for L in stops:
            h = np.abs(h_functional(L, corona.corona_of(L), T, w).values)
            h_loc[(L.level, L.flat)] = h
            a_direct += float((h ** 2 * dual_cells).sum())
        for L in stops:
            for Lp in corona.stopping_descendants(L):
                if q0.contains(Lp):
                    b_direct += float(
                        (h_loc[(L.level, L.flat)] * h_loc[(Lp.level, Lp.flat)]
                         * dual_cells).sum()
                    )
        assert rep.a_part == pytest.approx(a_direct, rel=1e-12, abs=1e-15)
        assert rep.b_part == pytest.approx(b_direct, rel=1e-12, abs=1e-15)
        seen += 1
        if seen >= 3:
            break
    assert seen > 0


# -- John-Nirenberg ----------------------------------------------------------------

def test_jn_zero_family():
    g = build_grid(1, 8)
    fam = ProfileFamily(g, 2, {j: np.zeros((g.level_count(j), 4))
                               for j in range(0, g.N - 1)})
    rep = jn_check(fam)
    assert rep.hypothesis_ok and rep.conclusion_ok
    assert rep.hypothesis_worst == 0.0


def test_jn_epsilon_family_passes():
    g = build_grid(1, 10)
    for tau, eps in ((1, 0.04), (2, 0.05), (3, 0.08)):
        fam = exp.jn_epsilon_family(g, tau, eps, seed=tau)
        rep = jn_check(fam)
        assert rep.hypothesis_ok
        assert rep.conclusion_ok


def test_jn_hypothesis_violation_reported():
    # aligned full-amplitude profiles stack along the grid and overflow the
    # level-set budget; the conclusion is then not evaluated
    g = build_grid(1, 8)
    tau = 1
    profiles = {
        j: np.tile([1.0, -1.0], (g.level_count(j), 1)) for j in range(0, g.N)
    }
    rep = jn_check(ProfileFamily(g, tau, profiles))
    assert not rep.hypothesis_ok
    assert rep.hypothesis_worst > 1.0
    assert rep.conclusion_ok is None
    assert rep.hypothesis_witness is not None


def test_jn_boundary_families_subset():
    for i in (0, 1, 2, 7):
        fam = exp.jn_boundary_family(i)
        rep = jn_check(fam)
        assert rep.hypothesis_ok
        assert rep.conclusion_ok
        assert rep.hypothesis_worst <= 1.0 + 1e-12


def test_profile_family_validation():
    g = build_grid(1, 4)
    with pytest.raises(Exception):
        ProfileFamily(g, 1, {0: np.array([[1.5, -1.5]])})
    with pytest.raises(Exception):
        ProfileFamily(g, 1, {0: np.array([[1.0, -1.0, 0.0]])})


# -- essence lemma ------------------------------------------------------------------

def test_essence_trivial_for_lebesgue():
    g = build_grid(1, 10)
    one = Weight(GridFunction.constant(g, 1.0))
    T = random_simple_shift(2, 18, g, separated=True)
    fam = CubeSet.all_under(g, g.root(), levels=T.levels)
    rep = essence_check(g.root(), fam, T, one, k_constant=0.5)
    assert all(m == 0.0 for m in rep.lebesgue_curve.masses)
    assert all(m == 0.0 for m in rep.dual_curve.masses)
    # pairings against a constant weight vanish up to rounding
    assert rep.seven_single_worst < 1e-12


def test_essence_term_bounds_and_monotone_curves():
    w, T, cases = exp.essence_cases(42)
    k = 0.2
    checked = 0
    for n, q0, corona, L, fiber in cases:
        rep = essence_check(L, fiber, T, w, k_constant=k)
        assert rep.lebesgue_curve.is_monotone()
        assert rep.dual_curve.is_monotone()
        # single terms obey the density bound exactly, and the alpha windows
        # cap densities by four times their dyadic band
        assert rep.seven_single_worst <= 1.0 + 1e-12
        assert rep.alpha_window_worst <= 1.0 + 1e-12
        assert rep.lebesgue_curve.masses[0] <= L.volume + 1e-15
        # the dual curve is dominated by the total dual mass of L
        assert rep.dual_curve.masses[0] <= rep.dual_curve.total_mass + 1e-15
        checked += 1
        if checked >= 8:
            break
    assert checked > 0


def test_distribution_curve_slope_and_monotonicity():
    curve = DistributionCurve("lebesgue", (1, 2, 3, 4), (1.0, 0.5, 0.25, 0.125),
                              1.0, 1.0)
    assert curve.is_monotone()
    assert curve.log_slope() == pytest.approx(-math.log(2), rel=1e-12)
    flat = DistributionCurve("lebesgue", (1, 2), (0.0, 0.0), 1.0, 1.0)
    assert flat.log_slope() is None
    assert not DistributionCurve("x", (1, 2), (0.1, 0.2), 1.0, 1.0).is_monotone()


# -- derived weak boundedness and sufficiency -----------------------------------------

def test_weak_boundedness_chain_holds_exactly():
    g = build_grid(1, 7)
    for seed in (0, 1):
        w = random_a2_weight(2 + seed, 600 + seed, g)
        T = random_simple_shift(2, 700 + seed, g)
        rep = weak_boundedness_from_t1_check(T, w)
        assert rep.chain_worst <= 1.0 + 1e-12
        assert rep.i2_worst >= 0.0
        assert math.isfinite(rep.largescale_worst)


def test_weak_boundedness_lebesgue_finite():
    g = build_grid(1, 6)
    one = Weight(GridFunction.constant(g, 1.0))
    T = random_simple_shift(1, 19, g)
    rep = weak_boundedness_from_t1_check(T, one)
    assert rep.a2 == pytest.approx(1.0, abs=1e-12)
    assert rep.chain_worst <= 1.0 + 1e-12
    assert math.isfinite(rep.i2_worst)


def test_sufficiency_unweighted_bound():
    g = build_grid(1, 8)
    one = Weight(GridFunction.constant(g, 1.0))
    shifts = [random_simple_shift(tau, 800 + tau, g) for tau in (1, 2, 3)]
    rep = sufficiency_experiment(one, one, shifts)
    assert rep.two_weight_a2 == pytest.approx(1.0, abs=1e-14)
    for tau, nrm in zip((1, 2, 3), rep.norms):
        assert nrm <= tau + 1 + 1e-6
    assert rep.a_infty_alpha == pytest.approx(0.5, abs=1e-12)


def test_sufficiency_standard_pair_recovers_characteristic():
    g = build_grid(1, 8)
    w = random_a2_weight(3, 900, g)
    rep = sufficiency_experiment(w, dual_weight(w),
                                 [random_simple_shift(2, 901, g)])
    assert rep.two_weight_a2 == w.a2_characteristic()
    assert rep.worst_norm > 0
    assert rep.ratio_to_sqrt_a2 == pytest.approx(
        rep.worst_norm / math.sqrt(rep.two_weight_a2), rel=1e-12)


def test_sufficiency_independent_cascade_pair():
    g = build_grid(1, 8)
    alpha = random_a2_weight(2, 910, g)
    beta = random_a2_weight(1, 911, g)
    shifts = [random_simple_shift(2, 912 + k, g) for k in range(3)]
    rep = sufficiency_experiment(alpha, beta, shifts)
    assert math.isfinite(rep.two_weight_a2)
    assert all(math.isfinite(n) for n in rep.norms)
    assert 0 < rep.a_infty_alpha < 1 and 0 < rep.a_infty_beta < 1


def test_sufficiency_independent_pair_suite():
    # bounded pair constants give finite norms across the pair suite; the
    # normalized ratios are recorded as the experiment's observable
    g = build_grid(1, 8)
    ratios = []
    for k in range(10):
        alpha = random_a2_weight(1 + k % 3, 920 + k, g)
        beta = random_a2_weight(1 + (k // 3) % 3, 950 + k, g)
        T = random_simple_shift(1 + k % 3, 980 + k, g)
        rep = sufficiency_experiment(alpha, beta, [T], norm_method="dense-svd")
        assert math.isfinite(rep.worst_norm)
        ratios.append(rep.ratio_to_sqrt_a2)
    assert all(math.isfinite(r) and r >= 0 for r in ratios)
