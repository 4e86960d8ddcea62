import numpy as np
import pytest

from invuq.distributions import Empirical, Gaussian, Uniform
from invuq.emulator import fit_mle
from invuq.errors import ConfigError, UndefinedIndexError
from invuq.model import builtin_model, ishigami_reference
from invuq.sa import (
    brute_force_sobol,
    detect_interactions,
    estimate_sobol,
    saltelli_design,
    table_from_values,
)

from tables import PARAMS, RESPONSES, TABLE3_MAIN, TABLE3_TOTAL


def test_design_shapes():
    dsg = saltelli_design([Uniform(0, 1)] * 3, 64, seed=0, second_order=True)
    assert dsg.A.shape == (64, 3) and dsg.AB.shape == (3, 64, 3)
    assert dsg.n_evaluations == 64 * 8
    for i in range(3):
        assert np.array_equal(dsg.AB[i][:, i], dsg.B[:, i])
        others = [k for k in range(3) if k != i]
        assert np.array_equal(dsg.AB[i][:, others], dsg.A[:, others])


def test_n_must_be_power_of_two():
    with pytest.raises(ConfigError):
        estimate_sobol(lambda t: t[:, 0], [Uniform(0, 1)], n=100)
    with pytest.raises(ConfigError):
        estimate_sobol(lambda t: t[:, 0], [Uniform(0, 1)], n=32)


def test_single_input_identity():
    t = estimate_sobol(lambda th: th[:, 0], [Uniform(0, 1)], n=2**12)
    assert t.main[0, 0] == pytest.approx(1.0, abs=0.01)
    assert t.total[0, 0] == pytest.approx(1.0, abs=0.01)


def test_constant_model_undefined():
    with pytest.raises(UndefinedIndexError):
        estimate_sobol(lambda th: np.zeros(th.shape[0]), [Uniform(0, 1)], n=64)


def test_additive_sums():
    lin = builtin_model("linear_additive", {"c": (1.0, -3.0, 0.5)})
    t = estimate_sobol(lin, lin.calib_dists, n=2**14)
    assert abs(t.main_sum[0] - 1.0) <= 0.03
    assert np.max(t.total - t.main) <= 0.03


def test_ishigami_second_order():
    sim = builtin_model("ishigami")
    t = estimate_sobol(sim, sim.calib_dists, n=2**15, with_second_order=True)
    ref = ishigami_reference()
    assert t.second_order[(0, 2)][0] == pytest.approx(ref["second_order"][(0, 2)], abs=0.03)
    assert abs(t.second_order[(0, 1)][0]) < 0.03


def test_total_exceeds_main_within_ci():
    sim = builtin_model("ishigami")
    t = estimate_sobol(sim, sim.calib_dists, n=2**13, seed=4)
    assert np.all(t.total + 3 * t.ci_total >= t.main)


def test_permutation_equivariance():
    dists = [Uniform(0, 1), Gaussian(0.0, 2.0), Uniform(-1, 3)]
    f = lambda t: t[:, 0] * t[:, 1] + np.sin(t[:, 2])
    perm = [2, 0, 1]
    g = lambda t: f(t[:, np.argsort(perm)])
    a = estimate_sobol(f, dists, n=2**13, seed=2)
    b = estimate_sobol(g, [dists[k] for k in perm], n=2**13, seed=2)
    # the Sobol' sequence columns differ, so agreement is up to MC noise
    assert b.main == pytest.approx(a.main[perm], abs=0.03)
    assert b.total == pytest.approx(a.total[perm], abs=0.03)


def test_brute_force_single_input():
    bf = brute_force_sobol(lambda th: th[:, 0], [Uniform(0, 1), Uniform(0, 1)], n_outer=256, n_inner=256)
    assert bf.main[:, 0] == pytest.approx([1.0, 0.0], abs=0.02)
    assert bf.total[:, 0] == pytest.approx([1.0, 0.0], abs=0.02)


def test_empirical_marginals():
    rng = np.random.default_rng(0)
    dists = [Empirical(rng.uniform(0, 1, 5000)), Empirical(rng.uniform(0, 1, 5000))]
    t = estimate_sobol(lambda th: th[:, 0] + 2 * th[:, 1], dists, n=2**13)
    assert t.main[:, 0] == pytest.approx([0.2, 0.8], abs=0.03)


def test_gp_model_input():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (30, 2))
    gp = fit_mle(x, x[:, 0] + 2 * x[:, 1], nugget=1e-8)
    t = estimate_sobol([gp], [Uniform(0, 1), Uniform(0, 1)], n=2**12)
    assert t.main[:, 0] == pytest.approx([0.2, 0.8], abs=0.03)


def test_negative_estimates_not_clamped():
    t = estimate_sobol(lambda th: th[:, 0] + 1e-4 * th[:, 1], [Uniform(0, 1), Uniform(0, 1)], n=256, seed=11)
    assert t.main[1, 0] == pytest.approx(0.0, abs=1e-3)
    table = table_from_values([[-0.02], [1.0]], [[0.01], [1.0]], ["a", "b"], ["y"])
    assert detect_interactions(table).gap[0, 0] == pytest.approx(0.01)


def test_table3_cells():
    table = table_from_values(TABLE3_MAIN, TABLE3_TOTAL, PARAMS, RESPONSES)
    rep = detect_interactions(table, gap_threshold=0.05, sum_tolerance=0.05)
    assert rep.flags[PARAMS.index("P1012"), 0]
    assert not rep.flags[PARAMS.index("P1029"), 3]
    assert rep.response_interaction[0] and not rep.response_interaction[2]
    assert table.main_sum == pytest.approx([0.7806, 0.9350, 0.9792, 0.9715], abs=1e-4)
    # printed sums were taken before rounding the cells, so allow a few units in the last digit
    assert table.total_sum == pytest.approx([1.2203, 1.0650, 1.0208, 1.0298], abs=3e-4)


def test_unsupported_distribution():
    with pytest.raises(ConfigError):
        estimate_sobol(lambda t: t[:, 0], ["uniform"], n=64)
    with pytest.raises(ConfigError):
        Empirical(np.zeros(10))
