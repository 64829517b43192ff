import csv
import io

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from boundaryrd import CutoffGrid, NumericalError, ValidationError
from boundaryrd.simulate import (
    REPORTED_IDS,
    DGPSpec,
    MCReport,
    ReplicationResult,
    generate,
    lshaped_grid,
    regression_functions,
    run_mc,
    summarize,
    true_tau,
)


def test_dgp1_constants():
    s = DGPSpec.dgp(1)
    assert s.coef0[0] == 2 * 0.335 and s.sigma0 == 0.332 and s.sigma1 == 0.435
    assert np.all(s.coef0[3:] == 0) and np.all(s.coef1[3:] == 0)


@pytest.mark.parametrize(
    "which,point,value",
    [(1, (0.0, 0.0), 0.726), (1, (0.0, 50.0), 0.8375), (2, (0.0, 0.0), 0.743)],
)
def test_population_effects(which, point, value):
    assert_allclose(true_tau(DGPSpec.dgp(which), CutoffGrid([point])), [value], atol=1e-12)


def test_dgp1_effect_linear_along_line():
    tau = true_tau(DGPSpec.dgp(1), CutoffGrid([[0.0, v] for v in (0.0, 10.0, 20.0, 30.0)]))
    assert_allclose(np.diff(tau, 2), 0.0, atol=1e-13)


def test_noiseless_outcomes_are_exact():
    spec = DGPSpec.dgp(1, n=500, seed=3).with_(sigma0=0.0, sigma1=0.0)
    d = generate(spec)
    m0, m1 = regression_functions(spec, d.x)
    assert_array_equal(d.y, np.where(d.t, m1, m0))


def test_generate_reproducible_and_support():
    spec = DGPSpec.dgp(2, n=1000, seed=5)
    a, b = generate(spec, 4), generate(spec, 4)
    assert_array_equal(a.y, b.y)
    assert_array_equal(a.x, b.x)
    assert not np.array_equal(generate(spec, 5).y, a.y)
    assert np.all(a.x >= -25) and np.all(a.x <= 75)
    assert_array_equal(a.t, (a.x[:, 0] >= 0) & (a.x[:, 1] >= 0))


def test_score_law_mean():
    d = generate(DGPSpec.dgp(1, n=200_000, seed=1))
    # 100 * Beta(3, 4) - 25 has mean 100 * 3/7 - 25
    assert_allclose(d.x.mean(axis=0), 100 * 3 / 7 - 25, atol=0.15)


def test_lshaped_grid_layout():
    g = lshaped_grid()
    assert g.J == 40
    assert_array_equal(g.points[0], [0.0, 50.0])
    assert_array_equal(g.points[20], [0.0, 0.0])
    assert_array_equal(g.points[39], [47.5, 0.0])
    assert np.flatnonzero(g.kink).tolist() == [20]
    sub = lshaped_grid(REPORTED_IDS)
    assert sub.labels == tuple(str(i) for i in REPORTED_IDS)
    with pytest.raises(ValidationError):
        lshaped_grid([0])


def _fake(est, lo, hi):
    est = np.asarray(est, float)
    return ReplicationResult(np.ones_like(est), est, est - lo, est + hi, est - 2 * lo, est + 2 * hi)


def test_summarize_definitions():
    truth = np.array([0.0, 1.0])
    reps = [_fake([0.1, 1.3], 0.2, 0.2), _fake([-0.3, 0.7], 0.2, 0.2), _fake([0.05, 1.0], 0.2, 0.2)]
    rep = summarize(reps, truth, "loc", ("a", "b"), 3, 0)
    est = rep.estimates
    assert_allclose(rep.rmse**2, rep.bias**2 + rep.sd**2, atol=1e-10)
    assert_allclose(rep.rmse, np.sqrt(np.mean((est - truth) ** 2, axis=0)), rtol=1e-12)
    assert_allclose(rep.ec, [2 / 3, 1 / 3])
    # bands are twice as wide and cover every replication here
    assert rep.uniform_ec == 1.0
    assert_allclose(rep.il, [0.4, 0.4])


def test_infinite_intervals_cover():
    truth = np.array([0.0])
    reps = [ReplicationResult(np.ones(1), np.array([5.0]), np.array([-np.inf]), np.array([np.inf]),
                              np.array([-np.inf]), np.array([np.inf])) for _ in range(4)]
    rep = summarize(reps, truth, "loc", ("1",), 4, 0)
    assert rep.ec[0] == 1.0 and rep.uniform_ec == 1.0


def test_mc_report_csv():
    reps = [_fake([0.1, 0.2], 0.3, 0.3), _fake([0.0, 0.1], 0.3, 0.3)]
    rep = summarize(reps, np.array([0.0, 0.1]), "dist_on", ("1", "5"), 2, 0)
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == list(MCReport.COLUMNS)
    assert [r[1] for r in rows[1:]] == ["1", "5", "Uniform"]
    assert float(rows[1][3]) == rep.bias[0]
    assert "Uniform" in rep.render()


def test_run_mc_small_and_reproducible():
    spec = DGPSpec.dgp(1, n=1500, seed=2)
    grid = lshaped_grid([1, 21])
    a = run_mc(spec, grid, method="dist_on", m=3, workers=1)
    b = run_mc(spec, grid, method="dist_on", m=3, workers=2)
    assert a.to_csv() == b.to_csv()
    assert a.failures == 0 and np.all((a.ec >= 0) & (a.ec <= 1))


def test_run_mc_failures_reported():
    # a tiny sample cannot satisfy the minimum local sample size at any cutoff
    spec = DGPSpec.dgp(1, n=40, seed=0)
    with pytest.raises(NumericalError, match="replications failed"):
        run_mc(spec, lshaped_grid([1]), method="loc", m=2)
    with pytest.raises(ValidationError):
        run_mc(spec, lshaped_grid([1]), method="nope", m=2)
