import numpy as np
import pytest
from numpy.testing import assert_allclose

from boundaryrd import Dataset, NumericalError
from boundaryrd.localfit import fit_local, fit_points
from boundaryrd.variance import (
    SandwichSpec,
    coef_covariance,
    cross_covariance,
    fit_variance,
    influence,
    psd_repair,
    sigma_meat,
)

import oracles
from conftest import make_data

X0, H0 = np.array([0.0, 0.1]), np.array([0.7, 0.6])


@pytest.fixture
def fits():
    d = make_data(n=300, seed=8, clusters=25)
    return d, [fit_local(d, X0, g, H0, 2) for g in (0, 1)]


@pytest.mark.parametrize("vce", ["hc0", "hc1", "hc2", "hc3"])
def test_hc_variants_match_textbook_sandwich(fits, vce):
    d, fs = fits
    for g, f in enumerate(fs):
        rows = np.flatnonzero(d.t == bool(g))
        ref = oracles.wls(d.x[rows] - X0, d.y[rows], H0, 2)
        _, se = fit_variance(f, SandwichSpec(vce))
        assert_allclose(se**2, oracles.intercept_variance(ref, vce), rtol=1e-10)


def test_hc1_hc0_ratio_exact(fits):
    _, fs = fits
    for f in fs:
        r = sigma_meat(f, SandwichSpec("hc1")) / sigma_meat(f, SandwichSpec("hc0"))
        assert_allclose(r, f.n_eff / (f.n_eff - f.dim), rtol=1e-14)


def test_singleton_clusters_equal_hc0(fits):
    d, fs = fits
    singleton = np.arange(d.n)
    for f in fs:
        cr = sigma_meat(f, SandwichSpec("hc0", True), singleton)
        assert_allclose(cr, sigma_meat(f, SandwichSpec("hc0")), rtol=0, atol=1e-12)


@pytest.mark.parametrize("vce", ["hc0", "hc1"])
def test_cluster_variance_matches_loop(fits, vce):
    d, fs = fits
    codes = d.cluster_codes
    for g, f in enumerate(fs):
        rows = np.flatnonzero(d.t == bool(g))
        ref = oracles.wls(d.x[rows] - X0, d.y[rows], H0, 2)
        ref["pos"] = [int(rows[i]) for i in ref["pos"]]
        _, se = fit_variance(f, SandwichSpec(vce, True), codes)
        assert_allclose(se**2, oracles.cluster_intercept_variance(ref, codes, vce), rtol=1e-10)


def test_hc_ordering(fits):
    _, fs = fits
    for f in fs:
        v0 = fit_variance(f, SandwichSpec("hc0"))[0]
        assert v0 <= fit_variance(f, SandwichSpec("hc1"))[0]
        assert v0 <= fit_variance(f, SandwichSpec("hc2"))[0] <= fit_variance(f, SandwichSpec("hc3"))[0]


def test_influence_sums_to_variance(fits):
    d, fs = fits
    for spec, cl in [(SandwichSpec("hc1"), None), (SandwichSpec("hc1", True), d.cluster_codes)]:
        for f in fs:
            _, psi = influence(f, spec, cl)
            assert_allclose(np.sum(psi**2), fit_variance(f, spec, cl)[1] ** 2, rtol=1e-12)


def test_coef_covariance_intercept(fits):
    _, fs = fits
    f = fs[1]
    cov = coef_covariance(f, SandwichSpec("hc1"))
    assert_allclose(cov[0, 0], fit_variance(f, SandwichSpec("hc1"))[1] ** 2, rtol=1e-12)
    assert np.all(np.linalg.eigvalsh(cov) > -1e-15)


def test_leverage_one_raises_with_unit():
    # three points, three parameters: every point is interpolated exactly
    x = np.array([[0.1, 0.1], [0.2, -0.1], [0.05, 0.3]])
    f = fit_points(x, np.array([1.0, 2.0, 0.5]), 1.0, 1, index=np.array([10, 11, 12]), group=1)
    with pytest.raises(NumericalError, match="unit 1[0-2]"):
        fit_variance(f, SandwichSpec("hc2"))


def test_cross_covariance_pairs_oracle():
    d = make_data(n=350, seed=3)
    pts = [np.array([0.0, -0.2]), np.array([0.0, 0.1]), np.array([0.0, 0.3])]
    h = np.array([0.5, 0.5])
    pairs = [tuple(fit_local(d, b, g, h, 1) for g in (0, 1)) for b in pts]
    cross = cross_covariance(pairs, SandwichSpec("hc1"))
    ofits = []
    for b in pts:
        pr = []
        for g in (0, 1):
            rows = np.flatnonzero(d.t == bool(g))
            o = oracles.wls(d.x[rows] - b, d.y[rows], h, 1)
            o["pos"] = [int(rows[i]) for i in o["pos"]]
            pr.append(o)
        ofits.append(pr)
    ref = np.array([[oracles.cross_cov_pairs(a, b, "hc1") for b in ofits] for a in ofits])
    assert_allclose(cross.cov, ref, rtol=1e-10, atol=1e-14)


def test_cross_covariance_diagonal_equals_pointwise():
    d = make_data(n=400, seed=6)
    pts = [np.array([0.0, v]) for v in (-0.4, 0.0, 0.4)]
    pairs = [tuple(fit_local(d, b, g, [0.6, 0.5], 2) for g in (0, 1)) for b in pts]
    cross = cross_covariance(pairs, SandwichSpec("hc1"))
    for j, (f0, f1) in enumerate(pairs):
        V = fit_variance(f0)[0] + fit_variance(f1)[0]
        assert abs(cross.V[j, j] - V) <= 1e-10
    assert_allclose(np.diag(cross.corr), 1.0)


def test_cross_covariance_zero_variance_raises():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (200, 2))
    d = Dataset(np.zeros(200), x, x[:, 0] >= 0)
    pairs = [tuple(fit_local(d, [0.0, 0.0], g, 0.8, 1) for g in (0, 1))]
    with pytest.raises(NumericalError, match="cutoff index 1"):
        cross_covariance(pairs, SandwichSpec("hc0"))


def test_psd_repair():
    c = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    assert np.linalg.eigvalsh(c)[0] < 0
    r = psd_repair(c)
    assert np.linalg.eigvalsh(r)[0] > -1e-12
    assert_allclose(np.diag(r), 1.0)
    ok = np.array([[1.0, 0.3], [0.3, 1.0]])
    assert_allclose(psd_repair(ok), ok, rtol=1e-15)
