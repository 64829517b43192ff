import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from boundaryrd import Dataset, EstimationConfig
from boundaryrd.guards import enforce_bwcheck
from boundaryrd.io import PVALUE_LABELS, load_csv, pvalue_bucket, write_csv
from boundaryrd.kernels import basis_biv, basis_dim, kernel_weight
from boundaryrd.localfit import fit_points
from boundaryrd.variance import SandwichSpec, fit_variance, psd_repair

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


@SETTINGS
@given(seed=st.integers(0, 10_000), bwcheck=st.integers(1, 40), h=st.floats(1e-3, 3.0),
       kernel_type=st.sampled_from(["prod", "rad"]))
def test_guard_idempotent_and_monotone(seed, bwcheck, h, kernel_type):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (120, 2))
    d = Dataset(rng.standard_normal(120), x, x[:, 0] >= 0)
    cfg = EstimationConfig(bwcheck=bwcheck, kernel_type=kernel_type)
    first = enforce_bwcheck(d, [0.0, 0.0], 1, h, cfg)
    assert np.all(first.adjusted >= first.original)
    again = enforce_bwcheck(d, [0.0, 0.0], 1, first.adjusted, cfg)
    assert np.array_equal(again.adjusted, first.adjusted)
    w = kernel_weight(x[d.t], first.adjusted, "triangular", kernel_type)
    assert np.count_nonzero(w > 0) >= min(bwcheck, int(d.t.sum()))
    larger = enforce_bwcheck(d, [0.0, 0.0], 1, h, EstimationConfig(bwcheck=bwcheck + 10, kernel_type=kernel_type))
    assert np.all(larger.adjusted >= first.adjusted)


@SETTINGS
@given(a=arrays(float, (4, 4), elements=st.floats(-1, 1)))
def test_psd_repair_properties(a):
    c = 0.5 * (a + a.T)
    np.fill_diagonal(c, 1.0)
    r = psd_repair(c)
    assert np.allclose(r, r.T)
    assert np.linalg.eigvalsh(r)[0] >= -1e-10
    assert np.allclose(np.diag(r), 1.0)
    assert np.all(np.abs(r) <= 1 + 1e-12)


@SETTINGS
@given(y=arrays(float, 8, elements=finite), x=arrays(float, (8, 2), elements=finite),
       t=arrays(bool, 8))
def test_csv_round_trip(tmp_path_factory, y, x, t):
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    d = Dataset(y, x, t)
    write_csv(d, path)
    back = load_csv(path, "data")
    assert np.array_equal(back.y, d.y) and np.array_equal(back.x, d.x) and np.array_equal(back.t, d.t)


@SETTINGS
@given(p=st.floats(0.0, 1.0))
def test_pvalue_bucket_is_total(p):
    assert pvalue_bucket(p) in PVALUE_LABELS
    assert sum(lab == pvalue_bucket(p) for lab in PVALUE_LABELS) == 1


@SETTINGS
@given(seed=st.integers(0, 10_000), p=st.integers(0, 2))
def test_hc_ordering(seed, p):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (60, 2))
    y = rng.standard_normal(60)
    f = fit_points(x, y, 1.2, p, n=60)
    v = {k: fit_variance(f, SandwichSpec(k))[0] for k in ("hc0", "hc1", "hc2", "hc3")}
    assert v["hc0"] <= v["hc1"] * (1 + 1e-12)
    assert v["hc0"] <= v["hc2"] * (1 + 1e-12) <= v["hc3"] * (1 + 1e-12) ** 2


@SETTINGS
@given(p=st.integers(0, 6), u=st.tuples(finite, finite))
def test_basis_dimension_and_leading_one(p, u):
    r = basis_biv(np.array(u), p)
    assert r.shape[-1] == basis_dim(p) == (p + 1) * (p + 2) // 2
    assert r.ravel()[0] == 1.0


@SETTINGS
@given(u=arrays(float, (10, 2), elements=st.floats(-3, 3)), h=st.floats(0.1, 2.0),
       kernel=st.sampled_from(["triangular", "epanechnikov", "uniform"]),
       kernel_type=st.sampled_from(["prod", "rad"]))
def test_kernel_support_and_sign(u, h, kernel, kernel_type):
    w = kernel_weight(u, h, kernel, kernel_type)
    assert np.all(w >= 0)
    far = np.max(np.abs(u), axis=1) > h if kernel_type == "prod" else np.hypot(u[:, 0], u[:, 1]) > h
    assert np.all(w[far] == 0)
