import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from boundaryrd import CutoffGrid, Dataset, EstimationConfig, ValidationError
from boundaryrd.distance import DistanceMatrix, estimate_distance
from boundaryrd.inference import estimate_location
from boundaryrd.io import (
    PVALUE_LABELS,
    export_plotdata,
    load_csv,
    pvalue_bucket,
    read_plotdata,
    read_table_csv,
    render_report,
    result_to_dict,
    write_csv,
    write_json,
    write_table_csv,
)

from conftest import make_data, vertical_grid


@pytest.fixture(scope="module")
def loc_res():
    d = make_data(n=1200, seed=31)
    return d, estimate_location(d, vertical_grid(6), aate_weights=np.ones(6))


def test_handcrafted_data_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y,x1,x2,t\n1.5,0.25,-3,1\n-2,1e-3,4.0,0\n0,0,0,1\n")
    d = load_csv(p, "data")
    assert_array_equal(d.y, [1.5, -2.0, 0.0])
    assert_array_equal(d.x, [[0.25, -3.0], [1e-3, 4.0], [0.0, 0.0]])
    assert_array_equal(d.t, [True, False, True])


def test_na_cell_named(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y,x1,x2,t\n1,0,0,1\n2,NA,0,0\n")
    with pytest.raises(ValidationError, match=r"'NA' at row 3, column 'x1'"):
        load_csv(p, "data")


@pytest.mark.parametrize(
    "body,msg",
    [("y,x1,t\n1,0,1\n", "missing column"), ("y,x1,x2,t\n1,0,0,2\n", "t must be 0 or 1"), ("", "header row")],
)
def test_load_errors(tmp_path, body, msg):
    p = tmp_path / "d.csv"
    p.write_text(body)
    with pytest.raises(ValidationError, match=msg):
        load_csv(p, "data")


def test_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset(rng.standard_normal(30) * 1e-7, rng.uniform(-1, 1, (30, 2)), rng.integers(0, 2, 30),
                cluster=rng.integers(0, 4, 30).astype(str))
    write_csv(d, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", "data")
    assert_array_equal(back.y, d.y)
    assert_array_equal(back.x, d.x)
    assert_array_equal(back.t, d.t)
    assert_array_equal(back.cluster, d.cluster)
    g = CutoffGrid([[0.1, 1 / 3], [2.0, -5.5]], labels=("a", "b"), kink=[False, True])
    write_csv(g, tmp_path / "g.csv")
    gb = load_csv(tmp_path / "g.csv", "grid")
    assert_array_equal(gb.points, g.points)
    assert gb.labels == g.labels and gb.kink.tolist() == [False, True]
    dm = DistanceMatrix(np.array([[-0.0, -1.5], [np.pi, 2.0]]), labels=("c1", "c2"))
    write_csv(dm, tmp_path / "dm.csv")
    dmb = load_csv(tmp_path / "dm.csv", "distance")
    assert_array_equal(dmb.d, dm.d)
    assert np.signbit(dmb.d[0, 0]) and dmb.labels == ("c1", "c2") and dmb.metric == "user_supplied"
    w = np.array([0.1, 0.7, 2.0])
    write_csv(w, tmp_path / "w.csv")
    assert_array_equal(load_csv(tmp_path / "w.csv", "weights"), w)


def test_header_layout(loc_res):
    _, res = loc_res
    text = res.summary()
    assert "BW type.               mserd-dpi-std" in text
    assert "Kernel                 triangular-prod" in text
    assert "Number of Obs.         1200" in text
    assert all(line == line.rstrip() for line in text.splitlines())


def test_subset_rows(loc_res):
    _, res = loc_res
    text = res.summary(subset=[1, 5])
    body = [ln for ln in text.splitlines() if ln.startswith(("   1 ", "   5 ", "   2 "))]
    assert len(body) == 2
    with pytest.raises(ValidationError, match="out of range"):
        res.summary(subset=[7])


def test_band_and_bandwidth_reports(loc_res):
    _, res = loc_res
    assert "95% CB" in render_report(res, cb_uniform=True)
    bw = render_report(res, report="bw")
    assert "h01" in bw and "Nh1" in bw
    assert "AATE" in res.summary()


def test_distance_header():
    d = make_data(n=800, seed=32)
    res = estimate_distance(d, vertical_grid(3), EstimationConfig(kink="on"))
    text = res.summary()
    assert "BW type                mserd-rot" in text
    assert "Kink                   on" in text
    assert "P > |z|" in text


def test_json_matches_csv(loc_res, tmp_path):
    _, res = loc_res
    write_json(res, tmp_path / "r.json")
    write_table_csv(res.table, tmp_path / "r.csv")
    js = json.loads((tmp_path / "r.json").read_text())
    cs = read_table_csv(tmp_path / "r.csv")
    for col in ("estimate", "rbc_estimate", "se_rbc", "ci_lo", "cb_hi", "p_value"):
        a = np.array([row[col] for row in js["table"]])
        assert np.max(np.abs(a - cs[col])) <= 1e-15
        assert_array_equal(a, getattr(res.table, col))
    assert js["aate"]["estimate"] == res.table.aate.estimate
    assert result_to_dict(res)["band"]["q_alpha"] == res.band.q_alpha


def test_pvalue_buckets_partition():
    grid = np.linspace(0.0, 1.0, 20001)
    labels = [pvalue_bucket(p) for p in grid]
    assert set(labels) == set(PVALUE_LABELS)
    assert pvalue_bucket(0.05) == "0.05<=p<0.1" and pvalue_bucket(0.0499999) == "0.01<=p<0.05"
    order = [PVALUE_LABELS.index(s) for s in labels]
    assert all(a <= b for a, b in zip(order, order[1:]))


@pytest.mark.parametrize("kind,series", [("curve_ci_cb", 6), ("estimate_heatmap", 1), ("pvalue_heatmap", 1)])
def test_plot_export(loc_res, tmp_path, kind, series):
    _, res = loc_res
    rows = export_plotdata(res, kind, tmp_path / "p.csv")
    assert len(rows) == series * res.table.J
    back = read_plotdata(tmp_path / "p.csv")
    assert len(back) == series
    for name, vals in back.items():
        col = "p_value" if name == "p_value" else name
        assert_array_equal(vals, getattr(res.table, col))


def test_scatter_export(loc_res):
    d, res = loc_res
    rows = export_plotdata(res, "scatter", data=d)
    assert len(rows) == d.n
    assert {r["series"] for r in rows} == {"treated", "control"}
    with pytest.raises(ValidationError):
        export_plotdata(res, "scatter")
