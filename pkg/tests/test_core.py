import numpy as np
import pytest
from numpy.testing import assert_array_equal

from boundaryrd import CutoffGrid, Dataset, EstimationConfig, ValidationError, validate_inputs
from boundaryrd.core import PILOT_CONSTANTS


def test_defaults():
    cfg = EstimationConfig()
    assert (cfg.p, cfg.q, cfg.deriv) == (1, 2, (0, 0))
    assert (cfg.kernel, cfg.kernel_type, cfg.vce) == ("triangular", "prod", "hc1")
    assert (cfg.level, cfg.bwselect, cfg.stdvar, cfg.masspoint) == (95.0, "mserd", True, "check")
    assert cfg.reg_factor == 3.0 and cfg.kink == "off" and cfg.band_draws == 2000
    assert cfg.pilot_c == PILOT_CONSTANTS["triangular"] == 1.0


@pytest.mark.parametrize("p,loc,dist", [(1, 52, 52), (2, 55, 53), (0, 50, 51)])
def test_bwcheck_defaults(p, loc, dist):
    cfg = EstimationConfig(p=p, q=p + 1)
    assert cfg.bwcheck_for("location") == loc
    assert cfg.bwcheck_for("distance") == dist


@pytest.mark.parametrize(
    "kw",
    [
        {"q": 0},
        {"deriv": (1, 1)},
        {"kernel": "gaussian"},
        {"kernel_type": "box"},
        {"vce": "hc4"},
        {"level": 100},
        {"reg_factor": -1},
        {"bwselect": "cer"},
        {"masspoint": "drop"},
        {"kink": "maybe"},
        {"band_draws": 0},
        {"pilot_share": 1.5},
    ],
)
def test_config_rejects(kw):
    with pytest.raises(ValidationError):
        EstimationConfig(**kw)


def test_config_collects_all_violations():
    with pytest.raises(ValidationError) as err:
        EstimationConfig(kernel="x", vce="y")
    assert len(err.value.violations) == 2


def test_dataset_is_immutable():
    d = Dataset([1.0, 2.0], [[0, 1], [1, 0]], [0, 1])
    with pytest.raises(ValueError):
        d.y[0] = 3.0
    assert d.t.dtype == bool


def test_dataset_errors_name_rows():
    with pytest.raises(ValidationError, match="row 1"):
        Dataset([1.0, np.nan], [[0, 1], [1, 0]], [0, 1])
    with pytest.raises(ValidationError, match="length mismatch"):
        Dataset([1.0], [[0, 1], [1, 0]], [0, 1])
    with pytest.raises(ValidationError, match="0/1"):
        Dataset([1.0, 2.0], [[0, 1], [1, 0]], [0, 2])


def test_cluster_codes():
    d = Dataset([1.0, 2.0, 3.0], np.zeros((3, 2)), [0, 1, 1], cluster=["b", "a", "b"])
    assert_array_equal(d.cluster_codes, [1, 0, 1])


def test_grid_duplicates_and_subset():
    g = CutoffGrid([[0, 0], [0, 1], [0, 0]], labels=["a", "b", "c"], kink=[True, False, False])
    assert g.duplicates() == [2]
    s = g.subset([1])
    assert s.labels == ("b",) and not s.kink[0]


def test_validate_inputs_flags_empty_group():
    d = Dataset([1.0, 2.0], [[0, 1], [1, 0]], [1, 1])
    with pytest.raises(ValidationError, match="empty control"):
        validate_inputs(d, CutoffGrid([[0, 0]]), EstimationConfig())


def test_validate_inputs_cluster_needed():
    d = Dataset([1.0, 2.0], [[0, 1], [1, 0]], [0, 1])
    with pytest.raises(ValidationError, match="cluster"):
        validate_inputs(d, CutoffGrid([[0, 0]]), EstimationConfig(cluster_on=True))


def test_validate_inputs_report():
    d = Dataset([1.0, 2.0, 3.0], [[0, 1], [1, 0], [1, 0]], [0, 1, 1])
    r = validate_inputs(d, CutoffGrid([[0, 0], [0, 0]]), EstimationConfig())
    assert (r.n, r.n0, r.n1, r.unique_rows, r.duplicate_cutoffs) == (3, 1, 2, 2, (1,))
