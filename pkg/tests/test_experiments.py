from __future__ import annotations

import numpy as np
import pytest

from contactgrad.config import SimConfig
from contactgrad.dynamics import rollout
from contactgrad.experiments import (
    check_primitives,
    default_penetration_variants,
    mean_penetration,
    parse_variant,
    penetration_report,
    penetration_series,
    relative_error,
    run_gradcheck,
    stored_actions_for,
    variant_label,
)
from contactgrad.scenarios import get_scenario


def test_relative_error_examples():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.0], [1.1]) == pytest.approx(0.1 / 1.1)
    assert relative_error([0.0], [1e-12]) == pytest.approx(1e-4)
    assert relative_error([0.0], [1e-12], floor=1e-6) == pytest.approx(1e-6)


@pytest.mark.parametrize(
    "spec,expected",
    [
        ("soft", ("soft", False, None)),
        ("hard+toi", ("hard", True, None)),
        ("smoothed:1000", ("smoothed", False, 1000.0)),
        ("smoothed:50+toi", ("smoothed", True, 50.0)),
    ],
)
def test_parse_variant(spec, expected):
    cfg = parse_variant(spec, SimConfig())
    model, toi, kappa = expected
    assert (cfg.model, cfg.toi) == (model, toi)
    if kappa is not None:
        assert cfg.kappa == kappa


@pytest.mark.parametrize("spec", ["rigid", "smoothed:abc"])
def test_parse_variant_rejects(spec):
    with pytest.raises(ValueError):
        parse_variant(spec, SimConfig())


def test_variant_labels():
    labels = [variant_label(v) for v in default_penetration_variants(SimConfig())]
    assert labels == ["soft", "smoothed(kappa=100)", "smoothed(kappa=1000)", "hard", "hard+toi"]


def test_penetration_series_free_flight_has_no_contact():
    scn = get_scenario("falling-sphere-1d", {"h0": 3.0})
    traj = rollout(scn, SimConfig(model="hard"))
    assert all(d is None for d in penetration_series(traj))
    assert mean_penetration(traj) == 0.0


def test_penetration_report_needs_two_variants():
    with pytest.raises(ValueError):
        penetration_report(get_scenario("falling-sphere-1d"), [SimConfig()])


def test_penetration_report_ordering_is_deepest_first():
    scn = get_scenario("falling-sphere-1d")
    rep = penetration_report(scn, [SimConfig(model="hard", toi=True), SimConfig(model="soft")])
    assert rep.ordering() == ["soft", "hard+toi"]


def test_stored_actions_only_for_hopper():
    assert stored_actions_for(get_scenario("falling-sphere-1d"), SimConfig()) is None
    acts = stored_actions_for(get_scenario("hopper-2d"), SimConfig(dt=0.01))
    assert len(acts) == 100


def test_primitive_checks_all_pass():
    checks = check_primitives(n_points=20, seed=3)
    assert checks and all(c.status == "pass" for c in checks)


def test_hard_gradcheck_passes_or_excludes_kinks():
    checks = run_gradcheck(SimConfig(), models=("hard",), n_points=2)
    assert all(c.ok for c in checks)
    assert all(np.isfinite(c.max_rel_err) or c.status == "excluded" for c in checks)
