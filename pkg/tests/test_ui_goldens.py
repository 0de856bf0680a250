"""Server side of the UI contract: every frontend fixture must be accepted by
the trajectory schema, and the goldens must match this implementation."""

import json
from pathlib import Path

import numpy as np
import pytest

from inpaint_lab.masks import BoxTrajectory, interpolate_boxes

FIXTURES = Path(__file__).resolve().parent.parent / "frontend" / "fixtures"

NAMES = sorted(p.stem for p in (FIXTURES / "trajectories").glob("*.json"))


@pytest.mark.parametrize("name", NAMES)
def test_fixture_accepted_and_golden_matches(name):
    traj = BoxTrajectory.from_json((FIXTURES / "trajectories" / f"{name}.json").read_text())
    golden = json.loads((FIXTURES / "interpolated" / f"{name}.json").read_text())
    boxes = interpolate_boxes(traj, traj.length)
    assert len(boxes) == len(golden)
    for box, want in zip(boxes, golden):
        assert np.allclose(box.as_list(), want, atol=1e-9)


def test_fixture_inventory():
    assert len(NAMES) >= 3
    assert (FIXTURES / "interpolated").is_dir()
