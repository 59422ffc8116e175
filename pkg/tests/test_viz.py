import copy
import re

import numpy as np
import pytest

from bevintent.data import synthesize
from bevintent.geom import OrientedBox2D, RigidPose, transform_box
from bevintent.infer import Detection
from bevintent.scene.generator import GeneratorConfig
from bevintent.viz import ARROW_MAX, ego_frame_record, render_frame


@pytest.fixture(scope="module")
def scenario():
    return synthesize(GeneratorConfig(), 0, 1)[0][1]


def record(box, intent):
    wp = [OrientedBox2D(box.cx + k, box.cy, box.w, box.h, box.phi) for k in range(1, 7)]
    d = Detection(box, 0.9, np.asarray(intent), wp, 0).to_dict()
    return {"scenario": "s", "frame": 10, "detections": [d]}


def lengths(svg):
    return {m.group(1): float(m.group(2))
            for m in re.finditer(r'class="intent (\w+)"[^>]*data-length="([0-9.]+)"', svg)}


def test_render_is_deterministic(scenario):
    rec = record(OrientedBox2D(5.0, 2.0, 4.5, 1.9, 0.3), [0.9, 0.1] + [0.0] * 6)
    a = render_frame(scenario, 10, rec)
    b = render_frame(scenario, 10, rec)
    assert a == b
    assert a.startswith("<svg") and a.rstrip().endswith("</svg>")


def test_arrow_lengths_proportional(scenario):
    rec = record(OrientedBox2D(5.0, 2.0, 4.5, 1.9, 0.3), [0.9, 0.1] + [0.0] * 6)
    ln = lengths(render_frame(scenario, 10, rec))
    assert set(ln) == {"keep_lane", "turn_left"}
    assert ln["keep_lane"] / ln["turn_left"] == pytest.approx(9.0, rel=1e-5)
    assert ln["keep_lane"] == pytest.approx(0.9 * ARROW_MAX)


def test_empty_ground_truth_drawn_grey(scenario):
    sc = copy.deepcopy(scenario)
    present = [tr for tr in sc.tracks if tr.boxes[10] is not None]
    assert len(present) >= 2
    counts = np.array(present[0].lidar_point_counts)
    counts[10] = 0
    present[0].lidar_point_counts = counts
    svg = render_frame(sc, 10)
    n_empty = sum(1 for tr in present if tr.lidar_point_counts[10] == 0)
    assert svg.count('class="gt empty"') == n_empty
    assert svg.count('class="gt"') == len(present) - n_empty
    grey = [ln for ln in svg.splitlines() if 'class="gt empty"' in ln]
    assert all('stroke="#8a8a8a"' in ln for ln in grey)


def test_frame_out_of_range(scenario):
    with pytest.raises(IndexError, match="0..59"):
        render_frame(scenario, scenario.n_frames)
    with pytest.raises(IndexError):
        render_frame(scenario, -1)


def test_ego_frame_record_inverts_world_transform(scenario):
    ego = scenario.sweeps[10].ego_pose
    local = OrientedBox2D(3.0, -1.0, 4.5, 1.9, 0.2)
    world = transform_box(local, ego, RigidPose())
    rec = record(world, [1.0] + [0.0] * 7)
    out = ego_frame_record(rec, scenario)
    assert out["detections"][0]["box"] == pytest.approx(list(local.as_tuple()), abs=1e-9)
    assert rec["detections"][0]["box"] == pytest.approx(list(world.as_tuple()))
