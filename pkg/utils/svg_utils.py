"""Static SVG rendering of a solved scene."""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Optional

import numpy as np

from exceptions import ArtifactIOError
from utils.potential_utils import Scenario

logger = logging.getLogger(__name__)

__all__: list[str] = ("render_scene", "write_svg", "LAYER_STYLES")

SVG_NS = "http://www.w3.org/2000/svg"
CANVAS_PX = 600.0
MARGIN_M = 3.0
CROSS_M = 0.8
ARROW_M = 1.2
LAYERS = ("history", "ground_truth", "plan", "markers")

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

LAYER_STYLES: dict[str, dict[str, str]] = {
    "history": {"stroke-dasharray": "4 3", "stroke-opacity": "0.35", "stroke-width": "2"},
    "ground_truth": {"stroke-dasharray": "4 3", "stroke-opacity": "0.9", "stroke-width": "1.5"},
    "plan": {"stroke-opacity": "1", "stroke-width": "2.5"},
}


class _Frame:
    """World metres to canvas pixels, y axis flipped"""

    def __init__(self, points: np.ndarray) -> None:
        lo = points.min(axis=0) - MARGIN_M
        hi = points.max(axis=0) + MARGIN_M
        self.lo, self.hi = lo, hi
        self.scale = CANVAS_PX / float(max(hi - lo))

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return np.column_stack([(xy[:, 0] - self.lo[0]) * self.scale, (self.hi[1] - xy[:, 1]) * self.scale])

    @property
    def size(self) -> tuple[float, float]:
        extent = (self.hi - self.lo) * self.scale
        return float(extent[0]), float(extent[1])


def _points_attr(pixels: np.ndarray) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in pixels)


def _polyline(group: ET.Element, pixels: np.ndarray, color: str, layer: str, agent_id: str) -> None:
    ET.SubElement(
        group,
        f"{{{SVG_NS}}}polyline",
        {
            "points": _points_attr(pixels),
            "fill": "none",
            "stroke": color,
            "data-agent": agent_id,
            **LAYER_STYLES[layer],
        },
    )


def render_scene(
    scenario: Scenario,
    plan_states: Optional[np.ndarray] = None,
    title: Optional[str] = None,
) -> ET.ElementTree:
    """History (dashed, light), ground truth (dashed, dark), plan (solid),
    goal crosses and an arrow at each plan endpoint.

    plan_states is the rolled-out joint trajectory shaped (N, T + 1, 5).
    """
    ET.register_namespace("", SVG_NS)
    histories = [np.array([s.as_array()[:2] for s in h]).reshape(-1, 2) for h in scenario.histories]
    initial = scenario.initial_array[:, :2]
    clouds = [initial] + [h for h in histories if len(h)]
    if scenario.ground_truth is not None:
        clouds.append(scenario.ground_truth.reshape(-1, 2))
    if plan_states is not None:
        clouds.append(plan_states[..., :2].reshape(-1, 2))
    if scenario.goals is not None:
        clouds.extend(g.position[None, :] for g in scenario.goals if g is not None)
    frame = _Frame(np.concatenate(clouds))
    width, height = frame.size

    root = ET.Element(
        f"{{{SVG_NS}}}svg",
        {"width": f"{width:.0f}", "height": f"{height:.0f}", "viewBox": f"0 0 {width:.2f} {height:.2f}"},
    )
    ET.SubElement(root, f"{{{SVG_NS}}}title").text = title or scenario.scene_id
    layers = {name: ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": name}) for name in LAYERS}

    for k, agent_id in enumerate(scenario.agent_ids):
        color = PALETTE[k % len(PALETTE)]
        if len(histories[k]):
            _polyline(layers["history"], frame(np.vstack([histories[k], initial[k]])), color, "history", agent_id)
        if scenario.ground_truth is not None:
            future = np.vstack([initial[k], scenario.ground_truth[k]])
            _polyline(layers["ground_truth"], frame(future), color, "ground_truth", agent_id)
        if plan_states is not None:
            path = plan_states[k, :, :2]
            _polyline(layers["plan"], frame(path), color, "plan", agent_id)
            _arrow(layers["markers"], frame, path[-1], plan_states[k, -1, 4], color)
        goal = scenario.goals[k] if scenario.goals is not None else None
        if goal is not None:
            _cross(layers["markers"], frame, goal.position, color)
    return ET.ElementTree(root)


def _cross(group: ET.Element, frame: _Frame, center: np.ndarray, color: str) -> None:
    for dx, dy in ((1, 1), (1, -1)):
        ends = frame(np.array([center + CROSS_M * np.array([dx, dy]), center - CROSS_M * np.array([dx, dy])]))
        ET.SubElement(
            group,
            f"{{{SVG_NS}}}line",
            {
                "x1": f"{ends[0, 0]:.2f}",
                "y1": f"{ends[0, 1]:.2f}",
                "x2": f"{ends[1, 0]:.2f}",
                "y2": f"{ends[1, 1]:.2f}",
                "stroke": color,
                "stroke-width": "2",
                "class": "goal",
            },
        )


def _arrow(group: ET.Element, frame: _Frame, tip: np.ndarray, heading: float, color: str) -> None:
    forward = np.array([np.cos(heading), np.sin(heading)])
    side = np.array([-forward[1], forward[0]])
    base = tip - ARROW_M * forward
    corners = frame(np.array([tip, base + 0.5 * ARROW_M * side, base - 0.5 * ARROW_M * side]))
    ET.SubElement(group, f"{{{SVG_NS}}}polygon", {"points": _points_attr(corners), "fill": color, "class": "endpoint"})


def write_svg(tree: ET.ElementTree, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tree.write(path, encoding="utf-8", xml_declaration=True)
    except OSError as e:
        raise ArtifactIOError(f"Could not write {path}: {e}") from e
    logger.debug("wrote %s", path)
    return path
