"""Decode detections from confidence maps and score them against truth.

Detections are axis-aligned canonical boxes (standard vehicle footprint) in
the decoding agent's grid, placed at local maxima of a confidence map and
transformed out to world coordinates through the agent's true pose. Scoring
uses rotated-rectangle IoU (polygon clipping, no shortcuts) and all-point
interpolated average precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .collab import Heatmap
from .errors import ParameterError
from .grids import Pose
from .scene import Box3D

CANONICAL_LENGTH_M = 4.5
CANONICAL_WIDTH_M = 2.0


@dataclass(frozen=True)
class Detection:
    """One decoded box in world coordinates, confidence in ``score``."""

    x: float
    y: float
    yaw_deg: float
    length: float
    width: float
    score: float

    def corners(self) -> np.ndarray:
        return rect_corners(self.x, self.y, self.length, self.width, self.yaw_deg)


def rect_corners(x: float, y: float, length: float, width: float,
                 yaw_deg: float) -> np.ndarray:
    """(4, 2) counter-clockwise footprint corners of a rotated rectangle."""
    c, s = math.cos(math.radians(yaw_deg)), math.sin(math.radians(yaw_deg))
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]], dtype=np.float64)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon given as (N, 2) vertices."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip a polygon by a convex polygon (CCW)."""
    output = [tuple(p) for p in subject]
    m = len(clip)
    for i in range(m):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        pts = output
        output = []
        for j in range(len(pts)):
            cx, cy = pts[j]
            px, py = pts[j - 1]
            cur_in = ex * (cy - ay) - ey * (cx - ax) >= 0
            prev_in = ex * (py - ay) - ey * (px - ax) >= 0
            if cur_in != prev_in:
                dx, dy = cx - px, cy - py
                denom = ex * dy - ey * dx
                if abs(denom) > 1e-15:
                    t = (ex * (ay - py) - ey * (ax - px)) / denom
                    output.append((px + t * dx, py + t * dy))
            if cur_in:
                output.append((cx, cy))
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def rotated_iou(corners_a: np.ndarray, corners_b: np.ndarray) -> float:
    """Intersection-over-union of two convex quads given as CCW corners."""
    inter = polygon_area(clip_polygon(corners_a, corners_b))
    if inter == 0.0:
        return 0.0
    union = polygon_area(corners_a) + polygon_area(corners_b) - inter
    return inter / union if union > 0 else 0.0


def box_iou(a, b) -> float:
    """IoU of two footprints; accepts Detection or scene Box3D objects."""
    ca = a.corners() if isinstance(a, Detection) else a.footprint_corners()
    cb = b.corners() if isinstance(b, Detection) else b.footprint_corners()
    return rotated_iou(ca, cb)


def decode_detections(consensus: Heatmap, ego_pose: Pose | None = None,
                      threshold: float = 0.6,
                      suppression_radius: int = 1) -> list[Detection]:
    """Peaks of a confidence map as canonical boxes in world coordinates.

    A cell detects when it exceeds the threshold and is a 3x3 local maximum.
    Candidates are visited best-first (ties row-major) and any candidate
    within ``suppression_radius`` cells (Chebyshev) of an accepted one is
    suppressed. Boxes are axis-aligned in the decoding grid, so their world
    yaw equals the agent's yaw; with no pose given they stay in grid
    coordinates at the cell centers.
    """
    if not 0.0 < threshold <= 1.0:
        raise ParameterError("threshold must be in (0, 1]")
    if ego_pose is None:
        ego_pose = Pose()
    heat = consensus.data
    h_n, w_n = heat.shape
    padded = np.full((h_n + 2, w_n + 2), -np.inf, dtype=np.float64)
    padded[1:-1, 1:-1] = heat
    is_max = np.ones((h_n, w_n), dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_max &= heat >= padded[1 + di : 1 + di + h_n, 1 + dj : 1 + dj + w_n]
    candidates = np.argwhere(is_max & (heat > threshold))
    order = np.lexsort((candidates[:, 1], candidates[:, 0],
                        -heat[candidates[:, 0], candidates[:, 1]].astype(np.float64)))

    shape = consensus.shape
    cy = math.cos(math.radians(ego_pose.yaw))
    sy = math.sin(math.radians(ego_pose.yaw))
    accepted: list[tuple[int, int]] = []
    out: list[Detection] = []
    for h, w in candidates[order]:
        if any(max(abs(int(h) - ah), abs(int(w) - aw)) <= suppression_radius
               for ah, aw in accepted):
            continue
        accepted.append((int(h), int(w)))
        lx = (h + 0.5 - shape.h_cells / 2.0) * shape.cell_size_m
        ly = (w + 0.5 - shape.w_cells / 2.0) * shape.cell_size_m
        out.append(Detection(
            x=ego_pose.x + cy * lx - sy * ly,
            y=ego_pose.y + sy * lx + cy * ly,
            yaw_deg=ego_pose.yaw,
            length=CANONICAL_LENGTH_M,
            width=CANONICAL_WIDTH_M,
            score=float(heat[h, w]),
        ))
    return out


def _match_greedy(detections: Sequence[Detection], truths: Sequence[Box3D],
                  iou_threshold: float) -> list[bool]:
    """True/False per detection (descending score): matched a fresh truth box."""
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score, detections[i].x, detections[i].y))
    covered = [False] * len(truths)
    hits = [False] * len(detections)
    for i in order:
        best_j, best_iou = -1, 0.0
        for j, gt in enumerate(truths):
            if covered[j]:
                continue
            iou = box_iou(detections[i], gt)
            if iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0 and best_iou >= iou_threshold:
            covered[best_j] = True
            hits[i] = True
    # keep hit flags in score order for the PR sweep
    return [hits[i] for i in order]


def recall_at(detections: Sequence[Detection], truths: Sequence[Box3D],
              iou_threshold: float) -> float:
    """Fraction of truth boxes matched by some detection. Empty truth -> 1."""
    if not truths:
        return 1.0
    hits = _match_greedy(detections, truths, iou_threshold)
    return sum(hits) / len(truths)


def average_precision(detections: Sequence[Detection], truths: Sequence[Box3D],
                      iou_threshold: float) -> float:
    """All-point interpolated AP at one IoU threshold.

    Detections sweep best-first; precision is enveloped (max precision at
    any recall >= r) and integrated over exact recall steps. No detections
    and no truths scores a perfect 1.0; one side empty scores 0.0.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ParameterError("iou_threshold must be in (0, 1]")
    if not truths and not detections:
        return 1.0
    if not truths or not detections:
        return 0.0
    hits = _match_greedy(detections, truths, iou_threshold)
    tp = np.cumsum(hits, dtype=np.float64)
    fp = np.cumsum([not h for h in hits], dtype=np.float64)
    recall = tp / len(truths)
    precision = tp / (tp + fp)
    # precision envelope, then sum area over recall increments
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    area = 0.0
    for r, p in zip(recall, env):
        if r > prev_r:
            area += (r - prev_r) * p
            prev_r = r
    return float(area)
