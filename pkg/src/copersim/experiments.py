"""End-to-end evaluation drivers: single runs, sweeps, and report writers.

The evaluation protocol, fixed across every driver here:

* the first agent is the evaluated one; detections decode from its
  consensus confidence map in its true frame, then move to world space;
* the truth set is every object at least one participating agent can see
  (objects hidden from everyone are not scored), unless a sweep pins an
  explicit truth set to keep its rows comparable;
* bandwidth is reported as total payload bytes, as a log2 volume, and as a
  percent reduction against broadcasting one dense float32 feature map per
  agent pair.

All outputs are deterministic: no timestamps, fixed float formatting, and
every random draw descends from the scene seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .detect import Detection, average_precision, decode_detections, recall_at
from .exchange import (
    ExchangeResult,
    ProtocolParams,
    comm_volume,
    dense_map_log2,
    reduction_vs,
    run_exchange,
)
from .fusion import CompressionStrategy
from .grids import GridShape
from .scene import (
    Box3D,
    NoiseSpec,
    Scene,
    SceneParams,
    generate_scene,
    perturb_pose,
    visible_boxes,
)
from .weights import WeightSet, default_weights

DEFAULT_SHAPE = GridShape(64, 64, 8, 16, cell_size_m=0.5, z_size_m=0.5)
AP_THRESHOLDS = (0.3, 0.5, 0.7)
_NOISE_SALT = 101


def default_protocol(**overrides) -> ProtocolParams:
    """Protocol parameters used by the stock experiments (64 m yard grid)."""
    base = ProtocolParams(shape=DEFAULT_SHAPE)
    return replace(base, **overrides) if overrides else base


def apply_noise(scene: Scene, noise: NoiseSpec) -> Scene:
    """Corrupt every agent's reported pose; draw seeds derive from the scene.

    The underlying standard-normal draws depend only on (scene seed, agent
    id), so raising sigma scales each agent's offset along a fixed direction
    — error grows monotonically with sigma, which keeps noise sweeps clean.
    """
    if noise.pos_sigma_m == 0.0 and noise.rot_sigma_deg == 0.0:
        return scene
    reported = {}
    for agent in scene.agents:
        seed = int(np.random.SeedSequence(
            [scene.seed, _NOISE_SALT, agent.agent_id]).generate_state(1)[0])
        reported[agent.agent_id] = perturb_pose(agent.pose, noise, seed)
    return scene.with_reported_poses(reported)


def evaluation_truths(scene: Scene) -> list[Box3D]:
    """Objects visible to at least one agent, in scene index order."""
    seen: set[int] = set()
    for i in range(len(scene.agents)):
        seen.update(visible_boxes(scene, i))
    return [scene.boxes[i] for i in sorted(seen)]


@dataclass(frozen=True)
class RunMetrics:
    """One table row: configuration knobs plus detection and byte metrics."""

    label: str
    n_agents: int
    strategy: str
    k_ic: int
    k_ir: str
    noise_pos: float
    noise_rot: float
    budget: int | None
    total_bytes: int
    comm_log2: float | None
    per_link_log2: float | None
    reduction_pct: float | None
    n_truths: int
    n_detections: int
    recall_03: float
    ap_03: float
    ap_05: float
    ap_07: float


def _score(scene: Scene, result: ExchangeResult, threshold: float,
           truths: Sequence[Box3D]) -> tuple[list[Detection], dict[float, float], float]:
    ego = scene.agents[0]
    detections = decode_detections(result.consensus[ego.agent_id], ego.pose,
                                   threshold=threshold)
    aps = {t: average_precision(detections, truths, t) for t in AP_THRESHOLDS}
    rec = recall_at(detections, truths, 0.3)
    return detections, aps, rec


def _bandwidth_fields(scene: Scene, result: ExchangeResult,
                      shape: GridShape) -> tuple[int, float | None, float | None, float | None]:
    total = result.ledger.total_bytes
    log2_total = comm_volume(total) if total else None
    n = len(scene.agents)
    links = n * (n - 1)
    if total and links:
        per_link = comm_volume(max(1, total // links))
        red = reduction_vs(per_link, dense_map_log2(
            shape.h_cells, shape.w_cells, shape.channels))
    else:
        per_link = None
        red = None
    return total, log2_total, per_link, red


def run_on_scene(scene: Scene, protocol: ProtocolParams, ws: WeightSet,
                 noise: NoiseSpec = NoiseSpec(), threshold: float = 0.6,
                 label: str = "run",
                 truths: Sequence[Box3D] | None = None) -> tuple[RunMetrics, ExchangeResult]:
    """Run one collaboration step on a prepared scene and score the first agent."""
    noisy = apply_noise(scene, noise)
    result = run_exchange(noisy, protocol, ws)
    if truths is None:
        truths = evaluation_truths(scene)
    detections, aps, rec = _score(scene, result, threshold, truths)
    total, log2_total, per_link, red = _bandwidth_fields(scene, result, protocol.shape)
    metrics = RunMetrics(
        label=label,
        n_agents=len(scene.agents),
        strategy=protocol.strategy.name,
        k_ic=protocol.k_ic,
        k_ir="/".join(str(k) for k in protocol.k_ir),
        noise_pos=noise.pos_sigma_m,
        noise_rot=noise.rot_sigma_deg,
        budget=protocol.budget_bytes,
        total_bytes=total,
        comm_log2=log2_total,
        per_link_log2=per_link,
        reduction_pct=red,
        n_truths=len(truths),
        n_detections=len(detections),
        recall_03=rec,
        ap_03=aps[0.3],
        ap_05=aps[0.5],
        ap_07=aps[0.7],
    )
    return metrics, result


def run_single(scene_params: SceneParams, protocol: ProtocolParams,
               ws: WeightSet | None = None, noise: NoiseSpec = NoiseSpec(),
               threshold: float = 0.6, label: str = "run",
               ) -> tuple[RunMetrics, ExchangeResult, Scene]:
    """Generate a scene from parameters and run one scored collaboration step."""
    if ws is None:
        ws = default_weights(protocol.shape.channels, protocol.mlp_depth)
    scene = generate_scene(scene_params)
    metrics, result = run_on_scene(scene, protocol, ws, noise, threshold, label)
    return metrics, result, scene


def run_solo(scene: Scene, agent_index: int, protocol: ProtocolParams,
             ws: WeightSet, threshold: float = 0.6,
             truths: Sequence[Box3D] | None = None) -> tuple[RunMetrics, ExchangeResult]:
    """Non-collaborative reference: the agent alone in the same scene.

    Implemented as a one-agent exchange, so it follows the identical code
    path a zero byte budget forces — the two are comparable bit for bit.
    """
    solo = replace(scene, agents=(scene.agents[agent_index],))
    return run_on_scene(solo, protocol, ws, NoiseSpec(), threshold,
                        label=f"solo{scene.agents[agent_index].agent_id}",
                        truths=truths)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def sweep_agents(scene_params: SceneParams, protocol: ProtocolParams,
                 ws: WeightSet, counts: Sequence[int] = (1, 2, 3, 4),
                 threshold: float = 0.6) -> list[RunMetrics]:
    """Vary the number of participants with everything else frozen.

    The scene generates once with the maximum count, sub-runs keep its first
    k agents, and the truth set stays pinned to the full-scene union — so
    rows measure exactly what extra collaborators buy.
    """
    counts = sorted(counts)
    full_params = replace(scene_params, n_agents=max(counts))
    scene = generate_scene(full_params)
    truths = evaluation_truths(scene)
    rows = []
    for count in counts:
        sub = replace(scene, agents=scene.agents[:count])
        metrics, _ = run_on_scene(sub, protocol, ws, threshold=threshold,
                                  label=f"agents={count}", truths=truths)
        rows.append(metrics)
    return rows


def sweep_noise(scene_params: SceneParams, protocol: ProtocolParams,
                ws: WeightSet,
                sigmas: Sequence[tuple[float, float]] = (
                    (0.0, 0.0), (0.2, 0.2), (0.4, 0.4), (0.6, 0.6)),
                seeds: Sequence[int] = (0, 1, 2),
                threshold: float = 0.6) -> list[RunMetrics]:
    """Localization-noise sweep; detection numbers average over scene seeds."""
    rows = []
    for pos, rot in sigmas:
        noise = NoiseSpec(pos, rot)
        acc: list[RunMetrics] = []
        for seed in seeds:
            metrics, _, _ = run_single(
                replace(scene_params, seed=seed), protocol, ws, noise,
                threshold, label=f"noise={pos:g}/{rot:g}")
            acc.append(metrics)
        first = acc[0]
        rows.append(replace(
            first,
            recall_03=float(np.mean([m.recall_03 for m in acc])),
            ap_03=float(np.mean([m.ap_03 for m in acc])),
            ap_05=float(np.mean([m.ap_05 for m in acc])),
            ap_07=float(np.mean([m.ap_07 for m in acc])),
            n_truths=sum(m.n_truths for m in acc),
            n_detections=sum(m.n_detections for m in acc),
        ))
    return rows


def sweep_completion_k(scene_params: SceneParams, protocol: ProtocolParams,
                       ws: WeightSet, ks: Sequence[int] = (10, 15, 20, 25, 30),
                       threshold: float = 0.6) -> list[RunMetrics]:
    """Vary how many cells each agent may query per peer and scale."""
    rows = []
    for k in ks:
        metrics, _, _ = run_single(scene_params, replace(protocol, k_ic=k), ws,
                                   threshold=threshold, label=f"k_ic={k}")
        rows.append(metrics)
    return rows


def sweep_refinement_k(scene_params: SceneParams, protocol: ProtocolParams,
                       ws: WeightSet,
                       schedules: Sequence[tuple[int, ...]] = (
                           (200, 100, 50), (150, 100, 50), (100, 50, 25),
                           (100, 100, 100), (50, 50, 50)),
                       threshold: float = 0.6) -> list[RunMetrics]:
    """Vary the per-scale instance budget used for refinement broadcasts."""
    rows = []
    for schedule in schedules:
        label = "k_ir=" + "/".join(str(k) for k in schedule)
        metrics, _, _ = run_single(
            scene_params, replace(protocol, k_ir=tuple(schedule)), ws,
            threshold=threshold, label=label)
        rows.append(metrics)
    return rows


def sweep_strategy(scene_params: SceneParams, protocol: ProtocolParams,
                   ws: WeightSet,
                   names: Sequence[str] = ("m1", "m2", "m3", "off"),
                   threshold: float = 0.6) -> list[RunMetrics]:
    """Compare voxel-prior compression presets byte for byte."""
    rows = []
    for name in names:
        strat = CompressionStrategy.from_name(name)
        metrics, _, _ = run_single(scene_params, replace(protocol, strategy=strat),
                                   ws, threshold=threshold, label=f"strategy={name}")
        rows.append(metrics)
    return rows


def sweep_budget(scene_params: SceneParams, protocol: ProtocolParams,
                 ws: WeightSet,
                 budgets: Sequence[int | None] = (None, 500_000, 100_000, 10_000, 0),
                 threshold: float = 0.6) -> list[RunMetrics]:
    """Tighten the byte budget and watch the protocol shed load."""
    rows = []
    for budget in budgets:
        label = "budget=" + ("none" if budget is None else str(budget))
        metrics, _, _ = run_single(
            scene_params, replace(protocol, budget_bytes=budget), ws,
            threshold=threshold, label=label)
        rows.append(metrics)
    return rows


# ---------------------------------------------------------------------------
# Report writers
# ---------------------------------------------------------------------------

_FIELDS = [
    ("label", "{}"),
    ("n_agents", "{}"),
    ("strategy", "{}"),
    ("k_ic", "{}"),
    ("k_ir", "{}"),
    ("noise_pos", "{:.2f}"),
    ("noise_rot", "{:.2f}"),
    ("budget", "{}"),
    ("total_bytes", "{}"),
    ("comm_log2", "{:.2f}"),
    ("per_link_log2", "{:.2f}"),
    ("reduction_pct", "{:.2f}"),
    ("n_truths", "{}"),
    ("n_detections", "{}"),
    ("recall_03", "{:.4f}"),
    ("ap_03", "{:.4f}"),
    ("ap_05", "{:.4f}"),
    ("ap_07", "{:.4f}"),
]


def _cell(row: RunMetrics, name: str, fmt: str) -> str:
    value = getattr(row, name)
    if value is None:
        return "n/a"
    return fmt.format(value)


def metrics_table(rows: Sequence[RunMetrics]) -> str:
    """Fixed-width text table; identical inputs produce identical bytes."""
    header = [name for name, _ in _FIELDS]
    grid = [[_cell(r, name, fmt) for name, fmt in _FIELDS] for r in rows]
    widths = [max(len(h), *(len(g[i]) for g in grid)) if grid else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for g in grid:
        lines.append("  ".join(c.ljust(w) for c, w in zip(g, widths)).rstrip())
    return "\n".join(lines) + "\n"


def metrics_csv(rows: Sequence[RunMetrics]) -> str:
    """CSV rendering with the same fields and formatting as the text table."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([name for name, _ in _FIELDS])
    for r in rows:
        writer.writerow([_cell(r, name, fmt) for name, fmt in _FIELDS])
    return buf.getvalue()


def write_report(rows: Sequence[RunMetrics], text_path=None, csv_path=None) -> None:
    if text_path is not None:
        with open(text_path, "w") as fh:
            fh.write(metrics_table(rows))
    if csv_path is not None:
        with open(csv_path, "w") as fh:
            fh.write(metrics_csv(rows))
