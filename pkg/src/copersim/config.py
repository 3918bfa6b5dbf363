"""Run configuration files: a small YAML schema with eager validation.

A config file holds up to five top-level sections — ``label``, ``scene``,
``protocol``, ``noise``, ``threshold`` — each optional, each falling back
to the package defaults. Validation is fail-fast and always names the
offending field, e.g. ``config field 'protocol.k_ir': expected a list of
non-negative integers``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import yaml

from .errors import ConfigError, ParameterError
from .exchange import ProtocolParams
from .experiments import DEFAULT_SHAPE
from .fusion import CompressionStrategy
from .grids import GridShape
from .scene import NoiseSpec, SceneParams

_MISSING = object()


@dataclass(frozen=True)
class RunConfig:
    label: str = "run"
    scene: SceneParams = SceneParams()
    protocol: ProtocolParams = ProtocolParams(shape=DEFAULT_SHAPE)
    noise: NoiseSpec = NoiseSpec()
    threshold: float = 0.6


def _want(value, types, path: str, what: str):
    if not isinstance(value, types) or isinstance(value, bool):
        raise ConfigError(path, f"expected {what}")
    return value


def _get(section: dict, key: str, path: str, types, what: str, default=_MISSING):
    if key not in section:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}", "is required")
        return default
    return _want(section[key], types, f"{path}.{key}", what)


def _parse_scene(raw: dict) -> SceneParams:
    base = SceneParams()
    extent = raw.get("extent_m", list(base.extent_m))
    if (not isinstance(extent, (list, tuple)) or len(extent) != 2
            or not all(isinstance(v, (int, float)) for v in extent)):
        raise ConfigError("scene.extent_m", "expected a pair of meters")
    box = raw.get("box_size_m", list(base.box_size_m))
    if (not isinstance(box, (list, tuple)) or len(box) != 3
            or not all(isinstance(v, (int, float)) for v in box)):
        raise ConfigError("scene.box_size_m", "expected [length, width, height]")
    known = {"n_agents", "n_objects", "n_walls", "occluded_count", "seed",
             "extent_m", "min_spacing_m", "yaw_range_deg", "agent_yaw_range_deg",
             "box_size_m", "wall_height_m", "sensor_range_m", "n_classes"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"scene.{key}", "unknown field")
    return SceneParams(
        n_agents=_get(raw, "n_agents", "scene", int, "an integer", base.n_agents),
        n_objects=_get(raw, "n_objects", "scene", int, "an integer", base.n_objects),
        n_walls=_get(raw, "n_walls", "scene", int, "an integer", base.n_walls),
        occluded_count=_get(raw, "occluded_count", "scene", int, "an integer",
                            base.occluded_count),
        seed=_get(raw, "seed", "scene", int, "an integer", base.seed),
        extent_m=(float(extent[0]), float(extent[1])),
        min_spacing_m=float(_get(raw, "min_spacing_m", "scene", (int, float),
                                 "a number", base.min_spacing_m)),
        yaw_range_deg=float(_get(raw, "yaw_range_deg", "scene", (int, float),
                                 "a number", base.yaw_range_deg)),
        agent_yaw_range_deg=float(_get(raw, "agent_yaw_range_deg", "scene",
                                       (int, float), "a number",
                                       base.agent_yaw_range_deg)),
        box_size_m=(float(box[0]), float(box[1]), float(box[2])),
        wall_height_m=float(_get(raw, "wall_height_m", "scene", (int, float),
                                 "a number", base.wall_height_m)),
        sensor_range_m=float(_get(raw, "sensor_range_m", "scene", (int, float),
                                  "a number", base.sensor_range_m)),
        n_classes=_get(raw, "n_classes", "scene", int, "an integer", base.n_classes),
    )


def _parse_grid(raw: dict) -> GridShape:
    known = {"h", "w", "l", "channels", "cell_m", "z_m"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"protocol.grid.{key}", "unknown field")
    d = DEFAULT_SHAPE
    try:
        return GridShape(
            h_cells=_get(raw, "h", "protocol.grid", int, "an integer", d.h_cells),
            w_cells=_get(raw, "w", "protocol.grid", int, "an integer", d.w_cells),
            l_bins=_get(raw, "l", "protocol.grid", int, "an integer", d.l_bins),
            channels=_get(raw, "channels", "protocol.grid", int, "an integer",
                          d.channels),
            cell_size_m=float(_get(raw, "cell_m", "protocol.grid", (int, float),
                                   "a number", d.cell_size_m)),
            z_size_m=float(_get(raw, "z_m", "protocol.grid", (int, float),
                                "a number", d.z_size_m)),
        )
    except ValueError as err:
        raise ConfigError("protocol.grid", str(err)) from None


def _parse_protocol(raw: dict) -> ProtocolParams:
    known = {"grid", "strategy", "k_ic", "k_ir", "budget_bytes", "heatmap",
             "camera_fov_deg", "mlp_depth", "window"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"protocol.{key}", "unknown field")
    base = ProtocolParams(shape=DEFAULT_SHAPE)
    shape = _parse_grid(_want(raw.get("grid", {}), dict, "protocol.grid", "a mapping"))
    strategy_name = _get(raw, "strategy", "protocol", str, "a string",
                         base.strategy.name)
    try:
        strategy = CompressionStrategy.from_name(strategy_name)
    except ParameterError as err:
        raise ConfigError("protocol.strategy", str(err)) from None
    k_ir_raw = raw.get("k_ir", list(base.k_ir))
    if (not isinstance(k_ir_raw, (list, tuple)) or not k_ir_raw
            or not all(isinstance(k, int) and not isinstance(k, bool) and k >= 0
                       for k in k_ir_raw)):
        raise ConfigError("protocol.k_ir", "expected a list of non-negative integers")
    budget = raw.get("budget_bytes", base.budget_bytes)
    if budget is not None:
        budget = _want(budget, int, "protocol.budget_bytes", "an integer or null")
        if budget < 0:
            raise ConfigError("protocol.budget_bytes", "must be non-negative")
    heatmap = _get(raw, "heatmap", "protocol", str, "a string", base.heatmap_mode)
    if heatmap not in ("proxy", "conv", "ideal"):
        raise ConfigError("protocol.heatmap", "must be proxy, conv, or ideal")
    try:
        return ProtocolParams(
            shape=shape,
            strategy=strategy,
            k_ic=_get(raw, "k_ic", "protocol", int, "an integer", base.k_ic),
            k_ir=tuple(k_ir_raw),
            scales=len(k_ir_raw),
            budget_bytes=budget,
            heatmap_mode=heatmap,
            camera_fov_deg=float(_get(raw, "camera_fov_deg", "protocol",
                                      (int, float), "a number",
                                      base.camera_fov_deg)),
            mlp_depth=_get(raw, "mlp_depth", "protocol", int, "an integer",
                           base.mlp_depth),
            window=_get(raw, "window", "protocol", int, "an integer", base.window),
        )
    except ParameterError as err:
        raise ConfigError("protocol", str(err)) from None


def config_from_dict(data: dict) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    known = {"label", "scene", "protocol", "noise", "threshold"}
    for key in data:
        if key not in known:
            raise ConfigError(str(key), "unknown top-level field")
    noise_raw = _want(data.get("noise", {}), dict, "noise", "a mapping")
    for key in noise_raw:
        if key not in ("pos_m", "rot_deg"):
            raise ConfigError(f"noise.{key}", "unknown field")
    try:
        noise = NoiseSpec(
            pos_sigma_m=float(_get(noise_raw, "pos_m", "noise", (int, float),
                                   "a number", 0.0)),
            rot_sigma_deg=float(_get(noise_raw, "rot_deg", "noise", (int, float),
                                     "a number", 0.0)),
        )
    except ParameterError as err:
        raise ConfigError("noise", str(err)) from None
    threshold = float(_get(data, "threshold", "config", (int, float), "a number", 0.6))
    if not 0.0 < threshold <= 1.0:
        raise ConfigError("threshold", "must be in (0, 1]")
    try:
        scene = _parse_scene(_want(data.get("scene", {}), dict, "scene", "a mapping"))
    except ParameterError as err:
        raise ConfigError("scene", str(err)) from None
    return RunConfig(
        label=str(_get(data, "label", "config", str, "a string", "run")),
        scene=scene,
        protocol=_parse_protocol(_want(data.get("protocol", {}), dict,
                                       "protocol", "a mapping")),
        noise=noise,
        threshold=threshold,
    )


def load_config(path) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError("config", f"not valid YAML: {err}") from None
    return config_from_dict(data)


def override_config(cfg: RunConfig, **changes) -> RunConfig:
    """Apply command-line style overrides onto a parsed configuration.

    Recognized keys: agents, objects, walls, occluded, seed, strategy, k_ic,
    budget, heatmap, noise_pos, noise_rot, threshold, label. ``None`` values
    are ignored so callers can pass optional flags straight through.
    """
    scene = cfg.scene
    protocol = cfg.protocol
    noise = cfg.noise
    threshold = cfg.threshold
    label = cfg.label
    for key, value in changes.items():
        if value is None:
            continue
        if key == "agents":
            scene = replace(scene, n_agents=int(value))
        elif key == "objects":
            scene = replace(scene, n_objects=int(value))
        elif key == "walls":
            scene = replace(scene, n_walls=int(value))
        elif key == "occluded":
            scene = replace(scene, occluded_count=int(value))
        elif key == "seed":
            scene = replace(scene, seed=int(value))
        elif key == "strategy":
            protocol = replace(protocol, strategy=CompressionStrategy.from_name(value))
        elif key == "k_ic":
            protocol = replace(protocol, k_ic=int(value))
        elif key == "budget":
            protocol = replace(protocol, budget_bytes=int(value))
        elif key == "heatmap":
            if value not in ("proxy", "conv", "ideal"):
                raise ConfigError("heatmap", "must be proxy, conv, or ideal")
            protocol = replace(protocol, heatmap_mode=value)
        elif key == "noise_pos":
            noise = replace(noise, pos_sigma_m=float(value))
        elif key == "noise_rot":
            noise = replace(noise, rot_sigma_deg=float(value))
        elif key == "threshold":
            threshold = float(value)
        elif key == "label":
            label = str(value)
        else:
            raise ConfigError(str(key), "unknown override")
    return RunConfig(label=label, scene=scene, protocol=protocol,
                     noise=noise, threshold=threshold)
