"""Command-line interface.

Four subcommands::

    copersim run        one scenario end to end, metrics table to stdout
    copersim sweep      parameter sweeps (agents, noise, completion, ...)
    copersim bandwidth  log2 communication-volume arithmetic
    copersim selftest   quick end-to-end sanity checks

Exit codes: 0 on success, 1 on a runtime failure (e.g. scene generation
gave up), 2 on bad usage or an invalid configuration. When the
``COPERSIM_OUT`` environment variable is set it provides the default
output directory for report files; an explicit ``--out`` wins.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import RunConfig, load_config, override_config
from .errors import ConfigError, GenerationError, ParameterError
from .exchange import comm_volume, dense_map_log2, reduction_vs
from .experiments import (
    default_protocol,
    metrics_table,
    run_single,
    sweep_agents,
    sweep_budget,
    sweep_completion_k,
    sweep_noise,
    sweep_refinement_k,
    sweep_strategy,
    write_report,
)
from .scene import SceneParams
from .weights import default_weights

_SWEEP_AXES = ("agents", "noise", "completion", "refinement", "strategy", "budget")


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--agents", type=int, help="number of agents")
    p.add_argument("--objects", type=int, help="number of objects")
    p.add_argument("--walls", type=int, help="number of walls")
    p.add_argument("--occluded", type=int,
                   help="objects hidden from the ego agent")
    p.add_argument("--seed", type=int, help="scenario seed")
    p.add_argument("--strategy", choices=("m1", "m2", "m3", "off"),
                   help="voxel compression strategy")
    p.add_argument("--k-ic", dest="k_ic", type=int,
                   help="completion queries per sender and scale")
    p.add_argument("--budget", type=int, help="per-step byte budget")
    p.add_argument("--heatmap", choices=("proxy", "conv", "ideal"),
                   help="heatmap head mode")
    p.add_argument("--noise-pos", dest="noise_pos", type=float,
                   help="pose position noise sigma, meters")
    p.add_argument("--noise-rot", dest="noise_rot", type=float,
                   help="pose yaw noise sigma, degrees")
    p.add_argument("--threshold", type=float, help="detection threshold")
    p.add_argument("--label", help="row label for reports")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copersim",
        description="Multi-agent collaborative perception simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and print metrics")
    p_run.add_argument("--config", help="YAML run configuration file")
    p_run.add_argument("--out", help="directory for report files")
    p_run.add_argument("--ledger", action="store_true",
                       help="also print the per-message byte ledger")
    _add_override_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    p_sweep.add_argument("axis", nargs="?", choices=_SWEEP_AXES + ("all",),
                         help="sweep axis; defaults to 'noise' when --noise is given")
    p_sweep.add_argument("--noise", help="comma-separated sigmas, e.g. 0,0.2,0.4,0.6")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--agents", type=int, default=3,
                         help="agent count for non-agent sweeps")
    p_sweep.add_argument("--max-agents", type=int, default=4,
                         help="largest count for the agents sweep")
    p_sweep.add_argument("--occluded", type=int, default=1,
                         help="objects hidden from the ego agent")
    p_sweep.add_argument("--heatmap", choices=("proxy", "conv", "ideal"),
                         default="ideal")
    p_sweep.add_argument("--out", help="directory for report files")
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel sweep axes when axis=all")

    p_bw = sub.add_parser("bandwidth", help="communication volume arithmetic")
    p_bw.add_argument("--config", help="price a run config's messages, no simulation")
    p_bw.add_argument("--h", type=int, help="map height in cells")
    p_bw.add_argument("--w", type=int, help="map width in cells")
    p_bw.add_argument("--c", type=int, help="map channels")
    p_bw.add_argument("--dense", action="store_true",
                      help="log2 volume of a dense float32 map")
    p_bw.add_argument("--bytes", type=int, dest="n_bytes",
                      help="log2 volume of a raw byte count")
    p_bw.add_argument("--ours", type=float, help="our log2 volume")
    p_bw.add_argument("--baseline", type=float, help="baseline log2 volume")

    sub.add_parser("selftest", help="run built-in sanity checks")
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return override_config(
        cfg,
        agents=args.agents, objects=args.objects, walls=args.walls,
        occluded=args.occluded, seed=args.seed, strategy=args.strategy,
        k_ic=args.k_ic, budget=args.budget, heatmap=args.heatmap,
        noise_pos=args.noise_pos, noise_rot=args.noise_rot,
        threshold=args.threshold, label=args.label,
    )


def _out_dir(args) -> str | None:
    return args.out or os.environ.get("COPERSIM_OUT") or None


def _write(rows, out_dir: str, stem: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    text_path = os.path.join(out_dir, stem + ".txt")
    csv_path = os.path.join(out_dir, stem + ".csv")
    write_report(rows, text_path, csv_path)
    print(f"wrote {text_path}")
    print(f"wrote {csv_path}")


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    metrics, result, _ = run_single(cfg.scene, cfg.protocol, noise=cfg.noise,
                                    threshold=cfg.threshold, label=cfg.label)
    sys.stdout.write(metrics_table([metrics]))
    if args.ledger:
        sys.stdout.write(result.ledger.table())
    out = _out_dir(args)
    if out:
        _write([metrics], out, cfg.label)
    return 0


def _parse_sigmas(text: str) -> tuple[tuple[float, float], ...]:
    try:
        values = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError("noise", f"not a comma-separated number list: {text!r}")
    if not values or any(v < 0 for v in values):
        raise ConfigError("noise", "sigmas must be non-negative numbers")
    return tuple((v, v) for v in values)


def _sweep_rows(axis: str, args):
    # Keep the yard inside every agent's +-16 m map so peers can always
    # report what they see; a 32 m yard would let a far witness see an
    # object that is off its own grid.
    scene_params = SceneParams(n_agents=args.agents, n_objects=4,
                               occluded_count=args.occluded, seed=args.seed,
                               extent_m=(16.0, 16.0), min_spacing_m=4.0)
    protocol = default_protocol(heatmap_mode=args.heatmap)
    ws = default_weights(protocol.shape.channels, protocol.mlp_depth)
    if axis == "agents":
        counts = tuple(range(1, max(2, args.max_agents) + 1))
        return sweep_agents(scene_params, protocol, ws, counts=counts)
    if axis == "noise":
        if args.noise:
            return sweep_noise(scene_params, protocol, ws,
                               sigmas=_parse_sigmas(args.noise))
        return sweep_noise(scene_params, protocol, ws)
    if axis == "completion":
        return sweep_completion_k(scene_params, protocol, ws)
    if axis == "refinement":
        return sweep_refinement_k(scene_params, protocol, ws)
    if axis == "strategy":
        return sweep_strategy(scene_params, protocol, ws)
    return sweep_budget(scene_params, protocol, ws)


def _cmd_sweep(args) -> int:
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 2
    if args.axis is None:
        if not args.noise:
            print("error: pick a sweep axis or pass --noise", file=sys.stderr)
            return 2
        args.axis = "noise"
    axes = _SWEEP_AXES if args.axis == "all" else (args.axis,)
    if len(axes) > 1 and args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(lambda ax: _sweep_rows(ax, args), axes))
    else:
        results = [_sweep_rows(ax, args) for ax in axes]
    out = _out_dir(args)
    for axis, rows in zip(axes, results):
        if len(axes) > 1:
            print(f"# sweep: {axis}")
        sys.stdout.write(metrics_table(rows))
        if out:
            _write(rows, out, f"sweep_{axis}")
    return 0


def _cmd_bandwidth(args) -> int:
    lines = []
    if args.config:
        from .exchange import nominal_byte_breakdown, plan_budget

        cfg = load_config(args.config)
        ids = tuple(range(cfg.scene.n_agents))
        plan = plan_budget(ids, cfg.protocol)
        for kind, count in nominal_byte_breakdown(ids, cfg.protocol).items():
            lines.append(f"{kind.lower():<19} {count:>12}")
        for name, count in (("nominal", plan.nominal_bytes),
                            ("planned", plan.planned_bytes)):
            vol = f"{comm_volume(count):.2f}" if count else "n/a"
            lines.append(f"{name + ' bytes':<19} {count:>12}  log2 {vol}")
    if args.dense:
        if args.h is None or args.w is None or args.c is None:
            print("error: --dense needs --h, --w and --c", file=sys.stderr)
            return 2
        lines.append(f"{dense_map_log2(args.h, args.w, args.c):.2f}")
    if args.n_bytes is not None:
        lines.append(f"{comm_volume(args.n_bytes):.2f}")
    if args.ours is not None or args.baseline is not None:
        if args.ours is None or args.baseline is None:
            print("error: --ours and --baseline go together", file=sys.stderr)
            return 2
        lines.append(f"{reduction_vs(args.ours, args.baseline):.2f}")
    if not lines:
        print("error: nothing to compute; pass --config, --dense, --bytes, "
              "or --ours/--baseline", file=sys.stderr)
        return 2
    print("\n".join(lines))
    return 0


def _cmd_selftest(args) -> int:
    from dataclasses import replace

    from .detect import decode_detections, recall_at
    from .exchange import ProtocolParams, run_exchange
    from .experiments import evaluation_truths, run_solo
    from .grids import GridShape
    from .scene import generate_scene

    # A 64-cell 0.5 m grid spans +-16 m; inside a 16 m yard every box center
    # therefore lands on every agent's map no matter where either one stands.
    shape = GridShape(64, 64, 4, 8)
    ws = default_weights(shape.channels)
    params = SceneParams(n_agents=2, n_objects=4, n_walls=1,
                         occluded_count=1, seed=3, extent_m=(16.0, 16.0),
                         min_spacing_m=4.0)
    scene = generate_scene(params)
    ego = scene.agents[0]
    checks = 0

    proto = ProtocolParams(shape=shape, k_ic=8, k_ir=(24, 12), scales=2,
                           heatmap_mode="ideal")
    result = run_exchange(scene, proto, ws)
    dets = decode_detections(result.consensus[ego.agent_id], ego.pose)
    truths = evaluation_truths(scene)
    if recall_at(dets, truths, 0.3) < 1.0:
        print("selftest FAILED: collaboration did not recover all objects",
              file=sys.stderr)
        return 1
    checks += 1

    gagged = run_exchange(scene, replace(proto, budget_bytes=0), ws)
    _, solo = run_solo(scene, 0, proto, ws)
    if not np.array_equal(gagged.consensus[ego.agent_id].data,
                          solo.consensus[ego.agent_id].data):
        print("selftest FAILED: zero budget differs from solo baseline",
              file=sys.stderr)
        return 1
    if gagged.ledger.total_bytes != 0:
        print("selftest FAILED: zero budget still moved bytes", file=sys.stderr)
        return 1
    checks += 2

    again = run_exchange(scene, proto, ws)
    for aid in result.consensus:
        if not np.array_equal(result.consensus[aid].data,
                              again.consensus[aid].data):
            print("selftest FAILED: repeated run not byte-identical",
                  file=sys.stderr)
            return 1
    checks += 1

    print(f"ok: {checks} checks passed")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "bandwidth":
            return _cmd_bandwidth(args)
        return _cmd_selftest(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (GenerationError, ParameterError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def console_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_entry()
