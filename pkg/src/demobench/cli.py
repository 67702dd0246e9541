"""Command-line entry point: serve, experiment, learn, eval, plan, field.

Exit codes: 0 ok, 2 bad configuration or missing files, 3 network problems,
4 data problems (e.g. not enough traces), 5 internal errors.
"""
from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import time

import numpy as np

from . import __version__
from .errors import (
    DemobenchError,
    InsufficientTraces,
    IoError,
    NotConnected,
    PortInUse,
    SchemaViolation,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NETWORK = 3
EXIT_DATA = 4
EXIT_INTERNAL = 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_bench(scene_path):
    from .scene import load_scene_and_model

    if not os.path.isfile(scene_path):
        raise CliError(f"scene file not found: {scene_path}", EXIT_CONFIG)
    try:
        return load_scene_and_model(scene_path)
    except FileNotFoundError as exc:
        raise CliError(f"missing robot file: {exc}", EXIT_CONFIG) from exc
    except (SchemaViolation, IoError, DemobenchError) as exc:
        raise CliError(f"cannot load scene: {exc}", EXIT_CONFIG) from exc


def _default_scene() -> str:
    from .scene import builtin_scene_path

    return builtin_scene_path("bench_ur5e")


def cmd_serve(args) -> int:
    from . import bus as busmod
    from .scene import sample_point_cloud, scene_to_json

    scene, model = _load_bench(args.scene)
    urdf_path = args.urdf or scene.robot_urdf
    if not os.path.isfile(urdf_path):
        raise CliError(f"URDF not found: {urdf_path}", EXIT_CONFIG)
    with open(urdf_path, "r", encoding="utf-8") as fh:
        urdf_text = fh.read()

    hub = busmod.Hub(port=args.port, ws_port=args.ws_port,
                     static_dir=args.static_dir,
                     playback_duration=args.playback_duration)
    try:
        hub.start()
    except PortInUse as exc:
        raise CliError(str(exc), EXIT_NETWORK) from exc

    hub.publish(busmod.TOPIC_ROBOT_DESCRIPTION,
                {"urdf": urdf_text, "scene": scene_to_json(scene)})
    try:
        cloud = sample_point_cloud(scene, args.cloud_points, args.seed)
        hub.publish(busmod.TOPIC_POINT_CLOUD, {
            "points": [[float(v) for v in p] for p in cloud.points],
            "seed": args.seed,
            "scene_id": scene.scene_id,
        })
    except DemobenchError:
        pass  # scenes without obstacles still serve
    busmod.RecorderService(hub, model, scene.scene_id)

    print(f"hub listening on tcp 127.0.0.1:{hub.port}"
          + (f", ws 127.0.0.1:{hub.ws_port}" if hub.ws_port else ""))
    if args.static_dir:
        print(f"ui assets from {args.static_dir} at http://127.0.0.1:{hub.ws_port}/")
    sys.stdout.flush()

    stop = []
    signal.signal(signal.SIGINT, lambda *_: stop.append(True))
    signal.signal(signal.SIGTERM, lambda *_: stop.append(True))
    try:
        while not stop:
            time.sleep(0.1)
    finally:
        hub.stop()
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .harness import ExperimentSpec, OracleParams, run_experiment

    scene, model = _load_bench(args.scene)
    spec = ExperimentSpec(
        feature=args.feature,
        trace_pool_size=args.pool,
        traces_per_trial=args.per_trial,
        trials=args.trials,
        eval_samples=args.samples,
        seed=args.seed,
        traces_dir=args.traces_dir,
        oracle=OracleParams(direction_noise_deg=args.oracle_noise),
    )
    try:
        result = run_experiment(
            spec, model, scene,
            progress=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    except InsufficientTraces as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    print(f"{args.feature}: mean MSE {result.mean:.6f} +- {result.std:.6f} "
          f"over {spec.trials} trials")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result.to_json(), fh, sort_keys=True, indent=2)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_learn(args) -> int:
    from .harness import experiment_train_params, load_trace_dir
    from .learning import train_feature

    scene, model = _load_bench(args.scene)
    try:
        traces = load_trace_dir(args.traces_dir, 1)
    except InsufficientTraces as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    params = experiment_train_params(len(traces), args.seed)
    if args.epochs:
        from dataclasses import replace

        params = replace(params, epochs=args.epochs)
    net = train_feature(traces, model, scene, params)
    net.save(args.out)
    print(f"trained on {len(traces)} traces -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness import evaluate_mse
    from .learning import FeatureNetwork

    scene, model = _load_bench(args.scene)
    if not os.path.isfile(args.model_file):
        raise CliError(f"model file not found: {args.model_file}", EXIT_CONFIG)
    net = FeatureNetwork.load(args.model_file)
    mse = evaluate_mse(net, args.feature, model, scene, args.samples, args.seed)
    print(f"normalized MSE vs {args.feature}: {mse:.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"feature": args.feature, "mse": mse,
                       "samples": args.samples, "seed": args.seed},
                      fh, sort_keys=True, indent=2)
    return EXIT_OK


def cmd_plan(args) -> int:
    from .capture import TrajectoryQuery
    from .errors import InvalidQuery
    from .learning import (FeatureNetwork, PlanParams, RewardModel,
                           analytic_feature, plan_trajectory)

    scene, model = _load_bench(args.scene)
    features = []
    weights = []
    for spec in args.feature or []:
        name, _, weight = spec.partition("=")
        weight = float(weight) if weight else -1.0
        if name.endswith(".json"):
            features.append(FeatureNetwork.load(name))
        else:
            features.append(analytic_feature(name, model, scene))
        weights.append(weight)
    reward = RewardModel(tuple(features), np.array(weights))

    q_start = np.array(json.loads(args.start))
    q_goal = np.array(json.loads(args.goal))
    try:
        trajectory = plan_trajectory(
            model, scene, reward, TrajectoryQuery(q_start, q_goal),
            PlanParams(n_waypoints=args.waypoints, iterations=args.iterations))
    except InvalidQuery as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    payload = {"waypoints": [
        {"q": [float(v) for v in q], "t": float(t)}
        for q, t in zip(trajectory.qs, trajectory.ts)
    ]}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_field(args) -> int:
    from .harness import emit_feature_field
    from .learning import FeatureNetwork

    scene, model = _load_bench(args.scene)
    source = args.source
    if source.endswith(".json") and os.path.isfile(source):
        source = FeatureNetwork.load(source)
    grid = {
        "min": json.loads(args.grid_min),
        "max": json.loads(args.grid_max),
        "counts": json.loads(args.grid_counts),
    }
    n = emit_feature_field(source, model, scene, grid, args.out)
    print(f"wrote {args.out} ({n} reachable cells)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demobench",
        description="Virtual-robot demonstration capture and reward learning")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the pub/sub hub with recorder and player")
    p.add_argument("--scene", default=_default_scene())
    p.add_argument("--urdf", default=None, help="override the scene's URDF")
    p.add_argument("--port", type=int, default=9870)
    p.add_argument("--ws-port", type=int, default=9871)
    p.add_argument("--static-dir", default=None)
    p.add_argument("--cloud-points", type=int, default=2048)
    p.add_argument("--playback-duration", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("experiment", help="run the trial protocol for one feature")
    p.add_argument("--feature", choices=("table", "laptop", "proxemics"),
                   required=True)
    p.add_argument("--scene", default=_default_scene())
    p.add_argument("--traces-dir", default=None,
                   help="use recorded traces instead of the synthetic demonstrator")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--per-trial", type=int, default=10)
    p.add_argument("--pool", type=int, default=20)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--oracle-noise", type=float, default=40.0,
                   help="demonstrator direction noise, degrees")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("learn", help="train a feature network from a trace directory")
    p.add_argument("--traces-dir", required=True)
    p.add_argument("--scene", default=_default_scene())
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("eval", help="score a trained network against a ground truth")
    p.add_argument("--model-file", required=True)
    p.add_argument("--feature", choices=("table", "laptop", "proxemics"),
                   required=True)
    p.add_argument("--scene", default=_default_scene())
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plan", help="plan a reward-optimal trajectory")
    p.add_argument("--scene", default=_default_scene())
    p.add_argument("--feature", action="append", default=None,
                   help="NAME=WEIGHT (analytic) or NET.json=WEIGHT; repeatable")
    p.add_argument("--start", required=True, help="JSON array of joint values")
    p.add_argument("--goal", required=True, help="JSON array of joint values")
    p.add_argument("--waypoints", type=int, default=21)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("field", help="export a feature field as CSV")
    p.add_argument("--source", required=True,
                   help="table|laptop|proxemics or a trained NET.json")
    p.add_argument("--scene", default=_default_scene())
    p.add_argument("--grid-min", required=True, help="JSON [x,y,z]")
    p.add_argument("--grid-max", required=True, help="JSON [x,y,z]")
    p.add_argument("--grid-counts", required=True, help="JSON [nx,ny,nz]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_field)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (PortInUse, NotConnected) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except (InsufficientTraces, SchemaViolation, IoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DemobenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
