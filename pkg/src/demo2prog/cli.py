"""Command-line pipeline: demo -> train -> infer -> induce -> ground -> synth.

Every stage reads its inputs from and writes its outputs to one output
directory, so stages can be rerun independently.  Random streams are derived
from one global seed and the stage name (see :func:`stage_rng`).
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import zlib
from pathlib import Path

import numpy as np

from . import attribution, grounding, scenarios, smc
from .arm import (arm_from_dict, camera_from_dict, forward_kinematics, project, render,
                  scene_from_dict, scene_to_dict, write_ppm)
from .errors import (ConfigError, Demo2ProgError, InvalidArgumentError, ProgramParseError,
                     StatisticsError, UpstreamMissingError)
from .parser import induce_program
from .programs import (ControllerLibrary, ControllerParams, execute_program, expand,
                       generate_demonstration, parse_program, pretty_print)
from .storage import load_demo, save_demo
from .symbolizer import (PeakConfig, read_library_csv, read_symbols_csv, symbolize,
                         write_library_csv, write_symbols_csv)

log = logging.getLogger("demo2prog")

EXIT_OK, EXIT_CONFIG, EXIT_UPSTREAM, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "seed": 0,
    "arm": {"link_lengths": [1.0, 1.0, 1.0], "base_position": [0.0, 0.0]},
    "camera": {"pixels_per_unit": 32.0, "principal_point": [160.0, 120.0], "image_size": [320, 240]},
    "scene": None,                      # None -> the five-block reaching scene
    "program": {"patrol": {"length": scenarios.PATROL_LENGTH,
                           "order": list(scenarios.PATROL_ORDER)}},
    "library": {"gain_range": list(scenarios.DEMO_GAIN_RANGE), "ik_seed": list(scenarios.IK_SEED)},
    "demo": {"dt": 0.05, "convergence_eps": 0.01},
    "train": {"epochs": 30, "lr": 1e-2, "batch_size": 256, "hidden": [64, 32],
              "image_init_scale": 0.01},
    "smc": {},
    "peaks": {},
    "symbolizer": {"k_max": 10, "noise_floor": 0.02},
    "ground": {"patch_size": grounding.DEFAULT_PATCH, "threshold": grounding.NCC_THRESHOLD},
    "synth": {"n_scenes": 1, "scenes": None},
    "eval": {"seeds": list(range(10))},
}


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    """Generator for one pipeline stage: ``SeedSequence([seed, crc32(stage)])``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(stage.encode())]))


# ---------------------------------------------------------------- config

def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{p}: top level must be a JSON object")
    unknown = set(user) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"{p}: unknown sections {sorted(unknown)}")
    return _merge(DEFAULT_CONFIG, user)


def _build_world(cfg):
    try:
        arm = arm_from_dict(cfg["arm"])
        camera = camera_from_dict(cfg["camera"])
        scene = scenarios.reaching_scene() if cfg["scene"] is None else scene_from_dict(cfg["scene"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad arm/camera/scene section: {e}") from None
    return arm, camera, scene


def _build_program(cfg):
    spec = cfg["program"]
    if isinstance(spec, str):
        try:
            return parse_program(spec)
        except ProgramParseError as e:
            raise ConfigError(f"program, line {e.line}: {e}") from None
    if isinstance(spec, dict) and "patrol" in spec:
        p = spec["patrol"]
        return scenarios.patrol_program(int(p.get("length", scenarios.PATROL_LENGTH)),
                                        tuple(p.get("order", scenarios.PATROL_ORDER)))
    raise ConfigError("program must be DSL text or {'patrol': {...}}")


def _build_library(cfg, arm, scene, rng):
    lc = cfg["library"]
    if "controllers" in lc:
        try:
            return ControllerLibrary.from_list(
                [ControllerParams(c["goal"], c["gain"]) for c in lc["controllers"]])
        except (KeyError, TypeError) as e:
            raise ConfigError(f"bad library.controllers entry: {e}") from None
    return scenarios.library_for_scene(scene, arm, rng, tuple(lc["gain_range"]),
                                       np.asarray(lc["ik_seed"], dtype=float))


def _smc_config(cfg) -> smc.GenerativeModelConfig:
    try:
        return smc.GenerativeModelConfig(**cfg["smc"])
    except TypeError as e:
        raise ConfigError(f"smc section: {e}") from None
    except InvalidArgumentError as e:
        raise ConfigError(f"smc section: {e}") from None


def _peak_config(cfg) -> PeakConfig:
    try:
        return PeakConfig(**cfg["peaks"])
    except (TypeError, InvalidArgumentError) as e:
        raise ConfigError(f"peaks section: {e}") from None


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _need(path):
    if not Path(path).exists():
        raise UpstreamMissingError(path)
    return Path(path)


# ---------------------------------------------------------------- stages

def cmd_demo(cfg, out: Path) -> dict:
    arm, camera, scene = _build_world(cfg)
    program = _build_program(cfg)
    library = _build_library(cfg, arm, scene, stage_rng(cfg["seed"], "demo"))
    demo = generate_demonstration(program, library, arm, scene, camera,
                                  dt=cfg["demo"]["dt"], convergence_eps=cfg["demo"]["convergence_eps"])
    d = out / "demo"
    save_demo(demo, d, {"scene": scene_to_dict(scene)})
    write_library_csv(library, d / "library_true.csv")
    (d / "program.txt").write_text(pretty_print(program) + "\n")
    summary = {"steps": len(demo), "segments": len(demo.segment_starts),
               "switch_times": demo.switch_times}
    _write_json(d / "summary.json", summary)
    return summary


def _load_net(out: Path):
    return attribution.load_weights(_need(out / "train" / "weights.bin"))


def cmd_train(cfg, out: Path) -> dict:
    demo, _ = load_demo(out / "demo")
    if len(demo) == 0:
        raise InvalidArgumentError("cannot train on an empty demonstration")
    tc = cfg["train"]
    rng = stage_rng(cfg["seed"], "train")
    net = attribution.MicroNet.init(rng, hidden=tuple(tc["hidden"]),
                                    image_init_scale=tc["image_init_scale"])
    res = attribution.train(net, demo.images, demo.thetas, demo.controls, epochs=tc["epochs"],
                            lr=tc["lr"], batch_size=tc["batch_size"], rng=rng)
    d = out / "train"
    d.mkdir(parents=True, exist_ok=True)
    attribution.save_weights(res.net, d / "weights.bin")
    attribution.write_loss_csv(res.losses, d / "loss.csv")
    sal = attribution.input_gradient_saliency(res.net, demo.images[0], demo.thetas[0])
    np.savetxt(d / "saliency_t0.csv", sal.values, delimiter=",", fmt="%.6e")
    summary = {"epochs": tc["epochs"], "loss_first": res.losses[0], "loss_last": res.losses[-1]}
    _write_json(d / "summary.json", summary)
    return summary


def _make_prior(kind, demo, gm, cfg, out):
    if kind == "baseline":
        return smc.BaselinePrior(demo, gm)
    if kind == "attribution":
        arm, camera, _ = _build_world(cfg)
        return smc.AttributionPrior(demo, gm, attribution.NetSaliency(_load_net(out), demo), arm, camera)
    raise ConfigError(f"unknown prior {kind!r}")


def cmd_infer(cfg, out: Path, prior: str) -> dict:
    demo, _ = load_demo(out / "demo")
    gm = _smc_config(cfg)
    pr = _make_prior(prior, demo, gm, cfg, out)
    trace = smc.run_inference(demo, gm, pr, stage_rng(cfg["seed"], "infer"))
    d = out / "infer" / prior
    d.mkdir(parents=True, exist_ok=True)
    smc.write_trace_csv(trace, d / "trace.csv")
    stats = smc.neff_statistics(trace.neff) if len(trace) else {}
    if stats:
        smc.write_statistics_csv({f"{prior} (N_p = {gm.n_particles})": stats}, d / "neff_stats.csv")
    sc = cfg["symbolizer"]
    sym = symbolize(trace, _peak_config(cfg), k_max=sc["k_max"], noise_floor=sc["noise_floor"])
    write_symbols_csv(sym.trace, d / "symbols.csv")
    write_library_csv(sym.library, d / "library.csv")
    summary = {"prior": prior, "steps": len(trace), "peaks": len(sym.peaks),
               "symbols": len(sym.trace.symbols), "clusters": len(sym.library),
               "prior_fallbacks": int(getattr(pr, "fallbacks", 0)), "neff": stats}
    _write_json(d / "summary.json", summary)
    return summary


def cmd_induce(cfg, out: Path, prior: str) -> dict:
    st = read_symbols_csv(_need(out / "infer" / prior / "symbols.csv"))
    program = induce_program(st)
    d = out / "induce" / prior
    d.mkdir(parents=True, exist_ok=True)
    (d / "program.txt").write_text(pretty_print(program) + "\n")
    summary = {"prior": prior, "trace_length": len(st.symbols),
               "expansion_matches": expand(program) == list(st.symbols)}
    _write_json(d / "summary.json", summary)
    return summary


def cmd_ground(cfg, out: Path, prior: str) -> dict:
    demo, _ = load_demo(out / "demo")
    library = read_library_csv(_need(out / "infer" / prior / "library.csv"))
    arm, camera, _ = _build_world(cfg)
    gc = cfg["ground"]
    symbols = grounding.extract_templates(demo, library, camera, arm, gc["patch_size"])
    d = out / "ground" / prior
    grounding.save_templates(symbols, d)
    summary = {"prior": prior, "templates": len(symbols)}
    _write_json(d / "summary.json", summary)
    return summary


def _synth_scenes(cfg, scene, arm, camera):
    sc = cfg["synth"]
    if sc.get("scenes"):
        return [scene_from_dict(s) for s in sc["scenes"]]
    rng = stage_rng(cfg["seed"], "synth")
    return [scenarios.random_rearrangement(scene, arm, camera, rng) for _ in range(int(sc["n_scenes"]))]


def cmd_synth(cfg, out: Path, prior: str) -> dict:
    """Run the induced program in new scenes and log which object each step reaches."""
    arm, camera, scene = _build_world(cfg)
    program = parse_program(_need(out / "induce" / prior / "program.txt").read_text())
    _need(out / "ground" / prior / "templates.csv")
    symbols = grounding.load_templates(out / "ground" / prior)
    library = read_library_csv(_need(out / "infer" / prior / "library.csv"))
    demo_terms = [forward_kinematics(arm, library[s].goal) for s in range(len(library))]
    centers0 = np.array([o.center for o in scene.objects])
    # which demo object each symbol stands for
    sym_obj = [int(np.argmin(np.linalg.norm(centers0 - p, axis=1))) for p in demo_terms]
    expected = [scene.objects[sym_obj[s]].id for s in expand(program)]
    d = out / "synth" / prior
    d.mkdir(parents=True, exist_ok=True)
    ok = 0
    rows = ["scene,step,symbol,object"]
    err_rows = ["scene,symbol,pixel_error"]
    scenes = _synth_scenes(cfg, scene, arm, camera)
    gc = cfg["ground"]
    for i, sc in enumerate(scenes):
        image = render(sc, camera)
        if i == 0:
            write_ppm(d / "scene_000.ppm", image)
        lib = grounding.reground_library(symbols, image, camera, arm, library, threshold=gc["threshold"])
        res = execute_program(program, lib, arm, dt=cfg["demo"]["dt"],
                              convergence_eps=cfg["demo"]["convergence_eps"])
        cents = np.array([o.center for o in sc.objects])
        visited = []
        for step, (s, th) in enumerate(zip(res.visited, res.terminals)):
            obj = sc.objects[int(np.argmin(np.linalg.norm(cents - forward_kinematics(arm, th), axis=1)))].id
            visited.append(obj)
            rows.append(f"{i},{step},{s},{obj}")
        for s in range(len(lib)):
            truth = project(camera, sc.objects[sym_obj[s]].center)
            err = float(np.linalg.norm(project(camera, forward_kinematics(arm, lib[s].goal)) - truth))
            err_rows.append(f"{i},{s},{err!r}")
        ok += visited == expected
    (d / "visits.csv").write_text("\n".join(rows) + "\n")
    (d / "goal_errors.csv").write_text("\n".join(err_rows) + "\n")
    summary = {"prior": prior, "scenes": len(scenes), "order_correct": ok}
    _write_json(d / "summary.json", summary)
    return summary


def cmd_eval_table1(cfg, out: Path) -> dict:
    seeds = [int(s) for s in cfg["eval"]["seeds"]]
    if len(seeds) < 2:
        raise StatisticsError("eval-table1 needs at least 2 seeds")
    demo, _ = load_demo(out / "demo")
    gm = _smc_config(cfg)
    priors = {k: _make_prior(k, demo, gm, cfg, out) for k in ("attribution", "baseline")}
    per_seed = {k: [] for k in priors}
    for s in seeds:
        for k, pr in priors.items():
            tr = smc.run_inference(demo, gm, pr, stage_rng(s, "infer"))
            per_seed[k].append(smc.neff_statistics(tr.neff))
    d = out / "eval"
    d.mkdir(parents=True, exist_ok=True)
    rows = {}
    for k, lst in per_seed.items():
        rows[f"{k.capitalize()} (N_p = {gm.n_particles})"] = {
            f: float(np.mean([x[f] for x in lst])) for f in ("mean", "max", "min", "iqr")}
    smc.write_statistics_csv(rows, d / "table1.csv")
    with open(d / "table1_per_seed.csv", "w") as fh:
        fh.write("seed,prior,mean,max,min,iqr\n")
        for i, s in enumerate(seeds):
            for k in per_seed:
                x = per_seed[k][i]
                fh.write(f"{s},{k},{x['mean']:.4f},{x['max']:.4f},{x['min']:.4f},{x['iqr']:.4f}\n")
    a, b = per_seed["attribution"], per_seed["baseline"]
    summary = {"seeds": seeds,
               "mean_wins": sum(x["mean"] > y["mean"] for x, y in zip(a, b)),
               "iqr_wins": sum(x["iqr"] > y["iqr"] for x, y in zip(a, b))}
    _write_json(d / "summary.json", summary)
    return summary


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="demo2prog", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["demo", "train", "infer", "induce", "ground", "synth",
                                       "eval-table1"])
    p.add_argument("--config", help="JSON config; sections override the defaults")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--prior", choices=["attribution", "baseline"], default="attribution")
    p.add_argument("--out", default="out", help="output directory (env DEMO2PROG_OUT wins)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap; the stages are single-threaded so results never depend on it")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(os.environ.get("DEMO2PROG_OUT") or args.out)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg["seed"] = args.seed
        out.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        if cmd == "demo":
            summary = cmd_demo(cfg, out)
        elif cmd == "train":
            summary = cmd_train(cfg, out)
        elif cmd == "infer":
            summary = cmd_infer(cfg, out, args.prior)
        elif cmd == "induce":
            summary = cmd_induce(cfg, out, args.prior)
        elif cmd == "ground":
            summary = cmd_ground(cfg, out, args.prior)
        elif cmd == "synth":
            summary = cmd_synth(cfg, out, args.prior)
        else:
            summary = cmd_eval_table1(cfg, out)
    except UpstreamMissingError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (ConfigError, InvalidArgumentError, StatisticsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Demo2ProgError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
