"""Demonstration files: a per-step CSV, PPM frames and a JSON sidecar."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .arm import read_ppm, write_ppm
from .errors import UpstreamMissingError
from .programs import Demonstration


def save_demo(demo: Demonstration, directory, extra_meta=None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    J = demo.thetas.shape[1] if demo.thetas.ndim == 2 else 0
    # frames are written once per distinct array
    frame_ids: dict[int, int] = {}
    frame_of_step = []
    for im in demo.images:
        if id(im) not in frame_ids:
            k = len(frame_ids)
            frame_ids[id(im)] = k
            write_ppm(d / f"frame_{k:05d}.ppm", im)
        frame_of_step.append(frame_ids[id(im)])
    header = (["t"] + [f"theta_{j}" for j in range(J)] + [f"u_{j}" for j in range(J)]
              + ["symbol", "frame"])
    with open(d / "steps.csv", "w") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(len(demo)):
            vals = [repr(float(v)) for v in demo.thetas[t]] + [repr(float(v)) for v in demo.controls[t]]
            fh.write(",".join([str(t), *vals, str(int(demo.segment_symbols[t])),
                               str(frame_of_step[t])]) + "\n")
    meta = {
        "dt": demo.dt,
        "n_joints": int(J),
        "segment_starts": [int(s) for s in demo.segment_starts],
        "final_theta": [float(v) for v in demo.final_theta],
    }
    meta.update(extra_meta or {})
    (d / "demo.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_demo(directory) -> tuple[Demonstration, dict]:
    d = Path(directory)
    for name in ("demo.json", "steps.csv"):
        if not (d / name).exists():
            raise UpstreamMissingError(d / name)
    meta = json.loads((d / "demo.json").read_text())
    J = int(meta["n_joints"])
    lines = (d / "steps.csv").read_text().splitlines()[1:]
    if lines:
        data = np.loadtxt(lines, delimiter=",", ndmin=2)
    else:
        data = np.zeros((0, 2 * J + 3))
    thetas = data[:, 1:1 + J]
    controls = data[:, 1 + J:1 + 2 * J]
    symbols = data[:, 1 + 2 * J].astype(int)
    frame_idx = data[:, 2 + 2 * J].astype(int)
    frames = {}
    images = []
    for k in frame_idx:
        if k not in frames:
            path = d / f"frame_{k:05d}.ppm"
            if not path.exists():
                raise UpstreamMissingError(path)
            frames[k] = read_ppm(path)
        images.append(frames[k])
    demo = Demonstration(thetas, controls, images, float(meta["dt"]), symbols,
                         list(meta["segment_starts"]), np.array(meta["final_theta"], dtype=float))
    return demo, meta
