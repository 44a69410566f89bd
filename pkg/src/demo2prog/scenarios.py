"""Ready-made scenes, controller libraries and programs for the experiments."""
from __future__ import annotations

import numpy as np

from .arm import ArmModel, CameraModel, Scene, SceneObject, inverse_kinematics
from .errors import InvalidArgumentError
from .programs import ControllerLibrary, ControllerParams, Exec, Seq, patrol_trace

PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "duck": (1.0, 0.0, 1.0),
}

# symbol i reaches object i
REACHING_LAYOUT = [
    ("red", (2.2, 0.6)),
    ("green", (1.5, 1.7)),
    ("blue", (0.2, 2.3)),
    ("yellow", (-1.2, 1.9)),
    ("duck", (-2.2, 0.7)),
]

HOME = np.zeros(3)
IK_SEED = np.array([0.3, 0.8, 0.8])
DEMO_GAIN_RANGE = (2.0, 2.0)   # one shared gain; see library_for_scene
PATROL_ORDER = (3, 2, 1, 4, 0, 3)
PATROL_LENGTH = 65


def default_arm() -> ArmModel:
    return ArmModel((1.0, 1.0, 1.0), (0.0, 0.0))


def default_camera() -> CameraModel:
    return CameraModel(32.0, (160.0, 120.0), (320, 240))


def reaching_scene(half_extent=0.25) -> Scene:
    return Scene(tuple(SceneObject(name, PALETTE[name], center, half_extent)
                       for name, center in REACHING_LAYOUT))


def library_for_scene(scene: Scene, arm: ArmModel, rng, gain_range=DEMO_GAIN_RANGE,
                      seed=IK_SEED) -> ControllerLibrary:
    """One reaching controller per scene object, goals solved by IK.

    Gains are drawn uniformly from ``gain_range``.  The default range is
    degenerate: switching particles inherit their parent's gain, so demos
    whose controllers share a gain are the ones the filter segments cleanly.
    """
    params = []
    for obj in scene.objects:
        goal = inverse_kinematics(arm, obj.center, seed)
        params.append(ControllerParams(goal, rng.uniform(*gain_range)))
    return ControllerLibrary.from_list(params)


def patrol_program(n_symbols=PATROL_LENGTH, order=PATROL_ORDER) -> Seq:
    """The bouncing state machine unrolled to a flat program of ``n_symbols`` steps."""
    return Seq(tuple(Exec(s) for s in patrol_trace(n_symbols, order)))


def reference_trace() -> list[int]:
    return patrol_trace(PATROL_LENGTH, PATROL_ORDER)


def tower_scene(n_goals=15, half_extent=0.12) -> Scene:
    """Goals laid out on two arcs, visited once each in a pure sequence."""
    objs = []
    colors = _distinct_colors(n_goals)
    for i in range(n_goals):
        radius = 1.6 if i % 2 == 0 else 2.5
        angle = np.pi * (0.08 + 0.84 * i / (n_goals - 1))
        center = (float(radius * np.cos(angle)), float(radius * np.sin(angle)))
        objs.append(SceneObject(f"g{i}", colors[i], center, half_extent))
    return Scene(tuple(objs))


def tower_program(n_goals=15) -> Seq:
    return Seq(tuple(Exec(i) for i in range(n_goals)))


def _distinct_colors(n):
    hues = np.linspace(0.0, 1.0, n, endpoint=False)
    out = []
    for h in hues:
        i = int(h * 6) % 6
        f = h * 6 - int(h * 6)
        q, t = 1 - f, f
        rgb = [(1, t, 0), (q, 1, 0), (0, 1, t), (0, q, 1), (t, 0, 1), (1, 0, q)][i]
        out.append(tuple(float(c) for c in rgb))
    return out


def random_rearrangement(scene: Scene, arm: ArmModel, camera: CameraModel, rng,
                         r_range=(1.3, 2.7), min_separation=1.0, max_tries=10_000) -> Scene:
    """Same objects at new random reachable, visible, well-separated positions."""
    placed = []
    for obj in scene.objects:
        for _ in range(max_tries):
            r = rng.uniform(*r_range)
            a = rng.uniform(0.0, 2 * np.pi)
            c = np.array(arm.base_position) + r * np.array([np.cos(a), np.sin(a)])
            if all(np.linalg.norm(c - p) >= min_separation for p in placed) and _visible(camera, c, obj.half_extent):
                placed.append(c)
                break
        else:
            raise InvalidArgumentError("could not place all objects")
    return Scene(tuple(SceneObject(o.id, o.color, (float(c[0]), float(c[1])), o.half_extent)
                       for o, c in zip(scene.objects, placed)))


def _visible(camera, c, half_extent) -> bool:
    from .arm import project
    px = project(camera, c)
    margin = half_extent * camera.pixels_per_unit + 16
    return (margin <= px[0] <= camera.width - 1 - margin) and (margin <= px[1] <= camera.height - 1 - margin)
