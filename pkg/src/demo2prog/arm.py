"""Planar arm, affine camera and block-scene rendering.

Images are float arrays of shape ``(height, width, 3)`` with values in [0, 1].
Pixel coordinates are ``(x, y)`` = ``(column, row)`` with integer values at
pixel centres and ``y`` growing downwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError, UnreachableTargetError

BACKGROUND_GRAY = 0.5

IK_DAMPING = 0.1
IK_MAX_ITER = 200
IK_STEP_TOL = 1e-6
IK_TOL = 1e-3


@dataclass(frozen=True)
class ArmModel:
    link_lengths: tuple[float, ...] = (1.0, 1.0, 1.0)
    base_position: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        links = tuple(float(v) for v in self.link_lengths)
        if not links or any(not np.isfinite(v) or v <= 0 for v in links):
            raise InvalidArgumentError(f"link lengths must be positive, got {self.link_lengths}")
        object.__setattr__(self, "link_lengths", links)
        object.__setattr__(self, "base_position", tuple(float(v) for v in self.base_position))

    @property
    def n_joints(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    @property
    def inner_reach(self) -> float:
        longest = max(self.link_lengths)
        return max(0.0, 2.0 * longest - self.reach)


@dataclass(frozen=True)
class CameraModel:
    pixels_per_unit: float = 32.0
    principal_point: tuple[float, float] = (160.0, 120.0)
    image_size: tuple[int, int] = (320, 240)

    def __post_init__(self):
        if not self.pixels_per_unit > 0:
            raise InvalidArgumentError("pixels_per_unit must be positive")
        w, h = self.image_size
        px, py = self.principal_point
        if not (0 <= px < w and 0 <= py < h):
            raise InvalidArgumentError("principal point must lie inside the image")
        object.__setattr__(self, "image_size", (int(w), int(h)))
        object.__setattr__(self, "principal_point", (float(px), float(py)))

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]


@dataclass(frozen=True)
class SceneObject:
    id: str
    color: tuple[float, float, float]
    center: tuple[float, float]
    half_extent: float = 0.25


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...] = field(default_factory=tuple)

    def __post_init__(self):
        objs = tuple(self.objects)
        ids = [o.id for o in objs]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError(f"duplicate object ids in scene: {ids}")
        object.__setattr__(self, "objects", objs)

    def by_id(self, obj_id: str) -> SceneObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)


def _check_dims(arm: ArmModel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (arm.n_joints,):
        raise InvalidArgumentError(
            f"joint vector has shape {theta.shape}, arm has {arm.n_joints} joints")
    return theta


def forward_kinematics(arm: ArmModel, theta) -> np.ndarray:
    theta = _check_dims(arm, theta)
    cum = np.cumsum(theta)
    links = np.asarray(arm.link_lengths)
    x = arm.base_position[0] + np.sum(links * np.cos(cum))
    y = arm.base_position[1] + np.sum(links * np.sin(cum))
    return np.array([x, y])


def forward_kinematics_batch(arm: ArmModel, thetas) -> np.ndarray:
    """Vectorised FK over an ``(n, J)`` array of joint vectors."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 2 or thetas.shape[1] != arm.n_joints:
        raise InvalidArgumentError(f"expected (n, {arm.n_joints}) joint array, got {thetas.shape}")
    cum = np.cumsum(thetas, axis=1)
    links = np.asarray(arm.link_lengths)
    x = arm.base_position[0] + (links * np.cos(cum)).sum(axis=1)
    y = arm.base_position[1] + (links * np.sin(cum)).sum(axis=1)
    return np.stack([x, y], axis=1)


def jacobian(arm: ArmModel, theta) -> np.ndarray:
    theta = _check_dims(arm, theta)
    cum = np.cumsum(theta)
    links = np.asarray(arm.link_lengths)
    dx = -links * np.sin(cum)
    dy = links * np.cos(cum)
    # joint j moves every link from j outwards
    jx = np.cumsum(dx[::-1])[::-1]
    jy = np.cumsum(dy[::-1])[::-1]
    return np.stack([jx, jy])


def project(camera: CameraModel, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    cx, cy = camera.principal_point
    s = camera.pixels_per_unit
    return np.stack([cx + s * p[..., 0], cy - s * p[..., 1]], axis=-1)


def unproject(camera: CameraModel, pixel) -> np.ndarray:
    pixel = np.asarray(pixel, dtype=float)
    cx, cy = camera.principal_point
    s = camera.pixels_per_unit
    return np.stack([(pixel[..., 0] - cx) / s, (cy - pixel[..., 1]) / s], axis=-1)


def clamp_pixel(camera: CameraModel, pixel) -> np.ndarray:
    pixel = np.asarray(pixel, dtype=float)
    lo = np.zeros(2)
    hi = np.array([camera.width - 1, camera.height - 1], dtype=float)
    return np.clip(pixel, lo, hi)


def blank_image(camera: CameraModel) -> np.ndarray:
    return np.full((camera.height, camera.width, 3), BACKGROUND_GRAY)


def render(scene: Scene, camera: CameraModel) -> np.ndarray:
    img = blank_image(camera)
    cols = np.arange(camera.width)
    rows = np.arange(camera.height)
    for obj in scene.objects:
        cx, cy = project(camera, obj.center)
        half = obj.half_extent * camera.pixels_per_unit
        in_x = np.abs(cols - cx) < half
        in_y = np.abs(rows - cy) < half
        mask = in_y[:, None] & in_x[None, :]
        img[mask] = np.asarray(obj.color, dtype=float)
    return img


def object_mask(obj: SceneObject, camera: CameraModel) -> np.ndarray:
    cx, cy = project(camera, obj.center)
    half = obj.half_extent * camera.pixels_per_unit
    in_x = np.abs(np.arange(camera.width) - cx) < half
    in_y = np.abs(np.arange(camera.height) - cy) < half
    return in_y[:, None] & in_x[None, :]


def inverse_kinematics(arm: ArmModel, target, seed, *, damping=IK_DAMPING,
                       max_iter=IK_MAX_ITER, step_tol=IK_STEP_TOL, tol=IK_TOL) -> np.ndarray:
    """Damped least-squares IK started from ``seed``.

    Staying close to the seed picks the redundancy branch nearest the seed posture.
    """
    target = np.asarray(target, dtype=float)
    theta = _check_dims(arm, seed).copy()
    dist = float(np.hypot(*(target - np.asarray(arm.base_position))))
    if dist > arm.reach + 1e-12 or dist < arm.inner_reach - 1e-12:
        raise UnreachableTargetError(
            f"target {target.tolist()} at distance {dist:.4f} outside [{arm.inner_reach}, {arm.reach}]")
    lam2 = damping ** 2
    # fixed bend used to leave singular postures (e.g. a straight arm pointing at the target)
    kick = 0.05 * (-1.0) ** np.arange(theta.shape[0])
    kicks_left = 3
    err = target - forward_kinematics(arm, theta)
    for _ in range(max_iter):
        if np.linalg.norm(err) < tol * 1e-3:
            break
        e = err
        n = np.linalg.norm(e)
        if n > 0.5:
            e = e * (0.5 / n)
        J = jacobian(arm, theta)
        step = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(2), e)
        theta = theta + step
        err = target - forward_kinematics(arm, theta)
        if np.linalg.norm(step) < step_tol:
            if np.linalg.norm(err) < tol or kicks_left == 0:
                break
            kicks_left -= 1
            theta = theta + kick
            err = target - forward_kinematics(arm, theta)
    if np.linalg.norm(err) >= tol:
        raise ConvergenceError(
            f"IK did not converge: residual {np.linalg.norm(err):.2e} after {max_iter} iterations")
    return theta


# ---------------------------------------------------------------- file formats

def write_ppm(path, image) -> None:
    img = np.asarray(image, dtype=float)
    h, w, _ = img.shape
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    if tokens[0] != "P6":
        raise InvalidArgumentError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    data = np.frombuffer(raw[pos:pos + w * h * 3], dtype=np.uint8)
    return data.reshape(h, w, 3).astype(float) / maxval


def arm_from_dict(d: dict) -> ArmModel:
    return ArmModel(tuple(d.get("link_lengths", (1.0, 1.0, 1.0))),
                    tuple(d.get("base_position", (0.0, 0.0))))


def camera_from_dict(d: dict) -> CameraModel:
    return CameraModel(float(d.get("pixels_per_unit", 32.0)),
                       tuple(d.get("principal_point", (160.0, 120.0))),
                       tuple(d.get("image_size", (320, 240))))


def scene_from_dict(d: dict) -> Scene:
    objs = []
    for o in d.get("objects", []):
        objs.append(SceneObject(str(o["id"]), tuple(float(c) for c in o["color"]),
                                tuple(float(c) for c in o["center"]),
                                float(o.get("half_extent", 0.25))))
    return Scene(tuple(objs))


def scene_to_dict(scene: Scene) -> dict:
    return {"objects": [{"id": o.id, "color": list(o.color), "center": list(o.center),
                         "half_extent": o.half_extent} for o in scene.objects]}
