"""Ground controller symbols in images and re-target them to new scenes.

Each symbol keeps an image patch cut around its goal in the demonstration.
In a new scene the patch is located by normalised cross-correlation, the
match is mapped back to the workspace and inverse kinematics yields the new
goal.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from .arm import (ArmModel, CameraModel, forward_kinematics, inverse_kinematics, project,
                  read_ppm, unproject, write_ppm)
from .errors import GroundingFailureError, InvalidArgumentError, MatchNotFoundError, \
    PartialGroundingError
from .programs import ControllerLibrary, ControllerParams

DEFAULT_PATCH = 32
NCC_THRESHOLD = 0.7
MIN_TEMPLATE_STD = 1e-3


@dataclass
class GroundedSymbol:
    symbol: int
    template: np.ndarray          # (h, w, 3)
    demo_goal: np.ndarray
    crop_origin: tuple[int, int]  # (col, row) of the patch's top-left pixel in the demo frame
    anchor: tuple[float, float]   # sub-pixel goal position relative to the patch origin
    gain: Optional[float] = None

    def __post_init__(self):
        self.template = np.asarray(self.template, dtype=float)
        self.demo_goal = np.asarray(self.demo_goal, dtype=float)
        if self.template.std() <= MIN_TEMPLATE_STD:
            raise GroundingFailureError(self.symbol, f"template for symbol {self.symbol} is uniform")


def _crop(image, center, size):
    H, W = image.shape[:2]
    if size > W or size > H:
        raise InvalidArgumentError(f"patch size {size} exceeds the image")
    c0 = int(np.clip(center[0] - size // 2, 0, W - size))
    r0 = int(np.clip(center[1] - size // 2, 0, H - size))
    return image[r0:r0 + size, c0:c0 + size].copy(), (c0, r0)


def extract_templates(demo, library: ControllerLibrary, camera: CameraModel, arm: ArmModel,
                      patch_size: int = DEFAULT_PATCH) -> list[GroundedSymbol]:
    """One template per controller, cut from the frame where the arm is closest to its goal."""
    if len(library) == 0:
        raise InvalidArgumentError("library is empty")
    out = []
    for sym in range(len(library)):
        c = library[sym]
        t = int(np.argmin(np.linalg.norm(demo.thetas - c.goal, axis=1)))
        px = project(camera, forward_kinematics(arm, c.goal))
        if not (0 <= px[0] <= camera.width - 1 and 0 <= px[1] <= camera.height - 1):
            raise GroundingFailureError(sym, f"goal of symbol {sym} projects off-image at {px}")
        center = np.round(px).astype(int)
        patch, origin = _crop(np.asarray(demo.images[t], dtype=float), center, patch_size)
        anchor = (float(px[0] - origin[0]), float(px[1] - origin[1]))
        out.append(GroundedSymbol(sym, patch, c.goal.copy(), origin, anchor, c.gain))
    return out


def ncc_map(image, template) -> np.ndarray:
    """Normalised cross-correlation over all valid placements, colour channels pooled.

    Entry ``[r, c]`` scores the template with its top-left pixel at ``(c, r)``.
    Windows with no variance score 0.
    """
    img = np.asarray(image, dtype=float)
    tpl = np.asarray(template, dtype=float)
    h, w, ch = tpl.shape
    H, W = img.shape[:2]
    if h > H or w > W:
        raise InvalidArgumentError("template larger than image")
    n = h * w * ch
    t0 = tpl - tpl.mean()
    t_norm = np.sqrt(np.sum(t0 ** 2))
    num = np.zeros((H - h + 1, W - w + 1))
    for k in range(ch):
        num += fftconvolve(img[:, :, k], t0[::-1, ::-1, k], mode="valid")
    s1 = _box_sum(img.sum(axis=2), h, w)
    s2 = _box_sum((img ** 2).sum(axis=2), h, w)
    var = np.maximum(s2 - s1 ** 2 / n, 0.0)
    den = t_norm * np.sqrt(var)
    out = np.zeros_like(num)
    # the integral-image variance carries round-off relative to the raw energy
    ok = (var > 1e-9 * s2) & (den > 0)
    out[ok] = num[ok] / den[ok]
    return np.clip(out, -1.0, 1.0)


def _box_sum(x, h, w):
    ii = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    ii[1:, 1:] = x.cumsum(0).cumsum(1)
    return ii[h:, w:] - ii[:-h, w:] - ii[h:, :-w] + ii[:-h, :-w]


def _subpixel(score, r, c):
    """Parabolic refinement of an integer peak along each axis."""
    def offset(a, b, d):
        den = a - 2 * b + d
        return 0.0 if den >= 0 else 0.5 * (a - d) / den
    dr = offset(score[r - 1, c], score[r, c], score[r + 1, c]) if 0 < r < score.shape[0] - 1 else 0.0
    dc = offset(score[r, c - 1], score[r, c], score[r, c + 1]) if 0 < c < score.shape[1] - 1 else 0.0
    return dc, dr


def locate(symbol: GroundedSymbol, image, threshold: float = NCC_THRESHOLD):
    """Best match of the template in ``image``: ``(pixel, score)`` with sub-pixel refinement."""
    score = ncc_map(image, symbol.template)
    r, c = np.unravel_index(int(np.argmax(score)), score.shape)
    best = float(score[r, c])
    if best < threshold:
        raise MatchNotFoundError(symbol.symbol, f"symbol {symbol.symbol}: best NCC {best:.3f} < {threshold}")
    dc, dr = _subpixel(score, r, c)
    pixel = np.array([c + dc + symbol.anchor[0], r + dr + symbol.anchor[1]])
    return pixel, best


def predict_goal(symbol: GroundedSymbol, new_image, camera: CameraModel, arm: ArmModel,
                 seed=None, threshold: float = NCC_THRESHOLD) -> np.ndarray:
    """Joint goal for ``symbol`` in a new image; the IK seed defaults to the demonstrated goal."""
    pixel, _ = locate(symbol, new_image, threshold)
    target = unproject(camera, pixel)
    seed = symbol.demo_goal if seed is None else seed
    return inverse_kinematics(arm, target, seed)


def reground_library(symbols, new_image, camera: CameraModel, arm: ArmModel,
                     library: Optional[ControllerLibrary] = None,
                     threshold: float = NCC_THRESHOLD) -> ControllerLibrary:
    """Re-target every symbol; gains come from ``library`` or the stored symbol gains."""
    goals, failed = {}, []
    for s in symbols:
        try:
            goals[s.symbol] = predict_goal(s, new_image, camera, arm, threshold=threshold)
        except GroundingFailureError:
            failed.append(s.symbol)
    if failed:
        raise PartialGroundingError(failed)
    out = {}
    for s in symbols:
        gain = library[s.symbol].gain if library is not None else s.gain
        if gain is None:
            raise InvalidArgumentError(f"no gain known for symbol {s.symbol}")
        out[s.symbol] = ControllerParams(goals[s.symbol], gain)
    return ControllerLibrary(out)


# ---------------------------------------------------------------- storage

def save_templates(symbols, directory) -> Path:
    """Write one PPM per template and a CSV manifest; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = d / "templates.csv"
    J = len(symbols[0].demo_goal) if symbols else 0
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["symbol", *[f"goal_{j}" for j in range(J)], "crop_col", "crop_row",
                    "anchor_col", "anchor_row", "gain", "file"])
        for s in symbols:
            name = f"template_{s.symbol:03d}.ppm"
            write_ppm(d / name, s.template)
            w.writerow([s.symbol, *[repr(float(v)) for v in s.demo_goal], *s.crop_origin,
                        *(repr(float(a)) for a in s.anchor), "" if s.gain is None else repr(float(s.gain)), name])
    return manifest


def load_templates(directory) -> list[GroundedSymbol]:
    d = Path(directory)
    out = []
    with open(d / "templates.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    J = sum(1 for h in header if h.startswith("goal_"))
    for row in body:
        sym = int(row[0])
        goal = np.array([float(v) for v in row[1:1 + J]])
        crop = (int(row[1 + J]), int(row[2 + J]))
        anchor = (float(row[3 + J]), float(row[4 + J]))
        gain = float(row[5 + J]) if row[5 + J] else None
        out.append(GroundedSymbol(sym, read_ppm(d / row[6 + J]), goal, crop, anchor, gain))
    return out
