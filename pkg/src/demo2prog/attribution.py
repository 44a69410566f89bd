"""Small visuomotor regressor with hand-written reverse mode, and saliency maps.

The network maps a downsampled image and the joint angles to a joint
velocity.  Its input gradient with respect to the image gives a saliency map
that highlights the scene content the prediction depends on.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arm import BACKGROUND_GRAY, CameraModel, Scene, project
from .errors import DivergenceError, InvalidArgumentError

DEFAULT_INPUT_SIZE = (32, 24)   # (width, height) after downsampling
DEFAULT_HIDDEN = (64, 32)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def downsample(image, size=DEFAULT_INPUT_SIZE) -> np.ndarray:
    """Area-average an ``(H, W, 3)`` image down to ``size = (width, height)``."""
    img = np.asarray(image, dtype=float)
    h, w, c = img.shape
    tw, th = size
    if (h, w) == (th, tw):
        return img
    if h % th or w % tw:
        raise InvalidArgumentError(f"image {w}x{h} is not an integer multiple of {tw}x{th}")
    fy, fx = h // th, w // tw
    return img.reshape(th, fy, tw, fx, c).mean(axis=(1, 3))


class MicroNet:
    """Dense tanh network ``[image pixels * 3 + J] -> hidden... -> J``.

    Image values are centred on the background gray before entering the
    first layer, so a uniform background contributes nothing to the
    pre-activations and gets no weight updates.
    """

    def __init__(self, weights, biases, input_size=DEFAULT_INPUT_SIZE, n_joints=3):
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.input_size = tuple(int(v) for v in input_size)
        self.n_joints = int(n_joints)
        sizes = self.layer_sizes
        if sizes[0] != self.n_image_inputs + self.n_joints:
            raise InvalidArgumentError(f"first layer expects {sizes[0]} inputs, "
                                       f"got {self.n_image_inputs} image + {self.n_joints} joint")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise InvalidArgumentError(f"layer {i} has inconsistent shapes {W.shape}, {b.shape}")
        if sizes[-1] != self.n_joints:
            raise InvalidArgumentError("output layer must have one unit per joint")

    @property
    def n_image_inputs(self) -> int:
        w, h = self.input_size
        return w * h * 3

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    @classmethod
    def init(cls, rng, input_size=DEFAULT_INPUT_SIZE, n_joints=3, hidden=DEFAULT_HIDDEN,
             image_init_scale=0.01):
        """Glorot-style init; image weights are further scaled by ``image_init_scale``."""
        w, h = input_size
        n_img = w * h * 3
        sizes = [n_img + n_joints, *hidden, n_joints]
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            std = np.sqrt(2.0 / (sizes[i] + sizes[i + 1]))
            W = rng.normal(0.0, std, size=(sizes[i], sizes[i + 1]))
            if i == 0:
                W[:n_img] *= image_init_scale
            weights.append(W)
            biases.append(np.zeros(sizes[i + 1]))
        return cls(weights, biases, input_size, n_joints)

    def copy(self) -> "MicroNet":
        return MicroNet([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                        self.input_size, self.n_joints)

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    # -- input assembly ----------------------------------------------------
    def encode(self, image, theta) -> np.ndarray:
        """Flatten one (image, theta) pair or a batch of them into network input rows."""
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            img = downsample(image, self.input_size)
            if theta.shape != (self.n_joints,):
                raise InvalidArgumentError(f"expected {self.n_joints} joint angles, got {theta.shape}")
            return np.concatenate([img.ravel() - BACKGROUND_GRAY, theta])[None, :]
        imgs = np.asarray(image, dtype=float)
        if imgs.ndim == 2:
            # already-encoded image rows
            return np.concatenate([imgs, theta], axis=1)
        flat = np.stack([downsample(im, self.input_size).ravel() for im in imgs]) - BACKGROUND_GRAY
        return np.concatenate([flat, theta], axis=1)

    # -- forward / reverse mode ---------------------------------------------
    def forward_batch(self, x):
        """Returns output rows and the activation tape needed for the backward pass."""
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = z if i == last else np.tanh(z)
            acts.append(a)
        return a, acts

    def backward(self, acts, grad_out):
        """Pull ``grad_out`` (d loss / d output) back through the tape.

        Returns ``(weight_grads, bias_grads, input_grad)``.
        """
        n_layers = len(self.weights)
        dW = [None] * n_layers
        db = [None] * n_layers
        delta = grad_out
        for i in range(n_layers - 1, -1, -1):
            if i != n_layers - 1:
                # tanh'(z) = 1 - tanh(z)^2, and acts[i+1] holds tanh(z)
                delta = delta * (1.0 - acts[i + 1] ** 2)
            dW[i] = acts[i].T @ delta
            db[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return dW, db, delta

    def input_jacobian(self, x_row) -> np.ndarray:
        """``(J, n_inputs)`` Jacobian of the outputs at a single encoded input."""
        x = np.repeat(np.asarray(x_row, dtype=float).reshape(1, -1), self.n_joints, axis=0)
        _, acts = self.forward_batch(x)
        # one reverse sweep per output, batched: row o seeds output o
        _, _, dx = self.backward(acts, np.eye(self.n_joints))
        return dx


def forward(net: MicroNet, image, theta) -> np.ndarray:
    out, _ = net.forward_batch(net.encode(image, theta))
    return out[0]


def mse_loss(net: MicroNet, X, Y):
    out, acts = net.forward_batch(X)
    resid = out - Y
    n = X.shape[0]
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    grad_out = 2.0 * resid / n
    return loss, acts, grad_out


@dataclass
class TrainResult:
    net: MicroNet
    losses: list[float]

    @property
    def running_best(self) -> list[float]:
        return list(np.minimum.accumulate(self.losses))


def train(net: MicroNet, images, thetas, controls, epochs=200, lr=1e-2, batch_size=None,
          rng=None, divergence_factor=1e6) -> TrainResult:
    """Adam on mean squared error.

    ``images`` may be an ``(n, H, W, 3)`` stack, a list of frames, or an
    already-encoded ``(n, pixels*3)`` block.  The loss curve records the
    full-dataset loss before each epoch and after the last one.
    """
    thetas = np.asarray(thetas, dtype=float)
    Y = np.asarray(controls, dtype=float)
    n = len(thetas)
    if n == 0:
        raise InvalidArgumentError("training set is empty")
    if isinstance(images, list):
        X = _encode_frames(net, images, thetas)
    else:
        X = net.encode(images, thetas)
    rng = np.random.default_rng(0) if rng is None else rng
    batch_size = n if batch_size is None else int(batch_size)

    net = net.copy()
    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    losses = []
    for epoch in range(epochs + 1):
        loss, _, _ = mse_loss(net, X, Y)
        if not np.isfinite(loss) or (losses and loss > divergence_factor * max(losses[0], 1e-12)):
            raise DivergenceError(f"training diverged at epoch {epoch}: loss {loss:.3e}")
        losses.append(loss)
        if epoch == epochs:
            break
        order = rng.permutation(n) if batch_size < n else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, acts, grad_out = mse_loss(net, X[idx], Y[idx])
            dW, db, _ = net.backward(acts, grad_out)
            grads = [g for pair in zip(dW, db) for g in pair]
            step += 1
            c1 = 1.0 - ADAM_BETA1 ** step
            c2 = 1.0 - ADAM_BETA2 ** step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= ADAM_BETA1
                mi += (1.0 - ADAM_BETA1) * g
                vi *= ADAM_BETA2
                vi += (1.0 - ADAM_BETA2) * g * g
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + ADAM_EPS)
    return TrainResult(net, losses)


def _encode_frames(net, frames, thetas):
    # demonstrations share one array for a static scene; encode each distinct frame once
    cache = {}
    rows = []
    for im in frames:
        key = id(im)
        if key not in cache:
            cache[key] = downsample(im, net.input_size).ravel() - BACKGROUND_GRAY
        rows.append(cache[key])
    return np.concatenate([np.stack(rows), thetas], axis=1)


# ---------------------------------------------------------------- saliency maps

@dataclass
class SaliencyMap:
    values: np.ndarray                 # (h, w) non-negative, max-normalised
    image_size: tuple[int, int]        # (width, height) of the full-resolution image

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def at_pixels(self, pixels) -> np.ndarray:
        """Bilinear lookup at full-resolution pixel coordinates ``(..., 2)``."""
        pixels = np.asarray(pixels, dtype=float)
        W, H = self.image_size
        h, w = self.values.shape
        xs = (pixels[..., 0] + 0.5) * (w / W) - 0.5
        ys = (pixels[..., 1] + 0.5) * (h / H) - 0.5
        xs = np.clip(xs, 0.0, w - 1.0)
        ys = np.clip(ys, 0.0, h - 1.0)
        x0 = np.floor(xs).astype(int)
        y0 = np.floor(ys).astype(int)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = xs - x0
        fy = ys - y0
        v = self.values
        return ((1 - fy) * ((1 - fx) * v[y0, x0] + fx * v[y0, x1])
                + fy * ((1 - fx) * v[y1, x0] + fx * v[y1, x1]))


def _max_normalise(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    peak = values.max() if values.size else 0.0
    if peak <= 0:
        return np.zeros_like(values)
    return values / peak


def input_gradient_saliency(net: MicroNet, image, theta) -> SaliencyMap:
    """L1 norm over outputs and colour channels of d output / d image pixel."""
    x = net.encode(image, theta)[0]
    jac = net.input_jacobian(x)
    w, h = net.input_size
    img_part = np.abs(jac[:, :net.n_image_inputs]).reshape(net.n_joints, h, w, 3)
    values = img_part.sum(axis=(0, 3))
    full = np.asarray(image).shape
    return SaliencyMap(_max_normalise(values), (full[1], full[0]))


def oracle_saliency(scene: Scene, camera: CameraModel, sigma_px: float = 8.0) -> SaliencyMap:
    """Sum of isotropic Gaussians at each object's projected centre, max-normalised."""
    if not sigma_px > 0:
        raise InvalidArgumentError("sigma_px must be positive")
    xs = np.arange(camera.width, dtype=float)
    ys = np.arange(camera.height, dtype=float)
    values = np.zeros((camera.height, camera.width))
    for obj in scene.objects:
        cx, cy = project(camera, obj.center)
        gx = np.exp(-0.5 * ((xs - cx) / sigma_px) ** 2)
        gy = np.exp(-0.5 * ((ys - cy) / sigma_px) ** 2)
        values += gy[:, None] * gx[None, :]
    return SaliencyMap(_max_normalise(values), camera.image_size)


class NetSaliency:
    """Saliency provider evaluating the net at each demonstration step."""

    def __init__(self, net: MicroNet, demo):
        self.net = net
        self.demo = demo

    def __call__(self, t: int) -> SaliencyMap:
        return input_gradient_saliency(self.net, self.demo.images[t], self.demo.thetas[t])


# ---------------------------------------------------------------- serialisation

def save_weights(net: MicroNet, path) -> None:
    """Text header line with layer sizes and input size, then little-endian float64 data."""
    w, h = net.input_size
    header = "micronet " + " ".join(str(s) for s in net.layer_sizes) + f" input {w} {h}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_weights(path) -> MicroNet:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    fields = raw[:nl].decode("ascii").split()
    if fields[0] != "micronet" or "input" not in fields:
        raise InvalidArgumentError(f"{path}: not a micronet weight file")
    k = fields.index("input")
    sizes = [int(s) for s in fields[1:k]]
    input_size = (int(fields[k + 1]), int(fields[k + 2]))
    data = np.frombuffer(raw[nl + 1:], dtype="<f8")
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if data.size != expected:
        raise InvalidArgumentError(f"{path}: expected {expected} floats, found {data.size}")
    weights, biases = [], []
    pos = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(data[pos:pos + a * b].reshape(a, b).copy())
        pos += a * b
        biases.append(data[pos:pos + b].copy())
        pos += b
    return MicroNet(weights, biases, input_size, sizes[-1])


def write_loss_csv(losses, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(losses):
            fh.write(f"{i},{loss!r}\n")

