"""Upsampling CNN that emits a logits grid, with a hand-written backward pass.

Layout: a trainable latent vector ``beta`` goes through a dense layer into a
``dense_channels`` image at the base resolution, followed by five blocks of

    tanh -> [bilinear resize] -> global normalization -> conv (same padding) -> + bias

Resizes happen in the middle three blocks. Spatial sizes follow a ceil-halving
schedule from the target grid, so any grid size is reached exactly. Tensors
are channels-first ``(C, H, W)``.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NORM_EPS = 1e-6
CHECKPOINT_MAGIC = b"TRCNN\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CnnArchitecture:
    grid_shape: tuple[int, int]
    latent_dim: int = 128
    dense_channels: int = 32
    conv_channels: tuple[int, ...] = (128, 64, 32, 16, 1)
    kernel_size: int = 5
    resize_layers: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        object.__setattr__(self, "grid_shape", tuple(int(s) for s in self.grid_shape))
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "resize_layers", tuple(int(i) for i in self.resize_layers))
        if len(self.conv_channels) != 5:
            raise ValueError(f"expected 5 conv layers, got {len(self.conv_channels)}")
        if self.conv_channels[-1] != 1:
            raise ValueError("the last conv layer must have a single output channel")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd for same padding")
        if any(not 0 <= i < 5 for i in self.resize_layers):
            raise ValueError(f"resize layer indices must lie in [0, 5), got {self.resize_layers}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """Spatial shape at which each conv layer runs."""
        shapes = [None] * 5
        h, w = self.grid_shape
        for k in range(4, -1, -1):
            shapes[k] = (h, w)
            if k in self.resize_layers:
                h, w = math.ceil(h / 2), math.ceil(w / 2)
        return shapes

    @property
    def base_shape(self) -> tuple[int, int]:
        h, w = self.layer_shapes[0]
        if 0 in self.resize_layers:
            h, w = math.ceil(h / 2), math.ceil(w / 2)
        return h, w

    @property
    def in_channels(self) -> list[int]:
        return [self.dense_channels, *self.conv_channels[:-1]]

    def param_shapes(self) -> dict:
        h0, w0 = self.base_shape
        k = self.kernel_size
        return {
            "beta": (self.latent_dim,),
            "dense_w": (self.latent_dim, self.dense_channels * h0 * w0),
            "kernels": [(cout, cin, k, k) for cin, cout in zip(self.in_channels, self.conv_channels)],
            "biases": (5,),
        }

    @property
    def n_params(self) -> int:
        s = self.param_shapes()
        return (
            int(np.prod(s["beta"]))
            + int(np.prod(s["dense_w"]))
            + sum(int(np.prod(k)) for k in s["kernels"])
            + 5
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> CnnArchitecture:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class CnnParams:
    beta: np.ndarray
    dense_w: np.ndarray
    kernels: list[np.ndarray]
    biases: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.beta.ravel(), self.dense_w.ravel(), *(k.ravel() for k in self.kernels), self.biases.ravel()]
        )

    @classmethod
    def unflatten(cls, vector: np.ndarray, arch: CnnArchitecture) -> CnnParams:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (arch.n_params,):
            raise ValueError(f"expected {arch.n_params} parameters, got shape {vector.shape}")
        shapes = arch.param_shapes()
        pos = 0

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            out = vector[pos : pos + n].reshape(shape).copy()
            pos += n
            return out

        beta = take(shapes["beta"])
        dense_w = take(shapes["dense_w"])
        kernels = [take(s) for s in shapes["kernels"]]
        biases = take(shapes["biases"])
        return cls(beta, dense_w, kernels, biases)

    def check(self, arch: CnnArchitecture) -> None:
        shapes = arch.param_shapes()
        got = [("beta", self.beta.shape, shapes["beta"]), ("dense_w", self.dense_w.shape, shapes["dense_w"])]
        got += [(f"kernels[{i}]", k.shape, s) for i, (k, s) in enumerate(zip(self.kernels, shapes["kernels"]))]
        got.append(("biases", self.biases.shape, shapes["biases"]))
        if len(self.kernels) != len(shapes["kernels"]):
            raise ValueError(f"expected {len(shapes['kernels'])} kernels, got {len(self.kernels)}")
        for name, actual, expected in got:
            if tuple(actual) != tuple(expected):
                raise ValueError(f"parameter {name} has shape {actual}, architecture expects {expected}")


def init_params(arch: CnnArchitecture, seed: int = 0) -> CnnParams:
    """Fan-in scaled uniform weights, standard normal latent, zero biases."""
    rng = np.random.default_rng(seed)
    shapes = arch.param_shapes()
    beta = rng.standard_normal(shapes["beta"])
    limit = math.sqrt(3.0 / arch.latent_dim)
    dense_w = rng.uniform(-limit, limit, shapes["dense_w"])
    kernels = []
    for shape in shapes["kernels"]:
        fan_in = shape[1] * shape[2] * shape[3]
        limit = math.sqrt(3.0 / fan_in)
        kernels.append(rng.uniform(-limit, limit, shape))
    return CnnParams(beta, dense_w, kernels, np.zeros(5))


# --- building blocks -------------------------------------------------------


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1D linear interpolation matrix, half-pixel centers (align_corners=False)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1.0 - w)
    np.add.at(m, (np.arange(n_out), i1), w)
    return m


def bilinear_resize(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Resize a ``(C, H, W)`` tensor to spatial ``shape``."""
    mh = resize_matrix(a.shape[1], shape[0])
    mw = resize_matrix(a.shape[2], shape[1])
    return np.einsum("oh,chw,pw->cop", mh, a, mw, optimize=True)


def bilinear_resize_backward(g: np.ndarray, in_shape: tuple[int, int]) -> np.ndarray:
    mh = resize_matrix(in_shape[0], g.shape[1])
    mw = resize_matrix(in_shape[1], g.shape[2])
    return np.einsum("oh,cop,pw->chw", mh, g, mw, optimize=True)


def bilinear_resize_2x(a: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Double the spatial dims of ``a`` (or resize to ``shape`` for odd sizes).

    Accepts ``(H, W)`` or ``(C, H, W)`` arrays.
    """
    a = np.asarray(a, dtype=float)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    if shape is None:
        shape = (2 * a.shape[1], 2 * a.shape[2])
    out = bilinear_resize(a, shape)
    return out[0] if squeeze else out


def normalize(a: np.ndarray):
    mean = a.mean()
    std = a.std()
    scale = max(std, NORM_EPS)
    return (a - mean) / scale, std


def normalize_backward(g: np.ndarray, y: np.ndarray, std: float) -> np.ndarray:
    if std <= NORM_EPS:
        return (g - g.mean()) / NORM_EPS
    return (g - g.mean() - y * np.mean(g * y)) / std


def _row_columns(xp: np.ndarray, dy: int, k: int, h: int, w: int) -> np.ndarray:
    """im2col for one kernel row: ``(Cin * k, h * w)``."""
    win = sliding_window_view(xp[:, dy : dy + h, :], w, axis=2)  # (Cin, h, k, w)
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(-1, h * w)


def conv2d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation; ``x`` is ``(Cin, H, W)``, kernel ``(Cout, Cin, k, k)``."""
    cout, cin, k, _ = kernel.shape
    _, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    out = np.zeros((cout, h * w))
    # one kernel row at a time bounds the im2col buffer to Cin * k * H * W
    for dy in range(k):
        out += kernel[:, :, dy, :].reshape(cout, cin * k) @ _row_columns(xp, dy, k, h, w)
    return out.reshape(cout, h, w)


def conv2d_backward(g: np.ndarray, x: np.ndarray, kernel: np.ndarray):
    """Gradients of ``conv2d`` w.r.t. its input and kernel."""
    cout, cin, k, _ = kernel.shape
    _, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    g2 = g.reshape(cout, h * w)
    dxp = np.zeros_like(xp)
    dk = np.empty_like(kernel)
    for dy in range(k):
        dk[:, :, dy, :] = (g2 @ _row_columns(xp, dy, k, h, w).T).reshape(cout, cin, k)
        dcols = (kernel[:, :, dy, :].reshape(cout, cin * k).T @ g2).reshape(cin, k, h, w)
        for dx in range(k):
            dxp[:, dy : dy + h, dx : dx + w] += dcols[:, dx]
    return dxp[:, p : p + h, p : p + w], dk


# --- network ---------------------------------------------------------------


@dataclass
class Tape:
    arch: CnnArchitecture
    params: CnnParams
    tanh_out: list = field(default_factory=list)
    normalized: list = field(default_factory=list)
    stds: list = field(default_factory=list)
    pre_resize_shapes: list = field(default_factory=list)


def cnn_forward(params: CnnParams, arch: CnnArchitecture) -> tuple[np.ndarray, Tape]:
    """Logits of shape ``arch.grid_shape`` and the tape needed for ``cnn_backward``."""
    params.check(arch)
    tape = Tape(arch, params)
    h0, w0 = arch.base_shape
    a = (params.beta @ params.dense_w).reshape(arch.dense_channels, h0, w0)
    for k, shape in enumerate(arch.layer_shapes):
        t = np.tanh(a)
        tape.tanh_out.append(t)
        tape.pre_resize_shapes.append(t.shape[1:])
        if k in arch.resize_layers:
            t = bilinear_resize(t, shape)
        y, std = normalize(t)
        tape.normalized.append(y)
        tape.stds.append(std)
        a = conv2d(y, params.kernels[k]) + params.biases[k]
    return a[0], tape


def cnn_backward(tape: Tape, g: np.ndarray) -> CnnParams:
    """Reverse-mode gradient of ``sum(g * logits)`` w.r.t. every parameter."""
    arch, params = tape.arch, tape.params
    g = np.asarray(g, dtype=float)
    if g.shape != arch.grid_shape:
        raise ValueError(f"gradient shape {g.shape} != grid shape {arch.grid_shape}")
    ga = g[None]
    kernels = [None] * 5
    biases = np.zeros(5)
    for k in range(4, -1, -1):
        biases[k] = ga.sum()
        gy, kernels[k] = conv2d_backward(ga, tape.normalized[k], params.kernels[k])
        gt = normalize_backward(gy, tape.normalized[k], tape.stds[k])
        if k in arch.resize_layers:
            gt = bilinear_resize_backward(gt, tape.pre_resize_shapes[k])
        ga = gt * (1.0 - tape.tanh_out[k] ** 2)
    gz = ga.ravel()
    return CnnParams(
        beta=params.dense_w @ gz,
        dense_w=np.outer(params.beta, gz),
        kernels=kernels,
        biases=biases,
    )


# --- checkpoints -----------------------------------------------------------


def dumps_params(params: CnnParams, arch: CnnArchitecture) -> bytes:
    """Serialize: magic, u32 version, u32 header length, JSON architecture, '<f8' values."""
    header = json.dumps(arch.to_dict(), sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
    buf.write(header)
    buf.write(params.flatten().astype("<f8").tobytes())
    return buf.getvalue()


def loads_params(blob: bytes) -> tuple[CnnParams, CnnArchitecture]:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a CNN parameter checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", blob, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos += 8
    arch = CnnArchitecture.from_dict(json.loads(blob[pos : pos + hlen]))
    values = np.frombuffer(blob, dtype="<f8", offset=pos + hlen)
    return CnnParams.unflatten(values.astype(np.float64), arch), arch
