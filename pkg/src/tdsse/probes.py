"""Reconstruction attackers: closed-form ridge regression and a small CNN.

Both map the low-frequency proxy of a ciphertext tile to the proxy of the
plaintext tile. The CNN is written directly in numpy (im2col convolutions,
hand-derived backward pass, Adam) so that every run is bit-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FormatError

PROXY = 16
LUMA = np.array([0.299, 0.587, 0.114])


def to_lowfreq(tile, channels: int = 1) -> np.ndarray:
    """Grayscale, mean-pool to 16x16, scale to [0, 1].

    ``tile`` is either raw tile bytes (square, ``channels`` interleaved) or an
    ``(s, s, C)`` / ``(s, s)`` array. ``s`` must be a multiple of 16; for the
    default 64x64 tile this is 4x4 block averaging.
    """
    if isinstance(tile, (bytes, bytearray, memoryview)):
        n = len(tile)
        if channels not in (1, 3) or n % channels:
            raise FormatError(f"{n} bytes is not a whole number of {channels}-channel pixels")
        side = int(round((n // channels) ** 0.5))
        if side * side * channels != n:
            raise FormatError(f"{n} bytes is not a square {channels}-channel tile")
        arr = np.frombuffer(bytes(tile), dtype=np.uint8).reshape(side, side, channels)
    else:
        arr = np.asarray(tile)
        if arr.ndim == 2:
            arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[2] not in (1, 3):
        raise FormatError(f"expected a square 1- or 3-channel tile, got shape {arr.shape}")
    side = arr.shape[0]
    if side % PROXY:
        raise FormatError(f"tile side {side} is not a multiple of {PROXY}")
    arr = arr.astype(np.float64)
    gray = arr[:, :, 0] if arr.shape[2] == 1 else arr @ LUMA
    k = side // PROXY
    return gray.reshape(PROXY, k, PROXY, k).mean(axis=(1, 3)) / 255.0


def _flat(tiles) -> np.ndarray:
    x = np.asarray(tiles, dtype=np.float64)
    return x.reshape(x.shape[0], -1)


@dataclass
class RidgeModel:
    weights: np.ndarray  # (in, out)
    bias: np.ndarray
    lam: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, self.weights.shape[0])
        return np.clip(flat @ self.weights + self.bias, 0.0, 1.0).reshape(x.shape)


def fit_ridge(inputs, targets, lam: float = 1.0) -> RidgeModel:
    """Closed-form ridge on centered data: ``W = (Xc'Xc + lam I)^-1 Xc'Yc``."""
    X, Y = _flat(inputs), _flat(targets)
    if X.shape[0] < 1 or X.shape[0] != Y.shape[0]:
        raise ValueError("need at least one paired sample")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - x_mean, Y - y_mean
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    if lam == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise np.linalg.LinAlgError("normal equations are singular with lam=0; need lam > 0 or more samples")
    W = np.linalg.solve(A, Xc.T @ Yc)
    return RidgeModel(W, y_mean - x_mean @ W, float(lam))


# ---------------------------------------------------------------------------
# CNN: conv(1->16) ReLU conv(16->16) ReLU conv(16->1), 3x3 kernels, padding 1


CNN_LAYERS = ((1, 16), (16, 16), (16, 1))


def _im2col(x):
    # x: (N, H, W, C) -> (N*H*W, C*9), column order (C, kh, kw)
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return win.reshape(n * h * w, c * 9)


def _col2im(dcols, shape):
    n, h, w, c = shape
    d = dcols.reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, h + 2, w + 2, c))
    for di in range(3):
        for dj in range(3):
            dxp[:, di:di + h, dj:dj + w, :] += d[..., di, dj]
    return dxp[:, 1:-1, 1:-1, :]


class CnnModel:
    """Three-layer 3x3 convolutional reconstructor on 16x16 inputs."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params
        self.loss_history: list[float] = []

    @classmethod
    def init(cls, seed: int) -> "CnnModel":
        rng = np.random.default_rng(seed)
        params = {}
        for k, (cin, cout) in enumerate(CNN_LAYERS, start=1):
            bound = 1.0 / np.sqrt(cin * 9)
            params[f"w{k}"] = rng.uniform(-bound, bound, (cout, cin, 3, 3))
            params[f"b{k}"] = rng.uniform(-bound, bound, cout)
        return cls(params)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _forward(self, x):
        h = np.asarray(x, dtype=np.float64).reshape(-1, PROXY, PROXY, 1)
        cache = []
        last = len(CNN_LAYERS)
        for k in range(1, last + 1):
            w, b = self.params[f"w{k}"], self.params[f"b{k}"]
            cols = _im2col(h)
            z = cols @ w.reshape(w.shape[0], -1).T + b
            z = z.reshape(h.shape[0], PROXY, PROXY, w.shape[0])
            cache.append((h.shape, cols, z))
            h = np.maximum(z, 0.0) if k < last else z
        return h[..., 0], cache

    def forward(self, x) -> np.ndarray:
        """Raw (unclamped) outputs, shape ``(N, 16, 16)``."""
        return self._forward(x)[0]

    def loss_and_grad(self, x, y):
        """Mean squared error and its gradient with respect to every parameter."""
        out, cache = self._forward(x)
        y = np.asarray(y, dtype=np.float64).reshape(out.shape)
        diff = out - y
        loss = float(np.mean(diff ** 2))
        g = (2.0 / diff.size) * diff[..., None]
        grads = {}
        last = len(CNN_LAYERS)
        for k in range(last, 0, -1):
            shape, cols, z = cache[k - 1]
            if k < last:
                g = g * (z > 0)
            w = self.params[f"w{k}"]
            gflat = g.reshape(-1, w.shape[0])
            grads[f"w{k}"] = (gflat.T @ cols).reshape(w.shape)
            grads[f"b{k}"] = gflat.sum(axis=0)
            if k > 1:
                g = _col2im(gflat @ w.reshape(w.shape[0], -1), shape)
        return loss, grads

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.clip(self.forward(x), 0.0, 1.0)
        return out.reshape(x.shape)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        self.t += 1
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def fit_cnn(inputs, targets, epochs: int = 10, lr: float = 1e-3, batch: int = 64, seed: int = 0) -> CnnModel:
    """Train with Adam on MSE; initialization and shuffle order come from ``seed``.

    ``model.loss_history`` holds the mean training loss of each epoch.
    """
    X = np.asarray(inputs, dtype=np.float64).reshape(-1, PROXY, PROXY)
    Y = np.asarray(targets, dtype=np.float64).reshape(-1, PROXY, PROXY)
    if X.shape[0] < 1 or X.shape[0] != Y.shape[0]:
        raise ValueError("need at least one paired sample")
    model = CnnModel.init(seed)
    opt = Adam(lr=lr)
    rng = np.random.default_rng(seed + 1)
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = model.loss_and_grad(X[idx], Y[idx])
            opt.step(model.params, grads)
            total += loss * idx.size
        model.loss_history.append(total / n)
    return model


def predict(model, x) -> np.ndarray:
    """Clamped prediction for one ``(16, 16)`` tile or a batch ``(N, 16, 16)``."""
    return model.predict(x)


# ---------------------------------------------------------------------------
# flat binary model files: magic, kind, array count, then per array
# (ndim u8, dims u32..., float64 LE data)

MODEL_MAGIC = b"TDSM1"
_KINDS = {0: "ridge", 1: "cnn"}


def model_to_bytes(model) -> bytes:
    if isinstance(model, RidgeModel):
        kind, arrays = 0, [model.weights, model.bias, np.array(model.lam)]
    elif isinstance(model, CnnModel):
        kind = 1
        arrays = [model.params[f"{p}{k}"] for k in range(1, len(CNN_LAYERS) + 1) for p in "wb"]
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    out = bytearray(MODEL_MAGIC + struct.pack("<BI", kind, len(arrays)))
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        out += struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
        out += a.tobytes()
    return bytes(out)


def model_from_bytes(raw: bytes):
    if raw[:5] != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    try:
        kind, count = struct.unpack_from("<BI", raw, 5)
        pos = 10
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(raw):
                raise FormatError("model file truncated")
            arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64))
            pos += 8 * size
    except struct.error as exc:
        raise FormatError(f"model file truncated: {exc}") from exc
    if kind not in _KINDS:
        raise FormatError(f"unknown model kind {kind}")
    if kind == 0:
        w, b, lam = arrays
        return RidgeModel(w, b, float(lam))
    names = [f"{p}{k}" for k in range(1, len(CNN_LAYERS) + 1) for p in "wb"]
    return CnnModel(dict(zip(names, arrays)))


def save_model(model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())
