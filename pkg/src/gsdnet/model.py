"""A tiny encoder-decoder segmentation network in plain numpy.

Architecture (feature width F, input channels C_in, classes C):

    conv3x3(C_in,F)+relu  conv3x3(F,F)+relu          encoder
    maxpool2x2                                        downsample
    conv3x3(F,2F)+relu    conv3x3(2F,2F)+relu         middle
    upsample2x2 (nearest)                             upsample
    concat(skip, up) -> 3F
    conv3x3(3F,F)+relu    conv3x3(F,F)+relu           decoder
    conv1x1(F,C)                                      head

All convolutions use zero 'same' padding; everything runs in float64.
Forward records a tape; :func:`backward` replays it with hand-derived
gradients, exact up to the usual subgradient conventions (relu at 0 and
max-pool ties route to the first window element).

The loss-gradient helpers at the bottom produce d(loss)/d(logits) for
the cross-entropy, Dice, and symmetric-KL terms with the same clamping
rules as the forward losses, so backprop through the network matches
finite differences of the scalar losses.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grids import PROB_FLOOR, one_hot

MODEL_MAGIC = b"GSDM"
MODEL_VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_DTYPE_CODES = {"f32": 0, "f64": 1}


@dataclass
class ModelParams:
    """Named parameter arrays plus the hyperparameters that shape them."""

    c_in: int
    num_classes: int
    features: int
    layers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self):
        return ModelParams(self.c_in, self.num_classes, self.features,
                           {k: v.copy() for k, v in self.layers.items()})


def layer_specs(c_in, num_classes, features):
    """Ordered (name, shape) table; kernels are (kh, kw, in, out)."""
    f = features
    return [
        ("enc_a_k", (3, 3, c_in, f)), ("enc_a_b", (f,)),
        ("enc_b_k", (3, 3, f, f)), ("enc_b_b", (f,)),
        ("mid_a_k", (3, 3, f, 2 * f)), ("mid_a_b", (2 * f,)),
        ("mid_b_k", (3, 3, 2 * f, 2 * f)), ("mid_b_b", (2 * f,)),
        ("dec_a_k", (3, 3, 3 * f, f)), ("dec_a_b", (f,)),
        ("dec_b_k", (3, 3, f, f)), ("dec_b_b", (f,)),
        ("head_k", (1, 1, f, num_classes)), ("head_b", (num_classes,)),
    ]


def init_params(rng, c_in=1, num_classes=2, features=8):
    """Fan-in scaled uniform kernels, zero biases."""
    if c_in < 1 or num_classes < 2 or features < 1:
        raise ValueError(f"bad model shape: c_in={c_in} classes={num_classes} features={features}")
    layers = {}
    for name, shape in layer_specs(c_in, num_classes, features):
        if name.endswith("_b"):
            layers[name] = np.zeros(shape)
        else:
            fan_in = shape[0] * shape[1] * shape[2]
            bound = np.sqrt(6.0 / fan_in)
            layers[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(c_in, num_classes, features, layers)


def num_params(params):
    return int(sum(v.size for v in params.layers.values()))


def _conv(x, k, b):
    """Same-padded convolution as one matmul per kernel tap.

    Looping over the kh*kw taps keeps peak memory at one activation
    tensor instead of the kh*kw-times larger im2col matrix, and the
    small GEMMs are bandwidth-friendly at these sizes.
    """
    n, h, w, _ = x.shape
    kh, kw, ci, co = k.shape
    if kh == 1 and kw == 1:
        return (x.reshape(-1, ci) @ k[0, 0]).reshape(n, h, w, co) + b
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    y = np.zeros((n, h, w, co))
    for di in range(kh):
        for dj in range(kw):
            y += xp[:, di : di + h, dj : dj + w, :] @ k[di, dj]
    return y + b


def _conv_back(dy, x, k):
    n, h, w, _ = dy.shape
    kh, kw, ci, co = k.shape
    dy2 = np.ascontiguousarray(dy).reshape(-1, co)
    db = dy2.sum(axis=0)
    if kh == 1 and kw == 1:
        dk = (x.reshape(-1, ci).T @ dy2).reshape(k.shape)
        dx = (dy2 @ k[0, 0].T).reshape(x.shape)
        return dk, db, dx
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    dk = np.empty_like(k)
    dxp = np.zeros_like(xp)
    for di in range(kh):
        for dj in range(kw):
            xt = np.ascontiguousarray(xp[:, di : di + h, dj : dj + w, :])
            dk[di, dj] = xt.reshape(-1, ci).T @ dy2
            dxp[:, di : di + h, dj : dj + w, :] += dy @ k[di, dj].T
    return dk, db, dxp[:, ph : ph + h, pw : pw + w, :]


def _pool(x):
    n, h, w, c = x.shape
    v = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, h // 2, w // 2, c, 4)
    idx = v.argmax(axis=-1)  # ties take the first window element
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def _pool_back(dy, idx, shape):
    n, h, w, c = shape
    dv = np.zeros((n, h // 2, w // 2, c, 4))
    np.put_along_axis(dv, idx[..., None].astype(np.int64), dy[..., None], axis=-1)
    return dv.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)


def _upsample(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample_back(dy):
    n, h, w, c = dy.shape
    return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


@dataclass
class Tape:
    """Intermediate activations needed by the backward pass."""

    x: np.ndarray
    masks: dict = field(default_factory=dict)  # relu input > 0, per conv
    inputs: dict = field(default_factory=dict)  # input tensor of each conv
    pool_idx: np.ndarray = None
    pool_shape: tuple = None
    batched: bool = True


def _promote(x, c_in):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, :, :, None], False
    if x.ndim == 3:
        if x.shape[2] == c_in:
            return x[None], False
        if c_in == 1:
            return x[:, :, :, None], True
        raise ValueError(f"cannot interpret shape {x.shape} with c_in={c_in}")
    if x.ndim == 4:
        if x.shape[3] != c_in:
            raise ValueError(f"channel axis {x.shape[3]} != c_in {c_in}")
        return x, True
    raise ValueError(f"expected 2 to 4 dims, got shape {x.shape}")


def forward(params, x):
    """Logits for one image or a batch; returns (logits, tape).

    Rank-2 input is one grayscale image, rank-3 is one multichannel image
    when the last axis matches c_in (else a batch of grayscale), rank-4 is
    a batch.  Height and width must be even for the pooling stage.
    """
    x4, batched = _promote(x, params.c_in)
    if x4.shape[1] % 2 or x4.shape[2] % 2:
        raise ValueError(f"height and width must be even, got {x4.shape[1:3]}")
    L = params.layers
    t = Tape(x=x4, batched=batched)

    def conv_relu(name, inp):
        z = _conv(inp, L[name + "_k"], L[name + "_b"])
        t.inputs[name] = inp
        t.masks[name] = z > 0
        return np.maximum(z, 0.0)

    a1 = conv_relu("enc_a", x4)
    a2 = conv_relu("enc_b", a1)
    p, idx = _pool(a2)
    t.pool_idx, t.pool_shape = idx, a2.shape
    a3 = conv_relu("mid_a", p)
    a4 = conv_relu("mid_b", a3)
    up = _upsample(a4)
    cat = np.concatenate([a2, up], axis=-1)
    a5 = conv_relu("dec_a", cat)
    a6 = conv_relu("dec_b", a5)
    t.inputs["head"] = a6
    logits = _conv(a6, L["head_k"], L["head_b"])
    return (logits if batched else logits[0]), t


def backward(params, tape, d_logits):
    """Parameter gradients for a cotangent of the logits."""
    L = params.layers
    t = tape
    g = {}
    dy = np.asarray(d_logits, dtype=np.float64)
    if not t.batched:
        dy = dy[None]

    def conv_relu_back(name, dy):
        dz = dy * t.masks[name]
        dk, db, dx = _conv_back(dz, t.inputs[name], L[name + "_k"])
        g[name + "_k"], g[name + "_b"] = dk, db
        return dx

    dk, db, d6 = _conv_back(dy, t.inputs["head"], L["head_k"])
    g["head_k"], g["head_b"] = dk, db
    d5 = conv_relu_back("dec_b", d6)
    dcat = conv_relu_back("dec_a", d5)
    f = params.features
    d_skip = dcat[..., :f]
    d_up = dcat[..., f:]
    d4 = _upsample_back(d_up)
    d3 = conv_relu_back("mid_b", d4)
    dp = conv_relu_back("mid_a", d3)
    d2 = _pool_back(dp, t.pool_idx, t.pool_shape) + d_skip
    d1 = conv_relu_back("enc_b", d2)
    conv_relu_back("enc_a", d1)
    return g


def zeros_like_params(params):
    return {k: np.zeros_like(v) for k, v in params.layers.items()}


def accumulate(grads, new):
    for k, v in new.items():
        grads[k] += v
    return grads


# --- gradients of the scalar losses with respect to logits ---------------

def softmax_grad_to_logits(p, d_p):
    """Pull a cotangent on probabilities back through the softmax."""
    inner = (d_p * p).sum(axis=-1, keepdims=True)
    return p * (d_p - inner)


def ce_grad_at_logits(p, target, pixel_weight):
    """Gradient of sum_px w * (-log p[target]) with respect to logits."""
    c = p.shape[-1]
    active = np.take_along_axis(p, np.asarray(target)[..., None], axis=-1)[..., 0] > PROB_FLOOR
    w = np.asarray(pixel_weight) * active
    return (p - one_hot(target, c)) * w[..., None]


def symkl_grad_at_logits(p, q, pixel_weight):
    """Gradient of sum_px w * symKL(p, q) with respect to p's logits."""
    lp = np.log(np.clip(p, PROB_FLOOR, 1.0))
    lq = np.log(np.clip(q, PROB_FLOOR, 1.0))
    active = p > PROB_FLOOR
    d_p = (lp - lq) + np.where(active, 1.0 - q / np.clip(p, PROB_FLOOR, None), 0.0)
    return softmax_grad_to_logits(p, d_p * np.asarray(pixel_weight)[..., None])


def dice_grad_at_logits(p, target, foreground=1, eps=1e-5, scale=1.0):
    """Gradient of scale * dice_loss(p, target) with respect to logits."""
    pf = p[..., foreground]
    yf = (np.asarray(target) == foreground).astype(np.float64)
    num = 2.0 * (pf * yf).sum() + eps
    den = pf.sum() + yf.sum() + eps
    d_pf = -(2.0 * yf * den - num) / (den * den)
    d_p = np.zeros_like(p)
    d_p[..., foreground] = d_pf * scale
    return softmax_grad_to_logits(p, d_p)


# --- checkpoint container ------------------------------------------------

def save_model(params, path, dtype="f32"):
    """Write parameters to a binary container; f32 by default, f64 when a
    byte-exact reload of the training state is required."""
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"dtype must be f32 or f64, got {dtype!r}")
    code = _DTYPE_CODES[dtype]
    np_dtype = _DTYPES[code]
    specs = layer_specs(params.c_in, params.num_classes, params.features)
    head = [MODEL_MAGIC, struct.pack("<BBHHHI", MODEL_VERSION, code, params.c_in,
                                     params.num_classes, params.features, len(specs))]
    body = []
    for name, shape in specs:
        arr = params.layers[name]
        if arr.shape != shape:
            raise ValueError(f"layer {name}: shape {arr.shape} != expected {shape}")
        nb = name.encode()
        head.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        body.append(np.ascontiguousarray(arr, dtype=np_dtype).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(head) + b"".join(body))


def load_model(path):
    """Read a parameter container back; always returns float64 arrays."""
    from .formats import FormatError  # local import to avoid a cycle

    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    off = 4
    try:
        version, code, c_in, num_classes, features, n_layers = struct.unpack_from(
            "<BBHHHI", data, off)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    off += struct.calcsize("<BBHHHI")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    expected = layer_specs(c_in, num_classes, features)
    if n_layers != len(expected):
        raise FormatError(f"{path}: layer count {n_layers} != expected {len(expected)}")
    table = []
    for name, shape in expected:
        try:
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            got = data[off : off + name_len].decode()
            off += name_len
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: truncated layer table") from exc
        if got != name or dims != shape:
            raise FormatError(f"{path}: layer {got} {dims} != expected {name} {shape}")
        table.append((name, dims))
    np_dtype = np.dtype(_DTYPES[code])
    need = off + sum(int(np.prod(s)) * np_dtype.itemsize for _, s in table)
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    layers = {}
    for name, shape in table:
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype=np_dtype, count=n, offset=off)
        off += n * np_dtype.itemsize
        layers[name] = arr.reshape(shape).astype(np.float64)
    return ModelParams(c_in, num_classes, features, layers)
