"""Smooth convolutional denoiser with exact input-gradient evaluation.

The network N is a small two-scale U-shaped CNN with softplus activations
(beta-scaled, so it approaches ReLU behaviour while staying C-infinity) and
a global residual connection.  Smoothness matters because the regularizer

    g(x) = 0.5 * ||x - N(x)||^2

is differentiated exactly:

    grad g(x) = (x - N(x)) - J_N(x)^T (x - N(x))

where J_N is the Jacobian of N at x.  The transpose products come from the
taped reverse mode in `autodiff`, never from a frozen-Jacobian shortcut.
The one-step denoiser used in reconstruction is

    D(x) = N(x) + J_N(x)^T (x - N(x)) = x - grad g(x)

and both routes are exposed so they can be checked against each other.

Convolutions are lowered to gather (reflection pad + im2col) and matmul,
with index plans cached per shape.  All shapes are padded internally to the
required divisibility with reflection and cropped back, so callers never
need aligned sizes.  Weights are float32; evaluation follows the dtype of
the input array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import fileio
from .core import ImageGrid
from .errors import ArgumentError, FormatError


# ---------------------------------------------------------------------------
# architecture spec


@dataclass(frozen=True)
class NetworkSpec:
    """Shape of the denoising CNN; one entry in `channels` per scale level."""

    channels: tuple[int, ...] = (16, 32)
    convs_per_level: int = 2
    kernel_size: int = 3
    beta: float = 10.0
    in_channels: int = 1
    out_channels: int = 1
    global_residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) < 1 or any(c < 1 for c in self.channels):
            raise ArgumentError("channels must be a non-empty tuple of positive ints")
        if self.convs_per_level < 1:
            raise ArgumentError("convs_per_level must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ArgumentError("kernel_size must be odd and positive")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ArgumentError("beta must be positive and finite")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ArgumentError("channel counts must be positive")
        if self.global_residual and self.in_channels != self.out_channels:
            raise ArgumentError("global residual needs in_channels == out_channels")

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def divisor(self) -> int:
        return 1 << (self.levels - 1)

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "convs_per_level": self.convs_per_level,
            "kernel_size": self.kernel_size,
            "beta": self.beta,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "global_residual": self.global_residual,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        try:
            return cls(
                channels=tuple(d["channels"]),
                convs_per_level=int(d["convs_per_level"]),
                kernel_size=int(d["kernel_size"]),
                beta=float(d["beta"]),
                in_channels=int(d["in_channels"]),
                out_channels=int(d["out_channels"]),
                global_residual=bool(d["global_residual"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad network spec: {exc}") from exc


def parameter_layout(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list; file layout and flat packing follow it."""
    k2 = spec.kernel_size * spec.kernel_size
    out: list[tuple[str, tuple[int, ...]]] = []

    def conv(name, cin, cout):
        out.append((f"{name}.w", (cout, cin * k2)))
        out.append((f"{name}.b", (cout,)))

    ch = spec.channels
    cin = spec.in_channels
    for j in range(spec.convs_per_level):
        conv(f"enc0.conv{j}", cin if j == 0 else ch[0], ch[0])
    for lvl in range(1, spec.levels):
        conv(f"down{lvl}", ch[lvl - 1], ch[lvl])
        for j in range(spec.convs_per_level):
            conv(f"enc{lvl}.conv{j}", ch[lvl], ch[lvl])
    for lvl in range(spec.levels - 1, 0, -1):
        conv(f"up{lvl}", ch[lvl], ch[lvl - 1])
        for j in range(spec.convs_per_level):
            conv(f"dec{lvl - 1}.conv{j}", ch[lvl - 1], ch[lvl - 1])
    conv("tail", ch[0], spec.out_channels)
    return out


def init_weights(spec: NetworkSpec, seed: int) -> dict[str, np.ndarray]:
    """He-style fan-in init for every conv weight; biases start at zero.

    The tail conv must not start at zero: that would make the network an
    exact identity map, which is a stationary point of the gradient-step
    training loss (both factors of the regularizer gradient vanish there,
    so no parameter direction has slope and the optimizer never moves).
    """
    from . import rng as _rng

    gen = _rng.generator(seed, "weight-init")
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_layout(spec):
        if name.endswith(".b"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = shape[1]
            std = float(np.sqrt(2.0 / fan_in))
            arr = gen.normal(0.0, std, size=shape).astype(np.float32)
        arr.flags.writeable = False
        params[name] = arr
    return params


@dataclass(frozen=True)
class DenoiserModel:
    """Trained weights plus the noise-level descriptor they were fit at."""

    spec: NetworkSpec
    params: dict[str, np.ndarray]
    sigma: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ArgumentError("sigma must be finite and >= 0")
        layout = parameter_layout(self.spec)
        expected = dict(layout)
        if set(self.params) != set(expected):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ArgumentError(f"parameter layout mismatch: missing={missing} extra={extra}")
        canon: dict[str, np.ndarray] = {}
        for name, shape in layout:
            arr = np.asarray(self.params[name], dtype=np.float32)
            if arr.shape != shape:
                raise ArgumentError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ArgumentError(f"parameter {name} contains non-finite values")
            arr = arr.copy()
            arr.flags.writeable = False
            canon[name] = arr
        object.__setattr__(self, "params", canon)

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n, _ in parameter_layout(self.spec)])

    def with_params(self, params: dict[str, np.ndarray]) -> "DenoiserModel":
        return DenoiserModel(self.spec, params, self.sigma)

    def with_sigma(self, sigma: float) -> "DenoiserModel":
        return DenoiserModel(self.spec, self.params, sigma)

    @classmethod
    def from_flat(cls, spec: NetworkSpec, flat: np.ndarray, sigma: float = 0.0) -> "DenoiserModel":
        layout = parameter_layout(spec)
        total = sum(int(np.prod(s)) for _, s in layout)
        flat = np.asarray(flat)
        if flat.shape != (total,):
            raise ArgumentError(f"flat vector has {flat.shape}, expected ({total},)")
        params: dict[str, np.ndarray] = {}
        pos = 0
        for name, shape in layout:
            n = int(np.prod(shape))
            params[name] = flat[pos:pos + n].reshape(shape).astype(np.float32)
            pos += n
        return cls(spec, params, sigma)

    @classmethod
    def fresh(cls, spec: NetworkSpec | None = None, seed: int = 0, sigma: float = 0.0) -> "DenoiserModel":
        spec = spec or NetworkSpec()
        return cls(spec, init_weights(spec, seed), sigma)


# ---------------------------------------------------------------------------
# index plans (cached per shape)

_PLANS: dict[tuple, ad.IndexPlan] = {}


def _reflect_idx(i: np.ndarray, n: int) -> np.ndarray:
    # mirror without edge repetition; valid while |overhang| <= n-1
    i = np.where(i < 0, -i, i)
    return np.where(i >= n, 2 * n - 2 - i, i)


def _pad_plan(h: int, w: int, pt: int, pb: int, pl: int, pr: int) -> ad.IndexPlan:
    key = ("pad", h, w, pt, pb, pl, pr)
    plan = _PLANS.get(key)
    if plan is None:
        if max(pt, pb) > h - 1 or max(pl, pr) > w - 1:
            raise ArgumentError(f"image {h}x{w} too small for reflection pad")
        ry = _reflect_idx(np.arange(-pt, h + pb), h)
        rx = _reflect_idx(np.arange(-pl, w + pr), w)
        plan = ad.IndexPlan((ry[:, None] * w + rx[None, :]).ravel(), h * w)
        _PLANS[key] = plan
    return plan


def _conv_plan(c: int, h: int, w: int, k: int, stride: int) -> ad.IndexPlan:
    """im2col with reflection padding folded into the index map.

    One gather takes (B, C*H*W) straight to (B, C*k*k*Ho*Wo); the mirrored
    border never materializes.
    """
    key = ("conv", c, h, w, k, stride)
    plan = _PLANS.get(key)
    if plan is None:
        p = k // 2
        if p > h - 1 or p > w - 1:
            raise ArgumentError(f"image {h}x{w} too small for kernel {k}")
        ho = (h + 2 * p - k) // stride + 1
        wo = (w + 2 * p - k) // stride + 1
        ky, kx = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
        oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
        ry = _reflect_idx(oy.ravel()[None, :] * stride + ky.ravel()[:, None] - p, h)
        rx = _reflect_idx(ox.ravel()[None, :] * stride + kx.ravel()[:, None] - p, w)
        pix = ry * w + rx                                   # (k*k, Ho*Wo)
        idx = (np.arange(c)[:, None, None] * (h * w) + pix[None, :, :])
        plan = ad.IndexPlan(idx.ravel(), c * h * w)
        _PLANS[key] = plan
    return plan


def _upsample_plan(h: int, w: int) -> ad.IndexPlan:
    key = ("up2", h, w)
    plan = _PLANS.get(key)
    if plan is None:
        oy = np.arange(2 * h) // 2
        ox = np.arange(2 * w) // 2
        plan = ad.IndexPlan((oy[:, None] * w + ox[None, :]).ravel(), h * w)
        _PLANS[key] = plan
    return plan


def _crop_plan(hp: int, wp: int, h: int, w: int) -> ad.IndexPlan:
    key = ("crop", hp, wp, h, w)
    plan = _PLANS.get(key)
    if plan is None:
        ys = np.arange(h)
        xs = np.arange(w)
        plan = ad.IndexPlan((ys[:, None] * wp + xs[None, :]).ravel(), hp * wp)
        _PLANS[key] = plan
    return plan


# ---------------------------------------------------------------------------
# traced network forward


def _conv2d(x: ad.Tensor, w: ad.Tensor, b: ad.Tensor, k: int, stride: int) -> ad.Tensor:
    bsz, c, h, wd = x.shape
    p = k // 2
    flat = ad.reshape(x, (bsz, c * h * wd))
    cols = ad.gather(flat, _conv_plan(c, h, wd, k, stride))
    ho = (h + 2 * p - k) // stride + 1
    wo = (wd + 2 * p - k) // stride + 1
    cols = ad.reshape(cols, (bsz, c * k * k, ho * wo))
    y = ad.matmul(w, cols)                      # (B, Cout, Ho*Wo)
    cout = w.shape[0]
    y = ad.add(y, ad.reshape(b, (1, cout, 1)))
    return ad.reshape(y, (bsz, cout, ho, wo))


def _upsample2(x: ad.Tensor) -> ad.Tensor:
    bsz, c, h, w = x.shape
    flat = ad.reshape(x, (bsz * c, h * w))
    up = ad.gather(flat, _upsample_plan(h, w))
    return ad.reshape(up, (bsz, c, 2 * h, 2 * w))


def _pad_bottom_right(x: ad.Tensor, ph: int, pw: int) -> ad.Tensor:
    if ph == 0 and pw == 0:
        return x
    bsz, c, h, w = x.shape
    flat = ad.reshape(x, (bsz * c, h * w))
    padded = ad.gather(flat, _pad_plan(h, w, 0, ph, 0, pw))
    return ad.reshape(padded, (bsz, c, h + ph, w + pw))


def _crop_to(x: ad.Tensor, h: int, w: int) -> ad.Tensor:
    bsz, c, hp, wp = x.shape
    if hp == h and wp == w:
        return x
    flat = ad.reshape(x, (bsz * c, hp * wp))
    cropped = ad.gather(flat, _crop_plan(hp, wp, h, w))
    return ad.reshape(cropped, (bsz, c, h, w))


def network_forward_tensor(x: ad.Tensor, params: dict[str, ad.Tensor],
                           spec: NetworkSpec) -> ad.Tensor:
    """Traced N(x) on a (B, C, H, W) tensor; pads/crops internally."""
    if len(x.shape) != 4 or x.shape[1] != spec.in_channels:
        raise ArgumentError(f"expected (B, {spec.in_channels}, H, W) input, got {x.shape}")
    _, _, h, w = x.shape
    if h < 2 or w < 2:
        raise ArgumentError("input smaller than 2x2")
    dtype = x.value.dtype
    beta = np.asarray(spec.beta, dtype=dtype)
    inv_beta = np.asarray(1.0 / spec.beta, dtype=dtype)
    k = spec.kernel_size

    def act(t):
        return ad.mul(ad.softplus(ad.mul(t, beta)), inv_beta)

    def conv(t, name, stride=1):
        return _conv2d(t, params[f"{name}.w"], params[f"{name}.b"], k, stride)

    div = spec.divisor
    ph = (-h) % div
    pw = (-w) % div
    x_in = _pad_bottom_right(x, ph, pw)

    hcur = x_in
    for j in range(spec.convs_per_level):
        hcur = act(conv(hcur, f"enc0.conv{j}"))
    skips = [hcur]
    for lvl in range(1, spec.levels):
        hcur = act(conv(hcur, f"down{lvl}", stride=2))
        for j in range(spec.convs_per_level):
            hcur = act(conv(hcur, f"enc{lvl}.conv{j}"))
        if lvl < spec.levels - 1:
            skips.append(hcur)
    for lvl in range(spec.levels - 1, 0, -1):
        hcur = _upsample2(hcur)
        hcur = act(conv(hcur, f"up{lvl}"))
        hcur = ad.add(hcur, skips.pop())
        for j in range(spec.convs_per_level):
            hcur = act(conv(hcur, f"dec{lvl - 1}.conv{j}"))
    y = conv(hcur, "tail")
    if spec.global_residual:
        y = ad.add(x_in, y)
    return _crop_to(y, h, w)


def _params_as_tensors(model: DenoiserModel, dtype) -> dict[str, ad.Tensor]:
    return {name: ad.constant(arr.astype(dtype, copy=False))
            for name, arr in model.params.items()}


# ---------------------------------------------------------------------------
# public single-image operations


def _unwrap(x) -> tuple[np.ndarray, object]:
    if isinstance(x, ImageGrid):
        return x.as_float64(), x
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ArgumentError(f"expected a 2D image, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr, None


def _rewrap(values: np.ndarray, template) -> object:
    if template is None:
        return values
    return template.with_values(values)


def network_forward(x, model: DenoiserModel):
    """N(x) on one image; returns the same container type as the input."""
    arr, template = _unwrap(x)
    params = _params_as_tensors(model, arr.dtype)
    t = ad.constant(arr.reshape(1, 1, *arr.shape))
    out = network_forward_tensor(t, params, model.spec)
    return _rewrap(out.value.reshape(arr.shape), template)


def network_vjp(x, v, model: DenoiserModel):
    """J_N(x)^T v via one reverse sweep through the traced forward."""
    arr, template = _unwrap(x)
    varr, _ = _unwrap(v)
    if varr.shape != arr.shape:
        raise ArgumentError("cotangent shape must match image shape")
    params = _params_as_tensors(model, arr.dtype)
    t = ad.leaf(arr.reshape(1, 1, *arr.shape))
    out = network_forward_tensor(t, params, model.spec)
    seed = ad.constant(varr.reshape(out.shape).astype(arr.dtype))
    g = ad.backward(out, seed, traced=False)[t]
    return _rewrap(g.value.reshape(arr.shape), template)


@dataclass(frozen=True)
class RegularizerEval:
    """Value and exact gradient of g(x) = 0.5 ||x - N(x)||^2."""

    value: float
    gradient: object = field(repr=False)

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value >= 0):
            raise ArgumentError("regularizer value must be finite and >= 0")


def regularizer(x, model: DenoiserModel) -> RegularizerEval:
    """g and grad g with differentiation through both occurrences of x."""
    arr, template = _unwrap(x)
    params = _params_as_tensors(model, arr.dtype)
    t = ad.leaf(arr.reshape(1, 1, *arr.shape))
    n = network_forward_tensor(t, params, model.spec)
    r = ad.sub(t, n)
    half = np.asarray(0.5, dtype=arr.dtype)
    gval = ad.mul(ad.sum_all(ad.mul(r, r)), half)
    grad_t = ad.backward(gval, traced=False)[t]
    return RegularizerEval(float(gval.value), _rewrap(grad_t.value.reshape(arr.shape), template))


def gradient_step_denoise(x, model: DenoiserModel):
    """D(x) = N(x) + J_N(x)^T (x - N(x)), the residual route.

    Agrees with x - grad g(x) from `regularizer` up to float roundoff; the
    two are computed independently so that agreement is a real check.
    """
    arr, template = _unwrap(x)
    params = _params_as_tensors(model, arr.dtype)
    t = ad.leaf(arr.reshape(1, 1, *arr.shape))
    n = network_forward_tensor(t, params, model.spec)
    r_val = t.value - n.value
    jtr = ad.backward(n, ad.constant(r_val), traced=False)[t]
    d = n.value + jtr.value
    return _rewrap(d.reshape(arr.shape), template)


# ---------------------------------------------------------------------------
# persistence


def save_model(path, model: DenoiserModel) -> None:
    fileio.write_weights(path, model.sigma, model.spec.to_dict(), model.params)


def load_model(path) -> DenoiserModel:
    sigma, spec_dict, tensors = fileio.read_weights(path)
    spec = NetworkSpec.from_dict(spec_dict)
    expected = parameter_layout(spec)
    names = list(tensors)
    if names != [n for n, _ in expected]:
        raise FormatError("weight file tensor order does not match the architecture layout")
    try:
        return DenoiserModel(spec, tensors, sigma)
    except ArgumentError as exc:
        raise FormatError(str(exc)) from exc


def spec_json(spec: NetworkSpec) -> str:
    return json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
