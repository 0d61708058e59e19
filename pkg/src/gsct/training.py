"""L1 training of the gradient-step denoiser, plus PSNR evaluation.

The optimized target is the full gradient-step output

    D(x) = x - grad g(x),   g(x) = 0.5 ||x - N(x)||^2

so each training step differentiates through the gradient of g: the loss
backward pass runs over the tape produced by the inner backward pass
(gradient-of-VJP).  A flag switches the loss to the raw network output for
comparison runs.

Optimizer is adaptive moment estimation with the conventional
(0.9, 0.999, 1e-8) constants: first and second moment running averages
with bias correction,

    w <- w - lr * m_hat / (sqrt(v_hat) + eps).

Everything is deterministic under a fixed seed: epoch shuffles and crop
offsets come from counter-based streams, updates are strictly sequential,
and weights stay float32 end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng
from .core import ImageGrid
from .dataset import load_pair, manifest_samples
from .denoiser import (DenoiserModel, gradient_step_denoise, network_forward,
                       network_forward_tensor)
from .errors import ArgumentError, NumericalError


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 63
    learning_rate: float = 5e-5
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    crop_size: int = 64
    rng_seed: int = 0
    loss_target: str = "denoised"   # "denoised" trains D, "network" trains N

    def __post_init__(self):
        if self.epochs < 1:
            raise ArgumentError("epochs must be >= 1")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            # zero is allowed so a no-op run can serve as a control
            raise ArgumentError("learning_rate must be finite and >= 0")
        if self.batch_size < 1:
            raise ArgumentError("batch_size must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ArgumentError("moment constants must lie in (0, 1)")
        if self.eps <= 0:
            raise ArgumentError("eps must be > 0")
        if self.crop_size < 4:
            raise ArgumentError("crop_size must be >= 4")
        if self.loss_target not in ("denoised", "network"):
            raise ArgumentError("loss_target must be 'denoised' or 'network'")


def psnr(x, reference, data_range: float = 0.15) -> float:
    """20 log10(range) - 10 log10(MSE); +inf when the images are identical.

    The default range is the width of the display window the images are
    judged in (0 to 0.15 mm^-1).
    """
    if not data_range > 0:
        raise ArgumentError("data_range must be > 0")
    xv = x.as_float64() if isinstance(x, ImageGrid) else np.asarray(x, np.float64)
    rv = (reference.as_float64() if isinstance(reference, ImageGrid)
          else np.asarray(reference, np.float64))
    if xv.shape != rv.shape:
        raise ArgumentError(f"shape mismatch {xv.shape} vs {rv.shape}")
    mse = float(np.mean((xv - rv) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(data_range) - 10.0 * math.log10(mse)


# ---------------------------------------------------------------------------
# loss graph


def _batch_loss(noisy: np.ndarray, clean: np.ndarray,
                params: dict[str, ad.Tensor], model: DenoiserModel,
                loss_target: str) -> ad.Tensor:
    """Mean absolute error of the chosen output over a (B, H, W) batch."""
    b, h, w = noisy.shape
    x = ad.leaf(noisy.reshape(b, 1, h, w))
    n = network_forward_tensor(x, params, model.spec)
    if loss_target == "denoised":
        r = ad.sub(x, n)
        half = np.asarray(0.5, dtype=noisy.dtype)
        gval = ad.mul(ad.sum_all(ad.mul(r, r)), half)
        gx = ad.backward(gval, traced=True, wrt=[x])[x]
        out = ad.sub(x, gx)
    else:
        out = n
    resid = ad.sub(out, ad.constant(clean.reshape(b, 1, h, w)))
    scale = np.asarray(1.0 / resid.value.size, dtype=noisy.dtype)
    return ad.mul(ad.sum_all(ad.abs_(resid)), scale)


def _crop(arr: np.ndarray, y0: int, x0: int, c: int) -> np.ndarray:
    return arr[y0:y0 + c, x0:x0 + c]


def _epoch_batches(samples: list[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
                   epoch: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic shuffled crops grouped into batches."""
    gen = rng.generator(cfg.rng_seed, "train-epoch", epoch)
    order = gen.permutation(len(samples))
    crops = []
    for i in order:
        noisy, clean = samples[i]
        h, w = noisy.shape
        c = min(cfg.crop_size, h, w)
        y0 = int(gen.integers(0, h - c + 1))
        x0 = int(gen.integers(0, w - c + 1))
        crops.append((_crop(noisy, y0, x0, c), _crop(clean, y0, x0, c)))
    batches = []
    for start in range(0, len(crops), cfg.batch_size):
        chunk = crops[start:start + cfg.batch_size]
        batches.append((np.stack([a for a, _ in chunk]), np.stack([b for _, b in chunk])))
    return batches


def _load_split(manifest: dict, dataset_dir, split: str) -> list[tuple[np.ndarray, np.ndarray]]:
    rows = manifest_samples(manifest, split)
    out = []
    for row in rows:
        noisy, clean = load_pair(dataset_dir, row)
        out.append((noisy.values.astype(np.float32), clean.values.astype(np.float32)))
    return out


def _validate(weights: dict[str, np.ndarray], model: DenoiserModel,
              val: list[tuple[np.ndarray, np.ndarray]], loss_target: str) -> tuple[float, float]:
    snapshot = model.with_params(weights)
    l1_sum = 0.0
    psnr_sum = 0.0
    n_px = 0
    for noisy, clean in val:
        if loss_target == "denoised":
            den = gradient_step_denoise(noisy, snapshot)
        else:
            den = network_forward(noisy, snapshot)
        l1_sum += float(np.sum(np.abs(den - clean)))
        n_px += clean.size
        psnr_sum += psnr(den, clean)
    return l1_sum / n_px, psnr_sum / len(val)


def train(manifest: dict, dataset_dir, model: DenoiserModel,
          cfg: TrainConfig) -> tuple[DenoiserModel, list[dict]]:
    """Fit the model on the manifest's train split.

    Returns the weights with the lowest validation L1 seen across epochs
    and the per-epoch log (epoch, train_l1, val_l1, val_psnr).  Aborts if
    the loss ever turns non-finite rather than optimizing on garbage.
    """
    train_samples = _load_split(manifest, dataset_dir, "train")
    val_samples = _load_split(manifest, dataset_dir, "val")
    if not train_samples:
        raise ArgumentError("train split is empty")
    if not val_samples:
        raise ArgumentError("val split is empty")

    weights = {k: v.copy() for k, v in model.params.items()}
    m1 = {k: np.zeros_like(v) for k, v in weights.items()}
    m2 = {k: np.zeros_like(v) for k, v in weights.items()}
    lr = np.float32(cfg.learning_rate)
    b1 = np.float32(cfg.beta1)
    b2 = np.float32(cfg.beta2)
    eps = np.float32(cfg.eps)
    step = 0

    best_val = math.inf
    best_weights = {k: v.copy() for k, v in weights.items()}
    log: list[dict] = []

    for epoch in range(cfg.epochs):
        epoch_l1 = 0.0
        epoch_px = 0
        for noisy_b, clean_b in _epoch_batches(train_samples, cfg, epoch):
            params = {k: ad.leaf(v) for k, v in weights.items()}
            loss = _batch_loss(noisy_b, clean_b, params, model, cfg.loss_target)
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} step {step}",
                    tag="TRAIN_DIVERGED",
                )
            grads = ad.backward(loss, traced=False, wrt=list(params.values()))
            step += 1
            bc1 = np.float32(1.0 - cfg.beta1 ** step)
            bc2 = np.float32(1.0 - cfg.beta2 ** step)
            for name in weights:
                g = grads.get(params[name])
                gv = np.zeros_like(weights[name]) if g is None else g.value
                m1[name] = b1 * m1[name] + (1 - b1) * gv
                m2[name] = b2 * m2[name] + (1 - b2) * gv * gv
                update = lr * (m1[name] / bc1) / (np.sqrt(m2[name] / bc2) + eps)
                weights[name] = weights[name] - update
            epoch_l1 += loss_val * noisy_b.size
            epoch_px += noisy_b.size

        val_l1, val_psnr = _validate(weights, model, val_samples, cfg.loss_target)
        if not np.isfinite(val_l1):
            raise NumericalError(
                f"non-finite validation loss at epoch {epoch}", tag="TRAIN_DIVERGED"
            )
        log.append({
            "epoch": epoch,
            "train_l1": epoch_l1 / epoch_px,
            "val_l1": val_l1,
            "val_psnr": val_psnr,
        })
        if val_l1 < best_val:
            best_val = val_l1
            best_weights = {k: v.copy() for k, v in weights.items()}

    sigma = float(manifest.get("sigma", model.sigma))
    return model.with_params(best_weights).with_sigma(sigma), log


def training_log_csv(log: list[dict]) -> str:
    lines = ["epoch,train_l1,val_l1,val_psnr"]
    for row in log:
        lines.append(f"{row['epoch']},{row['train_l1']:.10g},"
                     f"{row['val_l1']:.10g},{row['val_psnr']:.10g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvaluationReport:
    split: str
    rows: list[dict]
    mean_noisy_psnr: float
    median_noisy_psnr: float
    mean_denoised_psnr: float
    median_denoised_psnr: float

    @property
    def mean_gain_db(self) -> float:
        return self.mean_denoised_psnr - self.mean_noisy_psnr

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "mean_noisy_psnr": self.mean_noisy_psnr,
            "median_noisy_psnr": self.median_noisy_psnr,
            "mean_denoised_psnr": self.mean_denoised_psnr,
            "median_denoised_psnr": self.median_denoised_psnr,
            "mean_gain_db": self.mean_gain_db,
            "rows": self.rows,
        }

    def to_csv(self) -> str:
        lines = ["id,noisy_psnr,denoised_psnr"]
        for r in self.rows:
            lines.append(f"{r['id']},{r['noisy_psnr']:.10g},{r['denoised_psnr']:.10g}")
        return "\n".join(lines) + "\n"


def evaluate(model: DenoiserModel, manifest: dict, dataset_dir,
             split: str = "test", data_range: float = 0.15) -> EvaluationReport:
    """Denoised-vs-clean PSNR on a split, with the noisy input as baseline."""
    rows_in = manifest_samples(manifest, split)
    if not rows_in:
        raise ArgumentError(f"split {split!r} has no samples")
    rows = []
    for row in rows_in:
        noisy, clean = load_pair(dataset_dir, row)
        arr = noisy.values.astype(np.float32)
        den = gradient_step_denoise(arr, model)
        rows.append({
            "id": row["id"],
            "noisy_psnr": psnr(noisy, clean, data_range),
            "denoised_psnr": psnr(den, clean.values.astype(np.float64), data_range),
        })
    noisy_vals = np.array([r["noisy_psnr"] for r in rows])
    den_vals = np.array([r["denoised_psnr"] for r in rows])
    return EvaluationReport(
        split=split,
        rows=rows,
        mean_noisy_psnr=float(np.mean(noisy_vals)),
        median_noisy_psnr=float(np.median(noisy_vals)),
        mean_denoised_psnr=float(np.mean(den_vals)),
        median_denoised_psnr=float(np.median(den_vals)),
    )
