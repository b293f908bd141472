"""Multi-warp garment warper.

A spatial-transformer predictor maps (product image, garment mask) to k
affine parameter sets; each is applied to the product with differentiable
bilinear sampling. Warps are trained under a cascade loss: each pixel is
charged the minimum loss over the warps produced so far, so later warps
specialize on the pixels earlier warps fit poorly.

Affine convention: theta is a 2x3 matrix mapping *output* pixel positions
(normalized to [-1, 1], x = width axis first) to *input* sampling positions.
Identity is [[1, 0, 0], [0, 1, 0]].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import RunConfig


def identity_theta() -> torch.Tensor:
    return torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def make_theta(scale, rotation: float = 0.0, translation=(0.0, 0.0)) -> torch.Tensor:
    """Sampling theta for "paste the input at scale/rotation/translation".

    The forward placement map is out = s¡R(rotation)¡in + t in normalized
    coordinates; the returned theta is its inverse, suitable for
    :func:`apply_affine`. ``scale`` may be a scalar or an (sx, sy) pair;
    ``translation`` is (tx, ty) with x along the width axis.
    """
    sx, sy = (scale, scale) if np.isscalar(scale) else scale
    tx, ty = translation
    c, s = math.cos(rotation), math.sin(rotation)
    # inverse of [[sx c, -sy s], [sx s, sy c]] applied to (out - t)
    lin = torch.tensor([[c / sx, s / sx], [-s / sy, c / sy]], dtype=torch.float32)
    t = torch.tensor([tx, ty], dtype=torch.float32)
    theta = torch.zeros(2, 3)
    theta[:, :2] = lin
    theta[:, 2] = -lin @ t
    return theta


def apply_affine(img: torch.Tensor, theta: torch.Tensor, fill: float = 1.0) -> torch.Tensor:
    """Warp ``img`` by sampling at theta-mapped grid positions.

    Bilinear sampling; out-of-bounds positions take the ``fill`` value
    (white by default, matching product photography backgrounds).
    Differentiable w.r.t. both ``img`` and ``theta``. Accepts (C, H, W)
    with a (2, 3) theta or batched (B, C, H, W) with (B, 2, 3).
    """
    if not torch.isfinite(theta).all():
        raise ValueError("non-finite affine parameters")
    single = img.dim() == 3
    if single:
        img = img.unsqueeze(0)
        theta = theta.unsqueeze(0)
    grid = F.affine_grid(theta, list(img.shape), align_corners=False)
    out = F.grid_sample(
        img - fill, grid, mode="bilinear", padding_mode="zeros", align_corners=False
    ) + fill
    return out.squeeze(0) if single else out


def pixel_loss(warp: torch.Tensor, model: torch.Tensor, mask: torch.Tensor, beta: float) -> torch.Tensor:
    """Per-pixel warp fit against the masked-out garment region of the model.

    The target is (1 - m)¡x, i.e. the garment isolated on black; the absolute
    channel-summed difference is weighted (1 + beta) inside the garment region
    and 1 outside. Shapes: warp/model (..., 3, H, W), mask (..., H, W) with
    1 = keep, 0 = garment. Returns a (..., H, W) nonnegative map.
    """
    if warp.shape != model.shape:
        raise ValueError(f"warp/model shape mismatch: {tuple(warp.shape)} vs {tuple(model.shape)}")
    if mask.shape != model.shape[:-3] + model.shape[-2:]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match images")
    hole = (1.0 - mask).unsqueeze(-3)
    target = hole * model
    weight = 1.0 + beta * hole
    return ((warp - target).abs() * weight).sum(dim=-3)


def _first_min(stack: torch.Tensor) -> torch.Tensor:
    # pointwise min over dim 0; gradient (and ties) routed to the earliest warp
    idx = stack.argmin(dim=0, keepdim=True)
    return stack.gather(0, idx).squeeze(0)


def cascade_warp_loss(maps) -> torch.Tensor:
    """Mean over pixels of the pointwise minimum of the given loss maps."""
    maps = list(maps)
    if not maps:
        raise ValueError("cascade_warp_loss needs at least one loss map")
    if len(maps) == 1:
        return maps[0].mean()
    return _first_min(torch.stack(maps, dim=0)).mean()


def cascade_loss(thetas, maps, alpha: float) -> torch.Tensor:
    """Cascade objective: average of the running-minimum warp losses plus a
    proximity regularizer keeping later warps close to the first.

    ``thetas``: k tensors (..., 2, 3); ``maps``: k per-pixel loss maps.
    The regularizer is alpha ¡ mean over i>=2 of ||theta_i - theta_1||_F^2
    (zero for k = 1).
    """
    thetas = list(thetas)
    maps = list(maps)
    if len(thetas) != len(maps):
        raise ValueError("need one theta per loss map")
    k = len(maps)
    loss = sum(cascade_warp_loss(maps[: i + 1]) for i in range(k)) / k
    if k > 1:
        stacked = torch.stack(thetas, dim=0)
        fro2 = (stacked[1:] - stacked[:1]).pow(2).sum(dim=(-2, -1))
        loss = loss + alpha * fro2.sum(dim=0).mean() / (k - 1)
    return loss


@dataclass
class WarpBundle:
    """k affine parameter sets and the k corresponding warped images."""

    thetas: torch.Tensor  # (..., k, 2, 3)
    warps: torch.Tensor  # (..., k, 3, H, W)

    @property
    def num_warps(self) -> int:
        return self.thetas.shape[-3]


class WarpPredictor(nn.Module):
    """Predicts k affine parameter sets from the (product, mask) stack.

    Conv trunk on the 4-channel input, flattened at a coarse grid so spatial
    placement survives, then a fully connected head emitting 6k numbers.
    The output layer is zero-initialized with an identity bias: a fresh
    predictor emits identity warps.
    """

    def __init__(self, image_size: int, num_warps: int, width: int = 64):
        super().__init__()
        if image_size < 32 or image_size & (image_size - 1):
            raise ValueError("image_size must be a power of two >= 32")
        self.image_size = image_size
        self.num_warps = num_warps
        n_down = int(math.log2(image_size // 8))
        chans = [min(width, 16 * 2**i) for i in range(n_down)]
        layers = []
        c = 4
        for co in chans:
            layers += [nn.Conv2d(c, co, 3, stride=2, padding=1), nn.ReLU()]
            c = co
        self.trunk = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.Linear(c * 8 * 8, 128), nn.ReLU(), nn.Linear(128, 6 * num_warps))
        final = self.head[-1]
        nn.init.zeros_(final.weight)
        with torch.no_grad():
            final.bias.copy_(identity_theta().reshape(-1).repeat(num_warps))

    def forward(self, product: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Returns thetas of shape (B, k, 2, 3) (or (k, 2, 3) unbatched)."""
        single = product.dim() == 3
        if single:
            product, mask = product.unsqueeze(0), mask.unsqueeze(0)
        if product.shape[-1] != self.image_size:
            raise ValueError(
                f"input resolution {product.shape[-1]} does not match predictor ({self.image_size})"
            )
        x = torch.cat([product, mask.unsqueeze(1)], dim=1)
        h = self.trunk(x).flatten(1)
        theta = self.head(h).reshape(-1, self.num_warps, 2, 3)
        return theta.squeeze(0) if single else theta


def predict_params(product: torch.Tensor, mask: torch.Tensor, ckpt: "WarperCheckpoint") -> torch.Tensor:
    """Eval-mode theta prediction from a checkpoint; deterministic."""
    model = ckpt.model
    model.eval()
    with torch.no_grad():
        return model(product, mask)


def make_warps(product: torch.Tensor, thetas: torch.Tensor) -> torch.Tensor:
    """Apply each of the k thetas to the product. (..., k, 3, H, W) out."""
    single = product.dim() == 3
    if single:
        product, thetas = product.unsqueeze(0), thetas.unsqueeze(0)
    b, k = thetas.shape[0], thetas.shape[1]
    rep = product.unsqueeze(1).expand(-1, k, -1, -1, -1).reshape(b * k, *product.shape[1:])
    warped = apply_affine(rep, thetas.reshape(b * k, 2, 3))
    warped = warped.reshape(b, k, *product.shape[1:])
    return warped.squeeze(0) if single else warped


@dataclass
class WarperCheckpoint:
    model: WarpPredictor
    num_warps: int
    image_size: int
    config: RunConfig
    step: int


def warp_loss_terms(
    product: torch.Tensor,
    model_img: torch.Tensor,
    mask: torch.Tensor,
    thetas: torch.Tensor,
    beta: float,
    alpha: float,
):
    """Forward the warps and assemble the cascade objective for a batch.

    Returns (loss, fit) where ``fit`` is the running-minimum warp loss over
    all k maps (the pixel-fit term without the theta regularizer).
    """
    warps = make_warps(product, thetas)
    k = thetas.shape[-3]
    maps = [pixel_loss(warps[..., i, :, :, :], model_img, mask, beta) for i in range(k)]
    theta_list = [thetas[..., i, :, :] for i in range(k)]
    loss = cascade_loss(theta_list, maps, alpha)
    fit = cascade_warp_loss(maps)
    return loss, fit


def evaluate_warp_fit(ckpt: WarperCheckpoint, manifest, beta: float, batch_size: int = 32) -> float:
    """Mean cascade warp loss (pixel fit) of a trained warper over a manifest."""
    from . import dataset as ds

    data = ds.load_tensors(manifest)
    model = ckpt.model
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(data["ids"]), batch_size):
            sl = slice(start, start + batch_size)
            product, model_img, mask = data["products"][sl], data["models"][sl], data["masks"][sl]
            thetas = model(product, mask)
            warps = make_warps(product, thetas)
            k = thetas.shape[1]
            maps = [pixel_loss(warps[:, i], model_img, mask, beta) for i in range(k)]
            stack = torch.stack(maps, dim=0)
            per_image = _first_min(stack).mean(dim=(-2, -1))
            total += float(per_image.sum())
            count += per_image.numel()
    return total / count


def train_warper(manifest, config: RunConfig, steps: int | None = None, history_path=None) -> tuple[WarperCheckpoint, list]:
    """Train a warp predictor alone (no inpainting) under the cascade loss.

    Deterministic given the config seed. Returns the checkpoint and the
    per-step loss history [(step, cascade_loss, fit_loss)].
    """
    from . import dataset as ds

    cfg = config.warper
    steps = cfg.steps if steps is None else steps
    data = ds.load_tensors(manifest)
    n = len(data["ids"])
    if n == 0:
        raise ValueError("empty manifest")
    image_size = data["products"].shape[-1]

    torch.manual_seed(config.seed)
    model = WarpPredictor(image_size, cfg.num_warps, cfg.trunk_width)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(config.seed)

    history = []
    model.train()
    for step in range(1, steps + 1):
        idx = torch.from_numpy(rng.integers(0, n, size=cfg.batch_size))
        product = data["products"][idx]
        model_img = data["models"][idx]
        mask = data["masks"][idx]
        thetas = model(product, mask)
        loss, fit = warp_loss_terms(product, model_img, mask, thetas, cfg.beta, cfg.alpha)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append((step, float(loss), float(fit)))

    if history_path is not None:
        with open(history_path, "w") as fh:
            fh.write("step,cascade_loss,fit_loss\n")
            for row in history:
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r}\n")

    ckpt = WarperCheckpoint(
        model=model,
        num_warps=cfg.num_warps,
        image_size=image_size,
        config=config,
        step=steps,
    )
    return ckpt, history
