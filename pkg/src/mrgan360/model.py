"""The multi-stage recurrent adversarial saliency network.

One generator parameter set is shared by every stage: an 8-layer dilated
context-aggregation stack where layers L1..L6 are convolutional GRU cells
(the layer's dilated conv doubles as the GRU input kernel) followed by a
leaky ReLU and a squeeze-excite channel gate.  Stage s+1 re-feeds the
original image modulated per channel by stage s's saliency output.

The conditional discriminator scores (image, saliency) pairs through six
convs, three 2x2 pools and three fully-connected layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .metrics import KL_EPS, FixationMap
from .tensor import Tensor

# L1..L6; the first five grow the receptive field exponentially, the
# decoder layer L6 goes back to dense taps.
GEN_DILATIONS = (1, 2, 4, 8, 16, 1)
LEAKY_ALPHA = 0.2
STD_EPS = 1e-8


@dataclass(frozen=True)
class GeneratorConfig:
    channels: int = 24
    se_reduction: int = 4

    def __post_init__(self):
        if self.channels % self.se_reduction != 0:
            raise ShapeError(
                f"channel width {self.channels} must be divisible by the "
                f"squeeze-excite reduction {self.se_reduction}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    height: int = 192
    width: int = 256
    conv_depths: Tuple[int, ...] = (3, 32, 64, 64, 64, 64)
    fc_hidden: Tuple[int, int] = (100, 2)

    def __post_init__(self):
        if self.height % 8 or self.width % 8:
            raise ShapeError(f"discriminator resolution must be divisible "
                             f"by 8, got {self.width}x{self.height}")

    @property
    def fc1_in(self) -> int:
        return (self.height // 8) * (self.width // 8) * self.conv_depths[-1]


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int,
                     dtype) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True,
                  dtype=dtype)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def init_generator(config: GeneratorConfig, rng: np.random.Generator,
                   dtype=np.float32) -> Dict[str, Tensor]:
    """Fresh generator parameters under canonical names (gen.L3.W_n, ...)."""
    c = config.channels
    hidden = c // config.se_reduction
    params: Dict[str, Tensor] = {}
    params["gen.L0.weight"] = _kaiming_uniform(rng, (c, 3, 3, 3), 3 * 9, dtype)
    params["gen.L0.bias"] = _zeros((c,), dtype)
    for j in range(1, 7):
        pre = f"gen.L{j}"
        for gate in ("z", "r", "n"):
            params[f"{pre}.W_{gate}"] = _kaiming_uniform(
                rng, (c, c, 3, 3), c * 9, dtype)
            params[f"{pre}.U_{gate}"] = _kaiming_uniform(
                rng, (c, c, 3, 3), c * 9, dtype)
            params[f"{pre}.b_{gate}"] = _zeros((c,), dtype)
        # mild keep-previous-state bias stabilizes the recurrence
        params[f"{pre}.b_z"] = Tensor(np.full((c,), -1.0),
                                      requires_grad=True, dtype=dtype)
        params[f"{pre}.se.reduce.weight"] = _kaiming_uniform(
            rng, (hidden, c), c, dtype)
        params[f"{pre}.se.reduce.bias"] = _zeros((hidden,), dtype)
        params[f"{pre}.se.expand.weight"] = _kaiming_uniform(
            rng, (c, hidden), hidden, dtype)
        params[f"{pre}.se.expand.bias"] = _zeros((c,), dtype)
    params["gen.L7.weight"] = _kaiming_uniform(rng, (1, c, 1, 1), c, dtype)
    params["gen.L7.bias"] = _zeros((1,), dtype)
    return params


def generator_config_from_params(params: Dict) -> GeneratorConfig:
    l0 = np.asarray(params["gen.L0.weight"].data
                    if isinstance(params["gen.L0.weight"], Tensor)
                    else params["gen.L0.weight"])
    reduce_w = np.asarray(params["gen.L1.se.reduce.weight"].data
                          if isinstance(params["gen.L1.se.reduce.weight"],
                                        Tensor)
                          else params["gen.L1.se.reduce.weight"])
    channels = l0.shape[0]
    return GeneratorConfig(channels=channels,
                           se_reduction=channels // reduce_w.shape[0])


def generator_param_count(config: GeneratorConfig) -> int:
    """Closed-form trainable scalar count; independent of stage count."""
    c = config.channels
    hidden = c // config.se_reduction
    l0 = c * 3 * 9 + c
    gru = 6 * (3 * (c * c * 9) * 2 + 3 * c)
    se = 6 * ((hidden * c + hidden) + (c * hidden + c))
    l7 = c + 1
    return l0 + gru + se + l7


def init_discriminator(config: DiscriminatorConfig, rng: np.random.Generator,
                       dtype=np.float32) -> Dict[str, Tensor]:
    depths = config.conv_depths
    kernels = (1, 3, 3, 3, 3, 3)
    params: Dict[str, Tensor] = {}
    c_in = 4
    for i, (c_out, k) in enumerate(zip(depths, kernels), start=1):
        params[f"disc.conv{i}.weight"] = _kaiming_uniform(
            rng, (c_out, c_in, k, k), c_in * k * k, dtype)
        params[f"disc.conv{i}.bias"] = _zeros((c_out,), dtype)
        c_in = c_out
    fc_dims = (config.fc1_in, *config.fc_hidden, 1)
    for i in range(1, 4):
        params[f"disc.fc{i}.weight"] = _kaiming_uniform(
            rng, (fc_dims[i], fc_dims[i - 1]), fc_dims[i - 1], dtype)
        params[f"disc.fc{i}.bias"] = _zeros((fc_dims[i],), dtype)
    return params


# -- building blocks ---------------------------------------------------------

def se_block(features: Tensor, reduce_w: Tensor, reduce_b: Tensor,
             expand_w: Tensor, expand_b: Tensor) -> Tensor:
    """Squeeze-excite: rescale each channel by a learned gate in (0,1)."""
    squeeze = T.global_avg_pool(features)
    gates = T.sigmoid(T.fully_connected(
        T.relu(T.fully_connected(squeeze, reduce_w, reduce_b)),
        expand_w, expand_b))
    c = features.shape[0]
    return features * T.reshape(gates, (c, 1, 1))


def conv_gru_update(x: Tensor, h: Tensor, params: Dict[str, Tensor],
                    layer: int, dilation: int) -> Tensor:
    """One gated recurrent update fusing the layer conv (dilated) with the
    previous stage's hidden map (plain 3x3 convs)."""
    if x.shape != h.shape:
        raise ShapeError(f"GRU input {x.shape} and hidden state {h.shape} "
                         f"must match")
    pre = f"gen.L{layer}"
    z = T.sigmoid(T.conv2d(x, params[f"{pre}.W_z"], params[f"{pre}.b_z"],
                           dilation)
                  + T.conv2d(h, params[f"{pre}.U_z"]))
    r = T.sigmoid(T.conv2d(x, params[f"{pre}.W_r"], params[f"{pre}.b_r"],
                           dilation)
                  + T.conv2d(h, params[f"{pre}.U_r"]))
    n = T.tanh(T.conv2d(x, params[f"{pre}.W_n"], params[f"{pre}.b_n"],
                        dilation)
               + T.conv2d(r * h, params[f"{pre}.U_n"]))
    return (1.0 - z) * h + z * n


def generator_stage(image: Tensor, hidden: Optional[List[Tensor]],
                    params: Dict[str, Tensor],
                    config: GeneratorConfig) -> Tuple[Tensor, List[Tensor]]:
    """One refinement pass: (3,H,W) image -> (1,H,W) saliency in [0,1].

    ``hidden`` carries the six GRU maps from the previous stage (None on
    the first stage).  Returns the new hidden maps alongside the output.
    """
    if image.data.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"stage input must be (3,H,W), got {image.shape}")
    _, height, width = image.shape
    x = T.leaky_relu(T.conv2d(image, params["gen.L0.weight"],
                              params["gen.L0.bias"]), LEAKY_ALPHA)
    new_hidden: List[Tensor] = []
    for j, dilation in enumerate(GEN_DILATIONS, start=1):
        if hidden is None:
            h = Tensor(np.zeros((config.channels, height, width)),
                       dtype=image.dtype)
        else:
            h = hidden[j - 1]
        g = conv_gru_update(x, h, params, j, dilation)
        new_hidden.append(g)
        pre = f"gen.L{j}.se"
        x = se_block(T.leaky_relu(g, LEAKY_ALPHA),
                     params[f"{pre}.reduce.weight"],
                     params[f"{pre}.reduce.bias"],
                     params[f"{pre}.expand.weight"],
                     params[f"{pre}.expand.bias"])
    out = T.sigmoid(T.conv2d(x, params["gen.L7.weight"],
                             params["gen.L7.bias"]))
    return out, new_hidden


def multi_stage_forward(image: Tensor, params: Dict[str, Tensor],
                        stages: int,
                        config: Optional[GeneratorConfig] = None
                        ) -> List[Tensor]:
    """Chain ``stages`` shared-weight passes; stage s+1 sees the original
    image modulated per channel by stage s's output."""
    if stages < 1:
        raise ShapeError(f"stage count must be >= 1, got {stages}")
    if config is None:
        config = generator_config_from_params(params)
    outputs: List[Tensor] = []
    hidden: Optional[List[Tensor]] = None
    current = image
    for _ in range(stages):
        out, hidden = generator_stage(current, hidden, params, config)
        outputs.append(out)
        current = image * out
    return outputs


def discriminator_forward(image: Tensor, saliency: Tensor,
                          params: Dict[str, Tensor],
                          config: DiscriminatorConfig) -> Tensor:
    """Probability in (0,1) that (image, saliency) is a ground-truth pair."""
    if image.data.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"discriminator image must be (3,H,W), "
                         f"got {image.shape}")
    if saliency.data.ndim != 3 or saliency.shape[0] != 1:
        raise ShapeError(f"discriminator saliency must be (1,H,W), "
                         f"got {saliency.shape}")
    if image.shape[1:] != (config.height, config.width):
        raise ShapeError(
            f"resolution {image.shape[2]}x{image.shape[1]} does not match "
            f"the discriminator's {config.width}x{config.height} build")
    if saliency.shape[1:] != image.shape[1:]:
        raise ShapeError("image and saliency spatial extents differ")
    x = T.concat([image, saliency], axis=0)
    for i in range(1, 7):
        x = T.leaky_relu(T.conv2d(x, params[f"disc.conv{i}.weight"],
                                  params[f"disc.conv{i}.bias"]), LEAKY_ALPHA)
        if i in (2, 4, 6):
            x = T.max_pool2d(x)
    x = T.reshape(x, (-1,))
    x = T.tanh(T.fully_connected(x, params["disc.fc1.weight"],
                                 params["disc.fc1.bias"]))
    x = T.tanh(T.fully_connected(x, params["disc.fc2.weight"],
                                 params["disc.fc2.bias"]))
    x = T.sigmoid(T.fully_connected(x, params["disc.fc3.weight"],
                                    params["disc.fc3.bias"]))
    return T.reshape(x, ())


# -- losses -------------------------------------------------------------------

def content_loss(pred: Tensor, gt_density: np.ndarray,
                 fix: FixationMap) -> Tensor:
    """KL(gt||pred) - CC(gt,pred) - NSS(pred,fix), differentiable in pred.

    Mirrors the evaluation metrics, with 1e-8 added to the std denominators
    so a (transiently) flat prediction degrades gracefully during training
    instead of failing.
    """
    if pred.data.ndim == 3:
        if pred.shape[0] != 1:
            raise ShapeError(f"prediction must be single-channel, "
                             f"got {pred.shape}")
        pred = T.reshape(pred, pred.shape[1:])
    gt = np.asarray(gt_density, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth "
                         f"{gt.shape}")
    gt = gt / gt.sum()

    # KL term on sum-1 normalized maps
    p_norm = pred * T.power(T.tsum(pred) + 1e-12, -1.0)
    kl = T.tsum(gt * T.log(gt * T.power(p_norm + KL_EPS, -1.0) + KL_EPS))

    # Pearson correlation term
    centered = pred - T.tmean(pred)
    gt_centered = gt - gt.mean()
    cov = T.tmean(centered * gt_centered)
    pred_std = T.sqrt(T.tmean(centered * centered) + 1e-16)
    gt_std = float(gt.std())
    cc = cov * T.power(pred_std * gt_std + STD_EPS, -1.0)

    # NSS term over fixation pixels (duplicates weighted)
    counts = fix.count_map()
    n_fix = counts.sum()
    if n_fix == 0:
        raise ShapeError("content loss needs at least one fixation")
    z = centered * T.power(pred_std + STD_EPS, -1.0)
    nss = T.tsum(z * counts) * (1.0 / n_fix)

    return kl - cc - nss


def gan_losses(d_real: Tensor, d_fake: Tensor,
               content: Tensor,
               generator_objective: str = "minimax") -> Tuple[Tensor, Tensor]:
    """Discriminator and generator objectives from the two D outputs.

    loss_D = -[log D(real) + log(1 - D(fake))]; the generator either
    minimizes log(1 - D(fake)) ("minimax") or -log D(fake)
    ("nonsaturating"), plus the content term.  Logs clamp at 1e-12.
    """
    loss_d = -(_safe_log(d_real) + _safe_log(1.0 - d_fake))
    if generator_objective == "minimax":
        adv = _safe_log(1.0 - d_fake)
    elif generator_objective == "nonsaturating":
        adv = -_safe_log(d_fake)
    else:
        raise ShapeError(f"unknown generator objective "
                         f"{generator_objective!r}")
    return loss_d, adv + content


def _safe_log(x: Tensor) -> Tensor:
    return T.log(T.maximum(x, 1e-12))
