"""Edge-enhanced convolutional classifier for original vs. recaptured images.

The first convolution is initialized with classical Sobel/Laplacian kernels
(remaining filters randomly initialized and all filters trainable unless
frozen by config), biasing the network toward the edge-domain artifacts that
distinguish screen recaptures. Four conv blocks reduce 224x224 input to
14x14 while growing feature depth 32 to 256; an adaptive-pool + two-layer
fully connected head produces two-class logits. Softmax is applied at the
API boundary, never stored in checkpoints.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from .channel import LABEL_ORIGINAL, LABEL_RECAPTURED
from .errors import ConfigError, ModelUnavailableError, ShapeError
from .imaging import ImageBuffer, PreprocessConfig, preprocess


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults realize the published design."""

    edge_filters: int = 16
    block_channels: tuple = (32, 64, 128, 256)
    convs_per_block: int = 2
    adaptive_pool_out: int = 7
    fc_dims: tuple = (512, 128)
    dropout: tuple = (0.5, 0.3)
    num_classes: int = 2
    input_size: int = 224
    freeze_edge_kernels: bool = False

    def __post_init__(self):
        self.block_channels = tuple(self.block_channels)
        self.fc_dims = tuple(self.fc_dims)
        self.dropout = tuple(self.dropout)
        if len(self.block_channels) != 4:
            raise ConfigError("exactly four conv blocks are required")
        if any(a >= b for a, b in zip(self.block_channels, self.block_channels[1:])):
            raise ConfigError("block channels must be strictly increasing")
        if self.fc_dims != (512, 128):
            raise ConfigError("fc_dims is fixed at (512, 128)")
        if self.dropout != (0.5, 0.3):
            raise ConfigError("dropout is fixed at (0.5, 0.3)")
        if self.edge_filters < 9:
            raise ConfigError("edge layer needs at least the nine fixed filters")
        if self.num_classes != 2:
            raise ConfigError("this classifier is two-class")


@dataclass
class ProbabilityPair:
    p_orig: float
    p_recap: float


@dataclass
class DetectionResult:
    probabilities: ProbabilityPair
    label: str
    confidence: float


def edge_kernels() -> list:
    """The three fixed 3x3 edge kernels: Sobel-X, Sobel-Y, Laplacian."""
    sobel_x = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float32)
    sobel_y = sobel_x.T.copy()
    laplacian = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float32)
    return [sobel_x, sobel_y, laplacian]


class EdgeEnhancedNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        # replicate padding: a constant image must yield zero edge response
        # everywhere, with no phantom frame edge from zero padding
        self.edge = nn.Conv2d(3, cfg.edge_filters, 3, padding=1, padding_mode="replicate")
        self.edge_bn = nn.BatchNorm2d(cfg.edge_filters)
        self.relu = nn.ReLU(inplace=True)

        blocks = []
        cin = cfg.edge_filters
        for cout in cfg.block_channels:
            layers = []
            for _ in range(cfg.convs_per_block):
                layers += [nn.Conv2d(cin, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]
                cin = cout
            layers.append(nn.MaxPool2d(2))
            blocks.append(nn.Sequential(*layers))
        self.blocks = nn.ModuleList(blocks)

        self.pool = nn.AdaptiveAvgPool2d((cfg.adaptive_pool_out, cfg.adaptive_pool_out))
        flat = cfg.block_channels[-1] * cfg.adaptive_pool_out**2
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(flat, cfg.fc_dims[0]),
            nn.ReLU(inplace=True),
            nn.Dropout(cfg.dropout[0]),
            nn.Linear(cfg.fc_dims[0], cfg.fc_dims[1]),
            nn.ReLU(inplace=True),
            nn.Dropout(cfg.dropout[1]),
            nn.Linear(cfg.fc_dims[1], cfg.num_classes),
        )

    def forward(self, x):
        x = self.relu(self.edge_bn(self.edge(x)))
        for block in self.blocks:
            x = block(x)
        x = self.pool(x)
        return self.head(x)

    def block_outputs(self, x):
        """Activations after each conv block (post-pool)."""
        x = self.relu(self.edge_bn(self.edge(x)))
        outs = []
        for block in self.blocks:
            x = block(x)
            outs.append(x)
        return outs


@dataclass
class Model:
    """A network plus its config, weight-derived version, and trained flag."""

    net: EdgeEnhancedNet
    config: ModelConfig
    version: str
    trained: bool = False

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())


def weight_version(net: nn.Module) -> str:
    digest = hashlib.sha256()
    state = net.state_dict()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return f"eecnn-{digest.hexdigest()[:12]}"


def _init_conv(conv: nn.Conv2d, gen: torch.Generator) -> None:
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    std = (2.0 / fan_in) ** 0.5
    with torch.no_grad():
        conv.weight.normal_(0.0, std, generator=gen)
        if conv.bias is not None:
            conv.bias.zero_()


def _init_linear(lin: nn.Linear, gen: torch.Generator) -> None:
    bound = 1.0 / (lin.in_features**0.5)
    with torch.no_grad():
        lin.weight.uniform_(-bound, bound, generator=gen)
        lin.bias.uniform_(-bound, bound, generator=gen)


def build_model(cfg: ModelConfig | None = None, init_seed: int = 0) -> Model:
    """Construct and deterministically initialize the network.

    Edge filters 0-8 carry the fixed kernels: filter 3k + c applies kernel k
    to input channel c only. Filters 9 onward get variance-scaled random
    init from the seeded generator.
    """
    cfg = cfg or ModelConfig()
    gen = torch.Generator().manual_seed(int(init_seed))
    net = EdgeEnhancedNet(cfg)

    for module in net.modules():
        if isinstance(module, nn.Conv2d):
            _init_conv(module, gen)
        elif isinstance(module, nn.Linear):
            _init_linear(module, gen)

    kernels = edge_kernels()
    with torch.no_grad():
        net.edge.weight.zero_()
        net.edge.bias.zero_()
        for k, kernel in enumerate(kernels):
            for c in range(3):
                net.edge.weight[3 * k + c, c] = torch.from_numpy(kernel)
        fan_in = 27
        std = (2.0 / fan_in) ** 0.5
        net.edge.weight[9:].normal_(0.0, std, generator=gen)
    if cfg.freeze_edge_kernels:
        net.edge.weight.requires_grad_(False)
        net.edge.bias.requires_grad_(False)

    net = net.to(memory_format=torch.channels_last)
    net.eval()
    return Model(net=net, config=cfg, version=weight_version(net), trained=False)


def _as_batch_tensor(batch, input_size: int) -> torch.Tensor:
    arrs = []
    for item in batch:
        arr = np.asarray(item, dtype=np.float32)
        if arr.shape != (3, input_size, input_size):
            raise ShapeError(f"expected (3, {input_size}, {input_size}), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeError("input tensor contains non-finite values")
        arrs.append(arr)
    if not arrs:
        raise ShapeError("empty batch")
    stacked = torch.from_numpy(np.stack(arrs))
    return stacked.to(memory_format=torch.channels_last)


def forward(model: Model, batch, inference_mode: bool = True) -> list:
    """Class probabilities for a batch of preprocessed tensors.

    In inference mode dropout is disabled and batch norm uses running
    statistics, so outputs are deterministic.
    """
    x = _as_batch_tensor(batch, model.config.input_size)
    if inference_mode:
        model.net.eval()
        with torch.inference_mode():
            logits = model.net(x)
            probs = torch.softmax(logits, dim=1).cpu().numpy()
    else:
        logits = model.net(x)
        probs = torch.softmax(logits, dim=1).detach().cpu().numpy()
    return [ProbabilityPair(float(p[0]), float(p[1])) for p in probs]


def predict(model: Model | None, img: ImageBuffer, threshold: float = 0.5,
            pre_cfg: PreprocessConfig | None = None) -> DetectionResult:
    """Classify one image: label is recaptured iff p_recap exceeds the
    threshold. Raises ModelUnavailableError when no trained weights are
    loaded (consumed by the fail-closed enforcement path)."""
    if model is None or model.net is None or not model.trained:
        raise ModelUnavailableError("no trained model loaded")
    tensor = preprocess(img, pre_cfg)
    pair = forward(model, [tensor], inference_mode=True)[0]
    label = LABEL_RECAPTURED if pair.p_recap > threshold else LABEL_ORIGINAL
    return DetectionResult(
        probabilities=pair,
        label=label,
        confidence=max(pair.p_orig, pair.p_recap),
    )


def edge_response_maps(model: Model, img: ImageBuffer,
                       pre_cfg: PreprocessConfig | None = None) -> np.ndarray:
    """Raw (pre-BN) responses of the 16 edge-layer filters, (16, H, W)."""
    tensor = preprocess(img, pre_cfg)
    x = torch.from_numpy(tensor[None]).to(memory_format=torch.channels_last)
    model.net.eval()
    with torch.inference_mode():
        maps = model.net.edge(x)[0]
    return maps.cpu().numpy()


def _tile_grid(maps: np.ndarray, cols: int = 4) -> np.ndarray:
    """Min-max normalize each map and lay them out in a grid (uint8)."""
    n, h, w = maps.shape
    rows = (n + cols - 1) // cols
    grid = np.zeros((rows * h, cols * w), dtype=np.uint8)
    for i in range(n):
        m = maps[i]
        lo, hi = float(m.min()), float(m.max())
        norm = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
        r, c = divmod(i, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = np.rint(norm * 255).astype(np.uint8)
    return grid


def visualize_edge_responses(model: Model, img: ImageBuffer, out) -> np.ndarray:
    """Write a 4x4 grid of the edge-layer activation maps; returns the grid."""
    maps = edge_response_maps(model, img)
    grid = _tile_grid(maps, cols=4)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid).save(out)
    return grid


def feature_maps(model: Model, img: ImageBuffer, block: int,
                 pre_cfg: PreprocessConfig | None = None) -> np.ndarray:
    """First 16 channel activations of the given conv block (1-indexed)."""
    if not 1 <= block <= len(model.net.blocks):
        raise IndexError(f"block must be in 1..{len(model.net.blocks)}")
    tensor = preprocess(img, pre_cfg)
    x = torch.from_numpy(tensor[None]).to(memory_format=torch.channels_last)
    model.net.eval()
    with torch.inference_mode():
        outs = model.net.block_outputs(x)
    return outs[block - 1][0, :16].cpu().numpy()


def visualize_feature_maps(model: Model, img: ImageBuffer, block: int, out) -> np.ndarray:
    maps = feature_maps(model, img, block)
    grid = _tile_grid(maps, cols=4)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid).save(out)
    return grid


def spatial_trace(model: Model, input_size: int | None = None) -> list:
    """Spatial sizes [input, after block 1..4] measured with a live probe."""
    size = input_size or model.config.input_size
    x = torch.zeros(1, 3, size, size)
    model.net.eval()
    with torch.inference_mode():
        outs = model.net.block_outputs(x)
    return [size] + [int(o.shape[-1]) for o in outs]


def parameter_breakdown(model: Model) -> list:
    """Per-parameter-tensor (name, shape, count) rows plus grand total."""
    rows = []
    for name, p in model.net.named_parameters():
        rows.append((name, tuple(p.shape), p.numel()))
    return rows
