"""3-D u-net assembled from the femseg.nn layer ops.

Parameters live in a flat ordered ``name -> ndarray`` mapping so they can be
checkpointed, diffed and updated in place by the optimizer. Batch-norm running
statistics sit in the same mapping under ``*.running_mean`` / ``*.running_var``
and are not trainable.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from femseg.errors import ConfigError, ShapeMismatch
from femseg.nn import functional as F
from femseg.nn.init import he_init
from femseg.nn.tensor import Tensor
from femseg.volume import LabelMask

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    base_channels: int = 32
    convs_per_stage: int = 2
    classes: int = 2
    in_channels: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.base_channels < 1 or self.in_channels < 1 or self.convs_per_stage < 1:
            raise ConfigError("channel counts and convs_per_stage must be positive")
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    def channels(self) -> list[int]:
        """Feature maps per stage, encoder stages first, bottleneck last."""
        return [self.base_channels * 2**i for i in range(self.depth + 1)]

    def check_patch(self, dims) -> None:
        step = 2**self.depth
        if any(int(d) % step for d in dims):
            raise ConfigError(f"patch dims {tuple(dims)} must be divisible by 2**depth = {step}")

    def to_dict(self) -> dict:
        return asdict(self)


def _layer_specs(cfg: UNetConfig):
    """Yield (prefix, kind, c_in, c_out) in forward order."""
    ch = cfg.channels()
    c_prev = cfg.in_channels
    for s in range(cfg.depth):
        for j in range(cfg.convs_per_stage):
            yield f"enc{s}.conv{j}", "block", c_prev, ch[s]
            c_prev = ch[s]
    for j in range(cfg.convs_per_stage):
        yield f"bottleneck.conv{j}", "block", c_prev, ch[cfg.depth]
        c_prev = ch[cfg.depth]
    for s in reversed(range(cfg.depth)):
        yield f"dec{s}.up", "up", c_prev, ch[s]
        c_prev = 2 * ch[s]
        for j in range(cfg.convs_per_stage):
            yield f"dec{s}.conv{j}", "block", c_prev, ch[s]
            c_prev = ch[s]
    yield "head", "head", c_prev, cfg.classes


def build(config: UNetConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """Fresh He-initialised parameters for ``config``."""
    params: dict[str, np.ndarray] = {}
    for name, kind, ci, co in _layer_specs(config):
        if kind == "block":
            w, b = he_init((co, ci, 3, 3, 3), rng, dtype=dtype)
            params[f"{name}.weight"], params[f"{name}.bias"] = w, b
            params[f"{name}.bn.gamma"] = np.ones(co, dtype)
            params[f"{name}.bn.beta"] = np.zeros(co, dtype)
            params[f"{name}.bn.running_mean"] = np.zeros(co, dtype)
            params[f"{name}.bn.running_var"] = np.ones(co, dtype)
        elif kind == "up":
            # transposed-conv layout: (c_in, c_out, 2, 2, 2)
            w, _ = he_init((ci, co, 2, 2, 2), rng, fan_in=ci * 8, dtype=dtype)
            params[f"{name}.weight"], params[f"{name}.bias"] = w, np.zeros(co, dtype)
        else:
            w, b = he_init((co, ci, 1, 1, 1), rng, dtype=dtype)
            params[f"{name}.weight"], params[f"{name}.bias"] = w, b
    return params


def is_buffer(name: str) -> bool:
    return name.endswith(".running_mean") or name.endswith(".running_var")


def trainable_names(params) -> list[str]:
    return [n for n in params if not is_buffer(n)]


def count_parameters(config: UNetConfig) -> int:
    shapes = build_shapes(config)
    return int(sum(np.prod(s) for n, s in shapes.items() if not is_buffer(n)))


def build_shapes(config: UNetConfig) -> dict[str, tuple[int, ...]]:
    params = build(config, np.random.default_rng(0), dtype=np.float32)
    return {k: v.shape for k, v in params.items()}


def check_params(config: UNetConfig, params) -> None:
    expected = build_shapes(config)
    missing = [k for k in expected if k not in params]
    extra = [k for k in params if k not in expected]
    if missing or extra:
        raise ShapeMismatch(f"parameter set mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise ShapeMismatch(f"{k}: shape {params[k].shape}, expected {shape}")


class UNet:
    """Holds a config and its parameter mapping; ``forward`` builds the graph."""

    def __init__(self, config: UNetConfig, params: dict[str, np.ndarray]):
        check_params(config, params)
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: UNetConfig, seed: int | np.random.Generator = 0, dtype=np.float32) -> "UNet":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(config, build(config, rng, dtype))

    def num_parameters(self) -> int:
        return int(sum(self.params[n].size for n in trainable_names(self.params)))

    def forward(self, x, training: bool = False, leaves: dict[str, Tensor] | None = None) -> Tensor:
        """Probability map (batch, classes, z, y, x) for input (batch, c_in, z, y, x).

        Pass ``leaves`` (an empty dict) to receive the parameter Tensors whose
        ``.grad`` is filled after ``backward()``.
        """
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        cfg = self.config
        if x.data.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise ShapeMismatch(f"expected (batch, {cfg.in_channels}, z, y, x) input, got {x.shape}")
        try:
            cfg.check_patch(x.shape[2:])
        except ConfigError as exc:
            raise ShapeMismatch(str(exc)) from None
        p = self.params
        track = leaves is not None

        def leaf(name):
            if not track:
                return Tensor(p[name])
            if name not in leaves:
                leaves[name] = Tensor(p[name], requires_grad=True, name=name)
            return leaves[name]

        def block(h, name):
            h = F.conv3d(h, leaf(f"{name}.weight"), leaf(f"{name}.bias"), padding=1)
            h = F.batchnorm3d(
                h,
                leaf(f"{name}.bn.gamma"),
                leaf(f"{name}.bn.beta"),
                p[f"{name}.bn.running_mean"],
                p[f"{name}.bn.running_var"],
                training=training,
                momentum=BN_MOMENTUM,
                eps=BN_EPS,
            )
            return F.relu(h)

        skips = []
        h = x
        for s in range(cfg.depth):
            for j in range(cfg.convs_per_stage):
                h = block(h, f"enc{s}.conv{j}")
            skips.append(h)
            h = F.maxpool3d(h, 2)
        for j in range(cfg.convs_per_stage):
            h = block(h, f"bottleneck.conv{j}")
        for s in reversed(range(cfg.depth)):
            up = F.conv_transpose3d(h, leaf(f"dec{s}.up.weight"), leaf(f"dec{s}.up.bias"), stride=2)
            skip = skips[s]
            if up.shape[2:] != skip.shape[2:]:
                raise ShapeMismatch(f"decoder stage {s}: upsampled {up.shape[2:]} vs skip {skip.shape[2:]}")
            h = F.concat_channels(up, skip)
            for j in range(cfg.convs_per_stage):
                h = block(h, f"dec{s}.conv{j}")
        logits = F.conv3d(h, leaf("head.weight"), leaf("head.bias"))
        return F.softmax_channels(logits)

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        """Eval-mode foreground probabilities, (batch, z, y, x)."""
        batch = np.asarray(batch, dtype=self.params["head.weight"].dtype)
        return self.forward(batch, training=False).data[:, 1]


def binarize(prob, threshold: float = 0.5, spacing=(1.0, 1.0, 1.0)) -> LabelMask:
    """Foreground where probability > threshold (strict).

    Accepts a 3-D foreground probability field or a (1, classes, z, y, x)
    map, in which case channel 1 is the foreground.
    """
    a = prob.data if isinstance(prob, Tensor) else np.asarray(prob)
    if a.ndim == 5:
        if a.shape[0] != 1:
            raise ShapeMismatch("binarize takes a single case; index the batch first")
        a = a[0, 1]
    return LabelMask((a > threshold).astype(np.uint8), spacing)
