"""Network definitions: tapped CNN classifier, activation interpreter, pooling heads.

All forwards take batches. Classifier input is ``(N, 1, mel_bands, T)``; the
interpreter turns the classifier's tapped block outputs into nonnegative
activations ``(N, K, T)``; a head pools those over time and classifies.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, ops, parameter


class ModelError(ValueError):
    pass


class Module:
    """Named parameter store shared by every network here."""

    kind = "module"

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        t = parameter(value, name=name)
        self.params[name] = t
        return t

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def freeze(self) -> None:
        for p in self.params.values():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.params.values():
            p.requires_grad = True

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise ModelError(f"{self.kind}: checkpoint lacks tensors {sorted(missing)}")
        for name, p in self.params.items():
            if arrays[name].shape != p.shape:
                raise ModelError(f"{self.kind}: tensor {name} has shape {arrays[name].shape}, expected {p.shape}")
            p.data = np.array(arrays[name], dtype=p.data.dtype)

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _output_probs(logits: Tensor, multilabel: bool) -> Tensor:
    return ops.sigmoid(logits) if multilabel else ops.softmax(logits, axis=-1)


# ---------------------------------------------------------------------------
# classifier f


@dataclass
class ClassifierConfig:
    mel_bands: int
    n_classes: int
    channels: tuple[int, ...] = (16, 32, 64)
    taps: tuple[int, ...] = (0, 1, 2)
    multilabel: bool = False

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.taps = tuple(int(t) for t in self.taps)
        if not self.taps or len(self.taps) > 3:
            raise ModelError(f"between 1 and 3 tapped blocks are allowed, got {self.taps}")
        if any(t < 0 or t >= len(self.channels) for t in self.taps) or list(self.taps) != sorted(set(self.taps)):
            raise ModelError(f"tap indices {self.taps} must be ascending block indices < {len(self.channels)}")
        if self.mel_bands < 2 ** len(self.channels):
            raise ModelError(f"{self.mel_bands} mel bands are too few for {len(self.channels)} pooling blocks")
        if self.n_classes < 2 and not self.multilabel:
            raise ModelError("a multi-class classifier needs at least 2 classes")


@dataclass
class ClassifierOutput:
    logits: Tensor
    probs: Tensor
    taps: list[Tensor]


class TappedClassifier(Module):
    """Stack of conv blocks (conv-relu-conv-relu-maxpool) with a mean-pool linear head."""

    kind = "classifier"

    def __init__(self, config: ClassifierConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        c_in = 1
        for b, c_out in enumerate(config.channels):
            self._add(f"block{b}.conv1.w", _he(rng, (c_out, c_in, 3, 3), c_in * 9))
            self._add(f"block{b}.conv1.b", np.zeros(c_out))
            self._add(f"block{b}.conv2.w", _he(rng, (c_out, c_out, 3, 3), c_out * 9))
            self._add(f"block{b}.conv2.b", np.zeros(c_out))
            c_in = c_out
        self._add("head.w", _glorot(rng, config.n_classes, c_in))
        self._add("head.b", np.zeros(config.n_classes))

    def tap_shapes(self, n_frames: int) -> list[tuple[int, int, int]]:
        m, t, shapes = self.config.mel_bands, n_frames, []
        for c in self.config.channels:
            m, t = m // 2, t // 2
            shapes.append((c, m, t))
        return [shapes[i] for i in self.config.taps]

    def forward(self, mel: Tensor | np.ndarray) -> ClassifierOutput:
        x = mel if isinstance(mel, Tensor) else Tensor(mel)
        if x.ndim == 2:
            x = x.reshape(1, 1, *x.shape)
        elif x.ndim == 3:
            x = x.reshape(x.shape[0], 1, x.shape[1], x.shape[2])
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.config.mel_bands:
            raise ModelError(f"classifier expects (N, 1, {self.config.mel_bands}, T) input, got {x.shape}")
        if x.shape[3] < 2 ** len(self.config.channels):
            raise ModelError(f"input has {x.shape[3]} frames, fewer than the pooling depth allows")
        p = self.params
        outputs = []
        for b in range(len(self.config.channels)):
            x = ops.relu(ops.conv2d(x, p[f"block{b}.conv1.w"], p[f"block{b}.conv1.b"]))
            x = ops.relu(ops.conv2d(x, p[f"block{b}.conv2.w"], p[f"block{b}.conv2.b"]))
            x = ops.max_pool2d(x, 2)
            outputs.append(x)
        pooled = ops.mean_pool(x, axis=(2, 3))
        logits = ops.linear(pooled, p["head.w"], p["head.b"])
        return ClassifierOutput(logits, _output_probs(logits, self.config.multilabel), [outputs[i] for i in self.config.taps])


# ---------------------------------------------------------------------------
# interpreter Psi


@dataclass
class InterpreterConfig:
    tap_channels: tuple[int, ...]
    tap_levels: tuple[int, ...]  # block index of each tap; spatial scale is 2 ** (level + 1)
    mel_bands: int
    k: int
    adapter_channels: int = 24
    fusion_channels: int = 48

    def __post_init__(self):
        self.tap_channels = tuple(int(c) for c in self.tap_channels)
        self.tap_levels = tuple(int(t) for t in self.tap_levels)
        if len(self.tap_channels) != len(self.tap_levels) or not self.tap_channels:
            raise ModelError("tap_channels and tap_levels must be non-empty and of equal length")
        if self.k < 1:
            raise ModelError("k must be >= 1")

    @classmethod
    def for_classifier(cls, clf: ClassifierConfig, k: int, **kw) -> "InterpreterConfig":
        return cls(tuple(clf.channels[i] for i in clf.taps), tuple(clf.taps), clf.mel_bands, k, **kw)

    @property
    def common_bands(self) -> int:
        m = self.mel_bands
        for _ in range(max(self.tap_levels) + 1):
            m //= 2
        return m

    @property
    def n_collapse(self) -> int:
        m, n = self.common_bands, 0
        while m > 1:
            m = -(-m // 2)
            n += 1
        return max(n, 1)


class InterpreterPsi(Module):
    """Maps tapped feature maps to nonnegative K x T activations.

    Each tap goes through a 1x1 adapter conv and is average-pooled to the
    resolution of the deepest tap. The concatenation is squeezed along
    frequency by stride-2 convs until one row remains, linearly upsampled in
    time to the input frame count, and refined by a temporal conv. The last
    1x1 conv outputs K channels followed by relu. No conv has a bias, so
    all-zero taps give all-zero activations.
    """

    kind = "interpreter"

    def __init__(self, config: InterpreterConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        a, fch = config.adapter_channels, config.fusion_channels
        for i, c in enumerate(config.tap_channels):
            self._add(f"adapter{i}.w", _he(rng, (a, c, 1, 1), c))
        c_in = a * len(config.tap_channels)
        for j in range(config.n_collapse):
            kh = 3 if config.common_bands > 1 else 1
            self._add(f"collapse{j}.w", _he(rng, (fch, c_in, kh, 1), c_in * kh))
            c_in = fch
        self._add("temporal.w", _he(rng, (fch, fch, 1, 3), fch * 3))
        # nonnegative start keeps the output relu from starting dead
        self._add("out.w", np.abs(_he(rng, (config.k, fch, 1, 1), fch)))

    def forward(self, taps: Sequence[Tensor], n_frames: int) -> Tensor:
        cfg = self.config
        if len(taps) != len(cfg.tap_channels):
            raise ModelError(f"interpreter expects {len(cfg.tap_channels)} taps, got {len(taps)}")
        deepest = max(cfg.tap_levels)
        p = self.params
        adapted = []
        for i, (tap, level) in enumerate(zip(taps, cfg.tap_levels)):
            if tap.ndim != 4 or tap.shape[1] != cfg.tap_channels[i]:
                raise ModelError(f"tap {i} has shape {tap.shape}, expected {cfg.tap_channels[i]} channels")
            h = ops.relu(ops.conv2d(tap, p[f"adapter{i}.w"], padding="valid"))
            factor = 2 ** (deepest - level)
            if factor > 1:
                h = ops.avg_pool2d(h, factor)
            adapted.append(h)
        x = ops.concat(adapted, axis=1) if len(adapted) > 1 else adapted[0]
        for j in range(cfg.n_collapse):
            stride = (2, 1) if x.shape[2] > 1 else (1, 1)
            x = ops.relu(ops.conv2d(x, p[f"collapse{j}.w"], stride=stride))
        if x.shape[2] != 1:
            raise ModelError(f"frequency axis not collapsed (got {x.shape[2]} rows)")
        x = ops.interpolate_time(x, n_frames)
        x = ops.relu(ops.conv2d(x, p["temporal.w"]))
        x = ops.relu(ops.conv2d(x, p["out.w"], padding="valid"))
        return x.reshape(x.shape[0], cfg.k, n_frames)


# ---------------------------------------------------------------------------
# heads Theta


@dataclass
class HeadConfig:
    k: int
    n_classes: int
    multilabel: bool = False
    pooling: str = "attention"  # or "max"
    attention_hidden: int = 16

    def __post_init__(self):
        if self.pooling not in ("attention", "max"):
            raise ModelError(f"unknown pooling {self.pooling!r}")


@dataclass
class HeadOutput:
    logits: Tensor
    probs: Tensor
    z: Tensor
    attention: Tensor | None = None


class HeadTheta(Module):
    """Time pooling (attention or max) followed by a linear class layer."""

    kind = "head"

    def __init__(self, config: HeadConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        if config.pooling == "attention":
            d = config.attention_hidden
            self._add("att.w1", _glorot(rng, d, config.k))
            self._add("att.b1", np.zeros(d))
            self._add("att.w2", _glorot(rng, 1, d))
            self._add("att.b2", np.zeros(1))
        self._add("cls.w", np.zeros((config.n_classes, config.k)))
        self._add("cls.b", np.zeros(config.n_classes))

    @property
    def class_weights(self) -> np.ndarray:
        return self.params["cls.w"].data

    def attention(self, H: Tensor) -> Tensor:
        p = self.params
        frames = ops.transpose(H, (0, 2, 1))  # (N, T, K)
        hidden = ops.tanh(ops.linear(frames, p["att.w1"], p["att.b1"]))
        scores = ops.linear(hidden, p["att.w2"], p["att.b2"])  # (N, T, 1)
        return ops.softmax(scores.reshape(scores.shape[0], scores.shape[1]), axis=-1)

    def forward(self, H: Tensor | np.ndarray) -> HeadOutput:
        H = H if isinstance(H, Tensor) else Tensor(H)
        if H.ndim == 2:
            H = H.reshape(1, *H.shape)
        if H.ndim != 3 or H.shape[1] != self.config.k:
            raise ModelError(f"head expects (N, {self.config.k}, T) activations, got {H.shape}")
        if self.config.pooling == "attention":
            a = self.attention(H)
            z = ops.matmul(H, a.reshape(a.shape[0], a.shape[1], 1))
            z = z.reshape(z.shape[0], z.shape[1])
        else:
            a = None
            z = ops.max_over(H, axis=-1)
        logits = ops.linear(z, self.params["cls.w"], self.params["cls.b"])
        return HeadOutput(logits, _output_probs(logits, self.config.multilabel), z, a)


class MaxPoolTheta(HeadTheta):
    """Head variant that pools each component by its maximum over time."""

    def __init__(self, k: int, n_classes: int, multilabel: bool = False, seed: int = 0):
        super().__init__(HeadConfig(k, n_classes, multilabel, pooling="max"), seed)


# ---------------------------------------------------------------------------
# composition


@dataclass
class InterpreterSystem:
    """Classifier f, interpreter Psi and head Theta; ``g = Theta o Psi o f_I``."""

    classifier: TappedClassifier
    psi: InterpreterPsi
    theta: HeadTheta
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        clf_config: ClassifierConfig,
        k: int,
        seed: int = 0,
        pooling: str = "attention",
        classifier: TappedClassifier | None = None,
    ) -> "InterpreterSystem":
        classifier = classifier or TappedClassifier(clf_config, seed)
        psi = InterpreterPsi(InterpreterConfig.for_classifier(clf_config, k), seed + 1)
        theta = HeadTheta(HeadConfig(k, clf_config.n_classes, clf_config.multilabel, pooling), seed + 2)
        return cls(classifier, psi, theta)

    @property
    def k(self) -> int:
        return self.psi.config.k

    def forward(self, mel):
        f_out = self.classifier.forward(mel)
        H = self.psi.forward(f_out.taps, _frames_of(mel))
        return f_out, H, self.theta.forward(H)

    def configs(self) -> dict:
        return {
            "classifier": asdict(self.classifier.config),
            "interpreter": asdict(self.psi.config),
            "head": asdict(self.theta.config),
        }


def _frames_of(mel) -> int:
    data = mel.data if isinstance(mel, Tensor) else np.asarray(mel)
    return data.shape[-1]


def classifier_forward(f: TappedClassifier, mel) -> ClassifierOutput:
    return f.forward(mel)


def interpreter_forward(psi: InterpreterPsi, taps: Sequence[Tensor], n_frames: int) -> Tensor:
    return psi.forward(taps, n_frames)


def head_forward(theta: HeadTheta, H) -> HeadOutput:
    return theta.forward(H)


def bydesign_forward(system: InterpreterSystem, mel) -> Tensor:
    """Prediction of the interpretable path ``Theta(Psi(f_I(x)))``."""
    f_out = classifier_forward(system.classifier, mel)
    H = interpreter_forward(system.psi, f_out.taps, _frames_of(mel))
    return head_forward(system.theta, H).probs
