"""Generator, vector-output discriminator and the Lipschitz gradient penalty."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = "MAEMGAN-CKPT v1"

_ACTIVATIONS = {"relu", "tanh", "linear"}


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("layer_widths needs at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.hidden_activation not in ("relu", "tanh"):
            raise ValueError(f"hidden_activation must be relu or tanh, got {self.hidden_activation!r}")
        if self.output_activation not in ("linear", "tanh"):
            raise ValueError(f"output_activation must be linear or tanh, got {self.output_activation!r}")

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes: list[tuple[int, ...]] = []
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes


def _activate(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return ad.relu(x)
    if kind == "tanh":
        return ad.tanh(x)
    return x


@dataclass
class Mlp:
    """Fully connected network; parameters alternate weight, bias per layer."""

    spec: MlpSpec
    parameters: list[Tensor] = field(default_factory=list)

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator | int):
        """Glorot-uniform weights and zero biases, drawn from ``rng``."""
        rng = np.random.default_rng(rng)
        params = []
        for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params.append(Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True))
            params.append(Tensor(np.zeros(fan_out), requires_grad=True))
        return cls(spec, params)

    @property
    def n_layers(self) -> int:
        return len(self.parameters) // 2

    def layers(self):
        for i in range(self.n_layers):
            yield self.parameters[2 * i], self.parameters[2 * i + 1]

    def _check_input(self, x: Tensor) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 2 or x.shape[1] != self.spec.in_width:
            raise ValueError(
                f"{type(self).__name__}: expected input of shape (batch, {self.spec.in_width}), got {x.shape}")
        return x

    def forward(self, x) -> Tensor:
        h = self._check_input(x)
        last = self.n_layers - 1
        for i, (w, b) in enumerate(self.layers()):
            h = ad.linear(h, w, b)
            h = _activate(self.spec.output_activation if i == last else self.spec.hidden_activation, h)
        return h

    __call__ = forward

    def forward_trace(self, x) -> tuple[Tensor, list[Tensor]]:
        """Forward pass that also returns every layer's post-activation output."""
        h = self._check_input(x)
        outs = []
        last = self.n_layers - 1
        for i, (w, b) in enumerate(self.layers()):
            h = _activate(self.spec.output_activation if i == last else self.spec.hidden_activation,
                          ad.linear(h, w, b))
            outs.append(h)
        return h, outs

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters:
            p.requires_grad = flag
            if flag and p.grad is None:
                p.grad = np.zeros_like(p.value)

    def flat_values(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.parameters])

    def checksum(self) -> float:
        """Order-sensitive scalar fingerprint of all parameter values."""
        flat = self.flat_values()
        return float(np.dot(flat, np.cos(np.arange(flat.size))))

    def copy(self):
        return type(self)(self.spec, [Tensor(p.value.copy(), requires_grad=p.requires_grad)
                                      for p in self.parameters])


class Generator(Mlp):
    @property
    def z_dim(self) -> int:
        return self.spec.in_width

    @property
    def data_dim(self) -> int:
        return self.spec.out_width


class Discriminator(Mlp):
    @property
    def m(self) -> int:
        return self.spec.out_width

    @property
    def data_dim(self) -> int:
        return self.spec.in_width


def build_generator(z_dim: int, data_dim: int, hidden=(128, 128), rng=0,
                    hidden_activation="relu", output_activation="linear") -> Generator:
    spec = MlpSpec((z_dim, *hidden, data_dim), hidden_activation, output_activation)
    return Generator.initialize(spec, rng)


def build_discriminator(data_dim: int, m: int, hidden=(128, 128), rng=0,
                        hidden_activation="relu", output_activation="linear") -> Discriminator:
    if m < 1:
        raise ValueError(f"embedding dimension m must be >= 1, got {m}")
    spec = MlpSpec((data_dim, *hidden, m), hidden_activation, output_activation)
    return Discriminator.initialize(spec, rng)


def generate(gen: Generator, z) -> Tensor:
    return gen.forward(z)


def embed(disc: Discriminator, x) -> Tensor:
    """Embedding codes of shape (batch, m)."""
    return disc.forward(x)


def realness(codes: Tensor) -> Tensor:
    """Per-sample realness: the mean of each embedding code over its m dimensions."""
    return ad.mean(codes, axis=1)


def input_gradient_of_realness(disc: Discriminator, x) -> Tensor:
    """d realness(x) / dx for each row of ``x``, built as a differentiable graph.

    The forward activations are recorded first; the backward chain through the
    layers is then replayed with tape ops, so ``backward`` on any function of
    the result differentiates through it into the discriminator parameters.
    """
    _, outs = disc.forward_trace(x)
    spec = disc.spec
    n = outs[-1].shape[0]
    g: Tensor = Tensor(np.full((n, disc.m), 1.0 / disc.m))
    layers = list(disc.layers())
    for i in range(len(layers) - 1, -1, -1):
        kind = spec.output_activation if i == len(layers) - 1 else spec.hidden_activation
        h = outs[i]
        if kind == "relu":
            g = ad.mul(g, Tensor((h.value > 0).astype(np.float64)))
        elif kind == "tanh":
            g = ad.mul(g, ad.sub(1.0, ad.square(h)))
        g = ad.matmul(g, ad.transpose(layers[i][0]))
    return g


def gradient_penalty(disc: Discriminator, x_real, x_fake, center: float = 1.0,
                     rng: np.random.Generator | None = None, u=None) -> Tensor:
    """Mean over rows of (||grad_x realness(x_hat)|| - center)^2 at random interpolates.

    ``u`` (one mixing weight per row) is drawn from ``rng`` unless given.
    """
    xr = x_real.value if isinstance(x_real, Tensor) else np.asarray(x_real, dtype=np.float64)
    xf = x_fake.value if isinstance(x_fake, Tensor) else np.asarray(x_fake, dtype=np.float64)
    if xr.shape != xf.shape:
        raise ValueError(f"gradient_penalty: real batch {xr.shape} and fake batch {xf.shape} differ")
    if u is None:
        rng = np.random.default_rng() if rng is None else rng
        u = rng.uniform(0.0, 1.0, size=(xr.shape[0], 1))
    u = np.asarray(u, dtype=np.float64).reshape(-1, 1)
    x_hat = u * xr + (1.0 - u) * xf
    grad = input_gradient_of_realness(disc, x_hat)
    norms = ad.l2_norm(grad, axis=1)
    return ad.mean(ad.square(ad.sub(norms, float(center))))


# -- checkpoints --------------------------------------------------------------------


def _describe(net: Mlp) -> dict:
    d = asdict(net.spec)
    d["layer_widths"] = list(d["layer_widths"])
    d["shapes"] = [list(p.shape) for p in net.parameters]
    return d


def save_checkpoint(path, gen: Generator, disc: Discriminator) -> Path:
    """Write a one-line JSON header then all parameters as little-endian float64.

    Layout: ``MAEMGAN-CKPT v1 <json>\\n`` followed by the generator's
    parameters and then the discriminator's, each in layer order
    (weight as fan_in x fan_out row-major, then bias).
    """
    path = Path(path)
    header = {"generator": _describe(gen), "discriminator": _describe(disc)}
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {json.dumps(header, sort_keys=True)}\n".encode("ascii"))
        for net in (gen, disc):
            for p in net.parameters:
                fh.write(p.value.astype("<f8").tobytes())
    return path


def load_checkpoint(path) -> tuple[Generator, Discriminator]:
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    line = raw[:newline].decode("ascii")
    if not line.startswith(CHECKPOINT_MAGIC + " "):
        raise ValueError(f"{path}: not a checkpoint file")
    header = json.loads(line[len(CHECKPOINT_MAGIC) + 1:])
    data = np.frombuffer(raw[newline + 1:], dtype="<f8")
    offset = 0
    nets = []
    for key, cls in (("generator", Generator), ("discriminator", Discriminator)):
        info = header[key]
        spec = MlpSpec(tuple(info["layer_widths"]), info["hidden_activation"], info["output_activation"])
        params = []
        for shape in info["shapes"]:
            n = int(np.prod(shape))
            params.append(Tensor(data[offset:offset + n].reshape(shape).astype(np.float64),
                                 requires_grad=True))
            offset += n
        nets.append(cls(spec, params))
    if offset != data.size:
        raise ValueError(f"{path}: {data.size - offset} trailing values after parameters")
    return nets[0], nets[1]
