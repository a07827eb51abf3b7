"""Small float64 neural substrate shared by both estimators.

Dense and masked-dense layers, masked residual blocks, autoregressive
(masked-autoencoder) connectivity construction, the two losses, and Adam.
Everything is numpy, row-major float64, batch-first. Masked weights
contribute exactly zero to outputs and gradients; every forward output is
checked finite; all randomness flows through explicitly seeded generators
so training is bit-reproducible on a single platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "identity", "softmax_grouped")


class NonFiniteError(FloatingPointError):
    pass


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def grouped_softmax(logits: np.ndarray, group_sizes) -> np.ndarray:
    """Softmax independently over consecutive column groups."""
    out = np.empty_like(logits)
    off = 0
    for size in group_sizes:
        sub = logits[..., off : off + size]
        sub = sub - sub.max(axis=-1, keepdims=True)
        ex = np.exp(sub)
        out[..., off : off + size] = ex / ex.sum(axis=-1, keepdims=True)
        off += size
    return out


def grouped_log_softmax(logits: np.ndarray, group_sizes) -> np.ndarray:
    out = np.empty_like(logits)
    off = 0
    for size in group_sizes:
        sub = logits[..., off : off + size]
        shifted = sub - sub.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        out[..., off : off + size] = shifted - lse
        off += size
    return out


def glorot_uniform(rng: np.random.Generator, out_width: int, in_width: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_width + out_width))
    return rng.uniform(-limit, limit, size=(out_width, in_width))


def _apply_activation(z, activation, groups):
    if activation == "identity":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "softmax_grouped":
        return grouped_softmax(z, groups)
    raise ValueError(f"unknown activation {activation!r}")


def _activation_backward(dy, z, y, activation, groups):
    if activation == "identity":
        return dy
    if activation == "relu":
        return dy * (z > 0.0)
    if activation == "sigmoid":
        return dy * y * (1.0 - y)
    if activation == "softmax_grouped":
        dz = np.empty_like(dy)
        off = 0
        for size in groups:
            ys = y[..., off : off + size]
            dys = dy[..., off : off + size]
            inner = (dys * ys).sum(axis=-1, keepdims=True)
            dz[..., off : off + size] = ys * (dys - inner)
            off += size
        return dz
    raise ValueError(f"unknown activation {activation!r}")


class DenseLayer:
    """y = activation(x @ W.T + b) with W of shape [out, in]."""

    def __init__(self, W: np.ndarray, b: np.ndarray, activation: str = "identity", groups=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.activation = activation
        self.groups = tuple(groups) if groups else None
        check_finite(self.W, "weights")
        check_finite(self.b, "bias")

    @classmethod
    def create(cls, rng, in_width, out_width, activation="identity", groups=None):
        return cls(glorot_uniform(rng, out_width, in_width), np.zeros(out_width), activation, groups)

    @property
    def in_width(self) -> int:
        return self.W.shape[1]

    @property
    def out_width(self) -> int:
        return self.W.shape[0]

    def effective_weight(self) -> np.ndarray:
        return self.W

    def parameters(self):
        return [("W", self.W), ("b", self.b)]

    def set_parameters(self, arrays):
        self.W, self.b = arrays

    def forward(self, x):
        z = x @ self.effective_weight().T + self.b
        y = _apply_activation(z, self.activation, self.groups)
        check_finite(y, "layer output")
        return y, (x, z, y)

    def _mask_grad(self, dW):
        return dW

    def backward(self, cache, dy):
        x, z, y = cache
        dz = _activation_backward(dy, z, y, self.activation, self.groups)
        dW = self._mask_grad(dz.T @ x)
        db = dz.sum(axis=0)
        dx = dz @ self.effective_weight()
        return [dW, db], dx


class MaskedDenseLayer(DenseLayer):
    """Dense layer with a fixed binary connectivity mask on W.

    Masked entries are exactly zero in the effective weight and receive
    exactly zero gradient.
    """

    def __init__(self, W, b, mask, activation="identity", groups=None):
        super().__init__(W, b, activation, groups)
        self.mask = np.asarray(mask, dtype=np.float64)
        if self.mask.shape != self.W.shape:
            raise ValueError("mask shape must match weight shape")

    @classmethod
    def create(cls, rng, in_width, out_width, mask, activation="identity", groups=None):
        return cls(glorot_uniform(rng, out_width, in_width), np.zeros(out_width), mask, activation, groups)

    def effective_weight(self):
        return self.W * self.mask

    def _mask_grad(self, dW):
        return dW * self.mask

    def forward_rows(self, x, lo: int, hi: int):
        """Output slice [lo, hi) without computing the other rows; identity
        activation only (used for per-group logits at sampling time)."""
        if self.activation != "identity":
            raise ValueError("forward_rows requires identity activation")
        return x @ (self.W[lo:hi] * self.mask[lo:hi]).T + self.b[lo:hi]


class MaskedResidualBlock:
    """x + W2(relu(W1(relu(x)))) with one shared mask on both inner layers.

    Pre-activation residual form; the identity skip preserves the
    autoregressive property because both layers share one hidden-to-hidden
    mask built from a single degree assignment.
    """

    def __init__(self, W1, b1, W2, b2, mask):
        self.lin1 = MaskedDenseLayer(W1, b1, mask, activation="identity")
        self.lin2 = MaskedDenseLayer(W2, b2, mask, activation="identity")

    @classmethod
    def create(cls, rng, width, mask):
        return cls(
            glorot_uniform(rng, width, width), np.zeros(width),
            glorot_uniform(rng, width, width), np.zeros(width),
            mask,
        )

    @property
    def in_width(self):
        return self.lin1.in_width

    @property
    def out_width(self):
        return self.lin2.out_width

    def parameters(self):
        return [("W1", self.lin1.W), ("b1", self.lin1.b), ("W2", self.lin2.W), ("b2", self.lin2.b)]

    def set_parameters(self, arrays):
        self.lin1.W, self.lin1.b, self.lin2.W, self.lin2.b = arrays

    def forward(self, x):
        a0 = np.maximum(x, 0.0)
        z1 = a0 @ self.lin1.effective_weight().T + self.lin1.b
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ self.lin2.effective_weight().T + self.lin2.b
        y = x + z2
        check_finite(y, "residual block output")
        return y, (x, a0, z1, a1)

    def backward(self, cache, dy):
        x, a0, z1, a1 = cache
        dz2 = dy
        dW2 = (dz2.T @ a1) * self.lin2.mask
        db2 = dz2.sum(axis=0)
        da1 = dz2 @ self.lin2.effective_weight()
        dz1 = da1 * (z1 > 0.0)
        dW1 = (dz1.T @ a0) * self.lin1.mask
        db1 = dz1.sum(axis=0)
        dx = dy + (dz1 @ self.lin1.effective_weight()) * (x > 0.0)
        return [dW1, db1, dW2, db2], dx


class ConcatDenseLayer:
    """Independent dense sublayers over input column ranges, concatenated.

    Used for the optional per-part projections in front of a network whose
    input is a concatenation of heterogeneous feature blocks.
    """

    def __init__(self, parts):
        # parts: list of (lo, hi, DenseLayer)
        self.parts = list(parts)

    @classmethod
    def create(cls, rng, slices, out_width, activation="relu"):
        parts = []
        for lo, hi in slices:
            parts.append((lo, hi, DenseLayer.create(rng, hi - lo, out_width, activation)))
        return cls(parts)

    @property
    def in_width(self):
        return max(hi for _, hi, _ in self.parts)

    @property
    def out_width(self):
        return sum(layer.out_width for _, _, layer in self.parts)

    def parameters(self):
        out = []
        for i, (_, _, layer) in enumerate(self.parts):
            out.extend((f"p{i}.{n}", a) for n, a in layer.parameters())
        return out

    def set_parameters(self, arrays):
        for i, (_, _, layer) in enumerate(self.parts):
            layer.set_parameters(arrays[2 * i : 2 * i + 2])

    def forward(self, x):
        ys, caches = [], []
        for lo, hi, layer in self.parts:
            y, cache = layer.forward(x[:, lo:hi])
            ys.append(y)
            caches.append(cache)
        return np.concatenate(ys, axis=1), caches

    def backward(self, caches, dy):
        grads = []
        dx = np.zeros((dy.shape[0], self.in_width))
        off = 0
        for (lo, hi, layer), cache in zip(self.parts, caches):
            w = layer.out_width
            g, dxi = layer.backward(cache, dy[:, off : off + w])
            grads.extend(g)
            dx[:, lo:hi] += dxi
            off += w
        return grads, dx


class Network:
    """A plain layer stack with explicit forward caches and backprop."""

    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def in_width(self):
        return self.layers[0].in_width

    @property
    def out_width(self):
        return self.layers[-1].out_width

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(arr for _, arr in layer.parameters())
        return out

    def parameter_names(self) -> list[str]:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(f"layer{i}.{n}" for n, _ in layer.parameters())
        return out

    def load_parameters(self, arrays: list[np.ndarray]):
        off = 0
        for layer in self.layers:
            n = len(layer.parameters())
            layer.set_parameters([np.asarray(a, dtype=np.float64) for a in arrays[off : off + n]])
            off += n
        if off != len(arrays):
            raise ValueError("parameter count mismatch")

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, d_out):
        """Gradients for every parameter plus the input gradient."""
        grads_rev = []
        dx = d_out
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, dx = layer.backward(cache, dx)
            grads_rev.append(g)
        grads = []
        for g in reversed(grads_rev):
            grads.extend(g)
        for arr in grads:
            check_finite(arr, "parameter gradient")
        return grads, dx

    def forward_prefix(self, x, n_tail: int = 1):
        """Activations entering the last n_tail layers; no caches kept."""
        x = np.asarray(x, dtype=np.float64)
        for layer in self.layers[: len(self.layers) - n_tail]:
            x, _ = layer.forward(x)
        return x


# -- autoregressive mask construction -----------------------------------------


@dataclass(frozen=True)
class MadeMaskPlan:
    """Connectivity degrees for an autoregressive masked network.

    Input variable i carries degree order[i] (1..D); hidden units carry
    degrees in [1, D-1]; a hidden connection requires out-degree >= in-
    degree and an output connection strictly greater, so output group i
    can only reach inputs with smaller degree. Residual stacks reuse one
    hidden degree vector for every hidden layer, keeping the identity
    skip consistent with the masks.
    """

    D: int
    input_degrees: tuple[int, ...]
    hidden_degrees: tuple[tuple[int, ...], ...]
    input_widths: tuple[int, ...]
    output_widths: tuple[int, ...]

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {
            "plan.input_degrees": np.array(self.input_degrees, dtype=np.int64),
            "plan.input_widths": np.array(self.input_widths, dtype=np.int64),
            "plan.output_widths": np.array(self.output_widths, dtype=np.int64),
        }
        for i, deg in enumerate(self.hidden_degrees):
            out[f"plan.hidden_degrees.{i}"] = np.array(deg, dtype=np.int64)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], n_hidden: int) -> "MadeMaskPlan":
        hidden = tuple(
            tuple(int(x) for x in arrays[f"plan.hidden_degrees.{i}"]) for i in range(n_hidden)
        )
        input_degrees = tuple(int(x) for x in arrays["plan.input_degrees"])
        return cls(
            D=len(input_degrees),
            input_degrees=input_degrees,
            hidden_degrees=hidden,
            input_widths=tuple(int(x) for x in arrays["plan.input_widths"]),
            output_widths=tuple(int(x) for x in arrays["plan.output_widths"]),
        )

    def layer_masks(self) -> list[np.ndarray]:
        """Masks for the stack: input layer, hidden-to-hidden, output layer."""
        in_deg = np.repeat(np.array(self.input_degrees), np.array(self.input_widths))
        masks = []
        prev = in_deg
        for deg in self.hidden_degrees:
            cur = np.array(deg)
            masks.append((cur[:, None] >= prev[None, :]).astype(np.float64))
            prev = cur
        out_deg = np.repeat(np.array(self.input_degrees), np.array(self.output_widths))
        masks.append((out_deg[:, None] > prev[None, :]).astype(np.float64))
        return masks


def build_made_masks(
    hidden_widths,
    D: int,
    seed: int,
    order=None,
    input_widths=None,
    output_widths=None,
) -> MadeMaskPlan:
    """Draw hidden degrees uniformly from [1, D-1] and assemble a plan.

    hidden_widths of equal size share a single degree vector (required
    when the layers sit inside residual blocks); unequal widths each get
    an independent draw. order, when given, is a permutation of 1..D
    assigning degrees to input variables; the same ordering applies to the
    output groups.
    """
    if D < 2:
        raise ValueError("need at least two autoregressive variables")
    hidden_widths = [int(w) for w in hidden_widths]
    if any(w < 1 for w in hidden_widths):
        raise ValueError("hidden widths must be >= 1")
    if order is None:
        input_degrees = tuple(range(1, D + 1))
    else:
        if sorted(order) != list(range(1, D + 1)):
            raise ValueError("order must be a permutation of 1..D")
        input_degrees = tuple(int(x) for x in order)
    input_widths = tuple(int(w) for w in (input_widths or [1] * D))
    output_widths = tuple(int(w) for w in (output_widths or [1] * D))
    if len(input_widths) != D or len(output_widths) != D:
        raise ValueError("per-variable widths must have length D")
    rng = np.random.default_rng(seed)
    if len(set(hidden_widths)) == 1:
        shared = tuple(int(x) for x in rng.integers(1, D, size=hidden_widths[0]))
        hidden = tuple(shared for _ in hidden_widths)
    else:
        hidden = tuple(tuple(int(x) for x in rng.integers(1, D, size=w)) for w in hidden_widths)
    return MadeMaskPlan(D, input_degrees, hidden, input_widths, output_widths)


def build_resmade(
    D: int,
    input_widths,
    hidden_width: int,
    n_blocks: int,
    output_widths,
    seed: int,
) -> tuple[Network, MadeMaskPlan]:
    """Masked input layer, n_blocks residual blocks, masked output layer."""
    plan = build_made_masks(
        [hidden_width], D, seed, input_widths=input_widths, output_widths=output_widths
    )
    mask_in, mask_out = plan.layer_masks()
    deg = np.array(plan.hidden_degrees[0])
    mask_hh = (deg[:, None] >= deg[None, :]).astype(np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    layers: list = [MaskedDenseLayer.create(rng, int(mask_in.shape[1]), hidden_width, mask_in)]
    for _ in range(n_blocks):
        layers.append(MaskedResidualBlock.create(rng, hidden_width, mask_hh))
    layers.append(MaskedDenseLayer.create(rng, hidden_width, int(mask_out.shape[0]), mask_out))
    return Network(layers), plan


def build_mlp(in_width: int, hidden_widths, seed: int, out_width: int = 1, out_activation: str = "sigmoid") -> Network:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    layers = []
    prev = in_width
    for w in hidden_widths:
        layers.append(DenseLayer.create(rng, prev, w, activation="relu"))
        prev = w
    layers.append(DenseLayer.create(rng, prev, out_width, activation=out_activation))
    return Network(layers)


# -- losses -------------------------------------------------------------------


def qerror_loss(pred_scaled: np.ndarray, target_scaled: np.ndarray, log_min: float, log_max: float):
    """Mean multiplicative error in scaled space.

    With u = (ln y - m)/(M - m) targets and sigmoid outputs u_hat, each
    example contributes exp(|u_hat - u| * (M - m)), which equals
    max(y_hat/y, y/y_hat) after inverting the scaling; 1 is perfect. The
    subgradient at u_hat = u is 0. Returns (loss, d loss / d pred).
    """
    if log_max <= log_min:
        raise ValueError("log_max must exceed log_min")
    pred = np.asarray(pred_scaled, dtype=np.float64)
    target = np.asarray(target_scaled, dtype=np.float64)
    span = log_max - log_min
    delta = pred - target
    q = np.exp(np.abs(delta) * span)
    loss = float(q.mean())
    grad = np.sign(delta) * span * q / q.size
    check_finite(grad, "q-error gradient")
    return loss, grad


def nll_loss(logits: np.ndarray, observed: np.ndarray, group_sizes):
    """Mean negative log-likelihood over per-variable softmax groups.

    observed[:, i] indexes within group i's vocabulary. Returns
    (loss, d loss / d logits).
    """
    logits = np.asarray(logits, dtype=np.float64)
    observed = np.asarray(observed)
    batch = logits.shape[0]
    if observed.shape[0] != batch or observed.shape[1] != len(group_sizes):
        raise ValueError("observed ids shape mismatch")
    grad = np.zeros_like(logits)
    loss = 0.0
    off = 0
    rows = np.arange(batch)
    for g, size in enumerate(group_sizes):
        ids = observed[:, g].astype(np.int64)
        if ids.min(initial=0) < 0 or ids.max(initial=0) >= size:
            raise ValueError(f"observed id out of range for group {g} (size {size})")
        sub = logits[:, off : off + size]
        shifted = sub - sub.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        denom = ex.sum(axis=1, keepdims=True)
        probs = ex / denom
        log_probs = shifted - np.log(denom)
        loss -= float(log_probs[rows, ids].sum())
        gslice = probs.copy()
        gslice[rows, ids] -= 1.0
        grad[:, off : off + size] = gslice / batch
        off += size
    loss /= batch
    check_finite(grad, "NLL gradient")
    return loss, grad


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators with bias correction."""

    params: list
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
        if not self.v:
            self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("gradient list length mismatch")
        for g in grads:
            check_finite(g, "gradient")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        return self.params


def adam_step(state: AdamState, params, grads):
    """Functional wrapper over AdamState.step; params must be state.params."""
    if params is not state.params and any(p is not q for p, q in zip(params, state.params)):
        raise ValueError("params must be the arrays registered with the state")
    return state.step(grads)
