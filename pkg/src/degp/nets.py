"""Multilayer perceptrons for ensemble members and prior feature projectors.

Ensemble parameters are stored stacked along a leading member axis, so one
batched matmul evaluates all M members.  Layer ``l`` of an independent
ensemble holds ``W{l}: (M, fan_in, fan_out)`` and ``b{l}: (M, 1, fan_out)``.
In shared-trunk mode every hidden layer is a single 2-D matrix (``trunk.W{l}``,
``trunk.b{l}``) and only the readout is stacked (``head.W``, ``head.b``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import ndcore as nd
from .ndcore import ShapeError, Tensor

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...] = ()
    output_dim: int = 1
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"all MLP extents must be >= 1: {self}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1] if self.hidden else self.input_dim


def init_mlp(spec: MlpSpec, seed, weight_var: float | None = None, bias_var: float = 0.0) -> Params:
    """He-initialized weights for one network.

    Weights are N(0, 2/fan_in) unless ``weight_var`` overrides the
    numerator; biases are N(0, bias_var), zero by default.
    """
    rng = np.random.default_rng(seed)
    params: Params = {}
    widths = spec.widths
    for l in range(spec.n_layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        scale = np.sqrt((2.0 if weight_var is None else weight_var) / fan_in)
        params[f"W{l}"] = rng.standard_normal((fan_in, fan_out)) * scale
        b = rng.standard_normal((1, fan_out)) * np.sqrt(bias_var) if bias_var > 0 else np.zeros((1, fan_out))
        params[f"b{l}"] = b
    return params


def _check_input(spec: MlpSpec, X) -> None:
    Xv = X.data if isinstance(X, Tensor) else np.asarray(X)
    if Xv.ndim != 2 or Xv.shape[1] != spec.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {spec.input_dim}), got {Xv.shape}")


def forward_features(spec: MlpSpec, params: Mapping, X, n_hidden: int | None = None):
    """Penultimate activations. With no hidden layer the projector is the identity."""
    _check_input(spec, X)
    h = X
    for l in range(len(spec.hidden) if n_hidden is None else n_hidden):
        h = nd.relu(nd.add(nd.matmul(h, params[f"W{l}"]), params[f"b{l}"]))
    return h


def readout(spec: MlpSpec, params: Mapping, h):
    l = spec.n_layers - 1
    return nd.add(nd.matmul(h, params[f"W{l}"]), params[f"b{l}"])


def forward(spec: MlpSpec, params: Mapping, X):
    """g(X, w): n x C outputs (or M x n x C when ``params`` are stacked)."""
    return readout(spec, params, forward_features(spec, params, X))


@dataclass
class EnsembleWeights:
    spec: MlpSpec
    params: Params
    shared_trunk: bool = False
    members: int = field(init=False)

    def __post_init__(self):
        key = "head.W" if self.shared_trunk else f"W{self.spec.n_layers - 1}"
        self.members = self.params[key].shape[0]
        if self.members < 1:
            raise ValueError("ensemble needs at least one member")

    def copy(self) -> "EnsembleWeights":
        return EnsembleWeights(self.spec, {k: v.copy() for k, v in self.params.items()}, self.shared_trunk)

    def member(self, i: int) -> Params:
        """Plain (unstacked) parameters of member ``i``."""
        if not self.shared_trunk:
            return {k: v[i] for k, v in self.params.items()}
        out = {k[len("trunk."):]: v for k, v in self.params.items() if k.startswith("trunk.")}
        l = self.spec.n_layers - 1
        out[f"W{l}"] = self.params["head.W"][i]
        out[f"b{l}"] = self.params["head.b"][i]
        return out

    def member_keys(self) -> list[str]:
        """Keys whose leading axis indexes members."""
        if self.shared_trunk:
            return ["head.W", "head.b"]
        return list(self.params)

    def sq_norm(self) -> float:
        return float(np.sum([np.sum(v * v) for v in self.params.values()]))


def init_ensemble(spec: MlpSpec, M: int, seed, shared_trunk: bool = False) -> EnsembleWeights:
    """M members, member ``i`` initialized from the seed sequence ``(seed, i)``."""
    if M < 1:
        raise ValueError("ensemble needs at least one member")
    members = [init_mlp(spec, [int(seed), i]) for i in range(M)]
    if not shared_trunk:
        params = {k: np.stack([m[k] for m in members]) for k in members[0]}
        return EnsembleWeights(spec, params, False)
    params = {f"trunk.{k}": v for k, v in members[0].items() if int(k[1:]) < spec.n_layers - 1}
    l = spec.n_layers - 1
    params["head.W"] = np.stack([m[f"W{l}"] for m in members])
    params["head.b"] = np.stack([m[f"b{l}"] for m in members])
    return EnsembleWeights(spec, params, True)


def ensemble_forward(ens: EnsembleWeights, X, params: Mapping | None = None):
    """Raw member block of shape (M, n, C).

    ``params`` lets the trainer substitute watched tensors for the stored arrays.
    """
    p = ens.params if params is None else params
    spec = ens.spec
    if not ens.shared_trunk:
        return forward(spec, p, X)
    _check_input(spec, X)
    h = X
    for l in range(len(spec.hidden)):
        h = nd.relu(nd.add(nd.matmul(h, p[f"trunk.W{l}"]), p[f"trunk.b{l}"]))
    return nd.add(nd.matmul(h, p["head.W"]), p["head.b"])


def save_checkpoint(path, ens: EnsembleWeights, extra: Mapping[str, np.ndarray] | None = None) -> None:
    """Write named float64 arrays to a numpy ``.npz`` archive.

    Layout: one array per parameter key plus ``__spec__`` =
    [input_dim, output_dim, shared_trunk, *hidden].
    """
    spec = ens.spec
    meta = np.array([spec.input_dim, spec.output_dim, int(ens.shared_trunk), *spec.hidden], dtype=np.int64)
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in ens.params.items()}
    for k, v in (extra or {}).items():
        arrays[f"extra.{k}"] = np.asarray(v, dtype=np.float64)
    np.savez(Path(path), __spec__=meta, **arrays)


def load_checkpoint(path) -> tuple[EnsembleWeights, dict[str, np.ndarray]]:
    with np.load(Path(path)) as z:
        meta = z["__spec__"]
        spec = MlpSpec(int(meta[0]), tuple(int(h) for h in meta[3:]), int(meta[1]))
        params = {k: z[k].copy() for k in z.files if k != "__spec__" and not k.startswith("extra.")}
        extra = {k[len("extra."):]: z[k].copy() for k in z.files if k.startswith("extra.")}
    return EnsembleWeights(spec, params, bool(meta[2])), extra


def stack_members(spec: MlpSpec, members: Sequence[Params]) -> EnsembleWeights:
    return EnsembleWeights(spec, {k: np.stack([m[k] for m in members]) for k in members[0]})
