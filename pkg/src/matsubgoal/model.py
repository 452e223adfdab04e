"""Hierarchical subgoal predictor.

Three encoders produce the task embedding (CLS output of a small transformer
over the instruction), the subgoal-history embedding (last position of a
causal transformer over past subgoals) and the state embedding (projection of
the held-object one-hot and the spatially pooled class map). Their
concatenation feeds two MLP heads (interaction type, argument class) and a
language-conditioned per-cell mask head over the egocentric top-down map.

Perturbations are added at three sites: the instruction input embeddings, the
subgoal input embeddings, and the projected state vector.
"""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .birdseye import build_birds_eye, egocentric_index, transform_to_egocentric
from .catalog import ACTS, AFFORDANCES, NUM_CLASSES
from .structures import StateRepr, Subgoal

SPACES = ("instruction", "subgoals", "state")


@dataclass
class ModelConfig:
    vocab_size: int
    grid: tuple[int, int] = (11, 11)
    n_classes: int = NUM_CLASSES
    n_acts: int = len(ACTS)
    d_lang: int = 32
    d_hist: int = 32
    d_state: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 64
    d_head_hidden: int = 64
    d_mask_hidden: int = 48
    max_tokens: int = 32
    max_history: int = 64
    seed: int = 0

    def __post_init__(self):
        self.grid = tuple(self.grid)

    @property
    def ego_size(self) -> int:
        # large enough that no world cell is ever cut off
        return 2 * max(self.grid) - 1

    @property
    def bev_channels(self) -> int:
        return len(AFFORDANCES) + 1 + self.n_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d


@dataclass
class ModelInput:
    """One sample x_{t,k}: instruction, past subgoals and current state."""

    tokens: Sequence[int]
    history: Sequence[Subgoal]
    state: StateRepr
    ego_size: int = field(default=0, repr=False)

    def __post_init__(self):
        if not self.ego_size:
            self.ego_size = 2 * max(self.state.grid_shape) - 1

    @cached_property
    def state_features(self) -> np.ndarray:
        h, w, k = self.state.voxels.shape
        return self.state.voxels.reshape(h * w, k).astype(np.float64)

    @cached_property
    def history_masks(self) -> np.ndarray | None:
        if not self.history:
            return None
        return np.stack([sg.mask.reshape(-1) for sg in self.history]).astype(np.float64)

    @cached_property
    def ego_features(self) -> np.ndarray:
        bev = build_birds_eye(self.state, [sg.mask for sg in self.history])
        ego = transform_to_egocentric(bev, self.state.pose, self.ego_size)
        return ego.reshape(self.ego_size * self.ego_size, -1)

    @cached_property
    def world_to_ego(self) -> np.ndarray:
        return egocentric_index(self.state.pose, self.state.grid_shape, self.ego_size)


@dataclass
class ModelOutput:
    act_logits: Tensor
    arg_logits: Tensor
    mask_logits: Tensor  # over H*W world cells, row-major
    phi_l: Tensor
    phi_g: Tensor
    phi_s: Tensor

    @property
    def logits(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.act_logits, self.arg_logits, self.mask_logits

    def probabilities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(ad.softmax(t).data for t in self.logits)


class SubgoalModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, Parameter] = {}
        self._rng = np.random.default_rng(config.seed)
        c = config
        hw = c.grid[0] * c.grid[1]
        self._transformer("lang_enc", c.d_lang, c.vocab_size, c.max_tokens)
        self._transformer("hist_enc", c.d_hist, None, c.max_history + 1)
        self._embedding("hist_enc.start", (1, c.d_hist))
        self._embedding("hist_enc.act_emb", (c.n_acts, c.d_hist))
        self._embedding("hist_enc.arg_emb", (c.n_classes, c.d_hist))
        self._weight("hist_enc.mask_proj", (hw, c.d_hist), 4.0)
        self._weight("state_enc.w", (2 * c.n_classes, c.d_state))
        self._bias("state_enc.b", c.d_state)
        d_phi = c.d_lang + c.d_hist + c.d_state
        for head, n_out in (("act_head", c.n_acts), ("arg_head", c.n_classes)):
            self._weight(f"{head}.w1", (d_phi, c.d_head_hidden))
            self._bias(f"{head}.b1", c.d_head_hidden)
            self._weight(f"{head}.w2", (c.d_head_hidden, n_out), 0.1)
            self._bias(f"{head}.b2", n_out)
        self._weight("mask_head.w_cell", (c.bev_channels, c.d_mask_hidden))
        self._weight("mask_head.w_cond", (d_phi, c.d_mask_hidden))
        self._bias("mask_head.b", c.d_mask_hidden)
        self._weight("mask_head.w_out", (c.d_mask_hidden, 1), 0.1)
        self._bias("mask_head.ego_bias", c.ego_size * c.ego_size)

    # -- construction ---------------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        self.params[name] = Parameter(name, value)

    def _weight(self, name: str, shape: tuple[int, int], scale: float = 1.0) -> None:
        self._add(name, self._rng.normal(0.0, scale / np.sqrt(shape[0]), size=shape))

    def _embedding(self, name: str, shape: tuple[int, int]) -> None:
        self._add(name, self._rng.normal(0.0, 0.5, size=shape))

    def _bias(self, name: str, n: int, fill: float = 0.0) -> None:
        self._add(name, np.full(n, fill))

    def _transformer(self, prefix: str, d: int, vocab: int | None, max_len: int) -> None:
        c = self.config
        if vocab is not None:
            self._embedding(f"{prefix}.tok_emb", (vocab, d))
        self._embedding(f"{prefix}.pos_emb", (max_len, d))
        for i in range(c.n_layers):
            p = f"{prefix}.layer{i}"
            self._bias(f"{p}.ln1.g", d, 1.0)
            self._bias(f"{p}.ln1.b", d)
            for w in ("wq", "wk", "wv", "wo"):
                self._weight(f"{p}.{w}", (d, d))
            self._bias(f"{p}.ln2.g", d, 1.0)
            self._bias(f"{p}.ln2.b", d)
            self._weight(f"{p}.ff1", (d, c.d_ff))
            self._bias(f"{p}.ff1.b", c.d_ff)
            self._weight(f"{p}.ff2", (c.d_ff, d))
            self._bias(f"{p}.ff2.b", d)
        self._bias(f"{prefix}.ln_f.g", d, 1.0)
        self._bias(f"{prefix}.ln_f.b", d)

    # -- parameter management ------------------------------------------------------

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def parameter_breakdown(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for name, p in self.params.items():
            out[name.split(".")[0]] = out.get(name.split(".")[0], 0) + p.size
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, values: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(values)
        extra = set(values) - set(self.params)
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, value in values.items():
            if value.shape != self.params[name].shape:
                raise ValueError(f"{name}: expected shape {self.params[name].shape}, got {value.shape}")
            self.params[name].data = np.array(value, dtype=np.float64)

    @contextlib.contextmanager
    def frozen(self) -> Iterator[None]:
        """Stop tracking parameter gradients (inference / perturbation-only passes)."""
        saved = {n: p.requires_grad for n, p in self.params.items()}
        for p in self.params.values():
            p.requires_grad = False
        try:
            yield
        finally:
            for n, p in self.params.items():
                p.requires_grad = saved[n]

    # -- encoders --------------------------------------------------------------------

    def _encoder(self, prefix: str, x: Tensor, causal: bool) -> Tensor:
        P = self.params
        for i in range(self.config.n_layers):
            p = f"{prefix}.layer{i}"
            h = ad.layer_norm(x, P[f"{p}.ln1.g"], P[f"{p}.ln1.b"])
            a = ad.scaled_dot_product_attention(
                h @ P[f"{p}.wq"], h @ P[f"{p}.wk"], h @ P[f"{p}.wv"], causal=causal, n_heads=self.config.n_heads
            )
            x = x + a @ P[f"{p}.wo"]
            h = ad.layer_norm(x, P[f"{p}.ln2.g"], P[f"{p}.ln2.b"])
            f = ad.add_bias(ad.relu(ad.add_bias(h @ P[f"{p}.ff1"], P[f"{p}.ff1.b"])) @ P[f"{p}.ff2"], P[f"{p}.ff2.b"])
            x = x + f
        return ad.layer_norm(x, P[f"{prefix}.ln_f.g"], P[f"{prefix}.ln_f.b"])

    def language_inputs(self, tokens: Sequence[int]) -> Tensor:
        n = len(tokens)
        if n > self.config.max_tokens:
            raise ValueError(f"instruction of {n} tokens exceeds max_tokens={self.config.max_tokens}")
        P = self.params
        return ad.embedding_lookup(P["lang_enc.tok_emb"], tokens) + ad.embedding_lookup(P["lang_enc.pos_emb"], range(n))

    def encode_language(self, tokens: Sequence[int], delta_l: Tensor | None = None) -> Tensor:
        """Task embedding: CLS output of the instruction encoder."""
        x = self.language_inputs(tokens)
        if delta_l is not None:
            x = x + delta_l
        return ad.select(self._encoder("lang_enc", x, causal=False), 0)

    def history_inputs(self, history: Sequence[Subgoal], masks: np.ndarray | None = None) -> Tensor:
        P = self.params
        k = len(history)
        if k > self.config.max_history:
            raise ValueError(f"history of {k} subgoals exceeds max_history={self.config.max_history}")
        rows = P["hist_enc.start"]
        if k:
            if masks is None:
                masks = np.stack([sg.mask.reshape(-1) for sg in history]).astype(np.float64)
            emb = (
                ad.embedding_lookup(P["hist_enc.act_emb"], [sg.act for sg in history])
                + ad.embedding_lookup(P["hist_enc.arg_emb"], [sg.arg for sg in history])
                + Tensor(masks) @ P["hist_enc.mask_proj"]
            )
            rows = ad.concat([rows, emb], axis=0)
        return rows + ad.embedding_lookup(P["hist_enc.pos_emb"], range(k + 1))

    def encode_subgoal_history(
        self, history: Sequence[Subgoal], delta_g: Tensor | None = None, masks: np.ndarray | None = None
    ) -> Tensor:
        """Last position of the causal history encoder (a learned start row leads)."""
        return ad.select(self.encode_history_sequence(history, delta_g, masks), -1)

    def encode_history_sequence(
        self, history: Sequence[Subgoal], delta_g: Tensor | None = None, masks: np.ndarray | None = None
    ) -> Tensor:
        x = self.history_inputs(history, masks)
        if delta_g is not None:
            x = x + delta_g
        return self._encoder("hist_enc", x, causal=True)

    @staticmethod
    def state_vector(state: StateRepr, voxel_rows: np.ndarray | None = None) -> Tensor:
        """Held one-hot followed by the spatial max-pool of the class map."""
        if voxel_rows is None:
            h, w, k = state.voxels.shape
            voxel_rows = state.voxels.reshape(h * w, k).astype(np.float64)
        pooled = ad.max_pool_over_axis(Tensor(voxel_rows), axis=0)
        return ad.concat([Tensor(state.held.astype(np.float64)), pooled])

    def encode_state(self, state: StateRepr, delta_s: Tensor | None = None, voxel_rows: np.ndarray | None = None) -> Tensor:
        P = self.params
        phi = ad.relu(ad.add_bias(self.state_vector(state, voxel_rows) @ P["state_enc.w"], P["state_enc.b"]))
        return phi if delta_s is None else phi + delta_s

    # -- heads --------------------------------------------------------------------------

    def _mlp(self, head: str, phi: Tensor) -> Tensor:
        P = self.params
        h = ad.relu(ad.add_bias(phi @ P[f"{head}.w1"], P[f"{head}.b1"]))
        return ad.add_bias(h @ P[f"{head}.w2"], P[f"{head}.b2"])

    def predict_type_and_arg(self, phi: Tensor) -> tuple[Tensor, Tensor]:
        """Logits of the interaction-type and argument-class distributions."""
        return self._mlp("act_head", phi), self._mlp("arg_head", phi)

    def predict_mask(self, ego_features: np.ndarray, world_to_ego: np.ndarray, phi: Tensor) -> Tensor:
        """Per-world-cell logits from the egocentric map conditioned on ``phi``.

        Each egocentric cell goes through the same small MLP (the cell's
        channels plus a projection of ``phi``), a learned per-position bias is
        added, and the logits are gathered back to world cells.
        """
        P = self.params
        if (world_to_ego < 0).any():
            raise ValueError("egocentric grid too small: some world cells are cut off")
        cond = ad.add_bias(phi @ P["mask_head.w_cond"], P["mask_head.b"])
        hidden = ad.relu(ad.add_bias(Tensor(ego_features) @ P["mask_head.w_cell"], cond))
        e2 = ego_features.shape[0]
        ego_logits = ad.reshape(hidden @ P["mask_head.w_out"], (e2,)) + P["mask_head.ego_bias"]
        world = ad.embedding_lookup(ad.reshape(ego_logits, (e2, 1)), world_to_ego)
        return ad.reshape(world, (world_to_ego.size,))

    # -- full pass ----------------------------------------------------------------------

    def make_input(self, tokens: Sequence[int], history: Sequence[Subgoal], state: StateRepr) -> ModelInput:
        if state.grid_shape != self.config.grid:
            raise ValueError(f"state grid {state.grid_shape} does not match model grid {self.config.grid}")
        return ModelInput(list(tokens), list(history), state, self.config.ego_size)

    def embedding_shapes(self, x: ModelInput) -> dict[str, tuple[int, ...]]:
        c = self.config
        return {
            "instruction": (len(x.tokens), c.d_lang),
            "subgoals": (len(x.history) + 1, c.d_hist),
            "state": (c.d_state,),
        }

    def forward(self, x: ModelInput, delta: Mapping[str, Tensor] | None = None) -> ModelOutput:
        delta = delta or {}
        unknown = set(delta) - set(SPACES)
        if unknown:
            raise KeyError(f"unknown perturbation sites {sorted(unknown)}")
        shapes = self.embedding_shapes(x)
        for space, d in delta.items():
            if d is not None and d.shape != shapes[space]:
                raise ad.ShapeError(f"perturbation for {space} has shape {d.shape}, expected {shapes[space]}")
        phi_l = self.encode_language(x.tokens, delta.get("instruction"))
        phi_g = self.encode_subgoal_history(x.history, delta.get("subgoals"), x.history_masks)
        phi_s = self.encode_state(x.state, delta.get("state"), x.state_features)
        phi = ad.concat([phi_l, phi_g, phi_s])
        act, arg = self.predict_type_and_arg(phi)
        mask = self.predict_mask(x.ego_features, x.world_to_ego, phi)
        return ModelOutput(act, arg, mask, phi_l, phi_g, phi_s)

    def predict(self, x: ModelInput) -> Subgoal:
        """Most likely subgoal: argmax type, argmax argument, argmax cell."""
        with self.frozen():
            out = self.forward(x)
        act = int(out.act_logits.data.argmax())
        arg = int(out.arg_logits.data.argmax())
        h, w = self.config.grid
        if ACTS[act] == "Stop":
            return Subgoal.stop((h, w))
        mask = np.zeros(h * w, dtype=np.uint8)
        mask[int(out.mask_logits.data.argmax())] = 1
        return Subgoal(act, arg, mask.reshape(h, w))

    def clone(self) -> SubgoalModel:
        twin = SubgoalModel(self.config)
        twin.load_state_dict(self.state_dict())
        return twin
