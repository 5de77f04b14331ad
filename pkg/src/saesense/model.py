"""GPT-2 style decoder forward pass in float32 numpy, with hook points.

Hook points follow TransformerLens naming: ``blocks.{L}.hook_resid_pre``
is the residual stream entering block ``L``; ``blocks.{L}.hook_resid_post``
is the stream leaving it. ``ln_final.hook_normalized`` (layer index
``n_layers``) is the final-LayerNorm output, for readouts that should see
the stream after the last normalisation.

Weight tensor names (HuggingFace GPT-2 layout, optional ``transformer.``
prefix; ``Conv1D`` weights are stored ``[in, out]``)::

    wte.weight                    [vocab, d_model]
    wpe.weight                    [max_seq_len, d_model]
    h.{i}.ln_1.weight / .bias     [d_model]
    h.{i}.attn.c_attn.weight      [d_model, 3*d_model]   (q | k | v)
    h.{i}.attn.c_attn.bias        [3*d_model]
    h.{i}.attn.c_proj.weight      [d_model, d_model]
    h.{i}.attn.c_proj.bias        [d_model]
    h.{i}.ln_2.weight / .bias     [d_model]
    h.{i}.mlp.c_fc.weight         [d_model, d_mlp]
    h.{i}.mlp.c_fc.bias           [d_mlp]
    h.{i}.mlp.c_proj.weight       [d_mlp, d_model]
    h.{i}.mlp.c_proj.bias         [d_model]
    ln_f.weight / ln_f.bias       [d_model]
    lm_head.weight                [vocab, d_model]   (optional; tied to wte if absent)

Unknown tensors (e.g. the ``attn.bias`` causal-mask buffers in older
checkpoints) are ignored.
"""
from __future__ import annotations

import enum
import json
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, InputError
from .tensorfile import read_tensors, write_tensors

F32 = np.float32
_GELU_C = F32(np.sqrt(2.0 / np.pi))


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_head: int
    d_mlp: int
    vocab_size: int
    max_seq_len: int
    layernorm_epsilon: float = 1e-5

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_head", "d_mlp", "vocab_size", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"ModelConfig.{name} must be >= 1")
        if self.d_model != self.n_heads * self.d_head:
            raise ConfigError(f"d_model={self.d_model} != n_heads*d_head={self.n_heads * self.d_head}")
        if self.d_mlp != 4 * self.d_model:
            raise ConfigError(f"d_mlp={self.d_mlp} must be 4*d_model for the GPT-2 family")
        if not self.layernorm_epsilon > 0:
            raise ConfigError("layernorm_epsilon must be positive")

    @classmethod
    def gpt2_small(cls) -> ModelConfig:
        return cls(n_layers=12, d_model=768, n_heads=12, d_head=64, d_mlp=3072,
                   vocab_size=50257, max_seq_len=1024, layernorm_epsilon=1e-5)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> ModelConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read model config {path}: {exc}") from exc
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad model config {path}: {exc}") from exc

    @classmethod
    def resolve(cls, spec: str | os.PathLike) -> ModelConfig:
        """``"gpt2-small"`` or a path to a JSON file of fields."""
        if str(spec) in ("gpt2", "gpt2-small"):
            return cls.gpt2_small()
        return cls.from_json(spec)

    def to_json(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


class Site(str, enum.Enum):
    RESID_PRE = "resid_pre"
    RESID_POST = "resid_post"
    LN_FINAL = "ln_final"


_HOOK_RE = re.compile(r"^blocks\.(\d+)\.hook_(resid_pre|resid_post)$")
_LN_FINAL_NAME = "ln_final.hook_normalized"


@dataclass(frozen=True)
class HookPoint:
    layer: int
    site: Site
    position: int = -1

    def __post_init__(self):
        object.__setattr__(self, "site", Site(self.site))

    @property
    def name(self) -> str:
        if self.site is Site.LN_FINAL:
            return _LN_FINAL_NAME
        return f"blocks.{self.layer}.hook_{self.site.value}"

    def __str__(self) -> str:
        return self.name if self.position == -1 else f"{self.name}@{self.position}"

    @classmethod
    def parse(cls, text: str, n_layers: int | None = None) -> HookPoint:
        """Parse ``blocks.1.hook_resid_pre`` with an optional ``@pos`` suffix."""
        name, _, pos = str(text).partition("@")
        position = int(pos) if pos else -1
        if name == _LN_FINAL_NAME:
            if n_layers is None:
                raise ConfigError("ln_final hook needs n_layers to resolve")
            return cls(n_layers, Site.LN_FINAL, position)
        m = _HOOK_RE.match(name)
        if not m:
            raise ConfigError(f"unrecognised hook name {text!r}")
        return cls(int(m.group(1)), Site(m.group(2)), position)

    def order(self) -> int:
        """Position in computation order; a patch at order p is seen by captures at order >= p."""
        if self.site is Site.RESID_PRE:
            return 2 * self.layer
        if self.site is Site.RESID_POST:
            return 2 * self.layer + 1
        return 2 * self.layer


@dataclass(frozen=True, eq=False)
class PatchSpec:
    hook: HookPoint
    replacement: np.ndarray


@dataclass(frozen=True, eq=False)
class ForwardResult:
    captured: dict[HookPoint, np.ndarray]
    logits: np.ndarray | None


@dataclass(frozen=True, eq=False)
class Block:
    ln1_w: np.ndarray
    ln1_b: np.ndarray
    w_qkv: np.ndarray
    b_qkv: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln2_w: np.ndarray
    ln2_b: np.ndarray
    w_fc: np.ndarray
    b_fc: np.ndarray
    w_proj: np.ndarray
    b_proj: np.ndarray


def layer_norm(x: np.ndarray, w: np.ndarray, b: np.ndarray, eps: float) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + F32(eps)) * w + b


def gelu_tanh(x: np.ndarray) -> np.ndarray:
    return F32(0.5) * x * (F32(1.0) + np.tanh(_GELU_C * (x + F32(0.044715) * x * x * x)))


def _softmax_last(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class PrefixCache:
    """Unpatched state of one prompt, reusable for many last-position patches.

    A patch at the final token never alters keys/values at earlier
    positions, so those are computed once here. ``probe_value`` is the
    unpatched residual at the probe hook.
    """

    tokens: np.ndarray
    probe: HookPoint
    probe_value: np.ndarray
    keys: dict[int, np.ndarray]
    values: dict[int, np.ndarray]


class Model:
    """Immutable GPT-2 family transformer. ``forward`` is a pure function."""

    def __init__(self, config: ModelConfig, wte, wpe, blocks: Sequence[Block], ln_f_w, ln_f_b, unembed=None):
        self.config = config
        self.wte = _frozen(wte)
        self.wpe = _frozen(wpe)
        self.blocks = tuple(Block(**{k: _frozen(v) for k, v in vars(b).items()}) for b in blocks)
        self.ln_f_w = _frozen(ln_f_w)
        self.ln_f_b = _frozen(ln_f_b)
        # [d_model, vocab]; tied to wte when not given
        self.unembed = _frozen(self.wte.T if unembed is None else np.asarray(unembed).T)
        self.tied = unembed is None

    # ------------------------------------------------------------------ hooks
    def resolve(self, hook: HookPoint, seq_len: int) -> tuple[int, int]:
        """Return ``(order, position)`` for ``hook`` on a prompt of ``seq_len``."""
        n = self.config.n_layers
        if hook.site is Site.LN_FINAL:
            if hook.layer != n:
                raise InputError(f"ln_final hook must use layer {n}, got {hook.layer}")
        elif not 0 <= hook.layer < n:
            raise InputError(f"hook {hook} layer out of range [0, {n - 1}]")
        pos = hook.position + seq_len if hook.position < 0 else hook.position
        if not 0 <= pos < seq_len:
            raise InputError(f"hook {hook} position unresolvable for sequence length {seq_len}")
        return hook.order(), pos

    def _check_tokens(self, tokens) -> np.ndarray:
        toks = np.asarray(tokens)
        if toks.ndim != 1 or toks.size == 0:
            raise InputError("tokens must be a non-empty 1-D sequence")
        if not np.issubdtype(toks.dtype, np.integer):
            raise InputError("token ids must be integers")
        if toks.size > self.config.max_seq_len:
            raise InputError(f"sequence length {toks.size} exceeds max_seq_len {self.config.max_seq_len}")
        if toks.min() < 0 or toks.max() >= self.config.vocab_size:
            raise InputError(f"token id out of range [0, {self.config.vocab_size})")
        return toks.astype(np.int64)

    def _check_activation(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=F32)
        if a.shape != (self.config.d_model,):
            raise InputError(f"activation shape {a.shape} != ({self.config.d_model},)")
        if not np.all(np.isfinite(a)):
            raise InputError("activation has non-finite entries")
        return a

    # ---------------------------------------------------------------- forward
    def forward(
        self,
        tokens,
        patch: PatchSpec | None = None,
        capture: Iterable[HookPoint] = (),
        logits: bool = True,
    ) -> ForwardResult:
        """Run the model on ``tokens``.

        ``patch`` overwrites the residual at one hook/position before any
        later computation reads it; captures at that same hook see the
        patched value. With ``logits=False`` the pass stops after the last
        requested capture.
        """
        toks = self._check_tokens(tokens)
        captured, out, _ = self._run(toks, patch, tuple(capture), logits, keep_kv_from=None)
        return ForwardResult(captured, out)

    def _run(self, toks, patch, capture, want_logits, keep_kv_from):
        cfg = self.config
        T = toks.size
        want: dict[int, list[tuple[HookPoint, int]]] = {}
        for h in capture:
            order, pos = self.resolve(h, T)
            want.setdefault(order, []).append((h, pos))
        patch_order = patch_pos = None
        if patch is not None:
            patch_order, patch_pos = self.resolve(patch.hook, T)
            if patch.hook.site is Site.LN_FINAL:
                raise InputError("patching the final LayerNorm output is not supported")
            replacement = self._check_activation(patch.replacement)
        last_needed = max(want) if want else -1
        captured: dict[HookPoint, np.ndarray] = {}
        keys: dict[int, np.ndarray] = {}
        vals: dict[int, np.ndarray] = {}

        def visit(order, x):
            if order == patch_order:
                x = x.copy()
                x[patch_pos] = replacement
            for h, pos in want.get(order, ()):
                captured[h] = x[pos].copy()
            return x

        x = self.wte[toks] + self.wpe[:T]
        for layer, blk in enumerate(self.blocks):
            x = visit(2 * layer, x)
            if not want_logits and 2 * layer >= last_needed:
                return captured, None, (keys, vals)
            attn, k, v = self._attention(x, blk)
            if keep_kv_from is not None and layer >= keep_kv_from:
                keys[layer], vals[layer] = k[:, :-1], v[:, :-1]
            x = x + attn
            x = x + self._mlp(x, blk)
            x = visit(2 * layer + 1, x)
            if not want_logits and 2 * layer + 1 >= last_needed:
                return captured, None, (keys, vals)
        xf = layer_norm(x, self.ln_f_w, self.ln_f_b, cfg.layernorm_epsilon)
        visit(2 * cfg.n_layers, xf)
        out = (xf[-1] @ self.unembed) if want_logits else None
        return captured, out, (keys, vals)

    def _attention(self, x, blk: Block):
        cfg = self.config
        T = x.shape[0]
        h = layer_norm(x, blk.ln1_w, blk.ln1_b, cfg.layernorm_epsilon)
        qkv = h @ blk.w_qkv + blk.b_qkv
        q, k, v = (qkv[:, i * cfg.d_model : (i + 1) * cfg.d_model]
                   .reshape(T, cfg.n_heads, cfg.d_head).transpose(1, 0, 2) for i in range(3))
        scores = (q @ k.transpose(0, 2, 1)) * F32(1.0 / np.sqrt(cfg.d_head))
        scores = np.where(np.tri(T, dtype=bool), scores, F32(-np.inf))
        z = _softmax_last(scores) @ v
        z = z.transpose(1, 0, 2).reshape(T, cfg.d_model)
        return z @ blk.w_o + blk.b_o, k, v

    def _mlp(self, x, blk: Block):
        h = layer_norm(x, blk.ln2_w, blk.ln2_b, self.config.layernorm_epsilon)
        return gelu_tanh(h @ blk.w_fc + blk.b_fc) @ blk.w_proj + blk.b_proj

    # ------------------------------------------------- batched last position
    def prefix_cache(self, tokens, probe: HookPoint) -> PrefixCache:
        """Precompute the unpatched context for last-position patches at ``probe``."""
        toks = self._check_tokens(tokens)
        order, pos = self.resolve(probe, toks.size)
        if pos != toks.size - 1:
            raise InputError("prefix_cache requires the probe at the last position")
        if probe.site is Site.LN_FINAL:
            raise InputError("cannot probe at the final LayerNorm output")
        first_block = probe.layer if probe.site is Site.RESID_PRE else probe.layer + 1
        captured, _, (keys, vals) = self._run(toks, None, (probe,), True, keep_kv_from=first_block)
        return PrefixCache(toks, probe, captured[probe], keys, vals)

    def last_position_batch(
        self, cache: PrefixCache, values: np.ndarray, read: HookPoint, logits: bool = False
    ) -> tuple[np.ndarray, np.ndarray | None]:
        """Patch each row of ``values`` at the probe (last token) and read ``read``.

        Equivalent to one :meth:`forward` per row but only the final token
        is recomputed. ``read`` must be at the last position and not before
        the probe in computation order.
        """
        cfg = self.config
        T = cache.tokens.size
        values = np.asarray(values, dtype=F32)
        if values.ndim != 2 or values.shape[1] != cfg.d_model:
            raise InputError(f"values must have shape (B, {cfg.d_model})")
        if not np.all(np.isfinite(values)):
            raise InputError("patch values have non-finite entries")
        read_order, read_pos = self.resolve(read, T)
        probe_order = cache.probe.order()
        if read_pos != T - 1 or read_order < probe_order:
            raise InputError(f"read hook {read} must be at the last position and not precede the probe")

        x = values
        out = x.copy() if read_order == probe_order else None
        first_block = cache.probe.layer if cache.probe.site is Site.RESID_PRE else cache.probe.layer + 1
        for layer in range(first_block, cfg.n_layers):
            blk = self.blocks[layer]
            if out is None and read_order == 2 * layer:
                out = x.copy()
            x = x + self._attention_last(x, blk, cache.keys[layer], cache.values[layer])
            x = x + self._mlp(x, blk)
            if read_order == 2 * layer + 1:
                out = x.copy()
                if not logits:
                    return out, None
        xf = layer_norm(x, self.ln_f_w, self.ln_f_b, cfg.layernorm_epsilon)
        if out is None:
            out = xf.copy()
        return out, (xf @ self.unembed if logits else None)

    def _attention_last(self, x, blk: Block, k_prev, v_prev):
        cfg = self.config
        B = x.shape[0]
        h = layer_norm(x, blk.ln1_w, blk.ln1_b, cfg.layernorm_epsilon)
        qkv = h @ blk.w_qkv + blk.b_qkv
        q, k, v = (qkv[:, i * cfg.d_model : (i + 1) * cfg.d_model]
                   .reshape(B, cfg.n_heads, cfg.d_head) for i in range(3))
        scale = F32(1.0 / np.sqrt(cfg.d_head))
        # k_prev: [H, T-1, dh]
        s_prev = np.einsum("bhd,htd->bht", q, k_prev) * scale
        s_self = (q * k).sum(axis=-1, keepdims=True) * scale
        p = _softmax_last(np.concatenate([s_prev, s_self], axis=-1))
        z = np.einsum("bht,htd->bhd", p[..., :-1], v_prev) + p[..., -1:] * v
        return z.reshape(B, cfg.d_model) @ blk.w_o + blk.b_o

    # ---------------------------------------------------------------- export
    def state_dict(self) -> dict[str, np.ndarray]:
        sd = {"wte.weight": self.wte, "wpe.weight": self.wpe,
              "ln_f.weight": self.ln_f_w, "ln_f.bias": self.ln_f_b}
        for i, b in enumerate(self.blocks):
            for name, attr in _BLOCK_TENSORS.items():
                sd[f"h.{i}.{name}"] = getattr(b, attr)
        if not self.tied:
            sd["lm_head.weight"] = self.unembed.T
        return sd


_BLOCK_TENSORS = {
    "ln_1.weight": "ln1_w", "ln_1.bias": "ln1_b",
    "attn.c_attn.weight": "w_qkv", "attn.c_attn.bias": "b_qkv",
    "attn.c_proj.weight": "w_o", "attn.c_proj.bias": "b_o",
    "ln_2.weight": "ln2_w", "ln_2.bias": "ln2_b",
    "mlp.c_fc.weight": "w_fc", "mlp.c_fc.bias": "b_fc",
    "mlp.c_proj.weight": "w_proj", "mlp.c_proj.bias": "b_proj",
}


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=F32)
    a.flags.writeable = False
    return a


def _expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, m = cfg.d_model, cfg.d_mlp
    block = {
        "ln_1.weight": (d,), "ln_1.bias": (d,),
        "attn.c_attn.weight": (d, 3 * d), "attn.c_attn.bias": (3 * d,),
        "attn.c_proj.weight": (d, d), "attn.c_proj.bias": (d,),
        "ln_2.weight": (d,), "ln_2.bias": (d,),
        "mlp.c_fc.weight": (d, m), "mlp.c_fc.bias": (m,),
        "mlp.c_proj.weight": (m, d), "mlp.c_proj.bias": (d,),
    }
    shapes = {"wte.weight": (cfg.vocab_size, d), "wpe.weight": (cfg.max_seq_len, d),
              "ln_f.weight": (d,), "ln_f.bias": (d,)}
    for i in range(cfg.n_layers):
        shapes.update({f"h.{i}.{k}": v for k, v in block.items()})
    return shapes


def model_from_tensors(tensors: Mapping[str, np.ndarray], config: ModelConfig) -> Model:
    """Build a :class:`Model` from a name → array mapping (see module docstring)."""
    t = {(k[len("transformer."):] if k.startswith("transformer.") else k): v for k, v in tensors.items()}
    shapes = _expected_shapes(config)
    if "lm_head.weight" in t:
        shapes["lm_head.weight"] = (config.vocab_size, config.d_model)
    for name, shape in shapes.items():
        if name not in t:
            raise DataError(f"missing tensor {name!r}")
        if tuple(t[name].shape) != shape:
            raise DataError(f"tensor {name!r} has shape {list(t[name].shape)}, expected {list(shape)}")
        if not np.all(np.isfinite(t[name])):
            raise DataError(f"tensor {name!r} has non-finite entries")
    blocks = [Block(**{attr: t[f"h.{i}.{name}"] for name, attr in _BLOCK_TENSORS.items()})
              for i in range(config.n_layers)]
    return Model(config, t["wte.weight"], t["wpe.weight"], blocks,
                 t["ln_f.weight"], t["ln_f.bias"], t.get("lm_head.weight"))


def load_model(path: str | os.PathLike, config: ModelConfig) -> Model:
    tensors, _ = read_tensors(path)
    return model_from_tensors(tensors, config)


def save_model(model: Model, path: str | os.PathLike) -> None:
    write_tensors(path, model.state_dict())


def collect_activations(model: Model, prompts: Sequence, hook: HookPoint) -> list[np.ndarray]:
    """Residual activation at ``hook`` (default last position) for each prompt."""
    if len(prompts) == 0:
        raise InputError("no prompts given")
    return [model.forward(p, capture=(hook,), logits=False).captured[hook] for p in prompts]
