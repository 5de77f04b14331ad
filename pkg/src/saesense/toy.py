"""Small random models, SAEs and corpora for tests and dry runs."""
from __future__ import annotations

import numpy as np

import os
from pathlib import Path

from .corpus import Corpus, write_token_file
from .model import Block, HookPoint, Model, ModelConfig, Site, save_model
from .sae import SaeParams, save_sae

TOY_RUN = """\
# toy-scale run over the assets in this directory
model_path = "model.safetensors"
model_config = "model_config.json"
sae_path = "sae.safetensors"
tokens_path = "tokens.txt"
out_dir = "run"
probe = "blocks.1.hook_resid_pre"
read = "blocks.1.hook_resid_post"
steps = 100
step_size = 0.1
ap_threshold = 2.0
kl = true
n_perturbations = 50
n_moment_samples = 1000
n_cosine_pairs = 200
pool_size = 20
n_latent_report = 500
target_types = ["model_generated", "random", "synthetic_random", "synthetic_baseline",
                "synthetic_structured", "synthetic_structured_no_cos", "sae_reconstruction"]
"""


def toy_config(n_layers: int = 2, d_model: int = 16, n_heads: int = 2, vocab_size: int = 64,
               max_seq_len: int = 16) -> ModelConfig:
    return ModelConfig(n_layers=n_layers, d_model=d_model, n_heads=n_heads, d_head=d_model // n_heads,
                       d_mlp=4 * d_model, vocab_size=vocab_size, max_seq_len=max_seq_len)


def random_model(config: ModelConfig, seed: int = 0, weight_scale: float = 1.0) -> Model:
    """GPT-2 shaped model with Gaussian weights scaled by 1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    d, m = config.d_model, config.d_mlp

    def w(fan_in, *shape):
        return rng.normal(0.0, weight_scale / np.sqrt(fan_in), size=shape)

    def ln():
        return 1.0 + 0.1 * rng.standard_normal(d), 0.1 * rng.standard_normal(d)

    blocks = []
    for _ in range(config.n_layers):
        (l1w, l1b), (l2w, l2b) = ln(), ln()
        blocks.append(Block(
            ln1_w=l1w, ln1_b=l1b,
            w_qkv=w(d, d, 3 * d), b_qkv=0.1 * rng.standard_normal(3 * d),
            w_o=w(d, d, d), b_o=0.1 * rng.standard_normal(d),
            ln2_w=l2w, ln2_b=l2b,
            w_fc=w(d, d, m), b_fc=0.1 * rng.standard_normal(m),
            w_proj=w(m, m, d), b_proj=0.1 * rng.standard_normal(d),
        ))
    lnfw, lnfb = ln()
    return Model(config, rng.standard_normal((config.vocab_size, d)),
                 0.5 * rng.standard_normal((config.max_seq_len, d)), blocks, lnfw, lnfb)


def random_corpus(vocab_size: int, n_records: int = 200, record_len: int = 24, seq_len: int = 10,
                  seed: int = 0) -> Corpus:
    rng = np.random.default_rng(seed)
    return Corpus(tuple(rng.integers(0, vocab_size, size=record_len) for _ in range(n_records)), seq_len)


def threshold_sae(activations: np.ndarray, n_latents: int, seed: int = 0,
                  freq_range: tuple[float, float] = (0.003, 0.3)) -> SaeParams:
    """SAE whose latents fire at log-uniformly spread rates on ``activations``.

    Decoder rows are random unit directions; each encoder row is its
    decoder row with a bias set at the quantile giving the wanted rate.
    Latents whose rate rounds to zero samples come out dead.
    """
    rng = np.random.default_rng(seed)
    acts = np.asarray(activations, dtype=np.float64)
    d = acts.shape[1]
    dirs = rng.standard_normal((n_latents, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    b_dec = acts.mean(axis=0)
    proj = (acts - b_dec) @ dirs.T
    lo, hi = np.log10(freq_range[0]), np.log10(freq_range[1])
    rates = 10.0 ** rng.uniform(lo, hi, size=n_latents)
    thresholds = np.array([np.quantile(proj[:, i], 1.0 - rates[i]) for i in range(n_latents)])
    return SaeParams(W_enc=dirs, b_enc=-thresholds, W_dec=dirs, b_dec=b_dec)


def write_toy_assets(directory: str | os.PathLike, seed: int = 0, n_latents: int = 256) -> Path:
    """Write a toy model, SAE, corpus and ``run.toml`` into ``directory``.

    The SAE is fitted to layer-1 ``resid_pre`` activations of the model on
    its own corpus. Returns the path of ``run.toml``.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    config = toy_config()
    model = random_model(config, seed)
    corpus = random_corpus(config.vocab_size, seed=seed + 1)
    probe = HookPoint(1, Site.RESID_PRE)
    rng = np.random.default_rng(seed + 2)
    acts = np.stack([model.forward(corpus.sample(rng)[1], capture=(probe,), logits=False).captured[probe]
                     for _ in range(1500)])
    save_model(model, out / "model.safetensors")
    config.to_json(out / "model_config.json")
    save_sae(threshold_sae(acts, n_latents, seed + 3), out / "sae.safetensors")
    write_token_file(out / "tokens.txt", corpus.records)
    (out / "run.toml").write_text(TOY_RUN)
    return out / "run.toml"
