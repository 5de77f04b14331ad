"""Independent reference implementations used as test oracles.

Nothing here imports the code under test beyond plain data containers;
each oracle is the most literal reading of the definition it checks.
"""
import math

import numpy as np


# ---------------------------------------------------------------- detectors

def ms_scan(c):
    best, best_n = -math.inf, None
    for n in range(1, len(c)):
        s = c[n] - c[n - 1]
        if s > best:
            best, best_n = s, n
    return best_n


def auc_scan(c):
    best, best_n = -math.inf, None
    area = 0.0
    for n in range(1, len(c)):
        area += (c[n - 1] + c[n]) / 2.0
        if area <= 0:
            continue
        r = (n * c[n] / 2.0) / area
        if r > best:
            best, best_n = r, n
    return best_n


def nl_scan(c, frac=0.10):
    s0 = c[1] - c[0]
    if s0 == 0 or abs(s0) < 1e-9 * max(abs(x) for x in c):
        return None
    for n in range(2, len(c)):
        if abs((c[n] - c[n - 1]) - s0) > frac * abs(s0):
            return n
    return None


def ap_scan(c, thr=20.0):
    for n, v in enumerate(c):
        if v > thr:
            return n
    return None


def ks_quadratic(a, b):
    """sup |F_a - F_b| by evaluating both ECDFs at every sample point."""
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(1 for v in a if v <= x) / len(a)
        fb = sum(1 for v in b if v <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


# ---------------------------------------------------------------- GPT-2

def _ln(x, w, b, eps):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * w + b


def _gelu(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def gpt2_reference(sd, cfg, tokens, patch_layer=None, patch_value=None):
    """Float64 GPT-2 forward: per-head loops, explicit causal softmax.

    Optionally replaces the last-token residual entering block
    ``patch_layer``. Returns (resid_post of every layer at last token, logits).
    """
    sd = {k: np.asarray(v, dtype=np.float64) for k, v in sd.items()}
    T = len(tokens)
    d, H, dh = cfg.d_model, cfg.n_heads, cfg.d_head
    x = np.stack([sd["wte.weight"][t] + sd["wpe.weight"][i] for i, t in enumerate(tokens)])
    posts = []
    for L in range(cfg.n_layers):
        if L == patch_layer:
            x = x.copy()
            x[-1] = patch_value
        p = f"h.{L}."
        h = _ln(x, sd[p + "ln_1.weight"], sd[p + "ln_1.bias"], cfg.layernorm_epsilon)
        qkv = h @ sd[p + "attn.c_attn.weight"] + sd[p + "attn.c_attn.bias"]
        q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
        heads = []
        for hd in range(H):
            sl = slice(hd * dh, (hd + 1) * dh)
            out = np.zeros((T, dh))
            for i in range(T):
                s = np.array([q[i, sl] @ k[j, sl] / math.sqrt(dh) for j in range(i + 1)])
                w = np.exp(s - s.max())
                w /= w.sum()
                out[i] = sum(w[j] * v[j, sl] for j in range(i + 1))
            heads.append(out)
        z = np.concatenate(heads, axis=1)
        x = x + z @ sd[p + "attn.c_proj.weight"] + sd[p + "attn.c_proj.bias"]
        h2 = _ln(x, sd[p + "ln_2.weight"], sd[p + "ln_2.bias"], cfg.layernorm_epsilon)
        x = x + _gelu(h2 @ sd[p + "mlp.c_fc.weight"] + sd[p + "mlp.c_fc.bias"]) @ sd[p + "mlp.c_proj.weight"] \
            + sd[p + "mlp.c_proj.bias"]
        posts.append(x[-1].copy())
    xf = _ln(x[-1], sd["ln_f.weight"], sd["ln_f.bias"], cfg.layernorm_epsilon)
    unembed = sd.get("lm_head.weight", sd["wte.weight"])
    return posts, unembed @ xf


# ---------------------------------------------------------------- SAE

def encode_dense(W_enc, b_enc, b_dec, a):
    """Per-latent loop in float64: {i: relu(w_i . (a - b_dec) + b_i)} for positive entries."""
    out = {}
    a = np.asarray(a, np.float64)
    for i in range(W_enc.shape[0]):
        v = float(np.dot(np.asarray(W_enc[i], np.float64), a - b_dec) + b_enc[i])
        if v > 0:
            out[i] = v
    return out


def cosine(u, v):
    u = np.asarray(u, np.float64)
    v = np.asarray(v, np.float64)
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def log_sparsity_distance(freq, sample_count, i, j):
    eps = 1.0 / (10 * sample_count)
    return abs(math.log10(freq[i] + eps) - math.log10(freq[j] + eps))


# ---------------------------------------------------------------- composer

def sparsity_ranked(freq, sample_count, i, eligible):
    """Eligible latents sorted by (log-sparsity distance to i, index)."""
    return sorted(eligible, key=lambda j: (log_sparsity_distance(freq, sample_count, i, j), j))


def structured_violations(base, chosen, W_dec, freq, sample_count, target_top_cos, pool_size):
    """Replay a structured composition step by step and list every choice
    that some still-available latent beats strictly.

    ``base`` and ``chosen`` are aligned lists of (latent, value) in the order
    the composer processed them. ``target_top_cos=None`` means the top latent
    was picked by sparsity alone.
    """
    W = np.asarray(W_dec, np.float64)
    U = W / np.sqrt((W * W).sum(axis=1, keepdims=True))
    cos = U @ U.T
    n = len(freq)
    alive = np.array([f > 0 for f in freq])
    bad = []
    top_base = base[0][0]
    pool = sparsity_ranked(freq, sample_count, top_base, [j for j in range(n) if alive[j] and j != top_base])
    pool = pool[:pool_size]
    top_synth = chosen[0][0]
    if target_top_cos is None:
        if top_synth != pool[0]:
            bad.append(("top", top_synth, pool[0]))
    else:
        gaps = np.abs(cos[top_base, pool] - target_top_cos)
        mine = abs(cos[top_base, top_synth] - target_top_cos)
        if top_synth not in pool or gaps.min() < mine - 1e-12:
            bad.append(("top", top_synth, pool[int(np.argmin(gaps))]))
    free = alive.copy()
    free[top_synth] = False
    for (l_base, _), (l_synth, _) in zip(base[1:], chosen[1:]):
        want = cos[l_base, top_base]
        gaps = np.where(free, np.abs(cos[top_synth] - want), np.inf)
        if not free[l_synth] or gaps.min() < gaps[l_synth] - 1e-12:
            bad.append((l_base, l_synth, int(np.argmin(gaps))))
        free[l_synth] = False
    return bad
