"""Minimal SAE training (test support only; training is not part of the package)."""
import numpy as np

from saesense.sae import SaeParams


def sparse_data(n, d=16, n_atoms=32, k=2, seed=0):
    """Activations built from k of n_atoms unit directions with positive weights, plus an offset."""
    rng = np.random.default_rng(seed)
    atoms = rng.standard_normal((n_atoms, d))
    atoms /= np.linalg.norm(atoms, axis=1, keepdims=True)
    offset = rng.standard_normal(d)
    X = np.tile(offset, (n, 1))
    for row in X:
        pick = rng.choice(n_atoms, size=k, replace=False)
        row += rng.uniform(1.0, 3.0, size=k) @ atoms[pick]
    return X.astype(np.float32), atoms, offset


def train_sae(X, n_latents=32, l1=1e-3, steps=3000, lr=3e-3, batch=256, seed=0):
    """Adam on mean squared error + l1 * |z|, decoder rows renormalised each step."""
    rng = np.random.default_rng(seed)
    X = X.astype(np.float64)
    d = X.shape[1]
    W_dec = rng.standard_normal((n_latents, d))
    W_dec /= np.linalg.norm(W_dec, axis=1, keepdims=True)
    p = {"W_enc": W_dec.copy(), "b_enc": np.zeros(n_latents), "W_dec": W_dec, "b_dec": X.mean(0)}
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v2 = {k: np.zeros_like(v) for k, v in p.items()}
    for t in range(1, steps + 1):
        xb = X[rng.integers(len(X), size=batch)]
        xc = xb - p["b_dec"]
        pre = xc @ p["W_enc"].T + p["b_enc"]
        z = np.maximum(pre, 0)
        err = z @ p["W_dec"] + p["b_dec"] - xb
        g_xh = 2 * err / batch
        g_z = g_xh @ p["W_dec"].T + l1 * (z > 0) / batch
        g_pre = g_z * (pre > 0)
        g = {
            "W_dec": z.T @ g_xh,
            "b_dec": g_xh.sum(0) - (g_pre @ p["W_enc"]).sum(0),
            "W_enc": g_pre.T @ xc,
            "b_enc": g_pre.sum(0),
        }
        for k in p:
            m[k] = 0.9 * m[k] + 0.1 * g[k]
            v2[k] = 0.999 * v2[k] + 0.001 * g[k] ** 2
            p[k] -= lr * (m[k] / (1 - 0.9 ** t)) / (np.sqrt(v2[k] / (1 - 0.999 ** t)) + 1e-8)
        p["W_dec"] /= np.linalg.norm(p["W_dec"], axis=1, keepdims=True)
    return SaeParams(**p)


def mse(params, X):
    X = np.asarray(X, np.float64)
    z = np.maximum((X - params.b_dec) @ params.W_enc.T.astype(np.float64) + params.b_enc, 0)
    return float((((z @ params.W_dec.astype(np.float64) + params.b_dec) - X) ** 2).sum(1).mean())
