"""Shared builders and numeric oracles for the test suite."""

import numpy as np

from layercollapse.nn import BatchNormLayer, CollapsibleBlock, LinearLayer, PReLULayer


def random_block(rng, n_in, h, n_out, bn=False, alpha=1.0, bias=True):
    fc1 = LinearLayer(rng.standard_normal((h, n_in)),
                      rng.standard_normal(h) if bias else np.zeros(h))
    fc2 = LinearLayer(rng.standard_normal((n_out, h)),
                      rng.standard_normal(n_out) if bias else np.zeros(n_out))
    norm = None
    if bn:
        norm = BatchNormLayer(h, eps=1e-5, gamma=rng.uniform(0.5, 2.0, h),
                              beta=rng.standard_normal(h),
                              running_mean=rng.standard_normal(h),
                              running_var=rng.uniform(0.5, 2.0, h))
    return CollapsibleBlock(fc1, PReLULayer(alpha), fc2, bn=norm)


def central_diff(f, arr, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def full_conv2d_reference(x, K, b):
    """Plain loop cross-correlation, valid mode: x (C_in,H,W), K (C_out,C_in,k,k)."""
    c_out, c_in, k, _ = K.shape
    H, W = x.shape[1] - k + 1, x.shape[2] - k + 1
    out = np.zeros((c_out, H, W))
    for o in range(c_out):
        for i in range(H):
            for j in range(W):
                out[o, i, j] = np.sum(x[:, i:i + k, j:j + k] * K[o]) + b[o]
    return out
