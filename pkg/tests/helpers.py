import numpy as np

from gradsplit import tensor as T

FD_STEP = 1e-3


def numeric_grad(f, x: np.ndarray, coords, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar f at the given flat coordinates of x."""
    out = np.empty(len(coords))
    flat = x.reshape(-1)
    for i, c in enumerate(coords):
        old = flat[c]
        flat[c] = old + h
        hi = f()
        flat[c] = old - h
        lo = f()
        flat[c] = old
        out[i] = (hi - lo) / (2 * h)
    return out


def check_grads(build_root, tensors, rng, n_coords=100, rtol=1e-4, atol=1e-6):
    """Compare tape grads with central differences on sampled coordinates.

    Returns the worst relative error seen (absolute error below atol counts as 0).
    """
    for t in tensors:
        t.grad = None
    root = build_root()
    T.backward(root)
    worst = 0.0
    per = max(1, -(-n_coords // len(tensors)))
    for t in tensors:
        coords = rng.choice(t.size, size=min(per, t.size), replace=False)
        num = numeric_grad(lambda: build_root().item(), t.data, coords)
        ana = t.grad.reshape(-1)[coords]
        err = np.abs(num - ana)
        rel = np.where(err < atol, 0.0, err / np.maximum(np.abs(num), np.abs(ana)))
        worst = max(worst, float(rel.max()))
    return worst


def matmul_loops(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def conv2d_loops(x, w, stride, padding):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                s += xp[b, ch, i * stride + u, j * stride + v] * w[o, ch, u, v]
                    out[b, o, i, j] = s
    return out
