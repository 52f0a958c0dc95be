"""Numerical oracles shared by the test modules."""
import numpy as np


def central_diff(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``fn`` at ``x`` by central differences."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        up = fn(x)
        x[i] = orig - h
        down = fn(x)
        x[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def rel_err(a, b, floor: float = 1e-6) -> float:
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).

    The floor sits well above the central-difference round-off (about
    1e-16 * |f| / h ~ 1e-11 per entry at h = 1e-5), so vanishing gradients
    are compared absolutely instead of dividing noise by noise.
    """
    a, b = np.ravel(a).astype(float), np.ravel(b).astype(float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def random_graph(rng: np.random.Generator, n_ops: int = 6):
    """A random scalar expression over one (3, 4) input.

    Returns ``build(x_tensor) -> scalar Tensor``.  Ops are drawn from the
    smooth primitives plus relu; domains are kept valid by construction
    (log and sqrt only ever see softplus outputs plus a margin).
    """
    from flowcast import autodiff as ad

    w = rng.normal(size=(4, 3))
    b = rng.normal(size=3)
    choices = rng.integers(0, 11, size=n_ops)
    consts = rng.normal(size=n_ops)

    def build(x):
        h = x
        w_t, b_t = ad.Tensor(w), ad.Tensor(b)
        for op, c in zip(choices, consts):
            if op == 0:
                h = h * ad.tanh(h) + c
            elif op == 1:
                h = ad.sigmoid(h) * c
            elif op == 2:
                h = ad.log(ad.softplus(h) + 0.5)
            elif op == 3:
                h = ad.sqrt(ad.softplus(h) + 0.1)
            elif op == 4:
                h = ad.softmax(h, axis=-1) * 3.0
            elif op == 5:
                h = ad.exp(ad.tanh(h))
            elif op == 6:
                h = ad.cumsum(h, axis=-1) * 0.5
            elif op == 7:
                h = h / (ad.softplus(h) + 1.0)
            elif op == 8:
                h = ad.relu(h) + h * 0.1
            elif op == 9:
                h = ad.affine(h, w_t, b_t) if h.shape[-1] == 4 else ad.tanh(h) * 2.0
            else:
                h = ad.concat([h, -h], axis=-1)[..., : h.shape[-1]] + ad.where(h.data > 0, h, h * 0.3)
        return ad.sum(h * h) * 0.1

    return build
