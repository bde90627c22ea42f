"""Shared test oracles: central finite differences against tape gradients."""

import numpy as np

from seqcoder.tensor import Tape, Tensor


def finite_diff(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array."""
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def tape_grads(build_loss, arrays):
    """Run build_loss on Tensors made from arrays inside a tape; return grads."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = build_loss(*tensors)
        tape.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def max_rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return float((np.abs(a - b) / denom).max())


def check_gradients(build_loss, numeric_f, arrays, tol=1e-4, h=1e-5):
    """Assert tape gradients match central finite differences."""
    analytic = tape_grads(build_loss, arrays)
    numeric = finite_diff(numeric_f, [a.copy() for a in arrays], h=h)
    worst = max(max_rel_err(g1, g2) for g1, g2 in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.2e} >= {tol}"
    return worst
