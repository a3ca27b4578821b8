"""Shared test utilities: finite-difference oracles and small fixtures."""

import numpy as np

from paratrans import tensor as T


def finite_diff(f, x, h=1e-4):
    """Central finite differences of scalar f w.r.t. array x (the oracle)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def check_grads(make_output, inputs, rtol=1e-3, atol=1e-5):
    """Compare analytic grads of a scalar graph against the FD oracle."""
    out = make_output()
    out.backward(inputs=inputs)
    for t in inputs:
        fd = finite_diff(lambda: make_output().item(), t.data)
        np.testing.assert_allclose(t.grad, fd, rtol=rtol, atol=atol)
        t.grad = None


def random_projection_loss(op, *tensors, rng):
    """Scalar functional of an op's output: sum(output * fixed random weights)."""
    probe = rng.normal(size=op(*tensors).shape)
    return lambda: T.tsum(T.mul(op(*tensors), probe))


def away_from_kink(x, margin=0.05):
    return x + np.sign(x) * margin + (x == 0.0) * margin
