"""Central finite-difference gradient checker.

Independent of the autodiff tape: it only calls the function under test as a
black box mapping a flat numpy vector to (scalar value, gradient vector).
"""

import numpy as np


def finite_diff_check(fn, point, eps=1e-5, coords=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``fn(x) -> (value, grad)`` where x is a flat float64 vector. ``coords``
    optionally limits which coordinates are probed (an int count, sampled with
    ``rng``, or an explicit index array); default probes all of them.

    Relative error per coordinate: |a - n| / max(|a|, |n|, 1e-8).
    """
    x0 = np.asarray(point, dtype=np.float64).ravel().copy()
    _, analytic = fn(x0)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if analytic.shape != x0.shape:
        raise ValueError("fn returned a gradient with the wrong shape")

    if coords is None:
        idx = np.arange(x0.size)
    elif np.isscalar(coords):
        n = min(int(coords), x0.size)
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(x0.size, size=n, replace=False)
    else:
        idx = np.asarray(coords)

    worst = 0.0
    for i in idx:
        xp = x0.copy()
        xp[i] += eps
        xm = x0.copy()
        xm[i] -= eps
        numeric = (fn(xp)[0] - fn(xm)[0]) / (2 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def tensor_fn(build, shapes):
    """Adapt a Tensor-graph builder into the flat-vector signature above.

    ``shapes`` maps leaf names to shapes; ``build(leaves) -> scalar Tensor``
    receives name -> Tensor and must return a scalar output. The flat vector
    packs the leaves in the iteration order of ``shapes``.
    """
    from .autodiff import parameter

    names = list(shapes)
    sizes = [int(np.prod(shapes[n])) for n in names]

    def fn(x):
        leaves = {}
        offset = 0
        for name, size in zip(names, sizes):
            leaves[name] = parameter(x[offset:offset + size].reshape(shapes[name]))
            offset += size
        out = build(leaves)
        out.backward()
        grad = np.concatenate([
            (leaves[n].grad if leaves[n].grad is not None
             else np.zeros(shapes[n])).ravel()
            for n in names])
        return out.item(), grad

    return fn
