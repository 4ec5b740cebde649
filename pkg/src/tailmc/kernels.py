"""Hot loops: one SGD epoch over the training ratings and batched prediction.

Every model variant funnels through the same two kernels.  A variant only
changes what it feeds them:

* ``active[n]`` - how many leading latent coordinates rating ``n`` touches
  (``r`` for plain MF, the sigmoid count for TMF, a Poisson draw for the
  dropout variant);
* ``weights[n]`` - the multiplier on the rating's error term (1 for MF, the
  inverse-frequency weight for IFWMF).

Both a numba implementation and a numpy implementation are kept; which one
is bound to the public names is decided once at import time by
:mod:`tailmc._accel`.
"""

import numpy as np

from tailmc._accel import HAS_NUMBA, jit

__all__ = ["sgd_epoch", "predict_batch", "sgd_epoch_numpy", "predict_batch_numpy"]


def _sgd_epoch_loops(P, Q, users, items, ratings, order, active, weights, lr, reg):
    """Run one SGD pass over ``order`` and return the sum of squared errors.

    For each rating ``n`` (in the order given), with ``a = active[n]`` and
    ``e`` the truncated prediction error, the first ``a`` coordinates of the
    user and item rows receive::

        p <- p - lr * (weights[n] * e * q + reg * p)
        q <- q - lr * (weights[n] * e * p + reg * q)

    using the pre-update values on both right-hand sides.  ``P`` and ``Q``
    are modified in place.
    """
    sq = 0.0
    for t in range(order.shape[0]):
        n = order[t]
        u = users[n]
        i = items[n]
        a = active[n]
        pred = 0.0
        for j in range(a):
            pred += P[u, j] * Q[i, j]
        e = pred - ratings[n]
        sq += e * e
        g = weights[n] * e
        for j in range(a):
            pu = P[u, j]
            qi = Q[i, j]
            P[u, j] = pu - lr * (g * qi + reg * pu)
            Q[i, j] = qi - lr * (g * pu + reg * qi)
    return sq


def _predict_batch_loops(P, Q, users, items, active):
    out = np.empty(users.shape[0])
    for n in range(users.shape[0]):
        u = users[n]
        i = items[n]
        s = 0.0
        for j in range(active[n]):
            s += P[u, j] * Q[i, j]
        out[n] = s
    return out


def sgd_epoch_numpy(P, Q, users, items, ratings, order, active, weights, lr, reg):
    """Row-vectorised reference for :func:`sgd_epoch`.  Updates P, Q in place."""
    sq = 0.0
    for n in order:
        u = users[n]
        i = items[n]
        a = active[n]
        pu = P[u, :a].copy()
        qi = Q[i, :a].copy()
        e = float(pu @ qi) - ratings[n]
        sq += e * e
        g = weights[n] * e
        P[u, :a] = pu - lr * (g * qi + reg * pu)
        Q[i, :a] = qi - lr * (g * pu + reg * qi)
    return sq


def predict_batch_numpy(P, Q, users, items, active):
    prod = P[users] * Q[items]
    prod[np.arange(P.shape[1])[None, :] >= active[:, None]] = 0.0
    return prod.sum(axis=1)


if HAS_NUMBA:
    sgd_epoch = jit(_sgd_epoch_loops)
    predict_batch = jit(_predict_batch_loops)
else:
    sgd_epoch = sgd_epoch_numpy
    predict_batch = predict_batch_numpy
