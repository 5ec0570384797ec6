"""Central finite-difference gradient checks for :class:`dragsim.nn.Mlp`."""

import numpy as np


def rel_err(a, b, floor=1e-6):
    """Norm-relative difference of two gradient arrays.

    ``floor`` keeps arrays whose true gradient is identically zero (biases
    in front of train-mode batch norm) from dividing noise by noise.
    """
    a, b = np.ravel(a), np.ravel(b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / den)


def check_net(net, x, upstream, mode="eval", h=1e-5):
    """Worst relative error over parameter arrays and the input gradient.

    The scalar under test is ``sum(upstream * net(x))``.
    """
    def loss():
        return float((net.forward(x, mode, update_stats=False)[0] * upstream).sum())

    out, cache = net.forward(x, mode, update_stats=False)
    grads, gx = net.backward(cache, upstream)
    fd = np.empty(net.size)
    for k in range(net.size):
        old = net.flat[k]
        net.flat[k] = old + h
        up = loss()
        net.flat[k] = old - h
        down = loss()
        net.flat[k] = old
        fd[k] = (up - down) / (2 * h)
    worst = 0.0
    for (a, b, _), g in zip(net._slices, grads):
        worst = max(worst, rel_err(g, fd[a:b]))

    fdx = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = loss()
        x[idx] = old - h
        down = loss()
        x[idx] = old
        fdx[idx] = (up - down) / (2 * h)
    return max(worst, rel_err(gx, fdx))


def randomize_stats(net, rng):
    """Non-trivial running statistics and affine parameters for eval-mode checks."""
    for layer in net.layers:
        if layer.bn is not None:
            n = layer.n_out
            layer.bn.running_mean[...] = rng.normal(0, 0.5, n)
            layer.bn.running_var[...] = rng.uniform(0.5, 2.0, n)
            layer.bn.scale[...] = rng.uniform(0.5, 1.5, n)
            layer.bn.offset[...] = rng.normal(0, 0.3, n)
