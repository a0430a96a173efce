"""Independent oracles used by the tests.

Everything here is deliberately written with plain Python loops and the
textbook formulas, so the implementations under test are checked against a
separate code path rather than against themselves.
"""

import math

import numpy as np

from samlab.data import Batch


def scalar_mlp_loss(layer_sizes, activation, weight_decay, values, inputs, targets):
    """Straight-line scalar reimplementation of the MLP loss (mean reduction)."""
    values = [float(v) for v in values]
    layers = []
    offset = 0
    for layer in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[layer], layer_sizes[layer + 1]
        w = [[values[offset + i * fan_out + j] for j in range(fan_out)] for i in range(fan_in)]
        offset += fan_in * fan_out
        b = [values[offset + j] for j in range(fan_out)]
        offset += fan_out
        layers.append((w, b))
    assert offset == len(values)

    total = 0.0
    for row, target in zip(inputs, targets):
        act = [float(v) for v in row]
        for idx, (w, b) in enumerate(layers):
            out = []
            for j in range(len(b)):
                z = b[j]
                for i in range(len(act)):
                    z += act[i] * w[i][j]
                out.append(z)
            if idx < len(layers) - 1:
                if activation == "tanh":
                    act = [math.tanh(z) for z in out]
                else:
                    act = [z if z > 0.0 else 0.0 for z in out]
            else:
                act = out
        m = max(act)
        lse = m + math.log(sum(math.exp(z - m) for z in act))
        total += lse - act[int(target)]
    loss = total / len(inputs)
    reg = weight_decay * sum(v * v for v in values)
    return loss + reg


def whole_dataset_batch(ds):
    return Batch(ds.inputs, ds.targets, np.arange(ds.n))


# ---------------------------------------------------------------------------
# brute-force sampler replay (lists and loops only, no package statistics code)

def _oracle_pvar(xs):
    n = len(xs)
    total = 0.0
    for x in xs:
        total += x
    mean = total / n
    acc = 0.0
    for x in xs:
        acc += (x - mean) * (x - mean)
    return acc / n


def _oracle_sliced_variance(values, m):
    ordered = sorted(values)
    n = len(ordered)
    if n < m:
        return _oracle_pvar(ordered)
    base, extra = divmod(n, m)
    total = 0.0
    lo = 0
    for j in range(m):
        hi = lo + base + (1 if j < extra else 0)
        total += _oracle_pvar(ordered[lo:hi])
        lo = hi
    return total / m


def _oracle_change_rate(history, eps):
    if len(history) < 2:
        return 0.0
    total = 0.0
    for i in range(1, len(history)):
        prev = history[i - 1]
        if abs(prev) >= eps:
            total += (history[i] - prev) / prev
    return total / (len(history) - 1)


def replay_sampler(events, n_window, m_slices, alpha, s1, p_max, eps):
    """Recompute the controller state from the full event history.

    events: list of ("record", l2_psf, l2_sgd) and ("update",) tuples.
    Returns a dict of the final state fields for exact comparison.
    """
    records = []  # every recorded (psf, sgd) pair, in order
    v_all = []
    r_all = []
    s = float(s1)
    p = s / n_window
    last_c_var = last_c_norm = None
    window_iter = 0
    window_samples = 0
    for event in events:
        if event[0] == "record":
            _, psf, sgd = event
            records.append((psf, sgd))
            window = [pair[0] for pair in records[-n_window:]]
            v_all.append(_oracle_sliced_variance(window, m_slices))
            r_all.append(psf / max(sgd, eps))
            window_samples += 1
        else:
            c_var = _oracle_change_rate(v_all[-n_window:], eps)
            c_norm = _oracle_change_rate(r_all[-n_window:], eps)
            s = s * (1.0 + alpha * c_var + alpha * c_norm)
            if s < 1.0:
                s = 1.0
            cap = p_max * n_window
            if s > cap:
                s = cap
            p = s / n_window
            if p > p_max:
                p = p_max
            last_c_var, last_c_norm = c_var, c_norm
            window_iter = 0
            window_samples = 0
    return {
        "gnorm_buffer": [pair[0] for pair in records[-n_window:]],
        "v_history": v_all[-n_window:],
        "r_history": r_all[-n_window:],
        "s": s,
        "p": p,
        "window_iter": window_iter,
        "window_samples": window_samples,
        "last_c_var": last_c_var,
        "last_c_norm": last_c_norm,
    }
