import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _single_thread_torch():
    # keeps timings stable and results reproducible across test runs
    torch.set_num_threads(1)
    yield


def finite_diff_grads(module, loss_fn, h=1e-4):
    """Central finite differences of loss_fn w.r.t. every parameter.

    Returns {name: (analytic, numeric)} with float64 tensors. loss_fn
    must be a closure over the module re-evaluating the loss from
    scratch.
    """
    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    out = {}
    for name, p in module.named_parameters():
        analytic = (p.grad.detach().clone() if p.grad is not None
                    else torch.zeros_like(p))
        flat = p.data.view(-1)
        numeric = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            with torch.no_grad():
                up = float(loss_fn())
            flat[i] = orig - h
            with torch.no_grad():
                down = float(loss_fn())
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * h)
        out[name] = (analytic.view(-1), numeric)
    return out


def max_rel_error(grad_pairs, zero_floor=1e-7):
    """Worst relative disagreement across all parameters.

    Entries where both gradients are below ``zero_floor`` count as exact
    (relative error is ill-defined at zero).
    """
    worst = 0.0
    worst_name = None
    for name, (analytic, numeric) in grad_pairs.items():
        for a, n in zip(analytic.tolist(), numeric.tolist()):
            scale = max(abs(a), abs(n))
            if scale < zero_floor:
                continue
            rel = abs(a - n) / scale
            if rel > worst:
                worst, worst_name = rel, name
    return worst, worst_name


def random_mag(rng, t, f, scale=1.0):
    return np.abs(rng.normal(size=(t, f))) * scale
