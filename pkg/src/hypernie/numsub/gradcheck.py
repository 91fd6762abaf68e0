import numpy as np

from .tensor import no_grad


def grad_check(loss_fn, params, eps=1e-5, n_coords=100, seed=0, floor=1e-6, details=False):
    """Compare tape gradients with central finite differences.

    ``loss_fn()`` must be deterministic and return a scalar tensor; ``params``
    is a list (or dict name -> parameter). Up to ``n_coords`` coordinates per
    tensor are sampled (all of them for small tensors). The relative error of
    a coordinate is ``|a - n| / max(|a|, |n|, floor)``.

    Returns the max relative error over all checked coordinates, or
    ``(max_err, per_tensor)`` when ``details`` is set.
    """
    named = list(params.items()) if isinstance(params, dict) else \
        [(p.name or f"param{i}", p) for i, p in enumerate(params)]
    if not named:
        return (0.0, {}) if details else 0.0

    for _, p in named:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in named}

    rng = np.random.default_rng(seed)
    per_tensor = {}
    for name, p in named:
        flat = p.data.reshape(-1)
        size = flat.size
        coords = np.arange(size) if size <= n_coords else rng.choice(size, n_coords, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + eps
                lp = float(loss_fn().data)
                flat[c] = orig - eps
                lm = float(loss_fn().data)
            flat[c] = orig
            numeric = (lp - lm) / (2 * eps)
            a = float(analytic[name].reshape(-1)[c])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        per_tensor[name] = worst
    max_err = max(per_tensor.values())
    return (max_err, per_tensor) if details else max_err
