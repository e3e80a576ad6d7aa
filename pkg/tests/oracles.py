"""Independent numerical oracles: central finite differences."""

import torch


def fd_gradient(f, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central-difference gradient of scalar f with respect to tensor x."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = float(flat[i])
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def fd_param_gradients(f, params, eps: float = 1e-5):
    """Central differences with respect to each parameter tensor in place."""
    grads = []
    for p in params:
        grad = torch.zeros_like(p)
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + eps
            hi = float(f())
            flat[i] = orig - eps
            lo = float(f())
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(grad)
    return grads


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    num = float(torch.linalg.vector_norm(analytic - numeric))
    den = float(torch.linalg.vector_norm(analytic) + torch.linalg.vector_norm(numeric))
    if den == 0:
        return 0.0
    return num / den
