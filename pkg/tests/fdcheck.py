"""Central finite differences, kept independent of autograd."""

import torch


def numeric_grad(fn, tensor, index, eps=1e-5):
    """d fn() / d tensor[index] by central differences (tensor modified in place)."""
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + eps
        up = float(fn())
        tensor[index] = orig - eps
        down = float(fn())
        tensor[index] = orig
    return (up - down) / (2 * eps)


def sample_indices(tensor, k, gen):
    n = tensor.numel()
    flat = torch.randperm(n, generator=gen)[:k] if n > k else torch.arange(n)
    return [tuple(int(i) for i in torch.unravel_index(f, tensor.shape)) for f in flat]


def relative_error(fn, tensor, k=12, eps=1e-5, seed=0):
    """Norm-wise relative error between autograd and central differences over
    ``k`` sampled entries of ``tensor``."""
    gen = torch.Generator().manual_seed(seed)
    idx = sample_indices(tensor, k, gen)
    if tensor.grad is not None:
        tensor.grad = None
    out = fn()
    (analytic,) = torch.autograd.grad(out, tensor, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(tensor)
    a = torch.tensor([analytic[i].item() for i in idx], dtype=torch.float64)
    n = torch.tensor([numeric_grad(fn, tensor.data, i, eps) for i in idx], dtype=torch.float64)
    scale = max(a.norm().item(), n.norm().item(), 1e-12)
    return (a - n).norm().item() / scale, a, n
