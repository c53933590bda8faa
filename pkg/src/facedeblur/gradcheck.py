"""Central-difference gradient checking in double precision.

The checker reduces an arbitrary tensor-valued function to a scalar via a
fixed pseudo-random projection, takes analytic gradients of that scalar
with autograd, and compares them against central finite differences taken
independently, element by element. The two routes share nothing but the
forward function, so an autograd bug cannot hide.

Error metric per input tensor: ``max|a - n| / max(1, max|a|, max|n|)``,
i.e. a relative error with the denominator floored at 1 so that near-zero
gradients are judged on absolute error instead of amplified noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class GradCheckEntry:
    name: str
    max_abs_err: float
    rel_err: float
    analytic_norm: float
    numeric_norm: float
    checked: int
    total: int


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        lines = []
        for e in self.entries:
            note = "" if e.checked == e.total else f" ({e.checked}/{e.total} entries)"
            lines.append(f"{e.name}: rel_err={e.rel_err:.3e} abs_err={e.max_abs_err:.3e}{note}")
        lines.append(f"max rel err {self.max_rel_error:.3e} "
                     f"{'PASS' if self.passed else 'FAIL'} (tol {self.tolerance:g})")
        return "\n".join(lines)


def _entry_indices(numel: int, max_entries, seed: int):
    if max_entries is None or numel <= max_entries:
        return list(range(numel))
    g = torch.Generator().manual_seed(seed)
    return torch.randperm(numel, generator=g)[:max_entries].tolist()


def gradcheck(
    fn,
    inputs: dict[str, torch.Tensor],
    step: float = 1e-3,
    tolerance: float = 1e-4,
    max_entries_per_input: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare autograd gradients of ``fn`` against central differences.

    Args:
        fn: callable taking ``dict[str, Tensor]`` and returning a tensor.
        inputs: named input tensors; each is checked independently. All
            are converted to float64 internally.
        step: finite-difference step.
        max_entries_per_input: if set, only a seeded random subset of each
            input's elements is probed (for large compositions); the
            report records how many were checked.

    Inputs must be generic points of ``fn``: central differences assume the
    function is smooth within ``step`` of the evaluation point, so keep
    sampling coordinates away from integers and L1 arguments away from zero.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    work = {k: v.detach().double().clone().requires_grad_(True) for k, v in inputs.items()}

    out = fn(work)
    g = torch.Generator().manual_seed(seed + 1)
    projection = torch.randn(out.shape, generator=g, dtype=torch.float64)
    scalar = (out * projection).sum()
    grads = torch.autograd.grad(scalar, list(work.values()), allow_unused=True)
    analytic = {
        k: (g_.detach() if g_ is not None else torch.zeros_like(v))
        for (k, v), g_ in zip(work.items(), grads)
    }

    frozen = {k: v.detach() for k, v in work.items()}

    def eval_at(name, flat_idx, delta):
        probe = {k: (v.clone() if k == name else v) for k, v in frozen.items()}
        probe[name].view(-1)[flat_idx] += delta
        with torch.no_grad():
            return float((fn(probe) * projection).sum())

    report = GradCheckReport(step=step, tolerance=tolerance)
    for name, tensor in frozen.items():
        numel = tensor.numel()
        indices = _entry_indices(numel, max_entries_per_input, seed)
        a_flat = analytic[name].reshape(-1)
        max_abs = 0.0
        a_norm = float(a_flat.abs().max()) if numel else 0.0
        n_norm = 0.0
        for idx in indices:
            plus = eval_at(name, idx, step)
            minus = eval_at(name, idx, -step)
            numeric = (plus - minus) / (2.0 * step)
            n_norm = max(n_norm, abs(numeric))
            max_abs = max(max_abs, abs(float(a_flat[idx]) - numeric))
        rel = max_abs / max(1.0, a_norm, n_norm)
        report.entries.append(
            GradCheckEntry(name, max_abs, rel, a_norm, n_norm, len(indices), numel)
        )
    return report


def module_gradcheck(
    module: torch.nn.Module,
    args: tuple,
    step: float = 1e-3,
    tolerance: float = 1e-4,
    check_params: bool = True,
    max_entries_per_input: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Gradcheck a module w.r.t. its tensor args and (optionally) parameters.

    The module is evaluated functionally in double precision; non-tensor
    args pass through unchanged.
    """
    module = module.double()
    named = {}
    arg_keys = []
    for i, a in enumerate(args):
        key = f"input{i}"
        if isinstance(a, torch.Tensor):
            named[key] = a
        arg_keys.append((key, a))
    if check_params:
        for pname, p in module.named_parameters():
            named[f"param:{pname}"] = p

    def fn(tensors):
        params = {k[len("param:"):]: v for k, v in tensors.items() if k.startswith("param:")}
        call_args = [tensors[k] if k in tensors else a for k, a in arg_keys]
        out = torch.func.functional_call(module, params, tuple(call_args))
        return out

    return gradcheck(
        fn, named, step=step, tolerance=tolerance,
        max_entries_per_input=max_entries_per_input, seed=seed,
    )
