"""Named parameter collections with deterministic iteration order."""

from __future__ import annotations

import numpy as np

from ulw.autodiff import Tensor
from ulw.errors import UsageError


class ParamStore:
    """Flat name -> Tensor mapping.

    Iteration is always in lexicographic name order, so optimizer state,
    checkpoint layout and log output are deterministic regardless of the
    order parameters were registered in.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if not isinstance(tensor, Tensor):
            raise UsageError(f"ParamStore.add: {name!r} must map to a Tensor")
        if name in self._params:
            raise UsageError(f"ParamStore.add: duplicate parameter name {name!r}")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise UsageError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def tensors(self):
        for _, tensor in self.items():
            yield tensor

    def zero_grads(self) -> None:
        for tensor in self.tensors():
            tensor.zero_grad()

    def total_parameters(self) -> int:
        return sum(t.size for t in self.tensors())

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, tensor in self.items():
            out.add(name, tensor.astype(dtype))
        return out
