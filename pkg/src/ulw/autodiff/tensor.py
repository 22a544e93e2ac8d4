"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps a float32/float64 array.  Operations (see ulw.autodiff.ops)
record themselves onto the active Graph, a linear tape whose records are
topologically ordered by construction: node ids are assigned in creation
order, so every input id precedes its consumer.  Graph.backward sweeps the
tape once in reverse, accumulating gradients additively; gradients must be
zeroed explicitly between optimization steps.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ulw.errors import UsageError

_graph_stack: list["Graph"] = []
_grad_enabled: bool = True
_debug_finite: bool = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle post-op finiteness assertions.  Off by default (costs a pass per op)."""
    global _debug_finite
    _debug_finite = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_finite


def active_graph() -> "Graph | None":
    """The graph ops should record onto, or None when not recording."""
    if _graph_stack and _grad_enabled:
        return _graph_stack[-1]
    return None


@contextlib.contextmanager
def no_grad():
    """Disable recording (and requires_grad propagation) inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A dense float array plus the bookkeeping reverse mode needs.

    node_id identifies the tensor inside the graph that last registered it and
    means nothing outside that graph.  grad accumulates across backward calls
    until reset (zero_grad or assignment).
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's buffer, outside any graph."""
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flags})"


class _OpRecord:
    __slots__ = ("kind", "input_ids", "output_id", "backward_fn")

    def __init__(self, kind, input_ids, output_id, backward_fn):
        self.kind = kind
        self.input_ids = input_ids
        self.output_id = output_id
        self.backward_fn = backward_fn


class Graph:
    """Linear tape of recorded operations.

    Usable as a context manager: ops executed inside the block record onto it.
    Saved activations live in each record's backward closure, so dropping the
    graph frees them.
    """

    def __init__(self):
        self._records: list[_OpRecord] = []
        self._tensors: dict[int, Tensor] = {}
        self._next_id = 0

    def __enter__(self) -> "Graph":
        _graph_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _graph_stack.remove(self)

    @property
    def records(self) -> tuple:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def _register(self, tensor: Tensor) -> int:
        nid = tensor.node_id
        if nid is None or self._tensors.get(nid) is not tensor:
            nid = self._next_id
            self._next_id += 1
            tensor.node_id = nid
            self._tensors[nid] = tensor
        return nid

    def record(self, kind: str, inputs: tuple, output: Tensor, backward_fn) -> None:
        input_ids = tuple(self._register(t) for t in inputs)
        output_id = self._register(output)
        self._records.append(_OpRecord(kind, input_ids, output_id, backward_fn))

    def op_kinds(self) -> list[str]:
        return [r.kind for r in self._records]

    def backward(self, loss: Tensor) -> None:
        """Reverse sweep from a scalar loss.

        Visits every record exactly once in reverse creation order.  After the
        sweep, every requires_grad tensor registered on this graph has .grad
        populated (zeros when the tensor does not reach the loss); accumulation
        into pre-existing .grad buffers is additive.
        """
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node_id is None or self._tensors.get(loss.node_id) is not loss:
            raise UsageError("loss tensor was not recorded on this graph")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for rec in reversed(self._records):
            gout = grads.get(rec.output_id)
            if gout is None:
                continue
            gins = rec.backward_fn(gout)
            for nid, g in zip(rec.input_ids, gins):
                if g is None:
                    continue
                held = grads.get(nid)
                grads[nid] = g if held is None else held + g
        for nid, tensor in self._tensors.items():
            if not tensor.requires_grad:
                continue
            g = grads.get(nid)
            if g is None:
                g = np.zeros_like(tensor.data)
            tensor.grad = g if tensor.grad is None else tensor.grad + g


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Run the reverse sweep on `graph` (default: the active graph)."""
    if graph is None:
        graph = active_graph()
    if graph is None:
        raise UsageError("backward called with no graph active and none given")
    graph.backward(loss)
