"""Parameter containers shared by all trainable models."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from sbir.numerics.autograd import Tensor


class Module:
    """Holds named trainable tensors and exposes them as one flat vector.

    Subclasses register parameters with :meth:`add_param` or attach child
    modules with :meth:`add_module`; names are dotted paths.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def add_module(self, prefix: str, module: "Module") -> "Module":
        for name, t in module._params.items():
            self._params[f"{prefix}.{name}"] = t
        return module

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    @property
    def num_params(self) -> int:
        return sum(t.value.size for t in self._params.values())

    def get_flat(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([t.value.ravel() for t in self._params.values()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params:
            raise ValueError(f"expected {self.num_params} values, got {flat.size}")
        i = 0
        for t in self._params.values():
            n = t.value.size
            t.value = flat[i : i + n].reshape(t.value.shape).copy()
            i += n

    def flat_grad(self, grads: list[np.ndarray]) -> np.ndarray:
        if not grads:
            return np.zeros(0)
        return np.concatenate([g.ravel() for g in grads])

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) ^ set(state)
        if missing:
            raise KeyError(f"state keys do not match parameters: {sorted(missing)}")
        for k, t in self._params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != t.value.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {t.value.shape}")
            t.value = v.copy()
