from typing import Dict, Iterator, List, Tuple

import numpy as np


class ModelParams:
    """
    Named trainable tensors of one pipeline with a flat-vector view.

    Names are dotted ("norm.A", "backbone.W"); the flat order is insertion
    order, so every trainable scalar appears exactly once.
    """

    def __init__(self, tensors: Dict[str, np.ndarray] = None):
        self.tensors: Dict[str, np.ndarray] = {}
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.tensors:
            raise KeyError(f"parameter {name} already registered")
        self.tensors[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def names(self, prefix: str = "") -> List[str]:
        return [n for n in self.tensors if n.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        return int(sum(self.tensors[n].size for n in self.names(prefix)))

    def flat(self) -> np.ndarray:
        if not self.tensors:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def set_flat(self, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.count():
            raise ValueError(f"flat vector has {vector.size} entries, expected {self.count()}")
        offset = 0
        for name, value in self.tensors.items():
            n = value.size
            self.tensors[name] = vector[offset:offset + n].reshape(value.shape).copy()
            offset += n

    def flatten_like(self, grads: Dict[str, np.ndarray]) -> np.ndarray:
        """Flatten a name -> gradient dict in parameter order (missing names count as zero)"""
        if not self.tensors:
            return np.zeros(0)
        parts = []
        for name, value in self.tensors.items():
            g = grads.get(name)
            parts.append(np.zeros(value.size) if g is None else np.asarray(g, dtype=np.float64).reshape(-1))
        return np.concatenate(parts)

    def slice_of(self, prefix: str) -> np.ndarray:
        """Boolean mask over the flat vector selecting names with this prefix"""
        mask = []
        for name, value in self.tensors.items():
            mask.append(np.full(value.size, name.startswith(prefix)))
        return np.concatenate(mask) if mask else np.zeros(0, dtype=bool)

    def locate(self, flat_index: int) -> Tuple[str, Tuple[int, ...]]:
        """Map a flat index back to (name, multi-index)"""
        offset = 0
        for name, value in self.tensors.items():
            if flat_index < offset + value.size:
                return name, tuple(int(i) for i in np.unravel_index(flat_index - offset, value.shape))
            offset += value.size
        raise IndexError(flat_index)
