"""Named collection of learnable tensors."""

from collections import OrderedDict
from typing import Dict, Iterator, Mapping, Tuple

import numpy as np

from src.engine.autograd import Tensor


class ParameterStore:
    """Ordered name -> Tensor mapping.

    Tensors are immutable, so updates replace the stored tensor.
    """

    def __init__(self, tensors: Mapping[str, np.ndarray] = None):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, value in (tensors or {}).items():
            self.set(name, value)

    def set(self, name: str, value: np.ndarray):
        self._tensors[name] = Tensor(value, requires_grad=True, name=name)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def as_dict(self) -> Dict[str, Tensor]:
        return dict(self._tensors)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self._tensors.items()}

    @property
    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self._tensors.values()))

    def copy(self) -> "ParameterStore":
        return ParameterStore({name: t.data.copy() for name, t in self._tensors.items()})
