"""Named parameters and the frozen/trainable split."""

from __future__ import annotations

import hashlib
from collections import OrderedDict

import numpy as np

from catchvqa.errors import ContractError, FrozenParameterError
from catchvqa.tensor.tensor import Tensor


class Parameter:
    """A named leaf tensor. Frozen parameters have read-only storage."""

    __slots__ = ("name", "tensor", "_trainable")

    def __init__(self, name, data, trainable=True):
        self.name = name
        self.tensor = Tensor(np.array(data, dtype=np.float64, copy=True))
        self._trainable = True
        self.trainable = trainable

    @property
    def trainable(self):
        return self._trainable

    @trainable.setter
    def trainable(self, flag):
        flag = bool(flag)
        self._trainable = flag
        self.tensor.requires_grad = flag
        self.tensor.data.flags.writeable = flag
        if not flag:
            self.tensor.grad = None

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.data.shape

    def assign(self, value):
        """Replace the stored values; refused for frozen parameters."""
        if not self._trainable:
            raise FrozenParameterError(f"parameter {self.name!r} is frozen")
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.shape:
            raise ContractError(f"{self.name}: shape {value.shape} != {self.shape}")
        self.tensor.data = value.copy()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self._trainable})"


class ParameterStore:
    """Ordered mapping of unique names to :class:`Parameter`."""

    def __init__(self, params=()):
        self._params = OrderedDict()
        for p in params:
            self.add(p)

    def add(self, param):
        if param.name in self._params:
            raise ContractError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def new(self, name, data, trainable=True):
        return self.add(Parameter(name, data, trainable))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def trainable(self):
        return [p for p in self._params.values() if p.trainable]

    def freeze(self):
        for p in self._params.values():
            p.trainable = False

    def unfreeze(self):
        for p in self._params.values():
            p.trainable = True

    def all_frozen(self):
        return not any(p.trainable for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.grad = None

    def num_parameters(self):
        return int(sum(p.data.size for p in self._params.values()))

    def checksum(self):
        return checksum(self._params.values())

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self._params.items())

    def load_state_dict(self, state, strict=True):
        """Copy values in, bypassing the frozen guard (used by checkpoint loading)."""
        if strict and set(state) != set(self._params):
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise ContractError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, value in state.items():
            p = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != p.shape:
                raise ContractError(f"{name}: shape {value.shape} != {p.shape}")
            flag = p.trainable
            p.tensor.data = value.copy()
            p.trainable = flag


def checksum(params):
    """SHA-256 over names, shapes and raw little-endian bytes."""
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(repr(tuple(p.shape)).encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()
