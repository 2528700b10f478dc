"""Minimal module container: parameter discovery, train/eval state, and
relaxed-mode switching for everything built from layers."""

import numpy as np

from . import errors
from .tensor import Tensor


class Module:
    """Base class; children are discovered by walking instance attributes."""

    training = True

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item
            elif isinstance(val, dict):
                for k in sorted(val):
                    if isinstance(val[k], Module):
                        yield f"{key}.{k}", val[k]

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield (prefix + key, val)
        for key, child in self._children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def set_relaxed(self, relaxed):
        """Switch every spiking layer between threshold and ramp forward."""
        if getattr(self, "_forward_active", False):
            raise errors.StateError("cannot change neuron mode mid-forward")
        if hasattr(self, "relaxed"):
            self.relaxed = bool(relaxed)
        for _, child in self._children():
            child.set_relaxed(relaxed)
        return self

    def state_dict(self, prefix=""):
        out = {name: p.data for name, p in self.named_parameters(prefix)}
        for key, val in vars(self).items():
            if isinstance(val, np.ndarray):   # running statistics etc.
                out[prefix + key] = val
        for key, child in self._children():
            for k, v in child.state_dict(prefix + key + ".").items():
                if k not in out:
                    out[k] = v
        return out

    def load_state_dict(self, state):
        own = self.state_dict()
        missing = set(own) - set(state)
        if missing:
            raise errors.CheckpointError(f"missing entries: {sorted(missing)}")
        params = dict(self.named_parameters())
        for name, arr in state.items():
            if name not in own:
                raise errors.CheckpointError(f"unexpected entry {name!r}")
            if own[name].shape != arr.shape:
                raise errors.CheckpointError(
                    f"shape mismatch for {name!r}: "
                    f"{own[name].shape} vs {arr.shape}")
            if name in params:
                params[name].data = np.asarray(arr, dtype=np.float64).copy()
            else:
                self._assign_buffer(name, arr)

    def assign_named(self, name, arr):
        """Overwrite one parameter or buffer by its state-dict name."""
        params = dict(self.named_parameters())
        if name in params:
            params[name].data = np.asarray(arr, dtype=np.float64).copy()
        else:
            self._assign_buffer(name, arr)

    def _assign_buffer(self, name, arr):
        parts = name.split(".")
        obj = self
        for part in parts[:-1]:
            if isinstance(obj, (list, tuple)) and part.isdigit():
                obj = obj[int(part)]
            elif isinstance(obj, dict):
                obj = obj[part if part in obj else int(part)]
            else:
                obj = getattr(obj, part)
        setattr(obj, parts[-1], np.asarray(arr, dtype=np.float64).copy())
