"""Forward-pass operation counting.

Layers report multiplication/addition counts and spike rates here whenever a
counter is active. Counting conventions (45nm energy model):

* affine layers fed by spikes accumulate weights, so they contribute
  additions only: one per unit of input activity per fan-out weight;
* affine layers fed by real values contribute one multiplication and one
  addition per multiply-accumulate;
* membrane decay costs one multiplication and one addition per neuron per
  timestep unless the decay constant is zero;
* elementwise residual merges count one addition per element;
* the learnable attention scale costs one multiplication per scaled element;
* batch-norm layers are folded into the preceding affine map before
  counting, so they contribute nothing on their own.
"""

import contextlib

_active = None


def active():
    return _active


class OpCounter:
    """Accumulates op counts and spike rates per layer."""

    def __init__(self):
        self.mults = 0
        self.adds = 0
        self.per_layer = {}
        self.spike_rates = {}

    def add(self, layer, mults, adds):
        self.mults += int(mults)
        self.adds += int(adds)
        m, a = self.per_layer.get(layer, (0, 0))
        self.per_layer[layer] = (m + int(mults), a + int(adds))

    def rate(self, layer, fraction):
        self.spike_rates[layer] = float(fraction)


@contextlib.contextmanager
def counting(counter):
    global _active
    if _active is not None:
        raise RuntimeError("an OpCounter is already active")
    _active = counter
    try:
        yield counter
    finally:
        _active = None
