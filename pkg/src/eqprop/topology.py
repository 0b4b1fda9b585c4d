"""Interaction-graph descriptions of convolutional Hopfield networks.

A topology is a list of neuronal state specs plus typed edges between them.
State 0 is always the clamped input; the last state is the output readout.
Every edge owns one weight tensor used in both directions (forward op and
its adjoint), which is what makes the weight coupling symmetric.
"""

from dataclasses import dataclass, field

CONV3 = "conv3x3"
SKIP1 = "conv1x1_skip"
IDENTITY_SKIP = "identity_skip"
DENSE = "dense"

EDGE_OPS = (CONV3, SKIP1, IDENTITY_SKIP, DENSE)


@dataclass(frozen=True)
class StateSpec:
    index: int
    shape: tuple
    # clipping bound of the state's activation; None means identity (used
    # for the output readout)
    alpha: float | None = 6.0


@dataclass(frozen=True)
class EdgeSpec:
    from_state: int
    to_state: int
    op: str
    pooled: bool
    param_id: str | None

    def __post_init__(self):
        if self.op not in EDGE_OPS:
            raise ValueError(f"unknown edge op {self.op!r}")
        if (self.param_id is None) != (self.op == IDENTITY_SKIP):
            raise ValueError("exactly the identity-skip edges are parameterless")


@dataclass
class NetworkTopology:
    states: list
    edges: list
    _pre: dict = field(default_factory=dict, repr=False)
    _post: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._pre = {s.index: [] for s in self.states}
        self._post = {s.index: [] for s in self.states}
        for e in self.edges:
            self._pre[e.to_state].append(e)
            self._post[e.from_state].append(e)

    def pre(self, n):
        """Edges arriving at state n from lower-indexed states."""
        return self._pre[n]

    def post(self, n):
        """Edges leaving state n toward higher-indexed states."""
        return self._post[n]

    @property
    def num_states(self):
        return len(self.states)

    @property
    def output_index(self):
        return len(self.states) - 1

    def updatable_indices(self):
        """All state indices except the clamped input."""
        return list(range(1, len(self.states)))

    def param_ids(self):
        return [e.param_id for e in self.edges if e.param_id is not None]

    def param_shape(self, edge):
        """Weight tensor shape owned by an edge."""
        fs = self.states[edge.from_state].shape
        ts = self.states[edge.to_state].shape
        if edge.op == CONV3:
            return (ts[0], fs[0], 3, 3)
        if edge.op == SKIP1:
            return (ts[0], fs[0], 1, 1)
        if edge.op == DENSE:
            n_in = 1
            for d in fs:
                n_in *= d
            return (ts[0], n_in)
        return None

    def without_skip_edges(self):
        """Copy of the topology with every 1x1/identity skip edge removed
        (the ablation variant)."""
        kept = [e for e in self.edges if e.op not in (SKIP1, IDENTITY_SKIP)]
        return NetworkTopology(states=list(self.states), edges=kept)


def _edge_output_shape(topology_states, edge, from_shape):
    if edge.op == DENSE:
        return None  # checked against to-state directly
    c_out = from_shape[0]
    return from_shape


def validate_topology(t):
    """Check all structural invariants; returns a list of violation strings
    (empty when the topology is valid)."""
    errors = []
    for i, s in enumerate(t.states):
        if s.index != i:
            errors.append(f"state {i}: index field is {s.index}, expected {i}")
    n = len(t.states)
    for e in t.edges:
        if not (0 <= e.from_state < n and 0 <= e.to_state < n):
            errors.append(f"edge {e.param_id}: state index out of range")
            continue
        if e.from_state >= e.to_state:
            errors.append(
                f"edge {e.param_id}: from_state {e.from_state} >= to_state {e.to_state}"
            )
            continue
        fs = t.states[e.from_state].shape
        ts = t.states[e.to_state].shape
        if e.op in (CONV3, SKIP1, IDENTITY_SKIP):
            if len(fs) != 3 or len(ts) != 3:
                errors.append(f"edge {e.param_id}: conv edge between non-spatial states")
                continue
            h, w = fs[1], fs[2]
            if e.pooled:
                if h % 2 or w % 2:
                    errors.append(f"edge {e.param_id}: odd spatial size {h}x{w} before pool")
                    continue
                h, w = h // 2, w // 2
            if (h, w) != (ts[1], ts[2]):
                errors.append(
                    f"edge {e.param_id}: spatial {fs[1]}x{fs[2]} (pooled={e.pooled}) "
                    f"does not reach {ts[1]}x{ts[2]}"
                )
            if e.op == IDENTITY_SKIP and fs[0] != ts[0]:
                errors.append(f"identity skip {e.from_state}->{e.to_state}: channel mismatch")
        elif e.op == DENSE:
            if e.pooled:
                errors.append(f"edge {e.param_id}: dense edges cannot be pooled")
    for i in range(1, n):
        if not t.pre(i):
            errors.append(f"state {i}: no incoming edge from a lower index")
    seen = {}
    for e in t.edges:
        if e.param_id is not None:
            if e.param_id in seen:
                errors.append(f"duplicate param_id {e.param_id}")
            seen[e.param_id] = e
    return errors


def build_vgg5(in_shape, channel_plan, num_classes, alpha=6.0, pooled=None):
    """Chain of four 3x3 conv states and a dense readout.  Each conv edge
    pools by default, halving the spatial size four times."""
    if num_classes <= 0:
        raise ValueError("num_classes must be positive")
    if len(channel_plan) != 4:
        raise ValueError("channel_plan must list 4 channel counts")
    if pooled is None:
        pooled = [True] * 4
    states = [StateSpec(0, tuple(in_shape), alpha=None)]
    edges = []
    c, h, w = in_shape
    for i, (ch, pool) in enumerate(zip(channel_plan, pooled), start=1):
        if pool:
            if h % 2 or w % 2:
                raise ValueError(f"spatial size {h}x{w} not divisible by 2 at conv{i}")
            h, w = h // 2, w // 2
        states.append(StateSpec(i, (ch, h, w), alpha=alpha))
        edges.append(EdgeSpec(i - 1, i, CONV3, pool, f"conv{i}"))
    out = len(states)
    states.append(StateSpec(out, (num_classes,), alpha=None))
    edges.append(EdgeSpec(out - 1, out, DENSE, False, "dense"))
    return NetworkTopology(states=states, edges=edges)


def build_hopfield_resnet13(
    in_shape, channel_plan, num_classes, alpha=6.0, skip=True, identity_skip=False
):
    """Four residual blocks plus a dense readout: per block, two 3x3 convs on
    the main path (second one pooled) and a pooled 1x1 skip conv linking the
    previous block output to the current one.  13 parameter tensors, 9
    updatable states."""
    if num_classes <= 0:
        raise ValueError("num_classes must be positive")
    if len(channel_plan) != 4:
        raise ValueError("channel_plan must list 4 channel counts")
    states = [StateSpec(0, tuple(in_shape), alpha=None)]
    edges = []
    c, h, w = in_shape
    prev_b = 0
    prev_c = c
    for k, ch in enumerate(channel_plan, start=1):
        if h % 2 or w % 2:
            raise ValueError(f"spatial size {h}x{w} not divisible by 2 in block {k}")
        a = 2 * k - 1
        b = 2 * k
        states.append(StateSpec(a, (ch, h, w), alpha=alpha))
        h, w = h // 2, w // 2
        states.append(StateSpec(b, (ch, h, w), alpha=alpha))
        edges.append(EdgeSpec(prev_b, a, CONV3, False, f"block{k}_conv1"))
        edges.append(EdgeSpec(a, b, CONV3, True, f"block{k}_conv2"))
        if skip:
            if identity_skip and prev_c == ch:
                edges.append(EdgeSpec(prev_b, b, IDENTITY_SKIP, True, None))
            else:
                # identity skips need matching channels; blocks that change
                # width keep the 1x1 conv skip
                edges.append(EdgeSpec(prev_b, b, SKIP1, True, f"block{k}_skip"))
        prev_b = b
        prev_c = ch
    out = len(states)
    states.append(StateSpec(out, (num_classes,), alpha=None))
    edges.append(EdgeSpec(prev_b, out, DENSE, False, "dense"))
    return NetworkTopology(states=states, edges=edges)


def build_dense_chain(layer_dims, alpha=6.0):
    """Fully dense chain: input, hidden clipped states, identity output.
    Used for small-scale estimator studies and tests."""
    if len(layer_dims) < 2:
        raise ValueError("need at least input and output dims")
    states = [StateSpec(0, (layer_dims[0],), alpha=None)]
    edges = []
    for i, d in enumerate(layer_dims[1:], start=1):
        a = None if i == len(layer_dims) - 1 else alpha
        states.append(StateSpec(i, (d,), alpha=a))
        edges.append(EdgeSpec(i - 1, i, DENSE, False, f"dense{i}"))
    return NetworkTopology(states=states, edges=edges)
