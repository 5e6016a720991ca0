"""Multi-programmed execution: pack disjoint small circuits onto one wide
register, synthesize the joint measurement, and marginalize it back out.

Packed circuits share no qubits, so the joint state is a tensor product
and the joint sample is synthesized exactly by sampling each circuit
from its own seeded sub-stream and concatenating bitstrings (idle and
buffer positions read '0').  A per-qubit readout-flip probability can be
injected into the packed run to emulate imperfect readout; crosstalk is
deliberately not modeled.
"""

from __future__ import annotations

import json
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import sim
from .errors import CapacityError, NormalizationUndefinedError, UsageError
from .sim import CountsMap


class Circuit(NamedTuple):
    """A gate program plus its register width."""

    gates: list
    n_qubits: int


def circuit_seed(seed: int, circuit_id: int) -> int:
    """Per-circuit sub-seed shared by serial and packed sampling."""
    return int(np.random.SeedSequence((seed, circuit_id)).generate_state(1)[0])


def _flip_seed(seed: int, circuit_id: int) -> int:
    return int(np.random.SeedSequence((seed, circuit_id, 1)).generate_state(1)[0])


def _adjacency(device_width: int, edges) -> list:
    adj = [[] for _ in range(device_width)]
    if edges is None:
        for q in range(device_width - 1):
            adj[q].append(q + 1)
            adj[q + 1].append(q)
    else:
        for a, b in edges:
            if not (0 <= a < device_width and 0 <= b < device_width):
                raise UsageError(f"edge ({a}, {b}) outside device of width {device_width}")
            adj[a].append(b)
            adj[b].append(a)
    return adj


def _bfs_distances(adj, start) -> np.ndarray:
    dist = np.full(len(adj), -1, dtype=np.int64)
    dist[start] = 0
    queue = deque([start])
    while queue:
        q = queue.popleft()
        for nb in adj[q]:
            if dist[nb] < 0:
                dist[nb] = dist[q] + 1
                queue.append(nb)
    return dist


@dataclass
class QmpLayout:
    """Circuit-to-qubit-window assignment with an idle-buffer policy.

    ``assignments`` maps circuit ids to ordered physical qubit lists
    (logical qubit k of the circuit lands on ``qubits[k]``).  ``edges``
    is the device coupling graph; None means a line of ``device_width``
    qubits.
    """

    device_width: int
    assignments: List[Tuple[int, Tuple[int, ...]]]
    buffer: int = 1
    edges: Optional[List[Tuple[int, int]]] = None

    def __post_init__(self):
        self.assignments = [(int(cid), tuple(int(q) for q in qubits))
                            for cid, qubits in self.assignments]
        self.validate()

    def validate(self):
        if self.device_width < 1:
            raise UsageError("device width must be >= 1")
        if self.buffer < 0:
            raise UsageError("buffer must be >= 0")
        if not self.assignments:
            raise UsageError("layout needs at least one assignment")
        ids = [cid for cid, _ in self.assignments]
        if len(set(ids)) != len(ids):
            raise UsageError("duplicate circuit ids in layout")
        seen = set()
        for cid, qubits in self.assignments:
            for q in qubits:
                if not 0 <= q < self.device_width:
                    raise UsageError(f"circuit {cid} uses qubit {q}, device has "
                                     f"{self.device_width}")
                if q in seen:
                    raise UsageError(f"qubit {q} assigned to more than one circuit")
                seen.add(q)
        adj = _adjacency(self.device_width, self.edges)
        adj_sets = [set(nbrs) for nbrs in adj]
        for cid, qubits in self.assignments:
            for a, b in zip(qubits, qubits[1:]):
                if b not in adj_sets[a]:
                    raise UsageError(
                        f"circuit {cid}: qubits {a} and {b} are not coupled")
        # buffer policy: >= buffer idle qubits on every path between windows
        windows = [set(qubits) for _, qubits in self.assignments]
        for w_idx, (_, qubits) in enumerate(self.assignments):
            for q in qubits:
                dist = _bfs_distances(adj, q)
                for other_idx, other in enumerate(windows):
                    if other_idx == w_idx:
                        continue
                    for oq in other:
                        if 0 <= dist[oq] <= self.buffer:
                            raise UsageError(
                                f"windows of circuits {self.assignments[w_idx][0]} and "
                                f"{self.assignments[other_idx][0]} are separated by "
                                f"fewer than {self.buffer} idle qubits")

    @property
    def active_qubits(self) -> int:
        return sum(len(q) for _, q in self.assignments)

    def to_dict(self) -> dict:
        return {
            "device_width": self.device_width,
            "buffer": self.buffer,
            "edges": [list(e) for e in self.edges] if self.edges is not None else None,
            "assignments": [{"circuit": cid, "qubits": list(qubits)}
                            for cid, qubits in self.assignments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QmpLayout":
        edges = d.get("edges")
        return cls(
            device_width=d["device_width"],
            assignments=[(a["circuit"], tuple(a["qubits"])) for a in d["assignments"]],
            buffer=d.get("buffer", 1),
            edges=[tuple(e) for e in edges] if edges is not None else None,
        )


def save_layout(layout: QmpLayout, path):
    with open(path, "w") as fh:
        json.dump(layout.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_layout(path) -> QmpLayout:
    with open(path) as fh:
        return QmpLayout.from_dict(json.load(fh))


def trf(layout: QmpLayout) -> int:
    """Trial reduction factor: circuits packed per joint run."""
    return len(layout.assignments)


def pack(circuits: Sequence[Circuit], device_width: int, buffer: int = 1) -> QmpLayout:
    """Greedy packing of equal-width circuits along a line device.

    Windows sit at offsets 0, w+buffer, 2(w+buffer), ...; the layout
    holds as many of the given circuits as fit.  Hand layouts for
    non-line devices are supplied as explicit ``QmpLayout`` values (see
    :func:`load_layout`) and validated instead.
    """
    if not circuits:
        raise UsageError("nothing to pack")
    width = circuits[0].n_qubits
    if any(c.n_qubits != width for c in circuits):
        raise UsageError("greedy packing expects equal-width circuits")
    if width > device_width:
        raise CapacityError(f"circuit width {width} exceeds device width {device_width}")
    capacity = (device_width + buffer) // (width + buffer)
    if capacity < 1:
        raise CapacityError("no feasible placement")
    count = min(len(circuits), capacity)
    assignments = [
        (cid, tuple(range(cid * (width + buffer), cid * (width + buffer) + width)))
        for cid in range(count)
    ]
    return QmpLayout(device_width, assignments, buffer=buffer, edges=None)


def run_serial(circuits: Sequence[Circuit], shots: int, seed: int) -> list:
    """Sample each circuit on its own register with its per-circuit sub-seed."""
    out = []
    for cid, circ in enumerate(circuits):
        state = sim.run_program(sim.new_zero_state(circ.n_qubits), circ.gates)
        out.append(sim.sample_counts(state, shots, circuit_seed(seed, cid)))
    return out


def run_packed(layout: QmpLayout, circuits: Sequence[Circuit], shots: int,
               seed: int, flip_prob: float = 0.0) -> CountsMap:
    """Joint histogram of one packed run.

    Each packed circuit is sampled independently with the sub-seed it
    would get in a serial run; outcome bitstrings land on the circuit's
    window, buffers and idle qubits read '0'.  ``flip_prob`` applies an
    independent readout flip to every measured (active) bit.
    """
    if shots <= 0:
        raise UsageError("shots must be positive")
    if not 0.0 <= flip_prob <= 1.0:
        raise UsageError("flip probability must be in [0, 1]")
    width = layout.device_width
    bits = np.zeros((shots, width), dtype=np.uint8)
    for cid, qubits in layout.assignments:
        if cid >= len(circuits):
            raise UsageError(f"layout references circuit {cid}, got {len(circuits)}")
        circ = circuits[cid]
        if circ.n_qubits != len(qubits):
            raise UsageError(f"circuit {cid} has {circ.n_qubits} qubits but its "
                             f"window has {len(qubits)}")
        state = sim.run_program(sim.new_zero_state(circ.n_qubits), circ.gates)
        outcomes = sim.sample_outcomes(state, shots, circuit_seed(seed, cid))
        window = np.empty((shots, circ.n_qubits), dtype=np.uint8)
        for k in range(circ.n_qubits):
            window[:, k] = (outcomes >> k) & 1
        if flip_prob > 0.0:
            rng = np.random.Generator(np.random.PCG64(_flip_seed(seed, cid)))
            window ^= rng.random(window.shape) < flip_prob
        for k, q in enumerate(qubits):
            bits[:, width - 1 - q] = window[:, k]
    chars = np.where(bits, b"1", b"0").astype("S1")
    keys = np.ascontiguousarray(chars).view(f"S{width}").ravel()
    counts = Counter(k.decode() for k in keys)
    return CountsMap(dict(counts), width=width, shots=int(shots))


def partial_measurement(counts: CountsMap, least: int, n: int) -> CountsMap:
    """Marginal histogram of an n-qubit window starting at qubit ``least``.

    One pass over the observed keys (cost independent of 2^n), then all
    2^n window keys are emitted with zero fill; counts are conserved.
    """
    if least < 0 or n < 1 or least + n > counts.width:
        raise UsageError(
            f"window [{least}, {least + n}) does not fit width {counts.width}")
    acc = Counter()
    hi = counts.width - least
    lo = counts.width - least - n
    for key, c in counts.items():
        acc[key[lo:hi]] += c
    out = {format(i, f"0{n}b"): 0 for i in range(2**n)}
    out.update(acc)
    return CountsMap(out, width=n, shots=counts.shots)


def _as_distribution(dist, normalize: bool) -> dict:
    if isinstance(dist, CountsMap):
        items = dist.items()
    else:
        items = dist.items()
    total = float(sum(v for _, v in items))
    if total <= 0:
        raise UsageError("distribution has no mass")
    if normalize:
        return {k: v / total for k, v in items if v > 0}
    if abs(total - 1.0) > 1e-9:
        raise UsageError(f"ideal distribution must be normalized, sums to {total}")
    return {k: float(v) for k, v in items if v > 0}


def result_fidelity(p_out, p_ideal, n_outcomes: int) -> float:
    """Normalized Bhattacharyya agreement between output and ideal.

    f(P1, P2) = (sum_j sqrt(P1_j P2_j))^2; the raw score rescales f so the
    uniform distribution over ``n_outcomes`` maps to 0 and the ideal to 1,
    then clips to [0, 1].  ``p_out`` may be a histogram (normalized by its
    total); ``p_ideal`` must already be normalized.
    """
    if n_outcomes < 2:
        raise UsageError("need at least two outcomes")
    out = _as_distribution(p_out, normalize=True)
    ideal = _as_distribution(p_ideal, normalize=False)

    def bhatt(p1, p2):
        overlap = sum(math.sqrt(p1[k] * p2[k]) for k in p1.keys() & p2.keys())
        return overlap * overlap

    f_out = bhatt(out, ideal)
    # uniform-vs-ideal reduces to (1/n) * (sum_j sqrt(ideal_j))^2
    root_sum = sum(math.sqrt(v) for v in ideal.values())
    f_uni = root_sum * root_sum / n_outcomes
    if abs(1.0 - f_uni) < 1e-12:
        raise NormalizationUndefinedError(
            "ideal distribution is uniform; fidelity normalization undefined")
    raw = (f_out - f_uni) / (1.0 - f_uni)
    return min(max(raw, 0.0), 1.0)


def serial_call_count(n_train: int, n_test: int, p: int) -> int:
    """Device calls to fill all kernel matrices one circuit at a time.

    Strict upper triangle of the train Gram (the diagonal is 1 by
    construction) plus the full test-vs-train block, for every time step.
    """
    return (n_train * (n_train - 1) // 2 + n_test * n_train) * p


def packed_call_count(serial_calls: int, reduction: int) -> int:
    """Joint runs needed when each run evaluates ``reduction`` circuits."""
    if reduction < 1:
        raise UsageError("reduction factor must be >= 1")
    return math.ceil(serial_calls / reduction)


# ---------------------------------------------------------------------------
# reference 127-qubit heavy-hex device and the shipped hand layout

def heavy_hex_127_edges() -> list:
    """Coupling map of a 127-qubit heavy-hex lattice (7 rows of 14-15
    qubits joined by 24 bridge qubits)."""
    rows = [
        list(range(0, 14)),
        list(range(18, 33)),
        list(range(37, 52)),
        list(range(56, 71)),
        list(range(75, 90)),
        list(range(94, 109)),
        list(range(113, 127)),
    ]
    edges = []
    for row in rows:
        edges.extend((a, b) for a, b in zip(row, row[1:]))
    # bridge qubits occupy the index gaps between rows; their anchor columns
    # alternate between (0, 4, 8, 12) and (2, 6, 10, 14), and the last row
    # sits one column to the right of the full 15-qubit rows
    bridge_ids = [list(range(14, 18)), list(range(33, 37)), list(range(52, 56)),
                  list(range(71, 75)), list(range(90, 94)), list(range(109, 113))]
    shift = [0, 0, 0, 0, 0, 0, 1]
    for r in range(6):
        columns = (0, 4, 8, 12) if r % 2 == 0 else (2, 6, 10, 14)
        for col, bid in zip(columns, bridge_ids[r]):
            edges.append((rows[r][col - shift[r]], bid))
            edges.append((bid, rows[r + 1][col - shift[r + 1]]))
    return edges


def reference_heavy_hex_layout(buffer: int = 1) -> QmpLayout:
    """Hand layout: 35 two-qubit windows (70 active qubits) on the
    127-qubit heavy-hex device, five windows per row, all separated by at
    least one idle qubit."""
    rows = [0, 18, 37, 56, 75, 94, 113]
    assignments = []
    cid = 0
    for start in rows:
        for k in range(5):
            q = start + 3 * k
            assignments.append((cid, (q, q + 1)))
            cid += 1
    return QmpLayout(127, assignments, buffer=buffer, edges=heavy_hex_127_edges())
