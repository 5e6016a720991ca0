"""tsqk: trainable time-series quantum kernels on a statevector simulator.

Subpackages follow the pipeline: `sim` (statevector engine), `ansatz`
(circuit families), `kernel` (per-time and combined Gram matrices),
`qccnet` (convex multiple-kernel training loop), `svm` (classifier and
metrics), `timeprobe` (embedding-overlap diagnostics), `qmp` (packed
parallel execution), `data` (datasets and scaling), `cli` (orchestration).
"""

__version__ = "0.1.0"
