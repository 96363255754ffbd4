from __future__ import annotations

from typing import Final

ADAM_BETA1: Final = 0.9
ADAM_BETA2: Final = 0.999
ADAM_EPS: Final = 1e-8

SVD_MAX_MIN_DIM: Final = 512
SVD_TOL: Final = 1e-15
SVD_MAX_SWEEPS: Final = 60

POWER_ITER_TOL: Final = 1e-12
POWER_ITER_MAX: Final = 1000

# backtracking gives up after this many halvings and treats the fit as stationary
MAX_HALVINGS: Final = 60

DIVERGENCE_LOSS: Final = 1e6

# numpy SeedSequence stream ids, so each consumer of randomness owns its own stream
STREAM_PROJECTOR_P: Final = 1
STREAM_PROJECTOR_Q: Final = 2
STREAM_BATCHES: Final = 3
STREAM_CHECKS: Final = 4
STREAM_WEIGHTS: Final = 5
STREAM_DATA: Final = 6
STREAM_LORA: Final = 7
STREAM_CORPUS: Final = 8
STREAM_CHERNOFF: Final = 9

EXIT_OK: Final = 0
EXIT_CONFIG: Final = 2
EXIT_NUMERIC: Final = 3
EXIT_IO: Final = 4

THREADS_ENV: Final = "LSP_KIT_THREADS"

PLOT_DIV_ID: Final = "lspkit-plot"
