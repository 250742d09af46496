"""evpred: a from-scratch seq2seq toolkit for next-event prediction.

Bidirectional multi-layer LSTM/GRU encoder-decoder (with optional additive
attention), teacher-forced Adam training with dev-BLEU model selection,
corpus BLEU and gold-paraphrase-set evaluation, and a finite-difference
gradient checker. Recurrent kernels run on numba when available; set
EVPRED_BACKEND=numpy to force the pure-numpy path.
"""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: F401
