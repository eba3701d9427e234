"""Non-autoregressive mispronunciation detection and diagnosis.

Mask-CTC dictation, a prompt-gated pronunciation model, and the scoring
protocol (alignment, CD/MD precision/recall/F1, diagnosis accuracy, PER,
real-time factor), with a seeded synthetic corpus for testing.
"""
from .ctc import PosteriorGrid, TokenSpan, collapse, ctc_forward_logprob, greedy_path, token_confidence
from .evaluation import (AlignmentOp, ConfusionCounts, MetricsReport, UtteranceRecord, align,
                         classify, detection_rates, f1, per, report, rtf)
from .maskctc import (CMLM, DictationResult, EncoderStack, MaskCtcConfig, dictate,
                      dictate_from_posteriors, encode, initial_mask, mask_predict_refine)
from .phones import FoldingMap, PhoneInventory, default_folding, default_inventory, load_inventory
from .pronunciation import Judgement, PMInput, PronunciationModel, pm_forward

__version__ = "0.1.0"
