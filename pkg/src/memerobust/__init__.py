"""Multimodal meme classifier robust to a missing text modality.

A single shared stack projects text and image embeddings independently into
one representation space; per-modality logits are summed when both channels
exist and the image logits stand alone when text is missing. The package
also ships the fused-concatenation baseline, the full training recipe, the
stratified text-availability evaluation protocol, and WER/BLEU text metrics.
"""

from .data import (
    AVAILABILITY_LEVELS,
    AvailabilityMask,
    EmbeddingDataset,
    EmbeddingRecord,
    LabelScheme,
    apply_availability_mask,
    kfold_split,
    load_dataset,
    save_dataset,
    synth_generate,
    to_binary_labels,
)
from .harness import (
    ExperimentConfig,
    evaluate,
    evaluate_sweep,
    make_batch,
    run_experiment,
    substitute_noisy_text,
    train,
)
from .layers import (
    BatchNormState,
    GradTape,
    batchnorm_backward,
    batchnorm_forward,
    dropout,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
    softmax_cross_entropy,
)
from .metrics import TextPair, bleu, corpus_wer, f1_binary, f1_macro, tokenize, wer
from .model import (
    FR,
    SR,
    ModalBatch,
    ModelParams,
    fr_forward,
    load_checkpoint,
    predict,
    save_checkpoint,
    shared_stack_forward,
    sr_backward,
    sr_forward,
)
from .optim import AdamWState, ScheduleSpec, adamw_step, clip_global_norm, lr_at
from .report import EvalReport, ReportRow, emit_report, load_jsonl

__version__ = "0.1.0"
