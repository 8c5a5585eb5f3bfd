"""Prompt-context tuning against a frozen deterministic text encoder.

The learnable state is a small matrix of context vectors shared by every
class prompt. Training combines a cosine/temperature cross-entropy with a
margin-constrained semantic-expansion loss built from LLM-generated
neighbor strings; evaluation covers base-to-new generalization and
cross-dataset transfer.
"""

from .backend import active_backend
from .encoder import TextEncoder, Tokenizer, PromptTokens, fixed_prompt, context_prompt
from .errors import (ConfigError, DataError, DomainError, InputError,
                     NumericError, ProtocolError, SchemaError, SeptError,
                     ShapeError, UsageError)
from .evaluation import (EvalReport, evaluate_base_to_new, evaluate_cross_dataset,
                         harmonic_mean, run_base_to_new)
from .losses import AblationFlags, LossBreakdown, total_loss
from .manifest import (DatasetManifest, EmbeddingBatch, SyntheticSpec,
                       generate_synthetic, generate_synthetic_neighbors)
from .margins import MarginTable, compute_margin_table
from .numerics import SeededRng, cosine_sim, l2_dist, stable_softmax
from .prompting import (ClassSet, ContextMatrix, NeighborSet, PromptSpace,
                        TemplateEmbedder, TemplatePool, DEFAULT_TEMPLATE)
from .trainer import (EncoderConfig, TrainConfig, TrainedPrompt, sample_few_shot,
                      sgd_step, train, train_ce_baseline, run_sweep)

__version__ = "0.1.0"
