"""LSTM language models for code-switched text trained on monolingual data,
with SKLD / cosine-distance constraints and unit-norm output embeddings."""

from .corpus import (BilingualDict, Corpus, Lang, SentClass, Vocabulary, build_vocabulary, load_bilingual_dict,
                     load_corpus, sentence_concatenation, word_substitution)
from .evaluate import (cs_points, generate, pca_project, perplexity, perplexity_report, separability_score,
                       translate_eval)
from .model import ModelParams, forward, init_params, log_prob_sequence, lstm_step, normalize_rows, partition_output
from .regularizers import RegularizerConfig, constraint_loss, cosine_distance, gaussian_fit, skld
from .synth import SynthConfig, generate_synthetic_bilingual
from .training import TrainConfig, adam_step, backward, project_normalize, total_loss, train

__version__ = "0.1.0"
