"""Transductive few-shot classification by subspace-reconstruction clustering."""
from .cst import ClusterSeparationTuner, CstConfig, cst_step
from .cvoc import CvocConfig, CvocResult, FactorDictionary, PrototypeSet, query_logits, run_cvoc
from .episodes import (EmbeddingDataset, Episode, SemanticTable, generate_synthetic_task,
                       kmeans_baseline, load_embeddings, sample_episode, save_embeddings)
from .errors import InputError
from .metrics import LossWeights, accuracy, cross_entropy, episodic_loss, mean_ci95
from .numerics import (entropy, reconstruction_distance, softmax_temperature, solve_ridge)
from .pipeline import (METHODS, EpisodeReport, PipelineConfig, PseudoLabelSet, evaluate_episode,
                       expand_support, restricted_pseudo_label)
from .propagation import PropagationConfig, SoftLabelMatrix, embedding_propagation, label_propagation
from .semantic import SinNetwork, SinTrainConfig, load_sin, refine_prototype, save_sin, sin_train

__version__ = "0.1.0"
