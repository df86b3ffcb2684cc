"""Glimpse-model training and segment-by-segment reranked stochastic decoding."""
from .core import (LOG_ZERO, CompletedSequence, ConditionalSequenceModel, DegenerateDistribution,
                   DimensionMismatch, EmptyPool, EmptyTarget, InsufficientData, NonFinite, OracleModel,
                   Vocabulary, next_token_distribution, oracle_marginal, oracle_sample, sequence_log_prob)
from .decode import (Beam, DecodeParams, ScoredSegment, backoff_respond, beam_search, greedy_decode,
                     generate_segment_candidates, rerank_by_marginal, score_segment, segment_decode,
                     stochastic_beam_step)
from .glimpse import GlimpseConfig, GlimpseExample, make_training_stream, perplexity, split_into_glimpses
from .nn import ModelConfig, NeuralSeq2Seq

__version__ = "0.1.0"
