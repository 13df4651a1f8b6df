"""diffocr: desk-scale text-image recognition by absorbing-state discrete
diffusion training and easy-first iterative parallel decoding."""

__version__ = "0.1.0"

from .vocab import DEFAULT_CHARSET, Vocab, build_vocab, decode_text, encode
from .schedule import NoiseSchedule, cumulative_matrix, linear_mask_schedule, marginal, transition_matrix
from .rng import RngStream
from .noising import chain_sample, chain_trajectory, masked_repr, noise_sequence
from .net import (ModelConfig, ModelParams, adaln, decoder_forward, encode_image,
                  gradient_check, init_params, patchify, timestep_embedding)

__all__ = [
    "DEFAULT_CHARSET", "Vocab", "build_vocab", "decode_text", "encode",
    "NoiseSchedule", "cumulative_matrix", "linear_mask_schedule", "marginal", "transition_matrix",
    "RngStream", "chain_sample", "chain_trajectory", "masked_repr", "noise_sequence",
    "ModelConfig", "ModelParams", "adaln", "decoder_forward", "encode_image",
    "gradient_check", "init_params", "patchify", "timestep_embedding",
]
