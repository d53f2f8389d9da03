"""Bitemporal change captioning on a small numpy autodiff engine."""
from .config import ModelConfig, TrainConfig, toy_config
from .decoder import (DecoderParams, causal_mask, cross_entropy_loss, forward_teacher_forced,
                      greedy_decode, init_decoder, project_vocab, sinusoidal_positions)
from .encoder import EncoderParams, encode, init_encoder
from .features import (TEMPLATES, DatasetRecord, FeaturePair, SyntheticConfig, gen_synthetic, load_feature_file,
                       load_manifest, toy_extract, write_feature_file, write_manifest)
from .metrics import EvalReport, bleu_n, cider_d, evaluate_captions, meteor_x, rouge_l
from .tensor import Tape, Tensor, backward, grad_check
from .train import Checkpoint, adam_step, caption, evaluate, lr_at_epoch, train
from .vocab import Vocabulary, build_vocab, decode_caption, encode_caption

__version__ = "0.1.0"
