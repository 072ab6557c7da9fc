from .blocks import AutoencoderRegBlock, CascadeRegBlock, ConvLSTMCell, make_reg_block
from .checkpoint import load_checkpoint, load_model, read_header, save_checkpoint
from .models import (ATTENTION_INPUTS, MODEL_KINDS, REG_TYPES, JointNet, ModelConfig,
                     OneStepNet, ReconNet, SERANet, attention_combine, build_model,
                     init_parameters, zero_parameters)
from .segmenter import PaddedSegmenter, RecurrentUNet

__all__ = [
    "ATTENTION_INPUTS", "MODEL_KINDS", "REG_TYPES",
    "AutoencoderRegBlock", "CascadeRegBlock", "ConvLSTMCell", "JointNet",
    "ModelConfig", "OneStepNet", "PaddedSegmenter", "ReconNet", "RecurrentUNet",
    "SERANet", "attention_combine", "build_model", "init_parameters",
    "load_checkpoint", "load_model", "make_reg_block", "read_header",
    "save_checkpoint", "zero_parameters",
]
