"""Brain tissue segmentation directly from under-sampled MRI k-space.

The package covers the full workflow: procedural brain phantoms with a
spin-echo signal model (`phantom`), centered Fourier operators, Cartesian
under-sampling and dataset synthesis (`kspace`, `dataio`), the unrolled
reconstruction-plus-attention-segmentation networks and baselines
(`network`), losses, Dice metrics and the training loop (`training`), and
experiment orchestration plus the `seranet` CLI (`experiments`, `cli`).
"""

from . import dataio, experiments, kspace, network, phantom, training
from .kspace import (KSpaceSample, RecordMeta, SamplingMask, build_dataset,
                     corrupt_and_undersample, data_consistency, fft2c, ifft2c,
                     make_cartesian_mask, normalize_image, zero_fill)
from .network import (ModelConfig, SERANet, attention_combine, build_model,
                      init_parameters, load_checkpoint, load_model,
                      save_checkpoint)
from .phantom import (DEFAULT_TISSUES, NUM_CLASSES, SequenceParams, TissueParams,
                      generate_label_map, labels_to_onehot, spin_echo_signal,
                      synthesize_complex_image)
from .training import (TrainConfig, TrainResult, average_dice, composite_loss,
                       cross_entropy_loss, dice_scores, evaluate_model, l2_loss,
                       train_model)

__version__ = "0.1.0"
