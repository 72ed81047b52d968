from .encoder import EncoderConfig, EncoderNet
from .loss import (
    LABEL_FIELDS,
    LossConfig,
    multilabel_supcon_loss,
    positives_mask,
    view_labels,
)
from .pretrain import (
    PretrainConfig,
    PretrainResult,
    contrastive_step,
    loss_csv,
    pretrain,
)
from .reference import nt_xent_reference, reduction_check, supcon_reference
from .sampler import epoch_batches, pair_index, sample_minibatch
