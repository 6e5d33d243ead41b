"""From-scratch FCN and U-Net segmentation networks on numpy."""

from .augment import AugmentPolicy, transform
from .dataio import Dataset, Sample, split_train_val
from .metrics import MetricsReport, cross_entropy, dice, dice_report, pixel_accuracy
from .netgraph import FCN, UNET, Graph, ModelConfig, build_fcn, build_graph, build_unet, param_count, predict
from .optim import make_optimizer, set_lr, step
from .trainer import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
