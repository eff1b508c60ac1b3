"""2-D U-Net brain-tumour segmentation on a small numpy autodiff engine."""
from .augment import AugmentationSpec, augment, elastic_field, warp_pair
from .data import (SliceSample, Volume, extract_slices, generate_phantom, kfold_split,
                   load_volume, normalize, save_volume)
from .metrics import EvalReport, aggregate, confusion, dsc, evaluate_case, region_mask, sensitivity
from .optim import Adam, TrainConfig, soft_dice_loss, train
from .tensor import Graph, Tensor
from .unet import UNetConfig, UNetModel, build_unet, forward, param_count

__version__ = "0.1.0"
