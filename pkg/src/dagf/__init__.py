"""Guided image filtering: classical filters and a trainable attentional guided filter."""
from .filters import BilateralParams, GIFParams, bilateral_filter, box_filter, guided_image_filter, joint_bilateral_upsample
from .kernels import apply_kernel_field, apply_kernel_field_naive, combine_kernels
from .network import DagfConfig, DagfModel, DagfOutputs, forward, init_params
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import LossWeights, boundary_aware_loss, boundary_mask, l1_loss, multi_stage_loss, total_loss

__version__ = "0.1.0"
