"""Skeleton action recognition toolkit: BVH ingest, preprocessing, and a
spatial-transformer classifier with frozen-backbone transfer learning."""

from .autodiff import Parameter, Tensor
from .bvh import (BvhDocument, BvhError, BvhJoint, JointMapping, euler_to_matrix,
                  forward_kinematics, local_transform, parse_bvh, retarget, write_bvh)
from .experiments import (Metrics, SynthSpec, TrainConfig, evaluate, finetune,
                          pretrain, run_grid, synth_dataset)
from .model import (NetworkConfig, SpatialTransformerNet, build_adjacency,
                    freeze_and_reinit_fc, load_checkpoint, save_checkpoint)
from .preprocess import (AugmentSpec, augment, augment_dataset, resample,
                         split_dataset, view_normalize)
from .sequence import (LabeledDataset, SkeletonSequence, load_dataset, read_skseq,
                       save_dataset, write_skseq)

__version__ = "0.1.0"
