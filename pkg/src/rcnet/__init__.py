"""Repeated-composition ReLU networks built from explicit weights.

An RCNet is L2 o g^r o L1: two affine maps around r applications of one
shared block g. The package builds such nets for floor functions, bit
extraction, point fitting and approximation of continuous targets, checks
their errors, and trains weight-shared nets by gradient descent.
"""
from .errors import NumericError, ValidationError
from .netcore import (AffineMap, FeedForwardNet, RCNet, deserialize, eval_affine, eval_net,
                      eval_rcnet, load, save, serialize)
from .floor import FloorNetSpec, build_floor_rcnet
from .bits import PointFitSpec, build_point_fit_rcnet, extract_prefix_sum
from .merge import build_selector, merge_two_stages, merge_with_affines
from .targets import TargetFunction, parse_target
from .approximator import build_gap_rcnet, build_linf_rcnet, build_lp_rcnet, build_mid_net
from .verify import ErrorReport, measure_errors, sequential_pipeline_oracle, trifling_mask

__version__ = "0.1.0"
