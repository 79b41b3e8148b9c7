"""Cost-volume multi-object tracking on dense feature grids."""
from .association import Detection, Tracklet, TrackletStore, associate_frame
from .cva import (CostVolume, OffsetField, SupervisionMask, build_cost_volume,
                  build_supervision, cva_loss, cva_loss_grad, match_gate, offset_field,
                  upsample_offsets)
from .embedding import EmbeddingNet, OptimizerState, downsample_embedding, embed_forward
from .gridmath import FeatureGrid
from .metrics import EvalReport, evaluate
from .mfw import AggregationConfig, WarpKernel, aggregate, detect_peaks, spread_offsets, warp
from .pipeline import Tracker, TrackerConfig, track_sequence, train_embedding
from .synth import SceneConfig, generate_scene, render_frame

__version__ = "0.1.0"
