"""splatedit: slider-controlled editing of Gaussian splat scenes.

A scene edit is optimized against multi-view targets, snapshotted along the
way, and distilled into a neural offset field conditioned on a [0, 1] control.
Serving composes per-region offsets and rasterizes in real time.
"""
from .core import (Camera, GaussianOffset, GaussianPrimitive, ImageBuffer,
                   RawParams, RegionMask, Scene, SceneError, apply_offsets,
                   decode_scene, decode_scene_binary, encode_scene,
                   encode_scene_binary, orbit_camera, orbit_rig)
from .edits import EditSpec, Mask2D, ViewSet, build_edit_target, build_view_set, ground_truth_masks
from .losses import EditLoss, edit_loss, edit_loss_grad, mean_ssim
from .offset_field import (OffsetField, OffsetFieldConfig, SnapshotBank,
                           compose_regions, control_to_bins, predict_scene,
                           train_offset_field, train_offset_field_online)
from .pipeline import SessionArtifacts, run_eval, run_pipeline
from .progressive import (ProgressiveConfig, Trajectory, progressive_weight,
                          run_progressive_edit)
from .region import (UnprojectionAccumulator, accumulate_mask_weights,
                     recover_region, threshold_region)
from .renderer import (RenderGradients, RenderOptions, Splat2D, image_to_png,
                     laplacian_response, png_to_image, project_gaussian,
                     render, render_backward)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
