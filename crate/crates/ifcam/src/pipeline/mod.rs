//! Predict-then-focus eye-tracking pipeline: a synthetic frame stream, a
//! reference fixed-point network executor, an ROI controller with temporal
//! reuse, and exact per-frame MAC/FLOPs accounting.

mod controller;
mod exec;
mod synth;

pub use controller::{results_to_csv, run_stream, Controller, StepResult, ROI_DILATION_PX};
pub use exec::{execute_network, seeded_dense_weights, PreparedNetwork, QuantMode};
pub use synth::{generate_synthetic_stream, GAZE_DEG_PER_PX};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::CompressError;
use crate::lensless::SceneImage;
use crate::netspec::{macs_with_input_shape, NetworkSpec, SpecError, TensorShape};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Gaze direction in degrees: yaw about the vertical axis, pitch elevation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeVector {
    pub yaw: f64,
    pub pitch: f64,
}

/// Region-of-interest crop, always within frame bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoiBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// (height*width)/(frame_h*frame_w).
    pub area_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub pupil_row: f64,
    pub pupil_col: f64,
    pub gaze: GazeVector,
}

#[derive(Debug, Clone)]
pub struct FrameStream {
    pub frames: Vec<SceneImage>,
    pub fps_nominal: f64,
    pub ground_truth: Vec<GroundTruth>,
}

/// When the controller re-runs the ROI prediction network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Re-predict every `repredict_period` frames (frame 0 always predicts).
    Periodic { repredict_period: usize },
    /// Re-predict when the mean absolute frame difference inside the dilated
    /// prior ROI exceeds the threshold.
    Trigger { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelinePolicy {
    pub mode: PolicyMode,
    pub roi_target_fraction: f64,
}

impl Default for PipelinePolicy {
    fn default() -> Self {
        Self {
            mode: PolicyMode::Periodic {
                repredict_period: 20,
            },
            roi_target_fraction: 0.24,
        }
    }
}

/// ROI dimensions for a target area fraction: aspect-preserving square-root
/// scaling of the frame dimensions, rounded to whole pixels.
pub fn roi_dims(frame: TensorShape, fraction: f64) -> (usize, usize) {
    let s = fraction.sqrt();
    let h = ((frame.h as f64 * s).round() as usize).min(frame.h);
    let w = ((frame.w as f64 * s).round() as usize).min(frame.w);
    (h, w)
}

/// Angle in degrees between two gaze directions via the spherical map
/// dir = (cos(pitch)sin(yaw), sin(pitch), cos(pitch)cos(yaw)).
pub fn angular_error(a: &GazeVector, b: &GazeVector) -> f64 {
    let dir = |g: &GazeVector| {
        let yaw = g.yaw.to_radians();
        let pitch = g.pitch.to_radians();
        (
            pitch.cos() * yaw.sin(),
            pitch.sin(),
            pitch.cos() * yaw.cos(),
        )
    };
    let u = dir(a);
    let v = dir(b);
    let dot = (u.0 * v.0 + u.1 * v.1 + u.2 * v.2).clamp(-1.0, 1.0);
    dot.acos().to_degrees()
}

/// Exact MAC accounting of the predict-then-focus pipeline in periodic mode.
#[derive(Debug, Clone, Serialize)]
pub struct FlopsReport {
    pub n_frames: usize,
    pub predictions: usize,
    pub pred_macs_per_run: u64,
    pub gaze_macs_per_frame_roi: u64,
    pub gaze_macs_per_frame_full: u64,
    pub pipeline_total_macs: u64,
    pub baseline_total_macs: u64,
    pub avg_macs_per_frame: f64,
    pub avg_flops_per_frame: f64,
    pub baseline_flops_per_frame: f64,
    /// 1 - pipeline/baseline.
    pub reduction_fraction: f64,
}

/// Analytic FLOPs report: baseline runs the gaze network on the full frame
/// every frame; the pipeline runs the prediction network `predictions` times
/// plus the gaze network on the (constant-size) ROI crop every frame. ROI
/// MACs follow the cropped-input accounting of
/// [`macs_with_input_shape`].
pub fn pipeline_flops_report(
    pred_net: &NetworkSpec,
    gaze_net: &NetworkSpec,
    policy: &PipelinePolicy,
    frame_shape: TensorShape,
    n_frames: usize,
) -> Result<FlopsReport, PipelineError> {
    if n_frames == 0 {
        return Err(PipelineError::BadInput("n_frames must be >= 1".into()));
    }
    let predictions = match policy.mode {
        PolicyMode::Periodic { repredict_period } => {
            if repredict_period == 0 {
                return Err(PipelineError::BadInput("period must be >= 1".into()));
            }
            n_frames.div_ceil(repredict_period)
        }
        PolicyMode::Trigger { .. } => {
            return Err(PipelineError::BadInput(
                "analytic report requires periodic mode; trigger runs are accounted empirically"
                    .into(),
            ))
        }
    };
    report_with_predictions(pred_net, gaze_net, policy, frame_shape, n_frames, predictions)
}

/// The same accounting with an observed prediction count (trigger mode).
pub fn report_with_predictions(
    pred_net: &NetworkSpec,
    gaze_net: &NetworkSpec,
    policy: &PipelinePolicy,
    frame_shape: TensorShape,
    n_frames: usize,
    predictions: usize,
) -> Result<FlopsReport, PipelineError> {
    let (rh, rw) = roi_dims(frame_shape, policy.roi_target_fraction);
    let roi_shape = TensorShape::new(frame_shape.c, rh.max(1), rw.max(1))?;
    let pred_macs_per_run = pred_net.total_macs()?;
    let gaze_macs_per_frame_roi = macs_with_input_shape(gaze_net, roi_shape)?;
    let gaze_macs_per_frame_full = macs_with_input_shape(gaze_net, frame_shape)?;
    let pipeline_total_macs =
        predictions as u64 * pred_macs_per_run + n_frames as u64 * gaze_macs_per_frame_roi;
    let baseline_total_macs = n_frames as u64 * gaze_macs_per_frame_full;
    Ok(FlopsReport {
        n_frames,
        predictions,
        pred_macs_per_run,
        gaze_macs_per_frame_roi,
        gaze_macs_per_frame_full,
        pipeline_total_macs,
        baseline_total_macs,
        avg_macs_per_frame: pipeline_total_macs as f64 / n_frames as f64,
        avg_flops_per_frame: 2.0 * pipeline_total_macs as f64 / n_frames as f64,
        baseline_flops_per_frame: 2.0 * baseline_total_macs as f64 / n_frames as f64,
        reduction_fraction: 1.0 - pipeline_total_macs as f64 / baseline_total_macs as f64,
    })
}
