//! Predict-then-focus controller: an occasional ROI prediction over the
//! downsampled full frame, a gaze inference on the ROI crop every frame, and
//! an exact per-frame MAC ledger.

use ndarray::Array2;

use super::exec::{PreparedNetwork, QuantMode};
use super::{
    roi_dims, FrameStream, GazeVector, PipelineError, PipelinePolicy, PolicyMode, RoiBox,
};
use crate::compress::LayerWeights;
use crate::lensless::SceneImage;
use crate::netspec::{macs_with_input_shape, NetworkSpec, TensorShape};

/// Pixels added on every side of the prior ROI when measuring motion energy
/// in trigger mode.
pub const ROI_DILATION_PX: usize = 4;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepResult {
    pub frame: usize,
    pub roi: RoiBox,
    pub gaze: GazeVector,
    pub macs_this_frame: u64,
    pub repredicted: bool,
    /// Set when the ROI degenerated after clamping and the controller fell
    /// back to the full frame.
    pub roi_fallback: bool,
}

use serde::Serialize;

pub struct Controller<'a> {
    pred_net: &'a NetworkSpec,
    pred_prepared: PreparedNetwork,
    gaze_net: &'a NetworkSpec,
    gaze_prepared: PreparedNetwork,
    policy: PipelinePolicy,
    frame_shape: TensorShape,
    quant: QuantMode,
    // Cached analytic per-run costs; the ROI is constant-size so the gaze
    // cost per frame is one number.
    pred_macs: u64,
    gaze_macs_roi: u64,
    // State.
    frame_index: usize,
    prev_frame: Option<Array2<f64>>,
    roi: Option<RoiBox>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> Controller<'a> {
    pub fn new(
        pred_net: &'a NetworkSpec,
        pred_weights: &'a [LayerWeights],
        gaze_net: &'a NetworkSpec,
        gaze_weights: &'a [LayerWeights],
        policy: PipelinePolicy,
        frame_shape: TensorShape,
        quant: QuantMode,
    ) -> Result<Self, PipelineError> {
        if !(0.0 < policy.roi_target_fraction && policy.roi_target_fraction <= 1.0) {
            return Err(PipelineError::BadInput(format!(
                "roi_target_fraction must be in (0,1], got {}",
                policy.roi_target_fraction
            )));
        }
        if let PolicyMode::Periodic { repredict_period } = policy.mode {
            if repredict_period == 0 {
                return Err(PipelineError::BadInput("period must be >= 1".into()));
            }
        }
        let (rh, rw) = roi_dims(frame_shape, policy.roi_target_fraction);
        let roi_shape = TensorShape::new(frame_shape.c, rh.max(1), rw.max(1))?;
        Ok(Self {
            pred_net,
            pred_prepared: PreparedNetwork::new(pred_net, pred_weights)?,
            gaze_net,
            gaze_prepared: PreparedNetwork::new(gaze_net, gaze_weights)?,
            policy,
            frame_shape,
            quant,
            pred_macs: pred_net.total_macs()?,
            gaze_macs_roi: macs_with_input_shape(gaze_net, roi_shape)?,
            frame_index: 0,
            prev_frame: None,
            roi: None,
        })
    }

    /// Centered ROI at the target fraction, shifted (not shrunk) to stay in
    /// bounds. Falls back to the full frame if the target rounds away.
    fn make_roi(&self, center_row: f64, center_col: f64) -> (RoiBox, bool) {
        let (fh, fw) = (self.frame_shape.h, self.frame_shape.w);
        let (h, w) = roi_dims(self.frame_shape, self.policy.roi_target_fraction);
        if h == 0 || w == 0 {
            return (
                RoiBox {
                    top: 0,
                    left: 0,
                    height: fh,
                    width: fw,
                    area_fraction: 1.0,
                },
                true,
            );
        }
        let top = (center_row - h as f64 / 2.0).round().max(0.0) as usize;
        let left = (center_col - w as f64 / 2.0).round().max(0.0) as usize;
        let top = top.min(fh - h);
        let left = left.min(fw - w);
        (
            RoiBox {
                top,
                left,
                height: h,
                width: w,
                area_fraction: (h * w) as f64 / (fh * fw) as f64,
            },
            false,
        )
    }

    /// Mean absolute difference between frames inside the dilated prior ROI.
    fn motion_energy(&self, cur: &Array2<f64>, prev: &Array2<f64>, roi: &RoiBox) -> f64 {
        let top = roi.top.saturating_sub(ROI_DILATION_PX);
        let left = roi.left.saturating_sub(ROI_DILATION_PX);
        let bottom = (roi.top + roi.height + ROI_DILATION_PX).min(self.frame_shape.h);
        let right = (roi.left + roi.width + ROI_DILATION_PX).min(self.frame_shape.w);
        let mut acc = 0.0;
        let mut count = 0usize;
        for y in top..bottom {
            for x in left..right {
                acc += (cur[[y, x]] - prev[[y, x]]).abs();
                count += 1;
            }
        }
        acc / count as f64
    }

    fn should_predict(&self, frame: &SceneImage) -> bool {
        if self.frame_index == 0 {
            return true; // mandatory frame-0 prediction
        }
        match self.policy.mode {
            PolicyMode::Periodic { repredict_period } => {
                self.frame_index % repredict_period == 0
            }
            PolicyMode::Trigger { threshold } => {
                let (Some(prev), Some(roi)) = (&self.prev_frame, &self.roi) else {
                    return true;
                };
                self.motion_energy(&frame.pixels, prev, roi) > threshold
            }
        }
    }

    pub fn step(&mut self, frame: &SceneImage) -> Result<StepResult, PipelineError> {
        if frame.pixels.dim() != (self.frame_shape.h, self.frame_shape.w) {
            return Err(PipelineError::BadInput(format!(
                "frame {:?} does not match stream shape {}x{}",
                frame.pixels.dim(),
                self.frame_shape.h,
                self.frame_shape.w
            )));
        }
        let mut macs = 0u64;
        let repredicted = self.should_predict(frame);
        let mut roi_fallback = false;
        if repredicted {
            // The prediction network consumes the full frame at its own
            // (downsampled) input resolution.
            let out = self.pred_prepared.execute(self.pred_net, frame, self.quant)?;
            macs += self.pred_macs;
            let center_row = sigmoid(out[0]) * (self.frame_shape.h - 1) as f64;
            let center_col = sigmoid(out[1]) * (self.frame_shape.w - 1) as f64;
            let (roi, fallback) = self.make_roi(center_row, center_col);
            self.roi = Some(roi);
            roi_fallback = fallback;
        }
        let roi = self.roi.expect("frame-0 prediction initializes the ROI");

        let crop = frame
            .pixels
            .slice(ndarray::s![
                roi.top..roi.top + roi.height,
                roi.left..roi.left + roi.width
            ])
            .to_owned();
        let out = self
            .gaze_prepared
            .execute(self.gaze_net, &SceneImage::new(crop), self.quant)?;
        macs += self.gaze_macs_roi;
        let gaze = GazeVector {
            yaw: out[0],
            pitch: out[1],
        };

        let result = StepResult {
            frame: self.frame_index,
            roi,
            gaze,
            macs_this_frame: macs,
            repredicted,
            roi_fallback,
        };
        self.prev_frame = Some(frame.pixels.clone());
        self.frame_index += 1;
        Ok(result)
    }
}

/// Drive a controller over a whole stream.
pub fn run_stream(
    controller: &mut Controller,
    stream: &FrameStream,
) -> Result<Vec<StepResult>, PipelineError> {
    stream.frames.iter().map(|f| controller.step(f)).collect()
}

/// Per-frame results CSV. `flops` is 2 x MACs.
pub fn results_to_csv(results: &[StepResult], stream: &FrameStream) -> String {
    let mut out = String::from(
        "frame,predicted_yaw,predicted_pitch,truth_yaw,truth_pitch,roi_top,roi_left,roi_h,roi_w,flops,repredicted_flag\n",
    );
    for r in results {
        let truth = &stream.ground_truth[r.frame].gaze;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.frame,
            r.gaze.yaw,
            r.gaze.pitch,
            truth.yaw,
            truth.pitch,
            r.roi.top,
            r.roi.left,
            r.roi.height,
            r.roi.width,
            2 * r.macs_this_frame,
            u8::from(r.repredicted)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{
        generate_synthetic_stream, pipeline_flops_report, seeded_dense_weights,
    };
    use crate::presets;

    struct Fixture {
        pred_net: NetworkSpec,
        gaze_net: NetworkSpec,
        pred_weights: Vec<LayerWeights>,
        gaze_weights: Vec<LayerWeights>,
    }

    fn fixture() -> Fixture {
        let pred_net = presets::prediction_net();
        let gaze_net = presets::gaze_net();
        let pred_weights: Vec<LayerWeights> = seeded_dense_weights(&pred_net, 1)
            .into_iter()
            .map(LayerWeights::Dense)
            .collect();
        let gaze_weights: Vec<LayerWeights> = seeded_dense_weights(&gaze_net, 2)
            .into_iter()
            .map(LayerWeights::Dense)
            .collect();
        Fixture {
            pred_net,
            gaze_net,
            pred_weights,
            gaze_weights,
        }
    }

    fn frame_shape() -> TensorShape {
        TensorShape::new(1, 64, 64).unwrap()
    }

    #[test]
    fn periodic_mode_prediction_count_and_ledger() {
        let fx = fixture();
        let stream = generate_synthetic_stream(100, frame_shape(), 5).unwrap();
        let policy = PipelinePolicy::default(); // period 20, fraction 0.24
        let mut ctrl = Controller::new(
            &fx.pred_net,
            &fx.pred_weights,
            &fx.gaze_net,
            &fx.gaze_weights,
            policy,
            frame_shape(),
            QuantMode::Int8,
        )
        .unwrap();
        let results = run_stream(&mut ctrl, &stream).unwrap();
        let predictions = results.iter().filter(|r| r.repredicted).count();
        assert_eq!(predictions, 5);

        // The empirical ledger equals the analytic report to the MAC.
        let report =
            pipeline_flops_report(&fx.pred_net, &fx.gaze_net, &policy, frame_shape(), 100)
                .unwrap();
        let empirical: u64 = results.iter().map(|r| r.macs_this_frame).sum();
        assert_eq!(empirical, report.pipeline_total_macs);

        // ROI containment and constant size.
        for r in &results {
            assert!(r.roi.top + r.roi.height <= 64);
            assert!(r.roi.left + r.roi.width <= 64);
            assert_eq!((r.roi.height, r.roi.width), (31, 31));
            assert!(!r.roi_fallback);
        }
    }

    #[test]
    fn period_of_one_predicts_every_frame() {
        let fx = fixture();
        let stream = generate_synthetic_stream(10, frame_shape(), 6).unwrap();
        let policy = PipelinePolicy {
            mode: PolicyMode::Periodic {
                repredict_period: 1,
            },
            roi_target_fraction: 0.24,
        };
        let mut ctrl = Controller::new(
            &fx.pred_net,
            &fx.pred_weights,
            &fx.gaze_net,
            &fx.gaze_weights,
            policy,
            frame_shape(),
            QuantMode::Int8,
        )
        .unwrap();
        let results = run_stream(&mut ctrl, &stream).unwrap();
        assert!(results.iter().all(|r| r.repredicted));
        let per_frame = results[0].macs_this_frame;
        assert!(results.iter().all(|r| r.macs_this_frame == per_frame));
    }

    #[test]
    fn static_scene_in_trigger_mode_predicts_once() {
        let fx = fixture();
        let one = generate_synthetic_stream(1, frame_shape(), 9).unwrap();
        let static_stream = FrameStream {
            frames: vec![one.frames[0].clone(); 50],
            fps_nominal: one.fps_nominal,
            ground_truth: vec![one.ground_truth[0]; 50],
        };
        let policy = PipelinePolicy {
            mode: PolicyMode::Trigger { threshold: 1e-6 },
            roi_target_fraction: 0.24,
        };
        let mut ctrl = Controller::new(
            &fx.pred_net,
            &fx.pred_weights,
            &fx.gaze_net,
            &fx.gaze_weights,
            policy,
            frame_shape(),
            QuantMode::Int8,
        )
        .unwrap();
        let results = run_stream(&mut ctrl, &static_stream).unwrap();
        let predictions = results.iter().filter(|r| r.repredicted).count();
        assert_eq!(predictions, 1);
    }

    #[test]
    fn moving_scene_in_trigger_mode_repredicts() {
        let fx = fixture();
        let stream = generate_synthetic_stream(60, frame_shape(), 12).unwrap();
        let policy = PipelinePolicy {
            mode: PolicyMode::Trigger { threshold: 0.01 },
            roi_target_fraction: 0.24,
        };
        let mut ctrl = Controller::new(
            &fx.pred_net,
            &fx.pred_weights,
            &fx.gaze_net,
            &fx.gaze_weights,
            policy,
            frame_shape(),
            QuantMode::Int8,
        )
        .unwrap();
        let results = run_stream(&mut ctrl, &stream).unwrap();
        let predictions = results.iter().filter(|r| r.repredicted).count();
        assert!(predictions > 1, "motion never crossed the threshold");
    }

    #[test]
    fn tiny_fraction_falls_back_to_full_frame() {
        let fx = fixture();
        let small = TensorShape::new(1, 64, 64).unwrap();
        let policy = PipelinePolicy {
            mode: PolicyMode::Periodic {
                repredict_period: 1,
            },
            roi_target_fraction: 1e-6,
        };
        let mut ctrl = Controller::new(
            &fx.pred_net,
            &fx.pred_weights,
            &fx.gaze_net,
            &fx.gaze_weights,
            policy,
            small,
            QuantMode::Int8,
        )
        .unwrap();
        let stream = generate_synthetic_stream(1, small, 3).unwrap();
        let r = ctrl.step(&stream.frames[0]).unwrap();
        assert!(r.roi_fallback);
        assert_eq!((r.roi.height, r.roi.width), (64, 64));
    }

    #[test]
    fn csv_has_the_documented_columns() {
        let fx = fixture();
        let stream = generate_synthetic_stream(3, frame_shape(), 8).unwrap();
        let mut ctrl = Controller::new(
            &fx.pred_net,
            &fx.pred_weights,
            &fx.gaze_net,
            &fx.gaze_weights,
            PipelinePolicy::default(),
            frame_shape(),
            QuantMode::Int8,
        )
        .unwrap();
        let results = run_stream(&mut ctrl, &stream).unwrap();
        let csv = results_to_csv(&results, &stream);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "frame,predicted_yaw,predicted_pitch,truth_yaw,truth_pitch,roi_top,roi_left,roi_h,roi_w,flops,repredicted_flag"
        );
        assert_eq!(lines.count(), 3);
    }
}
