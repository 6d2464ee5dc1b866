//! Synthetic near-eye frame generator: a dark pupil ellipse over a brighter
//! iris disk on a sclera background, with a seeded smooth random walk and
//! occasional saccades driving the pupil center.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{FrameStream, GazeVector, GroundTruth, PipelineError};
use crate::lensless::SceneImage;
use crate::netspec::TensorShape;

/// Fixed affine map from pupil offset (pixels from frame center) to gaze
/// degrees: yaw = k * col_offset, pitch = -k * row_offset.
pub const GAZE_DEG_PER_PX: f64 = 1.5;

const SCLERA: f64 = 0.85;
const IRIS: f64 = 0.45;
const PUPIL: f64 = 0.08;
const WALK_SIGMA: f64 = 0.7;
const WALK_MAX_STEP: f64 = 2.0;
const SACCADE_PROB: f64 = 0.03;
const SACCADE_MIN: f64 = 8.0;
const SACCADE_MAX: f64 = 14.0;
const FPS_NOMINAL: f64 = 240.0;

fn render_frame(h: usize, w: usize, row: f64, col: f64) -> SceneImage {
    let min_dim = h.min(w) as f64;
    let r_iris = 0.22 * min_dim;
    let pupil_a = 0.13 * min_dim; // vertical semi-axis
    let pupil_b = 0.10 * min_dim; // horizontal semi-axis
    let pixels = Array2::from_shape_fn((h, w), |(y, x)| {
        let dy = y as f64 - row;
        let dx = x as f64 - col;
        let e = (dy / pupil_a).powi(2) + (dx / pupil_b).powi(2);
        if e <= 1.0 {
            PUPIL
        } else if dy * dy + dx * dx <= r_iris * r_iris {
            IRIS
        } else {
            SCLERA
        }
    });
    SceneImage::new(pixels)
}

fn gaze_for(h: usize, w: usize, row: f64, col: f64) -> GazeVector {
    GazeVector {
        yaw: GAZE_DEG_PER_PX * (col - w as f64 / 2.0),
        pitch: -GAZE_DEG_PER_PX * (row - h as f64 / 2.0),
    }
}

/// Reflect into [lo, hi]; steps are small enough that one reflection
/// suffices, and a reflected point is never farther from the start than the
/// raw step.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let mut v = v;
    if v < lo {
        v = 2.0 * lo - v;
    }
    if v > hi {
        v = 2.0 * hi - v;
    }
    v.clamp(lo, hi)
}

/// Deterministic per seed. Pupil motion: per-frame Gaussian walk truncated to
/// a 2 px displacement, with probability-0.03 saccades jumping 8..14 px
/// (direction re-drawn until the target stays in bounds). Ground-truth gaze
/// follows the fixed affine map [`GAZE_DEG_PER_PX`].
pub fn generate_synthetic_stream(
    n_frames: usize,
    shape: TensorShape,
    motion_seed: u64,
) -> Result<FrameStream, PipelineError> {
    if n_frames == 0 {
        return Err(PipelineError::BadInput("n_frames must be >= 1".into()));
    }
    if shape.c != 1 {
        return Err(PipelineError::BadInput(format!(
            "frames are single-channel, got c = {}",
            shape.c
        )));
    }
    let (h, w) = (shape.h, shape.w);
    let min_dim = h.min(w) as f64;
    let margin = (0.25 * min_dim).max(2.0);
    let (lo_r, hi_r) = (margin, h as f64 - 1.0 - margin);
    let (lo_c, hi_c) = (margin, w as f64 - 1.0 - margin);
    if lo_r >= hi_r || lo_c >= hi_c {
        return Err(PipelineError::BadInput(format!(
            "frame {h}x{w} too small for the eye model"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(motion_seed);
    let step = Normal::new(0.0, WALK_SIGMA).expect("sigma > 0");
    let mut row = (lo_r + hi_r) / 2.0;
    let mut col = (lo_c + hi_c) / 2.0;
    let mut frames = Vec::with_capacity(n_frames);
    let mut ground_truth = Vec::with_capacity(n_frames);

    for i in 0..n_frames {
        if i > 0 {
            if rng.random::<f64>() < SACCADE_PROB {
                // Jump at least SACCADE_MIN px, staying inside the margins.
                let dist = SACCADE_MIN + (SACCADE_MAX - SACCADE_MIN) * rng.random::<f64>();
                let mut theta = rng.random::<f64>() * std::f64::consts::TAU;
                loop {
                    let nr = row + dist * theta.sin();
                    let nc = col + dist * theta.cos();
                    if nr >= lo_r && nr <= hi_r && nc >= lo_c && nc <= hi_c {
                        row = nr;
                        col = nc;
                        break;
                    }
                    theta += 0.61803398875 * std::f64::consts::TAU;
                }
            } else {
                let mut dr = step.sample(&mut rng);
                let mut dc = step.sample(&mut rng);
                let norm = (dr * dr + dc * dc).sqrt();
                if norm > WALK_MAX_STEP {
                    dr *= WALK_MAX_STEP / norm;
                    dc *= WALK_MAX_STEP / norm;
                }
                row = reflect(row + dr, lo_r, hi_r);
                col = reflect(col + dc, lo_c, hi_c);
            }
        }
        frames.push(render_frame(h, w, row, col));
        ground_truth.push(GroundTruth {
            pupil_row: row,
            pupil_col: col,
            gaze: gaze_for(h, w, row, col),
        });
    }
    Ok(FrameStream {
        frames,
        fps_nominal: FPS_NOMINAL,
        ground_truth,
    })
}
