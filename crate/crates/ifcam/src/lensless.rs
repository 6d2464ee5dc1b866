//! Separable coded-mask imaging model and regularized reconstruction.
//!
//! A thin binary amplitude mask replaces the focusing lens; with a separable
//! mask the sensor reads Y = Phi_L * X * Phi_R' (plus noise). Reconstruction
//! minimizes ||Phi_L X Phi_R' - Y||_F^2 + lambda*||X||_F^2, solved in closed
//! form through the SVDs of the two small mask matrices.
//!
//! Physical masks are {0,1} transmission patterns; computation happens in the
//! {-1,+1} domain via the affine map b -> 2b-1 (background subtraction). The
//! mask pair records which domain its entries are in.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LensError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("lambda must be > 0 (got {0})")]
    BadLambda(f64),
    #[error("mask JSON: {0}")]
    Json(String),
}

/// Which alphabet the mask entries currently use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskDomain {
    /// Physical {0,1} transmission pattern.
    #[serde(rename = "01")]
    ZeroOne,
    /// Compute domain; entries are used as-is by the forward model.
    #[serde(rename = "pm1")]
    PlusMinusOne,
}

/// Left/right mask matrices of the separable forward model.
///
/// `phi_left` is (m_rows x n_rows), `phi_right` is (m_cols x n_cols): the
/// measurement is (m_rows x m_cols) and the scene is (n_rows x n_cols).
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableMaskPair {
    pub phi_left: Array2<f64>,
    pub phi_right: Array2<f64>,
    pub domain: MaskDomain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub pixels: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorMeasurement {
    pub samples: Array2<f64>,
    pub noise_sigma: f64,
}

impl SceneImage {
    pub fn new(pixels: Array2<f64>) -> Self {
        Self { pixels }
    }

    /// Display-mode view with pixel values clamped to [0,1].
    pub fn clamped_unit(&self) -> SceneImage {
        SceneImage::new(self.pixels.mapv(|v| v.clamp(0.0, 1.0)))
    }
}

/// Maximal-length LFSR bit sequences exist for lengths 2^k - 1. Taps are
/// Fibonacci-form primitive polynomials.
fn mseq_taps(order: u32) -> Option<&'static [u32]> {
    match order {
        2 => Some(&[2, 1]),
        3 => Some(&[3, 2]),
        4 => Some(&[4, 3]),
        5 => Some(&[5, 3]),
        6 => Some(&[6, 5]),
        7 => Some(&[7, 6]),
        8 => Some(&[8, 6, 5, 4]),
        9 => Some(&[9, 5]),
        10 => Some(&[10, 7]),
        11 => Some(&[11, 9]),
        12 => Some(&[12, 11, 10, 4]),
        13 => Some(&[13, 12, 11, 8]),
        14 => Some(&[14, 13, 12, 2]),
        15 => Some(&[15, 14]),
        16 => Some(&[16, 15, 13, 4]),
        _ => None,
    }
}

/// Length-(2^order - 1) maximal-length {0,1} sequence from a seeded nonzero
/// initial LFSR state.
fn msequence(order: u32, seed: u64) -> Vec<u8> {
    let taps = mseq_taps(order).expect("order in supported range");
    let period = (1u64 << order) - 1;
    let mut state: u64 = (seed % period) + 1; // nonzero
    let mut out = Vec::with_capacity(period as usize);
    for _ in 0..period {
        out.push((state & 1) as u8);
        let mut fb = 0u64;
        for &t in taps {
            fb ^= state >> (order - t);
        }
        state = (state >> 1) | ((fb & 1) << (order - 1));
    }
    out
}

fn mseq_order_for(len: usize) -> Option<u32> {
    (2..=16u32).find(|&k| (1usize << k) - 1 == len)
}

/// One mask matrix: columns are cyclic shifts of an m-sequence when the row
/// count is 2^k - 1, otherwise a seeded Bernoulli(0.5) pattern. {0,1} domain.
fn generate_mask(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    if let Some(order) = mseq_order_for(rows) {
        let seq = msequence(order, seed);
        Array2::from_shape_fn((rows, cols), |(i, j)| f64::from(seq[(i + j) % rows]))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| {
            if rng.random::<bool>() {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Generate a seeded separable mask pair in the {0,1} domain. Scene size is
/// (n_rows x n_cols), measurement size (m_rows x m_cols).
pub fn generate_mask_pair(
    n_rows: usize,
    n_cols: usize,
    m_rows: usize,
    m_cols: usize,
    seed: u64,
) -> SeparableMaskPair {
    let left = generate_mask(m_rows, n_rows, crate::seed::sub_seed(seed, "phi-left"));
    let right = generate_mask(m_cols, n_cols, crate::seed::sub_seed(seed, "phi-right"));
    SeparableMaskPair {
        phi_left: left,
        phi_right: right,
        domain: MaskDomain::ZeroOne,
    }
}

impl SeparableMaskPair {
    /// Square Sylvester-Hadamard mask pair of size n (a power of two), given
    /// in the {0,1} domain. After the b -> 2b-1 map these are orthogonal with
    /// all singular values sqrt(n): the best-conditioned binary masks.
    pub fn hadamard(n: usize) -> Result<Self, LensError> {
        if n == 0 || !n.is_power_of_two() {
            return Err(LensError::ShapeMismatch(format!(
                "Hadamard size must be a power of two, got {n}"
            )));
        }
        // H(i,j) = (-1)^{popcount(i & j)} mapped to {0,1}.
        let h = Array2::from_shape_fn((n, n), |(i, j)| {
            if (i & j).count_ones() % 2 == 0 {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self {
            phi_left: h.clone(),
            phi_right: h,
            domain: MaskDomain::ZeroOne,
        })
    }

    pub fn scene_shape(&self) -> (usize, usize) {
        (self.phi_left.ncols(), self.phi_right.ncols())
    }

    pub fn measurement_shape(&self) -> (usize, usize) {
        (self.phi_left.nrows(), self.phi_right.nrows())
    }

    /// Mask matrices in the compute domain ({0,1} entries mapped by b -> 2b-1;
    /// pm1-domain entries passed through).
    pub fn compute_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let map = |m: &Array2<f64>| -> DMatrix<f64> {
            DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| match self.domain {
                MaskDomain::ZeroOne => 2.0 * m[[i, j]] - 1.0,
                MaskDomain::PlusMinusOne => m[[i, j]],
            })
        };
        (map(&self.phi_left), map(&self.phi_right))
    }

    pub fn to_json_string(&self) -> String {
        let doc = MaskJson {
            domain: self.domain,
            phi_left: rows_of(&self.phi_left),
            phi_right: rows_of(&self.phi_right),
        };
        serde_json::to_string_pretty(&doc).expect("mask serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, LensError> {
        let doc: MaskJson = serde_json::from_str(s).map_err(|e| LensError::Json(e.to_string()))?;
        Ok(Self {
            phi_left: rows_to_matrix(&doc.phi_left)
                .map_err(|e| LensError::Json(format!("phi_left: {e}")))?,
            phi_right: rows_to_matrix(&doc.phi_right)
                .map_err(|e| LensError::Json(format!("phi_right: {e}")))?,
            domain: doc.domain,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskJson {
    domain: MaskDomain,
    phi_left: Vec<Vec<f64>>,
    phi_right: Vec<Vec<f64>>,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>, String> {
    if rows.is_empty() {
        return Err("empty matrix".into());
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err("ragged rows".into());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| e.to_string())
}

fn nd_to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn na_to_nd(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Capture a scene: Y = Phi_L * X * Phi_R' + N with N ~ iid Gaussian(0,
/// noise_sigma^2), deterministic per seed.
pub fn forward_capture(
    mask: &SeparableMaskPair,
    scene: &SceneImage,
    noise_sigma: f64,
    seed: u64,
) -> Result<SensorMeasurement, LensError> {
    let (sr, sc) = mask.scene_shape();
    if scene.pixels.dim() != (sr, sc) {
        return Err(LensError::ShapeMismatch(format!(
            "scene {:?} does not match mask scene side ({sr}, {sc})",
            scene.pixels.dim()
        )));
    }
    let (left, right) = mask.compute_matrices();
    let x = nd_to_na(&scene.pixels);
    let mut y = &left * x * right.transpose();
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).expect("sigma >= 0");
        for v in y.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(SensorMeasurement {
        samples: na_to_nd(&y),
        noise_sigma,
    })
}

/// Tikhonov-regularized reconstruction through the two mask SVDs.
///
/// With Phi_L = U_L S_L V_L', Phi_R = U_R S_R V_R' and Yt = U_L' Y U_R, the
/// minimizer of ||Phi_L X Phi_R' - Y||_F^2 + lambda*||X||_F^2 is
/// Xt_ij = s_Li * s_Rj * Yt_ij / (s_Li^2 * s_Rj^2 + lambda), X = V_L Xt V_R'.
/// The output is not clamped; use [`SceneImage::clamped_unit`] for display.
pub fn reconstruct_tikhonov(
    mask: &SeparableMaskPair,
    y: &SensorMeasurement,
    lambda: f64,
) -> Result<SceneImage, LensError> {
    if !(lambda > 0.0) {
        return Err(LensError::BadLambda(lambda));
    }
    let (mr, mc) = mask.measurement_shape();
    if y.samples.dim() != (mr, mc) {
        return Err(LensError::ShapeMismatch(format!(
            "measurement {:?} does not match mask measurement side ({mr}, {mc})",
            y.samples.dim()
        )));
    }
    let (left, right) = mask.compute_matrices();
    let svd_l = left.svd(true, true);
    let svd_r = right.svd(true, true);
    let u_l = svd_l.u.as_ref().expect("svd with u");
    let v_l = svd_l.v_t.as_ref().expect("svd with v").transpose();
    let u_r = svd_r.u.as_ref().expect("svd with u");
    let v_r = svd_r.v_t.as_ref().expect("svd with v").transpose();

    let yt = u_l.transpose() * nd_to_na(&y.samples) * u_r;
    let kl = svd_l.singular_values.len();
    let kr = svd_r.singular_values.len();
    let mut xt = DMatrix::<f64>::zeros(kl, kr);
    for i in 0..kl {
        for j in 0..kr {
            let si = svd_l.singular_values[i];
            let sj = svd_r.singular_values[j];
            xt[(i, j)] = si * sj * yt[(i, j)] / (si * si * sj * sj + lambda);
        }
    }
    let x = v_l * xt * v_r.transpose();
    Ok(SceneImage::new(na_to_nd(&x)))
}

/// Frobenius norm of the data residual Phi_L * X * Phi_R' - Y.
pub fn data_residual(
    mask: &SeparableMaskPair,
    x: &SceneImage,
    y: &SensorMeasurement,
) -> f64 {
    let (l, r) = mask.compute_matrices();
    (l * nd_to_na(&x.pixels) * r.transpose() - nd_to_na(&y.samples)).norm()
}

/// Peak signal-to-noise ratio in dB against peak 1.0; +infinity when the
/// images are identical.
pub fn psnr(reference: &SceneImage, candidate: &SceneImage) -> Result<f64, LensError> {
    if reference.pixels.dim() != candidate.pixels.dim() {
        return Err(LensError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            reference.pixels.dim(),
            candidate.pixels.dim()
        )));
    }
    let n = reference.pixels.len() as f64;
    let mse: f64 = reference
        .pixels
        .iter()
        .zip(candidate.pixels.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Seeded random scene with pixel values in [0,1].
pub fn random_scene(rows: usize, cols: usize, seed: u64) -> SceneImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SceneImage::new(Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>()))
}
