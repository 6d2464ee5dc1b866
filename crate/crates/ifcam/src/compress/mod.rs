//! Unified weight compression: layer weights are stacked as a tall-thin
//! matrix, decomposed into a small fixed-point basis matrix (BM) and a large
//! coefficient matrix (CM) whose entries are signed powers of two, with whole
//! CM rows pruned to a structured-sparsity target. Only the BM and the
//! nonzero CM rows are stored, plus a run-length index of the zero-row gaps;
//! dense weights are restored bit-exactly with shifts and adds.

mod bits;
mod codec;
mod decompose;
mod quant;
mod restore;

pub use codec::{measure_sections, rle_decode, rle_encode};
pub use decompose::{
    decompose, decompose_from_factors, Decomposition, DecomposeOptions, IterationErrors,
};
pub use quant::{quantize_pow2, QCoeff};
pub use restore::RestoredRows;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netspec::{weight_tensor_shape, LayerKind, LayerSpec, NetworkSpec};

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rank {rank} exceeds stack width {d}")]
    RankTooLarge { rank: usize, d: usize },
    #[error("bad options: {0}")]
    BadOptions(String),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("exponent {exponent} outside declared range [{e_min}, {e_max}]")]
    ExponentRange {
        exponent: i32,
        e_min: i32,
        e_max: i32,
    },
    #[error("row range {0}..{1} outside 0..{2}")]
    RowRange(usize, usize, usize),
}

/// Per-row provenance of a weight stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowMeta {
    pub layer_id: usize,
    pub out_channel: usize,
    pub in_channel: usize,
}

/// Layer weights stacked into an (n x d) matrix, one compressible row per
/// structural unit: (out,in) kernel slice for CONV/DW-CONV, output channel
/// vector for PW-CONV, output neuron for FC.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStack {
    pub matrix: Array2<f64>,
    pub row_meta: Vec<RowMeta>,
    pub source_kind: LayerKind,
}

impl WeightStack {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn d(&self) -> usize {
        self.matrix.ncols()
    }

    /// Whether the stack is tall-thin (d <= n). First layers of small nets
    /// can legitimately be wide; the decomposition still applies.
    pub fn is_tall_thin(&self) -> bool {
        self.d() <= self.n()
    }
}

/// Stack a dense weight tensor by the per-kind stacking rule. Row order is
/// out-channel-major, in-channel-minor.
pub fn stack_weights(
    layer: &LayerSpec,
    weights: &ArrayD<f64>,
    layer_id: usize,
) -> Result<WeightStack, CompressError> {
    let expected = weight_tensor_shape(layer);
    if weights.shape() != expected.as_slice() {
        return Err(CompressError::ShapeMismatch(format!(
            "layer {layer_id}: weight tensor {:?}, expected {:?}",
            weights.shape(),
            expected
        )));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut meta = Vec::new();
    let d;
    match layer.kind {
        LayerKind::Conv | LayerKind::DwConv => {
            let cin_per = if layer.kind == LayerKind::Conv {
                layer.cin
            } else {
                1
            };
            d = layer.k * layer.k;
            for co in 0..layer.cout {
                for ci in 0..cin_per {
                    for ky in 0..layer.k {
                        for kx in 0..layer.k {
                            rows.push(weights[[co, ci, ky, kx]]);
                        }
                    }
                    meta.push(RowMeta {
                        layer_id,
                        out_channel: co,
                        in_channel: ci,
                    });
                }
            }
        }
        LayerKind::PwConv => {
            d = layer.cin;
            for co in 0..layer.cout {
                for ci in 0..layer.cin {
                    rows.push(weights[[co, ci, 0, 0]]);
                }
                meta.push(RowMeta {
                    layer_id,
                    out_channel: co,
                    in_channel: 0,
                });
            }
        }
        LayerKind::Fc => {
            d = layer.cin;
            for co in 0..layer.cout {
                for ci in 0..layer.cin {
                    rows.push(weights[[co, ci]]);
                }
                meta.push(RowMeta {
                    layer_id,
                    out_channel: co,
                    in_channel: 0,
                });
            }
        }
    }
    let n = meta.len();
    Ok(WeightStack {
        matrix: Array2::from_shape_vec((n, d), rows).expect("consistent stacking"),
        row_meta: meta,
        source_kind: layer.kind,
    })
}

/// Inverse of [`stack_weights`]: rebuild the dense weight tensor from stacked
/// rows.
pub fn unstack_weights(
    layer: &LayerSpec,
    rows: &Array2<f64>,
) -> Result<ArrayD<f64>, CompressError> {
    let shape = weight_tensor_shape(layer);
    let expected_rows = match layer.kind {
        LayerKind::Conv => layer.cout * layer.cin,
        LayerKind::DwConv => layer.cout,
        LayerKind::PwConv | LayerKind::Fc => layer.cout,
    };
    let expected_d = match layer.kind {
        LayerKind::Conv | LayerKind::DwConv => layer.k * layer.k,
        LayerKind::PwConv | LayerKind::Fc => layer.cin,
    };
    if rows.dim() != (expected_rows, expected_d) {
        return Err(CompressError::ShapeMismatch(format!(
            "rows {:?}, expected ({expected_rows}, {expected_d})",
            rows.dim()
        )));
    }
    let flat: Vec<f64> = rows.iter().copied().collect();
    ArrayD::from_shape_vec(shape, flat)
        .map_err(|e| CompressError::ShapeMismatch(e.to_string()))
}

/// Small basis matrix with exactly-representable fixed-point entries.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    raw: Array2<i64>,
    pub fraction_bits: u8,
    pub word_bits: u8,
}

impl BasisMatrix {
    /// Round a real matrix onto the fixed-point grid (round half away from
    /// zero, clamped to the word range).
    pub fn from_real(m: &Array2<f64>, fraction_bits: u8, word_bits: u8) -> Self {
        assert!(word_bits >= 2 && word_bits <= 32);
        assert!(fraction_bits < word_bits);
        let scale = 2f64.powi(i32::from(fraction_bits));
        let max = (1i64 << (word_bits - 1)) - 1;
        let min = -(1i64 << (word_bits - 1));
        let raw = m.mapv(|v| ((v * scale).round() as i64).clamp(min, max));
        Self {
            raw,
            fraction_bits,
            word_bits,
        }
    }

    pub fn from_raw(raw: Array2<i64>, fraction_bits: u8, word_bits: u8) -> Self {
        Self {
            raw,
            fraction_bits,
            word_bits,
        }
    }

    pub fn rank(&self) -> usize {
        self.raw.nrows()
    }

    pub fn dim(&self) -> usize {
        self.raw.ncols()
    }

    pub fn raw(&self) -> &Array2<i64> {
        &self.raw
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.raw[[i, j]] as f64 / 2f64.powi(i32::from(self.fraction_bits))
    }

    pub fn to_real(&self) -> Array2<f64> {
        let scale = 2f64.powi(i32::from(self.fraction_bits));
        self.raw.mapv(|v| v as f64 / scale)
    }
}

/// Row of the coefficient matrix: structurally pruned or a dense vector of
/// rank power-of-two coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum CmRow {
    Zero,
    Dense(Vec<QCoeff>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub rows: Vec<CmRow>,
    pub rank: usize,
    pub exponent_bits: u8,
    pub e_min: i32,
    pub e_max: i32,
}

impl CoefficientMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz_rows(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(r, CmRow::Dense(_)))
            .count()
    }

    pub fn zero_rows(&self) -> usize {
        self.n() - self.nnz_rows()
    }

    /// Real-valued view (pruned rows are zero vectors).
    pub fn to_real(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n(), self.rank));
        for (i, row) in self.rows.iter().enumerate() {
            if let CmRow::Dense(coeffs) = row {
                for (j, c) in coeffs.iter().enumerate() {
                    m[[i, j]] = c.value();
                }
            }
        }
        m
    }
}

/// Exact bit sizes of the three stored sections. `cm_bits` and `bm_bits` are
/// payload bits before the byte-boundary padding of the serialized sections;
/// `index_bits` is a whole number of bytes by construction (ULEB128).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitBudget {
    pub bm_bits: u64,
    pub cm_bits: u64,
    pub index_bits: u64,
}

impl BitBudget {
    pub fn total(&self) -> u64 {
        self.bm_bits + self.cm_bits + self.index_bits
    }
}

/// On-"chip" representation of one compressed layer: basis matrix, packed
/// nonzero CM rows, and the run-length index of the zero-row gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub bm: BasisMatrix,
    pub nonzero_rows: Vec<Vec<QCoeff>>,
    /// Zero-row run before each stored row, plus a terminal run.
    pub rle_index: Vec<u64>,
    pub num_rows: usize,
    pub exponent_bits: u8,
    pub e_min: i32,
    pub e_max: i32,
    pub bit_budget: BitBudget,
}

impl CompressedLayer {
    pub fn rank(&self) -> usize {
        self.bm.rank()
    }

    pub fn dim(&self) -> usize {
        self.bm.dim()
    }

    pub fn nnz_rows(&self) -> usize {
        self.nonzero_rows.len()
    }

    /// Per-row mask; `Some(k)` maps a stack row to its stored-row slot.
    pub fn row_map(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.num_rows];
        let mut row = 0usize;
        for (k, run) in self.rle_index.iter().enumerate() {
            row += *run as usize;
            if k < self.nonzero_rows.len() {
                map[row] = Some(k);
                row += 1;
            }
        }
        map
    }
}

/// How the per-layer decomposition rank is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// ceil(d/2) — the library default.
    HalfD,
    /// ceil(d/2), capped by the row count (wide stacks get rank <= n).
    HalfDCapRows,
    /// Full rank r = d (compression comes from quantization and sparsity).
    Full,
    /// One fixed rank for every layer.
    Fixed(usize),
}

impl RankPolicy {
    pub fn rank_for(&self, n: usize, d: usize) -> usize {
        match self {
            RankPolicy::HalfD => d.div_ceil(2),
            RankPolicy::HalfDCapRows => d.div_ceil(2).min(n).max(1),
            RankPolicy::Full => d,
            RankPolicy::Fixed(r) => *r,
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_rank_policy() -> RankPolicy {
    RankPolicy::HalfD
}
fn default_sparsity() -> f64 {
    0.5
}
fn default_exponent_bits() -> u8 {
    4
}
fn default_bm_fraction_bits() -> u8 {
    8
}
fn default_bm_word_bits() -> u8 {
    16
}
fn default_iters() -> usize {
    10
}

/// Compression knobs, loadable from the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_rank_policy")]
    pub rank_policy: RankPolicy,
    /// Per-layer rank overrides, keyed by layer index.
    #[serde(default)]
    pub rank_overrides: BTreeMap<usize, usize>,
    #[serde(default = "default_sparsity")]
    pub sparsity_target: f64,
    /// Exponent field width; the representable range is
    /// [-2^(b-1), 2^(b-1) - 1].
    #[serde(default = "default_exponent_bits")]
    pub exponent_bits: u8,
    #[serde(default = "default_bm_fraction_bits")]
    pub bm_fraction_bits: u8,
    #[serde(default = "default_bm_word_bits")]
    pub bm_word_bits: u8,
    /// DW-CONV layers are stored dense unless enabled here.
    #[serde(default)]
    pub include_dw: bool,
    #[serde(default = "default_true")]
    pub include_fc: bool,
    #[serde(default = "default_iters")]
    pub iters: usize,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl CompressionConfig {
    pub fn exponent_range(&self) -> (i32, i32) {
        let half = 1i32 << (self.exponent_bits - 1);
        (-half, half - 1)
    }

    pub fn compresses(&self, kind: LayerKind) -> bool {
        self.enabled
            && match kind {
                LayerKind::Conv | LayerKind::PwConv => true,
                LayerKind::DwConv => self.include_dw,
                LayerKind::Fc => self.include_fc,
            }
    }
}

/// Per-layer weight storage: kept dense or compressed.
#[derive(Debug, Clone)]
pub enum LayerWeights {
    Dense(ArrayD<f64>),
    Compressed(CompressedLayer),
}

impl LayerWeights {
    pub fn as_compressed(&self) -> Option<&CompressedLayer> {
        match self {
            LayerWeights::Compressed(c) => Some(c),
            LayerWeights::Dense(_) => None,
        }
    }
}

/// Compress every eligible layer of a network.
pub fn compress_network(
    net: &NetworkSpec,
    dense_weights: &[ArrayD<f64>],
    cfg: &CompressionConfig,
) -> Result<Vec<LayerWeights>, CompressError> {
    if dense_weights.len() != net.layers.len() {
        return Err(CompressError::ShapeMismatch(format!(
            "{} weight tensors for {} layers",
            dense_weights.len(),
            net.layers.len()
        )));
    }
    let (e_min, e_max) = cfg.exponent_range();
    let mut out = Vec::with_capacity(net.layers.len());
    for (i, (layer, w)) in net.layers.iter().zip(dense_weights).enumerate() {
        if !cfg.compresses(layer.kind) {
            out.push(LayerWeights::Dense(w.clone()));
            continue;
        }
        let stack = stack_weights(layer, w, i)?;
        let rank = cfg
            .rank_overrides
            .get(&i)
            .copied()
            .unwrap_or_else(|| cfg.rank_policy.rank_for(stack.n(), stack.d()));
        let opts = DecomposeOptions {
            rank,
            sparsity_target: cfg.sparsity_target,
            e_min,
            e_max,
            iters: cfg.iters,
            bm_fraction_bits: cfg.bm_fraction_bits,
            bm_word_bits: cfg.bm_word_bits,
        };
        let dec = decompose(&stack, &opts)?;
        out.push(LayerWeights::Compressed(rle_encode(dec.bm, &dec.cm)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: String,
    pub compressed: bool,
    pub bm_bits: u64,
    pub cm_bits: u64,
    pub index_bits: u64,
    pub total_bits: u64,
    pub baseline_bits: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressionReport {
    pub total_bits: u64,
    pub baseline_bits: u64,
    pub ratio: f64,
    pub per_layer: Vec<LayerReport>,
}

/// Storage accounting: exact serialized section sizes per layer against a
/// dense baseline at `weight_bits_baseline` bits per weight. Uncompressed
/// layers contribute their dense size to both sides.
pub fn compression_report(
    net: &NetworkSpec,
    weights: &[LayerWeights],
    weight_bits_baseline: u32,
) -> Result<CompressionReport, CompressError> {
    if weights.len() != net.layers.len() {
        return Err(CompressError::ShapeMismatch(format!(
            "{} storages for {} layers",
            weights.len(),
            net.layers.len()
        )));
    }
    let mut per_layer = Vec::new();
    let mut total = 0u64;
    let mut baseline = 0u64;
    for (i, (layer, storage)) in net.layers.iter().zip(weights).enumerate() {
        let layer_baseline = layer.params() * u64::from(weight_bits_baseline);
        let (bm_bits, cm_bits, index_bits, compressed) = match storage {
            LayerWeights::Dense(_) => (0, 0, 0, false),
            LayerWeights::Compressed(c) => (
                c.bit_budget.bm_bits,
                c.bit_budget.cm_bits,
                c.bit_budget.index_bits,
                true,
            ),
        };
        let layer_total = if compressed {
            bm_bits + cm_bits + index_bits
        } else {
            layer_baseline
        };
        per_layer.push(LayerReport {
            index: i,
            kind: layer.kind.as_str().to_string(),
            compressed,
            bm_bits,
            cm_bits,
            index_bits,
            total_bits: layer_total,
            baseline_bits: layer_baseline,
            ratio: layer_baseline as f64 / layer_total as f64,
        });
        total += layer_total;
        baseline += layer_baseline;
    }
    Ok(CompressionReport {
        total_bits: total,
        baseline_bits: baseline,
        ratio: baseline as f64 / total as f64,
        per_layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::Activation;
    use ndarray::ArrayD;

    fn layer(kind: LayerKind, k: usize, cin: usize, cout: usize) -> LayerSpec {
        LayerSpec {
            kind,
            k,
            stride: 1,
            pad: 0,
            cin,
            cout,
            act: Activation::Relu,
        }
    }

    fn counted_tensor(shape: &[usize]) -> ArrayD<f64> {
        let total: usize = shape.iter().product();
        ArrayD::from_shape_vec(shape.to_vec(), (0..total).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn conv_stack_enumerates_out_in_slices() {
        let l = layer(LayerKind::Conv, 3, 2, 4);
        let w = counted_tensor(&[4, 2, 3, 3]);
        let stack = stack_weights(&l, &w, 0).unwrap();
        assert_eq!(stack.matrix.dim(), (8, 9));
        // Row (co, ci) holds the flattened k x k slice.
        for co in 0..4 {
            for ci in 0..2 {
                let row = stack.matrix.row(co * 2 + ci);
                for ky in 0..3 {
                    for kx in 0..3 {
                        assert_eq!(row[ky * 3 + kx], w[[co, ci, ky, kx]]);
                    }
                }
                assert_eq!(
                    stack.row_meta[co * 2 + ci],
                    RowMeta {
                        layer_id: 0,
                        out_channel: co,
                        in_channel: ci
                    }
                );
            }
        }
        // d > n here: the stack is legitimately wide for small layers.
        assert!(!stack.is_tall_thin());
    }

    #[test]
    fn pw_and_dw_stack_shapes() {
        let pw = layer(LayerKind::PwConv, 1, 16, 32);
        let w = counted_tensor(&[32, 16, 1, 1]);
        let stack = stack_weights(&pw, &w, 3).unwrap();
        assert_eq!(stack.matrix.dim(), (32, 16));
        assert!(stack.is_tall_thin());

        let dw = layer(LayerKind::DwConv, 3, 8, 8);
        let w = counted_tensor(&[8, 1, 3, 3]);
        let stack = stack_weights(&dw, &w, 1).unwrap();
        assert_eq!(stack.matrix.dim(), (8, 9));
    }

    #[test]
    fn stack_unstack_round_trip() {
        for (l, shape) in [
            (layer(LayerKind::Conv, 3, 2, 4), vec![4usize, 2, 3, 3]),
            (layer(LayerKind::DwConv, 3, 5, 5), vec![5, 1, 3, 3]),
            (layer(LayerKind::PwConv, 1, 6, 7), vec![7, 6, 1, 1]),
            (layer(LayerKind::Fc, 1, 10, 3), vec![3, 10]),
        ] {
            let w = counted_tensor(&shape);
            let stack = stack_weights(&l, &w, 0).unwrap();
            let back = unstack_weights(&l, &stack.matrix).unwrap();
            assert_eq!(back, w);
        }
    }

    #[test]
    fn stack_rejects_wrong_shape() {
        let l = layer(LayerKind::Conv, 3, 2, 4);
        let w = counted_tensor(&[4, 2, 2, 3]);
        assert!(stack_weights(&l, &w, 0).is_err());
    }

    #[test]
    fn basis_matrix_grid_is_exact() {
        let m = ndarray::array![[0.5, 0.26], [-0.125, 3.9]];
        let bm = BasisMatrix::from_real(&m, 8, 16);
        assert_eq!(bm.value(0, 0), 0.5);
        assert_eq!(bm.raw()[[0, 1]], 67); // round(0.26*256) = 67
        assert_eq!(bm.value(1, 0), -0.125);
        // Every entry is representable: raw/2^fb re-rounds to itself.
        let again = BasisMatrix::from_real(&bm.to_real(), 8, 16);
        assert_eq!(again, bm);
    }

    #[test]
    fn rank_policies() {
        assert_eq!(RankPolicy::HalfD.rank_for(100, 9), 5);
        assert_eq!(RankPolicy::HalfDCapRows.rank_for(2, 32), 2);
        assert_eq!(RankPolicy::Full.rank_for(10, 16), 16);
        assert_eq!(RankPolicy::Fixed(3).rank_for(10, 16), 3);
    }

    #[test]
    fn config_defaults_and_range() {
        let cfg = CompressionConfig::default();
        assert!(cfg.enabled);
        assert_eq!(cfg.exponent_bits, 4);
        assert_eq!(cfg.exponent_range(), (-8, 7));
        assert!(!cfg.include_dw);
        assert!(cfg.compresses(LayerKind::Conv));
        assert!(!cfg.compresses(LayerKind::DwConv));
        assert!(cfg.compresses(LayerKind::Fc));
    }
}
