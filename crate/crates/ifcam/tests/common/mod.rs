//! Oracles shared by the integration suites. Each one re-derives the checked
//! quantity by a route independent of the implementation under test.

use ifcam::compress::{CompressedLayer, QCoeff};
use ifcam::lensless::{SeparableMaskPair, SensorMeasurement};
use ifcam::netspec::{LayerKind, LayerSpec, NetworkSpec, TensorShape};
use nalgebra::DMatrix;
use ndarray::Array2;
use num_bigint::BigInt;
use num_rational::BigRational;

pub fn pow2_rational(e: i32) -> BigRational {
    if e >= 0 {
        BigRational::from_integer(BigInt::from(1u8) << e as usize)
    } else {
        BigRational::new(BigInt::from(1u8), BigInt::from(1u8) << (-e) as usize)
    }
}

/// Exact rational C*B product of a compressed layer, no rounding anywhere.
pub fn rational_product(layer: &CompressedLayer) -> Vec<Vec<BigRational>> {
    let d = layer.dim();
    let fb = i32::from(layer.bm.fraction_bits);
    let map = layer.row_map();
    let mut out = vec![vec![BigRational::from_integer(BigInt::from(0)); d]; layer.num_rows];
    for (row, slot) in map.iter().enumerate() {
        let Some(k) = slot else { continue };
        for (j, coeff) in layer.nonzero_rows[*k].iter().enumerate() {
            let QCoeff::Pow2 {
                negative,
                exponent,
            } = coeff
            else {
                continue;
            };
            let mut c = pow2_rational(*exponent);
            if *negative {
                c = -c;
            }
            for col in 0..d {
                let b = BigRational::new(
                    BigInt::from(layer.bm.raw()[[j, col]]),
                    BigInt::from(1u8) << fb as usize,
                );
                out[row][col] += &c * b;
            }
        }
    }
    out
}

/// Solve the vectorized Tikhonov normal equations densely:
/// (PhiR'PhiR (x) PhiL'PhiL + lambda I) vec(X) = vec(PhiL' Y PhiR).
pub fn kronecker_solve(
    mask: &SeparableMaskPair,
    y: &SensorMeasurement,
    lambda: f64,
) -> Array2<f64> {
    let (l, r) = mask.compute_matrices();
    let gl = l.transpose() * &l;
    let gr = r.transpose() * &r;
    let n = gl.nrows() * gr.nrows();
    let a = gr.kronecker(&gl) + DMatrix::identity(n, n) * lambda;
    let ym = DMatrix::from_fn(y.samples.nrows(), y.samples.ncols(), |i, j| {
        y.samples[[i, j]]
    });
    let rhs_mat = l.transpose() * ym * &r;
    let rhs = nalgebra::DVector::from_iterator(n, rhs_mat.iter().copied());
    let sol = a.lu().solve(&rhs).expect("normal equations solvable");
    let (nr, nc) = (gl.nrows(), gr.nrows());
    Array2::from_shape_fn((nr, nc), |(i, j)| sol[j * nr + i])
}

/// Number of stack rows a layer compresses to, re-derived from the stacking
/// rules.
pub fn stack_rows_of(layer: &LayerSpec) -> usize {
    match layer.kind {
        LayerKind::Conv => layer.cout * layer.cin,
        _ => layer.cout,
    }
}

pub fn stack_width_of(layer: &LayerSpec) -> usize {
    match layer.kind {
        LayerKind::Conv | LayerKind::DwConv => layer.k * layer.k,
        LayerKind::PwConv | LayerKind::Fc => layer.cin,
    }
}

/// Independent replay of the weight-access accounting for a whole network:
/// dense reads, compressed reads, and index reads, from the row masks alone.
pub struct AccessOracle {
    pub dense_reads: u64,
    pub compressed_reads: u64,
    pub index_reads: u64,
    pub unpruned_reads: u64,
    pub unpruned_index_reads: u64,
}

pub fn access_oracle(
    net: &NetworkSpec,
    weights: &[ifcam::compress::LayerWeights],
) -> AccessOracle {
    let mut o = AccessOracle {
        dense_reads: 0,
        compressed_reads: 0,
        index_reads: 0,
        unpruned_reads: 0,
        unpruned_index_reads: 0,
    };
    for (layer, w) in net.layers.iter().zip(weights) {
        let n = stack_rows_of(layer) as u64;
        let d = stack_width_of(layer) as u64;
        o.dense_reads += n * d;
        match w.as_compressed() {
            None => {
                o.compressed_reads += n * d;
                o.unpruned_reads += n * d;
            }
            Some(c) => {
                let live = c.row_map().iter().filter(|s| s.is_some()).count() as u64;
                o.compressed_reads += live * c.rank() as u64;
                o.index_reads += live + 1;
                o.unpruned_reads += n * c.rank() as u64;
                o.unpruned_index_reads += n + 1;
            }
        }
    }
    o
}

/// Brute-force MAC counter over every output position and kernel tap.
pub fn brute_force_macs(layer: &LayerSpec, input: TensorShape) -> u64 {
    let out = ifcam::netspec::layer_output_shape(layer, input, 0).unwrap();
    let spatial = (out.h * out.w) as u64;
    match layer.kind {
        LayerKind::Conv => {
            let mut macs = 0u64;
            for _ in 0..layer.cout {
                for _ in 0..layer.cin {
                    macs += (layer.k * layer.k) as u64 * spatial;
                }
            }
            macs
        }
        LayerKind::DwConv => (layer.k * layer.k) as u64 * layer.cin as u64 * spatial,
        LayerKind::PwConv => layer.cin as u64 * layer.cout as u64 * spatial,
        LayerKind::Fc => (layer.cin * layer.cout) as u64,
    }
}
