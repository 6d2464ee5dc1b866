//! SVD-initialized alternating projected least squares: factor a weight
//! stack W (n x d) into a power-of-2 coefficient matrix C (n x r) with a
//! structured-sparsity quota of zero rows and a fixed-point basis B (r x d).

use nalgebra::DMatrix;
use ndarray::Array2;

use super::quant::{quantize_pow2, QCoeff};
use super::{BasisMatrix, CmRow, CoefficientMatrix, CompressError, WeightStack};

#[derive(Debug, Clone, Copy)]
pub struct DecomposeOptions {
    pub rank: usize,
    /// Fraction of rows forced to zero; exactly ceil(target * n) rows.
    pub sparsity_target: f64,
    pub e_min: i32,
    pub e_max: i32,
    pub iters: usize,
    pub bm_fraction_bits: u8,
    pub bm_word_bits: u8,
}

/// Frobenius reconstruction errors recorded around each projection step.
#[derive(Debug, Clone, Copy)]
pub struct IterationErrors {
    pub before_coeff_solve: f64,
    pub after_coeff_solve: f64,
    pub after_projection: f64,
    /// After the basis least-squares re-solve, before grid rounding.
    pub after_basis_solve: f64,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub bm: BasisMatrix,
    pub cm: CoefficientMatrix,
    /// Set when the input stack was all-zero and the factors are arbitrary.
    pub degenerate: bool,
    pub iteration_errors: Vec<IterationErrors>,
}

fn nd_to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn frob_err(w: &DMatrix<f64>, c: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (w - c * b).norm()
}

/// Exponent field width needed to cover [e_min, e_max].
fn exponent_bits_for(e_min: i32, e_max: i32) -> u8 {
    let range = (e_max - e_min + 1) as u32;
    let bits = 32 - (range - 1).leading_zeros();
    bits.max(1) as u8
}

/// Indices of the `count` least important rows: importance is
/// ||c_i|| * ||w_i||, ties broken toward the lower row index.
fn prune_set(w: &DMatrix<f64>, c: &DMatrix<f64>, count: usize) -> Vec<bool> {
    let n = w.nrows();
    let mut scored: Vec<(f64, usize)> = (0..n)
        .map(|i| (c.row(i).norm() * w.row(i).norm(), i))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut pruned = vec![false; n];
    for &(_, i) in scored.iter().take(count) {
        pruned[i] = true;
    }
    pruned
}

fn quantize_matrix(
    c: &DMatrix<f64>,
    pruned: &[bool],
    e_min: i32,
    e_max: i32,
) -> (Vec<CmRow>, DMatrix<f64>) {
    let (n, r) = c.shape();
    let mut rows = Vec::with_capacity(n);
    let mut real = DMatrix::zeros(n, r);
    for i in 0..n {
        if pruned[i] {
            rows.push(CmRow::Zero);
            continue;
        }
        let coeffs: Vec<QCoeff> = (0..r)
            .map(|j| {
                let q = quantize_pow2(c[(i, j)], e_min, e_max);
                real[(i, j)] = q.value();
                q
            })
            .collect();
        rows.push(CmRow::Dense(coeffs));
    }
    (rows, real)
}

/// Solve min ||W - C B|| for C with B fixed (row-wise least squares).
fn solve_coefficients(w: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let pinv = b
        .clone()
        .pseudo_inverse(1e-12)
        .expect("pseudo-inverse of basis");
    w * pinv
}

/// Solve min ||W_s - C_s B|| for B with the surviving rows of C fixed.
fn solve_basis(
    w: &DMatrix<f64>,
    c_real: &DMatrix<f64>,
    pruned: &[bool],
    fallback: &DMatrix<f64>,
) -> DMatrix<f64> {
    let survivors: Vec<usize> = (0..w.nrows()).filter(|&i| !pruned[i]).collect();
    if survivors.is_empty() {
        return fallback.clone();
    }
    let ws = DMatrix::from_fn(survivors.len(), w.ncols(), |i, j| w[(survivors[i], j)]);
    let cs = DMatrix::from_fn(survivors.len(), c_real.ncols(), |i, j| {
        c_real[(survivors[i], j)]
    });
    let pinv = cs
        .pseudo_inverse(1e-12)
        .expect("pseudo-inverse of coefficients");
    pinv * ws
}

fn validate_opts(opts: &DecomposeOptions, d: usize) -> Result<(), CompressError> {
    if opts.rank == 0 || opts.rank > d {
        return Err(CompressError::RankTooLarge {
            rank: opts.rank,
            d,
        });
    }
    if opts.iters == 0 {
        return Err(CompressError::BadOptions("iters must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&opts.sparsity_target) {
        return Err(CompressError::BadOptions(format!(
            "sparsity_target must be in [0,1), got {}",
            opts.sparsity_target
        )));
    }
    if opts.e_min > opts.e_max {
        return Err(CompressError::BadOptions("e_min > e_max".into()));
    }
    Ok(())
}

pub fn decompose(
    stack: &WeightStack,
    opts: &DecomposeOptions,
) -> Result<Decomposition, CompressError> {
    let (n, d) = stack.matrix.dim();
    validate_opts(opts, d)?;
    let r = opts.rank;
    let exponent_bits = exponent_bits_for(opts.e_min, opts.e_max);
    let w = nd_to_na(&stack.matrix);

    if w.iter().all(|&v| v == 0.0) {
        // Degenerate stack: an all-zero CM with an arbitrary orthonormal
        // basis (identity rows on the fixed-point grid).
        let mut b = Array2::zeros((r, d));
        for i in 0..r.min(d) {
            b[[i, i]] = 1.0;
        }
        return Ok(Decomposition {
            bm: BasisMatrix::from_real(&b, opts.bm_fraction_bits, opts.bm_word_bits),
            cm: CoefficientMatrix {
                rows: vec![CmRow::Zero; n],
                rank: r,
                exponent_bits,
                e_min: opts.e_min,
                e_max: opts.e_max,
            },
            degenerate: true,
            iteration_errors: Vec::new(),
        });
    }

    // Rank-r truncated SVD initialization: C = U S, B = V'.
    let svd = w.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd u");
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let k = svd.singular_values.len().min(r);
    let mut c_real = DMatrix::<f64>::zeros(n, r);
    let mut b_real = DMatrix::<f64>::zeros(r, d);
    for j in 0..k {
        let s = svd.singular_values[j];
        for i in 0..n {
            c_real[(i, j)] = u[(i, j)] * s;
        }
        for i in 0..d {
            b_real[(j, i)] = v_t[(j, i)];
        }
    }
    run_iterations(stack, opts, c_real, b_real)
}

/// The same projected alternating least squares started from caller-supplied
/// factors instead of the truncated SVD (warm starts, fixed-point checks).
pub fn decompose_from_factors(
    stack: &WeightStack,
    opts: &DecomposeOptions,
    c_init: &Array2<f64>,
    b_init: &Array2<f64>,
) -> Result<Decomposition, CompressError> {
    let (n, d) = stack.matrix.dim();
    validate_opts(opts, d)?;
    if c_init.dim() != (n, opts.rank) || b_init.dim() != (opts.rank, d) {
        return Err(CompressError::ShapeMismatch(format!(
            "init factors {:?} x {:?} for a {}x{} stack at rank {}",
            c_init.dim(),
            b_init.dim(),
            n,
            d,
            opts.rank
        )));
    }
    run_iterations(stack, opts, nd_to_na(c_init), nd_to_na(b_init))
}

fn run_iterations(
    stack: &WeightStack,
    opts: &DecomposeOptions,
    c_init: DMatrix<f64>,
    b_init: DMatrix<f64>,
) -> Result<Decomposition, CompressError> {
    let (n, d) = stack.matrix.dim();
    let r = opts.rank;
    let exponent_bits = exponent_bits_for(opts.e_min, opts.e_max);
    let n_zero = ((opts.sparsity_target * n as f64).ceil() as usize).min(n);
    let w = nd_to_na(&stack.matrix);

    let mut b_grid = BasisMatrix::from_real(
        &Array2::from_shape_fn((r, d), |(i, j)| b_init[(i, j)]),
        opts.bm_fraction_bits,
        opts.bm_word_bits,
    );
    let mut cm_rows: Vec<CmRow> = Vec::new();
    let mut c_effective = c_init; // current effective C (quantized after iter 1)
    let mut trace = Vec::with_capacity(opts.iters);

    for _ in 0..opts.iters {
        let b_cur = nd_to_na(&b_grid.to_real());
        let before_coeff_solve = frob_err(&w, &c_effective, &b_cur);
        let c_ls = solve_coefficients(&w, &b_cur);
        let after_coeff_solve = frob_err(&w, &c_ls, &b_cur);

        let pruned = prune_set(&w, &c_ls, n_zero);
        let (rows, c_quant) = quantize_matrix(&c_ls, &pruned, opts.e_min, opts.e_max);
        let after_projection = frob_err(&w, &c_quant, &b_cur);

        let b_ls = solve_basis(&w, &c_quant, &pruned, &b_cur);
        let after_basis_solve = frob_err(&w, &c_quant, &b_ls);

        b_grid = BasisMatrix::from_real(
            &Array2::from_shape_fn((r, d), |(i, j)| b_ls[(i, j)]),
            opts.bm_fraction_bits,
            opts.bm_word_bits,
        );
        cm_rows = rows;
        c_effective = c_quant;
        trace.push(IterationErrors {
            before_coeff_solve,
            after_coeff_solve,
            after_projection,
            after_basis_solve,
        });
    }

    // At full rank, direct entry-wise quantization of W (B = I) is a valid
    // factorization; keep whichever reconstructs better.
    if r == d {
        let identity_raw = 1i64 << opts.bm_fraction_bits;
        if identity_raw <= (1i64 << (opts.bm_word_bits - 1)) - 1 {
            let c_direct = w.clone();
            let pruned = prune_set(&w, &c_direct, n_zero);
            let (rows_direct, c_q_direct) =
                quantize_matrix(&c_direct, &pruned, opts.e_min, opts.e_max);
            let ident = DMatrix::<f64>::identity(d, d);
            let err_direct = frob_err(&w, &c_q_direct, &ident);
            let err_iterated = frob_err(&w, &c_effective, &nd_to_na(&b_grid.to_real()));
            if err_direct < err_iterated {
                let mut eye = Array2::zeros((d, d));
                for i in 0..d {
                    eye[[i, i]] = 1.0;
                }
                b_grid = BasisMatrix::from_real(&eye, opts.bm_fraction_bits, opts.bm_word_bits);
                cm_rows = rows_direct;
            }
        }
    }

    Ok(Decomposition {
        bm: b_grid,
        cm: CoefficientMatrix {
            rows: cm_rows,
            rank: r,
            exponent_bits,
            e_min: opts.e_min,
            e_max: opts.e_max,
        },
        degenerate: false,
        iteration_errors: trace,
    })
}
