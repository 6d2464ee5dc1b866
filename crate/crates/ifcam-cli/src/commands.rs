//! Subcommand implementations. Every command is deterministic given
//! (config, seed): reports carry no timestamps and all randomness flows
//! through named sub-seeds.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use ifcam::accelsim::{
    compare_dataflows, simulate_network, DataflowComparison, NetworkSimReport,
};
use ifcam::compress::{
    compress_network, compression_report, stack_weights, unstack_weights, CompressionReport,
    LayerWeights,
};
use ifcam::io;
use ifcam::lensless::{
    data_residual, forward_capture, generate_mask_pair, psnr, reconstruct_tikhonov,
    SensorMeasurement, SeparableMaskPair,
};
use ifcam::netspec::{infer_shapes, macs_to_flops, LayerKind, NetworkSpec};
use ifcam::pipeline::{
    generate_synthetic_stream, pipeline_flops_report, report_with_predictions, results_to_csv,
    run_stream, seeded_dense_weights, Controller, PolicyMode, QuantMode,
};
use ifcam::seed::sub_seed;

use crate::config::{ExperimentConfig, MaskKind};
use crate::error::CliError;

pub struct CommandContext {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub output_dir: PathBuf,
    pub verbose: bool,
}

impl CommandContext {
    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("[ifcam] {msg}");
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }

    fn write_bytes(&self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

/// Dense weight tensors for a network: from per-layer IFCM stacked-weight
/// files when configured, otherwise seeded.
fn load_dense_weights(
    ctx: &CommandContext,
    net: &NetworkSpec,
) -> Result<Vec<ndarray::ArrayD<f64>>, CliError> {
    if let Some(section) = &ctx.config.weights {
        if let Some(dir) = &section.dir {
            let dir = if dir.is_absolute() {
                dir.clone()
            } else {
                ctx.base_dir.join(dir)
            };
            let mut out = Vec::with_capacity(net.layers.len());
            for (i, layer) in net.layers.iter().enumerate() {
                let path = dir.join(format!("layer_{i:02}.ifcm"));
                if !path.exists() {
                    return Err(CliError::io(format!(
                        "missing weights file {}",
                        path.display()
                    )));
                }
                let stacked = io::read_raw_matrix(&path)?;
                out.push(unstack_weights(layer, &stacked)?);
            }
            return Ok(out);
        }
    }
    Ok(seeded_dense_weights(net, sub_seed(ctx.config.seed, "weights")))
}

// --- compress -------------------------------------------------------------

#[derive(Serialize)]
struct CompressOutput {
    network: String,
    seed: u64,
    report: CompressionReport,
    bitstream_files: Vec<String>,
}

pub fn cmd_compress(ctx: &CommandContext) -> Result<String, CliError> {
    let net = ctx.config.network.load(&ctx.base_dir)?;
    let dense = load_dense_weights(ctx, &net)?;
    ctx.log(&format!("compressing {} layers of {}", net.layers.len(), net.name));
    let compressed = compress_network(&net, &dense, &ctx.config.compression)?;
    let report = compression_report(&net, &compressed, ctx.config.baseline_weight_bits)?;

    let mut files = Vec::new();
    for (i, storage) in compressed.iter().enumerate() {
        if let LayerWeights::Compressed(c) = storage {
            let name = format!("layer_{i:02}.ifc1");
            let bytes = c.to_bytes()?;
            // Container honesty: the serialized stream must parse back and
            // its measured sections must match the recorded bit budget.
            let sizes = ifcam::compress::measure_sections(&bytes)
                .map_err(|e| CliError::internal(format!("self-check failed: {e}")))?;
            if sizes.bm_bytes as u64 != c.bit_budget.bm_bits.div_ceil(8)
                || sizes.index_bytes as u64 * 8 != c.bit_budget.index_bits
                || sizes.cm_bytes as u64 != c.bit_budget.cm_bits.div_ceil(8)
            {
                return Err(CliError::internal(format!(
                    "bit budget mismatch on layer {i}"
                )));
            }
            ctx.write_bytes(&name, &bytes)?;
            files.push(name);
        }
    }
    let out = CompressOutput {
        network: net.name.clone(),
        seed: ctx.config.seed,
        report,
        bitstream_files: files,
    };
    let text = pretty(&out);
    ctx.write("compress_report.json", &text)?;
    Ok(text)
}

// --- simulate ---------------------------------------------------------------

#[derive(Serialize)]
struct SimulateOutput {
    network: String,
    seed: u64,
    compressed: bool,
    report: NetworkSimReport,
    dw_dataflow_comparisons: Vec<DwComparisonRow>,
}

#[derive(Serialize)]
struct DwComparisonRow {
    layer: usize,
    channels: usize,
    comparison: DataflowComparison,
}

pub fn cmd_simulate(ctx: &CommandContext) -> Result<String, CliError> {
    let net = ctx.config.network.load(&ctx.base_dir)?;
    let cfg = &ctx.config.accel;
    let weights = if ctx.config.compression.enabled {
        let dense = load_dense_weights(ctx, &net)?;
        Some(compress_network(&net, &dense, &ctx.config.compression)?)
    } else {
        None
    };
    let report = simulate_network(&net, weights.as_deref(), cfg)?;

    let shapes = infer_shapes(&net)?;
    let mut comparisons = Vec::new();
    for (i, (layer, (in_shape, _))) in net.layers.iter().zip(&shapes).enumerate() {
        if layer.kind == LayerKind::DwConv {
            comparisons.push(DwComparisonRow {
                layer: i,
                channels: layer.cout,
                comparison: compare_dataflows(layer, *in_shape, cfg)?,
            });
        }
    }

    ctx.write("trace.csv", &report.trace.to_csv())?;
    if let Some(dense) = &report.dense_trace {
        ctx.write("trace_dense.csv", &dense.to_csv())?;
    }
    let out = SimulateOutput {
        network: net.name.clone(),
        seed: ctx.config.seed,
        compressed: weights.is_some(),
        report,
        dw_dataflow_comparisons: comparisons,
    };
    let text = pretty(&out);
    ctx.write("sim_report.json", &text)?;
    Ok(text)
}

// --- pipeline ---------------------------------------------------------------

#[derive(Serialize)]
struct PipelineOutput {
    seed: u64,
    n_frames: usize,
    predictions: usize,
    prediction_rate: f64,
    empirical_total_macs: u64,
    report: ifcam::pipeline::FlopsReport,
    mean_angular_error_deg: f64,
}

pub fn cmd_pipeline(ctx: &CommandContext) -> Result<String, CliError> {
    let pred_net = ctx.config.prediction_network.load(&ctx.base_dir)?;
    let gaze_net = ctx.config.network.load(&ctx.base_dir)?;
    let section = &ctx.config.pipeline;

    let pred_weights: Vec<LayerWeights> =
        seeded_dense_weights(&pred_net, sub_seed(ctx.config.seed, "weights/prediction"))
            .into_iter()
            .map(LayerWeights::Dense)
            .collect();
    let gaze_dense = load_dense_weights(ctx, &gaze_net)?;
    let gaze_weights: Vec<LayerWeights> = if ctx.config.compression.enabled {
        compress_network(&gaze_net, &gaze_dense, &ctx.config.compression)?
    } else {
        gaze_dense.into_iter().map(LayerWeights::Dense).collect()
    };

    let stream = generate_synthetic_stream(
        section.n_frames,
        section.frame_shape,
        sub_seed(ctx.config.seed, "stream"),
    )?;
    let mut controller = Controller::new(
        &pred_net,
        &pred_weights,
        &gaze_net,
        &gaze_weights,
        section.policy,
        section.frame_shape,
        QuantMode::Int8,
    )?;
    let results = run_stream(&mut controller, &stream)?;
    let predictions = results.iter().filter(|r| r.repredicted).count();
    let empirical: u64 = results.iter().map(|r| r.macs_this_frame).sum();

    let report = match section.policy.mode {
        PolicyMode::Periodic { .. } => pipeline_flops_report(
            &pred_net,
            &gaze_net,
            &section.policy,
            section.frame_shape,
            section.n_frames,
        )?,
        PolicyMode::Trigger { .. } => report_with_predictions(
            &pred_net,
            &gaze_net,
            &section.policy,
            section.frame_shape,
            section.n_frames,
            predictions,
        )?,
    };
    // The analytic roll-up must equal the per-frame ledger to the MAC.
    if report.pipeline_total_macs != empirical {
        return Err(CliError::internal(format!(
            "analytic {} != empirical {} MACs",
            report.pipeline_total_macs, empirical
        )));
    }

    let mean_err = results
        .iter()
        .map(|r| ifcam::pipeline::angular_error(&r.gaze, &stream.ground_truth[r.frame].gaze))
        .sum::<f64>()
        / results.len() as f64;

    ctx.write("frames.csv", &results_to_csv(&results, &stream))?;
    let out = PipelineOutput {
        seed: ctx.config.seed,
        n_frames: section.n_frames,
        predictions,
        prediction_rate: predictions as f64 / section.n_frames as f64,
        empirical_total_macs: empirical,
        report,
        mean_angular_error_deg: mean_err,
    };
    let text = pretty(&out);
    ctx.write("pipeline_report.json", &text)?;
    Ok(text)
}

// --- reconstruct ------------------------------------------------------------

#[derive(Serialize)]
struct ReconstructOutput {
    seed: u64,
    scenes: usize,
    lambda: f64,
    noise_sigma: f64,
    psnr_db: Vec<f64>,
    mean_psnr_db: f64,
    lambda_sweep: Option<Vec<SweepRow>>,
}

#[derive(Serialize)]
struct SweepRow {
    lambda: f64,
    residual: f64,
}

pub fn cmd_reconstruct(ctx: &CommandContext) -> Result<String, CliError> {
    let s = &ctx.config.lensless;
    let mask = match s.mask {
        MaskKind::Auto => generate_mask_pair(
            s.scene_rows,
            s.scene_cols,
            s.measurement_rows,
            s.measurement_cols,
            sub_seed(ctx.config.seed, "mask"),
        ),
        MaskKind::Hadamard => {
            if s.scene_rows != s.scene_cols || s.scene_rows != s.measurement_rows {
                return Err(CliError::validation(
                    "hadamard masks require square scene == measurement sizes".into(),
                ));
            }
            SeparableMaskPair::hadamard(s.scene_rows)?
        }
    };
    fs::create_dir_all(&ctx.output_dir)?;
    ctx.write("mask.json", &mask.to_json_string())?;

    let mut psnrs = Vec::with_capacity(s.num_scenes);
    let mut csv = String::from("scene,psnr_db\n");
    let mut first_capture: Option<SensorMeasurement> = None;
    for i in 0..s.num_scenes {
        let scene = ifcam::lensless::random_scene(
            s.scene_rows,
            s.scene_cols,
            sub_seed(ctx.config.seed, &format!("scene/{i}")),
        );
        let y = forward_capture(
            &mask,
            &scene,
            s.noise_sigma,
            sub_seed(ctx.config.seed, &format!("noise/{i}")),
        )?;
        let xhat = reconstruct_tikhonov(&mask, &y, s.lambda)?;
        let p = psnr(&scene, &xhat)?;
        psnrs.push(p);
        csv.push_str(&format!("{i},{p}\n"));
        if i == 0 {
            io::write_pgm(&ctx.output_dir.join("scene_00.pgm"), &scene.pixels)?;
            io::write_pgm(
                &ctx.output_dir.join("recon_00.pgm"),
                &xhat.clamped_unit().pixels,
            )?;
            io::write_raw_matrix(&ctx.output_dir.join("recon_00.ifcm"), &xhat.pixels)?;
            first_capture = Some(y);
        }
    }
    ctx.write("psnr.csv", &csv)?;

    let lambda_sweep = match (&s.lambda_sweep, &first_capture) {
        (Some(lambdas), Some(y)) => {
            let mut rows = Vec::new();
            for &lambda in lambdas {
                let xhat = reconstruct_tikhonov(&mask, y, lambda)?;
                rows.push(SweepRow {
                    lambda,
                    residual: data_residual(&mask, &xhat, y),
                });
            }
            Some(rows)
        }
        _ => None,
    };

    let mean = psnrs.iter().copied().filter(|p| p.is_finite()).sum::<f64>()
        / psnrs.len().max(1) as f64;
    let out = ReconstructOutput {
        seed: ctx.config.seed,
        scenes: s.num_scenes,
        lambda: s.lambda,
        noise_sigma: s.noise_sigma,
        psnr_db: psnrs,
        mean_psnr_db: mean,
        lambda_sweep,
    };
    let text = pretty(&out);
    ctx.write("reconstruct_report.json", &text)?;
    Ok(text)
}

// --- report (headline roll-up) ----------------------------------------------

pub fn cmd_report(ctx: &CommandContext) -> Result<String, CliError> {
    let compress_json: serde_json::Value =
        serde_json::from_str(&cmd_compress(ctx)?).expect("own output parses");
    let simulate_json: serde_json::Value =
        serde_json::from_str(&cmd_simulate(ctx)?).expect("own output parses");
    let pipeline_json: serde_json::Value =
        serde_json::from_str(&cmd_pipeline(ctx)?).expect("own output parses");
    let reconstruct_json: serde_json::Value =
        serde_json::from_str(&cmd_reconstruct(ctx)?).expect("own output parses");

    let baseline = compress_json["report"]["baseline_bits"].clone();
    let total = compress_json["report"]["total_bits"].clone();
    let headline = json!({
        "seed": ctx.config.seed,
        "storage": {
            "baseline_bits": baseline,
            "compressed_bits": total,
            "ratio": compress_json["report"]["ratio"],
        },
        "weight_gb_access": simulate_json["report"]["access_comparison"],
        "dw_dataflow": simulate_json["dw_dataflow_comparisons"]
            .as_array()
            .map(|rows| rows.iter().map(|r| json!({
                "layer": r["layer"],
                "channels": r["channels"],
                "boost_pp": r["comparison"]["utilization_boost_pp"],
                "ratio": r["comparison"]["utilization_ratio"],
            })).collect::<Vec<_>>()),
        "pipeline": {
            "predictions": pipeline_json["predictions"],
            "prediction_rate": pipeline_json["prediction_rate"],
            "flops_reduction": pipeline_json["report"]["reduction_fraction"],
            "avg_flops_per_frame": pipeline_json["report"]["avg_flops_per_frame"],
        },
        "reconstruction": {
            "mean_psnr_db": reconstruct_json["mean_psnr_db"],
        },
        "flops_convention": format!("1 MAC = {} FLOPs", macs_to_flops(1)),
    });
    let text = serde_json::to_string_pretty(&headline).expect("headline serializes");
    ctx.write("summary.json", &text)?;
    Ok(text)
}

// --- export-weights (helper for file-based flows) ----------------------------

/// Write the seeded dense weights of the configured network as per-layer
/// IFCM stacked matrices, the input format of `compress` with a weights dir.
pub fn cmd_export_weights(ctx: &CommandContext) -> Result<String, CliError> {
    let net = ctx.config.network.load(&ctx.base_dir)?;
    let dense = seeded_dense_weights(&net, sub_seed(ctx.config.seed, "weights"));
    let mut files = Vec::new();
    for (i, (layer, w)) in net.layers.iter().zip(&dense).enumerate() {
        let stack = stack_weights(layer, w, i)?;
        let name = format!("layer_{i:02}.ifcm");
        fs::create_dir_all(&ctx.output_dir)?;
        io::write_raw_matrix(&ctx.output_dir.join(&name), &stack.matrix)?;
        files.push(name);
    }
    let out = json!({ "network": net.name, "files": files });
    let text = serde_json::to_string_pretty(&out).expect("serializes");
    ctx.write("weights_manifest.json", &text)?;
    Ok(text)
}
