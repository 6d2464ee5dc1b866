//! Event-counted layer and network simulation.

use std::collections::BTreeSet;

use serde::Serialize;

use super::schedule::{map_layer, LayerSchedule};
use super::{swpr_throughput, AccelConfig, Dataflow, LayerTrace, SimError, SimTrace, TraceCounters};
use crate::compress::{rle_encode, CmRow, CoefficientMatrix, CompressedLayer, LayerWeights, QCoeff};
use crate::netspec::{infer_shapes, LayerKind, LayerSpec, NetworkSpec, TensorShape};

/// Number of compressible stack rows a layer maps to.
pub(crate) fn stack_rows(layer: &LayerSpec) -> usize {
    match layer.kind {
        LayerKind::Conv => layer.cout * layer.cin,
        LayerKind::DwConv | LayerKind::PwConv | LayerKind::Fc => layer.cout,
    }
}

/// Stack-row width (weight words per row).
fn stack_width(layer: &LayerSpec) -> usize {
    match layer.kind {
        LayerKind::Conv | LayerKind::DwConv => layer.k * layer.k,
        LayerKind::PwConv | LayerKind::Fc => layer.cin,
    }
}

/// Cycles one PE line spends per output tap.
fn cycles_per_tap(layer: &LayerSpec, macs_per_line: usize) -> u64 {
    match layer.kind {
        LayerKind::Conv | LayerKind::DwConv => (layer.k as u64).div_ceil(macs_per_line as u64),
        LayerKind::PwConv | LayerKind::Fc => 1,
    }
}

/// Distinct valid input rows touched by the given output-row ranges.
fn distinct_input_rows(
    ranges: &[(usize, usize)],
    k: usize,
    stride: usize,
    pad: usize,
    h_in: usize,
) -> u64 {
    let mut mark = vec![false; h_in];
    for &(a, b) in ranges {
        for y in a..b {
            for kr in 0..k {
                let iy = y * stride + kr;
                if iy >= pad && iy - pad < h_in {
                    mark[iy - pad] = true;
                }
            }
        }
    }
    mark.iter().filter(|&&m| m).count() as u64
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EventRow {
    pub cycle: u64,
    /// PE line index, or -1 for array-wide memory events.
    pub pe_line: i64,
    pub event: &'static str,
    pub addr_class: &'static str,
}

/// Per-cycle event log for small layers, capped at one million rows.
#[derive(Debug, Default)]
pub struct EventLog {
    pub rows: Vec<EventRow>,
    pub truncated: bool,
}

pub const EVENT_LOG_CAP: usize = 1_000_000;

impl EventLog {
    fn push(&mut self, row: EventRow) {
        if self.rows.len() >= EVENT_LOG_CAP {
            self.truncated = true;
            return;
        }
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,pe_line,event,address_class\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.cycle, r.pe_line, r.event, r.addr_class
            ));
        }
        out
    }
}

struct SparsityView<'a> {
    layer: &'a CompressedLayer,
    /// Stack row -> stored-row slot (None = pruned).
    row_map: Vec<Option<usize>>,
}

impl<'a> SparsityView<'a> {
    fn new(layer: &'a CompressedLayer, expected_rows: usize) -> Result<Self, SimError> {
        if layer.num_rows != expected_rows {
            return Err(SimError::SparsityMismatch {
                got: layer.num_rows,
                expected: expected_rows,
            });
        }
        Ok(Self {
            layer,
            row_map: layer.row_map(),
        })
    }

    fn is_live(&self, row: usize) -> bool {
        self.row_map[row].is_some()
    }

    fn coeff_nnz(&self, row: usize) -> u64 {
        match self.row_map[row] {
            None => 0,
            Some(slot) => self.layer.nonzero_rows[slot]
                .iter()
                .filter(|c| !matches!(c, QCoeff::Zero))
                .count() as u64,
        }
    }
}

/// Simulate one scheduled layer, optionally with a compressed-layer view
/// driving structured skipping. See the module docs for the cycle model and
/// counter units.
pub fn simulate_layer(
    sched: &LayerSchedule,
    cfg: &AccelConfig,
    sparsity: Option<&CompressedLayer>,
    mut event_log: Option<&mut EventLog>,
) -> Result<TraceCounters, SimError> {
    let layer = &sched.layer;
    let n_rows = stack_rows(layer);
    let d = stack_width(layer) as u64;
    let view = match sparsity {
        Some(c) => Some(SparsityView::new(c, n_rows)?),
        None => None,
    };
    let live = |row: usize| view.as_ref().map_or(true, |v| v.is_live(row));

    let tap_cycles = cycles_per_tap(layer, cfg.macs_per_line);
    let w_out = sched.out_shape.w as u64;
    let k = layer.k as u64;
    let mut c = TraceCounters::default();
    let mut clock: u64 = 0;

    for pass in &sched.passes {
        // --- IFM fetch accounting for this pass ---
        let ifm_words: u64 = match layer.kind {
            LayerKind::Fc => sched.in_shape.num_elements(),
            LayerKind::Conv | LayerKind::PwConv => {
                let ranges: Vec<(usize, usize)> = pass
                    .assignments
                    .iter()
                    .map(|a| (a.row_start, a.row_end))
                    .collect();
                distinct_input_rows(&ranges, layer.k, layer.stride, layer.pad, sched.in_shape.h)
                    * sched.in_shape.w as u64
                    * layer.cin as u64
            }
            LayerKind::DwConv => {
                let channels: BTreeSet<usize> =
                    pass.assignments.iter().map(|a| a.channel).collect();
                let mut words = 0u64;
                for ch in channels {
                    let ranges: Vec<(usize, usize)> = pass
                        .assignments
                        .iter()
                        .filter(|a| a.channel == ch)
                        .map(|a| (a.row_start, a.row_end))
                        .collect();
                    words += distinct_input_rows(
                        &ranges,
                        layer.k,
                        layer.stride,
                        layer.pad,
                        sched.in_shape.h,
                    ) * sched.in_shape.w as u64;
                }
                words
            }
        };
        let fill = cfg.ifm_buffer_depth as u64;
        let stall = ifm_words.div_ceil(swpr_throughput(cfg));
        c.fill_cycles += fill;
        c.ifm_stall_cycles += stall;
        c.gb_ifm_reads += ifm_words;

        if let Some(log) = event_log.as_deref_mut() {
            for t in 0..fill {
                log.push(EventRow {
                    cycle: clock + t,
                    pe_line: -1,
                    event: "ifm_fill",
                    addr_class: "ifm_gb",
                });
            }
            for t in 0..stall {
                log.push(EventRow {
                    cycle: clock + fill + t,
                    pe_line: -1,
                    event: "ifm_stall",
                    addr_class: "ifm_gb",
                });
            }
        }
        let compute_start = clock + fill + stall;

        // --- Weight fetch accounting: each stack row touched by this pass is
        // fetched once (broadcast within the pass) ---
        let mut pass_rows: BTreeSet<usize> = BTreeSet::new();
        for a in &pass.assignments {
            match layer.kind {
                LayerKind::Conv => {
                    for ci in 0..layer.cin {
                        pass_rows.insert(a.channel * layer.cin + ci);
                    }
                }
                _ => {
                    pass_rows.insert(a.channel);
                }
            }
        }
        for &row in &pass_rows {
            match &view {
                None => {
                    c.gb_weight_reads += d;
                    c.local_reg_accesses += d;
                }
                Some(v) => {
                    if v.is_live(row) {
                        c.gb_weight_reads += v.layer.rank() as u64;
                        c.index_sram_reads += 1;
                        c.restore_shift_adds += v.coeff_nnz(row) * d;
                        c.local_reg_accesses += d;
                    }
                }
            }
            if live(row) {
                if let Some(log) = event_log.as_deref_mut() {
                    log.push(EventRow {
                        cycle: compute_start,
                        pe_line: -1,
                        event: "weight_row_fetch",
                        addr_class: "weight_gb",
                    });
                }
            }
        }

        // --- Compute ---
        let mut max_work = 0u64;
        for a in &pass.assignments {
            let rows = a.rows() as u64;
            let mut work = 0u64;
            let mut macs = 0u64;
            match layer.kind {
                LayerKind::Conv => {
                    for ci in 0..layer.cin {
                        if live(a.channel * layer.cin + ci) {
                            work += rows * k * w_out * tap_cycles;
                            macs += rows * k * w_out * k;
                        }
                    }
                }
                LayerKind::DwConv => {
                    if live(a.channel) {
                        work = rows * k * w_out * tap_cycles;
                        macs = rows * k * w_out * k;
                    }
                }
                LayerKind::PwConv => {
                    if live(a.channel) {
                        work = rows * w_out * layer.cin as u64;
                        macs = work;
                    }
                }
                LayerKind::Fc => {
                    if live(a.channel) {
                        work = layer.cin as u64;
                        macs = work;
                    }
                }
            }
            c.active_pe_line_cycles += work;
            c.macs += macs;
            max_work = max_work.max(work);
            if work > 0 {
                if let Some(log) = event_log.as_deref_mut() {
                    for t in 0..work {
                        log.push(EventRow {
                            cycle: compute_start + t,
                            pe_line: a.pe_line as i64,
                            event: "mac_batch",
                            addr_class: "pe_local",
                        });
                    }
                }
            }
            // Output elements are written regardless of pruning (zeros count).
            c.gb_ofm_writes += rows * w_out;
        }
        c.compute_cycles += max_work;
        c.passes += 1;
        clock = compute_start + max_work;
    }

    // Terminal run-length entry and the one-time BM preload.
    if let Some(v) = &view {
        c.index_sram_reads += 1;
        c.bm_preload_words += (v.layer.rank() * v.layer.dim()) as u64;
    }

    c.total_cycles = c.compute_cycles + c.ifm_stall_cycles + c.fill_cycles;
    c.utilization = if c.compute_cycles == 0 {
        0.0
    } else {
        c.active_pe_line_cycles as f64 / (c.compute_cycles as f64 * cfg.num_pe_lines as f64)
    };
    c.energy_total = c.energy_from_events(&cfg.energy_costs);
    Ok(c)
}

/// Utilization comparison of the two DW dataflows.
#[derive(Debug, Clone, Serialize)]
pub struct DataflowComparison {
    pub naive: TraceCounters,
    pub intra: TraceCounters,
    /// Difference in percentage points of PE utilization.
    pub utilization_boost_pp: f64,
    /// intra/naive utilization, for a multiplicative reading.
    pub utilization_ratio: f64,
}

pub fn compare_dataflows(
    layer: &LayerSpec,
    in_shape: TensorShape,
    cfg: &AccelConfig,
) -> Result<DataflowComparison, SimError> {
    if layer.kind != LayerKind::DwConv {
        return Err(SimError::DataflowMismatch {
            dataflow: Dataflow::DwIntraChannel,
            kind: layer.kind.as_str(),
        });
    }
    let naive_sched = map_layer(layer, in_shape, cfg, Dataflow::DwNaiveBaseline)?;
    let intra_sched = map_layer(layer, in_shape, cfg, Dataflow::DwIntraChannel)?;
    let naive = simulate_layer(&naive_sched, cfg, None, None)?;
    let intra = simulate_layer(&intra_sched, cfg, None, None)?;
    Ok(DataflowComparison {
        utilization_boost_pp: (intra.utilization - naive.utilization) * 100.0,
        utilization_ratio: intra.utilization / naive.utilization,
        naive,
        intra,
    })
}

/// Weight-GB access accounting of a compressed run against its baselines.
/// Accesses are `gb_weight_reads + index_sram_reads`; the BM preload is
/// excluded. `reduction_from_pruning` compares against the same compression
/// with no rows pruned (the effect attributable to structured sparsity);
/// `reduction_vs_dense` compares against the dense uncompressed run.
#[derive(Debug, Clone, Serialize)]
pub struct AccessComparison {
    pub dense_weight_reads: u64,
    pub compressed_weight_reads: u64,
    pub compressed_index_reads: u64,
    pub unpruned_weight_reads: u64,
    pub unpruned_index_reads: u64,
    pub reduction_from_pruning: f64,
    pub reduction_vs_dense: f64,
}

#[derive(Debug, Serialize)]
pub struct NetworkSimReport {
    pub trace: SimTrace,
    /// Dense-run counterpart, present when any layer was compressed.
    pub dense_trace: Option<SimTrace>,
    pub access_comparison: Option<AccessComparison>,
}

fn preferred_dataflow(kind: LayerKind) -> Dataflow {
    match kind {
        LayerKind::DwConv => Dataflow::DwIntraChannel,
        _ => Dataflow::ConvInterChannel,
    }
}

fn aggregate(per_layer: Vec<LayerTrace>, cfg: &AccelConfig) -> SimTrace {
    let mut total = TraceCounters::default();
    for l in &per_layer {
        let c = &l.counters;
        total.compute_cycles += c.compute_cycles;
        total.ifm_stall_cycles += c.ifm_stall_cycles;
        total.fill_cycles += c.fill_cycles;
        total.total_cycles += c.total_cycles;
        total.active_pe_line_cycles += c.active_pe_line_cycles;
        total.macs += c.macs;
        total.gb_weight_reads += c.gb_weight_reads;
        total.gb_ifm_reads += c.gb_ifm_reads;
        total.gb_ofm_writes += c.gb_ofm_writes;
        total.index_sram_reads += c.index_sram_reads;
        total.bm_preload_words += c.bm_preload_words;
        total.restore_shift_adds += c.restore_shift_adds;
        total.local_reg_accesses += c.local_reg_accesses;
        total.passes += c.passes;
        total.energy_total += c.energy_total;
    }
    total.utilization = if total.compute_cycles == 0 {
        0.0
    } else {
        total.active_pe_line_cycles as f64
            / (total.compute_cycles as f64 * cfg.num_pe_lines as f64)
    };
    SimTrace {
        counters: total,
        per_layer,
    }
}

fn run_network(
    net: &NetworkSpec,
    sparsity_of: impl Fn(usize) -> Option<CompressedLayer>,
    cfg: &AccelConfig,
) -> Result<SimTrace, SimError> {
    let shapes = infer_shapes(net)?;
    let mut per_layer = Vec::with_capacity(net.layers.len());
    for (i, (layer, (in_shape, _))) in net.layers.iter().zip(&shapes).enumerate() {
        let dataflow = preferred_dataflow(layer.kind);
        let sched = map_layer(layer, *in_shape, cfg, dataflow)?;
        let view = sparsity_of(i);
        let counters = simulate_layer(&sched, cfg, view.as_ref(), None)?;
        per_layer.push(LayerTrace {
            index: i,
            kind: layer.kind.as_str().to_string(),
            dataflow,
            counters,
        });
    }
    Ok(aggregate(per_layer, cfg))
}

/// A compressed layer with the same geometry but every row stored (nothing
/// pruned), for isolating the access effect of structured sparsity.
fn densified(c: &CompressedLayer) -> CompressedLayer {
    let rows = vec![
        CmRow::Dense(vec![
            QCoeff::Pow2 {
                negative: false,
                exponent: 0
            };
            c.rank()
        ]);
        c.num_rows
    ];
    let cm = CoefficientMatrix {
        rows,
        rank: c.rank(),
        exponent_bits: c.exponent_bits,
        e_min: c.e_min,
        e_max: c.e_max,
    };
    rle_encode(c.bm.clone(), &cm).expect("densified view encodes")
}

/// Layer-by-layer simulation of a whole network (no cross-layer overlap:
/// cycles add). With compressed weights, dense and unpruned baselines are
/// also simulated for the access-reduction report.
pub fn simulate_network(
    net: &NetworkSpec,
    weights: Option<&[LayerWeights]>,
    cfg: &AccelConfig,
) -> Result<NetworkSimReport, SimError> {
    if let Some(w) = weights {
        if w.len() != net.layers.len() {
            return Err(SimError::SparsityMismatch {
                got: w.len(),
                expected: net.layers.len(),
            });
        }
    }
    let compressed_of = |i: usize| -> Option<CompressedLayer> {
        weights.and_then(|w| w[i].as_compressed().cloned())
    };
    let trace = run_network(net, compressed_of, cfg)?;

    let any_compressed = weights
        .map(|w| w.iter().any(|lw| lw.as_compressed().is_some()))
        .unwrap_or(false);
    if !any_compressed {
        return Ok(NetworkSimReport {
            trace,
            dense_trace: None,
            access_comparison: None,
        });
    }

    let dense_trace = run_network(net, |_| None, cfg)?;
    let unpruned_trace = run_network(
        net,
        |i| {
            weights
                .and_then(|w| w[i].as_compressed())
                .map(densified)
        },
        cfg,
    )?;

    let comp_w = trace.counters.gb_weight_reads;
    let comp_i = trace.counters.index_sram_reads;
    let unp_w = unpruned_trace.counters.gb_weight_reads;
    let unp_i = unpruned_trace.counters.index_sram_reads;
    let dense_w = dense_trace.counters.gb_weight_reads;
    let access_comparison = AccessComparison {
        dense_weight_reads: dense_w,
        compressed_weight_reads: comp_w,
        compressed_index_reads: comp_i,
        unpruned_weight_reads: unp_w,
        unpruned_index_reads: unp_i,
        reduction_from_pruning: 1.0 - (comp_w + comp_i) as f64 / (unp_w + unp_i) as f64,
        reduction_vs_dense: 1.0 - (comp_w + comp_i) as f64 / dense_w as f64,
    };
    Ok(NetworkSimReport {
        trace,
        dense_trace: Some(dense_trace),
        access_comparison: Some(access_comparison),
    })
}
