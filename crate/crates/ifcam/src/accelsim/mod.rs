//! Cycle-approximate simulator of the eye-tracking compute chip: 64 PE lines
//! doing 1D row-stationary work, heterogeneous dataflows for CONV vs DW-CONV,
//! a sequential-write-parallel-read (SWPR) IFM staging buffer, two-level
//! memories, and structured-sparsity skipping driven by the compressed-layer
//! run-length index.
//!
//! Cycle model: one PE line finishes one kernel-row MAC batch per cycle
//! (a k-wide batch for CONV/DW-CONV taps, one MAC for PW-CONV/FC). Per-pass
//! cycles are the maximum line work in the pass; IFM fetch stalls and buffer
//! fill latency are accounted separately from compute cycles, and PE
//! utilization is `active_pe_line_cycles / (compute_cycles * num_pe_lines)`.
//!
//! Counter units: `gb_weight_reads` counts weight words (a dense stack row
//! costs d words, a fetched nonzero CM row costs r words; pruned rows cost
//! nothing). `bm_preload_words` counts the one-time basis-matrix load per
//! compressed layer and is kept out of the access-reduction metrics.
//! `gb_ifm_reads`/`gb_ofm_writes` count feature-map words. One index SRAM
//! read per run-length entry consumed. `restore_shift_adds` counts one
//! shift-add per restored output word per nonzero coefficient;
//! `local_reg_accesses` counts weight words delivered into PE-line registers.

mod schedule;
mod sim;

pub use schedule::{map_layer, Assignment, LayerSchedule, Pass};
pub use sim::{
    compare_dataflows, simulate_layer, simulate_network, AccessComparison, DataflowComparison,
    EventLog, EventRow, NetworkSimReport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::CompressError;
use crate::netspec::SpecError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error("dataflow {dataflow:?} incompatible with layer kind {kind}")]
    DataflowMismatch {
        dataflow: Dataflow,
        kind: &'static str,
    },
    #[error("schedule produced no assignments")]
    EmptyMapping,
    #[error("sparsity view has {got} rows, layer stacks to {expected}")]
    SparsityMismatch { got: usize, expected: usize },
}

/// Energy unit costs per event. The defaults are relative units with a
/// typical SRAM-to-MAC cost ratio; absolute joules are a caller concern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCosts {
    #[serde(default = "one")]
    pub e_mac: f64,
    #[serde(default = "six")]
    pub e_weight_gb: f64,
    #[serde(default = "six")]
    pub e_ifm_gb: f64,
    #[serde(default = "six")]
    pub e_ofm_gb: f64,
    #[serde(default = "one_point_five")]
    pub e_index_sram: f64,
    #[serde(default = "half")]
    pub e_local_reg: f64,
}

fn one() -> f64 {
    1.0
}
fn six() -> f64 {
    6.0
}
fn one_point_five() -> f64 {
    1.5
}
fn half() -> f64 {
    0.5
}

impl Default for EnergyCosts {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_pe_lines() -> usize {
    64
}
fn default_macs_per_line() -> usize {
    8
}
fn default_ifm_buffer_depth() -> usize {
    64
}
fn default_true() -> bool {
    true
}
fn default_weight_gb() -> usize {
    65536
}
fn default_fm_gb() -> usize {
    32768
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccelConfig {
    #[serde(default = "default_pe_lines")]
    pub num_pe_lines: usize,
    /// Kernel-width capacity of one PE line (MACs issued per cycle).
    #[serde(default = "default_macs_per_line")]
    pub macs_per_line: usize,
    /// SWPR staging buffer depth in words; filling it costs this many cycles
    /// once per pass.
    #[serde(default = "default_ifm_buffer_depth")]
    pub ifm_buffer_depth: usize,
    #[serde(default = "default_true")]
    pub swpr_enabled: bool,
    #[serde(default = "default_weight_gb")]
    pub weight_gb_words: usize,
    #[serde(default = "default_fm_gb")]
    pub ifm_gb_words: usize,
    #[serde(default = "default_fm_gb")]
    pub ofm_gb_words: usize,
    #[serde(default)]
    pub energy_costs: EnergyCosts,
}

impl Default for AccelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl AccelConfig {
    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// IFM words per cycle deliverable to the PE lines: the SWPR buffer is
/// written sequentially one word per cycle but read by two parallel ports,
/// doubling effective bandwidth.
pub fn swpr_throughput(cfg: &AccelConfig) -> u64 {
    if cfg.swpr_enabled {
        2
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataflow {
    /// Each PE line owns one output channel; a fetched IFM row is broadcast
    /// to every line (inter-channel reuse).
    ConvInterChannel,
    /// Output rows of each DW channel are spread over num_pe_lines/C lines
    /// (intra-channel reuse).
    DwIntraChannel,
    /// The CONV mapping applied to DW-CONV: one useful line per channel.
    DwNaiveBaseline,
}

/// Event counters for one layer or aggregated over a network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TraceCounters {
    pub compute_cycles: u64,
    pub ifm_stall_cycles: u64,
    pub fill_cycles: u64,
    /// compute + stall + fill.
    pub total_cycles: u64,
    pub active_pe_line_cycles: u64,
    /// active / (compute_cycles * num_pe_lines).
    pub utilization: f64,
    pub macs: u64,
    pub gb_weight_reads: u64,
    pub gb_ifm_reads: u64,
    pub gb_ofm_writes: u64,
    pub index_sram_reads: u64,
    pub bm_preload_words: u64,
    pub restore_shift_adds: u64,
    pub local_reg_accesses: u64,
    pub passes: u64,
    pub energy_total: f64,
}

impl TraceCounters {
    /// The energy event table; `energy_total` is exactly this sum.
    pub fn energy_from_events(&self, costs: &EnergyCosts) -> f64 {
        self.macs as f64 * costs.e_mac
            + self.gb_weight_reads as f64 * costs.e_weight_gb
            + self.bm_preload_words as f64 * costs.e_weight_gb
            + self.gb_ifm_reads as f64 * costs.e_ifm_gb
            + self.gb_ofm_writes as f64 * costs.e_ofm_gb
            + self.index_sram_reads as f64 * costs.e_index_sram
            + self.restore_shift_adds as f64 * costs.e_mac
            + self.local_reg_accesses as f64 * costs.e_local_reg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerTrace {
    pub index: usize,
    pub kind: String,
    pub dataflow: Dataflow,
    pub counters: TraceCounters,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimTrace {
    pub counters: TraceCounters,
    pub per_layer: Vec<LayerTrace>,
}

impl SimTrace {
    /// Flat CSV, one row per layer plus a totals row; fixed column order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,kind,dataflow,passes,compute_cycles,ifm_stall_cycles,fill_cycles,total_cycles,\
             active_pe_line_cycles,utilization,macs,gb_weight_reads,gb_ifm_reads,gb_ofm_writes,\
             index_sram_reads,bm_preload_words,restore_shift_adds,local_reg_accesses,energy_total\n",
        );
        let row = |label: &str, kind: &str, dataflow: &str, c: &TraceCounters| {
            format!(
                "{label},{kind},{dataflow},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.passes,
                c.compute_cycles,
                c.ifm_stall_cycles,
                c.fill_cycles,
                c.total_cycles,
                c.active_pe_line_cycles,
                c.utilization,
                c.macs,
                c.gb_weight_reads,
                c.gb_ifm_reads,
                c.gb_ofm_writes,
                c.index_sram_reads,
                c.bm_preload_words,
                c.restore_shift_adds,
                c.local_reg_accesses,
                c.energy_total
            )
        };
        for l in &self.per_layer {
            let df = serde_json::to_value(l.dataflow)
                .expect("dataflow serializes")
                .as_str()
                .unwrap()
                .to_string();
            out.push_str(&row(&l.index.to_string(), &l.kind, &df, &l.counters));
        }
        out.push_str(&row("total", "-", "-", &self.counters));
        out
    }
}
