//! Layer-to-PE-line mapping for the three dataflows.

use serde::Serialize;

use super::{AccelConfig, Dataflow, SimError};
use crate::netspec::{layer_output_shape, LayerKind, LayerSpec, TensorShape};

/// One PE line's work item in a pass: an output channel and a contiguous
/// half-open output-row range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub pe_line: usize,
    pub channel: usize,
    pub row_start: usize,
    pub row_end: usize,
}

impl Assignment {
    pub fn rows(&self) -> usize {
        self.row_end - self.row_start
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Pass {
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerSchedule {
    pub layer: LayerSpec,
    pub in_shape: TensorShape,
    pub out_shape: TensorShape,
    pub dataflow: Dataflow,
    pub passes: Vec<Pass>,
}

/// Map a layer onto the PE lines.
///
/// `ConvInterChannel` (CONV/PW/FC): one output channel per line, all output
/// rows, ceil(Cout/lines) passes. `DwNaiveBaseline`: the same rule on a
/// DW layer, so at most C lines do useful work. `DwIntraChannel`: each DW
/// channel's output rows are split over floor(lines/C) lines; with more
/// channels than lines it degenerates to the naive mapping.
pub fn map_layer(
    layer: &LayerSpec,
    in_shape: TensorShape,
    cfg: &AccelConfig,
    dataflow: Dataflow,
) -> Result<LayerSchedule, SimError> {
    let is_dw = layer.kind == LayerKind::DwConv;
    match dataflow {
        Dataflow::ConvInterChannel if is_dw => {
            return Err(SimError::DataflowMismatch {
                dataflow,
                kind: layer.kind.as_str(),
            })
        }
        Dataflow::DwIntraChannel | Dataflow::DwNaiveBaseline if !is_dw => {
            return Err(SimError::DataflowMismatch {
                dataflow,
                kind: layer.kind.as_str(),
            })
        }
        _ => {}
    }
    let out_shape = layer_output_shape(layer, in_shape, 0)?;
    let lines = cfg.num_pe_lines;
    let channels = layer.cout;
    let h_out = out_shape.h;

    let mut passes = Vec::new();
    match dataflow {
        Dataflow::ConvInterChannel | Dataflow::DwNaiveBaseline => {
            for chunk_start in (0..channels).step_by(lines) {
                let chunk_end = (chunk_start + lines).min(channels);
                let assignments = (chunk_start..chunk_end)
                    .map(|ch| Assignment {
                        pe_line: ch - chunk_start,
                        channel: ch,
                        row_start: 0,
                        row_end: h_out,
                    })
                    .collect();
                passes.push(Pass { assignments });
            }
        }
        Dataflow::DwIntraChannel => {
            let group = (lines / channels).max(1);
            if group == 1 {
                // No spare lines for row spreading; identical to naive.
                for chunk_start in (0..channels).step_by(lines) {
                    let chunk_end = (chunk_start + lines).min(channels);
                    let assignments = (chunk_start..chunk_end)
                        .map(|ch| Assignment {
                            pe_line: ch - chunk_start,
                            channel: ch,
                            row_start: 0,
                            row_end: h_out,
                        })
                        .collect();
                    passes.push(Pass { assignments });
                }
            } else {
                let base = h_out / group;
                let rem = h_out % group;
                let mut assignments = Vec::new();
                for ch in 0..channels {
                    let mut row = 0usize;
                    for g in 0..group {
                        let take = base + usize::from(g < rem);
                        if take == 0 {
                            continue;
                        }
                        assignments.push(Assignment {
                            pe_line: ch * group + g,
                            channel: ch,
                            row_start: row,
                            row_end: row + take,
                        });
                        row += take;
                    }
                }
                passes.push(Pass { assignments });
            }
        }
    }
    if passes.iter().all(|p| p.assignments.is_empty()) {
        return Err(SimError::EmptyMapping);
    }
    Ok(LayerSchedule {
        layer: *layer,
        in_shape,
        out_shape,
        dataflow,
        passes,
    })
}
