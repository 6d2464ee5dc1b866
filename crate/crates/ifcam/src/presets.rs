//! Shipped network presets.
//!
//! These two specs are representative stand-ins with the right layer
//! vocabulary (CONV/DW-CONV/PW-CONV stacks feeding small regression heads),
//! not reproductions of any particular trained model: "prediction-net" is a
//! small ROI regressor run on a 4x-downsampled frame, "gaze-net" a deeper
//! stack ending in a 2-output gaze regressor on the full 64x64 frame.

use crate::compress::CompressionConfig;
use crate::netspec::NetworkSpec;

pub const PREDICTION_NET_JSON: &str = include_str!("../../../presets/prediction-net.json");
pub const GAZE_NET_JSON: &str = include_str!("../../../presets/gaze-net.json");

/// The compression settings shipped with the gaze-net preset: rank capped by
/// the row count (wide FC stacks stay sane), a low-rank override for the big
/// FC layer, and the 50% structured-sparsity target.
pub fn gaze_net_compression() -> CompressionConfig {
    serde_json::from_str(
        r#"{
            "rank_policy": "half_d_cap_rows",
            "rank_overrides": { "8": 8 },
            "sparsity_target": 0.5
        }"#,
    )
    .expect("static config is valid")
}

pub fn prediction_net() -> NetworkSpec {
    NetworkSpec::from_json_str(PREDICTION_NET_JSON).expect("embedded preset is valid")
}

pub fn gaze_net() -> NetworkSpec {
    NetworkSpec::from_json_str(GAZE_NET_JSON).expect("embedded preset is valid")
}

pub fn by_name(name: &str) -> Option<NetworkSpec> {
    match name {
        "prediction-net" => Some(prediction_net()),
        "gaze-net" => Some(gaze_net()),
        _ => None,
    }
}
