//! Network description format and the FLOPs/parameter/storage accounting
//! shared by the compressor, the accelerator simulator, and the pipeline.
//!
//! Layer kinds are CONV, DW-CONV (depth-wise, one filter per channel),
//! PW-CONV (1x1, channel mixing), and FC. Pooling is expressed as a strided
//! convolution; biases and normalization parameters are excluded from all
//! accounting. One MAC is one multiply-accumulate; FLOPs are 2 x MACs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("invalid layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },
    #[error("invalid tensor shape: {0}")]
    InvalidShape(String),
    #[error("layer {index}: input channels {expected} expected, got {got}")]
    ChannelMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("layer {index}: output dimension collapses to zero (in {in_dim}, k {kernel}, stride {stride}, pad {padding})")]
    DegenerateOutput {
        index: usize,
        in_dim: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("network JSON: {0}")]
    Json(String),
}

/// Channels-height-width shape of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl TensorShape {
    pub fn new(c: usize, h: usize, w: usize) -> Result<Self, SpecError> {
        if c < 1 || h < 1 || w < 1 {
            return Err(SpecError::InvalidShape(format!(
                "all dimensions must be >= 1, got ({c}, {h}, {w})"
            )));
        }
        Ok(Self { c, h, w })
    }

    pub fn num_elements(&self) -> u64 {
        self.c as u64 * self.h as u64 * self.w as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "CONV")]
    Conv,
    #[serde(rename = "DW_CONV")]
    DwConv,
    #[serde(rename = "PW_CONV")]
    PwConv,
    #[serde(rename = "FC")]
    Fc,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv => "CONV",
            LayerKind::DwConv => "DW_CONV",
            LayerKind::PwConv => "PW_CONV",
            LayerKind::Fc => "FC",
        }
    }
}

/// Per-layer activation tag, used only by the functional executor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "none")]
    None,
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn is_default_activation(a: &Activation) -> bool {
    *a == Activation::Relu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Kernel size; PW_CONV must declare k = 1, FC ignores it.
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
    pub cout: usize,
    #[serde(
        default = "default_activation",
        skip_serializing_if = "is_default_activation"
    )]
    pub act: Activation,
}

impl LayerSpec {
    pub fn validate(&self, index: usize) -> Result<(), SpecError> {
        let fail = |reason: String| Err(SpecError::InvalidLayer { index, reason });
        if self.cin < 1 || self.cout < 1 {
            return fail("channel counts must be >= 1".into());
        }
        if self.k < 1 {
            return fail("kernel size must be >= 1".into());
        }
        if self.stride < 1 {
            return fail("stride must be >= 1".into());
        }
        match self.kind {
            LayerKind::DwConv if self.cin != self.cout => fail(format!(
                "DW_CONV requires in_channels == out_channels (got {} vs {})",
                self.cin, self.cout
            )),
            LayerKind::PwConv if self.k != 1 => {
                fail(format!("PW_CONV requires kernel_size == 1 (got {})", self.k))
            }
            _ => Ok(()),
        }
    }

    /// Weight parameter count (biases excluded).
    pub fn params(&self) -> u64 {
        let k2 = (self.k * self.k) as u64;
        match self.kind {
            LayerKind::Conv => k2 * self.cin as u64 * self.cout as u64,
            LayerKind::DwConv => k2 * self.cin as u64,
            LayerKind::PwConv | LayerKind::Fc => self.cin as u64 * self.cout as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub input_shape: TensorShape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn from_json_str(s: &str) -> Result<Self, SpecError> {
        let net: NetworkSpec =
            serde_json::from_str(s).map_err(|e| SpecError::Json(e.to_string()))?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("network spec serializes")
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.layers.is_empty() {
            return Err(SpecError::EmptyNetwork);
        }
        TensorShape::new(self.input_shape.c, self.input_shape.h, self.input_shape.w)?;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
        }
        infer_shapes(self).map(|_| ())
    }

    /// Total MAC count on the network's own input shape.
    pub fn total_macs(&self) -> Result<u64, SpecError> {
        macs_with_input_shape(self, self.input_shape)
    }
}

/// Output shape of a single layer applied to `input`.
///
/// Standard convolution arithmetic: out = floor((in + 2*pad - k)/stride) + 1.
/// FC maps any (c, h, w) with c*h*w == cin to (cout, 1, 1).
pub fn layer_output_shape(
    layer: &LayerSpec,
    input: TensorShape,
    index: usize,
) -> Result<TensorShape, SpecError> {
    layer.validate(index)?;
    match layer.kind {
        LayerKind::Fc => {
            let flat = input.c * input.h * input.w;
            if flat != layer.cin {
                return Err(SpecError::ChannelMismatch {
                    index,
                    expected: layer.cin,
                    got: flat,
                });
            }
            TensorShape::new(layer.cout, 1, 1)
        }
        _ => {
            if input.c != layer.cin {
                return Err(SpecError::ChannelMismatch {
                    index,
                    expected: layer.cin,
                    got: input.c,
                });
            }
            let out_dim = |in_dim: usize| -> Result<usize, SpecError> {
                let padded = in_dim + 2 * layer.pad;
                if padded < layer.k {
                    return Err(SpecError::DegenerateOutput {
                        index,
                        in_dim,
                        kernel: layer.k,
                        stride: layer.stride,
                        padding: layer.pad,
                    });
                }
                Ok((padded - layer.k) / layer.stride + 1)
            };
            TensorShape::new(layer.cout, out_dim(input.h)?, out_dim(input.w)?)
        }
    }
}

/// Propagate shapes through the network, returning (input, output) per layer.
pub fn infer_shapes(net: &NetworkSpec) -> Result<Vec<(TensorShape, TensorShape)>, SpecError> {
    if net.layers.is_empty() {
        return Err(SpecError::EmptyNetwork);
    }
    let mut shapes = Vec::with_capacity(net.layers.len());
    let mut cur = net.input_shape;
    for (i, layer) in net.layers.iter().enumerate() {
        let out = layer_output_shape(layer, cur, i)?;
        shapes.push((cur, out));
        cur = out;
    }
    Ok(shapes)
}

/// MAC count of one layer on the given input shape.
///
/// CONV: k^2*Cin*Cout*Hout*Wout; DW: k^2*C*Hout*Wout; PW: Cin*Cout*Hout*Wout;
/// FC: Cin*Cout.
pub fn layer_flops(layer: &LayerSpec, input: TensorShape) -> Result<u64, SpecError> {
    let out = layer_output_shape(layer, input, 0)?;
    let spatial = out.h as u64 * out.w as u64;
    let k2 = (layer.k * layer.k) as u64;
    Ok(match layer.kind {
        LayerKind::Conv => k2 * layer.cin as u64 * layer.cout as u64 * spatial,
        LayerKind::DwConv => k2 * layer.cin as u64 * spatial,
        LayerKind::PwConv => layer.cin as u64 * layer.cout as u64 * spatial,
        LayerKind::Fc => layer.cin as u64 * layer.cout as u64,
    })
}

/// FLOPs convention: one MAC counts as two floating-point operations.
pub fn macs_to_flops(macs: u64) -> u64 {
    2 * macs
}

/// Total network MACs for an arbitrary input shape.
///
/// Spatial dimensions propagate through the convolutional layers; FC layers
/// always contribute their declared Cin*Cout regardless of the incoming
/// spatial size (and reset the running shape to (cout, 1, 1)). This is the
/// accounting rule for cropped region-of-interest inputs.
pub fn macs_with_input_shape(net: &NetworkSpec, input: TensorShape) -> Result<u64, SpecError> {
    if net.layers.is_empty() {
        return Err(SpecError::EmptyNetwork);
    }
    let mut cur = input;
    let mut total: u64 = 0;
    for (i, layer) in net.layers.iter().enumerate() {
        match layer.kind {
            LayerKind::Fc => {
                total += layer.cin as u64 * layer.cout as u64;
                cur = TensorShape::new(layer.cout, 1, 1)?;
            }
            _ => {
                if cur.c != layer.cin {
                    return Err(SpecError::ChannelMismatch {
                        index: i,
                        expected: layer.cin,
                        got: cur.c,
                    });
                }
                total += layer_flops(layer, cur)?;
                cur = layer_output_shape(layer, cur, i)?;
            }
        }
    }
    Ok(total)
}

/// Dense storage footprint: total weight parameters times `weight_bits`.
pub fn dense_storage_bits(net: &NetworkSpec, weight_bits: u32) -> u64 {
    net.layers
        .iter()
        .map(|l| l.params() * weight_bits as u64)
        .sum()
}

/// Expected dense weight tensor shape for a layer.
///
/// CONV: [cout, cin, k, k]; DW: [c, 1, k, k]; PW: [cout, cin, 1, 1];
/// FC: [cout, cin].
pub fn weight_tensor_shape(layer: &LayerSpec) -> Vec<usize> {
    match layer.kind {
        LayerKind::Conv => vec![layer.cout, layer.cin, layer.k, layer.k],
        LayerKind::DwConv => vec![layer.cout, 1, layer.k, layer.k],
        LayerKind::PwConv => vec![layer.cout, layer.cin, 1, 1],
        LayerKind::Fc => vec![layer.cout, layer.cin],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(k: usize, stride: usize, pad: usize, cin: usize, cout: usize) -> LayerSpec {
        LayerSpec {
            kind: LayerKind::Conv,
            k,
            stride,
            pad,
            cin,
            cout,
            act: Activation::Relu,
        }
    }

    fn shape(c: usize, h: usize, w: usize) -> TensorShape {
        TensorShape::new(c, h, w).unwrap()
    }

    /// Oracle: count valid window positions of a k-wide kernel over a padded
    /// 1-D extent by direct enumeration.
    fn enumerate_positions(in_dim: usize, k: usize, stride: usize, pad: usize) -> usize {
        let padded = in_dim + 2 * pad;
        let mut count = 0;
        let mut start = 0;
        while start + k <= padded {
            count += 1;
            start += stride;
        }
        count
    }

    /// Oracle: brute-force MAC counter looping over every output position and
    /// kernel tap, independent of the closed-form accounting.
    fn brute_force_macs(layer: &LayerSpec, input: TensorShape) -> u64 {
        let out = layer_output_shape(layer, input, 0).unwrap();
        let mut macs = 0u64;
        match layer.kind {
            LayerKind::Fc => {
                for _o in 0..layer.cout {
                    for _i in 0..layer.cin {
                        macs += 1;
                    }
                }
            }
            LayerKind::Conv => {
                for _co in 0..layer.cout {
                    for _y in 0..out.h {
                        for _x in 0..out.w {
                            for _ci in 0..layer.cin {
                                for _ky in 0..layer.k {
                                    for _kx in 0..layer.k {
                                        macs += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::DwConv => {
                for _c in 0..layer.cin {
                    for _y in 0..out.h {
                        for _x in 0..out.w {
                            for _ky in 0..layer.k {
                                for _kx in 0..layer.k {
                                    macs += 1;
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::PwConv => {
                for _co in 0..layer.cout {
                    for _y in 0..out.h {
                        for _x in 0..out.w {
                            for _ci in 0..layer.cin {
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
        macs
    }

    #[test]
    fn same_padding_identity_case() {
        let out = layer_output_shape(&conv(3, 1, 1, 1, 8), shape(1, 32, 32), 0).unwrap();
        assert_eq!(out, shape(8, 32, 32));
    }

    #[test]
    fn strided_output_matches_window_enumeration() {
        let out = layer_output_shape(&conv(3, 2, 0, 8, 8), shape(8, 32, 32), 0).unwrap();
        assert_eq!(out.h, 15);
        assert_eq!(out.w, 15);
        assert_eq!(out.h, enumerate_positions(32, 3, 2, 0));
        // A sweep of geometries against the enumeration oracle.
        for in_dim in 1..20 {
            for k in 1..=5 {
                for stride in 1..=3 {
                    for pad in 0..=2 {
                        if in_dim + 2 * pad < k {
                            continue;
                        }
                        let got =
                            layer_output_shape(&conv(k, stride, pad, 1, 1), shape(1, in_dim, in_dim), 0)
                                .unwrap();
                        assert_eq!(got.h, enumerate_positions(in_dim, k, stride, pad));
                    }
                }
            }
        }
    }

    #[test]
    fn dw_channel_mismatch_rejected() {
        let layer = LayerSpec {
            kind: LayerKind::DwConv,
            k: 3,
            stride: 1,
            pad: 0,
            cin: 8,
            cout: 16,
            act: Activation::Relu,
        };
        assert!(layer_output_shape(&layer, shape(8, 15, 15), 0).is_err());
    }

    #[test]
    fn degenerate_output_rejected() {
        assert!(matches!(
            layer_output_shape(&conv(5, 1, 0, 1, 1), shape(1, 3, 3), 0),
            Err(SpecError::DegenerateOutput { .. })
        ));
    }

    #[test]
    fn flops_match_brute_force_counter() {
        // Frozen example values computed with the brute-force oracle.
        let l = conv(3, 1, 1, 1, 8);
        let input = shape(1, 32, 32);
        assert_eq!(brute_force_macs(&l, input), 73_728);
        assert_eq!(layer_flops(&l, input).unwrap(), 73_728);

        let dw = LayerSpec {
            kind: LayerKind::DwConv,
            k: 3,
            stride: 1,
            pad: 1,
            cin: 8,
            cout: 8,
            act: Activation::Relu,
        };
        let input = shape(8, 16, 16);
        assert_eq!(brute_force_macs(&dw, input), 18_432);
        assert_eq!(layer_flops(&dw, input).unwrap(), 18_432);

        let fc = LayerSpec {
            kind: LayerKind::Fc,
            k: 1,
            stride: 1,
            pad: 0,
            cin: 64,
            cout: 2,
            act: Activation::None,
        };
        assert_eq!(layer_flops(&fc, shape(64, 1, 1)).unwrap(), 128);

        // Random-geometry cross-check against the oracle.
        let cases = [
            conv(3, 2, 1, 3, 5),
            conv(5, 1, 2, 2, 7),
            LayerSpec {
                kind: LayerKind::PwConv,
                k: 1,
                stride: 1,
                pad: 0,
                cin: 6,
                cout: 9,
                act: Activation::Relu,
            },
            LayerSpec {
                kind: LayerKind::DwConv,
                k: 3,
                stride: 2,
                pad: 1,
                cin: 4,
                cout: 4,
                act: Activation::Relu,
            },
        ];
        for l in &cases {
            let input = shape(l.cin, 13, 11);
            assert_eq!(layer_flops(l, input).unwrap(), brute_force_macs(l, input));
        }
    }

    #[test]
    fn storage_bits_examples() {
        let pw = LayerSpec {
            kind: LayerKind::PwConv,
            k: 1,
            stride: 1,
            pad: 0,
            cin: 16,
            cout: 32,
            act: Activation::Relu,
        };
        let net = NetworkSpec {
            name: "pw".into(),
            input_shape: shape(16, 4, 4),
            layers: vec![pw],
        };
        assert_eq!(dense_storage_bits(&net, 8), 4096);

        let fc = LayerSpec {
            kind: LayerKind::Fc,
            k: 1,
            stride: 1,
            pad: 0,
            cin: 64,
            cout: 2,
            act: Activation::None,
        };
        let net = NetworkSpec {
            name: "fc".into(),
            input_shape: shape(64, 1, 1),
            layers: vec![fc],
        };
        assert_eq!(dense_storage_bits(&net, 8), 1024);

        // Two-layer parameter enumeration: CONV(k=3, 1->8) has 72 weights,
        // FC(8->2) has 16; at 8 bits that is 704 bits total.
        let net = NetworkSpec {
            name: "two".into(),
            input_shape: shape(1, 4, 4),
            layers: vec![
                conv(3, 1, 1, 1, 8),
                LayerSpec {
                    kind: LayerKind::Fc,
                    k: 1,
                    stride: 1,
                    pad: 0,
                    cin: 128,
                    cout: 2,
                    act: Activation::None,
                },
            ],
        };
        let conv_params: u64 = 3 * 3 * 1 * 8;
        let fc_params: u64 = 128 * 2;
        assert_eq!(
            dense_storage_bits(&net, 8),
            (conv_params + fc_params) * 8
        );
        // Linearity in weight_bits.
        for bits in [1u32, 4, 8, 16] {
            assert_eq!(
                dense_storage_bits(&net, bits),
                (conv_params + fc_params) * bits as u64
            );
        }
    }

    #[test]
    fn prefix_suffix_inference_composes() {
        let net = NetworkSpec {
            name: "chain".into(),
            input_shape: shape(1, 32, 32),
            layers: vec![
                conv(3, 2, 1, 1, 8),
                LayerSpec {
                    kind: LayerKind::DwConv,
                    k: 3,
                    stride: 1,
                    pad: 1,
                    cin: 8,
                    cout: 8,
                    act: Activation::Relu,
                },
                LayerSpec {
                    kind: LayerKind::PwConv,
                    k: 1,
                    stride: 1,
                    pad: 0,
                    cin: 8,
                    cout: 16,
                    act: Activation::Relu,
                },
                conv(3, 2, 1, 16, 16),
            ],
        };
        let whole = infer_shapes(&net).unwrap();
        for split in 1..net.layers.len() {
            let prefix = NetworkSpec {
                name: "p".into(),
                input_shape: net.input_shape,
                layers: net.layers[..split].to_vec(),
            };
            let pre_shapes = infer_shapes(&prefix).unwrap();
            let suffix = NetworkSpec {
                name: "s".into(),
                input_shape: pre_shapes.last().unwrap().1,
                layers: net.layers[split..].to_vec(),
            };
            let suf_shapes = infer_shapes(&suffix).unwrap();
            let glued: Vec<_> = pre_shapes.into_iter().chain(suf_shapes).collect();
            assert_eq!(glued, whole);
        }
    }

    #[test]
    fn json_round_trip_and_unknown_field_rejection() {
        let json = r#"{
            "name": "tiny",
            "input_shape": {"c": 1, "h": 8, "w": 8},
            "layers": [
                {"kind": "CONV", "k": 3, "stride": 1, "pad": 1, "cin": 1, "cout": 4},
                {"kind": "FC", "k": 1, "stride": 1, "pad": 0, "cin": 256, "cout": 2, "act": "none"}
            ]
        }"#;
        let net = NetworkSpec::from_json_str(json).unwrap();
        assert_eq!(net.layers[0].act, Activation::Relu);
        assert_eq!(net.layers[1].act, Activation::None);
        let round = NetworkSpec::from_json_str(&net.to_json_string()).unwrap();
        assert_eq!(round, net);

        let bad = json.replace("\"stride\": 1", "\"stride\": 1, \"bogus\": 7");
        assert!(matches!(
            NetworkSpec::from_json_str(&bad),
            Err(SpecError::Json(_))
        ));
    }

    #[test]
    fn pw_kernel_invariant_enforced() {
        let json = r#"{
            "name": "bad",
            "input_shape": {"c": 4, "h": 8, "w": 8},
            "layers": [{"kind": "PW_CONV", "k": 3, "stride": 1, "pad": 0, "cin": 4, "cout": 4}]
        }"#;
        assert!(NetworkSpec::from_json_str(json).is_err());
    }
}
