//! Toolkit for modeling an ultra-compact lensless eye-tracking camera system:
//! a separable coded-mask imaging model with regularized reconstruction, a
//! unified weight-compression scheme (low-rank decomposition, power-of-2
//! quantization, structured row pruning, run-length indexed storage, bit-exact
//! shift-and-add restore), a cycle-approximate simulator of a 64-PE-line
//! accelerator with heterogeneous CONV/DW-CONV dataflows, and a
//! predict-then-focus gaze pipeline with exact FLOPs/energy accounting.

pub mod accelsim;
pub mod compress;
pub mod io;
pub mod lensless;
pub mod netspec;
pub mod pipeline;
pub mod presets;
pub mod seed;
