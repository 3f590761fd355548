//! Quantitative studies over denoisers and generated sequences.

pub mod gap;
pub mod lemma1;
pub mod sequence;
pub mod theorem1;

pub use gap::{
    ablation, ablation_violations, draw_gap_samples, relative_mse, AblationCell, ContextLayout,
    GapSample, RelativeMse,
};
pub use lemma1::{lemma1_trajectory, Trajectory};
pub use sequence::{consistency_metric, memory_account, motion_magnitude, Consistency, Motion};
pub use theorem1::{linear_fit, spread_levels, theorem1_sweep, SpreadPoint, SweepReport};
