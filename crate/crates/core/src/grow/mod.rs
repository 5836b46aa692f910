//! Bilateral region growing and the interactive stroke session.
//!
//! A voxel `x` joins the mask when its normalized neighborhood vote
//! `sum M(x_i) g_phi(|phi_i - phi_x|^2) g_s(|x_i - x|^2) / W` reaches `tau`,
//! where the sum runs over the occupied voxels of the 3x3x3 block around `x`
//! and `W` is the same sum without the mask term.

mod bilateral;
mod fill;
mod session;
mod stroke;

pub use bilateral::{
    bilateral_step, gaussian, grow, BilateralParams, GrowContext, GrowResult, DEFAULT_MAX_ITERS, DEFAULT_SIGMA,
    DEFAULT_TAU, DRAFT_SIGMA,
};
pub use fill::fill_cavities;
pub use session::{
    select_stroke, HistoryEntry, ReplayLog, SegmentParams, SegmentationSession, SessionRecord, StepStats,
    StrokeSelection, REPLAY_VERSION,
};
pub use stroke::{line_walk, Polarity, Stroke, DEFAULT_BRUSH_RADIUS};
