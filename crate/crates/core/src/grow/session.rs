use serde::{Deserialize, Serialize};

use super::bilateral::{BilateralParams, GrowContext, GrowResult};
use super::fill::fill_cavities;
use super::stroke::{Polarity, Stroke};
use crate::error::{Error, Result};
use crate::field::VoxelField;
use crate::grid::Bitmap3D;
use crate::render::{Decoder, FieldSource, RenderOptions};
use crate::semantic::{collect_stroke_features, kmeans, nnfm_seed, ExemplarSet, Metric, SeedThreshold, DEFAULT_K};

pub const REPLAY_VERSION: u32 = 1;

/// Everything that controls how one stroke becomes a voxel selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    pub k: usize,
    pub kmeans_seed: u64,
    pub seed_threshold: SeedThreshold,
    pub metric: Metric,
    pub bilateral: BilateralParams,
    /// Close enclosed holes in the grown mask. Off by default.
    pub fill_cavities: bool,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            kmeans_seed: 0,
            seed_threshold: SeedThreshold::default(),
            metric: Metric::Euclidean,
            bilateral: BilateralParams::default(),
            fill_cavities: false,
        }
    }
}

/// Intermediate products of the stroke pipeline.
#[derive(Clone, Debug)]
pub struct StrokeSelection {
    pub pixels: usize,
    pub features: usize,
    pub exemplars: ExemplarSet,
    pub seed: Bitmap3D,
    pub threshold: f64,
    pub grown: GrowResult,
}

/// Rasterize, collect rendered features, condense with K-Means, seed by
/// nearest-exemplar matching and grow. Fewer features than `k` lower `k`.
pub fn select_stroke(
    field: &VoxelField,
    decoder: &Decoder,
    stroke: &Stroke,
    params: &SegmentParams,
    opts: &RenderOptions,
) -> Result<StrokeSelection> {
    if params.k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    params.bilateral.validate()?;
    let pixels = stroke.rasterize()?;
    let source = FieldSource::new(field, decoder);
    let features = collect_stroke_features(&source, &stroke.camera, &pixels, opts)?;
    let k = params.k.min(features.len());
    let exemplars = kmeans(&features, k, params.kmeans_seed)?.exemplars;
    let seed = nnfm_seed(field, &exemplars, params.seed_threshold, params.bilateral.occupancy_alpha, params.metric)?;
    let ctx = GrowContext::new(field, &params.bilateral)?;
    let mut grown = ctx.grow(&seed.seed, params.bilateral.max_iters)?;
    if params.fill_cavities {
        grown.mask = fill_cavities(&grown.mask);
    }
    Ok(StrokeSelection {
        pixels: pixels.len(),
        features: features.len(),
        exemplars,
        seed: seed.seed,
        threshold: seed.threshold,
        grown,
    })
}

/// One replayable user action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum SessionRecord {
    Stroke {
        stroke: Stroke,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<SegmentParams>,
    },
    Grow {
        extra_iters: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<BilateralParams>,
    },
    Undo,
}

/// Ordered action log that reproduces a session headlessly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayLog {
    pub version: u32,
    pub records: Vec<SessionRecord>,
}

impl ReplayLog {
    pub fn new(records: Vec<SessionRecord>) -> Self {
        Self { version: REPLAY_VERSION, records }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let log: ReplayLog = serde_json::from_str(text).map_err(|e| Error::format("replay log", e))?;
        if log.version != REPLAY_VERSION {
            return Err(Error::VersionMismatch { found: log.version, expected: REPLAY_VERSION });
        }
        Ok(log)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("replay log serializes")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    /// Voxels added (positive) or removed (negative) by the step.
    pub changed: usize,
    pub iterations: usize,
    pub mask_voxels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub record: SessionRecord,
    /// Selection produced by the step before combination.
    pub selection: Bitmap3D,
    pub mask: Bitmap3D,
    pub stats: StepStats,
}

/// Stroke history over one scene with undo.
#[derive(Clone, Debug)]
pub struct SegmentationSession {
    empty: Bitmap3D,
    history: Vec<HistoryEntry>,
    log: Vec<SessionRecord>,
}

impl SegmentationSession {
    pub fn new(field: &VoxelField) -> Self {
        Self { empty: Bitmap3D::empty(field.geometry().clone()), history: Vec::new(), log: Vec::new() }
    }

    pub fn current(&self) -> &Bitmap3D {
        self.history.last().map_or(&self.empty, |h| &h.mask)
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Every successful action so far, undo included.
    pub fn log(&self) -> ReplayLog {
        ReplayLog::new(self.log.clone())
    }

    pub fn stats(&self) -> StepStats {
        self.history.last().map_or(StepStats::default(), |h| h.stats)
    }

    fn combine(current: &Bitmap3D, selection: &Bitmap3D, polarity: Polarity) -> Result<(Bitmap3D, usize)> {
        let before = current.count_ones();
        let next = match polarity {
            Polarity::Positive => current.union(selection)?,
            Polarity::Negative => current.subtract(selection)?,
        };
        let after = next.count_ones();
        Ok((next, after.abs_diff(before)))
    }

    /// Runs the stroke pipeline and merges the result; on error the session
    /// is left untouched.
    pub fn apply_stroke(
        &mut self,
        field: &VoxelField,
        decoder: &Decoder,
        stroke: &Stroke,
        params: &SegmentParams,
        opts: &RenderOptions,
    ) -> Result<StepStats> {
        self.empty.geometry().ensure_same(field.geometry(), "session vs scene")?;
        let sel = select_stroke(field, decoder, stroke, params, opts)?;
        let (mask, changed) = Self::combine(self.current(), &sel.grown.mask, stroke.polarity)?;
        let stats = StepStats { changed, iterations: sel.grown.iterations, mask_voxels: mask.count_ones() };
        let record = SessionRecord::Stroke { stroke: stroke.clone(), params: Some(params.clone()) };
        self.log.push(record.clone());
        self.history.push(HistoryEntry { record, selection: sel.grown.mask, mask, stats });
        Ok(stats)
    }

    /// Continues bilateral growth of the current mask for up to `extra_iters` steps.
    pub fn grow_more(&mut self, field: &VoxelField, extra_iters: usize, params: &BilateralParams) -> Result<StepStats> {
        self.empty.geometry().ensure_same(field.geometry(), "session vs scene")?;
        let ctx = GrowContext::new(field, params)?;
        let grown = ctx.grow(self.current(), extra_iters)?;
        let (mask, changed) = Self::combine(self.current(), &grown.mask, Polarity::Positive)?;
        let stats = StepStats { changed, iterations: grown.iterations, mask_voxels: mask.count_ones() };
        let record = SessionRecord::Grow { extra_iters, params: Some(params.clone()) };
        self.log.push(record.clone());
        self.history.push(HistoryEntry { record, selection: grown.mask, mask, stats });
        Ok(stats)
    }

    /// Drops the last step; returns the stats of the restored state.
    pub fn undo(&mut self) -> Result<StepStats> {
        self.history.pop().ok_or(Error::NothingToUndo)?;
        self.log.push(SessionRecord::Undo);
        Ok(StepStats { mask_voxels: self.current().count_ones(), ..self.stats() })
    }

    /// Applies one record; records without params use `defaults`.
    pub fn apply_record(
        &mut self,
        field: &VoxelField,
        decoder: &Decoder,
        record: &SessionRecord,
        defaults: &SegmentParams,
        opts: &RenderOptions,
    ) -> Result<StepStats> {
        match record {
            SessionRecord::Stroke { stroke, params } => {
                self.apply_stroke(field, decoder, stroke, params.as_ref().unwrap_or(defaults), opts)
            }
            SessionRecord::Grow { extra_iters, params } => {
                self.grow_more(field, *extra_iters, params.as_ref().unwrap_or(&defaults.bilateral))
            }
            SessionRecord::Undo => self.undo(),
        }
    }

    /// Rebuilds a session from a log.
    pub fn replay(
        field: &VoxelField,
        decoder: &Decoder,
        log: &ReplayLog,
        defaults: &SegmentParams,
        opts: &RenderOptions,
    ) -> Result<Self> {
        let mut session = Self::new(field);
        for record in &log.records {
            session.apply_record(field, decoder, record, defaults, opts)?;
        }
        Ok(session)
    }
}
