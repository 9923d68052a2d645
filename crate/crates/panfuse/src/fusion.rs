//! Panoptic fusion: merges instance proposals and a semantic map into
//! one non-overlapping panoptic map.
//!
//! Proposals are visited in decreasing confidence. Each claims its
//! pixels minus everything already assigned, then may reclaim pixels
//! from earlier segments it occludes, where occlusion is answered by a
//! pluggable predictor for appreciably overlapping pairs. A proposal
//! left mostly covered is skipped, but any reclaiming it performed
//! stands. Unassigned pixels are then merged per stuff class when
//! large enough; the rest stays void.

use serde::Serialize;

use crate::mask::{BinaryMask, BoundingBox, ImageGrid, MaskError};
use crate::occlusion::{OcclusionError, OcclusionPredictor};
use crate::scene::{
    confidence_order, ClassCatalog, PanopticMap, Scene, SceneError, SegmentInfo, SemanticMap,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Occlusion(#[from] OcclusionError),
    #[error("parameter {name} = {value} must be {range}")]
    InvalidParam { name: &'static str, value: f64, range: &'static str },
    #[error("proposal {0} has an empty mask")]
    EmptyProposal(u32),
    #[error("duplicate proposal id {0}")]
    DuplicateProposal(u32),
    #[error("proposal {id} confidence {confidence} is not a finite value in [0, 1]")]
    InvalidConfidence { id: u32, confidence: f64 },
    #[error("proposal {id} has class {class_id}, which is not a thing class")]
    NotAThing { id: u32, class_id: u32 },
    #[error("predictor answered both orders of proposals {first} and {second} identically")]
    PredictorContract { first: u32, second: u32 },
    #[error("segment for class {class_id} overlaps already assigned pixels")]
    OverlappingSegment { class_id: u32 },
    #[error("class {0} is not a stuff class")]
    NotStuff(u32),
    #[error("panoptic map ran out of segment ids")]
    SegmentIdExhausted,
}

/// Which proposal pairs may consult the occlusion predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionScope {
    /// Every appreciably overlapping pair.
    All,
    /// Only pairs of different classes; same-class pairs resolve by
    /// plain confidence order, as in the baseline.
    InterClassOnly,
}

/// How the mostly-covered skip test reads the overlap threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipConvention {
    /// Skip when the covered fraction of the mask exceeds the
    /// threshold.
    OverlapRatio,
    /// Skip when the still-claimable fraction of the mask is at or
    /// below the threshold.
    RemainingFraction,
}

/// Fusion hyperparameters. Defaults follow the COCO profile;
/// [`FusionParams::cityscapes`] gives the other standard profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FusionParams {
    /// Proposals below this confidence are dropped outright.
    pub confidence_min: f64,
    /// Threshold for the mostly-covered skip test.
    pub overlap_threshold: f64,
    /// Minimum overlap ratio for a pair to count as appreciable and
    /// reach the occlusion predictor.
    pub occlusion_ratio: f64,
    /// Minimum unassigned pixel count for a stuff class to form a
    /// segment.
    pub min_stuff_area: u64,
    pub skip_convention: SkipConvention,
    pub scope: OcclusionScope,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            confidence_min: 0.5,
            overlap_threshold: 0.5,
            occlusion_ratio: 0.2,
            min_stuff_area: 4096,
            skip_convention: SkipConvention::OverlapRatio,
            scope: OcclusionScope::All,
        }
    }
}

impl FusionParams {
    /// Profile used for street scenes: stricter confidence and overlap
    /// thresholds, a lower appreciable-overlap bar, smaller stuff
    /// segments allowed.
    pub fn cityscapes() -> Self {
        FusionParams {
            confidence_min: 0.6,
            overlap_threshold: 0.6,
            occlusion_ratio: 0.1,
            min_stuff_area: 2048,
            ..FusionParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let unit = |name: &'static str, value: f64| -> Result<(), FusionError> {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(FusionError::InvalidParam { name, value, range: "in [0, 1]" });
            }
            Ok(())
        };
        unit("confidence_min", self.confidence_min)?;
        unit("overlap_threshold", self.overlap_threshold)?;
        if !self.occlusion_ratio.is_finite()
            || self.occlusion_ratio <= 0.0
            || self.occlusion_ratio > 1.0
        {
            return Err(FusionError::InvalidParam {
                name: "occlusion_ratio",
                value: self.occlusion_ratio,
                range: "in (0, 1]",
            });
        }
        Ok(())
    }
}

/// One predictor consultation during fusion, with its effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OcclusionQuery {
    /// Proposal currently merging.
    pub of: u32,
    /// Earlier, already-merged proposal.
    pub against: u32,
    /// Predictor answer: the merging proposal is on top.
    pub occludes: bool,
    /// Pixels taken back from the earlier segment.
    pub reclaimed: u64,
}

/// Why a proposal was kept or dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionReason {
    Kept,
    BelowConfidenceMin {
        confidence: f64,
        threshold: f64,
    },
    /// Failed the mostly-covered skip test. `fraction` is the measured
    /// quantity under the active skip convention.
    Covered {
        fraction: f64,
        threshold: f64,
    },
}

/// Fate of one proposal in merge order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalRecord {
    pub proposal_id: u32,
    pub class_id: u32,
    pub confidence: f64,
    pub kept: bool,
    pub reason: DecisionReason,
    /// Claimable pixels before and after reclaiming.
    pub claimed_before: u64,
    pub claimed_after: u64,
    /// Segment id in the output map, for kept proposals that still own
    /// pixels at the end.
    pub segment_id: Option<u32>,
    /// Pixels owned in the output map.
    pub final_area: u64,
    pub queries: Vec<OcclusionQuery>,
}

/// One stuff segment produced by the merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StuffRecord {
    pub segment_id: u32,
    pub class_id: u32,
    pub area: u64,
}

/// Full audit of one fusion run, serializable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionTrace {
    pub image_id: u64,
    pub params: FusionParams,
    pub records: Vec<ProposalRecord>,
    pub stuff: Vec<StuffRecord>,
    pub void_pixels: u64,
}

/// Aggregate counters of a trace, for corpus-level reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceSummary {
    pub image_id: u64,
    pub proposals: usize,
    pub kept: usize,
    pub skipped_confidence: usize,
    pub skipped_covered: usize,
    pub occlusion_queries: usize,
    pub reclaims: usize,
    pub reclaimed_pixels: u64,
    pub stuff_segments: usize,
    pub void_pixels: u64,
}

impl TraceSummary {
    pub fn from_trace(trace: &FusionTrace) -> Self {
        let mut s = TraceSummary {
            image_id: trace.image_id,
            proposals: trace.records.len(),
            kept: 0,
            skipped_confidence: 0,
            skipped_covered: 0,
            occlusion_queries: 0,
            reclaims: 0,
            reclaimed_pixels: 0,
            stuff_segments: trace.stuff.len(),
            void_pixels: trace.void_pixels,
        };
        for r in &trace.records {
            match r.reason {
                DecisionReason::Kept => s.kept += 1,
                DecisionReason::BelowConfidenceMin { .. } => s.skipped_confidence += 1,
                DecisionReason::Covered { .. } => s.skipped_covered += 1,
            }
            s.occlusion_queries += r.queries.len();
            for q in &r.queries {
                if q.reclaimed > 0 {
                    s.reclaims += 1;
                    s.reclaimed_pixels += q.reclaimed;
                }
            }
        }
        s
    }
}

/// Incrementally paints non-overlapping segments onto a void canvas
/// and finishes into a validated panoptic map.
pub struct PanopticBuilder<'a> {
    grid: ImageGrid,
    catalog: &'a ClassCatalog,
    pixels: Vec<u32>,
    segments: Vec<SegmentInfo>,
    assigned: BinaryMask,
    next_id: u32,
}

impl<'a> PanopticBuilder<'a> {
    pub fn new(grid: ImageGrid, catalog: &'a ClassCatalog) -> Self {
        PanopticBuilder {
            grid,
            catalog,
            pixels: vec![0; grid.pixel_count() as usize],
            segments: Vec::new(),
            assigned: BinaryMask::empty(grid),
            next_id: 1,
        }
    }

    /// Pixels already owned by some segment.
    pub fn assigned(&self) -> &BinaryMask {
        &self.assigned
    }

    fn paint(&mut self, mask: &BinaryMask, id: u32) {
        for run in mask.runs() {
            let s = run.start as usize;
            self.pixels[s..s + run.len as usize].fill(id);
        }
    }

    fn take_id(&mut self) -> Result<u32, FusionError> {
        let id = self.next_id;
        self.next_id = self.next_id.checked_add(1).ok_or(FusionError::SegmentIdExhausted)?;
        Ok(id)
    }

    /// Adds a thing segment owning exactly `mask`, which must be
    /// nonempty and disjoint from everything already painted. Returns
    /// the new segment id.
    pub fn push_thing(
        &mut self,
        class_id: u32,
        source_proposal: u32,
        mask: &BinaryMask,
    ) -> Result<u32, FusionError> {
        if self.catalog.is_thing(class_id) != Some(true) {
            return Err(FusionError::NotAThing { id: source_proposal, class_id });
        }
        if mask.is_empty() {
            return Err(FusionError::EmptyProposal(source_proposal));
        }
        if self.assigned.intersection_area(mask)? != 0 {
            return Err(FusionError::OverlappingSegment { class_id });
        }
        let id = self.take_id()?;
        self.paint(mask, id);
        self.assigned = self.assigned.union(mask)?;
        self.segments.push(SegmentInfo {
            id,
            category_id: class_id,
            is_thing: true,
            source_proposal: Some(source_proposal),
        });
        Ok(id)
    }

    /// Merges stuff classes over the still-unassigned pixels, ascending
    /// by class id: each stuff class whose unassigned pixels reach
    /// `min_stuff_area` becomes one segment. Returns the new records.
    pub fn merge_stuff(
        &mut self,
        semantic: &SemanticMap,
        min_stuff_area: u64,
    ) -> Result<Vec<StuffRecord>, FusionError> {
        if semantic.grid() != self.grid {
            return Err(MaskError::GridMismatch { left: semantic.grid(), right: self.grid }.into());
        }
        let mut records = Vec::new();
        for class_id in self.catalog.stuff_ids().collect::<Vec<_>>() {
            let mask = semantic.class_mask(class_id).subtract(&self.assigned)?;
            let area = mask.area();
            if area == 0 || area < min_stuff_area {
                continue;
            }
            let id = self.take_id()?;
            self.paint(&mask, id);
            self.assigned = self.assigned.union(&mask)?;
            self.segments.push(SegmentInfo {
                id,
                category_id: class_id,
                is_thing: false,
                source_proposal: None,
            });
            records.push(StuffRecord { segment_id: id, class_id, area });
        }
        Ok(records)
    }

    pub fn finish(self) -> Result<PanopticMap, FusionError> {
        Ok(PanopticMap::new(self.grid, self.pixels, self.segments)?)
    }
}

struct MergedProposal {
    index: usize,
    bbox: BoundingBox,
    claimed: BinaryMask,
    record: usize,
}

/// Baseline fusion: pure confidence order, no reclaiming.
pub fn fuse_by_confidence(
    scene: &Scene,
    params: &FusionParams,
) -> Result<(PanopticMap, FusionTrace), FusionError> {
    fuse_impl(scene, params, None)
}

/// Occlusion-aware fusion: appreciably overlapping pairs consult the
/// predictor, and a proposal judged on top reclaims the contested
/// pixels from the earlier segment.
pub fn fuse_with_occlusion(
    scene: &Scene,
    params: &FusionParams,
    predictor: &dyn OcclusionPredictor,
) -> Result<(PanopticMap, FusionTrace), FusionError> {
    fuse_impl(scene, params, Some(predictor))
}

fn check_proposals(scene: &Scene) -> Result<(), FusionError> {
    let mut seen = std::collections::HashSet::new();
    for p in &scene.proposals {
        if !seen.insert(p.id) {
            return Err(FusionError::DuplicateProposal(p.id));
        }
        if p.mask.grid() != scene.grid {
            return Err(MaskError::GridMismatch { left: p.mask.grid(), right: scene.grid }.into());
        }
        if p.mask.is_empty() {
            return Err(FusionError::EmptyProposal(p.id));
        }
        if !p.confidence.is_finite() || !(0.0..=1.0).contains(&p.confidence) {
            return Err(FusionError::InvalidConfidence { id: p.id, confidence: p.confidence });
        }
        if scene.catalog.is_thing(p.class_id) != Some(true) {
            return Err(FusionError::NotAThing { id: p.id, class_id: p.class_id });
        }
    }
    Ok(())
}

fn fuse_impl(
    scene: &Scene,
    params: &FusionParams,
    predictor: Option<&dyn OcclusionPredictor>,
) -> Result<(PanopticMap, FusionTrace), FusionError> {
    params.validate()?;
    check_proposals(scene)?;

    let mut order: Vec<usize> = (0..scene.proposals.len()).collect();
    order.sort_by(|&a, &b| confidence_order(&scene.proposals[a], &scene.proposals[b]));

    let mut assigned = BinaryMask::empty(scene.grid);
    let mut merged: Vec<MergedProposal> = Vec::new();
    let mut records: Vec<ProposalRecord> = Vec::new();

    for &pi in &order {
        let p = &scene.proposals[pi];
        let mut record = ProposalRecord {
            proposal_id: p.id,
            class_id: p.class_id,
            confidence: p.confidence,
            kept: false,
            reason: DecisionReason::Kept,
            claimed_before: 0,
            claimed_after: 0,
            segment_id: None,
            final_area: 0,
            queries: Vec::new(),
        };
        if p.confidence < params.confidence_min {
            record.reason = DecisionReason::BelowConfidenceMin {
                confidence: p.confidence,
                threshold: params.confidence_min,
            };
            records.push(record);
            continue;
        }
        let mut claimed = p.mask.subtract(&assigned)?;
        record.claimed_before = claimed.area();
        if let Some(pred) = predictor {
            let bbox = p.mask.bounding_box().expect("nonempty proposal mask");
            for m in merged.iter_mut() {
                let q = &scene.proposals[m.index];
                if params.scope == OcclusionScope::InterClassOnly && q.class_id == p.class_id {
                    continue;
                }
                // Disjoint bounding boxes cannot pass the appreciable
                // overlap gate, so the pair is settled without mask
                // arithmetic.
                if !bbox.intersects(&m.bbox) {
                    continue;
                }
                let stats = p.mask.intersection_stats(&q.mask)?;
                if !stats.appreciable(params.occlusion_ratio) {
                    continue;
                }
                let on_top = pred.occlude(p, q)?;
                if pred.occlude(q, p)? == on_top {
                    return Err(FusionError::PredictorContract { first: p.id, second: q.id });
                }
                let mut reclaimed = 0;
                if on_top {
                    let contested = p.mask.intersect(&q.mask)?.intersect(&m.claimed)?;
                    reclaimed = contested.area();
                    if reclaimed > 0 {
                        m.claimed = m.claimed.subtract(&contested)?;
                        assigned = assigned.subtract(&contested)?;
                        claimed = claimed.union(&contested)?;
                    }
                }
                record.queries.push(OcclusionQuery {
                    of: p.id,
                    against: q.id,
                    occludes: on_top,
                    reclaimed,
                });
            }
        }
        record.claimed_after = claimed.area();
        let mask_area = p.mask.area() as f64;
        let keep = match params.skip_convention {
            SkipConvention::OverlapRatio => {
                let fraction = (p.mask.area() - claimed.area()) as f64 / mask_area;
                if fraction > params.overlap_threshold {
                    record.reason =
                        DecisionReason::Covered { fraction, threshold: params.overlap_threshold };
                    false
                } else {
                    true
                }
            }
            SkipConvention::RemainingFraction => {
                let fraction = claimed.area() as f64 / mask_area;
                if fraction <= params.overlap_threshold {
                    record.reason =
                        DecisionReason::Covered { fraction, threshold: params.overlap_threshold };
                    false
                } else {
                    true
                }
            }
        };
        if keep {
            record.kept = true;
            let bbox = p.mask.bounding_box().expect("nonempty proposal mask");
            assigned = assigned.union(&claimed)?;
            merged.push(MergedProposal { index: pi, bbox, claimed, record: records.len() });
        }
        records.push(record);
    }

    let mut builder = PanopticBuilder::new(scene.grid, &scene.catalog);
    for m in &merged {
        // A segment can lose every pixel to later reclaiming; it then
        // owns nothing and is left out of the map.
        if m.claimed.is_empty() {
            continue;
        }
        let p = &scene.proposals[m.index];
        let id = builder.push_thing(p.class_id, p.id, &m.claimed)?;
        records[m.record].segment_id = Some(id);
        records[m.record].final_area = m.claimed.area();
    }
    let stuff = builder.merge_stuff(&scene.semantic, params.min_stuff_area)?;
    let map = builder.finish()?;
    let trace = FusionTrace {
        image_id: scene.image_id,
        params: *params,
        records,
        stuff,
        void_pixels: map.void_area(),
    };
    Ok((map, trace))
}
