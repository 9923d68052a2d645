//! Scene-level types: class catalog, instance proposals, semantic
//! labels, and the non-overlapping panoptic map.
//!
//! A panoptic map assigns every pixel exactly one segment id (0 = void)
//! and carries a segment table describing each id. Constructors enforce
//! the structural invariants; [`Scene::validate`] reports cross-object
//! violations as data so readers can list them instead of stopping at
//! the first.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::mask::{BinaryMask, ImageGrid, MaskError, Run};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("class catalog is empty")]
    EmptyCatalog,
    #[error("class id 0 is reserved for void")]
    ReservedClassId,
    #[error("duplicate class id {0}")]
    DuplicateClassId(u32),
    #[error("catalog needs at least one thing class and one stuff class")]
    MissingClassKind,
    #[error("label buffer has {actual} entries, grid expects {expected}")]
    LabelLength { expected: u64, actual: usize },
    #[error("pixel buffer has {actual} entries, grid expects {expected}")]
    PixelLength { expected: u64, actual: usize },
    #[error("segment id 0 is reserved for void")]
    ReservedSegmentId,
    #[error("duplicate segment id {0}")]
    DuplicateSegmentId(u32),
    #[error("pixel references segment id {0} missing from the table")]
    UnknownPixelSegment(u32),
    #[error("segment {0} owns no pixels")]
    EmptySegment(u32),
    #[error("thing segment {0} lacks a source proposal")]
    ThingWithoutSource(u32),
    #[error("stuff segment {0} carries a source proposal")]
    StuffWithSource(u32),
    #[error("more than one stuff segment for category {0}")]
    DuplicateStuffSegment(u32),
    #[error("unknown segment id {0}")]
    UnknownSegment(u32),
}

/// One entry of the class catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub id: u32,
    pub name: String,
    pub is_thing: bool,
}

/// The fixed set of classes a scene is labeled against. Ids are unique,
/// nonzero, and cover at least one thing and one stuff class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCatalog {
    classes: Vec<ClassDef>,
}

impl ClassCatalog {
    pub fn new(mut classes: Vec<ClassDef>) -> Result<Self, SceneError> {
        if classes.is_empty() {
            return Err(SceneError::EmptyCatalog);
        }
        classes.sort_by_key(|c| c.id);
        let mut seen = BTreeSet::new();
        for c in &classes {
            if c.id == 0 {
                return Err(SceneError::ReservedClassId);
            }
            if !seen.insert(c.id) {
                return Err(SceneError::DuplicateClassId(c.id));
            }
        }
        if !classes.iter().any(|c| c.is_thing) || !classes.iter().any(|c| !c.is_thing) {
            return Err(SceneError::MissingClassKind);
        }
        Ok(ClassCatalog { classes })
    }

    /// Classes in ascending id order.
    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn get(&self, id: u32) -> Option<&ClassDef> {
        self.classes.binary_search_by_key(&id, |c| c.id).ok().map(|i| &self.classes[i])
    }

    pub fn is_thing(&self, id: u32) -> Option<bool> {
        self.get(id).map(|c| c.is_thing)
    }

    pub fn thing_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.iter().filter(|c| c.is_thing).map(|c| c.id)
    }

    pub fn stuff_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.iter().filter(|c| !c.is_thing).map(|c| c.id)
    }
}

/// A candidate instance mask with a detector confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceProposal {
    pub id: u32,
    pub class_id: u32,
    pub confidence: f64,
    pub mask: BinaryMask,
}

/// Canonical processing order for proposals: descending confidence,
/// ties broken by larger mask area, then by lower id. Total for
/// distinct proposals, which keeps every downstream tie-break
/// deterministic.
pub fn confidence_order(a: &InstanceProposal, b: &InstanceProposal) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| b.mask.area().cmp(&a.mask.area()))
        .then_with(|| a.id.cmp(&b.id))
}

/// True when `a` comes before `b` in [`confidence_order`].
pub fn precedes(a: &InstanceProposal, b: &InstanceProposal) -> bool {
    confidence_order(a, b) == Ordering::Less
}

/// Dense per-pixel class labels; 0 means unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    grid: ImageGrid,
    labels: Vec<u32>,
}

impl SemanticMap {
    pub fn new(grid: ImageGrid, labels: Vec<u32>) -> Result<Self, SceneError> {
        if labels.len() as u64 != grid.pixel_count() {
            return Err(SceneError::LabelLength {
                expected: grid.pixel_count(),
                actual: labels.len(),
            });
        }
        Ok(SemanticMap { grid, labels })
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Mask of all pixels labeled `class_id`.
    pub fn class_mask(&self, class_id: u32) -> BinaryMask {
        mask_where(self.grid, &self.labels, class_id)
    }

    /// Distinct nonzero labels present, ascending.
    pub fn present_labels(&self) -> Vec<u32> {
        let mut set: BTreeSet<u32> = self.labels.iter().copied().collect();
        set.remove(&0);
        set.into_iter().collect()
    }
}

/// Builds the mask of pixels in `values` equal to `target` (nonzero).
fn mask_where(grid: ImageGrid, values: &[u32], target: u32) -> BinaryMask {
    let w = grid.width() as usize;
    let mut runs = Vec::new();
    for y in 0..grid.height() as usize {
        let row = &values[y * w..(y + 1) * w];
        let mut x = 0;
        while x < w {
            if row[x] == target {
                let x0 = x;
                while x < w && row[x] == target {
                    x += 1;
                }
                runs.push(Run::new((y * w + x0) as u32, (x - x0) as u32));
            } else {
                x += 1;
            }
        }
    }
    // Runs built row by row are canonical by construction.
    BinaryMask::from_runs(grid, runs).expect("row scan yields canonical runs")
}

/// Table entry describing one panoptic segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentInfo {
    pub id: u32,
    pub category_id: u32,
    pub is_thing: bool,
    /// Proposal (or ground-truth instance) the segment came from; set
    /// exactly for thing segments.
    pub source_proposal: Option<u32>,
}

/// A non-overlapping panoptic segmentation: per-pixel segment ids plus
/// the segment table. Void pixels carry id 0 and no table entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticMap {
    grid: ImageGrid,
    pixels: Vec<u32>,
    segments: Vec<SegmentInfo>,
    areas: BTreeMap<u32, u64>,
}

impl PanopticMap {
    pub fn new(
        grid: ImageGrid,
        pixels: Vec<u32>,
        mut segments: Vec<SegmentInfo>,
    ) -> Result<Self, SceneError> {
        if pixels.len() as u64 != grid.pixel_count() {
            return Err(SceneError::PixelLength {
                expected: grid.pixel_count(),
                actual: pixels.len(),
            });
        }
        segments.sort_by_key(|s| s.id);
        let mut stuff_categories = BTreeSet::new();
        let mut areas = BTreeMap::new();
        for s in &segments {
            if s.id == 0 {
                return Err(SceneError::ReservedSegmentId);
            }
            if areas.insert(s.id, 0u64).is_some() {
                return Err(SceneError::DuplicateSegmentId(s.id));
            }
            if s.is_thing && s.source_proposal.is_none() {
                return Err(SceneError::ThingWithoutSource(s.id));
            }
            if !s.is_thing {
                if s.source_proposal.is_some() {
                    return Err(SceneError::StuffWithSource(s.id));
                }
                if !stuff_categories.insert(s.category_id) {
                    return Err(SceneError::DuplicateStuffSegment(s.category_id));
                }
            }
        }
        for &p in &pixels {
            if p == 0 {
                continue;
            }
            match areas.get_mut(&p) {
                Some(a) => *a += 1,
                None => return Err(SceneError::UnknownPixelSegment(p)),
            }
        }
        if let Some((&id, _)) = areas.iter().find(|(_, &a)| a == 0) {
            return Err(SceneError::EmptySegment(id));
        }
        Ok(PanopticMap { grid, pixels, segments, areas })
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    /// Segments in ascending id order.
    pub fn segments(&self) -> &[SegmentInfo] {
        &self.segments
    }

    pub fn segment_info(&self, id: u32) -> Option<&SegmentInfo> {
        self.segments.binary_search_by_key(&id, |s| s.id).ok().map(|i| &self.segments[i])
    }

    pub fn segment_area(&self, id: u32) -> Option<u64> {
        self.areas.get(&id).copied()
    }

    pub fn void_area(&self) -> u64 {
        self.grid.pixel_count() - self.areas.values().sum::<u64>()
    }

    /// Mask of the pixels owned by segment `id`.
    pub fn segment_mask(&self, id: u32) -> Result<BinaryMask, SceneError> {
        if self.segment_info(id).is_none() {
            return Err(SceneError::UnknownSegment(id));
        }
        Ok(mask_where(self.grid, &self.pixels, id))
    }

    /// Per-pixel labels that ignore segment id assignment: thing pixels
    /// key on (class, source proposal), stuff pixels on the class. Two
    /// maps describe the same labeling exactly when their keys agree.
    pub fn pixel_keys(&self) -> Vec<PixelKey> {
        let lookup: std::collections::HashMap<u32, PixelKey> = self
            .segments
            .iter()
            .map(|s| {
                let key = if s.is_thing {
                    PixelKey::Thing {
                        category_id: s.category_id,
                        source_proposal: s.source_proposal.expect("validated in new"),
                    }
                } else {
                    PixelKey::Stuff { category_id: s.category_id }
                };
                (s.id, key)
            })
            .collect();
        self.pixels.iter().map(|&id| if id == 0 { PixelKey::Void } else { lookup[&id] }).collect()
    }
}

/// Segment-id-independent identity of one pixel's assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelKey {
    Void,
    Thing { category_id: u32, source_proposal: u32 },
    Stuff { category_id: u32 },
}

/// A ground-truth amodal instance. Higher `z_rank` means nearer to the
/// camera.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub id: u32,
    pub class_id: u32,
    pub z_rank: u32,
    pub mask: BinaryMask,
}

/// One image worth of inputs, with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: u64,
    pub grid: ImageGrid,
    pub catalog: ClassCatalog,
    pub proposals: Vec<InstanceProposal>,
    pub semantic: SemanticMap,
    pub gt_instances: Option<Vec<GtInstance>>,
    pub gt_panoptic: Option<PanopticMap>,
}

impl Scene {
    /// Checks every cross-object invariant and returns the violations
    /// found. An empty list means the scene is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.semantic.grid() != self.grid {
            v.push(format!(
                "semantic grid {} does not match scene grid {}",
                self.semantic.grid(),
                self.grid
            ));
        }
        for label in self.semantic.present_labels() {
            if self.catalog.get(label).is_none() {
                v.push(format!("semantic label {label} is not in the catalog"));
            }
        }
        let mut seen_ids = BTreeSet::new();
        for p in &self.proposals {
            if !seen_ids.insert(p.id) {
                v.push(format!("duplicate proposal id {}", p.id));
            }
            match self.catalog.is_thing(p.class_id) {
                None => v.push(format!("proposal {} has unknown class {}", p.id, p.class_id)),
                Some(false) => {
                    v.push(format!("proposal {} targets stuff class {}", p.id, p.class_id))
                }
                Some(true) => {}
            }
            if p.mask.grid() != self.grid {
                v.push(format!(
                    "proposal {} mask grid {} does not match scene grid {}",
                    p.id,
                    p.mask.grid(),
                    self.grid
                ));
            }
            if p.mask.is_empty() {
                v.push(format!("proposal {} has an empty mask", p.id));
            }
            if !p.confidence.is_finite() || !(0.0..=1.0).contains(&p.confidence) {
                v.push(format!("proposal {} confidence {} outside [0, 1]", p.id, p.confidence));
            }
        }
        if let Some(instances) = &self.gt_instances {
            let mut ids = BTreeSet::new();
            let mut ranks: Vec<u32> = Vec::new();
            for g in instances {
                if !ids.insert(g.id) {
                    v.push(format!("duplicate ground-truth instance id {}", g.id));
                }
                match self.catalog.is_thing(g.class_id) {
                    None => v.push(format!(
                        "ground-truth instance {} has unknown class {}",
                        g.id, g.class_id
                    )),
                    Some(false) => v.push(format!(
                        "ground-truth instance {} targets stuff class {}",
                        g.id, g.class_id
                    )),
                    Some(true) => {}
                }
                if g.mask.grid() != self.grid {
                    v.push(format!("ground-truth instance {} mask grid mismatch", g.id));
                }
                if g.mask.is_empty() {
                    v.push(format!("ground-truth instance {} has an empty mask", g.id));
                }
                ranks.push(g.z_rank);
            }
            ranks.sort_unstable();
            if ranks != (0..instances.len() as u32).collect::<Vec<_>>() {
                v.push("ground-truth z ranks are not a permutation of 0..n".to_string());
            }
        }
        if let Some(panoptic) = &self.gt_panoptic {
            if panoptic.grid() != self.grid {
                v.push(format!(
                    "ground-truth panoptic grid {} does not match scene grid {}",
                    panoptic.grid(),
                    self.grid
                ));
            }
            let instance_ids: Option<BTreeSet<u32>> =
                self.gt_instances.as_ref().map(|gs| gs.iter().map(|g| g.id).collect());
            for s in panoptic.segments() {
                match self.catalog.is_thing(s.category_id) {
                    None => v.push(format!(
                        "panoptic segment {} has unknown category {}",
                        s.id, s.category_id
                    )),
                    Some(t) if t != s.is_thing => v.push(format!(
                        "panoptic segment {} disagrees with catalog about category {} kind",
                        s.id, s.category_id
                    )),
                    _ => {}
                }
                if let (Some(ids), Some(src)) = (&instance_ids, s.source_proposal) {
                    if s.is_thing && !ids.contains(&src) {
                        v.push(format!(
                            "panoptic segment {} references unknown instance {}",
                            s.id, src
                        ));
                    }
                }
            }
        }
        v
    }
}
