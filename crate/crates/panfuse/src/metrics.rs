//! Panoptic quality: segment-level matching of a predicted map against
//! ground truth and the PQ / SQ / RQ family of scores.
//!
//! Segments match when they share a class and their IoU exceeds 0.5,
//! with pixels that are void in the ground truth excluded from the
//! union. Unmatched predictions mostly covering ground-truth void are
//! discounted rather than counted as false positives. Scores average
//! over classes, so per-image results are kept as raw accumulators and
//! only turned into ratios after aggregation.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::mask::MaskError;
use crate::scene::{ClassCatalog, PanopticMap};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("segment class {0} is missing from the catalog")]
    UnknownClass(u32),
    #[error("segment class {0} disagrees with the catalog about thing vs stuff")]
    KindMismatch(u32),
    #[error("class {0} is a thing in one accumulator and stuff in another")]
    MergeKindMismatch(u32),
    #[error("no per-image statistics to aggregate")]
    NothingToAggregate,
}

/// Raw matching accumulators for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassPqStats {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_count: u64,
    pub is_thing: bool,
}

impl ClassPqStats {
    fn new(is_thing: bool) -> Self {
        ClassPqStats { iou_sum: 0.0, tp: 0, fp: 0, fn_count: 0, is_thing }
    }

    /// True when the class never appeared in ground truth or surviving
    /// predictions; such classes are excluded from averages.
    pub fn is_void(&self) -> bool {
        self.tp + self.fp + self.fn_count == 0
    }

    pub fn pq(&self) -> f64 {
        if self.is_void() {
            return 0.0;
        }
        self.iou_sum / (self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_count as f64)
    }

    pub fn sq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    pub fn rq(&self) -> f64 {
        if self.is_void() {
            return 0.0;
        }
        self.tp as f64 / (self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_count as f64)
    }
}

/// Per-class scores of one class, ready for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassPqRow {
    pub class_id: u32,
    pub is_thing: bool,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_count: u64,
}

/// Class-averaged scores with bucket breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PqSummary {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_things: f64,
    pub pq_stuff: f64,
    /// Classes contributing to each average.
    pub classes: usize,
    pub thing_classes: usize,
    pub stuff_classes: usize,
}

/// Matching accumulators per class, mergeable across images.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PqStats {
    per_class: BTreeMap<u32, ClassPqStats>,
}

impl PqStats {
    pub fn per_class(&self) -> &BTreeMap<u32, ClassPqStats> {
        &self.per_class
    }

    /// Adds another accumulator, summing counts class by class.
    pub fn merge(&mut self, other: &PqStats) -> Result<(), MetricsError> {
        for (&class_id, stats) in &other.per_class {
            let entry =
                self.per_class.entry(class_id).or_insert_with(|| ClassPqStats::new(stats.is_thing));
            if entry.is_thing != stats.is_thing {
                return Err(MetricsError::MergeKindMismatch(class_id));
            }
            entry.iou_sum += stats.iou_sum;
            entry.tp += stats.tp;
            entry.fp += stats.fp;
            entry.fn_count += stats.fn_count;
        }
        Ok(())
    }

    /// Per-class score rows, ascending by class id.
    pub fn rows(&self) -> Vec<ClassPqRow> {
        self.per_class
            .iter()
            .map(|(&class_id, s)| ClassPqRow {
                class_id,
                is_thing: s.is_thing,
                pq: s.pq(),
                sq: s.sq(),
                rq: s.rq(),
                tp: s.tp,
                fp: s.fp,
                fn_count: s.fn_count,
            })
            .collect()
    }

    /// Class-averaged scores. Empty buckets score 0 with a 0 count.
    pub fn summary(&self) -> PqSummary {
        let mut sum = (0.0, 0.0, 0.0);
        let mut things_sum = 0.0;
        let mut stuff_sum = 0.0;
        let mut classes = 0usize;
        let mut thing_classes = 0usize;
        let mut stuff_classes = 0usize;
        for stats in self.per_class.values() {
            if stats.is_void() {
                continue;
            }
            classes += 1;
            sum.0 += stats.pq();
            sum.1 += stats.sq();
            sum.2 += stats.rq();
            if stats.is_thing {
                thing_classes += 1;
                things_sum += stats.pq();
            } else {
                stuff_classes += 1;
                stuff_sum += stats.pq();
            }
        }
        let avg = |total: f64, n: usize| if n == 0 { 0.0 } else { total / n as f64 };
        PqSummary {
            pq: avg(sum.0, classes),
            sq: avg(sum.1, classes),
            rq: avg(sum.2, classes),
            pq_things: avg(things_sum, thing_classes),
            pq_stuff: avg(stuff_sum, stuff_classes),
            classes,
            thing_classes,
            stuff_classes,
        }
    }
}

struct SegmentFacts {
    category_id: u32,
    is_thing: bool,
    area: u64,
}

fn segment_facts(
    map: &PanopticMap,
    catalog: &ClassCatalog,
) -> Result<BTreeMap<u32, SegmentFacts>, MetricsError> {
    let mut facts = BTreeMap::new();
    for seg in map.segments() {
        match catalog.is_thing(seg.category_id) {
            None => return Err(MetricsError::UnknownClass(seg.category_id)),
            Some(k) if k != seg.is_thing => {
                return Err(MetricsError::KindMismatch(seg.category_id))
            }
            _ => {}
        }
        facts.insert(
            seg.id,
            SegmentFacts {
                category_id: seg.category_id,
                is_thing: seg.is_thing,
                area: map.segment_area(seg.id).expect("segment area is recorded"),
            },
        );
    }
    Ok(facts)
}

/// Scores one predicted panoptic map against ground truth, returning
/// raw per-class accumulators.
pub fn compute_pq(
    gt: &PanopticMap,
    pred: &PanopticMap,
    catalog: &ClassCatalog,
) -> Result<PqStats, MetricsError> {
    if gt.grid() != pred.grid() {
        return Err(MaskError::GridMismatch { left: gt.grid(), right: pred.grid() }.into());
    }
    let gt_facts = segment_facts(gt, catalog)?;
    let pred_facts = segment_facts(pred, catalog)?;

    // Joint label histogram, with 0 standing for void on either side.
    let mut inter: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (&g, &p) in gt.pixels().iter().zip(pred.pixels()) {
        *inter.entry((g, p)).or_insert(0) += 1;
    }

    let mut stats = PqStats::default();
    for facts in gt_facts.values() {
        stats
            .per_class
            .entry(facts.category_id)
            .or_insert_with(|| ClassPqStats::new(facts.is_thing));
    }
    for facts in pred_facts.values() {
        stats
            .per_class
            .entry(facts.category_id)
            .or_insert_with(|| ClassPqStats::new(facts.is_thing));
    }

    let mut gt_matched: BTreeMap<u32, u32> = BTreeMap::new();
    let mut pred_matched: BTreeMap<u32, u32> = BTreeMap::new();
    for (&(gid, pid), &overlap) in &inter {
        if gid == 0 || pid == 0 {
            continue;
        }
        let g = &gt_facts[&gid];
        let p = &pred_facts[&pid];
        if g.category_id != p.category_id {
            continue;
        }
        // Pixels void in the ground truth do not count against the
        // prediction, so they leave the union.
        let void_overlap = inter.get(&(0, pid)).copied().unwrap_or(0);
        let union = g.area + p.area - overlap - void_overlap;
        let iou = overlap as f64 / union as f64;
        if iou > 0.5 {
            // Strict majority IoU makes matches one to one.
            assert!(gt_matched.insert(gid, pid).is_none(), "gt segment matched twice");
            assert!(pred_matched.insert(pid, gid).is_none(), "pred segment matched twice");
            let entry = stats.per_class.get_mut(&g.category_id).expect("class preinserted");
            entry.tp += 1;
            entry.iou_sum += iou;
        }
    }

    for (gid, facts) in &gt_facts {
        if !gt_matched.contains_key(gid) {
            stats.per_class.get_mut(&facts.category_id).expect("class preinserted").fn_count += 1;
        }
    }
    for (pid, facts) in &pred_facts {
        if pred_matched.contains_key(pid) {
            continue;
        }
        // Predictions sitting mostly on ground-truth void are neither
        // right nor wrong.
        let void_overlap = inter.get(&(0, *pid)).copied().unwrap_or(0);
        if void_overlap * 2 > facts.area {
            continue;
        }
        stats.per_class.get_mut(&facts.category_id).expect("class preinserted").fp += 1;
    }
    Ok(stats)
}

/// Sums per-image accumulators into corpus-level statistics.
pub fn aggregate_pq(per_image: &[PqStats]) -> Result<PqStats, MetricsError> {
    if per_image.is_empty() {
        return Err(MetricsError::NothingToAggregate);
    }
    let mut total = PqStats::default();
    for stats in per_image {
        total.merge(stats)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::ImageGrid;
    use crate::scene::{ClassDef, SegmentInfo};

    fn catalog() -> ClassCatalog {
        ClassCatalog::new(vec![
            ClassDef { id: 1, name: "box".into(), is_thing: true },
            ClassDef { id: 2, name: "disc".into(), is_thing: true },
            ClassDef { id: 10, name: "sky".into(), is_thing: false },
        ])
        .unwrap()
    }

    fn thing(id: u32, class: u32) -> SegmentInfo {
        SegmentInfo { id, category_id: class, is_thing: true, source_proposal: Some(id) }
    }

    fn map_1d(width: u32, pixels: Vec<u32>, segments: Vec<SegmentInfo>) -> PanopticMap {
        PanopticMap::new(ImageGrid::new(width, 1).unwrap(), pixels, segments).unwrap()
    }

    fn interval(width: u32, spans: &[(u32, u32, u32)]) -> Vec<u32> {
        // (start, end, id) spans over a void row.
        let mut px = vec![0; width as usize];
        for &(s, e, id) in spans {
            for k in s..e {
                px[k as usize] = id;
            }
        }
        px
    }

    #[test]
    fn identical_maps_score_one() {
        let segs = vec![
            thing(1, 1),
            SegmentInfo { id: 2, category_id: 10, is_thing: false, source_proposal: None },
        ];
        let gt = map_1d(14, interval(14, &[(0, 10, 1), (10, 14, 2)]), segs.clone());
        let pred = map_1d(14, interval(14, &[(0, 10, 1), (10, 14, 2)]), segs);
        let stats = compute_pq(&gt, &pred, &catalog()).unwrap();
        let summary = stats.summary();
        assert_eq!(summary.pq, 1.0);
        assert_eq!(summary.sq, 1.0);
        assert_eq!(summary.rq, 1.0);
        assert_eq!(summary.pq_things, 1.0);
        assert_eq!(summary.pq_stuff, 1.0);
        assert_eq!(summary.classes, 2);
    }

    #[test]
    fn half_iou_is_not_a_match() {
        let gt = map_1d(14, interval(14, &[(0, 10, 1)]), vec![thing(1, 1)]);
        let pred = map_1d(14, interval(14, &[(0, 5, 1)]), vec![thing(1, 1)]);
        let stats = compute_pq(&gt, &pred, &catalog()).unwrap();
        let class = stats.per_class()[&1];
        assert_eq!((class.tp, class.fp, class.fn_count), (0, 1, 1));
        assert_eq!(class.pq(), 0.0);
        assert_eq!(stats.summary().pq, 0.0);
    }

    #[test]
    fn fragmented_prediction_pays_for_the_extra_segment() {
        let gt = map_1d(14, interval(14, &[(0, 10, 1)]), vec![thing(1, 1)]);
        let pred =
            map_1d(14, interval(14, &[(0, 8, 1), (8, 10, 2)]), vec![thing(1, 1), thing(2, 1)]);
        let stats = compute_pq(&gt, &pred, &catalog()).unwrap();
        let class = stats.per_class()[&1];
        assert_eq!((class.tp, class.fp, class.fn_count), (1, 1, 0));
        assert!((class.iou_sum - 0.8).abs() < 1e-12);
        let pq = stats.summary().pq;
        assert!((pq - 0.8 / 1.5).abs() < 1e-6);
        assert!((pq - 0.533333).abs() < 1e-3);
        // The identity holds per class.
        assert!((class.pq() - class.sq() * class.rq()).abs() < 1e-12);
    }

    #[test]
    fn predictions_over_void_are_discounted() {
        let gt = map_1d(14, interval(14, &[(0, 10, 1)]), vec![thing(1, 1)]);
        // Second segment sits 3 of 3 pixels on gt void: discounted.
        let pred =
            map_1d(14, interval(14, &[(0, 10, 1), (10, 13, 2)]), vec![thing(1, 1), thing(2, 1)]);
        let stats = compute_pq(&gt, &pred, &catalog()).unwrap();
        let class = stats.per_class()[&1];
        assert_eq!((class.tp, class.fp, class.fn_count), (1, 0, 0));
        assert_eq!(stats.summary().pq, 1.0);
        // With only 2 of 5 pixels on void the discount no longer
        // applies and the segment is a false positive.
        let pred =
            map_1d(14, interval(14, &[(0, 7, 1), (7, 12, 2)]), vec![thing(1, 1), thing(2, 1)]);
        let stats = compute_pq(&gt, &pred, &catalog()).unwrap();
        let class = stats.per_class()[&1];
        assert_eq!((class.tp, class.fp, class.fn_count), (1, 1, 0));
        assert!((stats.summary().pq - 0.7 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn class_mismatch_never_matches() {
        let gt = map_1d(14, interval(14, &[(0, 10, 1)]), vec![thing(1, 1)]);
        let pred = map_1d(14, interval(14, &[(0, 10, 1)]), vec![thing(1, 2)]);
        let stats = compute_pq(&gt, &pred, &catalog()).unwrap();
        assert_eq!(stats.per_class()[&1].fn_count, 1);
        assert_eq!(stats.per_class()[&2].fp, 1);
        assert_eq!(stats.summary().pq, 0.0);
        assert_eq!(stats.summary().classes, 2);
    }

    #[test]
    fn aggregation_sums_before_dividing() {
        let gt = map_1d(14, interval(14, &[(0, 10, 1)]), vec![thing(1, 1)]);
        let pred_perfect = gt.clone();
        let pred_split =
            map_1d(14, interval(14, &[(0, 8, 1), (8, 10, 2)]), vec![thing(1, 1), thing(2, 1)]);
        let a = compute_pq(&gt, &pred_perfect, &catalog()).unwrap();
        let b = compute_pq(&gt, &pred_split, &catalog()).unwrap();
        let total = aggregate_pq(&[a, b]).unwrap();
        let class = total.per_class()[&1];
        assert_eq!((class.tp, class.fp, class.fn_count), (2, 1, 0));
        assert!((class.pq() - 1.8 / 2.5).abs() < 1e-12);
        assert!(matches!(aggregate_pq(&[]), Err(MetricsError::NothingToAggregate)));
    }

    #[test]
    fn unknown_classes_are_rejected() {
        let gt = map_1d(14, interval(14, &[(0, 10, 1)]), vec![thing(1, 99)]);
        let pred = map_1d(14, interval(14, &[(0, 10, 1)]), vec![thing(1, 1)]);
        assert!(matches!(compute_pq(&gt, &pred, &catalog()), Err(MetricsError::UnknownClass(99))));
        // A thing id used as stuff is caught too.
        let bad = map_1d(
            14,
            interval(14, &[(0, 10, 1)]),
            vec![SegmentInfo { id: 1, category_id: 1, is_thing: false, source_proposal: None }],
        );
        assert!(matches!(compute_pq(&bad, &pred, &catalog()), Err(MetricsError::KindMismatch(1))));
    }
}
