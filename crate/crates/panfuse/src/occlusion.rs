//! Pairwise instance occlusion: who is on top when two masks overlap.
//!
//! The relation is only meaningful for appreciably overlapping pairs
//! (overlap covering at least `rho` of either mask). Ground truth is
//! derived from a panoptic map by majority ownership of the
//! intersection; predictions come from an oracle lookup, a learned
//! linear pair classifier, or plain confidence order. Every predictor
//! answers ordered queries and is antisymmetric by construction:
//! `occlude(i, j) == !occlude(j, i)` for distinct proposals.

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mask::{IntersectionStats, MaskError};
use crate::scene::{precedes, GtInstance, InstanceProposal, PanopticMap, Scene, SceneError};

#[derive(Debug, Error)]
pub enum OcclusionError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("rho must be in (0, 1], got {0}")]
    InvalidRho(f64),
    #[error("matrix index ({i}, {j}) out of bounds for {n} instances")]
    IndexOutOfBounds { i: usize, j: usize, n: usize },
    #[error("occlusion of an instance against itself is undefined")]
    SelfPair,
    #[error("matrix cell ({i}, {j}) holds {value}, expected -1, 0, or 1")]
    InvalidCell { i: usize, j: usize, value: i8 },
    #[error("matrix cells ({i}, {j}) and ({j}, {i}) are not antisymmetric")]
    NotAntisymmetric { i: usize, j: usize },
    #[error("matrix has {actual} cells, expected {expected} for n = {n}")]
    CellCount { n: usize, expected: usize, actual: usize },
    #[error("scene {0} lacks the ground truth needed here")]
    MissingGroundTruth(u64),
    #[error("matrix covers {actual} instances, scene has {expected}")]
    MatrixDimension { expected: usize, actual: usize },
    #[error("pair budget must be a positive even number, got {0}")]
    InvalidPairBudget(usize),
    #[error("proposal {0} has an empty mask, pair features are undefined")]
    EmptyMask(u32),
    #[error("training needs at least one pair")]
    NoTrainingPairs,
    #[error("feature vector has {actual} entries, expected {expected}")]
    FeatureDimension { expected: usize, actual: usize },
    #[error("non-finite feature value in pair ({0}, {1})")]
    NonFiniteFeature(u32, u32),
    #[error("training pairs are not closed under order inversion")]
    UnbalancedPairs,
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("no defined ground-truth pairs to evaluate")]
    NoDefinedPairs,
    #[error("oracle index {index} out of bounds for a {n}-instance matrix")]
    OracleIndex { index: usize, n: usize },
}

/// Dense n-by-n pairwise relation over ground-truth instances.
/// Cell values: 1 = row instance on top, 0 = column instance on top,
/// -1 = undefined (no appreciable overlap, or ambiguous).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMatrix {
    n: usize,
    cells: Vec<i8>,
}

impl OcclusionMatrix {
    /// A matrix with every pair undefined.
    pub fn undefined(n: usize) -> Self {
        OcclusionMatrix { n, cells: vec![-1; n * n] }
    }

    /// Rebuilds a matrix from raw cells, validating shape, cell values,
    /// an undefined diagonal, and antisymmetry of defined pairs.
    pub fn from_cells(n: usize, cells: Vec<i8>) -> Result<Self, OcclusionError> {
        if cells.len() != n * n {
            return Err(OcclusionError::CellCount { n, expected: n * n, actual: cells.len() });
        }
        let m = OcclusionMatrix { n, cells };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn cells(&self) -> &[i8] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> Result<i8, OcclusionError> {
        self.check_index(i, j)?;
        Ok(self.cells[i * self.n + j])
    }

    /// Records that instance `i` occludes (`top_is_i`) or is occluded by
    /// instance `j`, keeping both ordered cells consistent.
    pub fn set_pair(&mut self, i: usize, j: usize, top_is_i: bool) -> Result<(), OcclusionError> {
        self.check_index(i, j)?;
        if i == j {
            return Err(OcclusionError::SelfPair);
        }
        self.cells[i * self.n + j] = top_is_i as i8;
        self.cells[j * self.n + i] = !top_is_i as i8;
        Ok(())
    }

    fn check_index(&self, i: usize, j: usize) -> Result<(), OcclusionError> {
        if i >= self.n || j >= self.n {
            return Err(OcclusionError::IndexOutOfBounds { i, j, n: self.n });
        }
        Ok(())
    }

    /// Checks cell values, the undefined diagonal, and antisymmetry.
    pub fn validate(&self) -> Result<(), OcclusionError> {
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.cells[i * self.n + j];
                if !(-1..=1).contains(&v) {
                    return Err(OcclusionError::InvalidCell { i, j, value: v });
                }
                if i == j && v != -1 {
                    return Err(OcclusionError::InvalidCell { i, j, value: v });
                }
            }
        }
        for i in 0..self.n {
            for j in i + 1..self.n {
                let a = self.cells[i * self.n + j];
                let b = self.cells[j * self.n + i];
                let consistent = (a == -1 && b == -1) || (a >= 0 && b >= 0 && a + b == 1);
                if !consistent {
                    return Err(OcclusionError::NotAntisymmetric { i, j });
                }
            }
        }
        Ok(())
    }

    /// Ordered (i, j) index pairs with a defined relation.
    pub fn defined_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n)
                .filter(move |&j| j != i && self.cells[i * self.n + j] != -1)
                .map(move |j| (i, j))
        })
    }
}

/// Derives the ground-truth occlusion relation for amodal instances
/// from a resolved panoptic map: for each appreciably overlapping pair,
/// the instance owning the majority of the intersection pixels is on
/// top. Pairs whose intersection is owned entirely by third parties or
/// void, or splits evenly, stay undefined.
pub fn derive_gt_occlusion(
    instances: &[GtInstance],
    panoptic: &PanopticMap,
    rho: f64,
) -> Result<OcclusionMatrix, OcclusionError> {
    check_rho(rho)?;
    // Visible pixels of each instance, looked up through the segment
    // table by source instance id.
    let mut visible = Vec::with_capacity(instances.len());
    for inst in instances {
        let mut mask = crate::mask::BinaryMask::empty(panoptic.grid());
        for seg in panoptic.segments() {
            if seg.is_thing && seg.source_proposal == Some(inst.id) {
                mask = mask.union(&panoptic.segment_mask(seg.id)?)?;
            }
        }
        mask = mask.intersect(&inst.mask)?;
        visible.push(mask);
    }
    let mut matrix = OcclusionMatrix::undefined(instances.len());
    for i in 0..instances.len() {
        for j in i + 1..instances.len() {
            let stats = instances[i].mask.intersection_stats(&instances[j].mask)?;
            if !stats.appreciable(rho) {
                continue;
            }
            let inter = instances[i].mask.intersect(&instances[j].mask)?;
            let own_i = inter.intersection_area(&visible[i])?;
            let own_j = inter.intersection_area(&visible[j])?;
            if own_i != own_j {
                matrix.set_pair(i, j, own_i > own_j)?;
            }
        }
    }
    Ok(matrix)
}

fn check_rho(rho: f64) -> Result<(), OcclusionError> {
    if !rho.is_finite() || rho <= 0.0 || rho > 1.0 {
        return Err(OcclusionError::InvalidRho(rho));
    }
    Ok(())
}

/// Matches proposals to ground-truth instances greedily by descending
/// mask IoU with a 0.5 floor, one to one. Returns the matched instance
/// index per proposal.
pub fn match_proposals_to_gt(
    proposals: &[InstanceProposal],
    instances: &[GtInstance],
) -> Result<Vec<Option<usize>>, OcclusionError> {
    let mut candidates = Vec::new();
    for (pi, p) in proposals.iter().enumerate() {
        for (gi, g) in instances.iter().enumerate() {
            let iou = p.mask.iou(&g.mask)?;
            if iou >= 0.5 {
                candidates.push((iou, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2))));
    let mut matched = vec![None; proposals.len()];
    let mut taken = vec![false; instances.len()];
    for (_, pi, gi) in candidates {
        if matched[pi].is_none() && !taken[gi] {
            matched[pi] = Some(gi);
            taken[gi] = true;
        }
    }
    Ok(matched)
}

/// Names of the pairwise features, in vector order.
pub const PAIR_FEATURE_NAMES: [&str; 9] = [
    "overlap_ratio_i",
    "overlap_ratio_j",
    "iou",
    "confidence_delta",
    "log_area_ratio",
    "same_class",
    "centroid_dx",
    "centroid_dy",
    "log_bbox_area_ratio",
];

/// Computes the ordered pair feature vector for proposals `(i, j)`.
/// `stats` must be `i.mask.intersection_stats(&j.mask)`. Swapping the
/// argument order negates the asymmetric features and swaps the ratio
/// pair, so a model scored on both orders can be antisymmetrized.
pub fn extract_pair_features(
    i: &InstanceProposal,
    j: &InstanceProposal,
    stats: &IntersectionStats,
) -> Result<Vec<f64>, OcclusionError> {
    if i.mask.grid() != j.mask.grid() {
        return Err(MaskError::GridMismatch { left: i.mask.grid(), right: j.mask.grid() }.into());
    }
    if i.mask.is_empty() {
        return Err(OcclusionError::EmptyMask(i.id));
    }
    if j.mask.is_empty() {
        return Err(OcclusionError::EmptyMask(j.id));
    }
    let grid = i.mask.grid();
    let union = (stats.area_i + stats.area_j - stats.area_inter) as f64;
    let iou = stats.area_inter as f64 / union;
    let (cx_i, cy_i) = i.mask.centroid().expect("nonempty mask");
    let (cx_j, cy_j) = j.mask.centroid().expect("nonempty mask");
    let bb_i = i.mask.bounding_box().expect("nonempty mask");
    let bb_j = j.mask.bounding_box().expect("nonempty mask");
    Ok(vec![
        stats.ratio_i,
        stats.ratio_j,
        iou,
        i.confidence - j.confidence,
        (stats.area_i as f64 / stats.area_j as f64).ln(),
        (i.class_id == j.class_id) as u8 as f64,
        (cx_i - cx_j) / grid.width() as f64,
        (cy_i - cy_j) / grid.height() as f64,
        (bb_i.area() as f64 / bb_j.area() as f64).ln(),
    ])
}

/// One labeled ordered pair: does proposal `pair.0` occlude `pair.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub image_id: u64,
    pub pair: (u32, u32),
    pub label: bool,
    pub features: Vec<f64>,
}

/// Mines labeled pairs from one scene: proposals are matched to
/// ground-truth instances, appreciably overlapping matched pairs with a
/// defined ground-truth relation become candidates, at most
/// `pair_budget / 2` unordered candidates are kept (uniform, seeded),
/// and both orders of each kept candidate are emitted with inverted
/// labels.
pub fn sample_training_pairs(
    scene: &Scene,
    matrix: &OcclusionMatrix,
    rho: f64,
    pair_budget: usize,
    seed: u64,
) -> Result<Vec<TrainingPair>, OcclusionError> {
    check_rho(rho)?;
    if pair_budget == 0 || !pair_budget.is_multiple_of(2) {
        return Err(OcclusionError::InvalidPairBudget(pair_budget));
    }
    let instances =
        scene.gt_instances.as_ref().ok_or(OcclusionError::MissingGroundTruth(scene.image_id))?;
    if matrix.len() != instances.len() {
        return Err(OcclusionError::MatrixDimension {
            expected: instances.len(),
            actual: matrix.len(),
        });
    }
    let matched = match_proposals_to_gt(&scene.proposals, instances)?;
    let mut candidates = Vec::new();
    for (pi, mi) in matched.iter().enumerate() {
        let Some(gi) = *mi else { continue };
        for (qi, mj) in matched.iter().enumerate().skip(pi + 1) {
            let Some(gj) = *mj else { continue };
            let entry = matrix.get(gi, gj)?;
            if entry == -1 {
                continue;
            }
            let stats = scene.proposals[pi].mask.intersection_stats(&scene.proposals[qi].mask)?;
            if !stats.appreciable(rho) {
                continue;
            }
            candidates.push((pi, qi, entry == 1, stats));
        }
    }
    let keep = pair_budget / 2;
    if candidates.len() > keep {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), keep).into_vec();
        picked.sort_unstable();
        candidates = picked.into_iter().map(|k| candidates[k]).collect();
    }
    let mut pairs = Vec::with_capacity(candidates.len() * 2);
    for (pi, qi, label, stats) in candidates {
        let p = &scene.proposals[pi];
        let q = &scene.proposals[qi];
        pairs.push(TrainingPair {
            image_id: scene.image_id,
            pair: (p.id, q.id),
            label,
            features: extract_pair_features(p, q, &stats)?,
        });
        pairs.push(TrainingPair {
            image_id: scene.image_id,
            pair: (q.id, p.id),
            label: !label,
            features: extract_pair_features(q, p, &stats.swapped())?,
        });
    }
    Ok(pairs)
}

/// Gradient descent settings for the pair classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 500, learning_rate: 0.2, seed: 0 }
    }
}

/// Training run details recorded with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub pair_count: usize,
    /// Mean training loss before any update and after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Linear logistic pair classifier over [`PAIR_FEATURE_NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairClassifierModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub metadata: TrainingMetadata,
}

impl PairClassifierModel {
    pub fn logit(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.weights.len());
        self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross entropy for one logit.
fn bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn mean_loss(weights: &[f64], bias: f64, pairs: &[TrainingPair]) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let z = weights.iter().zip(&p.features).map(|(w, x)| w * x).sum::<f64>() + bias;
            bce(z, p.label as u8 as f64)
        })
        .sum();
    total / pairs.len() as f64
}

/// Trains the linear pair classifier with full-batch gradient descent
/// from zero initialization. The input must be closed under order
/// inversion (every `(i, j, label)` paired with `(j, i, !label)`),
/// which also forces label balance.
pub fn train_occlusion_classifier(
    pairs: &[TrainingPair],
    config: &TrainConfig,
) -> Result<PairClassifierModel, OcclusionError> {
    if pairs.is_empty() {
        return Err(OcclusionError::NoTrainingPairs);
    }
    if !config.learning_rate.is_finite() || config.learning_rate <= 0.0 {
        return Err(OcclusionError::InvalidLearningRate(config.learning_rate));
    }
    let dim = PAIR_FEATURE_NAMES.len();
    let mut index: HashSet<(u64, u32, u32, bool)> = HashSet::new();
    for p in pairs {
        if p.features.len() != dim {
            return Err(OcclusionError::FeatureDimension {
                expected: dim,
                actual: p.features.len(),
            });
        }
        if p.features.iter().any(|x| !x.is_finite()) {
            return Err(OcclusionError::NonFiniteFeature(p.pair.0, p.pair.1));
        }
        if p.pair.0 == p.pair.1 {
            return Err(OcclusionError::SelfPair);
        }
        index.insert((p.image_id, p.pair.0, p.pair.1, p.label));
    }
    for p in pairs {
        if !index.contains(&(p.image_id, p.pair.1, p.pair.0, !p.label)) {
            return Err(OcclusionError::UnbalancedPairs);
        }
    }

    let n = pairs.len() as f64;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut loss_curve = Vec::with_capacity(config.epochs + 1);
    loss_curve.push(mean_loss(&weights, bias, pairs));
    for _ in 0..config.epochs {
        let mut grad_w = vec![0.0; dim];
        let mut grad_b = 0.0;
        for p in pairs {
            let z = weights.iter().zip(&p.features).map(|(w, x)| w * x).sum::<f64>() + bias;
            let err = sigmoid(z) - p.label as u8 as f64;
            for (g, x) in grad_w.iter_mut().zip(&p.features) {
                *g += err * x;
            }
            grad_b += err;
        }
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= config.learning_rate * g / n;
        }
        bias -= config.learning_rate * grad_b / n;
        loss_curve.push(mean_loss(&weights, bias, pairs));
    }
    Ok(PairClassifierModel {
        feature_names: PAIR_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        weights,
        bias,
        metadata: TrainingMetadata {
            seed: config.seed,
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            pair_count: pairs.len(),
            loss_curve,
        },
    })
}

/// Fraction of pairs whose raw logit sign matches the label. None for
/// an empty slice.
pub fn pair_accuracy(model: &PairClassifierModel, pairs: &[TrainingPair]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let correct = pairs.iter().filter(|p| (model.logit(&p.features) > 0.0) == p.label).count();
    Some(correct as f64 / pairs.len() as f64)
}

/// Antisymmetrized model prediction for an ordered proposal pair: the
/// model scores both argument orders and the difference decides. An
/// exact zero falls back to canonical confidence order, so the answer
/// always satisfies `predict(i, j) == !predict(j, i)`.
pub fn predict_occlude(
    model: &PairClassifierModel,
    i: &InstanceProposal,
    j: &InstanceProposal,
) -> Result<bool, OcclusionError> {
    let stats = i.mask.intersection_stats(&j.mask)?;
    let phi_ij = extract_pair_features(i, j, &stats)?;
    let phi_ji = extract_pair_features(j, i, &stats.swapped())?;
    let score = model.logit(&phi_ij) - model.logit(&phi_ji);
    if score > 0.0 {
        Ok(true)
    } else if score < 0.0 {
        Ok(false)
    } else {
        Ok(precedes(i, j))
    }
}

/// Answers ordered occlusion queries during fusion.
pub trait OcclusionPredictor {
    /// True when proposal `i` is on top of proposal `j`.
    fn occlude(&self, i: &InstanceProposal, j: &InstanceProposal) -> Result<bool, OcclusionError>;
}

/// Degenerate predictor: whoever wins canonical confidence order is on
/// top. Reduces occlusion-aware fusion to the plain confidence
/// baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConfidencePredictor;

impl OcclusionPredictor for ConfidencePredictor {
    fn occlude(&self, i: &InstanceProposal, j: &InstanceProposal) -> Result<bool, OcclusionError> {
        Ok(precedes(i, j))
    }
}

/// Looks answers up in a ground-truth matrix through a proposal-to-
/// instance index, falling back to confidence order for unmatched
/// proposals or undefined pairs.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    matrix: OcclusionMatrix,
    index: HashMap<u32, usize>,
}

impl OraclePredictor {
    pub fn new(
        matrix: OcclusionMatrix,
        index: HashMap<u32, usize>,
    ) -> Result<Self, OcclusionError> {
        for &v in index.values() {
            if v >= matrix.len() {
                return Err(OcclusionError::OracleIndex { index: v, n: matrix.len() });
            }
        }
        Ok(OraclePredictor { matrix, index })
    }

    /// Builds the oracle for one scene: derives the ground-truth matrix
    /// at threshold `rho` and indexes it by matching proposals to
    /// instances.
    pub fn for_scene(scene: &Scene, rho: f64) -> Result<Self, OcclusionError> {
        let instances = scene
            .gt_instances
            .as_ref()
            .ok_or(OcclusionError::MissingGroundTruth(scene.image_id))?;
        let panoptic =
            scene.gt_panoptic.as_ref().ok_or(OcclusionError::MissingGroundTruth(scene.image_id))?;
        let matrix = derive_gt_occlusion(instances, panoptic, rho)?;
        let matched = match_proposals_to_gt(&scene.proposals, instances)?;
        let index = scene
            .proposals
            .iter()
            .zip(&matched)
            .filter_map(|(p, m)| m.map(|gi| (p.id, gi)))
            .collect();
        OraclePredictor::new(matrix, index)
    }

    /// Builds the oracle from a precomputed matrix, matching the
    /// scene's proposals against its instances for the index.
    pub fn with_matrix(scene: &Scene, matrix: OcclusionMatrix) -> Result<Self, OcclusionError> {
        let instances = scene
            .gt_instances
            .as_ref()
            .ok_or(OcclusionError::MissingGroundTruth(scene.image_id))?;
        if matrix.len() != instances.len() {
            return Err(OcclusionError::MatrixDimension {
                expected: instances.len(),
                actual: matrix.len(),
            });
        }
        let matched = match_proposals_to_gt(&scene.proposals, instances)?;
        let index = scene
            .proposals
            .iter()
            .zip(&matched)
            .filter_map(|(p, m)| m.map(|gi| (p.id, gi)))
            .collect();
        OraclePredictor::new(matrix, index)
    }
}

impl OcclusionPredictor for OraclePredictor {
    fn occlude(&self, i: &InstanceProposal, j: &InstanceProposal) -> Result<bool, OcclusionError> {
        if let (Some(&a), Some(&b)) = (self.index.get(&i.id), self.index.get(&j.id)) {
            match self.matrix.get(a, b)? {
                1 => return Ok(true),
                0 => return Ok(false),
                _ => {}
            }
        }
        Ok(precedes(i, j))
    }
}

/// Wraps a trained pair classifier as a fusion predictor.
#[derive(Debug, Clone)]
pub struct ClassifierPredictor {
    pub model: PairClassifierModel,
}

impl OcclusionPredictor for ClassifierPredictor {
    fn occlude(&self, i: &InstanceProposal, j: &InstanceProposal) -> Result<bool, OcclusionError> {
        predict_occlude(&self.model, i, j)
    }
}

/// Per-bucket counts of a predictor accuracy evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountAccuracy {
    pub correct: u64,
    pub total: u64,
}

impl CountAccuracy {
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Predictor agreement with ground truth, split by class relation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairAccuracyReport {
    pub overall: CountAccuracy,
    pub inter_class: CountAccuracy,
    pub intra_class: CountAccuracy,
}

/// Scores a predictor against derived ground-truth matrices: for every
/// ordered defined pair whose two instances are matched by proposals,
/// the predictor is queried on the matched proposals and compared to
/// the ground-truth answer.
pub fn evaluate_predictor<'a>(
    predictor: &dyn OcclusionPredictor,
    items: impl IntoIterator<Item = (&'a Scene, &'a OcclusionMatrix)>,
) -> Result<PairAccuracyReport, OcclusionError> {
    let mut report = PairAccuracyReport::default();
    for (scene, matrix) in items {
        let instances = scene
            .gt_instances
            .as_ref()
            .ok_or(OcclusionError::MissingGroundTruth(scene.image_id))?;
        if matrix.len() != instances.len() {
            return Err(OcclusionError::MatrixDimension {
                expected: instances.len(),
                actual: matrix.len(),
            });
        }
        let matched = match_proposals_to_gt(&scene.proposals, instances)?;
        let mut by_instance: HashMap<usize, usize> = HashMap::new();
        for (pi, m) in matched.iter().enumerate() {
            if let Some(gi) = m {
                by_instance.insert(*gi, pi);
            }
        }
        for (gi, gj) in matrix.defined_pairs() {
            let (Some(&pi), Some(&pj)) = (by_instance.get(&gi), by_instance.get(&gj)) else {
                continue;
            };
            let expected = matrix.get(gi, gj)? == 1;
            let answer = predictor.occlude(&scene.proposals[pi], &scene.proposals[pj])?;
            let bucket = if instances[gi].class_id == instances[gj].class_id {
                &mut report.intra_class
            } else {
                &mut report.inter_class
            };
            bucket.total += 1;
            bucket.correct += (answer == expected) as u64;
            report.overall.total += 1;
            report.overall.correct += (answer == expected) as u64;
        }
    }
    if report.overall.total == 0 {
        return Err(OcclusionError::NoDefinedPairs);
    }
    Ok(report)
}
