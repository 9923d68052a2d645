//! Synthetic layered scenes with exact amodal ground truth.
//!
//! Each scene stacks random convex shapes (rectangles, ellipses,
//! convex polygons) in a random depth order over horizontal stuff
//! bands. The full amodal mask of every instance is known, the
//! ground-truth panoptic map is the top surface of the stack, and
//! proposals are derived from the amodal masks with configurable
//! confidence models and corruptions. Generation is rejection
//! sampling: a whole attempt is discarded unless it satisfies the
//! configured feasibility constraints, so downstream guarantees (every
//! overlap appreciable, occluders visibly on top, stuff regions large
//! enough) hold by construction. Everything is deterministic in the
//! seed; noise avoids transcendental functions so streams are stable
//! across platforms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{FusionError, PanopticBuilder};
use crate::mask::{BinaryMask, ImageGrid, MaskError};
use crate::scene::{
    ClassCatalog, ClassDef, GtInstance, InstanceProposal, Scene, SceneError, SemanticMap,
};

#[derive(Debug, Error)]
pub enum ScenegenError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(
        "no feasible scene for seed {seed} within {attempts} attempts \
         (last rejection: {last_rejection})"
    )]
    Infeasible { seed: u64, attempts: u32, last_rejection: &'static str },
}

/// Shape families instances are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Rectangle,
    Ellipse,
    Polygon,
}

/// How proposal confidences relate to true depth order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ConfidenceModel {
    /// Nearer instances score higher, with gaussian-like jitter.
    Correlated { sigma: f64 },
    /// Confidence carries no depth information.
    Random,
    /// Nearer instances score lower, so confidence order is
    /// systematically wrong about occlusion.
    Adversarial { sigma: f64 },
}

/// Corruptions applied when deriving proposals from instances.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbations {
    /// Each proposal mask is dilated or eroded by a uniform radius in
    /// [-morph_radius, morph_radius] (square structuring element).
    pub morph_radius: u32,
    /// Probability that an instance yields no proposal.
    pub dropout_prob: f64,
    /// Per-instance probability of adding an unrelated low-confidence
    /// proposal.
    pub spurious_rate: f64,
    /// Per-pixel probability of replacing the semantic label with a
    /// random class.
    pub semantic_noise: f64,
}

/// Generator settings. `Default` and the serde defaults agree, so an
/// empty JSON object is the default config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGenConfig {
    pub width: u32,
    pub height: u32,
    /// Thing classes get ids 1..=thing_classes.
    pub thing_classes: u32,
    /// Stuff classes follow the thing ids, one horizontal band each.
    pub stuff_classes: u32,
    pub min_instances: u32,
    pub max_instances: u32,
    /// Shape diameter range as a fraction of the smaller grid side.
    pub size_frac: (f64, f64),
    pub shapes: Vec<ShapeFamily>,
    pub confidence: ConfidenceModel,
    pub perturb: Perturbations,
    /// Probability that an instance is placed to overlap an earlier
    /// one at a controlled depth; otherwise it is placed apart from
    /// all existing instances when room allows.
    pub cluster_bias: f64,
    /// Every instance must keep at least this fraction of its amodal
    /// mask visible.
    pub min_visible_frac: f64,
    /// When positive, every overlapping instance pair must overlap
    /// appreciably at this ratio, and the nearer instance must own at
    /// least one pixel of the intersection; zero disables both checks.
    pub min_overlap_ratio: f64,
    /// Minimum number of overlapping instance pairs per scene.
    pub min_overlapping_pairs: usize,
    /// When positive, no pixel may be covered by more instances than
    /// this.
    pub max_cover_depth: usize,
    /// When positive, the fraction of each instance covered by the
    /// union of all others may not exceed this.
    pub max_total_overlap_frac: f64,
    /// Every stuff band must keep at least this many uncovered pixels.
    pub min_stuff_pixels: u64,
    /// Rejection-sampling budget per scene.
    pub max_attempts: u32,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        SceneGenConfig {
            width: 320,
            height: 240,
            thing_classes: 3,
            stuff_classes: 2,
            min_instances: 4,
            max_instances: 9,
            size_frac: (0.15, 0.30),
            shapes: vec![ShapeFamily::Rectangle, ShapeFamily::Ellipse, ShapeFamily::Polygon],
            confidence: ConfidenceModel::Correlated { sigma: 0.1 },
            perturb: Perturbations::default(),
            cluster_bias: 0.45,
            min_visible_frac: 0.6,
            min_overlap_ratio: 0.25,
            min_overlapping_pairs: 1,
            max_cover_depth: 0,
            max_total_overlap_frac: 0.0,
            min_stuff_pixels: 6000,
            max_attempts: 64,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<(), ScenegenError> {
        let fail = |msg: String| Err(ScenegenError::InvalidConfig(msg));
        if self.width < 8 || self.height < 8 {
            return fail(format!("grid {}x{} is below the 8x8 minimum", self.width, self.height));
        }
        if self.thing_classes == 0 || self.stuff_classes == 0 {
            return fail("need at least one thing class and one stuff class".into());
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return fail(format!(
                "instance range {}..={} is empty or starts at zero",
                self.min_instances, self.max_instances
            ));
        }
        let (lo, hi) = self.size_frac;
        if !(lo > 0.0 && lo <= hi && hi <= 0.9 && lo.is_finite() && hi.is_finite()) {
            return fail(format!("size_frac ({lo}, {hi}) must satisfy 0 < lo <= hi <= 0.9"));
        }
        if self.shapes.is_empty() {
            return fail("shapes must not be empty".into());
        }
        let sigma = match self.confidence {
            ConfidenceModel::Correlated { sigma } | ConfidenceModel::Adversarial { sigma } => sigma,
            ConfidenceModel::Random => 0.0,
        };
        if !sigma.is_finite() || sigma < 0.0 {
            return fail(format!("confidence sigma {sigma} must be finite and nonnegative"));
        }
        for (name, p) in [
            ("dropout_prob", self.perturb.dropout_prob),
            ("spurious_rate", self.perturb.spurious_rate),
            ("semantic_noise", self.perturb.semantic_noise),
        ] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} must be in [0, 1]"));
            }
        }
        if self.perturb.morph_radius > 16 {
            return fail(format!("morph_radius {} exceeds 16", self.perturb.morph_radius));
        }
        if !self.cluster_bias.is_finite() || !(0.0..=1.0).contains(&self.cluster_bias) {
            return fail(format!("cluster_bias {} must be in [0, 1]", self.cluster_bias));
        }
        if !self.min_visible_frac.is_finite()
            || self.min_visible_frac <= 0.0
            || self.min_visible_frac > 1.0
        {
            return fail(format!("min_visible_frac {} must be in (0, 1]", self.min_visible_frac));
        }
        if !self.min_overlap_ratio.is_finite() || !(0.0..1.0).contains(&self.min_overlap_ratio) {
            return fail(format!("min_overlap_ratio {} must be in [0, 1)", self.min_overlap_ratio));
        }
        if !self.max_total_overlap_frac.is_finite()
            || !(0.0..1.0).contains(&self.max_total_overlap_frac)
        {
            return fail(format!(
                "max_total_overlap_frac {} must be in [0, 1)",
                self.max_total_overlap_frac
            ));
        }
        let grid_pixels = self.width as u64 * self.height as u64;
        if self.min_stuff_pixels > grid_pixels {
            return fail(format!(
                "min_stuff_pixels {} exceeds the {} grid pixels",
                self.min_stuff_pixels, grid_pixels
            ));
        }
        if self.max_attempts == 0 {
            return fail("max_attempts must be at least 1".into());
        }
        Ok(())
    }

    /// The class catalog implied by the class counts.
    pub fn catalog(&self) -> Result<ClassCatalog, ScenegenError> {
        let mut defs = Vec::new();
        for k in 1..=self.thing_classes {
            defs.push(ClassDef { id: k, name: format!("thing_{k}"), is_thing: true });
        }
        for b in 1..=self.stuff_classes {
            defs.push(ClassDef {
                id: self.thing_classes + b,
                name: format!("stuff_{b}"),
                is_thing: false,
            });
        }
        Ok(ClassCatalog::new(defs)?)
    }

    /// Horizontal stuff bands as (class id, row range), top to bottom.
    fn stuff_bands(&self) -> Vec<(u32, std::ops::Range<u32>)> {
        (0..self.stuff_classes)
            .map(|b| {
                let top = self.height as u64 * b as u64 / self.stuff_classes as u64;
                let bottom = self.height as u64 * (b as u64 + 1) / self.stuff_classes as u64;
                (self.thing_classes + 1 + b, top as u32..bottom as u32)
            })
            .collect()
    }
}

/// SplitMix64 finalizer over a keyed stream, for deriving independent
/// seeds.
pub(crate) fn mix_seed(seed: u64, key: u64) -> u64 {
    let mut z = seed ^ key.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one scene of a corpus.
pub fn corpus_scene_seed(corpus_seed: u64, index: u64) -> u64 {
    mix_seed(corpus_seed, index)
}

/// Unit-variance, zero-mean noise from four uniforms. Bounded support
/// and no transcendental functions, so streams are platform stable.
fn approx_gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let sum: f64 = (0..4).map(|_| rng.gen::<f64>()).sum();
    (sum - 2.0) * 3.0_f64.sqrt()
}

fn fill_span(bits: &mut [bool], width: u32, y: u32, lo: f64, hi: f64) {
    // Pixel x is covered when its center x + 0.5 lies in [lo, hi].
    let x0 = (lo - 0.5).ceil().max(0.0);
    let x1 = (hi - 0.5).floor().min(width as f64 - 1.0);
    if x1 < x0 {
        return;
    }
    let row = (y * width) as usize;
    bits[row + x0 as usize..=row + x1 as usize].fill(true);
}

fn raster_rectangle(grid: ImageGrid, cx: f64, cy: f64, rx: f64, ry: f64) -> Vec<bool> {
    let mut bits = vec![false; grid.pixel_count() as usize];
    for y in 0..grid.height() {
        if ((y as f64 + 0.5) - cy).abs() > ry {
            continue;
        }
        fill_span(&mut bits, grid.width(), y, cx - rx, cx + rx);
    }
    bits
}

fn raster_ellipse(grid: ImageGrid, cx: f64, cy: f64, rx: f64, ry: f64) -> Vec<bool> {
    let mut bits = vec![false; grid.pixel_count() as usize];
    for y in 0..grid.height() {
        let t = ((y as f64 + 0.5) - cy) / ry;
        if t.abs() > 1.0 {
            continue;
        }
        let half_width = rx * (1.0 - t * t).sqrt();
        fill_span(&mut bits, grid.width(), y, cx - half_width, cx + half_width);
    }
    bits
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain convex hull, counterclockwise in image coordinates.
fn convex_hull(mut points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    points.dedup();
    if points.len() < 3 {
        return points;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len() * 2);
    for &p in points.iter().chain(points.iter().rev().skip(1)) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn raster_convex_polygon(grid: ImageGrid, hull: &[(f64, f64)]) -> Vec<bool> {
    let mut bits = vec![false; grid.pixel_count() as usize];
    if hull.len() < 3 {
        return bits;
    }
    for y in 0..grid.height() {
        let qy = y as f64 + 0.5;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut empty = false;
        for k in 0..hull.len() {
            let (x1, y1) = hull[k];
            let (x2, y2) = hull[(k + 1) % hull.len()];
            // Interior is on the left of each directed edge:
            // (x2-x1)(qy-y1) - (y2-y1)(qx-x1) >= 0.
            let dy = y2 - y1;
            let bound = (x2 - x1) * (qy - y1) / if dy == 0.0 { 1.0 } else { dy } + x1;
            if dy > 0.0 {
                hi = hi.min(bound);
            } else if dy < 0.0 {
                lo = lo.max(bound);
            } else if (x2 - x1) * (qy - y1) < 0.0 {
                empty = true;
                break;
            }
        }
        if !empty && lo <= hi {
            fill_span(&mut bits, grid.width(), y, lo, hi);
        }
    }
    bits
}

/// Shape geometry frozen before a center is chosen, so the same shape
/// can be rasterized at several trial positions.
struct ShapeSpec {
    family: ShapeFamily,
    rx: f64,
    ry: f64,
    /// Vertex offsets from the center, for polygons.
    offsets: Vec<(f64, f64)>,
}

impl ShapeSpec {
    fn draw(config: &SceneGenConfig, grid: ImageGrid, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = (grid.width() as f64, grid.height() as f64);
        let min_dim = w.min(h);
        let family = *config.shapes.choose(rng).expect("validated nonempty");
        let half = rng.gen_range(config.size_frac.0..=config.size_frac.1) * min_dim / 2.0;
        let rx = (half * rng.gen_range(0.75..=1.25)).min(w / 2.0 - 1.0);
        let ry = (half * rng.gen_range(0.75..=1.25)).min(h / 2.0 - 1.0);
        let offsets = if family == ShapeFamily::Polygon {
            (0..rng.gen_range(6..=8))
                .map(|_| (rx * (2.0 * rng.gen::<f64>() - 1.0), ry * (2.0 * rng.gen::<f64>() - 1.0)))
                .collect()
        } else {
            Vec::new()
        };
        ShapeSpec { family, rx, ry, offsets }
    }

    /// Radius of a circle certainly containing the shape.
    fn circumradius(&self) -> f64 {
        (self.rx * self.rx + self.ry * self.ry).sqrt()
    }

    fn rasterize(
        &self,
        grid: ImageGrid,
        cx: f64,
        cy: f64,
    ) -> Result<Option<BinaryMask>, MaskError> {
        let bits = match self.family {
            ShapeFamily::Rectangle => raster_rectangle(grid, cx, cy, self.rx, self.ry),
            ShapeFamily::Ellipse => raster_ellipse(grid, cx, cy, self.rx, self.ry),
            ShapeFamily::Polygon => {
                let points: Vec<(f64, f64)> =
                    self.offsets.iter().map(|&(dx, dy)| (cx + dx, cy + dy)).collect();
                raster_convex_polygon(grid, &convex_hull(points))
            }
        };
        let mask = BinaryMask::from_bitmap(grid, &bits)?;
        Ok((!mask.is_empty()).then_some(mask))
    }
}

/// Random direction with unit length, trigonometry free.
fn random_unit_vector(rng: &mut ChaCha8Rng) -> (f64, f64) {
    loop {
        let u = 2.0 * rng.gen::<f64>() - 1.0;
        let v = 2.0 * rng.gen::<f64>() - 1.0;
        let norm_sq = u * u + v * v;
        if (0.01..=1.0).contains(&norm_sq) {
            let norm = norm_sq.sqrt();
            return (u / norm, v / norm);
        }
    }
}

/// Where instances have been put so far, and whether each one already
/// belongs to a deliberate overlap pair.
struct Placement {
    cx: f64,
    cy: f64,
    circumradius: f64,
    paired: bool,
}

/// Overlap-ratio window targeted by anchored placement: appreciable
/// for fusion thresholds, shallow enough to keep both instances mostly
/// visible.
const ANCHOR_RATIO_LO: f64 = 0.27;
const ANCHOR_RATIO_HI: f64 = 0.38;

/// Positions `spec` so its mask overlaps the anchor with a ratio
/// inside the target window while staying clear of everything else.
/// The ratio shrinks monotonically with center distance, so each
/// direction is searched by bisection on the rasterized masks.
fn place_anchored(
    grid: ImageGrid,
    spec: &ShapeSpec,
    anchor: &Placement,
    anchor_mask: &BinaryMask,
    others: &[BinaryMask],
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, f64, BinaryMask)>, ScenegenError> {
    let (w, h) = (grid.width() as f64, grid.height() as f64);
    let scale = anchor.circumradius + spec.circumradius();
    'direction: for _ in 0..6 {
        let (dx, dy) = random_unit_vector(rng);
        let mut lo = 0.2 * scale;
        let mut hi = 1.3 * scale;
        for _ in 0..24 {
            let d = (lo + hi) / 2.0;
            let cx = (anchor.cx + dx * d).clamp(spec.rx, w - spec.rx);
            let cy = (anchor.cy + dy * d).clamp(spec.ry, h - spec.ry);
            let Some(mask) = spec.rasterize(grid, cx, cy)? else {
                continue 'direction;
            };
            let stats = mask.intersection_stats(anchor_mask)?;
            let ratio = stats.ratio_i.max(stats.ratio_j);
            if ratio > ANCHOR_RATIO_HI {
                lo = d;
            } else if ratio < ANCHOR_RATIO_LO {
                hi = d;
            } else {
                // In the window; usable only if no third instance is
                // grazed.
                for other in others {
                    if mask.intersection_area(other)? > 0 {
                        continue 'direction;
                    }
                }
                return Ok(Some((cx, cy, mask)));
            }
            if hi - lo < 0.25 {
                // Clamping at the border can make the ratio insensitive
                // to the distance; give up on this direction.
                continue 'direction;
            }
        }
    }
    Ok(None)
}

/// Draws spaced candidate centers and keeps the one with the best
/// clearance from every existing instance.
fn place_spaced(
    grid: ImageGrid,
    spec: &ShapeSpec,
    placed: &[Placement],
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let (w, h) = (grid.width() as f64, grid.height() as f64);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for _ in 0..24 {
        let cx = rng.gen_range(spec.rx..=w - spec.rx);
        let cy = rng.gen_range(spec.ry..=h - spec.ry);
        let margin = placed
            .iter()
            .map(|p| {
                let (dx, dy) = (p.cx - cx, p.cy - cy);
                (dx * dx + dy * dy).sqrt() - (p.circumradius + spec.circumradius())
            })
            .fold(f64::INFINITY, f64::min);
        if margin > best.0 {
            best = (margin, cx, cy);
        }
        if margin >= 1.0 {
            break;
        }
    }
    (best.1, best.2)
}

fn morph_pass(src: &[bool], radius: i64, erode: bool, dst: &mut [bool]) {
    // Distance to the nearest spreading pixel: true pixels spread under
    // dilation; false pixels, and the border, spread under erosion.
    let n = src.len() as i64;
    let far = n + 8;
    let mut last = if erode { -1 } else { -far };
    for x in 0..n {
        if src[x as usize] != erode {
            last = x;
        }
        dst[x as usize] = x - last <= radius;
    }
    let mut next = if erode { n } else { n + far };
    for x in (0..n).rev() {
        if src[x as usize] != erode {
            next = x;
        }
        dst[x as usize] = dst[x as usize] || next - x <= radius;
    }
    if erode {
        for d in dst.iter_mut() {
            *d = !*d;
        }
    }
}

/// Dilation (positive radius) or erosion (negative) with a square
/// structuring element, separable over rows then columns. Erosion
/// treats pixels beyond the border as empty.
fn morph_mask(mask: &BinaryMask, signed_radius: i64) -> Result<BinaryMask, MaskError> {
    if signed_radius == 0 {
        return Ok(mask.clone());
    }
    let grid = mask.grid();
    let (w, h) = (grid.width() as usize, grid.height() as usize);
    let radius = signed_radius.unsigned_abs() as i64;
    let erode = signed_radius < 0;
    let bits = mask.to_bitmap();
    let mut horizontal = vec![false; bits.len()];
    for y in 0..h {
        morph_pass(&bits[y * w..(y + 1) * w], radius, erode, &mut horizontal[y * w..(y + 1) * w]);
    }
    let mut column_in = vec![false; h];
    let mut column_out = vec![false; h];
    let mut out = vec![false; bits.len()];
    for x in 0..w {
        for y in 0..h {
            column_in[y] = horizontal[y * w + x];
        }
        morph_pass(&column_in, radius, erode, &mut column_out);
        for y in 0..h {
            out[y * w + x] = column_out[y];
        }
    }
    BinaryMask::from_bitmap(grid, &out)
}

/// Geometry of one feasible attempt, before proposals are derived.
struct Layout {
    masks: Vec<BinaryMask>,
    classes: Vec<u32>,
    z_ranks: Vec<u32>,
}

/// Checks every feasibility constraint, returning the name of the
/// first violated one.
fn feasible(
    config: &SceneGenConfig,
    grid: ImageGrid,
    layout: &Layout,
) -> Result<Option<&'static str>, ScenegenError> {
    let n = layout.masks.len();
    let pixels = grid.pixel_count() as usize;
    let mut cover = vec![0u16; pixels];
    let mut top_instance = vec![usize::MAX; pixels];
    let mut top_rank = vec![-1i64; pixels];
    for (k, mask) in layout.masks.iter().enumerate() {
        let rank = layout.z_ranks[k] as i64;
        for run in mask.runs() {
            for x in run.start as usize..run.end() as usize {
                cover[x] += 1;
                if rank > top_rank[x] {
                    top_rank[x] = rank;
                    top_instance[x] = k;
                }
            }
        }
    }

    let mut visible = vec![0u64; n];
    for &t in &top_instance {
        if t != usize::MAX {
            visible[t] += 1;
        }
    }
    for (k, mask) in layout.masks.iter().enumerate() {
        if (visible[k] as f64) < config.min_visible_frac * mask.area() as f64 {
            return Ok(Some("instance visibility"));
        }
    }

    if config.max_cover_depth > 0 && cover.iter().any(|&c| c as usize > config.max_cover_depth) {
        return Ok(Some("cover depth"));
    }

    if config.max_total_overlap_frac > 0.0 {
        for mask in &layout.masks {
            let shared: u64 = mask
                .runs()
                .iter()
                .flat_map(|run| run.start..run.end())
                .filter(|&x| cover[x as usize] >= 2)
                .count() as u64;
            if shared as f64 > config.max_total_overlap_frac * mask.area() as f64 {
                return Ok(Some("total overlap"));
            }
        }
    }

    let mut overlapping_pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let stats = layout.masks[i].intersection_stats(&layout.masks[j])?;
            if stats.area_inter == 0 {
                continue;
            }
            overlapping_pairs += 1;
            if config.min_overlap_ratio > 0.0 {
                if stats.ratio_i.max(stats.ratio_j) < config.min_overlap_ratio {
                    return Ok(Some("overlap ratio"));
                }
                // The nearer instance must surface somewhere inside the
                // intersection, otherwise the pair's depth order leaves
                // no trace in the panoptic map.
                let nearer = if layout.z_ranks[i] > layout.z_ranks[j] { i } else { j };
                let intersection = layout.masks[i].intersect(&layout.masks[j])?;
                let surfaced = intersection
                    .runs()
                    .iter()
                    .flat_map(|run| run.start..run.end())
                    .any(|x| top_instance[x as usize] == nearer);
                if !surfaced {
                    return Ok(Some("occluder surfacing"));
                }
            }
        }
    }
    if overlapping_pairs < config.min_overlapping_pairs {
        return Ok(Some("overlapping pairs"));
    }

    for (_, rows) in config.stuff_bands() {
        let uncovered: u64 = (rows.start * grid.width()..rows.end * grid.width())
            .filter(|&x| cover[x as usize] == 0)
            .count() as u64;
        if uncovered < config.min_stuff_pixels {
            return Ok(Some("stuff pixels"));
        }
    }
    Ok(None)
}

fn try_layout(
    config: &SceneGenConfig,
    grid: ImageGrid,
    rng: &mut ChaCha8Rng,
) -> Result<Result<Layout, &'static str>, ScenegenError> {
    let n = rng.gen_range(config.min_instances..=config.max_instances) as usize;
    let mut masks: Vec<BinaryMask> = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    let mut placed: Vec<Placement> = Vec::with_capacity(n);
    for _ in 0..n {
        let spec = ShapeSpec::draw(config, grid, rng);
        // Deliberate overlaps anchor to an instance that has none yet,
        // keeping each pile two deep at most.
        let anchored = if rng.gen::<f64>() < config.cluster_bias {
            let unpaired: Vec<usize> = (0..placed.len()).filter(|&k| !placed[k].paired).collect();
            match unpaired.choose(rng) {
                Some(&a) => {
                    let others: Vec<BinaryMask> = masks
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != a)
                        .map(|(_, m)| m.clone())
                        .collect();
                    place_anchored(grid, &spec, &placed[a], &masks[a], &others, rng)?
                        .map(|hit| (a, hit))
                }
                None => None,
            }
        } else {
            None
        };
        match anchored {
            Some((a, (cx, cy, mask))) => {
                placed[a].paired = true;
                placed.push(Placement { cx, cy, circumradius: spec.circumradius(), paired: true });
                masks.push(mask);
            }
            None => {
                let (cx, cy) = place_spaced(grid, &spec, &placed, rng);
                let Some(mask) = spec.rasterize(grid, cx, cy)? else {
                    return Ok(Err("degenerate shape"));
                };
                placed.push(Placement { cx, cy, circumradius: spec.circumradius(), paired: false });
                masks.push(mask);
            }
        }
        classes.push(rng.gen_range(1..=config.thing_classes));
    }
    let mut z_ranks: Vec<u32> = (0..n as u32).collect();
    z_ranks.shuffle(rng);
    let layout = Layout { masks, classes, z_ranks };
    Ok(match feasible(config, grid, &layout)? {
        None => Ok(layout),
        Some(reason) => Err(reason),
    })
}

fn build_scene(
    config: &SceneGenConfig,
    catalog: &ClassCatalog,
    grid: ImageGrid,
    layout: Layout,
    image_id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Scene, ScenegenError> {
    let n = layout.masks.len();

    // Ground-truth panoptic map: paint instances nearest first, then
    // lay stuff bands under them.
    let mut builder = PanopticBuilder::new(grid, catalog);
    let mut by_depth: Vec<usize> = (0..n).collect();
    by_depth.sort_by_key(|&k| std::cmp::Reverse(layout.z_ranks[k]));
    for &k in &by_depth {
        let visible = layout.masks[k].subtract(builder.assigned())?;
        builder.push_thing(layout.classes[k], k as u32, &visible)?;
    }
    let mut band_labels = vec![0u32; grid.pixel_count() as usize];
    for (class_id, rows) in config.stuff_bands() {
        let span = (rows.start * grid.width()) as usize..(rows.end * grid.width()) as usize;
        band_labels[span].fill(class_id);
    }
    let bands = SemanticMap::new(grid, band_labels.clone())?;
    builder.merge_stuff(&bands, 1)?;
    let gt_panoptic = builder.finish()?;

    // The clean semantic map is the class of every panoptic pixel.
    let category_of: std::collections::HashMap<u32, u32> =
        gt_panoptic.segments().iter().map(|s| (s.id, s.category_id)).collect();
    let mut semantic_labels: Vec<u32> =
        gt_panoptic.pixels().iter().map(|id| category_of[id]).collect();
    if config.perturb.semantic_noise > 0.0 {
        let all_ids: Vec<u32> = catalog.classes().iter().map(|c| c.id).collect();
        for label in semantic_labels.iter_mut() {
            if rng.gen::<f64>() < config.perturb.semantic_noise {
                *label = all_ids[rng.gen_range(0..all_ids.len())];
            }
        }
    }
    let semantic = SemanticMap::new(grid, semantic_labels)?;

    let gt_instances: Vec<GtInstance> = (0..n)
        .map(|k| GtInstance {
            id: k as u32,
            class_id: layout.classes[k],
            z_rank: layout.z_ranks[k],
            mask: layout.masks[k].clone(),
        })
        .collect();

    let mut proposals = Vec::with_capacity(n);
    for k in 0..n {
        let t = if n > 1 { layout.z_ranks[k] as f64 / (n as f64 - 1.0) } else { 1.0 };
        let confidence = match config.confidence {
            ConfidenceModel::Correlated { sigma } => 0.55 + 0.4 * t + sigma * approx_gaussian(rng),
            ConfidenceModel::Adversarial { sigma } => {
                0.55 + 0.4 * (1.0 - t) + sigma * approx_gaussian(rng)
            }
            ConfidenceModel::Random => rng.gen_range(0.501..0.999),
        }
        .clamp(0.501, 0.999);
        if config.perturb.dropout_prob > 0.0 && rng.gen::<f64>() < config.perturb.dropout_prob {
            continue;
        }
        let mut mask = layout.masks[k].clone();
        if config.perturb.morph_radius > 0 {
            let r = config.perturb.morph_radius as i64;
            mask = morph_mask(&mask, rng.gen_range(-r..=r))?;
            if mask.is_empty() {
                continue;
            }
        }
        proposals.push(InstanceProposal {
            id: k as u32,
            class_id: layout.classes[k],
            confidence,
            mask,
        });
    }
    if config.perturb.spurious_rate > 0.0 {
        let (w, h) = (grid.width() as f64, grid.height() as f64);
        let mut next_id = n as u32;
        for _ in 0..n {
            if rng.gen::<f64>() >= config.perturb.spurious_rate {
                continue;
            }
            let spec = ShapeSpec::draw(config, grid, rng);
            let cx = rng.gen_range(spec.rx..=w - spec.rx);
            let cy = rng.gen_range(spec.ry..=h - spec.ry);
            if let Some(mask) = spec.rasterize(grid, cx, cy)? {
                proposals.push(InstanceProposal {
                    id: next_id,
                    class_id: rng.gen_range(1..=config.thing_classes),
                    confidence: rng.gen_range(0.501..0.75),
                    mask,
                });
                next_id += 1;
            }
        }
    }

    Ok(Scene {
        image_id,
        grid,
        catalog: catalog.clone(),
        proposals,
        semantic,
        gt_instances: Some(gt_instances),
        gt_panoptic: Some(gt_panoptic),
    })
}

/// Generates one scene, retrying with derived seeds until an attempt
/// satisfies every feasibility constraint.
pub fn generate_scene(
    config: &SceneGenConfig,
    image_id: u64,
    seed: u64,
) -> Result<Scene, ScenegenError> {
    config.validate()?;
    let catalog = config.catalog()?;
    let grid = ImageGrid::new(config.width, config.height)?;
    let mut last_rejection = "no attempt made";
    for attempt in 0..config.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, attempt as u64));
        match try_layout(config, grid, &mut rng)? {
            Ok(layout) => return build_scene(config, &catalog, grid, layout, image_id, &mut rng),
            Err(reason) => last_rejection = reason,
        }
    }
    Err(ScenegenError::Infeasible { seed, attempts: config.max_attempts, last_rejection })
}

/// Generates `count` scenes with image ids 0..count and per-scene
/// seeds derived from `seed`.
pub fn generate_corpus(
    config: &SceneGenConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<Scene>, ScenegenError> {
    (0..count)
        .map(|i| generate_scene(config, i as u64, corpus_scene_seed(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse_with_occlusion, FusionParams};
    use crate::mask::Run;
    use crate::occlusion::{derive_gt_occlusion, OraclePredictor};

    #[test]
    fn config_serde_round_trips_and_defaults() {
        let config = SceneGenConfig::default();
        config.validate().unwrap();
        let json = serde_json::to_string(&config).unwrap();
        let back: SceneGenConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, back);
        let empty: SceneGenConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(config, empty);
        assert!(serde_json::from_str::<SceneGenConfig>(r#"{"wdith": 5}"#).is_err());
        let partial: SceneGenConfig =
            serde_json::from_str(r#"{"confidence": {"model": "adversarial", "sigma": 0.2}}"#)
                .unwrap();
        assert_eq!(partial.confidence, ConfidenceModel::Adversarial { sigma: 0.2 });
        assert_eq!(partial.width, 320);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let cases: Vec<(&str, SceneGenConfig)> = vec![
            ("classes", SceneGenConfig { stuff_classes: 0, ..Default::default() }),
            (
                "instances",
                SceneGenConfig { min_instances: 5, max_instances: 2, ..Default::default() },
            ),
            ("size", SceneGenConfig { size_frac: (0.4, 0.2), ..Default::default() }),
            ("shapes", SceneGenConfig { shapes: vec![], ..Default::default() }),
            (
                "sigma",
                SceneGenConfig {
                    confidence: ConfidenceModel::Correlated { sigma: -1.0 },
                    ..Default::default()
                },
            ),
            (
                "probability",
                SceneGenConfig {
                    perturb: Perturbations { dropout_prob: 1.5, ..Default::default() },
                    ..Default::default()
                },
            ),
            ("visible", SceneGenConfig { min_visible_frac: 0.0, ..Default::default() }),
            ("stuff pixels", SceneGenConfig { min_stuff_pixels: 80_000, ..Default::default() }),
        ];
        for (what, config) in cases {
            assert!(config.validate().is_err(), "{what} should be rejected");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SceneGenConfig::default();
        let a = generate_scene(&config, 5, 99).unwrap();
        let b = generate_scene(&config, 5, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&config, 5, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_scenes_are_valid_and_feasible() {
        let config = SceneGenConfig::default();
        for seed in 0..10 {
            let scene = generate_scene(&config, seed, seed).unwrap();
            assert_eq!(scene.validate(), Vec::<String>::new());
            let instances = scene.gt_instances.as_ref().unwrap();
            let panoptic = scene.gt_panoptic.as_ref().unwrap();
            let n = instances.len() as u32;
            assert!((config.min_instances..=config.max_instances).contains(&n));
            // Visibility floor.
            for inst in instances {
                let visible = panoptic
                    .segments()
                    .iter()
                    .find(|s| s.source_proposal == Some(inst.id))
                    .map(|s| panoptic.segment_area(s.id).unwrap())
                    .unwrap_or(0);
                assert!(visible as f64 >= config.min_visible_frac * inst.mask.area() as f64);
            }
            // Stuff floors: one segment per stuff class, large enough.
            for class_id in scene.catalog.stuff_ids() {
                let area: u64 = panoptic
                    .segments()
                    .iter()
                    .filter(|s| s.category_id == class_id)
                    .map(|s| panoptic.segment_area(s.id).unwrap())
                    .sum();
                assert!(area >= config.min_stuff_pixels, "class {class_id} kept {area} px");
            }
            // No void: bands tile the grid.
            assert_eq!(panoptic.void_area(), 0);
            // At least one overlapping pair, each appreciable.
            let mut overlapping = 0;
            for i in 0..instances.len() {
                for j in i + 1..instances.len() {
                    let stats = instances[i].mask.intersection_stats(&instances[j].mask).unwrap();
                    if stats.area_inter > 0 {
                        overlapping += 1;
                        assert!(stats.ratio_i.max(stats.ratio_j) >= config.min_overlap_ratio);
                    }
                }
            }
            assert!(overlapping >= config.min_overlapping_pairs);
            // Unperturbed proposals mirror the instances exactly.
            assert_eq!(scene.proposals.len(), instances.len());
            for (p, inst) in scene.proposals.iter().zip(instances) {
                assert_eq!(p.id, inst.id);
                assert_eq!(p.class_id, inst.class_id);
                assert_eq!(p.mask, inst.mask);
                assert!((0.501..=0.999).contains(&p.confidence));
            }
        }
    }

    #[test]
    fn derived_occlusion_matches_depth_order() {
        let config = SceneGenConfig::default();
        for seed in 0..5 {
            let scene = generate_scene(&config, seed, 1000 + seed).unwrap();
            let instances = scene.gt_instances.as_ref().unwrap();
            let matrix =
                derive_gt_occlusion(instances, scene.gt_panoptic.as_ref().unwrap(), 0.2).unwrap();
            for i in 0..instances.len() {
                for j in 0..instances.len() {
                    if i == j {
                        continue;
                    }
                    let stats = instances[i].mask.intersection_stats(&instances[j].mask).unwrap();
                    if stats.appreciable(0.2) {
                        let expected = instances[i].z_rank > instances[j].z_rank;
                        assert_eq!(
                            matrix.get(i, j).unwrap(),
                            expected as i8,
                            "pair ({i}, {j}) of seed {seed}"
                        );
                    } else {
                        assert_eq!(matrix.get(i, j).unwrap(), -1);
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_fusion_reproduces_ground_truth() {
        let config = SceneGenConfig::default();
        let params = FusionParams::default();
        for seed in 0..5 {
            let scene = generate_scene(&config, seed, 7000 + seed).unwrap();
            let oracle = OraclePredictor::for_scene(&scene, params.occlusion_ratio).unwrap();
            let (fused, _) = fuse_with_occlusion(&scene, &params, &oracle).unwrap();
            let gt = scene.gt_panoptic.as_ref().unwrap();
            assert_eq!(fused.pixel_keys(), gt.pixel_keys(), "seed {seed}");
            assert_eq!(fused.segments().len(), gt.segments().len());
        }
    }

    #[test]
    fn depth_limits_and_overlap_budgets_hold() {
        let config = SceneGenConfig {
            min_instances: 7,
            max_instances: 10,
            thing_classes: 2,
            min_overlapping_pairs: 2,
            max_cover_depth: 2,
            max_total_overlap_frac: 0.45,
            confidence: ConfidenceModel::Adversarial { sigma: 0.0 },
            ..Default::default()
        };
        for seed in 0..3 {
            let scene = generate_scene(&config, seed, 31 + seed).unwrap();
            let instances = scene.gt_instances.as_ref().unwrap();
            let pixels = scene.grid.pixel_count() as usize;
            let mut cover = vec![0usize; pixels];
            for inst in instances {
                for run in inst.mask.runs() {
                    for x in run.start..run.end() {
                        cover[x as usize] += 1;
                    }
                }
            }
            assert!(cover.iter().all(|&c| c <= 2));
            for inst in instances {
                let shared = inst
                    .mask
                    .runs()
                    .iter()
                    .flat_map(|r| r.start..r.end())
                    .filter(|&x| cover[x as usize] >= 2)
                    .count() as f64;
                assert!(shared <= 0.45 * inst.mask.area() as f64);
            }
            // Adversarial, noiseless: nearest instance scores lowest.
            let nearest = instances.iter().max_by_key(|i| i.z_rank).unwrap();
            let farthest = instances.iter().min_by_key(|i| i.z_rank).unwrap();
            let conf_of = |id: u32| scene.proposals.iter().find(|p| p.id == id).unwrap().confidence;
            assert!(conf_of(nearest.id) < conf_of(farthest.id));
        }
    }

    #[test]
    fn perturbations_take_effect() {
        let base = SceneGenConfig::default();
        let seed = 4242;
        let clean = generate_scene(&base, 0, seed).unwrap();

        let morphed = SceneGenConfig {
            perturb: Perturbations { morph_radius: 2, ..Default::default() },
            ..base.clone()
        };
        let scene = generate_scene(&morphed, 0, seed).unwrap();
        let instances = scene.gt_instances.as_ref().unwrap();
        assert!(
            scene.proposals.iter().any(|p| p.mask != instances[p.id as usize].mask),
            "morphing changed no mask"
        );
        assert!(scene.validate().is_empty());

        let dropped = SceneGenConfig {
            perturb: Perturbations { dropout_prob: 1.0, ..Default::default() },
            ..base.clone()
        };
        assert!(generate_scene(&dropped, 0, seed).unwrap().proposals.is_empty());

        let spurious = SceneGenConfig {
            perturb: Perturbations { spurious_rate: 1.0, ..Default::default() },
            ..base.clone()
        };
        let scene = generate_scene(&spurious, 0, seed).unwrap();
        let n = scene.gt_instances.as_ref().unwrap().len();
        assert!(scene.proposals.len() > n);
        assert!(scene.validate().is_empty());

        let noisy = SceneGenConfig {
            perturb: Perturbations { semantic_noise: 0.5, ..Default::default() },
            ..base.clone()
        };
        let scene = generate_scene(&noisy, 0, seed).unwrap();
        assert_ne!(scene.semantic.labels(), clean.semantic.labels());
        assert!(scene.validate().is_empty());
    }

    #[test]
    fn impossible_constraints_fail_cleanly() {
        let config =
            SceneGenConfig { min_overlapping_pairs: 500, max_attempts: 3, ..Default::default() };
        assert!(matches!(
            generate_scene(&config, 0, 1),
            Err(ScenegenError::Infeasible { seed: 1, attempts: 3, .. })
        ));
    }

    #[test]
    fn corpus_ids_and_seeds_are_stable() {
        let config = SceneGenConfig::default();
        let corpus = generate_corpus(&config, 4, 77).unwrap();
        assert_eq!(corpus.len(), 4);
        for (i, scene) in corpus.iter().enumerate() {
            assert_eq!(scene.image_id, i as u64);
            let again = generate_scene(&config, i as u64, corpus_scene_seed(77, i as u64)).unwrap();
            assert_eq!(*scene, again);
        }
    }

    #[test]
    fn morphology_dilates_and_erodes() {
        let grid = ImageGrid::new(8, 5).unwrap();
        // Single pixel at (3, 2).
        let mask = BinaryMask::from_runs(grid, vec![Run::new(2 * 8 + 3, 1)]).unwrap();
        let dilated = morph_mask(&mask, 1).unwrap();
        assert_eq!(dilated.area(), 9);
        let back = morph_mask(&dilated, -1).unwrap();
        assert_eq!(back, mask);
        // Eroding the pixel kills it; at the border, erosion consumes
        // inward.
        assert!(morph_mask(&mask, -1).unwrap().is_empty());
        let full = BinaryMask::full(grid);
        let eroded = morph_mask(&full, -1).unwrap();
        assert_eq!(eroded.area(), 6 * 3);
        let redilated = morph_mask(&eroded, 1).unwrap();
        assert_eq!(redilated, full);
    }
}
