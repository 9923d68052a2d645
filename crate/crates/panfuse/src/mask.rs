//! Run-length encoded binary masks on a fixed image grid.
//!
//! A mask stores sorted `(start, len)` runs over row-major pixel indices.
//! Runs never cross a row boundary, and abutting runs within a row are
//! always coalesced, so every pixel set has exactly one canonical run
//! list. All set operations walk the run lists with two pointers in
//! linear time; only the explicit bitmap conversions touch individual
//! pixels.

use std::fmt;

use thiserror::Error;

/// Largest pixel count a grid may have.
pub const MAX_PIXELS: u64 = i32::MAX as u64;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("grid dimensions must be nonzero, got {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("grid {width}x{height} exceeds {MAX_PIXELS} pixels")]
    GridTooLarge { width: u32, height: u32 },
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: ImageGrid, right: ImageGrid },
    #[error("invalid run list: {0}")]
    InvalidRuns(String),
    #[error("bitmap has {actual} entries, grid expects {expected}")]
    BitmapLength { expected: u64, actual: usize },
}

/// Image dimensions shared by every mask and map in a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageGrid {
    width: u32,
    height: u32,
}

impl ImageGrid {
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::ZeroDimension { width, height });
        }
        if width as u64 * height as u64 > MAX_PIXELS {
            return Err(MaskError::GridTooLarge { width, height });
        }
        Ok(ImageGrid { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

impl fmt::Display for ImageGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// One maximal horizontal run of set pixels, in row-major indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: u32,
    pub len: u32,
}

impl Run {
    pub fn new(start: u32, len: u32) -> Self {
        Run { start, len }
    }

    pub fn end(&self) -> u32 {
        self.start + self.len
    }
}

/// Areas and overlap ratios of a mask pair, as used by the occlusion
/// machinery. Ratios are relative to each mask's own area and are 0.0
/// for an empty mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntersectionStats {
    pub area_i: u64,
    pub area_j: u64,
    pub area_inter: u64,
    pub ratio_i: f64,
    pub ratio_j: f64,
}

impl IntersectionStats {
    /// True when the overlap is appreciable under threshold `rho`, i.e.
    /// it covers at least `rho` of either mask.
    pub fn appreciable(&self, rho: f64) -> bool {
        self.ratio_i >= rho || self.ratio_j >= rho
    }

    /// The same stats with the roles of the two masks swapped.
    pub fn swapped(&self) -> IntersectionStats {
        IntersectionStats {
            area_i: self.area_j,
            area_j: self.area_i,
            area_inter: self.area_inter,
            ratio_i: self.ratio_j,
            ratio_j: self.ratio_i,
        }
    }
}

/// Axis-aligned pixel bounding box, half-open in both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn area(&self) -> u64 {
        (self.x1 - self.x0) as u64 * (self.y1 - self.y0) as u64
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// A set of pixels on an [`ImageGrid`], stored as canonical RLE runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    grid: ImageGrid,
    runs: Vec<Run>,
}

impl BinaryMask {
    pub fn empty(grid: ImageGrid) -> Self {
        BinaryMask { grid, runs: Vec::new() }
    }

    pub fn full(grid: ImageGrid) -> Self {
        let w = grid.width;
        let runs = (0..grid.height).map(|y| Run::new(y * w, w)).collect();
        BinaryMask { grid, runs }
    }

    /// Builds a mask from an explicit run list, rejecting anything that
    /// is not canonical: runs must be sorted, non-overlapping, separated
    /// by at least one gap pixel within a row, and confined to one row.
    pub fn from_runs(grid: ImageGrid, runs: Vec<Run>) -> Result<Self, MaskError> {
        let w = grid.width;
        let pixels = grid.pixel_count() as u32;
        let mut prev: Option<Run> = None;
        for run in &runs {
            if run.len == 0 {
                return Err(MaskError::InvalidRuns(format!("zero-length run at {}", run.start)));
            }
            if run.end() > pixels {
                return Err(MaskError::InvalidRuns(format!(
                    "run ({}, {}) exceeds grid of {} pixels",
                    run.start, run.len, pixels
                )));
            }
            if run.start / w != (run.end() - 1) / w {
                return Err(MaskError::InvalidRuns(format!(
                    "run ({}, {}) crosses a row boundary",
                    run.start, run.len
                )));
            }
            if let Some(p) = prev {
                if run.start < p.end() {
                    return Err(MaskError::InvalidRuns(format!(
                        "runs out of order or overlapping at {}",
                        run.start
                    )));
                }
                if run.start == p.end() && run.start % w != 0 {
                    return Err(MaskError::InvalidRuns(format!(
                        "adjacent runs not coalesced at {}",
                        run.start
                    )));
                }
            }
            prev = Some(*run);
        }
        Ok(BinaryMask { grid, runs })
    }

    /// Builds a mask from a row-major boolean bitmap.
    pub fn from_bitmap(grid: ImageGrid, bits: &[bool]) -> Result<Self, MaskError> {
        if bits.len() as u64 != grid.pixel_count() {
            return Err(MaskError::BitmapLength {
                expected: grid.pixel_count(),
                actual: bits.len(),
            });
        }
        let w = grid.width as usize;
        let mut runs = Vec::new();
        for y in 0..grid.height as usize {
            let row = &bits[y * w..(y + 1) * w];
            let mut x = 0;
            while x < w {
                if row[x] {
                    let x0 = x;
                    while x < w && row[x] {
                        x += 1;
                    }
                    runs.push(Run::new((y * w + x0) as u32, (x - x0) as u32));
                } else {
                    x += 1;
                }
            }
        }
        Ok(BinaryMask { grid, runs })
    }

    /// Expands the mask to a row-major boolean bitmap.
    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = vec![false; self.grid.pixel_count() as usize];
        for run in &self.runs {
            for p in run.start..run.end() {
                bits[p as usize] = true;
            }
        }
        bits
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().map(|r| r.len as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    fn check_grid(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.grid != other.grid {
            return Err(MaskError::GridMismatch { left: self.grid, right: other.grid });
        }
        Ok(())
    }

    /// Pixels present in both masks.
    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.check_grid(other)?;
        let (a, b) = (&self.runs, &other.runs);
        let mut out = Vec::new();
        let (mut ai, mut bi) = (0, 0);
        while ai < a.len() && bi < b.len() {
            let s = a[ai].start.max(b[bi].start);
            let e = a[ai].end().min(b[bi].end());
            if s < e {
                out.push(Run::new(s, e - s));
            }
            // Advance whichever interval ends first.
            if a[ai].end() <= b[bi].end() {
                ai += 1;
            } else {
                bi += 1;
            }
        }
        Ok(BinaryMask { grid: self.grid, runs: out })
    }

    /// Pixels present in either mask.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.check_grid(other)?;
        let w = self.grid.width;
        let (a, b) = (&self.runs, &other.runs);
        let mut out: Vec<Run> = Vec::with_capacity(a.len() + b.len());
        let push = |out: &mut Vec<Run>, run: Run| {
            if let Some(last) = out.last_mut() {
                let le = last.end();
                // Merge overlap, and in-row adjacency (never across rows).
                if run.start < le || (run.start == le && le % w != 0) {
                    if run.end() > le {
                        last.len = run.end() - last.start;
                    }
                    return;
                }
            }
            out.push(run);
        };
        let (mut ai, mut bi) = (0, 0);
        while ai < a.len() && bi < b.len() {
            if a[ai].start <= b[bi].start {
                push(&mut out, a[ai]);
                ai += 1;
            } else {
                push(&mut out, b[bi]);
                bi += 1;
            }
        }
        for &run in &a[ai..] {
            push(&mut out, run);
        }
        for &run in &b[bi..] {
            push(&mut out, run);
        }
        Ok(BinaryMask { grid: self.grid, runs: out })
    }

    /// Pixels of `self` not present in `other`.
    pub fn subtract(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.check_grid(other)?;
        let b = &other.runs;
        let mut out = Vec::new();
        let mut bi = 0;
        for run in &self.runs {
            let mut s = run.start;
            let e = run.end();
            while bi < b.len() && b[bi].end() <= s {
                bi += 1;
            }
            // b[bi] may span several of our runs, so scan ahead without
            // consuming it.
            let mut k = bi;
            while k < b.len() && b[k].start < e {
                if b[k].start > s {
                    out.push(Run::new(s, b[k].start - s));
                }
                if b[k].end() >= e {
                    s = e;
                    break;
                }
                s = b[k].end();
                k += 1;
            }
            if s < e {
                out.push(Run::new(s, e - s));
            }
        }
        Ok(BinaryMask { grid: self.grid, runs: out })
    }

    /// Intersection area without materializing the intersection.
    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64, MaskError> {
        self.check_grid(other)?;
        let (a, b) = (&self.runs, &other.runs);
        let mut total = 0u64;
        let (mut ai, mut bi) = (0, 0);
        while ai < a.len() && bi < b.len() {
            let s = a[ai].start.max(b[bi].start);
            let e = a[ai].end().min(b[bi].end());
            if s < e {
                total += (e - s) as u64;
            }
            if a[ai].end() <= b[bi].end() {
                ai += 1;
            } else {
                bi += 1;
            }
        }
        Ok(total)
    }

    /// Areas of both masks, their intersection, and the overlap ratio
    /// relative to each mask.
    pub fn intersection_stats(&self, other: &BinaryMask) -> Result<IntersectionStats, MaskError> {
        let area_inter = self.intersection_area(other)?;
        let area_i = self.area();
        let area_j = other.area();
        let ratio = |inter: u64, area: u64| {
            if area == 0 {
                0.0
            } else {
                inter as f64 / area as f64
            }
        };
        Ok(IntersectionStats {
            area_i,
            area_j,
            area_inter,
            ratio_i: ratio(area_inter, area_i),
            ratio_j: ratio(area_inter, area_j),
        })
    }

    /// Intersection over union; 0.0 when both masks are empty.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64, MaskError> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Ok(0.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Tight bounding box, or None for an empty mask.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        if self.runs.is_empty() {
            return None;
        }
        let w = self.grid.width;
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        for run in &self.runs {
            let y = run.start / w;
            let xs = run.start % w;
            let xe = xs + run.len;
            x0 = x0.min(xs);
            x1 = x1.max(xe);
            y0 = y0.min(y);
            y1 = y1.max(y + 1);
        }
        Some(BoundingBox { x0, y0, x1, y1 })
    }

    /// Mean pixel coordinates `(x, y)`, or None for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.runs.is_empty() {
            return None;
        }
        let w = self.grid.width as u64;
        let (mut sum_x, mut sum_y) = (0u64, 0u64);
        for run in &self.runs {
            let y = run.start as u64 / w;
            let xs = run.start as u64 % w;
            let n = run.len as u64;
            // Sum of xs..xs+n.
            sum_x += n * xs + n * (n - 1) / 2;
            sum_y += n * y;
        }
        let area = self.area() as f64;
        Some((sum_x as f64 / area, sum_y as f64 / area))
    }
}
