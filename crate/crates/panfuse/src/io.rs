//! File formats: native scene JSON, the panoptic PNG id-map pair,
//! occlusion-matrix / model / result files, and a color renderer.
//!
//! Every format carries a `version` field and readers reject unknown
//! versions. Masks serialize as lists of `[start, length]` pairs over
//! row-major pixel indices. Readers validate; they never coerce a
//! malformed document into a usable value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::TraceSummary;
use crate::mask::{BinaryMask, ImageGrid, MaskError, Run};
use crate::metrics::PqStats;
use crate::occlusion::{OcclusionError, OcclusionMatrix, PairClassifierModel, TrainingMetadata};
use crate::scene::{
    ClassCatalog, ClassDef, GtInstance, InstanceProposal, PanopticMap, Scene, SegmentInfo,
    SemanticMap,
};
use crate::scenegen::mix_seed;

/// Version stamped into every file this module writes.
pub const FORMAT_VERSION: u32 = 1;

/// Largest segment id the 24-bit PNG encoding can carry.
pub const MAX_PNG_ID: u32 = (1 << 24) - 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: format version {found}, this reader expects {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: invalid scene: {}", violations.join("; "))]
    InvalidScene { path: PathBuf, violations: Vec<String> },
    #[error("segment id {0} does not fit the 24-bit PNG encoding")]
    OversizedId(u32),
    #[error("{path}: {source}")]
    Png { path: PathBuf, source: image::ImageError },
    #[error("no per-class results to write")]
    EmptyResults,
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Occlusion(#[from] OcclusionError),
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read { path: path.into(), source })
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Write { path: path.into(), source })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|source| IoError::Parse { path: path.into(), source })
}

fn to_json<T: Serialize>(path: &Path, value: &T) -> Result<String, IoError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| IoError::Parse { path: path.into(), source })?;
    text.push('\n');
    Ok(text)
}

fn check_version(path: &Path, found: u32) -> Result<(), IoError> {
    if found != FORMAT_VERSION {
        return Err(IoError::Version { path: path.into(), found, expected: FORMAT_VERSION });
    }
    Ok(())
}

fn malformed(path: &Path, detail: impl ToString) -> IoError {
    IoError::Malformed { path: path.into(), detail: detail.to_string() }
}

fn runs_doc(mask: &BinaryMask) -> Vec<(u32, u32)> {
    mask.runs().iter().map(|r| (r.start, r.len)).collect()
}

fn mask_from_doc(grid: ImageGrid, runs: &[(u32, u32)]) -> Result<BinaryMask, MaskError> {
    BinaryMask::from_runs(grid, runs.iter().map(|&(s, l)| Run::new(s, l)).collect())
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    version: u32,
    image_id: u64,
    width: u32,
    height: u32,
    catalog: Vec<ClassDoc>,
    proposals: Vec<ProposalDoc>,
    semantic: Vec<ClassRunsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_instances: Option<Vec<GtInstanceDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_panoptic: Option<Vec<SegmentRunsDoc>>,
}

#[derive(Serialize, Deserialize)]
struct ClassDoc {
    id: u32,
    name: String,
    is_thing: bool,
}

#[derive(Serialize, Deserialize)]
struct ProposalDoc {
    id: u32,
    class_id: u32,
    confidence: f64,
    runs: Vec<(u32, u32)>,
}

#[derive(Serialize, Deserialize)]
struct ClassRunsDoc {
    class_id: u32,
    runs: Vec<(u32, u32)>,
}

#[derive(Serialize, Deserialize)]
struct GtInstanceDoc {
    id: u32,
    class_id: u32,
    z_rank: u32,
    runs: Vec<(u32, u32)>,
}

#[derive(Serialize, Deserialize)]
struct SegmentRunsDoc {
    id: u32,
    category_id: u32,
    is_thing: bool,
    source_proposal: Option<u32>,
    runs: Vec<(u32, u32)>,
}

/// Writes `scene` as a version-1 JSON document.
pub fn write_scene(scene: &Scene, path: &Path) -> Result<(), IoError> {
    let doc = SceneDoc {
        version: FORMAT_VERSION,
        image_id: scene.image_id,
        width: scene.grid.width(),
        height: scene.grid.height(),
        catalog: scene
            .catalog
            .classes()
            .iter()
            .map(|c| ClassDoc { id: c.id, name: c.name.clone(), is_thing: c.is_thing })
            .collect(),
        proposals: scene
            .proposals
            .iter()
            .map(|p| ProposalDoc {
                id: p.id,
                class_id: p.class_id,
                confidence: p.confidence,
                runs: runs_doc(&p.mask),
            })
            .collect(),
        semantic: scene
            .semantic
            .present_labels()
            .into_iter()
            .map(|class_id| ClassRunsDoc {
                class_id,
                runs: runs_doc(&scene.semantic.class_mask(class_id)),
            })
            .collect(),
        gt_instances: scene.gt_instances.as_ref().map(|instances| {
            instances
                .iter()
                .map(|g| GtInstanceDoc {
                    id: g.id,
                    class_id: g.class_id,
                    z_rank: g.z_rank,
                    runs: runs_doc(&g.mask),
                })
                .collect()
        }),
        gt_panoptic: scene
            .gt_panoptic
            .as_ref()
            .map(|map| {
                map.segments()
                    .iter()
                    .map(|s| {
                        Ok(SegmentRunsDoc {
                            id: s.id,
                            category_id: s.category_id,
                            is_thing: s.is_thing,
                            source_proposal: s.source_proposal,
                            runs: runs_doc(&map.segment_mask(s.id).expect("listed segment")),
                        })
                    })
                    .collect::<Result<Vec<_>, IoError>>()
            })
            .transpose()?,
    };
    write_text(path, &to_json(path, &doc)?)
}

/// Paints `runs` with `value` onto a zero-initialized id buffer,
/// rejecting out-of-range indices and collisions.
fn paint_runs(
    path: &Path,
    buffer: &mut [u32],
    runs: &[(u32, u32)],
    value: u32,
    what: &str,
) -> Result<(), IoError> {
    for &(start, len) in runs {
        let (start, len) = (start as usize, len as usize);
        let end = start
            .checked_add(len)
            .filter(|&e| e <= buffer.len())
            .ok_or_else(|| malformed(path, format!("{what} {value}: run exceeds the grid")))?;
        for cell in &mut buffer[start..end] {
            if *cell != 0 {
                return Err(malformed(path, format!("{what} {value} overlaps {what} {}", *cell)));
            }
            *cell = value;
        }
    }
    Ok(())
}

/// Reads and fully validates a version-1 scene document.
pub fn read_scene(path: &Path) -> Result<Scene, IoError> {
    let doc: SceneDoc = parse_json(path, &read_text(path)?)?;
    check_version(path, doc.version)?;
    let grid = ImageGrid::new(doc.width, doc.height).map_err(|e| malformed(path, e))?;
    let catalog = ClassCatalog::new(
        doc.catalog
            .into_iter()
            .map(|c| ClassDef { id: c.id, name: c.name, is_thing: c.is_thing })
            .collect(),
    )
    .map_err(|e| malformed(path, e))?;

    let proposals = doc
        .proposals
        .into_iter()
        .map(|p| {
            Ok(InstanceProposal {
                id: p.id,
                class_id: p.class_id,
                confidence: p.confidence,
                mask: mask_from_doc(grid, &p.runs)
                    .map_err(|e| malformed(path, format!("proposal {}: {e}", p.id)))?,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;

    let mut labels = vec![0u32; grid.pixel_count() as usize];
    for entry in &doc.semantic {
        if entry.class_id == 0 {
            return Err(malformed(path, "semantic entry uses reserved class id 0"));
        }
        paint_runs(path, &mut labels, &entry.runs, entry.class_id, "semantic class")?;
    }
    let semantic = SemanticMap::new(grid, labels).map_err(|e| malformed(path, e))?;

    let gt_instances = doc
        .gt_instances
        .map(|instances| {
            instances
                .into_iter()
                .map(|g| {
                    Ok(GtInstance {
                        id: g.id,
                        class_id: g.class_id,
                        z_rank: g.z_rank,
                        mask: mask_from_doc(grid, &g.runs)
                            .map_err(|e| malformed(path, format!("instance {}: {e}", g.id)))?,
                    })
                })
                .collect::<Result<Vec<_>, IoError>>()
        })
        .transpose()?;

    let gt_panoptic = doc
        .gt_panoptic
        .map(|segments| {
            let mut pixels = vec![0u32; grid.pixel_count() as usize];
            let mut table = Vec::with_capacity(segments.len());
            for s in &segments {
                paint_runs(path, &mut pixels, &s.runs, s.id, "segment")?;
                table.push(SegmentInfo {
                    id: s.id,
                    category_id: s.category_id,
                    is_thing: s.is_thing,
                    source_proposal: s.source_proposal,
                });
            }
            PanopticMap::new(grid, pixels, table).map_err(|e| malformed(path, e))
        })
        .transpose()?;

    let scene = Scene {
        image_id: doc.image_id,
        grid,
        catalog,
        proposals,
        semantic,
        gt_instances,
        gt_panoptic,
    };
    let violations = scene.validate();
    if !violations.is_empty() {
        return Err(IoError::InvalidScene { path: path.into(), violations });
    }
    Ok(scene)
}

#[derive(Serialize, Deserialize)]
struct SegmentTableDoc {
    version: u32,
    segments: Vec<SegmentEntryDoc>,
}

#[derive(Serialize, Deserialize)]
struct SegmentEntryDoc {
    id: u32,
    category_id: u32,
    is_thing: bool,
    source_proposal: Option<u32>,
}

/// Encodes one segment id into PNG channels: id = R + 256 G + 65536 B.
fn id_to_rgb(id: u32) -> [u8; 3] {
    [(id & 0xFF) as u8, ((id >> 8) & 0xFF) as u8, ((id >> 16) & 0xFF) as u8]
}

fn save_rgb(path: &Path, grid: ImageGrid, data: Vec<u8>) -> Result<(), IoError> {
    let img = image::RgbImage::from_raw(grid.width(), grid.height(), data)
        .expect("buffer sized from grid");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| IoError::Png { path: path.into(), source })
}

/// Writes `map` as an id-encoded PNG plus a JSON segment table.
pub fn export_panoptic_png(
    map: &PanopticMap,
    png_path: &Path,
    table_path: &Path,
) -> Result<(), IoError> {
    if let Some(s) = map.segments().iter().find(|s| s.id > MAX_PNG_ID) {
        return Err(IoError::OversizedId(s.id));
    }
    let data: Vec<u8> = map.pixels().iter().flat_map(|&id| id_to_rgb(id)).collect();
    save_rgb(png_path, map.grid(), data)?;
    let table = SegmentTableDoc {
        version: FORMAT_VERSION,
        segments: map
            .segments()
            .iter()
            .map(|s| SegmentEntryDoc {
                id: s.id,
                category_id: s.category_id,
                is_thing: s.is_thing,
                source_proposal: s.source_proposal,
            })
            .collect(),
    };
    write_text(table_path, &to_json(table_path, &table)?)
}

/// Reads an id-encoded PNG and its segment table back into a map.
pub fn import_panoptic_png(png_path: &Path, table_path: &Path) -> Result<PanopticMap, IoError> {
    let img = image::open(png_path)
        .map_err(|source| IoError::Png { path: png_path.into(), source })?
        .to_rgb8();
    let grid = ImageGrid::new(img.width(), img.height()).map_err(|e| malformed(png_path, e))?;
    let pixels: Vec<u32> =
        img.pixels().map(|p| p.0[0] as u32 + 256 * p.0[1] as u32 + 65536 * p.0[2] as u32).collect();
    let table: SegmentTableDoc = parse_json(table_path, &read_text(table_path)?)?;
    check_version(table_path, table.version)?;
    let segments = table
        .segments
        .into_iter()
        .map(|s| SegmentInfo {
            id: s.id,
            category_id: s.category_id,
            is_thing: s.is_thing,
            source_proposal: s.source_proposal,
        })
        .collect();
    PanopticMap::new(grid, pixels, segments).map_err(|e| malformed(png_path, e))
}

#[derive(Serialize, Deserialize)]
struct OcclusionDoc {
    version: u32,
    image_id: u64,
    n: usize,
    cells: Vec<i8>,
}

/// Writes one image's occlusion matrix.
pub fn write_occlusion_matrix(
    image_id: u64,
    matrix: &OcclusionMatrix,
    path: &Path,
) -> Result<(), IoError> {
    let doc = OcclusionDoc {
        version: FORMAT_VERSION,
        image_id,
        n: matrix.len(),
        cells: matrix.cells().to_vec(),
    };
    write_text(path, &to_json(path, &doc)?)
}

/// Reads an occlusion matrix and the image id it belongs to.
pub fn read_occlusion_matrix(path: &Path) -> Result<(u64, OcclusionMatrix), IoError> {
    let doc: OcclusionDoc = parse_json(path, &read_text(path)?)?;
    check_version(path, doc.version)?;
    let matrix = OcclusionMatrix::from_cells(doc.n, doc.cells).map_err(|e| malformed(path, e))?;
    Ok((doc.image_id, matrix))
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    feature_names: Vec<String>,
    weights: Vec<f64>,
    bias: f64,
    seed: u64,
    epochs: usize,
    learning_rate: f64,
    pair_count: usize,
    loss_curve: Vec<f64>,
}

/// Writes a trained pair classifier with its training metadata.
pub fn write_model(model: &PairClassifierModel, path: &Path) -> Result<(), IoError> {
    let doc = ModelDoc {
        version: FORMAT_VERSION,
        feature_names: model.feature_names.clone(),
        weights: model.weights.clone(),
        bias: model.bias,
        seed: model.metadata.seed,
        epochs: model.metadata.epochs,
        learning_rate: model.metadata.learning_rate,
        pair_count: model.metadata.pair_count,
        loss_curve: model.metadata.loss_curve.clone(),
    };
    write_text(path, &to_json(path, &doc)?)
}

/// Reads a trained pair classifier.
pub fn read_model(path: &Path) -> Result<PairClassifierModel, IoError> {
    let doc: ModelDoc = parse_json(path, &read_text(path)?)?;
    check_version(path, doc.version)?;
    if doc.feature_names.len() != doc.weights.len() {
        return Err(malformed(
            path,
            format!("{} feature names but {} weights", doc.feature_names.len(), doc.weights.len()),
        ));
    }
    Ok(PairClassifierModel {
        feature_names: doc.feature_names,
        weights: doc.weights,
        bias: doc.bias,
        metadata: TrainingMetadata {
            seed: doc.seed,
            epochs: doc.epochs,
            learning_rate: doc.learning_rate,
            pair_count: doc.pair_count,
            loss_curve: doc.loss_curve,
        },
    })
}

#[derive(Serialize)]
struct ResultsDoc<'a> {
    version: u32,
    summary: crate::metrics::PqSummary,
    classes: Vec<crate::metrics::ClassPqRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<&'a [TraceSummary]>,
}

/// Writes evaluation results as JSON plus an aligned text table. Key
/// order and float formatting are fixed, so identical inputs produce
/// identical bytes.
pub fn write_results(
    stats: &PqStats,
    traces: Option<&[TraceSummary]>,
    json_path: &Path,
    table_path: &Path,
) -> Result<(), IoError> {
    if stats.per_class().is_empty() {
        return Err(IoError::EmptyResults);
    }
    let doc = ResultsDoc {
        version: FORMAT_VERSION,
        summary: stats.summary(),
        classes: stats.rows(),
        traces,
    };
    write_text(json_path, &to_json(json_path, &doc)?)?;
    write_text(table_path, &results_table(stats))
}

/// Renders the per-class and summary rows as a fixed-width table.
fn results_table(stats: &PqStats) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>8}  {:>5}  {:>8}  {:>8}  {:>8}  {:>6}  {:>6}  {:>6}",
        "class", "kind", "pq", "sq", "rq", "tp", "fp", "fn"
    );
    for row in stats.rows() {
        let _ = writeln!(
            out,
            "{:>8}  {:>5}  {:>8.4}  {:>8.4}  {:>8.4}  {:>6}  {:>6}  {:>6}",
            row.class_id,
            if row.is_thing { "thing" } else { "stuff" },
            row.pq,
            row.sq,
            row.rq,
            row.tp,
            row.fp,
            row.fn_count,
        );
    }
    let s = stats.summary();
    let _ = writeln!(out, "{:>8}  {:>5}  {:>8.4}  {:>8.4}  {:>8.4}", "all", "", s.pq, s.sq, s.rq);
    let _ = writeln!(out, "{:>8}  {:>5}  {:>8.4}", "things", "", s.pq_things);
    let _ = writeln!(out, "{:>8}  {:>5}  {:>8.4}", "stuff", "", s.pq_stuff);
    out
}

/// Writes `map` as a viewable PNG: void is black, every segment id gets
/// a fixed pseudo-random color.
pub fn render_panoptic_png(map: &PanopticMap, path: &Path) -> Result<(), IoError> {
    let colors: BTreeMap<u32, [u8; 3]> =
        map.segments().iter().map(|s| (s.id, segment_color(s.id))).collect();
    let data: Vec<u8> =
        map.pixels().iter().flat_map(|id| if *id == 0 { [0, 0, 0] } else { colors[id] }).collect();
    save_rgb(path, map.grid(), data)
}

/// Deterministic palette: hash the id, keep channels off pure black.
fn segment_color(id: u32) -> [u8; 3] {
    let h = mix_seed(id as u64, 0xC01_0FF);
    [(h >> 8) as u8 | 0x40, (h >> 24) as u8, (h >> 40) as u8]
}
