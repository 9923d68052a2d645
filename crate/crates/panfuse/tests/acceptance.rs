//! Acceptance suite: ten end-to-end checks, each printing one
//! [PASS]/[FAIL] line with its measured values. They run inside a
//! single test so the timing-sensitive checks are not disturbed by
//! parallel test execution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panfuse::fusion::{fuse_by_confidence, fuse_with_occlusion, FusionParams, OcclusionScope};
use panfuse::io::{export_panoptic_png, import_panoptic_png, read_scene, write_scene};
use panfuse::mask::{BinaryMask, ImageGrid};
use panfuse::metrics::{aggregate_pq, compute_pq, PqStats};
use panfuse::occlusion::{
    derive_gt_occlusion, evaluate_predictor, predict_occlude, sample_training_pairs,
    train_occlusion_classifier, ClassifierPredictor, OcclusionMatrix, OraclePredictor,
    PairClassifierModel, TrainConfig, TrainingMetadata, PAIR_FEATURE_NAMES,
};
use panfuse::scene::{ClassCatalog, ClassDef, InstanceProposal, PanopticMap, Scene, SegmentInfo};
use panfuse::scenegen::{
    corpus_scene_seed, generate_corpus, ConfidenceModel, Perturbations, SceneGenConfig,
};

fn err(e: impl Display) -> String {
    e.to_string()
}

/// Ground-truth panoptic map of a generated scene.
fn gt(scene: &Scene) -> &PanopticMap {
    scene.gt_panoptic.as_ref().expect("generated scenes carry ground truth")
}

/// Oracle-predicted occlusion fusion of one scene.
fn oracle_fuse(scene: &Scene, params: &FusionParams) -> Result<PanopticMap, String> {
    let oracle = OraclePredictor::for_scene(scene, params.occlusion_ratio).map_err(err)?;
    let (map, _) = fuse_with_occlusion(scene, params, &oracle).map_err(err)?;
    Ok(map)
}

fn corpus_pq(per_image: &[PqStats]) -> Result<panfuse::metrics::PqSummary, String> {
    Ok(aggregate_pq(per_image).map_err(err)?.summary())
}

/// Criterion 1: on unperturbed scenes, occlusion fusion with the oracle
/// reproduces the ground truth pixel for pixel; corpus PQ is exactly 1.
fn oracle_round_trip() -> Result<String, String> {
    let start = Instant::now();
    let config = SceneGenConfig::default();
    let scenes = generate_corpus(&config, 200, 0xAC01).map_err(err)?;
    let params = FusionParams::default();
    let mut per_image = Vec::new();
    for scene in &scenes {
        let map = oracle_fuse(scene, &params)?;
        if map.pixel_keys() != gt(scene).pixel_keys() {
            return Err(format!("scene {} is not pixel-exact", scene.image_id));
        }
        per_image.push(compute_pq(gt(scene), &map, &scene.catalog).map_err(err)?);
    }
    let pq = corpus_pq(&per_image)?.pq;
    let elapsed = start.elapsed().as_secs_f64();
    if pq != 1.0 {
        return Err(format!("corpus PQ {pq} != 1.0"));
    }
    if elapsed >= 60.0 {
        return Err(format!("took {elapsed:.1}s, budget is 60s"));
    }
    Ok(format!("200 scenes pixel-exact, corpus PQ = 1.0, {elapsed:.1}s"))
}

/// Criterion 2: when confidence order contradicts depth, occlusion
/// fusion beats the confidence baseline on things while stuff stays
/// put.
fn directional_improvement() -> Result<String, String> {
    let config = SceneGenConfig {
        confidence: ConfidenceModel::Adversarial { sigma: 0.0 },
        perturb: Perturbations { morph_radius: 1, ..Perturbations::default() },
        ..SceneGenConfig::default()
    };
    let scenes = generate_corpus(&config, 200, 0xAC02).map_err(err)?;
    let params = FusionParams::default();
    let mut wins = 0usize;
    let mut base_stats = Vec::new();
    let mut occ_stats = Vec::new();
    for scene in &scenes {
        let (base_map, _) = fuse_by_confidence(scene, &params).map_err(err)?;
        let occ_map = oracle_fuse(scene, &params)?;
        let base = compute_pq(gt(scene), &base_map, &scene.catalog).map_err(err)?;
        let occ = compute_pq(gt(scene), &occ_map, &scene.catalog).map_err(err)?;
        if occ.summary().pq_things > base.summary().pq_things {
            wins += 1;
        }
        base_stats.push(base);
        occ_stats.push(occ);
    }
    let base = corpus_pq(&base_stats)?;
    let occ = corpus_pq(&occ_stats)?;
    let win_rate = wins as f64 / scenes.len() as f64;
    let things_delta = occ.pq_things - base.pq_things;
    let stuff_delta = (occ.pq_stuff - base.pq_stuff).abs();
    let detail = format!(
        "wins {:.1}%, PQ-things {:.4} -> {:.4} (delta {:+.4}), |PQ-stuff delta| {:.5}",
        win_rate * 100.0,
        base.pq_things,
        occ.pq_things,
        things_delta,
        stuff_delta
    );
    if win_rate < 0.95 {
        return Err(format!("win rate below 95%: {detail}"));
    }
    if things_delta < 0.03 {
        return Err(format!("PQ-things gain below 3 points: {detail}"));
    }
    if stuff_delta > 0.001 {
        return Err(format!("PQ-stuff moved more than 0.1 points: {detail}"));
    }
    Ok(detail)
}

/// Criterion 3: the derived ground-truth occlusion relation equals the
/// generator's depth order on every appreciably overlapping pair.
fn derivation_matches_depth() -> Result<String, String> {
    let config = SceneGenConfig::default();
    let scenes = generate_corpus(&config, 1000, 0xAC03).map_err(err)?;
    let rho = 0.2;
    let mut pairs_checked = 0u64;
    for scene in &scenes {
        let instances = scene.gt_instances.as_ref().expect("generated ground truth");
        let matrix = derive_gt_occlusion(instances, gt(scene), rho).map_err(err)?;
        for i in 0..instances.len() {
            for j in i + 1..instances.len() {
                let stats =
                    instances[i].mask.intersection_stats(&instances[j].mask).map_err(err)?;
                if !stats.appreciable(rho) {
                    continue;
                }
                pairs_checked += 1;
                let expected = instances[i].z_rank > instances[j].z_rank;
                match matrix.get(i, j).map_err(err)? {
                    1 if expected => {}
                    0 if !expected => {}
                    cell => {
                        return Err(format!(
                            "scene {} pair ({i}, {j}): derived {cell}, depth order says {expected}",
                            scene.image_id
                        ))
                    }
                }
            }
        }
    }
    Ok(format!("1000 scenes, {pairs_checked} appreciable pairs, zero mismatches"))
}

fn rect_mask(grid: ImageGrid, x0: u32, y0: u32, w: u32, h: u32) -> BinaryMask {
    let mut bits = vec![false; (grid.width() * grid.height()) as usize];
    for y in y0..(y0 + h).min(grid.height()) {
        for x in x0..(x0 + w).min(grid.width()) {
            bits[(y * grid.width() + x) as usize] = true;
        }
    }
    BinaryMask::from_bitmap(grid, &bits).expect("bitmap sized to grid")
}

/// Criterion 4: the antisymmetrized classifier prediction answers
/// opposite argument orders consistently, for random models and pairs.
fn predictor_consistency() -> Result<String, String> {
    let grid = ImageGrid::new(24, 18).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC04);
    let mut checks = 0u64;
    for round in 0..10_000 {
        // Every eighth model is all zeros to hit the exact-tie path.
        let zero = round % 8 == 0;
        let weights: Vec<f64> = (0..PAIR_FEATURE_NAMES.len())
            .map(|_| if zero { 0.0 } else { rng.gen_range(-2.0..2.0) })
            .collect();
        let model = PairClassifierModel {
            feature_names: PAIR_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights,
            bias: if zero { 0.0 } else { rng.gen_range(-1.0..1.0) },
            metadata: TrainingMetadata {
                seed: 0,
                epochs: 0,
                learning_rate: 0.0,
                pair_count: 0,
                loss_curve: Vec::new(),
            },
        };
        let mut draw = |id: u32| InstanceProposal {
            id,
            class_id: rng.gen_range(1..=3),
            confidence: rng.gen_range(0.501..0.999),
            mask: rect_mask(
                grid,
                rng.gen_range(0..16),
                rng.gen_range(0..12),
                rng.gen_range(1..=8),
                rng.gen_range(1..=6),
            ),
        };
        let a = draw(0);
        let b = draw(1);
        let forward = predict_occlude(&model, &a, &b).map_err(err)?;
        let backward = predict_occlude(&model, &b, &a).map_err(err)?;
        if forward == backward {
            return Err(format!("round {round}: predict(a, b) == predict(b, a) == {forward}"));
        }
        checks += 1;
    }
    Ok(format!("{checks} random pairs, zero antisymmetry violations"))
}

/// Criterion 5: the linear pair classifier trained on 400 scenes
/// reaches the held-out accuracy bar on the remaining 100.
fn classifier_accuracy() -> Result<String, String> {
    let config = SceneGenConfig {
        confidence: ConfidenceModel::Correlated { sigma: 0.05 },
        ..SceneGenConfig::default()
    };
    let scenes = generate_corpus(&config, 500, 0xAC05).map_err(err)?;
    let rho = 0.2;
    let split = 400;

    let mut pairs = Vec::new();
    for (index, scene) in scenes[..split].iter().enumerate() {
        let instances = scene.gt_instances.as_ref().expect("generated ground truth");
        let matrix = derive_gt_occlusion(instances, gt(scene), rho).map_err(err)?;
        let mined = sample_training_pairs(
            scene,
            &matrix,
            rho,
            128,
            corpus_scene_seed(0xAC05, index as u64),
        )
        .map_err(err)?;
        pairs.extend(mined);
    }
    let model = train_occlusion_classifier(&pairs, &TrainConfig::default()).map_err(err)?;

    let holdout: Vec<(&Scene, OcclusionMatrix)> = scenes[split..]
        .iter()
        .map(|scene| {
            let instances = scene.gt_instances.as_ref().expect("generated ground truth");
            derive_gt_occlusion(instances, gt(scene), rho).map(|m| (scene, m))
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let predictor = ClassifierPredictor { model };
    let report =
        evaluate_predictor(&predictor, holdout.iter().map(|(s, m)| (*s, m))).map_err(err)?;
    let accuracy = report.overall.fraction().expect("held-out pairs exist");
    let detail = format!(
        "trained on {} pairs, held-out accuracy {:.4} over {} pairs",
        pairs.len(),
        accuracy,
        report.overall.total
    );
    if accuracy < 0.85 {
        return Err(format!("below the 0.85 bar: {detail}"));
    }
    Ok(detail)
}

/// Criterion 6: the PQ metric fixtures score exactly as computed by
/// hand.
fn pq_fixtures() -> Result<String, String> {
    let catalog = ClassCatalog::new(vec![
        ClassDef { id: 1, name: "box".into(), is_thing: true },
        ClassDef { id: 10, name: "sky".into(), is_thing: false },
    ])
    .map_err(err)?;
    let grid = ImageGrid::new(14, 1).map_err(err)?;
    let thing =
        |id: u32| SegmentInfo { id, category_id: 1, is_thing: true, source_proposal: Some(id) };
    let map = |spans: &[(u32, u32, u32)], segments: Vec<SegmentInfo>| {
        let mut px = vec![0u32; 14];
        for &(s, e, id) in spans {
            px[s as usize..e as usize].fill(id);
        }
        PanopticMap::new(grid, px, segments).map_err(err)
    };

    // Identity: PQ exactly 1.
    let sky = SegmentInfo { id: 2, category_id: 10, is_thing: false, source_proposal: None };
    let ident = map(&[(0, 10, 1), (10, 14, 2)], vec![thing(1), sky])?;
    let identity_pq = compute_pq(&ident, &ident, &catalog).map_err(err)?.summary().pq;
    if identity_pq != 1.0 {
        return Err(format!("identity PQ {identity_pq} != 1.0"));
    }

    // Intersection of 5 on areas 10 and 5: IoU exactly 0.5, no match.
    let gt_map = map(&[(0, 10, 1)], vec![thing(1)])?;
    let half = map(&[(0, 5, 1)], vec![thing(1)])?;
    let half_pq = compute_pq(&gt_map, &half, &catalog).map_err(err)?.summary().pq;
    if half_pq != 0.0 {
        return Err(format!("IoU-0.5 PQ {half_pq} != 0.0"));
    }

    // One 0.8-IoU match plus one false positive: 0.8 / 1.5.
    let frag = map(&[(0, 8, 1), (8, 10, 2)], vec![thing(1), thing(2)])?;
    let frag_pq = compute_pq(&gt_map, &frag, &catalog).map_err(err)?.summary().pq;
    if (frag_pq - 0.8 / 1.5).abs() > 1e-6 {
        return Err(format!("fragmented PQ {frag_pq} != {}", 0.8 / 1.5));
    }
    Ok(format!("identity 1.0, IoU-0.5 gives 0.0, fragmented {frag_pq:.6}"))
}

/// Criterion 7: widening the predictor's scope never hurts and usually
/// helps on a corpus heavy with same-class overlaps.
fn scope_ablation() -> Result<String, String> {
    let config = SceneGenConfig {
        thing_classes: 2,
        min_instances: 7,
        max_instances: 10,
        confidence: ConfidenceModel::Adversarial { sigma: 0.0 },
        min_overlapping_pairs: 2,
        max_cover_depth: 2,
        max_total_overlap_frac: 0.45,
        max_attempts: 256,
        ..SceneGenConfig::default()
    };
    let scenes = generate_corpus(&config, 200, 0xAC07).map_err(err)?;
    let base_params = FusionParams::default();
    let inter_params = FusionParams { scope: OcclusionScope::InterClassOnly, ..base_params };
    let mut strict = 0usize;
    let mut triples = Vec::new();
    for scene in &scenes {
        let (base_map, _) = fuse_by_confidence(scene, &base_params).map_err(err)?;
        let inter_map = oracle_fuse(scene, &inter_params)?;
        let all_map = oracle_fuse(scene, &base_params)?;
        let pq_th = |map: &PanopticMap| -> Result<f64, String> {
            Ok(compute_pq(gt(scene), map, &scene.catalog).map_err(err)?.summary().pq_things)
        };
        let (b, i, a) = (pq_th(&base_map)?, pq_th(&inter_map)?, pq_th(&all_map)?);
        if i < b - 1e-12 || a < i - 1e-12 {
            return Err(format!(
                "scene {}: chain not monotone: baseline {b:.4}, inter {i:.4}, all {a:.4}",
                scene.image_id
            ));
        }
        if i > b + 1e-12 || a > i + 1e-12 {
            strict += 1;
        }
        triples.push((b, i, a));
    }
    let n = scenes.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| triples.iter().map(f).sum::<f64>() / n;
    let strict_rate = strict as f64 / n;
    let detail = format!(
        "mean PQ-things baseline {:.4} <= inter {:.4} <= all {:.4}, strict on {:.1}% of scenes",
        mean(|t| t.0),
        mean(|t| t.1),
        mean(|t| t.2),
        strict_rate * 100.0
    );
    if strict_rate < 0.8 {
        return Err(format!("strict improvement below 80%: {detail}"));
    }
    Ok(detail)
}

/// Criterion 8: occlusion fusion costs at most 10% more time than the
/// confidence baseline on dense 640x480 scenes.
fn fusion_overhead() -> Result<String, String> {
    let config = SceneGenConfig {
        width: 640,
        height: 480,
        min_instances: 40,
        max_instances: 80,
        size_frac: (0.06, 0.18),
        cluster_bias: 0.3,
        min_visible_frac: 0.05,
        min_overlap_ratio: 0.0,
        min_overlapping_pairs: 0,
        min_stuff_pixels: 2000,
        max_attempts: 256,
        ..SceneGenConfig::default()
    };
    let scenes = generate_corpus(&config, 16, 0xAC08).map_err(err)?;
    let params = FusionParams::default();
    let proposals = scenes.iter().map(|s| s.proposals.len()).max().unwrap_or(0);
    if proposals > 100 {
        return Err(format!("{proposals} proposals exceed the 100 budget"));
    }
    let oracles: Vec<OraclePredictor> = scenes
        .iter()
        .map(|s| OraclePredictor::for_scene(s, params.occlusion_ratio))
        .collect::<Result<_, _>>()
        .map_err(err)?;

    // Warm-up pass, then best of five timed passes per strategy.
    for (scene, oracle) in scenes.iter().zip(&oracles) {
        fuse_by_confidence(scene, &params).map_err(err)?;
        fuse_with_occlusion(scene, &params, oracle).map_err(err)?;
    }
    let mut best_base = f64::INFINITY;
    let mut best_occ = f64::INFINITY;
    for _ in 0..5 {
        let start = Instant::now();
        for scene in &scenes {
            fuse_by_confidence(scene, &params).map_err(err)?;
        }
        best_base = best_base.min(start.elapsed().as_secs_f64());
        let start = Instant::now();
        for (scene, oracle) in scenes.iter().zip(&oracles) {
            fuse_with_occlusion(scene, &params, oracle).map_err(err)?;
        }
        best_occ = best_occ.min(start.elapsed().as_secs_f64());
    }
    let ratio = best_occ / best_base;
    let detail = format!(
        "16 scenes, <= {} proposals: baseline {:.2} ms/scene, occlusion {:.2} ms/scene, ratio {:.3}",
        proposals,
        best_base * 1000.0 / 16.0,
        best_occ * 1000.0 / 16.0,
        ratio
    );
    if ratio > 1.10 {
        return Err(format!("overhead above 1.10x: {detail}"));
    }
    Ok(detail)
}

/// Criterion 9: a tau x rho sweep on a fixed corpus is deterministic
/// down to the serialized bytes.
fn sweep_determinism() -> Result<String, String> {
    let sweep = || -> Result<String, String> {
        let config = SceneGenConfig {
            perturb: Perturbations { morph_radius: 1, ..Perturbations::default() },
            ..SceneGenConfig::default()
        };
        let scenes = generate_corpus(&config, 40, 0xAC09).map_err(err)?;
        let mut table: BTreeMap<String, f64> = BTreeMap::new();
        for tau in [0.4, 0.5, 0.6] {
            for rho in [0.05, 0.1, 0.2] {
                let params = FusionParams {
                    overlap_threshold: tau,
                    occlusion_ratio: rho,
                    ..FusionParams::default()
                };
                let mut per_image = Vec::new();
                for scene in &scenes {
                    let map = oracle_fuse(scene, &params)?;
                    per_image.push(compute_pq(gt(scene), &map, &scene.catalog).map_err(err)?);
                }
                table.insert(format!("tau={tau} rho={rho}"), corpus_pq(&per_image)?.pq);
            }
        }
        serde_json::to_string_pretty(&table).map_err(err)
    };
    let first = sweep()?;
    let second = sweep()?;
    if first != second {
        return Err("repeated sweep runs differ".into());
    }
    let cells = first.matches("tau=").count();
    if cells != 9 {
        return Err(format!("expected 9 sweep cells, found {cells}"));
    }
    Ok("3x3 sweep, repeated runs byte-identical".into())
}

/// Criterion 10: scene JSON and panoptic PNG round-trips are lossless,
/// and the id encoding matches its fixture.
fn format_round_trips() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let perturbed = SceneGenConfig {
        confidence: ConfidenceModel::Random,
        perturb: Perturbations {
            morph_radius: 2,
            dropout_prob: 0.15,
            spurious_rate: 0.3,
            semantic_noise: 0.02,
        },
        ..SceneGenConfig::default()
    };
    let mut scenes = generate_corpus(&SceneGenConfig::default(), 50, 0xAC10).map_err(err)?;
    scenes.extend(generate_corpus(&perturbed, 50, 0xAC11).map_err(err)?);

    for (k, scene) in scenes.iter().enumerate() {
        let path = dir.path().join(format!("scene_{k}.json"));
        write_scene(scene, &path).map_err(err)?;
        if &read_scene(&path).map_err(err)? != scene {
            return Err(format!("scene {k} JSON round-trip is lossy"));
        }
        let png = dir.path().join(format!("pan_{k}.png"));
        let table = dir.path().join(format!("pan_{k}.json"));
        export_panoptic_png(gt(scene), &png, &table).map_err(err)?;
        if &import_panoptic_png(&png, &table).map_err(err)? != gt(scene) {
            return Err(format!("scene {k} PNG round-trip is lossy"));
        }
    }

    // 70000 = 112 + 256 * 17 + 65536 * 1.
    let grid = ImageGrid::new(2, 1).map_err(err)?;
    let map = PanopticMap::new(
        grid,
        vec![70_000, 0],
        vec![SegmentInfo { id: 70_000, category_id: 1, is_thing: true, source_proposal: Some(0) }],
    )
    .map_err(err)?;
    let png = dir.path().join("fixture.png");
    let table = dir.path().join("fixture.json");
    export_panoptic_png(&map, &png, &table).map_err(err)?;
    let img = image_pixel(&png, 0, 0)?;
    if img != [112, 17, 1] {
        return Err(format!("70000 encoded as {img:?}, expected [112, 17, 1]"));
    }
    Ok("100 scenes lossless in JSON and PNG, 70000 -> (112, 17, 1)".into())
}

/// First pixel of a PNG, via the same reader the importer uses.
fn image_pixel(path: &std::path::Path, x: u32, y: u32) -> Result<[u8; 3], String> {
    let img = image::open(path).map_err(err)?.to_rgb8();
    Ok(img.get_pixel(x, y).0)
}

#[test]
fn acceptance() {
    type Criterion = fn() -> Result<String, String>;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("oracle round-trip", oracle_round_trip),
        ("directional improvement", directional_improvement),
        ("derivation matches depth", derivation_matches_depth),
        ("predictor consistency", predictor_consistency),
        ("classifier accuracy", classifier_accuracy),
        ("pq fixtures", pq_fixtures),
        ("scope ablation", scope_ablation),
        ("fusion overhead", fusion_overhead),
        ("sweep determinism", sweep_determinism),
        ("format round-trips", format_round_trips),
    ];
    let mut failures = Vec::new();
    for (index, (name, run)) in criteria.into_iter().enumerate() {
        match run() {
            Ok(detail) => println!("[PASS] {:2}. {name}: {detail}", index + 1),
            Err(detail) => {
                println!("[FAIL] {:2}. {name}: {detail}", index + 1);
                failures.push(name);
            }
        }
    }
    assert!(failures.is_empty(), "failed acceptance criteria: {failures:?}");
}
