//! Cluster-level image analysis: human filtering, crop generation,
//! train/test split, autoencoder scoring, the ratio R and the
//! accept/reject decision.
//!
//! The detector is externalized: person regions arrive as a sidecar JSONL
//! (one object per line: `{"image_id": "...", "boxes": [{"x", "y", "w",
//! "h", "confidence"}]}` with fractional coordinates in [0,1]).

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AeModel, Crop, Topology};
use crate::error::{Error, Result};
use crate::types::{CoherenceSummary, DetectorConfig, EventCandidate};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanAnnotation {
    pub image_id: String,
    pub boxes: Vec<PersonBox>,
}

/// Sidecar annotations keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    by_image: HashMap<String, Vec<PersonBox>>,
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ann: HumanAnnotation) {
        self.by_image.insert(ann.image_id, ann.boxes);
    }

    pub fn boxes_for(&self, image_id: &str) -> Option<&[PersonBox]> {
        self.by_image.get(image_id).map(Vec::as_slice)
    }

    pub fn parse_jsonl(text: &str) -> Result<AnnotationSet> {
        let mut set = AnnotationSet::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            set.insert(serde_json::from_str(line)?);
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<AnnotationSet> {
        AnnotationSet::parse_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn to_jsonl(&self) -> String {
        let mut ids: Vec<&String> = self.by_image.keys().collect();
        ids.sort();
        let mut out = String::new();
        for id in ids {
            let ann = HumanAnnotation {
                image_id: id.clone(),
                boxes: self.by_image[id].clone(),
            };
            out.push_str(&serde_json::to_string(&ann).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Decoded 3-channel image, values in [0,1], channel-major.
#[derive(Debug, Clone)]
pub struct ImageData {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// [3][height][width]
    pub pixels: Vec<f64>,
}

impl ImageData {
    pub fn from_rgb(id: &str, width: usize, height: usize, rgb: &[u8]) -> Self {
        let mut pixels = vec![0.0; 3 * width * height];
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    pixels[c * width * height + y * width + x] =
                        rgb[(y * width + x) * 3 + c] as f64 / 255.0;
                }
            }
        }
        ImageData {
            id: id.to_string(),
            width,
            height,
            pixels,
        }
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[c * self.width * self.height + y * self.width + x]
    }
}

/// Decode a PNG or PPM file to a 3-channel image; grayscale is replicated
/// across channels by the decoder.
pub fn load_image(path: &Path) -> Result<ImageData> {
    let img = image::open(path).map_err(|e| Error::Image {
        image_id: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(ImageData::from_rgb(
        &path.display().to_string(),
        w,
        h,
        rgb.as_raw(),
    ))
}

/// Where candidate image references resolve from.
pub trait ImageSource {
    fn load(&self, image_ref: &str) -> Result<ImageData>;
}

/// Resolves image references as paths relative to a directory.
pub struct DirImageSource {
    pub dir: PathBuf,
}

impl ImageSource for DirImageSource {
    fn load(&self, image_ref: &str) -> Result<ImageData> {
        let path = self.dir.join(image_ref);
        let mut img = load_image(&path)?;
        img.id = image_ref.to_string();
        Ok(img)
    }
}

/// In-memory source, mainly for tests and the synthetic harness.
#[derive(Default)]
pub struct MemoryImageSource {
    pub images: HashMap<String, ImageData>,
}

impl ImageSource for MemoryImageSource {
    fn load(&self, image_ref: &str) -> Result<ImageData> {
        self.images.get(image_ref).cloned().ok_or(Error::Image {
            image_id: image_ref.to_string(),
            reason: "not found".into(),
        })
    }
}

/// Union area of fractional boxes via a 100x100 raster grid; resolution is
/// well inside the decision thresholds (error < 1e-3).
pub fn union_area(boxes: &[PersonBox]) -> f64 {
    const G: usize = 100;
    let mut grid = [false; G * G];
    for b in boxes {
        let x0 = ((b.x * G as f64).floor().max(0.0) as usize).min(G);
        let y0 = ((b.y * G as f64).floor().max(0.0) as usize).min(G);
        let x1 = (((b.x + b.w) * G as f64).ceil().max(0.0) as usize).min(G);
        let y1 = (((b.y + b.h) * G as f64).ceil().max(0.0) as usize).min(G);
        for y in y0..y1 {
            for x in x0..x1 {
                grid[y * G + x] = true;
            }
        }
    }
    grid.iter().filter(|&&v| v).count() as f64 / (G * G) as f64
}

/// Reject an image when its person boxes reach 40% of the area in union, or
/// any single person covers at least 20%.
pub fn is_human_dominated(boxes: &[PersonBox], config: &DetectorConfig) -> bool {
    if boxes
        .iter()
        .any(|b| b.w * b.h >= config.human_area_single_threshold)
    {
        return true;
    }
    union_area(boxes) >= config.human_area_total_threshold
}

/// Keep images that are not human-dominated. A missing annotation entry is
/// treated as zero boxes, with a logged warning.
pub fn filter_human_images(
    image_ids: &[String],
    annotations: &AnnotationSet,
    config: &DetectorConfig,
) -> Vec<String> {
    image_ids
        .iter()
        .filter(|id| {
            let boxes = match annotations.boxes_for(id) {
                Some(b) => b,
                None => {
                    eprintln!("warning: no annotation for image `{id}`, assuming no persons");
                    &[]
                }
            };
            !is_human_dominated(boxes, config)
        })
        .cloned()
        .collect()
}

/// Images eligible for a candidate: posted on a tweet containing at least
/// one top keyword, then human-filtered; deterministic (timestamp, id) order.
pub fn select_images(
    candidate: &EventCandidate,
    annotations: &AnnotationSet,
    config: &DetectorConfig,
) -> Vec<String> {
    let top: BTreeSet<&str> = candidate
        .top_keywords
        .iter()
        .map(|(k, _)| k.as_str())
        .collect();
    let mut refs: Vec<(i64, &str)> = Vec::new();
    let mut seen = BTreeSet::new();
    for t in &candidate.tweets {
        if !t.tags().any(|tag| top.contains(tag)) {
            continue;
        }
        for img in &t.image_refs {
            if seen.insert(img.as_str()) {
                refs.push((t.timestamp, img.as_str()));
            }
        }
    }
    refs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    let ordered: Vec<String> = refs.into_iter().map(|(_, id)| id.to_string()).collect();
    filter_human_images(&ordered, annotations, config)
}

/// Seed derived from the whole (sorted) image set, so every candidate over
/// the same images gets an identical split/training and thus one verdict.
pub fn image_set_seed(global_seed: u64, image_ids: &[String]) -> u64 {
    let mut ids: Vec<&str> = image_ids.iter().map(String::as_str).collect();
    ids.sort_unstable();
    let mut h: u64 = 0xcbf29ce484222325;
    for id in ids {
        for &b in id.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    global_seed ^ h
}

fn image_seed(global_seed: u64, image_id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in image_id.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    global_seed ^ h
}

/// `c` crops at uniformly random valid offsets, from a per-image RNG stream.
pub fn generate_crops(image: &ImageData, c: usize, crop_size: usize, seed: u64) -> Result<Vec<Crop>> {
    if image.width < crop_size || image.height < crop_size {
        return Err(Error::Image {
            image_id: image.id.clone(),
            reason: format!(
                "{}x{} smaller than crop size {crop_size}",
                image.width, image.height
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, &image.id));
    let mut crops = Vec::with_capacity(c);
    for idx in 0..c {
        let oy = rng.random_range(0..=image.height - crop_size);
        let ox = rng.random_range(0..=image.width - crop_size);
        let mut pixels = vec![0.0; 3 * crop_size * crop_size];
        for ch in 0..3 {
            for y in 0..crop_size {
                for x in 0..crop_size {
                    pixels[ch * crop_size * crop_size + y * crop_size + x] =
                        image.pixel(ch, oy + y, ox + x);
                }
            }
        }
        crops.push(Crop::new(pixels, &image.id, idx));
    }
    Ok(crops)
}

/// Per-image-atomic train/test split: all crops of an image land on one side.
#[derive(Debug, Clone)]
pub struct CropPartition {
    pub train_images: Vec<String>,
    pub test_images: Vec<String>,
    pub crops_per_image: usize,
}

/// Shuffle images with a seeded RNG; the first floor(fraction * k) become
/// the training side, clamped so both sides stay non-empty.
pub fn split_partition(
    eligible: &[String],
    train_fraction: f64,
    crops_per_image: usize,
    min_images: usize,
    seed: u64,
) -> Option<CropPartition> {
    let k = eligible.len();
    if k < min_images {
        return None;
    }
    let mut ids: Vec<String> = eligible.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    ids.shuffle(&mut rng);
    let n_train = ((train_fraction * k as f64).floor() as usize).clamp(1, k - 1);
    let test_images = ids.split_off(n_train);
    Some(CropPartition {
        train_images: ids,
        test_images,
        crops_per_image,
    })
}

/// Per-crop reconstruction errors with summary statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct REStats {
    pub errors: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub variance: f64,
}

impl REStats {
    pub fn from_errors(errors: Vec<f64>) -> Self {
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        let variance = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        REStats {
            errors,
            mean,
            median,
            variance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub r_mean: f64,
    pub r_median: f64,
    pub r_variance: f64,
    pub train: REStats,
    pub test: REStats,
    pub verdict: Verdict,
    pub images_used: usize,
    /// Zero train mean RE: R is undefined and the verdict defaults to accept.
    pub degenerate: bool,
}

impl CoherenceReport {
    pub fn summary(&self) -> CoherenceSummary {
        CoherenceSummary {
            r_mean: self.r_mean,
            r_median: self.r_median,
            r_variance: self.r_variance,
            train_mean_re: self.train.mean,
            test_mean_re: self.test.mean,
            images_used: self.images_used,
            verdict: match self.verdict {
                Verdict::Accept => "accept".into(),
                Verdict::Reject => "reject".into(),
            },
        }
    }
}

/// R from already-computed per-crop reconstruction errors: mean test RE over
/// mean train RE, with median and variance ratios reported alongside.
/// The verdict is reject iff R_mean >= threshold.
pub fn coherence_from_errors(
    train_errors: Vec<f64>,
    test_errors: Vec<f64>,
    images_used: usize,
    threshold: f64,
) -> CoherenceReport {
    let train = REStats::from_errors(train_errors);
    let test = REStats::from_errors(test_errors);
    if train.mean == 0.0 {
        return CoherenceReport {
            r_mean: 0.0,
            r_median: 0.0,
            r_variance: 0.0,
            train,
            test,
            verdict: Verdict::Accept,
            images_used,
            degenerate: true,
        };
    }
    let r_mean = test.mean / train.mean;
    let r_median = if train.median > 0.0 {
        test.median / train.median
    } else {
        0.0
    };
    let r_variance = if train.variance > 0.0 {
        test.variance / train.variance
    } else {
        0.0
    };
    let verdict = if r_mean >= threshold {
        Verdict::Reject
    } else {
        Verdict::Accept
    };
    CoherenceReport {
        r_mean,
        r_median,
        r_variance,
        train,
        test,
        verdict,
        images_used,
        degenerate: false,
    }
}

/// Score a partition with a trained model.
pub fn coherence_ratio(
    model: &AeModel,
    partition: &CropPartition,
    crops: &HashMap<String, Vec<Crop>>,
    threshold: f64,
) -> Result<CoherenceReport> {
    let side_errors = |ids: &[String]| -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for id in ids {
            for crop in crops.get(id).map(Vec::as_slice).unwrap_or(&[]) {
                out.push(model.reconstruction_error(crop)?);
            }
        }
        Ok(out)
    };
    let train_errors = side_errors(&partition.train_images)?;
    let test_errors = side_errors(&partition.test_images)?;
    Ok(coherence_from_errors(
        train_errors,
        test_errors,
        partition.train_images.len() + partition.test_images.len(),
        threshold,
    ))
}

#[derive(Debug, Clone)]
pub enum AnalysisOutcome {
    /// Fewer than min_images eligible images: the gate does not apply.
    Bypass,
    /// Training failed; the candidate is kept with a degraded-analysis flag.
    Degraded(String),
    Report(CoherenceReport),
}

/// The full gate: select images, generate crops, split, train, score.
pub fn analyze_candidate(
    candidate: &EventCandidate,
    images: &dyn ImageSource,
    annotations: &AnnotationSet,
    config: &DetectorConfig,
) -> AnalysisOutcome {
    let eligible = select_images(candidate, annotations, config);
    // decode and drop undersized or unreadable images up front
    let mut usable: Vec<ImageData> = Vec::new();
    for id in &eligible {
        match images.load(id) {
            Ok(img) if img.width >= config.crop_size && img.height >= config.crop_size => {
                usable.push(img)
            }
            Ok(img) => {
                eprintln!(
                    "warning: image `{}` is {}x{}, smaller than crop size; skipped",
                    img.id, img.width, img.height
                );
            }
            Err(e) => {
                eprintln!("warning: skipping image: {e}");
            }
        }
    }
    let ids: Vec<String> = usable.iter().map(|i| i.id.clone()).collect();
    let analysis_seed = image_set_seed(config.rng_seed, &ids);
    let partition = match split_partition(
        &ids,
        config.train_crop_fraction,
        config.crops_per_image,
        config.min_images,
        analysis_seed,
    ) {
        Some(p) => p,
        None => return AnalysisOutcome::Bypass,
    };
    let mut crops: HashMap<String, Vec<Crop>> = HashMap::new();
    for img in &usable {
        match generate_crops(img, config.crops_per_image, config.crop_size, config.rng_seed) {
            Ok(c) => {
                crops.insert(img.id.clone(), c);
            }
            Err(e) => return AnalysisOutcome::Degraded(e.to_string()),
        }
    }
    let train_crops: Vec<Crop> = partition
        .train_images
        .iter()
        .flat_map(|id| crops[id].iter().cloned())
        .collect();
    let topo = Topology {
        input_size: config.crop_size,
        ..Topology::standard()
    };
    let mut model = AeModel::init(topo, analysis_seed);
    if let Err(e) = model.train(
        &train_crops,
        config.train_epochs,
        config.learning_rate,
        config.batch_size,
        analysis_seed,
    ) {
        return AnalysisOutcome::Degraded(e.to_string());
    }
    match coherence_ratio(&model, &partition, &crops, config.coherence_threshold) {
        Ok(report) => AnalysisOutcome::Report(report),
        Err(e) => AnalysisOutcome::Degraded(e.to_string()),
    }
}
