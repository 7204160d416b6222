//! Synthetic stream/image generation with planted events, the evaluation
//! metrics, and the ablation driver used by the CLI and the test suite.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coherence::{AnnotationSet, HumanAnnotation, ImageData, MemoryImageSource};
use crate::embedding::VectorTable;
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::stopwords;
use crate::types::{parse_tweet, DetectedEvent, DetectorConfig, GeoBounds, Tweet, TweetRecord};

/// A planted spatial/temporal tweet cluster. Clusters with `is_event` set
/// go into the ground truth; the others are decoy hotspots that a text-only
/// detector will flag but that carry incoherent imagery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedCluster {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    /// Gaussian spatial spread, degrees.
    pub sigma: f64,
    pub start: i64,
    pub end: i64,
    pub tweet_count: usize,
    /// Size of the cluster's keyword vocabulary.
    pub vocabulary_size: usize,
    pub zipf_exponent: f64,
    pub image_count: usize,
    pub coherent_images: bool,
    pub is_event: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub region: GeoBounds,
    pub duration_seconds: i64,
    pub background_tweets: usize,
    pub background_vocabulary_size: usize,
    /// Fraction of background tweets that carry an embeddable keyword and
    /// so take part in clustering.
    pub background_keyword_fraction: f64,
    pub image_size: usize,
    pub vector_dimension: usize,
    pub seed: u64,
    pub clusters: Vec<PlantedCluster>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            region: GeoBounds::new(0.0, 1.0, 0.0, 1.0),
            duration_seconds: 2400,
            background_tweets: 300,
            background_vocabulary_size: 50,
            background_keyword_fraction: 0.0,
            image_size: 32,
            vector_dimension: 8,
            seed: 1,
            clusters: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration_seconds <= 0 {
            return Err(Error::Config("duration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.background_keyword_fraction) {
            return Err(Error::Config("background keyword fraction must be in [0, 1]".into()));
        }
        if self.image_size == 0 || self.vector_dimension == 0 {
            return Err(Error::Config("image size and vector dimension must be positive".into()));
        }
        for c in &self.clusters {
            if !self.region.contains(c.lat, c.lon) {
                return Err(Error::Config(format!("cluster {} epicenter outside region", c.name)));
            }
            if c.start < 0 || c.end > self.duration_seconds || c.start >= c.end {
                return Err(Error::Config(format!("cluster {} span outside duration", c.name)));
            }
            if c.tweet_count == 0 || c.vocabulary_size == 0 {
                return Err(Error::Config(format!("cluster {} rates must be positive", c.name)));
            }
            if c.zipf_exponent <= 0.0 || c.sigma <= 0.0 {
                return Err(Error::Config(format!(
                    "cluster {} exponent and sigma must be positive",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

/// One ground-truth event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthEvent {
    pub name: String,
    pub start: i64,
    pub end: i64,
    pub tweet_ids: Vec<String>,
}

/// Everything `generate` produces, kept in memory; `write_to_dir` persists
/// it in the documented file formats.
#[derive(Debug, Clone)]
pub struct Generated {
    pub tweets: Vec<Tweet>,
    pub truth: Vec<TruthEvent>,
    pub vector_table_text: String,
    pub annotations: AnnotationSet,
    pub images: Vec<ImageData>,
}

impl Generated {
    pub fn table(&self) -> Result<VectorTable> {
        VectorTable::parse(&self.vector_table_text)
    }

    pub fn image_source(&self) -> MemoryImageSource {
        MemoryImageSource {
            images: self
                .images
                .iter()
                .map(|img| (img.id.clone(), img.clone()))
                .collect(),
        }
    }

    pub fn stream_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tweets {
            out.push_str(&serde_json::to_string(&t.to_record()).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn truth_jsonl(&self) -> String {
        truth_to_jsonl(&self.truth)
    }
}

pub fn truth_to_jsonl(truth: &[TruthEvent]) -> String {
    let mut out = String::new();
    for t in truth {
        out.push_str(&serde_json::to_string(t).unwrap());
        out.push('\n');
    }
    out
}

pub fn parse_truth_jsonl(text: &str) -> Result<Vec<TruthEvent>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn zipf_rank(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * cumulative.last().copied().unwrap_or(1.0);
    cumulative.partition_point(|&c| c < u).min(cumulative.len() - 1)
}

/// Bilinear value noise on a `cell`-spaced lattice, quantized to 8-bit RGB.
fn value_noise_rgb(size: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let grid = size / cell + 2;
    let lattice: Vec<f64> = (0..3 * grid * grid).map(|_| rng.random::<f64>()).collect();
    let mut rgb = vec![0u8; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let fy = y as f64 / cell as f64;
            let fx = x as f64 / cell as f64;
            let (gy, gx) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (fy - gy as f64, fx - gx as f64);
            for c in 0..3 {
                let at = |yy: usize, xx: usize| lattice[c * grid * grid + yy * grid + xx];
                let v = at(gy, gx) * (1.0 - ty) * (1.0 - tx)
                    + at(gy, gx + 1) * (1.0 - ty) * tx
                    + at(gy + 1, gx) * ty * (1.0 - tx)
                    + at(gy + 1, gx + 1) * ty * tx;
                rgb[(y * size + x) * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    rgb
}

fn add_pixel_noise(rgb: &mut [u8], sigma: f64, rng: &mut ChaCha8Rng) {
    for px in rgb.iter_mut() {
        let v = *px as f64 / 255.0 + sigma * gaussian(rng);
        *px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
}

/// Oriented stripes give the incoherent family structure that does not
/// transfer between images.
fn stripes_rgb(size: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let angle: f64 = rng.random::<f64>() * std::f64::consts::PI;
    let freq: f64 = rng.random_range(0.5..2.0);
    let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let color: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
    let mut rgb = vec![0u8; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let t = angle.cos() * x as f64 + angle.sin() * y as f64;
            let v = 0.5 + 0.5 * (freq * t + phase).sin();
            for c in 0..3 {
                let mixed = v * color[c] + (1.0 - v) * (1.0 - color[c]);
                rgb[(y * size + x) * 3 + c] = (mixed.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    rgb
}

/// `n` images sharing one base texture plus per-image pixel noise.
pub fn coherent_image_set(prefix: &str, seed: u64, n: usize, size: usize) -> Vec<ImageData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = value_noise_rgb(size, (size / 8).max(2), &mut rng);
    (0..n)
        .map(|i| {
            let mut rgb = base.clone();
            add_pixel_noise(&mut rgb, 0.05, &mut rng);
            ImageData::from_rgb(&format!("{prefix}{i}.png"), size, size, &rgb)
        })
        .collect()
}

/// `n` mutually unrelated images: alternating independent noise and stripe
/// textures.
pub fn incoherent_image_set(prefix: &str, seed: u64, n: usize, size: usize) -> Vec<ImageData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let rgb = stripes_rgb(size, &mut rng);
            ImageData::from_rgb(&format!("{prefix}{i}.png"), size, size, &rgb)
        })
        .collect()
}

fn make_tweet(
    id: &str,
    ts: i64,
    lat: f64,
    lon: f64,
    text: &str,
    images: Vec<String>,
) -> Result<Tweet> {
    let record = TweetRecord {
        id: id.to_string(),
        ts,
        lat,
        lon,
        text: text.to_string(),
        images,
    };
    parse_tweet(&serde_json::to_string(&record)?)
}

/// Deterministic synthetic stream: uniform background plus the configured
/// planted clusters, a vector table covering the whole vocabulary, images,
/// and empty (no-person) annotations.
pub fn generate(scenario: &ScenarioConfig) -> Result<Generated> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let region = scenario.region;
    let d = scenario.vector_dimension;

    // vocabulary + vector table: background words scattered, each cluster's
    // keywords packed around a random center
    let bg_words: Vec<String> = (0..scenario.background_vocabulary_size)
        .map(|i| format!("place{i:03}"))
        .collect();
    let mut table_lines: Vec<String> = Vec::new();
    let rand_vec = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-scale..scale)).collect()
    };
    for w in &bg_words {
        let v = rand_vec(&mut rng, 5.0);
        table_lines.push(format!(
            "{w} {}",
            v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
        ));
    }
    let mut cluster_vocab: Vec<Vec<String>> = Vec::new();
    for (ci, c) in scenario.clusters.iter().enumerate() {
        let center = rand_vec(&mut rng, 5.0);
        let mut vocab = Vec::new();
        for k in 0..c.vocabulary_size {
            let word = format!("topic{ci}k{k}");
            let v: Vec<f64> = center
                .iter()
                .map(|x| x + rng.random_range(-0.2..0.2))
                .collect();
            table_lines.push(format!(
                "{word} {}",
                v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
            ));
            vocab.push(word);
        }
        cluster_vocab.push(vocab);
    }
    let vector_table_text = format!("{} {d}\n{}\n", table_lines.len(), table_lines.join("\n"));

    // background tweets: uniform space/time, stop-word-heavy text with a
    // capitalized background keyword so they participate in clustering
    let stop_list = stopwords::STANDARD;
    let mut tweets: Vec<Tweet> = Vec::new();
    for i in 0..scenario.background_tweets {
        let ts = rng.random_range(0..scenario.duration_seconds);
        let lat = rng.random_range(region.lat_min..region.lat_max);
        let lon = rng.random_range(region.lon_min..region.lon_max);
        let mut words: Vec<String> = (0..rng.random_range(3..7usize))
            .map(|_| stop_list[rng.random_range(0..stop_list.len())].to_string())
            .collect();
        if rng.random::<f64>() < scenario.background_keyword_fraction {
            let bg = &bg_words[rng.random_range(0..bg_words.len())];
            let mut cap = bg.clone();
            cap[..1].make_ascii_uppercase();
            words.push(cap);
            if rng.random::<f64>() < 0.2 {
                words.push(format!("#{}", bg_words[rng.random_range(0..bg_words.len())]));
            }
        }
        tweets.push(make_tweet(
            &format!("bg{i:05}"),
            ts,
            lat,
            lon,
            &words.join(" "),
            Vec::new(),
        )?);
    }

    // planted clusters
    let mut truth = Vec::new();
    let mut images = Vec::new();
    let mut annotations = AnnotationSet::new();
    for (ci, c) in scenario.clusters.iter().enumerate() {
        let weights: Vec<f64> = (1..=c.vocabulary_size)
            .map(|r| (r as f64).powf(-c.zipf_exponent))
            .collect();
        let cumulative: Vec<f64> = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let prefix = format!("{}_img", c.name);
        let cluster_images = if c.coherent_images {
            coherent_image_set(&prefix, scenario.seed ^ (ci as u64 + 1), c.image_count, scenario.image_size)
        } else {
            incoherent_image_set(&prefix, scenario.seed ^ (ci as u64 + 1), c.image_count, scenario.image_size)
        };
        for img in &cluster_images {
            annotations.insert(HumanAnnotation {
                image_id: img.id.clone(),
                boxes: Vec::new(),
            });
        }
        let mut ids = Vec::new();
        for i in 0..c.tweet_count {
            let ts = rng.random_range(c.start..c.end);
            let lat = (c.lat + c.sigma * gaussian(&mut rng))
                .clamp(region.lat_min, region.lat_max - 1e-9);
            let lon = (c.lon + c.sigma * gaussian(&mut rng))
                .clamp(region.lon_min, region.lon_max - 1e-9);
            let rank = zipf_rank(&mut rng, &cumulative);
            let kw = &cluster_vocab[ci][rank];
            let filler = stop_list[rng.random_range(0..stop_list.len())];
            let id = format!("{}_t{i:04}", c.name);
            tweets.push(make_tweet(
                &id,
                ts,
                lat,
                lon,
                &format!("{filler} #{kw} {filler}"),
                Vec::new(),
            )?);
            ids.push(id);
        }
        // attach the image set round-robin across the whole cluster so any
        // sizable subset of it still carries every image
        if !cluster_images.is_empty() {
            let first_slot = tweets.len() - c.tweet_count;
            for offset in 0..c.tweet_count {
                let img = &cluster_images[offset % cluster_images.len()];
                tweets[first_slot + offset].image_refs.push(img.id.clone());
            }
        }
        images.extend(cluster_images);
        if c.is_event {
            ids.sort();
            truth.push(TruthEvent {
                name: c.name.clone(),
                start: c.start,
                end: c.end,
                tweet_ids: ids,
            });
        }
    }

    tweets.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.id.cmp(&b.id)));
    Ok(Generated {
        tweets,
        truth,
        vector_table_text,
        annotations,
        images,
    })
}

/// Serializable per-event output line, the CLI's JSONL event format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventOutput {
    pub detection_window_id: u64,
    pub level: u32,
    pub cell: GeoBounds,
    pub tweet_ids: Vec<String>,
    pub first_ts: i64,
    pub last_ts: i64,
    pub top_keywords: Vec<(String, usize)>,
    pub coherence: Option<crate::types::CoherenceSummary>,
    pub merged_from: Vec<u64>,
}

impl From<&DetectedEvent> for EventOutput {
    fn from(e: &DetectedEvent) -> Self {
        let first_ts = e.candidate.tweets.iter().map(|t| t.timestamp).min().unwrap_or(0);
        let last_ts = e.candidate.tweets.iter().map(|t| t.timestamp).max().unwrap_or(0);
        EventOutput {
            detection_window_id: e.detection_window_id,
            level: e.candidate.level,
            cell: e.candidate.cell,
            tweet_ids: e.candidate.tweet_ids().map(str::to_string).collect(),
            first_ts,
            last_ts,
            top_keywords: e.candidate.top_keywords.clone(),
            coherence: e.coherence.clone(),
            merged_from: e.merged_from.clone(),
        }
    }
}

pub fn events_to_jsonl(events: &[DetectedEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(&EventOutput::from(e)).unwrap());
        out.push('\n');
    }
    out
}

pub fn parse_events_jsonl(text: &str) -> Result<Vec<EventOutput>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventMatch {
    pub detected_index: usize,
    pub truth_name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub pseudo_recall: f64,
    pub n_true: usize,
    pub n_total: usize,
    pub detected: usize,
    /// True when there were zero detections and precision defaulted to 1.0.
    pub vacuous_precision: bool,
    pub matches: Vec<EventMatch>,
}

/// A detection matches a truth event iff more than half of its tweets
/// belong to the truth set and the time spans overlap.
pub fn evaluate(detected: &[EventOutput], truth: &[TruthEvent]) -> EvalResult {
    let truth_sets: Vec<std::collections::HashSet<&str>> = truth
        .iter()
        .map(|t| t.tweet_ids.iter().map(String::as_str).collect())
        .collect();
    let mut matches = Vec::new();
    let mut matched_truth = vec![false; truth.len()];
    let mut true_detections = 0usize;
    for (i, ev) in detected.iter().enumerate() {
        let mut best: Option<usize> = None;
        for (j, t) in truth.iter().enumerate() {
            let spans_overlap = ev.first_ts < t.end && t.start <= ev.last_ts;
            if !spans_overlap {
                continue;
            }
            let inside = ev
                .tweet_ids
                .iter()
                .filter(|id| truth_sets[j].contains(id.as_str()))
                .count();
            if 2 * inside > ev.tweet_ids.len() {
                best = Some(j);
                break;
            }
        }
        if let Some(j) = best {
            matched_truth[j] = true;
            true_detections += 1;
            matches.push(EventMatch {
                detected_index: i,
                truth_name: Some(truth[j].name.clone()),
            });
        } else {
            matches.push(EventMatch {
                detected_index: i,
                truth_name: None,
            });
        }
    }
    let n_true = matched_truth.iter().filter(|m| **m).count();
    let n_total = truth.len();
    let vacuous = detected.is_empty();
    EvalResult {
        precision: if vacuous {
            1.0
        } else {
            true_detections as f64 / detected.len() as f64
        },
        pseudo_recall: if n_total == 0 {
            1.0
        } else {
            n_true as f64 / n_total as f64
        },
        n_true,
        n_total,
        detected: detected.len(),
        vacuous_precision: vacuous,
        matches,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub with_gate: EvalResult,
    pub without_gate: EvalResult,
}

/// Run detection twice with identical seeds, image gate on vs off, and
/// evaluate both against the ground truth.
pub fn ablate(generated: &Generated, config: &DetectorConfig) -> Result<AblationResult> {
    let table = generated.table()?;
    let source = generated.image_source();
    let run = |gate: bool| -> Result<EvalResult> {
        let mut pipeline = Pipeline::new(config, &table, &source, &generated.annotations);
        pipeline.image_stage_enabled = gate;
        let events = pipeline.run_stream(&generated.tweets)?;
        let outputs: Vec<EventOutput> = events.iter().map(EventOutput::from).collect();
        Ok(evaluate(&outputs, &generated.truth))
    };
    Ok(AblationResult {
        with_gate: run(true)?,
        without_gate: run(false)?,
    })
}

/// 8-bit RGB bytes for an in-memory image, for PNG export.
pub fn image_rgb8_bytes(img: &ImageData) -> Vec<u8> {
    let (w, h) = (img.width, img.height);
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = img.pixels[c * w * h + y * w + x];
                out[(y * w + x) * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Persist a generated scenario: stream.jsonl, truth.jsonl, vectors.txt,
/// annotations.jsonl, and images/*.png under `dir`.
pub fn write_to_dir(g: &Generated, dir: &std::path::Path) -> Result<()> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)?;
    std::fs::write(dir.join("stream.jsonl"), g.stream_jsonl())?;
    std::fs::write(dir.join("truth.jsonl"), g.truth_jsonl())?;
    std::fs::write(dir.join("vectors.txt"), &g.vector_table_text)?;
    std::fs::write(dir.join("annotations.jsonl"), g.annotations.to_jsonl())?;
    for img in &g.images {
        let bytes = image_rgb8_bytes(img);
        let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
            .expect("image buffer size");
        buf.save(images_dir.join(&img.id)).map_err(|e| {
            Error::Image {
                image_id: img.id.clone(),
                reason: e.to_string(),
            }
        })?;
    }
    Ok(())
}

/// Convenience wrapper giving the in-memory images as a map for direct
/// coherence experiments.
pub fn images_by_id(images: &[ImageData]) -> HashMap<String, ImageData> {
    images.iter().map(|i| (i.id.clone(), i.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_one_event() -> ScenarioConfig {
        ScenarioConfig {
            clusters: vec![PlantedCluster {
                name: "ev0".into(),
                lat: 0.3,
                lon: 0.7,
                sigma: 0.01,
                start: 60,
                end: 2300,
                tweet_count: 120,
                vocabulary_size: 20,
                zipf_exponent: 1.2,
                image_count: 3,
                coherent_images: true,
                is_event: true,
            }],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn zero_events_means_empty_truth() {
        let g = generate(&ScenarioConfig::default()).unwrap();
        assert!(g.truth.is_empty());
        assert_eq!(g.tweets.len(), 300);
    }

    #[test]
    fn one_event_truth_lists_its_tweets() {
        let g = generate(&scenario_one_event()).unwrap();
        assert_eq!(g.truth.len(), 1);
        assert_eq!(g.truth[0].tweet_ids.len(), 120);
        assert!(g.truth[0].tweet_ids.iter().all(|id| id.starts_with("ev0_t")));
        assert_eq!(g.images.len(), 3);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = generate(&scenario_one_event()).unwrap();
        let b = generate(&scenario_one_event()).unwrap();
        assert_eq!(a.stream_jsonl(), b.stream_jsonl());
        assert_eq!(a.vector_table_text, b.vector_table_text);
        assert_eq!(a.truth_jsonl(), b.truth_jsonl());
        assert_eq!(a.annotations.to_jsonl(), b.annotations.to_jsonl());
        let ia: Vec<_> = a.images.iter().map(|i| i.pixels.clone()).collect();
        let ib: Vec<_> = b.images.iter().map(|i| i.pixels.clone()).collect();
        assert_eq!(ia, ib);
    }

    #[test]
    fn generated_table_parses_and_covers_vocabulary() {
        let g = generate(&scenario_one_event()).unwrap();
        let table = g.table().unwrap();
        assert_eq!(table.dimension(), 8);
        assert!(table.get("topic0k0").is_some());
        assert!(table.get("place000").is_some());
    }

    #[test]
    fn truth_against_itself_is_perfect() {
        let g = generate(&scenario_one_event()).unwrap();
        let detected: Vec<EventOutput> = g
            .truth
            .iter()
            .map(|t| EventOutput {
                detection_window_id: 0,
                level: 0,
                cell: GeoBounds::new(0.0, 1.0, 0.0, 1.0),
                tweet_ids: t.tweet_ids.clone(),
                first_ts: t.start,
                last_ts: t.end - 1,
                top_keywords: Vec::new(),
                coherence: None,
                merged_from: Vec::new(),
            })
            .collect();
        let res = evaluate(&detected, &g.truth);
        assert_eq!(res.precision, 1.0);
        assert_eq!(res.pseudo_recall, 1.0);
        assert!(!res.vacuous_precision);
    }

    #[test]
    fn half_matching_detections_give_half_scores() {
        let truth = vec![
            TruthEvent {
                name: "a".into(),
                start: 0,
                end: 100,
                tweet_ids: vec!["1".into(), "2".into(), "3".into()],
            },
            TruthEvent {
                name: "b".into(),
                start: 0,
                end: 100,
                tweet_ids: vec!["7".into(), "8".into()],
            },
        ];
        let mk = |ids: &[&str]| EventOutput {
            detection_window_id: 0,
            level: 0,
            cell: GeoBounds::new(0.0, 1.0, 0.0, 1.0),
            tweet_ids: ids.iter().map(|s| s.to_string()).collect(),
            first_ts: 10,
            last_ts: 20,
            top_keywords: Vec::new(),
            coherence: None,
            merged_from: Vec::new(),
        };
        let detected = vec![mk(&["1", "2"]), mk(&["x", "y", "z"])];
        let res = evaluate(&detected, &truth);
        assert!((res.precision - 0.5).abs() < 1e-12);
        assert!((res.pseudo_recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_detections_vacuous_precision() {
        let truth = vec![TruthEvent {
            name: "a".into(),
            start: 0,
            end: 100,
            tweet_ids: vec!["1".into()],
        }];
        let res = evaluate(&[], &truth);
        assert_eq!(res.precision, 1.0);
        assert!(res.vacuous_precision);
        assert_eq!(res.pseudo_recall, 0.0);
    }

    #[test]
    fn span_overlap_required_for_match() {
        let truth = vec![TruthEvent {
            name: "a".into(),
            start: 0,
            end: 100,
            tweet_ids: vec!["1".into(), "2".into()],
        }];
        let ev = EventOutput {
            detection_window_id: 0,
            level: 0,
            cell: GeoBounds::new(0.0, 1.0, 0.0, 1.0),
            tweet_ids: vec!["1".into(), "2".into()],
            first_ts: 200,
            last_ts: 300,
            top_keywords: Vec::new(),
            coherence: None,
            merged_from: Vec::new(),
        };
        let res = evaluate(&[ev], &truth);
        assert_eq!(res.n_true, 0);
    }

    #[test]
    fn validate_rejects_outside_epicenter() {
        let mut s = scenario_one_event();
        s.clusters[0].lat = 5.0;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn coherent_images_share_structure() {
        let set = coherent_image_set("a", 7, 3, 16);
        // pairwise pixel distance within a coherent family stays small
        let d01: f64 = set[0]
            .pixels
            .iter()
            .zip(&set[1].pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / set[0].pixels.len() as f64;
        assert!(d01 < 0.02, "coherent mean sq diff {d01}");
        let inc = incoherent_image_set("b", 7, 3, 16);
        let d: f64 = inc[0]
            .pixels
            .iter()
            .zip(&inc[1].pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / inc[0].pixels.len() as f64;
        assert!(d > 0.02, "incoherent mean sq diff {d}");
    }

    #[test]
    fn event_round_trip_jsonl() {
        let ev = EventOutput {
            detection_window_id: 3,
            level: 2,
            cell: GeoBounds::new(0.0, 0.5, 0.0, 0.5),
            tweet_ids: vec!["a".into()],
            first_ts: 1,
            last_ts: 2,
            top_keywords: vec![("fire".into(), 4)],
            coherence: None,
            merged_from: vec![9],
        };
        let line = serde_json::to_string(&ev).unwrap();
        let back = parse_events_jsonl(&line).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].tweet_ids, vec!["a"]);
    }
}
