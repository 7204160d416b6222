//! Shared domain types and configuration for all pipeline stages.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned lat/lon box, half-open on the max edges except for the
/// global maximum (see [`GeoBounds::contains`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBounds {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Self {
        GeoBounds {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        }
    }

    /// Membership under the half-open rule: [min, max), with the max edge
    /// itself included so the region covers its own boundary. Callers that
    /// need strict quadrant routing use [`GeoBounds::quadrant_of`].
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    pub fn lat_mid(&self) -> f64 {
        0.5 * (self.lat_min + self.lat_max)
    }

    pub fn lon_mid(&self) -> f64 {
        0.5 * (self.lon_min + self.lon_max)
    }

    /// Quadrant index for a point inside this box: bit 0 set for the upper
    /// lat half, bit 1 set for the upper lon half. Points exactly on the
    /// midline route to the upper half ([min, mid) vs [mid, max]).
    pub fn quadrant_of(&self, lat: f64, lon: f64) -> usize {
        let hi_lat = lat >= self.lat_mid();
        let hi_lon = lon >= self.lon_mid();
        (hi_lat as usize) | ((hi_lon as usize) << 1)
    }

    /// Bounds of quadrant `q` as produced by `quadrant_of`.
    pub fn quadrant_bounds(&self, q: usize) -> GeoBounds {
        let (lat_min, lat_max) = if q & 1 == 0 {
            (self.lat_min, self.lat_mid())
        } else {
            (self.lat_mid(), self.lat_max)
        };
        let (lon_min, lon_max) = if q & 2 == 0 {
            (self.lon_min, self.lon_mid())
        } else {
            (self.lon_mid(), self.lon_max)
        };
        GeoBounds::new(lat_min, lat_max, lon_min, lon_max)
    }

    pub fn intersects(&self, other: &GeoBounds) -> bool {
        self.lat_min <= other.lat_max
            && other.lat_min <= self.lat_max
            && self.lon_min <= other.lon_max
            && other.lon_min <= self.lon_max
    }
}

/// Wire format for one stream record: one JSON object per JSONL line with
/// keys `id`, `ts` (integer seconds UTC), `lat`, `lon`, `text` and an
/// optional `images` array of file-path strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub ts: i64,
    pub lat: f64,
    pub lon: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

/// A geo-tagged text record with hashtags/mentions extracted from the text.
#[derive(Debug, Clone, PartialEq)]
pub struct Tweet {
    pub id: String,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub text: String,
    /// Lowercased hashtag occurrences, in text order, duplicates kept.
    pub hashtags: Vec<String>,
    /// Lowercased mention occurrences, in text order, duplicates kept.
    pub mentions: Vec<String>,
    pub image_refs: Vec<String>,
}

impl Tweet {
    pub fn to_record(&self) -> TweetRecord {
        TweetRecord {
            id: self.id.clone(),
            ts: self.timestamp,
            lat: self.lat,
            lon: self.lon,
            text: self.text.clone(),
            images: self.image_refs.clone(),
        }
    }

    /// All hashtag and mention occurrences, hashtags first.
    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.hashtags
            .iter()
            .chain(self.mentions.iter())
            .map(String::as_str)
    }
}

/// Scan `text` for tokens starting with `marker`, strip the marker and any
/// trailing punctuation, lowercase. Occurrences are kept, not deduplicated.
fn scan_marked_tokens(text: &str, marker: char) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|tok| {
            let rest = tok.strip_prefix(marker)?;
            let trimmed = rest.trim_end_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Parse one JSONL record into a [`Tweet`], validating coordinate bounds
/// and extracting hashtags/mentions by token scan.
pub fn parse_tweet(line: &str) -> Result<Tweet> {
    let value: serde_json::Value = serde_json::from_str(line)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::BadRecord("not a JSON object".into()))?;
    for field in ["id", "ts", "lat", "lon", "text"] {
        if !obj.contains_key(field) {
            return Err(Error::MissingField(match field {
                "id" => "id",
                "ts" => "ts",
                "lat" => "lat",
                "lon" => "lon",
                _ => "text",
            }));
        }
    }
    let record: TweetRecord = serde_json::from_value(value)?;
    if !(-90.0..=90.0).contains(&record.lat) {
        return Err(Error::OutOfRange {
            field: "lat",
            value: record.lat,
        });
    }
    if !(-180.0..=180.0).contains(&record.lon) {
        return Err(Error::OutOfRange {
            field: "lon",
            value: record.lon,
        });
    }
    let hashtags = scan_marked_tokens(&record.text, '#');
    let mentions = scan_marked_tokens(&record.text, '@');
    Ok(Tweet {
        id: record.id,
        timestamp: record.ts,
        lat: record.lat,
        lon: record.lon,
        text: record.text,
        hashtags,
        mentions,
        image_refs: record.images,
    })
}

/// One query window of the stream: tweets ordered by timestamp, timestamps
/// in the half-open interval [start, end).
#[derive(Debug, Clone)]
pub struct StreamWindow {
    pub window_id: u64,
    pub start: i64,
    pub end: i64,
    pub tweets: Vec<Tweet>,
}

impl StreamWindow {
    pub fn new(window_id: u64, start: i64, end: i64, mut tweets: Vec<Tweet>) -> Self {
        tweets.retain(|t| t.timestamp >= start && t.timestamp < end);
        tweets.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.id.cmp(&b.id)));
        StreamWindow {
            window_id,
            start,
            end,
            tweets,
        }
    }
}

/// FIFO of at most `capacity` consecutive query windows.
#[derive(Debug, Clone)]
pub struct SlidingWindows {
    capacity: usize,
    windows: VecDeque<StreamWindow>,
}

impl SlidingWindows {
    pub fn new(capacity: usize) -> Self {
        SlidingWindows {
            capacity,
            windows: VecDeque::new(),
        }
    }

    /// Append `new`, evicting the oldest window when the FIFO is full.
    /// Window ids must be consecutive.
    pub fn advance(&mut self, new: StreamWindow) -> Result<()> {
        if let Some(last) = self.windows.back() {
            if new.window_id != last.window_id + 1 {
                return Err(Error::WindowSequence {
                    expected: last.window_id + 1,
                    got: new.window_id,
                });
            }
        }
        self.windows.push_back(new);
        while self.windows.len() > self.capacity {
            self.windows.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn windows(&self) -> impl Iterator<Item = &StreamWindow> {
        self.windows.iter()
    }

    pub fn newest(&self) -> Option<&StreamWindow> {
        self.windows.back()
    }

    /// All tweets across the held windows, oldest window first.
    pub fn all_tweets(&self) -> Vec<&Tweet> {
        self.windows.iter().flat_map(|w| w.tweets.iter()).collect()
    }
}

/// Detector configuration; defaults follow the reference parameterisation
/// (30-minute windows, six sliding windows, quad-tree depth 30 with node
/// capacity 50, 500 crops of 32x32, coherence threshold 1.5).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub query_window_minutes: u64,
    pub sliding_window_count: usize,
    pub quadtree_max_depth: u32,
    pub quadtree_split_threshold: usize,
    pub verification_window_minutes: u64,
    pub verification_rounds: u32,
    pub top_keyword_count: usize,
    pub coherence_threshold: f64,
    pub crops_per_image: usize,
    pub crop_size: usize,
    pub min_images: usize,
    pub train_crop_fraction: f64,
    pub human_area_total_threshold: f64,
    pub human_area_single_threshold: f64,
    pub powerlaw_pvalue_threshold: f64,
    pub bootstrap_iterations: usize,
    pub rng_seed: u64,
    /// City bounding box the quad-tree partitions; fixed by configuration
    /// so trees are comparable across windows.
    pub region: GeoBounds,
    /// Region names excluded from pruning keywords (city/state/country).
    pub excluded_region_names: Vec<String>,
    /// Minimum tail size for a power-law fit to be attempted.
    pub powerlaw_min_tail: usize,
    /// Cap on adaptive BIRCH threshold-search steps.
    pub threshold_search_max_steps: usize,
    pub train_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            query_window_minutes: 30,
            sliding_window_count: 6,
            quadtree_max_depth: 30,
            quadtree_split_threshold: 50,
            verification_window_minutes: 5,
            verification_rounds: 2,
            top_keyword_count: 5,
            coherence_threshold: 1.5,
            crops_per_image: 500,
            crop_size: 32,
            min_images: 3,
            train_crop_fraction: 2.0 / 3.0,
            human_area_total_threshold: 0.40,
            human_area_single_threshold: 0.20,
            powerlaw_pvalue_threshold: 0.1,
            bootstrap_iterations: 100,
            rng_seed: 0,
            region: GeoBounds::new(-90.0, 90.0, -180.0, 180.0),
            excluded_region_names: Vec::new(),
            powerlaw_min_tail: 10,
            threshold_search_max_steps: 100,
            train_epochs: 30,
            learning_rate: 1e-3,
            batch_size: 64,
        }
    }
}

impl DetectorConfig {
    pub fn query_window_seconds(&self) -> i64 {
        self.query_window_minutes as i64 * 60
    }

    pub fn verification_window_seconds(&self) -> i64 {
        self.verification_window_minutes as i64 * 60
    }

    /// Parse a flat `key=value` config file; unknown keys are rejected.
    /// Lines starting with '#' and blank lines are ignored.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = DetectorConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}`"))
        }
        match key {
            "query_window_minutes" => self.query_window_minutes = num(value)?,
            "sliding_window_count" => self.sliding_window_count = num(value)?,
            "quadtree_max_depth" => self.quadtree_max_depth = num(value)?,
            "quadtree_split_threshold" => self.quadtree_split_threshold = num(value)?,
            "verification_window_minutes" => self.verification_window_minutes = num(value)?,
            "verification_rounds" => self.verification_rounds = num(value)?,
            "top_keyword_count" => self.top_keyword_count = num(value)?,
            "coherence_threshold" => self.coherence_threshold = num(value)?,
            "crops_per_image" => self.crops_per_image = num(value)?,
            "crop_size" => self.crop_size = num(value)?,
            "min_images" => self.min_images = num(value)?,
            "train_crop_fraction" => self.train_crop_fraction = num(value)?,
            "human_area_total_threshold" => self.human_area_total_threshold = num(value)?,
            "human_area_single_threshold" => self.human_area_single_threshold = num(value)?,
            "powerlaw_pvalue_threshold" => self.powerlaw_pvalue_threshold = num(value)?,
            "bootstrap_iterations" => self.bootstrap_iterations = num(value)?,
            "rng_seed" => self.rng_seed = num(value)?,
            "region_lat_min" => self.region.lat_min = num(value)?,
            "region_lat_max" => self.region.lat_max = num(value)?,
            "region_lon_min" => self.region.lon_min = num(value)?,
            "region_lon_max" => self.region.lon_max = num(value)?,
            "excluded_region_names" => {
                self.excluded_region_names = value
                    .split(',')
                    .map(|s| s.trim().to_lowercase())
                    .filter(|s| !s.is_empty())
                    .collect();
            }
            "powerlaw_min_tail" => self.powerlaw_min_tail = num(value)?,
            "threshold_search_max_steps" => self.threshold_search_max_steps = num(value)?,
            "train_epochs" => self.train_epochs = num(value)?,
            "learning_rate" => self.learning_rate = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_crop_fraction > 0.0 && self.train_crop_fraction < 1.0) {
            return Err(Error::Config(
                "train_crop_fraction must be in (0, 1)".into(),
            ));
        }
        if self.coherence_threshold <= 0.0 || self.crop_size == 0 || self.crops_per_image == 0 {
            return Err(Error::Config("thresholds and sizes must be positive".into()));
        }
        if self.region.lat_min >= self.region.lat_max || self.region.lon_min >= self.region.lon_max
        {
            return Err(Error::Config("degenerate region bounds".into()));
        }
        Ok(())
    }
}

/// A tweet cluster localized to one quad-tree cell, pending verification,
/// pruning and image gating.
#[derive(Debug, Clone)]
pub struct EventCandidate {
    pub cluster_id: u64,
    /// Quad-tree depth of the cell this candidate occupies.
    pub level: u32,
    pub cell: GeoBounds,
    pub tweets: Vec<Tweet>,
    /// (keyword, occurrence count) pairs, count descending, ties lexicographic.
    pub top_keywords: Vec<(String, usize)>,
    pub centroid_vector: Vec<f64>,
}

impl EventCandidate {
    pub fn tweet_ids(&self) -> impl Iterator<Item = &str> {
        self.tweets.iter().map(|t| t.id.as_str())
    }
}

/// Serializable per-cluster image-coherence result (see the coherence module).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoherenceSummary {
    pub r_mean: f64,
    pub r_median: f64,
    pub r_variance: f64,
    pub train_mean_re: f64,
    pub test_mean_re: f64,
    pub images_used: usize,
    pub verdict: String,
}

/// A surviving event with provenance.
#[derive(Debug, Clone)]
pub struct DetectedEvent {
    pub candidate: EventCandidate,
    pub detection_window_id: u64,
    pub coherence: Option<CoherenceSummary>,
    /// Candidate ids merged into this event; always contains at least the
    /// representative's own id.
    pub merged_from: Vec<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tw(id: &str, ts: i64) -> Tweet {
        Tweet {
            id: id.into(),
            timestamp: ts,
            lat: 0.0,
            lon: 0.0,
            text: String::new(),
            hashtags: vec![],
            mentions: vec![],
            image_refs: vec![],
        }
    }

    #[test]
    fn parse_minimal_record() {
        let t = parse_tweet(r#"{"id":"1","ts":0,"lat":0,"lon":0,"text":"hello"}"#).unwrap();
        assert_eq!(t.id, "1");
        assert!(t.hashtags.is_empty());
        assert!(t.mentions.is_empty());
        assert!(t.image_refs.is_empty());
    }

    #[test]
    fn parse_extracts_tags_as_occurrences() {
        // oracle: token scan of the string by hand
        let t =
            parse_tweet(r##"{"id":"1","ts":0,"lat":0,"lon":0,"text":"#Fire at #fire dock @FD"}"##)
                .unwrap();
        assert_eq!(t.hashtags, vec!["fire", "fire"]);
        assert_eq!(t.mentions, vec!["fd"]);
    }

    #[test]
    fn parse_rejects_out_of_bounds_lat() {
        let err = parse_tweet(r#"{"id":"1","ts":0,"lat":91,"lon":0,"text":"x"}"#).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { field: "lat", .. }));
    }

    #[test]
    fn parse_names_missing_field() {
        let err = parse_tweet(r#"{"id":"1","ts":0,"lat":0,"lon":0}"#).unwrap_err();
        assert!(matches!(err, Error::MissingField("text")));
    }

    #[test]
    fn record_round_trip_preserves_semantic_fields() {
        let line = r##"{"id":"7","ts":42,"lat":1.5,"lon":-2.5,"text":"#a b","images":["p.png"]}"##;
        let t = parse_tweet(line).unwrap();
        let back = serde_json::to_value(t.to_record()).unwrap();
        let orig: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(back, orig);
    }

    #[test]
    fn sliding_window_evicts_oldest() {
        let mut sw = SlidingWindows::new(6);
        for i in 0..7 {
            sw.advance(StreamWindow::new(i, i as i64 * 60, (i as i64 + 1) * 60, vec![]))
                .unwrap();
        }
        assert_eq!(sw.len(), 6);
        assert_eq!(sw.windows().next().unwrap().window_id, 1);
    }

    #[test]
    fn sliding_window_rejects_gap() {
        let mut sw = SlidingWindows::new(6);
        sw.advance(StreamWindow::new(3, 0, 60, vec![])).unwrap();
        let err = sw
            .advance(StreamWindow::new(5, 60, 120, vec![]))
            .unwrap_err();
        assert!(matches!(
            err,
            Error::WindowSequence {
                expected: 4,
                got: 5
            }
        ));
    }

    #[test]
    fn stream_window_orders_and_filters() {
        let w = StreamWindow::new(0, 10, 20, vec![tw("b", 15), tw("a", 12), tw("c", 25)]);
        let ids: Vec<_> = w.tweets.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn config_key_values_round_trip() {
        let cfg = DetectorConfig::from_key_values(
            "query_window_minutes = 10\nregion_lat_min=-1\nregion_lat_max=1\n\
             region_lon_min=-1\nregion_lon_max=1\nexcluded_region_names = NYC, New York\n",
        )
        .unwrap();
        assert_eq!(cfg.query_window_minutes, 10);
        assert_eq!(cfg.excluded_region_names, vec!["nyc", "new york"]);
    }

    #[test]
    fn config_rejects_unknown_key() {
        assert!(DetectorConfig::from_key_values("nope = 1").is_err());
    }
}
