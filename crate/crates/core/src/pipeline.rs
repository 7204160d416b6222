//! End-to-end orchestration per query window: build quad-tree, embed,
//! cluster, per-level power-law detection, verification rounds, pruning,
//! image gate, duplicate merging.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::clustering::{adaptive_threshold, default_step};
use crate::coherence::{
    analyze_candidate, select_images, AnalysisOutcome, AnnotationSet, ImageSource, Verdict,
};
use std::cell::RefCell;
use crate::embedding::{embed_keywords, embed_text, extract_keywords, TweetVector, VectorTable};
use crate::error::Result;
use crate::powerlaw::passes_powerlaw;
use crate::quadtree::QuadTree;
use crate::stopwords::StopWords;
use crate::types::{DetectedEvent, DetectorConfig, EventCandidate, SlidingWindows, Tweet};

/// Outcome of pruning one candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneReport {
    pub removed_tweet_ids: Vec<String>,
    pub top_keywords: Vec<(String, usize)>,
    /// Fraction of remaining tweets containing at least one top keyword.
    pub containment_fraction: f64,
    pub kept: bool,
}

/// Occurrence-counted top keywords (hashtags and mentions), count
/// descending, ties broken lexicographically.
pub fn top_keywords(tweets: &[Tweet], x: usize) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in tweets {
        for tag in t.tags() {
            *counts.entry(tag.to_string()).or_insert(0) += 1;
        }
    }
    let mut pairs: Vec<(String, usize)> = counts.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.truncate(x);
    pairs
}

/// Hashtag/mention pruning: a tweet is removed iff it carries tags and every
/// one of them occurs exactly once in the cluster, appears in only one
/// tweet, or is an excluded keyword. The candidate is rejected when fewer
/// than half of the remaining tweets contain a top keyword.
pub fn prune(
    candidate: &EventCandidate,
    excluded: &StopWords,
    config: &DetectorConfig,
) -> (PruneReport, Option<EventCandidate>) {
    let mut occurrences: HashMap<&str, usize> = HashMap::new();
    let mut tweet_counts: HashMap<&str, usize> = HashMap::new();
    for t in &candidate.tweets {
        let distinct: HashSet<&str> = t.tags().collect();
        for tag in t.tags() {
            *occurrences.entry(tag).or_insert(0) += 1;
        }
        for tag in distinct {
            *tweet_counts.entry(tag).or_insert(0) += 1;
        }
    }
    let removable = |tag: &str| {
        occurrences[tag] == 1 || tweet_counts[tag] == 1 || excluded.contains(tag)
    };
    let mut removed_ids = Vec::new();
    let mut remaining = Vec::new();
    for t in &candidate.tweets {
        let has_tags = t.tags().next().is_some();
        if has_tags && t.tags().all(removable) {
            removed_ids.push(t.id.clone());
        } else {
            remaining.push(t.clone());
        }
    }
    let top = top_keywords(&remaining, config.top_keyword_count);
    let top_set: HashSet<&str> = top.iter().map(|(k, _)| k.as_str()).collect();
    let containing = remaining
        .iter()
        .filter(|t| t.tags().any(|tag| top_set.contains(tag)))
        .count();
    let containment = if remaining.is_empty() {
        0.0
    } else {
        containing as f64 / remaining.len() as f64
    };
    let kept = !remaining.is_empty() && containment >= 0.5;
    let report = PruneReport {
        removed_tweet_ids: removed_ids,
        top_keywords: top.clone(),
        containment_fraction: containment,
        kept,
    };
    if !kept {
        return (report, None);
    }
    let mut pruned = candidate.clone();
    pruned.tweets = remaining;
    pruned.top_keywords = top;
    (report, Some(pruned))
}

fn mean_vector(vectors: &[&TweetVector]) -> Vec<f64> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let d = vectors[0].vector.len();
    let mut acc = vec![0.0; d];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(&v.vector) {
            *a += x;
        }
    }
    for a in &mut acc {
        *a /= vectors.len() as f64;
    }
    acc
}

/// Cluster vectors adaptively and run the power-law check on every
/// per-level subdivision of every cluster; returns one candidate per
/// passing (cluster, level, cell) subset.
fn per_level_candidates(
    tree: &QuadTree,
    vectors: &[TweetVector],
    tweets_by_id: &HashMap<&str, &Tweet>,
    stop: &StopWords,
    config: &DetectorConfig,
    id_base: u64,
) -> Result<Vec<EventCandidate>> {
    if vectors.is_empty() {
        return Ok(Vec::new());
    }
    let step = default_step(vectors, config.rng_seed);
    let adaptive = adaptive_threshold(vectors, step, config.threshold_search_max_steps)?;
    let vec_by_id: HashMap<&str, &TweetVector> = vectors
        .iter()
        .map(|v| (v.tweet_id.as_str(), v))
        .collect();
    let max_level = tree.deepest_level();
    let mut candidates = Vec::new();
    let mut next_id = id_base;
    for cluster in &adaptive.assignment.clusters {
        let members: Vec<&Tweet> = cluster
            .member_ids
            .iter()
            .filter_map(|id| tweets_by_id.get(id.as_str()).copied())
            .collect();
        if members.len() < 2 {
            continue;
        }
        for level in 0..=max_level {
            let parts = tree.partition_by_level(&members, level)?;
            for (cell, subset) in parts {
                if subset.len() < 2 {
                    continue;
                }
                let seed = config.rng_seed.wrapping_add(next_id);
                let (pass, _fit) = passes_powerlaw(&subset, stop, config, seed);
                next_id += 1;
                if !pass {
                    continue;
                }
                let subset_vectors: Vec<&TweetVector> = subset
                    .iter()
                    .filter_map(|t| vec_by_id.get(t.id.as_str()).copied())
                    .collect();
                let tweets: Vec<Tweet> = subset.iter().map(|&t| t.clone()).collect();
                let top = top_keywords(&tweets, config.top_keyword_count);
                candidates.push(EventCandidate {
                    cluster_id: next_id,
                    level,
                    cell,
                    top_keywords: top,
                    centroid_vector: mean_vector(&subset_vectors),
                    tweets,
                });
                next_id += 1;
            }
            // stop descending once the cluster is fully split into singletons
            if parts_all_singletons(tree, &members, level)? {
                break;
            }
        }
    }
    Ok(candidates)
}

fn parts_all_singletons(tree: &QuadTree, members: &[&Tweet], level: u32) -> Result<bool> {
    Ok(tree
        .partition_by_level(members, level)?
        .iter()
        .all(|(_, s)| s.len() <= 1))
}

/// Keep a candidate iff some verified cluster shares more than half of its
/// tweets.
pub fn verify_round(
    candidates: Vec<EventCandidate>,
    verified_sets: &[HashSet<String>],
) -> Vec<EventCandidate> {
    candidates
        .into_iter()
        .filter(|cand| {
            let ids: HashSet<&str> = cand.tweet_ids().collect();
            verified_sets.iter().any(|set| {
                let shared = ids.iter().filter(|id| set.contains(**id)).count();
                2 * shared > ids.len()
            })
        })
        .collect()
}

pub struct Pipeline<'a> {
    pub config: &'a DetectorConfig,
    pub table: &'a VectorTable,
    pub images: &'a dyn ImageSource,
    pub annotations: &'a AnnotationSet,
    pub image_stage_enabled: bool,
    /// One analysis per distinct image set: candidates at different levels
    /// or windows sharing the same images reuse the same verdict.
    analysis_cache: RefCell<HashMap<Vec<String>, AnalysisOutcome>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: &'a DetectorConfig,
        table: &'a VectorTable,
        images: &'a dyn ImageSource,
        annotations: &'a AnnotationSet,
    ) -> Self {
        Pipeline {
            config,
            table,
            images,
            annotations,
            image_stage_enabled: true,
            analysis_cache: RefCell::new(HashMap::new()),
        }
    }

    fn stop_words(&self) -> StopWords {
        StopWords::with_extra(self.config.excluded_region_names.iter())
    }

    /// One full detection round over the current sliding windows.
    /// `verification_feed` supplies tweets after the newest query window;
    /// the rounds consume consecutive 5-minute slices of it.
    pub fn detect(
        &self,
        sliding: &SlidingWindows,
        verification_feed: &[Tweet],
    ) -> Result<Vec<DetectedEvent>> {
        let window_id = match sliding.newest() {
            Some(w) => w.window_id,
            None => return Ok(Vec::new()),
        };
        let window_end = sliding.newest().unwrap().end;
        let all: Vec<&Tweet> = sliding.all_tweets();
        if all.is_empty() {
            return Ok(Vec::new());
        }
        let stop = self.stop_words();
        let cfg = self.config;
        let tree = QuadTree::build(
            all.iter().copied(),
            cfg.region,
            cfg.quadtree_max_depth,
            cfg.quadtree_split_threshold,
        )?;
        let tweets_by_id: HashMap<&str, &Tweet> = all.iter().map(|t| (t.id.as_str(), *t)).collect();

        // keyword embedding; tweets with no resolvable keyword are excluded
        let vectors: Vec<TweetVector> = all
            .iter()
            .filter_map(|t| {
                let kws = extract_keywords(&t.text, &stop);
                embed_keywords(&t.id, &kws, self.table)
            })
            .collect();

        let id_base = window_id << 32;
        let mut candidates =
            per_level_candidates(&tree, &vectors, &tweets_by_id, &stop, cfg, id_base)?;

        // verification: re-embed raw text over query + verification tweets,
        // re-cluster, re-detect, and require a >50% tweet match
        for round in 0..cfg.verification_rounds {
            if candidates.is_empty() {
                break;
            }
            let v_end = window_end + (round as i64 + 1) * cfg.verification_window_seconds();
            let extra: Vec<&Tweet> = verification_feed
                .iter()
                .filter(|t| t.timestamp >= window_end && t.timestamp < v_end)
                .collect();
            let mut combined: Vec<&Tweet> = all.clone();
            combined.extend(extra.iter().copied());
            let combined_by_id: HashMap<&str, &Tweet> =
                combined.iter().map(|t| (t.id.as_str(), *t)).collect();
            let text_vectors: Vec<TweetVector> = combined
                .iter()
                .filter_map(|t| embed_text(&t.id, &t.text, self.table, &stop))
                .collect();
            let verified = per_level_candidates(
                &tree,
                &text_vectors,
                &combined_by_id,
                &stop,
                cfg,
                id_base | 0x4000_0000,
            )?;
            let sets: Vec<HashSet<String>> = verified
                .iter()
                .map(|c| c.tweet_ids().map(str::to_string).collect())
                .collect();
            candidates = verify_round(candidates, &sets);
        }

        // pruning
        let mut pruned = Vec::new();
        for cand in candidates {
            let (_report, keep) = prune(&cand, &stop, cfg);
            if let Some(c) = keep {
                pruned.push(c);
            }
        }

        // image-coherence gate (purely subtractive)
        let mut events = Vec::new();
        for cand in pruned {
            let coherence = if self.image_stage_enabled {
                let mut key = select_images(&cand, self.annotations, cfg);
                key.sort_unstable();
                let cached = self.analysis_cache.borrow().get(&key).cloned();
                let outcome = match cached {
                    Some(o) => o,
                    None => {
                        let o = analyze_candidate(&cand, self.images, self.annotations, cfg);
                        self.analysis_cache.borrow_mut().insert(key, o.clone());
                        o
                    }
                };
                match outcome {
                    AnalysisOutcome::Report(report) => {
                        if report.verdict == Verdict::Reject {
                            continue;
                        }
                        Some(report.summary())
                    }
                    AnalysisOutcome::Bypass => None,
                    AnalysisOutcome::Degraded(reason) => {
                        eprintln!("warning: image analysis degraded: {reason}");
                        None
                    }
                }
            } else {
                None
            };
            let cluster_id = cand.cluster_id;
            events.push(DetectedEvent {
                candidate: cand,
                detection_window_id: window_id,
                coherence,
                merged_from: vec![cluster_id],
            });
        }
        Ok(merge_duplicates(events, &[]))
    }

    /// Window the whole stream and run detection once per query window,
    /// merging duplicates across windows. Window boundaries sit at
    /// multiples of the query-window length.
    pub fn run_stream(&self, tweets: &[Tweet]) -> Result<Vec<DetectedEvent>> {
        let cfg = self.config;
        let wsec = cfg.query_window_seconds();
        let (t0, t1) = match (
            tweets.iter().map(|t| t.timestamp).min(),
            tweets.iter().map(|t| t.timestamp).max(),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return Ok(Vec::new()),
        };
        let mut sliding = SlidingWindows::new(cfg.sliding_window_count);
        let mut events: Vec<DetectedEvent> = Vec::new();
        let mut window_start = t0.div_euclid(wsec) * wsec;
        let mut window_id = 0u64;
        while window_start <= t1 {
            let window_end = window_start + wsec;
            let in_window: Vec<Tweet> = tweets
                .iter()
                .filter(|t| t.timestamp >= window_start && t.timestamp < window_end)
                .cloned()
                .collect();
            sliding.advance(crate::types::StreamWindow::new(
                window_id,
                window_start,
                window_end,
                in_window,
            ))?;
            let feed_end =
                window_end + cfg.verification_rounds as i64 * cfg.verification_window_seconds();
            let feed: Vec<Tweet> = tweets
                .iter()
                .filter(|t| t.timestamp >= window_end && t.timestamp < feed_end)
                .cloned()
                .collect();
            let new_events = self.detect(&sliding, &feed)?;
            events = merge_duplicates(new_events, &events);
            window_id += 1;
            window_start = window_end;
        }
        Ok(events)
    }
}

fn overlap_exceeds_half_of_smaller(a: &HashSet<&str>, b: &HashSet<&str>) -> bool {
    let shared = a.intersection(b).count();
    let smaller = a.len().min(b.len());
    smaller > 0 && 2 * shared > smaller
}

fn shares_top_keyword(a: &DetectedEvent, b: &DetectedEvent) -> bool {
    a.candidate
        .top_keywords
        .iter()
        .any(|(k, _)| b.candidate.top_keywords.iter().any(|(k2, _)| k == k2))
}

fn windows_adjacent(a: u64, b: u64) -> bool {
    a == b || a + 1 == b || b + 1 == a
}

/// Merge duplicates across levels and consecutive windows: two events merge
/// when their tweet sets overlap by more than half of the smaller set, or
/// their cells intersect, they share a top keyword, and their windows are
/// identical or consecutive. Merging is transitive; the deepest-level
/// candidate represents the group.
pub fn merge_duplicates(
    new_events: Vec<DetectedEvent>,
    history: &[DetectedEvent],
) -> Vec<DetectedEvent> {
    let mut all: Vec<DetectedEvent> = history.to_vec();
    all.extend(new_events);
    let n = all.len();
    let id_sets: Vec<HashSet<&str>> = all
        .iter()
        .map(|e| e.candidate.tweet_ids().collect())
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mergeable = overlap_exceeds_half_of_smaller(&id_sets[i], &id_sets[j])
                || (all[i].candidate.cell.intersects(&all[j].candidate.cell)
                    && shares_top_keyword(&all[i], &all[j])
                    && windows_adjacent(all[i].detection_window_id, all[j].detection_window_id));
            if mergeable {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out = Vec::new();
    for members in groups.values() {
        let rep = *members
            .iter()
            .max_by_key(|&&i| {
                (
                    all[i].candidate.level,
                    all[i].detection_window_id,
                    std::cmp::Reverse(all[i].candidate.cluster_id),
                )
            })
            .unwrap();
        let mut merged_from: Vec<u64> = members
            .iter()
            .flat_map(|&i| all[i].merged_from.iter().copied())
            .collect();
        merged_from.sort_unstable();
        merged_from.dedup();
        let latest_window = members
            .iter()
            .map(|&i| all[i].detection_window_id)
            .max()
            .unwrap();
        let mut event = all[rep].clone();
        event.merged_from = merged_from;
        event.detection_window_id = latest_window;
        out.push(event);
    }
    out.sort_by_key(|e| (e.detection_window_id, e.candidate.cluster_id));
    out
}
