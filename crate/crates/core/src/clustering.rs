//! BIRCH CF-tree clustering of tweet vectors with the adaptive
//! radius-threshold search.
//!
//! Leaf entries are the final clusters; there is no global refinement pass,
//! keeping the single-pass streaming character. Branching factor and leaf
//! capacity are both 50; behavior is threshold-dominated.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::TweetVector;
use crate::error::{Error, Result};

pub const BRANCHING_FACTOR: usize = 50;
pub const LEAF_CAPACITY: usize = 50;

/// Clustering feature: count, linear sum, sum of squared norms.
#[derive(Debug, Clone, PartialEq)]
pub struct CFEntry {
    pub n: usize,
    pub ls: Vec<f64>,
    pub ss: f64,
}

impl CFEntry {
    pub fn from_point(v: &[f64]) -> Self {
        CFEntry {
            n: 1,
            ls: v.to_vec(),
            ss: v.iter().map(|x| x * x).sum(),
        }
    }

    pub fn centroid(&self) -> Vec<f64> {
        self.ls.iter().map(|x| x / self.n as f64).collect()
    }

    /// radius^2 = ss/n - ||ls/n||^2, clamped at zero against rounding.
    pub fn radius_sq(&self) -> f64 {
        let n = self.n as f64;
        let centroid_sq: f64 = self.ls.iter().map(|x| (x / n) * (x / n)).sum();
        (self.ss / n - centroid_sq).max(0.0)
    }

    pub fn radius(&self) -> f64 {
        self.radius_sq().sqrt()
    }

    pub fn merge(&self, other: &CFEntry) -> Result<CFEntry> {
        if self.ls.len() != other.ls.len() {
            return Err(Error::Dimension {
                expected: self.ls.len(),
                got: other.ls.len(),
            });
        }
        Ok(CFEntry {
            n: self.n + other.n,
            ls: self.ls.iter().zip(&other.ls).map(|(a, b)| a + b).collect(),
            ss: self.ss + other.ss,
        })
    }

    fn add_point(&mut self, v: &[f64]) {
        self.n += 1;
        for (a, x) in self.ls.iter_mut().zip(v) {
            *a += x;
        }
        self.ss += v.iter().map(|x| x * x).sum::<f64>();
    }

    fn centroid_dist_sq(&self, v: &[f64]) -> f64 {
        let n = self.n as f64;
        self.ls
            .iter()
            .zip(v)
            .map(|(l, x)| {
                let d = l / n - x;
                d * d
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
struct ClusterEntry {
    cf: CFEntry,
    members: Vec<usize>,
}

#[derive(Debug)]
enum Node {
    Leaf(Vec<ClusterEntry>),
    Internal(Vec<(CFEntry, Box<Node>)>),
}

/// Result of one BIRCH pass: per-tweet labels plus per-cluster features
/// and membership.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub labels: HashMap<String, usize>,
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub cf: CFEntry,
    pub member_ids: Vec<String>,
}

impl ClusterAssignment {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.cf.n).collect()
    }
}

fn nearest_entry(entries: &[ClusterEntry], v: &[f64]) -> Option<usize> {
    entries
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.cf.centroid_dist_sq(v)
                .partial_cmp(&b.cf.centroid_dist_sq(v))
                .unwrap()
        })
        .map(|(i, _)| i)
}

/// Split a set of CF summaries into two groups seeded by the farthest pair
/// of centroids; every other element joins the nearer seed.
fn split_indices(cfs: &[&CFEntry]) -> (Vec<usize>, Vec<usize>) {
    let centroids: Vec<Vec<f64>> = cfs.iter().map(|c| c.centroid()).collect();
    let mut seed_a = 0;
    let mut seed_b = 1;
    let mut best = -1.0;
    for i in 0..centroids.len() {
        for j in (i + 1)..centroids.len() {
            let d: f64 = centroids[i]
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d > best {
                best = d;
                seed_a = i;
                seed_b = j;
            }
        }
    }
    let mut group_a = vec![seed_a];
    let mut group_b = vec![seed_b];
    for i in 0..centroids.len() {
        if i == seed_a || i == seed_b {
            continue;
        }
        let da: f64 = centroids[i]
            .iter()
            .zip(&centroids[seed_a])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let db: f64 = centroids[i]
            .iter()
            .zip(&centroids[seed_b])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if da <= db {
            group_a.push(i);
        } else {
            group_b.push(i);
        }
    }
    (group_a, group_b)
}

fn node_cf(node: &Node) -> CFEntry {
    match node {
        Node::Leaf(entries) => {
            let mut it = entries.iter();
            let first = it.next().expect("non-empty leaf").cf.clone();
            it.fold(first, |acc, e| acc.merge(&e.cf).unwrap())
        }
        Node::Internal(children) => {
            let mut it = children.iter();
            let first = it.next().expect("non-empty node").0.clone();
            it.fold(first, |acc, (cf, _)| acc.merge(cf).unwrap())
        }
    }
}

/// Insert one point; returns a split-off sibling when the node overflowed.
fn insert(node: &mut Node, v: &[f64], idx: usize, threshold_sq: f64) -> Option<Node> {
    match node {
        Node::Leaf(entries) => {
            if let Some(i) = nearest_entry(entries, v) {
                let merged = {
                    let mut cf = entries[i].cf.clone();
                    cf.add_point(v);
                    cf
                };
                if merged.radius_sq() <= threshold_sq {
                    entries[i].cf = merged;
                    entries[i].members.push(idx);
                    return None;
                }
            }
            entries.push(ClusterEntry {
                cf: CFEntry::from_point(v),
                members: vec![idx],
            });
            if entries.len() > LEAF_CAPACITY {
                let cfs: Vec<&CFEntry> = entries.iter().map(|e| &e.cf).collect();
                let (keep, give) = split_indices(&cfs);
                let mut kept = Vec::with_capacity(keep.len());
                let mut given = Vec::with_capacity(give.len());
                let drained: Vec<ClusterEntry> = entries.drain(..).collect();
                for (i, e) in drained.into_iter().enumerate() {
                    if keep.contains(&i) {
                        kept.push(e);
                    } else {
                        given.push(e);
                    }
                }
                *entries = kept;
                return Some(Node::Leaf(given));
            }
            None
        }
        Node::Internal(children) => {
            let best = children
                .iter()
                .enumerate()
                .min_by(|(_, (a, _)), (_, (b, _))| {
                    a.centroid_dist_sq(v)
                        .partial_cmp(&b.centroid_dist_sq(v))
                        .unwrap()
                })
                .map(|(i, _)| i)
                .expect("internal node has children");
            let sibling = insert(&mut children[best].1, v, idx, threshold_sq);
            children[best].0 = node_cf(&children[best].1);
            if let Some(sib) = sibling {
                let cf = node_cf(&sib);
                children.insert(best + 1, (cf, Box::new(sib)));
                if children.len() > BRANCHING_FACTOR {
                    let cfs: Vec<&CFEntry> = children.iter().map(|(cf, _)| cf).collect();
                    let (keep, give) = split_indices(&cfs);
                    let mut kept = Vec::with_capacity(keep.len());
                    let mut given = Vec::with_capacity(give.len());
                    let drained: Vec<(CFEntry, Box<Node>)> = children.drain(..).collect();
                    for (i, c) in drained.into_iter().enumerate() {
                        if keep.contains(&i) {
                            kept.push(c);
                        } else {
                            given.push(c);
                        }
                    }
                    *children = kept;
                    return Some(Node::Internal(given));
                }
            }
            None
        }
    }
}

/// Single-pass CF-tree insertion; a point joins the nearest leaf entry when
/// the merged radius stays within `threshold`, otherwise starts a new entry.
pub fn birch_cluster(vectors: &[TweetVector], threshold: f64) -> Result<ClusterAssignment> {
    if let Some(first) = vectors.first() {
        let d = first.vector.len();
        if let Some(bad) = vectors.iter().find(|v| v.vector.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: bad.vector.len(),
            });
        }
    }
    let threshold_sq = threshold * threshold;
    let mut root = Node::Leaf(Vec::new());
    for (idx, tv) in vectors.iter().enumerate() {
        if let Some(sib) = insert(&mut root, &tv.vector, idx, threshold_sq) {
            let left_cf = node_cf(&root);
            let right_cf = node_cf(&sib);
            let left = std::mem::replace(&mut root, Node::Leaf(Vec::new()));
            root = Node::Internal(vec![(left_cf, Box::new(left)), (right_cf, Box::new(sib))]);
        }
    }
    let mut clusters = Vec::new();
    let mut labels = HashMap::new();
    collect_clusters(&root, vectors, &mut clusters, &mut labels);
    Ok(ClusterAssignment { labels, clusters })
}

fn collect_clusters(
    node: &Node,
    vectors: &[TweetVector],
    clusters: &mut Vec<Cluster>,
    labels: &mut HashMap<String, usize>,
) {
    match node {
        Node::Leaf(entries) => {
            for e in entries {
                let label = clusters.len();
                let member_ids: Vec<String> = e
                    .members
                    .iter()
                    .map(|&i| vectors[i].tweet_id.clone())
                    .collect();
                for id in &member_ids {
                    labels.insert(id.clone(), label);
                }
                clusters.push(Cluster {
                    cf: e.cf.clone(),
                    member_ids,
                });
            }
        }
        Node::Internal(children) => {
            for (_, child) in children {
                collect_clusters(child, vectors, clusters, labels);
            }
        }
    }
}

/// Outcome of the adaptive threshold search.
#[derive(Debug, Clone)]
pub struct AdaptiveResult {
    pub threshold: f64,
    pub assignment: ClusterAssignment,
    /// False when no threshold qualified within the step cap; the last
    /// assignment is still carried.
    pub converged: bool,
}

pub const SMALL_CLUSTER_SIZE: usize = 10;
pub const SMALL_CLUSTER_MAX_FRACTION: f64 = 0.05;
pub const LARGEST_CLUSTER_FRACTION: f64 = 0.5;

fn stop_rule_met(assignment: &ClusterAssignment, total: usize) -> bool {
    let sizes = assignment.cluster_sizes();
    let small: usize = sizes.iter().filter(|&&s| s < SMALL_CLUSTER_SIZE).sum();
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let n = total as f64;
    (small as f64) / n < SMALL_CLUSTER_MAX_FRACTION
        || (largest as f64) / n > LARGEST_CLUSTER_FRACTION
}

/// Start near zero and grow the radius threshold by `step` until fewer than
/// 5% of items sit in clusters smaller than 10, or over half of the items
/// are in the largest cluster, whichever occurs first. Re-clusters from
/// scratch at every step.
pub fn adaptive_threshold(
    vectors: &[TweetVector],
    step: f64,
    max_steps: usize,
) -> Result<AdaptiveResult> {
    if vectors.is_empty() {
        return Err(Error::Config("adaptive_threshold on empty input".into()));
    }
    if step <= 0.0 {
        return Err(Error::Config("threshold step must be positive".into()));
    }
    let mut last = None;
    for i in 1..=max_steps {
        let threshold = step * i as f64;
        let assignment = birch_cluster(vectors, threshold)?;
        let done = stop_rule_met(&assignment, vectors.len());
        last = Some((threshold, assignment));
        if done {
            let (threshold, assignment) = last.unwrap();
            return Ok(AdaptiveResult {
                threshold,
                assignment,
                converged: true,
            });
        }
    }
    let (threshold, assignment) = last.unwrap();
    Ok(AdaptiveResult {
        threshold,
        assignment,
        converged: false,
    })
}

/// Default search step: 0.05 x the median pairwise distance of a 200-point
/// seeded sample.
pub fn default_step(vectors: &[TweetVector], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..vectors.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(200);
    let mut dists = Vec::new();
    for i in 0..idx.len() {
        for j in (i + 1)..idx.len() {
            let d: f64 = vectors[idx[i]]
                .vector
                .iter()
                .zip(&vectors[idx[j]].vector)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dists.push(d);
        }
    }
    if dists.is_empty() {
        return 0.05;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2];
    (0.05 * median).max(1e-9)
}
