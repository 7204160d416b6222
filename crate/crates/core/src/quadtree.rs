//! Spatial partition of the sliding-window tweets into a quad-tree with
//! per-level sub-clustering of candidate tweet sets.
//!
//! Cells are half-open, [min, mid) vs [mid, max], with the global max edges
//! closed, so points on internal boundaries route deterministically. Trees
//! are rebuilt per query window over configured region bounds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::{GeoBounds, Tweet};

#[derive(Debug, Clone)]
pub struct QuadTreeNode {
    pub bounds: GeoBounds,
    pub depth: u32,
    pub children: Option<Box<[QuadTreeNode; 4]>>,
    /// Leaf payload: (tweet id, lat, lon). Internal nodes hold no tweets.
    pub points: Vec<(String, f64, f64)>,
    /// Set when an over-full leaf holds only co-located points and cannot
    /// be split further.
    pub degenerate: bool,
}

impl QuadTreeNode {
    fn leaf(bounds: GeoBounds, depth: u32) -> Self {
        QuadTreeNode {
            bounds,
            depth,
            children: None,
            points: Vec::new(),
            degenerate: false,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct QuadTree {
    pub root: QuadTreeNode,
    pub max_depth: u32,
    pub split_threshold: usize,
    pub region: GeoBounds,
}

impl QuadTree {
    /// Build by sequential insertion: when a leaf would exceed the split
    /// threshold and its depth allows, split into four quadrants and
    /// redistribute.
    pub fn build<'a, I>(
        tweets: I,
        region: GeoBounds,
        max_depth: u32,
        split_threshold: usize,
    ) -> Result<QuadTree>
    where
        I: IntoIterator<Item = &'a Tweet>,
    {
        let mut tree = QuadTree {
            root: QuadTreeNode::leaf(region, 0),
            max_depth,
            split_threshold,
            region,
        };
        for t in tweets {
            tree.insert(t)?;
        }
        Ok(tree)
    }

    fn insert(&mut self, tweet: &Tweet) -> Result<()> {
        if !self.region.contains(tweet.lat, tweet.lon) {
            return Err(Error::OutsideRegion {
                tweet_id: tweet.id.clone(),
            });
        }
        let max_depth = self.max_depth;
        let threshold = self.split_threshold;
        insert_into(
            &mut self.root,
            (tweet.id.clone(), tweet.lat, tweet.lon),
            max_depth,
            threshold,
        );
        Ok(())
    }

    /// Bounds of the ancestor cell at `level` containing the coordinates,
    /// clamped to the deepest existing cell on the path.
    pub fn locate(&self, lat: f64, lon: f64, level: u32) -> Result<GeoBounds> {
        if !self.region.contains(lat, lon) {
            return Err(Error::OutsideRegion {
                tweet_id: format!("({lat}, {lon})"),
            });
        }
        let mut node = &self.root;
        while node.depth < level {
            match &node.children {
                Some(children) => node = &children[node.bounds.quadrant_of(lat, lon)],
                None => break,
            }
        }
        Ok(node.bounds)
    }

    /// Group a candidate tweet set by its level-`level` cell. Subsets are
    /// disjoint, cover the input, and come out in a deterministic cell order.
    pub fn partition_by_level<'a>(
        &self,
        tweets: &[&'a Tweet],
        level: u32,
    ) -> Result<Vec<(GeoBounds, Vec<&'a Tweet>)>> {
        let mut groups: BTreeMap<[u64; 4], (GeoBounds, Vec<&'a Tweet>)> = BTreeMap::new();
        for &t in tweets {
            let cell = self.locate(t.lat, t.lon, level)?;
            let key = [
                cell.lat_min.to_bits(),
                cell.lon_min.to_bits(),
                cell.lat_max.to_bits(),
                cell.lon_max.to_bits(),
            ];
            groups.entry(key).or_insert((cell, Vec::new())).1.push(t);
        }
        Ok(groups.into_values().collect())
    }

    /// Deepest leaf depth actually present.
    pub fn deepest_level(&self) -> u32 {
        fn depth_of(node: &QuadTreeNode) -> u32 {
            match &node.children {
                Some(children) => children.iter().map(depth_of).max().unwrap(),
                None => node.depth,
            }
        }
        depth_of(&self.root)
    }

    pub fn leaves(&self) -> Vec<&QuadTreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            match &node.children {
                Some(children) => stack.extend(children.iter()),
                None => out.push(node),
            }
        }
        out
    }

    /// Indented text dump for the CLI debug flag.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        fn walk(node: &QuadTreeNode, out: &mut String) {
            let indent = "  ".repeat(node.depth as usize);
            let b = &node.bounds;
            let count: usize = if node.is_leaf() { node.points.len() } else { 0 };
            let _ = writeln!(
                out,
                "{indent}depth={} lat=[{:.6},{:.6}] lon=[{:.6},{:.6}] count={}{}",
                node.depth,
                b.lat_min,
                b.lat_max,
                b.lon_min,
                b.lon_max,
                count,
                if node.degenerate { " degenerate" } else { "" }
            );
            if let Some(children) = &node.children {
                for c in children.iter() {
                    walk(c, out);
                }
            }
        }
        walk(&self.root, &mut out);
        out
    }
}

fn insert_into(
    node: &mut QuadTreeNode,
    point: (String, f64, f64),
    max_depth: u32,
    threshold: usize,
) {
    if let Some(children) = &mut node.children {
        let q = node.bounds.quadrant_of(point.1, point.2);
        insert_into(&mut children[q], point, max_depth, threshold);
        return;
    }
    let over_full = node.points.len() + 1 > threshold;
    if over_full && node.depth < max_depth && !node.degenerate {
        // Co-located points cannot be separated by splitting; leave the
        // leaf over-full instead of recursing forever.
        let all_same = node
            .points
            .iter()
            .chain(std::iter::once(&point))
            .all(|(_, la, lo)| *la == point.1 && *lo == point.2);
        if all_same {
            node.degenerate = true;
            node.points.push(point);
            return;
        }
        let bounds = node.bounds;
        let depth = node.depth;
        let moved = std::mem::take(&mut node.points);
        node.children = Some(Box::new([
            QuadTreeNode::leaf(bounds.quadrant_bounds(0), depth + 1),
            QuadTreeNode::leaf(bounds.quadrant_bounds(1), depth + 1),
            QuadTreeNode::leaf(bounds.quadrant_bounds(2), depth + 1),
            QuadTreeNode::leaf(bounds.quadrant_bounds(3), depth + 1),
        ]));
        for p in moved.into_iter().chain(std::iter::once(point)) {
            insert_into(node, p, max_depth, threshold);
        }
    } else {
        node.points.push(point);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Tweet;

    fn tw(id: &str, lat: f64, lon: f64) -> Tweet {
        Tweet {
            id: id.into(),
            timestamp: 0,
            lat,
            lon,
            text: String::new(),
            hashtags: vec![],
            mentions: vec![],
            image_refs: vec![],
        }
    }

    fn region() -> GeoBounds {
        GeoBounds::new(0.0, 4.0, 0.0, 4.0)
    }

    #[test]
    fn threshold_tweets_stay_in_root_leaf() {
        let tweets: Vec<Tweet> = (0..50).map(|i| tw(&i.to_string(), 1.0, 1.0)).collect();
        let tree = QuadTree::build(tweets.iter(), region(), 30, 50).unwrap();
        assert!(tree.root.is_leaf());
        assert_eq!(tree.root.points.len(), 50);
    }

    #[test]
    fn empty_input_gives_empty_root_leaf() {
        let tree = QuadTree::build(std::iter::empty(), region(), 30, 50).unwrap();
        assert!(tree.root.is_leaf());
        assert!(tree.root.points.is_empty());
    }

    #[test]
    fn overflow_splits_into_quadrants() {
        // 51 tweets spread over all four quadrants; oracle is a brute-force
        // re-partition of the coordinates by quadrant.
        let mut tweets = Vec::new();
        let spots = [(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)];
        for i in 0..51 {
            let (lat, lon) = spots[i % 4];
            tweets.push(tw(&i.to_string(), lat + (i as f64) * 1e-3, lon));
        }
        let tree = QuadTree::build(tweets.iter(), region(), 30, 50).unwrap();
        assert!(!tree.root.is_leaf());
        let total: usize = tree.leaves().iter().map(|l| l.points.len()).sum();
        assert_eq!(total, 51);
        for leaf in tree.leaves() {
            for (id, _, _) in &leaf.points {
                let t = &tweets[id.parse::<usize>().unwrap()];
                let expected_q = region().quadrant_of(t.lat, t.lon);
                let actual_q = region().quadrant_of(
                    0.5 * (leaf.bounds.lat_min + leaf.bounds.lat_max),
                    0.5 * (leaf.bounds.lon_min + leaf.bounds.lon_max),
                );
                assert_eq!(actual_q, expected_q, "tweet {id} in wrong quadrant");
            }
        }
    }

    #[test]
    fn outside_region_names_tweet() {
        let bad = tw("bad", 10.0, 1.0);
        let err = QuadTree::build(std::iter::once(&bad), region(), 30, 50).unwrap_err();
        assert!(matches!(err, Error::OutsideRegion { tweet_id } if tweet_id == "bad"));
    }

    #[test]
    fn locate_level_zero_is_root() {
        let tweets: Vec<Tweet> = (0..10).map(|i| tw(&i.to_string(), 1.0, 1.0)).collect();
        let tree = QuadTree::build(tweets.iter(), region(), 30, 5).unwrap();
        assert_eq!(tree.locate(1.0, 1.0, 0).unwrap(), region());
    }

    #[test]
    fn locate_center_uses_half_open_rule() {
        let tweets: Vec<Tweet> = (0..6)
            .map(|i| tw(&i.to_string(), (i as f64) * 0.5, 0.5))
            .collect();
        let tree = QuadTree::build(tweets.iter(), region(), 30, 5).unwrap();
        // center (2,2) routes to the upper-upper quadrant: [mid, max] both axes
        let cell = tree.locate(2.0, 2.0, 1).unwrap();
        assert_eq!(cell, GeoBounds::new(2.0, 4.0, 2.0, 4.0));
    }

    #[test]
    fn locate_clamps_to_deepest_cell_on_path() {
        let tweets: Vec<Tweet> = (0..3).map(|i| tw(&i.to_string(), 1.0, 1.0)).collect();
        let tree = QuadTree::build(tweets.iter(), region(), 30, 50).unwrap();
        // root is a leaf; any level clamps to root bounds
        assert_eq!(tree.locate(1.0, 1.0, 7).unwrap(), region());
    }

    #[test]
    fn partition_level_zero_is_identity() {
        let tweets: Vec<Tweet> = (0..8).map(|i| tw(&i.to_string(), 1.0, 1.0)).collect();
        let tree = QuadTree::build(tweets.iter(), region(), 30, 4).unwrap();
        let refs: Vec<&Tweet> = tweets.iter().collect();
        let parts = tree.partition_by_level(&refs, 0).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].1.len(), 8);
    }

    #[test]
    fn partition_two_per_quadrant() {
        // quadrant membership oracle: 2 tweets per quadrant
        let spots = [(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)];
        let tweets: Vec<Tweet> = (0..8)
            .map(|i| {
                let (lat, lon) = spots[i / 2];
                tw(&i.to_string(), lat, lon)
            })
            .collect();
        let tree = QuadTree::build(tweets.iter(), region(), 30, 4).unwrap();
        let refs: Vec<&Tweet> = tweets.iter().collect();
        let parts = tree.partition_by_level(&refs, 1).unwrap();
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|(_, ts)| ts.len() == 2));
    }

    #[test]
    fn cluster_in_one_quadrant_stays_whole() {
        let mut tweets: Vec<Tweet> = (0..8)
            .map(|i| tw(&i.to_string(), 0.5 + 0.01 * i as f64, 0.5))
            .collect();
        // extra spread so the tree actually splits
        tweets.extend((8..16).map(|i| tw(&i.to_string(), 3.0, 3.0)));
        let tree = QuadTree::build(tweets.iter(), region(), 30, 4).unwrap();
        let cluster: Vec<&Tweet> = tweets[..8].iter().collect();
        let parts = tree.partition_by_level(&cluster, 1).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].1.len(), 8);
    }

    #[test]
    fn colocated_points_stop_splitting() {
        let tweets: Vec<Tweet> = (0..60).map(|i| tw(&i.to_string(), 1.0, 1.0)).collect();
        let tree = QuadTree::build(tweets.iter(), region(), 30, 50).unwrap();
        let leaves = tree.leaves();
        let full: Vec<_> = leaves.iter().filter(|l| !l.points.is_empty()).collect();
        assert_eq!(full.len(), 1);
        assert!(full[0].degenerate);
        assert_eq!(full[0].points.len(), 60);
    }

    #[test]
    fn determinism_same_order_same_dump() {
        let tweets: Vec<Tweet> = (0..200)
            .map(|i| {
                tw(
                    &i.to_string(),
                    (i as f64 * 0.37) % 4.0,
                    (i as f64 * 0.61) % 4.0,
                )
            })
            .collect();
        let a = QuadTree::build(tweets.iter(), region(), 10, 10).unwrap();
        let b = QuadTree::build(tweets.iter(), region(), 10, 10).unwrap();
        assert_eq!(a.dump(), b.dump());
    }
}
