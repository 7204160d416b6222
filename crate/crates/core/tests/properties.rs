//! Property-based invariants for the structural pieces of the pipeline.

use proptest::prelude::*;

use geoevent::coherence::coherence_from_errors;
use geoevent::embedding::extract_keywords;
use geoevent::powerlaw::{fit_alpha, CountSample};
use geoevent::quadtree::QuadTree;
use geoevent::stopwords::StopWords;
use geoevent::types::{SlidingWindows, StreamWindow, Tweet};

fn tweet(id: usize, ts: i64, lat: f64, lon: f64) -> Tweet {
    Tweet {
        id: format!("t{id}"),
        timestamp: ts,
        lat,
        lon,
        text: String::new(),
        hashtags: vec![],
        mentions: vec![],
        image_refs: vec![],
    }
}

proptest! {
    /// A stream window keeps exactly the tweets in [start, end), sorted by
    /// (timestamp, id).
    #[test]
    fn stream_window_filters_and_sorts(
        start in -1000i64..1000,
        len in 1i64..500,
        ts in proptest::collection::vec(-2000i64..2000, 0..80),
    ) {
        let end = start + len;
        let tweets: Vec<Tweet> = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| tweet(i, t, 0.5, 0.5))
            .collect();
        let expected = tweets.iter().filter(|t| t.timestamp >= start && t.timestamp < end).count();
        let w = StreamWindow::new(0, start, end, tweets);
        prop_assert_eq!(w.tweets.len(), expected);
        for pair in w.tweets.windows(2) {
            prop_assert!(
                (pair[0].timestamp, &pair[0].id) <= (pair[1].timestamp, &pair[1].id)
            );
        }
        for t in &w.tweets {
            prop_assert!(t.timestamp >= start && t.timestamp < end);
        }
    }

    /// The sliding FIFO holds at most `capacity` windows, keeps them in id
    /// order, and `all_tweets` is their concatenation oldest-first.
    #[test]
    fn sliding_windows_fifo(
        capacity in 1usize..8,
        pushes in 1usize..20,
        sizes in proptest::collection::vec(0usize..5, 20),
    ) {
        let mut sw = SlidingWindows::new(capacity);
        for k in 0..pushes {
            let tweets: Vec<Tweet> = (0..sizes[k])
                .map(|i| tweet(k * 100 + i, (k * 10 + i) as i64, 0.5, 0.5))
                .collect();
            sw.advance(StreamWindow::new(k as u64, (k as i64) * 10, (k as i64 + 1) * 10, tweets))
                .unwrap();
        }
        prop_assert_eq!(sw.len(), capacity.min(pushes));
        prop_assert_eq!(sw.newest().unwrap().window_id, pushes as u64 - 1);
        let ids: Vec<u64> = sw.windows().map(|w| w.window_id).collect();
        for pair in ids.windows(2) {
            prop_assert_eq!(pair[1], pair[0] + 1);
        }
        let total: usize = sw.windows().map(|w| w.tweets.len()).sum();
        prop_assert_eq!(sw.all_tweets().len(), total);
        // non-consecutive id is rejected
        let bad = StreamWindow::new(pushes as u64 + 1, 0, 10, vec![]);
        prop_assert!(sw.advance(bad).is_err());
    }

    /// Every stored point ends up in exactly one leaf of the quad-tree.
    #[test]
    fn quadtree_conserves_points(
        coords in proptest::collection::vec((0.0f64..0.999, 0.0f64..0.999), 1..150),
        max_depth in 1u32..6,
        threshold in 1usize..8,
    ) {
        let region = geoevent::types::GeoBounds::new(0.0, 1.0, 0.0, 1.0);
        let tweets: Vec<Tweet> = coords
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| tweet(i, i as i64, lat, lon))
            .collect();
        let tree = QuadTree::build(tweets.iter(), region, max_depth, threshold).unwrap();
        let stored: usize = tree.leaves().iter().map(|l| l.points.len()).sum();
        prop_assert_eq!(stored, tweets.len());
    }

    /// Extracted keywords are lowercase and non-empty. Hashtags and
    /// mentions are kept verbatim even when they collide with stop words,
    /// so no stop-word claim is made here.
    #[test]
    fn keywords_are_normalized(words in proptest::collection::vec("[A-Za-z#@]{1,10}", 0..12)) {
        let stop = StopWords::standard();
        let text = words.join(" ");
        for kw in extract_keywords(&text, &stop) {
            prop_assert!(!kw.trim().is_empty());
            prop_assert_eq!(kw.clone(), kw.to_lowercase());
        }
    }

    /// The exponent MLE always lands inside the search interval.
    #[test]
    fn alpha_fit_in_range(counts in proptest::collection::vec(1u64..60, 10..50)) {
        let sample = CountSample::new(counts).unwrap();
        let fit = fit_alpha(&sample, 1).unwrap();
        prop_assert!(fit.alpha > 1.0 && fit.alpha <= 6.0);
    }

    /// The coherence ratio is invariant under a common rescaling of both
    /// error lists, and so is the verdict.
    #[test]
    fn coherence_ratio_scale_invariant(
        train in proptest::collection::vec(0.01f64..5.0, 1..30),
        test in proptest::collection::vec(0.01f64..5.0, 1..30),
        scale in 0.1f64..10.0,
    ) {
        let base = coherence_from_errors(train.clone(), test.clone(), 3, 1.5);
        let scaled = coherence_from_errors(
            train.iter().map(|e| e * scale).collect(),
            test.iter().map(|e| e * scale).collect(),
            3,
            1.5,
        );
        prop_assert!((base.r_mean - scaled.r_mean).abs() <= 1e-9 * base.r_mean.abs().max(1.0));
        // verdicts may differ only within a vanishing band around the threshold
        if (base.r_mean - 1.5).abs() > 1e-9 {
            prop_assert_eq!(base.verdict, scaled.verdict);
        }
    }
}
