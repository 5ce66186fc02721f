use rayon::prelude::*;

use crate::geometry::Se3;
use crate::io::tracks::Descriptor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateSource {
    Descriptor,
    Proximity,
    External,
}

/// A keyframe pair that may image the same place. Indices are keyframe
/// ordinals and `query > matched`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopCandidate {
    pub query: usize,
    pub matched: usize,
    pub score: f64,
    pub source: CandidateSource,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateParams {
    /// A query descriptor counts as found when its nearest neighbor is
    /// closer than this many bits.
    pub hamming_threshold: u32,
    /// Keyframes this close to the query (in keyframe count) are skipped.
    /// Zero disables the rule and allows self-comparison.
    pub exclusion_window: usize,
    pub top_k: usize,
    pub min_score: f64,
    /// Query descriptors are subsampled to at most this many.
    pub max_query_descriptors: usize,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self { hamming_threshold: 64, exclusion_window: 50, top_k: 3, min_score: 0.2, max_query_descriptors: 300 }
    }
}

/// Evenly strided subset of at most `max` items, first item included.
fn subsample(items: &[Descriptor], max: usize) -> Vec<Descriptor> {
    if items.len() <= max || max == 0 {
        return items.to_vec();
    }
    (0..max).map(|k| items[k * items.len() / max]).collect()
}

/// Fraction of `query` descriptors with a neighbor in `set` closer than
/// `threshold` bits.
pub fn similarity(query: &[Descriptor], set: &[Descriptor], threshold: u32) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    let found = query
        .iter()
        .filter(|q| set.iter().any(|d| q.hamming(d) < threshold))
        .count();
    found as f64 / query.len() as f64
}

/// Scores every earlier keyframe outside the exclusion window against the
/// query's stacked descriptors and returns the best `top_k` above
/// `min_score`, best first (ties to the older keyframe).
pub fn detect_candidates(descriptors: &[Vec<Descriptor>], query: usize, params: &CandidateParams) -> Vec<LoopCandidate> {
    let Some(qset) = descriptors.get(query) else { return Vec::new() };
    if qset.is_empty() {
        log::warn!("keyframe {query} has no descriptors; no descriptor loop candidates");
        return Vec::new();
    }
    let q = subsample(qset, params.max_query_descriptors);
    let last = if params.exclusion_window == 0 { query + 1 } else { (query + 1).saturating_sub(params.exclusion_window + 1) };
    let mut scored: Vec<LoopCandidate> = (0..last.min(descriptors.len()))
        .into_par_iter()
        .map(|j| LoopCandidate {
            query,
            matched: j,
            score: similarity(&q, &descriptors[j], params.hamming_threshold),
            source: CandidateSource::Descriptor,
        })
        .filter(|c| c.score >= params.min_score)
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.matched.cmp(&b.matched)));
    scored.truncate(params.top_k);
    scored
}

/// Earlier keyframes whose odometry position lies within `radius` of the
/// query, scored `1 − distance/radius`.
pub fn proximity_candidates(poses: &[Se3], query: usize, radius: f64, exclusion_window: usize, top_k: usize) -> Vec<LoopCandidate> {
    let Some(qp) = poses.get(query) else { return Vec::new() };
    let last = (query + 1).saturating_sub(exclusion_window.max(1) + 1).min(poses.len());
    let mut out: Vec<LoopCandidate> = (0..last)
        .filter_map(|j| {
            let d = (poses[j].translation - qp.translation).norm();
            (d < radius).then(|| LoopCandidate { query, matched: j, score: 1.0 - d / radius, source: CandidateSource::Proximity })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.matched.cmp(&b.matched)));
    out.truncate(top_k);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut impl Rng, n: usize) -> Vec<Descriptor> {
        (0..n).map(|_| Descriptor([rng.random(), rng.random(), rng.random(), rng.random()])).collect()
    }

    #[test]
    fn self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sets = vec![random_set(&mut rng, 100)];
        let params = CandidateParams { exclusion_window: 0, ..Default::default() };
        let c = detect_candidates(&sets, 0, &params);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].score, 1.0);
    }

    #[test]
    fn disjoint_random_sets_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut total = 0.0;
        for _ in 0..10 {
            let a = random_set(&mut rng, 300);
            let b = random_set(&mut rng, 1000);
            total += similarity(&a, &b, 64);
        }
        assert_eq!(total, 0.0);
    }

    #[test]
    fn exclusion_window_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = random_set(&mut rng, 50);
        let sets: Vec<Vec<Descriptor>> = (0..20).map(|_| base.clone()).collect();
        let params = CandidateParams { exclusion_window: 5, top_k: 100, ..Default::default() };
        let c = detect_candidates(&sets, 19, &params);
        assert_eq!(c.len(), 14);
        assert!(c.iter().all(|c| c.matched + 5 < 19));
        assert_eq!(c[0].matched, 0);
        assert!(detect_candidates(&sets, 4, &params).is_empty());
    }

    #[test]
    fn empty_query_yields_nothing() {
        let sets = vec![vec![], vec![]];
        assert!(detect_candidates(&sets, 1, &CandidateParams { exclusion_window: 0, ..Default::default() }).is_empty());
    }

    #[test]
    fn proximity_ranks_by_distance() {
        let poses: Vec<Se3> = (0..10).map(|k| Se3::from_translation(nalgebra::Vector3::new(k as f64 * 0.1, 0.0, 0.0))).collect();
        let c = proximity_candidates(&poses, 9, 0.5, 2, 5);
        assert_eq!(c.iter().map(|c| c.matched).collect::<Vec<_>>(), vec![6, 5]);
    }
}
