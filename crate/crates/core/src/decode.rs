//! Decoding: retrieval strategies, the kNN distribution, interpolation
//! with the base model, and the greedy/beam translation loop.
//!
//! The faster strategy approximates the query-to-point distance
//! `d(h, z)` by `d(c', h) + d(c', z)`, where `c'` is the centroid of the
//! cluster holding `z`: step one scans the n cluster centroids, step two
//! reads the cached within-cluster ranking and performs no distance
//! computations at all. The no-cache variant keeps step one but computes
//! exact distances inside the chosen cluster, which is precisely the
//! ablation contrast measured by the trace counters.

use std::str::FromStr;
use std::time::Instant;

use crate::datastore::{FastTargetStore, FasterClusterStore, VanillaIndex};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synth::{base_prob, SynthEncoder, TokenId, EOS};
use crate::vector::{squared_l2, top_k, ContextVector, Hit};

/// Retrieval strategy for one decoding run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Vanilla,
    Fast,
    Faster,
    /// Fast search over the flat store mapped from the faster strategy's
    /// per-token nearest clusters.
    FastWithFasterSource,
    /// Faster's cluster selection with exact in-cluster distances instead
    /// of the cached ranking.
    FasterNoCache,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Vanilla,
        Strategy::Fast,
        Strategy::Faster,
        Strategy::FastWithFasterSource,
        Strategy::FasterNoCache,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::Fast => "fast",
            Strategy::Faster => "faster",
            Strategy::FastWithFasterSource => "fast_with_faster_source",
            Strategy::FasterNoCache => "faster_no_cache",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Strategy::Vanilla),
            "fast" => Ok(Strategy::Fast),
            "faster" => Ok(Strategy::Faster),
            "fast_with_faster_source" => Ok(Strategy::FastWithFasterSource),
            "faster_no_cache" => Ok(Strategy::FasterNoCache),
            other => Err(Error::usage(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Decoding hyper-parameters.
#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub k: usize,
    pub temperature: f64,
    pub lambda: f64,
    pub strategy: Strategy,
    pub max_len: usize,
    pub beam: usize,
    /// Feed squared distances to the kNN softmax instead of the metric
    /// form. Off by default; retrieval order is unaffected.
    pub squared_distances: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            k: 16,
            temperature: 1.0,
            lambda: 0.5,
            strategy: Strategy::Vanilla,
            max_len: 64,
            beam: 1,
            squared_distances: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be >= 1"));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::config("temperature must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda must be in [0, 1]"));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be >= 1"));
        }
        if self.beam == 0 {
            return Err(Error::config("beam must be >= 1"));
        }
        Ok(())
    }
}

/// One retrieved neighbor: reported distance, its target token value, and
/// the store-local id it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry<T> {
    pub dist: T,
    pub value: TokenId,
    pub id: u64,
}

/// The k retrieved `(distance, value)` pairs feeding the kNN distribution,
/// ascending by distance.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet<T> {
    pub entries: Vec<NeighborEntry<T>>,
}

impl<T> Default for NeighborSet<T> {
    fn default() -> Self {
        NeighborSet {
            entries: Vec::new(),
        }
    }
}

impl<T: Scalar> NeighborSet<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Work counters for one retrieval step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    /// Size of the candidate set examined.
    pub scanned: usize,
    /// Query-side distance computations performed.
    pub dist_ops: usize,
}

/// Per-step record of what a decode did and what it cost.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub strategy: Strategy,
    pub scanned: usize,
    pub dist_ops: usize,
    pub elapsed_ns: u64,
    pub chosen: TokenId,
}

/// Exact top-k over the full store, brute or IVF depending on how the
/// index was built.
pub fn vanilla_knn_step<T: Scalar>(
    h: &[T],
    index: &VanillaIndex<T>,
    k: usize,
) -> (NeighborSet<T>, StepStats) {
    let (neighbors, dist_ops) = index.search(h, k).expect("vanilla index is non-empty");
    let entries = neighbors
        .into_iter()
        .map(|n| NeighborEntry {
            dist: n.dist,
            value: index.value_of(n.id),
            id: n.id,
        })
        .collect();
    (
        NeighborSet { entries },
        StepStats {
            scanned: index.len(),
            dist_ops,
        },
    )
}

/// Exact brute-force top-k over a flat target store.
pub fn fast_knn_step<T: Scalar>(
    h: &[T],
    store: &FastTargetStore<T>,
    k: usize,
) -> (NeighborSet<T>, StepStats) {
    let hits = store.keys.iter().enumerate().map(|(i, key)| Hit {
        dist: squared_l2(h, key),
        id: i as u64,
    });
    let entries = top_k(hits, k)
        .into_iter()
        .map(|hit| NeighborEntry {
            dist: hit.dist.sqrt(),
            value: store.values[hit.id as usize],
            id: hit.id,
        })
        .collect();
    let n = store.len();
    (
        NeighborSet { entries },
        StepStats {
            scanned: n,
            dist_ops: n,
        },
    )
}

/// Returns the nearest cluster index and its squared centroid distance;
/// exactly `n` distance computations, ties to the lowest index.
fn nearest_target_cluster<T: Scalar>(h: &[T], store: &FasterClusterStore<T>) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, c) in store.clusters.iter().enumerate() {
        let d = squared_l2(h, &c.centroid);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best
}

/// Two-step retrieval: nearest target cluster by centroid distance, then
/// the cached within-cluster top-k. The reported distance of each neighbor
/// is `d(c', h) + d(c', z)` (cached), an upper bound on the exact L2.
pub fn faster_knn_step<T: Scalar>(
    h: &[T],
    store: &FasterClusterStore<T>,
    k: usize,
) -> (NeighborSet<T>, StepStats) {
    let n = store.n();
    let Some((ci, d2)) = nearest_target_cluster(h, store) else {
        return (NeighborSet::default(), StepStats::default());
    };
    let cluster = &store.clusters[ci];
    let query_to_centroid = d2.sqrt();
    let entries = cluster
        .cached_topk(k)
        .map(|(local, cached)| NeighborEntry {
            dist: query_to_centroid + cached,
            value: cluster.member_values[local],
            id: local as u64,
        })
        .collect();
    (
        NeighborSet { entries },
        StepStats {
            scanned: n,
            dist_ops: n,
        },
    )
}

/// Same cluster selection as [`faster_knn_step`], but the in-cluster top-k
/// is ranked by exact query-to-member distances.
pub fn faster_no_cache_step<T: Scalar>(
    h: &[T],
    store: &FasterClusterStore<T>,
    k: usize,
) -> (NeighborSet<T>, StepStats) {
    let n = store.n();
    let Some((ci, _)) = nearest_target_cluster(h, store) else {
        return (NeighborSet::default(), StepStats::default());
    };
    let cluster = &store.clusters[ci];
    assert!(
        !cluster.member_vecs.is_empty(),
        "faster_no_cache_step needs member vectors (store was stripped)"
    );
    let hits = cluster.member_vecs.iter().enumerate().map(|(i, z)| Hit {
        dist: squared_l2(h, z),
        id: i as u64,
    });
    let entries = top_k(hits, k)
        .into_iter()
        .map(|hit| NeighborEntry {
            dist: hit.dist.sqrt(),
            value: cluster.member_values[hit.id as usize],
            id: hit.id,
        })
        .collect();
    (
        NeighborSet { entries },
        StepStats {
            scanned: n + cluster.len(),
            dist_ops: n + cluster.len(),
        },
    )
}

/// kNN distribution over the vocabulary: softmax of negative distances
/// with temperature, aggregated per distinct value. Returns `None` for an
/// empty neighbor set (the caller then decodes with the base model alone).
pub fn p_knn<T: Scalar>(
    ns: &NeighborSet<T>,
    temperature: f64,
    vocab_size: usize,
) -> Option<Vec<f64>> {
    if ns.is_empty() {
        return None;
    }
    let d_min = ns
        .entries
        .iter()
        .map(|e| e.dist.as_f64())
        .fold(f64::INFINITY, f64::min);
    let mut probs = vec![0.0f64; vocab_size];
    let mut z = 0.0f64;
    for e in &ns.entries {
        let w = (-(e.dist.as_f64() - d_min) / temperature).exp();
        probs[e.value as usize] += w;
        z += w;
    }
    for p in &mut probs {
        *p /= z;
    }
    Some(probs)
}

/// `lambda * p_knn + (1 - lambda) * p_mt`, elementwise.
pub fn interpolate(p_knn_vec: &[f64], p_mt_vec: &[f64], lambda: f64) -> Vec<f64> {
    debug_assert_eq!(p_knn_vec.len(), p_mt_vec.len());
    p_knn_vec
        .iter()
        .zip(p_mt_vec)
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect()
}

/// The stores a decoding run may draw on; strategies check for the ones
/// they need.
#[derive(Default)]
pub struct DecodeStores<'a, T: Scalar> {
    pub vanilla: Option<&'a VanillaIndex<T>>,
    pub fast: Option<&'a FastTargetStore<T>>,
    pub faster: Option<&'a FasterClusterStore<T>>,
    /// Flat store mapped from the faster source clusters, searched like a
    /// fast store.
    pub cluster_mapped_flat: Option<&'a FastTargetStore<T>>,
}

impl<'a, T: Scalar> DecodeStores<'a, T> {
    pub fn new() -> Self {
        DecodeStores {
            vanilla: None,
            fast: None,
            faster: None,
            cluster_mapped_flat: None,
        }
    }

    fn run_step(
        &self,
        strategy: Strategy,
        h: &[T],
        k: usize,
    ) -> Result<(NeighborSet<T>, StepStats)> {
        let missing = |what: &str| {
            Error::config(format!(
                "strategy {} requires a {what} store",
                strategy.as_str()
            ))
        };
        match strategy {
            Strategy::Vanilla => {
                let idx = self.vanilla.ok_or_else(|| missing("vanilla"))?;
                Ok(vanilla_knn_step(h, idx, k))
            }
            Strategy::Fast => {
                let store = self.fast.ok_or_else(|| missing("fast target"))?;
                Ok(fast_knn_step(h, store, k))
            }
            Strategy::Faster => {
                let store = self.faster.ok_or_else(|| missing("faster cluster"))?;
                Ok(faster_knn_step(h, store, k))
            }
            Strategy::FastWithFasterSource => {
                let store = self
                    .cluster_mapped_flat
                    .ok_or_else(|| missing("cluster-mapped flat"))?;
                Ok(fast_knn_step(h, store, k))
            }
            Strategy::FasterNoCache => {
                let store = self.faster.ok_or_else(|| missing("faster cluster"))?;
                Ok(faster_no_cache_step(h, store, k))
            }
        }
    }
}

fn argmax_lowest(p: &[f64]) -> TokenId {
    let mut best = 0usize;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    best as TokenId
}

fn apply_distance_form<T: Scalar>(cfg: &DecodeConfig, mut ns: NeighborSet<T>) -> NeighborSet<T> {
    if cfg.squared_distances {
        for e in &mut ns.entries {
            e.dist = e.dist * e.dist;
        }
    }
    ns
}

/// Translates one source sentence. Greedy for `beam == 1`, otherwise beam
/// search keeping the top-beam prefixes by summed log probability. Decoding
/// stops on the reserved EOS token or at `max_len` emissions.
pub fn translate<T: Scalar>(
    source: &[TokenId],
    cfg: &DecodeConfig,
    stores: &DecodeStores<'_, T>,
    encoder: &SynthEncoder<T>,
    output_embeddings: &[ContextVector<T>],
) -> Result<(Vec<TokenId>, Vec<StepTrace>)> {
    cfg.validate()?;
    if cfg.beam > 1 {
        return beam_translate(source, cfg, stores, encoder, output_embeddings);
    }
    let sctx = encoder.sentence_context(source);
    let mut out: Vec<TokenId> = Vec::new();
    let mut traces = Vec::new();
    for _ in 0..cfg.max_len {
        let h = sctx.encode_prefix(encoder, &out);
        let p_mt = base_prob(&h, output_embeddings);
        let started = Instant::now();
        let (ns, stats) = stores.run_step(cfg.strategy, &h, cfg.k)?;
        let elapsed_ns = started.elapsed().as_nanos() as u64;
        let ns = apply_distance_form(cfg, ns);
        let p = match p_knn(&ns, cfg.temperature, p_mt.len()) {
            Some(pk) => interpolate(&pk, &p_mt, cfg.lambda),
            None => p_mt,
        };
        let tok = argmax_lowest(&p);
        traces.push(StepTrace {
            strategy: cfg.strategy,
            scanned: stats.scanned,
            dist_ops: stats.dist_ops,
            elapsed_ns,
            chosen: tok,
        });
        if tok == EOS {
            break;
        }
        out.push(tok);
    }
    Ok((out, traces))
}

struct Hypothesis {
    tokens: Vec<TokenId>,
    log_prob: f64,
    finished: bool,
}

fn beam_translate<T: Scalar>(
    source: &[TokenId],
    cfg: &DecodeConfig,
    stores: &DecodeStores<'_, T>,
    encoder: &SynthEncoder<T>,
    output_embeddings: &[ContextVector<T>],
) -> Result<(Vec<TokenId>, Vec<StepTrace>)> {
    let sctx = encoder.sentence_context(source);
    let mut beams = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut traces = Vec::new();
    for _ in 0..cfg.max_len {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let started = Instant::now();
        let mut scanned = 0usize;
        let mut dist_ops = 0usize;
        // (beam index, next token or None for carry-over, score)
        let mut candidates: Vec<(usize, Option<TokenId>, f64)> = Vec::new();
        for (bi, hyp) in beams.iter().enumerate() {
            if hyp.finished {
                candidates.push((bi, None, hyp.log_prob));
                continue;
            }
            let h = sctx.encode_prefix(encoder, &hyp.tokens);
            let p_mt = base_prob(&h, output_embeddings);
            let (ns, stats) = stores.run_step(cfg.strategy, &h, cfg.k)?;
            scanned += stats.scanned;
            dist_ops += stats.dist_ops;
            let ns = apply_distance_form(cfg, ns);
            let p = match p_knn(&ns, cfg.temperature, p_mt.len()) {
                Some(pk) => interpolate(&pk, &p_mt, cfg.lambda),
                None => p_mt,
            };
            for (tok, &prob) in p.iter().enumerate() {
                if prob > 0.0 {
                    candidates.push((bi, Some(tok as TokenId), hyp.log_prob + prob.ln()));
                }
            }
        }
        candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).expect("finite scores"));
        candidates.truncate(cfg.beam);
        let next: Vec<Hypothesis> = candidates
            .into_iter()
            .map(|(bi, tok, score)| {
                let parent = &beams[bi];
                match tok {
                    None => Hypothesis {
                        tokens: parent.tokens.clone(),
                        log_prob: score,
                        finished: true,
                    },
                    Some(t) => {
                        let mut tokens = parent.tokens.clone();
                        let finished = t == EOS;
                        if !finished {
                            tokens.push(t);
                        }
                        Hypothesis {
                            tokens,
                            log_prob: score,
                            finished,
                        }
                    }
                }
            })
            .collect();
        beams = next;
        let best = beams
            .iter()
            .max_by(|a, b| a.log_prob.partial_cmp(&b.log_prob).expect("finite scores"))
            .expect("beam is non-empty");
        traces.push(StepTrace {
            strategy: cfg.strategy,
            scanned,
            dist_ops,
            elapsed_ns: started.elapsed().as_nanos() as u64,
            chosen: best.tokens.last().copied().unwrap_or(EOS),
        });
    }
    let best = beams
        .into_iter()
        .max_by(|a, b| a.log_prob.partial_cmp(&b.log_prob).expect("finite scores"))
        .expect("beam is non-empty");
    Ok((best.tokens, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ns(entries: &[(f32, TokenId)]) -> NeighborSet<f32> {
        NeighborSet {
            entries: entries
                .iter()
                .enumerate()
                .map(|(i, &(dist, value))| NeighborEntry {
                    dist,
                    value,
                    id: i as u64,
                })
                .collect(),
        }
    }

    #[test]
    fn p_knn_single_neighbor_is_point_mass() {
        let p = p_knn(&ns(&[(0.3, 2)]), 1.0, 4).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn p_knn_equal_distances_split_evenly() {
        for t in [0.1, 1.0, 10.0] {
            let p = p_knn(&ns(&[(0.5, 1), (0.5, 3)]), t, 4).unwrap();
            assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(p[3], 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn p_knn_analytic_softmax() {
        // distances (0, T ln 3) with distinct values -> (0.75, 0.25)
        let t = 0.7;
        let p = p_knn(&ns(&[(0.0, 0), ((t * 3.0f64.ln()) as f32, 1)]), t, 2).unwrap();
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-6);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-6);
    }

    #[test]
    fn p_knn_aggregates_repeated_values() {
        let p = p_knn(&ns(&[(0.2, 1), (0.2, 1), (0.2, 2)]), 1.0, 3).unwrap();
        assert_abs_diff_eq!(p[1], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn p_knn_empty_is_none() {
        let empty: NeighborSet<f32> = NeighborSet::default();
        assert!(p_knn(&empty, 1.0, 4).is_none());
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let a = vec![1.0, 0.0];
        let b = vec![0.2, 0.8];
        assert_eq!(interpolate(&a, &b, 0.0), b);
        assert_eq!(interpolate(&a, &b, 1.0), a);
        let mid = interpolate(&a, &b, 0.5);
        assert_abs_diff_eq!(mid[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(mid[1], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_to_lowest_token() {
        assert_eq!(argmax_lowest(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
    }

    #[test]
    fn strategy_round_trips_through_names() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
