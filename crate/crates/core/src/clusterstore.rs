//! Per-token-type k-means clustering with precomputed member distances and
//! ranks.
//!
//! All training occurrences of one token type are split into
//! `g = max(1, floor(f / m))` clusters. Each cluster caches the L2
//! distance of every member to its centroid and the ascending rank order,
//! so decode-time top-k inside a cluster costs no distance computations.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Scalar;
use crate::seeding::{stream_seed, tags};
use crate::synth::TokenId;
use crate::vector::{l2_distance, squared_l2, ContextVector};

/// Lloyd iteration cap for type clusters and sub-quantizer training.
pub const MAX_LLOYD_ITERS: usize = 25;

/// Cluster divisor used at full scale.
pub const FULL_SCALE_CLUSTER_DIVISOR: usize = 2_048;

/// Desk-scale cluster divisor default.
pub const DESK_CLUSTER_DIVISOR: usize = 64;

/// Below this point count, k-means restarts a few times and keeps the best
/// clustering; tiny inputs are the ones where a single unlucky init gets
/// stuck in a bad local optimum.
const RESTART_POINT_LIMIT: usize = 256;
const SMALL_INPUT_RESTARTS: usize = 4;

/// Result of one k-means fit. `sse_history` holds the sum of squared
/// point-to-assigned-centroid distances measured after every assignment
/// pass; it is non-increasing.
#[derive(Debug, Clone)]
pub struct KmeansFit<T> {
    pub centroids: Vec<ContextVector<T>>,
    pub assignment: Vec<u32>,
    pub sse_history: Vec<f64>,
}

impl<T> KmeansFit<T> {
    pub fn final_sse(&self) -> f64 {
        *self.sse_history.last().expect("at least one pass")
    }
}

fn nearest_centroid<T: Scalar>(point: &[T], centroids: &[ContextVector<T>]) -> (usize, T) {
    let mut best = 0usize;
    let mut best_d = squared_l2(point, &centroids[0]);
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_l2(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

fn kmeanspp_init<T: Scalar>(
    points: &[ContextVector<T>],
    g: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ContextVector<T>> {
    let n = points.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(g);
    let first = rng.random_range(0..n);
    chosen.push(first);
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_l2(p, &points[first]).as_f64())
        .collect();
    while chosen.len() < g {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            // all remaining mass on duplicates; take the lowest unchosen
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            let d = squared_l2(p, &points[next]).as_f64();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn lloyd<T: Scalar>(
    points: &[ContextVector<T>],
    mut centroids: Vec<ContextVector<T>>,
    max_iters: usize,
) -> KmeansFit<T> {
    let n = points.len();
    let g = centroids.len();
    let dim = points[0].len();
    let mut assignment = vec![u32::MAX; n];
    let mut d2 = vec![0.0f64; n];
    let mut sse_history = Vec::new();
    let mut updates = 0usize;
    loop {
        let mut changed = false;
        let mut counts = vec![0usize; g];
        let mut sse = 0.0f64;
        for (i, p) in points.iter().enumerate() {
            let (best, d) = nearest_centroid(p, &centroids);
            d2[i] = d.as_f64();
            sse += d2[i];
            if assignment[i] != best as u32 {
                assignment[i] = best as u32;
                changed = true;
            }
            counts[best] += 1;
        }
        if let Some(&prev) = sse_history.last() {
            debug_assert!(sse <= prev, "SSE increased: {prev} -> {sse}");
        }
        sse_history.push(sse);
        if !changed || updates >= max_iters {
            break;
        }

        let mut acc = vec![vec![0.0f64; dim]; g];
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i] as usize;
            for j in 0..dim {
                acc[a][j] += p[j].as_f64();
            }
        }
        for c in 0..g {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for j in 0..dim {
                    centroids[c][j] = T::from_f64_lossy(acc[c][j] * inv);
                }
            }
        }
        // reseed each empty centroid to the point farthest from its own
        // centroid, stealing only from clusters that can spare a member
        for c in 0..g {
            if counts[c] > 0 {
                continue;
            }
            let mut far: Option<usize> = None;
            for i in 0..n {
                if counts[assignment[i] as usize] <= 1 {
                    continue;
                }
                if far.is_none_or(|f| d2[i] > d2[f]) {
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                counts[assignment[i] as usize] -= 1;
                counts[c] += 1;
                assignment[i] = c as u32;
                centroids[c] = points[i].clone();
                d2[i] = 0.0;
            }
        }
        updates += 1;
    }
    KmeansFit {
        centroids,
        assignment,
        sse_history,
    }
}

/// Lloyd's algorithm with seeded k-means++ initialization.
///
/// Ties in the assignment step go to the lowest centroid index. When
/// `g >= |points|` every point becomes its own singleton cluster. Small
/// inputs are fitted a few times from different seeded inits and the
/// lowest-SSE run wins.
pub fn kmeans_fit<T: Scalar>(
    points: &[ContextVector<T>],
    g: usize,
    max_iters: usize,
    seed: u64,
) -> KmeansFit<T> {
    assert!(!points.is_empty(), "kmeans on zero points");
    assert!(g >= 1, "g must be >= 1");
    let n = points.len();
    if g >= n {
        return KmeansFit {
            centroids: points.to_vec(),
            assignment: (0..n as u32).collect(),
            sse_history: vec![0.0],
        };
    }
    let attempts = if n <= RESTART_POINT_LIMIT {
        SMALL_INPUT_RESTARTS
    } else {
        1
    };
    let mut best: Option<KmeansFit<T>> = None;
    for attempt in 0..attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, tags::KMEANS, attempt as u64));
        let init = kmeanspp_init(points, g, &mut rng);
        let fit = lloyd(points, init, max_iters);
        if best
            .as_ref()
            .is_none_or(|b| fit.final_sse() < b.final_sse())
        {
            best = Some(fit);
        }
    }
    best.expect("at least one attempt")
}

/// One k-means cluster of same-type training tokens, with cached member
/// distances and their ascending rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeCluster<T> {
    pub type_id: TokenId,
    pub centroid: ContextVector<T>,
    /// Global datastore indices of the members.
    pub member_ids: Vec<u64>,
    /// L2 distance of each member to the centroid, parallel to `member_ids`.
    pub member_dists: Vec<T>,
    /// Local member indices sorted ascending by distance (ties by lower
    /// global id).
    pub rank_order: Vec<u32>,
}

/// Ranks local indices ascending by `(dist, id)`.
pub(crate) fn rank_by_distance<T: Scalar>(dists: &[T], ids: impl Fn(usize) -> u64) -> Vec<u32> {
    let mut order: Vec<u32> = (0..dists.len() as u32).collect();
    order.sort_by(|&a, &b| {
        dists[a as usize]
            .partial_cmp(&dists[b as usize])
            .expect("finite distances")
            .then(ids(a as usize).cmp(&ids(b as usize)))
    });
    order
}

impl<T: Scalar> TypeCluster<T> {
    pub fn new(
        type_id: TokenId,
        centroid: ContextVector<T>,
        member_ids: Vec<u64>,
        member_dists: Vec<T>,
    ) -> Self {
        assert_eq!(member_ids.len(), member_dists.len());
        let rank_order = rank_by_distance(&member_dists, |i| member_ids[i]);
        TypeCluster {
            type_id,
            centroid,
            member_ids,
            member_dists,
            rank_order,
        }
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// First `min(k, len)` members in cached rank order as
    /// `(global id, distance)`. No distances are computed here.
    pub fn cached_topk(&self, k: usize) -> Vec<(u64, T)> {
        assert!(k >= 1, "k must be >= 1");
        self.rank_order
            .iter()
            .take(k)
            .map(|&r| (self.member_ids[r as usize], self.member_dists[r as usize]))
            .collect()
    }
}

/// All type clusters of a training set, keyed by token type.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeClusterMap<T> {
    pub clusters: BTreeMap<TokenId, Vec<TypeCluster<T>>>,
    /// Cluster divisor used at build time (0 when loaded from disk, which
    /// does not record it).
    pub m: usize,
    pub dim: usize,
}

impl<T: Scalar> TypeClusterMap<T> {
    pub fn clusters_for(&self, ty: TokenId) -> Option<&[TypeCluster<T>]> {
        self.clusters.get(&ty).map(|v| v.as_slice())
    }

    pub fn type_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn total_clusters(&self) -> usize {
        self.clusters.values().map(|v| v.len()).sum()
    }

    pub fn total_members(&self) -> usize {
        self.clusters
            .values()
            .flat_map(|v| v.iter())
            .map(|c| c.len())
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::atomic_write(path, |w| {
            io::write_header(w, self.dim as u32)?;
            io::write_u64(w, self.clusters.len() as u64)?;
            for (&ty, clusters) in &self.clusters {
                io::write_u32(w, ty)?;
                io::write_u32(w, clusters.len() as u32)?;
                for c in clusters {
                    io::write_u64(w, c.member_ids.len() as u64)?;
                    for &x in &c.centroid {
                        io::write_f32(w, x.to_stored())?;
                    }
                    for &id in &c.member_ids {
                        io::write_u64(w, id)?;
                    }
                    for &d in &c.member_dists {
                        io::write_f32(w, d.to_stored())?;
                    }
                }
            }
            Ok(())
        })
    }

    /// Loads a cluster-store file; ranks are recomputed from the stored
    /// distances.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = io::open_reader(path)?;
        let dim = io::read_header(&mut r)? as usize;
        let type_count = io::read_u64(&mut r)?;
        let mut clusters = BTreeMap::new();
        for _ in 0..type_count {
            let ty = io::read_u32(&mut r)?;
            let g = io::read_u32(&mut r)?;
            let mut list = Vec::with_capacity(io::checked_capacity(g as usize));
            for _ in 0..g {
                let count = io::read_u64(&mut r)? as usize;
                let cap = io::checked_capacity(count);
                let mut centroid = Vec::with_capacity(dim);
                for _ in 0..dim {
                    centroid.push(T::from_stored(io::read_f32(&mut r)?));
                }
                let mut member_ids = Vec::with_capacity(cap);
                for _ in 0..count {
                    member_ids.push(io::read_u64(&mut r)?);
                }
                let mut member_dists = Vec::with_capacity(cap);
                for _ in 0..count {
                    member_dists.push(T::from_stored(io::read_f32(&mut r)?));
                }
                list.push(TypeCluster::new(ty, centroid, member_ids, member_dists));
            }
            clusters.insert(ty, list);
        }
        Ok(TypeClusterMap {
            clusters,
            m: 0,
            dim,
        })
    }
}

/// Fits `g = max(1, floor(f / m))` clusters per token type over the grouped
/// training vectors. `vectors[i]` has type `types[i]` and global id `i`.
/// Types are fitted independently (in parallel) with seeds derived per type.
pub fn build_type_clusters<T: Scalar>(
    vectors: &[ContextVector<T>],
    types: &[TokenId],
    m: usize,
    seed: u64,
) -> TypeClusterMap<T> {
    assert!(m >= 1, "m must be >= 1");
    assert_eq!(vectors.len(), types.len());
    let dim = vectors.first().map_or(0, |v| v.len());

    let mut groups: BTreeMap<TokenId, Vec<usize>> = BTreeMap::new();
    for (i, &ty) in types.iter().enumerate() {
        groups.entry(ty).or_default().push(i);
    }

    let fitted: Vec<(TokenId, Vec<TypeCluster<T>>)> = groups
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(ty, idxs)| {
            let f = idxs.len();
            let g = (f / m).max(1);
            let points: Vec<ContextVector<T>> = idxs.iter().map(|&i| vectors[i].clone()).collect();
            let fit = kmeans_fit(
                &points,
                g,
                MAX_LLOYD_ITERS,
                stream_seed(seed, tags::TYPE_CLUSTERS, ty as u64),
            );
            let g_eff = fit.centroids.len();
            let mut members: Vec<Vec<(u64, T)>> = vec![Vec::new(); g_eff];
            for (local, &global) in idxs.iter().enumerate() {
                let c = fit.assignment[local] as usize;
                let d = l2_distance(&points[local], &fit.centroids[c]);
                members[c].push((global as u64, d));
            }
            let clusters = fit
                .centroids
                .into_iter()
                .zip(members)
                .filter(|(_, m)| !m.is_empty())
                .map(|(centroid, m)| {
                    let (ids, dists) = m.into_iter().unzip();
                    TypeCluster::new(ty, centroid, ids, dists)
                })
                .collect();
            (ty, clusters)
        })
        .collect();

    TypeClusterMap {
        clusters: fitted.into_iter().collect(),
        m,
        dim,
    }
}

/// Index of the cluster whose centroid is L2-nearest to the query; ties go
/// to the lowest index.
pub fn nearest_cluster<T: Scalar>(query: &[T], clusters: &[TypeCluster<T>]) -> Result<usize> {
    if clusters.is_empty() {
        return Err(Error::usage("nearest_cluster over an empty cluster list"));
    }
    let mut best = 0usize;
    let mut best_d = squared_l2(query, &clusters[0].centroid);
    for (i, c) in clusters.iter().enumerate().skip(1) {
        let d = squared_l2(query, &c.centroid);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}
