//! Exact brute-force kNN, an IVF coarse-quantizer index, and the
//! frequency-threshold routing between them.
//!
//! Brute search is the reference: exact top-k by ascending L2 with ties
//! broken by lower payload id. The IVF index clusters the data into
//! `nlist` cells and scans only the `nprobe` cells whose centroids are
//! nearest to the query; with `nprobe = nlist` it degenerates to brute
//! search exactly.

use crate::clusterstore::{kmeans_fit, MAX_LLOYD_ITERS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::{stream_seed, tags};
use crate::vector::{squared_l2, top_k, ContextVector, Hit};

/// One retrieved entry: L2 distance and the stored payload id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub dist: T,
    pub id: u64,
}

fn hits_to_neighbors<T: Scalar>(hits: Vec<Hit<T>>) -> Vec<Neighbor<T>> {
    hits.into_iter()
        .map(|h| Neighbor {
            dist: h.dist.sqrt(),
            id: h.id,
        })
        .collect()
}

/// Flat exact index over raw vectors.
#[derive(Debug, Clone)]
pub struct BruteIndex<T> {
    vectors: Vec<ContextVector<T>>,
    payloads: Vec<u64>,
}

impl<T: Scalar> BruteIndex<T> {
    pub fn new(vectors: Vec<ContextVector<T>>, payloads: Vec<u64>) -> Self {
        assert_eq!(vectors.len(), payloads.len());
        BruteIndex { vectors, payloads }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[ContextVector<T>] {
        &self.vectors
    }

    pub fn payloads(&self) -> &[u64] {
        &self.payloads
    }

    /// Exact top-k by ascending L2 (ties to the lower payload id); returns
    /// `min(k, N)` entries.
    pub fn search(&self, q: &[T], k: usize) -> Result<Vec<Neighbor<T>>> {
        assert!(k >= 1, "k must be >= 1");
        if self.is_empty() {
            return Err(Error::usage("search on an empty index"));
        }
        let hits = self.vectors.iter().zip(&self.payloads).map(|(v, &id)| Hit {
            dist: squared_l2(q, v),
            id,
        });
        Ok(hits_to_neighbors(top_k(hits, k)))
    }
}

/// IVF index: coarse centroids plus per-cell posting lists.
#[derive(Debug, Clone)]
pub struct IvfIndex<T> {
    centroids: Vec<ContextVector<T>>,
    cells: Vec<Vec<(ContextVector<T>, u64)>>,
}

impl<T: Scalar> IvfIndex<T> {
    /// Clusters the vectors into (at most) `nlist` cells with seeded
    /// k-means; every vector lands in exactly one posting list.
    pub fn build(
        vectors: Vec<ContextVector<T>>,
        payloads: Vec<u64>,
        nlist: usize,
        seed: u64,
    ) -> Self {
        assert!(nlist >= 1, "nlist must be >= 1");
        assert_eq!(vectors.len(), payloads.len());
        assert!(!vectors.is_empty(), "cannot build an empty IVF index");
        let fit = kmeans_fit(
            &vectors,
            nlist,
            MAX_LLOYD_ITERS,
            stream_seed(seed, tags::IVF, 0),
        );
        let mut cells: Vec<Vec<(ContextVector<T>, u64)>> = vec![Vec::new(); fit.centroids.len()];
        for ((v, id), &a) in vectors.into_iter().zip(payloads).zip(&fit.assignment) {
            cells[a as usize].push((v, id));
        }
        IvfIndex {
            centroids: fit.centroids,
            cells,
        }
    }

    pub fn nlist(&self) -> usize {
        self.centroids.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(|c| c.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scans the `nprobe` nearest cells and returns the exact top-k within
    /// the scanned union.
    pub fn search(&self, q: &[T], k: usize, nprobe: usize) -> Result<Vec<Neighbor<T>>> {
        Ok(self.search_with_stats(q, k, nprobe)?.0)
    }

    /// Like [`IvfIndex::search`], also reporting the number of distance
    /// computations performed (centroid scan plus scanned postings).
    pub fn search_with_stats(
        &self,
        q: &[T],
        k: usize,
        nprobe: usize,
    ) -> Result<(Vec<Neighbor<T>>, usize)> {
        assert!(k >= 1, "k must be >= 1");
        if nprobe == 0 || nprobe > self.nlist() {
            return Err(Error::usage(format!(
                "nprobe {nprobe} out of range 1..={}",
                self.nlist()
            )));
        }
        let ranked = top_k(
            self.centroids.iter().enumerate().map(|(i, c)| Hit {
                dist: squared_l2(q, c),
                id: i as u64,
            }),
            nprobe,
        );
        let mut dist_ops = self.nlist();
        let mut hits = Vec::new();
        for cell in &ranked {
            let posting = &self.cells[cell.id as usize];
            dist_ops += posting.len();
            for (v, id) in posting {
                hits.push(Hit {
                    dist: squared_l2(q, v),
                    id: *id,
                });
            }
        }
        Ok((hits_to_neighbors(top_k(hits.into_iter(), k)), dist_ops))
    }
}

/// Which search backend a token type should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchBackend {
    Brute,
    Ivf,
}

/// Frequency threshold used at full scale: types at or above it are
/// searched through the IVF index.
pub const FULL_SCALE_FREQ_THRESHOLD: usize = 30_000;

/// Desk-scale default; synthetic corpora rarely reach the full-scale
/// threshold, and both paths should get exercised.
pub const DESK_FREQ_THRESHOLD: usize = 2_000;

/// Brute force below the threshold, IVF at or above it.
pub fn route_search(type_freq: usize, threshold: usize) -> SearchBackend {
    if type_freq < threshold {
        SearchBackend::Brute
    } else {
        SearchBackend::Ivf
    }
}
