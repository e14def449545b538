//! Datastore construction and persistence.
//!
//! Three flavors:
//! * the vanilla full store: every target-side context vector of the
//!   training set with its gold next token,
//! * the fast per-sentence store: top-c same-type source neighbors per test
//!   token, mapped through word alignments to target-side entries,
//! * the faster per-sentence cluster store: one nearest type cluster per
//!   test token, mapped to an aligned target cluster with cached member
//!   distances and ranks.
//!
//! All flavors share one binary container (`HKNN` header + flavor tag);
//! the fast and faster stores are per-sentence artifacts, so files carry a
//! store count and a whole test set round-trips as a bundle.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::annindex::{route_search, BruteIndex, IvfIndex, Neighbor, SearchBackend};
use crate::clusterstore::{nearest_cluster, rank_by_distance, TypeCluster, TypeClusterMap};
use crate::error::{Error, Result};
use crate::io;
use crate::quantize::{PqCode, PqCodebook};
use crate::scalar::Scalar;
pub use crate::synth::AlignmentMap;
use crate::synth::{ParallelCorpus, SynthEncoder, TokenId};
use crate::vector::{l2_distance, mean, top_k, ContextVector, Hit};

/// Encoded training set: per-occurrence source vectors (with their types
/// and pair/position provenance) and per-position target context states.
#[derive(Debug, Clone)]
pub struct TrainingStates<T> {
    pub dim: usize,
    pub src_vecs: Vec<ContextVector<T>>,
    pub src_types: Vec<TokenId>,
    /// `(pair index, source position)` of each source occurrence.
    pub src_pair_pos: Vec<(u32, u32)>,
    /// Target context states, one per target position of every pair;
    /// `tgt_keys[i]` encodes `(source, target prefix)` and `tgt_values[i]`
    /// is the gold next token.
    pub tgt_keys: Vec<ContextVector<T>>,
    pub tgt_values: Vec<TokenId>,
    /// Start of each pair's target states; length `pairs + 1`.
    pub tgt_offsets: Vec<usize>,
}

impl<T: Scalar> TrainingStates<T> {
    pub fn from_corpus(corpus: &ParallelCorpus, encoder: &SynthEncoder<T>) -> Self {
        struct PairStates<T> {
            src: Vec<ContextVector<T>>,
            types: Vec<TokenId>,
            keys: Vec<ContextVector<T>>,
            values: Vec<TokenId>,
        }
        let per_pair: Vec<PairStates<T>> = corpus
            .pairs
            .par_iter()
            .map(|(src, tgt)| {
                let src_vecs = encoder.encode_source(src);
                let sctx = encoder.sentence_context(src);
                let keys = (0..tgt.len())
                    .map(|i| sctx.encode_prefix(encoder, &tgt[..i]))
                    .collect();
                PairStates {
                    src: src_vecs,
                    types: src.clone(),
                    keys,
                    values: tgt.clone(),
                }
            })
            .collect();

        let mut out = TrainingStates {
            dim: encoder.dim(),
            src_vecs: Vec::new(),
            src_types: Vec::new(),
            src_pair_pos: Vec::new(),
            tgt_keys: Vec::new(),
            tgt_values: Vec::new(),
            tgt_offsets: vec![0],
        };
        for (pair_idx, ps) in per_pair.into_iter().enumerate() {
            for (pos, (v, ty)) in ps.src.into_iter().zip(ps.types).enumerate() {
                out.src_vecs.push(v);
                out.src_types.push(ty);
                out.src_pair_pos.push((pair_idx as u32, pos as u32));
            }
            out.tgt_keys.extend(ps.keys);
            out.tgt_values.extend(ps.values);
            out.tgt_offsets.push(out.tgt_keys.len());
        }
        out
    }

    /// State `(key, value)` at a target position of a pair.
    pub fn target_state(&self, pair: usize, tgt_pos: u32) -> Option<(&ContextVector<T>, TokenId)> {
        let start = *self.tgt_offsets.get(pair)?;
        let end = *self.tgt_offsets.get(pair + 1)?;
        let idx = start + tgt_pos as usize;
        if idx >= end {
            return None;
        }
        Some((&self.tgt_keys[idx], self.tgt_values[idx]))
    }

    pub fn source_type_frequencies(&self) -> BTreeMap<TokenId, usize> {
        let mut freq = BTreeMap::new();
        for &ty in &self.src_types {
            *freq.entry(ty).or_insert(0) += 1;
        }
        freq
    }
}

/// Key payload of a store: raw vectors or PQ codes.
#[derive(Debug, Clone, PartialEq)]
pub enum StoreKeys<T> {
    Raw(Vec<ContextVector<T>>),
    Quantized {
        codebook: PqCodebook<T>,
        codes: Vec<PqCode>,
    },
}

impl<T: Scalar> StoreKeys<T> {
    pub fn len(&self) -> usize {
        match self {
            StoreKeys::Raw(v) => v.len(),
            StoreKeys::Quantized { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The full key-value datastore over every target position of the training
/// set.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaStore<T> {
    pub keys: StoreKeys<T>,
    pub values: Vec<TokenId>,
}

impl<T: Scalar> VanillaStore<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn from_states(states: &TrainingStates<T>) -> Self {
        VanillaStore {
            keys: StoreKeys::Raw(states.tgt_keys.clone()),
            values: states.tgt_values.clone(),
        }
    }

    /// Replaces raw keys by PQ codes trained on them.
    pub fn quantize(self, num_blocks: usize, ksub: usize, seed: u64) -> Result<Self> {
        let raw = match self.keys {
            StoreKeys::Raw(v) => v,
            StoreKeys::Quantized { .. } => return Err(Error::usage("store is already quantized")),
        };
        let codebook = crate::quantize::pq_train(&raw, num_blocks, ksub, seed)?;
        let codes = raw
            .iter()
            .map(|v| codebook.encode(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(VanillaStore {
            keys: StoreKeys::Quantized { codebook, codes },
            values: self.values,
        })
    }
}

/// Builds the vanilla store: for every target position `i` of every pair,
/// key = context of `(source, target[..i])`, value = `target[i]`.
pub fn build_vanilla<T: Scalar>(
    corpus: &ParallelCorpus,
    encoder: &SynthEncoder<T>,
) -> VanillaStore<T> {
    assert!(!corpus.is_empty(), "corpus must be non-empty");
    let states = TrainingStates::from_corpus(corpus, encoder);
    VanillaStore {
        keys: StoreKeys::Raw(states.tgt_keys),
        values: states.tgt_values,
    }
}

/// Knobs for index construction over stores and per-type groups.
#[derive(Debug, Clone)]
pub struct IndexParams {
    /// Types with frequency at or above this use IVF.
    pub threshold: usize,
    pub nlist: usize,
    pub nprobe: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams {
            threshold: crate::annindex::DESK_FREQ_THRESHOLD,
            nlist: 32,
            nprobe: 8,
            seed: 0,
        }
    }
}

enum VanillaBackend<T> {
    Brute(BruteIndex<T>),
    Ivf {
        index: IvfIndex<T>,
        nprobe: usize,
    },
    PqBrute {
        codebook: PqCodebook<T>,
        codes: Vec<PqCode>,
    },
}

/// A vanilla store prepared for decode-time search: raw keys behind brute
/// or IVF search (routed by store size against the frequency threshold),
/// or PQ codes behind asymmetric brute search.
pub struct VanillaIndex<T> {
    backend: VanillaBackend<T>,
    values: Vec<TokenId>,
}

impl<T: Scalar> VanillaIndex<T> {
    pub fn build(store: &VanillaStore<T>, params: &IndexParams) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::usage("cannot index an empty store"));
        }
        let backend = match &store.keys {
            StoreKeys::Raw(keys) => match route_search(keys.len(), params.threshold) {
                SearchBackend::Brute => VanillaBackend::Brute(BruteIndex::new(
                    keys.clone(),
                    (0..keys.len() as u64).collect(),
                )),
                SearchBackend::Ivf => {
                    let nlist = params.nlist.clamp(1, keys.len());
                    let index = IvfIndex::build(
                        keys.clone(),
                        (0..keys.len() as u64).collect(),
                        nlist,
                        params.seed,
                    );
                    let nprobe = params.nprobe.clamp(1, index.nlist());
                    VanillaBackend::Ivf { index, nprobe }
                }
            },
            StoreKeys::Quantized { codebook, codes } => VanillaBackend::PqBrute {
                codebook: codebook.clone(),
                codes: codes.clone(),
            },
        };
        Ok(VanillaIndex {
            backend,
            values: store.values.clone(),
        })
    }

    /// Forces the exact brute backend regardless of store size.
    pub fn build_brute(store: &VanillaStore<T>) -> Result<Self> {
        let params = IndexParams {
            threshold: usize::MAX,
            ..IndexParams::default()
        };
        Self::build(store, &params)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value_of(&self, id: u64) -> TokenId {
        self.values[id as usize]
    }

    /// Top-k search plus the number of distance computations performed.
    pub fn search(&self, q: &[T], k: usize) -> Result<(Vec<Neighbor<T>>, usize)> {
        match &self.backend {
            VanillaBackend::Brute(idx) => Ok((idx.search(q, k)?, idx.len())),
            VanillaBackend::Ivf { index, nprobe } => index.search_with_stats(q, k, *nprobe),
            VanillaBackend::PqBrute { codebook, codes } => {
                let hits = codes.iter().enumerate().map(|(i, code)| Hit {
                    dist: codebook.adc_distance(q, code),
                    id: i as u64,
                });
                let out = top_k(hits, k)
                    .into_iter()
                    .map(|h| Neighbor {
                        dist: h.dist,
                        id: h.id,
                    })
                    .collect();
                Ok((out, codes.len()))
            }
        }
    }
}

/// Per-type search indices over the training-set source occurrences,
/// routed per type between brute force and IVF by frequency.
pub struct PerTypeIndices<T> {
    indices: BTreeMap<TokenId, (usize, TypeIndex<T>)>,
    nprobe: usize,
}

enum TypeIndex<T> {
    Brute(BruteIndex<T>),
    Ivf(IvfIndex<T>),
}

pub fn build_per_type_indices<T: Scalar>(
    states: &TrainingStates<T>,
    params: &IndexParams,
) -> PerTypeIndices<T> {
    let mut groups: BTreeMap<TokenId, Vec<usize>> = BTreeMap::new();
    for (i, &ty) in states.src_types.iter().enumerate() {
        groups.entry(ty).or_default().push(i);
    }
    let built: Vec<(TokenId, (usize, TypeIndex<T>))> = groups
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(ty, idxs)| {
            let freq = idxs.len();
            let vectors: Vec<ContextVector<T>> =
                idxs.iter().map(|&i| states.src_vecs[i].clone()).collect();
            let payloads: Vec<u64> = idxs.iter().map(|&i| i as u64).collect();
            let index = match route_search(freq, params.threshold) {
                SearchBackend::Brute => TypeIndex::Brute(BruteIndex::new(vectors, payloads)),
                SearchBackend::Ivf => {
                    let nlist = params.nlist.clamp(1, freq);
                    TypeIndex::Ivf(IvfIndex::build(vectors, payloads, nlist, params.seed))
                }
            };
            (ty, (freq, index))
        })
        .collect();
    PerTypeIndices {
        indices: built.into_iter().collect(),
        nprobe: params.nprobe,
    }
}

impl<T: Scalar> PerTypeIndices<T> {
    pub fn type_frequency(&self, ty: TokenId) -> Option<usize> {
        self.indices.get(&ty).map(|(f, _)| *f)
    }

    /// Top-c same-type neighbors, or `None` for a type unseen in training.
    pub fn search(&self, ty: TokenId, q: &[T], c: usize) -> Option<Vec<Neighbor<T>>> {
        let (_, index) = self.indices.get(&ty)?;
        let out = match index {
            TypeIndex::Brute(idx) => idx.search(q, c).expect("type groups are non-empty"),
            TypeIndex::Ivf(idx) => {
                let nprobe = self.nprobe.clamp(1, idx.nlist());
                idx.search(q, c, nprobe).expect("nprobe clamped into range")
            }
        };
        Some(out)
    }
}

/// Per test-source-token, the global ids of its top-c same-type training
/// neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct FastSourceStore {
    pub per_token: Vec<Vec<u64>>,
    pub token_types: Vec<TokenId>,
    pub c: usize,
}

impl FastSourceStore {
    pub fn total_neighbors(&self) -> usize {
        self.per_token.iter().map(|v| v.len()).sum()
    }
}

/// Builds the fast source store for one test sentence. Tokens whose type
/// never occurs in training contribute zero neighbors (with a warning).
pub fn build_fast_source<T: Scalar>(
    sentence: &[TokenId],
    encoder: &SynthEncoder<T>,
    indices: &PerTypeIndices<T>,
    c: usize,
) -> FastSourceStore {
    let vecs = encoder.encode_source(sentence);
    build_fast_source_from_vecs(&vecs, sentence, indices, c)
}

pub fn build_fast_source_from_vecs<T: Scalar>(
    vecs: &[ContextVector<T>],
    types: &[TokenId],
    indices: &PerTypeIndices<T>,
    c: usize,
) -> FastSourceStore {
    assert!(c >= 1, "c must be >= 1");
    assert_eq!(vecs.len(), types.len());
    let mut per_token = Vec::with_capacity(vecs.len());
    for (v, &ty) in vecs.iter().zip(types) {
        match indices.search(ty, v, c) {
            Some(neighbors) => per_token.push(neighbors.into_iter().map(|n| n.id).collect()),
            None => {
                log::warn!("token type {ty} unseen in training; zero neighbors");
                per_token.push(Vec::new());
            }
        }
    }
    FastSourceStore {
        per_token,
        token_types: types.to_vec(),
        c,
    }
}

/// Flat target-side store searched exactly at decode time.
#[derive(Debug, Clone, PartialEq)]
pub struct FastTargetStore<T> {
    pub keys: Vec<ContextVector<T>>,
    pub values: Vec<TokenId>,
}

impl<T: Scalar> FastTargetStore<T> {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Bytes of searchable key vectors (the O(cnd) payload).
    pub fn key_vector_bytes(&self) -> u64 {
        (self.keys.len() * self.keys.first().map_or(0, |k| k.len()) * std::mem::size_of::<T>())
            as u64
    }
}

/// Maps each selected source occurrence to its aligned target state
/// (lowest-index link wins); unaligned occurrences are dropped and counted.
pub fn map_tokens_to_target<T: Scalar>(
    store: &FastSourceStore,
    alignments: &AlignmentMap,
    states: &TrainingStates<T>,
) -> (FastTargetStore<T>, usize) {
    let mut keys = Vec::new();
    let mut values = Vec::new();
    let mut dropped = 0usize;
    for ids in &store.per_token {
        for &gid in ids {
            let (pair, pos) = states.src_pair_pos[gid as usize];
            match alignments
                .lowest_target_for(pair as usize, pos)
                .and_then(|tpos| states.target_state(pair as usize, tpos))
            {
                Some((key, value)) => {
                    keys.push(key.clone());
                    values.push(value);
                }
                None => dropped += 1,
            }
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} unaligned source occurrences dropped from target store");
    }
    (FastTargetStore { keys, values }, dropped)
}

/// Reference to the source-side cluster selected for one test token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceClusterRef {
    pub src_pos: u32,
    pub type_id: TokenId,
    pub cluster_idx: u32,
}

/// Target-side counterpart of one selected source cluster: aligned member
/// states, their values, the averaged centroid, and the cached
/// distance/rank tables used at decode time.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCluster<T> {
    pub centroid: ContextVector<T>,
    /// Member state vectors; empty when the store was stripped for the
    /// cache-only decode path.
    pub member_vecs: Vec<ContextVector<T>>,
    pub member_values: Vec<TokenId>,
    pub member_dists: Vec<T>,
    pub rank_order: Vec<u32>,
}

impl<T: Scalar> TargetCluster<T> {
    pub fn len(&self) -> usize {
        self.member_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_values.is_empty()
    }

    /// First `min(k, len)` members by cached rank as
    /// `(local index, cached distance)`; no distance computations.
    pub fn cached_topk(&self, k: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        self.rank_order
            .iter()
            .take(k)
            .map(|&r| (r as usize, self.member_dists[r as usize]))
    }
}

/// Per-sentence cluster store: one source cluster reference and one aligned
/// target cluster per (usable) source token. Target clusters are shared
/// with the precomputed [`TargetClusterIndex`] when one is used.
#[derive(Debug, Clone, PartialEq)]
pub struct FasterClusterStore<T> {
    pub source_refs: Vec<SourceClusterRef>,
    pub clusters: Vec<Arc<TargetCluster<T>>>,
}

impl<T: Scalar> FasterClusterStore<T> {
    /// Number of selected clusters (= usable source tokens).
    pub fn n(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Drops member vectors, leaving exactly what the cached decode path
    /// needs (centroids, values, distances, ranks).
    pub fn strip_member_vectors(&mut self) {
        for c in &mut self.clusters {
            Arc::make_mut(c).member_vecs.clear();
        }
    }

    pub fn has_member_vectors(&self) -> bool {
        self.clusters.iter().all(|c| !c.member_vecs.is_empty())
    }

    /// Flattens member states into a flat target store (the "fast search
    /// over the cluster-mapped store" ablation).
    pub fn flatten(&self) -> Result<FastTargetStore<T>> {
        if !self.has_member_vectors() {
            return Err(Error::usage(
                "store was stripped; member vectors unavailable",
            ));
        }
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for c in &self.clusters {
            keys.extend(c.member_vecs.iter().cloned());
            values.extend(c.member_values.iter().copied());
        }
        Ok(FastTargetStore { keys, values })
    }

    /// Bytes of searchable key vectors (the O(nd) payload: one centroid
    /// per selected cluster).
    pub fn key_vector_bytes(&self) -> u64 {
        (self.clusters.len()
            * self.clusters.first().map_or(0, |c| c.centroid.len())
            * std::mem::size_of::<T>()) as u64
    }
}

/// Maps one source-side type cluster to its aligned target cluster:
/// aligned member states (lowest-index link per source token), their
/// values, the averaged centroid, and the cached distance/rank tables.
/// `None` when no member has an alignment.
fn map_cluster_to_target<T: Scalar>(
    source_cluster: &TypeCluster<T>,
    alignments: &AlignmentMap,
    states: &TrainingStates<T>,
    keep_member_vecs: bool,
) -> Option<TargetCluster<T>> {
    let mut member_refs: Vec<&ContextVector<T>> = Vec::new();
    let mut member_values: Vec<TokenId> = Vec::new();
    for &gid in &source_cluster.member_ids {
        let (pair, spos) = states.src_pair_pos[gid as usize];
        if let Some((key, value)) = alignments
            .lowest_target_for(pair as usize, spos)
            .and_then(|tpos| states.target_state(pair as usize, tpos))
        {
            member_refs.push(key);
            member_values.push(value);
        }
    }
    if member_refs.is_empty() {
        return None;
    }
    let centroid = mean(&member_refs);
    let member_dists: Vec<T> = member_refs
        .iter()
        .map(|z| l2_distance(z, &centroid))
        .collect();
    let rank_order = rank_by_distance(&member_dists, |i| i as u64);
    let member_vecs = if keep_member_vecs {
        member_refs.into_iter().cloned().collect()
    } else {
        Vec::new()
    };
    Some(TargetCluster {
        centroid,
        member_vecs,
        member_values,
        member_dists,
        rank_order,
    })
}

/// Aligned target clusters of one type, indexed by source cluster
/// (`None` when nothing aligned).
type MappedClusters<T> = Vec<Option<Arc<TargetCluster<T>>>>;

/// The source-to-target cluster mapping, computed once after clustering
/// and shared by every test sentence. Entry `[type][cluster_idx]` is the
/// aligned target cluster (`None` when nothing aligned).
pub struct TargetClusterIndex<T> {
    mapped: BTreeMap<TokenId, MappedClusters<T>>,
}

impl<T: Scalar> TargetClusterIndex<T> {
    /// Maps every type cluster to its target cluster in advance.
    /// `keep_member_vecs` retains member states for the no-cache ablation
    /// and flattening; the cached decode path does not need them.
    pub fn precompute(
        cluster_map: &TypeClusterMap<T>,
        alignments: &AlignmentMap,
        states: &TrainingStates<T>,
        keep_member_vecs: bool,
    ) -> Self {
        let mapped: Vec<(TokenId, MappedClusters<T>)> = cluster_map
            .clusters
            .iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(&ty, clusters)| {
                let list = clusters
                    .iter()
                    .map(|c| {
                        map_cluster_to_target(c, alignments, states, keep_member_vecs).map(Arc::new)
                    })
                    .collect();
                (ty, list)
            })
            .collect();
        TargetClusterIndex {
            mapped: mapped.into_iter().collect(),
        }
    }

    pub fn get(&self, ty: TokenId, cluster_idx: usize) -> Option<&Arc<TargetCluster<T>>> {
        self.mapped.get(&ty)?.get(cluster_idx)?.as_ref()
    }
}

/// Builds the faster cluster store for one test sentence: nearest type
/// cluster per token, aligned target members, averaged centroid, cached
/// distances and ranks. Tokens with unseen types or no alignable members
/// are skipped with a warning; the skip count is returned.
///
/// This variant maps the selected clusters on the fly; pipelines that
/// translate many sentences share a [`TargetClusterIndex`] instead.
pub fn build_faster_cluster_store<T: Scalar>(
    sentence: &[TokenId],
    encoder: &SynthEncoder<T>,
    cluster_map: &TypeClusterMap<T>,
    alignments: &AlignmentMap,
    states: &TrainingStates<T>,
) -> (FasterClusterStore<T>, usize) {
    let vecs = encoder.encode_source(sentence);
    build_faster_cluster_store_from_vecs(&vecs, sentence, cluster_map, alignments, states, true)
}

pub fn build_faster_cluster_store_from_vecs<T: Scalar>(
    vecs: &[ContextVector<T>],
    types: &[TokenId],
    cluster_map: &TypeClusterMap<T>,
    alignments: &AlignmentMap,
    states: &TrainingStates<T>,
    keep_member_vecs: bool,
) -> (FasterClusterStore<T>, usize) {
    assert_eq!(vecs.len(), types.len());
    let mut store = FasterClusterStore {
        source_refs: Vec::new(),
        clusters: Vec::new(),
    };
    let mut skipped = 0usize;
    for (pos, (v, &ty)) in vecs.iter().zip(types).enumerate() {
        let clusters = match cluster_map.clusters_for(ty) {
            Some(c) if !c.is_empty() => c,
            _ => {
                log::warn!("token type {ty} unseen in training; skipped");
                skipped += 1;
                continue;
            }
        };
        let ci = nearest_cluster(v, clusters).expect("non-empty cluster list");
        match map_cluster_to_target(&clusters[ci], alignments, states, keep_member_vecs) {
            Some(target) => {
                store.source_refs.push(SourceClusterRef {
                    src_pos: pos as u32,
                    type_id: ty,
                    cluster_idx: ci as u32,
                });
                store.clusters.push(Arc::new(target));
            }
            None => {
                log::warn!("no alignable members for token type {ty}; skipped");
                skipped += 1;
            }
        }
    }
    (store, skipped)
}

/// Builds the per-sentence store from the precomputed source-to-target
/// cluster mapping: one nearest-cluster scan per token and a shared
/// reference to its target cluster, nothing else.
pub fn build_faster_cluster_store_with_index<T: Scalar>(
    sentence: &[TokenId],
    encoder: &SynthEncoder<T>,
    cluster_map: &TypeClusterMap<T>,
    index: &TargetClusterIndex<T>,
) -> (FasterClusterStore<T>, usize) {
    let vecs = encoder.encode_source(sentence);
    let mut store = FasterClusterStore {
        source_refs: Vec::new(),
        clusters: Vec::new(),
    };
    let mut skipped = 0usize;
    for (pos, (v, &ty)) in vecs.iter().zip(sentence).enumerate() {
        let clusters = match cluster_map.clusters_for(ty) {
            Some(c) if !c.is_empty() => c,
            _ => {
                log::warn!("token type {ty} unseen in training; skipped");
                skipped += 1;
                continue;
            }
        };
        let ci = nearest_cluster(v, clusters).expect("non-empty cluster list");
        match index.get(ty, ci) {
            Some(target) => {
                store.source_refs.push(SourceClusterRef {
                    src_pos: pos as u32,
                    type_id: ty,
                    cluster_idx: ci as u32,
                });
                store.clusters.push(Arc::clone(target));
            }
            None => {
                log::warn!("no alignable members for token type {ty}; skipped");
                skipped += 1;
            }
        }
    }
    (store, skipped)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Store flavor tag as written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreFlavor {
    Vanilla = 0,
    Fast = 1,
    Faster = 2,
}

impl StoreFlavor {
    pub fn as_str(self) -> &'static str {
        match self {
            StoreFlavor::Vanilla => "vanilla",
            StoreFlavor::Fast => "fast",
            StoreFlavor::Faster => "faster",
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(StoreFlavor::Vanilla),
            1 => Ok(StoreFlavor::Fast),
            2 => Ok(StoreFlavor::Faster),
            _ => Err(Error::format(format!("unknown store flavor tag {b}"))),
        }
    }
}

/// A store of any flavor, for flavor-agnostic round-tripping.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyStore<T> {
    Vanilla(VanillaStore<T>),
    Fast(FastTargetStore<T>),
    Faster(FasterClusterStore<T>),
}

impl<T: Scalar> AnyStore<T> {
    pub fn flavor(&self) -> StoreFlavor {
        match self {
            AnyStore::Vanilla(_) => StoreFlavor::Vanilla,
            AnyStore::Fast(_) => StoreFlavor::Fast,
            AnyStore::Faster(_) => StoreFlavor::Faster,
        }
    }

    fn dim(&self) -> usize {
        match self {
            AnyStore::Vanilla(s) => match &s.keys {
                StoreKeys::Raw(v) => v.first().map_or(0, |k| k.len()),
                StoreKeys::Quantized { codebook, .. } => codebook.dim(),
            },
            AnyStore::Fast(s) => s.keys.first().map_or(0, |k| k.len()),
            AnyStore::Faster(s) => s.clusters.first().map_or(0, |c| c.centroid.len()),
        }
    }
}

fn write_vector<W: Write, T: Scalar>(w: &mut W, v: &[T]) -> Result<()> {
    for &x in v {
        io::write_f32(w, x.to_stored())?;
    }
    Ok(())
}

fn read_vector<R: Read, T: Scalar>(r: &mut R, dim: usize) -> Result<ContextVector<T>> {
    let mut v = Vec::with_capacity(io::checked_capacity(dim));
    for _ in 0..dim {
        v.push(T::from_stored(io::read_f32(r)?));
    }
    Ok(v)
}

fn write_codebook<W: Write, T: Scalar>(w: &mut W, cb: &PqCodebook<T>) -> Result<()> {
    io::write_u32(w, cb.num_blocks as u32)?;
    io::write_u32(w, cb.ksub as u32)?;
    io::write_u32(w, cb.sub_dim as u32)?;
    for book in &cb.codebooks {
        io::write_u32(w, book.len() as u32)?;
        for cw in book {
            write_vector(w, cw)?;
        }
    }
    Ok(())
}

fn read_codebook<R: Read, T: Scalar>(r: &mut R) -> Result<PqCodebook<T>> {
    let num_blocks = io::read_u32(r)? as usize;
    let ksub = io::read_u32(r)? as usize;
    let sub_dim = io::read_u32(r)? as usize;
    let mut codebooks = Vec::with_capacity(io::checked_capacity(num_blocks));
    for _ in 0..num_blocks {
        let count = io::read_u32(r)? as usize;
        let mut book = Vec::with_capacity(io::checked_capacity(count));
        for _ in 0..count {
            book.push(read_vector(r, sub_dim)?);
        }
        codebooks.push(book);
    }
    Ok(PqCodebook {
        num_blocks,
        ksub,
        sub_dim,
        codebooks,
    })
}

fn write_kv_body<W: Write, T: Scalar>(
    w: &mut W,
    keys: &[ContextVector<T>],
    values: &[TokenId],
) -> Result<()> {
    io::write_u64(w, values.len() as u64)?;
    for &v in values {
        io::write_u32(w, v)?;
    }
    for k in keys {
        write_vector(w, k)?;
    }
    Ok(())
}

fn read_kv_body<R: Read, T: Scalar>(
    r: &mut R,
    dim: usize,
) -> Result<(Vec<ContextVector<T>>, Vec<TokenId>)> {
    let n = io::read_u64(r)? as usize;
    let cap = io::checked_capacity(n);
    let mut values = Vec::with_capacity(cap);
    for _ in 0..n {
        values.push(io::read_u32(r)?);
    }
    let mut keys = Vec::with_capacity(cap);
    for _ in 0..n {
        keys.push(read_vector(r, dim)?);
    }
    Ok((keys, values))
}

fn write_body<W: Write, T: Scalar>(w: &mut W, store: &AnyStore<T>) -> Result<()> {
    match store {
        AnyStore::Vanilla(s) => match &s.keys {
            StoreKeys::Raw(keys) => {
                io::write_u8(w, 0)?;
                write_kv_body(w, keys, &s.values)
            }
            StoreKeys::Quantized { codebook, codes } => {
                io::write_u8(w, 1)?;
                write_codebook(w, codebook)?;
                io::write_u64(w, codes.len() as u64)?;
                for &v in &s.values {
                    io::write_u32(w, v)?;
                }
                let wide = codebook.ksub > 256;
                for code in codes {
                    for &c in &code.codes {
                        if wide {
                            w.write_all(&c.to_le_bytes())?;
                        } else {
                            io::write_u8(w, c as u8)?;
                        }
                    }
                }
                Ok(())
            }
        },
        AnyStore::Fast(s) => write_kv_body(w, &s.keys, &s.values),
        AnyStore::Faster(s) => {
            io::write_u64(w, s.clusters.len() as u64)?;
            for (r, c) in s.source_refs.iter().zip(&s.clusters) {
                io::write_u32(w, r.src_pos)?;
                io::write_u32(w, r.type_id)?;
                io::write_u32(w, r.cluster_idx)?;
                io::write_u64(w, c.len() as u64)?;
                write_vector(w, &c.centroid)?;
                for &v in &c.member_values {
                    io::write_u32(w, v)?;
                }
                for &d in &c.member_dists {
                    io::write_f32(w, d.to_stored())?;
                }
                let has_vecs = !c.member_vecs.is_empty();
                io::write_u8(w, has_vecs as u8)?;
                if has_vecs {
                    for v in &c.member_vecs {
                        write_vector(w, v)?;
                    }
                }
            }
            Ok(())
        }
    }
}

fn read_body<R: Read, T: Scalar>(
    r: &mut R,
    flavor: StoreFlavor,
    dim: usize,
) -> Result<AnyStore<T>> {
    match flavor {
        StoreFlavor::Vanilla => {
            let quantized = io::read_u8(r)?;
            match quantized {
                0 => {
                    let (keys, values) = read_kv_body(r, dim)?;
                    Ok(AnyStore::Vanilla(VanillaStore {
                        keys: StoreKeys::Raw(keys),
                        values,
                    }))
                }
                1 => {
                    let codebook: PqCodebook<T> = read_codebook(r)?;
                    let n = io::read_u64(r)? as usize;
                    let mut values = Vec::with_capacity(io::checked_capacity(n));
                    for _ in 0..n {
                        values.push(io::read_u32(r)?);
                    }
                    let wide = codebook.ksub > 256;
                    let mut codes = Vec::with_capacity(io::checked_capacity(n));
                    for _ in 0..n {
                        let mut cs = Vec::with_capacity(io::checked_capacity(codebook.num_blocks));
                        for _ in 0..codebook.num_blocks {
                            let c = if wide {
                                let lo = io::read_u8(r)? as u16;
                                let hi = io::read_u8(r)? as u16;
                                lo | (hi << 8)
                            } else {
                                io::read_u8(r)? as u16
                            };
                            cs.push(c);
                        }
                        codes.push(PqCode { codes: cs });
                    }
                    Ok(AnyStore::Vanilla(VanillaStore {
                        keys: StoreKeys::Quantized { codebook, codes },
                        values,
                    }))
                }
                other => Err(Error::format(format!("bad quantization tag {other}"))),
            }
        }
        StoreFlavor::Fast => {
            let (keys, values) = read_kv_body(r, dim)?;
            Ok(AnyStore::Fast(FastTargetStore { keys, values }))
        }
        StoreFlavor::Faster => {
            let n = io::read_u64(r)? as usize;
            let cap = io::checked_capacity(n);
            let mut source_refs = Vec::with_capacity(cap);
            let mut clusters = Vec::with_capacity(cap);
            for _ in 0..n {
                let src_pos = io::read_u32(r)?;
                let type_id = io::read_u32(r)?;
                let cluster_idx = io::read_u32(r)?;
                let count = io::read_u64(r)? as usize;
                let mcap = io::checked_capacity(count);
                let centroid = read_vector(r, dim)?;
                let mut member_values = Vec::with_capacity(mcap);
                for _ in 0..count {
                    member_values.push(io::read_u32(r)?);
                }
                let mut member_dists: Vec<T> = Vec::with_capacity(mcap);
                for _ in 0..count {
                    member_dists.push(T::from_stored(io::read_f32(r)?));
                }
                let has_vecs = io::read_u8(r)? != 0;
                let mut member_vecs = Vec::new();
                if has_vecs {
                    member_vecs.reserve(mcap);
                    for _ in 0..count {
                        member_vecs.push(read_vector(r, dim)?);
                    }
                }
                let rank_order = rank_by_distance(&member_dists, |i| i as u64);
                source_refs.push(SourceClusterRef {
                    src_pos,
                    type_id,
                    cluster_idx,
                });
                clusters.push(Arc::new(TargetCluster {
                    centroid,
                    member_vecs,
                    member_values,
                    member_dists,
                    rank_order,
                }));
            }
            Ok(AnyStore::Faster(FasterClusterStore {
                source_refs,
                clusters,
            }))
        }
    }
}

/// Saves a single store (a bundle of one).
pub fn save_store<T: Scalar>(path: &Path, store: &AnyStore<T>) -> Result<()> {
    save_bundle(path, store.flavor(), std::slice::from_ref(store))
}

/// Loads a single store of any flavor; files holding more than one store
/// must go through [`load_bundle`].
pub fn load_store<T: Scalar>(path: &Path) -> Result<AnyStore<T>> {
    let (flavor, mut stores) = load_bundle(path)?;
    if stores.len() != 1 {
        return Err(Error::format(format!(
            "expected a single {} store, found a bundle of {}",
            flavor.as_str(),
            stores.len()
        )));
    }
    Ok(stores.pop().expect("length checked"))
}

/// Saves a homogeneous sequence of stores (one per test sentence for the
/// fast and faster flavors).
pub fn save_bundle<T: Scalar>(
    path: &Path,
    flavor: StoreFlavor,
    stores: &[AnyStore<T>],
) -> Result<()> {
    if stores.is_empty() {
        return Err(Error::usage("cannot persist an empty bundle"));
    }
    let dim = stores.iter().map(|s| s.dim()).find(|&d| d > 0).unwrap_or(0);
    io::atomic_write(path, |w| {
        io::write_header(w, dim as u32)?;
        io::write_u8(w, flavor as u8)?;
        io::write_u64(w, stores.len() as u64)?;
        for s in stores {
            if s.flavor() != flavor {
                return Err(Error::usage(format!(
                    "mixed flavors in bundle: {} and {}",
                    flavor.as_str(),
                    s.flavor().as_str()
                )));
            }
            write_body(w, s)?;
        }
        Ok(())
    })
}

pub fn load_bundle<T: Scalar>(path: &Path) -> Result<(StoreFlavor, Vec<AnyStore<T>>)> {
    let mut r = io::open_reader(path)?;
    let dim = io::read_header(&mut r)? as usize;
    let flavor = StoreFlavor::from_byte(io::read_u8(&mut r)?)?;
    let count = io::read_u64(&mut r)? as usize;
    let mut stores = Vec::with_capacity(io::checked_capacity(count));
    for _ in 0..count {
        stores.push(read_body(&mut r, flavor, dim)?);
    }
    Ok((flavor, stores))
}

fn expect_flavor<T: Scalar>(store: AnyStore<T>, want: StoreFlavor) -> Result<AnyStore<T>> {
    if store.flavor() != want {
        return Err(Error::format(format!(
            "expected a {} store, found a {} store",
            want.as_str(),
            store.flavor().as_str()
        )));
    }
    Ok(store)
}

pub fn load_vanilla_store<T: Scalar>(path: &Path) -> Result<VanillaStore<T>> {
    match expect_flavor(load_store(path)?, StoreFlavor::Vanilla)? {
        AnyStore::Vanilla(s) => Ok(s),
        _ => unreachable!(),
    }
}

pub fn load_fast_store<T: Scalar>(path: &Path) -> Result<FastTargetStore<T>> {
    match expect_flavor(load_store(path)?, StoreFlavor::Fast)? {
        AnyStore::Fast(s) => Ok(s),
        _ => unreachable!(),
    }
}

pub fn load_faster_store<T: Scalar>(path: &Path) -> Result<FasterClusterStore<T>> {
    match expect_flavor(load_store(path)?, StoreFlavor::Faster)? {
        AnyStore::Faster(s) => Ok(s),
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusterstore::build_type_clusters;
    use crate::synth::{gen_corpus, VocabSpec};

    fn small_world() -> (ParallelCorpus, SynthEncoder<f32>, TrainingStates<f32>) {
        let spec = VocabSpec::with_identity_dictionary(12, 12, 0.0, 1.0).unwrap();
        let corpus = gen_corpus(&spec, 150, 8, 3).unwrap();
        let encoder = SynthEncoder::new(16, 5);
        let states = TrainingStates::from_corpus(&corpus, &encoder);
        (corpus, encoder, states)
    }

    #[test]
    fn vanilla_store_size_is_target_token_count() {
        let (corpus, encoder, _) = small_world();
        let store = build_vanilla(&corpus, &encoder);
        assert_eq!(store.len(), corpus.target_token_count());
    }

    #[test]
    fn vanilla_single_pair_has_one_entry_per_target_token() {
        let corpus = ParallelCorpus::from_text("1 2 3\t1 2 3\t0-0 1-1 2-2\n").unwrap();
        let encoder: SynthEncoder<f32> = SynthEncoder::new(8, 0);
        let store = build_vanilla(&corpus, &encoder);
        assert_eq!(store.len(), 3);
        // the empty-prefix key for the first target token is present
        let first = encoder.encode_context(&[1, 2, 3], &[]);
        match &store.keys {
            StoreKeys::Raw(keys) => assert_eq!(keys[0], first),
            _ => unreachable!(),
        }
    }

    #[test]
    fn fast_source_exact_occurrence_comes_back_at_c1() {
        let (corpus, encoder, states) = small_world();
        let indices = build_per_type_indices(&states, &IndexParams::default());
        let (sentence, _) = &corpus.pairs[0];
        let store = build_fast_source(sentence, &encoder, &indices, 1);
        // position 0 of pair 0 is global source occurrence 0, and its
        // encoding is exactly the stored vector, so it is its own top-1
        assert_eq!(store.per_token[0], vec![0]);
    }

    #[test]
    fn fast_source_returns_all_when_frequency_below_c() {
        let (_, encoder, states) = small_world();
        let freq = states.source_type_frequencies();
        let (&rare, &f) = freq.iter().min_by_key(|(_, &f)| f).unwrap();
        let indices = build_per_type_indices(&states, &IndexParams::default());
        let store = build_fast_source(&[rare], &encoder, &indices, f + 100);
        assert_eq!(store.per_token[0].len(), f);
    }

    #[test]
    fn fast_source_matches_same_type_brute_oracle() {
        let (corpus, encoder, states) = small_world();
        let indices = build_per_type_indices(&states, &IndexParams::default());
        let (sentence, _) = &corpus.pairs[1];
        let vecs = encoder.encode_source(sentence);
        let store = build_fast_source(sentence, &encoder, &indices, 8);
        for ((q, &ty), got) in vecs.iter().zip(sentence.iter()).zip(&store.per_token) {
            let mut oracle: Vec<(f32, u64)> = states
                .src_types
                .iter()
                .enumerate()
                .filter(|&(_, &t)| t == ty)
                .map(|(i, _)| (l2_distance(q, &states.src_vecs[i]), i as u64))
                .collect();
            oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<u64> = oracle.iter().take(8).map(|&(_, id)| id).collect();
            assert_eq!(got, &want);
        }
    }

    #[test]
    fn unseen_type_contributes_zero_neighbors() {
        let (_, encoder, states) = small_world();
        let indices = build_per_type_indices(&states, &IndexParams::default());
        let store = build_fast_source(&[999], &encoder, &indices, 4);
        assert!(store.per_token[0].is_empty());
    }

    #[test]
    fn mapping_diagonal_alignment_preserves_size() {
        let (corpus, encoder, states) = small_world();
        let indices = build_per_type_indices(&states, &IndexParams::default());
        let (sentence, _) = &corpus.pairs[2];
        let fast = build_fast_source(sentence, &encoder, &indices, 4);
        let (target, dropped) = map_tokens_to_target(&fast, &corpus.alignments, &states);
        assert_eq!(dropped, 0);
        assert_eq!(target.len(), fast.total_neighbors());
        assert!(target.len() <= 4 * sentence.len());
    }

    #[test]
    fn mapping_drops_unaligned_tokens() {
        // two-token pair with only position 0 aligned
        let corpus = ParallelCorpus::from_text("1 2\t1 2\t0-0\n").unwrap();
        let encoder: SynthEncoder<f32> = SynthEncoder::new(8, 2);
        let states = TrainingStates::from_corpus(&corpus, &encoder);
        let indices = build_per_type_indices(&states, &IndexParams::default());
        let fast = build_fast_source(&[1, 2], &encoder, &indices, 1);
        assert_eq!(fast.total_neighbors(), 2);
        let (target, dropped) = map_tokens_to_target(&fast, &corpus.alignments, &states);
        assert_eq!(dropped, 1);
        assert_eq!(target.len(), 1);
    }

    #[test]
    fn mapped_values_follow_dictionary_on_noiseless_corpus() {
        let (corpus, encoder, states) = small_world();
        let indices = build_per_type_indices(&states, &IndexParams::default());
        for (sentence, _) in corpus.pairs.iter().take(10) {
            let fast = build_fast_source(sentence, &encoder, &indices, 4);
            let (target, _) = map_tokens_to_target(&fast, &corpus.alignments, &states);
            // identity dictionary at 12x12: image of s is s
            let mut cursor = 0usize;
            for (ids, &ty) in fast.per_token.iter().zip(sentence) {
                for _ in ids {
                    assert_eq!(target.values[cursor], ty);
                    cursor += 1;
                }
            }
        }
    }

    #[test]
    fn faster_store_selects_one_cluster_per_token() {
        let (corpus, encoder, states) = small_world();
        let clusters = build_type_clusters(&states.src_vecs, &states.src_types, 16, 0);
        for (sentence, _) in corpus.pairs.iter().take(20) {
            let (store, skipped) = build_faster_cluster_store(
                sentence,
                &encoder,
                &clusters,
                &corpus.alignments,
                &states,
            );
            assert_eq!(skipped, 0);
            assert_eq!(store.n(), sentence.len());
            assert_eq!(store.source_refs.len(), store.clusters.len());
            for (r, &ty) in store.source_refs.iter().zip(sentence.iter()) {
                assert_eq!(r.type_id, ty);
            }
        }
    }

    #[test]
    fn faster_store_centroid_is_member_mean_and_ranks_sorted() {
        let (corpus, encoder, states) = small_world();
        let clusters = build_type_clusters(&states.src_vecs, &states.src_types, 16, 0);
        let (sentence, _) = &corpus.pairs[4];
        let (store, _) =
            build_faster_cluster_store(sentence, &encoder, &clusters, &corpus.alignments, &states);
        for c in &store.clusters {
            let m = mean(&c.member_vecs);
            for (a, b) in c.centroid.iter().zip(&m) {
                assert!((a - b).abs() < 1e-6);
            }
            let ranked: Vec<f32> = c
                .rank_order
                .iter()
                .map(|&r| c.member_dists[r as usize])
                .collect();
            for w in ranked.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn singleton_source_clusters_give_singleton_targets_with_zero_dist() {
        // m larger than any frequency would give one cluster per type; to
        // get singletons, set m=1 so g=f (every occurrence its own cluster)
        let (corpus, encoder, states) = small_world();
        let clusters = build_type_clusters(&states.src_vecs, &states.src_types, 1, 0);
        let (sentence, _) = &corpus.pairs[0];
        let (store, _) =
            build_faster_cluster_store(sentence, &encoder, &clusters, &corpus.alignments, &states);
        for c in &store.clusters {
            assert_eq!(c.len(), 1);
            assert_eq!(c.member_dists[0], 0.0);
        }
    }

    #[test]
    fn unseen_type_is_skipped_in_faster_store() {
        let (corpus, encoder, states) = small_world();
        let clusters = build_type_clusters(&states.src_vecs, &states.src_types, 16, 0);
        let (store, skipped) = build_faster_cluster_store(
            &[1, 999, 2],
            &encoder,
            &clusters,
            &corpus.alignments,
            &states,
        );
        assert_eq!(skipped, 1);
        assert_eq!(store.n(), 2);
    }
}
