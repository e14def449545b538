//! Retrieval engine and decoding harness for nearest-neighbor machine
//! translation datastores.
//!
//! Three retrieval regimes share one pipeline:
//! * **vanilla**: exact search over every target-side context of the
//!   training set,
//! * **fast**: per test sentence, top-c same-type source neighbors mapped
//!   through word alignments to a small target store,
//! * **faster**: per-type k-means clusters; each test token selects one
//!   nearest cluster, the aligned target cluster caches member distances
//!   and ranks, and decode-time retrieval scans only the n cluster
//!   centroids and reads the cache.
//!
//! A seeded synthetic corpus and encoder ([`synth`]) stand in for a trained
//! model so the whole pipeline is deterministic and runs at desk scale.
//! Core math is generic over the scalar type ([`Scalar`], `f32`/`f64`);
//! the aliases below fix the shipped pipeline to `f32`, matching the
//! on-disk format.

pub mod annindex;
pub mod bench;
pub mod clusterstore;
pub mod datastore;
pub mod decode;
pub mod error;
pub mod io;
pub mod quantize;
mod scalar;
mod seeding;
pub mod synth;
pub mod vector;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use synth::{TokenId, EOS};
pub use vector::ContextVector;

/// Scalar of the shipped pipeline and the binary store format.
pub type Real = f32;
/// Context vector over [`Real`].
pub type Vector = ContextVector<Real>;
pub type Encoder = synth::SynthEncoder<Real>;
pub type ClusterMap = clusterstore::TypeClusterMap<Real>;
pub type Vanilla = datastore::VanillaStore<Real>;
pub type VanillaSearch = datastore::VanillaIndex<Real>;
pub type FastStore = datastore::FastTargetStore<Real>;
pub type FasterStore = datastore::FasterClusterStore<Real>;
pub type Codebook = quantize::PqCodebook<Real>;
