//! Product quantization: per-block codebooks, encoding, and asymmetric
//! distance computation against compressed vectors.
//!
//! Quantization is an optional layer; stores hold either raw vectors or PQ
//! codes behind one search interface, so retrieval quality can be compared
//! with and without the compression error.

use crate::clusterstore::{kmeans_fit, MAX_LLOYD_ITERS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::{stream_seed, tags};
use crate::vector::{squared_l2, ContextVector};

/// Sub-vector count at full scale (1024-dimensional representations).
pub const FULL_SCALE_NUM_BLOCKS: usize = 128;

/// Desk-scale defaults preserving the same dim/blocks ratio of 8.
pub const DESK_NUM_BLOCKS: usize = 8;
pub const DEFAULT_KSUB: usize = 256;

/// Trained product quantizer: `num_blocks` sub-codebooks of up to `ksub`
/// codewords, each of dimension `sub_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook<T> {
    pub num_blocks: usize,
    pub ksub: usize,
    pub sub_dim: usize,
    /// `codebooks[m][code]` is the codeword for block `m`. A block may hold
    /// fewer than `ksub` codewords when the training set is small.
    pub codebooks: Vec<Vec<ContextVector<T>>>,
}

/// A compressed vector: one codeword index per block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PqCode {
    pub codes: Vec<u16>,
}

/// Trains one sub-quantizer per block by k-means over the block slices,
/// minimizing the summed squared reconstruction error.
pub fn pq_train<T: Scalar>(
    vectors: &[ContextVector<T>],
    num_blocks: usize,
    ksub: usize,
    seed: u64,
) -> Result<PqCodebook<T>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::config("pq_train needs at least one vector"))?;
    let dim = first.len();
    if num_blocks == 0 || dim == 0 || dim % num_blocks != 0 {
        return Err(Error::config(format!(
            "number of blocks {num_blocks} must divide dimension {dim}"
        )));
    }
    if ksub == 0 || ksub > u16::MAX as usize + 1 {
        return Err(Error::config(format!("ksub {ksub} out of range")));
    }
    let sub_dim = dim / num_blocks;
    let mut codebooks = Vec::with_capacity(num_blocks);
    for b in 0..num_blocks {
        let slices: Vec<ContextVector<T>> = vectors
            .iter()
            .map(|v| v[b * sub_dim..(b + 1) * sub_dim].to_vec())
            .collect();
        let fit = kmeans_fit(
            &slices,
            ksub,
            MAX_LLOYD_ITERS,
            stream_seed(seed, tags::PQ_BLOCK, b as u64),
        );
        codebooks.push(fit.centroids);
    }
    Ok(PqCodebook {
        num_blocks,
        ksub,
        sub_dim,
        codebooks,
    })
}

impl<T: Scalar> PqCodebook<T> {
    pub fn dim(&self) -> usize {
        self.num_blocks * self.sub_dim
    }

    /// Maps each block to its nearest codeword (ties to the lowest code).
    pub fn encode(&self, x: &[T]) -> Result<PqCode> {
        if x.len() != self.dim() {
            return Err(Error::usage(format!(
                "encode dimension {} does not match codebook dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let mut codes = Vec::with_capacity(self.num_blocks);
        for b in 0..self.num_blocks {
            let slice = &x[b * self.sub_dim..(b + 1) * self.sub_dim];
            let book = &self.codebooks[b];
            let mut best = 0usize;
            let mut best_d = squared_l2(slice, &book[0]);
            for (i, cw) in book.iter().enumerate().skip(1) {
                let d = squared_l2(slice, cw);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            codes.push(best as u16);
        }
        Ok(PqCode { codes })
    }

    /// Concatenation of the codewords selected by `code`.
    pub fn reconstruct(&self, code: &PqCode) -> ContextVector<T> {
        assert_eq!(code.codes.len(), self.num_blocks);
        let mut out = Vec::with_capacity(self.dim());
        for (b, &c) in code.codes.iter().enumerate() {
            out.extend_from_slice(&self.codebooks[b][c as usize]);
        }
        out
    }

    /// Asymmetric distance: L2 between a raw query and the decoded
    /// codewords, accumulated block by block. Equals the exact L2 to the
    /// reconstruction, and the exact L2 to the original vector whenever
    /// quantization is lossless.
    pub fn adc_distance(&self, q: &[T], code: &PqCode) -> T {
        debug_assert_eq!(q.len(), self.dim());
        debug_assert_eq!(code.codes.len(), self.num_blocks);
        let mut acc = T::zero();
        for (b, &c) in code.codes.iter().enumerate() {
            let slice = &q[b * self.sub_dim..(b + 1) * self.sub_dim];
            acc += squared_l2(slice, &self.codebooks[b][c as usize]);
        }
        acc.sqrt()
    }

    /// Summed squared reconstruction error of `vectors` under this
    /// codebook (the training objective).
    pub fn distortion(&self, vectors: &[ContextVector<T>]) -> f64 {
        let mut total = 0.0f64;
        for v in vectors {
            let code = self.encode(v).expect("dimension checked by caller");
            let rec = self.reconstruct(&code);
            total += squared_l2(v, &rec).as_f64();
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::l2_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<ContextVector<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn rejects_non_dividing_blocks() {
        let vs = random_vectors(4, 10, 0);
        assert!(matches!(pq_train(&vs, 3, 4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn lossless_when_ksub_covers_distinct_blocks() {
        let vs = random_vectors(30, 16, 1);
        let cb = pq_train(&vs, 4, 256, 0).unwrap();
        assert_eq!(cb.distortion(&vs), 0.0);
        for v in &vs {
            let code = cb.encode(v).unwrap();
            assert_eq!(&cb.reconstruct(&code), v);
        }
    }

    #[test]
    fn scalar_blocks_two_vectors_zero_distortion() {
        // M = d: every block is a scalar; two vectors, ksub=2
        let vs: Vec<ContextVector<f32>> = vec![vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0]];
        let cb = pq_train(&vs, 3, 2, 0).unwrap();
        assert_eq!(cb.distortion(&vs), 0.0);
    }

    #[test]
    fn distortion_non_increasing_in_ksub() {
        let vs = random_vectors(1000, 16, 2);
        let d64 = pq_train(&vs, 4, 64, 3).unwrap().distortion(&vs);
        let d256 = pq_train(&vs, 4, 256, 3).unwrap().distortion(&vs);
        assert!(d64 >= d256, "distortion(64)={d64} < distortion(256)={d256}");
    }

    #[test]
    fn encode_is_deterministic_and_matches_block_scan() {
        let vs = random_vectors(100, 8, 4);
        let cb = pq_train(&vs, 2, 16, 5).unwrap();
        for q in random_vectors(20, 8, 6) {
            let a = cb.encode(&q).unwrap();
            let b = cb.encode(&q).unwrap();
            assert_eq!(a, b);
            // exhaustive per-block scan oracle
            for (blk, &code) in a.codes.iter().enumerate() {
                let slice = &q[blk * 4..(blk + 1) * 4];
                let want = cb.codebooks[blk]
                    .iter()
                    .enumerate()
                    .min_by(|(i, x), (j, y)| {
                        squared_l2(slice, x.as_slice())
                            .partial_cmp(&squared_l2(slice, y.as_slice()))
                            .unwrap()
                            .then(i.cmp(j))
                    })
                    .unwrap()
                    .0;
                assert_eq!(code as usize, want);
            }
        }
    }

    #[test]
    fn adc_matches_reconstruction_distance() {
        let vs = random_vectors(200, 8, 7);
        let cb = pq_train(&vs, 4, 16, 8).unwrap();
        for (q, x) in random_vectors(100, 8, 9).iter().zip(&vs) {
            let code = cb.encode(x).unwrap();
            let adc = cb.adc_distance(q, &code);
            let exact = l2_distance(q, &cb.reconstruct(&code));
            assert!((adc - exact).abs() < 1e-6, "{adc} vs {exact}");
        }
    }

    #[test]
    fn adc_zero_on_decoded_query() {
        let vs = random_vectors(50, 8, 10);
        let cb = pq_train(&vs, 2, 8, 11).unwrap();
        let code = cb.encode(&vs[0]).unwrap();
        let q = cb.reconstruct(&code);
        assert_eq!(cb.adc_distance(&q, &code), 0.0);
    }

    #[test]
    fn encoding_is_idempotent() {
        let vs = random_vectors(300, 8, 12);
        let cb = pq_train(&vs, 4, 8, 13).unwrap();
        for v in random_vectors(50, 8, 14) {
            let c1 = cb.encode(&v).unwrap();
            let c2 = cb.encode(&cb.reconstruct(&c1)).unwrap();
            assert_eq!(c1, c2);
        }
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let vs = random_vectors(10, 8, 15);
        let cb = pq_train(&vs, 2, 4, 16).unwrap();
        assert!(matches!(cb.encode(&[0.0f32; 6]), Err(Error::Usage(_))));
    }
}
