//! Deterministic synthetic parallel corpora and a seeded context encoder.
//!
//! This stands in for a trained MT model: token types get fixed
//! pseudo-random unit embeddings, contexts are cheap deterministic mixes of
//! those embeddings, and the "base model" probability is a softmax over dot
//! products with the target embedding table. Everything is a pure function
//! of `(seed, inputs)`, so two runs with the same flags are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::scalar::Scalar;
use crate::seeding::{stream_seed, tags};
use crate::vector::{dot, mean, normalize, ContextVector};

/// Vocabulary identity of a token. Id 0 is reserved for the end-of-sentence
/// marker on the target side; real types start at 1.
pub type TokenId = u32;

/// Reserved end-of-sentence token id; decoding stops when it is emitted.
pub const EOS: TokenId = 0;

/// Which embedding table a token id refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Synthetic vocabulary: sizes, a total source→target dictionary, and the
/// sampling knobs for corpus generation.
#[derive(Debug, Clone)]
pub struct VocabSpec {
    pub source_size: usize,
    pub target_size: usize,
    /// `dictionary[s - 1]` is the target image of source type `s`.
    pub dictionary: Vec<TokenId>,
    pub noise_rate: f64,
    pub zipf_exponent: f64,
}

impl VocabSpec {
    /// Dictionary mapping source type `s` to target type `((s-1) % target_size) + 1`.
    pub fn with_identity_dictionary(
        source_size: usize,
        target_size: usize,
        noise_rate: f64,
        zipf_exponent: f64,
    ) -> Result<Self> {
        let dictionary = (0..source_size)
            .map(|s| ((s % target_size.max(1)) + 1) as TokenId)
            .collect();
        let spec = VocabSpec {
            source_size,
            target_size,
            dictionary,
            noise_rate,
            zipf_exponent,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_size == 0 || self.target_size == 0 {
            return Err(Error::config("vocabulary sizes must be >= 1"));
        }
        if self.dictionary.len() != self.source_size {
            return Err(Error::config("dictionary must be total on source types"));
        }
        if self
            .dictionary
            .iter()
            .any(|&t| t == EOS || t as usize > self.target_size)
        {
            return Err(Error::config("dictionary image out of target range"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::config("noise_rate must be in [0, 1]"));
        }
        if self.zipf_exponent.is_nan() || self.zipf_exponent <= 0.0 {
            return Err(Error::config("zipf_exponent must be > 0"));
        }
        Ok(())
    }

    /// Target image of a source type, if `s` is in range.
    pub fn dict_image(&self, s: TokenId) -> Option<TokenId> {
        if s == 0 {
            return None;
        }
        self.dictionary.get(s as usize - 1).copied()
    }
}

/// Per sentence pair, the set of (source position, target position) links.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentMap {
    pub links: Vec<Vec<(u32, u32)>>,
}

impl AlignmentMap {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Lowest-index aligned target position for a source token, the
    /// deterministic choice for one-to-many links.
    pub fn lowest_target_for(&self, pair: usize, src_pos: u32) -> Option<u32> {
        self.links
            .get(pair)?
            .iter()
            .filter(|&&(s, _)| s == src_pos)
            .map(|&(_, t)| t)
            .min()
    }

    /// Reads a standalone alignment file: one pharaoh line per sentence
    /// pair (blank lines mean "no links").
    pub fn read_from(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let links = text
            .lines()
            .map(Self::parse_pharaoh)
            .collect::<Result<Vec<_>>>()?;
        Ok(AlignmentMap { links })
    }

    /// Parses one pharaoh line: space-separated `i-j` pairs; empty is valid.
    pub fn parse_pharaoh(line: &str) -> Result<Vec<(u32, u32)>> {
        let mut out = Vec::new();
        for item in line.split_whitespace() {
            let (s, t) = item
                .split_once('-')
                .ok_or_else(|| Error::format(format!("bad alignment link: {item:?}")))?;
            let s = s
                .parse::<u32>()
                .map_err(|_| Error::format(format!("bad alignment link: {item:?}")))?;
            let t = t
                .parse::<u32>()
                .map_err(|_| Error::format(format!("bad alignment link: {item:?}")))?;
            out.push((s, t));
        }
        Ok(out)
    }

    pub fn format_pharaoh(links: &[(u32, u32)]) -> String {
        let mut s = String::new();
        for (i, (a, b)) in links.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{a}-{b}");
        }
        s
    }
}

/// Sentence pairs plus gold alignments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
    pub alignments: AlignmentMap,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_token_count(&self) -> usize {
        self.pairs.iter().map(|(s, _)| s.len()).sum()
    }

    pub fn target_token_count(&self) -> usize {
        self.pairs.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alignments.len() != self.pairs.len() {
            return Err(Error::format("alignment count != pair count"));
        }
        for (i, (src, tgt)) in self.pairs.iter().enumerate() {
            if src.is_empty() || tgt.is_empty() {
                return Err(Error::format(format!("empty sentence in pair {i}")));
            }
            for &(s, t) in &self.alignments.links[i] {
                if s as usize >= src.len() || t as usize >= tgt.len() {
                    return Err(Error::format(format!(
                        "alignment link {s}-{t} out of range in pair {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// One line per pair: `src_ids<TAB>tgt_ids<TAB>pharaoh` with
    /// space-separated integers.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (src, tgt)) in self.pairs.iter().enumerate() {
            let src_s = src
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let tgt_s = tgt
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let al = AlignmentMap::format_pharaoh(&self.alignments.links[i]);
            let _ = writeln!(out, "{src_s}\t{tgt_s}\t{al}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut links = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let src = fields
                .next()
                .ok_or_else(|| Error::format(format!("line {}: missing source", lineno + 1)))?;
            let tgt = fields
                .next()
                .ok_or_else(|| Error::format(format!("line {}: missing target", lineno + 1)))?;
            let al = fields.next().unwrap_or("");
            let parse_ids = |s: &str| -> Result<Vec<TokenId>> {
                s.split_whitespace()
                    .map(|w| {
                        w.parse::<TokenId>().map_err(|_| {
                            Error::format(format!("line {}: bad token id {w:?}", lineno + 1))
                        })
                    })
                    .collect()
            };
            pairs.push((parse_ids(src)?, parse_ids(tgt)?));
            links.push(AlignmentMap::parse_pharaoh(al)?);
        }
        let corpus = ParallelCorpus {
            pairs,
            alignments: AlignmentMap { links },
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            use std::io::Write;
            w.write_all(self.to_text().as_bytes())?;
            Ok(())
        })
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

/// Generates `n_pairs` sentence pairs. Source tokens follow a Zipf law over
/// the source vocabulary; each target token is the dictionary image of the
/// source token at the same position, replaced by a different random target
/// type with probability `noise_rate`; alignments are the gold diagonal.
pub fn gen_corpus(
    spec: &VocabSpec,
    n_pairs: usize,
    max_len: usize,
    seed: u64,
) -> Result<ParallelCorpus> {
    spec.validate()?;
    if n_pairs == 0 {
        return Err(Error::config("n_pairs must be >= 1"));
    }
    if max_len == 0 {
        return Err(Error::config("max_len must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, tags::CORPUS, 0));
    let zipf = Zipf::new(spec.source_size as f64, spec.zipf_exponent)
        .map_err(|e| Error::config(format!("bad zipf parameters: {e}")))?;

    let mut pairs = Vec::with_capacity(n_pairs);
    let mut links = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let len = rng.random_range(1..=max_len);
        let mut src = Vec::with_capacity(len);
        let mut tgt = Vec::with_capacity(len);
        let mut al = Vec::with_capacity(len);
        for pos in 0..len {
            let s = zipf.sample(&mut rng).round() as TokenId;
            let image = spec.dict_image(s).expect("dictionary is total");
            let noisy = rng.random::<f64>() < spec.noise_rate;
            let t = if noisy && spec.target_size > 1 {
                // uniform over target types other than the image
                let r = rng.random_range(1..spec.target_size as TokenId);
                if r >= image {
                    r + 1
                } else {
                    r
                }
            } else {
                image
            };
            src.push(s);
            tgt.push(t);
            al.push((pos as u32, pos as u32));
        }
        pairs.push((src, tgt));
        links.push(al);
    }
    Ok(ParallelCorpus {
        pairs,
        alignments: AlignmentMap { links },
    })
}

/// Seeded deterministic context encoder.
///
/// Every token type gets a fixed pseudo-random unit vector (drawn from a
/// splitmix-derived stream, one stream per `(side, type)`); source positions
/// mix in the previous token's embedding with weight `mix_decay`. Target
/// contexts combine the source mean, a simulated hard attention on the
/// source position about to be translated (`attn_weight`, monotone
/// translation assumed), and a geometrically decayed sum of the prefix
/// embeddings. All outputs are L2-normalized.
#[derive(Debug, Clone)]
pub struct SynthEncoder<T: Scalar> {
    dim: usize,
    seed: u64,
    mix_decay: f64,
    attn_weight: f64,
    _marker: std::marker::PhantomData<T>,
}

/// Precomputed per-sentence state so decode loops don't recompute the source
/// encodings every step. `encode_context` goes through this type too,
/// keeping the arithmetic (and therefore the bits) identical on every path.
pub struct SentenceContext<T: Scalar> {
    source_mean: ContextVector<T>,
    source_encodings: Vec<ContextVector<T>>,
}

impl<T: Scalar> SynthEncoder<T> {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_mixing(dim, seed, 0.5, 1.0)
    }

    pub fn with_mixing(dim: usize, seed: u64, mix_decay: f64, attn_weight: f64) -> Self {
        assert!(dim > 0, "dimension must be positive");
        assert!(
            (0.0..1.0).contains(&mix_decay),
            "mix_decay must be in [0, 1)"
        );
        assert!(attn_weight >= 0.0, "attn_weight must be non-negative");
        SynthEncoder {
            dim,
            seed,
            mix_decay,
            attn_weight,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The fixed unit embedding of a token type.
    pub fn base_embedding(&self, side: Side, ty: TokenId) -> ContextVector<T> {
        let tag = match side {
            Side::Source => tags::SOURCE_EMB,
            Side::Target => tags::TARGET_EMB,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, tag, ty as u64));
        let mut v: ContextVector<T> = (0..self.dim)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                T::from_f64_lossy(x)
            })
            .collect();
        normalize(&mut v);
        v
    }

    /// Position-wise source representations:
    /// `normalize(emb(x_i) + mix_decay * emb(x_{i-1}))`, with a zero
    /// predecessor term at position 0.
    pub fn encode_source(&self, sentence: &[TokenId]) -> Vec<ContextVector<T>> {
        assert!(!sentence.is_empty(), "sentence must be non-empty");
        let decay = T::from_f64_lossy(self.mix_decay);
        let mut out = Vec::with_capacity(sentence.len());
        let mut prev: Option<ContextVector<T>> = None;
        for &tok in sentence {
            let base = self.base_embedding(Side::Source, tok);
            let mut v = base.clone();
            if let Some(p) = &prev {
                for j in 0..self.dim {
                    v[j] += decay * p[j];
                }
            }
            normalize(&mut v);
            out.push(v);
            prev = Some(base);
        }
        out
    }

    /// Per-sentence precomputation for [`SentenceContext::encode_prefix`].
    pub fn sentence_context(&self, source: &[TokenId]) -> SentenceContext<T> {
        let encoded = self.encode_source(source);
        SentenceContext {
            source_mean: mean(&encoded),
            source_encodings: encoded,
        }
    }

    /// Translation-context representation for `(source, target prefix)`:
    /// the source mean plus `attn_weight * encode_source(source)[p]` (the
    /// position about to be translated, `p = min(|prefix|, len - 1)`) plus
    /// `sum_j mix_decay^(p-j) * emb(prefix_j)`, L2-normalized.
    pub fn encode_context(&self, source: &[TokenId], prefix: &[TokenId]) -> ContextVector<T> {
        self.sentence_context(source).encode_prefix(self, prefix)
    }

    /// Target embedding table for ids `0..=target_size` (row 0 is EOS);
    /// the base-model softmax runs over these rows.
    pub fn output_embeddings(&self, target_size: usize) -> Vec<ContextVector<T>> {
        (0..=target_size as TokenId)
            .map(|ty| self.base_embedding(Side::Target, ty))
            .collect()
    }
}

impl<T: Scalar> SentenceContext<T> {
    pub fn encode_prefix(&self, enc: &SynthEncoder<T>, prefix: &[TokenId]) -> ContextVector<T> {
        let mut v = self.source_mean.clone();
        let attended = &self.source_encodings[prefix.len().min(self.source_encodings.len() - 1)];
        let attn = T::from_f64_lossy(enc.attn_weight);
        for j in 0..enc.dim {
            v[j] += attn * attended[j];
        }
        let decay = T::from_f64_lossy(enc.mix_decay);
        let mut weight = decay;
        for &tok in prefix.iter().rev() {
            let emb = enc.base_embedding(Side::Target, tok);
            for j in 0..enc.dim {
                v[j] += weight * emb[j];
            }
            weight *= decay;
        }
        normalize(&mut v);
        v
    }
}

/// Base-model distribution: softmax of `output_embeddings · h`. The result
/// is always a probability vector (computed in f64, max-shifted).
pub fn base_prob<T: Scalar>(h: &[T], output_embeddings: &[ContextVector<T>]) -> Vec<f64> {
    assert!(!output_embeddings.is_empty(), "empty embedding table");
    let logits: Vec<f64> = output_embeddings
        .iter()
        .map(|row| {
            debug_assert_eq!(row.len(), h.len());
            dot(row, h).as_f64()
        })
        .collect();
    softmax(&logits)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}
