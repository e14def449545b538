//! Timing and space harness for the strategy complexity claims.
//!
//! Wall-clock numbers are machine-dependent, so the primary signal is the
//! deterministic distance-operation counters taken from decode traces; the
//! timers back the qualitative speed ordering. Measured loops run on one
//! thread; only store construction fans out.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clusterstore::build_type_clusters;
use crate::datastore::{
    build_fast_source, build_faster_cluster_store_with_index, build_per_type_indices,
    map_tokens_to_target, IndexParams, TargetClusterIndex, TrainingStates, VanillaIndex,
    VanillaStore,
};
use crate::decode::{translate, DecodeConfig, DecodeStores, StepTrace, Strategy};
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::seeding::{stream_seed, tags};
use crate::synth::{gen_corpus, SynthEncoder, TokenId, VocabSpec};
use crate::Real;

/// Sweep configuration. Counter identities are exact for every row; the
/// wall-clock ordering check is opt-in because it asserts on timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Target datastore sizes (total target tokens) to sweep.
    pub store_tokens: Vec<usize>,
    pub c_values: Vec<usize>,
    /// Test source lengths to sweep.
    pub n_values: Vec<usize>,
    pub k: usize,
    pub d: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub m: usize,
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub zipf_exponent: f64,
    /// Training sentence length cap.
    pub max_len: usize,
    /// Test sentences measured per configuration.
    pub sentences: usize,
    pub freq_threshold: usize,
    pub nlist: usize,
    pub nprobe: usize,
    pub lambda: f64,
    pub temperature: f64,
    pub strategies: Vec<String>,
    pub check_ordering: bool,
    pub memory_budget_bytes: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            store_tokens: vec![100_000],
            c_values: vec![8, 64, 512],
            n_values: vec![12],
            k: 16,
            d: 64,
            reps: 5,
            warmup: 2,
            seed: 0,
            m: 64,
            source_vocab: 32,
            target_vocab: 32,
            zipf_exponent: 1.0,
            max_len: 16,
            sentences: 4,
            freq_threshold: crate::annindex::DESK_FREQ_THRESHOLD,
            nlist: 32,
            nprobe: 16,
            lambda: 0.5,
            temperature: 1.0,
            strategies: vec![
                "vanilla".to_string(),
                "fast".to_string(),
                "faster".to_string(),
            ],
            check_ordering: false,
            memory_budget_bytes: 2 * 1024 * 1024 * 1024,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 3 {
            return Err(Error::config("reps must be >= 3 behind every mean"));
        }
        if self.store_tokens.is_empty()
            || self.c_values.is_empty()
            || self.n_values.is_empty()
            || self.strategies.is_empty()
        {
            return Err(Error::config("empty sweep axis"));
        }
        if self.k == 0 || self.d == 0 || self.m == 0 || self.sentences == 0 || self.max_len == 0 {
            return Err(Error::config("counts must be >= 1"));
        }
        for s in &self.strategies {
            s.parse::<Strategy>()?;
        }
        Ok(())
    }
}

/// One measured configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchRow {
    pub strategy: String,
    /// Actual store size (total target tokens) behind this row.
    pub store_tokens: usize,
    pub n: usize,
    pub c: usize,
    pub k: usize,
    pub d: usize,
    /// Bytes of searchable key vectors of the per-step store.
    pub store_bytes: u64,
    /// Mean per-step candidate-set size.
    pub store_entries: f64,
    /// Mean per-step distance computations (deterministic).
    pub dist_ops: f64,
    pub ns_mean: f64,
    pub ns_median: f64,
    pub ns_p95: f64,
    /// Median wall clock of one full sentence (store build + decode).
    pub sentence_ns_median: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub notes: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn percentile(xs: &mut [f64], p: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let idx = ((xs.len() as f64 * p).ceil() as usize).clamp(1, xs.len()) - 1;
    xs[idx]
}

struct Measured {
    step_ns: Vec<f64>,
    sentence_ns: Vec<f64>,
    dist_ops: Vec<f64>,
    scanned: Vec<f64>,
    store_bytes: Vec<f64>,
}

/// Runs the sweep. Deterministic given the seed except for the wall-clock
/// fields.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut report = BenchReport::default();
    let spec = VocabSpec::with_identity_dictionary(
        cfg.source_vocab,
        cfg.target_vocab,
        0.0,
        cfg.zipf_exponent,
    )?;

    for (size_idx, &requested_tokens) in cfg.store_tokens.iter().enumerate() {
        // out-of-memory guard: reduce and report
        let bytes_per_token = (cfg.d * std::mem::size_of::<Real>() * 4) as u64;
        let mut tokens = requested_tokens;
        if tokens as u64 * bytes_per_token > cfg.memory_budget_bytes {
            tokens = (cfg.memory_budget_bytes / bytes_per_token) as usize;
            report.notes.push(format!(
                "store size {requested_tokens} reduced to {tokens} to fit the memory budget"
            ));
        }
        let n_pairs = (tokens * 2 / (cfg.max_len + 1)).max(1);
        let corpus = gen_corpus(&spec, n_pairs, cfg.max_len, cfg.seed)?;
        let encoder: SynthEncoder<Real> = SynthEncoder::new(cfg.d, cfg.seed);
        let states = TrainingStates::from_corpus(&corpus, &encoder);
        let actual_tokens = states.tgt_values.len();
        let out_embs = encoder.output_embeddings(cfg.target_vocab);

        let vanilla_store = VanillaStore::from_states(&states);
        // counters and the speed-ordering claim are stated for the brute
        // path over the full store
        let vanilla_index = VanillaIndex::build_brute(&vanilla_store)?;
        let clusters = build_type_clusters(&states.src_vecs, &states.src_types, cfg.m, cfg.seed);
        // source-to-target cluster mapping is a training-time artifact,
        // computed once and shared across sentences
        let keep_vecs = cfg.strategies.iter().any(|s| {
            matches!(
                s.parse::<Strategy>(),
                Ok(Strategy::FasterNoCache | Strategy::FastWithFasterSource)
            )
        });
        let target_index =
            TargetClusterIndex::precompute(&clusters, &corpus.alignments, &states, keep_vecs);
        let indices = build_per_type_indices(
            &states,
            &IndexParams {
                threshold: cfg.freq_threshold,
                nlist: cfg.nlist,
                nprobe: cfg.nprobe,
                seed: cfg.seed,
            },
        );

        for &n in &cfg.n_values {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
                cfg.seed,
                tags::BENCH,
                (size_idx * 1000 + n) as u64,
            ));
            let sentences: Vec<Vec<TokenId>> = (0..cfg.sentences)
                .map(|_| {
                    (0..n)
                        .map(|_| states.src_types[rng.random_range(0..states.src_types.len())])
                        .collect()
                })
                .collect();

            for &c in &cfg.c_values {
                for strategy_name in &cfg.strategies {
                    let strategy: Strategy = strategy_name.parse()?;
                    let decode_cfg = DecodeConfig {
                        k: cfg.k,
                        temperature: cfg.temperature,
                        lambda: cfg.lambda,
                        strategy,
                        max_len: n,
                        ..DecodeConfig::default()
                    };
                    let mut acc = Measured {
                        step_ns: Vec::new(),
                        sentence_ns: Vec::new(),
                        dist_ops: Vec::new(),
                        scanned: Vec::new(),
                        store_bytes: Vec::new(),
                    };
                    for round in 0..cfg.warmup + cfg.reps {
                        let measured = round >= cfg.warmup;
                        for sentence in &sentences {
                            let started = std::time::Instant::now();
                            let (traces, bytes) = run_sentence(
                                sentence,
                                &decode_cfg,
                                c,
                                &vanilla_index,
                                &clusters,
                                &target_index,
                                &indices,
                                &corpus.alignments,
                                &states,
                                &encoder,
                                &out_embs,
                            )?;
                            let sentence_ns = started.elapsed().as_nanos() as f64;
                            if measured {
                                acc.sentence_ns.push(sentence_ns);
                                acc.store_bytes.push(bytes as f64);
                                for t in &traces {
                                    acc.step_ns.push(t.elapsed_ns as f64);
                                    acc.dist_ops.push(t.dist_ops as f64);
                                    acc.scanned.push(t.scanned as f64);
                                }
                            }
                        }
                    }
                    report.rows.push(BenchRow {
                        strategy: strategy_name.clone(),
                        store_tokens: actual_tokens,
                        n,
                        c,
                        k: cfg.k,
                        d: cfg.d,
                        store_bytes: mean(&acc.store_bytes).round() as u64,
                        store_entries: mean(&acc.scanned),
                        dist_ops: mean(&acc.dist_ops),
                        ns_mean: mean(&acc.step_ns),
                        ns_median: median(&mut acc.step_ns.clone()),
                        ns_p95: percentile(&mut acc.step_ns, 0.95),
                        sentence_ns_median: median(&mut acc.sentence_ns),
                    });
                }
            }
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_sentence(
    sentence: &[TokenId],
    decode_cfg: &DecodeConfig,
    c: usize,
    vanilla_index: &VanillaIndex<Real>,
    clusters: &crate::clusterstore::TypeClusterMap<Real>,
    target_index: &TargetClusterIndex<Real>,
    indices: &crate::datastore::PerTypeIndices<Real>,
    alignments: &crate::synth::AlignmentMap,
    states: &TrainingStates<Real>,
    encoder: &SynthEncoder<Real>,
    out_embs: &[Vec<Real>],
) -> Result<(Vec<StepTrace>, u64)> {
    let mut stores = DecodeStores::new();
    let fast_store;
    let faster_store;
    let flat_store;
    let bytes;
    match decode_cfg.strategy {
        Strategy::Vanilla => {
            stores.vanilla = Some(vanilla_index);
            bytes = (vanilla_index.len() * encoder.dim() * std::mem::size_of::<Real>()) as u64;
        }
        Strategy::Fast => {
            let src = build_fast_source(sentence, encoder, indices, c);
            let (target, _) = map_tokens_to_target(&src, alignments, states);
            bytes = target.key_vector_bytes();
            fast_store = target;
            stores.fast = Some(&fast_store);
        }
        Strategy::Faster | Strategy::FasterNoCache => {
            let (store, _) =
                build_faster_cluster_store_with_index(sentence, encoder, clusters, target_index);
            bytes = store.key_vector_bytes();
            faster_store = store;
            stores.faster = Some(&faster_store);
        }
        Strategy::FastWithFasterSource => {
            let (store, _) =
                build_faster_cluster_store_with_index(sentence, encoder, clusters, target_index);
            let flat = store.flatten()?;
            bytes = flat.key_vector_bytes();
            flat_store = flat;
            stores.cluster_mapped_flat = Some(&flat_store);
        }
    }
    let (_, traces) = translate(sentence, decode_cfg, &stores, encoder, out_embs)?;
    Ok((traces, bytes))
}

/// Structural checks over a finished report. Returns human-readable
/// violations; an empty vector means the report is clean.
pub fn check_report(report: &BenchReport, check_ordering: bool) -> Vec<String> {
    let mut violations = Vec::new();
    for row in &report.rows {
        // dist ops must equal the candidate-set size exactly for the three
        // headline strategies (vanilla rows are built on the brute path)
        if matches!(row.strategy.as_str(), "vanilla" | "fast" | "faster")
            && row.dist_ops != row.store_entries
        {
            violations.push(format!(
                "{}: dist_ops {} != candidate set {}",
                row.strategy, row.dist_ops, row.store_entries
            ));
        }
    }
    // faster's per-step ops depend only on n, never on c
    for a in &report.rows {
        if a.strategy != "faster" {
            continue;
        }
        for b in &report.rows {
            if b.strategy == "faster"
                && a.store_tokens == b.store_tokens
                && a.n == b.n
                && a.dist_ops != b.dist_ops
            {
                violations.push(format!(
                    "faster dist_ops varies with c: {} (c={}) vs {} (c={})",
                    a.dist_ops, a.c, b.dist_ops, b.c
                ));
            }
        }
    }
    if check_ordering {
        let find = |s: &str, tokens: usize, n: usize, c: usize| {
            report
                .rows
                .iter()
                .find(|r| r.strategy == s && r.store_tokens == tokens && r.n == n && r.c == c)
        };
        for row in &report.rows {
            if row.strategy != "vanilla" {
                continue;
            }
            let (tokens, n, c) = (row.store_tokens, row.n, row.c);
            if let (Some(fast), Some(faster)) =
                (find("fast", tokens, n, c), find("faster", tokens, n, c))
            {
                if !(row.sentence_ns_median > fast.sentence_ns_median
                    && fast.sentence_ns_median > faster.sentence_ns_median)
                {
                    violations.push(format!(
                        "speed ordering violated at tokens={tokens} n={n} c={c}: \
                         vanilla {} fast {} faster {}",
                        row.sentence_ns_median, fast.sentence_ns_median, faster.sentence_ns_median
                    ));
                }
            }
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::usage(format!("unknown format {other:?}"))),
        }
    }
}

pub fn report_to_csv(report: &BenchReport) -> String {
    let mut out = String::from("strategy,n,c,k,d,store_bytes,dist_ops,ns_mean,ns_p95\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.strategy, r.n, r.c, r.k, r.d, r.store_bytes, r.dist_ops, r.ns_mean, r.ns_p95
        ));
    }
    out
}

pub fn emit_report(report: &BenchReport, format: ReportFormat, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        use std::io::Write;
        match format {
            ReportFormat::Csv => w.write_all(report_to_csv(report).as_bytes())?,
            ReportFormat::Json => {
                let json = serde_json::to_string_pretty(report)
                    .map_err(|e| Error::format(format!("serialize report: {e}")))?;
                w.write_all(json.as_bytes())?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    })
}
