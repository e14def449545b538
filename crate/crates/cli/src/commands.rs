//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use hknn::bench::{check_report, emit_report, run_bench, BenchConfig, ReportFormat};
use hknn::clusterstore::{build_type_clusters, TypeClusterMap};
use hknn::datastore::{
    build_fast_source, build_faster_cluster_store_with_index, build_per_type_indices,
    build_vanilla, map_tokens_to_target, save_bundle, save_store, AnyStore, IndexParams,
    PerTypeIndices, StoreFlavor, TargetClusterIndex, TrainingStates, VanillaIndex, VanillaStore,
};
use hknn::decode::{translate as decode_sentence, DecodeConfig, DecodeStores, StepTrace, Strategy};
use hknn::io::atomic_write;
use hknn::synth::{gen_corpus, ParallelCorpus, SynthEncoder, TokenId, VocabSpec};
use hknn::{Error, Real, Result};

use crate::config::{parse_usize_list, ConfigFile};
use crate::{AblateArgs, BenchArgs, BuildArgs, ClusterArgs, GenArgs, RunError, TranslateArgs};

fn resolved_vocab_spec(
    cfg: &ConfigFile,
    src_vocab: Option<usize>,
    tgt_vocab: Option<usize>,
    noise: Option<f64>,
    zipf: Option<f64>,
) -> Result<VocabSpec> {
    VocabSpec::with_identity_dictionary(
        cfg.resolve(src_vocab, "src-vocab", 100)?,
        cfg.resolve(tgt_vocab, "tgt-vocab", 100)?,
        cfg.resolve(noise, "noise", 0.0)?,
        cfg.resolve(zipf, "zipf", 1.0)?,
    )
}

pub fn gen(args: GenArgs, cfg: &ConfigFile) -> Result<()> {
    let spec = resolved_vocab_spec(cfg, args.src_vocab, args.tgt_vocab, args.noise, args.zipf)?;
    let pairs = cfg.resolve(args.pairs, "pairs", 1000)?;
    let max_len = cfg.resolve(args.max_len, "max-len", 12)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let corpus = gen_corpus(&spec, pairs, max_len, seed)?;
    corpus.write_to(&args.out)?;
    println!(
        "wrote {} pairs ({} source / {} target tokens) to {}",
        corpus.len(),
        corpus.source_token_count(),
        corpus.target_token_count(),
        args.out.display()
    );
    Ok(())
}

/// Encoder + encoded training states, the shared front half of most
/// commands.
struct Pipeline {
    corpus: ParallelCorpus,
    encoder: SynthEncoder<Real>,
    states: TrainingStates<Real>,
    target_vocab: usize,
}

impl Pipeline {
    fn load(corpus_path: &Path, dim: usize, seed: u64) -> Result<Self> {
        let corpus = ParallelCorpus::read_from(corpus_path)?;
        if corpus.is_empty() {
            return Err(Error::format("empty corpus"));
        }
        let encoder = SynthEncoder::new(dim, seed);
        let states = TrainingStates::from_corpus(&corpus, &encoder);
        let target_vocab = corpus
            .pairs
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .max()
            .unwrap_or(1) as usize;
        Ok(Pipeline {
            corpus,
            encoder,
            states,
            target_vocab,
        })
    }

    fn index_params(
        &self,
        threshold: usize,
        nlist: usize,
        nprobe: usize,
        seed: u64,
    ) -> IndexParams {
        IndexParams {
            threshold,
            nlist,
            nprobe,
            seed,
        }
    }
}

pub fn build(args: BuildArgs, cfg: &ConfigFile) -> Result<()> {
    let dim = cfg.resolve(args.dim, "dim", 64)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let pipeline = Pipeline::load(&args.corpus, dim, seed)?;

    let flavor = args.flavor.as_str();
    match flavor {
        "vanilla" => {
            let mut store = build_vanilla(&pipeline.corpus, &pipeline.encoder);
            if args.pq || cfg.resolve(None::<bool>, "pq", false)? {
                let pq_m = cfg.resolve(args.pq_m, "pq-m", hknn::quantize::DESK_NUM_BLOCKS)?;
                let pq_ksub = cfg.resolve(args.pq_ksub, "pq-ksub", hknn::quantize::DEFAULT_KSUB)?;
                store = store.quantize(pq_m, pq_ksub, seed)?;
            }
            let entries = store.len();
            save_store(&args.out, &AnyStore::Vanilla(store))?;
            println!(
                "wrote vanilla store ({entries} entries) to {}",
                args.out.display()
            );
        }
        "fast" | "faster" => {
            if args.pq {
                return Err(Error::usage("--pq applies to the vanilla flavor only"));
            }
            let test_path = args.test.as_ref().ok_or_else(|| {
                Error::usage(format!("--test is required for the {flavor} flavor"))
            })?;
            let test = ParallelCorpus::read_from(test_path)?;
            let stores: Vec<AnyStore<Real>> = if flavor == "fast" {
                let c = cfg.resolve(args.c, "c", 16)?;
                let params = pipeline.index_params(
                    cfg.resolve(
                        args.freq_threshold,
                        "freq-threshold",
                        hknn::annindex::DESK_FREQ_THRESHOLD,
                    )?,
                    cfg.resolve(args.nlist, "nlist", 32)?,
                    cfg.resolve(args.nprobe, "nprobe", 8)?,
                    seed,
                );
                let indices = build_per_type_indices(&pipeline.states, &params);
                test.pairs
                    .iter()
                    .map(|(sentence, _)| {
                        let src = build_fast_source(sentence, &pipeline.encoder, &indices, c);
                        let (target, _) = map_tokens_to_target(
                            &src,
                            &pipeline.corpus.alignments,
                            &pipeline.states,
                        );
                        AnyStore::Fast(target)
                    })
                    .collect()
            } else {
                let m = cfg.resolve(args.m, "m", hknn::clusterstore::DESK_CLUSTER_DIVISOR)?;
                let clusters = build_type_clusters(
                    &pipeline.states.src_vecs,
                    &pipeline.states.src_types,
                    m,
                    seed,
                );
                let index = TargetClusterIndex::precompute(
                    &clusters,
                    &pipeline.corpus.alignments,
                    &pipeline.states,
                    true,
                );
                test.pairs
                    .iter()
                    .map(|(sentence, _)| {
                        let (store, _) = build_faster_cluster_store_with_index(
                            sentence,
                            &pipeline.encoder,
                            &clusters,
                            &index,
                        );
                        AnyStore::Faster(store)
                    })
                    .collect()
            };
            let tag = if flavor == "fast" {
                StoreFlavor::Fast
            } else {
                StoreFlavor::Faster
            };
            save_bundle(&args.out, tag, &stores)?;
            println!(
                "wrote {} {flavor} store(s) to {}",
                stores.len(),
                args.out.display()
            );
        }
        other => {
            return Err(Error::usage(format!(
                "unknown flavor {other:?} (expected vanilla, fast or faster)"
            )))
        }
    }
    Ok(())
}

pub fn cluster(args: ClusterArgs, cfg: &ConfigFile) -> Result<()> {
    let dim = cfg.resolve(args.dim, "dim", 64)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let m = cfg.resolve(args.m, "m", hknn::clusterstore::DESK_CLUSTER_DIVISOR)?;
    let pipeline = Pipeline::load(&args.corpus, dim, seed)?;
    let map = build_type_clusters(
        &pipeline.states.src_vecs,
        &pipeline.states.src_types,
        m,
        seed,
    );
    map.save(&args.out)?;
    println!(
        "wrote {} clusters over {} types to {}",
        map.total_clusters(),
        map.type_count(),
        args.out.display()
    );
    Ok(())
}

/// Everything a strategy needs at decode time.
struct StrategyWorld {
    vanilla: Option<VanillaIndex<Real>>,
    indices: Option<PerTypeIndices<Real>>,
    clusters: Option<TypeClusterMap<Real>>,
    target_index: Option<TargetClusterIndex<Real>>,
    out_embs: Vec<Vec<Real>>,
    c: usize,
}

impl StrategyWorld {
    #[allow(clippy::too_many_arguments)]
    fn prepare(
        pipeline: &Pipeline,
        strategies: &[Strategy],
        params: &IndexParams,
        m: usize,
        c: usize,
        cluster_file: Option<&Path>,
        seed: u64,
        pq: Option<(usize, usize)>,
    ) -> Result<Self> {
        let needs = |s: Strategy| strategies.contains(&s);
        let vanilla = needs(Strategy::Vanilla)
            .then(|| {
                let store = VanillaStore::from_states(&pipeline.states);
                let store = match pq {
                    Some((num_blocks, ksub)) => store.quantize(num_blocks, ksub, seed)?,
                    None => store,
                };
                VanillaIndex::build(&store, params)
            })
            .transpose()?;
        let indices =
            needs(Strategy::Fast).then(|| build_per_type_indices(&pipeline.states, params));
        let needs_clusters = needs(Strategy::Faster)
            || needs(Strategy::FasterNoCache)
            || needs(Strategy::FastWithFasterSource);
        let clusters = if needs_clusters {
            Some(match cluster_file {
                Some(path) => {
                    let map = TypeClusterMap::load(path)?;
                    if map.dim != pipeline.encoder.dim() {
                        return Err(Error::format(format!(
                            "cluster store dimension {} does not match --dim {}",
                            map.dim,
                            pipeline.encoder.dim()
                        )));
                    }
                    map
                }
                None => build_type_clusters(
                    &pipeline.states.src_vecs,
                    &pipeline.states.src_types,
                    m,
                    seed,
                ),
            })
        } else {
            None
        };
        let keep_vecs = needs(Strategy::FasterNoCache) || needs(Strategy::FastWithFasterSource);
        let target_index = clusters.as_ref().map(|map| {
            TargetClusterIndex::precompute(
                map,
                &pipeline.corpus.alignments,
                &pipeline.states,
                keep_vecs,
            )
        });
        Ok(StrategyWorld {
            vanilla,
            indices,
            clusters,
            target_index,
            out_embs: pipeline.encoder.output_embeddings(pipeline.target_vocab),
            c,
        })
    }

    /// Builds per-sentence stores and decodes one sentence.
    fn decode(
        &self,
        pipeline: &Pipeline,
        sentence: &[TokenId],
        cfg: &DecodeConfig,
    ) -> Result<(Vec<TokenId>, Vec<StepTrace>, u64)> {
        let mut stores = DecodeStores::new();
        let fast_store;
        let faster_store;
        let flat_store;
        let store_bytes;
        match cfg.strategy {
            Strategy::Vanilla => {
                let idx = self.vanilla.as_ref().expect("prepared for vanilla");
                store_bytes =
                    (idx.len() * pipeline.encoder.dim() * std::mem::size_of::<Real>()) as u64;
                stores.vanilla = Some(idx);
            }
            Strategy::Fast => {
                let indices = self.indices.as_ref().expect("prepared for fast");
                let src = build_fast_source(sentence, &pipeline.encoder, indices, self.c);
                let (target, _) =
                    map_tokens_to_target(&src, &pipeline.corpus.alignments, &pipeline.states);
                store_bytes = target.key_vector_bytes();
                fast_store = target;
                stores.fast = Some(&fast_store);
            }
            Strategy::Faster | Strategy::FasterNoCache => {
                let (store, _) = build_faster_cluster_store_with_index(
                    sentence,
                    &pipeline.encoder,
                    self.clusters.as_ref().expect("prepared for faster"),
                    self.target_index.as_ref().expect("prepared for faster"),
                );
                store_bytes = store.key_vector_bytes();
                faster_store = store;
                stores.faster = Some(&faster_store);
            }
            Strategy::FastWithFasterSource => {
                let (store, _) = build_faster_cluster_store_with_index(
                    sentence,
                    &pipeline.encoder,
                    self.clusters.as_ref().expect("prepared for ablation"),
                    self.target_index.as_ref().expect("prepared for ablation"),
                );
                let flat = store.flatten()?;
                store_bytes = flat.key_vector_bytes();
                flat_store = flat;
                stores.cluster_mapped_flat = Some(&flat_store);
            }
        }
        let (hyp, traces) =
            decode_sentence(sentence, cfg, &stores, &pipeline.encoder, &self.out_embs)?;
        Ok((hyp, traces, store_bytes))
    }
}

fn token_accuracy(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> (usize, usize) {
    let mut matched = 0usize;
    let mut total = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        total += r.len();
        matched += h.iter().zip(r).filter(|(a, b)| a == b).count();
    }
    (matched, total)
}

/// Per-sentence decode outcome: hypothesis, traces, store bytes, wall ns.
type SentenceOutcome = (Vec<TokenId>, Vec<StepTrace>, u64, u64);

#[allow(clippy::too_many_arguments)]
fn decode_test_set(
    pipeline: &Pipeline,
    world: &StrategyWorld,
    test: &ParallelCorpus,
    strategy: Strategy,
    base: &DecodeConfig,
    max_len: Option<usize>,
    parallel: bool,
) -> Result<Vec<SentenceOutcome>> {
    let decode_one = |(sentence, _): &(Vec<TokenId>, Vec<TokenId>)| {
        let cfg = DecodeConfig {
            strategy,
            max_len: max_len.unwrap_or(sentence.len() + 4),
            ..base.clone()
        };
        let started = Instant::now();
        let (hyp, traces, bytes) = world.decode(pipeline, sentence, &cfg)?;
        Ok((hyp, traces, bytes, started.elapsed().as_nanos() as u64))
    };
    if parallel {
        test.pairs.par_iter().map(decode_one).collect()
    } else {
        test.pairs.iter().map(decode_one).collect()
    }
}

pub fn translate(args: TranslateArgs, cfg: &ConfigFile) -> Result<()> {
    let dim = cfg.resolve(args.dim, "dim", 64)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let strategy: Strategy = cfg
        .resolve_opt(args.strategy.clone(), "strategy")?
        .unwrap_or_else(|| "faster".to_string())
        .parse()?;
    let pipeline = Pipeline::load(&args.corpus, dim, seed)?;
    let test = ParallelCorpus::read_from(&args.test)?;

    let params = pipeline.index_params(
        cfg.resolve(
            args.freq_threshold,
            "freq-threshold",
            hknn::annindex::DESK_FREQ_THRESHOLD,
        )?,
        cfg.resolve(args.nlist, "nlist", 32)?,
        cfg.resolve(args.nprobe, "nprobe", 8)?,
        seed,
    );
    let pq = (args.pq || cfg.resolve(None::<bool>, "pq", false)?)
        .then(|| -> Result<(usize, usize)> {
            Ok((
                cfg.resolve(args.pq_m, "pq-m", hknn::quantize::DESK_NUM_BLOCKS)?,
                cfg.resolve(args.pq_ksub, "pq-ksub", hknn::quantize::DEFAULT_KSUB)?,
            ))
        })
        .transpose()?;
    let world = StrategyWorld::prepare(
        &pipeline,
        &[strategy],
        &params,
        cfg.resolve(args.m, "m", hknn::clusterstore::DESK_CLUSTER_DIVISOR)?,
        cfg.resolve(args.c, "c", 16)?,
        args.clusters.as_deref(),
        seed,
        pq,
    )?;
    let base = DecodeConfig {
        k: cfg.resolve(args.k, "k", 16)?,
        temperature: cfg.resolve(args.temp, "temp", 1.0)?,
        lambda: cfg.resolve(args.lambda, "lambda", 0.5)?,
        strategy,
        max_len: 1, // per-sentence override below
        beam: cfg.resolve(args.beam, "beam", 1)?,
        ..DecodeConfig::default()
    };
    let max_len = cfg.resolve_opt(args.max_len, "max-len")?;
    let started = Instant::now();
    let results = decode_test_set(&pipeline, &world, &test, strategy, &base, max_len, true)?;
    let elapsed = started.elapsed();

    let hyps: Vec<Vec<TokenId>> = results.iter().map(|(h, _, _, _)| h.clone()).collect();
    let out_path = args
        .out
        .clone()
        .or(cfg.resolve_opt(None::<PathBuf>, "out")?)
        .unwrap_or_else(|| PathBuf::from("hyps.txt"));
    atomic_write(&out_path, |w| {
        for hyp in &hyps {
            let line = hyp
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(w, "{line}")?;
        }
        Ok(())
    })?;

    let refs: Vec<Vec<TokenId>> = test.pairs.iter().map(|(_, r)| r.clone()).collect();
    let (matched, total) = token_accuracy(&hyps, &refs);
    println!(
        "strategy {strategy}: token_accuracy {:.2}% ({matched}/{total} tokens, {} sentences, {:.1} ms total)",
        100.0 * matched as f64 / total.max(1) as f64,
        test.len(),
        elapsed.as_secs_f64() * 1e3,
    );
    println!("hypotheses written to {}", out_path.display());
    Ok(())
}

pub fn bench(args: BenchArgs, cfg: &ConfigFile) -> std::result::Result<(), RunError> {
    let defaults = BenchConfig::default();
    let strategies = match cfg.resolve_opt(args.strategies.clone(), "strategy")? {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => defaults.strategies.clone(),
    };
    let bench_cfg = BenchConfig {
        store_tokens: parse_usize_list(&cfg.resolve(args.sizes, "sizes", "100000".to_string())?)?,
        c_values: parse_usize_list(&cfg.resolve(
            args.c_sweep,
            "c-sweep",
            "8,64,512".to_string(),
        )?)?,
        n_values: parse_usize_list(&cfg.resolve(args.n_sweep, "n-sweep", "12".to_string())?)?,
        k: cfg.resolve(args.k, "k", defaults.k)?,
        d: cfg.resolve(args.dim, "dim", defaults.d)?,
        reps: cfg.resolve(args.reps, "reps", defaults.reps)?,
        warmup: cfg.resolve(args.warmup, "warmup", defaults.warmup)?,
        seed: cfg.resolve(args.seed, "seed", defaults.seed)?,
        m: cfg.resolve(args.m, "m", defaults.m)?,
        source_vocab: cfg.resolve(args.src_vocab, "src-vocab", defaults.source_vocab)?,
        target_vocab: cfg.resolve(args.tgt_vocab, "tgt-vocab", defaults.target_vocab)?,
        max_len: cfg.resolve(args.max_len, "max-len", defaults.max_len)?,
        sentences: cfg.resolve(args.sentences, "sentences", defaults.sentences)?,
        freq_threshold: cfg.resolve(
            args.freq_threshold,
            "freq-threshold",
            defaults.freq_threshold,
        )?,
        nlist: cfg.resolve(args.nlist, "nlist", defaults.nlist)?,
        nprobe: cfg.resolve(args.nprobe, "nprobe", defaults.nprobe)?,
        lambda: cfg.resolve(args.lambda, "lambda", defaults.lambda)?,
        temperature: cfg.resolve(args.temp, "temp", defaults.temperature)?,
        strategies,
        check_ordering: args.check_ordering
            || cfg.resolve(None::<bool>, "check-ordering", false)?,
        ..defaults
    };

    let report = run_bench(&bench_cfg)?;
    let format: ReportFormat = cfg
        .resolve(args.format, "format", "csv".to_string())?
        .parse()?;
    if let Some(out) = &args.out {
        emit_report(&report, format, out)?;
        println!(
            "report ({} rows) written to {}",
            report.rows.len(),
            out.display()
        );
    } else {
        match format {
            ReportFormat::Csv => print!("{}", hknn::bench::report_to_csv(&report)),
            ReportFormat::Json => println!(
                "{}",
                serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Format(format!("serialize report: {e}")))?
            ),
        }
    }
    for note in &report.notes {
        eprintln!("note: {note}");
    }

    let violations = check_report(&report, bench_cfg.check_ordering);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        return Err(RunError::Violations(violations.len()));
    }
    Ok(())
}

pub fn ablate(args: AblateArgs, cfg: &ConfigFile) -> Result<()> {
    let dim = cfg.resolve(args.dim, "dim", 64)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let pipeline = Pipeline::load(&args.corpus, dim, seed)?;
    let test = ParallelCorpus::read_from(&args.test)?;
    let params = pipeline.index_params(
        cfg.resolve(
            args.freq_threshold,
            "freq-threshold",
            hknn::annindex::DESK_FREQ_THRESHOLD,
        )?,
        cfg.resolve(args.nlist, "nlist", 32)?,
        cfg.resolve(args.nprobe, "nprobe", 8)?,
        seed,
    );
    let world = StrategyWorld::prepare(
        &pipeline,
        &Strategy::ALL,
        &params,
        cfg.resolve(args.m, "m", hknn::clusterstore::DESK_CLUSTER_DIVISOR)?,
        cfg.resolve(args.c, "c", 16)?,
        None,
        seed,
        None,
    )?;
    let base = DecodeConfig {
        k: cfg.resolve(args.k, "k", 16)?,
        temperature: cfg.resolve(args.temp, "temp", 1.0)?,
        lambda: cfg.resolve(args.lambda, "lambda", 0.5)?,
        strategy: Strategy::Vanilla,
        max_len: 1,
        ..DecodeConfig::default()
    };
    let max_len = cfg.resolve_opt(args.max_len, "max-len")?;
    let refs: Vec<Vec<TokenId>> = test.pairs.iter().map(|(_, r)| r.clone()).collect();

    struct Row {
        strategy: &'static str,
        accuracy: f64,
        sentence_ns_median: f64,
        dist_ops_per_step: f64,
        store_bytes: f64,
    }
    let mut rows = Vec::new();
    for strategy in Strategy::ALL {
        // timing rows run serially so per-sentence wall clock is clean
        let results = decode_test_set(&pipeline, &world, &test, strategy, &base, max_len, false)?;
        let hyps: Vec<Vec<TokenId>> = results.iter().map(|(h, _, _, _)| h.clone()).collect();
        let (matched, total) = token_accuracy(&hyps, &refs);
        let mut sentence_ns: Vec<f64> = results.iter().map(|(_, _, _, ns)| *ns as f64).collect();
        sentence_ns.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let steps: usize = results.iter().map(|(_, t, _, _)| t.len()).sum();
        let ops: u64 = results
            .iter()
            .flat_map(|(_, t, _, _)| t.iter().map(|s| s.dist_ops as u64))
            .sum();
        let bytes: f64 =
            results.iter().map(|(_, _, b, _)| *b as f64).sum::<f64>() / results.len().max(1) as f64;
        rows.push(Row {
            strategy: strategy.as_str(),
            accuracy: 100.0 * matched as f64 / total.max(1) as f64,
            sentence_ns_median: sentence_ns[sentence_ns.len() / 2],
            dist_ops_per_step: ops as f64 / steps.max(1) as f64,
            store_bytes: bytes,
        });
    }

    let header = format!(
        "{:<26} {:>9} {:>16} {:>14} {:>12}",
        "strategy", "accuracy", "ns/sentence", "dist_ops/step", "store_bytes"
    );
    let mut table = header.clone() + "\n";
    for r in &rows {
        table += &format!(
            "{:<26} {:>8.2}% {:>16.0} {:>14.1} {:>12.0}\n",
            r.strategy, r.accuracy, r.sentence_ns_median, r.dist_ops_per_step, r.store_bytes
        );
    }
    print!("{table}");

    if let Some(out) = &args.out {
        let format = cfg.resolve(args.format, "format", "csv".to_string())?;
        atomic_write(out, |w| {
            match format.as_str() {
                "csv" => {
                    writeln!(
                        w,
                        "strategy,accuracy,sentence_ns_median,dist_ops_per_step,store_bytes"
                    )?;
                    for r in &rows {
                        writeln!(
                            w,
                            "{},{},{},{},{}",
                            r.strategy,
                            r.accuracy,
                            r.sentence_ns_median,
                            r.dist_ops_per_step,
                            r.store_bytes
                        )?;
                    }
                }
                "json" => {
                    let items: Vec<serde_json::Value> = rows
                        .iter()
                        .map(|r| {
                            serde_json::json!({
                                "strategy": r.strategy,
                                "accuracy": r.accuracy,
                                "sentence_ns_median": r.sentence_ns_median,
                                "dist_ops_per_step": r.dist_ops_per_step,
                                "store_bytes": r.store_bytes,
                            })
                        })
                        .collect();
                    let text = serde_json::to_string_pretty(&items)
                        .map_err(|e| Error::Format(format!("serialize table: {e}")))?;
                    writeln!(w, "{text}")?;
                }
                other => return Err(Error::usage(format!("unknown format {other:?}"))),
            }
            Ok(())
        })?;
        println!("table written to {}", out.display());
    }
    Ok(())
}
