//! The `qalign` command-line entry point: model generation, calibration,
//! W8A8 quantization, corpus alignment, metric evaluation, activation
//! debugging, benchmarking, and configuration search.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors (message on
//! stderr), 2 on usage errors. All output files are written atomically.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::align::{
    agreement_rate, best_matches_with, similarity_matrix, Mapping, ProbabilityMode,
};
use crate::bench::{compare_reports, measure_latency, BenchReport};
use crate::encoder::{
    collect_calibration, encode_corpus, normalize_text, synthetic_corpus, tokenize_batch,
    activation_snapshot, Corpus, CorpusEntry, EncoderModel, ModelConfig, TokenizerConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{
    classification_metrics, edrm, mean_average_precision, spearman_rho, EdrmRecord, RankedQuery,
};
use crate::quant::{
    quantize_model, ActivationPolicy, CalibrationSet, QuantizeOptions, SmoothingConfig,
    WeightScheme,
};
use crate::search::{run_search, BaselinePoint, Budget, Constraints, SearchSpace, TrialResult};

#[derive(Parser)]
#[command(
    name = "qalign",
    version,
    about = "INT8 embedding-alignment engine",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print progress diagnostics on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded full-precision encoder model file.
    GenModel(GenModelArgs),
    /// Collect per-layer activation/weight statistics from a corpus.
    Calibrate(CalibrateArgs),
    /// Convert a full-precision model to W8A8 with smoothing.
    Quantize(QuantizeArgs),
    /// Align two corpora and write the scored mappings.
    Align(AlignArgs),
    /// Evaluate predictions against gold files.
    Eval(EvalArgs),
    /// Dump per-token, per-channel absolute activation magnitudes as CSV.
    DebugActivations(DebugActivationsArgs),
    /// Time the encoding pipeline and emit a benchmark report.
    Bench(BenchArgs),
    /// Search quantization configurations under quality/latency gates.
    Search(SearchArgs),
}

#[derive(Args)]
struct GenModelArgs {
    /// Output model file.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    vocab: u32,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 512)]
    max_length: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Embedding channels boosted into activation outliers.
    #[arg(long, default_value_t = 0)]
    outlier_channels: usize,
    /// Gain applied to the boosted channels.
    #[arg(long, default_value_t = 40.0)]
    outlier_gain: f32,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    /// Output stats JSON.
    #[arg(short, long)]
    out: PathBuf,
    /// Skip text normalization.
    #[arg(long)]
    raw: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Static,
    Dynamic,
}

impl From<PolicyArg> for ActivationPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Static => ActivationPolicy::Static,
            PolicyArg::Dynamic => ActivationPolicy::Dynamic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    PerChannel,
    PerTensor,
}

impl From<SchemeArg> for WeightScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::PerChannel => WeightScheme::PerOutputChannel,
            SchemeArg::PerTensor => WeightScheme::PerTensor,
        }
    }
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Calibration stats JSON produced by `calibrate`.
    #[arg(long)]
    stats: PathBuf,
    /// Smoothing factor.
    #[arg(long, default_value_t = 0.5)]
    alpha: f32,
    #[arg(long, value_enum, default_value_t = PolicyArg::Static)]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value_t = SchemeArg::PerChannel)]
    weight_scheme: SchemeArg,
    /// Output quantized model file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbArg {
    Auto,
    Affine,
    Minmax,
}

impl From<ProbArg> for ProbabilityMode {
    fn from(p: ProbArg) -> Self {
        match p {
            ProbArg::Auto => ProbabilityMode::Auto,
            ProbArg::Affine => ProbabilityMode::Affine,
            ProbArg::Minmax => ProbabilityMode::MinMaxPopulation,
        }
    }
}

#[derive(Args)]
struct AlignArgs {
    /// Source corpus TSV (`id<TAB>text`).
    #[arg(long)]
    left: PathBuf,
    /// Target corpus TSV.
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    /// Output mappings TSV.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ProbArg::Auto)]
    prob_mode: ProbArg,
    /// Skip text normalization.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(subcommand)]
    task: EvalTask,
}

#[derive(Subcommand)]
enum EvalTask {
    /// Mean relative closeness on a bounded grading scale.
    Edrm {
        /// Predictions TSV (`id<TAB>value`).
        #[arg(long)]
        pred: PathBuf,
        /// Gold TSV (`id<TAB>value`).
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        scale_min: f64,
        #[arg(long, default_value_t = 5.0)]
        scale_max: f64,
    },
    /// Non-interpolated mean average precision.
    Map {
        /// Ranked candidates TSV (`query_id<TAB>candidate_id<TAB>rank`).
        #[arg(long)]
        ranked: PathBuf,
        /// Relevance TSV (`query_id<TAB>relevant_id`).
        #[arg(long)]
        qrels: PathBuf,
    },
    /// Spearman rank correlation with a t-approximation p-value.
    Spearman {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Binary classification metrics.
    Cls {
        /// Predictions TSV (`id<TAB>0|1`).
        #[arg(long)]
        pred: PathBuf,
        /// Gold TSV (`id<TAB>0|1`).
        #[arg(long)]
        gold: PathBuf,
    },
}

#[derive(Args)]
struct DebugActivationsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output CSV (`token,channel,abs_value`).
    #[arg(short, long)]
    out: PathBuf,
    /// Layer whose input activations are dumped (0 = embedding output).
    #[arg(long, default_value_t = 0)]
    layer: usize,
    /// Channels whose max |activation| exceeds this are flagged on stderr.
    #[arg(long, default_value_t = 2.5)]
    flag_threshold: f32,
    /// Skip text normalization.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 30)]
    repetitions: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    /// Reported energy input in kWh (from external telemetry).
    #[arg(long, default_value_t = 0.0)]
    energy_kwh: f64,
    /// Report label; defaults to the model file stem.
    #[arg(long)]
    label: Option<String>,
    /// Output report JSON.
    #[arg(short, long)]
    out: PathBuf,
    /// Compare against a previously written report.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Skip text normalization.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct SearchArgs {
    /// Full-precision model to search over.
    #[arg(long)]
    model: PathBuf,
    /// Output search report JSON.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Held-out corpus sizes when no corpora are given.
    #[arg(long, default_value_t = 40)]
    texts: usize,
    #[arg(long, default_value_t = 20)]
    targets: usize,
    /// Padded length used for the search corpora.
    #[arg(long, default_value_t = 16)]
    max_length: usize,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    /// Maximum trials to evaluate; 0 evaluates the whole grid.
    #[arg(long, default_value_t = 0)]
    budget: usize,
    #[arg(long, default_value_t = 0.0001)]
    max_quality_degradation: f64,
    #[arg(long, default_value_t = 0.20)]
    min_latency_improvement: f64,
    /// Optional source corpus; synthetic when omitted.
    #[arg(long)]
    left: Option<PathBuf>,
    /// Optional target corpus; synthetic when omitted.
    #[arg(long)]
    right: Option<PathBuf>,
}

/// Parses `argv` and runs the selected subcommand, translating every
/// outcome into a process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let verbose = cli.verbose;
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if verbose {
                let mut source = std::error::Error::source(&e);
                while let Some(s) = source {
                    eprintln!("  caused by: {s}");
                    source = s.source();
                }
            }
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenModel(args) => cmd_gen_model(args, cli.verbose),
        Command::Calibrate(args) => cmd_calibrate(args, cli.verbose),
        Command::Quantize(args) => cmd_quantize(args, cli.verbose),
        Command::Align(args) => cmd_align(args, cli.verbose),
        Command::Eval(args) => cmd_eval(args),
        Command::DebugActivations(args) => cmd_debug_activations(args),
        Command::Bench(args) => cmd_bench(args, cli.verbose),
        Command::Search(args) => cmd_search(args, cli.verbose),
    }
}

fn load_corpus(path: &Path, raw: bool) -> Result<Corpus> {
    let corpus = Corpus::read_tsv(path)?;
    Ok(if raw {
        corpus
    } else {
        corpus.map_texts(normalize_text)
    })
}

fn cmd_gen_model(args: GenModelArgs, verbose: bool) -> Result<()> {
    let model = EncoderModel::generate(&ModelConfig {
        vocab_size: args.vocab,
        dim: args.dim,
        layers: args.layers,
        max_length: args.max_length,
        seed: args.seed,
        outlier_channels: args.outlier_channels,
        outlier_gain: args.outlier_gain,
    })?;
    model.save(&args.out)?;
    if verbose {
        eprintln!(
            "model: vocab={} dim={} layers={} seed={}",
            args.vocab, args.dim, args.layers, args.seed
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs, verbose: bool) -> Result<()> {
    let model = EncoderModel::load(&args.model)?;
    let corpus = load_corpus(&args.corpus, args.raw)?;
    let stats = collect_calibration(&model, &corpus, &model.tokenizer, args.batch_size)?;
    stats.save(&args.out)?;
    if verbose {
        eprintln!("calibrated {} layers on {} texts", stats.layers.len(), corpus.len());
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_quantize(args: QuantizeArgs, verbose: bool) -> Result<()> {
    let model = EncoderModel::load(&args.model)?;
    let stats = CalibrationSet::load(&args.stats)?;
    let opts = QuantizeOptions {
        smoothing: SmoothingConfig::new(args.alpha, crate::quant::SCALE_EPS)?,
        policy: args.policy.into(),
        weight_scheme: args.weight_scheme.into(),
    };
    let quantized = quantize_model(&model, &opts, &stats)?;
    quantized.save(&args.out)?;
    if verbose {
        let fp = crate::quant::serialized_size(&model)?;
        let q = crate::quant::serialized_size(&quantized)?;
        eprintln!("size: {fp} -> {q} bytes ({:.1}%)", 100.0 * q as f64 / fp as f64);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn write_mappings_tsv(
    path: &Path,
    mappings: &[Mapping],
    left: &Corpus,
    right: &Corpus,
) -> Result<()> {
    let mut out = String::new();
    for m in mappings {
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}",
            left.entries()[m.left_index].id,
            right.entries()[m.right_index].id,
            m.score,
            m.probability
        )
        .expect("string write");
    }
    crate::write_atomic(path, out.as_bytes())
}

fn cmd_align(args: AlignArgs, verbose: bool) -> Result<()> {
    let model = EncoderModel::load(&args.model)?;
    let left = load_corpus(&args.left, args.raw)?;
    let right = load_corpus(&args.right, args.raw)?;
    let cfg = model.tokenizer.clone();
    let e_left = encode_corpus(&model, &left, &cfg, args.batch_size)?;
    let e_right = encode_corpus(&model, &right, &cfg, args.batch_size)?;
    let sim = similarity_matrix(&e_left, &e_right)?;
    if verbose && !sim.degenerate_pairs().is_empty() {
        eprintln!("{} degenerate (zero-norm) pairs", sim.degenerate_pairs().len());
    }
    let mappings = best_matches_with(&sim, args.prob_mode.into())?;
    write_mappings_tsv(&args.out, &mappings, &left, &right)?;
    println!("wrote {} mappings to {}", mappings.len(), args.out.display());
    Ok(())
}

/// Reads `id<TAB>value` rows into pairs, preserving file order.
fn read_value_tsv(path: &Path) -> Result<Vec<(String, f64)>> {
    let content = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut pairs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, value) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: name.clone(),
            line: i + 1,
            msg: "expected `id<TAB>value`".into(),
        })?;
        let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
            path: name.clone(),
            line: i + 1,
            msg: format!("`{value}` is not a number"),
        })?;
        pairs.push((id.to_string(), value));
    }
    Ok(pairs)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    match args.task {
        EvalTask::Edrm {
            pred,
            gold,
            scale_min,
            scale_max,
        } => {
            let preds = lookup_map_owned(read_value_tsv(&pred)?);
            let golds = read_value_tsv(&gold)?;
            let mut records = Vec::with_capacity(golds.len());
            for (id, reference) in &golds {
                let hypothesis = *preds.get(id.as_str()).ok_or_else(|| {
                    Error::domain("eval edrm", format!("no prediction for id `{id}`"))
                })?;
                records.push(EdrmRecord::with_scale(
                    hypothesis, *reference, scale_min, scale_max,
                )?);
            }
            println!("{:.4}", edrm(&records)?);
        }
        EvalTask::Map { ranked, qrels } => {
            let queries = read_ranked_queries(&ranked, &qrels)?;
            println!("{:.4}", mean_average_precision(&queries)?);
        }
        EvalTask::Spearman { pred, gold } => {
            let preds = lookup_map_owned(read_value_tsv(&pred)?);
            let golds = read_value_tsv(&gold)?;
            let mut x = Vec::with_capacity(golds.len());
            let mut y = Vec::with_capacity(golds.len());
            for (id, g) in &golds {
                let p = *preds.get(id.as_str()).ok_or_else(|| {
                    Error::domain("eval spearman", format!("no prediction for id `{id}`"))
                })?;
                x.push(p);
                y.push(*g);
            }
            let r = spearman_rho(&x, &y)?;
            println!("{:.4}\t{:.4e}", r.rho, r.p_value);
        }
        EvalTask::Cls { pred, gold } => {
            let to_bool = |(id, v): &(String, f64), path: &Path| -> Result<bool> {
                if *v == 0.0 {
                    Ok(false)
                } else if *v == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::domain(
                        "eval cls",
                        format!("{}: id `{id}` has label {v}, expected 0 or 1", path.display()),
                    ))
                }
            };
            let preds_raw = read_value_tsv(&pred)?;
            let preds: std::collections::HashMap<String, bool> = preds_raw
                .iter()
                .map(|p| Ok((p.0.clone(), to_bool(p, &pred)?)))
                .collect::<Result<_>>()?;
            let golds = read_value_tsv(&gold)?;
            let mut pv = Vec::with_capacity(golds.len());
            let mut gv = Vec::with_capacity(golds.len());
            for pair in &golds {
                let p = *preds.get(&pair.0).ok_or_else(|| {
                    Error::domain("eval cls", format!("no prediction for id `{}`", pair.0))
                })?;
                pv.push(p);
                gv.push(to_bool(pair, &gold)?);
            }
            let r = classification_metrics(&pv, &gv)?;
            println!(
                "accuracy={:.4} precision={:.4} recall={:.4} f1={:.4}",
                r.accuracy, r.precision, r.recall, r.f1
            );
        }
    }
    Ok(())
}

fn lookup_map_owned(pairs: Vec<(String, f64)>) -> std::collections::HashMap<String, f64> {
    pairs.into_iter().collect()
}

fn read_ranked_queries(ranked_path: &Path, qrels_path: &Path) -> Result<Vec<RankedQuery>> {
    let content = std::fs::read_to_string(ranked_path)?;
    let name = ranked_path.display().to_string();
    // query -> (candidate, rank)
    let mut ranked: std::collections::BTreeMap<String, Vec<(String, i64)>> = Default::default();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                path: name.clone(),
                line: i + 1,
                msg: "expected `query_id<TAB>candidate_id<TAB>rank`".into(),
            });
        }
        let rank: i64 = parts[2].trim().parse().map_err(|_| Error::Parse {
            path: name.clone(),
            line: i + 1,
            msg: format!("`{}` is not a rank", parts[2]),
        })?;
        ranked
            .entry(parts[0].to_string())
            .or_default()
            .push((parts[1].to_string(), rank));
    }

    let content = std::fs::read_to_string(qrels_path)?;
    let name = qrels_path.display().to_string();
    let mut relevant: std::collections::BTreeMap<String, Vec<String>> = Default::default();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (qid, rid) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: name.clone(),
            line: i + 1,
            msg: "expected `query_id<TAB>relevant_id`".into(),
        })?;
        relevant
            .entry(qid.to_string())
            .or_default()
            .push(rid.to_string());
    }

    let mut queries = Vec::with_capacity(relevant.len());
    for (qid, rel) in relevant {
        let mut cands = ranked.remove(&qid).ok_or_else(|| {
            Error::domain("eval map", format!("no ranked candidates for query `{qid}`"))
        })?;
        cands.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
        queries.push(RankedQuery::new(
            qid,
            cands.into_iter().map(|(c, _)| c).collect(),
            rel,
        )?);
    }
    Ok(queries)
}

fn cmd_debug_activations(args: DebugActivationsArgs) -> Result<()> {
    let model = EncoderModel::load(&args.model)?;
    let corpus = load_corpus(&args.corpus, args.raw)?;
    if corpus.is_empty() {
        return Err(Error::Empty {
            op: "debug-activations",
        });
    }
    let texts: Vec<&str> = corpus.entries().iter().map(|e| e.text.as_str()).collect();
    let batch = tokenize_batch(&texts, &model.tokenizer)?;
    let acts = activation_snapshot(&model, &batch, args.layer)?;

    let mut csv = String::from("token,channel,abs_value\n");
    for token in 0..acts.rows() {
        for channel in 0..acts.cols() {
            writeln!(csv, "{token},{channel},{:.6}", acts.get(token, channel).abs())
                .expect("string write");
        }
    }
    crate::write_atomic(&args.out, csv.as_bytes())?;

    let mut flagged = Vec::new();
    for channel in 0..acts.cols() {
        let max = acts.col_abs_max(channel);
        if max > args.flag_threshold {
            flagged.push((channel, max));
        }
    }
    if flagged.is_empty() {
        eprintln!("no channel exceeds |value| {}", args.flag_threshold);
    } else {
        for (channel, max) in &flagged {
            eprintln!(
                "channel {channel}: max |value| {max:.4} exceeds {}",
                args.flag_threshold
            );
        }
    }
    println!(
        "wrote {} rows to {}",
        acts.rows() * acts.cols(),
        args.out.display()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs, verbose: bool) -> Result<()> {
    let model = EncoderModel::load(&args.model)?;
    let corpus = load_corpus(&args.corpus, args.raw)?;
    let cfg = model.tokenizer.clone();
    let latency = measure_latency(
        || encode_corpus(&model, &corpus, &cfg, args.batch_size).map(|_| ()),
        args.repetitions,
        args.warmup,
    )?;
    let size_mb = std::fs::metadata(&args.model)?.len() as f64 / 1e6;
    let label = args.label.unwrap_or_else(|| {
        args.model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    let report = BenchReport::new(label, latency, size_mb, args.energy_kwh)?;
    report.save(&args.out)?;
    if verbose {
        eprintln!(
            "avg={:.4}ms max={:.4}ms min={:.4}ms",
            latency.avg_ms, latency.max_ms, latency.min_ms
        );
    }
    if let Some(baseline_path) = args.baseline {
        let baseline = BenchReport::load(&baseline_path)?;
        let t = compare_reports(&baseline, &report)?;
        println!(
            "speedup={:.2}x size_reduction={:.1}% energy_reduction={:.1}%",
            t.speedup,
            t.size_reduction * 100.0,
            t.energy_reduction * 100.0
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_search(args: SearchArgs, verbose: bool) -> Result<()> {
    let model = EncoderModel::load(&args.model)?;
    if model.is_quantized() {
        return Err(Error::domain(
            "search",
            "search starts from a full-precision model",
        ));
    }
    let left = match &args.left {
        Some(p) => load_corpus(p, false)?,
        None => synthetic_corpus(args.texts, args.seed, "src"),
    };
    let right = match &args.right {
        Some(p) => load_corpus(p, false)?,
        None => synthetic_corpus(args.targets, args.seed.wrapping_add(1), "tgt"),
    };
    let cfg = TokenizerConfig::new(
        args.max_length.min(model.tokenizer.max_length),
        model.vocab_size(),
        model.tokenizer.seed,
    )?;

    // calibration over both sides, ids disambiguated by prefix
    let mut combined = Vec::with_capacity(left.len() + right.len());
    for e in left.entries() {
        combined.push(CorpusEntry {
            id: format!("left:{}", e.id),
            text: e.text.clone(),
        });
    }
    for e in right.entries() {
        combined.push(CorpusEntry {
            id: format!("right:{}", e.id),
            text: e.text.clone(),
        });
    }
    let calib_corpus = Corpus::from_entries(combined)?;
    let calib = collect_calibration(&model, &calib_corpus, &cfg, args.batch_size)?;

    let workload = |m: &EncoderModel| -> Result<Vec<Mapping>> {
        let e_l = encode_corpus(m, &left, &cfg, args.batch_size)?;
        let e_r = encode_corpus(m, &right, &cfg, args.batch_size)?;
        best_matches_with(&similarity_matrix(&e_l, &e_r)?, ProbabilityMode::Auto)
    };

    let fp_mappings = workload(&model)?;
    let fp_latency = measure_latency(
        || workload(&model).map(|_| ()),
        args.repetitions,
        args.warmup,
    )?;
    let baseline = BaselinePoint {
        quality: 1.0,
        latency_ms: fp_latency.avg_ms,
    };
    if verbose {
        eprintln!("baseline latency {:.4} ms", baseline.latency_ms);
    }

    let constraints = Constraints {
        max_quality_degradation: args.max_quality_degradation,
        min_latency_improvement: args.min_latency_improvement,
    };
    let budget = if args.budget == 0 {
        Budget::Exhaustive
    } else {
        Budget::Sampled {
            max_trials: args.budget,
            seed: args.seed,
        }
    };

    let report = run_search(
        &SearchSpace::grid(),
        &baseline,
        |config| {
            let opts = QuantizeOptions {
                smoothing: SmoothingConfig::new(config.alpha, crate::quant::SCALE_EPS)?,
                policy: config.policy,
                weight_scheme: config.weight_scheme,
            };
            let quantized = quantize_model(&model, &opts, &calib)?;
            let mappings = workload(&quantized)?;
            let quality = agreement_rate(&fp_mappings, &mappings)?;
            let latency = measure_latency(
                || workload(&quantized).map(|_| ()),
                args.repetitions,
                args.warmup,
            )?;
            if verbose {
                eprintln!(
                    "trial {config}: quality {quality:.4}, latency {:.4} ms",
                    latency.avg_ms
                );
            }
            TrialResult::new(*config, quality, latency.avg_ms)
        },
        &constraints,
        budget,
    )?;
    report.save(&args.out)?;

    match (&report.selection, &report.infeasibility) {
        (Some(sel), _) => println!(
            "selected {} (quality {:.4}, latency {:.4} ms)",
            sel.config, sel.quality, sel.latency_ms
        ),
        (None, Some(inf)) => println!(
            "infeasible: best quality {:.4} (needs {}), best latency {:.4} ms (needs {})",
            inf.quality_nearest.trial.quality,
            inf.quality_nearest.constraint,
            inf.latency_nearest.trial.latency_ms,
            inf.latency_nearest.constraint
        ),
        (None, None) => unreachable!("search reports selection or infeasibility"),
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
