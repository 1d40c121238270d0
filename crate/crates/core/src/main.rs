use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mulco::corpus::{
    compute_stats, diversity_ratio, load_corpus_with_manifest, load_manifest, Corpus, Mention, Sentence,
};
use mulco::eval::{score, EvalReport};
use mulco::scope_codec::{
    aggregate, coverage, decode_hard, encode, BioesVariant, DecodedMention, Labeling, Scope, DEFAULT_MAX_LEN,
};
use mulco::tagger::{
    evaluate, extract, load_params, load_vectors, save_params, train_split, train_with_validation, HeadLayout,
    ModelParams, TrainConfig, TrainReport,
};
use mulco::toy;

/// Scope-based nested named entity recognition.
#[derive(Parser)]
#[command(name = "mulco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics: nesting, depth, shared boundaries, categories.
    Stats {
        corpus: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Checks every line of a corpus and reports crossing mentions.
    Validate {
        corpus: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Writes one labeling line per sentence and scope.
    Encode {
        corpus: PathBuf,
        /// Comma-separated scopes such as `B-min,E2-max`, or `all` for the canonical four.
        #[arg(long, default_value = "all")]
        scopes: String,
        /// Mentions longer than this are not encoded.
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Reads labeling lines back into a corpus, merging scopes per sentence.
    Decode {
        labelings: PathBuf,
        /// Corpus supplying texts for labeling lines without one.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Which gold mentions a set of scopes can represent.
    Coverage {
        corpus: PathBuf,
        #[arg(long, default_value = "all")]
        scopes: String,
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Trains the four-scope tagger.
    Train(TrainArgs),
    /// Tags a corpus with a trained model; gold mentions in the input are ignored.
    Predict {
        #[arg(long)]
        model: PathBuf,
        corpus: PathBuf,
        /// Per-token vectors for models trained with external embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Micro and per-category precision, recall and F1.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value = "mulco")]
        name: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Trains and evaluates a flat BIOES tagger on the same encoder.
    Baseline {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[command(flatten)]
        train: TrainArgs,
        /// Corpus to evaluate on after training.
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Generates the synthetic nested corpus.
    GenToy {
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ManifestArg {
    /// JSON file `{"categories": [...]}` fixing the category set and order.
    #[arg(long = "categories")]
    categories: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Innermost,
    Outermost,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus; without it the tail of the training corpus is held out.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[command(flatten)]
    manifest: ManifestArg,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overlay: ConfigOverlay,
    /// Per-token vectors aligned with the training corpus.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Per-token vectors aligned with the validation corpus.
    #[arg(long)]
    valid_embeddings: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Training report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ConfigOverlay {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_encoder: Option<f64>,
    #[arg(long)]
    lr_heads: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Longest mention the length heads can emit.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Feed embeddings straight to the heads.
    #[arg(long)]
    no_recurrent: bool,
}

impl ConfigOverlay {
    fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { c.$f = v; } )*};
        }
        set!(
            seed,
            epochs,
            batch_size,
            lr_encoder,
            lr_heads,
            dropout,
            weight_decay,
            clip_norm
        );
        set!(embed_dim, hidden, layers, max_len, validation_fraction);
        if self.no_recurrent {
            c.use_recurrent_encoder = false;
        }
        c
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Stats {
            corpus,
            manifest,
            format,
        } => cmd_stats(&corpus, &manifest, format),
        Command::Validate { corpus, manifest } => cmd_validate(&corpus, &manifest),
        Command::Encode {
            corpus,
            scopes,
            max_len,
            out,
        } => cmd_encode(&corpus, &scopes, max_len, out.as_deref()),
        Command::Decode { labelings, corpus, out } => cmd_decode(&labelings, corpus.as_deref(), out.as_deref()),
        Command::Coverage {
            corpus,
            scopes,
            max_len,
            format,
        } => cmd_coverage(&corpus, &scopes, max_len, format),
        Command::Train(args) => cmd_train(&args),
        Command::Predict {
            model,
            corpus,
            embeddings,
            out,
        } => cmd_predict(&model, &corpus, embeddings.as_deref(), out.as_deref()),
        Command::Eval {
            gold,
            pred,
            name,
            format,
        } => cmd_eval(&gold, &pred, &name, format),
        Command::Baseline {
            variant,
            train,
            test,
            format,
        } => cmd_baseline(variant, &train, &test, format),
        Command::GenToy { size, seed, out } => cmd_gen_toy(size, seed, out.as_deref()),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_corpus(path: &Path, manifest: Option<&ManifestArg>) -> Result<Corpus> {
    let cats = match manifest.and_then(|m| m.categories.as_deref()) {
        Some(p) => Some(load_manifest(p)?),
        None => None,
    };
    load_corpus_with_manifest(path, cats.as_deref()).with_context(|| format!("reading {}", path.display()))
}

fn cmd_stats(path: &Path, manifest: &ManifestArg, format: Format) -> Result<()> {
    let corpus = read_corpus(path, Some(manifest))?;
    let stats = compute_stats(&corpus);
    let (first, last) = diversity_ratio(&corpus);
    let mut out = output(None)?;
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&stats)?)?,
        Format::Table => {
            write!(out, "{}", stats.to_table())?;
            if stats.nested_mentions > 0 {
                let pct = |n: usize| 100.0 * n as f64 / stats.nested_mentions as f64;
                writeln!(out, "shared first token: {:.2}% of nested mentions", pct(first))?;
                writeln!(out, "shared last token:  {:.2}% of nested mentions", pct(last))?;
            }
        }
    }
    Ok(())
}

fn cmd_validate(path: &Path, manifest: &ManifestArg) -> Result<()> {
    let corpus = read_corpus(path, Some(manifest))?;
    let mentions: usize = corpus.sentences().iter().map(|s| s.mentions().len()).sum();
    let crossing: usize = corpus.sentences().iter().map(|s| s.crossing_pairs().len()).sum();
    println!(
        "ok: {} sentences, {} mentions, {} categories, {} crossing pairs",
        corpus.len(),
        mentions,
        corpus.categories().len(),
        crossing
    );
    Ok(())
}

/// One line of a labeling file.
#[derive(Serialize, Deserialize)]
struct LabelingLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentence: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    scope: Scope,
    anchors: Vec<String>,
    lengths: Vec<usize>,
}

const NA: &str = "NA";

fn cmd_encode(path: &Path, scopes: &str, max_len: usize, out: Option<&Path>) -> Result<()> {
    let scopes = Scope::parse_list(scopes)?;
    let corpus = read_corpus(path, None)?;
    let mut w = output(out)?;
    let mut excluded = 0;
    for (i, s) in corpus.sentences().iter().enumerate() {
        for &scope in &scopes {
            let enc = encode(s, scope, max_len);
            excluded += enc.excluded.len();
            let line = LabelingLine {
                sentence: Some(i),
                text: Some(s.text()),
                scope,
                anchors: enc
                    .labeling
                    .anchors()
                    .iter()
                    .map(|a| a.clone().unwrap_or_else(|| NA.into()))
                    .collect(),
                lengths: enc.labeling.lengths().to_vec(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} mention encodings skipped: longer than {max_len}");
    }
    w.flush()?;
    Ok(())
}

fn cmd_decode(path: &Path, corpus: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let texts: Option<Vec<String>> = match corpus {
        Some(p) => Some(read_corpus(p, None)?.sentences().iter().map(Sentence::text).collect()),
        None => None,
    };
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut groups: BTreeMap<usize, (String, Vec<Vec<DecodedMention>>)> = BTreeMap::new();
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LabelingLine =
            serde_json::from_str(line).with_context(|| format!("line {lineno}: malformed labeling"))?;
        let sentence = parsed.sentence.unwrap_or(idx);
        let text = match (&parsed.text, &texts) {
            (Some(t), _) => t.clone(),
            (None, Some(ts)) => ts
                .get(sentence)
                .with_context(|| format!("line {lineno}: sentence {sentence} not in corpus"))?
                .clone(),
            (None, None) => bail!("line {lineno}: no text; pass --corpus"),
        };
        let len = text.chars().count();
        let anchors = parsed.anchors.into_iter().map(|a| (a != NA).then_some(a)).collect();
        let labeling = Labeling::new(anchors, parsed.lengths).with_context(|| format!("line {lineno}"))?;
        if labeling.len() != len {
            bail!("line {lineno}: {} labels for a text of {len} tokens", labeling.len());
        }
        let decoded = decode_hard(&labeling, parsed.scope, len);
        if decoded.dropped > 0 {
            log::warn!("line {lineno}: {} anchors point outside the sentence", decoded.dropped);
        }
        let entry = groups.entry(sentence).or_insert_with(|| (text.clone(), Vec::new()));
        if entry.0 != text {
            bail!("line {lineno}: text differs from earlier lines of sentence {sentence}");
        }
        entry.1.push(
            decoded
                .mentions
                .into_iter()
                .map(|mention| DecodedMention {
                    mention,
                    confidence: 1.0,
                    source: parsed.scope,
                })
                .collect(),
        );
    }
    let mut sentences = Vec::with_capacity(groups.len());
    for (i, (text, decoded)) in groups {
        let s = Sentence::new(&text, aggregate(&decoded)).with_context(|| format!("sentence {i}"))?;
        sentences.push(s);
    }
    let mut w = output(out)?;
    Corpus::new(sentences).write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct UncoveredMention {
    sentence: usize,
    #[serde(flatten)]
    mention: Mention,
}

#[derive(Serialize)]
struct CoverageReport {
    covered: usize,
    uncovered: usize,
    uncovered_mentions: Vec<UncoveredMention>,
    per_scope: BTreeMap<String, usize>,
}

fn cmd_coverage(path: &Path, scopes: &str, max_len: usize, format: Format) -> Result<()> {
    let scopes = Scope::parse_list(scopes)?;
    let corpus = read_corpus(path, None)?;
    let mut report = CoverageReport {
        covered: 0,
        uncovered: 0,
        uncovered_mentions: Vec::new(),
        per_scope: scopes.iter().map(|s| (s.to_string(), 0)).collect(),
    };
    for (i, s) in corpus.sentences().iter().enumerate() {
        let cov = coverage(s, &scopes, max_len);
        report.covered += cov.covered.len();
        report.uncovered += cov.uncovered.len();
        report.uncovered_mentions.extend(
            cov.uncovered
                .into_iter()
                .map(|mention| UncoveredMention { sentence: i, mention }),
        );
        for (scope, n) in cov.per_scope {
            *report.per_scope.entry(scope.to_string()).or_default() += n;
        }
    }
    let mut out = output(None)?;
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
        Format::Table => {
            let total = report.covered + report.uncovered;
            let pct = if total == 0 {
                100.0
            } else {
                100.0 * report.covered as f64 / total as f64
            };
            writeln!(out, "covered {} of {} mentions ({pct:.2}%)", report.covered, total)?;
            for (scope, n) in &report.per_scope {
                writeln!(out, "  {scope:<10}{n:>8}")?;
            }
            for u in &report.uncovered_mentions {
                writeln!(out, "uncovered: sentence {} {}", u.sentence, u.mention)?;
            }
        }
    }
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let base = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{}: invalid config", p.display()))?
        }
        None => TrainConfig::default(),
    };
    let config = args.overlay.apply(base);
    config.validate()?;
    Ok(config)
}

fn fit(args: &TrainArgs, layout: HeadLayout) -> Result<(ModelParams<f32>, TrainReport, TrainConfig)> {
    let config = train_config(args)?;
    let corpus = read_corpus(&args.corpus, Some(&args.manifest))?;
    let vectors = match &args.embeddings {
        Some(p) => Some(load_vectors(p, None)?),
        None => None,
    };
    let (params, report) = match &args.valid {
        Some(vp) => {
            let cats = corpus.categories().to_vec();
            let valid =
                load_corpus_with_manifest(vp, Some(&cats)).with_context(|| format!("reading {}", vp.display()))?;
            let valid_vectors = match (&vectors, &args.valid_embeddings) {
                (Some(_), Some(p)) => Some(load_vectors(p, None)?),
                (Some(_), None) => bail!("--embeddings with --valid needs --valid-embeddings"),
                (None, _) => None,
            };
            let pair = vectors.as_deref().zip(valid_vectors.as_deref());
            train_with_validation::<f32>(&corpus, &valid, &config, layout, pair)?
        }
        None => train_split::<f32>(&corpus, &config, layout, vectors.as_deref())?,
    };
    log::info!(
        "best epoch {} of {} ({:.1}s)",
        report.best_epoch,
        config.epochs,
        report.wall_time.as_secs_f64()
    );
    if let Some(p) = &args.out {
        save_params(&params, Some(&config), p)?;
    }
    if let Some(p) = &args.report {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok((params, report, config))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    if args.out.is_none() {
        bail!("train needs --out for the checkpoint");
    }
    let (_, report, _) = fit(args, HeadLayout::Scopes)?;
    if args.report.is_none() {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}

/// Per-sentence extraction spread over threads; output order follows input order.
fn extract_all(
    params: &ModelParams<f32>,
    corpus: &Corpus,
    vectors: Option<&[Vec<Vec<f32>>]>,
) -> Result<Vec<Vec<Mention>>> {
    let n = corpus.len();
    let threads = std::thread::available_parallelism()
        .map_or(1, |t| t.get())
        .min(n.max(1));
    let chunk = n.div_ceil(threads).max(1);
    let indices: Vec<usize> = (0..n).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|ids| {
                scope.spawn(move || {
                    ids.iter()
                        .map(|&i| extract(params, &corpus.sentences()[i], vectors.map(|v| &v[i][..])))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for h in handles {
            out.extend(h.join().expect("prediction thread panicked")?);
        }
        Ok(out)
    })
}

fn cmd_predict(model: &Path, path: &Path, embeddings: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let params = load_params(model)
        .with_context(|| format!("loading {}", model.display()))?
        .params;
    let corpus = read_corpus(path, None)?;
    let vectors = match embeddings {
        Some(p) => {
            let v = load_vectors(p, Some(params.arch.embed_dim))?;
            if v.len() != corpus.len() {
                bail!("{} vector lines for {} sentences", v.len(), corpus.len());
            }
            Some(v)
        }
        None => None,
    };
    let predicted = extract_all(&params, &corpus, vectors.as_deref())?;
    let sentences = corpus
        .sentences()
        .iter()
        .zip(predicted)
        .map(|(s, ms)| Sentence::new(&s.text(), ms))
        .collect::<Result<Vec<_>, _>>()?;
    let result = Corpus::with_categories(sentences, params.categories.clone())?;
    let mut w = output(out)?;
    result.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn print_report(report: &EvalReport, name: &str, format: Format) -> Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(report)?),
        Format::Table => print!("{}", report.to_table(name)),
    }
    Ok(())
}

fn cmd_eval(gold: &Path, pred: &Path, name: &str, format: Format) -> Result<()> {
    let g = read_corpus(gold, None)?;
    let p = read_corpus(pred, None)?;
    for (i, (a, b)) in g.sentences().iter().zip(p.sentences()).enumerate() {
        if a.tokens() != b.tokens() {
            bail!("sentence {}: prediction text differs from gold", i + 1);
        }
    }
    let mentions = |c: &Corpus| c.sentences().iter().map(|s| s.mentions().to_vec()).collect::<Vec<_>>();
    let report = score(&mentions(&g), &mentions(&p))?;
    print_report(&report, name, format)
}

fn cmd_baseline(variant: VariantArg, args: &TrainArgs, test: &Path, format: Format) -> Result<()> {
    let variant = match variant {
        VariantArg::Innermost => BioesVariant::Innermost,
        VariantArg::Outermost => BioesVariant::Outermost,
    };
    if args.embeddings.is_some() {
        bail!("baseline does not take external embeddings");
    }
    let (params, _, _) = fit(args, HeadLayout::Bioes { variant })?;
    let test = load_corpus_with_manifest(test, Some(&params.categories))
        .with_context(|| format!("reading {}", test.display()))?;
    let report = evaluate(&params, &test, None)?;
    print_report(&report, &variant.to_string(), format)
}

fn cmd_gen_toy(size: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let corpus = toy::generate(size, seed);
    let mut w = output(out)?;
    corpus.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}
