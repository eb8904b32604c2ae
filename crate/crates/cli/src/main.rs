mod args;
mod config;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::Parser;
use log::{info, warn};
use serde::Serialize;

use ufw_core::classifier::{
    load_model, read_training_file, save_model, train_with_report, write_training_jsonl,
};
use ufw_core::document::{write_document, ShardReader};
use ufw_core::filter::{self, KeepManifest, ScoreOptions, Scorer};
use ufw_core::fingerprint::file_sha256_hex;
use ufw_core::normalize::{normalize_str, normalize_text};
use ufw_core::pipeline::{self, Pipeline, PipelineConfig};
use ufw_core::seedpool::{Polarity, PoolStore, SeedCategory};
use ufw_core::tokenize::{load_tokenizer, Tokenizer};
use ufw_core::verify::{self, EvalScores, MetricGrouping, ReportFormat, RoundingMode, ShardTokens};

use args::*;
use config::FileConfig;

enum Outcome {
    Success,
    Partial,
}

struct AppContext {
    config: FileConfig,
    workers: usize,
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> Result<Outcome> {
    let config = FileConfig::load(cli.global.config.as_deref())?;
    let level = cli
        .global
        .log_level
        .clone()
        .or_else(|| config.log_level.clone())
        .or_else(|| std::env::var("UFW_LOG").ok())
        .unwrap_or_else(|| "warn".to_owned());
    init_logging(&level);
    let workers = cli
        .global
        .workers
        .or(config.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    let seed = cli.global.seed.or(config.seed);
    let ctx = AppContext {
        config,
        workers,
        seed,
    };
    match cli.command {
        Command::Normalize(a) => normalize(&ctx, &a),
        Command::Tokenize(a) => tokenize(&ctx, &a),
        Command::Classifier(ClassifierCommand::Train(a)) => classifier_train(&ctx, &a),
        Command::Classifier(ClassifierCommand::Predict(a)) => classifier_predict(&ctx, &a),
        Command::Seedpool(c) => seedpool(&ctx, c),
        Command::Filter(c) => filter_cmd(&ctx, c),
        Command::Verify(c) => verify_cmd(&ctx, c),
        Command::Pipeline(c) => pipeline_cmd(c),
    }
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    Ok(match path {
        Some(p) => Box::new(BufReader::new(
            File::open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        None => Box::new(BufReader::new(io::stdin())),
    })
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn tokenizer(ctx: &AppContext) -> Result<Tokenizer> {
    load_tokenizer(&ctx.config.tokenizer).context("loading tokenizer")
}

/// Visits each JSONL document of `input`, logging and skipping malformed lines.
fn for_each_document(
    input: Box<dyn BufRead>,
    name: &str,
    mut f: impl FnMut(ufw_core::document::Document) -> Result<()>,
) -> Result<u64> {
    let mut malformed = 0;
    for record in ShardReader::new(input, name) {
        match record? {
            Ok(doc) => f(doc)?,
            Err(bad) => {
                warn!("{name}:{}: skipping malformed record: {}", bad.line, bad.reason);
                malformed += 1;
            }
        }
    }
    Ok(malformed)
}

fn input_name(path: Option<&Path>) -> String {
    path.map_or_else(|| "stdin".to_owned(), |p| p.display().to_string())
}

fn normalize(ctx: &AppContext, a: &IoArgs) -> Result<Outcome> {
    let policy = &ctx.config.normalize;
    let mut input = open_input(a.input.as_deref())?;
    let mut out = open_output(a.output.as_deref())?;
    if a.jsonl {
        let malformed = for_each_document(input, &input_name(a.input.as_deref()), |mut doc| {
            doc.text = normalize_str(&doc.text, policy);
            Ok(write_document(&mut out, &doc)?)
        })?;
        out.flush()?;
        return Ok(if malformed > 0 {
            Outcome::Partial
        } else {
            Outcome::Success
        });
    }
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    out.write_all(normalize_text(&raw, policy)?.as_bytes())?;
    out.flush()?;
    Ok(Outcome::Success)
}

fn tokenize(ctx: &AppContext, a: &TokenizeArgs) -> Result<Outcome> {
    let tokenizer = tokenizer(ctx)?;
    let policy = &ctx.config.normalize;
    let prepare = |text: &str| {
        if a.normalize {
            normalize_str(text, policy)
        } else {
            text.to_owned()
        }
    };
    let mut input = open_input(a.io.input.as_deref())?;
    let mut out = open_output(a.io.output.as_deref())?;
    let emit = |id: Option<&str>, text: &str, out: &mut Box<dyn Write>| -> Result<()> {
        let tokens = tokenizer.tokenize(text);
        let value = match (id, a.count) {
            (Some(id), true) => serde_json::json!({"id": id, "count": tokens.len()}),
            (Some(id), false) => serde_json::json!({"id": id, "tokens": tokens}),
            (None, true) => serde_json::json!(tokens.len()),
            (None, false) => serde_json::json!(tokens),
        };
        serde_json::to_writer(&mut *out, &value)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    let outcome = if a.io.jsonl {
        let malformed = for_each_document(input, &input_name(a.io.input.as_deref()), |doc| {
            emit(Some(&doc.id), &prepare(&doc.text), &mut out)
        })?;
        if malformed > 0 {
            Outcome::Partial
        } else {
            Outcome::Success
        }
    } else {
        let mut raw = String::new();
        input
            .read_to_string(&mut raw)
            .context("input is not valid UTF-8")?;
        emit(None, &prepare(&raw), &mut out)?;
        Outcome::Success
    };
    out.flush()?;
    Ok(outcome)
}

fn classifier_train(ctx: &AppContext, a: &TrainArgs) -> Result<Outcome> {
    let mut config = ctx.config.classifier.clone();
    config.dim = a.dim.unwrap_or(config.dim);
    config.lr = a.lr.unwrap_or(config.lr);
    config.epochs = a.epochs.unwrap_or(config.epochs);
    config.word_ngrams = a.word_ngrams.unwrap_or(config.word_ngrams);
    config.min_count = a.min_count.unwrap_or(config.min_count);
    config.bucket = a.bucket.unwrap_or(config.bucket);
    config.seed = ctx.seed.unwrap_or(config.seed);
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let mut examples = read_training_file(BufReader::new(file), &config)?;
    if !a.no_normalize {
        for ex in &mut examples {
            ex.text = normalize_str(&ex.text, &ctx.config.normalize);
        }
    }
    let tokenizer = tokenizer(ctx)?;
    let (model, report) = train_with_report(&examples, &config, &tokenizer)?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        info!("epoch {}: mean loss {loss:.6}", epoch + 1);
    }
    if report.skipped_examples > 0 {
        warn!(
            "{} examples had no features and were skipped",
            report.skipped_examples
        );
    }
    save_model(&model, &a.output)?;
    info!(
        "wrote {} ({} vocabulary entries)",
        a.output.display(),
        model.vocab().len()
    );
    Ok(Outcome::Success)
}

fn classifier_predict(ctx: &AppContext, a: &PredictArgs) -> Result<Outcome> {
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let scorer = Scorer::new(model, tokenizer(ctx)?, ctx.config.normalize.clone());
    let input = open_input(a.io.input.as_deref())?;
    let mut out = open_output(a.io.output.as_deref())?;
    let labels = scorer.model().config().labels.clone();
    let malformed = for_each_document(input, &input_name(a.io.input.as_deref()), |doc| {
        let normalized = normalize_str(&doc.text, scorer.policy());
        let p = scorer.model().predict(&normalized, scorer.tokenizer());
        let value = serde_json::json!({
            "id": doc.id,
            "label": labels[p.label],
            "probability": p.probability,
            "score": p.distribution[ufw_core::classifier::ClassifierConfig::POSITIVE],
        });
        serde_json::to_writer(&mut out, &value)?;
        out.write_all(b"\n")?;
        Ok(())
    })?;
    out.flush()?;
    Ok(if malformed > 0 {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}

fn polarity(p: PolarityArg) -> Polarity {
    match p {
        PolarityArg::Positive => Polarity::Positive,
        PolarityArg::Negative => Polarity::Negative,
    }
}

fn seedpool(ctx: &AppContext, command: SeedpoolCommand) -> Result<Outcome> {
    let mut stdout = io::stdout().lock();
    match command {
        SeedpoolCommand::Add {
            pool,
            name,
            polarity: p,
            source,
            input,
        } => {
            let store = PoolStore::open(&pool)?;
            let docs = ufw_core::document::read_documents(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let next =
                store
                    .load_latest()?
                    .with_category(SeedCategory::new(name, polarity(p), source, docs))?;
            store.save(&next)?;
            write_json(&mut stdout, &serde_json::json!({"version": next.version}))?;
        }
        SeedpoolCommand::Mark {
            pool,
            name,
            polarity: p,
            factor,
        } => {
            let store = PoolStore::open(&pool)?;
            let next = store
                .load_latest()?
                .mark_underrepresented(&name, p.map(polarity), factor)?;
            store.save(&next)?;
            write_json(&mut stdout, &serde_json::json!({"version": next.version}))?;
        }
        SeedpoolCommand::Assemble {
            pool,
            version,
            target,
            balance,
            output,
            no_normalize,
        } => {
            let store = PoolStore::open(&pool)?;
            let manifest = match version {
                Some(v) => store.load(v)?,
                None => store.load_latest()?,
            };
            let mut examples = manifest.assemble_training_set(target, balance, ctx.seed.unwrap_or(0))?;
            if !no_normalize {
                for ex in &mut examples {
                    ex.text = normalize_str(&ex.text, &ctx.config.normalize);
                }
            }
            let out = BufWriter::new(File::create(&output)?);
            write_training_jsonl(&examples, &ctx.config.classifier, out)?;
            info!(
                "wrote {} examples from pool version {}",
                examples.len(),
                manifest.version
            );
        }
        SeedpoolCommand::Show { pool, version } => {
            let store = PoolStore::open(&pool)?;
            let manifest = match version {
                Some(v) => store.load(v)?,
                None => store.load_latest()?,
            };
            let lineage = if manifest.version == 0 {
                vec![0]
            } else {
                store.lineage(manifest.version)?
            };
            write_json(
                &mut stdout,
                &serde_json::json!({"manifest": manifest, "lineage": lineage}),
            )?;
        }
    }
    Ok(Outcome::Success)
}

/// Expands glob patterns; plain paths pass through so missing files surface
/// as unreadable shards.
fn expand_shards(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        if p.contains(['*', '?', '[']) {
            let mut matched: Vec<PathBuf> = glob::glob(p)
                .with_context(|| format!("bad pattern {p:?}"))?
                .collect::<Result<_, _>>()?;
            if matched.is_empty() {
                warn!("pattern {p:?} matched no files");
            }
            matched.sort();
            out.extend(matched);
        } else {
            out.push(PathBuf::from(p));
        }
    }
    Ok(out)
}

fn filter_cmd(ctx: &AppContext, command: FilterCommand) -> Result<Outcome> {
    match command {
        FilterCommand::Score {
            model,
            out,
            threshold,
            shards,
        } => {
            let model = load_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let scorer = Scorer::new(model, tokenizer(ctx)?, ctx.config.normalize.clone());
            let shards = expand_shards(&shards)?;
            let opts = ScoreOptions {
                out_dir: out,
                workers: ctx.workers,
                length_edges: ctx.config.filter.length_edges.clone(),
            };
            let threshold = threshold.unwrap_or(ctx.config.filter.threshold);
            let run = filter::score_corpus(&scorer, &shards, threshold, &opts)?;
            for f in &run.failed {
                eprintln!("shard {} failed: {}", f.shard, f.error);
            }
            write_json(&mut io::stdout().lock(), &run)?;
            Ok(if run.partial() {
                Outcome::Partial
            } else {
                Outcome::Success
            })
        }
        FilterCommand::Intersect { output, manifests } => {
            let loaded = manifests
                .iter()
                .map(|p| {
                    let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                    KeepManifest::read(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let joined = filter::intersect(&loaded)?;
            joined.write(open_output(output.as_deref())?)?;
            Ok(Outcome::Success)
        }
        FilterCommand::Stats {
            edges,
            no_normalize,
            output,
            shards,
        } => {
            let shards = expand_shards(&shards)?;
            let edges = edges.unwrap_or_else(|| ctx.config.filter.length_edges.clone());
            let policy = (!no_normalize).then_some(&ctx.config.normalize);
            let run = filter::token_length_histogram(&shards, &tokenizer(ctx)?, &edges, policy, ctx.workers)?;
            for f in &run.failed {
                eprintln!("shard {} failed: {}", f.shard, f.error);
            }
            let value = serde_json::json!({
                "report": run.report(),
                "malformed": run.malformed,
                "failed": run.failed,
            });
            write_json(&mut open_output(output.as_deref())?, &value)?;
            Ok(if run.failed.is_empty() {
                Outcome::Success
            } else {
                Outcome::Partial
            })
        }
    }
}

fn read_shard_tokens(path: &Path) -> Result<Vec<ShardTokens>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn verify_cmd(ctx: &AppContext, command: VerifyCommand) -> Result<Outcome> {
    match command {
        VerifyCommand::Plan(a) => verify_plan(ctx, &a),
        VerifyCommand::Report {
            baseline,
            candidate,
            grouping,
            format,
            margin,
            output,
        } => {
            let read = |p: &Path| -> Result<EvalScores> {
                let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                EvalScores::from_json(&bytes).with_context(|| format!("parsing {}", p.display()))
            };
            let grouping = match grouping {
                Some(p) => MetricGrouping::from_json(&std::fs::read(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => ctx.config.report.grouping.clone(),
            };
            let report = verify::eval_report(
                &read(&baseline)?,
                &read(&candidate)?,
                &grouping,
                margin.unwrap_or(ctx.config.report.margin),
            )?;
            let format = match format {
                FormatArg::Table => ReportFormat::Table,
                FormatArg::Json => ReportFormat::Json,
                FormatArg::Markdown => ReportFormat::Markdown,
            };
            let mut out = open_output(output.as_deref())?;
            out.write_all(report.render(format).as_bytes())?;
            out.flush()?;
            Ok(Outcome::Success)
        }
    }
}

fn verify_plan(ctx: &AppContext, a: &PlanArgs) -> Result<Outcome> {
    let mut config = ctx.config.verify.clone();
    config.n_epoch = a.n_epoch.unwrap_or(config.n_epoch);
    config.candidate_weight_bp = a.candidate_weight_bp.unwrap_or(config.candidate_weight_bp);
    config.global_batch_size = a.global_batch_size.unwrap_or(config.global_batch_size);
    config.sequence_length = a.sequence_length.unwrap_or(config.sequence_length);
    config.seed = ctx.seed.unwrap_or(config.seed);
    if let Some(mode) = a.rounding_mode {
        config.rounding_mode = match mode {
            RoundingArg::AsWrittenMax => RoundingMode::AsWrittenMax,
            RoundingArg::NearestCanonical => RoundingMode::NearestCanonical,
        };
    }
    let mut fingerprints = std::collections::BTreeMap::new();
    let candidate = match (&a.candidate, a.candidate_shards.is_empty()) {
        (Some(p), _) => {
            fingerprints.insert("candidate_manifest".to_owned(), file_sha256_hex(p)?);
            read_shard_tokens(p)?
        }
        (None, false) => {
            let tokenizer = tokenizer(ctx)?;
            let mut out = Vec::new();
            for p in &a.candidate_shards {
                fingerprints.insert(format!("candidate:{}", p.display()), file_sha256_hex(p)?);
                out.push(verify::count_shard_tokens(
                    p,
                    &tokenizer,
                    Some(&ctx.config.normalize),
                )?);
            }
            out
        }
        (None, true) => bail!("one of --candidate or --candidate-shards is required"),
    };
    let mut out = open_output(a.output.as_deref())?;
    if a.steps_only {
        let tokens = candidate.iter().map(|s| s.tokens).sum();
        let count = verify::step_count(tokens, &config)?;
        write_json(
            &mut out,
            &serde_json::json!({
                "candidate_tokens": tokens,
                "tokens_per_step": config.tokens_per_step(),
                "total_tokens": count.total_tokens,
                "raw_steps": count.raw_steps,
                "steps": count.steps,
                "rounding_mode": config.rounding_mode,
            }),
        )?;
        return Ok(Outcome::Success);
    }
    let default_path = a.default.as_deref().context("--default is required")?;
    fingerprints.insert("default_manifest".to_owned(), file_sha256_hex(default_path)?);
    let default = read_shard_tokens(default_path)?;
    let plan = verify::plan_anneal(candidate, default, &config, fingerprints)?;
    write_json(&mut out, &plan)?;
    Ok(Outcome::Success)
}

fn pipeline_cmd(command: PipelineCommand) -> Result<Outcome> {
    let mut stdout = io::stdout().lock();
    let state = match command {
        PipelineCommand::Init {
            run_dir,
            pipeline_config,
        } => {
            let bytes = std::fs::read(&pipeline_config)
                .with_context(|| format!("reading {}", pipeline_config.display()))?;
            let config: PipelineConfig = serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing {}", pipeline_config.display()))?;
            Pipeline::init(&run_dir, config)?.state().clone()
        }
        PipelineCommand::Advance { run_dir, step } => {
            let mut p = Pipeline::open(&run_dir)?;
            if step {
                p.advance()?.clone()
            } else {
                p.run_round()?.clone()
            }
        }
        PipelineCommand::IngestReport {
            run_dir,
            baseline,
            candidate,
        } => {
            let read = |p: &Path| -> Result<EvalScores> {
                EvalScores::from_json(&std::fs::read(p)?).with_context(|| format!("parsing {}", p.display()))
            };
            let (b, c) = (read(&baseline)?, read(&candidate)?);
            Pipeline::open(&run_dir)?.ingest_report(&b, &c)?.clone()
        }
        PipelineCommand::Status { run_dir } => pipeline::resume(&run_dir)?,
        PipelineCommand::Resume { run_dir } => Pipeline::open(&run_dir)?.state().clone(),
    };
    write_json(&mut stdout, &state)?;
    Ok(Outcome::Success)
}
