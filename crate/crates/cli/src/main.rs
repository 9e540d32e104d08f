//! Command-line front end for the multi-component fake news detection
//! pipeline: synthetic data generation, training, evaluation, ablation
//! sweeps, gradient checking, error level analysis and embedding export.

mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ember_core::data::{
    generate_synthetic, load_corpus, load_embeddings, write_corpus, write_embeddings,
    ComponentKind, EmbeddingTable, SyntheticOptions,
};
use ember_core::forensics::{
    ela, ela_feature_vector, load_image_features, luma_feature_vector, write_image_features,
    FeatureTable, ImageFeature, DEFAULT_ERROR_LEVEL,
};
use ember_core::model::{
    ablate, attention_diagnostics, evaluate_split, lambda_preset, load_checkpoint, load_variants,
    parse_config_file, prepare_corpus, run_item, save_checkpoint, train, verify_gradients,
    write_ablation_table, Architecture, CheckpointHeader, Split, TrainConfig,
};
use ember_core::EmberError;
use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "ember",
    version,
    about = "Multi-component fake news detection pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic separable corpus with embeddings and image features.
    Synth(SynthArgs),
    /// Train a model and write the best-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Train and evaluate the model plus a list of ablation variants.
    Ablate(AblateArgs),
    /// Verify analytic gradients against central differences, module by module.
    Gradcheck(GradcheckArgs),
    /// Error level analysis of one image: heatmap plus mean magnitude.
    Ela(ElaArgs),
    /// Export per-item aggregated feature vectors for external projection.
    #[command(name = "export-embeddings")]
    ExportEmbeddings(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    n: usize,
    /// Fraction of items with mixed-topic components (labeled fake).
    #[arg(long, default_value_t = 1.0 / 3.0)]
    mismatch_rate: f64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    topics: usize,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    #[arg(long, default_value_t = 32)]
    feature_width: usize,
    #[arg(long, default_value_t = 20)]
    words_per_topic: usize,
}

#[derive(Args)]
struct CorpusInputs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    features: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    inputs: CorpusInputs,
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value config file; omitted keys use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Lambda preset by dataset name (politifact2, politifact7, gossipcop, compre).
    #[arg(long)]
    dataset: Option<String>,
    /// Active component set, e.g. HICB.
    #[arg(long)]
    components: Option<String>,
    /// Reading order over the active components, e.g. HICB.
    #[arg(long)]
    order: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    inputs: CorpusInputs,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "eval_report.json")]
    out: PathBuf,
    /// Write per-item co-attention diagnostics (affinity matrices and
    /// attention vectors) as JSON lines.
    #[arg(long)]
    dump_attention: Option<PathBuf>,
    /// Round parameters through 32-bit storage before evaluating.
    #[arg(long)]
    f32: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    inputs: CorpusInputs,
    /// One variant per line; the full model row is always included.
    #[arg(long)]
    variants: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Sampled coordinates per module.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Also write the report and a manifest into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ElaArgs {
    input: PathBuf,
    /// Heatmap output path; format follows the extension (png, jpg).
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ERROR_LEVEL)]
    r: f64,
    /// Append projected feature vectors for this image to a feature file.
    #[arg(long, requires = "feature_id")]
    append_features: Option<PathBuf>,
    #[arg(long, requires = "append_features")]
    feature_id: Option<String>,
    #[arg(long, default_value_t = 32)]
    feature_width: usize,
    #[arg(long, default_value_t = 2024)]
    feature_seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    inputs: CorpusInputs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all")]
    split: String,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("EMBER_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("error: EMBER_THREADS must be a positive integer, got '{threads}'");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Ela(args) => cmd_ela(args),
        Command::ExportEmbeddings(args) => cmd_export(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Usage and input-format problems exit 2; runtime failures exit 1.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<EmberError>() {
        Some(
            EmberError::MissingFile { .. }
            | EmberError::Config(_)
            | EmberError::Parse { .. }
            | EmberError::DuplicateId { .. }
            | EmberError::InvalidLabel { .. }
            | EmberError::Checkpoint(_),
        ) => 2,
        _ => 1,
    }
}

fn usage_error(message: impl Into<String>) -> anyhow::Error {
    EmberError::Config(message.into()).into()
}

/// Embedding width from the first data line of the file.
fn infer_embedding_dim(path: &Path) -> anyhow::Result<usize> {
    let text = fs::read_to_string(path).map_err(|_| EmberError::MissingFile {
        path: path.display().to_string(),
    })?;
    for line in text.lines() {
        let fields = line.split_whitespace().count();
        if fields > 1 {
            return Ok(fields - 1);
        }
    }
    Err(usage_error(format!(
        "embedding file {} holds no vectors",
        path.display()
    )))
}

struct LoadedInputs {
    items: Vec<ember_core::data::NewsItem>,
    table: EmbeddingTable,
    features: FeatureTable,
}

fn load_inputs(inputs: &CorpusInputs) -> anyhow::Result<LoadedInputs> {
    let dim = infer_embedding_dim(&inputs.embeddings)?;
    let table = load_embeddings(&inputs.embeddings, dim)?;
    let items = load_corpus(&inputs.corpus)?;
    let features = load_image_features(&inputs.features)?;
    Ok(LoadedInputs {
        items,
        table,
        features,
    })
}

fn resolved_config(
    config_path: &Option<PathBuf>,
    seed: Option<u64>,
    lambda: Option<f64>,
    dataset: Option<&str>,
    components: Option<&str>,
    order: Option<&str>,
) -> anyhow::Result<TrainConfig> {
    let mut config = match config_path {
        Some(path) => parse_config_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(name) = dataset {
        config.lambda = lambda_preset(name)
            .ok_or_else(|| usage_error(format!("no lambda preset for dataset '{name}'")))?;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(l) = lambda {
        config.lambda = l;
    }
    if let Some(c) = components {
        config.components = ComponentKind::parse_set(c)?;
        config.order = None;
    }
    if let Some(o) = order {
        config.order = Some(ComponentKind::parse_set(o)?);
    }
    config.validate()?;
    Ok(config)
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<ExitCode> {
    let opts = SyntheticOptions {
        topics: args.topics,
        embed_dim: args.embed_dim,
        feature_width: args.feature_width,
        words_per_topic: args.words_per_topic,
    };
    let corpus = generate_synthetic(args.n, args.mismatch_rate, args.seed, &opts)?;
    fs::create_dir_all(&args.out)?;
    let corpus_path = args.out.join("corpus.jsonl");
    let embeddings_path = args.out.join("embeddings.txt");
    let features_path = args.out.join("features.tsv");
    write_corpus(&corpus.items, &corpus_path)?;
    write_embeddings(&corpus.embeddings, &embeddings_path)?;
    write_image_features(&corpus.features, &features_path)?;

    let mut manifest = RunManifest::new(
        Some(args.seed),
        serde_json::json!({
            "n": args.n,
            "mismatch_rate": args.mismatch_rate,
            "topics": opts.topics,
            "embed_dim": opts.embed_dim,
            "feature_width": opts.feature_width,
            "words_per_topic": opts.words_per_topic,
        }),
    );
    for p in [&corpus_path, &embeddings_path, &features_path] {
        manifest.record_output(p);
    }
    manifest.write(args.out.join("synth.manifest.json"))?;

    let fakes = corpus.items.iter().filter(|i| i.label == 0).count();
    println!(
        "synth: {} items ({} fake, {} real) -> {}",
        corpus.items.len(),
        fakes,
        corpus.items.len() - fakes,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let config = resolved_config(
        &args.config,
        args.seed,
        args.lambda,
        args.dataset.as_deref(),
        args.components.as_deref(),
        args.order.as_deref(),
    )?;
    let loaded = load_inputs(&args.inputs)?;
    let arch = Architecture::resolve(&config, loaded.table.dim(), loaded.features.width())?;
    let prepared = prepare_corpus(&loaded.items, &loaded.table, config.seed)?;
    for w in &prepared.splits.warnings {
        eprintln!("warning: {w}");
    }

    let outcome = train(&arch, &prepared, &loaded.table, &loaded.features, &config)?;
    for r in &outcome.log {
        println!(
            "epoch {:3}  train_loss {:.6}  val_loss {:.6}  val_acc {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy
        );
    }
    if outcome.diverged {
        eprintln!("warning: training diverged; keeping the last good checkpoint");
    }

    fs::create_dir_all(&args.out)?;
    let ckpt_path = args.out.join("checkpoint.ember");
    let header = CheckpointHeader {
        config: config.clone(),
        architecture: arch.clone(),
        variant: "full".into(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
    };
    save_checkpoint(&ckpt_path, &header, &outcome.params)?;

    let log_path = args.out.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path)?;
    for r in &outcome.log {
        writeln!(log_file, "{}", serde_json::to_string(r)?)?;
    }

    let test_report = evaluate_split(
        &arch,
        &outcome.params,
        &prepared,
        &loaded.table,
        &loaded.features,
        &config,
        Split::Test,
    )?;
    println!(
        "best epoch {} (val_loss {:.6}); test acc {:.4} prec {:.4} rec {:.4} f1 {:.4}",
        outcome.best_epoch,
        outcome.best_val_loss,
        test_report.accuracy,
        test_report.precision,
        test_report.recall,
        test_report.f1
    );

    let mut manifest = RunManifest::new(Some(config.seed), serde_json::to_value(&config)?);
    manifest.record_input("corpus", &args.inputs.corpus)?;
    manifest.record_input("embeddings", &args.inputs.embeddings)?;
    manifest.record_input("features", &args.inputs.features)?;
    manifest.record_output(&ckpt_path);
    manifest.record_output(&log_path);
    manifest.write(args.out.join("train.manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn split_indices(prepared: &ember_core::model::PreparedCorpus, split: Split) -> Vec<usize> {
    match split {
        Split::Train => prepared.splits.train.clone(),
        Split::Val => prepared.splits.val.clone(),
        Split::Test => prepared.splits.test.clone(),
        Split::All => (0..prepared.encoded.len()).collect(),
    }
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<ExitCode> {
    let (header, mut store) = load_checkpoint(&args.checkpoint)?;
    if args.f32 {
        store.round_to_f32();
    }
    let loaded = load_inputs(&args.inputs)?;
    if loaded.table.dim() != header.architecture.embed_dim {
        return Err(usage_error(format!(
            "embedding width {} does not match the checkpoint ({})",
            loaded.table.dim(),
            header.architecture.embed_dim
        )));
    }
    if loaded.features.width() != header.architecture.feature_width {
        return Err(usage_error(format!(
            "feature width {} does not match the checkpoint ({})",
            loaded.features.width(),
            header.architecture.feature_width
        )));
    }
    let split = Split::parse(&args.split)?;
    let prepared = prepare_corpus(&loaded.items, &loaded.table, header.config.seed)?;
    let report = evaluate_split(
        &header.architecture,
        &store,
        &prepared,
        &loaded.table,
        &loaded.features,
        &header.config,
        split,
    )?;
    println!(
        "{} split: acc {:.4} prec {:.4} rec {:.4} f1 {:.4} ({} items, {} averaging)",
        args.split,
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        report.per_item.len(),
        report.averaging
    );
    fs::write(&args.out, serde_json::to_string_pretty(&report)? + "\n")?;

    let mut manifest = RunManifest::new(
        Some(header.config.seed),
        serde_json::to_value(&header.config)?,
    );
    manifest.record_input("checkpoint", &args.checkpoint)?;
    manifest.record_input("corpus", &args.inputs.corpus)?;
    manifest.record_input("embeddings", &args.inputs.embeddings)?;
    manifest.record_input("features", &args.inputs.features)?;
    manifest.record_output(&args.out);

    if let Some(dump_path) = &args.dump_attention {
        let indices = split_indices(&prepared, split);
        let items: Vec<&ember_core::data::EncodedItem> =
            indices.iter().map(|&i| &prepared.encoded[i]).collect();
        let dumps = attention_diagnostics(
            &header.architecture,
            &store,
            &items,
            &loaded.table,
            &loaded.features,
        )?;
        let mut out = fs::File::create(dump_path)?;
        for (id, pairs) in dumps {
            writeln!(
                out,
                "{}",
                serde_json::to_string(&serde_json::json!({ "id": id, "pairs": pairs }))?
            )?;
        }
        manifest.record_output(dump_path);
    }

    manifest.write(args.out.with_extension("manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<ExitCode> {
    let config = resolved_config(&args.config, args.seed, args.lambda, None, None, None)?;
    let variants = load_variants(&args.variants)?;
    let loaded = load_inputs(&args.inputs)?;
    let table = ablate(
        &loaded.items,
        &loaded.table,
        &loaded.features,
        &config,
        &variants,
    )?;

    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    for row in &table.rows {
        println!(
            "{:<40} acc {:.4} prec {:.4} rec {:.4} f1 {:.4} (best epoch {}, ran {})",
            row.variant,
            row.accuracy,
            row.precision,
            row.recall,
            row.f1,
            row.best_epoch,
            row.epochs_run
        );
    }

    fs::create_dir_all(&args.out)?;
    let table_path = args.out.join("ablation.tsv");
    write_ablation_table(&table, &table_path)?;

    let mut manifest = RunManifest::new(Some(config.seed), serde_json::to_value(&config)?);
    manifest.record_input("corpus", &args.inputs.corpus)?;
    manifest.record_input("embeddings", &args.inputs.embeddings)?;
    manifest.record_input("features", &args.inputs.features)?;
    manifest.record_input("variants", &args.variants)?;
    manifest.record_output(&table_path);
    manifest.write(args.out.join("ablate.manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<ExitCode> {
    if args.samples == 0 {
        return Err(usage_error("--samples must be at least 1"));
    }
    // Test hook: corrupt one named parameter's analytic gradient.
    let corrupt = std::env::var("EMBER_GRADCHECK_CORRUPT").ok();
    let checks = verify_gradients(args.samples, args.seed, corrupt.as_deref())?;

    let mut all_passed = true;
    let mut lines = Vec::new();
    for c in &checks {
        let status = if c.report.passed() { "PASS" } else { "FAIL" };
        all_passed &= c.report.passed();
        let mut line = format!(
            "{status}  {:<28} max_rel_err {:.3e}  ({} coords)",
            c.module, c.report.max_rel_err, c.report.samples
        );
        if !c.report.passed() {
            line.push_str(&format!(
                "  worst {}[{}] analytic {:.6e} numeric {:.6e}",
                c.report.worst_path, c.report.worst_index, c.report.analytic, c.report.numeric
            ));
        }
        println!("{line}");
        lines.push(line);
    }
    println!(
        "{}",
        if all_passed {
            "gradcheck: PASS"
        } else {
            "gradcheck: FAIL"
        }
    );

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        let report_path = out.join("gradcheck.txt");
        fs::write(&report_path, lines.join("\n") + "\n")?;
        let mut manifest = RunManifest::new(
            Some(args.seed),
            serde_json::json!({ "samples": args.samples }),
        );
        manifest.record_output(&report_path);
        manifest.write(out.join("gradcheck.manifest.json"))?;
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_ela(args: ElaArgs) -> anyhow::Result<ExitCode> {
    let bytes = fs::read(&args.input).map_err(|_| EmberError::MissingFile {
        path: args.input.display().to_string(),
    })?;
    let map = ela(&bytes, args.r)?;
    map.to_heatmap()
        .save(&args.output)
        .map_err(ember_core::EmberError::from)?;
    println!(
        "ela: {}x{} mean magnitude {:.6} (error level {})",
        map.width(),
        map.height(),
        map.mean_magnitude(),
        args.r
    );

    let mut manifest = RunManifest::new(
        Some(args.feature_seed),
        serde_json::json!({ "r": args.r, "feature_width": args.feature_width }),
    );
    manifest.record_input("image", &args.input)?;
    manifest.record_output(&args.output);

    if let Some(feature_path) = &args.append_features {
        let id = args
            .feature_id
            .as_deref()
            .expect("clap enforces feature_id");
        let mut table = if feature_path.exists() {
            load_image_features(feature_path)?
        } else {
            FeatureTable::new(args.feature_width)
        };
        if table.width() != args.feature_width {
            return Err(usage_error(format!(
                "feature file width {} does not match --feature-width {}",
                table.width(),
                args.feature_width
            )));
        }
        let decoded = image::load_from_memory(&bytes).map_err(ember_core::EmberError::from)?;
        let original = luma_feature_vector(&decoded, args.feature_width, args.feature_seed);
        let ela_vec = ela_feature_vector(&map, args.feature_width, args.feature_seed);
        table.insert(ImageFeature::new(id, original, ela_vec))?;
        write_image_features(&table, feature_path)?;
        println!(
            "ela: appended feature row '{id}' to {}",
            feature_path.display()
        );
        manifest.record_output(feature_path);
    }

    manifest.write(args.output.with_extension("manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(args: ExportArgs) -> anyhow::Result<ExitCode> {
    let (header, store) = load_checkpoint(&args.checkpoint)?;
    let loaded = load_inputs(&args.inputs)?;
    let split = Split::parse(&args.split)?;
    let prepared = prepare_corpus(&loaded.items, &loaded.table, header.config.seed)?;
    let indices = split_indices(&prepared, split);

    let mut out = fs::File::create(&args.out)?;
    for &i in &indices {
        let item = &prepared.encoded[i];
        let outputs = run_item(
            &header.architecture,
            &store,
            item,
            &loaded.table,
            &loaded.features,
            false,
        )?;
        write!(out, "{}\t{}", outputs.id, outputs.label)?;
        // 32-bit export: rounds through f32 like any downstream reader would.
        for v in outputs.fea_gru {
            write!(out, "\t{}", v as f32)?;
        }
        writeln!(out)?;
    }
    println!("export: {} rows -> {}", indices.len(), args.out.display());

    let mut manifest = RunManifest::new(
        Some(header.config.seed),
        serde_json::to_value(&header.config)?,
    );
    manifest.record_input("checkpoint", &args.checkpoint)?;
    manifest.record_input("corpus", &args.inputs.corpus)?;
    manifest.record_input("embeddings", &args.inputs.embeddings)?;
    manifest.record_input("features", &args.inputs.features)?;
    manifest.record_output(&args.out);
    manifest.write(args.out.with_extension("manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}
