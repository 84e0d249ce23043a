use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use hit_core::data::{generate_synthetic, load_dataset, read_dataset, BatchBuilder, Dataset, Example, Split, Vocabs};
use hit_core::decoder::decode;
use hit_core::encoding::join_camel_case;
use hit_core::metrics::{corpus_subtoken_prf, map_at_r};
use hit_core::model::{HiTModel, Task};
use hit_core::nn::DType;
use hit_core::probe::run_probe;
use hit_core::syntax::{parse_bytes_to_cst, HierarchyMode, HierarchyExtractor, Language};
use hit_core::train::{argmax, evaluate, fit, load_checkpoint, save_checkpoint, Evaluation, Manifest, RunConfig};
use hit_core::Error;
use serde_json::{json, Value};

use crate::{Cli, Command, EvalArgs, ExtractArgs, Global, PredictArgs, ProbeArgs, SplitArg, SynthArgs, TrainArgs};

/// Failure of a subcommand with its process exit status.
#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
}

impl CliError {
    /// 2 bad input, 3 diverged, 4 missing artifact.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::DivergedTraining { .. } | Error::NonFinite(_) => 3,
                Error::MissingCheckpoint(_)
                | Error::MissingFile(_)
                | Error::UnloadedModel
                | Error::CorruptCheckpoint(_) => 4,
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 4,
                Error::NoGraphRecorded => 1,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl<E: Into<Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli.global)?;
    if cli.global.param_report {
        let report = HiTModel::<f32>::new(config.model.clone(), config.schedule.seed)?.param_report();
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        match cli.command {
            Some(_) => eprintln!("{text}"),
            None => println!("{text}"),
        }
    }
    let Some(command) = cli.command else {
        if cli.global.param_report {
            return Ok(());
        }
        return Err(CliError::Usage("no subcommand given; see `hit --help`".into()));
    };
    match command {
        Command::Extract(a) => extract(&config, a),
        Command::Train(a) => train(config, &cli.global, a),
        Command::Eval(a) => eval(&cli.global, a),
        Command::Predict(a) => predict(a),
        Command::Probe(a) => probe(&config, &cli.global, a),
        Command::Synth(a) => synth(&config, a),
    }
}

/// Config file, then command-line overrides.
fn resolve_config(global: &Global) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(task) = global.task {
        let task: Task = task.into();
        if task.is_generation() && !config.model.task.is_generation() && global.config.is_none() {
            config.model.seq_layers = hit_core::model::HiTConfig::for_generation().seq_layers;
        }
        config.model.task = task;
    }
    if let Some(mode) = global.mode {
        config.model.hierarchy_mode = mode.into();
    }
    if let Some(seed) = global.seed {
        config.schedule.seed = seed;
    }
    config.model.validate()?;
    Ok(config)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn write_json_line(out: &mut dyn Write, value: &Value) -> Result<()> {
    writeln!(out, "{value}")?;
    Ok(())
}

fn language_of(path: &Path, fallback: Option<Language>) -> Result<Language> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("py") => Ok(Language::Python),
        Some("java") => Ok(Language::Java),
        Some("c") | Some("h") => Ok(Language::C),
        _ => fallback.ok_or_else(|| CliError::Usage(format!("cannot tell the language of {}; pass --language", path.display()))),
    }
}

fn extractor(max_path_depth: usize) -> HierarchyExtractor {
    HierarchyExtractor::default().with_max_path_depth(max_path_depth)
}

fn extract(config: &RunConfig, args: ExtractArgs) -> Result<()> {
    let ex = extractor(config.model.max_path_depth);
    let mut out = output(args.output.as_deref())?;
    for path in &args.inputs {
        if !path.exists() {
            return Err(Error::MissingFile(path.clone()).into());
        }
        if path.extension().is_some_and(|e| e == "jsonl") {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: Value = serde_json::from_str(&line)
                    .map_err(|e| Error::MalformedRecord { line: i + 1, reason: e.to_string() })?;
                let code = record["code"]
                    .as_str()
                    .ok_or_else(|| Error::MalformedRecord { line: i + 1, reason: "missing `code`".into() })?;
                let lang = match record["language"].as_str() {
                    Some(l) => l.parse()?,
                    None => args.language.unwrap_or(config.language),
                };
                match ex.parse_and_extract(code, lang) {
                    Ok(p) => write_json_line(&mut out, &serde_json::to_value(p.to_record(ex.vocab())).map_err(Error::from)?)?,
                    Err(Error::EmptyProgram) => eprintln!("{}:{}: no tokens, skipped", path.display(), i + 1),
                    Err(e) => return Err(e.into()),
                }
            }
        } else {
            let lang = language_of(path, args.language)?;
            let bytes = std::fs::read(path)?;
            let tree = parse_bytes_to_cst(&bytes, lang)?;
            let program = ex.extract(&tree)?;
            write_json_line(&mut out, &serde_json::to_value(program.to_record(ex.vocab())).map_err(Error::from)?)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn synth(config: &RunConfig, args: SynthArgs) -> Result<()> {
    let mut out = output(args.output.as_deref())?;
    for record in generate_synthetic(args.kind, args.size, config.schedule.seed) {
        write_json_line(&mut out, &serde_json::to_value(record).map_err(Error::from)?)?;
    }
    out.flush()?;
    Ok(())
}

fn load(max_path_depth: usize, path: &Path, task: Task, language: Language, seed: u64) -> Result<Dataset> {
    let dataset = load_dataset(path, task, language, &extractor(max_path_depth), seed)?;
    if dataset.skipped() > 0 {
        eprintln!("skipped {} record(s) without tokens", dataset.skipped());
    }
    if dataset.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    Ok(dataset)
}

fn train(mut config: RunConfig, global: &Global, args: TrainArgs) -> Result<()> {
    let task = config.model.task;
    if task == Task::Scope {
        return Err(CliError::Usage("scope is probed over a classification checkpoint; train with --task classify".into()));
    }
    let language = args.language.unwrap_or(config.language);
    config.language = language;
    let seed = config.schedule.seed;
    let dataset = load(config.model.max_path_depth, &args.data, task, language, seed)?;
    let ex = extractor(config.model.max_path_depth);
    let vocabs = Vocabs::from_training(&dataset.examples, ex.vocab().clone(), config.model.vocab_size, config.model.target_vocab_size)?;
    vocabs.apply_to(&mut config.model);
    if !task.is_generation() {
        config.model.num_categories = dataset.num_categories().max(2);
    }
    let mut model = HiTModel::<f32>::new(config.model.clone(), seed)?;
    if global.param_report {
        let text = serde_json::to_string_pretty(&model.param_report()).map_err(Error::from)?;
        eprintln!("{text}");
    }
    let model_config = model.config.clone();
    let builder = BatchBuilder::new(&vocabs, &model_config);
    let (train, valid, test) = (dataset.split(Split::Train), dataset.split(Split::Valid), dataset.split(Split::Test));
    if train.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    std::fs::create_dir_all(&args.out)?;
    let report_path = args.report.clone().unwrap_or_else(|| args.out.join("report.csv"));
    let report = fit(&mut model, &builder, &train, &valid, &config.schedule, Some(&report_path))?;
    let manifest = Manifest {
        config: model.config.clone(),
        dtype: DType::F32,
        language,
        seed,
        best_epoch: report.best_epoch,
        best_metric: report.best_metric,
    };
    save_checkpoint(&args.out, &model, &vocabs, &manifest)?;
    let test_metric = if test.is_empty() || report.epochs.is_empty() {
        None
    } else {
        Some(evaluate(&model, &builder, &test, config.schedule.batch_size)?.metric())
    };
    let summary = json!({
        "task": task.name(),
        "mode": model.config.hierarchy_mode.name(),
        "examples": {"train": train.len(), "valid": valid.len(), "test": test.len(), "skipped": dataset.skipped()},
        "epochs": report.epochs.len(),
        "best_epoch": report.best_epoch,
        "best_valid_metric": report.best_metric,
        "test_metric": test_metric,
        "checkpoint": args.out,
        "report": report_path,
    });
    println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
    Ok(())
}

fn select(dataset: &Dataset, split: SplitArg) -> Vec<&Example> {
    match split {
        SplitArg::Train => dataset.split(Split::Train),
        SplitArg::Valid => dataset.split(Split::Valid),
        SplitArg::Test => dataset.split(Split::Test),
        SplitArg::All => dataset.examples.iter().collect(),
    }
}

fn eval(global: &Global, args: EvalArgs) -> Result<()> {
    let (model, vocabs, manifest) = load_checkpoint::<f32>(&args.checkpoint)?;
    let task = model.config.task;
    let dataset = load(model.config.max_path_depth, &args.data, task, manifest.language, global.seed.unwrap_or(manifest.seed))?;
    let examples = select(&dataset, args.split);
    if examples.is_empty() {
        return Err(Error::EmptyInput.into());
    }
    let builder = BatchBuilder::new(&vocabs, &model.config);
    let breakdown_path = args.breakdown.clone().unwrap_or_else(|| args.checkpoint.join("eval_queries.jsonl"));
    let mut breakdown = BufWriter::new(File::create(&breakdown_path)?);
    let mut report = json!({
        "task": task.name(),
        "mode": model.config.hierarchy_mode.name(),
        "split": format!("{:?}", args.split).to_lowercase(),
        "examples": examples.len(),
        "per_query": breakdown_path,
    });
    match task {
        Task::Clone => {
            let mut embeddings = Vec::with_capacity(examples.len());
            for chunk in examples.chunks(64) {
                let batch = builder.build(chunk)?;
                embeddings.extend(
                    model.embed_for_retrieval(&batch)?.into_iter().map(|v| v.into_iter().map(f64::from).collect::<Vec<_>>()),
                );
            }
            let labels: Vec<usize> = examples.iter().map(|e| e.label.unwrap_or(usize::MAX)).collect();
            let map = map_at_r(&embeddings, &labels)?;
            for (ex, ap) in examples.iter().zip(&map.per_query) {
                write_json_line(&mut breakdown, &json!({"id": ex.id, "label": ex.label, "ap_at_r": ap}))?;
            }
            report["map_at_r"] = json!(map.map);
            report["skipped_queries"] = json!(map.skipped.len());
        }
        Task::Namegen => {
            let targets = vocabs.targets.as_ref().ok_or_else(|| Error::CorruptCheckpoint("no target vocabulary".into()))?;
            let mut predictions = Vec::with_capacity(examples.len());
            for chunk in examples.chunks(32) {
                let batch = builder.build(chunk)?;
                predictions.extend(decode(&model, &batch, targets, model.config.max_target_len + 1, args.beam)?);
            }
            let gold: Vec<&[String]> = examples.iter().map(|e| e.name.as_deref().unwrap_or_default()).collect();
            for ((ex, pred), g) in examples.iter().zip(&predictions).zip(&gold) {
                write_json_line(&mut breakdown, &json!({"id": ex.id, "predicted": pred, "target": g}))?;
            }
            let prf = corpus_subtoken_prf(predictions.iter().map(Vec::as_slice).zip(gold));
            report["precision"] = json!(prf.precision);
            report["recall"] = json!(prf.recall);
            report["f1"] = json!(prf.f1);
        }
        Task::Classify => {
            let Evaluation::Accuracy { accuracy, predictions } = evaluate(&model, &builder, &examples, 64)? else {
                unreachable!("classification evaluates to accuracy")
            };
            for (ex, p) in examples.iter().zip(&predictions) {
                write_json_line(&mut breakdown, &json!({"id": ex.id, "predicted": p, "label": ex.label}))?;
            }
            report["accuracy"] = json!(accuracy);
        }
        Task::Scope => return Err(CliError::Usage("use `hit probe` for scope corpora".into())),
    }
    breakdown.flush()?;
    let mut out = output(args.output.as_deref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    out.flush()?;
    Ok(())
}

/// Reads `{"code": ...}` lines; labels and names are not required.
fn read_programs(path: &Path, model: &HiTModel<f32>, language: Language) -> Result<Vec<Example>> {
    let ex = extractor(model.config.max_path_depth);
    if model.config.task != Task::Namegen {
        return Ok(load(model.config.max_path_depth, path, Task::Scope, language, 0)?.examples);
    }
    // A placeholder name still masks the defined function name.
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut filled = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut v: Value =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord { line: i + 1, reason: e.to_string() })?;
        if v.get("name").is_none_or(Value::is_null) {
            v["name"] = json!("unknown");
        }
        filled.push_str(&v.to_string());
        filled.push('\n');
    }
    let mut examples = read_dataset(filled.as_bytes(), Task::Namegen, language, &ex, 0)?.examples;
    for e in &mut examples {
        e.name = None;
    }
    Ok(examples)
}

fn predict(args: PredictArgs) -> Result<()> {
    let (model, vocabs, manifest) = load_checkpoint::<f32>(&args.checkpoint)?;
    let examples = read_programs(&args.input, &model, manifest.language)?;
    if examples.is_empty() {
        return Err(Error::EmptyInput.into());
    }
    let builder = BatchBuilder::new(&vocabs, &model.config);
    let refs: Vec<&Example> = examples.iter().collect();
    let mut out = output(args.output.as_deref())?;
    for chunk in refs.chunks(32) {
        let batch = builder.build(chunk)?;
        if model.config.task.is_generation() {
            let targets = vocabs.targets.as_ref().ok_or_else(|| Error::CorruptCheckpoint("no target vocabulary".into()))?;
            for name in decode(&model, &batch, targets, model.config.max_target_len + 1, args.beam)? {
                write_json_line(&mut out, &json!({"name_subtokens": name, "name": join_camel_case(&name)}))?;
            }
        } else if args.embed || model.config.task == Task::Clone {
            for v in model.embed_for_retrieval(&batch)? {
                write_json_line(&mut out, &json!({"embedding": v}))?;
            }
        } else {
            for probs in model.predict_probs(&batch)? {
                write_json_line(&mut out, &json!({"label": argmax(&probs), "probs": probs}))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn probe(config: &RunConfig, global: &Global, args: ProbeArgs) -> Result<()> {
    let (model, vocabs, manifest) = load_checkpoint::<f32>(&args.checkpoint)?;
    if let Some(mode) = global.mode {
        let mode: HierarchyMode = mode.into();
        if mode != model.config.hierarchy_mode {
            return Err(CliError::Usage(format!(
                "--mode {} does not match the checkpoint's mode {}",
                mode.name(),
                model.config.hierarchy_mode.name()
            )));
        }
    }
    let seed = global.seed.unwrap_or(manifest.seed);
    let mut probe_config = config.probe.clone();
    if let Some(n) = args.pairs_per_program {
        probe_config.pairs_per_program = n;
    }
    let dataset = load(model.config.max_path_depth, &args.data, Task::Scope, manifest.language, seed)?;
    let train = dataset.split(Split::Train);
    let held_out: Vec<&Example> = dataset.examples.iter().filter(|e| e.split != Split::Train).collect();
    if train.is_empty() || held_out.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    let builder = BatchBuilder::new(&vocabs, &model.config);
    let report = run_probe(&model, &builder, &train, &held_out, &probe_config, seed)?;
    let value = json!({
        "mode": model.config.hierarchy_mode.name(),
        "accuracy": report.test_accuracy,
        "n_pairs": report.train_pairs + report.test_pairs,
        "train_pairs": report.train_pairs,
        "test_pairs": report.test_pairs,
        "train_accuracy": report.train_accuracy,
        "final_loss": report.final_loss,
        "seed": seed,
    });
    let mut out = output(args.output.as_deref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&value).map_err(Error::from)?)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;

    fn code(e: Error) -> u8 {
        CliError::from(e).exit_code()
    }

    #[test]
    fn exit_codes_by_failure_class() {
        assert_eq!(code(Error::DivergedTraining { epoch: 3 }), 3);
        assert_eq!(code(Error::NonFinite("loss".into())), 3);
        assert_eq!(code(Error::MissingCheckpoint(PathBuf::from("x"))), 4);
        assert_eq!(code(Error::MissingFile(PathBuf::from("x"))), 4);
        assert_eq!(code(Error::CorruptCheckpoint("dtype".into())), 4);
        assert_eq!(code(std::io::Error::from(std::io::ErrorKind::NotFound).into()), 4);
        assert_eq!(code(Error::UnsupportedLanguage("ruby".into())), 2);
        assert_eq!(code(Error::MalformedRecord { line: 1, reason: "x".into() }), 2);
        assert_eq!(code(Error::InvalidConfig("x".into())), 2);
        assert_eq!(code(Error::EmptyCorpus), 2);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    }

    #[test]
    fn language_from_extension_or_flag() {
        assert_eq!(language_of(Path::new("a.java"), None).unwrap(), Language::Java);
        assert_eq!(language_of(Path::new("a.h"), None).unwrap(), Language::C);
        assert_eq!(language_of(Path::new("a.txt"), Some(Language::Python)).unwrap(), Language::Python);
        assert_eq!(language_of(Path::new("a.rb"), None).unwrap_err().exit_code(), 2);
    }
}
