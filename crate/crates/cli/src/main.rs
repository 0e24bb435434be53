//! `defquest`: question generation, corpus statistics, sampling, agreement
//! and ROC analysis, and the review service.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 service error.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use defquest::clients::ClientConfig;
use defquest::corpus::{load_index, load_textbook, ConceptIndex, Textbook};
use defquest::evalkit::{
    agreement_report, auc, import_csv, read_annotations_jsonl, read_labeled_scores, roc_points, AnnotationRecord,
    AnnotationScheme, BootstrapConfig, ImportMapping,
};
use defquest::generation::{read_question_jsonl, write_question_jsonl, FailureMode, QuestionRecord};
use defquest::pipeline::{
    ask, generation_stats, group_by_book, stratified_sample, threshold_sweep, Backends, FailureClass, GeneratorChoice,
    ParserSource, PipelineConfig, PipelineError,
};
use defquest::selection::{ScorerChoice, SelectionConfig};
use defquest_service::{serve, ApiOptions, Store};

#[derive(Parser)]
#[command(
    name = "defquest",
    version,
    about = "Definition-centred question generation from textbooks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate questions for one book.
    Generate(GenerateArgs),
    /// Question counts per section and question prefix shares.
    Stats(StatsArgs),
    /// Draw a fixed number of questions from every book.
    Sample(SampleArgs),
    /// Question counts at several selection thresholds.
    Sweep(SweepArgs),
    /// Inter-annotator agreement per scheme item.
    Agree(AgreeArgs),
    /// ROC points for labeled definition scores.
    Roc(RocArgs),
    /// Run the review service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct BookInput {
    /// Book text (Markdown headings for chapters and sections).
    #[arg(long)]
    book: PathBuf,
    /// Back-of-the-book index, one concept per line.
    #[arg(long)]
    index: PathBuf,
    /// Book id used in sentence and question ids; defaults to the file stem.
    #[arg(long)]
    book_id: Option<String>,
    /// Pre-parsed CoNLL-U file with one tree per sentence id.
    #[arg(long, conflicts_with = "parser_url")]
    parses: Option<PathBuf>,
    /// Remote parser base URL.
    #[arg(long)]
    parser_url: Option<String>,
    /// `rule` or a remote scorer base URL.
    #[arg(long)]
    scorer: Option<String>,
    /// Pattern file replacing the built-in answer patterns.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Label mapping for remote parser output.
    #[arg(long)]
    label_map: Option<PathBuf>,
    /// Client configuration file (`parser_url`, `scorer_url`, `generator_url`, `label_map_path`).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    input: BookInput,
    /// `template` or a remote generator base URL.
    #[arg(long)]
    generator: Option<String>,
    #[arg(long, default_value_t = 0.7)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Question JSONL; the run manifest goes next to it. Stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave out questions the generator fails on instead of aborting.
    #[arg(long)]
    skip_failed: bool,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    questions: PathBuf,
    /// Repeat for several books.
    #[arg(long, required = true)]
    book: Vec<PathBuf>,
    /// Ids for the books, in the same order. A single book takes the id
    /// found in the questions file.
    #[arg(long)]
    book_id: Vec<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, default_value_t = 25)]
    per_book: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: BookInput,
    /// Comma-separated, ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    thresholds: Vec<f64>,
}

#[derive(Args)]
struct AgreeArgs {
    /// Annotation JSONL, or a CSV table when `--mapping` is given.
    #[arg(long)]
    annotations: PathBuf,
    /// Annotation scheme; the built-in scheme when absent.
    #[arg(long)]
    scheme: Option<PathBuf>,
    /// Column mapping for importing a CSV annotation table.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    item: Option<String>,
    /// Bootstrap resamples for confidence intervals.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Questions drawn per resample.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RocArgs {
    /// CSV with `score,label` rows.
    #[arg(long)]
    scores: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long)]
    data_dir: PathBuf,
    /// Built UI bundle to serve at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when absent.
    #[arg(long)]
    cors_origin: Option<String>,
    #[arg(long, default_value_t = Store::DEFAULT_SNAPSHOT_EVERY)]
    snapshot_every: u64,
    /// Seconds allowed for one generation request.
    #[arg(long, default_value_t = 300)]
    generate_timeout: u64,
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(e: impl Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn data(e: impl Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn service(e: impl Display) -> Failure {
    Failure {
        code: 3,
        message: e.to_string(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e.class() {
            FailureClass::Usage => usage(e),
            FailureClass::Data => data(e),
            FailureClass::Service => service(e),
        }
    }
}

type CliResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(data),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "book".into(), |s| s.to_string_lossy().into_owned())
}

fn load_book(path: &Path, id: &str) -> Result<Textbook, Failure> {
    load_textbook(id, &read(path)?).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn load_questions(path: &Path) -> Result<Vec<QuestionRecord>, Failure> {
    read_question_jsonl(&read(path)?).map_err(|(line, e)| data(format!("{}:{line}: {e}", path.display())))
}

impl BookInput {
    fn load(&self) -> Result<(Textbook, ConceptIndex), Failure> {
        let id = self.book_id.clone().unwrap_or_else(|| stem(&self.book));
        let index = load_index(&read(&self.index)?).map_err(|e| data(format!("{}: {e}", self.index.display())))?;
        Ok((load_book(&self.book, &id)?, index))
    }

    fn client_config(&self) -> Result<ClientConfig, Failure> {
        let base = match &self.config {
            Some(path) => ClientConfig::from_file(path).map_err(usage)?,
            None => ClientConfig::default(),
        };
        Ok(base.with_env())
    }

    /// Flags win over environment variables, which win over the config file.
    fn pipeline_config(&self, generator: Option<&str>, threshold: f64, seed: u64) -> Result<PipelineConfig, Failure> {
        let clients = self.client_config()?;
        let parser = match (&self.parses, &self.parser_url, &clients.parser_url) {
            (Some(path), _, _) => ParserSource::ConlluFile { path: path.clone() },
            (None, Some(url), _) | (None, None, Some(url)) => ParserSource::Remote { url: url.clone() },
            (None, None, None) => return Err(usage("one of --parses or --parser-url is required")),
        };
        let scorer = match self.scorer.as_deref().or(clients.scorer_url.as_deref()) {
            None | Some("rule") => ScorerChoice::Rule,
            Some(url) => ScorerChoice::External { url: url.into() },
        };
        let generator = match generator.or(clients.generator_url.as_deref()) {
            None | Some("template") => GeneratorChoice::Template,
            Some(url) => GeneratorChoice::External {
                url: url.into(),
                name: None,
            },
        };
        let mut selection = SelectionConfig {
            threshold,
            scorer,
            ..SelectionConfig::default()
        };
        if let Some(p) = &self.patterns {
            selection.pattern_set_id = p.to_string_lossy().into_owned();
        }
        Ok(PipelineConfig {
            selection,
            generator,
            parser,
            label_map_path: self.label_map.clone().or(clients.label_map_path),
            output: None,
            seed,
            failure_mode: FailureMode::Fail,
        })
    }
}

fn generate(args: GenerateArgs) -> CliResult {
    let (book, index) = args.input.load()?;
    let mut config = args
        .input
        .pipeline_config(args.generator.as_deref(), args.threshold, args.seed)?;
    config.output = args.out.clone();
    if args.skip_failed {
        config.failure_mode = FailureMode::SkipFailed;
    }
    let backends = Backends::from_config(&config)?;
    let run = ask(&book, &index, &config, &backends)?;
    match &args.out {
        Some(path) => {
            run.write(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        }
        None => emit(None, &run.jsonl())?,
    }
    let c = run.manifest.counts;
    eprintln!(
        "sentences={} keyword={} context={} answers={} questions={} skipped={}",
        c.sentences, c.keyword_filtered, c.context_selected, c.answer_selected, c.questions, c.skipped
    );
    Ok(())
}

fn stats(args: StatsArgs) -> CliResult {
    let questions = load_questions(&args.questions)?;
    let ids: Vec<String> = if !args.book_id.is_empty() {
        if args.book_id.len() != args.book.len() {
            return Err(usage("give one --book-id per --book"));
        }
        args.book_id.clone()
    } else if args.book.len() == 1 {
        let mut found: Vec<&str> = questions.iter().map(|q| q.book_id.as_str()).collect();
        found.dedup();
        match found.as_slice() {
            [one] => vec![one.to_string()],
            _ => vec![stem(&args.book[0])],
        }
    } else {
        args.book.iter().map(|p| stem(p)).collect()
    };
    let books = args
        .book
        .iter()
        .zip(&ids)
        .map(|(path, id)| load_book(path, id))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Textbook> = books.iter().collect();
    let stats = generation_stats(&questions, &refs)?;
    print!("{stats}");
    Ok(())
}

fn sample(args: SampleArgs) -> CliResult {
    let groups = group_by_book(load_questions(&args.questions)?);
    let picked: Vec<QuestionRecord> = stratified_sample(&groups, args.per_book, args.seed)?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    emit(args.out.as_deref(), &write_question_jsonl(&picked))
}

fn sweep(args: SweepArgs) -> CliResult {
    let (book, index) = args.input.load()?;
    let config = args
        .input
        .pipeline_config(None, SelectionConfig::default().threshold, 0)?;
    let backends = Backends::from_config(&config)?;
    let points = threshold_sweep(&book, &index, &backends, &args.thresholds)?;
    let text: String = points.iter().map(|(t, n)| format!("{t}\t{n}\n")).collect();
    emit(None, &text)
}

fn load_annotations(args: &AgreeArgs, scheme: &AnnotationScheme) -> Result<Vec<AnnotationRecord>, Failure> {
    let text = read(&args.annotations)?;
    let located = |e: defquest::evalkit::EvalError| data(format!("{}: {e}", args.annotations.display()));
    match &args.mapping {
        Some(path) => {
            let mapping: ImportMapping =
                serde_json::from_str(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            import_csv(&text, &mapping, scheme).map_err(located)
        }
        None => read_annotations_jsonl(&text).map_err(located),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

fn agree(args: AgreeArgs) -> CliResult {
    let scheme = match &args.scheme {
        Some(path) => {
            AnnotationScheme::from_json(&read(path)?).map_err(|e| data(format!("{}: {e}", path.display())))?
        }
        None => AnnotationScheme::default(),
    };
    let records = load_annotations(&args, &scheme)?;
    let bootstrap = args.bootstrap.map(|resamples| BootstrapConfig {
        resamples,
        sample_size: args.n,
        seed: args.seed,
        ..BootstrapConfig::default()
    });
    let report =
        agreement_report(&records, &scheme, args.item.as_deref(), bootstrap.as_ref()).map_err(|e| match e {
            defquest::evalkit::EvalError::UnknownItem(_) | defquest::evalkit::EvalError::Bootstrap(_) => usage(e),
            e => data(e),
        })?;
    if args.json {
        return emit(None, &(serde_json::to_string_pretty(&report).map_err(data)? + "\n"));
    }
    let mut text = String::from("item\tN\tpercent_agreement\talpha\tci\n");
    for r in &report {
        let ci =
            r.ci.map_or_else(|| "-".into(), |(lo, hi)| format!("[{lo:.3}, {hi:.3}]"));
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{ci}\n",
            r.item,
            r.applicable,
            fmt_opt(r.percent_agreement),
            fmt_opt(r.alpha)
        ));
    }
    emit(None, &text)
}

fn roc(args: RocArgs) -> CliResult {
    let scores =
        read_labeled_scores(&read(&args.scores)?).map_err(|e| data(format!("{}: {e}", args.scores.display())))?;
    let points = roc_points(&scores).map_err(data)?;
    let mut text = String::from("threshold,tpr,fpr\n");
    for p in &points {
        text.push_str(&format!("{},{},{}\n", p.threshold, p.tpr, p.fpr));
    }
    emit(None, &text)?;
    eprintln!("auc={:.4}", auc(&points));
    Ok(())
}

fn run_server(args: ServeArgs) -> CliResult {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let store = Store::open_with(&args.data_dir, AnnotationScheme::default(), args.snapshot_every)
        .map_err(|e| data(format!("{}: {e}", args.data_dir.display())))?;
    let options = ApiOptions {
        generate_timeout: std::time::Duration::from_secs(args.generate_timeout),
        ui_dir: args.ui_dir,
        cors_origin: args.cors_origin,
    };
    if let Some(origin) = &options.cors_origin {
        check_origin(origin)?;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(service)?;
    runtime
        .block_on(serve((args.host, args.port).into(), store, options))
        .map_err(service)
}

fn check_origin(origin: &str) -> CliResult {
    if origin.is_empty() || !origin.chars().all(|c| c.is_ascii_graphic()) {
        return Err(usage(format!("invalid CORS origin {origin:?}")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Stats(a) => stats(a),
        Command::Sample(a) => sample(a),
        Command::Sweep(a) => sweep(a),
        Command::Agree(a) => agree(a),
        Command::Roc(a) => roc(a),
        Command::Serve(a) => run_server(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("defquest: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
