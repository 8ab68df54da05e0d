//! Command-line entry points and the annotation HTTP service.

pub mod server;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use befund_core::annotation::AnnotationService;
use befund_core::io::write_mentions;
use befund_core::lexicon::LexiconStore;
use befund_core::{
    evaluate, label_batch, load_lexicons, read_corpus, read_labels, validate_lexicons, write_labels,
    BootstrapConfig, CutoffRadius, GoldAnnotation, LabelRow,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "befund", version, about = "Rule-based CheXpert labeler for German chest X-ray reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label a JSON-lines corpus and write a CheXpert-style CSV.
    Label(LabelArgs),
    /// Score predicted labels against gold annotations.
    Eval(EvalArgs),
    /// Lexicon maintenance.
    Lexicon {
        #[command(subcommand)]
        command: LexiconCommand,
    },
    /// Run the annotation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Tokens inspected on each side of a mention.
    #[arg(long, default_value_t = CutoffRadius::DEFAULT.get())]
    pub radius: usize,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write per-report mention provenance as JSON lines.
    #[arg(long)]
    pub mentions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Bootstrap resamples for 95% confidence intervals; 0 disables them.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum LexiconCommand {
    /// Load a lexicon directory and report diagnostics.
    Validate {
        #[arg(long)]
        lexicon: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Bind address. Reports stay on this machine unless this is changed.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Directory with the built annotation UI, served at `/`.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    #[arg(long, default_value_t = CutoffRadius::DEFAULT.get())]
    pub radius: usize,
}

/// Writes to stdout; a closed pipe (`befund eval ... | head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Parses `argv` and runs the command. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

pub fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Label(args) => label(args),
        Command::Eval(args) => eval(args),
        Command::Lexicon {
            command: LexiconCommand::Validate { lexicon },
        } => validate(lexicon),
        Command::Serve(args) => serve(args),
    }
}

fn label(args: LabelArgs) -> anyhow::Result<()> {
    let radius = CutoffRadius::new(args.radius)?;
    let threads = args.threads.unwrap_or_else(default_threads);
    let loaded = load_lexicons(&args.lexicon)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    let corpus = read_corpus(&args.corpus)?;
    let started = Instant::now();
    let vectors = label_batch(&corpus, &loaded.lexicons, radius, threads)?;
    log::info!("labeled {} reports in {:.2?} on {threads} threads", vectors.len(), started.elapsed());
    let rows: Vec<LabelRow> = vectors.iter().map(LabelRow::from).collect();
    write_labels(&rows, &args.out)?;
    if let Some(path) = &args.mentions {
        write_mentions(&vectors, path)?;
    }
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let pred = read_labels(&args.pred).with_context(|| format!("reading {}", args.pred.display()))?;
    let gold: Vec<GoldAnnotation> = read_labels(&args.gold)
        .with_context(|| format!("reading {}", args.gold.display()))?
        .into_iter()
        .map(GoldAnnotation::from)
        .collect();
    let bootstrap = (args.bootstrap > 0).then(|| BootstrapConfig {
        workers: args.threads.unwrap_or_else(default_threads),
        ..BootstrapConfig::new(args.bootstrap, args.seed)
    });
    let evaluation = evaluate(&pred, &gold, bootstrap.as_ref())?;
    let json = serde_json::to_string_pretty(&evaluation)?;
    std::fs::write(&args.out, json + "\n").with_context(|| format!("writing {}", args.out.display()))?;
    emit(&evaluation.to_string())
}

fn validate(root: PathBuf) -> anyhow::Result<()> {
    let loaded = load_lexicons(&root)?;
    let lex = &loaded.lexicons;
    let mut diagnostics = loaded.warnings;
    diagnostics.extend(validate_lexicons(&lex.phrases, &lex.triggers));
    let mut out: String = diagnostics.iter().map(|d| format!("warning: {d}\n")).collect();
    out += &format!(
        "{} phrases, {} triggers, {} abbreviations, {} warnings\n",
        lex.phrases.len(),
        lex.triggers.len(),
        lex.abbreviations.len(),
        diagnostics.len()
    );
    emit(&out)
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let radius = CutoffRadius::new(args.radius)?;
    let (lexicons, warnings) = LexiconStore::open(&args.lexicon)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let corpus = read_corpus(&args.corpus)?;
    let service = Arc::new(AnnotationService::new(corpus, lexicons, &args.store, radius)?);
    let app = server::router(service, args.ui.as_deref());
    let addr = SocketAddr::new(args.host, args.port);

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("annotation service listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
