mod config;

use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use claimchat_core::channels::console::{console_loop, ConsoleChannel};
use claimchat_core::channels::webhook::{self, WebhookState};
use claimchat_core::claimbot::{list_records, read_source, BotSources, ClaimBot, DirSink};
use claimchat_core::nlu::Language;
use claimchat_core::replay::{load_suite, Mode, Runner};
use claimchat_core::respond::TemplateFile;
use claimchat_core::FileStore;

use config::{FileConfig, Overrides, Settings};

#[derive(Debug, Parser)]
#[command(name = "claimchat", version, about = "Phone damage claim chatbot")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Config file (default: ./claimchat.toml if present)
    #[arg(long, global = true, env = "CLAIMCHAT_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "CLAIMCHAT_LANGUAGE")]
    language: Option<Language>,
    /// Directory with catalog_<lang>.toml, templates_<lang>.toml and phones.toml
    #[arg(long, global = true, env = "CLAIMCHAT_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "CLAIMCHAT_STATE_DIR")]
    state_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "CLAIMCHAT_CLAIMS_DIR")]
    claims_dir: Option<PathBuf>,
    /// Seed for picking response variants
    #[arg(long, global = true, env = "CLAIMCHAT_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Talk to the bot on the terminal
    Chat {
        #[arg(long, default_value = "local")]
        user: String,
    },
    /// Run the webhook server
    Serve {
        #[arg(long, env = "CLAIMCHAT_LISTEN")]
        listen: Option<SocketAddr>,
        /// Template reload poll interval
        #[arg(long, env = "CLAIMCHAT_RELOAD_MS")]
        reload_ms: Option<u64>,
    },
    /// Replay transcript scripts against the bot
    Replay {
        #[arg(long, default_value = "fixtures/personas")]
        suite: PathBuf,
        #[arg(long, default_value = "predicate")]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        report: ReportFormat,
        /// Rewrite the golden transcripts instead of checking
        #[arg(long)]
        record: bool,
    },
    /// Check data files (and optionally scripts) without running anything
    Validate {
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Submitted claims
    Claims {
        #[command(subcommand)]
        command: ClaimsCommand,
    },
}

#[derive(Debug, Subcommand)]
enum ClaimsCommand {
    List {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

/// Exit 1 for failed work, 2 for bad setup.
#[derive(Debug)]
enum Failure {
    Run(String),
    Usage(String),
}

impl Failure {
    fn run(e: impl std::fmt::Display) -> Self {
        Failure::Run(e.to_string())
    }

    fn usage(e: impl std::fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (msg, code) = match f {
                Failure::Run(m) => (m, 1),
                Failure::Usage(m) => (m, 2),
            };
            eprintln!("claimchat: error: {}", msg.replace('\n', " "));
            ExitCode::from(code)
        }
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Failure::run(e)),
        _ => Ok(()),
    }
}

fn settings(global: &GlobalArgs, listen: Option<SocketAddr>, reload_ms: Option<u64>) -> Result<Settings, Failure> {
    let file = FileConfig::load(global.config.as_deref()).map_err(Failure::usage)?;
    let cli = Overrides {
        language: global.language,
        data_dir: global.data_dir.clone(),
        state_dir: global.state_dir.clone(),
        claims_dir: global.claims_dir.clone(),
        seed: global.seed,
        listen,
        reload_ms,
    };
    Settings::resolve(cli, file).map_err(Failure::usage)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Chat { user } => chat(&settings(&cli.global, None, None)?, &user),
        Command::Serve { listen, reload_ms } => serve(settings(&cli.global, listen, reload_ms)?),
        Command::Replay {
            suite,
            mode,
            report,
            record,
        } => replay(&settings(&cli.global, None, None)?, &suite, mode, report, record),
        Command::Validate { suite } => validate(&settings(&cli.global, None, None)?, suite.as_deref()),
        Command::Claims {
            command: ClaimsCommand::List { json },
        } => claims_list(&settings(&cli.global, None, None)?, json),
    }
}

fn sources(data_dir: Option<&Path>, language: Language) -> Result<BotSources, Failure> {
    let Some(dir) = data_dir else {
        return Ok(BotSources::builtin(language));
    };
    let read = |name: String| read_source(&dir.join(name)).map_err(Failure::usage);
    Ok(BotSources {
        catalog: read(format!("catalog_{language}.toml"))?,
        templates: read(format!("templates_{language}.toml"))?,
        phones: read("phones.toml".into())?,
    })
}

fn load_bot(s: &Settings, language: Language) -> Result<ClaimBot, Failure> {
    ClaimBot::from_sources(&sources(s.data_dir.as_deref(), language)?).map_err(Failure::usage)
}

/// Languages with data available: both for the built-in files, otherwise
/// whichever catalogs the data dir has.
fn languages(s: &Settings) -> Result<Vec<Language>, Failure> {
    let all = [Language::De, Language::En];
    let Some(dir) = &s.data_dir else {
        return Ok(all.to_vec());
    };
    let found: Vec<Language> = all
        .into_iter()
        .filter(|l| dir.join(format!("catalog_{l}.toml")).is_file())
        .collect();
    if found.is_empty() {
        return Err(Failure::usage(format!("{}: no catalog_<lang>.toml files", dir.display())));
    }
    Ok(found)
}

fn chat(s: &Settings, user: &str) -> Result<(), Failure> {
    let bot = load_bot(s, s.language)?;
    let store = FileStore::open(&s.state_dir).map_err(Failure::usage)?;
    let sink = DirSink::open(&s.claims_dir).map_err(Failure::usage)?;
    let engine = bot.engine(Arc::new(sink), s.seed);
    let channel = ConsoleChannel::new(user).map_err(Failure::usage)?;
    emit("(type /quit to leave, /photo <uri> to send a picture, a number to pick an option)\n")?;
    let stdin = io::stdin();
    let summary = console_loop(&engine, &store, &channel, stdin.lock(), io::stdout().lock(), Utc::now)
        .map_err(Failure::run)?;
    if summary.store_errors > 0 {
        return Err(Failure::Run(format!("{} messages could not be saved", summary.store_errors)));
    }
    Ok(())
}

fn serve(s: Settings) -> Result<(), Failure> {
    let bot = load_bot(&s, s.language)?;
    let store = FileStore::open(&s.state_dir).map_err(Failure::usage)?;
    let sink = DirSink::open(&s.claims_dir).map_err(Failure::usage)?;
    let engine = Arc::new(bot.engine(Arc::new(sink), s.seed));
    let template_file = match s.templates_path() {
        Some(p) => Some(TemplateFile::open(p).map_err(Failure::usage)?.0),
        None => None,
    };
    let rt = tokio::runtime::Runtime::new().map_err(Failure::run)?;
    rt.block_on(async move {
        let listener = webhook::bind(s.listen)
            .await
            .map_err(|e| Failure::Usage(format!("bind {}: {e}", s.listen)))?;
        let addr = listener.local_addr().map_err(Failure::run)?;
        if let Some(file) = template_file {
            webhook::spawn_template_reload(Arc::clone(&engine), file, s.reload);
        }
        emit(&format!("listening on http://{addr}\n"))?;
        io::stdout().flush().ok();
        tracing::info!(%addr, language = %s.language, "webhook up");
        let state = WebhookState::new(engine, Arc::new(store));
        tokio::select! {
            r = webhook::serve(listener, state) => r.map_err(Failure::run),
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })
}

fn runner(s: &Settings) -> Result<Runner, Failure> {
    let mut r = Runner::new(s.seed);
    for l in languages(s)? {
        r = r.with_bot(load_bot(s, l)?);
    }
    Ok(r)
}

fn replay(s: &Settings, suite: &Path, mode: Mode, report: ReportFormat, record: bool) -> Result<(), Failure> {
    let entries = load_suite(suite).map_err(Failure::usage)?;
    let runner = runner(s)?;
    if record {
        runner.record(&entries).map_err(Failure::run)?;
        emit(&format!("recorded {} transcripts\n", entries.len()))?;
        return Ok(());
    }
    let result = runner.replay_suite(&entries, mode).map_err(Failure::run)?;
    match report {
        ReportFormat::Text => emit(&result.to_text())?,
        ReportFormat::Json => emit(&format!("{}\n", result.to_json()))?,
    }
    if result.passed() {
        Ok(())
    } else {
        let failed = result.scripts.iter().filter(|r| !r.passed).count();
        Err(Failure::Run(format!("{failed} of {} scripts failed", result.scripts.len())))
    }
}

fn validate(s: &Settings, suite: Option<&Path>) -> Result<(), Failure> {
    let mut errors = Vec::new();
    let langs = languages(s)?;
    for &l in &langs {
        match load_bot(s, l) {
            Ok(bot) => {
                let lint = bot.templates().lint();
                if let Some(first) = lint.first() {
                    emit(&format!("bad  {l}: {} template problems, first: {first}\n", lint.len()))?;
                    errors.push(l.to_string());
                } else {
                    emit(&format!(
                        "ok   {l}: {} states, {} templates\n",
                        bot.table().states().len(),
                        bot.templates().ids().count()
                    ))?;
                }
            }
            Err(Failure::Usage(e) | Failure::Run(e)) => {
                emit(&format!("bad  {l}: {e}\n"))?;
                errors.push(l.to_string());
            }
        }
    }
    if let Some(dir) = suite {
        match load_suite(dir) {
            Ok(entries) => {
                for e in &entries {
                    match e.script.validate() {
                        Ok(()) if langs.contains(&e.script.language) => emit(&format!("ok   {}\n", e.path.display()))?,
                        Ok(()) => {
                            emit(&format!("bad  {}: no data for language {}\n", e.path.display(), e.script.language))?;
                            errors.push(e.path.display().to_string());
                        }
                        Err(err) => {
                            emit(&format!("bad  {}: {err}\n", e.path.display()))?;
                            errors.push(e.path.display().to_string());
                        }
                    }
                }
            }
            Err(e) => {
                emit(&format!("bad  {}: {e}\n", dir.display()))?;
                errors.push(dir.display().to_string());
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("invalid: {}", errors.join(", "))))
    }
}

fn claims_list(s: &Settings, json: bool) -> Result<(), Failure> {
    let records = list_records(&s.claims_dir).map_err(Failure::run)?;
    if json {
        let text = serde_json::to_string_pretty(&records).map_err(Failure::run)?;
        return emit(&format!("{text}\n"));
    }
    if records.is_empty() {
        return emit(&format!("no claims in {}\n", s.claims_dir.display()));
    }
    let mut out = String::new();
    for r in &records {
        out.push_str(&format!(
            "{}  {}  {:<24} {:<10} {}  {}\n",
            r.claim_id,
            r.submitted_at.format("%Y-%m-%d %H:%M"),
            r.user.to_string(),
            r.claim.damage_type.as_str(),
            r.claim.phone_model,
            r.claim.damage_date
        ));
    }
    emit(&out)
}
