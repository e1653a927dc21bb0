use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use unlearn_probe::harness::{
    self, build_toy_pair, emit_report, report_csv, report_json, toy_train_file, AuditConfig,
    HarnessError, ReportFormat, ReportSummary, SweepGrid,
};
use unlearn_probe::provider::serve_provider;
use unlearn_probe::types::{DEFAULT_GAMMA, DEFAULT_W};

/// Reconstruct forgotten text from pre-/post-unlearning model logits.
#[derive(Parser, Debug)]
#[command(name = "unlearn-probe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Guided extraction plus pre-only and post-only baselines.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_W)]
        w: f64,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
    },
    /// Guided extraction over a grid of w and gamma values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Guidance scale (repeatable).
        #[arg(long = "w")]
        w: Vec<f64>,
        /// Filter strictness (repeatable).
        #[arg(long = "gamma")]
        gamma: Vec<f64>,
    },
    /// Plain greedy decoding of the pre model (and the post model if given).
    Baseline {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        pre: String,
        #[arg(long)]
        post: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Train an n-gram model from a text file, one sentence per line.
    ToyTrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        k: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build pre (retain + forget) and post (retain only) n-gram models.
    ToyPair {
        #[arg(long)]
        retain: PathBuf,
        #[arg(long)]
        forget: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        k: f64,
        /// Output directory for pre.json, post.json and forget.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a provider over the HTTP wire protocol.
    Serve {
        /// Provider URI (toy:<path> or http(s)://...).
        #[arg(long)]
        provider: String,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value_t = 0)]
        cache_size: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    dataset: PathBuf,
    /// Pre-unlearning provider URI.
    #[arg(long)]
    pre: String,
    /// Post-unlearning provider URI.
    #[arg(long)]
    post: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct Output {
    /// A-ESR threshold (repeatable; default 0.9 and 1.0).
    #[arg(long = "tau")]
    tau: Vec<f64>,
    /// Cap on generated tokens; defaults to each record's target length.
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// LRU entries per provider; 0 disables caching.
    #[arg(long, default_value_t = 0)]
    cache_size: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

impl Output {
    fn config(&self, w: f64, gamma: f64) -> AuditConfig {
        let defaults = AuditConfig::default();
        AuditConfig {
            w,
            gamma,
            max_new_tokens: self.max_new_tokens,
            tau_list: if self.tau.is_empty() {
                defaults.tau_list
            } else {
                self.tau.clone()
            },
            workers: self.workers,
            cache_size: self.cache_size,
        }
    }

    fn write(&self, summary: &ReportSummary) -> Result<(), HarnessError> {
        match &self.out {
            Some(path) => emit_report(summary, self.format.into(), path),
            None => {
                match self.format {
                    Format::Json => print!("{}", report_json(summary)),
                    Format::Csv => print!("{}", report_csv(summary)),
                }
                Ok(())
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Extract { common, w, gamma } => {
            let cfg = common.output.config(w, gamma);
            let summary = harness::run_extract(&common.dataset, &common.pre, &common.post, &cfg)?;
            common.output.write(&summary)
        }
        Command::Sweep { common, w, gamma } => {
            let grid = SweepGrid {
                w_values: w,
                gamma_values: gamma,
            };
            grid.validate()?;
            let cfg = common.output.config(grid.w_values[0], grid.gamma_values[0]);
            let summary =
                harness::run_sweep(&common.dataset, &common.pre, &common.post, &grid, &cfg)?;
            common.output.write(&summary)
        }
        Command::Baseline {
            dataset,
            pre,
            post,
            output,
        } => {
            let cfg = output.config(DEFAULT_W, DEFAULT_GAMMA);
            let summary = harness::run_baseline(&dataset, &pre, post.as_deref(), &cfg)?;
            output.write(&summary)
        }
        Command::ToyTrain {
            corpus,
            order,
            k,
            out,
        } => {
            let model = toy_train_file(&corpus, order, k, &out)?;
            println!("wrote {} ({} tokens)", out.display(), model.vocab().len());
            Ok(())
        }
        Command::ToyPair {
            retain,
            forget,
            order,
            k,
            out,
        } => {
            let pair = build_toy_pair(&retain, &forget, order, k, &out)?;
            for p in [&pair.pre_model, &pair.post_model, &pair.forget_dataset] {
                println!("wrote {}", display(p));
            }
            Ok(())
        }
        Command::Serve {
            provider,
            bind,
            cache_size,
        } => {
            let handle = harness::open_provider(&provider, cache_size)?;
            let server = serve_provider(handle, bind.as_str())?;
            println!("listening on {}", server.url());
            server.wait()?;
            Ok(())
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNLEARN_PROBE_LOG", "warn"))
        .init();
    // Usage errors are validation errors (exit 1); 2 is reserved for transport.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
