//! Command-line interface to the recommendation pipeline.
//!
//! Offline stages (prepare, embed, cluster, infer, train, eval) read and
//! write artifacts in a shared working directory; `run` chains them all.
//! `serve` exposes a trained checkpoint over HTTP and `synth` generates a
//! topical benchmark dataset. Settings come from a TOML config file with
//! per-flag overrides on top.

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};

use eimf_core::esim::{HttpLlmClient, LlmClient, MockLlm};
use eimf_core::metrics::EvalReport;
use eimf_core::pipeline::{
    load_index, run_all, run_cluster, run_embed, run_eval, run_infer, run_prepare, run_train,
    PipelineConfig, Workspace,
};
use eimf_core::retrieval::{start_server, ServeOptions};
use eimf_core::synth::{generate, write_raw, SynthConfig};

/// Environment variable holding the bearer token for remote language
/// models.
const API_KEY_VAR: &str = "EIMF_LLM_API_KEY";

#[derive(Parser)]
#[command(name = "eimf", version, about = "Multi-interest sequential recommendation pipeline")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v debug, -vv trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Model and pipeline settings that may override the config file.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Optimization steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Seed for initialization, shuffling, and splitting.
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the auxiliary losses (0 disables them).
    #[arg(long)]
    gamma: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Examples per optimization step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Maximum history length fed to the model.
    #[arg(long)]
    l_max: Option<usize>,
    /// Id embedding width.
    #[arg(long)]
    d: Option<usize>,
    /// Text embedding width.
    #[arg(long)]
    d_t: Option<usize>,
    /// Interest extractor hidden width.
    #[arg(long)]
    d_a: Option<usize>,
    /// Behavioral interest count.
    #[arg(long)]
    m_im: Option<usize>,
    /// Semantic interest cap.
    #[arg(long)]
    m_ex: Option<usize>,
    /// Clustering exemplar preference.
    #[arg(long, allow_negative_numbers = true)]
    preference: Option<f64>,
    /// Clustering message damping.
    #[arg(long)]
    damping: Option<f64>,
    /// Learned projections in semantic self-attention (false attends over
    /// raw text vectors).
    #[arg(long)]
    semantic_projections: Option<bool>,
    /// Seed of the built-in text encoder.
    #[arg(long)]
    text_seed: Option<u64>,
    /// Evaluation cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.steps {
            cfg.train.max_steps = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.gamma {
            cfg.train.loss.gamma = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.l_max {
            cfg.train.l_max = v;
        }
        if let Some(v) = self.d {
            cfg.train.d = v;
        }
        if let Some(v) = self.d_t {
            cfg.train.d_t = v;
        }
        if let Some(v) = self.d_a {
            cfg.train.d_a = v;
        }
        if let Some(v) = self.m_im {
            cfg.train.m_im = v;
        }
        if let Some(v) = self.m_ex {
            cfg.train.m_ex = v;
        }
        if let Some(v) = self.preference {
            cfg.train.preference = v;
        }
        if let Some(v) = self.damping {
            cfg.train.damping = v;
        }
        if let Some(v) = self.semantic_projections {
            cfg.train.semantic_projections = v;
        }
        if let Some(v) = self.text_seed {
            cfg.text_seed = v;
        }
        if let Some(v) = &self.ks {
            cfg.ks = v.clone();
        }
    }
}

/// Language model selection for the inference stage.
#[derive(Args, Clone)]
struct LlmArgs {
    /// Use the offline mock language model.
    #[arg(long)]
    mock: bool,
    /// Chat-completions endpoint URL.
    #[arg(long, conflicts_with = "mock")]
    endpoint: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, requires = "endpoint")]
    model: Option<String>,
}

impl LlmArgs {
    fn client(&self) -> Result<Box<dyn LlmClient>> {
        if self.mock {
            return Ok(Box::new(MockLlm));
        }
        let Some(endpoint) = &self.endpoint else {
            bail!("interest inference needs a language model: pass --mock or --endpoint URL");
        };
        let model = self
            .model
            .as_deref()
            .context("--model is required with --endpoint")?;
        let api_key = std::env::var(API_KEY_VAR).ok();
        Ok(Box::new(HttpLlmClient::new(endpoint, model, api_key)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic topical dataset.
    Synth {
        /// Directory for interactions.tsv and catalog.jsonl.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 8)]
        topics: usize,
        #[arg(long, default_value_t = 10)]
        min_len: usize,
        #[arg(long, default_value_t = 18)]
        max_len: usize,
        /// Fraction of interactions drawn off-topic.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Within-topic popularity skew (0 = uniform).
        #[arg(long, default_value_t = 0.0)]
        popularity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Ingest raw interactions and split users.
    Prepare {
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        /// Working directory for pipeline artifacts.
        #[arg(long)]
        work: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Embed training user histories.
    Embed {
        #[arg(long)]
        work: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Cluster training users and pick exemplars.
    Cluster {
        #[arg(long)]
        work: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Infer exemplar interests with a language model.
    Infer {
        #[arg(long)]
        work: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train the model and write a checkpoint.
    Train {
        #[arg(long)]
        work: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate the checkpoint on held-out users.
    Eval {
        #[arg(long)]
        work: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every offline stage in order.
    Run {
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        work: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Serve retrieval over HTTP from a checkpoint.
    Serve {
        #[arg(long)]
        work: PathBuf,
        /// Bind address.
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Drop items already present in the query sequence.
        #[arg(long)]
        exclude_seen: bool,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: PipelineConfig =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    Ok(cfg)
}

fn effective_config(
    path: Option<&PathBuf>,
    overrides: &Overrides,
) -> Result<PipelineConfig> {
    let mut cfg = load_config(path)?;
    overrides.apply(&mut cfg);
    cfg.validate().context("invalid config")?;
    Ok(cfg)
}

fn print_report(report: &EvalReport) {
    println!(
        "evaluated {} users ({} skipped)",
        report.users_evaluated, report.users_skipped
    );
    for (i, &k) in report.ks.iter().enumerate() {
        println!(
            "k={k}: recall {:.4}, ndcg {:.4}, hit rate {:.4}",
            report.recall[i], report.ndcg[i], report.hit_rate[i]
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            users,
            items,
            topics,
            min_len,
            max_len,
            noise,
            popularity,
            seed,
        } => {
            let cfg = SynthConfig {
                n_users: users,
                n_items: items,
                n_topics: topics,
                min_len,
                max_len,
                noise,
                popularity_exponent: popularity,
                seed,
            };
            let dataset = generate(&cfg)?;
            write_raw(&dataset, &out)?;
            println!(
                "wrote {} users over {} items to {}",
                dataset.users.len(),
                dataset.catalog.len(),
                out.display()
            );
        }
        Command::Prepare {
            interactions,
            catalog,
            work,
            overrides,
        } => {
            let cfg = effective_config(cli.config.as_ref(), &overrides)?;
            let ws = Workspace::new(work);
            let summary = run_prepare(&interactions, &catalog, &ws, cfg.train.seed)?;
            println!(
                "prepared {} users over {} items (train {}, valid {}, test {})",
                summary.n_users, summary.n_items, summary.n_train, summary.n_valid, summary.n_test
            );
        }
        Command::Embed { work, overrides } => {
            let cfg = effective_config(cli.config.as_ref(), &overrides)?;
            let ws = Workspace::new(work);
            let n = run_embed(&ws, &cfg)?;
            println!("embedded {n} training users");
        }
        Command::Cluster { work, overrides } => {
            let cfg = effective_config(cli.config.as_ref(), &overrides)?;
            let ws = Workspace::new(work);
            let result = run_cluster(&ws, &cfg)?;
            println!(
                "{} clusters over {} users ({} in {} iterations)",
                result.cluster_count(),
                result.assignment.len(),
                if result.converged { "converged" } else { "did not converge" },
                result.iterations
            );
        }
        Command::Infer {
            work,
            llm,
            overrides,
        } => {
            let cfg = effective_config(cli.config.as_ref(), &overrides)?;
            let client = llm.client()?;
            let ws = Workspace::new(work);
            let interests = run_infer(&ws, client.as_ref(), &cfg)?;
            println!("inferred interests for {} exemplars", interests.len());
        }
        Command::Train { work, overrides } => {
            let cfg = effective_config(cli.config.as_ref(), &overrides)?;
            let ws = Workspace::new(work);
            let result = run_train(&ws, &cfg)?;
            if let Some(last) = result.losses.last() {
                println!(
                    "trained {} steps, final loss {:.4} (rec {:.4}, sem {:.4}, align {:.4})",
                    result.losses.len(),
                    last.total,
                    last.rec,
                    last.semantic,
                    last.alignment
                );
            } else {
                println!("trained 0 steps; wrote the initial parameters");
            }
            println!("checkpoint at {}", ws.checkpoint_dir().display());
        }
        Command::Eval { work, overrides } => {
            let cfg = effective_config(cli.config.as_ref(), &overrides)?;
            let ws = Workspace::new(work);
            let report = run_eval(&ws, &cfg)?;
            print_report(&report);
        }
        Command::Run {
            interactions,
            catalog,
            work,
            llm,
            overrides,
        } => {
            let cfg = effective_config(cli.config.as_ref(), &overrides)?;
            let needs_llm = cfg.train.loss.gamma > 0.0;
            let client: Box<dyn LlmClient> = if needs_llm {
                llm.client()?
            } else {
                Box::new(MockLlm)
            };
            let ws = Workspace::new(work);
            let report = run_all(&interactions, &catalog, &ws, &cfg, client.as_ref())?;
            print_report(&report);
        }
        Command::Serve {
            work,
            addr,
            exclude_seen,
        } => {
            let ws = Workspace::new(work);
            let index = load_index(&ws)?;
            println!("index over {} items", index.len());
            let server = start_server(index, addr, ServeOptions { exclude_seen })?;
            println!("listening on http://{}", server.addr());
            server.wait();
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
