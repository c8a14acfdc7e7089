use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod experiment;
mod report;
mod settings;

use settings::Settings;

/// Metadata compliance and unification with pluggable text embeddings.
#[derive(Debug, Parser)]
#[command(name = "metacurate", version)]
struct Cli {
    /// TOML file of settings; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Common {
    /// one-hot, tfidf-word, char-ngram or remote.
    #[arg(long)]
    provider: Option<String>,
    /// Directory for the persistent embedding cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ngram_min: Option<usize>,
    #[arg(long)]
    ngram_max: Option<usize>,
    #[arg(long)]
    ngram_dim: Option<usize>,
    /// Remote embedding endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Remote model name.
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the remote bearer token.
    #[arg(long)]
    token_env: Option<String>,
    /// Input format; guessed from the file extension when absent.
    #[arg(long)]
    format: Option<String>,
    /// Render human-readable tables instead of JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Map query terms onto their closest specification terms.
    Comply {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        /// Embed specification terms together with their definitions.
        #[arg(long)]
        use_definitions: bool,
        /// Report file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Cluster terms with k-means, one report per k.
    Unify {
        #[arg(long)]
        terms: PathBuf,
        /// Comma-separated cluster counts, e.g. 100,200,500.
        #[arg(long)]
        k: Option<String>,
        /// Directory for `unify_k<k>.json` and `unify_k<k>.csv`; standard output when absent.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a noisy query set derived from a specification.
    Perturb {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        substitutions: Option<usize>,
        /// Noisy copies per specification term.
        #[arg(long)]
        repeat: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Project term embeddings to two dimensions.
    Project {
        #[arg(long)]
        terms: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Pca)]
        method: Method,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Colour points by a k-means clustering with this many clusters.
        #[arg(long)]
        k: Option<usize>,
        /// `.svg` writes a scatter plot, anything else CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run the compliance and unification experiments on the bundled data.
    Experiment {
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated providers; all local providers by default.
        #[arg(long)]
        providers: Option<String>,
        /// k sweep for the synthetic synonym collection.
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        substitutions: Option<usize>,
        #[arg(long)]
        repeat: Option<usize>,
        /// Synonym groups in the synthetic collection.
        #[arg(long, default_value_t = 300)]
        groups: usize,
        /// Surface variants per synonym group.
        #[arg(long, default_value_t = 5)]
        per_group: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Pca,
    Tsne,
}

/// A command failure and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Provider(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Provider(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Provider(m) => m,
        }
    }
}

impl From<metacurate_core::Error> for Failure {
    fn from(e: metacurate_core::Error) -> Self {
        if e.is_provider_failure() {
            Failure::Provider(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl Common {
    fn settings(&self) -> Settings {
        Settings {
            provider: self.provider.clone(),
            cache_dir: self.cache_dir.clone(),
            seed: self.seed,
            ngram_min: self.ngram_min,
            ngram_max: self.ngram_max,
            ngram_dim: self.ngram_dim,
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            token_env: self.token_env.clone(),
            ..Default::default()
        }
    }
}

fn layered(cli_config: Option<&PathBuf>, flags: Settings) -> Result<Settings, Failure> {
    let file = match cli_config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    let env = Settings::from_env(std::env::vars())?;
    Ok(flags.over(file.over(env)))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = cli.config.as_ref();
    match cli.command {
        Command::Comply {
            spec,
            queries,
            top_k,
            use_definitions,
            out,
            common,
        } => {
            let flags = Settings {
                top_k,
                use_definitions: use_definitions.then_some(true),
                ..common.settings()
            };
            let s = layered(config, flags)?;
            commands::comply(&s, &common.io(), &spec, &queries, out.as_deref())
        }
        Command::Unify {
            terms,
            k,
            out_dir,
            common,
        } => {
            let s = layered(config, Settings { k, ..common.settings() })?;
            commands::unify(&s, &common.io(), &terms, out_dir.as_deref())
        }
        Command::Perturb {
            spec,
            substitutions,
            repeat,
            out,
            common,
        } => {
            let flags = Settings {
                substitutions,
                repeat,
                ..common.settings()
            };
            let s = layered(config, flags)?;
            commands::perturb(&s, &common.io(), &spec, out.as_deref())
        }
        Command::Project {
            terms,
            method,
            perplexity,
            iterations,
            learning_rate,
            k,
            out,
            svg,
            common,
        } => {
            let flags = Settings {
                perplexity,
                iterations,
                learning_rate,
                ..common.settings()
            };
            let s = layered(config, flags)?;
            let svg = svg || out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "svg"));
            commands::project(&s, &common.io(), &terms, method == Method::Tsne, k, svg, out.as_deref())
        }
        Command::Experiment {
            out_dir,
            providers,
            k,
            substitutions,
            repeat,
            groups,
            per_group,
            common,
        } => {
            let flags = Settings {
                k,
                substitutions,
                repeat,
                ..common.settings()
            };
            let s = layered(config, flags)?;
            let plan = experiment::Plan {
                providers: providers.as_deref(),
                groups,
                per_group,
                pretty: common.pretty,
            };
            experiment::run(&s, &plan, &out_dir)
        }
    }
}

impl Common {
    fn io(&self) -> commands::Io {
        commands::Io {
            format: self.format.clone(),
            pretty: self.pretty,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
