//! Run directories, config resolution and the exit-code mapping.

use std::fmt::Display;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use graspforge::baselines::BaselineError;
use graspforge::collect::CollectError;
use graspforge::config::{ConfigError, RunConfig};
use graspforge::curriculum::StageError;
use graspforge::eval::EvalError;
use graspforge::learner::{LearnError, Network};
use graspforge::pipeline::PipelineError;

/// Exit status 2 for configuration problems, 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn runtime(e: impl Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            other => Failure::runtime(other),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::runtime(e)
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    CollectError,
    LearnError,
    StageError,
    EvalError,
    BaselineError,
    csv::Error,
    serde_json::Error
);

/// Flags shared by every subcommand.
#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; defaults to `runs/<subcommand>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 uses every core); overrides the config.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Clear a non-empty run directory instead of refusing.
    #[arg(long)]
    pub force: bool,
}

impl Common {
    /// Config file (or defaults), then `GRASPFORGE_` variables, then flags.
    pub fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::from_env()?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// An output directory holding a config snapshot, a log and artifacts.
pub struct RunDir {
    pub root: PathBuf,
    log: Vec<String>,
}

impl RunDir {
    pub fn create(path: &Path, force: bool, cfg: &RunConfig) -> Result<Self, Failure> {
        if path.exists() {
            let occupied = fs::read_dir(path)?.next().is_some();
            if occupied && !force {
                return Err(Failure::Runtime(format!(
                    "{} is not empty; pass --force to replace its contents",
                    path.display()
                )));
            }
            if occupied {
                fs::remove_dir_all(path)?;
            }
        }
        fs::create_dir_all(path)?;
        fs::write(path.join("config.toml"), cfg.to_toml())?;
        Ok(Self {
            root: path.to_path_buf(),
            log: Vec::new(),
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn file(&self, rel: impl AsRef<Path>) -> Result<BufWriter<fs::File>, Failure> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(fs::File::create(p)?))
    }

    pub fn write(&self, rel: impl AsRef<Path>, text: &str) -> Result<(), Failure> {
        let mut f = self.file(rel)?;
        f.write_all(text.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn json<T: serde::Serialize>(&self, rel: impl AsRef<Path>, value: &T) -> Result<(), Failure> {
        self.write(rel, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn save_model(&self, rel: impl AsRef<Path>, net: &Network) -> Result<(), Failure> {
        let mut f = self.file(rel)?;
        net.save(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn log(&mut self, line: impl Into<String>) {
        let line = line.into();
        eprintln!("{line}");
        self.log.push(line);
    }

    /// Writes `log.txt` and prints the one-line summary.
    pub fn finish(self, summary: &str) -> Result<(), Failure> {
        let mut text = self.log.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(summary);
        text.push('\n');
        self.write("log.txt", &text)?;
        println!("{summary}");
        Ok(())
    }
}

pub fn load_model(path: &Path) -> Result<Network, Failure> {
    let f = fs::File::open(path).map_err(|e| Failure::Runtime(format!("cannot open {}: {e}", path.display())))?;
    Ok(Network::load(BufReader::new(f))?)
}
