use std::path::{Path, PathBuf};

use bsvie::solver::{PathMode, ProjectionMode, SolverConfig, ZTimeConvention};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::problems::LinearSpec;

/// Environment variable read for the seed when neither the config file nor
/// `--seed` sets one.
pub const SEED_ENV: &str = "VOLTERRA_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemId {
    Example1,
    Example2,
    RegretFloor,
    /// Linear family described by the `linear` block of the config file.
    UserDefined,
}

impl ProblemId {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::RegretFloor => "regret-floor",
            Self::UserDefined => "user-defined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathModeArg {
    Fresh,
    Frozen,
}

impl From<PathModeArg> for PathMode {
    fn from(p: PathModeArg) -> Self {
        match p {
            PathModeArg::Fresh => PathMode::FreshPerEpoch,
            PathModeArg::Frozen => PathMode::Frozen,
        }
    }
}

/// Everything one run needs, in the flat form stored in config files and
/// `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemId,
    pub n_steps: usize,
    pub n_paths: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub path_mode: PathMode,
    pub m_eval: usize,
    pub warm_start: bool,
    pub z_time: ZTimeConvention,
    pub chunk_rows: usize,
    pub lipschitz_bound: f64,
    /// Projection schedule of the regret-floor run.
    pub projection_mode: ProjectionMode,
    /// Barrier level of the regret-floor run.
    pub floor: f64,
    pub out: PathBuf,
    /// Worker cap; `None` lets rayon decide.
    pub threads: Option<usize>,
    pub emit_paths: bool,
    pub emit_oracle: bool,
    pub emit_metrics: bool,
    pub emit_surfaces: bool,
    pub oracle_n_list: Vec<usize>,
    pub oracle_paths: usize,
    pub oracle_degree: u32,
    /// Required when `problem` is `user-defined`.
    pub linear: Option<LinearSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_solver(ProblemId::Example1, &SolverConfig::default())
    }
}

impl RunConfig {
    pub fn from_solver(problem: ProblemId, s: &SolverConfig) -> Self {
        Self {
            problem,
            n_steps: s.n_steps,
            n_paths: s.n_paths,
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            hidden_layers: s.hidden_layers,
            hidden_width: s.hidden_width,
            seed: s.seed,
            path_mode: s.path_mode,
            m_eval: s.m_eval,
            warm_start: s.warm_start,
            z_time: s.z_time,
            chunk_rows: s.chunk_rows,
            lipschitz_bound: s.lipschitz_bound,
            projection_mode: ProjectionMode::PerEpoch,
            floor: 0.1,
            out: PathBuf::from("out"),
            threads: None,
            emit_paths: false,
            emit_oracle: false,
            emit_metrics: true,
            emit_surfaces: true,
            oracle_n_list: vec![5, 10, 20, 40],
            oracle_paths: 1 << 15,
            oracle_degree: 3,
            linear: None,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            n_steps: self.n_steps,
            n_paths: self.n_paths,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            seed: self.seed,
            path_mode: self.path_mode,
            m_eval: self.m_eval,
            warm_start: self.warm_start,
            z_time: self.z_time,
            chunk_rows: self.chunk_rows,
            lipschitz_bound: self.lipschitz_bound,
        }
    }

    /// Small preset for smoke runs: N=10, M=1024, 100 epochs, 1024 evaluation paths.
    pub fn apply_quick(&mut self) {
        self.n_steps = 10;
        self.n_paths = 1024;
        self.epochs = 100;
        self.m_eval = 1024;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.solver().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be positive".into()));
        }
        if !self.floor.is_finite() {
            return Err(CliError::Config(format!("floor must be finite, got {}", self.floor)));
        }
        if self.oracle_n_list.is_empty() || self.oracle_n_list.contains(&0) {
            return Err(CliError::Config("oracle_n_list must hold positive step counts".into()));
        }
        if self.oracle_paths == 0 {
            return Err(CliError::Config("oracle_paths must be positive".into()));
        }
        match (self.problem, &self.linear) {
            (ProblemId::UserDefined, None) => return Err(CliError::Config("problem user-defined needs a `linear` block".into())),
            (ProblemId::UserDefined, Some(spec)) => spec.validate()?,
            _ => {}
        }
        if self.emit_oracle && self.problem == ProblemId::RegretFloor {
            return Err(CliError::Config("the regression oracle does not handle the reflected problem".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))
    }
}

/// Flags shared by every command. Unset flags leave the config untouched.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub problem: Option<ProblemId>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub path_mode: Option<PathModeArg>,
    #[arg(long)]
    pub m_eval: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// N=10, M=1024, 100 epochs, 1024 evaluation paths.
    #[arg(long)]
    pub quick: bool,
    /// Flat JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub emit_paths: bool,
    #[arg(long)]
    pub emit_oracle: bool,
    /// Step counts for the oracle, e.g. `5,10,20,40`.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    #[arg(long)]
    pub oracle_paths: Option<usize>,
}

fn read_config_file(path: &Path) -> Result<(RunConfig, bool), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("malformed config {}: {e}", path.display())))?;
    let has_seed = value.get("seed").is_some();
    let cfg = serde_json::from_value(value).map_err(|e| CliError::Config(format!("malformed config {}: {e}", path.display())))?;
    Ok((cfg, has_seed))
}

/// Merges, lowest precedence first: built-in defaults, the config file,
/// `VOLTERRA_SEED` (only if the file sets no seed), `--quick`, explicit flags.
pub fn resolve(args: &RunArgs, env_seed: Option<&str>) -> Result<RunConfig, CliError> {
    let (mut cfg, file_seed) = match &args.config {
        Some(path) => read_config_file(path)?,
        None => (RunConfig::default(), false),
    };
    if !file_seed {
        if let Some(raw) = env_seed {
            cfg.seed = raw.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
    }
    if args.quick {
        cfg.apply_quick();
    }
    if let Some(v) = args.problem {
        cfg.problem = v;
    }
    if let Some(v) = args.n_steps {
        cfg.n_steps = v;
    }
    if let Some(v) = args.n_paths {
        cfg.n_paths = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.path_mode {
        cfg.path_mode = v.into();
    }
    if let Some(v) = args.m_eval {
        cfg.m_eval = v;
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if let Some(v) = args.threads {
        cfg.threads = Some(v);
    }
    cfg.emit_paths |= args.emit_paths;
    cfg.emit_oracle |= args.emit_oracle;
    if let Some(v) = &args.n_list {
        cfg.oracle_n_list = v.clone();
    }
    if let Some(v) = args.oracle_paths {
        cfg.oracle_paths = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_solver_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.solver(), SolverConfig::default());
        assert_eq!(cfg.oracle_n_list, vec![5, 10, 20, 40]);
        cfg.validate().unwrap();
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut cfg = RunConfig { problem: ProblemId::Example2, learning_rate: 0.1 + 0.2, seed: u64::MAX, floor: -1e6, threads: Some(3), ..Default::default() };
        cfg.oracle_n_list = vec![3, 7];
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_and_problems_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"n_step": 3}"#), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"problem": "example3"}"#), Err(CliError::Config(_))));
        let partial = RunConfig::from_json(r#"{"problem": "example2", "epochs": 7}"#).unwrap();
        assert_eq!((partial.problem, partial.epochs, partial.n_steps), (ProblemId::Example2, 7, 50));
    }

    #[test]
    fn precedence_is_defaults_file_env_quick_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochs": 7, "n_steps": 30}"#).unwrap();
        let args = RunArgs { config: Some(path.clone()), ..Default::default() };
        let cfg = resolve(&args, Some("99")).unwrap();
        assert_eq!((cfg.epochs, cfg.n_steps, cfg.seed), (7, 30, 99));

        let quick = RunArgs { quick: true, epochs: Some(3), ..args.clone() };
        let cfg = resolve(&quick, None).unwrap();
        assert_eq!((cfg.epochs, cfg.n_steps, cfg.n_paths, cfg.seed), (3, 10, 1024, 42));

        std::fs::write(&path, r#"{"seed": 5}"#).unwrap();
        assert_eq!(resolve(&args, Some("99")).unwrap().seed, 5);
        let flagged = RunArgs { seed: Some(6), ..args.clone() };
        assert_eq!(resolve(&flagged, Some("99")).unwrap().seed, 6);
    }

    #[test]
    fn bad_inputs_map_to_config_errors() {
        let err = resolve(&RunArgs::default(), Some("abc")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = resolve(&RunArgs { problem: Some(ProblemId::UserDefined), ..Default::default() }, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = resolve(&RunArgs { n_steps: Some(0), ..Default::default() }, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let missing = RunArgs { config: Some("/nonexistent/run.json".into()), ..Default::default() };
        assert_eq!(resolve(&missing, None).unwrap_err().exit_code(), 4);
    }
}
