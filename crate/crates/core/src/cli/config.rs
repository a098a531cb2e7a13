//! Experiment configuration: a small sectioned `key = value` format.
//!
//! ```text
//! [experiment]
//! kind = ac1d_case1
//! seed = 7
//!
//! [solver]
//! rank = 2
//! ```
//!
//! Every file starts from the preset named by `experiment.kind` (or from the
//! `custom` defaults) and overrides individual keys. `#` and `;` start
//! comments. Unknown sections or keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::evolve::Regularization;
use crate::network::FitSettings;
use crate::pde::{InitialCondition, PdeOperator};
use crate::subspace::BiasMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path} not found (and '{name}' is not a preset; see `lrednn presets`)")]
    Missing { path: PathBuf, name: String },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Heat1d,
    PmeDrift,
    Ac1dCase1,
    Ac1dCase2,
    Ac2dCase1,
    Ac2dCase2,
    BurgersShort,
    BurgersLong,
    Custom,
}

impl Experiment {
    pub const PRESETS: [Experiment; 8] = [
        Experiment::Heat1d,
        Experiment::PmeDrift,
        Experiment::Ac1dCase1,
        Experiment::Ac1dCase2,
        Experiment::Ac2dCase1,
        Experiment::Ac2dCase2,
        Experiment::BurgersShort,
        Experiment::BurgersLong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Heat1d => "heat1d",
            Experiment::PmeDrift => "pme_drift",
            Experiment::Ac1dCase1 => "ac1d_case1",
            Experiment::Ac1dCase2 => "ac1d_case2",
            Experiment::Ac2dCase1 => "ac2d_case1",
            Experiment::Ac2dCase2 => "ac2d_case2",
            Experiment::BurgersShort => "burgers_short",
            Experiment::BurgersLong => "burgers_long",
            Experiment::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::PRESETS
            .into_iter()
            .chain([Experiment::Custom])
            .find(|e| e.name() == s)
    }

    /// Ranks compared against the full model for this case.
    pub fn reference_ranks(self) -> &'static [usize] {
        match self {
            Experiment::PmeDrift => &[3, 5],
            Experiment::Ac1dCase1 => &[1, 2],
            Experiment::Ac1dCase2 => &[2, 3],
            Experiment::Ac2dCase1 => &[1, 3],
            Experiment::Ac2dCase2 => &[2, 5],
            Experiment::BurgersShort | Experiment::BurgersLong => &[4, 7],
            Experiment::Heat1d | Experiment::Custom => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equation {
    Heat,
    PmeDrift,
    AllenCahn,
    Burgers,
}

impl Equation {
    fn name(self) -> &'static str {
        match self {
            Equation::Heat => "heat",
            Equation::PmeDrift => "pme_drift",
            Equation::AllenCahn => "allen_cahn",
            Equation::Burgers => "burgers",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Equation::Heat,
            Equation::PmeDrift,
            Equation::AllenCahn,
            Equation::Burgers,
        ]
        .into_iter()
        .find(|e| e.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Full,
    Fixed(usize),
}

impl Rank {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Rank::Full),
            _ => s.parse().ok().filter(|r| *r > 0).map(Rank::Fixed),
        }
    }

    pub fn label(self) -> String {
        match self {
            Rank::Full => "full".into(),
            Rank::Fixed(r) => r.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Fit the closed-form initial condition.
    Standard,
    /// Random Gaussian factors `W = M R` of the run's rank.
    FactoredInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub equation: Equation,
    pub dim: usize,
    pub epsilon: f64,
    pub viscosity: f64,
    pub diffusivity: f64,
    pub initial: InitialCondition,
    pub points: usize,
    pub dt: f64,
    pub steps: usize,
    pub rank: Rank,
    pub mode: InitMode,
    pub regularization: Regularization,
    pub bias_mode: BiasMode,
    pub basis_refresh: usize,
    pub hidden: Vec<usize>,
    pub fit: FitSettings,
    /// Largest initial RMS fit error accepted before evolving.
    pub fit_gate: f64,
    pub output_gain: f64,
    pub output_bias: f64,
    pub out_dir: Option<PathBuf>,
    pub snapshots: usize,
    /// Multiplier already applied to `points` and `steps`.
    pub scale: f64,
}

impl ExperimentConfig {
    pub fn preset(kind: Experiment) -> Self {
        let base = Self {
            experiment: kind,
            seed: 0,
            equation: Equation::Heat,
            dim: 1,
            epsilon: 0.1,
            viscosity: 0.05,
            diffusivity: 1.0,
            initial: InitialCondition::HeatSine,
            points: 64,
            dt: 1e-5,
            steps: 2000,
            rank: Rank::Full,
            mode: InitMode::Standard,
            regularization: Regularization::default(),
            bias_mode: BiasMode::Unconstrained,
            basis_refresh: 1,
            hidden: vec![10, 10],
            fit: FitSettings::default(),
            fit_gate: 1e-3,
            output_gain: 0.5,
            output_bias: 1.0,
            out_dir: None,
            snapshots: 10,
            scale: 1.0,
        };
        let ac1d = |epsilon, dt| Self {
            equation: Equation::AllenCahn,
            epsilon,
            dt,
            initial: InitialCondition::AllenCahn1d { amplitude: 0.08 },
            points: 1024,
            hidden: vec![15, 13],
            ..base.clone()
        };
        let ac2d = |epsilon, dt| Self {
            equation: Equation::AllenCahn,
            dim: 2,
            epsilon,
            dt,
            initial: InitialCondition::AllenCahn2d { amplitude: 0.15 },
            points: 101,
            hidden: vec![26, 20],
            ..base.clone()
        };
        let burgers = |steps| Self {
            equation: Equation::Burgers,
            dim: 2,
            initial: InitialCondition::BurgersCells,
            points: 64,
            dt: 1e-3,
            steps,
            hidden: vec![20, 20],
            ..base.clone()
        };
        let cfg = match kind {
            Experiment::Heat1d | Experiment::Custom => base.clone(),
            Experiment::PmeDrift => Self {
                equation: Equation::PmeDrift,
                dim: 2,
                initial: InitialCondition::PmeBump,
                points: 64,
                dt: 1e-4,
                steps: 4000,
                mode: InitMode::FactoredInit,
                hidden: vec![28, 14],
                ..base.clone()
            },
            Experiment::Ac1dCase1 => ac1d(0.1, 1e-4),
            Experiment::Ac1dCase2 => ac1d(0.01, 1e-5),
            Experiment::Ac2dCase1 => ac2d(0.1, 1e-5),
            Experiment::Ac2dCase2 => ac2d(0.01, 1e-7),
            Experiment::BurgersShort => burgers(300),
            Experiment::BurgersLong => burgers(1000),
        };
        Self {
            experiment: kind,
            ..cfg
        }
    }

    /// Preset by name, or a config file layered on its preset.
    pub fn load(path_or_preset: &str) -> Result<Self, ConfigError> {
        let path = Path::new(path_or_preset);
        if !path.exists() {
            return match Experiment::parse(path_or_preset) {
                Some(e) if e != Experiment::Custom => Ok(Self::preset(e)),
                _ => Err(ConfigError::Missing {
                    path: path.to_path_buf(),
                    name: path_or_preset.to_string(),
                }),
            };
        }
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = tokenize(text)?;
        let kind = match entries.iter().find(|e| e.section == "experiment" && e.key == "kind") {
            Some(e) => Experiment::parse(&e.value).ok_or_else(|| ConfigError::Parse {
                line: e.line,
                message: format!("unknown experiment kind '{}'", e.value),
            })?,
            None => Experiment::Custom,
        };
        let mut cfg = Self::preset(kind);
        for e in &entries {
            cfg.set(&e.section, &e.key, &e.value).map_err(|message| ConfigError::Parse {
                line: e.line,
                message,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse '{v}'"))
        }
        match (section, key) {
            ("experiment", "kind") => {}
            ("experiment", "seed") => self.seed = num(key, value)?,
            ("pde", "equation") => {
                self.equation = Equation::parse(value).ok_or(format!("unknown equation '{value}'"))?
            }
            ("pde", "dim") => self.dim = num(key, value)?,
            ("pde", "epsilon") => self.epsilon = num(key, value)?,
            ("pde", "viscosity") => self.viscosity = num(key, value)?,
            ("pde", "diffusivity") => self.diffusivity = num(key, value)?,
            ("pde", "initial") => {
                self.initial = match value {
                    "heat_sine" => InitialCondition::HeatSine,
                    "pme_bump" => InitialCondition::PmeBump,
                    "burgers_cells" => InitialCondition::BurgersCells,
                    "ac1d" => InitialCondition::AllenCahn1d { amplitude: 0.08 },
                    "ac2d" => InitialCondition::AllenCahn2d { amplitude: 0.15 },
                    other => return Err(format!("unknown initial condition '{other}'")),
                }
            }
            ("pde", "amplitude") => {
                let a: f64 = num(key, value)?;
                self.initial = match self.initial {
                    InitialCondition::AllenCahn1d { .. } => InitialCondition::AllenCahn1d { amplitude: a },
                    InitialCondition::AllenCahn2d { .. } => InitialCondition::AllenCahn2d { amplitude: a },
                    _ => return Err("amplitude applies only to the Allen-Cahn initial conditions".into()),
                }
            }
            ("grid", "points") => self.points = num(key, value)?,
            ("time", "dt") => self.dt = num(key, value)?,
            ("time", "steps") => self.steps = num(key, value)?,
            ("solver", "rank") => {
                self.rank = Rank::parse(value).ok_or(format!("rank must be 'full' or a positive integer, got '{value}'"))?
            }
            ("solver", "mode") => {
                self.mode = match value {
                    "standard" => InitMode::Standard,
                    "factored_init" => InitMode::FactoredInit,
                    other => return Err(format!("unknown mode '{other}'")),
                }
            }
            ("solver", "lambda") => self.regularization = parse_lambda(value)?,
            ("solver", "bias_mode") => {
                self.bias_mode = match value {
                    "unconstrained" => BiasMode::Unconstrained,
                    "frozen" => BiasMode::Frozen,
                    other => return Err(format!("unknown bias_mode '{other}'")),
                }
            }
            ("solver", "basis_refresh") => self.basis_refresh = num(key, value)?,
            ("network", "hidden") => {
                self.hidden = value
                    .split(',')
                    .map(|w| num::<usize>(key, w.trim()))
                    .collect::<Result<_, _>>()?
            }
            ("fit", "iterations") => self.fit.iterations = num(key, value)?,
            ("fit", "learning_rate") => self.fit.learning_rate = num(key, value)?,
            ("fit", "polish_iterations") => self.fit.polish_iterations = num(key, value)?,
            ("fit", "gate") => self.fit_gate = num(key, value)?,
            ("init", "output_gain") => self.output_gain = num(key, value)?,
            ("init", "output_bias") => self.output_bias = num(key, value)?,
            ("output", "dir") => self.out_dir = Some(PathBuf::from(value)),
            ("output", "snapshots") => self.snapshots = num(key, value)?,
            ("output", "scale") => self.scale = num(key, value)?,
            _ => return Err(format!("unknown key '{key}' in section [{section}]")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.points < 2 {
            return bad(format!("need at least 2 points per dimension, got {}", self.points));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden widths must be positive".into());
        }
        if self.basis_refresh == 0 {
            return bad("basis_refresh must be at least 1".into());
        }
        if !(self.fit_gate > 0.0) {
            return bad("fit gate must be positive".into());
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        match self.regularization {
            Regularization::Relative(c) | Regularization::Absolute(c) if !(c >= 0.0 && c.is_finite()) => {
                return bad(format!("lambda must be non-negative, got {c}"))
            }
            _ => {}
        }
        self.operator().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let ic_dim = match self.initial {
            InitialCondition::HeatSine | InitialCondition::AllenCahn1d { .. } => 1,
            _ => 2,
        };
        if ic_dim != self.dim || self.initial.output_dim() != self.output_dim() {
            return bad(format!(
                "initial condition {:?} does not match a {}-D {} problem",
                self.initial,
                self.dim,
                self.equation.name()
            ));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        if self.equation == Equation::Burgers {
            2
        } else {
            1
        }
    }

    pub fn operator(&self) -> Result<PdeOperator, crate::pde::PdeError> {
        let op = match self.equation {
            Equation::Heat => PdeOperator::heat(self.diffusivity, self.dim)?,
            Equation::AllenCahn => PdeOperator::allen_cahn(self.epsilon, self.dim)?,
            Equation::PmeDrift => PdeOperator::PmeDrift,
            Equation::Burgers => PdeOperator::burgers(self.viscosity)?,
        };
        if op.spatial_dim() != self.dim {
            return Err(crate::pde::PdeError::Parameter(format!(
                "{} is defined in {} dimensions, config has dim = {}",
                op.name(),
                op.spatial_dim(),
                self.dim
            )));
        }
        Ok(op)
    }

    /// Scales grid points per dimension and step count by `factor` (Δt is
    /// kept), compounding with any earlier scaling.
    pub fn scaled(&self, factor: f64) -> Result<Self, ConfigError> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(ConfigError::Invalid(format!("scale must be positive, got {factor}")));
        }
        let cfg = Self {
            points: ((self.points as f64 * factor).round() as usize).max(2),
            steps: ((self.steps as f64 * factor).round() as usize).max(1),
            scale: self.scale * factor,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let initial = match self.initial {
            InitialCondition::HeatSine => ("heat_sine", None),
            InitialCondition::PmeBump => ("pme_bump", None),
            InitialCondition::BurgersCells => ("burgers_cells", None),
            InitialCondition::AllenCahn1d { amplitude } => ("ac1d", Some(amplitude)),
            InitialCondition::AllenCahn2d { amplitude } => ("ac2d", Some(amplitude)),
        };
        let hidden: Vec<String> = self.hidden.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "[experiment]\nkind = {}\nseed = {}\n", self.experiment.name(), self.seed);
        let _ = writeln!(
            s,
            "[pde]\nequation = {}\ndim = {}\nepsilon = {:?}\nviscosity = {:?}\ndiffusivity = {:?}\ninitial = {}",
            self.equation.name(),
            self.dim,
            self.epsilon,
            self.viscosity,
            self.diffusivity,
            initial.0
        );
        if let Some(a) = initial.1 {
            let _ = writeln!(s, "amplitude = {a:?}");
        }
        let _ = writeln!(s, "\n[grid]\npoints = {}\n", self.points);
        let _ = writeln!(s, "[time]\ndt = {:?}\nsteps = {}\n", self.dt, self.steps);
        let _ = writeln!(
            s,
            "[solver]\nrank = {}\nmode = {}\nlambda = {}\nbias_mode = {}\nbasis_refresh = {}\n",
            self.rank.label(),
            match self.mode {
                InitMode::Standard => "standard",
                InitMode::FactoredInit => "factored_init",
            },
            lambda_label(self.regularization),
            match self.bias_mode {
                BiasMode::Unconstrained => "unconstrained",
                BiasMode::Frozen => "frozen",
            },
            self.basis_refresh
        );
        let _ = writeln!(s, "[network]\nhidden = {}\n", hidden.join(","));
        let _ = writeln!(
            s,
            "[fit]\niterations = {}\nlearning_rate = {:?}\npolish_iterations = {}\ngate = {:?}\n",
            self.fit.iterations, self.fit.learning_rate, self.fit.polish_iterations, self.fit_gate
        );
        let _ = writeln!(
            s,
            "[init]\noutput_gain = {:?}\noutput_bias = {:?}\n",
            self.output_gain, self.output_bias
        );
        let _ = writeln!(s, "[output]");
        if let Some(dir) = &self.out_dir {
            let _ = writeln!(s, "dir = {}", dir.display());
        }
        let _ = writeln!(s, "snapshots = {}\nscale = {:?}", self.snapshots, self.scale);
        s
    }
}

/// `relative:<c>` (λ = c·trace/dim), `absolute:<λ>`, or a bare number taken
/// as relative.
pub fn parse_lambda(value: &str) -> Result<Regularization, String> {
    let (kind, v) = value.split_once(':').unwrap_or(("relative", value));
    let c: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("lambda: cannot parse '{value}'"))?;
    match kind.trim() {
        "relative" => Ok(Regularization::Relative(c)),
        "absolute" => Ok(Regularization::Absolute(c)),
        other => Err(format!("lambda kind must be relative or absolute, got '{other}'")),
    }
}

pub fn lambda_label(r: Regularization) -> String {
    match r {
        Regularization::Relative(c) => format!("relative:{c:?}"),
        Regularization::Absolute(c) => format!("absolute:{c:?}"),
    }
}

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
}

fn tokenize(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut section: Option<String> = None;
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                line,
                message: format!("unterminated section header '{content}'"),
            })?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected 'key = value', got '{content}'"),
        })?;
        let Some(section) = section.clone() else {
            return Err(ConfigError::Parse {
                line,
                message: "key outside of any [section]".into(),
            });
        };
        let key = key.trim().to_string();
        if out.iter().any(|e| e.section == section && e.key == key) {
            return Err(ConfigError::Parse {
                line,
                message: format!("duplicate key '{key}' in [{section}]"),
            });
        }
        out.push(Entry {
            line,
            section,
            key,
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}
