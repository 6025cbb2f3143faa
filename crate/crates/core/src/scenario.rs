//! Scenario files, the built-in registry, experiment runs and refinement
//! studies.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "my-run"
//! t_end = 10.0
//! n_cells = 50          # optional, default 50
//! seed = 0              # optional
//! output_dir = "out"    # optional
//!
//! [model]               # five expressions, or `file = "model.toml"`,
//! lambda_u = "case(x < 0.5, 0.2, 2 - x)"   # or a `[model.linear]` table
//! lambda_v = "1 + 0.5*x"
//! f_u = "sin(u + v)/(3 - x)"
//! f_v = "sin(v - u)"
//! g = "-v"
//!
//! [initial]
//! u = "1"
//! v = "1"
//!
//! [controller]
//! kind = "event_triggered"  # open_loop | continuous | event_triggered | event_triggered_linear
//! initial_input = 0.0       # held input before the first update
//! # input = "0"             # U(t) for open_loop
//!
//! [policy]
//! kind = "state_dependent"  # fixed | state_dependent | periodic
//! eps_min = 0.05
//! gain = 0.25
//! # reference = "0.3*sin(t)"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{run_with_law, ClosedLoopRecord, ControlLaw, TriggerPolicy, TriggerRule};
use crate::error::{Error, Result};
use crate::expr::CoeffFn;
use crate::linear::{extract_kernels, KernelVector, LinearSources, LinearSystemSpec};
use crate::model::{signature, validate_model, Grid, ModelSources, SystemModel};
use crate::sim::{EventRecord, InputSignal, StateProfile};

pub const DEFAULT_N_CELLS: usize = 50;
/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "ETBC_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "etbc-output";

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BLOW_UP: i32 = 3;
pub const EXIT_ZENO: i32 = 4;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else if e.is_blow_up() {
        EXIT_BLOW_UP
    } else {
        EXIT_OTHER
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    General(SystemModel),
    Linear(LinearSystemSpec),
}

impl ModelSpec {
    pub fn system_model(&self) -> Result<SystemModel> {
        match self {
            ModelSpec::General(m) => Ok(m.clone()),
            ModelSpec::Linear(l) => l.to_system_model(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    OpenLoop(CoeffFn),
    Continuous,
    EventTriggered,
    EventTriggeredLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    pub u0: CoeffFn,
    pub v0: CoeffFn,
    pub grid: Grid,
    pub policy: Option<TriggerPolicy>,
    pub controller: ControllerKind,
    pub initial_input: f64,
    pub t_end: f64,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_u: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_v: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f_u: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f_v: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    linear: Option<LinearSources>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialFile {
    u: String,
    v: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ControllerTag {
    OpenLoop,
    Continuous,
    EventTriggered,
    EventTriggeredLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerFile {
    kind: ControllerTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    #[serde(default)]
    initial_input: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PolicyTag {
    Fixed,
    StateDependent,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    kind: PolicyTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
}

fn default_n_cells() -> usize {
    DEFAULT_N_CELLS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    t_end: f64,
    #[serde(default = "default_n_cells")]
    n_cells: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
    model: ModelFile,
    initial: InitialFile,
    controller: ControllerFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<PolicyFile>,
}

fn parse_expr(field: &str, src: &str, vars: &[&str]) -> Result<CoeffFn> {
    CoeffFn::parse(src, vars).map_err(|source| Error::Parse {
        field: field.to_string(),
        source,
    })
}

fn need<T: Clone>(field: &str, v: &Option<T>) -> Result<T> {
    v.clone().ok_or_else(|| Error::invalid(field, "missing"))
}

impl ModelFile {
    fn resolve(&self, base: Option<&Path>, nested: bool) -> Result<ModelSpec> {
        let has_fields = [&self.lambda_u, &self.lambda_v, &self.f_u, &self.f_v, &self.g]
            .iter()
            .any(|f| f.is_some());
        match (&self.file, &self.linear, has_fields) {
            (Some(path), None, false) => {
                if nested {
                    return Err(Error::invalid("model.file", "model files cannot reference other files"));
                }
                let full = match base {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let text = fs::read_to_string(&full)
                    .map_err(|e| Error::invalid("model.file", format!("cannot read {}: {e}", full.display())))?;
                let inner: ModelFile =
                    toml::from_str(&text).map_err(|e| Error::Toml(format!("{}: {e}", full.display())))?;
                inner.resolve(None, true)
            }
            (None, Some(lin), false) => Ok(ModelSpec::Linear(LinearSystemSpec::from_sources(lin)?)),
            (None, None, true) => {
                let m = SystemModel::from_sources(&ModelSources {
                    lambda_u: need("model.lambda_u", &self.lambda_u)?,
                    lambda_v: need("model.lambda_v", &self.lambda_v)?,
                    f_u: need("model.f_u", &self.f_u)?,
                    f_v: need("model.f_v", &self.f_v)?,
                    g: need("model.g", &self.g)?,
                })
                .map_err(|e| match e {
                    Error::Parse { field, source } => Error::Parse {
                        field: format!("model.{field}"),
                        source,
                    },
                    other => other,
                })?;
                Ok(ModelSpec::General(m))
            }
            _ => Err(Error::invalid(
                "model",
                "give exactly one of: the five expressions, `file`, or a `linear` table",
            )),
        }
    }

    fn from_spec(spec: &ModelSpec) -> Self {
        match spec {
            ModelSpec::General(m) => {
                let s = m.sources();
                ModelFile {
                    lambda_u: Some(s.lambda_u),
                    lambda_v: Some(s.lambda_v),
                    f_u: Some(s.f_u),
                    f_v: Some(s.f_v),
                    g: Some(s.g),
                    ..Default::default()
                }
            }
            ModelSpec::Linear(l) => ModelFile {
                linear: Some(l.sources()),
                ..Default::default()
            },
        }
    }
}

impl PolicyFile {
    fn resolve(&self) -> Result<TriggerPolicy> {
        let rule = match self.kind {
            PolicyTag::Fixed => TriggerRule::Fixed {
                eps: need("policy.eps", &self.eps)?,
            },
            PolicyTag::StateDependent => TriggerRule::StateDependent {
                eps_min: self.eps_min.unwrap_or(0.0),
                gain: need("policy.gain", &self.gain)?,
            },
            PolicyTag::Periodic => TriggerRule::Periodic {
                period: need("policy.period", &self.period)?,
                eps: need("policy.eps", &self.eps)?,
            },
        };
        let reference = self
            .reference
            .as_deref()
            .map(|r| parse_expr("policy.reference", r, signature::T))
            .transpose()?;
        let p = TriggerPolicy { rule, reference };
        p.validate()?;
        Ok(p)
    }

    fn from_policy(p: &TriggerPolicy) -> Self {
        let mut f = PolicyFile {
            kind: PolicyTag::Fixed,
            eps: None,
            eps_min: None,
            gain: None,
            period: None,
            reference: p.reference.as_ref().map(|r| r.source().to_string()),
        };
        match p.rule {
            TriggerRule::Fixed { eps } => f.eps = Some(eps),
            TriggerRule::StateDependent { eps_min, gain } => {
                f.kind = PolicyTag::StateDependent;
                f.eps_min = Some(eps_min);
                f.gain = Some(gain);
            }
            TriggerRule::Periodic { period, eps } => {
                f.kind = PolicyTag::Periodic;
                f.period = Some(period);
                f.eps = Some(eps);
            }
        }
        f
    }
}

impl Scenario {
    /// Parses a scenario document. Relative model file paths resolve against
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        Self::from_file(&f, base_dir)
    }

    fn from_file(f: &ScenarioFile, base_dir: Option<&Path>) -> Result<Self> {
        if !(f.t_end > 0.0 && f.t_end.is_finite()) {
            return Err(Error::invalid(
                "t_end",
                format!("must be positive and finite, got {}", f.t_end),
            ));
        }
        if !f.controller.initial_input.is_finite() {
            return Err(Error::invalid("controller.initial_input", "must be finite"));
        }
        let grid = Grid::new(f.n_cells).map_err(|_| Error::invalid("n_cells", "must be positive"))?;
        let model = f.model.resolve(base_dir, false)?;
        validate_model(&model.system_model()?, 101)?;
        let u0 = parse_expr("initial.u", &f.initial.u, signature::X)?;
        let v0 = parse_expr("initial.v", &f.initial.v, signature::X)?;
        let policy = f.policy.as_ref().map(PolicyFile::resolve).transpose()?;

        let controller = match f.controller.kind {
            ControllerTag::OpenLoop => ControllerKind::OpenLoop(parse_expr(
                "controller.input",
                f.controller.input.as_deref().unwrap_or("0"),
                signature::T,
            )?),
            ControllerTag::Continuous => ControllerKind::Continuous,
            ControllerTag::EventTriggered => ControllerKind::EventTriggered,
            ControllerTag::EventTriggeredLinear => ControllerKind::EventTriggeredLinear,
        };
        if f.controller.input.is_some() && f.controller.kind != ControllerTag::OpenLoop {
            return Err(Error::invalid(
                "controller.input",
                "only open_loop takes an input expression",
            ));
        }
        match f.controller.kind {
            ControllerTag::EventTriggered | ControllerTag::EventTriggeredLinear if policy.is_none() => {
                return Err(Error::invalid("policy", "event-triggered controllers need a policy"));
            }
            ControllerTag::EventTriggeredLinear if !matches!(model, ModelSpec::Linear(_)) => {
                return Err(Error::invalid(
                    "controller.kind",
                    "event_triggered_linear requires a [model.linear] model",
                ));
            }
            _ => {}
        }
        let s = Scenario {
            name: f.name.clone(),
            model,
            u0,
            v0,
            grid,
            policy,
            controller,
            initial_input: f.controller.initial_input,
            t_end: f.t_end,
            seed: f.seed,
            output_dir: f.output_dir.clone(),
        };
        s.initial_state()?;
        Ok(s)
    }

    /// Reads a scenario file, or resolves a built-in name when no such file
    /// exists.
    pub fn load(path_or_name: &str) -> Result<Self> {
        let path = Path::new(path_or_name);
        if path.is_file() {
            let text = fs::read_to_string(path)?;
            return Self::from_toml(&text, path.parent());
        }
        builtin(path_or_name).ok_or_else(|| {
            Error::invalid(
                "scenario",
                format!(
                    "{path_or_name:?} is neither a file nor a built-in ({})",
                    builtin_names().join(", ")
                ),
            )
        })
    }

    /// TOML text that loads back to an identical scenario. Model files are
    /// inlined.
    pub fn to_toml(&self) -> String {
        let f = ScenarioFile {
            name: self.name.clone(),
            t_end: self.t_end,
            n_cells: self.grid.n_cells(),
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            model: ModelFile::from_spec(&self.model),
            initial: InitialFile {
                u: self.u0.source().to_string(),
                v: self.v0.source().to_string(),
            },
            controller: ControllerFile {
                kind: match self.controller {
                    ControllerKind::OpenLoop(_) => ControllerTag::OpenLoop,
                    ControllerKind::Continuous => ControllerTag::Continuous,
                    ControllerKind::EventTriggered => ControllerTag::EventTriggered,
                    ControllerKind::EventTriggeredLinear => ControllerTag::EventTriggeredLinear,
                },
                input: match &self.controller {
                    ControllerKind::OpenLoop(f) => Some(f.source().to_string()),
                    _ => None,
                },
                initial_input: self.initial_input,
            },
            policy: self.policy.as_ref().map(PolicyFile::from_policy),
        };
        toml::to_string(&f).expect("scenario serializes")
    }

    pub fn with_n_cells(mut self, n_cells: usize) -> Result<Self> {
        self.grid = Grid::new(n_cells).map_err(|_| Error::invalid("n_cells", "must be positive"))?;
        Ok(self)
    }

    pub fn with_t_end(mut self, t_end: f64) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::invalid(
                "t_end",
                format!("must be positive and finite, got {t_end}"),
            ));
        }
        self.t_end = t_end;
        Ok(self)
    }

    pub fn initial_state(&self) -> Result<StateProfile> {
        StateProfile::from_fns(&self.grid, &self.u0, &self.v0, 0.0)
    }

    /// The control law, extracting kernels for the linear controller.
    pub fn control_law(&self) -> Result<ControlLaw> {
        let reference = self.policy.as_ref().and_then(|p| p.reference.clone());
        Ok(match &self.controller {
            ControllerKind::OpenLoop(f) => ControlLaw::OpenLoop(InputSignal::Function(f.clone())),
            ControllerKind::Continuous => ControlLaw::Continuous { reference },
            ControllerKind::EventTriggered => ControlLaw::EventTriggered(self.require_policy()?),
            ControllerKind::EventTriggeredLinear => ControlLaw::EventTriggeredLinear {
                policy: self.require_policy()?,
                kernels: self.kernels()?,
            },
        })
    }

    fn require_policy(&self) -> Result<TriggerPolicy> {
        self.policy
            .clone()
            .ok_or_else(|| Error::invalid("policy", "event-triggered controllers need a policy"))
    }

    pub fn kernels(&self) -> Result<KernelVector> {
        match &self.model {
            ModelSpec::Linear(l) => extract_kernels(l, &self.grid),
            ModelSpec::General(_) => Err(Error::invalid("model", "kernels need a [model.linear] model")),
        }
    }

    /// Runs the scenario without writing files.
    pub fn simulate(&self) -> Result<ClosedLoopRecord> {
        run_with_law(
            &self.model.system_model()?,
            &self.grid,
            &self.control_law()?,
            &self.initial_state()?,
            self.initial_input,
            self.t_end,
        )
    }

    /// Output directory: explicit override, then the scenario's own, then
    /// `$ETBC_OUTPUT_ROOT/<name>`.
    pub fn resolve_output_dir(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
        root.join(&self.name)
    }
}

const BUILTINS: &[(&str, &str)] = &[
    (
        "paper-example-open-loop",
        r#"
name = "paper-example-open-loop"
t_end = 10.0
[model]
lambda_u = "case(x < 0.5, 0.2, 2 - x)"
lambda_v = "1 + 0.5*x"
f_u = "sin(u + v)/(3 - x)"
f_v = "sin(v - u)"
g = "-v"
[initial]
u = "1"
v = "1"
[controller]
kind = "open_loop"
input = "0"
"#,
    ),
    (
        "paper-example-event-triggered",
        r#"
name = "paper-example-event-triggered"
t_end = 10.0
[model]
lambda_u = "case(x < 0.5, 0.2, 2 - x)"
lambda_v = "1 + 0.5*x"
f_u = "sin(u + v)/(3 - x)"
f_v = "sin(v - u)"
g = "-v"
[initial]
u = "1"
v = "1"
[controller]
kind = "event_triggered"
[policy]
kind = "state_dependent"
eps_min = 0.05
gain = 0.25
"#,
    ),
    (
        "paper-example-continuous",
        r#"
name = "paper-example-continuous"
t_end = 10.0
[model]
lambda_u = "case(x < 0.5, 0.2, 2 - x)"
lambda_v = "1 + 0.5*x"
f_u = "sin(u + v)/(3 - x)"
f_v = "sin(v - u)"
g = "-v"
[initial]
u = "1"
v = "1"
[controller]
kind = "continuous"
"#,
    ),
    (
        "paper-example-tracking",
        r#"
name = "paper-example-tracking"
t_end = 10.0
[model]
lambda_u = "case(x < 0.5, 0.2, 2 - x)"
lambda_v = "1 + 0.5*x"
f_u = "sin(u + v)/(3 - x)"
f_v = "sin(v - u)"
g = "-v"
[initial]
u = "1"
v = "1"
[controller]
kind = "event_triggered"
[policy]
kind = "fixed"
eps = 0.05
reference = "0.3*sin(t)"
"#,
    ),
    (
        "paper-example-decay",
        r#"
name = "paper-example-decay"
t_end = 7.6
[model]
lambda_u = "case(x < 0.5, 0.2, 2 - x)"
lambda_v = "1 + 0.5*x"
f_u = "sin(u + v)/(3 - x)"
f_v = "sin(v - u)"
g = "-v"
[initial]
u = "1"
v = "1"
[controller]
kind = "event_triggered"
[policy]
kind = "state_dependent"
eps_min = 0.0
gain = 0.25
"#,
    ),
    (
        "paper-example-periodic",
        r#"
name = "paper-example-periodic"
t_end = 10.0
[model]
lambda_u = "case(x < 0.5, 0.2, 2 - x)"
lambda_v = "1 + 0.5*x"
f_u = "sin(u + v)/(3 - x)"
f_v = "sin(v - u)"
g = "-v"
[initial]
u = "1"
v = "1"
[controller]
kind = "event_triggered"
[policy]
kind = "periodic"
period = 0.1
eps = 0.1
"#,
    ),
    (
        "pure-transport",
        r#"
name = "pure-transport"
t_end = 0.4
[model]
lambda_u = "1"
lambda_v = "1"
f_u = "0"
f_v = "0"
g = "0"
[initial]
u = "sin(pi*x)^2"
v = "sin(pi*x)^2"
[controller]
kind = "open_loop"
input = "0"
"#,
    ),
    (
        "zero",
        r#"
name = "zero"
t_end = 10.0
[model]
lambda_u = "case(x < 0.5, 0.2, 2 - x)"
lambda_v = "1 + 0.5*x"
f_u = "sin(u + v)/(3 - x)"
f_v = "sin(v - u)"
g = "-v"
[initial]
u = "0"
v = "0"
[controller]
kind = "event_triggered"
[policy]
kind = "state_dependent"
eps_min = 0.05
gain = 0.25
"#,
    ),
    (
        "linear-example",
        r#"
name = "linear-example"
t_end = 6.0
[model.linear]
eps1 = "1"
eps2 = "1 + 0.5*x"
c1 = "0.5"
c2 = "1 + x"
q = 0.5
[initial]
u = "cos(3*x)"
v = "1 - x"
[controller]
kind = "event_triggered_linear"
[policy]
kind = "fixed"
eps = 0.05
"#,
    ),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

/// TOML source of a built-in scenario.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| s.trim_start())
}

pub fn builtin(name: &str) -> Option<Scenario> {
    builtin_source(name).map(|text| Scenario::from_toml(text, None).expect("built-in scenarios are valid"))
}

/// Headline numbers of a run, written as `summary.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub n_cells: usize,
    pub dt: f64,
    pub t_end: f64,
    pub horizon: f64,
    pub settling_time: f64,
    pub event_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_dwell: Option<f64>,
    pub consecutive_event_pairs: usize,
    pub zeno_suspected: bool,
    pub initial_norm: f64,
    pub max_norm: f64,
    pub final_norm: f64,
    /// `max ||w||_inf` over `t >= settling_time`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_norm_after_settling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_v0_error_after_horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_trigger_excess: Option<f64>,
    pub distinct_inputs: usize,
    /// `max_norm > initial_norm`.
    pub grows: bool,
}

impl Summary {
    pub fn new(name: &str, n_cells: usize, t_end: f64, rec: &ClosedLoopRecord) -> Self {
        let d = &rec.diagnostics;
        let after: Vec<f64> = rec
            .series
            .iter()
            .filter(|r| r.t >= d.settling_time)
            .map(|r| r.norm_w_inf)
            .collect();
        Summary {
            name: name.to_string(),
            n_cells,
            dt: d.dt,
            t_end,
            horizon: d.horizon,
            settling_time: d.settling_time,
            event_count: d.event_count,
            min_dwell: d.min_dwell,
            consecutive_event_pairs: d.consecutive_event_pairs,
            zeno_suspected: d.zeno_suspected,
            initial_norm: d.initial_norm,
            max_norm: d.max_norm,
            final_norm: d.final_norm,
            max_norm_after_settling: (!after.is_empty()).then(|| after.iter().fold(0.0, |a: f64, &b| a.max(b))),
            max_v0_error_after_horizon: d.max_v0_error_after_horizon,
            max_trigger_excess: d.max_trigger_excess,
            distinct_inputs: d.distinct_inputs,
            grows: d.max_norm > d.initial_norm,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub record: ClosedLoopRecord,
    pub summary: Summary,
    pub out_dir: PathBuf,
    pub exit_code: i32,
}

fn create<P: AsRef<Path>>(dir: &Path, name: P) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

/// Runs `s` and writes all artifacts into `out_dir`.
pub fn run_scenario(s: &Scenario, out_dir: &Path) -> Result<RunOutcome> {
    let record = s.simulate()?;
    fs::create_dir_all(out_dir)?;
    write_outputs(s, &record, out_dir)?;
    let summary = Summary::new(&s.name, s.grid.n_cells(), s.t_end, &record);
    let mut f = create(out_dir, "summary.toml")?;
    f.write_all(toml::to_string(&summary).expect("summary serializes").as_bytes())?;
    f.flush()?;
    let exit_code = if summary.zeno_suspected { EXIT_ZENO } else { EXIT_OK };
    Ok(RunOutcome {
        record,
        summary,
        out_dir: out_dir.to_path_buf(),
        exit_code,
    })
}

fn write_outputs(s: &Scenario, rec: &ClosedLoopRecord, dir: &Path) -> Result<()> {
    let traj = &rec.trajectory;
    let mut f = create(dir, "trajectory.csv")?;
    traj.write_csv(&s.grid, &mut f)?;
    f.flush()?;
    let mut f = create(dir, "boundary.csv")?;
    traj.write_boundary_csv(&mut f)?;
    f.flush()?;
    let mut f = create(dir, "events.csv")?;
    traj.write_events_csv(&mut f)?;
    f.flush()?;
    let mut f = create(dir, "diagnostics.csv")?;
    rec.write_diagnostics_csv(&mut f)?;
    f.flush()?;

    let mut f = create(dir, "panel_norm.csv")?;
    writeln!(f, "t,norm_w_inf")?;
    for r in &rec.series {
        writeln!(f, "{:e},{:e}", r.t, r.norm_w_inf)?;
    }
    f.flush()?;

    let event_steps: std::collections::BTreeSet<usize> = traj.events.iter().map(|e| e.step).collect();
    let mut f = create(dir, "panel_input.csv")?;
    writeln!(f, "t,U,event")?;
    for (k, r) in rec.series.iter().enumerate() {
        writeln!(f, "{:e},{:e},{}", r.t, r.input, u8::from(event_steps.contains(&k)))?;
    }
    f.flush()?;

    let reference = s.policy.as_ref().and_then(|p| p.reference.as_ref());
    let mut f = create(dir, "panel_boundary.csv")?;
    writeln!(f, "t,v0,g_ref,eps_t")?;
    for r in &rec.series {
        let g = reference.map_or(0.0, |c| c.eval(&[r.t]));
        let eps = r.eps_t.map(|e| format!("{e:e}")).unwrap_or_default();
        writeln!(f, "{:e},{:e},{:e},{}", r.t, r.v0, g, eps)?;
    }
    f.flush()?;
    Ok(())
}

/// One level of a refinement study.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRow {
    pub n_cells: usize,
    /// Sup-norm distance of the final state to the finest level's, sampled
    /// at this level's nodes.
    pub deviation_from_finest: f64,
    /// Distance to the next finer level, when there is one.
    pub successive_difference: Option<f64>,
    /// `log2`-type rate from consecutive successive differences.
    pub observed_order: Option<f64>,
    pub event_count: usize,
}

fn sample_linear(fine: &[f64], x: f64) -> f64 {
    let n = fine.len() - 1;
    let pos = x * n as f64;
    let k = (pos.floor() as usize).min(n - 1);
    let th = pos - k as f64;
    fine[k] + th * (fine[k + 1] - fine[k])
}

fn final_distance(coarse: &StateProfile, fine: &StateProfile) -> f64 {
    let n = coarse.n_nodes() - 1;
    (0..=n)
        .map(|i| {
            let x = i as f64 / n as f64;
            let du = (coarse.u[i] - sample_linear(&fine.u, x)).abs();
            let dv = (coarse.v[i] - sample_linear(&fine.v, x)).abs();
            du.max(dv)
        })
        .fold(0.0, f64::max)
}

/// Reruns `s` on every level in `levels` (sorted ascending) and compares
/// the final states.
pub fn refinement_study(s: &Scenario, levels: &[usize]) -> Result<Vec<RefinementRow>> {
    if levels.len() < 2 {
        return Err(Error::invalid("levels", "need at least two levels"));
    }
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    let records: Vec<ClosedLoopRecord> = levels
        .par_iter()
        .map(|&n| s.clone().with_n_cells(n)?.simulate())
        .collect::<Result<_>>()?;
    let finals: Vec<&StateProfile> = records.iter().map(|r| r.trajectory.last()).collect();
    let finest = *finals.last().expect("at least two levels");
    let succ: Vec<f64> = (0..levels.len() - 1)
        .map(|k| final_distance(finals[k], finals[k + 1]))
        .collect();
    Ok((0..levels.len())
        .map(|k| {
            let observed_order = (k + 2 < levels.len())
                .then(|| (succ[k] / succ[k + 1]).ln() / (levels[k + 1] as f64 / levels[k] as f64).ln());
            RefinementRow {
                n_cells: levels[k],
                deviation_from_finest: final_distance(finals[k], finest),
                successive_difference: succ.get(k).copied(),
                observed_order: observed_order.filter(|p| p.is_finite()),
                event_count: records[k].diagnostics.event_count,
            }
        })
        .collect())
}

pub fn write_refinement_csv<W: Write>(rows: &[RefinementRow], mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "n_cells,deviation_from_finest,successive_difference,observed_order,event_count"
    )?;
    let opt = |z: Option<f64>| z.map(|z| format!("{z:e}")).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{:e},{},{},{}",
            r.n_cells,
            r.deviation_from_finest,
            opt(r.successive_difference),
            opt(r.observed_order),
            r.event_count
        )?;
    }
    Ok(())
}

/// Parsed CSV: header names and numeric rows (empty cells become `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Reads the numeric CSV files written by this crate.
pub fn read_csv<R: BufRead>(r: R) -> Result<CsvTable> {
    let mut lines = r.lines();
    let header: Vec<String> = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::invalid("csv", "empty file"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let row: Vec<Option<f64>> = line
            .split(',')
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some)
                }
            })
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid("csv", format!("row {}: {e}", k + 2)))?;
        if row.len() != header.len() {
            return Err(Error::invalid(
                "csv",
                format!("row {}: expected {} columns", k + 2, header.len()),
            ));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

/// Rebuilds the profiles of a `t,x,u,v` trajectory file.
pub fn read_trajectory_csv<R: BufRead>(r: R) -> Result<Vec<StateProfile>> {
    let table = read_csv(r)?;
    if table.header != ["t", "x", "u", "v"] {
        return Err(Error::invalid("csv", "expected header t,x,u,v"));
    }
    let mut by_time: BTreeMap<u64, usize> = BTreeMap::new();
    let mut out: Vec<StateProfile> = Vec::new();
    for row in &table.rows {
        let get = |i: usize| row[i].ok_or_else(|| Error::invalid("csv", "empty cell"));
        let t = get(0)?;
        let idx = *by_time.entry(t.to_bits()).or_insert_with(|| {
            out.push(StateProfile {
                t,
                u: Vec::new(),
                v: Vec::new(),
            });
            out.len() - 1
        });
        out[idx].u.push(get(2)?);
        out[idx].v.push(get(3)?);
    }
    Ok(out)
}

/// Rebuilds the event log of a `k,t_k,U_old,U_new` file.
pub fn read_events_csv<R: BufRead>(r: R) -> Result<Vec<EventRecord>> {
    let table = read_csv(r)?;
    if table.header != ["k", "t_k", "U_old", "U_new"] {
        return Err(Error::invalid("csv", "expected header k,t_k,U_old,U_new"));
    }
    table
        .rows
        .iter()
        .map(|row| {
            let get = |i: usize| row[i].ok_or_else(|| Error::invalid("csv", "empty cell"));
            Ok(EventRecord {
                k: get(0)? as usize,
                t: get(1)?,
                u_old: get(2)?,
                u_new: get(3)?,
                trigger_value: f64::NAN,
                step: 0,
            })
        })
        .collect()
}
