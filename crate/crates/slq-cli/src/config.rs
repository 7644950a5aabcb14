//! Experiment configuration: file parsing, schema validation with key-path
//! error messages, and effective values after command-line overrides.

use serde::{Deserialize, Serialize};
use slq_core::error::{Error, Result};
use slq_core::forward::TimeGrid;
use slq_core::presets::{self, PRESET_NAMES};
use slq_core::problem::{from_parabolic_spec, LQProblem};
use slq_core::spectral::SpectralBasis;
use std::path::{Path, PathBuf};

/// Identity checks accepted in `verify.checks` (plus the shorthand "all").
pub const CHECK_NAMES: [&str; 6] = [
    "transposition",
    "hlambda-transposition",
    "value",
    "optimality",
    "cost-decomposition",
    "stationarity",
];

/// Presets whose coefficients depend on the Brownian path. These need a
/// seed already at validation time; deterministic problems only need one
/// once a Monte Carlo stage actually runs.
const RANDOM_PRESETS: [&str; 3] = [
    "heat-1d-random",
    "wonham-random",
    "conditional-expectation",
];

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "SLQ_OUT_DIR";

/// Top-level experiment description. Every field is optional at parse time;
/// [`ExperimentConfig::validate`] reports all missing or inconsistent keys
/// at once, each prefixed by its key path.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// RNG seed; mandatory for any stochastic stage.
    pub seed: Option<u64>,
    pub problem: ProblemSection,
    pub solver: SolverSection,
    pub verify: VerifySection,
    pub output: OutputSection,
}

/// Problem selection: either a named preset or the parametric parabolic
/// family (spatial coefficient expressions, see `presets::parse_spatial`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    /// Named preset; mutually exclusive with the parametric coefficients.
    pub preset: Option<String>,
    /// Retained eigenmodes N (defaults to 1 for scalar presets).
    pub modes: Option<usize>,
    /// Spatial dimension m of the domain (0,1)^m; defaults to 1.
    pub spatial_dim: Option<usize>,
    /// Terminal time T.
    pub horizon: Option<f64>,
    /// Time steps; `solver.steps` takes precedence when both are set.
    pub steps: Option<usize>,
    /// Parametric coefficients: state drift `a1`, state noise `a2`,
    /// control drift `b1`, control noise `b2`, and the weights `q`, `r`,
    /// `g`. All seven are required together.
    pub a1: Option<String>,
    pub a2: Option<String>,
    pub b1: Option<String>,
    pub b2: Option<String>,
    pub q: Option<String>,
    pub r: Option<String>,
    pub g: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// One of auto | ode | bsde | fixed-point (default auto).
    pub regime: Option<String>,
    /// Monte Carlo paths for the regression solvers (default 4000).
    pub paths: Option<usize>,
    /// Polynomial feature degree for the regressions (default 3).
    pub feature_degree: Option<usize>,
    /// Convergence tolerance for the fixed-point iteration.
    pub tol: Option<f64>,
    /// Iteration cap for the fixed-point iteration (default 50).
    pub max_iters: Option<usize>,
    /// Time steps; overrides `problem.steps`.
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Identity checks to run; "all" expands to every known check.
    /// Defaults to ["value", "stationarity"].
    pub checks: Option<Vec<String>>,
    /// Monte Carlo paths per check (default 4000).
    pub paths: Option<usize>,
    /// Normalized-residual tolerance for the identity checks (default 0.05).
    pub tolerance: Option<f64>,
    /// Perturbation draws for the optimality check (default 8).
    pub perturbations: Option<usize>,
    /// Amplitude of the drawn test inputs for the transposition checks
    /// (default 1.0).
    pub input_scale: Option<f64>,
    /// The initial state is `state_scale` times the leading basis mode
    /// (default 1.0).
    pub state_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Output directory; defaults to `$SLQ_OUT_DIR`, then "slq-out".
    pub directory: Option<String>,
    /// Subset of {"json", "csv"}; defaults to both.
    pub formats: Option<Vec<String>>,
    /// Write the P-diagnostics CSV (default true).
    pub dump_p_values: Option<bool>,
    /// Write the fixed-point iteration log when present (default false).
    pub dump_iterations: Option<bool>,
}

impl ExperimentConfig {
    /// Reads and deserializes a config file (TOML or JSON, detected by
    /// extension and content). Does not run semantic validation; call
    /// [`ExperimentConfig::validate`] after applying overrides.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file '{}': {e}", path.display()))
        })?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
            || text.trim_start().starts_with('{');
        if is_json {
            let mut de = serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(&mut de).map_err(|e| {
                let key = e.path().to_string();
                let prefix = if key == "." { String::new() } else { format!("{key}: ") };
                Error::Config(format!(
                    "config file '{}': {prefix}{}",
                    path.display(),
                    e.inner()
                ))
            })
        } else {
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("config file '{}': {e}", path.display())))
        }
    }

    /// Applies command-line overrides: `--seed`, `--out`, `--paths` (both
    /// solver and verifier), `--steps` (solver grid).
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        out: Option<&Path>,
        paths: Option<usize>,
        steps: Option<usize>,
    ) {
        if let Some(s) = seed {
            self.seed = Some(s);
        }
        if let Some(dir) = out {
            self.output.directory = Some(dir.display().to_string());
        }
        if let Some(p) = paths {
            self.solver.paths = Some(p);
            self.verify.paths = Some(p);
        }
        if let Some(s) = steps {
            self.solver.steps = Some(s);
        }
    }

    /// Validates the whole config, collecting every schema error with its
    /// key path into one message.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let p = &self.problem;
        let parametric: [(&str, &Option<String>); 7] = [
            ("a1", &p.a1),
            ("a2", &p.a2),
            ("b1", &p.b1),
            ("b2", &p.b2),
            ("q", &p.q),
            ("r", &p.r),
            ("g", &p.g),
        ];
        let given: Vec<&str> = parametric
            .iter()
            .filter(|(_, v)| v.is_some())
            .map(|(n, _)| *n)
            .collect();
        match (&p.preset, given.is_empty()) {
            (Some(name), true) => {
                if !PRESET_NAMES.contains(&name.as_str()) {
                    errs.push(format!(
                        "problem.preset: unknown preset '{name}'; available: {}",
                        PRESET_NAMES.join(", ")
                    ));
                }
            }
            (Some(_), false) => errs.push(format!(
                "problem.{}: parametric coefficients conflict with problem.preset",
                given[0]
            )),
            (None, false) => {
                for (name, value) in &parametric {
                    if value.is_none() {
                        errs.push(format!(
                            "problem.{name}: missing (parametric problems need a1, a2, b1, b2, q, r, g)"
                        ));
                    }
                }
                if p.modes.is_none() {
                    errs.push("problem.modes: required for parametric problems".into());
                }
            }
            (None, true) => errs.push(
                "problem.preset: missing mandatory key (set a preset or the parametric coefficients)"
                    .into(),
            ),
        }
        if p.modes == Some(0) {
            errs.push("problem.modes: must be at least 1".into());
        }
        if let Some(d) = p.spatial_dim {
            if !(1..=2).contains(&d) {
                errs.push("problem.spatial_dim: must be 1 or 2".into());
            }
        }
        match p.horizon {
            None => errs.push("problem.horizon: missing mandatory key".into()),
            Some(h) if !(h > 0.0) => errs.push("problem.horizon: must be positive".into()),
            _ => {}
        }
        match (self.solver.steps, p.steps) {
            (Some(0), _) => errs.push("solver.steps: must be at least 1".into()),
            (None, Some(0)) => errs.push("problem.steps: must be at least 1".into()),
            (None, None) => errs.push(
                "solver.steps: missing mandatory key (set solver.steps or problem.steps)".into(),
            ),
            _ => {}
        }

        let s = &self.solver;
        if let Some(regime) = &s.regime {
            if !["auto", "ode", "bsde", "fixed-point"].contains(&regime.as_str()) {
                errs.push(format!(
                    "solver.regime: unknown regime '{regime}'; expected auto, ode, bsde, or fixed-point"
                ));
            } else if regime == "ode" && self.problem_is_random() {
                errs.push("solver.regime: ode requires deterministic coefficients".into());
            }
        }
        if s.paths == Some(0) {
            errs.push("solver.paths: must be at least 1".into());
        }
        if s.max_iters == Some(0) {
            errs.push("solver.max_iters: must be at least 1".into());
        }
        if let Some(t) = s.tol {
            if !(t > 0.0) {
                errs.push("solver.tol: must be positive".into());
            }
        }

        let v = &self.verify;
        if let Some(checks) = &v.checks {
            for c in checks {
                if c != "all" && !CHECK_NAMES.contains(&c.as_str()) {
                    errs.push(format!(
                        "verify.checks: unknown check '{c}'; available: all, {}",
                        CHECK_NAMES.join(", ")
                    ));
                }
            }
        }
        if v.paths == Some(0) {
            errs.push("verify.paths: must be at least 1".into());
        }
        if let Some(t) = v.tolerance {
            if !(t > 0.0) {
                errs.push("verify.tolerance: must be positive".into());
            }
        }
        if v.perturbations == Some(0) && self.effective_checks().iter().any(|c| c == "optimality")
        {
            errs.push("verify.perturbations: must be at least 1 for the optimality check".into());
        }
        for (key, value) in [("input_scale", v.input_scale), ("state_scale", v.state_scale)] {
            if let Some(x) = value {
                if !x.is_finite() || x < 0.0 {
                    errs.push(format!("verify.{key}: must be a finite nonnegative number"));
                }
            }
        }

        if let Some(formats) = &self.output.formats {
            for f in formats {
                if !["csv", "json"].contains(&f.as_str()) {
                    errs.push(format!(
                        "output.formats: unknown format '{f}'; expected csv or json"
                    ));
                }
            }
        }

        let needs_seed_now = self.problem_is_random()
            || matches!(s.regime.as_deref(), Some("bsde") | Some("fixed-point"));
        if self.seed.is_none() && needs_seed_now {
            errs.push(
                "seed: mandatory for stochastic runs (random coefficients or Monte Carlo solvers)"
                    .into(),
            );
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    fn problem_is_random(&self) -> bool {
        self.problem
            .preset
            .as_deref()
            .is_some_and(|n| RANDOM_PRESETS.contains(&n))
    }

    /// Time steps with `solver.steps` taking precedence.
    pub fn effective_steps(&self) -> Option<usize> {
        self.solver.steps.or(self.problem.steps)
    }

    /// Builds the LQ problem described by the problem section.
    pub fn build_problem(&self) -> Result<LQProblem> {
        let steps = self
            .effective_steps()
            .ok_or_else(|| Error::Config("solver.steps: missing mandatory key".into()))?;
        let horizon = self
            .problem
            .horizon
            .ok_or_else(|| Error::Config("problem.horizon: missing mandatory key".into()))?;
        if let Some(name) = &self.problem.preset {
            return presets::build(name, self.problem.modes.unwrap_or(1), horizon, steps);
        }
        let modes = self
            .problem
            .modes
            .ok_or_else(|| Error::Config("problem.modes: required for parametric problems".into()))?;
        let basis = SpectralBasis::dirichlet(self.problem.spatial_dim.unwrap_or(1), modes)?;
        let parse = |field: &Option<String>, name: &str| {
            let expr = field.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "problem.{name}: missing (parametric problems need a1, a2, b1, b2, q, r, g)"
                ))
            })?;
            presets::parse_spatial(expr)
                .map_err(|e| Error::Config(format!("problem.{name}: {e}")))
        };
        let (a1, a2) = (parse(&self.problem.a1, "a1")?, parse(&self.problem.a2, "a2")?);
        let (b1, b2) = (parse(&self.problem.b1, "b1")?, parse(&self.problem.b2, "b2")?);
        let (q, r, g) = (
            parse(&self.problem.q, "q")?,
            parse(&self.problem.r, "r")?,
            parse(&self.problem.g, "g")?,
        );
        from_parabolic_spec(&*a1, &*a2, &*b1, &*b2, &*q, &*r, &*g, &basis, horizon, steps)
    }

    /// The solver time grid `[0, horizon]` with the effective step count.
    pub fn grid(&self) -> Result<TimeGrid> {
        let steps = self
            .effective_steps()
            .ok_or_else(|| Error::Config("solver.steps: missing mandatory key".into()))?;
        let horizon = self
            .problem
            .horizon
            .ok_or_else(|| Error::Config("problem.horizon: missing mandatory key".into()))?;
        TimeGrid::new(0.0, horizon, steps)
    }

    /// The seed, or a config error naming the key when a stochastic stage
    /// needs one.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::Config(
                "seed: mandatory for stochastic runs (Monte Carlo solves, simulation, verification)"
                    .into(),
            )
        })
    }

    /// Requested checks with "all" expanded, in first-mention order.
    pub fn effective_checks(&self) -> Vec<String> {
        let requested = self
            .verify
            .checks
            .clone()
            .unwrap_or_else(|| vec!["value".into(), "stationarity".into()]);
        let mut out: Vec<String> = Vec::new();
        for c in requested {
            if c == "all" {
                for name in CHECK_NAMES {
                    if !out.iter().any(|x| x == name) {
                        out.push(name.to_string());
                    }
                }
            } else if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    pub fn solver_regime(&self) -> &str {
        self.solver.regime.as_deref().unwrap_or("auto")
    }

    pub fn solver_paths(&self) -> usize {
        self.solver.paths.unwrap_or(4000)
    }

    pub fn feature_degree(&self) -> usize {
        self.solver.feature_degree.unwrap_or(3)
    }

    pub fn max_iters(&self) -> usize {
        self.solver.max_iters.unwrap_or(50)
    }

    pub fn verify_paths(&self) -> usize {
        self.verify.paths.unwrap_or(4000)
    }

    pub fn verify_tolerance(&self) -> f64 {
        self.verify.tolerance.unwrap_or(0.05)
    }

    pub fn perturbations(&self) -> usize {
        self.verify.perturbations.unwrap_or(8)
    }

    pub fn input_scale(&self) -> f64 {
        self.verify.input_scale.unwrap_or(1.0)
    }

    pub fn state_scale(&self) -> f64 {
        self.verify.state_scale.unwrap_or(1.0)
    }

    pub fn dump_p_values(&self) -> bool {
        self.output.dump_p_values.unwrap_or(true)
    }

    pub fn dump_iterations(&self) -> bool {
        self.output.dump_iterations.unwrap_or(false)
    }

    pub fn has_format(&self, format: &str) -> bool {
        match &self.output.formats {
            Some(fs) => fs.iter().any(|f| f == format),
            None => true,
        }
    }

    /// Output directory: config value, then `$SLQ_OUT_DIR`, then "slq-out".
    pub fn output_directory(&self) -> PathBuf {
        self.output
            .directory
            .clone()
            .or_else(|| std::env::var(OUT_DIR_ENV).ok())
            .unwrap_or_else(|| "slq-out".into())
            .into()
    }

    /// Canonical JSON echo of the effective config (field order fixed by
    /// the struct declarations), used for the config digest and the
    /// `config.json` artifact.
    pub fn canonical_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("config serialization cannot fail");
        text.push('\n');
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = Some(42);
        cfg.problem.preset = Some("heat-1d-deterministic".into());
        cfg.problem.modes = Some(8);
        cfg.problem.horizon = Some(1.0);
        cfg.problem.steps = Some(200);
        cfg
    }

    #[test]
    fn minimal_preset_config_is_valid() {
        let cfg = minimal();
        cfg.validate().unwrap();
        let problem = cfg.build_problem().unwrap();
        assert_eq!(problem.basis.modes(), 8);
        assert_eq!(problem.time_steps, 200);
    }

    #[test]
    fn zero_steps_error_names_the_key_path() {
        let mut cfg = minimal();
        cfg.solver.steps = Some(0);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("solver.steps"), "{err}");

        let mut cfg = minimal();
        cfg.problem.steps = Some(0);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("problem.steps"), "{err}");
    }

    #[test]
    fn validation_collects_all_errors() {
        let mut cfg = ExperimentConfig::default();
        cfg.solver.regime = Some("magic".into());
        cfg.verify.checks = Some(vec!["bogus".into()]);
        let err = cfg.validate().unwrap_err().to_string();
        for key in [
            "problem.preset",
            "problem.horizon",
            "solver.steps",
            "solver.regime",
            "verify.checks",
        ] {
            assert!(err.contains(key), "missing '{key}' in: {err}");
        }
    }

    #[test]
    fn negative_control_weight_surfaces_as_assumption_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.problem.modes = Some(4);
        cfg.problem.horizon = Some(1.0);
        cfg.problem.steps = Some(50);
        for (field, value) in [
            (&mut cfg.problem.a1, "0"),
            (&mut cfg.problem.a2, "0"),
            (&mut cfg.problem.b1, "1"),
            (&mut cfg.problem.b2, "0"),
            (&mut cfg.problem.q, "1"),
            (&mut cfg.problem.r, "-1"),
            (&mut cfg.problem.g, "1"),
        ] {
            *field = Some(value.into());
        }
        cfg.validate().unwrap();
        let err = cfg.build_problem().unwrap_err();
        assert!(matches!(err, Error::Assumption(_)), "{err}");
        assert!(err.to_string().contains("control weight r"), "{err}");
    }

    #[test]
    fn random_preset_requires_a_seed() {
        let mut cfg = minimal();
        cfg.problem.preset = Some("wonham-random".into());
        cfg.seed = None;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
        cfg.apply_overrides(Some(7), None, None, None);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = minimal();
        cfg.apply_overrides(Some(9), Some(Path::new("elsewhere")), Some(123), Some(77));
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.output.directory.as_deref(), Some("elsewhere"));
        assert_eq!(cfg.solver_paths(), 123);
        assert_eq!(cfg.verify_paths(), 123);
        assert_eq!(cfg.effective_steps(), Some(77));
    }

    #[test]
    fn all_expands_to_every_check_once() {
        let mut cfg = minimal();
        cfg.verify.checks = Some(vec!["value".into(), "all".into(), "value".into()]);
        let checks = cfg.effective_checks();
        assert_eq!(checks.len(), CHECK_NAMES.len());
        assert_eq!(checks[0], "value");
        for name in CHECK_NAMES {
            assert_eq!(checks.iter().filter(|c| c.as_str() == name).count(), 1);
        }
    }

    #[test]
    fn toml_and_json_configs_parse_with_key_paths_in_errors() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("a.toml");
        std::fs::write(
            &toml_path,
            "seed = 1\n[problem]\npreset = \"scalar-benchmark\"\nhorizon = 1.0\nsteps = 100\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::from_path(&toml_path).unwrap();
        cfg.validate().unwrap();

        let json_path = dir.path().join("b.json");
        let mut f = std::fs::File::create(&json_path).unwrap();
        write!(
            f,
            "{}",
            r#"{"seed": 1, "solver": {"steps": "lots"}, "problem": {"preset": "scalar-benchmark", "horizon": 1.0}}"#
        )
        .unwrap();
        let err = ExperimentConfig::from_path(&json_path).unwrap_err().to_string();
        assert!(err.contains("solver.steps"), "{err}");

        let unknown = dir.path().join("c.toml");
        std::fs::write(&unknown, "seed = 1\n[solver]\npths = 4\n").unwrap();
        let err = ExperimentConfig::from_path(&unknown).unwrap_err().to_string();
        assert!(err.contains("pths"), "{err}");
    }

    #[test]
    fn canonical_json_round_trips() {
        let cfg = minimal();
        let echo = cfg.canonical_json();
        let back: ExperimentConfig = serde_json::from_str(&echo).unwrap();
        assert_eq!(back.canonical_json(), echo);
    }
}
