//! Experiment configuration: TOML file contents, command-line overrides and
//! the resolved run configuration written to `manifest.json`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fairbound::bounds::{BoundParams, CovMode};
use fairbound::dataset::CsvSchema;
use fairbound::learner::LinearModel;
use fairbound::metrics::LossKind;
use fairbound::verify::{GaussianGroupSpec, LabelRule};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Markdown,
    Both,
}

impl Format {
    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    pub fn markdown(self) -> bool {
        matches!(self, Format::Markdown | Format::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Stats,
    Audit,
    Bounds,
    Erm,
    Simulate,
    Converge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecEntry {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub weight: f64,
    pub label: LabelRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftInput {
    pub mean_shift: f64,
    pub sigma_diff: f64,
    /// Defaults to `sigma_diff` when absent.
    #[serde(default)]
    pub cov_shift_frob: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum CheckKind {
    Hoeffding,
    GroupLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub loss: LossKind,
    pub cov_mode: CovMode,
    pub seed: u64,
    /// Records drawn by `simulate`.
    pub n: usize,
    /// Command-dependent default when absent.
    pub trials: Option<usize>,
    /// Command-dependent default when absent.
    pub n_oracle: Option<usize>,
    pub m_values: Vec<u64>,
    pub bootstrap: usize,
    pub thresholds: ThresholdGrid,
    /// Scores generated records; threshold predictors act on this score.
    pub scorer: LinearModel,
    pub shift: Option<ShiftInput>,
    pub gap: f64,
    pub overall_loss: f64,
    /// `|F|` for the finite-class bound.
    pub class_size: u64,
    pub checks: Vec<CheckKind>,
    /// Exit with status 1 when a check reports a violation.
    pub assert: bool,
    pub bins: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            loss: LossKind::Squared,
            cov_mode: CovMode::W2Trace,
            seed: 0,
            n: 10_000,
            trials: None,
            n_oracle: None,
            m_values: vec![100, 1_000, 10_000, 100_000],
            bootstrap: 1000,
            thresholds: ThresholdGrid {
                lo: 0.02,
                hi: 0.98,
                count: 64,
            },
            scorer: LinearModel {
                weights: vec![1.0],
                bias: 0.0,
            },
            shift: None,
            gap: 0.0,
            overall_loss: 0.0,
            class_size: 64,
            checks: Vec::new(),
            assert: false,
            bins: 30,
        }
    }
}

impl Experiment {
    /// Fills unset sizes with the defaults of `command`.
    pub fn fill_defaults(&mut self, command: CommandKind) {
        let (trials, n_oracle) = match command {
            CommandKind::Converge => (60, 10_000_000),
            _ => (500, 50_000),
        };
        self.trials.get_or_insert(trials);
        self.n_oracle.get_or_insert(n_oracle);
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(500)
    }

    pub fn n_oracle(&self) -> usize {
        self.n_oracle.unwrap_or(50_000)
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub params: BoundParams,
    pub specs: IndexMap<String, SpecEntry>,
    pub experiment: Experiment,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Two unit-variance groups at ±1 whose labels follow the scorer exactly.
pub fn default_specs() -> IndexMap<String, SpecEntry> {
    let rule = LabelRule::Logistic {
        w: vec![1.0],
        b: 0.0,
    };
    [("a", -1.0), ("b", 1.0)]
        .into_iter()
        .map(|(g, mu)| {
            (
                g.to_string(),
                SpecEntry {
                    mu: vec![mu],
                    sigma: vec![vec![1.0]],
                    weight: 0.5,
                    label: rule.clone(),
                },
            )
        })
        .collect()
}

/// Everything a command needs, fully resolved. Serialized as the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tool: String,
    pub version: String,
    pub command: CommandKind,
    pub format: Format,
    pub input: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub schema: CsvSchema,
    pub params: BoundParams,
    pub specs: IndexMap<String, SpecEntry>,
    pub experiment: Experiment,
}

impl RunConfig {
    pub fn group_specs(&self) -> Vec<GaussianGroupSpec> {
        self.specs
            .iter()
            .map(|(g, s)| GaussianGroupSpec {
                group: g.clone(),
                mu: s.mu.clone(),
                sigma: s.sigma.clone(),
                weight: s.weight,
                label: s.label.clone(),
            })
            .collect()
    }

    pub fn require_input(&self) -> anyhow::Result<&Path> {
        match &self.input {
            Some(p) => Ok(p),
            None => bail!("this command needs --input"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = r#"
[params]
M = 1.0
delta = 0.05
d_vc = 1

[specs.a]
mu = [-1.0]
sigma = [[1.0]]
weight = 0.5
label = { kind = "logistic", w = [1.0], b = 0.0 }

[specs.b]
mu = [1.0]
sigma = [[1.0]]
weight = 0.5
label = { kind = "fixed_rate", r = 0.3 }

[experiment]
loss = "zero_one"
cov_mode = "frobenius"
m_values = [100, 1000, 10000, 100000]
thresholds = { lo = 0.02, hi = 0.98, count = 64 }
scorer = { weights = [1.0], bias = 0.0 }
checks = ["hoeffding", "group_loss"]
"#;
        let cfg: ConfigFile = toml::from_str(text).unwrap();
        assert_eq!(cfg.params.d_vc, 1);
        assert_eq!(cfg.params.k, 2);
        assert_eq!(cfg.specs.keys().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(cfg.specs["b"].label, LabelRule::FixedRate { r: 0.3 });
        assert_eq!(cfg.experiment.loss, LossKind::ZeroOne);
        assert_eq!(cfg.experiment.cov_mode, CovMode::Frobenius);
        assert_eq!(
            cfg.experiment.checks,
            [CheckKind::Hoeffding, CheckKind::GroupLoss]
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("[params]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<ConfigFile>("[nonsense]\n").is_err());
    }

    #[test]
    fn shipped_config_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/converge.toml");
        let cfg = ConfigFile::load(&path).unwrap();
        assert_eq!(cfg.specs.len(), 2);
    }
}
