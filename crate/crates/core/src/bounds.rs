//! Closed-form fairness bounds with additive component breakdowns.
//!
//! All logarithms are natural logarithms.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groupstats::ShiftMetrics;

/// Inputs shared by the bound formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundParams {
    /// Upper bound `M` of the loss.
    #[serde(rename = "M")]
    pub loss_bound: f64,
    /// Lipschitz constant `L` of the loss in its first argument.
    #[serde(rename = "L")]
    pub lipschitz: f64,
    /// Loss bound `B` used by the group expected-loss bounds.
    #[serde(rename = "B")]
    pub shift_scale: f64,
    pub d_vc: u64,
    pub delta: f64,
    pub epsilon: f64,
    /// Sample size for the VC-type bounds.
    #[serde(rename = "m")]
    pub sample_size: u64,
    /// Sample size for the Hoeffding bound.
    #[serde(rename = "n")]
    pub hoeffding_n: u64,
    pub k: u64,
    pub min_r: f64,
    /// `‖f̂ − f*‖∞` slack.
    pub approx_eps: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams {
            loss_bound: 1.0,
            lipschitz: 1.0,
            shift_scale: 1.0,
            d_vc: 3,
            delta: 0.05,
            epsilon: 0.1,
            sample_size: 10_000,
            hoeffding_n: 1000,
            k: 2,
            min_r: 0.5,
            approx_eps: 0.0,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must be a finite positive number, got {v}"),
        ))
    }
}

fn at_least(field: &str, v: u64, min: u64) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must be at least {min}, got {v}"),
        ))
    }
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        positive("M", self.loss_bound)?;
        positive("L", self.lipschitz)?;
        positive("B", self.shift_scale)?;
        at_least("d_vc", self.d_vc, 1)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(
                "delta",
                format!("must lie in (0, 1), got {}", self.delta),
            ));
        }
        positive("epsilon", self.epsilon)?;
        at_least("m", self.sample_size, 1)?;
        at_least("n", self.hoeffding_n, 1)?;
        at_least("k", self.k, 2)?;
        if !(self.min_r > 0.0 && self.min_r <= 1.0) {
            return Err(Error::invalid(
                "min_r",
                format!("must lie in (0, 1], got {}", self.min_r),
            ));
        }
        if !(self.approx_eps >= 0.0 && self.approx_eps.is_finite()) {
            return Err(Error::invalid(
                "approx_eps",
                format!("must be >= 0, got {}", self.approx_eps),
            ));
        }
        Ok(())
    }

    fn require_vc_sample(&self) -> Result<()> {
        if self.sample_size < self.d_vc {
            return Err(Error::invalid(
                "m",
                format!(
                    "sample size {} is below d_vc = {}",
                    self.sample_size, self.d_vc
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    BoundedLoss,
    Lipschitz,
    GaussianGroups,
    FiniteVc,
    FiniteClass,
}

/// Which covariance-shift term enters the distribution-shift bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum CovMode {
    /// `√‖Σ_i − Σ‖_F`
    #[serde(rename = "frobenius")]
    Frobenius,
    /// The trace term of the Gaussian transport distance.
    #[default]
    #[serde(rename = "w2", alias = "w2_trace")]
    W2Trace,
}

impl CovMode {
    pub fn cov_term(self, shift: &ShiftMetrics) -> f64 {
        match self {
            CovMode::Frobenius => shift.cov_shift_frob,
            CovMode::W2Trace => shift.sigma_diff,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CovMode::Frobenius => "frobenius",
            CovMode::W2Trace => "w2",
        }
    }
}

impl std::str::FromStr for CovMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frobenius" => Ok(CovMode::Frobenius),
            "w2" | "w2_trace" => Ok(CovMode::W2Trace),
            other => Err(Error::invalid(
                "cov_mode",
                format!("unknown mode `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub value: f64,
    /// Additive terms; `value` is their sum.
    pub components: Vec<Component>,
    pub assumptions: Vec<Assumption>,
    /// Covariance term used, for the shift-dependent bounds.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cov_mode: Option<CovMode>,
    /// Boolean diagnostics, e.g. `clamped`.
    #[serde(skip_serializing_if = "IndexMap::is_empty", default)]
    pub flags: IndexMap<String, bool>,
}

impl BoundReport {
    fn new(name: &str, assumptions: &[Assumption]) -> Self {
        BoundReport {
            name: name.to_string(),
            value: 0.0,
            components: Vec::new(),
            assumptions: assumptions.to_vec(),
            cov_mode: None,
            flags: IndexMap::new(),
        }
    }

    fn with_mode(mut self, mode: CovMode) -> Self {
        self.cov_mode = Some(mode);
        self
    }

    fn with(mut self, name: &str, value: f64) -> Self {
        self.components.push(Component {
            name: name.to_string(),
            value,
        });
        self.value = self.components.iter().map(|c| c.value).sum();
        self
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.value)
    }

    pub fn flag(&self, name: &str) -> Option<bool> {
        self.flags.get(name).copied()
    }
}

fn nonneg(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must be a finite non-negative number, got {v}"),
        ))
    }
}

fn shift_ok(shift: &ShiftMetrics) -> Result<()> {
    nonneg("mean_shift", shift.mean_shift)?;
    nonneg("cov_shift_frob", shift.cov_shift_frob)?;
    nonneg("sigma_diff", shift.sigma_diff)
}

/// `M·√(ln(2k/δ) / (2·n·min_r))`
pub fn hoeffding_term(p: &BoundParams) -> f64 {
    let k = p.k as f64;
    let n = p.hoeffding_n as f64;
    p.loss_bound * ((2.0 * k / p.delta).ln() / (2.0 * n * p.min_r)).sqrt()
}

/// Fairness error of an estimate of the fair optimum: the optimum's gap plus
/// a concentration term plus the approximation slack.
pub fn hoeffding_fairness_bound(p: &BoundParams, base_gap: f64) -> Result<BoundReport> {
    p.validate()?;
    nonneg("base_gap", base_gap)?;
    Ok(BoundReport::new(
        "hoeffding_fairness",
        &[Assumption::BoundedLoss, Assumption::Lipschitz],
    )
    .with("base_gap", base_gap)
    .with("hoeffding", hoeffding_term(p))
    .with("approximation", 2.0 * p.lipschitz * p.approx_eps))
}

/// `M·√(8·(d·ln(2e·m/d) + ln(4k²/δ)) / m)`
pub fn generalization_term(p: &BoundParams) -> f64 {
    let d = p.d_vc as f64;
    let m = p.sample_size as f64;
    let k = p.k as f64;
    let capacity = d * (2.0 * std::f64::consts::E * m / d).ln() + (4.0 * k * k / p.delta).ln();
    p.loss_bound * (8.0 * capacity / m).sqrt()
}

/// Uniform bound on the true fairness gap from the empirical one.
pub fn generalization_bound(p: &BoundParams, emp_gap: f64) -> Result<BoundReport> {
    p.validate()?;
    nonneg("emp_gap", emp_gap)?;
    if p.sample_size < p.d_vc {
        return Err(Error::SampleTooSmall {
            m: p.sample_size,
            d_vc: p.d_vc,
        });
    }
    Ok(BoundReport::new(
        "generalization",
        &[Assumption::BoundedLoss, Assumption::FiniteVc],
    )
    .with("empirical_gap", emp_gap)
    .with("complexity", generalization_term(p)))
}

fn vc_log_term(p: &BoundParams) -> f64 {
    let d = p.d_vc as f64;
    let m = p.sample_size as f64;
    2.0 * d * (std::f64::consts::E * m / d).ln()
}

/// `(2LM/√m)·(√(2d·ln(e·m/d)) + √(2·ln(4/δ)))`
pub fn convergence_term(p: &BoundParams) -> f64 {
    let m = p.sample_size as f64;
    let scale = 2.0 * p.lipschitz * p.loss_bound / m.sqrt();
    scale * (vc_log_term(p).sqrt() + (2.0 * (4.0 / p.delta).ln()).sqrt())
}

/// Excess fairness risk of the empirical fairness-risk minimizer.
pub fn convergence_bound(p: &BoundParams) -> Result<BoundReport> {
    p.validate()?;
    p.require_vc_sample()?;
    Ok(BoundReport::new(
        "convergence",
        &[
            Assumption::BoundedLoss,
            Assumption::Lipschitz,
            Assumption::FiniteVc,
        ],
    )
    .with("complexity", convergence_term(p)))
}

/// Excess group risk of an overall-trained minimizer under Gaussian shift.
pub fn group_risk_bound(
    p: &BoundParams,
    shift: &ShiftMetrics,
    mode: CovMode,
) -> Result<BoundReport> {
    p.validate()?;
    p.require_vc_sample()?;
    shift_ok(shift)?;
    Ok(BoundReport::new(
        "group_risk",
        &[
            Assumption::Lipschitz,
            Assumption::FiniteVc,
            Assumption::GaussianGroups,
        ],
    )
    .with("complexity", convergence_term(p))
    .with("mean_shift", p.lipschitz * shift.mean_shift)
    .with("cov_shift", p.lipschitz * mode.cov_term(shift))
    .with_mode(mode))
}

/// Accuracy cost for a group of the fairness-risk minimizer.
pub fn tradeoff_bound(p: &BoundParams, shift: &ShiftMetrics, mode: CovMode) -> Result<BoundReport> {
    p.validate()?;
    p.require_vc_sample()?;
    shift_ok(shift)?;
    let m = p.sample_size as f64;
    let complexity = 4.0 * p.lipschitz * p.loss_bound / m.sqrt()
        * (vc_log_term(p) + 2.0 * (4.0 / p.delta).ln()).sqrt();
    Ok(BoundReport::new(
        "tradeoff",
        &[
            Assumption::BoundedLoss,
            Assumption::Lipschitz,
            Assumption::FiniteVc,
            Assumption::GaussianGroups,
        ],
    )
    .with("complexity", complexity)
    .with("mean_shift", p.lipschitz * shift.mean_shift)
    .with("cov_shift", p.lipschitz * mode.cov_term(shift))
    .with_mode(mode))
}

/// Expected loss of a group bounded by the overall loss plus `B`-scaled shift.
pub fn group_expected_loss_bound(
    overall_loss: f64,
    p: &BoundParams,
    shift: &ShiftMetrics,
    mode: CovMode,
) -> Result<BoundReport> {
    nonneg("overall_loss", overall_loss)?;
    positive("B", p.shift_scale)?;
    shift_ok(shift)?;
    Ok(BoundReport::new(
        "group_expected_loss",
        &[Assumption::BoundedLoss, Assumption::GaussianGroups],
    )
    .with("overall_loss", overall_loss)
    .with("mean_shift", p.shift_scale * shift.mean_shift)
    .with("cov_shift", p.shift_scale * mode.cov_term(shift))
    .with_mode(mode))
}

/// Feature-space form of the group expected-loss bound. A negative scatter
/// difference is clamped to zero and flagged.
pub fn feature_distance_bound(
    overall_loss: f64,
    b: f64,
    centroid_dist: f64,
    e_d2_group: f64,
    e_d2_overall: f64,
) -> Result<BoundReport> {
    nonneg("overall_loss", overall_loss)?;
    positive("B", b)?;
    nonneg("centroid_dist", centroid_dist)?;
    nonneg("e_d2_group", e_d2_group)?;
    nonneg("e_d2_overall", e_d2_overall)?;
    let diff = e_d2_group - e_d2_overall;
    let mut report = BoundReport::new(
        "feature_distance",
        &[Assumption::BoundedLoss, Assumption::GaussianGroups],
    )
    .with("overall_loss", overall_loss)
    .with("centroid", b * centroid_dist)
    .with("scatter", b * diff.max(0.0).sqrt());
    report.flags.insert("clamped".into(), diff < 0.0);
    Ok(report)
}

/// Sample size drawn by the finite-class fair ERM algorithm:
/// `⌈8M²k²/ε² · (d·ln(16Mk/ε) + ln(4k²/δ))⌉`.
pub fn sample_complexity(p: &BoundParams) -> Result<u64> {
    p.validate()?;
    let (m, k, eps, d) = (p.loss_bound, p.k as f64, p.epsilon, p.d_vc as f64);
    let lead = 8.0 * m * m * k * k / (eps * eps);
    let logs = d * (16.0 * m * k / eps).ln() + (4.0 * k * k / p.delta).ln();
    let n = (lead * logs).ceil();
    if !n.is_finite() || n < 1.0 || n > u64::MAX as f64 {
        return Err(Error::invalid(
            "epsilon",
            format!("sample complexity {n} is not representable"),
        ));
    }
    Ok(n as u64)
}

/// `(ln|F| + ln(k²/δ)) / m` for a consistent learner over a finite class.
pub fn finite_class_learning_bound(m: u64, class_size: u64, k: u64, delta: f64) -> Result<f64> {
    at_least("m", m, 1)?;
    at_least("class_size", class_size, 1)?;
    at_least("k", k, 2)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(
            "delta",
            format!("must lie in (0, 1), got {delta}"),
        ));
    }
    let k = k as f64;
    Ok(((class_size as f64).ln() + (k * k / delta).ln()) / m as f64)
}

/// Adds the prevalence term `M·|p_i − p_j|` to `report`. Applying it twice
/// adds it twice.
pub fn prevalence_adjusted(
    report: &BoundReport,
    p_i: f64,
    p_j: f64,
    m: f64,
) -> Result<BoundReport> {
    let penalty = crate::metrics::prevalence_penalty(p_i, p_j, m)?;
    Ok(report.clone().with("prevalence", penalty))
}
