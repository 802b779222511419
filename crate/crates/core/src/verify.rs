//! Synthetic Gaussian groups, Monte Carlo oracles and empirical checks of
//! the bounds.
//!
//! Every random quantity is drawn from a stream keyed by `(seed, index)`,
//! where the index is a chunk or trial number, so results do not depend on
//! how work is scheduled across threads.

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundParams, BoundReport, CovMode};
use crate::dataset::{GroupedDataset, Record};
use crate::error::{Error, Result};
use crate::groupstats::{self, DistanceSummary, GroupStats, ShiftMetrics};
use crate::learner::{erm_fairness_on, EvalSet, FunctionClass, LinearModel};
use crate::linalg::{psd_sqrt, to_matrix};
use crate::metrics::{self, Decomposition, LossKind, LossProfile, Slice};
use crate::rng::{compensated_sum, derive_seed, stream, StreamRng};

const CHUNK: usize = 4096;
const WEIGHT_TOL: f64 = 1e-9;

const TAG_ORACLE: u64 = 1;
const TAG_TRIALS: u64 = 2;
const TAG_BOOTSTRAP: u64 = 3;
const TAG_SAMPLES: u64 = 4;

/// How labels are drawn given features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelRule {
    /// `P(y = 1 | x) = sigmoid(w·x + b)`
    Logistic { w: Vec<f64>, b: f64 },
    /// `P(y = 1) = r` independently of `x`.
    FixedRate { r: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianGroupSpec {
    pub group: String,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub weight: f64,
    pub label: LabelRule,
}

impl GaussianGroupSpec {
    pub fn sigma_matrix(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.sigma)
    }
}

/// Validated specs with precomputed covariance roots.
#[derive(Debug, Clone)]
pub struct Mixture {
    specs: Vec<GaussianGroupSpec>,
    roots: Vec<DMatrix<f64>>,
    cumulative: Vec<f64>,
    dim: usize,
}

impl Mixture {
    pub fn new(specs: &[GaussianGroupSpec]) -> Result<Self> {
        let first = specs
            .first()
            .ok_or_else(|| Error::BadWeights("no groups given".into()))?;
        let dim = first.mu.len();
        let mut roots = Vec::with_capacity(specs.len());
        let mut cumulative = Vec::with_capacity(specs.len());
        let mut total = 0.0;
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|o| o.group == s.group) {
                return Err(Error::invalid(
                    "specs",
                    format!("duplicate group `{}`", s.group),
                ));
            }
            if s.mu.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.mu.len(),
                });
            }
            if s.mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "mu",
                    format!("non-finite mean in `{}`", s.group),
                ));
            }
            let sigma = s.sigma_matrix()?;
            if sigma.nrows() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: sigma.nrows(),
                });
            }
            let asym = (&sigma - sigma.transpose())
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            if sigma.iter().any(|v| !v.is_finite()) || asym > 1e-9 * (1.0 + sigma.amax()) {
                return Err(Error::NonPSD(s.group.clone()));
            }
            roots.push(psd_sqrt(&sigma).map_err(|_| Error::NonPSD(s.group.clone()))?);
            match &s.label {
                LabelRule::Logistic { w, b } => {
                    if w.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            found: w.len(),
                        });
                    }
                    if w.iter().chain([b]).any(|v| !v.is_finite()) {
                        return Err(Error::invalid("label", "non-finite logistic coefficient"));
                    }
                }
                LabelRule::FixedRate { r } => {
                    if !(0.0..=1.0).contains(r) {
                        return Err(Error::invalid("label", format!("rate {r} outside [0, 1]")));
                    }
                }
            }
            if !(s.weight.is_finite() && s.weight > 0.0) {
                return Err(Error::BadWeights(format!(
                    "weight of `{}` is {}",
                    s.group, s.weight
                )));
            }
            total += s.weight;
            cumulative.push(total);
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::BadWeights(format!("weights sum to {total}, not 1")));
        }
        Ok(Mixture {
            specs: specs.to_vec(),
            roots,
            cumulative,
            dim,
        })
    }

    pub fn specs(&self) -> &[GaussianGroupSpec] {
        &self.specs
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn group_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.group.clone()).collect()
    }

    fn pick_group(&self, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.specs.len() - 1)
    }

    fn draw_features(&self, g: usize, rng: &mut StreamRng, out: &mut Vec<f64>) {
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let root = &self.roots[g];
        let mu = &self.specs[g].mu;
        for i in 0..self.dim {
            let mut v = mu[i];
            for (j, zj) in z.iter().enumerate() {
                v += root[(i, j)] * zj;
            }
            out.push(v);
        }
    }

    fn draw_label(&self, g: usize, x: &[f64], rng: &mut StreamRng) -> u8 {
        let p = match &self.specs[g].label {
            LabelRule::Logistic { w, b } => {
                crate::learner::sigmoid(w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            }
            LabelRule::FixedRate { r } => *r,
        };
        let u: f64 = rng.random();
        u8::from(u < p)
    }

    /// True mixture moments of the whole population.
    pub fn overall_moments(&self) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let parts = self
            .specs
            .iter()
            .map(|s| Ok((s.weight, s.mu.clone(), s.sigma_matrix()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(groupstats::mixture_moments(&parts))
    }

    /// Shift of each group's true distribution against the moment-matched
    /// overall distribution.
    pub fn true_shifts(&self) -> Result<Vec<ShiftMetrics>> {
        let (mu, sigma) = self.overall_moments()?;
        self.specs
            .iter()
            .map(|s| groupstats::gaussian_shift(&s.mu, &s.sigma_matrix()?, &mu, &sigma))
            .collect()
    }
}

struct Columns {
    group: Vec<usize>,
    label: Vec<u8>,
    score: Vec<f64>,
    features: Vec<f64>,
}

fn sample_columns(mix: &Mixture, n: usize, seed: u64, scorer: Option<&LinearModel>) -> Columns {
    let chunks: Vec<Columns> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            let mut rng = stream(seed, c as u64);
            let mut cols = Columns {
                group: Vec::with_capacity(len),
                label: Vec::with_capacity(len),
                score: Vec::with_capacity(len),
                features: Vec::with_capacity(len * mix.dim),
            };
            for _ in 0..len {
                let g = mix.pick_group(&mut rng);
                let start = cols.features.len();
                mix.draw_features(g, &mut rng, &mut cols.features);
                let x = &cols.features[start..];
                cols.label.push(mix.draw_label(g, x, &mut rng));
                cols.score.push(scorer.map_or(f64::NAN, |m| m.score(x)));
                cols.group.push(g);
            }
            cols
        })
        .collect();
    let mut out = Columns {
        group: Vec::with_capacity(n),
        label: Vec::with_capacity(n),
        score: Vec::with_capacity(n),
        features: Vec::with_capacity(n * mix.dim),
    };
    for c in chunks {
        out.group.extend(c.group);
        out.label.extend(c.label);
        out.score.extend(c.score);
        out.features.extend(c.features);
    }
    out
}

/// Draws `n` records from the mixture. Group counts are multinomial in the
/// weights.
pub fn generate(specs: &[GaussianGroupSpec], n: usize, seed: u64) -> Result<GroupedDataset> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let mix = Mixture::new(specs)?;
    let cols = sample_columns(&mix, n, seed, None);
    let d = mix.dim;
    let records = (0..n)
        .map(|i| {
            Record::new(
                mix.specs[cols.group[i]].group.clone(),
                cols.label[i],
                cols.features[i * d..(i + 1) * d].to_vec(),
                None,
            )
        })
        .collect();
    GroupedDataset::new(records)
}

/// Draws `n` records as columns, scoring them with `scorer` when given.
pub fn generate_eval_set(
    mix: &Mixture,
    n: usize,
    seed: u64,
    scorer: Option<&LinearModel>,
) -> Result<EvalSet> {
    let cols = sample_columns(mix, n, seed, scorer);
    EvalSet::from_columns(
        mix.group_names(),
        cols.group,
        cols.label,
        cols.score,
        cols.features,
        mix.dim,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Loss of `model` on `n` fresh samples from group `g`, in one stream.
/// Returns `(sum, sum of squares)`.
fn group_loss_sums(
    mix: &Mixture,
    g: usize,
    model: &LinearModel,
    loss: LossKind,
    n: usize,
    rng: &mut StreamRng,
) -> (f64, f64) {
    let mut x = Vec::with_capacity(mix.dim);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        x.clear();
        mix.draw_features(g, rng, &mut x);
        let y = mix.draw_label(g, &x, rng);
        let l = loss.eval(model.score(&x), y);
        s += l;
        s2 += l * l;
    }
    (s, s2)
}

fn estimate_from_sums(s: f64, s2: f64, n: usize) -> McEstimate {
    let nf = n as f64;
    let mean = s / nf;
    let var = if n > 1 {
        ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        estimate: mean,
        std_error: (var / nf).sqrt(),
        n,
    }
}

fn mc_group(
    mix: &Mixture,
    g: usize,
    model: &LinearModel,
    loss: LossKind,
    n: usize,
    seed: u64,
) -> McEstimate {
    let sums: Vec<(f64, f64)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            group_loss_sums(mix, g, model, loss, len, &mut stream(seed, c as u64))
        })
        .collect();
    let s = compensated_sum(sums.iter().map(|p| p.0));
    let s2 = compensated_sum(sums.iter().map(|p| p.1));
    estimate_from_sums(s, s2, n)
}

fn check_model(mix: &Mixture, model: &LinearModel) -> Result<()> {
    if model.dim() != mix.dim {
        return Err(Error::DimensionMismatch {
            expected: mix.dim,
            found: model.dim(),
        });
    }
    Ok(())
}

/// Monte Carlo estimate of the expected loss of `model` under one group's
/// distribution. The group's mixture weight is ignored.
pub fn mc_expected_loss(
    spec: &GaussianGroupSpec,
    model: &LinearModel,
    loss: LossKind,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_mc < 1000 {
        return Err(Error::invalid(
            "n_mc",
            format!("must be at least 1000, got {n_mc}"),
        ));
    }
    let single = GaussianGroupSpec {
        weight: 1.0,
        ..spec.clone()
    };
    let mix = Mixture::new(std::slice::from_ref(&single))?;
    check_model(&mix, model)?;
    Ok(mc_group(&mix, 0, model, loss, n_mc, seed))
}

/// Trial count, per-trial sample size and master seed of a Monte Carlo check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub trials: usize,
    /// Oracle sample size per group.
    pub n_oracle: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            trials: 2000,
            n_oracle: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub quantity: f64,
    pub bound: f64,
    pub violated: bool,
}

impl TrialOutcome {
    fn new(trial: usize, quantity: f64, bound: f64) -> Self {
        TrialOutcome {
            trial,
            quantity,
            bound,
            violated: quantity > bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub violation_rate: f64,
    pub violations: usize,
    pub trials: usize,
    pub oracle: IndexMap<String, McEstimate>,
    pub outcomes: Vec<TrialOutcome>,
}

impl CheckReport {
    fn from_outcomes(oracle: IndexMap<String, McEstimate>, outcomes: Vec<TrialOutcome>) -> Self {
        let violations = outcomes.iter().filter(|o| o.violated).count();
        CheckReport {
            violation_rate: violations as f64 / outcomes.len() as f64,
            violations,
            trials: outcomes.len(),
            oracle,
            outcomes,
        }
    }
}

fn check_loss_range(params: &BoundParams, loss: LossKind) -> Result<()> {
    if params.loss_bound < loss.sup() {
        return Err(Error::invalid(
            "M",
            format!(
                "M = {} is below the {} loss range {}",
                params.loss_bound,
                loss.name(),
                loss.sup()
            ),
        ));
    }
    Ok(())
}

/// Per trial, draws `params.hoeffding_n` samples from every group and
/// compares the largest `|L̂_i − L_i|` with `M·√(ln(2k/δ) / (2n))`.
pub fn check_hoeffding(
    specs: &[GaussianGroupSpec],
    model: &LinearModel,
    loss: LossKind,
    params: &BoundParams,
    cfg: &McConfig,
) -> Result<CheckReport> {
    params.validate()?;
    check_loss_range(params, loss)?;
    if cfg.trials < 100 {
        return Err(Error::invalid(
            "trials",
            format!("must be at least 100, got {}", cfg.trials),
        ));
    }
    let mix = Mixture::new(specs)?;
    check_model(&mix, model)?;
    if params.k != specs.len() as u64 {
        return Err(Error::invalid(
            "k",
            format!("k = {} but {} groups given", params.k, specs.len()),
        ));
    }
    if cfg.n_oracle < 1000 {
        return Err(Error::invalid("n_oracle", "must be at least 1000"));
    }
    let oracle_seed = derive_seed(cfg.seed, TAG_ORACLE);
    let oracle: Vec<McEstimate> = (0..specs.len())
        .map(|g| {
            mc_group(
                &mix,
                g,
                model,
                loss,
                cfg.n_oracle,
                derive_seed(oracle_seed, g as u64),
            )
        })
        .collect();
    let n = params.hoeffding_n as usize;
    let bound =
        params.loss_bound * ((2.0 * params.k as f64 / params.delta).ln() / (2.0 * n as f64)).sqrt();
    let trial_seed = derive_seed(cfg.seed, TAG_TRIALS);
    let outcomes = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(trial_seed, t as u64);
            let worst = (0..specs.len())
                .map(|g| {
                    let (s, _) = group_loss_sums(&mix, g, model, loss, n, &mut rng);
                    (s / n as f64 - oracle[g].estimate).abs()
                })
                .fold(0.0f64, f64::max);
            TrialOutcome::new(t, worst, bound)
        })
        .collect();
    Ok(CheckReport::from_outcomes(
        mix.group_names().into_iter().zip(oracle).collect(),
        outcomes,
    ))
}

/// Oracle differences within this many standard errors of a bound are
/// attributed to Monte Carlo noise.
pub const MC_ALLOWANCE_Z: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLossCheck {
    pub shifts: IndexMap<String, ShiftMetrics>,
    pub cov_mode: CovMode,
    pub report: CheckReport,
}

/// Per trial, estimates every group's expected loss from fresh samples and
/// the overall loss as their weighted mean, then checks
/// `E_i ≤ E + B·(mean_shift + cov term)` with shifts taken from the true
/// parameters. The trial bound includes `MC_ALLOWANCE_Z` standard errors of
/// the estimated difference.
pub fn check_group_loss_bound(
    specs: &[GaussianGroupSpec],
    model: &LinearModel,
    loss: LossKind,
    params: &BoundParams,
    cov_mode: CovMode,
    cfg: &McConfig,
) -> Result<GroupLossCheck> {
    params.validate()?;
    check_loss_range(params, loss)?;
    if cfg.trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    if cfg.n_oracle < 1000 {
        return Err(Error::invalid("n_oracle", "must be at least 1000"));
    }
    let mix = Mixture::new(specs)?;
    check_model(&mix, model)?;
    let shifts = mix.true_shifts()?;
    let weights: Vec<f64> = specs.iter().map(|s| s.weight).collect();
    let k = specs.len();
    let n = cfg.n_oracle;
    let trial_seed = derive_seed(cfg.seed, TAG_TRIALS);
    let per_trial: Vec<(TrialOutcome, Vec<McEstimate>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(trial_seed, t as u64);
            let est: Vec<McEstimate> = (0..k)
                .map(|g| {
                    let (s, s2) = group_loss_sums(&mix, g, model, loss, n, &mut rng);
                    estimate_from_sums(s, s2, n)
                })
                .collect();
            let overall: f64 = est.iter().zip(&weights).map(|(e, w)| w * e.estimate).sum();
            let mut worst: Option<TrialOutcome> = None;
            for i in 0..k {
                let quantity = est[i].estimate - overall;
                // Var(Ê_i − Σ w_j Ê_j) with independent group samples
                let var: f64 = (0..k)
                    .map(|j| {
                        let c = if i == j { 1.0 - weights[j] } else { weights[j] };
                        c * c * est[j].std_error * est[j].std_error
                    })
                    .sum();
                let bound = params.shift_scale
                    * (shifts[i].mean_shift + cov_mode.cov_term(&shifts[i]))
                    + MC_ALLOWANCE_Z * var.sqrt();
                let o = TrialOutcome::new(t, quantity, bound);
                if worst.is_none_or(|w| o.quantity - o.bound > w.quantity - w.bound) {
                    worst = Some(o);
                }
            }
            (worst.expect("k >= 1"), est)
        })
        .collect();
    let names = mix.group_names();
    // report the mean of the per-trial estimates as the oracle
    let oracle = names
        .iter()
        .enumerate()
        .map(|(g, name)| {
            let m = compensated_sum(per_trial.iter().map(|p| p.1[g].estimate)) / cfg.trials as f64;
            let se = compensated_sum(per_trial.iter().map(|p| p.1[g].std_error.powi(2))).sqrt()
                / cfg.trials as f64;
            (
                name.clone(),
                McEstimate {
                    estimate: m,
                    std_error: se,
                    n: n * cfg.trials,
                },
            )
        })
        .collect();
    let outcomes = per_trial.into_iter().map(|p| p.0).collect();
    Ok(GroupLossCheck {
        shifts: names.into_iter().zip(shifts).collect(),
        cov_mode,
        report: CheckReport::from_outcomes(oracle, outcomes),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub m_values: Vec<u64>,
    pub trials: usize,
    pub n_oracle: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            m_values: vec![100, 1_000, 10_000, 100_000],
            trials: 40,
            n_oracle: 2_000_000,
            bootstrap: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub m: u64,
    pub ln_m: f64,
    pub mean_excess: f64,
    pub std_error: f64,
    pub ln_excess: f64,
    pub excess: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub slope: f64,
    pub intercept: f64,
    /// 95% percentile bootstrap interval of the slope.
    pub slope_ci: (f64, f64),
    pub points: Vec<ConvergencePoint>,
    /// Index of the oracle-best member.
    pub best_member: usize,
    /// Fairness risk of every member on the oracle sample.
    pub oracle_risk: Vec<f64>,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Excess fairness risk of the empirical fairness-risk minimizer over `fc`
/// at several sample sizes, and the log-log slope against `m`.
///
/// The fairness risk of each member is its gap on a fixed oracle sample of
/// `n_oracle` records; the best member on that sample plays the role of the
/// class optimum. Threshold members act on `scorer`'s score.
pub fn convergence_study(
    specs: &[GaussianGroupSpec],
    scorer: Option<&LinearModel>,
    fc: &FunctionClass,
    loss: LossKind,
    cfg: &ConvergenceConfig,
) -> Result<ConvergenceReport> {
    let mut ms = cfg.m_values.clone();
    ms.sort_unstable();
    ms.dedup();
    if ms.len() < 4 {
        return Err(Error::invalid(
            "m_values",
            "need at least 4 distinct sample sizes",
        ));
    }
    if ms[0] == 0 || (ms[ms.len() - 1] as f64) < 100.0 * ms[0] as f64 {
        return Err(Error::invalid(
            "m_values",
            "sample sizes must span at least two decades",
        ));
    }
    if cfg.trials < 20 {
        return Err(Error::invalid(
            "trials",
            format!("must be at least 20, got {}", cfg.trials),
        ));
    }
    if cfg.n_oracle < 1_000_000 {
        return Err(Error::invalid("n_oracle", "must be at least 10^6"));
    }
    let mix = Mixture::new(specs)?;
    if let Some(m) = scorer {
        check_model(&mix, m)?;
    }
    let oracle = generate_eval_set(
        &mix,
        cfg.n_oracle,
        derive_seed(cfg.seed, TAG_ORACLE),
        scorer,
    )?;
    let oracle_risk: Vec<f64> = oracle
        .evaluate_class(fc, loss)?
        .into_iter()
        .map(|e| e.gap)
        .collect();
    let (best_member, best) = oracle_risk.iter().enumerate().fold(
        (0, f64::INFINITY),
        |a, (i, &v)| if v < a.1 { (i, v) } else { a },
    );

    let mut points = Vec::with_capacity(ms.len());
    for (mi, &m) in ms.iter().enumerate() {
        let seed = derive_seed(derive_seed(cfg.seed, TAG_SAMPLES), mi as u64);
        let excess = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let sample =
                    generate_eval_set(&mix, m as usize, derive_seed(seed, t as u64), scorer)?;
                let erm = erm_fairness_on(&sample, fc, loss)?;
                Ok(oracle_risk[erm.chosen] - best)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean = compensated_sum(excess.iter().copied()) / excess.len() as f64;
        if mean <= 0.0 {
            return Err(Error::DegenerateExcess(m));
        }
        let var =
            excess.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (excess.len() - 1) as f64;
        points.push(ConvergencePoint {
            m,
            ln_m: (m as f64).ln(),
            mean_excess: mean,
            std_error: (var / excess.len() as f64).sqrt(),
            ln_excess: mean.ln(),
            excess,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.ln_m).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.ln_excess).collect();
    let (slope, intercept) = least_squares(&xs, &ys);

    let mut rng = stream(derive_seed(cfg.seed, TAG_BOOTSTRAP), 0);
    let mut slopes = Vec::with_capacity(cfg.bootstrap);
    for _ in 0..cfg.bootstrap {
        let ys: Option<Vec<f64>> = points
            .iter()
            .map(|p| {
                let n = p.excess.len();
                let s: f64 = (0..n).map(|_| p.excess[rng.random_range(0..n)]).sum();
                (s > 0.0).then(|| (s / n as f64).ln())
            })
            .collect();
        if let Some(ys) = ys {
            slopes.push(least_squares(&xs, &ys).0);
        }
    }
    slopes.sort_by(f64::total_cmp);
    let slope_ci = if slopes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (percentile(&slopes, 0.025), percentile(&slopes, 0.975))
    };
    Ok(ConvergenceReport {
        slope,
        intercept,
        slope_ci,
        points,
        best_member,
        oracle_risk,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n: usize,
    pub positive_rate: f64,
    /// Absent when the group lacks one of the classes.
    pub auc: Option<f64>,
    pub brier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSection {
    pub overall: GroupStats,
    pub groups: IndexMap<String, GroupStats>,
    /// Each group against the overall distribution.
    pub shifts: IndexMap<String, ShiftMetrics>,
    pub distances: IndexMap<String, DistanceSummary>,
    pub overall_distance: DistanceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSection {
    pub profile: LossProfile,
    /// For the pair attaining the gap.
    pub decomposition: Option<Decomposition>,
    /// The parameters the bounds were evaluated with.
    pub params: BoundParams,
    pub bounds: Vec<BoundReport>,
    pub group_bounds: IndexMap<String, Vec<BoundReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n: usize,
    pub dim: usize,
    pub groups: Vec<String>,
    pub overall_auc: Option<f64>,
    pub overall_brier: f64,
    pub group_metrics: IndexMap<String, GroupMetrics>,
    pub features: Option<FeatureSection>,
    pub fairness: Option<FairnessSection>,
    pub notices: Vec<String>,
}

fn optional_auc(
    ds: &GroupedDataset,
    slice: Slice,
    notices: &mut Vec<String>,
) -> Result<Option<f64>> {
    match metrics::auc(ds, slice) {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateSlice) => {
            let name = match slice {
                Slice::All => "all records".to_string(),
                Slice::Group(g) => format!("group `{g}`"),
            };
            notices.push(format!("AUC omitted for {name}: only one class present"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn feature_section(ds: &GroupedDataset) -> Result<FeatureSection> {
    let overall = groupstats::overall_stats(ds)?;
    let groups = groupstats::all_group_stats(ds)?;
    let shifts = groups
        .iter()
        .map(|(g, s)| Ok((g.clone(), groupstats::shift_metrics(s, &overall)?)))
        .collect::<Result<_>>()?;
    let profile = groupstats::feature_distance_profile(ds)?;
    Ok(FeatureSection {
        overall,
        groups,
        shifts,
        distances: profile.groups,
        overall_distance: profile.overall,
    })
}

fn second_moment(d: &DistanceSummary) -> f64 {
    d.mean * d.mean + d.std * d.std
}

/// Bound results that only fail on sample-size grounds become notices.
fn keep(
    r: Result<BoundReport>,
    out: &mut Vec<BoundReport>,
    notices: &mut Vec<String>,
) -> Result<()> {
    match r {
        Ok(b) => out.push(b),
        Err(e @ Error::SampleTooSmall { .. }) => notices.push(format!("bound omitted: {e}")),
        Err(Error::InvalidParams { field, reason }) if field == "m" => {
            notices.push(format!("bound omitted: {reason}"))
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

fn fairness_section(
    ds: &GroupedDataset,
    features: Option<&FeatureSection>,
    base: &BoundParams,
    loss: LossKind,
    notices: &mut Vec<String>,
) -> Result<FairnessSection> {
    let profile = metrics::loss_profile(ds, loss)?;
    let decomposition = match metrics::decomposition_bound(
        &profile,
        &profile.argmax_pair.0,
        &profile.argmax_pair.1,
        base.loss_bound,
    ) {
        Ok(d) => Some(d),
        Err(e @ (Error::MissingConditional { .. } | Error::BadM { .. })) => {
            notices.push(format!("decomposition omitted: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    let n = ds.len();
    let min_r = profile
        .groups
        .iter()
        .map(|g| g.n as f64 / n as f64)
        .fold(1.0, f64::min);
    let params = BoundParams {
        k: ds.groups().len() as u64,
        hoeffding_n: n as u64,
        sample_size: n as u64,
        min_r,
        ..base.clone()
    };
    let mut bounds_out = Vec::new();
    keep(
        bounds::hoeffding_fairness_bound(&params, profile.gap),
        &mut bounds_out,
        notices,
    )?;
    keep(
        bounds::generalization_bound(&params, profile.gap),
        &mut bounds_out,
        notices,
    )?;
    keep(bounds::convergence_bound(&params), &mut bounds_out, notices)?;

    let mut group_bounds = IndexMap::new();
    if let Some(f) = features {
        for g in ds.groups() {
            let shift = &f.shifts[g];
            let mut out = Vec::new();
            for mode in [CovMode::W2Trace, CovMode::Frobenius] {
                keep(
                    bounds::group_risk_bound(&params, shift, mode),
                    &mut out,
                    notices,
                )?;
                keep(
                    bounds::tradeoff_bound(&params, shift, mode),
                    &mut out,
                    notices,
                )?;
                keep(
                    bounds::group_expected_loss_bound(profile.overall_loss, &params, shift, mode),
                    &mut out,
                    notices,
                )?;
            }
            out.push(bounds::feature_distance_bound(
                profile.overall_loss,
                params.shift_scale,
                shift.mean_shift,
                second_moment(&f.distances[g]),
                second_moment(&f.overall_distance),
            )?);
            group_bounds.insert(g.clone(), out);
        }
    }
    Ok(FairnessSection {
        profile,
        decomposition,
        params,
        bounds: bounds_out,
        group_bounds,
    })
}

/// Per-group statistics, metrics and every applicable bound for a scored
/// dataset. When `model` is given the records are rescored with it first.
pub fn audit_pipeline(
    ds: &GroupedDataset,
    model: Option<&LinearModel>,
    params: &BoundParams,
    loss: LossKind,
) -> Result<AuditReport> {
    let scored;
    let ds = match model {
        Some(m) => {
            scored = m.score_dataset(ds)?;
            &scored
        }
        None => ds,
    };
    let mut notices = Vec::new();
    let overall_auc = optional_auc(ds, Slice::All, &mut notices)?;
    let overall_brier = metrics::brier(ds, Slice::All)?;
    let mut group_metrics = IndexMap::new();
    for g in ds.groups() {
        let members: Vec<&Record> = ds.group_records(g).collect();
        let pos = members.iter().filter(|r| r.is_positive()).count();
        group_metrics.insert(
            g.clone(),
            GroupMetrics {
                n: members.len(),
                positive_rate: pos as f64 / members.len() as f64,
                auc: optional_auc(ds, Slice::Group(g), &mut notices)?,
                brier: metrics::brier(ds, Slice::Group(g))?,
            },
        );
    }
    let features = if ds.dim() > 0 {
        Some(feature_section(ds)?)
    } else {
        notices.push("feature sections omitted: dataset has no feature columns".into());
        None
    };
    let fairness = if ds.groups().len() >= 2 {
        Some(fairness_section(
            ds,
            features.as_ref(),
            params,
            loss,
            &mut notices,
        )?)
    } else {
        notices.push("fairness sections omitted: dataset has a single group".into());
        None
    };
    Ok(AuditReport {
        n: ds.len(),
        dim: ds.dim(),
        groups: ds.groups().to_vec(),
        overall_auc,
        overall_brier,
        group_metrics,
        features,
        fairness,
        notices,
    })
}
