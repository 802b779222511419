//! Logistic scorer and exhaustive empirical risk minimization over finite
//! predictor classes.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_sig17, GroupedDataset};
use crate::error::{Error, Result};
use crate::metrics::{max_pairwise_gap, LossKind};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.iter().chain([&bias]).any(|v| !v.is_finite()) {
            return Err(Error::ModelFormat("non-finite coefficient".into()));
        }
        Ok(LinearModel { weights, bias })
    }

    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: dim,
            });
        }
        Ok(())
    }

    /// Copy of `ds` with every score replaced by this model's score.
    pub fn score_dataset(&self, ds: &GroupedDataset) -> Result<GroupedDataset> {
        self.check_dim(ds.dim())?;
        ds.with_scores(|r| self.score(&r.features))
    }

    /// Writes `d`, the weights and the bias on three lines.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let weights: Vec<String> = self.weights.iter().map(|&v| format_sig17(v)).collect();
        writeln!(w, "{}", self.dim())?;
        writeln!(w, "{}", weights.join(" "))?;
        writeln!(w, "{}", format_sig17(self.bias))?;
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let bad = |msg: &str| Error::ModelFormat(msg.to_string());
        if lines.len() < 3 || lines[3..].iter().any(|l| !l.trim().is_empty()) {
            return Err(bad("expected exactly three lines"));
        }
        let d: usize = lines[0]
            .trim()
            .parse()
            .map_err(|_| bad("dimension is not an integer"))?;
        let weights: Vec<f64> = lines[1]
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("unparseable weight"))?;
        if weights.len() != d {
            return Err(bad(&format!(
                "expected {d} weights, found {}",
                weights.len()
            )));
        }
        let bias: f64 = lines[2]
            .trim()
            .parse()
            .map_err(|_| bad("unparseable bias"))?;
        LinearModel::new(weights, bias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Kept for configuration symmetry; training is full batch from a fixed
    /// start, so the seed does not change the result.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.5,
            epochs: 500,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub model: LinearModel,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Mean log-loss plus `l2/2 · ‖w‖²`.
pub fn objective(ds: &GroupedDataset, model: &LinearModel, l2: f64) -> f64 {
    let n = ds.len() as f64;
    let data: f64 = ds
        .records()
        .iter()
        .map(|r| {
            let z = model.logit(&r.features);
            softplus(z) - f64::from(r.label) * z
        })
        .sum();
    let penalty: f64 = model.weights.iter().map(|w| w * w).sum();
    data / n + 0.5 * l2 * penalty
}

/// Analytic gradient of [`objective`]: `(∂/∂w, ∂/∂b)`.
pub fn gradient(ds: &GroupedDataset, model: &LinearModel, l2: f64) -> (Vec<f64>, f64) {
    let n = ds.len() as f64;
    let mut gw = vec![0.0; model.dim()];
    let mut gb = 0.0;
    for r in ds.records() {
        let resid = sigmoid(model.logit(&r.features)) - f64::from(r.label);
        for (g, x) in gw.iter_mut().zip(&r.features) {
            *g += resid * x;
        }
        gb += resid;
    }
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

const MAX_INCREASES: usize = 10;

/// Full-batch gradient descent on the penalized log-loss.
pub fn train_logistic(ds: &GroupedDataset, config: &TrainConfig) -> Result<Trained> {
    if ds.dim() == 0 {
        return Err(Error::NoFeatures);
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(Error::invalid("lr", "must be positive"));
    }
    if !(config.l2 >= 0.0 && config.l2.is_finite()) {
        return Err(Error::invalid("l2", "must be non-negative"));
    }
    let pos = ds.records().iter().filter(|r| r.is_positive()).count();
    if pos == 0 || pos == ds.len() {
        return Err(Error::SingleClass);
    }
    let rate = pos as f64 / ds.len() as f64;
    let mut model = LinearModel {
        weights: vec![0.0; ds.dim()],
        bias: (rate / (1.0 - rate)).ln(),
    };
    let mut loss = objective(ds, &model, config.l2);
    let mut increases = 0;
    for _ in 0..config.epochs {
        let (gw, gb) = gradient(ds, &model, config.l2);
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= config.lr * g;
        }
        model.bias -= config.lr * gb;
        let next = objective(ds, &model, config.l2);
        if !next.is_finite() {
            return Err(Error::NonConvergent(increases + 1));
        }
        if next > loss {
            increases += 1;
            if increases >= MAX_INCREASES {
                return Err(Error::NonConvergent(increases));
            }
        } else {
            increases = 0;
        }
        loss = next;
    }
    log::debug!("logistic training finished with loss {loss}");
    Ok(Trained {
        model,
        final_loss: loss,
        epochs: config.epochs,
    })
}

/// A hard 0/1 decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    /// Predicts 1 when the record's score is at least the threshold.
    Threshold(f64),
    /// Predicts 1 when `w·x + b ≥ 0`.
    Linear(LinearModel),
}

impl Predictor {
    fn decide(&self, score: f64, features: &[f64]) -> f64 {
        let positive = match self {
            Predictor::Threshold(t) => score >= *t,
            Predictor::Linear(m) => m.logit(features) >= 0.0,
        };
        if positive {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Threshold,
    LinearGrid,
    Custom,
}

/// An ordered, non-empty, finite set of predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionClass {
    kind: ClassKind,
    members: Vec<Predictor>,
}

impl FunctionClass {
    pub fn new(kind: ClassKind, members: Vec<Predictor>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyClass);
        }
        Ok(FunctionClass { kind, members })
    }

    /// `count` evenly spaced score thresholds from `lo` to `hi` inclusive.
    pub fn thresholds(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(
                "thresholds",
                format!("bad range [{lo}, {hi}]"),
            ));
        }
        let members = match count {
            0 => Vec::new(),
            1 => vec![Predictor::Threshold(lo)],
            _ => (0..count)
                .map(|i| Predictor::Threshold(lo + (hi - lo) * i as f64 / (count - 1) as f64))
                .collect(),
        };
        FunctionClass::new(ClassKind::Threshold, members)
    }

    /// Every linear rule whose weights are drawn from `weight_values` per
    /// coordinate and whose bias is drawn from `bias_values`. The last
    /// coordinate varies fastest.
    pub fn linear_grid(dim: usize, weight_values: &[f64], bias_values: &[f64]) -> Result<Self> {
        let mut members = Vec::new();
        let combos = weight_values
            .len()
            .checked_pow(dim as u32)
            .unwrap_or(usize::MAX);
        if combos.saturating_mul(bias_values.len()) > 1 << 20 {
            return Err(Error::invalid(
                "linear_grid",
                "grid has more than 2^20 members",
            ));
        }
        for c in 0..combos {
            let mut rest = c;
            let mut w = vec![0.0; dim];
            for slot in w.iter_mut().rev() {
                *slot = weight_values[rest % weight_values.len()];
                rest /= weight_values.len();
            }
            for &b in bias_values {
                members.push(Predictor::Linear(LinearModel::new(w.clone(), b)?));
            }
        }
        FunctionClass::new(ClassKind::LinearGrid, members)
    }

    pub fn kind(&self) -> ClassKind {
        self.kind
    }

    pub fn members(&self) -> &[Predictor] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Column view of a dataset used for fast repeated evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    groups: Vec<String>,
    group: Vec<usize>,
    label: Vec<u8>,
    /// NaN marks a missing score.
    score: Vec<f64>,
    features: Vec<f64>,
    dim: usize,
}

impl EvalSet {
    pub fn from_dataset(ds: &GroupedDataset) -> Self {
        let n = ds.len();
        let mut set = EvalSet {
            groups: ds.groups().to_vec(),
            group: Vec::with_capacity(n),
            label: Vec::with_capacity(n),
            score: Vec::with_capacity(n),
            features: Vec::with_capacity(n * ds.dim()),
            dim: ds.dim(),
        };
        for r in ds.records() {
            let g = set
                .groups
                .iter()
                .position(|g| g == &r.group)
                .expect("registered");
            set.group.push(g);
            set.label.push(r.label);
            set.score.push(r.score.unwrap_or(f64::NAN));
            set.features.extend_from_slice(&r.features);
        }
        set
    }

    /// Builds a set directly from columns. `group[i]` indexes `groups`.
    pub fn from_columns(
        groups: Vec<String>,
        group: Vec<usize>,
        label: Vec<u8>,
        score: Vec<f64>,
        features: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let n = group.len();
        if label.len() != n || score.len() != n || features.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: label.len().min(score.len()),
            });
        }
        if let Some(&g) = group.iter().find(|&&g| g >= groups.len()) {
            return Err(Error::UnknownGroup(g.to_string()));
        }
        Ok(EvalSet {
            groups,
            group,
            label,
            score,
            features,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    fn check(&self, fc: &FunctionClass) -> Result<()> {
        let k = self.groups.len();
        if k < 2 {
            return Err(Error::FewerThanTwoGroups(k));
        }
        let mut counts = vec![0usize; k];
        for &g in &self.group {
            counts[g] += 1;
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyGroup(self.groups[g].clone()));
        }
        for p in fc.members() {
            match p {
                Predictor::Threshold(_) => {
                    if let Some(i) = self.score.iter().position(|s| s.is_nan()) {
                        return Err(Error::MissingScore(i + 1));
                    }
                }
                Predictor::Linear(m) => m.check_dim(self.dim)?,
            }
        }
        Ok(())
    }

    /// Empirical per-group and pooled loss of one predictor. Sums run in
    /// record order.
    pub fn evaluate(&self, p: &Predictor, loss: LossKind) -> MemberEval {
        let k = self.groups.len();
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        let mut total = 0.0;
        for i in 0..self.len() {
            let x = &self.features[i * self.dim..(i + 1) * self.dim];
            let l = loss.eval(p.decide(self.score[i], x), self.label[i]);
            let g = self.group[i];
            sums[g] += l;
            counts[g] += 1;
            total += l;
        }
        let group_losses: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect();
        let (gap, _, _) = max_pairwise_gap(&group_losses);
        MemberEval {
            group_losses,
            gap,
            pooled_loss: total / self.len() as f64,
        }
    }

    /// Evaluates every member of `fc`, in parallel, returning them in order.
    pub fn evaluate_class(&self, fc: &FunctionClass, loss: LossKind) -> Result<Vec<MemberEval>> {
        self.check(fc)?;
        Ok(fc
            .members()
            .par_iter()
            .map(|p| self.evaluate(p, loss))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEval {
    pub group_losses: Vec<f64>,
    /// Largest pairwise difference of `group_losses`.
    pub gap: f64,
    pub pooled_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmResult {
    pub chosen: usize,
    /// The minimized quantity at `chosen`.
    pub value: f64,
    pub table: Vec<MemberEval>,
}

/// Index of the first minimum.
fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn erm_fairness_on(set: &EvalSet, fc: &FunctionClass, loss: LossKind) -> Result<ErmResult> {
    let table = set.evaluate_class(fc, loss)?;
    let (chosen, value) = argmin(table.iter().map(|t| t.gap));
    Ok(ErmResult {
        chosen,
        value,
        table,
    })
}

pub fn erm_supervised_on(set: &EvalSet, fc: &FunctionClass, loss: LossKind) -> Result<ErmResult> {
    let table = set.evaluate_class(fc, loss)?;
    let (chosen, value) = argmin(table.iter().map(|t| t.pooled_loss));
    Ok(ErmResult {
        chosen,
        value,
        table,
    })
}

/// Member of `fc` with the smallest empirical fairness gap; ties go to the
/// lowest index.
pub fn erm_fairness(ds: &GroupedDataset, fc: &FunctionClass, loss: LossKind) -> Result<ErmResult> {
    erm_fairness_on(&EvalSet::from_dataset(ds), fc, loss)
}

/// Member of `fc` with the smallest pooled empirical loss; ties go to the
/// lowest index.
pub fn erm_supervised(
    ds: &GroupedDataset,
    fc: &FunctionClass,
    loss: LossKind,
) -> Result<ErmResult> {
    erm_supervised_on(&EvalSet::from_dataset(ds), fc, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Record;
    use crate::metrics::profile_with;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> GroupedDataset {
        let mut rng = crate::rng::stream(seed, 0);
        let records = (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let c = if label == 1 { 2.0 } else { -2.0 };
                let x = vec![
                    c + rng.random_range(-1.0..1.0),
                    c + rng.random_range(-1.0..1.0),
                ];
                Record::new(if i % 3 == 0 { "a" } else { "b" }, label, x, None)
            })
            .collect();
        GroupedDataset::new(records).unwrap()
    }

    fn scored(rows: &[(&str, u8, f64)]) -> GroupedDataset {
        GroupedDataset::new(
            rows.iter()
                .map(|&(g, y, s)| Record::new(g, y, vec![], Some(s)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn separable_blobs_are_fit() {
        let ds = blobs(200, 1);
        let fit = train_logistic(&ds, &TrainConfig::default()).unwrap();
        let errors = ds
            .records()
            .iter()
            .filter(|r| LossKind::ZeroOne.eval(fit.model.score(&r.features), r.label) > 0.0)
            .count();
        assert_eq!(errors, 0);
        assert!(fit.final_loss < 0.1);
    }

    #[test]
    fn constant_features_learn_base_rate() {
        let records = (0..100)
            .map(|i| Record::new("a", u8::from(i < 30), vec![1.0, 1.0], None))
            .collect();
        let ds = GroupedDataset::new(records).unwrap();
        let cfg = TrainConfig {
            l2: 0.0,
            ..TrainConfig::default()
        };
        let fit = train_logistic(&ds, &cfg).unwrap();
        let z = fit.model.logit(&[1.0, 1.0]);
        assert_abs_diff_eq!(z, (0.3f64 / 0.7).ln(), epsilon = 1e-6);
        assert_abs_diff_eq!(fit.model.weights[0], fit.model.weights[1], epsilon = 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let records = (0..10)
            .map(|_| Record::new("a", 1, vec![1.0], None))
            .collect();
        let ds = GroupedDataset::new(records).unwrap();
        assert_eq!(
            train_logistic(&ds, &TrainConfig::default()),
            Err(Error::SingleClass)
        );
    }

    #[test]
    fn divergence_detected() {
        let records = (0..40)
            .map(|i| Record::new("a", (i % 2) as u8, vec![i as f64 - 20.0], None))
            .collect();
        let ds = GroupedDataset::new(records).unwrap();
        // Each step multiplies the weight by 1 - lr * l2 = -9.
        let cfg = TrainConfig {
            lr: 10.0,
            l2: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_logistic(&ds, &cfg),
            Err(Error::NonConvergent(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = blobs(60, 7);
        let mut rng = crate::rng::stream(99, 0);
        for _ in 0..5 {
            let m = LinearModel::new(
                vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                rng.random_range(-1.0..1.0),
            )
            .unwrap();
            let (gw, gb) = gradient(&ds, &m, 0.1);
            let h = 1e-5;
            let mut p = m.clone();
            p.bias += h;
            let mut q = m.clone();
            q.bias -= h;
            let fd = (objective(&ds, &p, 0.1) - objective(&ds, &q, 0.1)) / (2.0 * h);
            assert_abs_diff_eq!(fd, gb, epsilon = 1e-8);
            for j in 0..2 {
                let mut p = m.clone();
                p.weights[j] += h;
                let mut q = m.clone();
                q.weights[j] -= h;
                let fd = (objective(&ds, &p, 0.1) - objective(&ds, &q, 0.1)) / (2.0 * h);
                assert_abs_diff_eq!(fd, gw[j], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn model_round_trip() {
        let m = LinearModel::new(vec![0.1, -1.0 / 3.0, 1e-300], std::f64::consts::PI).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("3\n"));
        assert_eq!(LinearModel::load(&buf[..]).unwrap(), m);
        assert!(matches!(
            LinearModel::load(&b"2\n1.0\n0.0\n"[..]),
            Err(Error::ModelFormat(_))
        ));
        assert!(matches!(
            LinearModel::load(&b"1\nnan\n0.0\n"[..]),
            Err(Error::ModelFormat(_))
        ));
    }

    #[test]
    fn empty_model_round_trip() {
        let m = LinearModel::zeros(0);
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        assert_eq!(LinearModel::load(&buf[..]).unwrap(), m);
    }

    #[test]
    fn threshold_class_spacing() {
        let fc = FunctionClass::thresholds(0.25, 0.75, 3).unwrap();
        assert_eq!(
            fc.members(),
            &[
                Predictor::Threshold(0.25),
                Predictor::Threshold(0.5),
                Predictor::Threshold(0.75)
            ]
        );
        assert_eq!(
            FunctionClass::thresholds(0.0, 1.0, 0),
            Err(Error::EmptyClass)
        );
    }

    #[test]
    fn linear_grid_enumeration() {
        let fc = FunctionClass::linear_grid(2, &[-1.0, 1.0], &[0.0, 0.5]).unwrap();
        assert_eq!(fc.size(), 8);
        assert_eq!(
            fc.members()[1],
            Predictor::Linear(LinearModel::new(vec![-1.0, -1.0], 0.5).unwrap())
        );
        assert_eq!(
            fc.members()[2],
            Predictor::Linear(LinearModel::new(vec![-1.0, 1.0], 0.0).unwrap())
        );
    }

    fn crafted() -> GroupedDataset {
        scored(&[
            ("a", 1, 0.9),
            ("a", 1, 0.6),
            ("a", 0, 0.4),
            ("a", 0, 0.2),
            ("b", 1, 0.7),
            ("b", 1, 0.3),
            ("b", 0, 0.55),
            ("b", 0, 0.1),
        ])
    }

    #[test]
    fn erm_matches_exhaustive_profiles() {
        let ds = crafted();
        let fc = FunctionClass::thresholds(0.25, 0.75, 3).unwrap();
        let res = erm_fairness(&ds, &fc, LossKind::ZeroOne).unwrap();
        let gaps: Vec<f64> = fc
            .members()
            .iter()
            .map(|p| {
                profile_with(&ds, LossKind::ZeroOne, |_, r| {
                    Ok(p.decide(r.score.unwrap(), &[]))
                })
                .unwrap()
                .gap
            })
            .collect();
        let best = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = gaps.iter().position(|&g| g == best).unwrap();
        assert_eq!(res.chosen, first);
        assert_eq!(res.value, best);
        for (t, g) in res.table.iter().zip(&gaps) {
            assert_eq!(t.gap, *g);
        }
    }

    #[test]
    fn singleton_class_is_chosen() {
        let ds = crafted();
        let fc = FunctionClass::thresholds(0.95, 0.95, 1).unwrap();
        assert_eq!(erm_fairness(&ds, &fc, LossKind::ZeroOne).unwrap().chosen, 0);
        assert_eq!(
            erm_supervised(&ds, &fc, LossKind::ZeroOne).unwrap().chosen,
            0
        );
    }

    #[test]
    fn ties_go_to_lower_index() {
        let ds = crafted();
        let fc = FunctionClass::new(
            ClassKind::Custom,
            vec![Predictor::Threshold(0.95), Predictor::Threshold(0.95)],
        )
        .unwrap();
        assert_eq!(erm_fairness(&ds, &fc, LossKind::ZeroOne).unwrap().chosen, 0);
    }

    #[test]
    fn supervised_finds_separating_threshold() {
        let ds = scored(&[("a", 1, 0.8), ("a", 0, 0.35), ("b", 1, 0.7), ("b", 0, 0.2)]);
        let fc = FunctionClass::thresholds(0.1, 0.9, 9).unwrap();
        let res = erm_supervised(&ds, &fc, LossKind::ZeroOne).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.chosen, 3);
    }

    #[test]
    fn dominated_member_does_not_change_choice() {
        let ds = crafted();
        let fc = FunctionClass::thresholds(0.1, 0.9, 9).unwrap();
        let before = erm_supervised(&ds, &fc, LossKind::ZeroOne).unwrap();
        let mut members = fc.members().to_vec();
        members.insert(0, Predictor::Threshold(2.0));
        let fc2 = FunctionClass::new(ClassKind::Custom, members).unwrap();
        let after = erm_supervised(&ds, &fc2, LossKind::ZeroOne).unwrap();
        assert_eq!(after.chosen, before.chosen + 1);
        assert_eq!(after.value, before.value);
    }

    #[test]
    fn group_relabeling_invariance() {
        let ds = crafted();
        let renamed = GroupedDataset::new(
            ds.records()
                .iter()
                .rev()
                .map(|r| {
                    let g = if r.group == "a" { "z" } else { "y" };
                    Record::new(g, r.label, vec![], r.score)
                })
                .collect(),
        )
        .unwrap();
        let fc = FunctionClass::thresholds(0.1, 0.9, 17).unwrap();
        let a = erm_fairness(&ds, &fc, LossKind::ZeroOne).unwrap();
        let b = erm_fairness(&renamed, &fc, LossKind::ZeroOne).unwrap();
        assert_eq!(a.chosen, b.chosen);
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-15);
    }

    #[test]
    fn erm_preconditions() {
        let one = scored(&[("a", 1, 0.5), ("a", 0, 0.5)]);
        let fc = FunctionClass::thresholds(0.5, 0.5, 1).unwrap();
        assert_eq!(
            erm_fairness(&one, &fc, LossKind::ZeroOne),
            Err(Error::FewerThanTwoGroups(1))
        );
        let unscored = GroupedDataset::new(vec![
            Record::new("a", 1, vec![1.0], None),
            Record::new("b", 0, vec![1.0], None),
        ])
        .unwrap();
        assert_eq!(
            erm_fairness(&unscored, &fc, LossKind::ZeroOne),
            Err(Error::MissingScore(1))
        );
    }
}
