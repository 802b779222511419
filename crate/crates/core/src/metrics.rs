//! Empirical losses, fairness gaps and classification-quality metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{GroupedDataset, Record};
use crate::error::{Error, Result};

/// Clipping applied to probabilities before taking logs.
pub const LOG_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(score − label)²`, bounded by 1.
    #[default]
    Squared,
    /// Misclassification at threshold 0.5; a score of exactly 0.5 predicts 1.
    ZeroOne,
    /// Negative log-likelihood with probabilities clipped to `[1e-6, 1 − 1e-6]`.
    LogClipped,
}

impl LossKind {
    pub fn eval(self, output: f64, label: u8) -> f64 {
        let y = f64::from(label);
        match self {
            LossKind::Squared => (output - y) * (output - y),
            LossKind::ZeroOne => {
                let predicted = if output >= 0.5 { 1 } else { 0 };
                if predicted == label {
                    0.0
                } else {
                    1.0
                }
            }
            LossKind::LogClipped => {
                let p = output.clamp(LOG_CLIP, 1.0 - LOG_CLIP);
                if label == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            }
        }
    }

    /// Upper bound of the loss over outputs in `[0, 1]`.
    pub fn sup(self) -> f64 {
        match self {
            LossKind::Squared | LossKind::ZeroOne => 1.0,
            LossKind::LogClipped => -LOG_CLIP.ln(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::ZeroOne => "zero_one",
            LossKind::LogClipped => "log_clipped",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(LossKind::Squared),
            "zero_one" => Ok(LossKind::ZeroOne),
            "log_clipped" => Ok(LossKind::LogClipped),
            other => Err(Error::invalid(
                "loss",
                format!("unknown loss kind `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLoss {
    pub group: String,
    pub n: usize,
    pub positive_rate: f64,
    pub loss: f64,
    /// `L⁺`: mean loss over label-1 records; absent when the group has none.
    pub pos_loss: Option<f64>,
    /// `L⁻`: mean loss over label-0 records; absent when the group has none.
    pub neg_loss: Option<f64>,
    pub max_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    pub loss_kind: LossKind,
    pub groups: Vec<GroupLoss>,
    pub overall_loss: f64,
    /// Largest pairwise absolute difference of group losses.
    pub gap: f64,
    pub argmax_pair: (String, String),
}

impl LossProfile {
    pub fn group(&self, name: &str) -> Result<&GroupLoss> {
        self.groups
            .iter()
            .find(|g| g.group == name)
            .ok_or_else(|| Error::UnknownGroup(name.to_string()))
    }

    pub fn max_loss(&self) -> f64 {
        self.groups.iter().fold(0.0, |a, g| a.max(g.max_loss))
    }
}

/// Largest pairwise absolute difference and the first pair `(i, j)`, `i < j`,
/// attaining it.
pub fn max_pairwise_gap(losses: &[f64]) -> (f64, usize, usize) {
    let mut best = (0.0, 0, usize::from(losses.len() > 1));
    for i in 0..losses.len() {
        for j in i + 1..losses.len() {
            let d = (losses[i] - losses[j]).abs();
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    best
}

#[derive(Default, Clone)]
struct Accumulator {
    n: usize,
    pos: usize,
    sum: f64,
    pos_sum: f64,
    neg_sum: f64,
    max: f64,
}

impl Accumulator {
    fn push(&mut self, loss: f64, label: u8) {
        self.n += 1;
        self.sum += loss;
        self.max = self.max.max(loss);
        if label == 1 {
            self.pos += 1;
            self.pos_sum += loss;
        } else {
            self.neg_sum += loss;
        }
    }

    fn finish(&self, group: &str) -> GroupLoss {
        let neg = self.n - self.pos;
        GroupLoss {
            group: group.to_string(),
            n: self.n,
            positive_rate: self.pos as f64 / self.n as f64,
            loss: self.sum / self.n as f64,
            pos_loss: (self.pos > 0).then(|| self.pos_sum / self.pos as f64),
            neg_loss: (neg > 0).then(|| self.neg_sum / neg as f64),
            max_loss: self.max,
        }
    }
}

/// Loss profile of an arbitrary per-record output (a score or a predictor's
/// decision) under `loss`.
pub fn profile_with<F>(ds: &GroupedDataset, loss: LossKind, output: F) -> Result<LossProfile>
where
    F: Fn(usize, &Record) -> Result<f64>,
{
    let k = ds.groups().len();
    if k < 2 {
        return Err(Error::FewerThanTwoGroups(k));
    }
    let mut acc = vec![Accumulator::default(); k];
    let mut total = 0.0;
    for (i, r) in ds.records().iter().enumerate() {
        let out = output(i, r)?;
        let l = loss.eval(out, r.label);
        total += l;
        let g = ds
            .groups()
            .iter()
            .position(|g| g == &r.group)
            .expect("registered");
        acc[g].push(l, r.label);
    }
    let groups: Vec<GroupLoss> = acc
        .iter()
        .zip(ds.groups())
        .map(|(a, g)| a.finish(g))
        .collect();
    let losses: Vec<f64> = groups.iter().map(|g| g.loss).collect();
    let (gap, i, j) = max_pairwise_gap(&losses);
    Ok(LossProfile {
        loss_kind: loss,
        argmax_pair: (groups[i].group.clone(), groups[j].group.clone()),
        groups,
        overall_loss: total / ds.len() as f64,
        gap,
    })
}

fn require_score(i: usize, r: &Record) -> Result<f64> {
    r.score.ok_or(Error::MissingScore(i + 1))
}

/// Per-group loss of the records' own scores.
pub fn loss_profile(ds: &GroupedDataset, loss: LossKind) -> Result<LossProfile> {
    profile_with(ds, loss, require_score)
}

/// The three terms bounding `|E_i − E_j|` through conditional risks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub lhs: f64,
    pub rhs: f64,
    pub positive_term: f64,
    pub prevalence_term: f64,
    pub negative_term: f64,
}

/// Evaluates both sides of the conditional-risk decomposition for two groups
/// with positive rates `p`, positive-class risks `pos` and negative-class
/// risks `neg`.
pub fn decomposition_terms(
    p: (f64, f64),
    pos: (f64, f64),
    neg: (f64, f64),
    m: f64,
) -> Decomposition {
    let e_i = p.0 * pos.0 + (1.0 - p.0) * neg.0;
    let e_j = p.1 * pos.1 + (1.0 - p.1) * neg.1;
    let positive_term = p.0.max(p.1) * (pos.0 - pos.1).abs();
    let prevalence_term = 2.0 * m * (p.0 - p.1).abs();
    let negative_term = (1.0 - p.0).min(1.0 - p.1) * (neg.0 - neg.1).abs();
    Decomposition {
        lhs: (e_i - e_j).abs(),
        rhs: positive_term + prevalence_term + negative_term,
        positive_term,
        prevalence_term,
        negative_term,
    }
}

pub fn decomposition_bound(
    profile: &LossProfile,
    i: &str,
    j: &str,
    m: f64,
) -> Result<Decomposition> {
    let observed = profile.max_loss();
    if m.is_nan() || m < observed {
        return Err(Error::BadM { m, observed });
    }
    let gi = profile.group(i)?;
    let gj = profile.group(j)?;
    let conditional = |g: &GroupLoss, v: Option<f64>, sign: &'static str| {
        v.ok_or_else(|| Error::MissingConditional {
            group: g.group.clone(),
            sign,
        })
    };
    let pos = (
        conditional(gi, gi.pos_loss, "positive")?,
        conditional(gj, gj.pos_loss, "positive")?,
    );
    let neg = (
        conditional(gi, gi.neg_loss, "negative")?,
        conditional(gj, gj.neg_loss, "negative")?,
    );
    let mut d = decomposition_terms((gi.positive_rate, gj.positive_rate), pos, neg, m);
    // report the empirical gap exactly as the profile measured it
    d.lhs = (gi.loss - gj.loss).abs();
    Ok(d)
}

/// Which records a metric looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slice<'a> {
    All,
    Group(&'a str),
}

fn scored_slice(ds: &GroupedDataset, slice: Slice) -> Result<Vec<(f64, u8)>> {
    if let Slice::Group(g) = slice {
        if !ds.has_group(g) {
            return Err(Error::UnknownGroup(g.to_string()));
        }
    }
    ds.records()
        .iter()
        .enumerate()
        .filter(|(_, r)| match slice {
            Slice::All => true,
            Slice::Group(g) => r.group == g,
        })
        .map(|(i, r)| Ok((require_score(i, r)?, r.label)))
        .collect()
}

/// Mann–Whitney AUC of `(score, label)` pairs, ties credited one half.
///
/// Counts are kept as doubled integers so the result is the correctly
/// rounded value of the exact rational.
pub fn auc_of(pairs: &[(f64, u8)]) -> Result<f64> {
    let n_pos = pairs.iter().filter(|p| p.1 == 1).count() as u64;
    let n_neg = pairs.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateSlice);
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start;
        while end < sorted.len() && sorted[end].0.total_cmp(&sorted[start].0) == Ordering::Equal {
            end += 1;
        }
        let block = &sorted[start..end];
        let pos = block.iter().filter(|p| p.1 == 1).count() as u64;
        let neg = block.len() as u64 - pos;
        twice_u += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        start = end;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

pub fn auc(ds: &GroupedDataset, slice: Slice) -> Result<f64> {
    auc_of(&scored_slice(ds, slice)?)
}

/// Mean squared difference between score and label.
pub fn brier(ds: &GroupedDataset, slice: Slice) -> Result<f64> {
    let pairs = scored_slice(ds, slice)?;
    if pairs.is_empty() {
        return Err(Error::EmptySlice);
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(s, y)| LossKind::Squared.eval(s, y))
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// `M·|p_i − p_j|`
pub fn prevalence_penalty(p_i: f64, p_j: f64, m: f64) -> Result<f64> {
    for (name, p) in [("p_i", p_i), ("p_j", p_j)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange(format!("{name} = {p} is not in [0, 1]")));
        }
    }
    if m <= 0.0 || !m.is_finite() {
        return Err(Error::OutOfRange(format!("M = {m} must be positive")));
    }
    Ok(m * (p_i - p_j).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scored(rows: &[(&str, u8, f64)]) -> GroupedDataset {
        GroupedDataset::new(
            rows.iter()
                .map(|&(g, y, s)| Record::new(g, y, vec![], Some(s)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loss_kinds() {
        assert_abs_diff_eq!(LossKind::Squared.eval(0.8, 1), 0.04, epsilon = 1e-15);
        assert_eq!(LossKind::ZeroOne.eval(0.5, 1), 0.0);
        assert_eq!(LossKind::ZeroOne.eval(0.5, 0), 1.0);
        assert_eq!(LossKind::ZeroOne.eval(0.49, 0), 0.0);
        assert_abs_diff_eq!(
            LossKind::LogClipped.eval(0.0, 1),
            -(1e-6f64).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            LossKind::LogClipped.eval(0.5, 0),
            2f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn identical_groups_have_zero_gap() {
        let p = loss_profile(
            &scored(&[("A", 1, 0.7), ("A", 0, 0.2), ("B", 0, 0.2), ("B", 1, 0.7)]),
            LossKind::Squared,
        )
        .unwrap();
        assert_eq!(p.gap, 0.0);
    }

    #[test]
    fn squared_gap_by_hand() {
        let p = loss_profile(&scored(&[("A", 1, 0.8), ("B", 0, 0.8)]), LossKind::Squared).unwrap();
        assert_abs_diff_eq!(p.groups[0].loss, 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(p.groups[1].loss, 0.64, epsilon = 1e-12);
        assert_abs_diff_eq!(p.gap, 0.60, epsilon = 1e-12);
        assert_eq!(p.groups[0].neg_loss, None);
        assert_eq!(p.groups[1].pos_loss, None);
    }

    #[test]
    fn argmax_pair_over_three_groups() {
        // zero-one losses 0.2, 0.5, 0.3 via 10 records per group
        let mut rows = Vec::new();
        for (g, wrong) in [("A", 2), ("B", 5), ("C", 3)] {
            for i in 0..10 {
                rows.push((g, 1u8, if i < wrong { 0.1 } else { 0.9 }));
            }
        }
        let p = loss_profile(&scored(&rows), LossKind::ZeroOne).unwrap();
        assert_abs_diff_eq!(p.gap, 0.3, epsilon = 1e-12);
        assert_eq!(p.argmax_pair, ("A".to_string(), "B".to_string()));
    }

    #[test]
    fn profile_errors() {
        let one = scored(&[("A", 1, 0.5)]);
        assert_eq!(
            loss_profile(&one, LossKind::Squared),
            Err(Error::FewerThanTwoGroups(1))
        );
        let missing = GroupedDataset::new(vec![
            Record::new("A", 1, vec![], Some(0.5)),
            Record::new("B", 1, vec![], None),
        ])
        .unwrap();
        assert_eq!(
            loss_profile(&missing, LossKind::Squared),
            Err(Error::MissingScore(2))
        );
    }

    #[test]
    fn decomposition_by_hand() {
        let d = decomposition_terms((0.3, 0.5), (0.4, 0.2), (0.1, 0.3), 1.0);
        assert_abs_diff_eq!(d.lhs, 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(d.positive_term, 0.10, epsilon = 1e-12);
        assert_abs_diff_eq!(d.prevalence_term, 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(d.negative_term, 0.10, epsilon = 1e-12);
        assert_abs_diff_eq!(d.rhs, 0.60, epsilon = 1e-12);
    }

    #[test]
    fn decomposition_identity_case() {
        let d = decomposition_terms((0.4, 0.4), (0.3, 0.3), (0.2, 0.2), 1.0);
        assert_eq!((d.lhs, d.rhs), (0.0, 0.0));
    }

    #[test]
    fn decomposition_bound_from_profile() {
        let ds = scored(&[
            ("A", 1, 0.9),
            ("A", 0, 0.3),
            ("B", 1, 0.6),
            ("B", 0, 0.1),
            ("B", 0, 0.2),
        ]);
        let p = loss_profile(&ds, LossKind::Squared).unwrap();
        let d = decomposition_bound(&p, "A", "B", 1.0).unwrap();
        assert!(d.lhs <= d.rhs + 1e-10);
        assert!(matches!(
            decomposition_bound(&p, "A", "B", 0.01),
            Err(Error::BadM { .. })
        ));
        let lopsided = scored(&[("A", 1, 0.9), ("B", 1, 0.6), ("B", 0, 0.1)]);
        let p = loss_profile(&lopsided, LossKind::Squared).unwrap();
        assert_eq!(
            decomposition_bound(&p, "A", "B", 1.0),
            Err(Error::MissingConditional {
                group: "A".into(),
                sign: "negative"
            })
        );
    }

    #[test]
    fn auc_examples() {
        let perfect = [(0.9, 1), (0.8, 1), (0.1, 0), (0.2, 0)];
        assert_eq!(auc_of(&perfect).unwrap(), 1.0);
        let ties = [(0.5, 1), (0.5, 0), (0.5, 1), (0.5, 0)];
        assert_eq!(auc_of(&ties).unwrap(), 0.5);
        let mixed = [(0.8, 1), (0.3, 1), (0.6, 0), (0.1, 0)];
        assert_eq!(auc_of(&mixed).unwrap(), 0.75);
        assert_eq!(auc_of(&[(0.3, 1), (0.4, 1)]), Err(Error::DegenerateSlice));
    }

    #[test]
    fn auc_per_group() {
        let ds = scored(&[("A", 1, 0.9), ("A", 0, 0.1), ("B", 1, 0.2), ("B", 0, 0.7)]);
        assert_eq!(auc(&ds, Slice::Group("A")).unwrap(), 1.0);
        assert_eq!(auc(&ds, Slice::Group("B")).unwrap(), 0.0);
        assert_eq!(auc(&ds, Slice::All).unwrap(), 0.75);
        assert_eq!(
            auc(&ds, Slice::Group("C")),
            Err(Error::UnknownGroup("C".into()))
        );
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&scored(&[("A", 1, 1.0)]), Slice::All).unwrap(), 0.0);
        let half = scored(&[("A", 1, 0.5), ("A", 0, 0.5), ("B", 1, 0.5)]);
        assert_eq!(brier(&half, Slice::All).unwrap(), 0.25);
        let mixed = scored(&[("A", 1, 0.8), ("A", 0, 0.4)]);
        assert_abs_diff_eq!(brier(&mixed, Slice::All).unwrap(), 0.10, epsilon = 1e-12);
    }

    #[test]
    fn prevalence_penalty_examples() {
        assert_eq!(prevalence_penalty(0.3, 0.3, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            prevalence_penalty(0.1, 0.3, 1.0).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            prevalence_penalty(0.07, 0.12, 2.0).unwrap(),
            0.10,
            epsilon = 1e-12
        );
        assert!(matches!(
            prevalence_penalty(1.2, 0.3, 1.0),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            prevalence_penalty(0.2, 0.3, 0.0),
            Err(Error::OutOfRange(_))
        ));
    }
}
