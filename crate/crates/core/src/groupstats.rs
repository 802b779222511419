//! Per-group distribution statistics and distribution-shift measures.
//!
//! Covariances use the population divisor `n`: the bounds treat group
//! statistics as distribution parameters. Multiply by `n / (n - 1)` for the
//! sample covariance.

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{GroupedDataset, Record};
use crate::error::{Error, Result};
use crate::linalg::{frobenius, min_eigenvalue, psd_sqrt, to_matrix};

/// Relative floor under which the transport trace term counts as zero.
const TRACE_CANCELLATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    /// Fraction of label-1 records.
    pub r: f64,
    pub mu: Vec<f64>,
    /// Population covariance, row-major.
    pub sigma: Vec<Vec<f64>>,
    /// Mean Euclidean distance to the overall dataset centroid.
    pub dist_mean: f64,
    /// Population std of those distances.
    pub dist_std: f64,
    /// Set when `n < 2`, in which case `sigma` is the zero matrix.
    pub degenerate: bool,
}

impl GroupStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.sigma).expect("square by construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftMetrics {
    /// `‖μ_i − μ‖₂`
    pub mean_shift: f64,
    /// `√‖Σ_i − Σ‖_F`
    pub cov_shift_frob: f64,
    /// `mean_shift + sigma_diff`: the additive Gaussian transport distance.
    pub w2: f64,
    /// `√tr(Σ_i + Σ − 2(Σ_i^½ Σ Σ_i^½)^½)`; equals `|σ_i − σ|` in 1-D.
    pub sigma_diff: f64,
}

impl ShiftMetrics {
    pub const ZERO: ShiftMetrics = ShiftMetrics {
        mean_shift: 0.0,
        cov_shift_frob: 0.0,
        w2: 0.0,
        sigma_diff: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Distances of every sample to the overall centroid, summarized per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub centroid: Vec<f64>,
    pub overall: DistanceSummary,
    pub groups: IndexMap<String, DistanceSummary>,
    /// Raw per-sample distances, per group, in dataset order.
    pub distances: IndexMap<String, Vec<f64>>,
}

fn mean_vector<'a>(records: impl Iterator<Item = &'a Record>, dim: usize) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for r in records {
        for (s, v) in sum.iter_mut().zip(&r.features) {
            *s += v;
        }
        n += 1;
    }
    if n > 0 {
        for s in &mut sum {
            *s /= n as f64;
        }
    }
    (sum, n)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

fn stats_of(records: &[&Record], dim: usize, centroid: &[f64]) -> GroupStats {
    let (mu, n) = mean_vector(records.iter().copied(), dim);
    let positives = records.iter().filter(|r| r.is_positive()).count();
    let mut sigma = vec![vec![0.0; dim]; dim];
    if n >= 2 {
        for r in records {
            for i in 0..dim {
                let di = r.features[i] - mu[i];
                for j in i..dim {
                    sigma[i][j] += di * (r.features[j] - mu[j]);
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                sigma[i][j] /= n as f64;
                sigma[j][i] = sigma[i][j];
            }
        }
    }
    let distances: Vec<f64> = records
        .iter()
        .map(|r| euclidean(&r.features, centroid))
        .collect();
    let (dist_mean, dist_std) = mean_std(&distances);
    GroupStats {
        n,
        r: if n > 0 {
            positives as f64 / n as f64
        } else {
            0.0
        },
        mu,
        sigma,
        dist_mean,
        dist_std,
        degenerate: n < 2,
    }
}

fn overall_centroid(ds: &GroupedDataset) -> Vec<f64> {
    mean_vector(ds.records().iter(), ds.dim()).0
}

/// Statistics of one group; distances are measured to the overall centroid.
pub fn group_stats(ds: &GroupedDataset, group: &str) -> Result<GroupStats> {
    if !ds.has_group(group) {
        return Err(Error::UnknownGroup(group.to_string()));
    }
    let records: Vec<&Record> = ds.group_records(group).collect();
    if records.is_empty() {
        return Err(Error::EmptyGroup(group.to_string()));
    }
    Ok(stats_of(&records, ds.dim(), &overall_centroid(ds)))
}

/// Statistics of all records pooled.
pub fn overall_stats(ds: &GroupedDataset) -> Result<GroupStats> {
    if ds.is_empty() {
        return Err(Error::EmptySlice);
    }
    let records: Vec<&Record> = ds.records().iter().collect();
    Ok(stats_of(&records, ds.dim(), &overall_centroid(ds)))
}

/// Statistics for every group, computed in parallel, in group order.
pub fn all_group_stats(ds: &GroupedDataset) -> Result<IndexMap<String, GroupStats>> {
    let centroid = overall_centroid(ds);
    let stats: Vec<GroupStats> = ds
        .groups()
        .par_iter()
        .map(|g| {
            let records: Vec<&Record> = ds.group_records(g).collect();
            stats_of(&records, ds.dim(), &centroid)
        })
        .collect();
    Ok(ds.groups().iter().cloned().zip(stats).collect())
}

/// Shift between two Gaussians given by their moments.
pub fn gaussian_shift(
    mu_a: &[f64],
    sigma_a: &DMatrix<f64>,
    mu_b: &[f64],
    sigma_b: &DMatrix<f64>,
) -> Result<ShiftMetrics> {
    let d = mu_a.len();
    for found in [
        mu_b.len(),
        sigma_a.nrows(),
        sigma_a.ncols(),
        sigma_b.nrows(),
        sigma_b.ncols(),
    ] {
        if found != d {
            return Err(Error::DimensionMismatch { expected: d, found });
        }
    }
    let mean_shift = euclidean(mu_a, mu_b);
    let cov_shift_frob = frobenius(&(sigma_a - sigma_b)).sqrt();

    // validates sigma_b as PSD as well
    let root_b = psd_sqrt(sigma_b)?;
    let root_a = psd_sqrt(sigma_a)?;
    let sigma_diff = match d {
        0 => 0.0,
        1 => (root_a[(0, 0)] - root_b[(0, 0)]).abs(),
        _ => {
            let cross = psd_sqrt(&(&root_a * sigma_b * &root_a))?;
            let scale = sigma_a.trace() + sigma_b.trace();
            let trace = scale - 2.0 * cross.trace();
            // below this the trace is pure cancellation noise
            if trace <= TRACE_CANCELLATION * scale {
                0.0
            } else {
                trace.sqrt()
            }
        }
    };

    Ok(ShiftMetrics {
        mean_shift,
        cov_shift_frob,
        w2: mean_shift + sigma_diff,
        sigma_diff,
    })
}

/// Shift of a group's distribution relative to the overall distribution.
pub fn shift_metrics(g: &GroupStats, overall: &GroupStats) -> Result<ShiftMetrics> {
    gaussian_shift(
        &g.mu,
        &g.sigma_matrix(),
        &overall.mu,
        &overall.sigma_matrix(),
    )
}

/// Convenience for one-dimensional `(mean, std)` summaries.
pub fn shift_1d(mean_a: f64, std_a: f64, mean_b: f64, std_b: f64) -> Result<ShiftMetrics> {
    let sa = DMatrix::from_element(1, 1, std_a * std_a);
    let sb = DMatrix::from_element(1, 1, std_b * std_b);
    gaussian_shift(&[mean_a], &sa, &[mean_b], &sb)
}

pub fn feature_distance_profile(ds: &GroupedDataset) -> Result<DistanceProfile> {
    if ds.dim() == 0 {
        return Err(Error::NoFeatures);
    }
    let centroid = overall_centroid(ds);
    let mut distances: IndexMap<String, Vec<f64>> = ds
        .groups()
        .iter()
        .map(|g| (g.clone(), Vec::new()))
        .collect();
    let mut all = Vec::with_capacity(ds.len());
    for r in ds.records() {
        let d = euclidean(&r.features, &centroid);
        all.push(d);
        distances[&r.group].push(d);
    }
    let summarize = |v: &[f64]| {
        let (mean, std) = mean_std(v);
        DistanceSummary {
            n: v.len(),
            mean,
            std,
        }
    };
    Ok(DistanceProfile {
        overall: summarize(&all),
        groups: distances
            .iter()
            .map(|(g, v)| (g.clone(), summarize(v)))
            .collect(),
        centroid,
        distances,
    })
}

/// Asymmetry and smallest eigenvalue of a covariance matrix, for audits.
pub fn covariance_health(sigma: &[Vec<f64>]) -> (f64, f64) {
    let m = to_matrix(sigma).expect("square covariance");
    let asym = (&m - m.transpose())
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    (asym, min_eigenvalue(&m))
}

/// Moment-matched mean and covariance of a mixture.
pub fn mixture_moments(parts: &[(f64, Vec<f64>, DMatrix<f64>)]) -> (Vec<f64>, DMatrix<f64>) {
    let d = parts.first().map_or(0, |p| p.1.len());
    let mut mu = vec![0.0; d];
    for (w, m, _) in parts {
        for (acc, v) in mu.iter_mut().zip(m) {
            *acc += w * v;
        }
    }
    let mut sigma = DMatrix::zeros(d, d);
    for (w, m, s) in parts {
        let dm = nalgebra::DVector::from_iterator(d, m.iter().zip(&mu).map(|(a, b)| a - b));
        sigma += (s + &dm * dm.transpose()) * *w;
    }
    (mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ds(rows: &[(&str, u8, Vec<f64>)]) -> GroupedDataset {
        GroupedDataset::new(
            rows.iter()
                .map(|(g, y, f)| Record::new(*g, *y, f.clone(), None))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_point_group() {
        let d = ds(&[("A", 1, vec![1.0, 2.0]), ("A", 0, vec![3.0, 4.0])]);
        let s = group_stats(&d, "A").unwrap();
        assert_eq!(s.mu, vec![2.0, 3.0]);
        assert_eq!(s.sigma, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(s.r, 0.5);
        assert!(!s.degenerate);
    }

    #[test]
    fn repeated_point_has_zero_covariance() {
        let d = ds(&vec![("A", 1, vec![2.0, -1.0]); 5]);
        let s = group_stats(&d, "A").unwrap();
        assert_eq!(s.sigma, vec![vec![0.0; 2]; 2]);
        assert_eq!(s.dist_mean, 0.0);
        assert_eq!(s.dist_std, 0.0);
    }

    #[test]
    fn single_record_is_degenerate() {
        let d = ds(&[("A", 1, vec![1.0]), ("B", 0, vec![3.0])]);
        let s = group_stats(&d, "A").unwrap();
        assert!(s.degenerate);
        assert_eq!(s.sigma, vec![vec![0.0]]);
        assert_eq!(s.dist_mean, 1.0);
    }

    #[test]
    fn unknown_group() {
        let d = ds(&[("A", 1, vec![1.0])]);
        assert_eq!(group_stats(&d, "Z"), Err(Error::UnknownGroup("Z".into())));
    }

    #[test]
    fn weighted_overall_mean() {
        let mut rows = vec![("A", 0, vec![-1.0]); 3];
        rows.push(("B", 1, vec![1.0]));
        let o = overall_stats(&ds(&rows)).unwrap();
        assert_eq!(o.mu, vec![-0.5]);
        assert_eq!(o.r, 0.25);
    }

    #[test]
    fn pooled_equals_group_for_single_group() {
        let d = ds(&[
            ("A", 1, vec![1.0, 0.0]),
            ("A", 0, vec![3.0, 5.0]),
            ("A", 1, vec![-2.0, 1.0]),
        ]);
        assert_eq!(overall_stats(&d).unwrap(), group_stats(&d, "A").unwrap());
    }

    #[test]
    fn identical_distributions_have_zero_shift() {
        let d = ds(&[
            ("A", 1, vec![1.0, 0.0]),
            ("A", 0, vec![3.0, 5.0]),
            ("A", 1, vec![-2.0, 1.0]),
        ]);
        let s = group_stats(&d, "A").unwrap();
        let m = shift_metrics(&s, &s).unwrap();
        assert_abs_diff_eq!(m.mean_shift, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.cov_shift_frob, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.sigma_diff, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.w2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reported_feature_statistics() {
        let asian = shift_1d(6.26, 2.53, 5.92, 2.46).unwrap();
        assert_abs_diff_eq!(asian.mean_shift, 0.34, epsilon = 1e-9);
        assert_abs_diff_eq!(asian.sigma_diff, 0.07, epsilon = 1e-9);
        // √|2.53² − 2.46²| = √0.3493
        assert_abs_diff_eq!(asian.cov_shift_frob, 0.3493f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(asian.cov_shift_frob, 0.5910, epsilon = 1e-4);

        let black = shift_1d(6.45, 2.65, 5.92, 2.46).unwrap();
        assert_abs_diff_eq!(black.mean_shift, 0.53, epsilon = 1e-9);
        assert_abs_diff_eq!(black.sigma_diff, 0.19, epsilon = 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::identity(1, 1);
        assert!(matches!(
            gaussian_shift(&[0.0, 0.0], &a, &[0.0], &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        let b = DMatrix::identity(2, 2);
        assert!(matches!(
            gaussian_shift(&[0.0, 0.0], &a, &[0.0, 0.0], &b),
            Err(Error::NonPSDCovariance(_))
        ));
    }

    #[test]
    fn distance_profile_by_hand() {
        let d = ds(&[("A", 1, vec![0.0, 0.0]), ("B", 0, vec![2.0, 0.0])]);
        let p = feature_distance_profile(&d).unwrap();
        assert_eq!(p.centroid, vec![1.0, 0.0]);
        assert_eq!(p.distances["A"], vec![1.0]);
        assert_eq!(p.distances["B"], vec![1.0]);
        assert_eq!(p.overall.mean, 1.0);
        assert_eq!(p.overall.std, 0.0);
    }

    #[test]
    fn distance_profile_at_centroid() {
        let d = ds(&[("A", 1, vec![1.0]), ("B", 0, vec![1.0])]);
        let p = feature_distance_profile(&d).unwrap();
        assert_eq!((p.overall.mean, p.overall.std), (0.0, 0.0));
    }

    #[test]
    fn distance_profile_needs_features() {
        let d = GroupedDataset::new(vec![Record::new("A", 1, vec![], Some(0.5))]).unwrap();
        assert_eq!(feature_distance_profile(&d), Err(Error::NoFeatures));
    }

    #[test]
    fn mixture_of_point_masses() {
        let zero = DMatrix::zeros(1, 1);
        let (mu, sigma) =
            mixture_moments(&[(0.75, vec![-1.0], zero.clone()), (0.25, vec![1.0], zero)]);
        assert_abs_diff_eq!(mu[0], -0.5, epsilon = 1e-15);
        // E[x²] − μ² = 1 − 0.25
        assert_abs_diff_eq!(sigma[(0, 0)], 0.75, epsilon = 1e-15);
    }
}
