use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;

use anyhow::Context;
use fairbound::bounds::{self, BoundReport, CovMode};
use fairbound::dataset::{load_csv, write_csv, GroupedDataset};
use fairbound::groupstats::{self, ShiftMetrics};
use fairbound::learner::{erm_fairness, erm_supervised, FunctionClass, LinearModel, Predictor};
use fairbound::metrics::{self, Slice};
use fairbound::verify::{self, AuditReport, ConvergenceConfig, McConfig};
use indexmap::IndexMap;
use serde::Serialize;

use crate::config::{CheckKind, CommandKind, RunConfig};
use crate::output::{file_stem, fmt, fmt_opt, histogram, table, OutDir};

/// What a finished command reports back to `main`.
pub struct Outcome {
    pub violation: bool,
}

const OK: Outcome = Outcome { violation: false };

pub fn run(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<Outcome> {
    match cfg.command {
        CommandKind::Stats => stats(cfg, out),
        CommandKind::Audit => audit(cfg, out),
        CommandKind::Bounds => bounds_cmd(cfg, out),
        CommandKind::Erm => erm(cfg, out),
        CommandKind::Simulate => simulate(cfg, out),
        CommandKind::Converge => converge(cfg, out),
    }
}

fn load_input(cfg: &RunConfig) -> anyhow::Result<GroupedDataset> {
    let path = cfg.require_input()?;
    load_csv(path, &cfg.schema).with_context(|| format!("loading {}", path.display()))
}

fn load_model(cfg: &RunConfig) -> anyhow::Result<Option<LinearModel>> {
    cfg.model
        .as_ref()
        .map(|p| {
            let f = File::open(p).with_context(|| format!("opening model {}", p.display()))?;
            LinearModel::load(BufReader::new(f))
                .with_context(|| format!("reading model {}", p.display()))
        })
        .transpose()
}

fn emit<T: Serialize>(
    cfg: &RunConfig,
    out: &mut OutDir,
    json_name: &str,
    value: &T,
    md: &str,
) -> anyhow::Result<()> {
    if cfg.format.json() {
        out.json(json_name, value)?;
    }
    if cfg.format.markdown() {
        out.text("summary.md", md)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ScoreMetrics {
    auc: Option<f64>,
    brier: f64,
}

#[derive(Serialize)]
struct StatsBundle {
    n: usize,
    dim: usize,
    groups: Vec<String>,
    overall: Option<groupstats::GroupStats>,
    group_stats: IndexMap<String, groupstats::GroupStats>,
    shifts: IndexMap<String, ShiftMetrics>,
    scores: Option<IndexMap<String, ScoreMetrics>>,
    histograms: IndexMap<String, String>,
}

fn optional_auc(ds: &GroupedDataset, slice: Slice) -> anyhow::Result<Option<f64>> {
    match metrics::auc(ds, slice) {
        Ok(v) => Ok(Some(v)),
        Err(fairbound::Error::DegenerateSlice) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn stats(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<Outcome> {
    let ds = load_input(cfg)?;
    let mut md = String::from("# Group statistics\n\n");
    let _ = writeln!(
        md,
        "{} records, {} groups, {} features.\n",
        ds.len(),
        ds.groups().len(),
        ds.dim()
    );

    let mut bundle = StatsBundle {
        n: ds.len(),
        dim: ds.dim(),
        groups: ds.groups().to_vec(),
        overall: None,
        group_stats: IndexMap::new(),
        shifts: IndexMap::new(),
        scores: None,
        histograms: IndexMap::new(),
    };

    if ds.dim() > 0 {
        let overall = groupstats::overall_stats(&ds)?;
        bundle.group_stats = groupstats::all_group_stats(&ds)?;
        for (g, s) in &bundle.group_stats {
            bundle
                .shifts
                .insert(g.clone(), groupstats::shift_metrics(s, &overall)?);
        }
        let profile = groupstats::feature_distance_profile(&ds)?;
        let hi = profile
            .distances
            .values()
            .flatten()
            .fold(0.0f64, |a, &v| a.max(v));
        let mut used = HashSet::new();
        for (g, d) in &profile.distances {
            let mut stem = file_stem(g);
            while !used.insert(stem.clone()) {
                stem.push('_');
            }
            let name = format!("dist_{stem}.csv");
            let mut raw = String::from("distance\n");
            for v in d {
                let _ = writeln!(raw, "{v:?}");
            }
            out.text(&name, &raw)?;
            let mut csv = String::from("bin_lo,bin_hi,count,density\n");
            let bins = histogram(d, 0.0, hi, cfg.experiment.bins);
            for (lo, hi, c) in bins {
                let density = c as f64 / (d.len() as f64 * (hi - lo));
                let _ = writeln!(csv, "{lo:?},{hi:?},{c},{density:?}");
            }
            out.text(&format!("hist_{stem}.csv"), &csv)?;
            bundle.histograms.insert(g.clone(), name);
        }

        md.push_str("## Distance to the overall centroid\n\n");
        let rows: Vec<Vec<String>> = bundle
            .group_stats
            .iter()
            .map(|(g, s)| {
                let sh = &bundle.shifts[g];
                vec![
                    g.clone(),
                    s.n.to_string(),
                    fmt(s.r),
                    fmt(s.dist_mean),
                    fmt(s.dist_std),
                    fmt(sh.mean_shift),
                    fmt(sh.sigma_diff),
                    fmt(sh.cov_shift_frob),
                ]
            })
            .chain(std::iter::once(vec![
                "(all)".into(),
                overall.n.to_string(),
                fmt(overall.r),
                fmt(overall.dist_mean),
                fmt(overall.dist_std),
                fmt(0.0),
                fmt(0.0),
                fmt(0.0),
            ]))
            .collect();
        md.push_str(&table(
            &[
                "group",
                "n",
                "positive rate",
                "dist mean",
                "dist std",
                "mean shift",
                "sigma diff",
                "cov shift (frob)",
            ],
            &rows,
        ));
        bundle.overall = Some(overall);
    } else {
        md.push_str("Feature sections omitted: the input has no feature columns.\n");
    }

    if ds.has_scores() {
        let mut scores = IndexMap::new();
        scores.insert(
            "(all)".to_string(),
            ScoreMetrics {
                auc: optional_auc(&ds, Slice::All)?,
                brier: metrics::brier(&ds, Slice::All)?,
            },
        );
        for g in ds.groups() {
            scores.insert(
                g.clone(),
                ScoreMetrics {
                    auc: optional_auc(&ds, Slice::Group(g))?,
                    brier: metrics::brier(&ds, Slice::Group(g))?,
                },
            );
        }
        md.push_str("\n## Scores\n\n");
        let rows: Vec<Vec<String>> = scores
            .iter()
            .map(|(g, m)| vec![g.clone(), fmt_opt(m.auc), fmt(m.brier)])
            .collect();
        md.push_str(&table(&["group", "AUC", "Brier"], &rows));
        bundle.scores = Some(scores);
    }
    emit(cfg, out, "groupstats.json", &bundle, &md)?;
    Ok(OK)
}

fn bound_rows(reports: &[BoundReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            let parts: Vec<String> = r
                .components
                .iter()
                .map(|c| format!("{} {}", c.name, fmt(c.value)))
                .collect();
            let name = match r.cov_mode {
                Some(m) => format!("{} ({})", r.name, m.name()),
                None => r.name.clone(),
            };
            vec![name, fmt(r.value), parts.join(", ")]
        })
        .collect()
}

fn audit(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<Outcome> {
    let ds = load_input(cfg)?;
    let model = load_model(cfg)?;
    let report: AuditReport =
        verify::audit_pipeline(&ds, model.as_ref(), &cfg.params, cfg.experiment.loss)?;
    let mut md = String::from("# Audit\n\n");
    let _ = writeln!(
        md,
        "{} records, {} groups.\n",
        report.n,
        report.groups.len()
    );
    let rows: Vec<Vec<String>> = report
        .group_metrics
        .iter()
        .map(|(g, m)| {
            vec![
                g.clone(),
                m.n.to_string(),
                fmt(m.positive_rate),
                fmt_opt(m.auc),
                fmt(m.brier),
            ]
        })
        .collect();
    md.push_str(&table(
        &["group", "n", "positive rate", "AUC", "Brier"],
        &rows,
    ));
    if let Some(f) = &report.fairness {
        let _ = writeln!(
            md,
            "\n## Fairness\n\n{} loss; gap {} between `{}` and `{}`.\n",
            f.profile.loss_kind.name(),
            fmt(f.profile.gap),
            f.profile.argmax_pair.0,
            f.profile.argmax_pair.1
        );
        md.push_str(&table(
            &["bound", "value", "components"],
            &bound_rows(&f.bounds),
        ));
        for (g, b) in &f.group_bounds {
            let _ = writeln!(md, "\n### Group `{g}`\n");
            md.push_str(&table(&["bound", "value", "components"], &bound_rows(b)));
        }
    }
    if !report.notices.is_empty() {
        md.push_str("\n## Notices\n\n");
        for n in &report.notices {
            let _ = writeln!(md, "- {n}");
        }
    }
    emit(cfg, out, "audit.json", &report, &md)?;
    Ok(OK)
}

#[derive(Serialize)]
struct BoundsInputs<'a> {
    params: &'a fairbound::bounds::BoundParams,
    shift: ShiftMetrics,
    cov_mode: CovMode,
    gap: f64,
    overall_loss: f64,
    class_size: u64,
}

#[derive(Serialize)]
struct BoundsBundle<'a> {
    inputs: BoundsInputs<'a>,
    reports: Vec<BoundReport>,
    sample_complexity: u64,
    finite_class: f64,
}

fn bounds_cmd(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<Outcome> {
    let p = &cfg.params;
    p.validate()?;
    let e = &cfg.experiment;
    let shift = match e.shift {
        Some(s) => ShiftMetrics {
            mean_shift: s.mean_shift,
            cov_shift_frob: s.cov_shift_frob.unwrap_or(s.sigma_diff),
            w2: s.mean_shift + s.sigma_diff,
            sigma_diff: s.sigma_diff,
        },
        None => ShiftMetrics::ZERO,
    };
    let mode = e.cov_mode;
    let reports = vec![
        bounds::hoeffding_fairness_bound(p, e.gap)?,
        bounds::generalization_bound(p, e.gap)?,
        bounds::convergence_bound(p)?,
        bounds::group_risk_bound(p, &shift, mode)?,
        bounds::tradeoff_bound(p, &shift, mode)?,
        bounds::group_expected_loss_bound(e.overall_loss, p, &shift, mode)?,
    ];
    let bundle = BoundsBundle {
        inputs: BoundsInputs {
            params: p,
            shift,
            cov_mode: mode,
            gap: e.gap,
            overall_loss: e.overall_loss,
            class_size: e.class_size,
        },
        sample_complexity: bounds::sample_complexity(p)?,
        finite_class: bounds::finite_class_learning_bound(
            p.sample_size,
            e.class_size,
            p.k,
            p.delta,
        )?,
        reports,
    };
    let mut md = String::from("# Bounds\n\n");
    let _ = writeln!(
        md,
        "Shift: mean {}, covariance term {} ({}).\n",
        fmt(shift.mean_shift),
        fmt(mode.cov_term(&shift)),
        mode.name()
    );
    md.push_str(&table(
        &["bound", "value", "components"],
        &bound_rows(&bundle.reports),
    ));
    let _ = writeln!(
        md,
        "\nSample complexity: {}. Finite-class bound (|F| = {}): {}.",
        bundle.sample_complexity,
        e.class_size,
        fmt(bundle.finite_class)
    );
    if cfg.format.json() {
        out.json("bounds.json", &bundle)?;
    }
    if cfg.format.markdown() {
        out.text("summary.md", &md)?;
    }
    Ok(OK)
}

#[derive(Serialize)]
struct ErmRow {
    index: usize,
    member: Predictor,
    group_losses: IndexMap<String, f64>,
    gap: f64,
    pooled_loss: f64,
}

#[derive(Serialize)]
struct ErmChoice {
    index: usize,
    member: Predictor,
    value: f64,
}

#[derive(Serialize)]
struct ErmBundle {
    loss: String,
    fairness: ErmChoice,
    supervised: ErmChoice,
    table: Vec<ErmRow>,
}

fn erm(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<Outcome> {
    let mut ds = load_input(cfg)?;
    if let Some(m) = load_model(cfg)? {
        ds = m.score_dataset(&ds)?;
    }
    let t = &cfg.experiment.thresholds;
    let fc = FunctionClass::thresholds(t.lo, t.hi, t.count)?;
    let loss = cfg.experiment.loss;
    let fair = erm_fairness(&ds, &fc, loss)?;
    let sup = erm_supervised(&ds, &fc, loss)?;
    let table_rows: Vec<ErmRow> = fair
        .table
        .iter()
        .enumerate()
        .map(|(i, m)| ErmRow {
            index: i,
            member: fc.members()[i].clone(),
            group_losses: ds
                .groups()
                .iter()
                .cloned()
                .zip(m.group_losses.iter().copied())
                .collect(),
            gap: m.gap,
            pooled_loss: m.pooled_loss,
        })
        .collect();
    let bundle = ErmBundle {
        loss: loss.name().into(),
        fairness: ErmChoice {
            index: fair.chosen,
            member: fc.members()[fair.chosen].clone(),
            value: fair.value,
        },
        supervised: ErmChoice {
            index: sup.chosen,
            member: fc.members()[sup.chosen].clone(),
            value: sup.value,
        },
        table: table_rows,
    };
    let mut csv = String::from("index,threshold,gap,pooled_loss");
    for g in ds.groups() {
        let _ = write!(csv, ",loss_{}", file_stem(g));
    }
    csv.push('\n');
    let mut md = String::from("# Empirical risk minimization\n\n");
    let _ = writeln!(
        md,
        "Fairness choice: member {} (gap {}). Supervised choice: member {} (pooled loss {}).\n",
        fair.chosen,
        fmt(fair.value),
        sup.chosen,
        fmt(sup.value)
    );
    let mut rows = Vec::new();
    for r in &bundle.table {
        let th = match &r.member {
            Predictor::Threshold(t) => *t,
            Predictor::Linear(_) => f64::NAN,
        };
        let _ = write!(csv, "{},{th:?},{:?},{:?}", r.index, r.gap, r.pooled_loss);
        for v in r.group_losses.values() {
            let _ = write!(csv, ",{v:?}");
        }
        csv.push('\n');
        let mark = match (r.index == fair.chosen, r.index == sup.chosen) {
            (true, true) => "fair, supervised",
            (true, false) => "fair",
            (false, true) => "supervised",
            _ => "",
        };
        rows.push(vec![
            r.index.to_string(),
            fmt(th),
            fmt(r.gap),
            fmt(r.pooled_loss),
            mark.into(),
        ]);
    }
    md.push_str(&table(
        &["index", "threshold", "gap", "pooled loss", "chosen"],
        &rows,
    ));
    out.text("erm_table.csv", &csv)?;
    emit(cfg, out, "erm.json", &bundle, &md)?;
    Ok(OK)
}

#[derive(Serialize)]
struct CheckSummary {
    kind: CheckKind,
    violation_rate: f64,
    violations: usize,
    trials: usize,
    /// Largest violation rate consistent with the guarantee.
    allowed_rate: f64,
    passed: bool,
    oracle: IndexMap<String, verify::McEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shifts: Option<IndexMap<String, ShiftMetrics>>,
}

fn simulate(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<Outcome> {
    let specs = cfg.group_specs();
    let e = &cfg.experiment;
    let ds = verify::generate(&specs, e.n, e.seed)?;
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf)?;
    out.text("simulated.csv", std::str::from_utf8(&buf)?)?;

    let mc = McConfig {
        trials: e.trials(),
        n_oracle: e.n_oracle(),
        seed: e.seed,
    };
    let mut checks = Vec::new();
    for kind in &e.checks {
        let summary = match kind {
            CheckKind::Hoeffding => {
                let r = verify::check_hoeffding(&specs, &e.scorer, e.loss, &cfg.params, &mc)?;
                let d = cfg.params.delta;
                let allowed = d + 3.0 * (d * (1.0 - d) / r.trials as f64).sqrt();
                CheckSummary {
                    kind: *kind,
                    violation_rate: r.violation_rate,
                    violations: r.violations,
                    trials: r.trials,
                    allowed_rate: allowed,
                    passed: r.violation_rate <= allowed,
                    oracle: r.oracle,
                    shifts: None,
                }
            }
            CheckKind::GroupLoss => {
                let r = verify::check_group_loss_bound(
                    &specs,
                    &e.scorer,
                    e.loss,
                    &cfg.params,
                    e.cov_mode,
                    &mc,
                )?;
                CheckSummary {
                    kind: *kind,
                    violation_rate: r.report.violation_rate,
                    violations: r.report.violations,
                    trials: r.report.trials,
                    allowed_rate: 0.0,
                    passed: r.report.violations == 0,
                    oracle: r.report.oracle,
                    shifts: Some(r.shifts),
                }
            }
        };
        checks.push(summary);
    }
    let violation = checks.iter().any(|c| !c.passed);
    let mut md = String::from("# Simulation\n\n");
    let _ = writeln!(md, "Generated {} records into `simulated.csv`.\n", ds.len());
    if !checks.is_empty() {
        let rows: Vec<Vec<String>> = checks
            .iter()
            .map(|c| {
                vec![
                    format!("{:?}", c.kind),
                    c.trials.to_string(),
                    fmt(c.violation_rate),
                    fmt(c.allowed_rate),
                    if c.passed { "pass" } else { "FAIL" }.into(),
                ]
            })
            .collect();
        md.push_str(&table(
            &["check", "trials", "violation rate", "allowed", "result"],
            &rows,
        ));
    }
    emit(cfg, out, "checks.json", &checks, &md)?;
    Ok(Outcome {
        violation: violation && e.assert,
    })
}

fn converge(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<Outcome> {
    let specs = cfg.group_specs();
    let e = &cfg.experiment;
    let fc = FunctionClass::thresholds(e.thresholds.lo, e.thresholds.hi, e.thresholds.count)?;
    let cc = ConvergenceConfig {
        m_values: e.m_values.clone(),
        trials: e.trials(),
        n_oracle: e.n_oracle(),
        bootstrap: e.bootstrap,
        seed: e.seed,
    };
    let report = verify::convergence_study(&specs, Some(&e.scorer), &fc, e.loss, &cc)?;
    let mut csv = String::from("m,ln_m,mean_excess,std_error,ln_excess\n");
    for p in &report.points {
        let _ = writeln!(
            csv,
            "{},{:?},{:?},{:?},{:?}",
            p.m, p.ln_m, p.mean_excess, p.std_error, p.ln_excess
        );
    }
    out.text("convergence_points.csv", &csv)?;
    let mut md = String::from("# Convergence of the fairness-risk minimizer\n\n");
    let _ = writeln!(
        md,
        "Slope of ln(excess) against ln(m): {} (95% bootstrap interval {} to {}); the rate 1/sqrt(m) has slope -0.5.\n",
        fmt(report.slope),
        fmt(report.slope_ci.0),
        fmt(report.slope_ci.1)
    );
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                p.m.to_string(),
                fmt(p.mean_excess),
                fmt(p.std_error),
                fmt(p.ln_excess),
            ]
        })
        .collect();
    md.push_str(&table(
        &["m", "mean excess", "std error", "ln excess"],
        &rows,
    ));
    emit(cfg, out, "convergence.json", &report, &md)?;
    Ok(OK)
}
