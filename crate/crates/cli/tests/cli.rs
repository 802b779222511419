use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fairbound(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairbound"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FAIRBOUND_THREADS")
        .output()
        .unwrap()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const FIXTURE: &str = "group,label,score,f0,f1
a,1,0.9,1.0,2.0
a,0,0.2,3.0,2.0
a,1,0.6,2.0,5.0
b,0,0.4,0.0,0.0
b,1,0.7,1.0,1.0
b,0,0.1,2.0,0.0
b,1,0.8,1.0,3.0
";

#[test]
fn stats_summary_agrees_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "d.csv", FIXTURE);
    let out = dir.path().join("o");
    let o = fairbound(&["stats", "--input", &input], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let j = read_json(out.join("groupstats.json"));
    assert_eq!(j["n"], 7);
    assert_eq!(j["dim"], 2);
    let a = &j["group_stats"]["a"];
    assert_eq!(a["n"], 3);
    assert_eq!(a["mu"][0].as_f64().unwrap(), 2.0);
    assert_eq!(a["mu"][1].as_f64().unwrap(), 3.0);

    let md = std::fs::read_to_string(out.join("summary.md")).unwrap();
    for g in ["a", "b"] {
        let s = &j["group_stats"][g];
        let sh = &j["shifts"][g];
        let row = format!(
            "| {g} | {} | {:.6} | {:.6} | {:.6} | {:.6} | {:.6} | {:.6} |",
            s["n"],
            s["r"].as_f64().unwrap(),
            s["dist_mean"].as_f64().unwrap(),
            s["dist_std"].as_f64().unwrap(),
            sh["mean_shift"].as_f64().unwrap(),
            sh["sigma_diff"].as_f64().unwrap(),
            sh["cov_shift_frob"].as_f64().unwrap(),
        );
        assert!(md.contains(&row), "missing row {row}\n{md}");
    }
    // raw distances and binned counts, every record present in both
    for g in ["a", "b"] {
        let n = j["group_stats"][g]["n"].as_u64().unwrap() as usize;
        let raw = std::fs::read_to_string(out.join(format!("dist_{g}.csv"))).unwrap();
        assert_eq!(raw.lines().next(), Some("distance"));
        let d: Vec<f64> = raw.lines().skip(1).map(|l| l.parse().unwrap()).collect();
        assert_eq!(d.len(), n);
        let mean = d.iter().sum::<f64>() / n as f64;
        assert!((mean - j["group_stats"][g]["dist_mean"].as_f64().unwrap()).abs() < 1e-12);
        let csv = std::fs::read_to_string(out.join(format!("hist_{g}.csv"))).unwrap();
        let total: usize = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, n);
    }
    assert!(j["scores"]["(all)"]["auc"].as_f64().is_some());
}

#[test]
fn empty_input_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "e.csv", "");
    let o = fairbound(&["stats", "--input", &input], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn invalid_delta_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = fairbound(&["bounds", "--delta", "1.5"], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta"));
}

#[test]
fn bounds_json_carries_the_shift_increment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = fairbound(
        &[
            "bounds",
            "--shift-stats",
            "6.26,2.53,5.92,2.46",
            "--dvc",
            "3",
            "--m",
            "10000",
            "--overall-loss",
            "0.0",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(out.join("bounds.json"));
    let reports = j["reports"].as_array().unwrap();
    let gel = reports
        .iter()
        .find(|r| r["name"] == "group_expected_loss")
        .unwrap();
    assert!((gel["value"].as_f64().unwrap() - 0.41).abs() < 1e-9);
    assert_eq!(j["sample_complexity"], 73835);
    let conv = reports.iter().find(|r| r["name"] == "convergence").unwrap();
    assert!((conv["value"].as_f64().unwrap() - 0.2071).abs() < 1e-3);
}

#[test]
fn erm_matches_exhaustive_scan() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "d.csv", FIXTURE);
    let out = dir.path().join("o");
    let o = fairbound(
        &["erm", "--input", &input, "--thresholds", "0.25,0.75,3"],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(out.join("erm.json"));

    let rows: Vec<(&str, u8, f64)> = FIXTURE
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0], f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    let mut gaps = Vec::new();
    let mut pooled = Vec::new();
    for t in [0.25, 0.5, 0.75] {
        let err = |g: Option<&str>| {
            let sel: Vec<_> = rows.iter().filter(|r| g.is_none_or(|g| r.0 == g)).collect();
            let wrong = sel.iter().filter(|r| u8::from(r.2 >= t) != r.1).count();
            wrong as f64 / sel.len() as f64
        };
        gaps.push((err(Some("a")) - err(Some("b"))).abs());
        pooled.push(err(None));
    }
    let table = j["table"].as_array().unwrap();
    assert_eq!(table.len(), 3);
    for (i, row) in table.iter().enumerate() {
        assert!((row["gap"].as_f64().unwrap() - gaps[i]).abs() < 1e-12);
        assert!((row["pooled_loss"].as_f64().unwrap() - pooled[i]).abs() < 1e-12);
    }
    let argmin = |v: &[f64]| {
        let best = v.iter().copied().fold(f64::INFINITY, f64::min);
        v.iter().position(|&x| x == best).unwrap()
    };
    assert_eq!(j["fairness"]["index"], argmin(&gaps));
    assert_eq!(j["supervised"]["index"], argmin(&pooled));
}

#[test]
fn identical_seeds_give_identical_bytes_and_replay_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = fairbound(
            &[
                "simulate",
                "--n",
                "500",
                "--check",
                "hoeffding",
                "--trials",
                "100",
                "--n-oracle",
                "20000",
                "--seed",
                "9",
            ],
            &out,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["checks.json", "simulated.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = dir.path().join("c");
    let manifest = a.join("manifest.json");
    let o = fairbound(&["replay", manifest.to_str().unwrap()], &c);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(a.join("checks.json")).unwrap(),
        std::fs::read(c.join("checks.json")).unwrap()
    );
}

#[test]
fn assert_flag_sets_exit_code_on_violation() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "c.toml",
        r#"
[params]
B = 0.001

[specs.a]
mu = [0.0]
sigma = [[1.0]]
weight = 0.5
label = { kind = "fixed_rate", r = 0.1 }

[specs.b]
mu = [0.5]
sigma = [[1.0]]
weight = 0.5
label = { kind = "fixed_rate", r = 0.9 }
"#,
    );
    let args = |assert: bool| {
        let mut v = vec![
            "simulate",
            "--config",
            config.as_str(),
            "--n",
            "200",
            "--check",
            "group_loss",
            "--trials",
            "20",
            "--n-oracle",
            "2000",
        ];
        if assert {
            v.push("--assert");
        }
        v
    };
    let o = fairbound(&args(true), &dir.path().join("x"));
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let o = fairbound(&args(false), &dir.path().join("y"));
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let j = read_json(dir.path().join("y/checks.json"));
    assert_eq!(j[0]["passed"], false);
}

#[test]
fn usage_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = fairbound(&["bounds", "--no-such-flag"], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
}
