use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bge_cli::RunReport;
use bge_core::score::ScoreCache;
use bge_core::{
    dag_log_score, default_prior, markov_equivalent, sample_gaussian_data, Dag, EdgeWeights,
    ScoreContext, ScoreMode,
};
use tempfile::TempDir;

fn bge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_report(args: &[&str]) -> (String, RunReport) {
    let out = bge(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "status {:?}: {stderr}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    let report = RunReport::parse(&text).unwrap();
    (text, report)
}

fn names(k: usize) -> Vec<String> {
    ["a", "b", "c", "d", "e", "f"][..k]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self, name: &str, truth: &Dag, w: f64, sd: f64, n_obs: usize, seed: u64) -> PathBuf {
        let d =
            sample_gaussian_data(truth, &EdgeWeights::constant(truth, w), sd, n_obs, seed).unwrap();
        let p = self.path(name);
        std::fs::write(&p, d.to_csv()).unwrap();
        p
    }

    fn text(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, body).unwrap();
        p
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn chain4() -> Dag {
    Dag::from_edges(4, &[(0, 1), (1, 2), (2, 3)])
        .unwrap()
        .with_names(names(4))
        .unwrap()
}

#[test]
fn score_matches_library() {
    let fx = Fixture::new();
    let truth = chain4();
    let data = fx.data("d.csv", &truth, 0.8, 1.0, 100, 1);
    let dag = fx.text("g.txt", &truth.to_text());
    let (_, r) = ok_report(&["score", "--data", s(&data), "--dag", s(&dag)]);
    let ds = bge_core::load_dataset(&data).unwrap();
    let ctx = ScoreContext::from_dataset(&ds, default_prior(4)).unwrap();
    let want = dag_log_score(&truth, &ctx, &ScoreCache::new(), ScoreMode::Bge).unwrap();
    let got = r.get_num("total_log_score").unwrap();
    assert!((got - want).abs() <= 1e-11 * want.abs(), "{got} vs {want}");
    assert_eq!(r.table("local").unwrap().rows.len(), 4);
    assert_eq!(r.get("mode"), Some("bge"));
    assert_eq!(r.get("alpha_w"), Some("6.00000000000"));
}

#[test]
fn hg95_total_smaller_on_chain() {
    let fx = Fixture::new();
    let truth = chain4();
    let data = fx.data("d.csv", &truth, 0.8, 1.0, 100, 1);
    let dag = fx.text("g.txt", &truth.to_text());
    let (_, b) = ok_report(&[
        "score",
        "--data",
        s(&data),
        "--dag",
        s(&dag),
        "--mode",
        "bge",
    ]);
    let (_, h) = ok_report(&[
        "score",
        "--data",
        s(&data),
        "--dag",
        s(&dag),
        "--mode",
        "hg95",
    ]);
    assert!(h.get_num("total_log_score").unwrap() < b.get_num("total_log_score").unwrap());
}

#[test]
fn prior_flags_are_echoed() {
    let fx = Fixture::new();
    let truth = chain4();
    let data = fx.data("d.csv", &truth, 0.8, 1.0, 50, 2);
    let dag = fx.text("g.txt", &truth.to_text());
    let (_, r) = ok_report(&[
        "score",
        "--data",
        s(&data),
        "--dag",
        s(&dag),
        "--alpha-mu",
        "2",
        "--alpha-w",
        "9",
        "--t-scale",
        "1.5",
        "--nu",
        "0.5,-1,0,2",
        "--rank-one",
        "alpha_w",
    ]);
    assert_eq!(r.get("alpha_mu"), Some("2.00000000000"));
    assert_eq!(r.get("alpha_w"), Some("9.00000000000"));
    assert_eq!(r.get("t_scale"), Some("1.50000000000"));
    assert_eq!(
        r.get("nu"),
        Some("0.500000000000,-1.00000000000,0,2.00000000000")
    );
    assert_eq!(r.get("rank_one"), Some("alpha_w"));
}

#[test]
fn unmentioned_columns_become_isolated() {
    let fx = Fixture::new();
    let truth = chain4();
    let data = fx.data("d.csv", &truth, 0.8, 1.0, 60, 3);
    let dag = fx.text("g.txt", "c d\n");
    let (_, r) = ok_report(&["score", "--data", s(&data), "--dag", s(&dag)]);
    let t = r.table("local").unwrap();
    let parents: Vec<&str> = t.rows.iter().map(|row| row[1].as_str()).collect();
    assert_eq!(parents, ["-", "-", "-", "c"]);
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    let truth = chain4();
    let data = fx.data("d.csv", &truth, 0.8, 1.0, 30, 4);
    let good = fx.text("g.txt", &truth.to_text());
    let unknown = fx.text("u.txt", "a zeta\n");
    let out = bge(&["score", "--data", s(&data), "--dag", s(&unknown)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zeta"));

    let bad_csv = fx.text("bad.csv", "a,b\n1,2\n3,oops\n");
    let two = fx.text("two.txt", "a b\n");
    assert_eq!(
        bge(&["score", "--data", s(&bad_csv), "--dag", s(&two)])
            .status
            .code(),
        Some(2)
    );
    let bad_dag = fx.text("bad.txt", "a b c\n");
    assert_eq!(
        bge(&["score", "--data", s(&data), "--dag", s(&bad_dag)])
            .status
            .code(),
        Some(2)
    );
    let cyclic = fx.text("cyc.txt", "a b\nb a\n");
    assert_eq!(
        bge(&["score", "--data", s(&data), "--dag", s(&cyclic)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(bge(&["score", "--data", s(&data)]).status.code(), Some(2));
    assert_eq!(
        bge(&[
            "score",
            "--data",
            s(&data),
            "--dag",
            s(&good),
            "--mode",
            "nope"
        ])
        .status
        .code(),
        Some(2)
    );

    for flags in [
        ["--alpha-w", "2.5"],
        ["--alpha-mu", "-1"],
        ["--t-scale", "0"],
        ["--nu", "1,2"],
    ] {
        let mut args = vec!["score", "--data", s(&data), "--dag", s(&good)];
        args.extend(flags);
        assert_eq!(bge(&args).status.code(), Some(4), "{flags:?}");
    }
    let out = bge(&[
        "mcmc",
        "--data",
        s(&data),
        "--iterations",
        "10",
        "--burn-in",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = bge(&[
        "mcmc",
        "--data",
        s(&data),
        "--iterations",
        "10",
        "--burn-in",
        "0",
        "--thinning",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        bge(&["bias-study", "--n", "3", "--parents-max", "4"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        bge(&["bias-study", "--sample-sizes", "100"]).status.code(),
        Some(2)
    );
    assert_eq!(bge(&["bogus"]).status.code(), Some(2));
    assert_eq!(bge(&["--help"]).status.code(), Some(0));
}

#[test]
fn compare_gap_grows_with_nested_parents() {
    // low-noise data: the gap rises with l here, falls on unit-variance data
    let fx = Fixture::new();
    let complete = Dag::from_edges(4, &[(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)])
        .unwrap()
        .with_names(names(4))
        .unwrap();
    let data = fx.data("d.csv", &complete, 0.7, 0.1, 100, 5);
    let dag = fx.text("g.txt", &complete.to_text());
    let (_, r) = ok_report(&["compare", "--data", s(&data), "--dag", s(&dag)]);
    let t = r.table("by_l").unwrap();
    let gaps: Vec<f64> = (0..4)
        .map(|i| t.num(i, "mean_bge_minus_hg95").unwrap())
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] > w[0]), "{gaps:?}");
    let local = r.table("local").unwrap();
    for i in 0..4 {
        let d = local.num(i, "bge").unwrap() - local.num(i, "hg95").unwrap();
        assert!((d - local.num(i, "bge_minus_hg95").unwrap()).abs() < 1e-8);
    }
}

#[test]
fn compare_equivalence_pair() {
    let fx = Fixture::new();
    let truth = chain4();
    let data = fx.data("d.csv", &truth, 0.8, 1.0, 50, 6);
    // same class, different family sets
    let fwd = fx.text("fwd.txt", "a b\na c\nb c\nc d\n");
    let rev = fx.text("rev.txt", "c b\nc a\nb a\nc d\n");
    let (_, r1) = ok_report(&["compare", "--data", s(&data), "--dag", s(&fwd)]);
    let (_, r2) = ok_report(&["compare", "--data", s(&data), "--dag", s(&rev)]);
    let (b1, b2) = (
        r1.get_num("total_bge").unwrap(),
        r2.get_num("total_bge").unwrap(),
    );
    assert!((b1 - b2).abs() <= 1e-9 * b1.abs());
    let (g1, g2) = (
        r1.get_num("total_gh02").unwrap(),
        r2.get_num("total_gh02").unwrap(),
    );
    assert!((g1 - g2).abs() > 1e-6, "{g1} {g2}");
}

#[test]
fn search_deterministic_and_recovers_chain() {
    let fx = Fixture::new();
    let truth = Dag::from_edges(3, &[(0, 1), (1, 2)])
        .unwrap()
        .with_names(names(3))
        .unwrap();
    let data = fx.data("d.csv", &truth, 0.8, 1.0, 10_000, 7);
    let run = |tag: &str| {
        let out_dag = fx.path(&format!("best_{tag}.txt"));
        let trace = fx.path(&format!("trace_{tag}.jsonl"));
        let (text, r) = ok_report(&[
            "search",
            "--data",
            s(&data),
            "--restarts",
            "3",
            "--seed",
            "9",
            "--out-dag",
            s(&out_dag),
            "--trace",
            s(&trace),
        ]);
        (
            text,
            r,
            std::fs::read_to_string(out_dag).unwrap(),
            std::fs::read_to_string(trace).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a.0.replace("_a.", "_b."), b.0);
    assert_eq!(a.2, b.2);
    assert_eq!(a.3, b.3);
    let best = Dag::parse_text(&a.2).unwrap();
    assert!(markov_equivalent(&best, &truth), "{}", a.2);
    assert_eq!(a.1.get_num("evaluations"), a.1.get_num("distinct_families"));
    for line in a.3.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["iteration"].is_u64() && v["log_score"].is_f64());
    }
}

#[test]
fn mcmc_deterministic() {
    let fx = Fixture::new();
    let truth = Dag::from_edges(3, &[(0, 1), (1, 2)])
        .unwrap()
        .with_names(names(3))
        .unwrap();
    let data = fx.data("d.csv", &truth, 0.5, 1.0, 30, 8);
    let init = fx.text("init.txt", "a b\nb c\n");
    let run = |tag: &str| {
        let trace = fx.path(&format!("t_{tag}.jsonl"));
        let (text, r) = ok_report(&[
            "mcmc",
            "--data",
            s(&data),
            "--iterations",
            "3000",
            "--burn-in",
            "500",
            "--thinning",
            "5",
            "--seed",
            "4",
            "--edge-penalty",
            "0.5",
            "--init-dag",
            s(&init),
            "--trace",
            s(&trace),
        ]);
        (text, r, std::fs::read_to_string(trace).unwrap())
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a.0.replace("t_a.", "t_b."), b.0);
    assert_eq!(a.2, b.2);
    assert_eq!(a.1.get("n_samples"), Some("500"));
    assert_eq!(a.2.lines().count(), 500);
    let first: serde_json::Value = serde_json::from_str(a.2.lines().next().unwrap()).unwrap();
    assert_eq!(first["iteration"], 500);
    let c = ok_report(&[
        "mcmc",
        "--data",
        s(&data),
        "--iterations",
        "3000",
        "--burn-in",
        "500",
        "--seed",
        "5",
    ]);
    assert_ne!(c.1.get("mean_log_score"), a.1.get("mean_log_score"));
}

#[test]
fn bias_study_table() {
    let (text, r) = ok_report(&["bias-study", "--seed", "3"]);
    assert_eq!(ok_report(&["bias-study", "--seed", "3"]).0, text);
    let t = r.table("slope_vs_l").unwrap();
    assert_eq!(t.rows.len(), 5);
    assert!(t.num(0, "slope").unwrap().abs() <= 0.5);
    assert_eq!(t.header.len(), 1 + 3 + 2);
}

#[test]
fn timing_only_on_request() {
    let fx = Fixture::new();
    let truth = chain4();
    let data = fx.data("d.csv", &truth, 0.8, 1.0, 20, 9);
    let dag = fx.text("g.txt", &truth.to_text());
    let (_, plain) = ok_report(&["score", "--data", s(&data), "--dag", s(&dag)]);
    assert!(plain.get("elapsed_ms").is_none());
    let (_, timed) = ok_report(&["score", "--data", s(&data), "--dag", s(&dag), "--timing"]);
    assert!(timed.get_num("elapsed_ms").unwrap() >= 0.0);
}

#[test]
fn reports_round_trip() {
    let fx = Fixture::new();
    let truth = chain4();
    let data = fx.data("d.csv", &truth, 0.8, 1.0, 40, 10);
    let dag = fx.text("g.txt", &truth.to_text());
    for cmd in ["score", "compare"] {
        let (text, r) = ok_report(&[cmd, "--data", s(&data), "--dag", s(&dag)]);
        assert_eq!(r.to_string(), text);
        assert_eq!(RunReport::parse(&r.to_string()).unwrap(), r);
    }
}
