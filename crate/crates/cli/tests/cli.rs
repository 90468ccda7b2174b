use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/toy.conf")
}

fn lmmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmmix"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run_stage(out: &Path, stage: &str) -> Output {
    lmmix(&[
        "--config",
        toy_config().to_str().unwrap(),
        "--stage",
        stage,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn full_run_is_complete_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run_stage(d.path(), "all");
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "ngram.arpa",
        "neural.lmc",
        "gates/full_0.lmc",
        "gates/hidden_2.lmc",
        "report.json",
        "report.txt",
        "analysis/bins.csv",
        "analysis/capitalization.csv",
        "analysis/significance.csv",
    ] {
        assert!(a.path().join(f).is_file(), "missing {f}");
    }
    for f in [
        "report.json",
        "ngram.arpa",
        "neural.lmc",
        "analysis/bins.csv",
    ] {
        let (pa, pb) = (a.path().join(f), b.path().join(f));
        if pa.exists() {
            assert_eq!(
                std::fs::read(pa).unwrap(),
                std::fs::read(pb).unwrap(),
                "{f} differs"
            );
        }
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("report.json")).unwrap())
            .unwrap();
    let models = report["models"].as_object().unwrap();
    let names: Vec<&str> = models.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        [
            "n-gram",
            "neural",
            "static",
            "moe-full",
            "moe-simple",
            "moe-hidden"
        ]
    );
    assert_eq!(models["moe-full"]["runs"], 3);

    bins_match_recomputation(a.path());

    let arpa = a.path().join("ngram.arpa");
    let mut child = Command::new(env!("CARGO_BIN_EXE_lmmix"))
        .args(["query-ngram", "--arpa", arpa.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"I know not .\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 5);
    assert!(text.lines().last().unwrap().starts_with("0\t5\t</s>\t"));
}

/// Recomputes per-bin perplexities of the two experts straight from
/// `test_scores.tsv` and `vocab.tsv`, with bins taken from the thresholds
/// each word's preceding cumulative count reaches.
fn bins_match_recomputation(dir: &Path) {
    let vocab = std::fs::read_to_string(dir.join("vocab.tsv")).unwrap();
    let mut counts: Vec<(usize, u64)> = vocab
        .lines()
        .enumerate()
        .map(|(i, l)| (i, l.split('\t').nth(1).unwrap().parse().unwrap()))
        .collect();
    counts[0].1 = 0;
    let total: u64 = counts.iter().map(|c| c.1).sum();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let k = 5;
    let mut bin_of = HashMap::new();
    let mut before = 0u64;
    for &(id, c) in &counts {
        let b = (1..k)
            .filter(|&j| before as f64 >= j as f64 * total as f64 / k as f64)
            .count();
        bin_of.insert(id as u32, b);
        before += c;
    }
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
    for line in std::fs::read_to_string(dir.join("test_scores.tsv"))
        .unwrap()
        .lines()
        .skip(1)
    {
        let f: Vec<&str> = line.split('\t').collect();
        let b = bin_of[&f[2].parse::<u32>().unwrap()];
        sums[b].0 -= f[4].parse::<f64>().unwrap().ln();
        sums[b].1 -= f[5].parse::<f64>().unwrap().ln();
        sums[b].2 += 1;
    }
    let csv = std::fs::read_to_string(dir.join("analysis/bins.csv")).unwrap();
    let mut rows = csv.lines().skip(2);
    for (b, &(nn, ng, n)) in sums.iter().enumerate() {
        let f: Vec<&str> = rows.next().unwrap().split(',').collect();
        assert_eq!(f[3].parse::<usize>().unwrap(), n, "bin {b} target count");
        let close =
            |cell: &str, want: f64| (cell.parse::<f64>().unwrap() / want - 1.0).abs() < 1e-9;
        assert!(close(f[4], (nn / n as f64).exp()), "bin {b} neural");
        assert!(close(f[5], (ng / n as f64).exp()), "bin {b} n-gram");
    }
}

#[test]
fn stages_check_their_inputs() {
    let d = tempfile::tempdir().unwrap();
    let o = run_stage(d.path(), "evaluate");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`vocab`"));
    for stage in [
        "vocab",
        "train-ngram",
        "train-nn",
        "dump-features",
        "tune-static",
    ] {
        assert!(run_stage(d.path(), stage).status.success(), "{stage}");
    }
    let o = run_stage(d.path(), "evaluate");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`train-gate`"));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let conf = d.path().join("bad.conf");
    std::fs::write(
        &conf,
        format!(
            "corpus = {}\nlearnig_rate = 0.1\n",
            toy_config().with_file_name("corpus.txt").display()
        ),
    )
    .unwrap();
    let out = d.path().join("out");
    let o = lmmix(&[
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learnig_rate"));
    let o = lmmix(&[
        "--config",
        toy_config().to_str().unwrap(),
        "--stage",
        "fit",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(
        lmmix(&["--out", out.to_str().unwrap()]).status.code(),
        Some(1)
    );
    assert_eq!(lmmix(&["--bogus"]).status.code(), Some(1));
    assert_eq!(lmmix(&["--help"]).status.code(), Some(0));
}
