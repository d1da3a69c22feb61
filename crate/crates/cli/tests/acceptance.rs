//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Runs the full pipeline through
//! `run_all`, so the numbers are the ones `gnndm run-all` produces.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gnndm::classify::{ClassifierModel, EvalMode, Evaluation};
use gnndm::ddmn::DdmnModel;
use gnndm::genlatent::VaeModel;
use gnndm::numcore::Checkpoint;
use gnndm::synthgen::GeneratorConfig;
use gnndm::theorylab::{lemma1_check, BoundsReport};
use gnndm_cli::stages::BoundsFile;
use gnndm_cli::{run_all, ExperimentConfig, RunContext};

#[path = "../../core/tests/gradients.rs"]
#[allow(dead_code)]
mod gradients;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Run {
    dir: PathBuf,
    secs: f64,
    evals: Vec<Evaluation>,
    report: BoundsReport,
}

impl Run {
    fn accuracy(&self, mode: EvalMode) -> f64 {
        self.evals
            .iter()
            .find(|e| e.mode == mode)
            .expect("mode evaluated")
            .accuracy
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn pipeline(cfg: ExperimentConfig, dir: &Path) -> Run {
    let mut cfg = cfg;
    cfg.out_dir = dir.to_path_buf();
    let start = Instant::now();
    run_all(&RunContext::new(cfg, false), false).expect("pipeline runs");
    let bounds: BoundsFile = read_json(&dir.join("bounds.json"));
    Run {
        dir: dir.to_path_buf(),
        secs: start.elapsed().as_secs_f64(),
        evals: read_json(&dir.join("eval.json")),
        report: bounds.report.expect("binary benchmark"),
    }
}

fn default_benchmark(seed: u64, noise_rate: f64) -> ExperimentConfig {
    ExperimentConfig {
        master_seed: seed,
        data: GeneratorConfig {
            noise_rate,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn shifted_benchmark(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        master_seed: seed,
        data: GeneratorConfig::shifted_benchmark(),
        ..Default::default()
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = Vec::new();
    for (name, _) in gradients::CASES {
        worst.push((name, gradients::worst(name)));
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst
        .iter()
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        max < gradients::TOL && gradients::SEEDS >= 20 && secs < 60.0,
        format!("{} instances each; {detail}; {secs:.1}s", gradients::SEEDS),
    )
}

fn delta_collapse(run: &Run) -> Outcome {
    let r = &run.report;
    let sources = r
        .pairs
        .iter()
        .flat_map(|p| [p.a, p.b])
        .collect::<std::collections::BTreeSet<_>>();
    let max_t = r.pairs.iter().map(|p| p.transformed).fold(f64::MIN, f64::max);
    let min_raw = r.pairs.iter().map(|p| p.raw).fold(f64::MAX, f64::min);
    outcome(
        sources.len() == 3 && r.pairs.len() == 3 && max_t < 0.2 && min_raw > 1.0 && run.secs < 300.0,
        format!(
            "max transformed {max_t:.3} < 0.2, min raw {min_raw:.3} > 1.0; {:.1}s",
            run.secs
        ),
    )
}

#[derive(serde::Deserialize)]
struct NnsRow {
    best_similarity: f64,
    oracle_similarity: f64,
}

fn nns_vs_oracle(run: &Run, restarts: usize) -> Outcome {
    let rows: Vec<NnsRow> = csv::Reader::from_path(run.dir.join("nns.csv"))
        .unwrap()
        .deserialize()
        .take(200)
        .map(Result::unwrap)
        .collect();
    let ok = rows
        .iter()
        .filter(|r| r.best_similarity >= r.oracle_similarity - 0.02)
        .count();
    let share = ok as f64 / rows.len() as f64;
    outcome(
        rows.len() == 200 && restarts == 8 && share >= 0.9,
        format!(
            "{ok}/{} within 0.02 of brute force ({restarts} restarts); pipeline {:.1}s",
            rows.len(),
            run.secs
        ),
    )
}

fn prop3(runs: &[(f64, &Run)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (rho, run) in runs {
        let r = &run.report;
        pass &= r.prop3_holds && r.bayes_agree && run.secs < 300.0;
        parts.push(format!(
            "rho {rho}: R_T {:.4} <= {:.4} (R_S {:.4}, B* {:.4}, MC {:.4}±{:.4}); {:.1}s",
            r.target_risk_gnndm,
            r.bound,
            r.source_risk,
            r.bayes_analytic,
            r.bayes_mc.value,
            r.bayes_mc.stderr,
            run.secs
        ));
    }
    outcome(pass, parts.join("; "))
}

fn lemma1_grid() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    for p in [0.01, 0.05, 0.1, 0.2, 0.3] {
        let rec = lemma1_check(p * (1.0 - p) + 0.01, p);
        pass &= rec.is_ok_and(|r| r.holds && r.lhs < r.rhs);
    }
    pass &= lemma1_check(0.26, 0.1).is_err();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pass && secs < 1.0,
        format!("5 grid points, sigma2 0.26 rejected; {:.0}us", secs * 1e6),
    )
}

fn end_to_end(runs: &[Run]) -> Outcome {
    let gaps: Vec<f64> = runs
        .iter()
        .map(|r| r.accuracy(EvalMode::Gnndm) - r.accuracy(EvalMode::Direct))
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let slowest = runs.iter().map(|r| r.secs).fold(0.0, f64::max);
    let per = runs
        .iter()
        .zip(&gaps)
        .map(|(r, g)| {
            format!(
                "{:.3}/{:.3} ({g:+.3})",
                r.accuracy(EvalMode::Gnndm),
                r.accuracy(EvalMode::Direct)
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        runs.len() == 3 && mean >= 0.05 && slowest < 600.0,
        format!("mean gap {mean:+.4} over 3 seeds, gnndm/direct {per}; slowest {slowest:.1}s"),
    )
}

const METRIC_FILES: [&str; 12] = [
    "domains.csv",
    "ddmn_curve.csv",
    "ddmn_stats.csv",
    "vae_curve.csv",
    "vae_stats.csv",
    "clf_curve.csv",
    "nns.csv",
    "eval.csv",
    "eval_classes.csv",
    "eval.json",
    "bounds.json",
    "bounds.csv",
];

fn checkpoint_round_trips(dir: &Path) -> Result<(), String> {
    for name in [
        "ddmn.ckpt",
        "vae.ckpt",
        "clf.ckpt",
        "direct.ckpt",
        "embeddings.ckpt",
        "nns.ckpt",
    ] {
        let bytes = std::fs::read(dir.join(name)).unwrap();
        let ck = Checkpoint::load(dir.join(name)).map_err(|e| e.to_string())?;
        if ck.to_bytes() != bytes {
            return Err(format!("{name}: reserialized bytes differ"));
        }
        let seed = ck.header.seed;
        let again = match name {
            "ddmn.ckpt" => DdmnModel::from_checkpoint(&ck).map(|m| m.to_checkpoint(seed)),
            "vae.ckpt" => VaeModel::from_checkpoint(&ck).map(|m| m.to_checkpoint(seed)),
            "clf.ckpt" | "direct.ckpt" => ClassifierModel::from_checkpoint(&ck).map(|m| m.to_checkpoint(seed)),
            _ => continue,
        }
        .map_err(|e| e.to_string())?;
        if again.to_bytes() != bytes {
            return Err(format!("{name}: model round trip differs"));
        }
    }
    Ok(())
}

fn determinism(first: &Run, second: &Run) -> Outcome {
    let differing: Vec<&str> = METRIC_FILES
        .iter()
        .copied()
        .filter(|f| std::fs::read(first.dir.join(f)).unwrap() != std::fs::read(second.dir.join(f)).unwrap())
        .collect();
    let ckpt = checkpoint_round_trips(&first.dir);
    let detail = match (&differing[..], &ckpt) {
        ([], Ok(())) => format!(
            "{} metric files identical across two runs; 6 checkpoints bit-exact",
            METRIC_FILES.len()
        ),
        _ => format!("differing metrics {differing:?}; checkpoints {ckpt:?}"),
    };
    outcome(differing.is_empty() && ckpt.is_ok(), detail)
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; a filter that does
    // not mention this suite skips it.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.is_some_and(|f| !"acceptance".contains(&f)) {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let sub = |name: &str| tmp.path().join(name);
    let mut results: Vec<(&str, Outcome)> = Vec::new();

    results.push(("gradient-correctness", gradient_correctness()));
    results.push(("lemma1-grid", lemma1_grid()));

    let base = default_benchmark(0, 0.0);
    let restarts = base.nns.restarts;
    let clean = pipeline(base, &sub("default"));
    let noisy = pipeline(default_benchmark(0, 0.1), &sub("default-rho-0.1"));
    results.push(("delta-collapse", delta_collapse(&clean)));
    results.push(("nns-vs-oracle", nns_vs_oracle(&clean, restarts)));
    results.push(("prop3-bound", prop3(&[(0.0, &clean), (0.1, &noisy)])));

    let shifted: Vec<Run> = (0..3)
        .map(|s| pipeline(shifted_benchmark(s), &sub(&format!("shifted-{s}"))))
        .collect();
    results.push(("end-to-end-benefit", end_to_end(&shifted)));

    let repeat = pipeline(shifted_benchmark(0), &sub("shifted-0-repeat"));
    results.push(("determinism-persistence", determinism(&shifted[0], &repeat)));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
