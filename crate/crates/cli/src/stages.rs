//! Pipeline stages. Each stage reads the artifacts of the stages it depends
//! on from the run directory, writes its own, and records them in the
//! manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gnndm::classify::{evaluate, train_classifier, ClassifierModel, EvalMode, Evaluation, GnndmPipeline};
use gnndm::ddmn::{class_similarity_stats, train_ddmn, DdmnModel};
use gnndm::genlatent::{reconstruction_cosine, train_vae, VaeModel};
use gnndm::nns::{batch_nns, brute_force_nn};
use gnndm::numcore::{Checkpoint, Tensor, CODE_VERSION};
use gnndm::synthgen::{make_domains, MultiDomainDataset, SourceView, TargetView};
use gnndm::theorylab::{binomial_stderr, verify_prop3, BoundsReport, Prop3Inputs};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{RunManifest, StageRecord};

pub const DATASET_STEM: &str = "dataset";
pub const DDMN_CKPT: &str = "ddmn.ckpt";
pub const VAE_CKPT: &str = "vae.ckpt";
pub const CLF_CKPT: &str = "clf.ckpt";
pub const DIRECT_CKPT: &str = "direct.ckpt";
pub const EMBEDDINGS_CKPT: &str = "embeddings.ckpt";
pub const NNS_CKPT: &str = "nns.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Gen,
    TrainDdmn,
    TrainVae,
    TrainClf,
    Nns,
    Eval,
    VerifyBounds,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Gen,
        Stage::TrainDdmn,
        Stage::TrainVae,
        Stage::TrainClf,
        Stage::Nns,
        Stage::Eval,
        Stage::VerifyBounds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::TrainDdmn => "train-ddmn",
            Stage::TrainVae => "train-vae",
            Stage::TrainClf => "train-clf",
            Stage::Nns => "nns",
            Stage::Eval => "eval",
            Stage::VerifyBounds => "verify-bounds",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Gen => &[],
            Stage::TrainDdmn => &[Stage::Gen],
            Stage::TrainVae => &[Stage::TrainDdmn],
            Stage::TrainClf => &[Stage::TrainDdmn],
            Stage::Nns => &[Stage::TrainVae],
            Stage::Eval => &[Stage::TrainClf, Stage::Nns],
            Stage::VerifyBounds => &[Stage::Eval],
        }
    }

    /// Whether `self` consumes, directly or not, the outputs of `other`.
    pub fn depends_on(self, other: Stage) -> bool {
        self.deps().iter().any(|&d| d == other || d.depends_on(other))
    }
}

#[derive(Clone, Debug)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl RunContext {
    /// Output directory taken from the config.
    pub fn new(config: ExperimentConfig, force: bool) -> Self {
        let out = config.out_dir.clone();
        Self { config, out, force }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Already complete under the same config; nothing was touched.
    Skipped,
}

struct Produced {
    outputs: Vec<String>,
    metrics: Vec<String>,
}

/// Runs one stage against `manifest` and returns the updated manifest.
pub fn run_stage(stage: Stage, ctx: &RunContext, manifest: RunManifest) -> CliResult<(RunManifest, StageOutcome)> {
    ctx.config.validate()?;
    let hash = ctx.config.hash();
    let dir = &ctx.out;
    if !ctx.force && manifest.is_complete(stage.name(), &hash, dir) {
        log::info!("{}: up to date", stage.name());
        return Ok((manifest, StageOutcome::Skipped));
    }
    for &dep in stage.deps() {
        if !manifest.is_complete(dep.name(), &hash, dir) {
            return Err(CliError::MissingDependency {
                stage: stage.name(),
                needs: dep.name(),
            });
        }
    }
    std::fs::create_dir_all(dir)?;
    let cfg = ctx.config.resolved();
    let start = Instant::now();
    log::info!("{}: running", stage.name());
    let produced = match stage {
        Stage::Gen => gen(&cfg, dir)?,
        Stage::TrainDdmn => stage_train_ddmn(&cfg, dir)?,
        Stage::TrainVae => stage_train_vae(&cfg, dir)?,
        Stage::TrainClf => stage_train_clf(&cfg, dir)?,
        Stage::Nns => stage_nns(&cfg, dir)?,
        Stage::Eval => stage_eval(&cfg, dir)?,
        Stage::VerifyBounds => stage_verify_bounds(&cfg, dir)?,
    };
    let mut manifest = manifest;
    if manifest.config_hash != hash {
        manifest.stages.clear();
    }
    manifest.stages.retain(|name, _| {
        Stage::ALL
            .iter()
            .find(|s| s.name() == name)
            .is_none_or(|s| !s.depends_on(stage))
    });
    manifest.config_hash = hash.clone();
    manifest.code_version = CODE_VERSION.to_string();
    manifest.stages.insert(
        stage.name().to_string(),
        StageRecord {
            config_hash: hash,
            outputs: produced.outputs,
            metrics: produced.metrics,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    );
    std::fs::write(dir.join(CONFIG_FILE), ctx.config.to_toml())?;
    manifest.save(dir)?;
    Ok((manifest, StageOutcome::Ran))
}

fn dataset(dir: &Path) -> CliResult<MultiDomainDataset> {
    Ok(MultiDomainDataset::load(&dir.join(DATASET_STEM))?)
}

struct Splits {
    train: SourceView,
    holdout: SourceView,
    target: TargetView,
}

fn splits(cfg: &ExperimentConfig, ds: &MultiDomainDataset) -> CliResult<Splits> {
    let (source, target) = ds.split_sources_target(cfg.target_domain)?;
    let (train, holdout) = source.holdout_split(cfg.holdout_frac, cfg.holdout_seed())?;
    Ok(Splits { train, holdout, target })
}

fn load_ddmn(dir: &Path) -> CliResult<DdmnModel> {
    Ok(DdmnModel::from_checkpoint(&Checkpoint::load(dir.join(DDMN_CKPT))?)?)
}

fn load_vae(dir: &Path) -> CliResult<VaeModel> {
    Ok(VaeModel::from_checkpoint(&Checkpoint::load(dir.join(VAE_CKPT))?)?)
}

fn load_clf(dir: &Path, name: &str) -> CliResult<ClassifierModel> {
    Ok(ClassifierModel::from_checkpoint(&Checkpoint::load(dir.join(name))?)?)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn curve_rows(curves: &[&[f64]]) -> Vec<Vec<String>> {
    let n = curves.iter().map(|c| c.len()).max().unwrap_or(0);
    (0..n)
        .map(|e| {
            let mut row = vec![e.to_string()];
            row.extend(curves.iter().map(|c| c.get(e).map(f64::to_string).unwrap_or_default()));
            row
        })
        .collect()
}

fn gen(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Produced> {
    let ds = make_domains(&cfg.data)?;
    ds.save(&dir.join(DATASET_STEM))?;
    let classes = ds.classes();
    let mut header = vec!["domain".to_string(), "n".to_string(), "determinant".to_string()];
    header.extend((0..classes).map(|c| format!("class_{c}")));
    let rows = ds.meta.domains.iter().map(|spec| {
        let labels = ds.domain_labels(spec.id).unwrap_or_default();
        let mut row = vec![
            spec.id.to_string(),
            labels.len().to_string(),
            spec.determinant().to_string(),
        ];
        row.extend((0..classes).map(|c| labels.iter().filter(|&&y| y == c).count().to_string()));
        row
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&dir.join("domains.csv"), &header, rows)?;
    Ok(Produced {
        outputs: vec![format!("{DATASET_STEM}.json"), format!("{DATASET_STEM}.bin")],
        metrics: vec!["domains.csv".into()],
    })
}

fn stage_train_ddmn(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Produced> {
    let ds = dataset(dir)?;
    let s = splits(cfg, &ds)?;
    let (model, curve) = train_ddmn(&s.train, &cfg.ddmn)?;
    model.to_checkpoint(cfg.ddmn.seed).save(dir.join(DDMN_CKPT))?;
    write_csv(&dir.join("ddmn_curve.csv"), &["epoch", "loss"], curve_rows(&[&curve]))?;
    let (intra, inter) = class_similarity_stats(&model.embed(s.holdout.features())?, s.holdout.labels());
    write_csv(
        &dir.join("ddmn_stats.csv"),
        &["quantity", "value"],
        [
            vec!["holdout_intra_similarity".into(), intra.to_string()],
            vec!["holdout_inter_similarity".into(), inter.to_string()],
        ],
    )?;
    Ok(Produced {
        outputs: vec![DDMN_CKPT.into()],
        metrics: vec!["ddmn_curve.csv".into(), "ddmn_stats.csv".into()],
    })
}

fn stage_train_vae(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Produced> {
    let ds = dataset(dir)?;
    let s = splits(cfg, &ds)?;
    let ddmn = load_ddmn(dir)?;
    let emb = ddmn.embed(s.train.features())?;
    let (vae, curve) = train_vae(&emb, &cfg.vae)?;
    vae.to_checkpoint(cfg.vae.seed).save(dir.join(VAE_CKPT))?;
    write_csv(&dir.join("vae_curve.csv"), &["epoch", "loss"], curve_rows(&[&curve]))?;
    let rc = reconstruction_cosine(&vae, &ddmn.embed(s.holdout.features())?)?;
    write_csv(
        &dir.join("vae_stats.csv"),
        &["quantity", "value"],
        [vec!["holdout_reconstruction_cosine".into(), rc.to_string()]],
    )?;
    Ok(Produced {
        outputs: vec![VAE_CKPT.into()],
        metrics: vec!["vae_curve.csv".into(), "vae_stats.csv".into()],
    })
}

fn stage_train_clf(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Produced> {
    let ds = dataset(dir)?;
    let s = splits(cfg, &ds)?;
    let ddmn = load_ddmn(dir)?;
    let emb = ddmn.embed(s.train.features())?;
    let (clf, curve) = train_classifier(&emb, s.train.labels(), ds.classes(), &cfg.classifier)?;
    clf.to_checkpoint(cfg.classifier.seed).save(dir.join(CLF_CKPT))?;
    let (direct, direct_curve) = train_classifier(s.train.features(), s.train.labels(), ds.classes(), &cfg.classifier)?;
    direct.to_checkpoint(cfg.classifier.seed).save(dir.join(DIRECT_CKPT))?;
    write_csv(
        &dir.join("clf_curve.csv"),
        &["epoch", "embedding_loss", "direct_loss"],
        curve_rows(&[&curve, &direct_curve]),
    )?;
    Ok(Produced {
        outputs: vec![CLF_CKPT.into(), DIRECT_CKPT.into()],
        metrics: vec!["clf_curve.csv".into()],
    })
}

fn stage_nns(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Produced> {
    let ds = dataset(dir)?;
    let s = splits(cfg, &ds)?;
    let ddmn = load_ddmn(dir)?;
    let vae = load_vae(dir)?;
    let targets = ddmn.embed(s.target.inputs())?;
    let bank = ddmn.embed(s.train.features())?;
    let mut emb_ck = Checkpoint::new(
        "embeddings",
        cfg.nns.seed,
        serde_json::json!({ "domain": s.target.domain() }),
    );
    emb_ck.push("targets", targets.clone());
    emb_ck.push("bank", bank.clone());
    emb_ck.save(dir.join(EMBEDDINGS_CKPT))?;

    let rows: Vec<Vec<f64>> = targets.iter_rows().map(<[f64]>::to_vec).collect();
    let results = batch_nns(&vae, &rows, &cfg.nns)?;
    let n = results.len();
    let recon: Vec<&[f64]> = results.iter().map(|r| r.best_reconstruction.as_slice()).collect();
    let latents: Vec<&[f64]> = results.iter().map(|r| r.best_latent.as_slice()).collect();
    let mut ck = Checkpoint::new("nns", cfg.nns.seed, serde_json::to_value(&cfg.nns)?);
    ck.push("reconstructions", Tensor::from_rows(&recon)?);
    ck.push("latents", Tensor::from_rows(&latents)?);
    ck.push(
        "similarity",
        Tensor::vector(results.iter().map(|r| r.best_similarity).collect()),
    );
    ck.save(dir.join(NNS_CKPT))?;

    let mut out = Vec::with_capacity(n);
    for (i, r) in results.iter().enumerate() {
        let (_, oracle) = brute_force_nn(targets.row(i), &bank)?;
        out.push(vec![
            i.to_string(),
            r.best_similarity.to_string(),
            oracle.to_string(),
            r.total_iterations().to_string(),
            r.converged().to_string(),
        ]);
    }
    write_csv(
        &dir.join("nns.csv"),
        &[
            "target",
            "best_similarity",
            "oracle_similarity",
            "iterations",
            "converged",
        ],
        out,
    )?;
    Ok(Produced {
        outputs: vec![EMBEDDINGS_CKPT.into(), NNS_CKPT.into()],
        metrics: vec!["nns.csv".into()],
    })
}

/// Gnndm predictions from the stored search results.
fn gnndm_predictions(dir: &Path, clf: &ClassifierModel) -> CliResult<Vec<usize>> {
    let ck = Checkpoint::load(dir.join(NNS_CKPT))?;
    ck.expect_kind("nns")?;
    Ok(clf.predict_batch(ck.array("reconstructions")?)?)
}

fn stage_eval(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Produced> {
    let ds = dataset(dir)?;
    let s = splits(cfg, &ds)?;
    let ddmn = load_ddmn(dir)?;
    let clf = load_clf(dir, CLF_CKPT)?;
    let direct = load_clf(dir, DIRECT_CKPT)?;
    let classes = ds.classes();
    let labels = s.target.labels();
    let evals = [
        evaluate(
            EvalMode::Direct,
            &direct.predict_batch(s.target.inputs())?,
            labels,
            classes,
        )?,
        evaluate(
            EvalMode::Embedding,
            &clf.predict_batch(&ddmn.embed(s.target.inputs())?)?,
            labels,
            classes,
        )?,
        evaluate(EvalMode::Gnndm, &gnndm_predictions(dir, &clf)?, labels, classes)?,
    ];
    let domain = s.target.domain().to_string();
    write_csv(
        &dir.join("eval.csv"),
        &["mode", "domain", "accuracy", "risk", "n"],
        evals.iter().map(|e| {
            vec![
                e.mode.as_str().into(),
                domain.clone(),
                e.accuracy.to_string(),
                e.risk.to_string(),
                e.n.to_string(),
            ]
        }),
    )?;
    write_csv(
        &dir.join("eval_classes.csv"),
        &["mode", "class", "n", "correct"],
        evals.iter().flat_map(|e| {
            e.per_class.iter().map(|c| {
                vec![
                    e.mode.as_str().into(),
                    c.class.to_string(),
                    c.n.to_string(),
                    c.correct.to_string(),
                ]
            })
        }),
    )?;
    write_json(&dir.join("eval.json"), &evals)?;
    Ok(Produced {
        outputs: vec![],
        metrics: vec!["eval.csv".into(), "eval_classes.csv".into(), "eval.json".into()],
    })
}

/// Contents of `bounds.json`: the full report for binary benchmarks, risks
/// only otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsFile {
    pub report: Option<BoundsReport>,
    pub skipped: Option<String>,
    pub source_risk: f64,
    pub target_risk_gnndm: f64,
}

fn flag(ok: bool) -> String {
    if ok { "pass" } else { "fail" }.into()
}

fn row(q: &str, v: f64, se: Option<f64>, f: &str) -> Vec<String> {
    vec![
        q.into(),
        v.to_string(),
        se.map(|s| s.to_string()).unwrap_or_default(),
        f.into(),
    ]
}

fn report_rows(r: &BoundsReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for p in &r.pairs {
        rows.push(row(&format!("proxy_raw_{}_{}", p.a, p.b), p.raw, None, ""));
        rows.push(row(
            &format!("proxy_transformed_{}_{}", p.a, p.b),
            p.transformed,
            None,
            "",
        ));
    }
    rows.push(row("delta_raw", r.delta_raw, None, ""));
    rows.push(row(
        "delta_transformed",
        r.delta_transformed,
        None,
        &flag(r.delta_transformed < r.delta_raw / 5.0),
    ));
    rows.push(row("lambda_proxy", r.lambda_proxy, None, ""));
    rows.push(row(
        "source_risk",
        r.source_risk,
        Some(binomial_stderr(r.source_risk, r.source_n)),
        "",
    ));
    rows.push(row(
        "target_risk_gnndm",
        r.target_risk_gnndm,
        Some(binomial_stderr(r.target_risk_gnndm, r.target_n)),
        "",
    ));
    if let Some(d) = r.target_risk_direct {
        rows.push(row("target_risk_direct", d, Some(binomial_stderr(d, r.target_n)), ""));
    }
    rows.push(row("bayes_analytic", r.bayes_analytic, None, ""));
    rows.push(row(
        "bayes_mc",
        r.bayes_mc.value,
        Some(r.bayes_mc.stderr),
        &flag(r.bayes_agree),
    ));
    rows.push(row("cover_hart", r.cover_hart, None, ""));
    rows.push(row("sigma2", r.sigma2, None, ""));
    rows.push(row("lemma1_endpoint", r.lemma1.endpoint, None, ""));
    rows.push(row("lemma1_lhs", r.lemma1.lhs, None, ""));
    rows.push(row("lemma1_rhs", r.lemma1.rhs, None, &flag(r.lemma1.holds)));
    rows.push(row(
        "prop3_bound",
        r.bound,
        Some(r.combined_stderr),
        &flag(r.prop3_holds),
    ));
    rows.push(row("term_classifier", r.term_classifier, None, ""));
    rows.push(row("term_label", r.term_label, None, ""));
    rows.push(row("neighbor_risk", r.neighbor_risk, None, ""));
    rows
}

fn stage_verify_bounds(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Produced> {
    let ds = dataset(dir)?;
    let s = splits(cfg, &ds)?;
    let ddmn = load_ddmn(dir)?;
    let vae = load_vae(dir)?;
    let clf = load_clf(dir, CLF_CKPT)?;
    let direct = load_clf(dir, DIRECT_CKPT)?;
    let preds = gnndm_predictions(dir, &clf)?;
    let file = if ds.classes() == 2 {
        let pipeline = GnndmPipeline::new(ddmn, vae, clf)?;
        let report = verify_prop3(
            &Prop3Inputs {
                dataset: &ds,
                target: cfg.target_domain,
                pipeline: &pipeline,
                direct: Some(&direct),
                source_train: &s.train,
                source_holdout: &s.holdout,
                nns: &cfg.nns,
                gnndm_predictions: Some(&preds),
            },
            &cfg.bounds,
        )?;
        write_csv(
            &dir.join("bounds.csv"),
            &["quantity", "value", "stderr", "flag"],
            report_rows(&report),
        )?;
        BoundsFile {
            source_risk: report.source_risk,
            target_risk_gnndm: report.target_risk_gnndm,
            report: Some(report),
            skipped: None,
        }
    } else {
        let source = evaluate(
            EvalMode::Embedding,
            &clf.predict_batch(&ddmn.embed(s.holdout.features())?)?,
            s.holdout.labels(),
            ds.classes(),
        )?;
        let target = evaluate(EvalMode::Gnndm, &preds, s.target.labels(), ds.classes())?;
        let why = format!("{} classes: the bound checks are binary only", ds.classes());
        write_csv(
            &dir.join("bounds.csv"),
            &["quantity", "value", "stderr", "flag"],
            [
                row("source_risk", source.risk, Some(source.stderr()), ""),
                row("target_risk_gnndm", target.risk, Some(target.stderr()), ""),
                row("prop3_bound", f64::NAN, None, "skipped"),
            ],
        )?;
        BoundsFile {
            report: None,
            skipped: Some(why),
            source_risk: source.risk,
            target_risk_gnndm: target.risk,
        }
    };
    write_json(&dir.join("bounds.json"), &file)?;
    Ok(Produced {
        outputs: vec![],
        metrics: vec!["bounds.json".into(), "bounds.csv".into()],
    })
}

/// One line of the run summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: String,
    pub target: String,
    pub accuracy: f64,
    pub risk: f64,
    pub source_risk: f64,
    pub bound: Option<f64>,
    /// Share of targets whose risk in this mode is within the bound.
    pub within_bound: Option<f64>,
    pub delta_raw: Option<f64>,
    pub delta_transformed: Option<f64>,
    pub lambda_proxy: Option<f64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs every stage in order, for the configured target or, with
/// `leave_one_out`, once per domain in `target-<k>` subdirectories. Writes
/// `summary.csv` to the top-level output directory.
pub fn run_all(ctx: &RunContext, leave_one_out: bool) -> CliResult<Vec<SummaryRow>> {
    ctx.config.validate()?;
    let targets: Vec<usize> = if leave_one_out {
        (0..ctx.config.data.n_domains).collect()
    } else {
        vec![ctx.config.target_domain]
    };
    let mut per_mode: Vec<Vec<SummaryRow>> = vec![Vec::new(); 3];
    for &t in &targets {
        let mut sub = ctx.clone();
        sub.config.target_domain = t;
        if leave_one_out {
            sub.out = ctx.out.join(format!("target-{t}"));
        }
        let mut manifest = RunManifest::load_or_default(&sub.out)?;
        for stage in Stage::ALL {
            manifest = run_stage(stage, &sub, manifest)?.0;
        }
        let evals: Vec<Evaluation> = read_json(&sub.out.join("eval.json"))?;
        let bounds: BoundsFile = read_json(&sub.out.join("bounds.json"))?;
        for (slot, e) in evals.iter().enumerate() {
            let r = bounds.report.as_ref();
            per_mode[slot].push(SummaryRow {
                mode: e.mode.as_str().into(),
                target: t.to_string(),
                accuracy: e.accuracy,
                risk: e.risk,
                source_risk: bounds.source_risk,
                bound: r.map(|r| r.bound),
                within_bound: r.map(|r| f64::from(u8::from(e.risk <= r.bound))),
                delta_raw: r.map(|r| r.delta_raw),
                delta_transformed: r.map(|r| r.delta_transformed),
                lambda_proxy: r.map(|r| r.lambda_proxy),
            });
        }
    }
    let mut rows = Vec::new();
    for mode_rows in per_mode {
        if mode_rows.is_empty() {
            continue;
        }
        let n = mode_rows.len() as f64;
        let avg = SummaryRow {
            mode: mode_rows[0].mode.clone(),
            target: "avg".into(),
            accuracy: mode_rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
            risk: mode_rows.iter().map(|r| r.risk).sum::<f64>() / n,
            source_risk: mode_rows.iter().map(|r| r.source_risk).sum::<f64>() / n,
            bound: mean_opt(mode_rows.iter().map(|r| r.bound)),
            within_bound: mean_opt(mode_rows.iter().map(|r| r.within_bound)),
            delta_raw: mean_opt(mode_rows.iter().map(|r| r.delta_raw)),
            delta_transformed: mean_opt(mode_rows.iter().map(|r| r.delta_transformed)),
            lambda_proxy: mean_opt(mode_rows.iter().map(|r| r.lambda_proxy)),
        };
        rows.extend(mode_rows);
        if leave_one_out {
            rows.push(avg);
        }
    }
    std::fs::create_dir_all(&ctx.out)?;
    let mut w = csv::Writer::from_path(ctx.out.join("summary.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}
