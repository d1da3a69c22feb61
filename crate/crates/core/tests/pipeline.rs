//! Trained-model checks on the default benchmark. The pipeline is trained
//! once and shared by every test in this file.

use std::sync::OnceLock;

use gnndm::classify::{train_classifier, ClassifierConfig, GnndmPipeline};
use gnndm::ddmn::{class_similarity_stats, objective_loss, similarity_matrix, train_ddmn, DdmnConfig, Objective};
use gnndm::genlatent::{reconstruction_cosine, train_vae, VaeConfig};
use gnndm::nns::{brute_force_nn, NnsParams};
use gnndm::numcore::{Graph, Tensor};
use gnndm::seed::rng_from_seed;
use gnndm::synthgen::{make_domains, GeneratorConfig, MultiDomainDataset, SourceView};
use gnndm::theorylab::{bayes_risk, proxy_h_divergence, BayesMode, ProxyConfig};
use gnndm::Execution;
use rand::seq::SliceRandom;

struct Trained {
    ds: MultiDomainDataset,
    train: SourceView,
    holdout: SourceView,
    pipeline: GnndmPipeline,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let ds = make_domains(&GeneratorConfig {
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let (source, _) = ds.split_sources_target(3).unwrap();
        let (train, holdout) = source.holdout_split(0.2, 12).unwrap();
        let (ddmn, _) = train_ddmn(
            &train,
            &DdmnConfig {
                seed: 13,
                ..Default::default()
            },
        )
        .unwrap();
        let emb = ddmn.embed(train.features()).unwrap();
        let (vae, _) = train_vae(
            &emb,
            &VaeConfig {
                seed: 14,
                ..Default::default()
            },
        )
        .unwrap();
        let (clf, _) = train_classifier(
            &emb,
            train.labels(),
            2,
            &ClassifierConfig {
                seed: 15,
                ..Default::default()
            },
        )
        .unwrap();
        Trained {
            pipeline: GnndmPipeline::new(ddmn, vae, clf).unwrap(),
            ds,
            train,
            holdout,
        }
    })
}

#[test]
fn embedding_separates_classes_on_holdout() {
    let t = trained();
    assert_eq!(t.ds.source_domains(3).len(), 3);
    let emb = t.pipeline.ddmn.embed(t.holdout.features()).unwrap();
    let (intra, inter) = class_similarity_stats(&emb, t.holdout.labels());
    assert!(intra >= 0.9, "intra {intra}");
    assert!(inter <= 0.2, "inter {inter}");
}

#[test]
fn vae_reconstructs_and_samples_near_the_bank() {
    let t = trained();
    let bank = t.pipeline.ddmn.embed(t.train.features()).unwrap();
    let held = t.pipeline.ddmn.embed(t.holdout.features()).unwrap();
    let rc = reconstruction_cosine(&t.pipeline.vae, &held).unwrap();
    assert!(rc >= 0.95, "reconstruction cosine {rc}");

    let samples = t.pipeline.vae.sample_prior(200, 21).unwrap();
    let mean = samples
        .iter_rows()
        .map(|s| brute_force_nn(s, &bank).unwrap().1)
        .sum::<f64>()
        / 200.0;
    assert!(mean >= 0.9, "sample-to-bank similarity {mean}");
}

#[test]
fn gnndm_agrees_with_direct_on_source_points() {
    let t = trained();
    let idx: Vec<usize> = (0..t.holdout.len()).step_by(3).collect();
    let sub = t.holdout.subset(&idx).unwrap();
    let direct = t.pipeline.predict_embedded(sub.features()).unwrap();
    let (gnndm, _) = t
        .pipeline
        .infer(
            sub.features(),
            &NnsParams {
                seed: 22,
                ..Default::default()
            },
        )
        .unwrap();
    let agree = direct.iter().zip(&gnndm).filter(|(a, b)| a == b).count() as f64 / direct.len() as f64;
    assert!(agree >= 0.95, "agreement {agree}");
}

#[test]
fn proxy_is_symmetric_across_seeds() {
    let t = trained();
    let a = t.ds.domain_features(0).unwrap();
    let b = t.ds.domain_features(1).unwrap();
    for seed in 0..10 {
        let cfg = ProxyConfig {
            epochs: 40,
            seed,
            ..Default::default()
        };
        let ab = proxy_h_divergence(&a, &b, &cfg).unwrap().value;
        let ba = proxy_h_divergence(&b, &a, &cfg).unwrap().value;
        assert!((ab - ba).abs() < 0.1, "seed {seed}: {ab} vs {ba}");
    }
}

#[test]
fn label_noise_sets_the_bayes_risk() {
    let ds = make_domains(&GeneratorConfig {
        noise_rate: 0.1,
        ..Default::default()
    })
    .unwrap();
    let analytic = bayes_risk(
        ds.descriptor(),
        &[0.5, 0.5],
        BayesMode::Analytic { grid: 400 },
        Execution::Sequential,
    )
    .unwrap();
    assert!((analytic.value - 0.1).abs() < 0.01, "{}", analytic.value);
    let mc = bayes_risk(
        ds.descriptor(),
        &[0.5, 0.5],
        BayesMode::MonteCarlo {
            samples: 200_000,
            seed: 4,
        },
        Execution::Parallel,
    )
    .unwrap();
    assert!((mc.value - analytic.value).abs() <= 2.0 * mc.stderr.hypot(analytic.stderr));
}

fn loss_of(emb: &Tensor, labels: &[usize], objective: Objective) -> f64 {
    let mut g = Graph::new();
    let e = g.constant(emb.clone());
    let s = similarity_matrix(&mut g, e).unwrap();
    let l = objective_loss(&mut g, s, labels, 0.5, objective).unwrap();
    g.value(l).item()
}

#[test]
fn losses_are_invariant_to_batch_order() {
    let t = trained();
    let idx: Vec<usize> = (0..24).collect();
    let sub = t.train.subset(&idx).unwrap();
    let emb = t.pipeline.ddmn.embed(sub.features()).unwrap();
    let mut perm = idx.clone();
    perm.shuffle(&mut rng_from_seed(5));
    let rows: Vec<&[f64]> = perm.iter().map(|&i| emb.row(i)).collect();
    let shuffled = Tensor::from_rows(&rows).unwrap();
    let labels: Vec<usize> = perm.iter().map(|&i| sub.labels()[i]).collect();
    for obj in [Objective::Bce, Objective::CosineSum] {
        let a = loss_of(&emb, sub.labels(), obj);
        let b = loss_of(&shuffled, &labels, obj);
        assert!((a - b).abs() < 1e-12, "{obj:?}: {a} vs {b}");
    }
}
