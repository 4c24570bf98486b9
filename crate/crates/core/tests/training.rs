mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanrel_core::evaluation::{self, Preset};
use spanrel_core::graph::{Graph, Gradients, ParamId, ParamStore};
use spanrel_core::training::{self, batch_loss, SamplingConfig, Stream};
use spanrel_core::{Ablation, Error, LabelVocab, Model, RunConfig, Sentence};

fn small_config(ablation: Ablation, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::from_toml_str(
        &format!(
            "[encoder]\ndim = 8\n[sampling]\nneg_entities = 12\nneg_relations = 6\n\
             [training]\nepochs = {epochs}\nlearning_rate = 1e-2\nbatch_size = 4\nseed = 5\n"
        ),
        &[],
    )
    .unwrap();
    cfg.apply_ablation(ablation);
    cfg
}

fn build(cfg: &RunConfig, corpus: &[Sentence]) -> Model {
    let vocab = LabelVocab::from_sentences(corpus).unwrap();
    cfg.build_model(corpus, vocab).unwrap()
}

fn loss_at(model: &Model, params: &ParamStore, batch: &[&Sentence], sampling: &SamplingConfig) -> f64 {
    let mut rng = training::stream_rng(3, Stream::Sampling);
    let mut g = Graph::new(params);
    let nodes = batch_loss(model, &mut g, batch, sampling, &mut rng).unwrap();
    nodes.report(&g).total
}

fn check_gradients(ablation: Ablation) {
    let corpus = common::synthetic_corpus(4, 1);
    let cfg = small_config(ablation, 1);
    let model = build(&cfg, &corpus);
    let batch: Vec<&Sentence> = corpus.iter().collect();

    let mut grads = Gradients::new(&model.params);
    {
        let mut rng = training::stream_rng(3, Stream::Sampling);
        let mut g = Graph::new(&model.params);
        let nodes = batch_loss(&model, &mut g, &batch, &cfg.sampling, &mut rng).unwrap();
        let total = nodes.total(&mut g).unwrap();
        g.backward(total, &mut grads);
    }

    let touched: Vec<(ParamId, usize)> = (0..model.params.len())
        .map(ParamId)
        .filter_map(|id| grads.get(id).map(|g| (id, g)))
        .flat_map(|(id, g)| (0..g.len()).filter(|&i| g[i] != 0.0).map(move |i| (id, i)))
        .collect();
    assert!(touched.len() > 100);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (id, i) = touched[rng.gen_range(0..touched.len())];
        let mut params = model.params.clone();
        let x = params.scalar(id, i);
        params.set_scalar(id, i, x + h);
        let up = loss_at(&model, &params, &batch, &cfg.sampling);
        params.set_scalar(id, i, x - h);
        let down = loss_at(&model, &params, &batch, &cfg.sampling);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.scalar(id, i);
        let err = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(
            err < 1e-2,
            "{} [{i}]: analytic {analytic:e} numeric {numeric:e}",
            model.params.entry(id).name
        );
        worst = worst.max(err);
    }
    assert!(worst < 1e-2);
}

#[test]
fn joint_loss_gradients_match_finite_differences() {
    check_gradients(Ablation::Full);
}

#[test]
fn single_phase_gradients_match_finite_differences() {
    check_gradients(Ablation::Base);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let corpus = common::synthetic_corpus(8, 2);
    let mut cfg = small_config(Ablation::Full, 3);
    cfg.training.learning_rate = 0.0;
    cfg.training.batch_size = 8;
    let model = build(&cfg, &corpus);
    let before = model.params.clone();
    let out = spanrel_core::train(model, &corpus, &common::settings(&cfg)).unwrap();
    assert_eq!(out.model.params, before);
    assert_eq!(out.log.len(), 3);
    for entry in &out.log[1..] {
        // the type losses see gold mentions only, so they do not depend on sampling
        assert!((entry.loss.entity_type - out.log[0].loss.entity_type).abs() < 1e-12);
        assert!((entry.loss.relation_type - out.log[0].loss.relation_type).abs() < 1e-12);
    }
}

#[test]
fn same_seed_gives_identical_runs() {
    let corpus = common::synthetic_corpus(8, 3);
    let cfg = small_config(Ablation::Full, 4);
    let a = spanrel_core::train(build(&cfg, &corpus), &corpus, &common::settings(&cfg)).unwrap();
    let b = spanrel_core::train(build(&cfg, &corpus), &corpus, &common::settings(&cfg)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.params, b.model.params);

    let mut other = cfg.clone();
    other.training.seed = 6;
    let c = spanrel_core::train(build(&other, &corpus), &corpus, &common::settings(&other)).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let corpus = common::synthetic_corpus(5, 4);
    let mut cfg = small_config(Ablation::Full, 2);
    cfg.training.batch_size = 5;
    let mut model = build(&cfg, &corpus);
    for entry in model.params.entries_mut() {
        if entry.name.starts_with("head.") {
            entry.tensor.data.iter_mut().for_each(|v| *v = f64::NAN);
        }
    }
    match spanrel_core::train(model, &corpus, &common::settings(&cfg)) {
        Err(Error::Divergence { epoch, batch, sentences }) => {
            assert_eq!((epoch, batch), (1, 0));
            for s in &corpus {
                assert!(sentences.contains(&s.id), "{sentences}");
            }
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn best_parameters_track_dev_relation_f1() {
    let corpus = common::synthetic_corpus(8, 5);
    let cfg = small_config(Ablation::WithoutGated, 12);
    let mut settings = common::settings(&cfg);
    settings.dev = Some(&corpus);
    let out = spanrel_core::train(build(&cfg, &corpus), &corpus, &settings).unwrap();
    let (epoch, params) = out.best.clone().expect("dev set given");
    let f1: Vec<f64> = out.log.iter().map(|e| e.dev.as_ref().unwrap().re.f1).collect();
    let best = f1.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(f1[epoch - 1], best);
    assert!(f1[..epoch - 1].iter().all(|&v| v < best));

    let mut model = out.model.clone();
    model.params = params;
    let pred: Vec<Sentence> = corpus.iter().map(|s| model.predict_sentence(s).unwrap()).collect();
    let rescored = evaluation::score(&corpus, &pred, &settings.policy).unwrap();
    assert_eq!(rescored.re.f1, best);
}

#[test]
fn no_dev_set_means_no_best_checkpoint() {
    let corpus = common::synthetic_corpus(4, 6);
    let cfg = small_config(Ablation::Full, 1);
    let out = spanrel_core::train(build(&cfg, &corpus), &corpus, &common::settings(&cfg)).unwrap();
    assert!(out.best.is_none());
    assert!(out.log[0].dev.is_none());
}

#[test]
fn empty_corpus_is_rejected() {
    let corpus = common::synthetic_corpus(4, 6);
    let cfg = small_config(Ablation::Full, 1);
    let model = build(&cfg, &corpus);
    assert!(matches!(
        spanrel_core::train(model, &[], &common::settings(&cfg)),
        Err(Error::Config(_))
    ));
}

fn trailing_average(values: &[f64], window: usize) -> Vec<f64> {
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[test]
fn overfit_corpus_loss_settles_and_predicts_gold() {
    let corpus = common::synthetic_corpus(20, common::OVERFIT_SEED);
    let cfg = common::overfit_config(Ablation::WithoutGated);
    let vocab = LabelVocab::from_sentences(&corpus).unwrap();
    let out = spanrel_core::train(cfg.build_model(&corpus, vocab).unwrap(), &corpus, &common::settings(&cfg)).unwrap();

    let losses: Vec<f64> = out.log.iter().map(|e| e.loss.total).collect();
    let avg = trailing_average(&losses, 10);
    let noise = 1e-5 * avg[0];
    for (i, pair) in avg.windows(2).enumerate() {
        assert!(pair[1] <= pair[0] + noise, "moving average rose at epoch {}: {} -> {}", i + 11, pair[0], pair[1]);
    }
    assert!(avg.last().unwrap() < &(avg[0] / 20.0));

    for s in &corpus {
        let p = out.model.predict_sentence(s).unwrap();
        let mut want: Vec<_> = s.entities.iter().map(|e| (e.start, e.end, e.label.clone())).collect();
        let mut got: Vec<_> = p.entities.iter().map(|e| (e.start, e.end, e.label.clone())).collect();
        want.sort();
        got.sort();
        assert_eq!(got, want, "{}", s.id);
    }
    let pred: Vec<Sentence> = corpus.iter().map(|s| out.model.predict_sentence(s).unwrap()).collect();
    let scores = evaluation::score(&corpus, &pred, &Preset::Conll04.policy()).unwrap();
    assert_eq!(scores.ner.f1, 1.0);
    assert_eq!(scores.re.f1, 1.0);
}
