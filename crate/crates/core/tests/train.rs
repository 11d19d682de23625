mod common;

use common::{episodes, small_env};
use mplx::model::{Fade, Model};
use mplx::params::ParamStore;
use mplx::sim::{simulate_with, EnvConfig, Episode, SimOptions};
use mplx::train::{
    evaluate_loss, train, EpochLog, FadeUnit, NoObserver, StageRecord, TrainConfig, TrainMode, TrainObserver,
};
use mplx::Error;

fn quick(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        hidden: 8,
        batch_size: 8,
        max_epochs: 3,
        fade_in: 6,
        ..TrainConfig::default()
    }
}

fn data(env: &EnvConfig, count: usize, seed: u64) -> Vec<Episode> {
    episodes(env, count, seed)
}

#[derive(Default)]
struct Recorder {
    epochs: Vec<EpochLog>,
    stage_params: Vec<(StageRecord, ParamStore<f64>, Option<Fade>)>,
}

impl TrainObserver<f64> for Recorder {
    fn on_epoch(&mut self, log: &EpochLog) -> mplx::error::Result<()> {
        self.epochs.push(log.clone());
        Ok(())
    }

    fn on_stage_end(&mut self, record: &StageRecord, model: &Model<f64>, fade: Option<Fade>) -> mplx::error::Result<()> {
        self.stage_params.push((record.clone(), model.params.clone(), fade));
        Ok(())
    }
}

#[test]
fn training_is_deterministic() {
    let env = small_env(4, 6, 3);
    let eps = data(&env, 24, 1);
    let (tr, va): (Vec<&Episode>, Vec<&Episode>) = (eps[..20].iter().collect(), eps[20..].iter().collect());
    for mode in [TrainMode::MgPlt, TrainMode::EdgeType] {
        let a = train::<f64>(&tr, &va, &env, &quick(mode), &mut NoObserver).unwrap();
        let b = train::<f64>(&tr, &va, &env, &quick(mode), &mut NoObserver).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.log, b.log);
        let mut other = quick(mode);
        other.seed = 1;
        let c = train::<f64>(&tr, &va, &env, &other, &mut NoObserver).unwrap();
        assert_ne!(a.model.params, c.model.params);
    }
}

#[test]
fn progressive_training_mechanics() {
    let env = small_env(4, 6, 3);
    let eps = data(&env, 40, 2);
    let (tr, va): (Vec<&Episode>, Vec<&Episode>) = (eps[..32].iter().collect(), eps[32..].iter().collect());
    let cfg = TrainConfig {
        max_epochs: 4,
        fade_in: 6,
        ..quick(TrainMode::MgPlt)
    };
    let mut rec = Recorder::default();
    let out = train(&tr, &va, &env, &cfg, &mut rec).unwrap();
    assert_eq!(out.lineage.len(), 2);
    let (first, stage0_params, _) = &rec.stage_params[0];

    // growing adds a layer that starts silent
    assert!((out.lineage[1].entry_val - first.best_val).abs() < 1e-9);

    // the first stage is bitwise frozen through the second
    for (name, entry) in stage0_params.iter() {
        if name.starts_with("enc.stage0.") || name.starts_with("dec.edge.0.") {
            assert_eq!(out.model.params.get(name).unwrap(), &entry.value, "{name}");
            assert!(out.model.params.is_frozen(name));
        }
    }

    // 4 batches per epoch, so alpha hits exactly 1 after 6 steps (mid epoch 2)
    let stage1: Vec<&EpochLog> = rec.epochs.iter().filter(|l| l.stage == 1).collect();
    assert_eq!(stage1[0].alpha, 4.0 / 6.0);
    assert!(stage1[1..].iter().all(|l| l.alpha == 1.0));
    assert!(rec.epochs.iter().filter(|l| l.stage == 0).all(|l| l.alpha == 1.0));
}

#[test]
fn no_early_stop_while_fading() {
    let env = small_env(3, 4, 2);
    let eps = data(&env, 12, 3);
    let (tr, va): (Vec<&Episode>, Vec<&Episode>) = (eps[..8].iter().collect(), eps[8..].iter().collect());
    let cfg = TrainConfig {
        stop_patience: 1,
        fade_in: 5,
        fade_unit: FadeUnit::Epochs,
        max_epochs: 8,
        lr: 1e-9,
        ..quick(TrainMode::MgPlt)
    };
    let out = train::<f64>(&tr, &va, &env, &cfg, &mut NoObserver).unwrap();
    // plateaued from the start, but the second stage has to finish its fade first
    assert!(out.lineage[1].epochs >= 5, "{:?}", out.lineage[1]);
    let last = out.log.last().unwrap();
    assert_eq!(last.alpha, 1.0);
}

#[test]
fn static_scenes_are_fit_exactly() {
    let env = small_env(3, 4, 2);
    let opts = SimOptions {
        static_agents: true,
        ..SimOptions::default()
    };
    let eps: Vec<Episode> = (0..16).map(|s| simulate_with(&env, s, &opts).unwrap()).collect();
    let refs: Vec<&Episode> = eps.iter().collect();
    let cfg = TrainConfig {
        mode: TrainMode::Sg,
        layers: 1,
        max_epochs: 50,
        stop_patience: 50,
        lr: 3e-3,
        ..quick(TrainMode::Sg)
    };
    let out = train::<f64>(&refs[..12], &refs[12..], &env, &cfg, &mut NoObserver).unwrap();
    let val = evaluate_loss(&out.model, &refs[12..], 8, out.fade).unwrap();
    assert!(val < 1e-5, "{val}");
}

#[test]
fn skip_variant_never_builds_first_message_head() {
    let env = small_env(4, 4, 2);
    let eps = data(&env, 10, 4);
    let refs: Vec<&Episode> = eps.iter().collect();
    let out = train::<f64>(&refs[..8], &refs[8..], &env, &quick(TrainMode::EdgeTypeSkip1), &mut NoObserver).unwrap();
    assert!(out.model.config.skip_first);
    assert!(!out.model.params.names().any(|n| n.starts_with("dec.edge.0.")));
    assert!(out.model.params.names().any(|n| n.starts_with("dec.edge.1.")));
}

#[test]
fn absurd_learning_rate_diverges() {
    let env = small_env(3, 4, 2);
    let eps = data(&env, 10, 4);
    let refs: Vec<&Episode> = eps.iter().collect();
    let cfg = TrainConfig {
        lr: 1e300,
        max_epochs: 20,
        ..quick(TrainMode::Sg)
    };
    match train::<f64>(&refs[..8], &refs[8..], &env, &cfg, &mut NoObserver) {
        Err(Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.lineage)),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let env = small_env(3, 4, 2);
    let eps = data(&env, 4, 4);
    let refs: Vec<&Episode> = eps.iter().collect();
    for cfg in [
        TrainConfig { layers: 1, ..quick(TrainMode::MgPlt) },
        TrainConfig { batch_size: 0, ..quick(TrainMode::Sg) },
        TrainConfig { lr: -1.0, ..quick(TrainMode::Sg) },
    ] {
        assert!(matches!(train::<f64>(&refs, &refs, &env, &cfg, &mut NoObserver), Err(Error::Config(_))));
    }
    assert!(train::<f64>(&refs, &[], &env, &quick(TrainMode::Sg), &mut NoObserver).is_err());
}
