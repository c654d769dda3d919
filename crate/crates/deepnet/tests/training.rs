use dlnice_core::montecarlo::{estimate_risk, BaselinePool, ModelSet, MonteCarloConfig};
use dlnice_core::simulator::{simulate_cohort, Scenario};
use dlnice_core::{Cohort, History, TreatmentStrategy};
use dlnice_deepnet::data::{covariate_architecture, Normalizer};
use dlnice_deepnet::network::Network;
use dlnice_deepnet::train::{evaluate, fit};
use dlnice_deepnet::*;

fn cohort(n: usize, horizon: usize, seed: u64) -> Cohort {
    simulate_cohort(Scenario::simple(), n, horizon, TreatmentStrategy::NaturalCourse, seed).unwrap()
}

fn small_config() -> NetworkConfig {
    NetworkConfig {
        feature_dim: 8,
        hidden_size: 8,
        num_layers: 1,
        dropout_rate: 0.1,
        learning_rate: 5e-3,
        batch_size: 16,
        weight_decay: 1e-5,
        max_epochs: 6,
        patience: 3,
    }
}

#[test]
fn fixed_seed_reproduces_training() {
    let c = cohort(120, 12, 1);
    let a = train_covariate_network(&c, &small_config(), 4).unwrap();
    let b = train_covariate_network(&c, &small_config(), 4).unwrap();
    assert_eq!(a.best_val_loss, b.best_val_loss);
    assert_eq!(a.net.params, b.net.params);
    assert_eq!(a.history, b.history);
    let c2 = train_covariate_network(&c, &small_config(), 5).unwrap();
    assert_ne!(a.net.params, c2.net.params);

    let o1 = train_outcome_network(&c, &small_config(), 4).unwrap();
    let o2 = train_outcome_network(&c, &small_config(), 4).unwrap();
    assert_eq!(o1.best_val_loss, o2.best_val_loss);
    assert_eq!(o1.net.params, o2.net.params);
}

#[test]
fn chosen_epoch_is_no_worse_than_first() {
    let c = cohort(150, 12, 2);
    for t in [
        train_covariate_network(&c, &small_config(), 1).unwrap(),
        train_outcome_network(&c, &small_config(), 1).unwrap(),
    ] {
        let chosen = &t.history[t.best_epoch - 1];
        assert_eq!(chosen.val_loss, t.best_val_loss);
        assert!(t.best_val_loss <= t.history[0].val_loss);
        assert!(t.history.iter().all(|e| e.val_loss >= t.best_val_loss));
        // Early stopping: no more than `patience` epochs after the best.
        assert!(t.history.len() - t.best_epoch <= small_config().patience);
    }
}

#[test]
fn validation_residual_sd_is_used_for_sampling() {
    let c = cohort(150, 12, 3);
    let t = train_covariate_network(&c, &small_config(), 1).unwrap();
    let sd = t.residual("cd4").unwrap();
    assert!(sd > 0.0 && sd.is_finite());
    assert!(t.residual("high_bmi").is_err());
}

#[test]
fn reference_preset_trains() {
    let mut cfg = reference_config(false, 10_000, NetworkKind::Covariate).unwrap();
    assert_eq!((cfg.hidden_size, cfg.num_layers, cfg.feature_dim), (64, 3, 128));
    assert_eq!((cfg.dropout_rate, cfg.learning_rate), (0.19, 4.1e-4));
    cfg.max_epochs = 1;
    let t = train_covariate_network(&cohort(40, 6, 4), &cfg, 1).unwrap();
    assert_eq!(t.net.arch.layers, 3);
    assert_eq!(t.history.len(), 1);
}

#[test]
fn ten_person_cohort_can_be_memorized() {
    let c = cohort(10, 12, 5);
    let norm = Normalizer::fit(&c.persons, 12).unwrap();
    let seqs: Vec<Sequence> = c.persons.iter().map(|p| norm.covariate_sequence(p)).collect();
    let net = Network::init(covariate_architecture(32, 32, 1), &mut dlnice_core::rng::stream_rng(1, 0)).unwrap();
    let initial = evaluate(&net, &seqs).unwrap();
    let cfg = NetworkConfig {
        feature_dim: 32,
        hidden_size: 32,
        num_layers: 1,
        dropout_rate: 0.0,
        learning_rate: 1e-2,
        batch_size: 10,
        weight_decay: 0.0,
        max_epochs: 1500,
        patience: 1500,
    };
    let f = fit(net, &seqs, &seqs, &cfg, 1).unwrap();
    let last = evaluate(&f.net, &seqs).unwrap();
    assert!(last < 0.01 * initial, "initial {initial}, final {last}");
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = small_config();
    cfg.batch_size = 0;
    let err = train_covariate_network(&cohort(20, 4, 6), &cfg, 1).unwrap_err();
    assert!(err.to_string().contains("batch_size"));
}

#[test]
fn checkpoint_round_trip() {
    let c = cohort(60, 8, 7);
    let t = train_outcome_network(&c, &small_config(), 2).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&t, &mut bytes).unwrap();
    let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
    assert_eq!(back.net.params, t.net.params);
    assert_eq!(back.net.arch, t.net.arch);
    assert_eq!(back.norm, t.norm);
    assert_eq!(back.config, t.config);
    assert_eq!(back.history, t.history);
    // Weights trail the header as little-endian f64 in block order.
    let tail = &bytes[bytes.len() - 8 * t.net.params.len()..];
    assert_eq!(tail[..8], t.net.params[0].to_le_bytes());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_checkpoint(&mut bad.as_slice()).is_err());
    assert!(read_checkpoint(&mut &bytes[..bytes.len() - 8]).is_err());
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 8]);
    assert!(read_checkpoint(&mut extra.as_slice()).is_err());
}

fn model(seed: u64) -> (Cohort, DeepModelSet) {
    let c = cohort(80, 10, seed);
    let cov = train_covariate_network(&c, &small_config(), 3).unwrap();
    let out = train_outcome_network(&c, &small_config(), 3).unwrap();
    (c, DeepModelSet::new(cov, out).unwrap())
}

#[test]
fn model_set_round_trip_and_probabilities() {
    let (c, m) = model(8);
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = DeepModelSet::load(dir.path()).unwrap();
    let pool = BaselinePool::from_cohort(&c).unwrap();
    let cfg = MonteCarloConfig::new(300, 10, 4);
    for s in TreatmentStrategy::ALL {
        let a = estimate_risk(&m, &pool, s, &cfg).unwrap();
        let b = estimate_risk(&back, &pool, s, &cfg).unwrap();
        assert_eq!(a.risk, b.risk);
        assert!(a.risk.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.risk.values.iter().all(|&r| (0.0..=1.0).contains(&r)));
    }
}

/// Evaluating a history from a fresh scratch and from one that has seen a
/// different history gives the same answers.
#[test]
fn scratch_replays_changed_histories() {
    let (c, m) = model(9);
    let h1 = History::from_trajectory(&c.persons[0]);
    let h2 = History::from_trajectory(&c.persons[1]);
    let eval = |h: &History, s: &mut _| {
        let (mut means, mut probs) = (Vec::new(), Vec::new());
        for k in 0..h.len() {
            if k > 0 {
                let d = m.covariate_step(h, k, s).unwrap();
                means.extend([d.cd4.mean, d.rna.mean]);
                probs.push(d.high_bmi);
            }
            probs.push(m.treatment_prob(h, k, s).unwrap());
            probs.push(m.hazard(h, k, s).unwrap());
        }
        (means, probs)
    };
    let fresh = eval(&h2, &mut m.new_scratch());
    let mut s = m.new_scratch();
    eval(&h1, &mut s);
    assert_eq!(eval(&h2, &mut s), fresh);
    for p in &fresh.1 {
        assert!(*p > 0.0 && *p < 1.0);
    }
    assert!(m.covariate_step(&h1, 0, &mut s).is_err());
}
