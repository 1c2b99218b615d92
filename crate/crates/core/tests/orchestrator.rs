mod common;

use fedsim_core::data_synth::{generate_federation, DataMode, SizeMode};
use fedsim_core::orchestrator::{
    initial_weights, participants_for_round, run_experiment, run_round, run_with_clients,
    weighted_accuracy, ClientMetrics, ExperimentConfig, RANDOM_BASELINE_ACCURACY,
};
use fedsim_core::params::ParamVector;
use fedsim_core::strategies::{ServerState, StrategyKind};

/// Global weights after every round, driven round by round.
fn trajectory(config: &ExperimentConfig) -> Vec<ParamVector> {
    let clients = generate_federation(&config.data).unwrap();
    let ids: Vec<u32> = clients.iter().map(|c| c.client_id).collect();
    let mut state = ServerState::new(initial_weights(config), config.strategy.kind);
    (1..=config.rounds)
        .map(|round| {
            let p = participants_for_round(config, round, &ids).unwrap();
            run_round(&mut state, &clients, &p, config, round).unwrap();
            state.weights.clone()
        })
        .collect()
}

fn bits(w: &[ParamVector]) -> Vec<Vec<u64>> {
    w.iter()
        .map(|p| p.values().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn degenerate_strategies_match_fedavg_bit_for_bit() {
    let base = common::small_config(StrategyKind::FedAvg, 6, 600, 21);
    let reference = bits(&trajectory(&base));

    let mut avgm = common::small_config(StrategyKind::FedAvgM, 6, 600, 21);
    avgm.strategy.beta = 0.0;
    assert_eq!(bits(&trajectory(&avgm)), reference);

    let mut prox = common::small_config(StrategyKind::FedProx, 6, 600, 21);
    prox.strategy.mu = 0.0;
    assert_eq!(bits(&trajectory(&prox)), reference);

    let default_prox = common::small_config(StrategyKind::FedProx, 6, 600, 21);
    assert_ne!(bits(&trajectory(&default_prox)), reference);
}

#[test]
fn proximal_term_shrinks_client_deltas() {
    let config = common::full_config(
        StrategyKind::FedProx,
        DataMode::Iid,
        SizeMode::Fixed(12_500),
        5,
    );
    let mut data = config.data.clone();
    data.num_clients = 1;
    let client = generate_federation(&data).unwrap().remove(0);
    let w0 = initial_weights(&config);

    let mut plain = config.clone();
    plain.strategy.mu = 0.0;
    let d0 = plain
        .local_session()
        .client_update(&w0, &client.train, 0, 1)
        .unwrap();
    let d3 = config
        .local_session()
        .client_update(&w0, &client.train, 0, 1)
        .unwrap();
    assert_eq!(config.local_session().train.proximal_mu, 0.3);
    assert!(
        d3.delta.norm() < d0.delta.norm(),
        "{} !< {}",
        d3.delta.norm(),
        d0.delta.norm()
    );
}

#[test]
fn participant_schedule() {
    let config = ExperimentConfig::default();
    let ids: Vec<u32> = (0..12).collect();
    let r1 = participants_for_round(&config, 1, &ids).unwrap();
    assert_eq!(r1.len(), 2);
    assert_ne!(r1[0], r1[1]);
    for round in 2..=8 {
        let mut p = participants_for_round(&config, round, &ids).unwrap();
        assert_eq!(p, participants_for_round(&config, round, &ids).unwrap());
        p.dedup();
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|id| ids.contains(id)));
    }
    assert!(participants_for_round(&config, 0, &ids).is_err());
    assert!(participants_for_round(&config, 9, &ids).is_err());
}

#[test]
fn weighted_accuracy_examples() {
    let m = |acc: f64, size: usize| ClientMetrics {
        client_id: 0,
        test_accuracy: acc,
        test_loss: 0.0,
        test_size: size,
    };
    assert!((weighted_accuracy(&[m(1.0, 100), m(0.0, 300)]).unwrap() - 0.25).abs() < 1e-12);
    assert!((weighted_accuracy(&[m(0.3, 50), m(0.5, 50)]).unwrap() - 0.4).abs() < 1e-12);
    assert_eq!(weighted_accuracy(&[m(0.7, 9)]).unwrap(), 0.7);
    assert!(weighted_accuracy(&[]).is_err());
}

#[test]
fn full_run_shape_and_determinism() {
    let config = common::full_config(
        StrategyKind::FedAvg,
        DataMode::Iid,
        SizeMode::STANDARD_FIXED,
        1,
    );
    let a = run_experiment(&config).unwrap();
    assert_eq!(a.rounds.len(), 8);
    assert_eq!(a.baseline_accuracy, RANDOM_BASELINE_ACCURACY);
    assert_eq!(RANDOM_BASELINE_ACCURACY, 0.2);
    for (i, r) in a.rounds.iter().enumerate() {
        assert_eq!(r.round, i as u32 + 1);
        assert_eq!(r.participants.len(), if i == 0 { 2 } else { 6 });
        assert_eq!(r.per_client.len(), 12);
        let num: f64 = r
            .per_client
            .iter()
            .map(|c| c.test_accuracy * c.test_size as f64)
            .sum();
        let den: f64 = r.per_client.iter().map(|c| c.test_size as f64).sum();
        assert!((r.weighted_accuracy - num / den).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&r.weighted_accuracy));
    }
    assert!(a.final_accuracy() > a.rounds[0].weighted_accuracy);
    let b = run_experiment(&config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_learning_rate_round_is_a_no_op() {
    let mut config = common::small_config(StrategyKind::FedAvg, 3, 200, 4);
    config.sgd.lr = 0.0;
    let clients = generate_federation(&config.data).unwrap();
    let w0 = initial_weights(&config);
    let mut state = ServerState::new(w0.clone(), config.strategy.kind);
    let first = run_round(&mut state, &clients, &[1], &config, 1).unwrap();
    assert_eq!(state.weights, w0);
    let second = run_round(&mut state, &clients, &[0, 2], &config, 2).unwrap();
    assert_eq!(first.per_client, second.per_client);
    assert_eq!(first.weighted_accuracy, second.weighted_accuracy);
}

#[test]
fn duplicate_or_unknown_participants_rejected() {
    let config = common::small_config(StrategyKind::FedAvg, 3, 100, 4);
    let clients = generate_federation(&config.data).unwrap();
    let mut state = ServerState::new(initial_weights(&config), config.strategy.kind);
    assert!(run_round(&mut state, &clients, &[1, 1], &config, 1).is_err());
    assert!(run_round(&mut state, &clients, &[7], &config, 1).is_err());
    assert!(run_round(&mut state, &clients, &[], &config, 1).is_err());
}

#[test]
fn every_strategy_runs_on_loaded_clients() {
    for kind in StrategyKind::ALL {
        let config = common::small_config(kind, 4, 300, 8);
        let clients = generate_federation(&config.data).unwrap();
        let r = run_with_clients(&config, &clients).unwrap();
        assert_eq!(r.rounds.len(), 4);
        assert_eq!(r.strategy, kind);
        assert!(r.final_weights.values().iter().all(|v| v.is_finite()));
    }
}
