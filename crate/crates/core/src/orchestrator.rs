//! In-process federated experiment: participant sampling, local training,
//! aggregation, and per-round evaluation on every client's test split.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;

use crate::data_synth::{self, ClientDataset, DataGenConfig, Split};
use crate::error::{Error, Result};
use crate::nn::{self, LocalTrainSpec, MlpConfig, SgdConfig};
use crate::params::ParamVector;
use crate::seed::{self, SimRng};
use crate::strategies::{
    aggregate_deltas, ClientUpdate, ServerState, StrategyConfig, StrategyKind,
};

/// Accuracy of picking one of the five OCPs uniformly at random.
pub const RANDOM_BASELINE_ACCURACY: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub rounds: u32,
    pub first_round_participants: usize,
    pub later_round_participants: usize,
    pub local_epochs: usize,
    pub sgd: SgdConfig,
    pub mlp: MlpConfig,
    pub strategy: StrategyConfig,
    pub data: DataGenConfig,
    /// Drives model init, participant sampling and local shuffling.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rounds: 8,
            first_round_participants: 2,
            later_round_participants: 6,
            local_epochs: 3,
            sgd: SgdConfig::default(),
            mlp: MlpConfig::default(),
            strategy: StrategyConfig::new(StrategyKind::FedAvg),
            data: DataGenConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::InvalidParameter("need at least one round".into()));
        }
        for k in [self.first_round_participants, self.later_round_participants] {
            if k < 1 || k > num_clients {
                return Err(Error::InvalidParameter(format!(
                    "{k} participants requested from {num_clients} clients"
                )));
            }
        }
        if self.local_epochs < 1 {
            return Err(Error::InvalidParameter(
                "need at least one local epoch".into(),
            ));
        }
        self.sgd.validate()?;
        self.strategy.validate()
    }

    pub fn participants_in_round(&self, round: u32) -> usize {
        if round == 1 {
            self.first_round_participants
        } else {
            self.later_round_participants
        }
    }

    pub fn local_session(&self) -> LocalSession {
        LocalSession {
            seed: self.seed,
            mlp: self.mlp,
            sgd: self.sgd,
            train: LocalTrainSpec {
                epochs: self.local_epochs,
                proximal_mu: self.strategy.client_proximal_mu(),
            },
        }
    }
}

/// Everything a client needs to reproduce its share of a round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalSession {
    pub seed: u64,
    pub mlp: MlpConfig,
    pub sgd: SgdConfig,
    pub train: LocalTrainSpec,
}

impl LocalSession {
    /// Trains from `global` on one client's data and returns its delta.
    pub fn client_update(
        &self,
        global: &ParamVector,
        train: &Split,
        client_id: u32,
        round: u32,
    ) -> Result<ClientUpdate> {
        let mut rng = seed::rng_from_seed(seed::local_train_seed(self.seed, round, client_id));
        let out = nn::local_train(&self.mlp, global, train, &self.train, self.sgd, &mut rng)?;
        Ok(ClientUpdate {
            client_id,
            delta: out.params.sub(global)?,
            num_examples: train.len() as u64,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientMetrics {
    pub client_id: u32,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub test_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    pub weighted_accuracy: f64,
    pub weighted_loss: f64,
    pub per_client: Vec<ClientMetrics>,
    pub participants: Vec<u32>,
}

/// Draws `k` distinct clients for `round` (1-based) without replacement.
/// Returned ids are sorted.
pub fn sample_participants(
    rng: &mut SimRng,
    round: u32,
    config: &ExperimentConfig,
    client_ids: &[u32],
) -> Result<Vec<u32>> {
    if round < 1 || round > config.rounds {
        return Err(Error::InvalidParameter(format!(
            "round {round} outside 1..={}",
            config.rounds
        )));
    }
    let k = config.participants_in_round(round);
    if k > client_ids.len() {
        return Err(Error::InvalidParameter(format!(
            "{k} participants requested from {} clients",
            client_ids.len()
        )));
    }
    let mut chosen: Vec<u32> = index::sample(rng, client_ids.len(), k)
        .into_iter()
        .map(|i| client_ids[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Participants for `round` drawn from the round's own derived stream.
pub fn participants_for_round(
    config: &ExperimentConfig,
    round: u32,
    client_ids: &[u32],
) -> Result<Vec<u32>> {
    sample_participants(
        &mut seed::participants_rng(config.seed, round),
        round,
        config,
        client_ids,
    )
}

/// `sum(value_i * size_i) / sum(size_i)`.
pub fn weighted_mean(values: &[f64], sizes: &[usize]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("weighted average inputs"));
    }
    if values.len() != sizes.len() {
        return Err(Error::Dimension(format!(
            "{} values but {} sizes",
            values.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidParameter("client sizes must be >= 1".into()));
    }
    let total: usize = sizes.iter().sum();
    let acc: f64 = values.iter().zip(sizes).map(|(v, &n)| v * n as f64).sum();
    Ok(acc / total as f64)
}

pub fn weighted_accuracy(per_client: &[ClientMetrics]) -> Result<f64> {
    let accs: Vec<f64> = per_client.iter().map(|c| c.test_accuracy).collect();
    let sizes: Vec<usize> = per_client.iter().map(|c| c.test_size).collect();
    weighted_mean(&accs, &sizes)
}

/// Evaluates `params` on every client's test split.
pub fn evaluate_clients(
    mlp: &MlpConfig,
    params: &ParamVector,
    clients: &[ClientDataset],
) -> Result<Vec<ClientMetrics>> {
    clients
        .par_iter()
        .map(|c| {
            let e = nn::evaluate(mlp, params, &c.test)?;
            Ok(ClientMetrics {
                client_id: c.client_id,
                test_accuracy: e.accuracy,
                test_loss: e.loss,
                test_size: c.test.len(),
            })
        })
        .collect()
}

/// Aggregates the round's updates (sorted by client id), applies the
/// strategy and evaluates the new global model on all clients.
pub fn finish_round(
    state: &mut ServerState,
    mut updates: Vec<ClientUpdate>,
    clients: &[ClientDataset],
    config: &ExperimentConfig,
    round: u32,
) -> Result<RoundMetrics> {
    updates.sort_by_key(|u| u.client_id);
    let delta = aggregate_deltas(&updates)?;
    state.apply(&delta, &config.strategy)?;
    let per_client = evaluate_clients(&config.mlp, &state.weights, clients)?;
    let weighted_accuracy = weighted_accuracy(&per_client)?;
    let losses: Vec<f64> = per_client.iter().map(|c| c.test_loss).collect();
    let sizes: Vec<usize> = per_client.iter().map(|c| c.test_size).collect();
    Ok(RoundMetrics {
        round,
        weighted_accuracy,
        weighted_loss: weighted_mean(&losses, &sizes)?,
        per_client,
        participants: updates.iter().map(|u| u.client_id).collect(),
    })
}

fn find_client(clients: &[ClientDataset], id: u32) -> Result<&ClientDataset> {
    clients
        .iter()
        .find(|c| c.client_id == id)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown client {id}")))
}

/// One communication round. Participants train concurrently from the
/// current global weights.
pub fn run_round(
    state: &mut ServerState,
    clients: &[ClientDataset],
    participants: &[u32],
    config: &ExperimentConfig,
    round: u32,
) -> Result<RoundMetrics> {
    if participants.is_empty() {
        return Err(Error::Empty("participants"));
    }
    let mut sorted = participants.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != participants.len() {
        return Err(Error::InvalidParameter("duplicate participant".into()));
    }
    let session = config.local_session();
    let global = state.weights.clone();
    let updates = sorted
        .par_iter()
        .map(|&id| {
            let client = find_client(clients, id)?;
            session.client_update(&global, &client.train, id, round)
        })
        .collect::<Result<Vec<_>>>()?;
    finish_round(state, updates, clients, config, round)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub strategy: StrategyKind,
    /// Dataset regime tag, e.g. `noniid-variable`.
    pub dataset_mode: String,
    pub rounds: Vec<RoundMetrics>,
    pub final_weights: ParamVector,
    /// Reference line for plots.
    pub baseline_accuracy: f64,
}

impl ExperimentResult {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.weighted_accuracy)
    }
}

pub fn initial_weights(config: &ExperimentConfig) -> ParamVector {
    nn::init_model(&mut seed::model_init_rng(config.seed), &config.mlp)
}

/// Generates the federation's data from `config.data` and runs it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let clients = data_synth::generate_federation(&config.data)?;
    run_with_clients(config, &clients)
}

/// Runs all rounds on an existing set of client datasets.
pub fn run_with_clients(
    config: &ExperimentConfig,
    clients: &[ClientDataset],
) -> Result<ExperimentResult> {
    config.validate(clients.len())?;
    let ids: Vec<u32> = clients.iter().map(|c| c.client_id).collect();
    let mut state = ServerState::new(initial_weights(config), config.strategy.kind);
    let mut rounds = Vec::with_capacity(config.rounds as usize);
    for round in 1..=config.rounds {
        let participants = participants_for_round(config, round, &ids)?;
        rounds.push(run_round(
            &mut state,
            clients,
            &participants,
            config,
            round,
        )?);
    }
    Ok(ExperimentResult {
        strategy: config.strategy.kind,
        dataset_mode: config.data.regime_label(),
        rounds,
        final_weights: state.weights,
        baseline_accuracy: RANDOM_BASELINE_ACCURACY,
    })
}

pub const ROUND_METRICS_HEADER: &str =
    "round,strategy,dataset_mode,weighted_accuracy,weighted_loss,participants";
pub const CLIENT_METRICS_HEADER: &str =
    "round,strategy,dataset_mode,client_id,test_accuracy,test_loss,test_size,participated";

/// One row per round; participants are space-separated client ids.
pub fn write_round_metrics_csv<W: Write>(writer: W, result: &ExperimentResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(ROUND_METRICS_HEADER.split(','))?;
    for r in &result.rounds {
        let participants: Vec<String> = r.participants.iter().map(u32::to_string).collect();
        out.write_record([
            r.round.to_string(),
            result.strategy.to_string(),
            result.dataset_mode.clone(),
            r.weighted_accuracy.to_string(),
            r.weighted_loss.to_string(),
            participants.join(" "),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Long format: one row per (round, client).
pub fn write_client_metrics_csv<W: Write>(writer: W, result: &ExperimentResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(CLIENT_METRICS_HEADER.split(','))?;
    for r in &result.rounds {
        for c in &r.per_client {
            out.write_record([
                r.round.to_string(),
                result.strategy.to_string(),
                result.dataset_mode.clone(),
                c.client_id.to_string(),
                c.test_accuracy.to_string(),
                c.test_loss.to_string(),
                c.test_size.to_string(),
                u8::from(r.participants.contains(&c.client_id)).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_synth::SizeMode;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            rounds: 3,
            first_round_participants: 2,
            later_round_participants: 3,
            local_epochs: 1,
            data: DataGenConfig {
                num_clients: 4,
                size: SizeMode::Fixed(200),
                seed: 3,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        }
    }

    fn metrics(acc: f64, size: usize) -> ClientMetrics {
        ClientMetrics {
            client_id: 0,
            test_accuracy: acc,
            test_loss: 0.0,
            test_size: size,
        }
    }

    #[test]
    fn weighted_accuracy_cases() {
        assert!(weighted_accuracy(&[]).is_err());
        assert_eq!(weighted_accuracy(&[metrics(0.7, 9)]).unwrap(), 0.7);
        let a = weighted_accuracy(&[metrics(1.0, 100), metrics(0.0, 300)]).unwrap();
        assert!((a - 0.25).abs() < 1e-15);
        let m = weighted_accuracy(&[metrics(0.5, 10), metrics(0.9, 10), metrics(0.1, 10)]).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
    }

    #[test]
    fn participant_counts_follow_schedule() {
        let config = ExperimentConfig::default();
        let ids: Vec<u32> = (0..12).collect();
        let r1 = participants_for_round(&config, 1, &ids).unwrap();
        assert_eq!(r1.len(), 2);
        assert_ne!(r1[0], r1[1]);
        let r5 = participants_for_round(&config, 5, &ids).unwrap();
        assert_eq!(r5.len(), 6);
        assert!(r5.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(r5, participants_for_round(&config, 5, &ids).unwrap());
        assert!(participants_for_round(&config, 0, &ids).is_err());
        assert!(participants_for_round(&config, 9, &ids).is_err());
    }

    #[test]
    fn zero_learning_rate_round_is_a_no_op() {
        let mut config = small_config();
        config.sgd.lr = 0.0;
        let clients = data_synth::generate_federation(&config.data).unwrap();
        let w0 = initial_weights(&config);
        let mut state = ServerState::new(w0.clone(), config.strategy.kind);
        let before = evaluate_clients(&config.mlp, &w0, &clients).unwrap();
        let m1 = run_round(&mut state, &clients, &[2], &config, 1).unwrap();
        assert_eq!(state.weights, w0);
        assert_eq!(m1.per_client, before);
        let m2 = run_round(&mut state, &clients, &[1], &config, 2).unwrap();
        assert_eq!(m1.weighted_accuracy, m2.weighted_accuracy);
    }

    #[test]
    fn run_round_rejects_bad_participants() {
        let config = small_config();
        let clients = data_synth::generate_federation(&config.data).unwrap();
        let mut state = ServerState::new(initial_weights(&config), config.strategy.kind);
        assert!(run_round(&mut state, &clients, &[], &config, 1).is_err());
        assert!(run_round(&mut state, &clients, &[1, 1], &config, 1).is_err());
        assert!(run_round(&mut state, &clients, &[42], &config, 1).is_err());
    }

    #[test]
    fn experiment_shape_and_determinism() {
        let config = small_config();
        let a = run_experiment(&config).unwrap();
        assert_eq!(a.rounds.len(), 3);
        assert_eq!(a.baseline_accuracy, 0.2);
        assert_eq!(a.rounds[0].participants.len(), 2);
        assert_eq!(a.rounds[1].participants.len(), 3);
        for r in &a.rounds {
            assert_eq!(r.per_client.len(), 4);
            let w = weighted_accuracy(&r.per_client).unwrap();
            assert!((w - r.weighted_accuracy).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&r.weighted_accuracy));
        }
        let b = run_experiment(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_rejects_too_many_participants() {
        let config = small_config();
        assert!(config.validate(2).is_err());
        assert!(config.validate(4).is_ok());
    }

    #[test]
    fn metrics_csv_layout() {
        let result = run_experiment(&small_config()).unwrap();
        let mut buf = Vec::new();
        write_round_metrics_csv(&mut buf, &result).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], ROUND_METRICS_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,fedavg,iid-fixed,"));

        let mut buf = Vec::new();
        write_client_metrics_csv(&mut buf, &result).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 4);
    }
}
