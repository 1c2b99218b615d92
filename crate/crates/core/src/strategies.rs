//! Server-side aggregation strategies.
//!
//! Every strategy averages client deltas weighted by local example counts;
//! they differ only in how the averaged delta moves the global weights.
//! FedProx shares FedAvg's server rule and contributes its proximal term
//! through the client loss instead.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    FedAvg,
    FedAvgM,
    FedProx,
    FedAdam,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::FedAvg,
        StrategyKind::FedAvgM,
        StrategyKind::FedProx,
        StrategyKind::FedAdam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::FedAvgM => "fedavgm",
            StrategyKind::FedProx => "fedprox",
            StrategyKind::FedAdam => "fedadam",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == lower)
            .ok_or_else(|| Error::Parse(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// FedAvgM server momentum.
    pub beta: f64,
    /// FedProx proximal coefficient, applied on clients.
    pub mu: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// FedAdam server learning rate.
    pub eta: f64,
    /// FedAdam adaptivity floor.
    pub tau: f64,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            beta: 0.8,
            mu: 0.3,
            beta1: 0.9,
            beta2: 0.99,
            eta: 0.1,
            tau: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} = {v} not in [0, 1)"
                )))
            }
        };
        unit("beta", self.beta)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.mu >= 0.0) {
            return Err(Error::InvalidParameter(format!("mu = {} < 0", self.mu)));
        }
        if !(self.eta > 0.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta = {} and tau = {} must be positive",
                self.eta, self.tau
            )));
        }
        Ok(())
    }

    /// Proximal coefficient clients should use for this strategy.
    pub fn client_proximal_mu(&self) -> f64 {
        match self.kind {
            StrategyKind::FedProx => self.mu,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u32,
    /// `w_opt - W`.
    pub delta: ParamVector,
    /// Local training-example count.
    pub num_examples: u64,
}

/// `sum_i (n_i / sum_j n_j) * delta_i` over this round's participants.
/// Summation follows slice order, so callers sort by client id first.
pub fn aggregate_deltas(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let first = updates.first().ok_or(Error::Empty("client updates"))?;
    if let Some(u) = updates.iter().find(|u| u.num_examples == 0) {
        return Err(Error::InvalidParameter(format!(
            "client {} reported zero training examples",
            u.client_id
        )));
    }
    let total: u64 = updates.iter().map(|u| u.num_examples).sum();
    let mut out = first.delta.zeros_like();
    for u in updates {
        out.add_scaled(u.num_examples as f64 / total as f64, &u.delta)?;
    }
    Ok(out)
}

/// Global weights plus whatever persistent state the strategy needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub weights: ParamVector,
    /// FedAvgM velocity.
    pub momentum: Option<ParamVector>,
    /// FedAdam first and second moments.
    pub adam: Option<(ParamVector, ParamVector)>,
    pub round: u32,
}

impl ServerState {
    pub fn new(weights: ParamVector, kind: StrategyKind) -> Self {
        let zeros = weights.zeros_like();
        let (momentum, adam) = match kind {
            StrategyKind::FedAvgM => (Some(zeros), None),
            StrategyKind::FedAdam => (None, Some((zeros.clone(), zeros))),
            StrategyKind::FedAvg | StrategyKind::FedProx => (None, None),
        };
        Self {
            weights,
            momentum,
            adam,
            round: 0,
        }
    }

    /// Applies the strategy's server rule for one round.
    pub fn apply(&mut self, delta: &ParamVector, config: &StrategyConfig) -> Result<()> {
        match config.kind {
            StrategyKind::FedAvg => fedavg_update(self, delta)?,
            StrategyKind::FedAvgM => fedavgm_update(self, delta, config.beta)?,
            StrategyKind::FedProx => fedprox_update(self, delta)?,
            StrategyKind::FedAdam => fedadam_update(
                self,
                delta,
                config.beta1,
                config.beta2,
                config.eta,
                config.tau,
            )?,
        }
        self.round += 1;
        Ok(())
    }
}

/// `W += delta`.
pub fn fedavg_update(state: &mut ServerState, delta: &ParamVector) -> Result<()> {
    state.weights.add_assign(delta)
}

/// `v = beta v + delta; W += v`.
pub fn fedavgm_update(state: &mut ServerState, delta: &ParamVector, beta: f64) -> Result<()> {
    state.weights.check_shape(delta)?;
    let v = state.momentum.get_or_insert_with(|| delta.zeros_like());
    v.check_shape(delta)?;
    for (vi, di) in v.values_mut().iter_mut().zip(delta.values()) {
        *vi = beta * *vi + di;
    }
    state.weights.add_assign(v)
}

/// Same server rule as FedAvg.
pub fn fedprox_update(state: &mut ServerState, delta: &ParamVector) -> Result<()> {
    fedavg_update(state, delta)
}

/// Adam-style server step without bias correction:
/// `m = b1 m + (1 - b1) delta`, `v = b2 v + (1 - b2) delta^2`,
/// `W += eta m / (sqrt(v) + tau)`.
pub fn fedadam_update(
    state: &mut ServerState,
    delta: &ParamVector,
    beta1: f64,
    beta2: f64,
    eta: f64,
    tau: f64,
) -> Result<()> {
    state.weights.check_shape(delta)?;
    let (m, v) = state
        .adam
        .get_or_insert_with(|| (delta.zeros_like(), delta.zeros_like()));
    m.check_shape(delta)?;
    v.check_shape(delta)?;
    let moments = m.values_mut().iter_mut().zip(v.values_mut().iter_mut());
    for ((w, d), (mi, vi)) in state
        .weights
        .values_mut()
        .iter_mut()
        .zip(delta.values())
        .zip(moments)
    {
        *mi = beta1 * *mi + (1.0 - beta1) * d;
        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
        *w += eta * *mi / (vi.sqrt() + tau);
    }
    Ok(())
}
