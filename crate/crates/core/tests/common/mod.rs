#![allow(dead_code)]

use fedsim_core::data_synth::{DataGenConfig, DataMode, SizeMode};
use fedsim_core::nn::{self, MlpConfig, Proximal};
use fedsim_core::orchestrator::ExperimentConfig;
use fedsim_core::params::ParamVector;
use fedsim_core::seed::SimRng;
use fedsim_core::strategies::{StrategyConfig, StrategyKind};
use fedsim_core::{NUM_CLASSES, NUM_FEATURES};
use rand::{Rng, SeedableRng};

pub fn full_config(
    kind: StrategyKind,
    mode: DataMode,
    size: SizeMode,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        strategy: StrategyConfig::new(kind),
        data: DataGenConfig {
            mode,
            size,
            seed,
            ..DataGenConfig::default()
        },
        seed,
        ..ExperimentConfig::default()
    }
}

/// A federation small enough for per-test runs.
pub fn small_config(kind: StrategyKind, clients: u32, n: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        rounds: 4,
        first_round_participants: 2.min(clients as usize),
        later_round_participants: (clients as usize).div_ceil(2),
        strategy: StrategyConfig::new(kind),
        data: DataGenConfig {
            num_clients: clients,
            size: SizeMode::Fixed(n),
            seed,
            ..DataGenConfig::default()
        },
        seed,
        ..ExperimentConfig::default()
    }
}

/// Mean cross entropy plus `(mu/2)||w - anchor||^2`, computed independently
/// of the library's forward pass.
pub fn reference_loss(
    mlp: &MlpConfig,
    w: &[f64],
    x: &[[f64; NUM_FEATURES]],
    y: &[usize],
    mu: f64,
    anchor: &[f64],
) -> f64 {
    let sizes = mlp.layer_sizes();
    let mut total = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let mut act: Vec<f64> = row.to_vec();
        let mut off = 0;
        for l in 0..3 {
            let (fi, fo) = (sizes[l], sizes[l + 1]);
            let weights = &w[off..off + fi * fo];
            let bias = &w[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut z: Vec<f64> = bias.to_vec();
            for i in 0..fi {
                for j in 0..fo {
                    z[j] += act[i] * weights[i * fo + j];
                }
            }
            if l < 2 {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = z;
        }
        let max = act.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + act.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - act[label];
    }
    let prox: f64 = w.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
    total / x.len() as f64 + 0.5 * mu * prox
}

/// Central differences resolve gradients only to about 1e-11 in f64, so
/// relative errors are taken against at least this magnitude.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Largest relative error between analytic and central-difference
/// gradients over `coords` random coordinates, for `instances` random
/// (params, batch) draws.
pub fn max_gradient_error(mu: f64, instances: usize, coords: usize, seed: u64) -> f64 {
    let mlp = MlpConfig::default();
    let mut rng = SimRng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let params = nn::init_model(&mut rng, &mlp);
        let mut anchor = params.clone();
        anchor
            .values_mut()
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.5..0.5));
        let batch = rng.random_range(4..24);
        let x: Vec<[f64; NUM_FEATURES]> = (0..batch)
            .map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5)))
            .collect();
        let y: Vec<usize> = (0..batch)
            .map(|_| rng.random_range(0..NUM_CLASSES))
            .collect();
        let prox = Proximal {
            mu,
            anchor: &anchor,
        };
        let grad = nn::backward(&mlp, &params, &x, &y, Some(prox)).unwrap();
        for _ in 0..coords {
            let j = rng.random_range(0..params.len());
            let mut w = params.values().to_vec();
            w[j] += h;
            let up = reference_loss(&mlp, &w, &x, &y, mu, anchor.values());
            w[j] -= 2.0 * h;
            let down = reference_loss(&mlp, &w, &x, &y, mu, anchor.values());
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.values()[j];
            let denom = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

pub fn max_abs_diff(a: &ParamVector, b: &ParamVector) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
