//! The federated round loop.
//!
//! Each round: the server broadcasts the current (already noised) global
//! parameters, every client trains locally against them with the proximal
//! objective, clips to the norm bound, adds its calibrated Gaussian noise,
//! and the server forms the impact-weighted average, adds its own noise,
//! and records metrics on the model the clients will actually receive.
//!
//! Randomness discipline: every consumer owns a dedicated ChaCha stream of
//! the master seed, identified by `(purpose, round, client)`. Client tasks
//! may therefore run on any number of workers; the weighted reduction
//! always walks clients in index order, so results are bit-identical
//! regardless of parallelism.

use crate::config::ScenarioConfig;
use crate::data;
use crate::dp::NoiseCalibration;
use crate::error::{Error, Result};
use crate::model::{self, Batch, Dims, ParamVector};
use crate::schedule::ImpactSchedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Stream purposes for deriving independent RNG substreams.
#[derive(Debug, Clone, Copy)]
pub enum StreamPurpose {
    GlobalInit = 0,
    Partition = 1,
    Corruption = 2,
    Training = 3,
    ClientNoise = 4,
    ServerNoise = 5,
}

/// A ChaCha generator on the substream `(purpose, round, client)` of
/// `master`. Rounds and client ids must stay below 2^28.
pub fn stream_rng(
    master: u64,
    purpose: StreamPurpose,
    round: usize,
    client: usize,
) -> ChaCha20Rng {
    debug_assert!((round as u64) < (1 << 28) && (client as u64) < (1 << 28));
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(((purpose as u64) << 56) | ((round as u64) << 28) | client as u64);
    rng
}

/// Per-round record of everything the figures and the bound analysis need.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Impact-weighted training loss of the broadcast model.
    pub global_loss: f64,
    pub test_accuracy: f64,
    /// Norm of the impact-weighted sum of client noises.
    pub client_noise_norm: f64,
    pub server_noise_norm: f64,
    /// Achieved local inexactness per client, in client order.
    pub achieved_gammas: Vec<f64>,
    /// Norm of the impact-weighted gradient at the broadcast model.
    pub grad_norm_global: f64,
}

impl RoundMetrics {
    pub fn max_gamma(&self) -> f64 {
        self.achieved_gammas
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Heavier per-round capture used to estimate analysis constants.
#[derive(Debug, Clone)]
pub struct GradientSnapshot {
    pub round: usize,
    pub params: ParamVector,
    pub global_grad: ParamVector,
    pub local_grad_norms: Vec<f64>,
    /// `max_i ||grad l_i - grad L||` at the broadcast model.
    pub max_grad_divergence: f64,
    pub max_local_loss: f64,
    pub loss: f64,
}

/// Everything a finished run produced.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub metrics: Vec<RoundMetrics>,
    pub snapshots: Vec<GradientSnapshot>,
}

/// Mutable state carried between rounds.
#[derive(Debug, Clone)]
pub struct FederationState {
    pub global: ParamVector,
    pub round: usize,
    pub master_seed: u64,
}

impl FederationState {
    /// Fresh state with Glorot-initialized global parameters drawn from the
    /// master seed's init stream.
    pub fn init(dims: Dims, master_seed: u64) -> Self {
        let mut rng = stream_rng(master_seed, StreamPurpose::GlobalInit, 0, 0);
        Self {
            global: ParamVector::glorot_from_rng(dims, &mut rng),
            round: 0,
            master_seed,
        }
    }
}

/// Local-training hyperparameters shared by all clients.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub mu: f64,
    pub learning_rate: f64,
    pub local_epochs: u32,
    /// `None` trains on the full local batch each step.
    pub batch_size: Option<usize>,
}

/// Immutable inputs of one round.
pub struct RoundContext<'a> {
    pub clients: &'a [Batch],
    pub impacts: &'a [f64],
    pub calibration: &'a NoiseCalibration,
    /// Norm bound applied to uploads; ignored in non-private rounds.
    pub clip_bound: f64,
    /// When false, clipping and both noise injections are skipped entirely.
    pub private: bool,
    pub options: &'a TrainOptions,
    pub test_set: Option<&'a Batch>,
    pub record_snapshot: bool,
}

/// Impact-weighted average `sum_i p_i x_i`, reduced in client-index order.
pub fn aggregate(client_params: &[ParamVector], impacts: &[f64]) -> Result<ParamVector> {
    if client_params.len() != impacts.len() {
        return Err(Error::DimensionMismatch {
            what: "client params vs impacts",
            expected: impacts.len(),
            actual: client_params.len(),
        });
    }
    crate::schedule::validate_impacts(impacts, None)?;
    let mut out = ParamVector::zeros(client_params[0].dims);
    for (x, &p) in client_params.iter().zip(impacts) {
        out.axpy(p, x);
    }
    Ok(out)
}

fn gaussian_noise(dims: Dims, sigma: f64, rng: &mut ChaCha20Rng) -> ParamVector {
    let mut noise = ParamVector::zeros(dims);
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for v in &mut noise.values {
            *v = normal.sample(rng);
        }
    }
    noise
}

/// Execute one aggregation round, advancing `state` to the next broadcast
/// model and returning its metrics.
pub fn run_round(
    state: &mut FederationState,
    ctx: &RoundContext<'_>,
) -> Result<(RoundMetrics, Option<GradientSnapshot>)> {
    let round = state.round;
    if ctx.clients.len() != ctx.impacts.len() {
        return Err(Error::DimensionMismatch {
            what: "clients vs impacts",
            expected: ctx.impacts.len(),
            actual: ctx.clients.len(),
        });
    }
    let dims = state.global.dims;
    let anchor = &state.global;
    let opts = ctx.options;
    let master = state.master_seed;

    // fan out: each client trains from the broadcast model, clips, and
    // draws its uplink noise from a dedicated stream
    let uploads: Vec<(ParamVector, Option<ParamVector>, f64)> = ctx
        .clients
        .par_iter()
        .enumerate()
        .map(|(i, local_data)| {
            let train_seed = stream_rng(master, StreamPurpose::Training, round, i).gen::<u64>();
            let (mut trained, gamma) = model::local_train(
                anchor,
                local_data,
                anchor,
                opts.mu,
                opts.learning_rate,
                opts.local_epochs,
                opts.batch_size,
                train_seed,
            )
            .map_err(|e| match e {
                Error::Divergence { epoch, .. } => Error::Divergence {
                    round: Some(round),
                    epoch,
                },
                other => other,
            })?;
            let noise = if ctx.private {
                model::clip_in_place(&mut trained, ctx.clip_bound);
                let mut rng = stream_rng(master, StreamPurpose::ClientNoise, round, i);
                Some(gaussian_noise(dims, ctx.calibration.client_sigma, &mut rng))
            } else {
                None
            };
            Ok((trained, noise, gamma))
        })
        .collect::<Result<Vec<_>>>()?;

    // fan in: fixed-order weighted reduction
    let mut aggregated = ParamVector::zeros(dims);
    let mut client_noise = ParamVector::zeros(dims);
    for ((params, noise, _), &p) in uploads.iter().zip(ctx.impacts) {
        aggregated.axpy(p, params);
        if let Some(n) = noise {
            client_noise.axpy(p, n);
        }
    }
    let client_noise_norm = client_noise.norm();
    aggregated.axpy(1.0, &client_noise);
    if ctx.private {
        debug_assert!(aggregated.norm() <= ctx.clip_bound + client_noise_norm + 1e-9);
    }

    let server_noise = if ctx.private {
        let mut rng = stream_rng(master, StreamPurpose::ServerNoise, round, 0);
        gaussian_noise(dims, ctx.calibration.server_sigma, &mut rng)
    } else {
        ParamVector::zeros(dims)
    };
    let server_noise_norm = server_noise.norm();
    aggregated.axpy(1.0, &server_noise);

    state.global = aggregated;
    state.round += 1;

    // metrics are taken on the model the clients will actually receive
    let broadcast = &state.global;
    let need_all_clients = ctx.record_snapshot;
    let per_client: Vec<Option<(ParamVector, f64)>> = ctx
        .clients
        .par_iter()
        .enumerate()
        .map(|(i, local_data)| {
            if ctx.impacts[i] == 0.0 && !need_all_clients {
                return Ok(None);
            }
            model::gradient_with_loss(broadcast, local_data).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut global_loss = 0.0;
    let mut global_grad = ParamVector::zeros(dims);
    for (entry, &p) in per_client.iter().zip(ctx.impacts) {
        if let Some((grad, loss)) = entry {
            global_loss += p * loss;
            global_grad.axpy(p, grad);
        }
    }
    let grad_norm_global = global_grad.norm();

    let test_accuracy = match ctx.test_set {
        Some(test) => model::evaluate(broadcast, test)?.1,
        None => 0.0,
    };

    let achieved_gammas: Vec<f64> = uploads.iter().map(|(_, _, g)| *g).collect();
    let snapshot = if ctx.record_snapshot {
        let mut max_div = 0.0f64;
        let mut max_loss = 0.0f64;
        let mut local_grad_norms = Vec::with_capacity(per_client.len());
        for entry in &per_client {
            let (grad, loss) = entry.as_ref().expect("all clients computed");
            let mut diff = grad.clone();
            diff.axpy(-1.0, &global_grad);
            max_div = max_div.max(diff.norm());
            max_loss = max_loss.max(*loss);
            local_grad_norms.push(grad.norm());
        }
        Some(GradientSnapshot {
            round,
            params: broadcast.clone(),
            global_grad,
            local_grad_norms,
            max_grad_divergence: max_div,
            max_local_loss: max_loss,
            loss: global_loss,
        })
    } else {
        None
    };

    Ok((
        RoundMetrics {
            round,
            global_loss,
            test_accuracy,
            client_noise_norm,
            server_noise_norm,
            achieved_gammas,
            grad_norm_global,
        },
        snapshot,
    ))
}

/// A fully materialized scenario, ready to run.
pub struct Experiment {
    /// `(first_round, one batch per client)` corruption phases.
    pub client_phases: Vec<(usize, Vec<Batch>)>,
    pub schedule: ImpactSchedule,
    pub calibration: NoiseCalibration,
    pub clip_bound: f64,
    pub private: bool,
    pub options: TrainOptions,
    pub test_set: Batch,
    pub dims: Dims,
    pub master_seed: u64,
    pub record_snapshots: bool,
    pub rounds: usize,
}

impl Experiment {
    /// Build datasets, partition, corruption phases, schedule, and noise
    /// calibration from a validated configuration.
    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = config.load_datasets()?;
        let sizes = config.dataset_sizes();
        let partition_seed =
            stream_rng(config.seed, StreamPurpose::Partition, 0, 0).gen::<u64>();
        let partition = if config.label_skew {
            data::partition_label_skew(&train.labels, &sizes, partition_seed)?
        } else {
            data::partition(train.len(), &sizes, partition_seed)?
        };

        let mut client_phases = Vec::new();
        for (phase_idx, (start_round, densities)) in
            config.corruption_phases()?.into_iter().enumerate()
        {
            let mut batches = Vec::with_capacity(sizes.len());
            for (client, indices) in partition.client_indices.iter().enumerate() {
                let mut batch = train.batch_for(indices);
                let density = densities[client];
                if density > 0.0 {
                    let seed = stream_rng(config.seed, StreamPurpose::Corruption, phase_idx, client)
                        .gen::<u64>();
                    data::salt_and_pepper(&mut batch.images, density, seed)?;
                }
                batches.push(batch);
            }
            client_phases.push((start_round, batches));
        }

        let schedule = config.schedule()?;
        let (calibration, clip_bound, private) = match config.privacy_params() {
            Some(params) => {
                let cal = NoiseCalibration::for_schedule(&params, &schedule)?;
                (cal, params.clip_bound, true)
            }
            None => (NoiseCalibration::silent(), f64::INFINITY, false),
        };

        let test_set = Batch::new(test.images, test.labels)?;
        Ok(Self {
            client_phases,
            schedule,
            calibration,
            clip_bound,
            private,
            options: TrainOptions {
                mu: config.mu,
                learning_rate: config.learning_rate,
                local_epochs: config.local_epochs,
                batch_size: config.batch_size,
            },
            test_set,
            dims: Dims::mlp(config.hidden_size),
            master_seed: config.seed,
            record_snapshots: config.record_snapshots,
            rounds: config.rounds,
        })
    }

    fn batches_for_round(&self, round: usize) -> &[Batch] {
        let mut current = &self.client_phases[0].1;
        for (start, batches) in &self.client_phases {
            if *start <= round {
                current = batches;
            }
        }
        current
    }

    /// Run all rounds, returning the metrics (and snapshots when enabled).
    pub fn run(&self) -> Result<RunTrace> {
        let mut trace = RunTrace::default();
        if self.rounds == 0 {
            return Ok(trace);
        }
        let mut state = FederationState::init(self.dims, self.master_seed);
        for round in 0..self.rounds {
            let ctx = RoundContext {
                clients: self.batches_for_round(round),
                impacts: self.schedule.row(round),
                calibration: &self.calibration,
                clip_bound: self.clip_bound,
                private: self.private,
                options: &self.options,
                test_set: Some(&self.test_set),
                record_snapshot: self.record_snapshots,
            };
            let (metrics, snapshot) = run_round(&mut state, &ctx)?;
            trace.metrics.push(metrics);
            if let Some(s) = snapshot {
                trace.snapshots.push(s);
            }
        }
        Ok(trace)
    }
}

/// Run one experiment described by `config` from start to finish.
pub fn run_experiment(config: &ScenarioConfig) -> Result<RunTrace> {
    Experiment::from_config(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use approx::assert_relative_eq;

    fn tiny_dims() -> Dims {
        Dims {
            input: 8,
            hidden: 3,
            output: 10,
        }
    }

    fn tiny_clients(n: usize, samples: usize) -> Vec<Batch> {
        let ds = synthetic::generate(n * samples, 5);
        (0..n)
            .map(|i| {
                let idx: Vec<usize> = (i * samples..(i + 1) * samples).collect();
                let batch = ds.batch_for(&idx);
                // shrink to the tiny input width for cheap tests
                Batch {
                    images: batch.images.slice(ndarray::s![.., ..8]).to_owned(),
                    labels: batch.labels,
                }
            })
            .collect()
    }

    fn params_with(dims: Dims, seed: u64) -> ParamVector {
        ParamVector::glorot(dims, seed)
    }

    #[test]
    fn aggregate_of_identical_models_is_identity() {
        let dims = tiny_dims();
        let x = params_with(dims, 1);
        let out = aggregate(&[x.clone(), x.clone(), x.clone()], &[0.2, 0.5, 0.3]).unwrap();
        for (a, b) in out.values.iter().zip(&x.values) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn aggregate_midpoint() {
        let dims = tiny_dims();
        let mut x1 = ParamVector::zeros(dims);
        let mut x2 = ParamVector::zeros(dims);
        for v in &mut x1.values {
            *v = 1.0;
        }
        for v in &mut x2.values {
            *v = 3.0;
        }
        let out = aggregate(&[x1, x2], &[0.5, 0.5]).unwrap();
        assert!(out.values.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn aggregate_ignores_zero_impact_clients() {
        let dims = tiny_dims();
        let x1 = params_with(dims, 1);
        let mut x2 = params_with(dims, 2);
        let base = aggregate(&[x1.clone(), x2.clone()], &[1.0, 0.0]).unwrap();
        for v in &mut x2.values {
            *v = 1e9; // arbitrary perturbation of the ignored client
        }
        let perturbed = aggregate(&[x1, x2], &[1.0, 0.0]).unwrap();
        assert_eq!(base.values, perturbed.values);
    }

    #[test]
    fn aggregate_rejects_length_mismatch() {
        let dims = tiny_dims();
        let x = params_with(dims, 1);
        assert!(matches!(
            aggregate(&[x], &[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn aggregation_is_linear() {
        let dims = tiny_dims();
        let xs: Vec<ParamVector> = (0..3).map(|i| params_with(dims, i)).collect();
        let ys: Vec<ParamVector> = (10..13).map(|i| params_with(dims, i)).collect();
        let impacts = [0.1, 0.6, 0.3];
        let (a, b) = (0.7, -1.3);
        let combo: Vec<ParamVector> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let mut c = ParamVector::zeros(dims);
                c.axpy(a, x);
                c.axpy(b, y);
                c
            })
            .collect();
        let left = aggregate(&combo, &impacts).unwrap();
        let mut right = ParamVector::zeros(dims);
        right.axpy(a, &aggregate(&xs, &impacts).unwrap());
        right.axpy(b, &aggregate(&ys, &impacts).unwrap());
        for (l, r) in left.values.iter().zip(&right.values) {
            assert_relative_eq!(l, r, epsilon = 1e-10);
        }
    }

    fn silent_ctx<'a>(
        clients: &'a [Batch],
        impacts: &'a [f64],
        calibration: &'a NoiseCalibration,
        options: &'a TrainOptions,
    ) -> RoundContext<'a> {
        RoundContext {
            clients,
            impacts,
            calibration,
            clip_bound: f64::INFINITY,
            private: false,
            options,
            test_set: None,
            record_snapshot: false,
        }
    }

    #[test]
    fn zero_lr_zero_noise_is_a_fixed_point() {
        let clients = tiny_clients(4, 6);
        let impacts = vec![0.25; 4];
        let calibration = NoiseCalibration::silent();
        let options = TrainOptions {
            mu: 0.01,
            learning_rate: 0.0,
            local_epochs: 2,
            batch_size: None,
        };
        let mut state = FederationState::init(tiny_dims(), 3);
        let before = state.global.clone();
        for _ in 0..3 {
            let ctx = silent_ctx(&clients, &impacts, &calibration, &options);
            run_round(&mut state, &ctx).unwrap();
        }
        assert_eq!(state.global.values, before.values);
    }

    #[test]
    fn single_client_round_reduces_to_local_sgd() {
        let clients = tiny_clients(1, 8);
        let impacts = vec![1.0];
        let calibration = NoiseCalibration::silent();
        let options = TrainOptions {
            mu: 0.0,
            learning_rate: 0.05,
            local_epochs: 3,
            batch_size: None,
        };
        let mut state = FederationState::init(tiny_dims(), 9);
        let start = state.global.clone();
        let ctx = silent_ctx(&clients, &impacts, &calibration, &options);
        run_round(&mut state, &ctx).unwrap();

        let seed = stream_rng(9, StreamPurpose::Training, 0, 0).gen::<u64>();
        let (expected, _) =
            model::local_train(&start, &clients[0], &start, 0.0, 0.05, 3, None, seed).unwrap();
        assert_eq!(state.global.values, expected.values);
    }

    #[test]
    fn round_is_bitwise_deterministic_across_worker_counts() {
        let clients = tiny_clients(6, 5);
        let impacts = vec![1.0 / 6.0; 6];
        let params = crate::dp::PrivacyParams {
            epsilon: 5.0,
            delta: 0.01,
            clip_bound: 2.0,
            revelations: 1,
            rounds: 4,
            dataset_sizes: vec![5; 6],
        };
        let calibration = NoiseCalibration::compute(&params, &impacts).unwrap();
        let options = TrainOptions {
            mu: 0.01,
            learning_rate: 0.02,
            local_epochs: 2,
            batch_size: Some(2),
        };
        let run_with_threads = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut state = FederationState::init(tiny_dims(), 77);
                let mut all = Vec::new();
                for _ in 0..4 {
                    let ctx = RoundContext {
                        clients: &clients,
                        impacts: &impacts,
                        calibration: &calibration,
                        clip_bound: params.clip_bound,
                        private: true,
                        options: &options,
                        test_set: None,
                        record_snapshot: false,
                    };
                    let (m, _) = run_round(&mut state, &ctx).unwrap();
                    all.push(m);
                }
                (state.global.values.clone(), all)
            })
        };
        let (g1, m1) = run_with_threads(1);
        let (g4, m4) = run_with_threads(4);
        assert_eq!(g1, g4);
        assert_eq!(m1, m4);
    }

    #[test]
    fn aggregated_client_noise_norm_matches_expectation() {
        // lr = 0 and zero local epochs isolate the noise pipeline
        let n_clients = 60;
        let clients = tiny_clients(n_clients, 2);
        let impacts = vec![1.0 / n_clients as f64; n_clients];
        let params = crate::dp::PrivacyParams {
            epsilon: 5.0,
            delta: 0.01,
            clip_bound: 1.0,
            revelations: 1,
            rounds: 200,
            dataset_sizes: vec![50; n_clients],
        };
        let calibration = NoiseCalibration::compute(&params, &impacts).unwrap();
        assert_relative_eq!(calibration.client_sigma, 0.024860091680737915, epsilon = 1e-12);
        let options = TrainOptions {
            mu: 0.0,
            learning_rate: 0.0,
            local_epochs: 0,
            batch_size: None,
        };
        // even parameter count keeps the norm-expectation formula simple
        let dims = Dims {
            input: 8,
            hidden: 4,
            output: 10,
        };
        let d = dims.param_count();
        assert_eq!(d % 2, 0);

        let mut state = FederationState::init(dims, 123);
        let mut mean_norm = 0.0;
        let rounds = 200;
        for _ in 0..rounds {
            let ctx = RoundContext {
                clients: &clients,
                impacts: &impacts,
                calibration: &calibration,
                clip_bound: params.clip_bound,
                private: true,
                options: &options,
                test_set: None,
                record_snapshot: false,
            };
            let (m, _) = run_round(&mut state, &ctx).unwrap();
            mean_norm += m.client_noise_norm;
            // keep the state from drifting into huge norms: reset
            state.global = ParamVector::zeros(dims);
        }
        mean_norm /= rounds as f64;

        // E||N(0, I_d)|| = sqrt(2) Gamma((d+1)/2) / Gamma(d/2)
        let mut ratio = std::f64::consts::PI.sqrt(); // Gamma(1/2)
        let half = d / 2;
        for j in 1..=half {
            ratio *= j as f64 - 0.5;
            if j < half {
                ratio /= j as f64;
            }
        }
        // d is even here: ratio = Gamma((d+1)/2) / Gamma(d/2)
        let expected = 2.0f64.sqrt() * ratio * calibration.agg_client_variance.sqrt();
        assert!(
            (mean_norm - expected).abs() / expected < 0.05,
            "mean {mean_norm} vs expected {expected}"
        );
    }

    #[test]
    fn divergence_error_carries_round_index() {
        let clients = tiny_clients(2, 4);
        let impacts = vec![0.5, 0.5];
        let calibration = NoiseCalibration::silent();
        let options = TrainOptions {
            mu: 0.0,
            learning_rate: 1e155,
            local_epochs: 2,
            batch_size: None,
        };
        let mut state = FederationState::init(tiny_dims(), 5);
        state.round = 7;
        let ctx = silent_ctx(&clients, &impacts, &calibration, &options);
        match run_round(&mut state, &ctx) {
            Err(Error::Divergence {
                round: Some(7),
                epoch: _,
            }) => {}
            other => panic!("expected divergence at round 7, got {other:?}"),
        }
    }
}
