//! Subspace-descent training: user-side and item-side parameter blocks
//! are updated in strictly alternating phases (the frozen side's chain
//! states are constants within a phase), with per-block ADAM moments,
//! inverted dropout on hidden outputs, and a grid search over the
//! alignment weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, Split};
use crate::error::{Error, Result};
use crate::eval::rmse_over_events;
use crate::graph::{build_graph, ExplainabilityGraph};
use crate::model::{forward, forward_chain, DropoutPlan, ModelDims, ModelParams, Side, StateTrace};
use crate::objective::{grad, loss, sample_pairs, ObjectiveConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    /// Outer rounds; each runs one user phase and one item phase.
    pub rounds: usize,
    /// Gradient steps per phase.
    pub phase_steps: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 30,
            phase_steps: 50,
            learning_rate: 0.005,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout_rate: 0.0,
            seed: 42,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::ConfigInvalid(format!(
                "dropout_rate must lie in [0,1), got {}",
                self.dropout_rate
            )));
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::ConfigInvalid(format!(
                    "{name} must lie in [0,1), got {v}"
                )));
            }
        }
        if self.phase_steps == 0 {
            return Err(Error::ConfigInvalid("phase_steps must be at least 1".into()));
        }
        self.objective.validate()
    }
}

/// Per-block first/second moments with individual step counters, so bias
/// correction tracks how often each block was actually updated.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: Vec<u64>,
}

impl AdamState {
    pub fn new(template: &ModelParams) -> AdamState {
        let blocks = template.blocks();
        AdamState {
            m: blocks
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect(),
            v: blocks
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect(),
            steps: vec![0; blocks.len()],
        }
    }
}

/// One ADAM update with bias correction on a single parameter block.
/// `step` is the 1-based count of updates this block has received.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    theta: &mut Tensor,
    g: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    let td = theta.data_mut();
    let md = m.data_mut();
    let vd = v.data_mut();
    let gd = g.data();
    for idx in 0..td.len() {
        md[idx] = beta1 * md[idx] + (1.0 - beta1) * gd[idx];
        vd[idx] = beta2 * vd[idx] + (1.0 - beta2) * gd[idx] * gd[idx];
        let m_hat = md[idx] / bc1;
        let v_hat = vd[idx] / bc2;
        td[idx] -= lr * m_hat / (v_hat.sqrt() + eps);
        if !td[idx].is_finite() {
            return Err(Error::NonFiniteValue("adam update".into()));
        }
    }
    Ok(())
}

/// Applies ADAM to every block on `side`, leaving the other side's blocks
/// untouched (bit-identical).
fn apply_side_update(
    params: &mut ModelParams,
    grads: &ModelParams,
    side: Side,
    adam: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let grad_blocks = grads.blocks();
    for (idx, (_, block_side, theta)) in params.blocks_mut().into_iter().enumerate() {
        if block_side != side {
            continue;
        }
        adam.steps[idx] += 1;
        adam_step(
            theta,
            grad_blocks[idx].2,
            &mut adam.m[idx],
            &mut adam.v[idx],
            adam.steps[idx],
            cfg.learning_rate,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        )?;
    }
    Ok(())
}

/// One structured log record per phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub round: usize,
    pub phase: String,
    pub loss: f64,
    pub rmse_val: Option<f64>,
    pub wallclock_ms: u64,
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::User => "user",
        Side::Item => "item",
    }
}

/// Runs `phase_steps` gradient steps on one side's blocks. The frozen
/// side's chain is recomputed once up front and held fixed; the active
/// side's chain is recomputed every step. Returns the exact (dropout-free)
/// loss after the phase.
pub fn subspace_phase(
    params: &mut ModelParams,
    side: Side,
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    cfg.validate()?;
    let dims = params.dims;

    // The two chains never feed each other; within a phase the frozen
    // side's states are plain constants.
    let mut trace = StateTrace {
        user: forward_chain(params, ds, Side::User, None)?,
        item: forward_chain(params, ds, Side::Item, None)?,
        dropout: None,
    };

    let n_pairs = graph.temporal_entries().len();
    for _ in 0..cfg.phase_steps {
        let plan = if cfg.dropout_rate > 0.0 {
            Some(DropoutPlan::draw(&dims, cfg.dropout_rate, rng))
        } else {
            None
        };
        match side {
            Side::User => {
                trace.user = forward_chain(params, ds, Side::User, plan.as_ref())?;
            }
            Side::Item => {
                trace.item = forward_chain(params, ds, Side::Item, plan.as_ref())?;
            }
        }
        trace.dropout = plan;
        let sample = sample_pairs(n_pairs, cfg.objective.pair_budget, rng);
        let (_, grads) = grad(
            &trace,
            params,
            ds,
            graph,
            &cfg.objective,
            sample.as_ref(),
            Some(side),
        )?;
        apply_side_update(params, &grads, side, adam, cfg)?;
    }

    // Exact end-of-phase loss, no dropout.
    match side {
        Side::User => trace.user = forward_chain(params, ds, Side::User, None)?,
        Side::Item => trace.item = forward_chain(params, ds, Side::Item, None)?,
    }
    trace.dropout = None;
    loss(&trace, params, ds, graph, &cfg.objective)
}

/// Event indices of each user's last train epoch: the in-train validation
/// tail that phase records report RMSE against.
fn validation_indices(ds: &RatingDataset) -> Vec<usize> {
    let mut out = Vec::new();
    for user in 0..ds.num_users {
        let train: Vec<usize> = ds
            .user_events(user)
            .iter()
            .copied()
            .filter(|&i| ds.split(i) == Split::Train)
            .collect();
        if let Some(last_epoch) = train.iter().map(|&i| ds.epoch(i)).max() {
            out.extend(train.iter().copied().filter(|&i| ds.epoch(i) == last_epoch));
        }
    }
    out.sort_unstable();
    out
}

/// Full training run: seeded init, then strictly alternating user/item
/// phases for `rounds` rounds. Deterministic given the seed; bit-for-bit
/// at dropout 0.
pub fn fit(
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    dims: ModelDims,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<PhaseRecord>)> {
    fit_with_observer(ds, graph, dims, cfg, |_, _, _| {})
}

/// `fit` with a hook called after every phase; the observer sees the round
/// index, the side just updated, and the current parameters.
pub fn fit_with_observer<F>(
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    dims: ModelDims,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<(ModelParams, Vec<PhaseRecord>)>
where
    F: FnMut(usize, Side, &ModelParams),
{
    cfg.validate()?;
    dims.validate()?;
    let mut params = ModelParams::init(dims, cfg.seed)?;
    let mut adam = AdamState::new(&params);
    // Separate stream from the init draw so adding rounds never perturbs
    // initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let val_idx = validation_indices(ds);
    let mut log = Vec::with_capacity(cfg.rounds * 2);
    for round in 0..cfg.rounds {
        for side in [Side::User, Side::Item] {
            let started = std::time::Instant::now();
            let phase_loss = subspace_phase(&mut params, side, ds, graph, cfg, &mut adam, &mut rng)
                .map_err(|e| match e {
                    Error::NonFiniteValue(_) => Error::Diverged {
                        round,
                        phase: side_name(side),
                    },
                    other => other,
                })?;
            if !phase_loss.is_finite() {
                return Err(Error::Diverged {
                    round,
                    phase: side_name(side),
                });
            }
            let rmse_val = if val_idx.is_empty() {
                None
            } else {
                let trace = forward(&params, ds, None)?;
                rmse_over_events(&trace, &params, ds, val_idx.iter().copied())
            };
            log.push(PhaseRecord {
                round,
                phase: side_name(side).to_string(),
                loss: phase_loss,
                rmse_val,
                wallclock_ms: started.elapsed().as_millis() as u64,
            });
            observer(round, side, &params);
        }
    }
    Ok((params, log))
}

/// One grid-search cell.
#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    /// RMSE on the validation fold; `None` marks a diverged cell.
    pub rmse_val: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best_alpha: f64,
    pub best_beta: f64,
    pub cells: Vec<GridCell>,
}

/// Carves a validation fold out of the train split (each user's last train
/// epoch), trains one model per (α, β) cell on the remainder, and selects
/// the cell with the lowest validation RMSE. Ties prefer smaller α, then
/// smaller β. Diverged cells are marked failed and skipped.
pub fn grid_search(
    ds: &RatingDataset,
    dims: ModelDims,
    base_cfg: &TrainConfig,
    p: usize,
    normalized_similarity: bool,
    alphas: &[f64],
    betas: &[f64],
) -> Result<GridSearchResult> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::ConfigInvalid("grids must be non-empty".into()));
    }
    for &v in alphas.iter().chain(betas) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::ConfigInvalid(format!(
                "grid values must lie in [0,1], got {v}"
            )));
        }
    }

    // Inner dataset: train events only, validation tail re-tagged test.
    let train_idx: Vec<usize> = ds.train_indices().collect();
    if train_idx.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let val: std::collections::BTreeSet<usize> = validation_indices(ds).into_iter().collect();
    let tags: Vec<Split> = train_idx
        .iter()
        .map(|i| if val.contains(i) { Split::Test } else { Split::Train })
        .collect();
    let inner = ds.restricted_to(&train_idx, &tags)?;
    let reference = inner.last_train_epoch().ok_or(Error::EmptyDataset)?;
    let inner_graph = build_graph(&inner, p, reference, normalized_similarity);

    let mut alphas_sorted = alphas.to_vec();
    alphas_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut betas_sorted = betas.to_vec();
    betas_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut cells = Vec::new();
    let mut best: Option<(f64, f64, f64)> = None;
    for &alpha in &alphas_sorted {
        for &beta in &betas_sorted {
            let cfg = TrainConfig {
                objective: ObjectiveConfig {
                    alpha,
                    beta,
                    ..base_cfg.objective
                },
                ..*base_cfg
            };
            let rmse_val = match fit(&inner, &inner_graph, dims, &cfg) {
                Ok((params, _)) => {
                    let trace = forward(&params, &inner, None)?;
                    rmse_over_events(&trace, &params, &inner, inner.test_indices())
                }
                Err(Error::Diverged { .. }) => None,
                Err(other) => return Err(other),
            };
            if let Some(r) = rmse_val {
                let better = match best {
                    None => true,
                    Some((_, _, best_r)) => r < best_r,
                };
                if better {
                    best = Some((alpha, beta, r));
                }
            }
            cells.push(GridCell {
                alpha,
                beta,
                rmse_val,
            });
        }
    }
    let (best_alpha, best_beta, _) = best.ok_or_else(|| Error::Diverged {
        round: 0,
        phase: "grid",
    })?;
    Ok(GridSearchResult {
        best_alpha,
        best_beta,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth, SynthConfig};
    use crate::model::ModelDims;

    fn small_setup() -> (RatingDataset, ExplainabilityGraph, ModelDims) {
        let ds = synth(&SynthConfig {
            num_users: 8,
            num_items: 6,
            num_epochs: 3,
            density: 0.6,
            seed: 7,
            ..SynthConfig::default()
        })
        .unwrap()
        .split_temporal(0.25)
        .unwrap();
        let graph = build_graph(&ds, 3, ds.last_train_epoch().unwrap(), false);
        let dims = ModelDims {
            hidden: 3,
            input_dim: 3,
            dynamic_dim: 2,
            stationary_dim: 2,
            ..ModelDims::for_dataset(&ds)
        };
        (ds, graph, dims)
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut theta = Tensor::from_vec(vec![0.3, -0.7]);
        let before = theta.clone();
        let g = Tensor::zeros(&[2]);
        let mut m = Tensor::zeros(&[2]);
        let mut v = Tensor::zeros(&[2]);
        adam_step(&mut theta, &g, &mut m, &mut v, 1, 0.01, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn adam_first_step_hand_value() {
        // θ = 0.1, g = 5, lr = 0.001: m̂ = 5, v̂ = 25, update ≈ -0.001.
        let mut theta = Tensor::from_vec(vec![0.1]);
        let g = Tensor::from_vec(vec![5.0]);
        let mut m = Tensor::zeros(&[1]);
        let mut v = Tensor::zeros(&[1]);
        adam_step(&mut theta, &g, &mut m, &mut v, 1, 0.001, 0.9, 0.999, 1e-8).unwrap();
        assert!((theta.data()[0] - 0.099).abs() < 1e-6, "{}", theta.data()[0]);
    }

    #[test]
    fn adam_constant_gradient_shrinks_theta() {
        let mut theta = Tensor::from_vec(vec![1.0]);
        let g = Tensor::from_vec(vec![2.0]);
        let mut m = Tensor::zeros(&[1]);
        let mut v = Tensor::zeros(&[1]);
        let mut prev = theta.data()[0];
        for step in 1..=2 {
            adam_step(&mut theta, &g, &mut m, &mut v, step, 0.01, 0.9, 0.999, 1e-8).unwrap();
            assert!(theta.data()[0] < prev);
            prev = theta.data()[0];
        }
    }

    #[test]
    fn phase_freezes_other_side() {
        let (ds, graph, dims) = small_setup();
        let cfg = TrainConfig {
            rounds: 1,
            phase_steps: 3,
            ..TrainConfig::default()
        };
        let mut params = ModelParams::init(dims, 5).unwrap();
        let mut adam = AdamState::new(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let before = params.clone();
        subspace_phase(&mut params, Side::User, &ds, &graph, &cfg, &mut adam, &mut rng).unwrap();
        for ((name, side, after), (_, _, orig)) in
            params.blocks().into_iter().zip(before.blocks())
        {
            if side == Side::Item {
                assert_eq!(after, orig, "item block {name} changed in user phase");
            } else {
                assert_ne!(after, orig, "user block {name} did not move");
            }
        }
    }

    #[test]
    fn one_phase_step_decreases_loss() {
        for seed in 0..5u64 {
            let ds = synth(&SynthConfig {
                num_users: 6,
                num_items: 5,
                num_epochs: 3,
                density: 0.6,
                seed: 100 + seed,
                ..SynthConfig::default()
            })
            .unwrap();
            let graph = build_graph(&ds, 2, ds.last_train_epoch().unwrap(), false);
            let dims = ModelDims {
                hidden: 3,
                input_dim: 3,
                dynamic_dim: 2,
                stationary_dim: 2,
                ..ModelDims::for_dataset(&ds)
            };
            let cfg = TrainConfig {
                rounds: 1,
                phase_steps: 1,
                learning_rate: 1e-3,
                seed,
                ..TrainConfig::default()
            };
            let mut params = ModelParams::init(dims, seed).unwrap();
            let trace = forward(&params, &ds, None).unwrap();
            let before = loss(&trace, &params, &ds, &graph, &cfg.objective).unwrap();
            let mut adam = AdamState::new(&params);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let after =
                subspace_phase(&mut params, Side::User, &ds, &graph, &cfg, &mut adam, &mut rng)
                    .unwrap();
            assert!(after < before, "seed {seed}: {after} !< {before}");
        }
    }

    #[test]
    fn zero_rounds_returns_untouched_init() {
        let (ds, graph, dims) = small_setup();
        let cfg = TrainConfig {
            rounds: 0,
            ..TrainConfig::default()
        };
        let (params, log) = fit(&ds, &graph, dims, &cfg).unwrap();
        assert_eq!(params, ModelParams::init(dims, cfg.seed).unwrap());
        assert!(log.is_empty());
    }

    #[test]
    fn fit_is_deterministic_at_zero_dropout() {
        let (ds, graph, dims) = small_setup();
        let cfg = TrainConfig {
            rounds: 2,
            phase_steps: 4,
            ..TrainConfig::default()
        };
        let (a, _) = fit(&ds, &graph, dims, &cfg).unwrap();
        let (b, _) = fit(&ds, &graph, dims, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_is_deterministic_under_dropout_with_same_seed() {
        let (ds, graph, dims) = small_setup();
        let cfg = TrainConfig {
            rounds: 1,
            phase_steps: 3,
            dropout_rate: 0.3,
            ..TrainConfig::default()
        };
        let (a, _) = fit(&ds, &graph, dims, &cfg).unwrap();
        let (b, _) = fit(&ds, &graph, dims, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_beats_global_mean_on_planted_data() {
        let ds = synth(&SynthConfig {
            num_users: 15,
            num_items: 12,
            num_epochs: 3,
            density: 0.7,
            rank: 1,
            drift: 0.0,
            noise_sd: 0.0,
            seed: 11,
            ..SynthConfig::default()
        })
        .unwrap();
        let graph = build_graph(&ds, 4, ds.last_train_epoch().unwrap(), false);
        let dims = ModelDims {
            hidden: 4,
            input_dim: 4,
            dynamic_dim: 4,
            stationary_dim: 4,
            ..ModelDims::for_dataset(&ds)
        };
        let cfg = TrainConfig {
            rounds: 20,
            phase_steps: 20,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let (params, _) = fit(&ds, &graph, dims, &cfg).unwrap();
        let trace = forward(&params, &ds, None).unwrap();
        let train_idx: Vec<usize> = ds.train_indices().collect();
        let model_rmse =
            rmse_over_events(&trace, &params, &ds, train_idx.iter().copied()).unwrap();

        let mean: f64 = train_idx
            .iter()
            .map(|&i| ds.events()[i].rating as f64)
            .sum::<f64>()
            / train_idx.len() as f64;
        let mean_rmse = (train_idx
            .iter()
            .map(|&i| {
                let e = ds.events()[i].rating as f64 - mean;
                e * e
            })
            .sum::<f64>()
            / train_idx.len() as f64)
            .sqrt();
        assert!(
            model_rmse < mean_rmse,
            "model {model_rmse} vs mean {mean_rmse}"
        );
    }

    #[test]
    fn loss_is_mostly_nonincreasing_across_phases() {
        let mut good_pairs = 0usize;
        let mut total_pairs = 0usize;
        for seed in 0..5u64 {
            let ds = synth(&SynthConfig {
                num_users: 10,
                num_items: 8,
                num_epochs: 3,
                density: 0.5,
                seed: 50 + seed,
                ..SynthConfig::default()
            })
            .unwrap()
            .split_temporal(0.25)
            .unwrap();
            let graph = build_graph(&ds, 3, ds.last_train_epoch().unwrap(), false);
            let dims = ModelDims {
                hidden: 3,
                input_dim: 3,
                dynamic_dim: 2,
                stationary_dim: 2,
                ..ModelDims::for_dataset(&ds)
            };
            let cfg = TrainConfig {
                rounds: 5,
                phase_steps: 10,
                seed,
                ..TrainConfig::default()
            };
            let (_, log) = fit(&ds, &graph, dims, &cfg).unwrap();
            for w in log.windows(2) {
                total_pairs += 1;
                if w[1].loss <= w[0].loss + 1e-12 {
                    good_pairs += 1;
                }
            }
        }
        assert!(
            good_pairs as f64 >= 0.9 * total_pairs as f64,
            "{good_pairs}/{total_pairs} non-increasing phase pairs"
        );
    }

    #[test]
    fn grid_single_cell() {
        let (ds, _, dims) = small_setup();
        let cfg = TrainConfig {
            rounds: 1,
            phase_steps: 2,
            ..TrainConfig::default()
        };
        let res = grid_search(&ds, dims, &cfg, 3, false, &[0.4], &[0.6]).unwrap();
        assert_eq!(res.best_alpha, 0.4);
        assert_eq!(res.best_beta, 0.6);
        assert_eq!(res.cells.len(), 1);
        assert!(res.cells[0].rmse_val.is_some());
    }

    #[test]
    fn grid_two_by_two_has_finite_cells() {
        let (ds, _, dims) = small_setup();
        let cfg = TrainConfig {
            rounds: 1,
            phase_steps: 2,
            ..TrainConfig::default()
        };
        let res = grid_search(&ds, dims, &cfg, 3, false, &[0.0, 0.4], &[0.0, 0.6]).unwrap();
        assert_eq!(res.cells.len(), 4);
        for cell in &res.cells {
            assert!(cell.rmse_val.unwrap().is_finite());
        }
    }

    #[test]
    fn grid_rejects_out_of_range_values() {
        let (ds, _, dims) = small_setup();
        let cfg = TrainConfig::default();
        assert!(grid_search(&ds, dims, &cfg, 3, false, &[1.5], &[0.0]).is_err());
        assert!(grid_search(&ds, dims, &cfg, 3, false, &[], &[0.0]).is_err());
    }
}
