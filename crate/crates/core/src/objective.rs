//! The joint training objectives: squared rating error over the train
//! split, a temporal explainability alignment pulling ũ_it toward m̃_jt
//! wherever the temporal graph carries weight, a stationary alignment on
//! the profile embeddings, and L2 regularization.
//!
//! Two flavours differ only in the temporal alignment weight: the dry
//! objective uses a constant α, the fluid one uses exp(-α·age) so recent
//! evidence counts for more. Gradients are exact analytic derivatives,
//! backpropagated through both LSTM chains, and are pinned by the
//! central-difference checker.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use crate::data::{RatingDataset, Split};
use crate::error::{Error, Result};
use crate::graph::ExplainabilityGraph;
use crate::model::{
    ChainTrace, LstmParams, ModelParams, Side, StateTrace, GATE_COUNT,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveMode {
    /// Constant temporal alignment weight α.
    Dry,
    /// Exponentially decaying weight exp(-α·age), age counted back from
    /// the graph's reference epoch.
    Fluid,
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig {
    pub mode: ObjectiveMode,
    /// Dry: the alignment weight itself. Fluid: the decay rate.
    pub alpha: f64,
    pub beta: f64,
    pub lambda_reg: f64,
    /// Cap on temporal alignment pairs per evaluation; 0 means exact.
    pub pair_budget: usize,
    /// Alternative reading of the stationary alignment: measure distance
    /// between the reference-epoch dynamic latents instead of the
    /// stationary embeddings. Off by default.
    pub beta_on_dynamic: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            mode: ObjectiveMode::Fluid,
            alpha: 0.4,
            beta: 0.6,
            lambda_reg: 1e-4,
            pair_budget: 0,
            beta_on_dynamic: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_reg", self.lambda_reg),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::ConfigInvalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Additive pieces of the objective. `total` is what training minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub squared_error: f64,
    pub alpha_term: f64,
    pub beta_term: f64,
    pub regularizer: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.squared_error + self.alpha_term + self.beta_term + self.regularizer
    }
}

/// A uniform subsample of temporal-pair indices with the inverse-fraction
/// reweighting that keeps the sampled loss unbiased.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub indices: Vec<usize>,
    pub scale: f64,
}

/// Draws `budget` distinct pair indices out of `total`, sorted so the
/// summation order stays deterministic. Returns `None` when the budget
/// already covers everything (exact evaluation).
pub fn sample_pairs(total: usize, budget: usize, rng: &mut ChaCha8Rng) -> Option<PairSample> {
    if budget == 0 || budget >= total {
        return None;
    }
    let mut indices = sample(rng, total, budget).into_vec();
    indices.sort_unstable();
    Some(PairSample {
        indices,
        scale: total as f64 / budget as f64,
    })
}

#[inline]
fn temporal_pair_weight(cfg: &ObjectiveConfig, reference_epoch: usize, t: usize) -> f64 {
    match cfg.mode {
        ObjectiveMode::Dry => cfg.alpha,
        ObjectiveMode::Fluid => {
            let age = reference_epoch.saturating_sub(t) as f64;
            (-cfg.alpha * age).exp()
        }
    }
}

/// Objective value with the dry (constant-α) weighting.
pub fn loss_dry(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    let cfg = ObjectiveConfig {
        mode: ObjectiveMode::Dry,
        ..*cfg
    };
    Ok(loss_parts(trace, params, ds, graph, &cfg, None)?.total())
}

/// Objective value with the fluid (exponentially decaying) weighting.
pub fn loss_fluid(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    let cfg = ObjectiveConfig {
        mode: ObjectiveMode::Fluid,
        ..*cfg
    };
    Ok(loss_parts(trace, params, ds, graph, &cfg, None)?.total())
}

/// Objective value under `cfg.mode`, exact (no pair sampling).
pub fn loss(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    Ok(loss_parts(trace, params, ds, graph, cfg, None)?.total())
}

/// Loss decomposition. Every summation runs in a fixed canonical order
/// (event order, then sorted graph keys, then block order) so results are
/// bit-stable.
pub fn loss_parts(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    cfg: &ObjectiveConfig,
    pair_sample: Option<&PairSample>,
) -> Result<LossParts> {
    let (parts, _) = evaluate(trace, params, ds, graph, cfg, pair_sample, NeedGrad::No)?;
    Ok(parts)
}

/// Loss and the exact analytic gradient of every parameter block.
///
/// `active` restricts the expensive chain backpropagation to one side
/// when the other is frozen anyway; `None` differentiates everything.
pub fn grad(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    cfg: &ObjectiveConfig,
    pair_sample: Option<&PairSample>,
    active: Option<Side>,
) -> Result<(LossParts, ModelParams)> {
    let (parts, grads) = evaluate(
        trace,
        params,
        ds,
        graph,
        cfg,
        pair_sample,
        NeedGrad::Yes(active),
    )?;
    Ok((parts, grads.expect("gradient requested")))
}

enum NeedGrad {
    No,
    Yes(Option<Side>),
}

fn evaluate(
    trace: &StateTrace,
    params: &ModelParams,
    ds: &RatingDataset,
    graph: &ExplainabilityGraph,
    cfg: &ObjectiveConfig,
    pair_sample: Option<&PairSample>,
    need: NeedGrad,
) -> Result<(LossParts, Option<ModelParams>)> {
    cfg.validate()?;
    params.validate_against(ds)?;
    let dims = params.dims;
    let k = dims.dynamic_dim;
    let t_len = dims.num_epochs;
    let want_grad = matches!(need, NeedGrad::Yes(_));
    let active = match need {
        NeedGrad::Yes(side) => side,
        NeedGrad::No => None,
    };

    let mut grads = if want_grad {
        Some(ModelParams::zeros(dims))
    } else {
        None
    };
    // Loss gradient w.r.t. the projected latents, accumulated per entity
    // and epoch, then pushed through the projections and the chains.
    let mut d_uproj = vec![vec![Tensor::zeros(&[k]); t_len]; dims.num_users];
    let mut d_iproj = vec![vec![Tensor::zeros(&[k]); t_len]; dims.num_items];

    // Rating term over observed train events.
    let mut squared_error = 0.0;
    for idx in 0..ds.len() {
        if ds.split(idx) != Split::Train {
            continue;
        }
        let ev = ds.events()[idx];
        let t = ds.epoch(idx);
        let pred = crate::model::predict(trace, params, ev.user, ev.item, t);
        let e = pred - ev.rating as f64;
        squared_error += e * e;
        if let Some(g) = grads.as_mut() {
            let two_e = 2.0 * e;
            d_uproj[ev.user][t].add_scaled(&trace.item.proj[ev.item][t], two_e)?;
            d_iproj[ev.item][t].add_scaled(&trace.user.proj[ev.user][t], two_e)?;
            let m_row = params.item_stationary.row(ev.item);
            let u_row = params.user_stationary.row(ev.user);
            for (gu, m) in g.user_stationary.row_mut(ev.user).iter_mut().zip(m_row) {
                *gu += two_e * m;
            }
            for (gm, u) in g.item_stationary.row_mut(ev.item).iter_mut().zip(u_row) {
                *gm += two_e * u;
            }
        }
    }

    // Temporal alignment term over positive-weight graph entries.
    let entries = graph.temporal_entries();
    let mut alpha_term = 0.0;
    let visit = |pos: usize, scale: f64, d_uproj: &mut Vec<Vec<Tensor>>,
                     d_iproj: &mut Vec<Vec<Tensor>>, alpha_term: &mut f64|
     -> Result<()> {
        let ((u, m, t), m_weight) = entries[pos];
        let w = scale * m_weight * temporal_pair_weight(cfg, graph.reference_epoch, t);
        if w == 0.0 {
            return Ok(());
        }
        let diff = trace.item.proj[m][t].sub(&trace.user.proj[u][t])?;
        *alpha_term += w * diff.sq_norm();
        if want_grad {
            d_iproj[m][t].add_scaled(&diff, 2.0 * w)?;
            d_uproj[u][t].add_scaled(&diff, -2.0 * w)?;
        }
        Ok(())
    };
    match pair_sample {
        Some(s) => {
            for &pos in &s.indices {
                visit(pos, s.scale, &mut d_uproj, &mut d_iproj, &mut alpha_term)?;
            }
        }
        None => {
            for pos in 0..entries.len() {
                visit(pos, 1.0, &mut d_uproj, &mut d_iproj, &mut alpha_term)?;
            }
        }
    }

    // Stationary alignment term.
    let mut beta_term = 0.0;
    if cfg.beta > 0.0 {
        for &((u, m), m_weight) in graph.stationary_entries() {
            let w = cfg.beta * m_weight;
            if w == 0.0 {
                continue;
            }
            if cfg.beta_on_dynamic {
                let t_ref = graph.reference_epoch.min(t_len - 1);
                let diff = trace.item.proj[m][t_ref].sub(&trace.user.proj[u][t_ref])?;
                beta_term += w * diff.sq_norm();
                if want_grad {
                    d_iproj[m][t_ref].add_scaled(&diff, 2.0 * w)?;
                    d_uproj[u][t_ref].add_scaled(&diff, -2.0 * w)?;
                }
            } else {
                let m_row = params.item_stationary.row(m);
                let u_row = params.user_stationary.row(u);
                let mut sq = 0.0;
                for (mv, uv) in m_row.iter().zip(u_row) {
                    let d = mv - uv;
                    sq += d * d;
                }
                beta_term += w * sq;
                if let Some(g) = grads.as_mut() {
                    for ((gm, mv), uv) in g
                        .item_stationary
                        .row_mut(m)
                        .iter_mut()
                        .zip(m_row)
                        .zip(u_row)
                    {
                        *gm += 2.0 * w * (mv - uv);
                    }
                    for ((gu, mv), uv) in g
                        .user_stationary
                        .row_mut(u)
                        .iter_mut()
                        .zip(m_row)
                        .zip(u_row)
                    {
                        *gu -= 2.0 * w * (mv - uv);
                    }
                }
            }
        }
    }

    // L2 regularizer over every block.
    let mut regularizer = 0.0;
    if cfg.lambda_reg > 0.0 {
        regularizer = cfg.lambda_reg * params.sq_norm();
        if let Some(g) = grads.as_mut() {
            let mut gb = g.blocks_mut();
            for ((_, _, gt), (_, _, pt)) in gb.iter_mut().zip(params.blocks()) {
                gt.add_scaled(pt, 2.0 * cfg.lambda_reg)?;
            }
        }
    }

    // Push latent gradients through the projections and the chains.
    if let Some(g) = grads.as_mut() {
        if active != Some(Side::Item) {
            backward_chain(
                &params.user_lstm,
                &params.a,
                &trace.user,
                &d_uproj,
                trace
                    .dropout
                    .as_ref()
                    .map(|p| (&p.user_masks, p.rate)),
                &mut g.user_lstm,
                &mut g.a,
                &mut g.c,
                dims.hidden,
            )?;
        }
        if active != Some(Side::User) {
            backward_chain(
                &params.item_lstm,
                &params.b,
                &trace.item,
                &d_iproj,
                trace
                    .dropout
                    .as_ref()
                    .map(|p| (&p.item_masks, p.rate)),
                &mut g.item_lstm,
                &mut g.b,
                &mut g.d,
                dims.hidden,
            )?;
        }
    }

    let parts = LossParts {
        squared_error,
        alpha_term,
        beta_term,
        regularizer,
    };
    if !parts.total().is_finite() {
        return Err(Error::NonFiniteValue("objective".into()));
    }
    Ok((parts, grads))
}

/// Backpropagation through one chain: the projection layer, then the LSTM
/// recurrence from the last epoch to the first.
#[allow(clippy::too_many_arguments)]
fn backward_chain(
    lstm: &LstmParams,
    proj_w: &Tensor,
    trace: &ChainTrace,
    d_proj: &[Vec<Tensor>],
    dropout: Option<(&Vec<Vec<Tensor>>, f64)>,
    g_lstm: &mut LstmParams,
    g_proj_w: &mut Tensor,
    g_proj_b: &mut Tensor,
    hidden: usize,
) -> Result<()> {
    for ent in 0..d_proj.len() {
        let t_len = d_proj[ent].len();
        // Entities whose latents never enter the loss contribute nothing.
        if d_proj[ent].iter().all(|dp| dp.data().iter().all(|&v| v == 0.0)) {
            continue;
        }
        let mut dh_rec = Tensor::zeros(&[hidden]);
        let mut dc_rec = Tensor::zeros(&[hidden]);
        for t in (0..t_len).rev() {
            let dp = &d_proj[ent][t];
            g_proj_w.add_outer(dp, &trace.hidden_eff[ent][t])?;
            g_proj_b.add_assign(dp)?;
            let mut dh = proj_w.matvec_t(dp)?;
            if let Some((masks, rate)) = dropout {
                if rate > 0.0 {
                    dh = dh.hadamard(&masks[ent][t])?.scale(1.0 / (1.0 - rate));
                }
            }
            dh.add_assign(&dh_rec)?;

            let acts = &trace.gate_acts[ent][t];
            let c_tanh = &trace.cell_tanh[ent][t];
            let mut da = [
                Tensor::zeros(&[hidden]),
                Tensor::zeros(&[hidden]),
                Tensor::zeros(&[hidden]),
                Tensor::zeros(&[hidden]),
            ];
            let mut dc_next = Tensor::zeros(&[hidden]);
            for u in 0..hidden {
                let i = acts[0].data()[u];
                let f = acts[1].data()[u];
                let o = acts[2].data()[u];
                let gv = acts[3].data()[u];
                let ct = c_tanh.data()[u];
                let dh_u = dh.data()[u];
                let prev_c = if t > 0 {
                    trace.cell[ent][t - 1].data()[u]
                } else {
                    0.0
                };
                let d_o = dh_u * ct;
                let dc = dh_u * o * (1.0 - ct * ct) + dc_rec.data()[u];
                let d_f = dc * prev_c;
                let d_i = dc * gv;
                let d_g = dc * i;
                da[0].data_mut()[u] = d_i * i * (1.0 - i);
                da[1].data_mut()[u] = d_f * f * (1.0 - f);
                da[2].data_mut()[u] = d_o * o * (1.0 - o);
                da[3].data_mut()[u] = d_g * (1.0 - gv * gv);
                dc_next.data_mut()[u] = dc * f;
            }
            dc_rec = dc_next;

            let y = &trace.y[ent][t];
            let zero_h;
            let prev_h = if t > 0 {
                &trace.hidden[ent][t - 1]
            } else {
                zero_h = Tensor::zeros(&[hidden]);
                &zero_h
            };
            let mut dh_next = Tensor::zeros(&[hidden]);
            let mut dy = Tensor::zeros(&[lstm.v.rows()]);
            for gi in 0..GATE_COUNT {
                g_lstm.gates[gi].w.add_outer(&da[gi], y)?;
                g_lstm.gates[gi].u.add_outer(&da[gi], prev_h)?;
                g_lstm.gates[gi].b.add_assign(&da[gi])?;
                dh_next.add_assign(&lstm.gates[gi].u.matvec_t(&da[gi])?)?;
                dy.add_assign(&lstm.gates[gi].w.matvec_t(&da[gi])?)?;
            }
            dh_rec = dh_next;
            g_lstm.v.add_outer(&dy, &trace.concat[ent][t])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GridConfig, RatingDataset, RatingEvent};
    use crate::model::{forward, ModelDims, ModelParams};

    /// 3 users, 3 items, 2 epochs; one rating by user 0 on item 0 at epoch 0.
    fn fixture() -> RatingDataset {
        RatingDataset::from_events(
            vec![RatingEvent {
                user: 0,
                item: 0,
                day: 0,
                rating: 4,
            }],
            None,
            GridConfig {
                epoch_length_days: 30,
                origin_day: 0,
            },
            Some(2),
        )
        .unwrap()
        .restricted_to(&[0], &[Split::Train])
        .unwrap()
    }

    fn fixture_dims(ds: &RatingDataset) -> ModelDims {
        ModelDims {
            hidden: 2,
            input_dim: 2,
            dynamic_dim: 2,
            stationary_dim: 2,
            ..ModelDims::for_dataset(ds)
        }
    }

    fn fixture_users() -> RatingDataset {
        // Widen to 3 users / 3 items so stationary rows exist for pairs.
        let events = vec![
            RatingEvent {
                user: 0,
                item: 0,
                day: 0,
                rating: 4,
            },
            RatingEvent {
                user: 1,
                item: 1,
                day: 0,
                rating: 3,
            },
            RatingEvent {
                user: 2,
                item: 2,
                day: 0,
                rating: 2,
            },
            RatingEvent {
                user: 0,
                item: 0,
                day: 31,
                rating: 4,
            },
        ];
        RatingDataset::from_events(
            events,
            None,
            GridConfig {
                epoch_length_days: 30,
                origin_day: 0,
            },
            Some(2),
        )
        .unwrap()
    }

    fn empty_graph() -> ExplainabilityGraph {
        ExplainabilityGraph::from_entries(2, 1, Vec::new(), Vec::new())
    }

    #[test]
    fn perfect_predictions_empty_graph_zero_lambda() {
        let ds = fixture();
        let dims = fixture_dims(&ds);
        let mut params = ModelParams::zeros(dims);
        // Stationary inner product reproduces the single rating exactly.
        params.user_stationary.row_mut(0).copy_from_slice(&[4.0, 0.0]);
        params.item_stationary.row_mut(0).copy_from_slice(&[1.0, 0.0]);
        let trace = forward(&params, &ds, None).unwrap();
        let cfg = ObjectiveConfig {
            mode: ObjectiveMode::Dry,
            alpha: 0.4,
            beta: 0.6,
            lambda_reg: 0.0,
            ..ObjectiveConfig::default()
        };
        let parts = loss_parts(&trace, &params, &ds, &empty_graph(), &cfg, None).unwrap();
        assert_eq!(parts.total(), 0.0);
    }

    #[test]
    fn dry_loss_hand_sum() {
        // One residual 0.5², one α-pair with distance 2 and weight 0.5 at
        // α = 0.4, one β-pair with distance 1 and weight 0.5 at β = 0.6:
        // 0.25 + 0.4 + 0.3 = 0.95.
        let ds = fixture_users();
        let dims = fixture_dims(&ds);
        let mut params = ModelParams::zeros(dims);
        // Zero LSTM weights make ũ = c and m̃ = d everywhere.
        params.c = Tensor::from_vec(vec![0.0, 0.0]);
        params.d = Tensor::from_vec(vec![1.0, 1.0]);
        // Rated pair (0,0): prediction ⟨c,d⟩ + ⟨u₀,m₀⟩ = 0 + 3.5.
        params.user_stationary.row_mut(0).copy_from_slice(&[3.5, 0.0]);
        params.item_stationary.row_mut(0).copy_from_slice(&[1.0, 0.0]);
        // β pair (2,2): ‖m₂ − u₂‖² = 1.
        params.user_stationary.row_mut(2).copy_from_slice(&[0.0, 0.0]);
        params.item_stationary.row_mut(2).copy_from_slice(&[1.0, 0.0]);
        let graph = ExplainabilityGraph::from_entries(
            2,
            1,
            vec![((1, 1, 1), 0.5)],
            vec![((2, 2), 0.5)],
        );
        // Keep only the (0,0) epoch-0 rating in train to pin the residual.
        let ds = ds
            .restricted_to(&[0, 1, 2], &[Split::Train, Split::Train, Split::Train])
            .unwrap();
        let mut params = params;
        // Make the two extra ratings exact so they add no residual:
        // user1/item1 rating 3, user2/item2 rating 2.
        params.user_stationary.row_mut(1).copy_from_slice(&[3.0, 0.0]);
        params.item_stationary.row_mut(1).copy_from_slice(&[1.0, 0.0]);
        // user2 row is [0,0] (needed by the β pair); give item2 the value
        // via... the rating (2,2) must also be exact: ⟨u₂,m₂⟩ = 0 ≠ 2.
        // Drop that event from train instead.
        let ds = ds
            .restricted_to(&[0, 1], &[Split::Train, Split::Train])
            .unwrap();
        let trace = forward(&params, &ds, None).unwrap();
        let cfg = ObjectiveConfig {
            mode: ObjectiveMode::Dry,
            alpha: 0.4,
            beta: 0.6,
            lambda_reg: 0.0,
            ..ObjectiveConfig::default()
        };
        let parts = loss_parts(&trace, &params, &ds, &graph, &cfg, None).unwrap();
        assert!((parts.squared_error - 0.25).abs() < 1e-12);
        assert!((parts.alpha_term - 0.4).abs() < 1e-12);
        assert!((parts.beta_term - 0.3).abs() < 1e-12);
        assert!((parts.total() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn ablation_is_plain_squared_error() {
        let ds = crate::data::synth(&crate::data::SynthConfig {
            num_users: 6,
            num_items: 5,
            num_epochs: 3,
            seed: 2,
            ..crate::data::SynthConfig::default()
        })
        .unwrap();
        let dims = fixture_dims(&ds);
        let params = ModelParams::init(dims, 3).unwrap();
        let graph = crate::graph::build_graph(&ds, 2, ds.last_train_epoch().unwrap(), false);
        let trace = forward(&params, &ds, None).unwrap();
        let cfg = ObjectiveConfig {
            mode: ObjectiveMode::Dry,
            alpha: 0.0,
            beta: 0.0,
            lambda_reg: 0.0,
            ..ObjectiveConfig::default()
        };
        let total = loss(&trace, &params, &ds, &graph, &cfg).unwrap();
        let mut sse = 0.0;
        for idx in 0..ds.len() {
            if ds.split(idx) != Split::Train {
                continue;
            }
            let ev = ds.events()[idx];
            let e = crate::model::predict(&trace, &params, ev.user, ev.item, ds.epoch(idx))
                - ev.rating as f64;
            sse += e * e;
        }
        assert_eq!(total, sse);
    }

    #[test]
    fn fluid_alpha_zero_equals_dry_alpha_one() {
        let ds = fixture_users();
        let dims = fixture_dims(&ds);
        let params = ModelParams::init(dims, 11).unwrap();
        let graph = ExplainabilityGraph::from_entries(
            2,
            1,
            vec![((0, 1, 0), 0.7), ((1, 2, 1), 0.3)],
            vec![((0, 1), 0.2)],
        );
        let trace = forward(&params, &ds, None).unwrap();
        let fluid = ObjectiveConfig {
            mode: ObjectiveMode::Fluid,
            alpha: 0.0,
            beta: 0.6,
            lambda_reg: 1e-4,
            ..ObjectiveConfig::default()
        };
        let dry = ObjectiveConfig {
            mode: ObjectiveMode::Dry,
            alpha: 1.0,
            ..fluid
        };
        let a = loss(&trace, &params, &ds, &graph, &fluid).unwrap();
        let b = loss(&trace, &params, &ds, &graph, &dry).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_epoch_dry_one_matches_fluid_any_alpha() {
        let ds = fixture();
        let dims = fixture_dims(&ds);
        // T = 2 in fixture; build a T = 1 dataset instead.
        let ds1 = RatingDataset::from_events(
            vec![RatingEvent {
                user: 0,
                item: 0,
                day: 0,
                rating: 4,
            }],
            None,
            GridConfig::default(),
            Some(1),
        )
        .unwrap();
        let dims1 = ModelDims {
            num_epochs: 1,
            ..ModelDims {
                num_users: ds1.num_users,
                num_items: ds1.num_items,
                ..dims
            }
        };
        let params = ModelParams::init(dims1, 21).unwrap();
        let graph = ExplainabilityGraph::from_entries(1, 0, vec![((0, 0, 0), 0.8)], Vec::new());
        let trace = forward(&params, &ds1, None).unwrap();
        let fluid = ObjectiveConfig {
            mode: ObjectiveMode::Fluid,
            alpha: 0.73,
            beta: 0.0,
            lambda_reg: 0.0,
            ..ObjectiveConfig::default()
        };
        let dry = ObjectiveConfig {
            mode: ObjectiveMode::Dry,
            alpha: 1.0,
            ..fluid
        };
        assert_eq!(
            loss(&trace, &params, &ds1, &graph, &fluid).unwrap(),
            loss(&trace, &params, &ds1, &graph, &dry).unwrap()
        );
    }

    #[test]
    fn fluid_age_weighting_hand_value() {
        // Distance 2, graph weight 0.5, age 1 at α = 0.4: e^{-0.4}·1.0.
        let ds = fixture_users();
        let dims = fixture_dims(&ds);
        let mut params = ModelParams::zeros(dims);
        params.d = Tensor::from_vec(vec![1.0, 1.0]);
        // Pair at epoch 0, reference epoch 1 → age 1.
        let graph =
            ExplainabilityGraph::from_entries(2, 1, vec![((1, 1, 0), 0.5)], Vec::new());
        let trace = forward(&params, &ds, None).unwrap();
        let cfg = ObjectiveConfig {
            mode: ObjectiveMode::Fluid,
            alpha: 0.4,
            beta: 0.0,
            lambda_reg: 0.0,
            ..ObjectiveConfig::default()
        };
        let parts = loss_parts(&trace, &params, &ds, &graph, &cfg, None).unwrap();
        let expect = (-0.4f64).exp();
        assert!((parts.alpha_term - expect).abs() < 1e-12);
    }

    #[test]
    fn fluid_age_zero_weight_is_one() {
        for alpha in [0.0, 0.4, 2.5] {
            let cfg = ObjectiveConfig {
                mode: ObjectiveMode::Fluid,
                alpha,
                ..ObjectiveConfig::default()
            };
            assert_eq!(temporal_pair_weight(&cfg, 3, 3), 1.0);
        }
    }

    #[test]
    fn adding_positive_pairs_never_decreases_loss() {
        let ds = fixture_users();
        let params = ModelParams::init(fixture_dims(&ds), 8).unwrap();
        let trace = forward(&params, &ds, None).unwrap();
        let cfg = ObjectiveConfig::default();
        let base_graph =
            ExplainabilityGraph::from_entries(2, 1, vec![((0, 1, 0), 0.5)], vec![((0, 1), 0.4)]);
        let bigger_graph = ExplainabilityGraph::from_entries(
            2,
            1,
            vec![((0, 1, 0), 0.5), ((2, 2, 1), 0.9)],
            vec![((0, 1), 0.4), ((1, 0), 0.7)],
        );
        let a = loss(&trace, &params, &ds, &base_graph, &cfg).unwrap();
        let b = loss(&trace, &params, &ds, &bigger_graph, &cfg).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn beta_gradient_matches_hand_formula() {
        // β-term only: ∂/∂u_i = -2β·M̄·(m_j - u_i) summed over j.
        let ds = fixture_users();
        let dims = fixture_dims(&ds);
        let params = ModelParams::init(dims, 17).unwrap();
        let graph = ExplainabilityGraph::from_entries(
            2,
            1,
            Vec::new(),
            vec![((0, 0), 0.5), ((0, 2), 0.25)],
        );
        // Strip all ratings from train so only the β term remains.
        let ds = ds.with_test_indices(&(0..ds.len()).collect());
        let trace = forward(&params, &ds, None).unwrap();
        let cfg = ObjectiveConfig {
            mode: ObjectiveMode::Dry,
            alpha: 0.0,
            beta: 0.6,
            lambda_reg: 0.0,
            ..ObjectiveConfig::default()
        };
        let (_, g) = grad(&trace, &params, &ds, &graph, &cfg, None, None).unwrap();
        let u0 = params.user_stationary.row(0);
        let mut expect = vec![0.0; dims.stationary_dim];
        for &(j, w) in &[(0usize, 0.5), (2usize, 0.25)] {
            let mj = params.item_stationary.row(j);
            for (e, (m, u)) in expect.iter_mut().zip(mj.iter().zip(u0)) {
                *e += -2.0 * 0.6 * w * (m - u);
            }
        }
        for (got, want) in g.user_stationary.row(0).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_loss_point_has_zero_gradient() {
        let ds = fixture();
        let dims = fixture_dims(&ds);
        let mut params = ModelParams::zeros(dims);
        params.user_stationary.row_mut(0).copy_from_slice(&[4.0, 0.0]);
        params.item_stationary.row_mut(0).copy_from_slice(&[1.0, 0.0]);
        let trace = forward(&params, &ds, None).unwrap();
        let cfg = ObjectiveConfig {
            mode: ObjectiveMode::Dry,
            alpha: 0.4,
            beta: 0.6,
            lambda_reg: 0.0,
            ..ObjectiveConfig::default()
        };
        let (parts, g) = grad(&trace, &params, &ds, &empty_graph(), &cfg, None, None).unwrap();
        assert_eq!(parts.total(), 0.0);
        // The residual is zero and the graph empty, so only the (absent)
        // regularizer could produce gradient signal. Stationary rows for
        // the rated pair still receive 2e·(counterpart) = 0.
        for (_, _, t) in g.blocks() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pair_sampling_is_unbiased_at_full_budget() {
        let ds = fixture_users();
        let params = ModelParams::init(fixture_dims(&ds), 4).unwrap();
        let trace = forward(&params, &ds, None).unwrap();
        let graph = ExplainabilityGraph::from_entries(
            2,
            1,
            vec![((0, 1, 0), 0.5), ((1, 2, 1), 0.3), ((2, 0, 0), 0.9)],
            Vec::new(),
        );
        let cfg = ObjectiveConfig {
            pair_budget: 3,
            ..ObjectiveConfig::default()
        };
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Budget covers everything → no sampling.
        assert!(sample_pairs(3, 3, &mut rng).is_none());
        let s = sample_pairs(3, 2, &mut rng).unwrap();
        assert_eq!(s.indices.len(), 2);
        assert!((s.scale - 1.5).abs() < 1e-15);
        assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
        let _ = cfg;
        let exact = loss(&trace, &params, &ds, &graph, &ObjectiveConfig::default()).unwrap();
        assert!(exact.is_finite());
    }
}
