//! The rating predictor: per-user and per-item LSTM state chains over
//! epochs, affine projections into rating space, stationary embeddings,
//! and the inner-product rating rule
//! `r̂ = ⟨ũ_it, m̃_jt⟩ + ⟨u_i, m_j⟩`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

pub const GATE_COUNT: usize = 4;
pub const GATE_NAMES: [&str; GATE_COUNT] = ["input", "forget", "output", "candidate"];

/// Which half of the model a parameter block belongs to. Subspace descent
/// updates one side while the other stays frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

/// One LSTM gate: input weights, recurrent weights, bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

/// Weights of one state chain: four gates plus the input transform `v`
/// mapping the raw vector `[x_t, 1, τ_t, τ_{t-1}]` into LSTM input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub gates: [GateParams; GATE_COUNT],
    pub v: Tensor,
}

impl LstmParams {
    fn zeros(hidden: usize, input_dim: usize, raw_dim: usize) -> Self {
        let gate = || GateParams {
            w: Tensor::zeros(&[hidden, input_dim]),
            u: Tensor::zeros(&[hidden, hidden]),
            b: Tensor::zeros(&[hidden]),
        };
        LstmParams {
            gates: [gate(), gate(), gate(), gate()],
            v: Tensor::zeros(&[input_dim, raw_dim + 3]),
        }
    }

    fn fill_uniform(&mut self, rng: &mut ChaCha8Rng, scale: f64) {
        for g in self.gates.iter_mut() {
            for t in [&mut g.w, &mut g.u, &mut g.b] {
                for v in t.data_mut() {
                    *v = rng.random_range(-scale..scale);
                }
            }
        }
        for v in self.v.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }

    fn blocks(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(GATE_COUNT * 3 + 1);
        for (g, name) in self.gates.iter().zip(GATE_NAMES) {
            out.push((format!("{prefix}.{name}.w"), &g.w));
            out.push((format!("{prefix}.{name}.u"), &g.u));
            out.push((format!("{prefix}.{name}.b"), &g.b));
        }
        out.push((format!("{prefix}.v"), &self.v));
        out
    }

    fn blocks_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(GATE_COUNT * 3 + 1);
        for (g, name) in self.gates.iter_mut().zip(GATE_NAMES) {
            out.push((format!("{prefix}.{name}.w"), &mut g.w));
            out.push((format!("{prefix}.{name}.u"), &mut g.u));
            out.push((format!("{prefix}.{name}.b"), &mut g.b));
        }
        out.push((format!("{prefix}.v"), &mut self.v));
        out
    }
}

/// Model dimensions, fixed at initialization and stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_users: usize,
    pub num_items: usize,
    pub num_epochs: usize,
    pub hidden: usize,
    pub input_dim: usize,
    /// Dimension k of the projected dynamic latents ũ, m̃.
    pub dynamic_dim: usize,
    /// Dimension of the stationary profile embeddings.
    pub stationary_dim: usize,
    /// When set, star values enter the input vector centred at 3.
    pub center_inputs: bool,
}

impl ModelDims {
    pub fn for_dataset(ds: &RatingDataset) -> Self {
        ModelDims {
            num_users: ds.num_users,
            num_items: ds.num_items,
            num_epochs: ds.grid.num_epochs,
            hidden: 8,
            input_dim: 8,
            dynamic_dim: 8,
            stationary_dim: 8,
            center_inputs: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_epochs", self.num_epochs),
            ("hidden", self.hidden),
            ("input_dim", self.input_dim),
            ("dynamic_dim", self.dynamic_dim),
            ("stationary_dim", self.stationary_dim),
        ] {
            if v == 0 {
                return Err(Error::ConfigInvalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// All trainable parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub user_lstm: LstmParams,
    pub item_lstm: LstmParams,
    /// Dynamic projection of user states: ũ = a·h + c.
    pub a: Tensor,
    pub c: Tensor,
    /// Dynamic projection of item states: m̃ = b·h + d.
    pub b: Tensor,
    pub d: Tensor,
    /// Stationary profile embeddings, one row per user / item.
    pub user_stationary: Tensor,
    pub item_stationary: Tensor,
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    params: ModelParams,
}

impl ModelParams {
    /// All-zero blocks; also the shape template for gradients.
    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            dims,
            user_lstm: LstmParams::zeros(dims.hidden, dims.input_dim, dims.num_items),
            item_lstm: LstmParams::zeros(dims.hidden, dims.input_dim, dims.num_users),
            a: Tensor::zeros(&[dims.dynamic_dim, dims.hidden]),
            c: Tensor::zeros(&[dims.dynamic_dim]),
            b: Tensor::zeros(&[dims.dynamic_dim, dims.hidden]),
            d: Tensor::zeros(&[dims.dynamic_dim]),
            user_stationary: Tensor::zeros(&[dims.num_users, dims.stationary_dim]),
            item_stationary: Tensor::zeros(&[dims.num_items, dims.stationary_dim]),
        }
    }

    /// Seeded uniform(-0.1, 0.1) initialization of every block.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.1;
        let mut p = ModelParams::zeros(dims);
        p.user_lstm.fill_uniform(&mut rng, scale);
        p.item_lstm.fill_uniform(&mut rng, scale);
        for t in [
            &mut p.a,
            &mut p.c,
            &mut p.b,
            &mut p.d,
            &mut p.user_stationary,
            &mut p.item_stationary,
        ] {
            for v in t.data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
        Ok(p)
    }

    /// Every parameter block with its name and side, in a stable order.
    pub fn blocks(&self) -> Vec<(String, Side, &Tensor)> {
        let mut out = Vec::with_capacity(32);
        for (name, t) in self.user_lstm.blocks("user_lstm") {
            out.push((name, Side::User, t));
        }
        for (name, t) in self.item_lstm.blocks("item_lstm") {
            out.push((name, Side::Item, t));
        }
        out.push(("project.a".into(), Side::User, &self.a));
        out.push(("project.c".into(), Side::User, &self.c));
        out.push(("project.b".into(), Side::Item, &self.b));
        out.push(("project.d".into(), Side::Item, &self.d));
        out.push(("stationary.user".into(), Side::User, &self.user_stationary));
        out.push(("stationary.item".into(), Side::Item, &self.item_stationary));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, Side, &mut Tensor)> {
        let mut out = Vec::with_capacity(32);
        for (name, t) in self.user_lstm.blocks_mut("user_lstm") {
            out.push((name, Side::User, t));
        }
        for (name, t) in self.item_lstm.blocks_mut("item_lstm") {
            out.push((name, Side::Item, t));
        }
        out.push(("project.a".into(), Side::User, &mut self.a));
        out.push(("project.c".into(), Side::User, &mut self.c));
        out.push(("project.b".into(), Side::Item, &mut self.b));
        out.push(("project.d".into(), Side::Item, &mut self.d));
        out.push((
            "stationary.user".into(),
            Side::User,
            &mut self.user_stationary,
        ));
        out.push((
            "stationary.item".into(),
            Side::Item,
            &mut self.item_stationary,
        ));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, _, t)| t.is_finite())
    }

    /// Σ over blocks of the squared Frobenius norm.
    pub fn sq_norm(&self) -> f64 {
        self.blocks().iter().map(|(_, _, t)| t.sq_norm()).sum()
    }

    /// Versioned JSON checkpoint; load is bit-exact.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            params: self.clone(),
        };
        fs::write(path, serde_json::to_string(&ck)?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<ModelParams> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::ConfigInvalid(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck.params)
    }

    pub fn validate_against(&self, ds: &RatingDataset) -> Result<()> {
        if self.dims.num_users != ds.num_users
            || self.dims.num_items != ds.num_items
            || self.dims.num_epochs != ds.grid.num_epochs
        {
            return Err(Error::ConfigInvalid(format!(
                "model built for {}u/{}i/{}t but dataset has {}u/{}i/{}t",
                self.dims.num_users,
                self.dims.num_items,
                self.dims.num_epochs,
                ds.num_users,
                ds.num_items,
                ds.grid.num_epochs
            )));
        }
        Ok(())
    }
}

/// Per-step dropout masks over hidden outputs, drawn by the trainer.
/// Masks are 0/1; kept units are rescaled by 1/(1-rate) on the projection
/// path only, so the recurrence itself stays intact.
#[derive(Debug, Clone)]
pub struct DropoutPlan {
    pub rate: f64,
    /// `[user][epoch]` masks of hidden dimension.
    pub user_masks: Vec<Vec<Tensor>>,
    /// `[item][epoch]` masks of hidden dimension.
    pub item_masks: Vec<Vec<Tensor>>,
}

impl DropoutPlan {
    /// Fresh Bernoulli(1-rate) masks for every entity and epoch.
    pub fn draw(dims: &ModelDims, rate: f64, rng: &mut ChaCha8Rng) -> DropoutPlan {
        let mut draw_masks = |count: usize| -> Vec<Vec<Tensor>> {
            (0..count)
                .map(|_| {
                    (0..dims.num_epochs)
                        .map(|_| {
                            Tensor::from_vec(
                                (0..dims.hidden)
                                    .map(|_| if rng.random_bool(1.0 - rate) { 1.0 } else { 0.0 })
                                    .collect(),
                            )
                        })
                        .collect()
                })
                .collect()
        };
        let user_masks = draw_masks(dims.num_users);
        let item_masks = draw_masks(dims.num_items);
        DropoutPlan {
            rate,
            user_masks,
            item_masks,
        }
    }

    fn masks(&self, side: Side) -> &Vec<Vec<Tensor>> {
        match side {
            Side::User => &self.user_masks,
            Side::Item => &self.item_masks,
        }
    }
}

/// Cached forward pass of one chain: everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    /// Raw input `[x_t, 1, τ_t, τ_{t-1}]` per entity and epoch.
    pub concat: Vec<Vec<Tensor>>,
    /// Transformed input y = v·concat.
    pub y: Vec<Vec<Tensor>>,
    /// Activated gate values in `GATE_NAMES` order.
    pub gate_acts: Vec<Vec<[Tensor; GATE_COUNT]>>,
    pub cell: Vec<Vec<Tensor>>,
    pub hidden: Vec<Vec<Tensor>>,
    pub cell_tanh: Vec<Vec<Tensor>>,
    /// Hidden state after dropout scaling; equals `hidden` when no plan.
    pub hidden_eff: Vec<Vec<Tensor>>,
    /// Projected dynamic latent (ũ or m̃) per entity and epoch.
    pub proj: Vec<Vec<Tensor>>,
}

/// Full forward state: both chains plus the dropout plan they were built
/// under (if any), so gradients can be routed identically.
#[derive(Debug, Clone)]
pub struct StateTrace {
    pub user: ChainTrace,
    pub item: ChainTrace,
    pub dropout: Option<DropoutPlan>,
}

impl StateTrace {
    pub fn num_epochs(&self) -> usize {
        self.user.hidden.first().map_or(0, |v| v.len())
    }
}

/// One LSTM step with the conventional gate equations:
/// i, f, o = σ(·), g = tanh(·), c = f⊙c₋ + i⊙g, h = o⊙tanh(c).
pub fn lstm_step(
    params: &LstmParams,
    prev_h: &Tensor,
    prev_c: &Tensor,
    y: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (_, c, h, _) = lstm_step_full(params, prev_h, prev_c, y)?;
    Ok((h, c))
}

type StepOut = ([Tensor; GATE_COUNT], Tensor, Tensor, Tensor);

fn lstm_step_full(
    params: &LstmParams,
    prev_h: &Tensor,
    prev_c: &Tensor,
    y: &Tensor,
) -> Result<StepOut> {
    let mut pre = Vec::with_capacity(GATE_COUNT);
    for g in &params.gates {
        let mut a = g.w.matvec(y)?;
        a.add_assign(&g.u.matvec(prev_h)?)?;
        a.add_assign(&g.b)?;
        pre.push(a);
    }
    let i = pre[0].sigmoid();
    let f = pre[1].sigmoid();
    let o = pre[2].sigmoid();
    let g = pre[3].tanh();
    let c = f.hadamard(prev_c)?.add(&i.hadamard(&g)?)?;
    let c_tanh = c.tanh();
    let h = o.hadamard(&c_tanh)?;
    Ok(([i, f, o, g], c, h, c_tanh))
}

/// The raw input vector for one entity at one epoch: the train-split
/// rating vector, a constant 1, and the normalized wallclocks τ_t = t/T
/// and τ_{t-1} = (t-1)/T (with τ_{-1} = 0).
pub fn raw_input(ds: &RatingDataset, side: Side, id: usize, t: usize, center: bool) -> Tensor {
    let raw_dim = match side {
        Side::User => ds.num_items,
        Side::Item => ds.num_users,
    };
    let total_epochs = ds.grid.num_epochs as f64;
    let mut x = vec![0.0; raw_dim + 3];
    let events = match side {
        Side::User => ds.user_events(id),
        Side::Item => ds.item_events(id),
    };
    for &idx in events {
        if ds.split(idx) != Split::Train || ds.epoch(idx) != t {
            continue;
        }
        let ev = ds.events()[idx];
        let slot = match side {
            Side::User => ev.item,
            Side::Item => ev.user,
        };
        x[slot] = if center {
            ev.rating as f64 - 3.0
        } else {
            ev.rating as f64
        };
    }
    x[raw_dim] = 1.0;
    x[raw_dim + 1] = t as f64 / total_epochs;
    x[raw_dim + 2] = if t == 0 {
        0.0
    } else {
        (t - 1) as f64 / total_epochs
    };
    Tensor::from_vec(x)
}

/// Transformed LSTM input y_t = v·[x_t, 1, τ_t, τ_{t-1}].
pub fn build_input(
    params: &ModelParams,
    ds: &RatingDataset,
    side: Side,
    id: usize,
    t: usize,
) -> Result<Tensor> {
    let lstm = match side {
        Side::User => &params.user_lstm,
        Side::Item => &params.item_lstm,
    };
    lstm.v.matvec(&raw_input(ds, side, id, t, params.dims.center_inputs))
}

/// Runs one chain from zero initial states across all epochs.
pub fn forward_chain(
    params: &ModelParams,
    ds: &RatingDataset,
    side: Side,
    dropout: Option<&DropoutPlan>,
) -> Result<ChainTrace> {
    let dims = &params.dims;
    let (lstm, proj_w, proj_b, count) = match side {
        Side::User => (&params.user_lstm, &params.a, &params.c, dims.num_users),
        Side::Item => (&params.item_lstm, &params.b, &params.d, dims.num_items),
    };
    let t_len = dims.num_epochs;
    let mut trace = ChainTrace {
        concat: Vec::with_capacity(count),
        y: Vec::with_capacity(count),
        gate_acts: Vec::with_capacity(count),
        cell: Vec::with_capacity(count),
        hidden: Vec::with_capacity(count),
        cell_tanh: Vec::with_capacity(count),
        hidden_eff: Vec::with_capacity(count),
        proj: Vec::with_capacity(count),
    };
    for id in 0..count {
        let mut concat_v = Vec::with_capacity(t_len);
        let mut y_v = Vec::with_capacity(t_len);
        let mut acts_v = Vec::with_capacity(t_len);
        let mut c_v: Vec<Tensor> = Vec::with_capacity(t_len);
        let mut h_v: Vec<Tensor> = Vec::with_capacity(t_len);
        let mut ct_v = Vec::with_capacity(t_len);
        let mut heff_v = Vec::with_capacity(t_len);
        let mut proj_v = Vec::with_capacity(t_len);
        let mut prev_h = Tensor::zeros(&[dims.hidden]);
        let mut prev_c = Tensor::zeros(&[dims.hidden]);
        for t in 0..t_len {
            let concat = raw_input(ds, side, id, t, dims.center_inputs);
            let y = lstm.v.matvec(&concat)?;
            let (acts, c, h, c_tanh) = lstm_step_full(lstm, &prev_h, &prev_c, &y)?;
            let h_eff = match dropout {
                Some(plan) if plan.rate > 0.0 => {
                    let mask = &plan.masks(side)[id][t];
                    h.hadamard(mask)?.scale(1.0 / (1.0 - plan.rate))
                }
                _ => h.clone(),
            };
            let mut proj = proj_w.matvec(&h_eff)?;
            proj.add_assign(proj_b)?;
            prev_h = h.clone();
            prev_c = c.clone();
            concat_v.push(concat);
            y_v.push(y);
            acts_v.push(acts);
            c_v.push(c);
            h_v.push(h);
            ct_v.push(c_tanh);
            heff_v.push(h_eff);
            proj_v.push(proj);
        }
        if !prev_h.is_finite() || !prev_c.is_finite() {
            return Err(Error::NonFiniteValue(format!(
                "{side:?} chain state for entity {id}"
            )));
        }
        trace.concat.push(concat_v);
        trace.y.push(y_v);
        trace.gate_acts.push(acts_v);
        trace.cell.push(c_v);
        trace.hidden.push(h_v);
        trace.cell_tanh.push(ct_v);
        trace.hidden_eff.push(heff_v);
        trace.proj.push(proj_v);
    }
    Ok(trace)
}

/// Runs both chains and records the full state trace.
pub fn forward(
    params: &ModelParams,
    ds: &RatingDataset,
    dropout: Option<&DropoutPlan>,
) -> Result<StateTrace> {
    params.validate_against(ds)?;
    Ok(StateTrace {
        user: forward_chain(params, ds, Side::User, dropout)?,
        item: forward_chain(params, ds, Side::Item, dropout)?,
        dropout: dropout.cloned(),
    })
}

/// Predicted rating for user `i` on item `j` at epoch `t`: the dynamic
/// inner product plus the stationary profile inner product. Raw value;
/// clamping to the star scale happens at evaluation time.
pub fn predict(trace: &StateTrace, params: &ModelParams, i: usize, j: usize, t: usize) -> f64 {
    dot(
        trace.user.proj[i][t].data(),
        trace.item.proj[j][t].data(),
    ) + dot(
        params.user_stationary.row(i),
        params.item_stationary.row(j),
    )
}
