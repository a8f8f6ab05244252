//! Temporary diagnostic probe (not part of the suite).

use tempex_core::data::{synth, Split, SynthConfig};
use tempex_core::graph::build_graph;
use tempex_core::model::{forward, predict};
use tempex_core::objective::{ObjectiveConfig, ObjectiveMode};
use tempex_core::train::{fit, TrainConfig};

#[test]
#[ignore]
fn probe_alignment_geometry() {
    let ds = synth(&SynthConfig {
        group_affinity: 0.0,
        focus: 0.8,
        ..SynthConfig::default()
    })
    .unwrap()
    .split_temporal(0.2)
    .unwrap();
    let graph = build_graph(&ds, 10, ds.last_train_epoch().unwrap(), false);

    for (name, alpha, beta) in [("fluid", 0.4, 0.6), ("ablation", 0.0, 0.0)] {
        let cfg = TrainConfig {
            rounds: 15,
            seed: 1,
            objective: ObjectiveConfig {
                mode: ObjectiveMode::Fluid,
                alpha,
                beta,
                ..ObjectiveConfig::default()
            },
            ..TrainConfig::default()
        };
        let (params, _) = fit(&ds, &graph, tempex_core::model::ModelDims::for_dataset(&ds), &cfg)
            .unwrap();
        let trace = forward(&params, &ds, None).unwrap();

        // Over CANDIDATE pairs (user, unrated item): split by M̄ > 0.3.
        let mut hi_scores = Vec::new();
        let mut lo_scores = Vec::new();
        let mut hi_dist = Vec::new();
        let mut norms_u = Vec::new();
        for u in 0..ds.num_users {
            let rated: std::collections::BTreeSet<usize> = ds
                .user_events(u)
                .iter()
                .filter(|&&i| ds.split(i) == Split::Train)
                .map(|&i| ds.events()[i].item)
                .collect();
            let t = ds.grid.num_epochs - 1;
            let u_row = params.user_stationary.row(u);
            norms_u.push(u_row.iter().map(|v| v * v).sum::<f64>());
            for m in 0..ds.num_items {
                if rated.contains(&m) {
                    continue;
                }
                let s = predict(&trace, &params, u, m, t);
                let w = graph.stationary_weight(u, m);
                let m_row = params.item_stationary.row(m);
                let d: f64 = m_row
                    .iter()
                    .zip(u_row)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if w > 0.3 {
                    hi_scores.push(s);
                    hi_dist.push(d);
                } else {
                    lo_scores.push(s);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let sd = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len().max(1) as f64).sqrt()
        };
        println!(
            "{name}: candidates hi-M̄ n={} score {:.3}±{:.3}, lo-M̄ n={} score {:.3}±{:.3}; hi pair dist {:.4}; ‖u‖² {:.3}",
            hi_scores.len(),
            mean(&hi_scores),
            sd(&hi_scores),
            lo_scores.len(),
            mean(&lo_scores),
            sd(&lo_scores),
            mean(&hi_dist),
            mean(&norms_u),
        );
    }
}
