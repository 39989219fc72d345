use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toast_core::engine::{count_flops, forward, ModelConfig};
use toast_core::fixture::{random_matrix, random_tokens, random_weights};
use toast_core::Vector;
use toast_core::prune::{
    apply_plan, build_plan, coupled_importance, CoupledGroup, GroupKind, HeadPlan, LayerPlan,
    PruningPlan,
};
use toast_oracles::{
    grid_search_median, max_abs_diff, plan_masks, reference_forward, to_rows, uniform_plan,
    zero_pad_heads,
};

fn toy() -> ModelConfig {
    ModelConfig::dense(2, 9, 16, 2, 64, true)
}

fn random_plan(cfg: &ModelConfig, seed: u64) -> PruningPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dk = cfg.head_dim;
    PruningPlan {
        layers: (0..cfg.num_layers)
            .map(|_| {
                let k = rng.gen_range(1..=dk);
                let pick = |rng: &mut ChaCha8Rng| {
                    let mut v = index::sample(rng, dk, k).into_vec();
                    v.sort_unstable();
                    v
                };
                LayerPlan {
                    dk_prime: k,
                    heads: (0..cfg.num_heads)
                        .map(|_| HeadPlan {
                            qk_keep: pick(&mut rng),
                            vo_keep: pick(&mut rng),
                        })
                        .collect(),
                }
            })
            .collect(),
    }
}

#[test]
fn importance_matches_grid_search_median() {
    let g = CoupledGroup {
        kind: GroupKind::QK,
        head: 0,
        matrix: random_matrix(8, 16, 2),
    };
    let scores = coupled_importance(&g).unwrap();
    let rows = to_rows(&g.matrix);
    let gm = grid_search_median(&rows);
    for (j, row) in rows.iter().enumerate() {
        let want: f64 = row.iter().zip(&gm).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((scores.get(j) as f64 - want).abs() < 1e-3, "dim {j}");
    }
}

#[test]
fn apply_plan_matches_masked_dense_oracle() {
    let cfg = toy();
    let w = random_weights(&cfg, 9);
    let x = random_tokens(&cfg, 90);
    let plan = random_plan(&cfg, 9);
    let (pcfg, pw) = apply_plan(&cfg, &w, &plan).unwrap();
    let (y, _) = forward(&pcfg, &pw, &x, None).unwrap();
    let oracle = reference_forward(&cfg, &w, &x, &plan_masks(&cfg, &plan));
    let err = max_abs_diff(&y, &oracle);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn zero_contribution_dims_prune_bit_exactly() {
    // dims 5 and 6 of every head carry zero Q/K/V columns, zero biases and
    // zero proj rows; removing them changes nothing but the scale, which the
    // original-scale config keeps fixed
    let mut cfg = toy();
    cfg.scale_original = true;
    let mut w = random_weights(&cfg, 3);
    for block in &mut w.blocks {
        for hw in &mut block.heads {
            for j in [5, 6] {
                for i in 0..cfg.embed_dim {
                    hw.wq.set(i, j, 0.0);
                    hw.wk.set(i, j, 0.0);
                    hw.wv.set(i, j, 0.0);
                    hw.wproj.set(j, i, 0.0);
                }
            }
            let zero = |v: &Vector| {
                let mut d = v.clone().into_vec();
                d[5] = 0.0;
                d[6] = 0.0;
                Vector::new(d).unwrap()
            };
            hw.bq = zero(&hw.bq);
            hw.bk = zero(&hw.bk);
            hw.bv = zero(&hw.bv);
        }
    }
    let x = random_tokens(&cfg, 3);
    let (dense, _) = forward(&cfg, &w, &x, None).unwrap();
    let kept = [0, 1, 2, 3, 4, 7];
    let (pc, pw) = apply_plan(&cfg, &w, &uniform_plan(&cfg, &kept, &kept)).unwrap();
    let (pruned, _) = forward(&pc, &pw, &x, None).unwrap();
    let bits = |m: &toast_core::Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&pruned), bits(&dense));
}

#[test]
fn synchronized_pruning_is_exact_and_misaligned_is_not() {
    let mut cfg = ModelConfig::dense(2, 9, 16, 2, 32, true);
    cfg.scale_original = true;
    let live = 3;
    let mut w = random_weights(&cfg, 12);
    zero_pad_heads(&mut w, live);
    let x = random_tokens(&cfg, 12);
    let (dense, _) = forward(&cfg, &w, &x, None).unwrap();

    let kept: Vec<usize> = (0..live).collect();
    let (sc, sw) = apply_plan(&cfg, &w, &uniform_plan(&cfg, &kept, &kept)).unwrap();
    let (synced, _) = forward(&sc, &sw, &x, None).unwrap();
    assert!(dense.max_abs_diff(&synced) <= 1e-6);

    let shifted: Vec<usize> = (live..2 * live).collect();
    let (mc, mw) = apply_plan(&cfg, &w, &uniform_plan(&cfg, &kept, &shifted)).unwrap();
    let (misaligned, _) = forward(&mc, &mw, &x, None).unwrap();
    assert!(dense.max_abs_diff(&misaligned) > 1e-3);
}

#[test]
fn selection_is_scale_equivariant() {
    let cfg = ModelConfig::dense(2, 9, 16, 2, 32, true);
    let w = random_weights(&cfg, 14);
    let plan = build_plan(&cfg, &w, 0.5, false).unwrap();
    for c in [0.37f32, 3.0, 1024.0] {
        let mut scaled = w.clone();
        for block in &mut scaled.blocks {
            for hw in &mut block.heads {
                hw.wq = hw.wq.scale(c);
                hw.wk = hw.wk.scale(c);
                hw.wv = hw.wv.scale(c);
                hw.wproj = hw.wproj.scale(c);
            }
        }
        assert_eq!(build_plan(&cfg, &scaled, 0.5, false).unwrap(), plan, "c = {c}");
    }
}

#[test]
fn plans_are_head_uniform_and_cut_mhsa_flops() {
    let cfg = ModelConfig::dense(3, 9, 24, 3, 48, true);
    let w = random_weights(&cfg, 15);
    let dense = count_flops(&cfg, None).unwrap();
    for ratio in [0.0, 0.3, 0.5, 0.9] {
        let plan = build_plan(&cfg, &w, ratio, true).unwrap();
        for lp in &plan.layers {
            for hp in &lp.heads {
                assert_eq!(hp.qk_keep.len(), lp.dk_prime);
                assert_eq!(hp.vo_keep.len(), lp.dk_prime);
            }
        }
        let pcfg = plan.apply_to_config(&cfg);
        let r = count_flops(&pcfg, None).unwrap();
        if pcfg.per_layer_head_dim.iter().any(|&k| k < cfg.head_dim) {
            assert!(r.mhsa_total < dense.mhsa_total);
            assert!(r.reduction_percent > 0.0 && r.reduction_percent < 100.0);
        } else {
            assert_eq!(r.mhsa_total, dense.mhsa_total);
        }
    }
}

#[test]
fn ties_keep_lower_indices() {
    // identical rows everywhere: every score is equal
    let cfg = ModelConfig::dense(1, 4, 8, 1, 8, false);
    let mut w = random_weights(&cfg, 1);
    for hw in &mut w.blocks[0].heads {
        for i in 0..8 {
            for j in 0..8 {
                hw.wq.set(i, j, 1.0);
                hw.wk.set(i, j, -1.0);
                hw.wv.set(i, j, 0.5);
                hw.wproj.set(j, i, 2.0);
            }
        }
    }
    let plan = build_plan(&cfg, &w, 0.5, false).unwrap();
    assert_eq!(plan.layers[0].heads[0].qk_keep, vec![0, 1, 2, 3]);
    assert_eq!(plan.layers[0].heads[0].vo_keep, vec![0, 1, 2, 3]);
}
