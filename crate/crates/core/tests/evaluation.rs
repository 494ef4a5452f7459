//! Ranking and CMC computation against a brute-force counting oracle.

mod common;

use common::{brute_rank, counting_cmc, rng};
use proptest::prelude::*;
use rand::Rng;
use rcn_core::data::synth_generate;
use rcn_core::eval::{cmc_from_scores, evaluate, order_gallery, true_match_rank, CmcCurve};
use rcn_core::training::init_params;
use rcn_core::{Architecture, Config, Tensor};

#[test]
fn hand_built_matrices() {
    // true ranks 1, 2, 2
    let scores = vec![vec![0.9, 0.1, 0.2], vec![0.8, 0.7, 0.1], vec![0.1, 0.6, 0.5]];
    let curve = cmc_from_scores(&scores, &[0, 1, 2]).unwrap();
    assert_eq!(curve.match_rate, vec![1.0 / 3.0, 1.0, 1.0]);
    assert_eq!(curve.match_rate, counting_cmc(&[1, 2, 2], 3));

    // all tied: probe i sits behind the i earlier gallery entries
    let flat = vec![vec![0.5; 4]; 4];
    let curve = cmc_from_scores(&flat, &[0, 1, 2, 3]).unwrap();
    assert_eq!(curve.match_rate, counting_cmc(&[1, 2, 3, 4], 4));

    // truth outside the diagonal
    let scores = vec![vec![0.2, 0.3], vec![0.4, 0.1]];
    let curve = cmc_from_scores(&scores, &[1, 1]).unwrap();
    assert_eq!(curve.match_rate, counting_cmc(&[1, 2], 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_counting_oracle(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let (p, g) = (rng.gen_range(1..8), rng.gen_range(1..8));
        // coarse levels so ties are common
        let levels = rng.gen_range(1..5);
        let scores: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..g).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect())
            .collect();
        let truth: Vec<usize> = (0..p).map(|_| rng.gen_range(0..g)).collect();
        let ranks: Vec<usize> = scores.iter().zip(&truth).map(|(row, &t)| brute_rank(row, t)).collect();
        let curve = cmc_from_scores(&scores, &truth).unwrap();
        prop_assert_eq!(&curve.match_rate, &counting_cmc(&ranks, g));
        prop_assert!(curve.is_monotone());
        prop_assert_eq!(*curve.match_rate.last().unwrap(), 1.0);
        for (row, &t) in scores.iter().zip(&truth) {
            let order = order_gallery(row);
            prop_assert_eq!(order.iter().position(|&i| i == t).unwrap() + 1, true_match_rank(row, t));
            prop_assert!(order.windows(2).all(|w| row[w[0]] > row[w[1]] || (row[w[0]] == row[w[1]] && w[0] < w[1])));
        }
    }

    #[test]
    fn gallery_order_does_not_move_distinct_scores(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let g = rng.gen_range(1..10);
        let row: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t = rng.gen_range(0..g);
        let mut perm: Vec<usize> = (0..g).collect();
        for i in (1..g).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let permuted: Vec<f64> = perm.iter().map(|&i| row[i]).collect();
        let new_t = perm.iter().position(|&i| i == t).unwrap();
        prop_assert_eq!(true_match_rank(&row, t), true_match_rank(&permuted, new_t));
    }
}

#[test]
fn constant_model_gives_tie_break_baseline() {
    let cfg = Config::grad_check();
    let arch = Architecture::new(&cfg).unwrap();
    let mut params = init_params(&arch, &mut rng(0));
    params.similarity.v = Tensor::zeros(params.similarity.v.shape());
    let ds = synth_generate(5, 4, (cfg.height, cfg.width), 3).unwrap();
    let ids = ds.persons();
    let before = params.clone();
    let ev = evaluate(&arch, &params, &ds, &ids).unwrap();
    assert_eq!(params, before);
    assert!(ev.scores.iter().flatten().all(|&s| s == 0.5));
    assert_eq!(ev.curve.match_rate, counting_cmc(&[1, 2, 3, 4, 5], 5));
    for (p, r) in ev.rankings.iter().enumerate() {
        assert_eq!(r.true_rank, p + 1);
        let names: Vec<&str> = r.ranking.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ids.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

#[test]
fn single_gallery_entry_always_matches() {
    let curve = cmc_from_scores(&[vec![0.01]], &[0]).unwrap();
    assert_eq!(curve, CmcCurve { match_rate: vec![1.0], trials: 1 });
}
