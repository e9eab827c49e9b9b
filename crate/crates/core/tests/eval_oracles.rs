use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use windgmm::eval::{conditional_empirical, evaluate_conditional_fit, BinScore};
use windgmm::io::config::{test_seed, ScenarioConfig};
use windgmm::io::data::aggregate;
use windgmm::io::synth::bundled_scenario;
use windgmm::linalg::Vec2;
use windgmm::map::{default_hyperparams_with, fit_em, fit_map, init_params, FitConfig};
use windgmm::GmmParams;

fn scored(scores: &[BinScore]) -> Vec<(usize, f64)> {
    scores
        .iter()
        .filter_map(|s| Some((s.bin, s.rmse?)))
        .collect()
}

/// Pairs whose forecast sits exactly at each bin center and whose actual
/// output is drawn from the model's conditional there.
fn conditional_draws(model: &GmmParams, centers: &[f64], per_bin: usize, seed: u64) -> Vec<Vec2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(centers.len() * per_bin);
    for &c in centers {
        let cond = model.condition_on_forecast(c).unwrap();
        let pick = WeightedIndex::new(&cond.weights).unwrap();
        for _ in 0..per_bin {
            let k = pick.sample(&mut rng);
            let a = Normal::new(cond.means[k], cond.variances[k].sqrt())
                .unwrap()
                .sample(&mut rng);
            pairs.push(Vec2::new(a, c));
        }
    }
    pairs
}

#[test]
fn model_scored_on_its_own_samples_is_consistent() {
    let scenario = bundled_scenario();
    let train = aggregate(&scenario.generate(720, 1).unwrap().series);
    let hyper = default_hyperparams_with(&train, 8, &ScenarioConfig::bundled(1).hyper).unwrap();
    let init = init_params(&train, 8, 1).unwrap();
    let model = fit_map(&train, &hyper, &init, &FitConfig::default())
        .unwrap()
        .params;
    let y_max = train.iter().map(|p| p[1]).fold(0.0, f64::max);
    let centers: Vec<f64> = (1..=9).map(|k| k as f64 * 0.1 * y_max).collect();
    let pairs = conditional_draws(&model, &centers, 400_000, 2);
    let bins = conditional_empirical(&pairs, 9, 30, Some(y_max)).unwrap();
    let scores = scored(&evaluate_conditional_fit(&model, &bins).unwrap());
    assert_eq!(scores.len(), 9);
    for (bin, rmse) in scores {
        assert!(rmse < 0.02, "bin {bin}: {rmse}");
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

#[test]
fn map_conditional_beats_em_on_one_day() {
    let scenario = bundled_scenario();
    let mut map_rmse = vec![Vec::new(); 9];
    let mut em_rmse = vec![Vec::new(); 9];
    for seed in 0..10 {
        let train = aggregate(&scenario.generate(24, seed).unwrap().series);
        let test = aggregate(&scenario.generate(2400, test_seed(seed)).unwrap().series);
        let bins = conditional_empirical(&test, 9, 30, None).unwrap();
        let hyper =
            default_hyperparams_with(&train, 20, &ScenarioConfig::bundled(1).hyper).unwrap();
        let init = init_params(&train, 20, seed).unwrap();
        let map = fit_map(&train, &hyper, &init, &FitConfig::default()).unwrap();
        let em = fit_em(&train, &init, &FitConfig::default()).unwrap();
        let a = scored(&evaluate_conditional_fit(&map.params, &bins).unwrap());
        let b = scored(&evaluate_conditional_fit(&em.params, &bins).unwrap());
        for ((bin, x), (_, y)) in a.into_iter().zip(b) {
            map_rmse[bin - 1].push(x);
            em_rmse[bin - 1].push(y);
        }
    }
    for (k, (a, b)) in map_rmse.into_iter().zip(em_rmse).enumerate() {
        assert!(!a.is_empty());
        let (x, y) = (median(a), median(b));
        assert!(x <= y, "bin {}: MAP {x}, EM {y}", k + 1);
    }
}
