use windgmm::io::synth::generate_synthetic;
use windgmm::linalg::{Mat2, Vec2};
use windgmm::map::{
    align_components, aligned_max_difference, default_hyperparams, fit_em, fit_map, init_params,
    ComponentPrior, FitConfig, Hyperparams,
};
use windgmm::GmmParams;

fn two_blobs() -> GmmParams {
    GmmParams::new(
        vec![0.4, 0.6],
        vec![Vec2::new(1.0, 1.2), Vec2::new(4.0, 3.5)],
        vec![
            Mat2::new(0.3, 0.1, 0.1, 0.2),
            Mat2::new(0.5, -0.2, -0.2, 0.4),
        ],
    )
    .unwrap()
}

fn flat_prior(j: usize) -> Hyperparams {
    Hyperparams::uniform(
        ComponentPrior {
            dirichlet_count: 1.0,
            prior_mean: [0.0, 0.0],
            mean_strength: 1e-8,
            wishart_dof: 2.0 + 1e-6,
            wishart_scale: [[1e-8, 0.0], [0.0, 1e-8]],
        },
        j,
    )
    .unwrap()
}

fn tight() -> FitConfig {
    FitConfig {
        tol: 1e-12,
        max_iter: 2000,
        ..FitConfig::default()
    }
}

#[test]
fn near_flat_prior_map_equals_em() {
    let data = two_blobs().sample(10_000, 1);
    let init = init_params(&data, 2, 3).unwrap();
    let map = fit_map(&data, &flat_prior(2), &init, &tight()).unwrap();
    let em = fit_em(&data, &init, &tight()).unwrap();
    let d = aligned_max_difference(&em.params, &map.params).unwrap();
    assert!(d < 1e-3, "{d}");
}

#[test]
fn recovers_generating_means() {
    let truth = two_blobs();
    let data = truth.sample(5000, 2);
    let init = init_params(&data, 2, 0).unwrap();
    let fit = fit_map(
        &data,
        &default_hyperparams(&data, 2).unwrap(),
        &init,
        &FitConfig::default(),
    )
    .unwrap();
    let order = align_components(&truth, &fit.params).unwrap();
    for (k, &j) in order.iter().enumerate() {
        let gap = (truth.means()[k] - fit.params.means()[j]).amax();
        assert!(gap < 0.05, "component {k}: {gap}");
    }
}

#[test]
fn fits_are_deterministic() {
    let data = two_blobs().sample(300, 5);
    let init = init_params(&data, 3, 1).unwrap();
    let hyper = default_hyperparams(&data, 3).unwrap();
    let a = fit_map(&data, &hyper, &init, &FitConfig::default()).unwrap();
    let b = fit_map(&data, &hyper, &init, &FitConfig::default()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn em_overfits_tiny_training_sets() {
    let truth = two_blobs();
    let train = truth.sample(24, 8);
    let test = truth.sample(5000, 9);
    let init = init_params(&train, 20, 8).unwrap();
    let em = fit_em(&train, &init, &FitConfig::default()).unwrap();
    let mean_ll =
        |pts: &[Vec2]| pts.iter().map(|p| em.params.ln_pdf(p)).sum::<f64>() / pts.len() as f64;
    let (inside, outside) = (mean_ll(&train), mean_ll(&test));
    assert!(inside > outside + 2.0, "train {inside}, held out {outside}");
}

#[test]
fn standard_normal_default_prior() {
    let data = GmmParams::single(Vec2::zeros(), Mat2::identity())
        .unwrap()
        .sample(100_000, 4);
    let hyper = default_hyperparams(&data, 1).unwrap();
    let prior = &hyper.components()[0];
    assert!(prior.lambda().norm() < 0.02);
    assert!(
        (prior.sigma() - Mat2::identity()).amax() < 0.02,
        "{}",
        prior.sigma()
    );
}

#[test]
fn refitting_a_fitted_farm_recovers_it() {
    let farm = two_blobs().sample(2000, 6);
    let init = init_params(&farm, 2, 0).unwrap();
    let fitted = fit_map(
        &farm,
        &default_hyperparams(&farm, 2).unwrap(),
        &init,
        &FitConfig::default(),
    )
    .unwrap()
    .params;
    let synth = generate_synthetic(std::slice::from_ref(&fitted), 20_000, 7).unwrap();
    let data = &synth.series[0].observations;
    let init = init_params(data, 2, 0).unwrap();
    let refit = fit_map(
        data,
        &default_hyperparams(data, 2).unwrap(),
        &init,
        &FitConfig::default(),
    )
    .unwrap();
    let d = aligned_max_difference(&fitted, &refit.params).unwrap();
    assert!(d < 0.05, "{d}");
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn init_log_likelihood_is_finite(
            pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 5..60),
            j in 1usize..5,
            seed in any::<u64>(),
        ) {
            let data: Vec<Vec2> = pts.iter().map(|&(a, b)| Vec2::new(a, b)).collect();
            let init = init_params(&data, j.min(data.len()), seed).unwrap();
            let ll: f64 = data.iter().map(|p| init.ln_pdf(p)).sum();
            prop_assert!(ll.is_finite());
        }

        #[test]
        fn default_prior_is_always_valid(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40),
            j in 1usize..30,
        ) {
            let data: Vec<Vec2> = pts.iter().map(|&(a, b)| Vec2::new(a, b)).collect();
            let hyper = default_hyperparams(&data, j).unwrap();
            prop_assert_eq!(hyper.n_components(), j);
            for c in hyper.components() {
                prop_assert!(c.sigma()[(0, 0)] >= 1e-6 && c.wishart_dof > 1.0);
            }
        }
    }
}
