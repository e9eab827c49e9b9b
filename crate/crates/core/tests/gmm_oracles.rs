use windgmm::linalg::{Mat2, Vec2};
use windgmm::{Axis, GmmParams};

fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        if (lo..hi).contains(&x) {
            counts[((x - lo) / width) as usize] += 1;
        }
    }
    counts
        .iter()
        .map(|&c| c as f64 / (samples.len() as f64 * width))
        .collect()
}

#[test]
fn marginal_matches_monte_carlo_histogram() {
    let g = GmmParams::new(
        vec![0.6, 0.4],
        vec![Vec2::new(1.0, 0.0), Vec2::new(3.0, 2.0)],
        vec![
            Mat2::new(0.5, 0.2, 0.2, 0.4),
            Mat2::new(0.8, -0.1, -0.1, 0.6),
        ],
    )
    .unwrap();
    let a: Vec<f64> = g.sample(1_000_000, 4).iter().map(|p| p[0]).collect();
    let (lo, hi, bins) = (-2.0, 7.0, 100);
    let hist = histogram(&a, lo, hi, bins);
    let width = (hi - lo) / bins as f64;
    let marginal = g.marginal(Axis::Actual);
    let sq: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, h)| (marginal.pdf(lo + (i as f64 + 0.5) * width) - h).powi(2))
        .sum();
    let rmse = (sq / bins as f64).sqrt();
    assert!(rmse < 0.01, "{rmse}");
}

#[test]
fn standard_normal_sample_mean() {
    let g = GmmParams::single(Vec2::zeros(), Mat2::identity()).unwrap();
    let pts = g.sample(1_000_000, 12);
    let mean = pts.iter().sum::<Vec2>() / pts.len() as f64;
    assert!(mean.norm() < 0.005, "{mean}");
}

#[test]
fn component_frequencies_follow_weights() {
    let w = [0.5, 0.3, 0.2];
    let centers = [0.0, 100.0, 200.0];
    let g = GmmParams::new(
        w.to_vec(),
        centers.iter().map(|&c| Vec2::new(c, c)).collect(),
        vec![Mat2::identity(); 3],
    )
    .unwrap();
    let n = 100_000;
    let mut counts = [0usize; 3];
    for p in g.sample(n, 3) {
        counts[(p[0] / 100.0).round() as usize] += 1;
    }
    for (c, w) in counts.iter().zip(w) {
        let expected = n as f64 * w;
        let sd = (n as f64 * w * (1.0 - w)).sqrt();
        assert!((*c as f64 - expected).abs() < 3.0 * sd, "{c} vs {expected}");
    }
}

#[test]
fn conditional_density_integrates_to_one() {
    let g = GmmParams::new(
        vec![0.3, 0.7],
        vec![Vec2::new(0.4, 0.5), Vec2::new(1.5, 1.2)],
        vec![
            Mat2::new(0.04, 0.03, 0.03, 0.05),
            Mat2::new(0.09, 0.05, 0.05, 0.08),
        ],
    )
    .unwrap();
    for z_f in [0.2, 0.8, 1.4] {
        let cond = g.condition_on_forecast(z_f).unwrap();
        let (lo, hi, n) = (-3.0, 3.0, 6000);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * cond.pdf(lo + i as f64 * h)
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-4, "{z_f}: {total}");
    }
}
