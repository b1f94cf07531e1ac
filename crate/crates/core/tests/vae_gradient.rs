use deepclean::nn::{grad_check, GradCheckConfig};
use deepclean::vae::VaeModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn window(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|i| (i as f64 * 0.06).sin() + 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect()
}

#[test]
fn elbo_gradient_matches_finite_differences_on_sampled_coordinates() {
    let model = VaeModel::build(3, 1250, 11).unwrap();
    let x = window(1250, 12);
    let eps = vec![0.3, -0.7, 1.1];
    let objective = model.elbo_objective(&x, eps);
    let t = std::time::Instant::now();
    let report = grad_check(&objective, &model.params.data, &GradCheckConfig {
        max_per_group: Some(60),
        seed: 5,
        ..GradCheckConfig::default()
    }).unwrap();
    eprintln!("checked {} excluded {} max {:e} in {:?}", report.checked, report.excluded, report.max_rel_error, t.elapsed());
    assert!(report.passed(), "{:?}", report.worst);
}
