use fwic::fwi::{invert, FwiConfig, StopReason};
use fwic::geomodel::{generate_model, LayeredModelParams, VelocityModel};
use fwic::metrics::Metrics;
use fwic::par::Execution;
use fwic::profile::Profile;

fn two_layer_desk() -> (Profile, VelocityModel) {
    let p = Profile::desk();
    let params = LayeredModelParams::new(2, 3).with_allowed_layers(2..=2);
    let m = generate_model(&params, p.grid).unwrap();
    (p, m)
}

#[test]
fn starting_at_truth_stops_immediately() {
    let (p, truth) = two_layer_desk();
    let setup = p.setup().unwrap();
    let data = setup.simulate_survey(&truth, Execution::available()).unwrap();
    let report = invert(&truth, &setup, &data, &FwiConfig::new(vec![0, 3, 7]), Execution::available()).unwrap();
    assert_eq!(report.iterations, 1);
    assert_eq!(report.stop_reason, StopReason::Threshold);
    assert!(report.losses[0] < 1e-6);
}

#[test]
fn zero_iteration_budget_is_rejected() {
    let (p, truth) = two_layer_desk();
    let setup = p.setup().unwrap();
    let data = setup.simulate_survey(&truth, Execution::available()).unwrap();
    let mut config = FwiConfig::new(vec![0]);
    config.max_iterations = 0;
    assert!(invert(&truth, &setup, &data, &config, Execution::available()).is_err());
}

#[test]
fn desk_two_layer_recovery() {
    let (p, truth) = two_layer_desk();
    let setup = p.setup().unwrap();
    let data = setup.simulate_survey(&truth, Execution::available()).unwrap();
    let mut config = p.fwi_config((0..p.n_shots).collect());
    config.max_iterations = 60;
    config.loss_threshold = 1e-7;
    let m0 = config.starting_model(&truth).unwrap();
    let before = Metrics::between(&m0, &truth).unwrap();
    let report = invert(&m0, &setup, &data, &config, Execution::available()).unwrap();
    let after = Metrics::between(&report.model, &truth).unwrap();
    println!(
        "{} iterations ({}), {:.1}s, J {:.2e} -> {:.2e}, ssim {:.4} -> {:.4}, mae {:.4} -> {:.4}",
        report.iterations,
        report.stop_reason,
        report.total_seconds,
        report.losses[0],
        report.losses.last().unwrap(),
        before.ssim,
        after.ssim,
        before.mae,
        after.mae
    );
    assert_eq!(report.losses.len(), report.iterations);
    assert_eq!(report.iteration_seconds.len(), report.iterations);
    assert!(report.losses.windows(2).all(|w| w[1] <= w[0]));
    assert!(before.ssim < 0.9);
    assert!(after.ssim > 0.9, "ssim {}", after.ssim);
    assert!(after.mae < before.mae);
}
