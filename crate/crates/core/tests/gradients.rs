use stmc_core::gradcheck::{blstm_check, ctc_check, full_suite, joint_loss_check, regression_check};
use stmc_tensor::gradcheck::GradCheckConfig;

fn cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

#[test]
fn ctc_gradient_matches_finite_differences() {
    let r = ctc_check(&cfg());
    assert!(r.passed(), "{r:?}");
}

#[test]
fn blstm_gradient_matches_finite_differences() {
    let r = blstm_check(&cfg()).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn regression_gradients_match_both_beta_modes() {
    for r in regression_check(&cfg()).unwrap() {
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn micro_model_joint_loss_gradient() {
    let r = joint_loss_check(&cfg()).unwrap();
    println!("{} checked, {} kinks, max rel {:.2e}", r.checked, r.excluded_kinks, r.max_rel_error);
    assert!(r.passed(), "{r:?}");
    assert!(r.checked > 100);
}

#[test]
fn suite_covers_every_check() {
    let reports = full_suite(&cfg()).unwrap();
    assert!(reports.iter().any(|r| r.name.starts_with("joint_loss")));
    assert!(reports.iter().all(|r| r.passed()), "{:?}", reports.iter().filter(|r| !r.passed()).collect::<Vec<_>>());
}
