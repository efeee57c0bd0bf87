use chlorolab_core::nn::gradcheck::cases;
use chlorolab_core::nn::gradcheck::relative_error;

const TOL: f64 = 1e-4;

fn run(name: &str, case: fn(u64) -> chlorolab_core::nn::gradcheck::GradCheck) {
    for seed in 0..10 {
        let r = case(seed);
        assert!(r.checked > 0);
        assert!(
            r.max_rel_error <= TOL,
            "{name} seed {seed}: rel error {:e} at index {}",
            r.max_rel_error,
            r.worst_index
        );
    }
}

#[test]
fn residual_block_matches_finite_differences() {
    run("residual", cases::residual_block);
}

#[test]
fn trunk_matches_finite_differences() {
    run("trunk", cases::trunk);
}

#[test]
fn lstm_step_matches_finite_differences() {
    run("lstm step", cases::lstm_step);
}

#[test]
fn bilstm_matches_finite_differences() {
    run("bilstm", cases::bilstm);
}

#[test]
fn cnn_network_matches_finite_differences() {
    run("cnn", cases::cnn_network);
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
}
