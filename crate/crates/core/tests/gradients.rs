//! Finite-difference gradient suite; the checks themselves live in
//! `tests/fd` so the acceptance gate can run them too.

mod fd;

#[test]
fn dense_relu_mse_matches_fd() {
    fd::dense_relu_mse();
}

#[test]
fn conv_stack_matches_fd() {
    fd::conv_stack();
}

#[test]
fn layer_norm_matches_fd() {
    fd::layer_norm();
}

#[test]
fn gru_step_matches_fd() {
    fd::gru_step();
}

#[test]
fn softmax_losses_match_fd() {
    fd::softmax_losses();
}

#[test]
fn full_student_policy_matches_fd_on_8x8_frames() {
    fd::full_student_policy();
}

#[test]
fn ppo_surrogate_matches_fd() {
    fd::ppo_surrogate();
}
