//! Finite-difference gradient checks, one test per primitive or block.

#[path = "common/grad_suite.rs"]
#[allow(dead_code)]
mod grad_suite;

macro_rules! grad_tests {
    ($($name:ident),* $(,)?) => {$(
        #[test]
        fn $name() {
            let worst = grad_suite::$name();
            assert!(worst < grad_suite::TOL, "{}: max relative error {worst:e}", stringify!($name));
        }
    )*};
}

grad_tests!(
    matmul,
    add_and_broadcasts,
    mul_and_broadcasts,
    conv1d,
    layer_norm,
    softmax,
    activations,
    reductions_and_reshaping,
    attention,
    losses,
    encoder_layer_inputs,
    encoder_layer_params,
    cross_attention_block,
    detector_forward_params,
    reconstructor_forward_and_loss_params,
);
