//! Gradient checks; the cases live in `common/gradient_suite.rs`.

#[path = "common/gradient_suite.rs"]
mod suite;

use fgwarp::diffarray::{grad_check_report, GradCheck, Tape};
use suite::{binary, perturbed_flownet, rng, uniform};

macro_rules! grad_tests {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                if let Err(e) = suite::$name() {
                    panic!("{e}");
                }
            }
        )*
    };
}

grad_tests!(
    add,
    sub,
    mul,
    div,
    minimum,
    maximum,
    add_scalar,
    mul_scalar,
    neg,
    rsub_scalar,
    sigmoid,
    tanh,
    relu,
    leaky_relu,
    log,
    square,
    sum,
    mean,
    repeat_channels,
    concat_channels,
    conv2d,
    upsample2x,
    bilinear_warp_source_and_flow,
    loss_primitives,
    warp_then_losses,
    flow_forward_warp_loss_chain,
    segmenter_loss_chain,
);

#[test]
fn recording_does_not_change_forward_values() {
    let net = perturbed_flownet(3).cast::<f32>();
    let mut r = rng(3);
    let x0 = uniform(&mut r, &[3, 32, 32], 0.0, 1.0).cast::<f32>();
    let x1 = uniform(&mut r, &[3, 32, 32], 0.0, 1.0).cast::<f32>();
    let m = binary(&mut r, &[1, 32, 32]).cast::<f32>();
    let tape = Tape::new();
    let p = net.params.bind(&tape, true);
    let recorded = net
        .forward(
            &p,
            tape.constant(x0.clone()),
            tape.constant(x1.clone()),
            tape.constant(m.clone()),
        )
        .unwrap()
        .to_array();
    let plain = net.predict(&x0, &x1, &m).unwrap();
    assert_eq!(plain.array(), &recorded);
}

#[test]
fn sum_of_squares_is_nearly_exact() {
    let mut r = rng(9);
    let x = uniform(&mut r, &[2, 4, 4], -2.0, 2.0);
    let report =
        grad_check_report(|_, v| Ok(v[0].square().sum()), &[x], &GradCheck::default()).unwrap();
    assert!(report.max_rel_err <= 1e-7, "{report:?}");
}
