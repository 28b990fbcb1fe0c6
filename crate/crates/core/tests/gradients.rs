mod common;

use std::time::Instant;

use common::{check, conv, input_gradient_error, GRAD_TOL as TOL};
use gliopath::nncore::pool::{
    global_avg_pool_backward, global_avg_pool_forward, maxpool2_backward, maxpool2_forward,
};
use gliopath::nncore::{default_architecture, ConvGeometry, LayerSpec};

#[test]
fn conv_layer() {
    let e = check(vec![conv(3, 4, true)], [2, 3, 6, 6], 1.0);
    assert!(e <= TOL, "{e}");
}

#[test]
fn strided_unpadded_conv() {
    let spec = LayerSpec::Conv {
        geometry: ConvGeometry {
            in_ch: 2,
            out_ch: 3,
            kernel: 2,
            stride: 2,
            padding: 0,
        },
        bias: true,
    };
    let e = check(vec![spec], [2, 2, 6, 6], 1.0);
    assert!(e <= TOL, "{e}");
}

#[test]
fn batchnorm_layer() {
    let e = check(vec![conv(3, 4, false), LayerSpec::BatchNorm { channels: 4 }], [4, 3, 5, 5], 1.0);
    assert!(e <= TOL, "{e}");
}

#[test]
fn relu_between_convs() {
    let e = check(vec![conv(3, 4, true), LayerSpec::Relu, conv(4, 2, true)], [2, 3, 6, 6], 1.0);
    assert!(e <= TOL, "{e}");
}

#[test]
fn maxpool_between_convs() {
    let e = check(vec![conv(3, 4, true), LayerSpec::MaxPool, conv(4, 2, true)], [2, 3, 8, 8], 1.0);
    assert!(e <= TOL, "{e}");
}

#[test]
fn identity_residual_block() {
    let specs = vec![
        conv(3, 4, false),
        LayerSpec::ResidualBlock {
            in_ch: 4,
            out_ch: 4,
            stride: 1,
        },
    ];
    let e = check(specs, [3, 3, 6, 6], 1.0);
    assert!(e <= TOL, "{e}");
}

#[test]
fn projecting_residual_block() {
    let specs = vec![LayerSpec::ResidualBlock {
        in_ch: 3,
        out_ch: 6,
        stride: 2,
    }];
    let e = check(specs, [3, 3, 8, 8], 1.0);
    assert!(e <= TOL, "{e}");
}

#[test]
fn gap_and_dense() {
    let specs = vec![
        conv(3, 4, true),
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense {
            in_features: 4,
            units: 2,
        },
    ];
    let e = check(specs, [2, 3, 6, 6], 1.0);
    assert!(e <= TOL, "{e}");
}

#[test]
fn full_default_network() {
    let start = Instant::now();
    let e = check(default_architecture(3, [16, 32, 64]), [8, 3, 16, 16], 1.0);
    assert!(e <= TOL, "{e}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn corrupted_conv_backward_is_caught() {
    let e = check(default_architecture(3, [16, 32, 64]), [8, 3, 16, 16], 2.0);
    assert!(e > 0.3, "{e}");
    let e = check(vec![conv(3, 4, true)], [2, 3, 6, 6], 2.0);
    assert!(e > 0.3, "{e}");
}

#[test]
fn maxpool_input_gradient() {
    let e = input_gradient_error(
        [2, 3, 6, 6],
        |x| maxpool2_forward(x).unwrap().0,
        |x, dy| {
            let (_, arg) = maxpool2_forward(x).unwrap();
            maxpool2_backward(x.shape(), &arg, dy)
        },
    );
    assert!(e <= TOL, "{e}");
}

#[test]
fn gap_input_gradient() {
    let e = input_gradient_error([2, 3, 5, 4], global_avg_pool_forward, |x, dy| {
        global_avg_pool_backward(x.shape(), dy)
    });
    assert!(e <= TOL, "{e}");
}
