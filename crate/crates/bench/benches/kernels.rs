use criterion::{black_box, criterion_group, criterion_main, Criterion};
use fgwarp::data_io::{generate_synthetic, SyntheticSpec};
use fgwarp::warp::{bilinear_warp, warp_array, FlowField};
use fgwarp::{Array, FlowNet, FlowNetConfig, Tape};

fn ramp(shape: &[usize], scale: f32) -> Array<f32> {
    let n = shape.iter().product();
    Array::new(
        shape.to_vec(),
        (0..n)
            .map(|i| ((i * 7919) % 1000) as f32 * scale / 1000.0)
            .collect(),
    )
    .unwrap()
}

fn conv(c: &mut Criterion) {
    let input = ramp(&[16, 32, 32], 1.0);
    let kernel = ramp(&[32, 16, 3, 3], 0.1);
    let bias = Array::zeros([32]);
    c.bench_function("conv2d 16->32 3x3 32x32 fwd+bwd", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let x = tape.param(input.clone());
            let y = x
                .conv2d(tape.param(kernel.clone()), tape.param(bias.clone()), 1, 1)
                .unwrap();
            tape.backward(y.sum()).unwrap();
            black_box(x.grad().unwrap());
        })
    });
}

fn warp(c: &mut Criterion) {
    let frame = ramp(&[3, 64, 64], 1.0);
    let flow = FlowField::uniform(64, 64, 0.07, -0.03);
    c.bench_function("warp 3x64x64", |b| {
        b.iter(|| black_box(warp_array(&frame, &flow).unwrap()))
    });
    c.bench_function("warp 3x64x64 fwd+bwd", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let src = tape.param(frame.clone());
            let f = tape.param(flow.array().clone());
            tape.backward(bilinear_warp(src, f).unwrap().sum()).unwrap();
            black_box(f.grad().unwrap());
        })
    });
}

fn flow_forward(c: &mut Criterion) {
    let seq = generate_synthetic(&SyntheticSpec {
        num_sequences: 1,
        ..Default::default()
    })
    .unwrap()
    .remove(0);
    let net = FlowNet::init(FlowNetConfig::default(), 1).unwrap();
    c.bench_function("flownet predict 64x64", |b| {
        b.iter(|| {
            black_box(
                net.predict(&seq.frames[0], &seq.frames[1], &seq.masks[0][0])
                    .unwrap(),
            )
        })
    });
}

criterion_group!(benches, conv, warp, flow_forward);
criterion_main!(benches);
