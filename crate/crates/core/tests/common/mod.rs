//! Independent oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use invface::face_model::{generate_model, FaceModel, ModelSpec};
use invface::illumination::{sh_basis, SH_BANDS};
use invface::params::{ParamLayout, ParameterVector};
use invface::regressor::autodiff::Graph;
use invface::regressor::{ConvSpec, LossMetric, Network, NetworkSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_model_spec() -> ModelSpec {
    ModelSpec {
        n_shape: 5,
        n_expr: 3,
        n_refl: 4,
        mesh_grid: (20, 20),
        rng_seed: 3,
    }
}

pub fn small_model() -> FaceModel {
    generate_model(&small_model_spec()).unwrap()
}

fn uniform_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Largest deviation of the Monte-Carlo Gram matrix of the SH basis from the identity.
pub fn sh_orthonormality_error(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gram = [[0.0f64; SH_BANDS]; SH_BANDS];
    for _ in 0..samples {
        let h = sh_basis(uniform_direction(&mut rng)).unwrap();
        for j in 0..SH_BANDS {
            for k in 0..SH_BANDS {
                gram[j][k] += h[j] * h[k];
            }
        }
    }
    let area = 4.0 * std::f64::consts::PI / samples as f64;
    let mut worst = 0.0f64;
    for (j, row) in gram.iter().enumerate() {
        for (k, &g) in row.iter().enumerate() {
            let target = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((g * area - target).abs());
        }
    }
    worst
}

fn random_vector(layout: ParamLayout, rng: &mut ChaCha8Rng, scale: f64) -> ParameterVector {
    let values = (0..layout.len()).map(|_| rng.gen_range(-scale..scale)).collect();
    ParameterVector::from_values(layout, values).unwrap()
}

/// Worst relative difference between the model's geometry/reflectance
/// evaluation and a naive per-coordinate summation over modes.
pub fn model_evaluation_error(model: &FaceModel, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = model.layout();
    let dim = 3 * model.n_vertices();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let theta = random_vector(layout, &mut rng, 3.0);
        let geometry = model.evaluate_geometry(&theta).unwrap();
        let reflectance = model.evaluate_reflectance_raw(&theta).unwrap();
        for k in 0..dim {
            let mut g = model.mean_geometry[k] as f64;
            for i in 0..layout.n_shape {
                g += theta.shape()[i] * model.shape_sigma[i] as f64 * model.shape_basis.as_flat()[i * dim + k] as f64;
            }
            for j in 0..layout.n_expr {
                g += theta.expression()[j] * model.expr_sigma[j] as f64 * model.expr_basis.as_flat()[j * dim + k] as f64;
            }
            let mut r = model.mean_reflectance[k] as f64;
            for i in 0..layout.n_refl {
                r += theta.reflectance()[i] * model.refl_sigma[i] as f64 * model.refl_basis.as_flat()[i * dim + k] as f64;
            }
            worst = worst.max((geometry[k] - g).abs() / g.abs().max(1.0));
            worst = worst.max((reflectance[k] - r).abs() / r.abs().max(1.0));
        }
    }
    worst
}

/// Worst relative error of the analytic loss gradient against central differences.
pub fn loss_gradient_error(metric: &LossMetric, batch: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = metric.dim();
    let pred: Vec<f64> = (0..batch * m).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let target: Vec<f32> = (0..batch * m).map(|_| rng.gen_range(-5.0f32..5.0)).collect();
    let (_, grad) = metric.batch(&pred, &target).unwrap();
    // central differences are exact for a quadratic at any step; a large step
    // keeps cancellation error far below the tolerance
    let h = 0.5;
    let mut worst = 0.0f64;
    for i in 0..pred.len() {
        let mut p = pred.clone();
        p[i] += h;
        let up = metric.batch(&p, &target).unwrap().0;
        p[i] -= 2.0 * h;
        let down = metric.batch(&p, &target).unwrap().0;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-12));
    }
    worst
}

pub struct GradientCheck {
    pub checked: usize,
    /// Weights whose +-h interval moves some ReLU input across zero; central
    /// differences are not a valid oracle there.
    pub kinked: usize,
    pub failures: usize,
    pub worst_relative: f64,
}

/// Signs of every ReLU input in the network, in evaluation order.
fn relu_pattern(net: &Network<f64>, input: &Tensor<f64>) -> Vec<bool> {
    let mut g = Graph::new();
    let mut h = g.leaf(input.clone(), false);
    let p: Vec<_> = net.params.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let mut signs = Vec::new();
    for (i, c) in net.spec.conv.iter().enumerate() {
        h = g.conv2d(h, p[2 * i], p[2 * i + 1], c.stride, c.pad());
        signs.extend(g.value(h).data.iter().map(|&v| v > 0.0));
        h = g.relu(h);
    }
    let l = net.spec.conv.len();
    h = g.flatten(h);
    h = g.linear(h, p[2 * l], p[2 * l + 1]);
    signs.extend(g.value(h).data.iter().map(|&v| v > 0.0));
    signs
}

/// Compares every weight gradient of a tiny f64 network (8x8 input, two conv
/// layers, two linear layers) against central differences with step `h`.
/// A weight passes within 1e-3 relative or 1e-6 absolute.
pub fn network_gradient_check(seed: u64, h: f64) -> GradientCheck {
    let layout = ParamLayout::new(2, 1, 1);
    let spec = NetworkSpec {
        input_resolution: 8,
        conv: vec![
            ConvSpec {
                out_channels: 3,
                kernel: 3,
                stride: 2,
            },
            ConvSpec {
                out_channels: 4,
                kernel: 3,
                stride: 1,
            },
        ],
        hidden: 6,
        layout,
        init_seed: seed,
    };
    let mut net = Network::<f64>::new(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // larger output weights than the production init so every path carries signal
    let last = net.params.len() - 2;
    for v in net.params[last].data.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    for p in net.params.iter_mut().skip(1).step_by(2) {
        p.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }
    let batch = 2;
    let input = Tensor::from_vec(
        &[batch, 3, 8, 8],
        (0..batch * 3 * 64).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    );
    let m = layout.len();
    let target: Vec<f32> = (0..batch * m).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let metric = LossMetric::euclidean(layout);
    let loss_of = |net: &Network<f64>| {
        let out = net.forward(&input).unwrap();
        metric.batch(&out.data, &target).unwrap().0
    };
    let (_, grads) = net
        .gradients(input.clone(), |out| metric.batch(&out.data, &target))
        .unwrap();
    let mut check = GradientCheck {
        checked: 0,
        kinked: 0,
        failures: 0,
        worst_relative: 0.0,
    };
    for (t, grad) in grads.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let orig = net.params[t].data[i];
            net.params[t].data[i] = orig + h;
            let up = loss_of(&net);
            let up_pattern = relu_pattern(&net, &input);
            net.params[t].data[i] = orig - h;
            let down = loss_of(&net);
            let down_pattern = relu_pattern(&net, &input);
            net.params[t].data[i] = orig;
            check.checked += 1;
            if up_pattern != down_pattern {
                check.kinked += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * h);
            let abs = (fd - g).abs();
            let rel = abs / fd.abs().max(g.abs()).max(1e-300);
            if abs > 1e-6 {
                check.worst_relative = check.worst_relative.max(rel);
                if rel > 1e-3 {
                    check.failures += 1;
                }
            }
        }
    }
    check
}

pub fn desk_model() -> FaceModel {
    generate_model(&ModelSpec::desk()).unwrap()
}
