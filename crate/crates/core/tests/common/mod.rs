// Independent oracles shared by the integration tests and the acceptance
// target. Nothing here calls the derivative code under test.
#![allow(dead_code)]

use std::f64::consts::PI;

use lrednn::exec::Execution;
use lrednn::linalg::DenseMatrix;
use lrednn::network::{Activation, Architecture, CollocationGrid, MlpNetwork};
use lrednn::pde::PdeOperator;

/// Straight-line forward pass read off the public layer data.
pub fn naive_forward(net: &MlpNetwork, x: &[f64]) -> Vec<f64> {
    let mut h: Vec<f64> = match net.embedding() {
        Some(e) => x
            .iter()
            .flat_map(|&xi| [(e.frequency * xi).sin(), (e.frequency * xi).cos()])
            .collect(),
        None => x.to_vec(),
    };
    for layer in net.layers() {
        let mut z = layer.bias.clone();
        for i in 0..layer.weight.rows() {
            for j in 0..layer.weight.cols() {
                z[i] += layer.weight.get(i, j) * h[j];
            }
        }
        h = match layer.activation {
            Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
            Activation::Identity => z,
        };
    }
    h
}

pub fn seeded_net(dim: usize, hidden: &[usize], q: usize, seed: u64) -> MlpNetwork {
    MlpNetwork::init(&Architecture::periodic(dim, hidden, q), seed).unwrap()
}

/// Same shape as [`seeded_net`] with nonzero biases, so bias columns of the
/// Jacobian are exercised away from zero.
pub fn seeded_net_with_biases(dim: usize, hidden: &[usize], q: usize, seed: u64) -> MlpNetwork {
    let net = seeded_net(dim, hidden, q, seed);
    let mut p = net.parameters();
    for (k, v) in p.as_mut_slice().iter_mut().enumerate() {
        *v += 0.05 * ((k as f64 + 1.0) * 0.7 + seed as f64).sin();
    }
    net.with_parameters(&p).unwrap()
}

/// Max over entries of `|J − J_fd| / max(|J|, 1)`, central differences of
/// the naive forward pass with step `h`.
pub fn jacobian_fd_error(net: &MlpNetwork, grid: &CollocationGrid, h: f64) -> f64 {
    let j = net.param_jacobian(grid);
    let base = net.parameters();
    let q = net.output_dim();
    let mut worst = 0.0_f64;
    for k in 0..net.param_count() {
        let mut plus = base.clone();
        plus.as_mut_slice()[k] += h;
        let mut minus = base.clone();
        minus.as_mut_slice()[k] -= h;
        let np = net.with_parameters(&plus).unwrap();
        let nm = net.with_parameters(&minus).unwrap();
        for i in 0..grid.len() {
            let fp = naive_forward(&np, grid.point(i));
            let fm = naive_forward(&nm, grid.point(i));
            for c in 0..q {
                let fd = (fp[c] - fm[c]) / (2.0 * h);
                let exact = j.get(i * q + c, k);
                worst = worst.max((exact - fd).abs() / exact.abs().max(1.0));
            }
        }
    }
    worst
}

/// `(first, second)` order jet errors at `x` against central differences of
/// the naive forward pass, each as `|jet − fd| / max(|jet|, 1)`.
pub fn jet_fd_errors(net: &MlpNetwork, x: &[f64]) -> (f64, f64) {
    let jet = net.spatial_jet(x);
    let (h1, h2) = (1e-5, 1e-4);
    let f0 = naive_forward(net, x);
    let mut e1 = 0.0_f64;
    let mut e2 = 0.0_f64;
    for d in 0..x.len() {
        let shifted = |h: f64| {
            let mut y = x.to_vec();
            y[d] += h;
            naive_forward(net, &y)
        };
        let (p1, m1) = (shifted(h1), shifted(-h1));
        let (p2, m2) = (shifted(h2), shifted(-h2));
        for c in 0..net.output_dim() {
            let g = (p1[c] - m1[c]) / (2.0 * h1);
            let s = (p2[c] - 2.0 * f0[c] + m2[c]) / (h2 * h2);
            let gj = jet.gradient.get(c, d);
            let sj = jet.laplacian_terms.get(c, d);
            e1 = e1.max((gj - g).abs() / gj.abs().max(1.0));
            e2 = e2.max((sj - s).abs() / sj.abs().max(1.0));
        }
    }
    (e1, e2)
}

/// A closed-form field with its exact jet.
pub struct Manufactured {
    pub name: &'static str,
    pub op: PdeOperator,
    pub field: fn(&[f64]) -> Vec<f64>,
    pub jet: fn(&[f64]) -> lrednn::network::SpatialJet,
    /// Right-hand side worked out by hand for this field.
    pub rhs: fn(&[f64]) -> Vec<f64>,
}

fn jet(value: Vec<f64>, grad: &[&[f64]], second: &[&[f64]]) -> lrednn::network::SpatialJet {
    lrednn::network::SpatialJet {
        value,
        gradient: DenseMatrix::from_rows(grad),
        laplacian_terms: DenseMatrix::from_rows(second),
    }
}

const KAPPA: f64 = 0.7;
const EPS: f64 = 0.3;
const NU: f64 = 0.05;
const ALPHA: f64 = 1.3;

pub fn manufactured_cases() -> Vec<Manufactured> {
    vec![
        // u = sin(πx) sin(2πy)
        Manufactured {
            name: "heat_2d",
            op: PdeOperator::heat(KAPPA, 2).unwrap(),
            field: |x| vec![(PI * x[0]).sin() * (2.0 * PI * x[1]).sin()],
            jet: |x| {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (2.0 * PI * x[1]).sin_cos();
                jet(
                    vec![sx * sy],
                    &[&[PI * cx * sy, 2.0 * PI * sx * cy]],
                    &[&[-PI * PI * sx * sy, -4.0 * PI * PI * sx * sy]],
                )
            },
            rhs: |x| vec![-5.0 * PI * PI * KAPPA * (PI * x[0]).sin() * (2.0 * PI * x[1]).sin()],
        },
        // u = 0.5 sin(πx); the reaction written as (u − u³)/ε²
        Manufactured {
            name: "allen_cahn_1d",
            op: PdeOperator::allen_cahn(EPS, 1).unwrap(),
            field: |x| vec![0.5 * (PI * x[0]).sin()],
            jet: |x| {
                let (s, c) = (PI * x[0]).sin_cos();
                jet(vec![0.5 * s], &[&[0.5 * PI * c]], &[&[-0.5 * PI * PI * s]])
            },
            rhs: |x| {
                let u = 0.5 * (PI * x[0]).sin();
                vec![-EPS * EPS * PI * PI * u + (u - u * u * u) / (EPS * EPS)]
            },
        },
        // u = cos(πx) + 0.5 cos(πy)
        Manufactured {
            name: "allen_cahn_2d",
            op: PdeOperator::allen_cahn(EPS, 2).unwrap(),
            field: |x| vec![(PI * x[0]).cos() + 0.5 * (PI * x[1]).cos()],
            jet: |x| {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                jet(
                    vec![cx + 0.5 * cy],
                    &[&[-PI * sx, -0.5 * PI * sy]],
                    &[&[-PI * PI * cx, -0.5 * PI * PI * cy]],
                )
            },
            rhs: |x| {
                let u = (PI * x[0]).cos() + 0.5 * (PI * x[1]).cos();
                vec![-EPS * EPS * PI * PI * u + (u - u * u * u) / (EPS * EPS)]
            },
        },
        // u = α + sin(πx):
        //   Δ(u²) = −2απ² sin πx + 2π² cos 2πx
        //   ∂x(Vu) = π cos πx (1 − sx sy) − π (α + sx) cx sy
        //   ∂y(Vu) = −π (α + sx) sx cy
        Manufactured {
            name: "pme_drift",
            op: PdeOperator::PmeDrift,
            field: |x| vec![ALPHA + (PI * x[0]).sin()],
            jet: |x| {
                let (s, c) = (PI * x[0]).sin_cos();
                jet(vec![ALPHA + s], &[&[PI * c, 0.0]], &[&[-PI * PI * s, 0.0]])
            },
            rhs: |x| {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                let lap_u2 = -2.0 * ALPHA * PI * PI * sx + 2.0 * PI * PI * (2.0 * PI * x[0]).cos();
                let dx = PI * cx * (1.0 - sx * sy) - PI * (ALPHA + sx) * cx * sy;
                let dy = -PI * (ALPHA + sx) * sx * cy;
                vec![lap_u2 - dx - dy]
            },
        },
        // Taylor–Green velocity: u = sin πx cos πy, v = −cos πx sin πy, so
        // (u·∇)u = (π/2) sin 2πx and (u·∇)v = (π/2) sin 2πy.
        Manufactured {
            name: "burgers",
            op: PdeOperator::burgers(NU).unwrap(),
            field: |x| {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                vec![sx * cy, -cx * sy]
            },
            jet: |x| {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                let p2 = PI * PI;
                jet(
                    vec![sx * cy, -cx * sy],
                    &[&[PI * cx * cy, -PI * sx * sy], &[PI * sx * sy, -PI * cx * cy]],
                    &[&[-p2 * sx * cy, -p2 * sx * cy], &[p2 * cx * sy, p2 * cx * sy]],
                )
            },
            rhs: |x| {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                vec![
                    -2.0 * PI * PI * NU * sx * cy - 0.5 * PI * (2.0 * PI * x[0]).sin(),
                    2.0 * PI * PI * NU * cx * sy - 0.5 * PI * (2.0 * PI * x[1]).sin(),
                ]
            },
        },
    ]
}

pub fn sample_points(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Worst `|N(jet) − rhs| / max(|rhs|, 1)` over all manufactured cases.
pub fn operator_oracle_error(points: usize) -> f64 {
    let mut worst = 0.0_f64;
    for case in manufactured_cases() {
        for x in sample_points(case.op.spatial_dim(), points, 11) {
            let got = case.op.evaluate(&x, &(case.jet)(&x)).unwrap();
            let want = (case.rhs)(&x);
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g - w).abs() / w.abs().max(1.0));
            }
        }
    }
    worst
}

pub fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn residual_norm(j: &DenseMatrix, x: &[f64], n: &[f64]) -> f64 {
    j.matvec(x)
        .iter()
        .zip(n)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Jacobian and right-hand side of the first step of a fitted problem.
pub fn first_step_system(
    net: &MlpNetwork,
    op: &PdeOperator,
    grid: &CollocationGrid,
) -> (DenseMatrix, Vec<f64>) {
    let eval = net.evaluate_grid(grid, Execution::Sequential);
    let n = op.evaluate_grid(grid, &eval.jets, Execution::Sequential).unwrap();
    (eval.jacobian, n)
}
