//! The spatial ansatz: a small tanh MLP over a periodic Fourier embedding.
//!
//! Besides plain evaluation the network provides exact spatial jets (value,
//! gradient and pure second derivatives, obtained by pushing first and second
//! derivative coefficients forward through the layers) and the exact
//! parameter Jacobian (reverse accumulation per point and output component).
//!
//! Parameters are flattened layer-major: layer 0 weights in row-major order,
//! layer 0 biases, layer 1 weights, and so on.

use std::f64::consts::PI;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::DenseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("parameter vector has length {found}, network expects {expected}")]
    ParameterLength { expected: usize, found: usize },
    #[error("invalid collocation grid: {0}")]
    Grid(String),
    #[error("fit target has {found} values, expected {expected}")]
    TargetShape { expected: usize, found: usize },
    #[error("fit target contains non-finite values")]
    NonFiniteTarget,
    #[error("initial-condition fit diverged at iteration {iteration}")]
    FitDiverged { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    /// Value, first and second derivative at `z`.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let s = 1.0 - t * t;
                (t, s, -2.0 * t * s)
            }
            Activation::Identity => (z, 1.0, 0.0),
        }
    }
}

/// `x_j ↦ (sin(ω x_j), cos(ω x_j))` for every input dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicEmbedding {
    pub frequency: f64,
}

impl PeriodicEmbedding {
    /// Frequency that makes features 2-periodic, i.e. periodic on [-1, 1].
    pub const UNIT_INTERVAL: Self = Self { frequency: PI };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Layer sizes of a network: spatial input dimension, hidden widths, outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub embedding: Option<PeriodicEmbedding>,
}

impl Architecture {
    pub fn periodic(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            embedding: Some(PeriodicEmbedding::UNIT_INTERVAL),
        }
    }

    pub fn feature_dim(&self) -> usize {
        if self.embedding.is_some() {
            2 * self.input_dim
        } else {
            self.input_dim
        }
    }

    /// `(fan_out, fan_in)` of every weight matrix.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.feature_dim();
        for &w in self.hidden.iter().chain(std::iter::once(&self.output_dim)) {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(n, m)| n * m + n).sum()
    }

    /// Uniform hidden width (with `depth` hidden layers) whose total parameter
    /// count is closest to `budget`.
    pub fn width_for_budget(
        input_dim: usize,
        output_dim: usize,
        depth: usize,
        budget: usize,
    ) -> usize {
        (1..=budget.max(1))
            .map(|w| {
                let arch = Self::periodic(input_dim, &vec![w; depth], output_dim);
                (arch.param_count().abs_diff(budget), w)
            })
            .min()
            .map(|(_, w)| w)
            .unwrap_or(1)
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NetworkError::Architecture(
                "input and output dimensions must be positive".into(),
            ));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(NetworkError::Architecture(format!(
                "hidden widths must be positive, got {:?}",
                self.hidden
            )));
        }
        Ok(())
    }
}

/// Flattened parameters in layer-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Location of one layer's weights and biases inside a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerBlock {
    pub rows: usize,
    pub cols: usize,
    pub weights: Range<usize>,
    pub biases: Range<usize>,
}

/// Value, gradient (`q×d`) and pure second derivatives (`q×d`) of the
/// network output at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialJet {
    pub value: Vec<f64>,
    pub gradient: DenseMatrix,
    pub laplacian_terms: DenseMatrix,
}

impl SpatialJet {
    pub fn output_dim(&self) -> usize {
        self.value.len()
    }

    pub fn spatial_dim(&self) -> usize {
        self.gradient.cols()
    }

    /// `Δû_c`.
    pub fn laplacian(&self, c: usize) -> f64 {
        self.laplacian_terms.row(c).iter().sum()
    }
}

/// Uniform tensor-product grid on a box. Periodic dimensions omit the right
/// endpoint, so the spacing is `(hi - lo) / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    dim: usize,
    bounds: Vec<(f64, f64)>,
    points_per_dim: Vec<usize>,
    periodic: Vec<bool>,
    points: Vec<f64>,
}

impl CollocationGrid {
    pub fn uniform_periodic(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Self, NetworkError> {
        if bounds.is_empty() || bounds.len() != counts.len() {
            return Err(NetworkError::Grid(format!(
                "{} bounds for {} point counts",
                bounds.len(),
                counts.len()
            )));
        }
        if counts.iter().any(|&n| n == 0) {
            return Err(NetworkError::Grid("every dimension needs at least one point".into()));
        }
        if bounds.iter().any(|(lo, hi)| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
            return Err(NetworkError::Grid(format!("degenerate bounds {bounds:?}")));
        }
        let dim = bounds.len();
        let total: usize = counts.iter().product();
        let mut points = Vec::with_capacity(total * dim);
        let mut index = vec![0usize; dim];
        for _ in 0..total {
            for j in 0..dim {
                let (lo, hi) = bounds[j];
                points.push(lo + (hi - lo) * index[j] as f64 / counts[j] as f64);
            }
            // last dimension runs fastest
            for j in (0..dim).rev() {
                index[j] += 1;
                if index[j] < counts[j] {
                    break;
                }
                index[j] = 0;
            }
        }
        Ok(Self {
            dim,
            bounds: bounds.to_vec(),
            points_per_dim: counts.to_vec(),
            periodic: vec![true; dim],
            points,
        })
    }

    /// `[-1, 1]^dim` with `n` points per dimension.
    pub fn unit_box(dim: usize, n: usize) -> Result<Self, NetworkError> {
        Self::uniform_periodic(&vec![(-1.0, 1.0); dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn points_per_dim(&self) -> &[usize] {
        &self.points_per_dim
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn spacing(&self, j: usize) -> f64 {
        let (lo, hi) = self.bounds[j];
        (hi - lo) / self.points_per_dim[j] as f64
    }

    /// Quadrature weight of every point.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|j| self.spacing(j)).product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }
}

/// Per-point jets and the stacked parameter Jacobian on a grid.
#[derive(Debug, Clone)]
pub struct GridEvaluation {
    pub jets: Vec<SpatialJet>,
    pub jacobian: DenseMatrix,
}

impl GridEvaluation {
    /// Point-major output values, `M·q` long.
    pub fn values(&self) -> Vec<f64> {
        self.jets.iter().flat_map(|j| j.value.iter().copied()).collect()
    }

    /// Point-major gradients, `M·q·d` long.
    pub fn gradients(&self) -> Vec<f64> {
        self.jets
            .iter()
            .flat_map(|j| j.gradient.as_slice().iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    input_dim: usize,
    output_dim: usize,
    embedding: Option<PeriodicEmbedding>,
    layers: Vec<Layer>,
}

impl MlpNetwork {
    pub fn new(
        input_dim: usize,
        embedding: Option<PeriodicEmbedding>,
        layers: Vec<Layer>,
    ) -> Result<Self, NetworkError> {
        let Some(last) = layers.last() else {
            return Err(NetworkError::Architecture("network needs at least one layer".into()));
        };
        if last.activation != Activation::Identity {
            return Err(NetworkError::Architecture("final activation must be identity".into()));
        }
        let mut fan_in = if embedding.is_some() { 2 * input_dim } else { input_dim };
        for (k, layer) in layers.iter().enumerate() {
            if layer.fan_in() != fan_in {
                return Err(NetworkError::Architecture(format!(
                    "layer {k} expects {} inputs but receives {fan_in}",
                    layer.fan_in()
                )));
            }
            if layer.bias.len() != layer.fan_out() {
                return Err(NetworkError::Architecture(format!(
                    "layer {k} has {} biases for {} outputs",
                    layer.bias.len(),
                    layer.fan_out()
                )));
            }
            fan_in = layer.fan_out();
        }
        Ok(Self {
            input_dim,
            output_dim: last.fan_out(),
            embedding,
            layers,
        })
    }

    /// Seeded scaled-normal weights (std `1/√fan_in`), zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self, NetworkError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = arch.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(k, &(n, m))| {
                let normal = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("positive std");
                Layer {
                    weight: DenseMatrix::from_fn(n, m, |_, _| normal.sample(&mut rng)),
                    bias: vec![0.0; n],
                    activation: if k == last {
                        Activation::Identity
                    } else {
                        Activation::Tanh
                    },
                }
            })
            .collect();
        Self::new(arch.input_dim, arch.embedding, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn embedding(&self) -> Option<PeriodicEmbedding> {
        self.embedding
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut Layer {
        &mut self.layers[k]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Largest `min(n_ℓ, m_ℓ)` over the weight matrices.
    pub fn max_rank(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in().min(l.fan_out()))
            .max()
            .unwrap_or(0)
    }

    pub fn layer_blocks(&self) -> Vec<LayerBlock> {
        let mut offset = 0;
        self.layers
            .iter()
            .map(|l| {
                let (n, m) = l.weight.shape();
                let weights = offset..offset + n * m;
                let biases = weights.end..weights.end + n;
                offset = biases.end;
                LayerBlock {
                    rows: n,
                    cols: m,
                    weights,
                    biases,
                }
            })
            .collect()
    }

    pub fn parameters(&self) -> ParameterVector {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        ParameterVector(out)
    }

    pub fn set_parameters(&mut self, params: &ParameterVector) -> Result<(), NetworkError> {
        self.load_parameters(params.as_slice())
    }

    fn load_parameters(&mut self, params: &[f64]) -> Result<(), NetworkError> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(NetworkError::ParameterLength {
                expected,
                found: params.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&params[offset..offset + w.len()]);
            offset += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn with_parameters(&self, params: &ParameterVector) -> Result<Self, NetworkError> {
        let mut out = self.clone();
        out.set_parameters(params)?;
        Ok(out)
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        match self.embedding {
            Some(e) => x
                .iter()
                .flat_map(|&xj| {
                    let (s, c) = (e.frequency * xj).sin_cos();
                    [s, c]
                })
                .collect(),
            None => x.to_vec(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim, "forward: coordinate dimension");
        let mut a = self.features(x);
        for l in &self.layers {
            let mut z = l.weight.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(&l.bias) {
                *zi = l.activation.eval(*zi + bi).0;
            }
            a = z;
        }
        a
    }

    pub fn spatial_jet(&self, x: &[f64]) -> SpatialJet {
        self.jet_with_tape(x).0
    }

    /// Forward jet propagation, keeping what reverse accumulation needs.
    fn jet_with_tape(&self, x: &[f64]) -> (SpatialJet, Tape) {
        let d = self.input_dim;
        assert_eq!(x.len(), d, "spatial_jet: coordinate dimension");
        let f = if self.embedding.is_some() { 2 * d } else { d };

        // da[j*f + k] = ∂a_k/∂x_j, d2a likewise for ∂²/∂x_j²
        let mut a = vec![0.0; f];
        let mut da = vec![0.0; d * f];
        let mut d2a = vec![0.0; d * f];
        match self.embedding {
            Some(e) => {
                let w = e.frequency;
                for j in 0..d {
                    let (s, c) = (w * x[j]).sin_cos();
                    a[2 * j] = s;
                    a[2 * j + 1] = c;
                    da[j * f + 2 * j] = w * c;
                    da[j * f + 2 * j + 1] = -w * s;
                    d2a[j * f + 2 * j] = -w * w * s;
                    d2a[j * f + 2 * j + 1] = -w * w * c;
                }
            }
            None => {
                a.copy_from_slice(x);
                for j in 0..d {
                    da[j * f + j] = 1.0;
                }
            }
        }

        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            slopes: Vec::with_capacity(self.layers.len()),
        };
        let mut width = f;
        for l in &self.layers {
            let n = l.fan_out();
            let mut z = l.weight.matvec(&a);
            let mut dz = vec![0.0; d * n];
            let mut d2z = vec![0.0; d * n];
            for j in 0..d {
                let daj = &da[j * width..(j + 1) * width];
                let d2aj = &d2a[j * width..(j + 1) * width];
                for i in 0..n {
                    let wi = l.weight.row(i);
                    dz[j * n + i] = crate::linalg::dot(wi, daj);
                    d2z[j * n + i] = crate::linalg::dot(wi, d2aj);
                }
            }
            let mut slope = vec![0.0; n];
            for i in 0..n {
                let (s0, s1, s2) = l.activation.eval(z[i] + l.bias[i]);
                z[i] = s0;
                slope[i] = s1;
                for j in 0..d {
                    let g = dz[j * n + i];
                    dz[j * n + i] = s1 * g;
                    d2z[j * n + i] = s2 * g * g + s1 * d2z[j * n + i];
                }
            }
            tape.inputs.push(std::mem::replace(&mut a, z));
            tape.slopes.push(slope);
            da = dz;
            d2a = d2z;
            width = n;
        }

        let q = self.output_dim;
        let gradient = DenseMatrix::from_fn(q, d, |c, j| da[j * q + c]);
        let laplacian_terms = DenseMatrix::from_fn(q, d, |c, j| d2a[j * q + c]);
        (
            SpatialJet {
                value: a,
                gradient,
                laplacian_terms,
            },
            tape,
        )
    }

    /// Writes `∂û_c/∂W` for every output component `c` into consecutive rows
    /// of `out` (`q·P` entries).
    fn jacobian_rows(&self, tape: &Tape, out: &mut [f64]) {
        let p = self.param_count();
        let q = self.output_dim;
        debug_assert_eq!(out.len(), q * p);
        let blocks = self.layer_blocks();
        let last = self.layers.len() - 1;
        for c in 0..q {
            let row = &mut out[c * p..(c + 1) * p];
            let mut delta = vec![0.0; q];
            delta[c] = 1.0;
            for k in (0..=last).rev() {
                let l = &self.layers[k];
                let block = &blocks[k];
                let input = &tape.inputs[k];
                for (i, di) in delta.iter().enumerate() {
                    let dst = &mut row[block.weights.start + i * block.cols
                        ..block.weights.start + (i + 1) * block.cols];
                    for (w, a) in dst.iter_mut().zip(input) {
                        *w = di * a;
                    }
                }
                row[block.biases.clone()].copy_from_slice(&delta);
                if k > 0 {
                    let mut prev = l.weight.tr_matvec(&delta);
                    for (v, s) in prev.iter_mut().zip(&tape.slopes[k - 1]) {
                        *v *= s;
                    }
                    delta = prev;
                }
            }
        }
    }

    /// Parameter Jacobian on a grid: `(M·q) × P`, point-major rows.
    pub fn param_jacobian(&self, grid: &CollocationGrid) -> DenseMatrix {
        self.evaluate_grid(grid, Execution::default()).jacobian
    }

    /// Jets and Jacobian rows for every grid point in one pass.
    pub fn evaluate_grid(&self, grid: &CollocationGrid, exec: Execution) -> GridEvaluation {
        assert_eq!(grid.dim(), self.input_dim, "grid dimension");
        let m = grid.len();
        let q = self.output_dim;
        let p = self.param_count();
        let per_point = exec.map(m, |i| {
            let (jet, tape) = self.jet_with_tape(grid.point(i));
            let mut rows = vec![0.0; q * p];
            self.jacobian_rows(&tape, &mut rows);
            (jet, rows)
        });
        let mut data = Vec::with_capacity(m * q * p);
        let mut jets = Vec::with_capacity(m);
        for (jet, rows) in per_point {
            data.extend_from_slice(&rows);
            jets.push(jet);
        }
        GridEvaluation {
            jets,
            jacobian: DenseMatrix::new(m * q, p, data).expect("jacobian shape"),
        }
    }

    /// Output values on the grid, point-major (`M·q`).
    pub fn values_on(&self, grid: &CollocationGrid, exec: Execution) -> Vec<f64> {
        exec.map(grid.len(), |i| self.forward(grid.point(i)))
            .into_iter()
            .flatten()
            .collect()
    }

    fn feature_matrix(&self, grid: &CollocationGrid) -> DenseMatrix {
        let rows: Vec<f64> = (0..grid.len()).flat_map(|i| self.features(grid.point(i))).collect();
        let f = rows.len() / grid.len();
        DenseMatrix::new(grid.len(), f, rows).expect("feature shape")
    }

    /// Batched forward on precomputed features. Returns per-layer inputs,
    /// per-layer activation slopes and the output matrix (M×q).
    fn forward_batch(&self, features: &DenseMatrix) -> (Vec<DenseMatrix>, Vec<DenseMatrix>, DenseMatrix) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut slopes = Vec::with_capacity(self.layers.len());
        let mut a = features.clone();
        for l in &self.layers {
            let mut z = a.matmul_tr(&l.weight);
            let mut s = DenseMatrix::zeros(z.rows(), z.cols());
            let n = z.cols();
            for (zr, sr) in z
                .as_mut_slice()
                .chunks_mut(n)
                .zip(s.as_mut_slice().chunks_mut(n))
            {
                for i in 0..n {
                    let (v, d1, _) = l.activation.eval(zr[i] + l.bias[i]);
                    zr[i] = v;
                    sr[i] = d1;
                }
            }
            inputs.push(std::mem::replace(&mut a, z));
            slopes.push(s);
        }
        (inputs, slopes, a)
    }
}

struct Tape {
    inputs: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

/// Settings for the initial-condition regression.
///
/// The first phase is a momentum-free adaptive method: a running average of
/// squared gradients scales a fixed step (RMSProp with bias correction). It
/// is followed by damped Gauss–Newton (Levenberg–Marquardt) iterations from
/// the best iterate, which take the error from ~1e-3 down to the level the
/// network can represent.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Stop as soon as the loss reaches this value.
    pub tolerance: f64,
    /// Levenberg–Marquardt iterations after the gradient phase; 0 disables.
    pub polish_iterations: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            iterations: 2_000,
            learning_rate: 2e-3,
            decay: 0.999,
            epsilon: 1e-8,
            tolerance: 0.0,
            polish_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Best loss `½ Σ ‖û − u₀‖²` seen during the run.
    pub loss: f64,
    /// Root-mean-square error at the best iterate.
    pub rms: f64,
    pub best_iteration: usize,
    pub iterations_run: usize,
    /// Accepted Levenberg–Marquardt steps.
    pub polish_steps: usize,
}

/// Fits `net` to `target` (point-major, `M·q`) by full-batch adaptive
/// gradient descent and returns the best iterate.
pub fn fit_initial(
    net: &MlpNetwork,
    grid: &CollocationGrid,
    target: &[f64],
    settings: &FitSettings,
) -> Result<(MlpNetwork, FitReport), NetworkError> {
    let m = grid.len();
    let q = net.output_dim();
    if target.len() != m * q {
        return Err(NetworkError::TargetShape {
            expected: m * q,
            found: target.len(),
        });
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(NetworkError::NonFiniteTarget);
    }
    let features = net.feature_matrix(grid);
    let mut work = net.clone();
    let mut params = net.parameters().into_vec();
    let mut second_moment = vec![0.0; params.len()];
    let mut grad = vec![0.0; params.len()];
    let blocks = net.layer_blocks();

    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut decay_pow = 1.0;
    let mut iterations_run = 0;
    for it in 0..=settings.iterations {
        let (inputs, slopes, output) = work.forward_batch(&features);
        let mut delta = output.sub(&DenseMatrix::new(m, q, target.to_vec()).expect("target shape"));
        let loss = 0.5 * delta.as_slice().iter().map(|r| r * r).sum::<f64>();
        if !loss.is_finite() {
            return Err(NetworkError::FitDiverged { iteration: it });
        }
        if loss < best.0 {
            best = (loss, params.clone(), it);
        }
        iterations_run = it;
        if it == settings.iterations || loss <= settings.tolerance {
            break;
        }

        for k in (0..work.layers.len()).rev() {
            let block = &blocks[k];
            let gw = delta.tr_matmul(&inputs[k]);
            grad[block.weights.clone()].copy_from_slice(gw.as_slice());
            let gb = &mut grad[block.biases.clone()];
            gb.iter_mut().for_each(|g| *g = 0.0);
            for r in 0..delta.rows() {
                for (g, v) in gb.iter_mut().zip(delta.row(r)) {
                    *g += v;
                }
            }
            if k > 0 {
                let mut prev = delta.matmul(&work.layers[k].weight);
                for (v, s) in prev.as_mut_slice().iter_mut().zip(slopes[k - 1].as_slice()) {
                    *v *= s;
                }
                delta = prev;
            }
        }

        decay_pow *= settings.decay;
        let correction = 1.0 - decay_pow;
        for ((p, g), v) in params.iter_mut().zip(&grad).zip(second_moment.iter_mut()) {
            *v = settings.decay * *v + (1.0 - settings.decay) * g * g;
            let vhat = *v / correction;
            *p -= settings.learning_rate * g / (vhat.sqrt() + settings.epsilon);
        }
        work.load_parameters(&params)?;
    }

    let (mut loss, best_params, best_iteration) = best;
    work.load_parameters(&best_params)?;
    let mut polish_steps = 0;
    if settings.polish_iterations > 0 && loss > settings.tolerance {
        (loss, polish_steps) = polish(&mut work, grid, &features, target, loss, settings)?;
    }
    Ok((
        work,
        FitReport {
            loss,
            rms: (2.0 * loss / (m * q) as f64).sqrt(),
            best_iteration,
            iterations_run,
            polish_steps,
        },
    ))
}

fn batch_loss(net: &MlpNetwork, features: &DenseMatrix, target: &[f64]) -> (f64, Vec<f64>) {
    let out = net.forward_batch(features).2.into_vec();
    let r: Vec<f64> = out.iter().zip(target).map(|(u, t)| u - t).collect();
    (0.5 * r.iter().map(|v| v * v).sum::<f64>(), r)
}

/// Levenberg–Marquardt on `½‖û − target‖²`; never increases the loss.
fn polish(
    net: &mut MlpNetwork,
    grid: &CollocationGrid,
    features: &DenseMatrix,
    target: &[f64],
    start_loss: f64,
    settings: &FitSettings,
) -> Result<(f64, usize), NetworkError> {
    let (mut loss, mut r) = batch_loss(net, features, target);
    debug_assert!((loss - start_loss).abs() <= 1e-12 * start_loss.max(1.0));
    let mut damping = 1e-3;
    let mut accepted = 0;
    for _ in 0..settings.polish_iterations {
        if loss <= settings.tolerance {
            break;
        }
        let j = net.evaluate_grid(grid, Execution::default()).jacobian;
        let g = j.gram();
        let rhs: Vec<f64> = j.tr_matvec(&r).iter().map(|v| -v).collect();
        let scale = g.trace() / g.rows() as f64;
        let params = net.parameters();
        let mut improved = false;
        // grow the damping until the step reduces the loss
        for _ in 0..12 {
            let Ok(step) = crate::linalg::solve_regularized_normal(&g, &rhs, damping * scale) else {
                damping *= 4.0;
                continue;
            };
            let mut trial = params.clone();
            for (p, d) in trial.as_mut_slice().iter_mut().zip(&step) {
                *p += d;
            }
            net.set_parameters(&trial)?;
            let (trial_loss, trial_r) = batch_loss(net, features, target);
            if trial_loss.is_finite() && trial_loss < loss {
                loss = trial_loss;
                r = trial_r;
                damping = (damping / 3.0).max(1e-15);
                improved = true;
                accepted += 1;
                break;
            }
            damping *= 4.0;
        }
        if !improved {
            net.set_parameters(&params)?;
            break;
        }
    }
    Ok((loss, accepted))
}
