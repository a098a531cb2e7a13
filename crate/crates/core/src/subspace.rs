//! Reduced velocity parameterizations.
//!
//! Both reductions give every weight matrix a velocity of the form
//! `Ẇ = A·R + L·B` for fixed `L` (n×r) and `R` (r×m):
//!
//! * SVD subspace: `L = U_r √S_r`, `R = √S_r V_rᵀ`, unknowns `A` (n×r), `B` (r×m).
//! * factored layers `W = M R`: `L = M`, `R = R`, unknowns `Ṁ` and `Ṙ`.
//!
//! Coefficients are laid out layer by layer as `[vec(A), vec(B)]` (row-major),
//! followed by the bias velocities when they are free. `J·L` is assembled
//! block-wise with strided GEMMs; no Kronecker product is ever formed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::{gemm, numerical_rank, truncated_svd, DenseMatrix, LinalgError};
use crate::network::{Architecture, LayerBlock, MlpNetwork, NetworkError, ParameterVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("weight matrix of layer {layer} is zero; restart with a regularized (non-zero) initialization")]
    RankDeficient { layer: usize },
    #[error("{op}: expected {expected} entries, found {found}")]
    Shape {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasMode {
    /// Bias velocities are extra unknowns.
    #[default]
    Unconstrained,
    /// Biases do not move.
    Frozen,
}

/// `Ẇ = A·right + left·B` for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearFrame {
    pub left: DenseMatrix,
    pub right: DenseMatrix,
}

impl BilinearFrame {
    pub fn rank(&self) -> usize {
        self.left.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.left.rows(), self.right.cols())
    }

    /// Number of coefficients, `r(n + m)`.
    pub fn dim(&self) -> usize {
        let (n, m) = self.shape();
        self.rank() * (n + m)
    }

    /// `a·right + left·b`.
    pub fn apply(&self, a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        a.matmul(&self.right).add(&self.left.matmul(b))
    }
}

/// The linear map from coefficients to a full parameter velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityMap {
    frames: Vec<BilinearFrame>,
    blocks: Vec<LayerBlock>,
    bias_mode: BiasMode,
    param_count: usize,
}

impl VelocityMap {
    fn new(frames: Vec<BilinearFrame>, blocks: Vec<LayerBlock>, bias_mode: BiasMode) -> Self {
        let param_count = blocks.last().map_or(0, |b| b.biases.end);
        Self {
            frames,
            blocks,
            bias_mode,
            param_count,
        }
    }

    pub fn frames(&self) -> &[BilinearFrame] {
        &self.frames
    }

    pub fn bias_mode(&self) -> BiasMode {
        self.bias_mode
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn bias_count(&self) -> usize {
        match self.bias_mode {
            BiasMode::Unconstrained => self.blocks.iter().map(|b| b.biases.len()).sum(),
            BiasMode::Frozen => 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.frames.iter().map(BilinearFrame::dim).sum::<usize>() + self.bias_count()
    }

    /// Offset of each layer's `A` block and of the bias block.
    fn offsets(&self) -> (Vec<usize>, usize) {
        let mut at = 0;
        let starts = self
            .frames
            .iter()
            .map(|f| {
                let s = at;
                at += f.dim();
                s
            })
            .collect();
        (starts, at)
    }

    pub fn split(&self, gamma: &[f64]) -> Result<VelocityCoefficients, SubspaceError> {
        self.check_len("split", gamma.len())?;
        let mut at = 0;
        let mut take = |len: usize| {
            let s = &gamma[at..at + len];
            at += len;
            s.to_vec()
        };
        let mut a_blocks = Vec::with_capacity(self.frames.len());
        let mut b_blocks = Vec::with_capacity(self.frames.len());
        for f in &self.frames {
            let (n, m) = f.shape();
            let r = f.rank();
            a_blocks.push(DenseMatrix::new(n, r, take(n * r))?);
            b_blocks.push(DenseMatrix::new(r, m, take(r * m))?);
        }
        let bias = take(self.bias_count());
        Ok(VelocityCoefficients {
            a_blocks,
            b_blocks,
            bias,
        })
    }

    fn check_len(&self, op: &'static str, found: usize) -> Result<(), SubspaceError> {
        if found == self.dim() {
            Ok(())
        } else {
            Err(SubspaceError::Shape {
                op,
                expected: self.dim(),
                found,
            })
        }
    }

    /// Full parameter velocity for the coefficient vector `gamma`.
    pub fn apply(&self, gamma: &[f64]) -> Result<ParameterVector, SubspaceError> {
        let coeffs = self.split(gamma)?;
        let mut out = ParameterVector::zeros(self.param_count);
        let dst = out.as_mut_slice();
        let mut bias = coeffs.bias.iter();
        for ((frame, block), (a, b)) in self
            .frames
            .iter()
            .zip(&self.blocks)
            .zip(coeffs.a_blocks.iter().zip(&coeffs.b_blocks))
        {
            dst[block.weights.clone()].copy_from_slice(frame.apply(a, b).as_slice());
            if self.bias_mode == BiasMode::Unconstrained {
                for v in &mut dst[block.biases.clone()] {
                    *v = *bias.next().expect("bias block length");
                }
            }
        }
        Ok(out)
    }

    /// `J·L` by block products, `(M·q) × dim`.
    pub fn assemble(&self, j: &DenseMatrix, exec: Execution) -> Result<DenseMatrix, SubspaceError> {
        if j.cols() != self.param_count {
            return Err(SubspaceError::Shape {
                op: "assemble",
                expected: self.param_count,
                found: j.cols(),
            });
        }
        let rows = j.rows();
        let dim = self.dim();
        let mut out = DenseMatrix::zeros(rows, dim);
        if rows == 0 || dim == 0 {
            return Ok(out);
        }
        let p = self.param_count;
        let (starts, bias_start) = self.offsets();
        let chunk_rows = 64.min(rows);
        let jdata = j.as_slice();
        exec.for_each_chunk_mut(out.as_mut_slice(), chunk_rows * dim, |chunk, dst| {
            let row0 = chunk * chunk_rows;
            let nrows = dst.len() / dim;
            let src = &jdata[row0 * p..(row0 + nrows) * p];
            for ((frame, block), &start) in self.frames.iter().zip(&self.blocks).zip(&starts) {
                let (n, m) = frame.shape();
                let r = frame.rank();
                let w0 = block.weights.start;
                let right = frame.right.as_slice();
                let left = frame.left.as_slice();
                // columns of A[i, ·]: J[:, W_i·] · rightᵀ
                for i in 0..n {
                    gemm(
                        nrows,
                        m,
                        r,
                        1.0,
                        (&src[w0 + i * m..], p, 1),
                        (right, 1, m),
                        0.0,
                        (&mut dst[start + i * r..], dim, 1),
                    );
                }
                // columns of B[·, k]: J[:, W_·k] · left
                let bstart = start + n * r;
                for k in 0..m {
                    gemm(
                        nrows,
                        n,
                        r,
                        1.0,
                        (&src[w0 + k..], p, m),
                        (left, r, 1),
                        0.0,
                        (&mut dst[bstart + k..], dim, m),
                    );
                }
            }
            if self.bias_mode == BiasMode::Unconstrained {
                for row in 0..nrows {
                    let mut at = bias_start;
                    for block in &self.blocks {
                        let len = block.biases.len();
                        dst[row * dim + at..row * dim + at + len]
                            .copy_from_slice(&src[row * p + block.biases.start..row * p + block.biases.end]);
                        at += len;
                    }
                }
            }
        });
        Ok(out)
    }

    /// `J·L` one column at a time: column `k` is `J · apply(e_k)`.
    pub fn assemble_columnwise(&self, j: &DenseMatrix) -> Result<DenseMatrix, SubspaceError> {
        let dim = self.dim();
        let mut out = DenseMatrix::zeros(j.rows(), dim);
        let mut e = vec![0.0; dim];
        for k in 0..dim {
            e[k] = 1.0;
            let delta = self.apply(&e)?;
            out.set_column(k, &j.matvec(delta.as_slice()));
            e[k] = 0.0;
        }
        Ok(out)
    }
}

/// Structured view of a coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityCoefficients {
    pub a_blocks: Vec<DenseMatrix>,
    pub b_blocks: Vec<DenseMatrix>,
    pub bias: Vec<f64>,
}

impl VelocityCoefficients {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (a, b) in self.a_blocks.iter().zip(&self.b_blocks) {
            out.extend_from_slice(a.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out.extend_from_slice(&self.bias);
        out
    }
}

/// Truncated SVD of one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBasis {
    pub u_r: DenseMatrix,
    pub s_r: Vec<f64>,
    pub v_r: DenseMatrix,
    pub effective_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    pub layers: Vec<LayerBasis>,
    pub map: VelocityMap,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn effective_ranks(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.effective_rank).collect()
    }
}

/// Rank-`r` SVD basis of every weight matrix of `net`. Ranks are clamped to
/// `min(n, m)` and exact-zero singular values are dropped.
pub fn build_subspace(
    net: &MlpNetwork,
    r: usize,
    bias_mode: BiasMode,
) -> Result<SubspaceBasis, SubspaceError> {
    if r == 0 {
        return Err(SubspaceError::ZeroRank);
    }
    let mut layers = Vec::with_capacity(net.layers().len());
    let mut frames = Vec::with_capacity(net.layers().len());
    for (k, layer) in net.layers().iter().enumerate() {
        let (svd, eff) = truncated_svd(&layer.weight, r)?;
        if eff == 0 {
            return Err(SubspaceError::RankDeficient { layer: k });
        }
        let svd = svd.truncate(eff);
        let root: Vec<f64> = svd.s.iter().map(|s| s.sqrt()).collect();
        let left = DenseMatrix::from_fn(svd.u.rows(), eff, |i, s| svd.u.get(i, s) * root[s]);
        let right = DenseMatrix::from_fn(eff, svd.v.rows(), |s, j| root[s] * svd.v.get(j, s));
        frames.push(BilinearFrame { left, right });
        layers.push(LayerBasis {
            u_r: svd.u,
            s_r: svd.s,
            v_r: svd.v,
            effective_rank: eff,
        });
    }
    Ok(SubspaceBasis {
        layers,
        map: VelocityMap::new(frames, net.layer_blocks(), bias_mode),
    })
}

pub fn apply_luv(basis: &SubspaceBasis, gamma: &[f64]) -> Result<ParameterVector, SubspaceError> {
    basis.map.apply(gamma)
}

pub fn assemble_jl(
    j: &DenseMatrix,
    basis: &SubspaceBasis,
    exec: Execution,
) -> Result<DenseMatrix, SubspaceError> {
    basis.map.assemble(j, exec)
}

/// `W = M·R` with `M` n×r and `R` r×m.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    pub m_factor: DenseMatrix,
    pub r_factor: DenseMatrix,
}

impl LowRankFactors {
    pub fn new(m_factor: DenseMatrix, r_factor: DenseMatrix) -> Result<Self, SubspaceError> {
        if m_factor.cols() != r_factor.rows() {
            return Err(SubspaceError::Shape {
                op: "LowRankFactors::new",
                expected: m_factor.cols(),
                found: r_factor.rows(),
            });
        }
        Ok(Self { m_factor, r_factor })
    }

    pub fn rank(&self) -> usize {
        self.m_factor.cols()
    }

    pub fn product(&self) -> DenseMatrix {
        self.m_factor.matmul(&self.r_factor)
    }

    /// Advances both factors by `dt` along `(ṁ, ṙ)`.
    pub fn step(&mut self, m_dot: &DenseMatrix, r_dot: &DenseMatrix, dt: f64) {
        for (w, v) in self.m_factor.as_mut_slice().iter_mut().zip(m_dot.as_slice()) {
            *w += dt * v;
        }
        for (w, v) in self.r_factor.as_mut_slice().iter_mut().zip(r_dot.as_slice()) {
            *w += dt * v;
        }
    }
}

/// `M·Ṙ + Ṁ·R`.
pub fn apply_factored_t(
    factors: &LowRankFactors,
    m_dot: &DenseMatrix,
    r_dot: &DenseMatrix,
) -> Result<DenseMatrix, SubspaceError> {
    if m_dot.shape() != factors.m_factor.shape() || r_dot.shape() != factors.r_factor.shape() {
        return Err(SubspaceError::Shape {
            op: "apply_factored_t",
            expected: factors.m_factor.rows() * factors.m_factor.cols()
                + factors.r_factor.rows() * factors.r_factor.cols(),
            found: m_dot.rows() * m_dot.cols() + r_dot.rows() * r_dot.cols(),
        });
    }
    Ok(factors.m_factor.matmul(r_dot).add(&m_dot.matmul(&factors.r_factor)))
}

/// A network whose every weight matrix is held as a product `M_ℓ R_ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredNetwork {
    pub net: MlpNetwork,
    pub factors: Vec<LowRankFactors>,
}

impl FactoredNetwork {
    /// Seeded Gaussian factors of rank `min(r, n, m)` per layer with entries
    /// of variance `1/r` (M) and `1/m` (R), so `W` has the usual `1/m`
    /// variance. The output layer is scaled by `output_gain` and its bias set
    /// to `output_bias`.
    pub fn random(
        arch: &Architecture,
        r: usize,
        seed: u64,
        output_gain: f64,
        output_bias: f64,
    ) -> Result<Self, SubspaceError> {
        if r == 0 {
            return Err(SubspaceError::ZeroRank);
        }
        let mut net = MlpNetwork::init(arch, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_fac7);
        let last = net.layers().len() - 1;
        let mut factors = Vec::with_capacity(last + 1);
        for k in 0..=last {
            let (n, m) = net.layers()[k].weight.shape();
            let rk = r.min(n).min(m);
            let gm = Normal::new(0.0, 1.0 / (rk as f64).sqrt()).expect("std");
            let gr = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("std");
            let gain = if k == last { output_gain } else { 1.0 };
            let mf = DenseMatrix::from_fn(n, rk, |_, _| gain * gm.sample(&mut rng));
            let rf = DenseMatrix::from_fn(rk, m, |_, _| gr.sample(&mut rng));
            let f = LowRankFactors::new(mf, rf)?;
            let layer = net.layer_mut(k);
            layer.weight = f.product();
            if k == last {
                layer.bias.iter_mut().for_each(|b| *b = output_bias);
            }
            factors.push(f);
        }
        Ok(Self { net, factors })
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.factors.iter().map(LowRankFactors::rank).collect()
    }

    /// Numerical rank (relative cutoff 1e-10) of every current `W_ℓ`.
    pub fn numerical_ranks(&self) -> Result<Vec<usize>, SubspaceError> {
        self.net
            .layers()
            .iter()
            .map(|l| Ok(numerical_rank(&l.weight, 1e-10)?))
            .collect()
    }

    /// Coefficients are `[vec(Ṁ_ℓ), vec(Ṙ_ℓ)]` per layer, then all biases.
    pub fn velocity_map(&self) -> VelocityMap {
        let frames = self
            .factors
            .iter()
            .map(|f| BilinearFrame {
                left: f.m_factor.clone(),
                right: f.r_factor.clone(),
            })
            .collect();
        VelocityMap::new(frames, self.net.layer_blocks(), BiasMode::Unconstrained)
    }

    /// Steps factors and biases, then rebuilds `W_ℓ = M_ℓ R_ℓ`.
    pub fn step(&mut self, coeffs: &VelocityCoefficients, dt: f64) -> Result<(), SubspaceError> {
        let mut bias = coeffs.bias.iter();
        for (k, f) in self.factors.iter_mut().enumerate() {
            // A ↔ Ṁ (multiplies R), B ↔ Ṙ (multiplied by M)
            f.step(&coeffs.a_blocks[k], &coeffs.b_blocks[k], dt);
            let layer = self.net.layer_mut(k);
            layer.weight = f.product();
            for b in &mut layer.bias {
                *b += dt * bias.next().expect("bias block length");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lstsq_min_norm;

    fn net(seed: u64) -> MlpNetwork {
        MlpNetwork::init(&Architecture::periodic(2, &[5, 4], 2), seed).unwrap()
    }

    fn seeded(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, 1.0).unwrap();
        DenseMatrix::from_fn(rows, cols, |_, _| g.sample(&mut rng))
    }

    #[test]
    fn diagonal_single_layer() {
        let mut n = MlpNetwork::init(&Architecture::periodic(1, &[], 2), 0).unwrap();
        n.layer_mut(0).weight = DenseMatrix::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]);
        let basis = build_subspace(&n, 1, BiasMode::Unconstrained).unwrap();
        let l = &basis.layers[0];
        assert_eq!(l.s_r, vec![3.0]);
        assert!((l.u_r.get(0, 0).abs() - 1.0).abs() < 1e-14);
        assert!(l.u_r.get(1, 0).abs() < 1e-14);
        assert_eq!(basis.dim(), 1 * (2 + 2) + 2);
    }

    #[test]
    fn zero_weights_are_rejected() {
        let mut n = net(1);
        n.layer_mut(1).weight = DenseMatrix::zeros(4, 5);
        assert_eq!(
            build_subspace(&n, 2, BiasMode::Frozen),
            Err(SubspaceError::RankDeficient { layer: 1 })
        );
        assert_eq!(build_subspace(&n, 0, BiasMode::Frozen), Err(SubspaceError::ZeroRank));
    }

    #[test]
    fn dimension_count() {
        let b = build_subspace(&net(2), 3, BiasMode::Frozen).unwrap();
        // shapes 5×4, 4×5, 2×4 with ranks 3, 3, 2
        assert_eq!(b.effective_ranks(), vec![3, 3, 2]);
        assert_eq!(b.dim(), 3 * 9 + 3 * 9 + 2 * 6);
        let u = build_subspace(&net(2), 3, BiasMode::Unconstrained).unwrap();
        assert_eq!(u.dim(), b.dim() + 5 + 4 + 2);
    }

    #[test]
    fn frozen_biases_have_zero_velocity() {
        let n = net(3);
        let b = build_subspace(&n, 2, BiasMode::Frozen).unwrap();
        let gamma: Vec<f64> = (0..b.dim()).map(|i| i as f64 + 1.0).collect();
        let v = apply_luv(&b, &gamma).unwrap();
        for block in n.layer_blocks() {
            assert!(v.as_slice()[block.biases].iter().all(|x| *x == 0.0));
        }
        assert!(apply_luv(&b, &gamma[1..]).is_err());
    }

    #[test]
    fn hand_computed_rank_one_velocity() {
        let mut n = MlpNetwork::init(&Architecture::periodic(1, &[], 3), 0).unwrap();
        // σ = (4, 1), u₁ = e₁, v₁ = ±e₁
        n.layer_mut(0).weight = DenseMatrix::from_rows(&[&[4.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let b = build_subspace(&n, 2, BiasMode::Frozen).unwrap();
        let mut gamma = vec![0.0; b.dim()];
        gamma[0] = 1.0; // A[0,0]
        let v = apply_luv(&b, &gamma).unwrap();
        let sign = b.layers[0].v_r.get(0, 0).signum();
        let expect = [2.0 * sign, 0.0, 0.0, 0.0, 0.0, 0.0];
        for (x, e) in v.as_slice()[..6].iter().zip(expect) {
            assert!((x - e).abs() < 1e-14);
        }
    }

    #[test]
    fn structured_and_columnwise_assembly_agree() {
        let n = net(4);
        let j = seeded(13, n.param_count(), 9);
        for mode in [BiasMode::Unconstrained, BiasMode::Frozen] {
            let b = build_subspace(&n, 2, mode).unwrap();
            let fast = assemble_jl(&j, &b, Execution::Sequential).unwrap();
            let slow = b.map.assemble_columnwise(&j).unwrap();
            assert!(fast.sub(&slow).max_abs() < 1e-12);
            let par = assemble_jl(&j, &b, Execution::Parallel).unwrap();
            assert_eq!(fast, par);
        }
    }

    #[test]
    fn full_rank_basis_reaches_any_velocity() {
        let n = net(5);
        let b = build_subspace(&n, 10, BiasMode::Unconstrained).unwrap();
        let p = n.param_count();
        let target = seeded(p, 1, 11).into_vec();
        let l = b.map.assemble_columnwise(&DenseMatrix::identity(p)).unwrap();
        let gamma = lstsq_min_norm(&l, &target).unwrap();
        let got = apply_luv(&b, &gamma).unwrap();
        let err: f64 = got.as_slice().iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn kronecker_identity() {
        let m = seeded(3, 2, 1);
        let r_dot = seeded(2, 4, 2);
        // (I_m ⊗ M) vec(Ṙ) with column-major vec
        let vec_r: Vec<f64> = (0..4).flat_map(|c| (0..2).map(move |i| (c, i))).map(|(c, i)| r_dot.get(i, c)).collect();
        let mut kron = DenseMatrix::zeros(12, 8);
        for blk in 0..4 {
            for i in 0..3 {
                for k in 0..2 {
                    kron.set(blk * 3 + i, blk * 2 + k, m.get(i, k));
                }
            }
        }
        let lhs = kron.matvec(&vec_r);
        let f = LowRankFactors::new(m.clone(), seeded(2, 4, 3)).unwrap();
        let v = apply_factored_t(&f, &DenseMatrix::zeros(3, 2), &r_dot).unwrap();
        for c in 0..4 {
            for i in 0..3 {
                assert!((lhs[c * 3 + i] - v.get(i, c)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn factored_identity_factors() {
        let f = LowRankFactors::new(DenseMatrix::identity(3), DenseMatrix::identity(3)).unwrap();
        let md = seeded(3, 3, 4);
        let rd = seeded(3, 3, 5);
        assert!(apply_factored_t(&f, &md, &rd).unwrap().sub(&md.add(&rd)).max_abs() < 1e-15);
        assert!(apply_factored_t(&f, &seeded(2, 3, 1), &rd).is_err());
    }

    #[test]
    fn factored_step_keeps_rank() {
        let arch = Architecture::periodic(2, &[8, 6], 1);
        let mut f = FactoredNetwork::random(&arch, 2, 7, 0.1, 1.0).unwrap();
        assert_eq!(f.ranks(), vec![2, 2, 1]);
        let map = f.velocity_map();
        let gamma = seeded(map.dim(), 1, 8).into_vec();
        f.step(&map.split(&gamma).unwrap(), 0.1).unwrap();
        for (layer, fac) in f.net.layers().iter().zip(&f.factors) {
            assert_eq!(layer.weight, fac.product());
            assert_eq!(numerical_rank(&layer.weight, 1e-10).unwrap(), fac.rank());
        }
        assert_eq!(f.net.layers()[2].bias.len(), 1);
    }
}
