//! Right-hand sides `N(u)` of the benchmark equations, their energies, and
//! closed-form initial / exact fields.
//!
//! All operators act on a spatial jet of the network output, so derivatives
//! are exact rather than grid differences.

use std::f64::consts::PI;

use thiserror::Error;

use crate::exec::Execution;
use crate::network::{CollocationGrid, SpatialJet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("{op}: jet has {found_q} components in {found_d} dimensions, operator needs {q} in {d}")]
    JetShape {
        op: &'static str,
        q: usize,
        d: usize,
        found_q: usize,
        found_d: usize,
    },
    #[error("{0}: sample count does not match the grid")]
    SampleShape(&'static str),
    #[error("invalid operator parameter: {0}")]
    Parameter(String),
    #[error("unknown initial condition '{0}'")]
    UnknownInitialCondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PdeOperator {
    /// `u_t = κ Δu`.
    Heat { diffusivity: f64, dim: usize },
    /// `u_t = Δ(u²) − ∇·(V u)` on the square with `V = (1 − sin πx sin πy)(1, 1)`.
    PmeDrift,
    /// `u_t = ε² Δu − u(u² − 1)/ε²`.
    AllenCahn { epsilon: f64, dim: usize },
    /// Viscous Burgers for the velocity `(u, v)` on the square.
    Burgers { viscosity: f64 },
}

impl PdeOperator {
    pub fn heat(diffusivity: f64, dim: usize) -> Result<Self, PdeError> {
        positive("diffusivity", diffusivity)?;
        check_dim(dim)?;
        Ok(Self::Heat { diffusivity, dim })
    }

    pub fn allen_cahn(epsilon: f64, dim: usize) -> Result<Self, PdeError> {
        positive("epsilon", epsilon)?;
        check_dim(dim)?;
        Ok(Self::AllenCahn { epsilon, dim })
    }

    pub fn burgers(viscosity: f64) -> Result<Self, PdeError> {
        positive("viscosity", viscosity)?;
        Ok(Self::Burgers { viscosity })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Heat { .. } => "heat",
            Self::PmeDrift => "pme_drift",
            Self::AllenCahn { .. } => "allen_cahn",
            Self::Burgers { .. } => "burgers",
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Burgers { .. } => 2,
            _ => 1,
        }
    }

    pub fn spatial_dim(&self) -> usize {
        match *self {
            Self::Heat { dim, .. } | Self::AllenCahn { dim, .. } => dim,
            Self::PmeDrift | Self::Burgers { .. } => 2,
        }
    }

    /// Name of the quantity reported by [`energy`](Self::energy).
    pub fn energy_label(&self) -> &'static str {
        match self {
            Self::Heat { .. } | Self::PmeDrift => "l2_surrogate",
            Self::AllenCahn { .. } => "ginzburg_landau",
            Self::Burgers { .. } => "kinetic",
        }
    }

    fn check_jet(&self, jet: &SpatialJet) -> Result<(), PdeError> {
        let (q, d) = (self.output_dim(), self.spatial_dim());
        if jet.output_dim() != q
            || jet.spatial_dim() != d
            || jet.laplacian_terms.shape() != (q, d)
        {
            return Err(PdeError::JetShape {
                op: self.name(),
                q,
                d,
                found_q: jet.output_dim(),
                found_d: jet.spatial_dim(),
            });
        }
        Ok(())
    }

    /// `N` at point `x`, one value per output component.
    pub fn evaluate(&self, x: &[f64], jet: &SpatialJet) -> Result<Vec<f64>, PdeError> {
        self.check_jet(jet)?;
        let u = jet.value[0];
        Ok(match *self {
            Self::Heat { diffusivity, .. } => vec![diffusivity * jet.laplacian(0)],
            Self::AllenCahn { epsilon, .. } => {
                let e2 = epsilon * epsilon;
                vec![e2 * jet.laplacian(0) - u * (u * u - 1.0) / e2]
            }
            Self::PmeDrift => {
                let (ux, uy) = (jet.gradient.get(0, 0), jet.gradient.get(0, 1));
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                let speed = 1.0 - sx * sy;
                let div_v = -PI * cx * sy - PI * sx * cy;
                let diffusion = 2.0 * (ux * ux + uy * uy + u * jet.laplacian(0));
                vec![diffusion - (speed * (ux + uy) + u * div_v)]
            }
            Self::Burgers { viscosity } => {
                let v = jet.value[1];
                (0..2)
                    .map(|c| {
                        let advect = u * jet.gradient.get(c, 0) + v * jet.gradient.get(c, 1);
                        viscosity * jet.laplacian(c) - advect
                    })
                    .collect()
            }
        })
    }

    /// Point-major `N` over the grid (`M·q`).
    pub fn evaluate_grid(
        &self,
        grid: &CollocationGrid,
        jets: &[SpatialJet],
        exec: Execution,
    ) -> Result<Vec<f64>, PdeError> {
        if jets.len() != grid.len() {
            return Err(PdeError::SampleShape("evaluate_grid"));
        }
        let rows = exec.map(jets.len(), |i| self.evaluate(grid.point(i), &jets[i]));
        let mut out = Vec::with_capacity(jets.len() * self.output_dim());
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Riemann-sum energy from point-major values (`M·q`) and gradients
    /// (`M·q·d`).
    pub fn energy(
        &self,
        grid: &CollocationGrid,
        values: &[f64],
        gradients: &[f64],
    ) -> Result<f64, PdeError> {
        let (q, d) = (self.output_dim(), self.spatial_dim());
        let m = grid.len();
        if grid.dim() != d || values.len() != m * q {
            return Err(PdeError::SampleShape("energy"));
        }
        let dv = grid.cell_volume();
        let sum: f64 = match *self {
            Self::Heat { .. } | Self::PmeDrift => values.iter().map(|u| u * u).sum(),
            Self::Burgers { .. } => 0.5 * values.iter().map(|u| u * u).sum::<f64>(),
            Self::AllenCahn { epsilon, .. } => {
                if gradients.len() != m * d {
                    return Err(PdeError::SampleShape("energy"));
                }
                let e2 = epsilon * epsilon;
                values
                    .iter()
                    .zip(gradients.chunks(d))
                    .map(|(u, g)| {
                        let grad2: f64 = g.iter().map(|v| v * v).sum();
                        let w = u * u - 1.0;
                        0.5 * e2 * grad2 + w * w / (4.0 * e2)
                    })
                    .sum()
            }
        };
        Ok(sum * dv)
    }
}

fn positive(name: &str, v: f64) -> Result<(), PdeError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(PdeError::Parameter(format!("{name} must be positive, got {v}")))
    }
}

fn check_dim(dim: usize) -> Result<(), PdeError> {
    if matches!(dim, 1 | 2) {
        Ok(())
    } else {
        Err(PdeError::Parameter(format!("spatial dimension must be 1 or 2, got {dim}")))
    }
}

/// `e^{−κπ²t} sin(πx)`.
pub fn exact_heat_1d(x: f64, t: f64, diffusivity: f64) -> f64 {
    (-diffusivity * PI * PI * t).exp() * (PI * x).sin()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    /// `sin(πx)`.
    HeatSine,
    /// `a sin(πx)`.
    AllenCahn1d { amplitude: f64 },
    /// `a sin(πx) sin(πy)`.
    AllenCahn2d { amplitude: f64 },
    /// `1 + 0.5 sin(πx) sin(πy)`: a positive bump for the standard PME path.
    PmeBump,
    /// Cellular flow `(−sin(π(x+1)) cos(π(y+1)), cos(π(x+1)) sin(π(y+1)))`.
    BurgersCells,
}

impl InitialCondition {
    pub fn for_experiment(tag: &str) -> Result<Self, PdeError> {
        Ok(match tag {
            "heat1d" => Self::HeatSine,
            "ac1d_case1" | "ac1d_case2" => Self::AllenCahn1d { amplitude: 0.08 },
            "ac2d_case1" | "ac2d_case2" => Self::AllenCahn2d { amplitude: 0.15 },
            "pme_drift" => Self::PmeBump,
            "burgers_short" | "burgers_long" => Self::BurgersCells,
            other => return Err(PdeError::UnknownInitialCondition(other.to_string())),
        })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::BurgersCells => 2,
            _ => 1,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let s = |v: f64| (PI * v).sin();
        match *self {
            Self::HeatSine => vec![s(x[0])],
            Self::AllenCahn1d { amplitude } => vec![amplitude * s(x[0])],
            Self::AllenCahn2d { amplitude } => vec![amplitude * s(x[0]) * s(x[1])],
            Self::PmeBump => vec![1.0 + 0.5 * s(x[0]) * s(x[1])],
            Self::BurgersCells => {
                let (sx, cx) = (PI * (x[0] + 1.0)).sin_cos();
                let (sy, cy) = (PI * (x[1] + 1.0)).sin_cos();
                vec![-sx * cy, cx * sy]
            }
        }
    }

    /// Point-major samples on the grid.
    pub fn sample(&self, grid: &CollocationGrid) -> Vec<f64> {
        (0..grid.len()).flat_map(|i| self.eval(grid.point(i))).collect()
    }
}
