//! Compensating-matrix check at the rest state `(1, 0, 1, 0, 0)`.
//!
//! In symmetric form the linearised system reads
//! `A⁰ V_t + Σ A^j V_{x_j} = Σ B^{jk} V_{x_j x_k} − L V`. A family `K(ξ)`
//! compensates the dissipation if `K(ξ) A⁰` is antisymmetric and
//! `M(ξ) = sym(K(ξ) A(ξ)) + B(ξ) + L` is positive definite.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Direction, Layout};
use crate::error::Result;
use crate::thermo::{pressure_partials, ModelParams, PrimitiveState};

const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KawashimaOptions {
    /// Coupling weight N; `None` picks `τ1 p̄_θ² / (2κ) + 1`.
    pub n_param: Option<f64>,
    /// Fixed ε; `None` halves ε from 1 until M is positive definite.
    pub epsilon: Option<f64>,
    /// Random directions sampled in addition to the coordinate axes.
    pub directions: usize,
    pub seed: u64,
}

impl Default for KawashimaOptions {
    fn default() -> Self {
        Self {
            n_param: None,
            epsilon: None,
            directions: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensatorReport {
    pub n_param: f64,
    /// Threshold N must exceed: `τ1 p̄_θ² / (4κ)`.
    pub n_threshold: f64,
    pub epsilon: f64,
    pub halvings: usize,
    /// Largest entry of `K A⁰ + (K A⁰)ᵀ` over the sampled directions.
    pub antisymmetry_defect: f64,
    /// Smallest eigenvalue of M over the sampled directions.
    pub m_min_eigenvalue: f64,
    pub success: bool,
}

struct RestState {
    p_rho: f64,
    p_theta: f64,
    e_theta: f64,
}

fn rest_state(p: &ModelParams) -> Result<RestState> {
    let d = pressure_partials(&PrimitiveState::equilibrium(), p)?;
    Ok(RestState {
        p_rho: d.p_rho,
        p_theta: d.p_theta,
        e_theta: d.e_theta,
    })
}

fn a0(p: &ModelParams, r: &RestState) -> DMatrix<f64> {
    let l = Layout { n: p.dim };
    let mut m = DMatrix::zeros(l.size(), l.size());
    m[(Layout::RHO, Layout::RHO)] = r.p_rho;
    for i in 0..p.dim {
        m[(l.u(i), l.u(i))] = 1.0;
        m[(l.q(i), l.q(i))] = p.tau1 / p.kappa;
    }
    m[(l.theta(), l.theta())] = r.e_theta;
    m[(l.s2(), l.s2())] = p.tau3 / p.lambda;
    m
}

fn a_sym(p: &ModelParams, r: &RestState, xi: &[f64; 3]) -> DMatrix<f64> {
    let l = Layout { n: p.dim };
    let mut m = DMatrix::zeros(l.size(), l.size());
    for j in 0..p.dim {
        let pairs = [
            (Layout::RHO, l.u(j), r.p_rho),
            (l.theta(), l.u(j), r.p_theta),
            (l.theta(), l.q(j), 1.0),
            (l.s2(), l.u(j), -1.0),
        ];
        for (a, b, v) in pairs {
            m[(a, b)] = v * xi[j];
            m[(b, a)] = v * xi[j];
        }
    }
    m
}

fn b_plus_l(p: &ModelParams, xi: &[f64; 3]) -> DMatrix<f64> {
    let n = p.dim;
    let l = Layout { n };
    let mut m = DMatrix::zeros(l.size(), l.size());
    let c = (n as f64 - 2.0) / n as f64;
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            m[(l.u(i), l.u(j))] = p.mu * (delta + c * xi[i] * xi[j]);
        }
        m[(l.q(i), l.q(i))] = 1.0 / p.kappa;
    }
    m[(l.s2(), l.s2())] = 1.0 / p.lambda;
    m
}

fn compensator(p: &ModelParams, r: &RestState, n_param: f64, eps: f64, xi: &[f64; 3]) -> DMatrix<f64> {
    let l = Layout { n: p.dim };
    let mut k = DMatrix::zeros(l.size(), l.size());
    for j in 0..p.dim {
        k[(Layout::RHO, l.u(j))] = r.p_rho * xi[j];
        k[(l.u(j), Layout::RHO)] = -xi[j];
        k[(l.theta(), l.q(j))] = p.kappa * n_param / p.tau1 * xi[j];
        k[(l.q(j), l.theta())] = -n_param / r.e_theta * xi[j];
        k[(l.q(j), l.s2())] = p.lambda / p.tau3 * xi[j];
        k[(l.s2(), l.q(j))] = -p.kappa / p.tau1 * xi[j];
    }
    k * eps
}

fn directions(p: &ModelParams, count: usize, seed: u64) -> Vec<[f64; 3]> {
    let n = p.dim;
    let mut out: Vec<[f64; 3]> = (0..n).map(|k| *Direction::axis(k, n).xi()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < n + count {
        let v = std::array::from_fn(|i| if i < n { rng.random_range(-1.0..1.0) } else { 0.0 });
        if let Ok(d) = Direction::normalized(v, n) {
            out.push(*d.xi());
        }
    }
    out
}

fn min_eig_m(p: &ModelParams, r: &RestState, n_param: f64, eps: f64, dirs: &[[f64; 3]]) -> f64 {
    dirs.iter()
        .map(|xi| {
            let ka = compensator(p, r, n_param, eps, xi) * a_sym(p, r, xi);
            let m = (&ka + ka.transpose()) * 0.5 + b_plus_l(p, xi);
            SymmetricEigen::new(m).eigenvalues.min()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Builds `K(ξ)`, checks antisymmetry of `K A⁰` and searches for ε making
/// `M(ξ)` positive definite on the sampled directions.
pub fn kawashima_check(p: &ModelParams, opts: &KawashimaOptions) -> Result<CompensatorReport> {
    let r = rest_state(p)?;
    let n_threshold = p.tau1 * r.p_theta * r.p_theta / (4.0 * p.kappa);
    let n_param = opts
        .n_param
        .unwrap_or(p.tau1 * r.p_theta * r.p_theta / (2.0 * p.kappa) + 1.0);
    let dirs = directions(p, opts.directions, opts.seed);
    let a0 = a0(p, &r);

    let antisymmetry_defect = dirs
        .iter()
        .map(|xi| {
            let ka0 = compensator(p, &r, n_param, 1.0, xi) * &a0;
            (&ka0 + ka0.transpose()).amax()
        })
        .fold(0.0, f64::max);

    let (epsilon, halvings, m_min) = match opts.epsilon {
        Some(eps) => (eps, 0, min_eig_m(p, &r, n_param, eps, &dirs)),
        None => {
            let mut eps = 1.0;
            let mut halvings = 0;
            let mut m_min = min_eig_m(p, &r, n_param, eps, &dirs);
            while !(m_min > 0.0) && halvings < MAX_HALVINGS {
                eps *= 0.5;
                halvings += 1;
                m_min = min_eig_m(p, &r, n_param, eps, &dirs);
            }
            (eps, halvings, m_min)
        }
    };

    Ok(CompensatorReport {
        n_param,
        n_threshold,
        epsilon,
        halvings,
        antisymmetry_defect,
        m_min_eigenvalue: m_min,
        success: antisymmetry_defect < 1e-12 && m_min > 0.0,
    })
}
