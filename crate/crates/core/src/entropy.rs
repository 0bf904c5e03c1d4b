//! Entropy, the dissipative entropy pair (η1, ζ) and the discrete audit.
//!
//! With `η = Cv ln θ − R ln ρ + τ1|q|²/(2κθ²ρ)`, the functional
//!
//! ```text
//! η1 = Cv ρ(θ − ln θ − 1) + R(ρ ln ρ − ρ + 1) + (1 − 1/(2θ)) τ1|q|²/(κθ)
//!      + ½ρ|u|² + τ3 S2²/(2λ)
//! ```
//!
//! equals `𝓔 − ρη − (Cv + R)ρ + R`, so it is a combination of conserved
//! quantities and the entropy; smooth solutions satisfy
//! `∂t η1 + div ζ + production = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermo::{norm2, pressure_unchecked, ModelParams, PrimitiveState, Vec3};

/// `grad[i][j] = ∂u_i/∂x_j`; rows and columns beyond `dim` are ignored.
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyDensities {
    pub eta: f64,
    pub eta1: f64,
    pub zeta: Vec3,
    pub production: f64,
}

fn check(s: &PrimitiveState) -> Result<()> {
    if !(s.rho > 0.0) {
        return Err(Error::Domain {
            what: "rho",
            value: s.rho,
        });
    }
    if !(s.theta > 0.0) {
        return Err(Error::Domain {
            what: "theta",
            value: s.theta,
        });
    }
    Ok(())
}

/// Physical entropy per unit mass.
pub fn physical_entropy(s: &PrimitiveState, p: &ModelParams) -> Result<f64> {
    check(s)?;
    Ok(p.cv * s.theta.ln() - p.r_gas * s.rho.ln()
        + p.tau1 * norm2(&s.q) / (2.0 * p.kappa * s.theta * s.theta * s.rho))
}

/// `|∇u + ∇uᵀ − (2/n) div u I|²` over the leading `n × n` block.
pub fn deviatoric_norm2(grad: &Mat3, n: usize) -> f64 {
    let div: f64 = (0..n).map(|i| grad[i][i]).sum();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut d = grad[i][j] + grad[j][i];
            if i == j {
                d -= 2.0 / n as f64 * div;
            }
            acc += d * d;
        }
    }
    acc
}

/// Pointwise entropy production rate; the shear part only contributes when
/// `μ > 0`.
pub fn entropy_production(s: &PrimitiveState, grad_u: &Mat3, p: &ModelParams) -> Result<f64> {
    check(s)?;
    Ok(production_unchecked(s, grad_u, p))
}

#[inline]
pub(crate) fn production_unchecked(s: &PrimitiveState, grad_u: &Mat3, p: &ModelParams) -> f64 {
    let th = s.theta;
    let mut r = norm2(&s.q) / (p.kappa * th * th) + s.s2 * s.s2 / (th * p.lambda);
    if p.mu > 0.0 {
        r += p.mu * deviatoric_norm2(grad_u, p.dim) / (2.0 * th);
    }
    r
}

/// `η1` and the inviscid part of its flux `ζ`.
///
/// Requires θ > 1/2, where the weight `1 − 1/(2θ)` of the heat-flux term is
/// positive. The viscous flux contribution is [`viscous_entropy_flux`].
pub fn dissipative_entropy(s: &PrimitiveState, p: &ModelParams) -> Result<(f64, Vec3)> {
    check(s)?;
    if !(s.theta > 0.5) {
        return Err(Error::ConvexityWindow(s.theta));
    }
    Ok((eta1_unchecked(s, p), zeta_unchecked(s, p)))
}

#[inline]
pub(crate) fn eta1_unchecked(s: &PrimitiveState, p: &ModelParams) -> f64 {
    let (rho, th) = (s.rho, s.theta);
    p.cv * rho * (th - th.ln() - 1.0)
        + p.r_gas * (rho * rho.ln() - rho + 1.0)
        + (1.0 - 0.5 / th) * p.tau1 * norm2(&s.q) / (p.kappa * th)
        + 0.5 * rho * norm2(&s.u)
        + p.tau3 * s.s2 * s.s2 / (2.0 * p.lambda)
}

pub(crate) fn zeta_unchecked(s: &PrimitiveState, p: &ModelParams) -> Vec3 {
    let (rho, th) = (s.rho, s.theta);
    let pr = pressure_unchecked(s, p);
    // coefficient multiplying u
    let cu = p.cv * rho * (th - th.ln() - 1.0)
        + (1.0 - 0.5 / th) * p.tau1 * norm2(&s.q) / (p.kappa * th)
        + p.tau3 * s.s2 * s.s2 / (2.0 * p.lambda)
        + p.r_gas * rho * rho.ln()
        - p.r_gas * rho
        + 0.5 * rho * norm2(&s.u)
        + pr
        - s.s2;
    let cq = 1.0 - 1.0 / th;
    std::array::from_fn(|i| cu * s.u[i] + cq * s.q[i])
}

/// `−μ (∇u + ∇uᵀ − (2/n) div u I) u`.
pub fn viscous_entropy_flux(u: &Vec3, grad_u: &Mat3, p: &ModelParams) -> Vec3 {
    let n = p.dim;
    let div: f64 = (0..n).map(|i| grad_u[i][i]).sum();
    let mut out = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let mut d = grad_u[i][j] + grad_u[j][i];
            if i == j {
                d -= 2.0 / n as f64 * div;
            }
            out[j] -= p.mu * u[i] * d;
        }
    }
    out
}

/// All pointwise entropy quantities at once.
pub fn entropy_densities(
    s: &PrimitiveState,
    grad_u: &Mat3,
    p: &ModelParams,
) -> Result<EntropyDensities> {
    let (eta1, mut zeta) = dissipative_entropy(s, p)?;
    if p.mu > 0.0 {
        let v = viscous_entropy_flux(&s.u, grad_u, p);
        for i in 0..3 {
            zeta[i] += v[i];
        }
    }
    Ok(EntropyDensities {
        eta: physical_entropy(s, p)?,
        eta1,
        zeta,
        production: production_unchecked(s, grad_u, p),
    })
}

/// Entropy per unit mass with both relaxation times dropped.
pub fn classical_entropy(s: &PrimitiveState, p: &ModelParams) -> Result<f64> {
    physical_entropy(s, &p.classical())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditPoint {
    pub t: f64,
    pub eta1_total: f64,
    pub production_cum: f64,
    pub residual: f64,
}

/// Running check of `Δ∫η1 + ∫∫production = 0`.
///
/// The time integral uses the left-endpoint rule: the production total
/// recorded at `t_{k−1}` is weighted by `t_k − t_{k−1}`. A nonzero residual
/// measures the entropy produced (or destroyed) by the discretisation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyAudit {
    eta1_initial: f64,
    production_cum: f64,
    last_t: f64,
    last_production: f64,
    points: Vec<AuditPoint>,
}

impl EntropyAudit {
    pub fn new(t0: f64, eta1_total: f64, production_total: f64) -> Self {
        Self {
            eta1_initial: eta1_total,
            production_cum: 0.0,
            last_t: t0,
            last_production: production_total,
            points: vec![AuditPoint {
                t: t0,
                eta1_total,
                production_cum: 0.0,
                residual: 0.0,
            }],
        }
    }

    pub fn push(&mut self, t: f64, eta1_total: f64, production_total: f64) -> AuditPoint {
        self.production_cum += (t - self.last_t) * self.last_production;
        self.last_t = t;
        self.last_production = production_total;
        let pt = AuditPoint {
            t,
            eta1_total,
            production_cum: self.production_cum,
            residual: eta1_total - self.eta1_initial + self.production_cum,
        };
        self.points.push(pt);
        pt
    }

    pub fn points(&self) -> &[AuditPoint] {
        &self.points
    }

    pub fn last(&self) -> AuditPoint {
        *self.points.last().expect("audit starts with one point")
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.points.iter().map(|p| p.residual.abs()).fold(0.0, f64::max)
    }

    /// Max |residual| relative to the initial `∫η1` (absolute if that is 0).
    pub fn max_relative_residual(&self) -> f64 {
        let r = self.max_abs_residual();
        if self.eta1_initial > 0.0 {
            r / self.eta1_initial
        } else {
            r
        }
    }

    /// Largest increase of `∫η1` between consecutive records.
    pub fn max_increase(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1].eta1_total - w[0].eta1_total)
            .fold(0.0, f64::max)
    }

    /// `∫η1` never grew by more than the largest audit residual.
    pub fn nonincreasing_up_to_residual(&self) -> bool {
        self.max_increase() <= self.max_abs_residual()
    }
}

/// Midpoint-rule integral of η1 over cell-centred primitive states.
pub fn eta1_integral<'a, I>(states: I, cell_volume: f64, p: &ModelParams) -> Result<f64>
where
    I: IntoIterator<Item = &'a PrimitiveState>,
{
    let mut acc = crate::sum::NeumaierSum::new();
    for s in states {
        let (e, _) = dissipative_entropy(s, p)?;
        acc.add(e);
    }
    Ok(acc.value() * cell_volume)
}
