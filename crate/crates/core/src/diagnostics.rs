//! Functionals and certificates evaluated on solver snapshots.
//!
//! * `F(t) = ∫ x·ρu dx` and `G(t) = ∫ (𝓔 − Cv) dx`, the averaged quantities
//!   of the blow-up argument;
//! * [`BlowupLedger`]: every constant and condition of that argument as a pure
//!   function of the initial data, for n = 3 and its n = 2 analogue;
//! * support radius, a difference surrogate of the H³ energy, and the
//!   residual of the temperature equation;
//! * [`Recorder`], which turns a run into one [`DiagnosticsRecord`] per
//!   snapshot.
//!
//! Integrals use the midpoint rule over cell centres and compensated sums in
//! cell order.

use serde::{Deserialize, Serialize};

use crate::eigen::{max_wave_speed, WaveSpeedMode};
use crate::entropy::{eta1_unchecked, production_unchecked, EntropyAudit, Mat3};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{Grid, Neighbor};
use crate::sum::NeumaierSum;
use crate::thermo::{norm2, pressure_partials_unchecked, ModelParams, PrimitiveState};

/// Volume of the unit ball in `n` dimensions.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => f64::NAN,
    }
}

/// `F = ∫ x·ρu dx`; meaningful for data supported away from the domain edge.
pub fn functional_f(f: &Field) -> f64 {
    let v = f.vars();
    let mut acc = NeumaierSum::new();
    for i in 0..f.grid.len() {
        let x = f.grid.center(i);
        let c = f.cell(i);
        let mut s = 0.0;
        for a in 0..v.n {
            s += x[a] * c[v.mom(a)];
        }
        acc.add(s);
    }
    acc.value() * f.grid.cell_volume()
}

/// `G = ∫ (𝓔 − 𝓔̄) dx` with the rest-state energy `𝓔̄ = Cv`.
pub fn functional_g(f: &Field, p: &ModelParams) -> f64 {
    let v = f.vars();
    let mut acc = NeumaierSum::new();
    for i in 0..f.grid.len() {
        acc.add(f.cell(i)[v.etot()] - p.cv);
    }
    acc.value() * f.grid.cell_volume()
}

/// `∫ ρ|u|² dx`.
pub fn kinetic_integral(prims: &[PrimitiveState], grid: &Grid) -> f64 {
    let mut acc = NeumaierSum::new();
    for w in prims {
        acc.add(w.rho * norm2(&w.u));
    }
    acc.value() * grid.cell_volume()
}

/// `∫ |u|² dx`.
pub fn velocity_l2_squared(prims: &[PrimitiveState], grid: &Grid) -> f64 {
    let mut acc = NeumaierSum::new();
    for w in prims {
        acc.add(norm2(&w.u));
    }
    acc.value() * grid.cell_volume()
}

/// `W0 = ∫ (η1 − ½ρ|u|²) dx`, the part of the dissipative entropy not carried
/// by the kinetic energy.
pub fn w0_integral(prims: &[PrimitiveState], grid: &Grid, p: &ModelParams) -> f64 {
    let mut acc = NeumaierSum::new();
    for w in prims {
        acc.add(eta1_unchecked(w, p) - 0.5 * w.rho * norm2(&w.u));
    }
    acc.value() * grid.cell_volume()
}

/// Largest componentwise deviation from the rest state `(1, 0, 1, 0, 0)`.
pub fn deviation(w: &PrimitiveState) -> f64 {
    let mut d = (w.rho - 1.0).abs().max((w.theta - 1.0).abs()).max(w.s2.abs());
    for k in 0..3 {
        d = d.max(w.u[k].abs()).max(w.q[k].abs());
    }
    d
}

/// Radius of the smallest origin-centred ball containing the centres of all
/// cells deviating from the rest state by more than `tol`.
pub fn support_radius(prims: &[PrimitiveState], grid: &Grid, tol: f64) -> f64 {
    grid.radius_of((0..prims.len()).filter(|&i| deviation(&prims[i]) > tol))
}

pub const SUPPORT_TOL: f64 = 1e-12;

/// Largest `|u(i+e_a) − u(i)| / Δx_a` over cells, axes and components.
pub fn max_velocity_gradient(prims: &[PrimitiveState], grid: &Grid) -> f64 {
    max_velocity_jump_scaled(prims, grid, true)
}

/// Largest cell-to-cell velocity jump `|u(i+e_a) − u(i)|`.
pub fn max_velocity_jump(prims: &[PrimitiveState], grid: &Grid) -> f64 {
    max_velocity_jump_scaled(prims, grid, false)
}

fn max_velocity_jump_scaled(prims: &[PrimitiveState], grid: &Grid, per_dx: bool) -> f64 {
    let n = grid.dim;
    let mut m = 0.0f64;
    for i in 0..prims.len() {
        for a in 0..n {
            let un = match grid.neighbor(i, a, 1) {
                Neighbor::Cell(j) => prims[j].u,
                Neighbor::Exterior => [0.0; 3],
            };
            let scale = if per_dx { 1.0 / grid.dx[a] } else { 1.0 };
            for k in 0..n {
                m = m.max((un[k] - prims[i].u[k]).abs() * scale);
            }
        }
    }
    m
}

/// Centred difference along `axis`; exterior values are `ext`.
fn centered(grid: &Grid, g: &[f64], ext: f64, axis: usize) -> Vec<f64> {
    let h = 2.0 * grid.dx[axis];
    (0..g.len())
        .map(|i| {
            let at = |o| match grid.neighbor(i, axis, o) {
                Neighbor::Cell(j) => g[j],
                Neighbor::Exterior => ext,
            };
            (at(1) - at(-1)) / h
        })
        .collect()
}

/// `S_k = Σ ‖∂_{a1}⋯∂_{ak} g‖²` over ordered axis sequences, `k = 0..=order`,
/// with centred differences. `g` must vanish outside a constant-boundary
/// domain (it is a deviation from the rest state).
pub fn derivative_sums(grid: &Grid, g: &[f64], order: usize) -> Vec<f64> {
    let vol = grid.cell_volume();
    let sq = |v: &[f64]| {
        let mut acc = NeumaierSum::new();
        for x in v {
            acc.add(x * x);
        }
        acc.value() * vol
    };
    let mut level = vec![g.to_vec()];
    let mut out = vec![sq(g)];
    for _ in 0..order {
        let mut next = Vec::with_capacity(level.len() * grid.dim);
        for h in &level {
            for a in 0..grid.dim {
                next.push(centered(grid, h, 0.0, a));
            }
        }
        out.push(next.iter().map(|v| sq(v)).sum());
        level = next;
    }
    out
}

/// Instantaneous pieces of the discrete energy `E(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevSample {
    /// `‖(ρ−1, u, θ−1, q, S2)‖²_{H³}`
    pub state_h3: f64,
    /// `‖(∇ρ, ∇θ)‖²_{H²} + ‖(q, S2)‖²_{H³} + ‖∇u‖²_{H³}`
    pub dissipation: f64,
}

pub fn sobolev_sample(prims: &[PrimitiveState], grid: &Grid) -> SobolevSample {
    let n = grid.dim;
    let field = |f: &dyn Fn(&PrimitiveState) -> f64| prims.iter().map(f).collect::<Vec<_>>();
    let mut state = 0.0;
    let mut diss = 0.0;
    let rho = derivative_sums(grid, &field(&|w| w.rho - 1.0), 3);
    let th = derivative_sums(grid, &field(&|w| w.theta - 1.0), 3);
    state += rho.iter().sum::<f64>() + th.iter().sum::<f64>();
    diss += rho[1..].iter().sum::<f64>() + th[1..].iter().sum::<f64>();
    for k in 0..n {
        let u = derivative_sums(grid, &field(&|w| w.u[k]), 4);
        state += u[..4].iter().sum::<f64>();
        diss += u[1..].iter().sum::<f64>();
        let q = derivative_sums(grid, &field(&|w| w.q[k]), 3);
        state += q.iter().sum::<f64>();
        diss += q.iter().sum::<f64>();
    }
    let s2 = derivative_sums(grid, &field(&|w| w.s2), 3);
    state += s2.iter().sum::<f64>();
    diss += s2.iter().sum::<f64>();
    SobolevSample {
        state_h3: state,
        dissipation: diss,
    }
}

/// `E(t) = sup_s ‖state‖²_{H³} + ∫_0^t dissipation`, integrated with the
/// left-endpoint rule over the samples it is fed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SobolevTracker {
    sup_state: f64,
    integral: f64,
    last_t: f64,
    last_dissipation: f64,
}

impl SobolevTracker {
    pub fn new(t0: f64, s: SobolevSample) -> Self {
        Self {
            sup_state: s.state_h3,
            integral: 0.0,
            last_t: t0,
            last_dissipation: s.dissipation,
        }
    }

    pub fn push(&mut self, t: f64, s: SobolevSample) -> f64 {
        self.integral += (t - self.last_t) * self.last_dissipation;
        self.last_t = t;
        self.last_dissipation = s.dissipation;
        self.sup_state = self.sup_state.max(s.state_h3);
        self.value()
    }

    pub fn value(&self) -> f64 {
        self.sup_state + self.integral
    }
}

/// Centred velocity gradient `∂u_i/∂x_j` of every cell.
pub fn velocity_gradients(prims: &[PrimitiveState], grid: &Grid) -> Vec<Mat3> {
    let n = grid.dim;
    (0..prims.len())
        .map(|i| {
            let mut m = [[0.0; 3]; 3];
            for j in 0..n {
                let at = |o| match grid.neighbor(i, j, o) {
                    Neighbor::Cell(c) => prims[c].u,
                    Neighbor::Exterior => [0.0; 3],
                };
                let (um, up) = (at(-1), at(1));
                for (k, row) in m.iter_mut().enumerate().take(n) {
                    row[j] = (up[k] - um[k]) / (2.0 * grid.dx[j]);
                }
            }
            m
        })
        .collect()
}

/// `∫ η1 dx` and `∫ production dx`. Fails outside the convexity window
/// θ > 1/2.
pub fn entropy_totals(prims: &[PrimitiveState], grid: &Grid, p: &ModelParams) -> Result<(f64, f64)> {
    let grads = velocity_gradients(prims, grid);
    let mut eta = NeumaierSum::new();
    let mut prod = NeumaierSum::new();
    for (i, w) in prims.iter().enumerate() {
        if !(w.theta > 0.5) {
            return Err(Error::ConvexityWindow(w.theta));
        }
        eta.add(eta1_unchecked(w, p));
        prod.add(production_unchecked(w, &grads[i], p));
    }
    let vol = grid.cell_volume();
    Ok((eta.value() * vol, prod.value() * vol))
}

/// L² norm of the temperature-equation residual between two snapshots.
///
/// The time derivative is the difference quotient of θ; every other term is
/// evaluated at the mean of the two primitive states with centred spatial
/// differences, so the residual is a consistency measure of the
/// total-energy scheme against the θ form of the energy balance.
pub fn theta_equation_residual(
    a: &[PrimitiveState],
    ta: f64,
    b: &[PrimitiveState],
    tb: f64,
    grid: &Grid,
    p: &ModelParams,
) -> f64 {
    let n = grid.dim;
    let dt = tb - ta;
    let mid: Vec<PrimitiveState> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let avg = |s: f64, t: f64| 0.5 * (s + t);
            PrimitiveState::new(
                avg(x.rho, y.rho),
                std::array::from_fn(|k| avg(x.u[k], y.u[k])),
                avg(x.theta, y.theta),
                std::array::from_fn(|k| avg(x.q[k], y.q[k])),
                avg(x.s2, y.s2),
            )
        })
        .collect();
    let ext = PrimitiveState::equilibrium();
    let nb = |i: usize, axis: usize, o: isize| match grid.neighbor(i, axis, o) {
        Neighbor::Cell(j) => &mid[j],
        Neighbor::Exterior => &ext,
    };
    let grads = if p.mu > 0.0 {
        velocity_gradients(&mid, grid)
    } else {
        Vec::new()
    };
    let mut acc = NeumaierSum::new();
    for (i, w) in mid.iter().enumerate() {
        let d = pressure_partials_unchecked(w, p);
        let mut grad_theta = [0.0; 3];
        let mut div_u = 0.0;
        let mut div_q = 0.0;
        for axis in 0..n {
            let (m, pl) = (nb(i, axis, -1), nb(i, axis, 1));
            let h = 2.0 * grid.dx[axis];
            grad_theta[axis] = (pl.theta - m.theta) / h;
            div_u += (pl.u[axis] - m.u[axis]) / h;
            div_q += (pl.q[axis] - m.q[axis]) / h;
        }
        let theta_t = (b[i].theta - a[i].theta) / dt;
        let mut adv = 0.0;
        for k in 0..n {
            adv += (w.rho * w.u[k] * d.e_theta - 2.0 * w.q[k] / w.theta) * grad_theta[k];
        }
        let mut r = w.rho * d.e_theta * theta_t + adv + w.theta * d.p_theta * div_u + div_q
            - 2.0 * norm2(&w.q) / (p.kappa * w.theta)
            - w.s2 * w.s2 / p.lambda;
        if p.mu > 0.0 {
            r -= 0.5 * p.mu * crate::entropy::deviatoric_norm2(&grads[i], n);
        }
        acc.add(r * r);
    }
    (acc.value() * grid.cell_volume()).sqrt()
}

/// Constants and conditions of the blow-up argument.
///
/// For n = 3 these are the published constants; for n = 2 the same chain is
/// redone with area measures (`ω_2 = π`, `(1 + c2 t)^3`), which is derived
/// here rather than quoted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupLedger {
    pub dim: usize,
    pub m_support: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub max_rho0: f64,
    pub min_rho0: f64,
    /// `1 − n(γ − 1)/2`, the coefficient of `∫ρ|u|²` in the lower bound on F′.
    pub a_n: f64,
    /// `2(n + 1)`; the bound on F reads `(K c2/c3)(1 + c2 t)^{n+1}`.
    pub k: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub f0: f64,
    pub g0: f64,
    pub w0: f64,
    pub u0_l2_squared: f64,
    /// F0 must exceed this (`16 c2/c3` for n = 3).
    pub f0_threshold: f64,
    pub initial_momentum_condition: bool,
    /// `c4 + c5‖u0‖²` and its allowance `c3/(2K c2)`.
    pub dissipation_budget: f64,
    pub dissipation_allowance: f64,
    pub dissipation_budget_condition: bool,
    /// `F0² ≥ 2nω_n Mⁿ / c3`.
    pub bootstrap_start_condition: bool,
    /// `c2² ≥ 2nω_n Mⁿ c3 / K²` (for n = 3: `σ² ≥ 3(5 − 3γ)/(64 max ρ0)`).
    pub bootstrap_speed_condition: bool,
    pub positive_excess_energy: bool,
    pub gamma_below_five_thirds: bool,
    /// All hypotheses the constants rely on (γ < 5/3 and `a_n > 0`).
    pub applicable: bool,
    /// Smallest amplitude L meeting the published choice of L (n = 3).
    pub l_threshold: Option<f64>,
}

/// Inputs of the ledger that depend on the initial field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerInputs {
    pub m_support: f64,
    pub sigma: f64,
    pub max_rho0: f64,
    pub min_rho0: f64,
    pub f0: f64,
    pub g0: f64,
    pub w0: f64,
    pub u0_l2_squared: f64,
}

impl LedgerInputs {
    /// Measures everything from an initial field. `max_rho0` includes the
    /// ambient density 1, `min_rho0` is taken over the support.
    pub fn from_field(f0: &Field, p: &ModelParams, sigma: f64, m_support: f64) -> Result<Self> {
        let prims = f0.primitives(p)?;
        let mut max_rho: f64 = 1.0;
        let mut min_rho = f64::INFINITY;
        for (i, w) in prims.iter().enumerate() {
            max_rho = max_rho.max(w.rho);
            let x = f0.grid.center(i);
            if (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() <= m_support {
                min_rho = min_rho.min(w.rho);
            }
        }
        Ok(Self {
            m_support,
            sigma,
            max_rho0: max_rho,
            min_rho0: if min_rho.is_finite() { min_rho } else { 1.0 },
            f0: functional_f(f0),
            g0: functional_g(f0, p),
            w0: w0_integral(&prims, &f0.grid, p),
            u0_l2_squared: velocity_l2_squared(&prims, &f0.grid),
        })
    }
}

/// σ-fixing rule: 1.1 times the largest characteristic speed of `states`.
pub fn propagation_speed<'a, I>(states: I, p: &ModelParams) -> Result<f64>
where
    I: IntoIterator<Item = &'a PrimitiveState>,
{
    Ok(1.1 * max_wave_speed(states, p, WaveSpeedMode::Full)?)
}

pub fn blowup_ledger(inp: &LedgerInputs, p: &ModelParams) -> BlowupLedger {
    let n = p.dim;
    let nf = n as f64;
    let gamma = p.gamma();
    let omega = unit_ball_volume(n);
    let m = inp.m_support;
    let a_n = 1.0 - nf * (gamma - 1.0) / 2.0;
    let k = 2.0 * (nf + 1.0);
    let c2 = inp.sigma / m;
    let c3 = a_n / (omega * inp.max_rho0 * m.powi(n as i32 + 2));
    let c1 = 0.5 * k * c2 / c3;
    // rest temperature θ̄ = 1
    let theta_bar = 1.0;
    let bracket = theta_bar * (8.0 * p.tau1 * gamma + 2.0 * p.tau3 * gamma + p.lambda);
    let c4 = nf / (c1 * c1) * bracket * inp.w0;
    let c5 = nf / (c1 * c1) * bracket * inp.max_rho0 / 2.0;
    let f0_threshold = 2.0 * k * c2 / c3;
    let budget = c4 + c5 * inp.u0_l2_squared;
    let allowance = c3 / (2.0 * k * c2);
    let ball = 2.0 * nf * omega * m.powi(n as i32);
    let gamma_ok = gamma < 5.0 / 3.0;
    let applicable = gamma_ok && a_n > 0.0;
    let l_threshold = (n == 3).then(|| {
        let denom = 3.0 * (5.0 - 3.0 * gamma);
        let pi = std::f64::consts::PI;
        let need = (64.0 * pi * inp.max_rho0 / denom)
            .sqrt()
            .max(128.0 * inp.sigma * pi * inp.max_rho0 / denom);
        need * 32.0 / (pi * inp.min_rho0)
    });
    BlowupLedger {
        dim: n,
        m_support: m,
        sigma: inp.sigma,
        gamma,
        max_rho0: inp.max_rho0,
        min_rho0: inp.min_rho0,
        a_n,
        k,
        c1,
        c2,
        c3,
        c4,
        c5,
        f0: inp.f0,
        g0: inp.g0,
        w0: inp.w0,
        u0_l2_squared: inp.u0_l2_squared,
        f0_threshold,
        initial_momentum_condition: applicable && inp.f0 > f0_threshold,
        dissipation_budget: budget,
        dissipation_allowance: allowance,
        dissipation_budget_condition: applicable && budget <= allowance,
        bootstrap_start_condition: applicable && inp.f0 * inp.f0 >= ball / c3,
        bootstrap_speed_condition: applicable && c2 * c2 >= ball * c3 / (k * k),
        positive_excess_energy: inp.g0 > 0.0,
        gamma_below_five_thirds: gamma_ok,
        applicable,
        l_threshold,
    }
}

impl BlowupLedger {
    /// Lower bound `(K c2/c3)(1 + c2 t)^{n+1}` on F while the solution is
    /// smooth.
    pub fn bound(&self, t: f64) -> f64 {
        self.k * self.c2 / self.c3 * (1.0 + self.c2 * t).powi(self.dim as i32 + 1)
    }

    /// Whether the a priori assumption
    /// `(n/2)ω_n (M + σt)ⁿ ≤ c3 F² / (2(1 + c2 t)^{n+2})` holds at `(t, F)`.
    pub fn a_priori_assumption(&self, t: f64, f: f64) -> bool {
        let n = self.dim as i32;
        let s = 1.0 + self.c2 * t;
        0.5 * self.dim as f64 * unit_ball_volume(self.dim) * (self.m_support * s).powi(n)
            <= self.c3 * f * f / (2.0 * s.powi(n + 2))
    }

    /// Coefficients of `∫q²` and `∫S2²` in the dissipation budget (they
    /// multiply the time integrals bounded by `c4 + c5‖u0‖²`).
    pub fn budget_coefficients(&self, p: &ModelParams) -> (f64, f64) {
        let nf = self.dim as f64;
        let c1sq = self.c1 * self.c1;
        (
            2.0 * nf * p.tau1 * self.gamma / (c1sq * p.kappa),
            nf * (2.0 * p.tau3 * self.gamma + p.lambda) / (2.0 * p.lambda * c1sq),
        )
    }
}

/// One comparison of F against the lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorPoint {
    pub t: f64,
    pub f: f64,
    pub bound: f64,
    /// F ≥ 0.95 · bound
    pub satisfied: bool,
    pub a_priori_assumption: bool,
    /// `F² ≤ ω_n max ρ0 (M + σt)^{n+2} ∫ρ|u|²`
    pub cauchy_schwarz: bool,
    /// Running left-endpoint value of the weighted `∫∫q²`, `∫∫S2²` budget.
    pub dissipation_used: f64,
}

pub const MONITOR_TOLERANCE: f64 = 0.05;

/// First cell-to-cell velocity jump above this multiple of the initial one
/// counts as loss of smoothness.
pub const SMOOTHNESS_FACTOR: f64 = 1e3;

/// One row of the diagnostics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub mom_x: f64,
    pub mom_y: f64,
    pub mom_z: f64,
    pub etot: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub bound: f64,
    pub eta1_total: f64,
    pub production_cum: f64,
    pub residual: f64,
    pub support_radius: f64,
    pub sigma_max: f64,
    pub max_grad_u: f64,
    #[serde(rename = "E_sobolev")]
    pub e_sobolev: f64,
    pub theta_residual: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 17] = [
        "t",
        "mass",
        "mom_x",
        "mom_y",
        "mom_z",
        "etot",
        "G",
        "F",
        "bound",
        "eta1_total",
        "production_cum",
        "residual",
        "support_radius",
        "sigma_max",
        "max_grad_u",
        "E_sobolev",
        "theta_residual",
    ];

    pub fn values(&self) -> [f64; 17] {
        [
            self.t,
            self.mass,
            self.mom_x,
            self.mom_y,
            self.mom_z,
            self.etot,
            self.g,
            self.f,
            self.bound,
            self.eta1_total,
            self.production_cum,
            self.residual,
            self.support_radius,
            self.sigma_max,
            self.max_grad_u,
            self.e_sobolev,
            self.theta_residual,
        ]
    }
}

/// What to evaluate at each snapshot; the expensive parts can be skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsOptions {
    pub sobolev: bool,
    pub theta_residual: bool,
    pub entropy: bool,
    pub support_tol: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            sobolev: true,
            theta_residual: true,
            entropy: true,
            support_tol: SUPPORT_TOL,
        }
    }
}

/// Why a run was stopped by the diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Halt {
    /// The velocity jump exceeded [`SMOOTHNESS_FACTOR`] times its initial value.
    SmoothnessLoss { t: f64, max_jump: f64, initial_jump: f64 },
}

/// Accumulates per-step integrals (entropy production, dissipation budget)
/// and emits a record per snapshot.
#[derive(Debug, Clone)]
pub struct Recorder {
    params: ModelParams,
    opts: DiagnosticsOptions,
    ledger: Option<BlowupLedger>,
    audit: Option<EntropyAudit>,
    sobolev: Option<SobolevTracker>,
    prev: (f64, Vec<PrimitiveState>),
    initial_jump: f64,
    budget_cum: f64,
    budget_last: (f64, f64),
    pub records: Vec<DiagnosticsRecord>,
    pub monitor: Vec<MonitorPoint>,
    pub halt: Option<Halt>,
    pub sigma_run_max: f64,
}

impl Recorder {
    pub fn new(f0: &Field, p: &ModelParams, opts: DiagnosticsOptions, ledger: Option<BlowupLedger>) -> Result<Self> {
        let prims = f0.primitives(p)?;
        let audit = if opts.entropy {
            let (eta, prod) = entropy_totals(&prims, &f0.grid, p)?;
            Some(EntropyAudit::new(f0.t, eta, prod))
        } else {
            None
        };
        let sobolev = opts
            .sobolev
            .then(|| SobolevTracker::new(f0.t, sobolev_sample(&prims, &f0.grid)));
        let mut r = Self {
            params: *p,
            opts,
            ledger,
            audit,
            sobolev,
            prev: (f0.t, prims.clone()),
            initial_jump: max_velocity_jump(&prims, &f0.grid),
            budget_cum: 0.0,
            budget_last: (f0.t, 0.0),
            records: Vec::new(),
            monitor: Vec::new(),
            halt: None,
            sigma_run_max: 0.0,
        };
        r.budget_last.1 = r.budget_rate(&prims, &f0.grid);
        let sigma = max_wave_speed(prims.iter(), p, WaveSpeedMode::Full)?;
        r.emit(f0, &prims, sigma, f64::NAN);
        Ok(r)
    }

    pub fn ledger(&self) -> Option<&BlowupLedger> {
        self.ledger.as_ref()
    }

    pub fn audit(&self) -> Option<&EntropyAudit> {
        self.audit.as_ref()
    }

    fn budget_rate(&self, prims: &[PrimitiveState], grid: &Grid) -> f64 {
        let Some(l) = &self.ledger else { return 0.0 };
        let (cq, cs) = l.budget_coefficients(&self.params);
        let mut acc = NeumaierSum::new();
        for w in prims {
            acc.add(cq * norm2(&w.q) + cs * w.s2 * w.s2);
        }
        acc.value() * grid.cell_volume()
    }

    /// Per-step update of the time integrals. Returns the primitive states.
    pub fn observe_step(&mut self, f: &Field, sigma: f64) -> Result<Vec<PrimitiveState>> {
        let prims = f.primitives(&self.params)?;
        self.sigma_run_max = self.sigma_run_max.max(sigma);
        if let Some(a) = self.audit.as_mut() {
            let (eta, prod) = entropy_totals(&prims, &f.grid, &self.params)?;
            a.push(f.t, eta, prod);
        }
        if self.ledger.is_some() {
            let (t0, rate) = self.budget_last;
            self.budget_cum += (f.t - t0) * rate;
            self.budget_last = (f.t, self.budget_rate(&prims, &f.grid));
        }
        if self.halt.is_none() && self.initial_jump > 0.0 {
            let jump = max_velocity_jump(&prims, &f.grid);
            if jump > SMOOTHNESS_FACTOR * self.initial_jump {
                self.halt = Some(Halt::SmoothnessLoss {
                    t: f.t,
                    max_jump: jump,
                    initial_jump: self.initial_jump,
                });
            }
        }
        Ok(prims)
    }

    /// Snapshot record; call after [`Recorder::observe_step`] for the same state.
    pub fn record(&mut self, f: &Field, prims: &[PrimitiveState], sigma: f64) -> DiagnosticsRecord {
        let theta_res = if self.opts.theta_residual && f.t > self.prev.0 {
            theta_equation_residual(&self.prev.1, self.prev.0, prims, f.t, &f.grid, &self.params)
        } else {
            f64::NAN
        };
        if let Some(s) = self.sobolev.as_mut() {
            s.push(f.t, sobolev_sample(prims, &f.grid));
        }
        self.prev = (f.t, prims.to_vec());
        self.emit(f, prims, sigma, theta_res)
    }

    fn emit(&mut self, f: &Field, prims: &[PrimitiveState], sigma: f64, theta_res: f64) -> DiagnosticsRecord {
        let tot = f.totals();
        let fv = functional_f(f);
        let (bound, mon) = match &self.ledger {
            Some(l) => {
                let b = l.bound(f.t);
                let radius = l.m_support + l.sigma * f.t;
                let cs = fv * fv
                    <= unit_ball_volume(l.dim) * l.max_rho0 * radius.powi(l.dim as i32 + 2)
                        * kinetic_integral(prims, &f.grid)
                        * (1.0 + 1e-12);
                let pt = MonitorPoint {
                    t: f.t,
                    f: fv,
                    bound: b,
                    satisfied: fv >= (1.0 - MONITOR_TOLERANCE) * b,
                    a_priori_assumption: l.a_priori_assumption(f.t, fv),
                    cauchy_schwarz: cs,
                    dissipation_used: self.budget_cum,
                };
                (b, Some(pt))
            }
            None => (f64::NAN, None),
        };
        if let Some(m) = mon {
            self.monitor.push(m);
        }
        let (eta, prod, res) = match &self.audit {
            Some(a) => {
                let pt = a.last();
                (pt.eta1_total, pt.production_cum, pt.residual)
            }
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        let rec = DiagnosticsRecord {
            t: f.t,
            mass: tot.mass,
            mom_x: tot.momentum[0],
            mom_y: tot.momentum[1],
            mom_z: tot.momentum[2],
            etot: tot.energy,
            g: functional_g(f, &self.params),
            f: fv,
            bound,
            eta1_total: eta,
            production_cum: prod,
            residual: res,
            support_radius: support_radius(prims, &f.grid, self.opts.support_tol),
            sigma_max: sigma,
            max_grad_u: max_velocity_gradient(prims, &f.grid),
            e_sobolev: self.sobolev.as_ref().map_or(f64::NAN, |s| s.value()),
            theta_residual: theta_res,
        };
        self.records.push(rec);
        rec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use crate::thermo::ModelParams;
    use std::f64::consts::PI;

    fn grid2(n: usize, half: f64) -> Grid {
        Grid::centered(2, n, half, Boundary::Constant).unwrap()
    }

    #[test]
    fn rest_state_functionals_vanish() {
        let p = ModelParams::unit(2);
        let f = Field::equilibrium(grid2(16, 2.0), &p).unwrap();
        assert_eq!(functional_f(&f), 0.0);
        assert_eq!(functional_g(&f, &p), 0.0);
        let prims = f.primitives(&p).unwrap();
        assert_eq!(support_radius(&prims, &f.grid, SUPPORT_TOL), 0.0);
        let s = sobolev_sample(&prims, &f.grid);
        assert_eq!(s.state_h3, 0.0);
        assert_eq!(s.dissipation, 0.0);
        assert_eq!(theta_equation_residual(&prims, 0.0, &prims, 0.1, &f.grid, &p), 0.0);
    }

    #[test]
    fn g_of_temperature_bump() {
        // θ0 = 1 + φ, ρ0 = 1: G = Cv ∫φ
        let p = ModelParams {
            cv: 2.5,
            ..ModelParams::unit(2)
        };
        let f = Field::from_primitive(grid2(64, 2.0), &p, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            PrimitiveState::new(1.0, [0.0; 3], 1.0 + 0.1 * (-4.0 * r2).exp(), [0.0; 3], 0.0)
        })
        .unwrap();
        let exact = 2.5 * 0.1 * PI / 4.0;
        assert!((functional_g(&f, &p) - exact).abs() < 1e-6);
        // linearity in the energy deviation
        let g1 = functional_g(&f, &p);
        let mut f2 = f.clone();
        for i in 0..f2.grid.len() {
            let e = f2.cell(i)[3];
            f2.data[i * 7 + 3] = p.cv + 3.0 * (e - p.cv);
        }
        assert!((functional_g(&f2, &p) - 3.0 * g1).abs() < 1e-12);
    }

    #[test]
    fn ledger_reference_constants() {
        // γ = 1.4, max ρ0 = 1, M = 5, σ = 10
        let p = ModelParams {
            r_gas: 0.4,
            ..ModelParams::unit(3)
        };
        let inp = LedgerInputs {
            m_support: 5.0,
            sigma: 10.0,
            max_rho0: 1.0,
            min_rho0: 1.0,
            f0: 0.0,
            g0: 0.0,
            w0: 0.0,
            u0_l2_squared: 0.0,
        };
        let l = blowup_ledger(&inp, &p);
        let c3 = 3.0 * (5.0 - 3.0 * 1.4) / (8.0 * PI * 3125.0);
        assert!((l.c3 / c3 - 1.0).abs() < 1e-14);
        assert!((l.c3 - 3.056e-5).abs() < 1e-8);
        assert_eq!(l.c2, 2.0);
        assert!((l.c1 - 4.0 * l.c2 / l.c3).abs() < 1e-9 * l.c1);
        assert!((l.f0_threshold - 16.0 * l.c2 / l.c3).abs() < 1e-9 * l.f0_threshold);
        assert!((l.bound(0.0) - 8.0 * l.c2 / l.c3).abs() < 1e-9 * l.bound(0.0));
        assert!(!l.initial_momentum_condition);
        // the speed condition is σ² ≥ 3(5 − 3γ)/(64 max ρ0)
        assert!(l.bootstrap_speed_condition);
        let slow = blowup_ledger(
            &LedgerInputs {
                sigma: (3.0 * 0.8 / 64.0f64).sqrt() * 0.99,
                ..inp
            },
            &p,
        );
        assert!(!slow.bootstrap_speed_condition);
    }

    #[test]
    fn published_choice_of_l_meets_both_conditions() {
        // F0 ≥ (π min ρ0/32) L M⁴ with L at the published threshold
        let p = ModelParams {
            r_gas: 0.4,
            ..ModelParams::unit(3)
        };
        let m = 5.0;
        let mut inp = LedgerInputs {
            m_support: m,
            sigma: 10.0,
            max_rho0: 1.2,
            min_rho0: 1.1,
            f0: 0.0,
            g0: 1.0,
            w0: 0.0,
            u0_l2_squared: 0.0,
        };
        let l_min = blowup_ledger(&inp, &p).l_threshold.unwrap();
        inp.f0 = PI * inp.min_rho0 / 32.0 * (1.0 + 1e-9) * l_min * m.powi(4);
        let l = blowup_ledger(&inp, &p);
        assert!(l.initial_momentum_condition && l.bootstrap_start_condition && l.positive_excess_energy);
    }

    #[test]
    fn ledger_inapplicable_for_stiff_gas() {
        let p = ModelParams {
            r_gas: 0.7,
            ..ModelParams::unit(3)
        };
        let inp = LedgerInputs {
            m_support: 5.0,
            sigma: 10.0,
            max_rho0: 1.0,
            min_rho0: 1.0,
            f0: 1e12,
            g0: 1.0,
            w0: 0.0,
            u0_l2_squared: 0.0,
        };
        let l = blowup_ledger(&inp, &p);
        assert!(!l.applicable && !l.initial_momentum_condition && !l.gamma_below_five_thirds);
    }

    #[test]
    fn sobolev_scales_quadratically() {
        let p = ModelParams::unit(2);
        let make = |eps: f64| {
            Field::from_primitive(grid2(32, 2.0), &p, |x| {
                let b = (-2.0 * (x[0] * x[0] + x[1] * x[1])).exp();
                PrimitiveState::new(1.0 + eps * b, [eps * b, -eps * b, 0.0], 1.0 + eps * b, [0.0; 3], 0.0)
            })
            .unwrap()
        };
        let s = |eps| {
            let f = make(eps);
            sobolev_sample(&f.primitives(&p).unwrap(), &f.grid)
        };
        let (a, b) = (s(1e-3), s(2e-3));
        assert!((b.state_h3 / a.state_h3 - 4.0).abs() < 1e-9);
        assert!((b.dissipation / a.dissipation - 4.0).abs() < 1e-9);
    }

    #[test]
    fn derivative_sums_of_sine() {
        // g = sin(2πx) on a periodic line: S_k ≈ (2π)^{2k}/2
        let g = Grid::new(1, &[256], &[0.0], &[1.0], Boundary::Periodic).unwrap();
        let v: Vec<f64> = (0..256).map(|i| (2.0 * PI * g.center(i)[0]).sin()).collect();
        let s = derivative_sums(&g, &v, 3);
        for (k, sk) in s.iter().enumerate() {
            let exact = (2.0 * PI).powi(2 * k as i32) / 2.0;
            assert!((sk / exact - 1.0).abs() < 2e-3 * (k as f64 + 1.0), "k={k}");
        }
    }

    #[test]
    fn support_radius_of_bump() {
        let p = ModelParams::unit(2);
        let f = Field::from_primitive(grid2(40, 10.0), &p, |x| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let t = if r < 5.0 { 1.0 + 0.1 * (1.0 - r / 5.0) } else { 1.0 };
            PrimitiveState::new(1.0, [0.0; 3], t, [0.0; 3], 0.0)
        })
        .unwrap();
        let r = support_radius(&f.primitives(&p).unwrap(), &f.grid, SUPPORT_TOL);
        assert!((r - 5.0).abs() <= f.grid.dx[0], "{r}");
    }

    #[test]
    fn theta_residual_of_steady_conduction_is_small() {
        // uniform fields: the residual vanishes identically
        let p = ModelParams::unit(1);
        let g = Grid::new(1, &[16], &[0.0], &[1.0], Boundary::Periodic).unwrap();
        let s = PrimitiveState::new(1.2, [0.3, 0.0, 0.0], 1.1, [0.0; 3], 0.0);
        let prims = vec![s; 16];
        assert_eq!(theta_equation_residual(&prims, 0.0, &prims, 1.0, &g, &p), 0.0);
    }
}
