//! Initial data generators and the relaxation-limit experiment.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{blowup_ledger, derivative_sums, propagation_speed, BlowupLedger, LedgerInputs};
use crate::eigen::WaveSpeedMode;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{Grid, Neighbor};
use crate::solver::{Solver, SolverConfig};
use crate::thermo::{ModelParams, PrimitiveState, Vec3};

/// Degree-seven smoothstep: 0 at ξ ≤ 0, 1 at ξ ≥ 1, with three vanishing
/// derivatives at both ends.
pub fn smoothstep(xi: f64) -> f64 {
    if xi <= 0.0 {
        0.0
    } else if xi >= 1.0 {
        1.0
    } else {
        let x2 = xi * xi;
        x2 * x2 * (35.0 - 84.0 * xi + 70.0 * x2 - 20.0 * x2 * xi)
    }
}

/// Radial blow-up profile: a cosine ramp on [0, 1], a plateau `L` on
/// (1, M − 1], a cosine drop to 0 on (M − 1, M].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupProfileSpec {
    #[serde(default = "default_m")]
    pub m_support: f64,
    #[serde(rename = "L")]
    pub l: f64,
    /// Half-width of the blends at the corners; `None` means two cells.
    #[serde(default)]
    pub mollifier_width: Option<f64>,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    #[serde(default = "default_theta0")]
    pub theta0: f64,
    /// Propagation speed for the ledger; measured from the data when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
}

fn default_m() -> f64 {
    5.0
}
fn default_rho0() -> f64 {
    1.0
}
fn default_theta0() -> f64 {
    1.2
}

impl BlowupProfileSpec {
    /// Plateau `l` with every other field at its default.
    pub fn with_amplitude(l: f64) -> Self {
        Self {
            m_support: default_m(),
            l,
            mollifier_width: None,
            rho0: default_rho0(),
            theta0: default_theta0(),
            sigma: None,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.m_support >= 5.0) {
            v.push(format!("m_support must be >= 5, got {}", self.m_support));
        }
        if !(self.l > 0.0) {
            v.push(format!("L must be positive, got {}", self.l));
        }
        if let Some(w) = self.mollifier_width {
            if !(w > 0.0 && w <= 0.25) {
                v.push(format!("mollifier_width must lie in (0, 0.25], got {w}"));
            }
        }
        if !(self.rho0 > 0.0 && self.theta0 > 0.0 && self.rho0 * self.theta0 > 1.0) {
            v.push(format!(
                "rho0 * theta0 must exceed 1, got rho0 = {}, theta0 = {}",
                self.rho0, self.theta0
            ));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                v.push(format!("sigma must be positive, got {s}"));
            }
        }
        v
    }

    /// The unsmoothed profile.
    pub fn v_tilde(&self, r: f64) -> f64 {
        let (l, m) = (self.l, self.m_support);
        if r < 0.0 || r > m {
            0.0
        } else if r <= 1.0 {
            l * (0.5 * std::f64::consts::PI * (r - 1.0)).cos()
        } else if r <= m - 1.0 {
            l
        } else {
            0.5 * l * (std::f64::consts::PI * (r - m + 1.0)).cos() + 0.5 * l
        }
    }

    /// Smoothed profile with blend half-width `w`. Each corner blends the
    /// analytic continuations of its two neighbouring pieces, which keeps
    /// `0 ≤ v ≤ L`; away from the blends `v = ṽ` exactly. The blend at the
    /// origin puts `v` to zero there, the one at `M` ends inside the ball.
    pub fn v(&self, r: f64, w: f64) -> f64 {
        use std::f64::consts::PI;
        let (l, m) = (self.l, self.m_support);
        let ramp = |r: f64| l * (0.5 * PI * (r - 1.0)).cos();
        let drop = |r: f64| 0.5 * l * (PI * (r - m + 1.0)).cos() + 0.5 * l;
        let blend = |a: f64, b: f64, lo: f64, hi: f64| {
            let s = smoothstep((r - lo) / (hi - lo));
            (1.0 - s) * a + s * b
        };
        if r <= 0.0 || r >= m {
            0.0
        } else if r < 2.0 * w {
            blend(0.0, ramp(r), 0.0, 2.0 * w)
        } else if (r - 1.0).abs() < w {
            blend(ramp(r), l, 1.0 - w, 1.0 + w)
        } else if (r - (m - 1.0)).abs() < w {
            blend(l, drop(r), m - 1.0 - w, m - 1.0 + w)
        } else if r > m - 2.0 * w {
            blend(drop(r), 0.0, m - 2.0 * w, m)
        } else {
            self.v_tilde(r)
        }
    }

    /// Smoothed indicator of the ball of radius `M`.
    pub fn indicator(&self, r: f64, w: f64) -> f64 {
        1.0 - smoothstep((r - (self.m_support - 2.0 * w)) / (2.0 * w))
    }
}

/// Generated blow-up data together with its ledger.
#[derive(Debug, Clone)]
pub struct BlowupData {
    pub field: Field,
    pub ledger: BlowupLedger,
    pub mollifier_width: f64,
}

/// Samples the smoothed profile on a constant-boundary grid centred at the
/// origin. `horizon` is the intended run time; the domain must contain the
/// ball of radius `M + σ·horizon`.
pub fn blowup_initial_data(spec: &BlowupProfileSpec, grid: &Grid, p: &ModelParams, horizon: f64) -> Result<BlowupData> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    if grid.dim < 2 {
        return Err(Error::Params("blow-up data needs dim 2 or 3".into()));
    }
    let w = spec.mollifier_width.unwrap_or(2.0 * grid.min_dx());
    if w > 0.25 {
        return Err(Error::Params(format!("mollifier width {w} exceeds 0.25; refine the grid")));
    }
    let s = *spec;
    let field = Field::from_primitive(grid.clone(), p, move |x: Vec3| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let chi = s.indicator(r, w);
        let vr = s.v(r, w);
        let u = if r > 0.0 { x.map(|c| vr * c / r) } else { [0.0; 3] };
        PrimitiveState::new(
            1.0 + (s.rho0 - 1.0) * chi,
            u,
            1.0 + (s.theta0 - 1.0) * chi,
            [0.0; 3],
            0.0,
        )
    })?;
    let prims = field.admissible_primitives(p)?;
    let sigma = match spec.sigma {
        Some(s) => s,
        None => propagation_speed(prims.iter().chain(std::iter::once(&PrimitiveState::equilibrium())), p)?,
    };
    let reach = spec.m_support + sigma * horizon;
    for a in 0..grid.dim {
        if grid.lower[a] > -reach || grid.upper(a) < reach {
            return Err(Error::Params(format!(
                "support radius M + sigma*T = {reach} exceeds the domain along axis {a}"
            )));
        }
    }
    let inputs = LedgerInputs::from_field(&field, p, sigma, spec.m_support)?;
    Ok(BlowupData {
        field,
        ledger: blowup_ledger(&inputs, p),
        mollifier_width: w,
    })
}

/// `(1 − |y|²)⁴` for `|y| < 1`, zero outside; three continuous derivatives.
fn bump(y2: f64) -> f64 {
    if y2 >= 1.0 {
        0.0
    } else {
        (1.0 - y2).powi(4)
    }
}

/// Compact bumps of size `eps` in `ρ − 1`, `u` and `θ − 1` centred in the
/// domain, with radius a quarter of the shortest side; `q = S2 = 0`.
pub fn small_data(grid: &Grid, p: &ModelParams, eps: f64) -> Result<Field> {
    let n = grid.dim;
    let centre: Vec3 = std::array::from_fn(|a| if a < n { 0.5 * (grid.lower[a] + grid.upper(a)) } else { 0.0 });
    let radius = 0.25 * (0..n).map(|a| grid.upper(a) - grid.lower[a]).fold(f64::INFINITY, f64::min);
    let field = Field::from_primitive(grid.clone(), p, move |x: Vec3| {
        let y: Vec3 = std::array::from_fn(|a| (x[a] - centre[a]) / radius);
        let b = bump(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
        let u = std::array::from_fn(|a| if a < n { eps * b * (0.5 + 0.25 * a as f64) } else { 0.0 });
        PrimitiveState::new(1.0 + eps * b, u, 1.0 - 0.5 * eps * b, [0.0; 3], 0.0)
    })?;
    field.admissible_primitives(p)?;
    Ok(field)
}

/// Centred `∇θ` and `div u` of every cell; exterior neighbours take the
/// field's exterior state.
pub fn closure_gradients(f: &Field, p: &ModelParams) -> Result<Vec<(Vec3, f64)>> {
    let prims = f.primitives(p)?;
    let ext = f.exterior_primitive(p)?;
    let g = &f.grid;
    Ok((0..g.len())
        .map(|i| {
            let nb = |a, o| match g.neighbor(i, a, o) {
                Neighbor::Cell(j) => &prims[j],
                Neighbor::Exterior => &ext,
            };
            let mut grad = [0.0; 3];
            let mut div = 0.0;
            for a in 0..g.dim {
                let (m, pl) = (nb(a, -1), nb(a, 1));
                let h = 2.0 * g.dx[a];
                grad[a] = (pl.theta - m.theta) / h;
                div += (pl.u[a] - m.u[a]) / h;
            }
            (grad, div)
        })
        .collect())
}

/// Copies `(ρ, u, θ)` from `base` and sets `q = −κ∇θ`, `S2 = λ div u` with
/// centred differences.
pub fn well_prepared_data(base: &Field, p: &ModelParams) -> Result<Field> {
    let prims = base.primitives(p)?;
    let grads = closure_gradients(base, p)?;
    let mut out = base.clone();
    for (i, w) in prims.iter().enumerate() {
        let (g, div) = grads[i];
        let s = PrimitiveState::new(w.rho, w.u, w.theta, g.map(|c| -p.kappa * c), p.lambda * div);
        let c = crate::thermo::primitive_to_conserved(&s, p).map_err(|e| Error::Inadmissible {
            cell: i,
            reason: e.to_string(),
        })?;
        out.set_conserved(i, &c);
    }
    Ok(out)
}

/// Smooth periodic 1D base state for the relaxation sweep.
pub fn sweep_base_field(grid: &Grid, p: &ModelParams, amplitude: f64) -> Result<Field> {
    use std::f64::consts::PI;
    let (lo, len) = (grid.lower[0], grid.upper(0) - grid.lower[0]);
    Field::from_primitive(grid.clone(), p, move |x: Vec3| {
        let k = 2.0 * PI * (x[0] - lo) / len;
        PrimitiveState::new(
            1.0 + amplitude * k.sin(),
            [amplitude * (k + 1.0).sin(), 0.0, 0.0],
            1.0 + amplitude * k.cos(),
            [0.0; 3],
            0.0,
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub err_state: f64,
    pub err_flux: f64,
    pub steps: usize,
    /// Error message of an aborted run.
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub t_end: f64,
    pub reference_steps: usize,
    pub rows: Vec<SweepRow>,
    pub slope_state: Option<f64>,
    pub slope_flux: Option<f64>,
}

impl SweepTable {
    pub const COLUMNS: [&'static str; 7] =
        ["tau", "err_state", "err_flux", "slope_state", "slope_flux", "steps", "status"];

    pub fn to_csv(&self) -> String {
        let mut s = Self::COLUMNS.join(",");
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:e}"));
        for r in &self.rows {
            s.push_str(&format!(
                "{:e},{:e},{:e},{},{},{},{}\n",
                r.tau,
                r.err_state,
                r.err_flux,
                opt(self.slope_state),
                opt(self.slope_flux),
                r.steps,
                if r.failed.is_some() { "failed" } else { "ok" }
            ));
        }
        s
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Square root of the H³ difference sums of a list of scalar fields.
fn h3_norm(grid: &Grid, comps: &[Vec<f64>]) -> f64 {
    comps.iter().map(|c| derivative_sums(grid, c, 3).iter().sum::<f64>()).sum::<f64>().sqrt()
}

/// Domain length over the largest `|u| + c` of the base state, times 0.25.
pub fn sweep_end_time(base: &Field, p: &ModelParams) -> Result<f64> {
    let prims = base.primitives(p)?;
    let len = base.grid.upper(0) - base.grid.lower[0];
    let speed = crate::eigen::max_wave_speed(prims.iter(), &p.classical(), WaveSpeedMode::Frozen)?;
    Ok(0.25 * len / speed)
}

/// Runs the classical reference once and the relaxed solver for every τ
/// (with `τ1 = τ3 = τ`) from the same well-prepared data to `t_end`.
///
/// The state error is the H³ surrogate of `(ρ, u, θ)` differences; the flux
/// error that of `(q^τ + κ∇θ, S2^τ − λ div u)` with `θ, u` from the
/// classical reference.
pub fn relaxation_sweep(
    base: &Field,
    p: &ModelParams,
    cfg: &SolverConfig,
    taus: &[f64],
    t_end: Option<f64>,
) -> Result<SweepTable> {
    let t_end = match t_end {
        Some(t) => t,
        None => sweep_end_time(base, p)?,
    };
    let grid = &base.grid;
    // the energy of the same primitive data depends on τ, so the reference
    // starts from the τ = 0 conserved state
    let thermo0 = p.classical();
    let classical = Solver::classical(*p, cfg.clone())?;
    let mut reference = well_prepared_data(base, &thermo0)?;
    let reference_steps = classical.advance(&mut reference, t_end, |_, _| Ok(true))?;
    let ref_prims = reference.primitives(&thermo0)?;
    let ref_grads = closure_gradients(&reference, &thermo0)?;
    let n = grid.dim;
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let pt = ModelParams {
            tau1: tau,
            tau3: tau,
            ..*p
        };
        let run = Solver::new(pt, cfg.clone()).and_then(|s| {
            let mut f = well_prepared_data(base, &pt)?;
            let steps = s.advance(&mut f, t_end, |_, _| Ok(true))?;
            Ok((f.primitives(&pt)?, steps))
        });
        let row = match run {
            Ok((prims, steps)) => {
                let mut state = vec![
                    prims.iter().zip(&ref_prims).map(|(a, b)| a.rho - b.rho).collect::<Vec<_>>(),
                    prims.iter().zip(&ref_prims).map(|(a, b)| a.theta - b.theta).collect(),
                ];
                let mut flux = vec![prims
                    .iter()
                    .zip(&ref_grads)
                    .map(|(a, g)| a.s2 - p.lambda * g.1)
                    .collect::<Vec<_>>()];
                for k in 0..n {
                    state.push(prims.iter().zip(&ref_prims).map(|(a, b)| a.u[k] - b.u[k]).collect());
                    flux.push(prims.iter().zip(&ref_grads).map(|(a, g)| a.q[k] + p.kappa * g.0[k]).collect());
                }
                SweepRow {
                    tau,
                    err_state: h3_norm(grid, &state),
                    err_flux: h3_norm(grid, &flux),
                    steps,
                    failed: None,
                }
            }
            Err(e) => SweepRow {
                tau,
                err_state: f64::NAN,
                err_flux: f64::NAN,
                steps: 0,
                failed: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.failed.is_none()).collect();
    let tx: Vec<f64> = ok.iter().map(|r| r.tau).collect();
    let slope_state = loglog_slope(&tx, &ok.iter().map(|r| r.err_state).collect::<Vec<_>>());
    let slope_flux = loglog_slope(&tx, &ok.iter().map(|r| r.err_flux).collect::<Vec<_>>());
    Ok(SweepTable {
        t_end,
        reference_steps,
        rows,
        slope_state,
        slope_flux,
    })
}

pub const SWEEP_TAUS: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
