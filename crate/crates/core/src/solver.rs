//! Explicit finite-volume stepping on uniform grids.
//!
//! One step couples three pieces:
//!
//! * a Rusanov flux for `(ρ, ρu, 𝓔)` with effective pressure `p − S2`,
//!   plus upwind transport `u·∇` of `q` and `S2`;
//! * the stiff relaxation of `q` and `S2` toward `(−κ∇θ, λ div u)`,
//!   integrated exactly with `θ` and `u` frozen;
//! * optionally the viscous stress `S1 = μ(∇u + ∇uᵀ − (2/n) div u I)` as
//!   conservative face fluxes in momentum and energy.
//!
//! The classical reference replaces the relaxation by the projection
//! `q = −κ∇θ`, `S2 = λ div u`, which is the `τ → 0` limit of the same map, so
//! the two schemes differ by `O(τ)` on a fixed mesh.
//!
//! Every stage is data-parallel over cells; each cell computes both of its
//! face fluxes itself, so results do not depend on the number of threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{local_wave_speed, Direction, WaveSpeedMode};
use crate::entropy::Mat3;
use crate::error::{Error, Result};
use crate::field::{Field, Vars};
use crate::grid::{Boundary, Neighbor};
use crate::thermo::{pressure_unchecked, ModelParams, PrimitiveState, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    SspRk2,
    SspRk3,
    /// Forward Euler. Combined with Lie splitting the whole step has a
    /// stencil of one cell.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Splitting {
    /// relax(Δt/2), transport(Δt), relax(Δt/2)
    #[default]
    Strang,
    /// transport(Δt), then relax(Δt) with gradients of the step-start state
    Lie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxKind {
    #[default]
    Rusanov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxationKind {
    #[default]
    ExactSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViscousKind {
    #[default]
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub cfl: f64,
    pub flux: FluxKind,
    pub integrator: Integrator,
    pub splitting: Splitting,
    pub relaxation: RelaxationKind,
    pub viscous: ViscousKind,
    /// Speeds used for the Rusanov dissipation and the CFL condition. With
    /// `frozen`, an explicit diffusive limit on Δt is added.
    pub wave_speed: WaveSpeedMode,
    pub end_time: f64,
    /// Steps between recorded snapshots.
    pub output_every: usize,
    /// Abort when a state leaves the admissible box.
    pub enforce_box: bool,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cfl: 0.4,
            flux: FluxKind::Rusanov,
            integrator: Integrator::SspRk2,
            splitting: Splitting::Strang,
            relaxation: RelaxationKind::ExactSplit,
            viscous: ViscousKind::Explicit,
            wave_speed: WaveSpeedMode::Full,
            end_time: 1.0,
            output_every: 10,
            enforce_box: true,
            max_steps: 10_000_000,
        }
    }
}

impl SolverConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.cfl > 0.0 && self.cfl <= 0.9) {
            out.push(format!("solver.cfl: must lie in (0, 0.9], got {}", self.cfl));
        }
        if !(self.end_time >= 0.0 && self.end_time.is_finite()) {
            out.push(format!("solver.end_time: must be finite and >= 0, got {}", self.end_time));
        }
        if self.output_every == 0 {
            out.push("solver.output_every: must be at least 1".into());
        }
        if self.max_steps == 0 {
            out.push("solver.max_steps: must be at least 1".into());
        }
        out
    }
}

/// Which closure the stiff stage applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Closure {
    Relaxed,
    /// `q = −κ∇θ`, `S2 = λ div u` with the `τ = 0` constitutive laws.
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: f64,
    pub dt: f64,
    /// Largest wave speed of the step-start state.
    pub sigma: f64,
    /// Stable step of the step-start state.
    pub dt_limit: f64,
}

/// Per-stage cache: primitive states, directional speeds and (for viscous
/// runs) velocity gradients.
struct Stage<'a> {
    f: &'a Field,
    prims: Vec<PrimitiveState>,
    ext: PrimitiveState,
    speeds: Vec<Vec3>,
    ext_speeds: Vec3,
    grads: Vec<Mat3>,
}

impl Stage<'_> {
    #[inline]
    fn nb(&self, i: usize, axis: usize, off: isize) -> (&[f64], &PrimitiveState, f64) {
        match self.f.grid.neighbor(i, axis, off) {
            Neighbor::Cell(j) => (self.f.cell(j), &self.prims[j], self.speeds[j][axis]),
            Neighbor::Exterior => (&self.f.exterior, &self.ext, self.ext_speeds[axis]),
        }
    }

    #[inline]
    fn nb_prim(&self, i: usize, axis: usize, off: isize) -> &PrimitiveState {
        match self.f.grid.neighbor(i, axis, off) {
            Neighbor::Cell(j) => &self.prims[j],
            Neighbor::Exterior => &self.ext,
        }
    }

    #[inline]
    fn nb_grad(&self, i: usize, axis: usize, off: isize) -> Mat3 {
        match self.f.grid.neighbor(i, axis, off) {
            Neighbor::Cell(j) => self.grads[j],
            Neighbor::Exterior => [[0.0; 3]; 3],
        }
    }
}

/// Physical flux of `(ρ, ρu, 𝓔)` along `xi`, written to `out[..n + 2]`.
fn physical_flux(c: &[f64], w: &PrimitiveState, xi: &Vec3, n: usize, p: &ModelParams, out: &mut [f64; 5]) {
    let v = Vars { n };
    let peff = pressure_unchecked(w, p) - w.s2;
    let un: f64 = (0..n).map(|k| w.u[k] * xi[k]).sum();
    let qn: f64 = (0..n).map(|k| w.q[k] * xi[k]).sum();
    out[0] = (0..n).map(|k| c[v.mom(k)] * xi[k]).sum();
    for i in 0..n {
        out[1 + i] = c[v.mom(i)] * un + peff * xi[i];
    }
    out[n + 1] = un * (c[v.etot()] + peff) + qn;
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn rusanov(
    cl: &[f64],
    wl: &PrimitiveState,
    sl: f64,
    cr: &[f64],
    wr: &PrimitiveState,
    sr: f64,
    xi: &Vec3,
    n: usize,
    p: &ModelParams,
    out: &mut [f64; 5],
) {
    let mut fl = [0.0; 5];
    let mut fr = [0.0; 5];
    physical_flux(cl, wl, xi, n, p, &mut fl);
    physical_flux(cr, wr, xi, n, p, &mut fr);
    let s = sl.max(sr);
    for k in 0..n + 2 {
        out[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * s * (cr[k] - cl[k]);
    }
}

/// Rusanov flux of the conserved block between two cell states along `xi`.
///
/// Returns a vector of length `2n + 3` whose `q` and `S2` entries are zero:
/// those unknowns are transported non-conservatively.
pub fn conservative_flux(
    wl: &PrimitiveState,
    wr: &PrimitiveState,
    xi: &Direction,
    p: &ModelParams,
    mode: WaveSpeedMode,
) -> Result<Vec<f64>> {
    let n = xi.dim();
    let v = Vars { n };
    let mut cl = vec![0.0; v.len()];
    let mut cr = vec![0.0; v.len()];
    v.pack(&crate::thermo::primitive_to_conserved(wl, p)?, &mut cl);
    v.pack(&crate::thermo::primitive_to_conserved(wr, p)?, &mut cr);
    let sl = local_wave_speed(wl, xi.xi(), p, mode)?;
    let sr = local_wave_speed(wr, xi.xi(), p, mode)?;
    let mut f = [0.0; 5];
    rusanov(&cl, wl, sl, &cr, wr, sr, xi.xi(), n, p, &mut f);
    let mut out = vec![0.0; v.len()];
    out[..n + 2].copy_from_slice(&f[..n + 2]);
    Ok(out)
}

/// Exact flux `F(c)·ξ` of the conserved block, for consistency checks.
pub fn physical_conservative_flux(w: &PrimitiveState, xi: &Direction, p: &ModelParams) -> Result<Vec<f64>> {
    let n = xi.dim();
    let v = Vars { n };
    let mut c = vec![0.0; v.len()];
    v.pack(&crate::thermo::primitive_to_conserved(w, p)?, &mut c);
    let mut f = [0.0; 5];
    physical_flux(&c, w, xi.xi(), n, p, &mut f);
    let mut out = vec![0.0; v.len()];
    out[..n + 2].copy_from_slice(&f[..n + 2]);
    Ok(out)
}

fn axis_vec(a: usize) -> Vec3 {
    let mut x = [0.0; 3];
    x[a] = 1.0;
    x
}

pub struct Solver {
    params: ModelParams,
    thermo: ModelParams,
    cfg: SolverConfig,
    closure: Closure,
}

impl Solver {
    /// Solver for the relaxed system.
    pub fn new(params: ModelParams, cfg: SolverConfig) -> Result<Self> {
        Self::with_closure(params, cfg, Closure::Relaxed)
    }

    /// τ = 0 reference on the same mesh and integrator. Dissipation uses
    /// frozen speeds and the explicit diffusive step limit.
    pub fn classical(params: ModelParams, cfg: SolverConfig) -> Result<Self> {
        Self::with_closure(params, cfg, Closure::Classical)
    }

    pub fn with_closure(params: ModelParams, cfg: SolverConfig, closure: Closure) -> Result<Self> {
        params.validate()?;
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        let thermo = match closure {
            Closure::Relaxed => params,
            Closure::Classical => params.classical(),
        };
        Ok(Self {
            params,
            thermo,
            cfg,
            closure,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Constitutive constants used for θ recovery (τ = 0 for the reference).
    pub fn thermo_params(&self) -> &ModelParams {
        &self.thermo
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn closure(&self) -> Closure {
        self.closure
    }

    fn mode(&self) -> WaveSpeedMode {
        match self.closure {
            Closure::Relaxed => self.cfg.wave_speed,
            Closure::Classical => WaveSpeedMode::Frozen,
        }
    }

    fn speeds_of(&self, w: &PrimitiveState) -> Result<Vec3> {
        let mut s = [0.0; 3];
        for (a, sa) in s.iter_mut().enumerate().take(self.params.dim) {
            *sa = local_wave_speed(w, &axis_vec(a), &self.thermo, self.mode())?;
        }
        Ok(s)
    }

    /// Primitive states only; enough for the closure targets.
    fn prim_stage<'a>(&self, f: &'a Field) -> Result<Stage<'a>> {
        Ok(Stage {
            f,
            prims: f.primitives(&self.thermo)?,
            ext: f.exterior_primitive(&self.thermo)?,
            speeds: Vec::new(),
            ext_speeds: [0.0; 3],
            grads: Vec::new(),
        })
    }

    fn stage<'a>(&self, f: &'a Field) -> Result<Stage<'a>> {
        let Stage { prims, ext, .. } = self.prim_stage(f)?;
        let speeds: Vec<Result<Vec3>> = prims
            .par_iter()
            .enumerate()
            .map(|(i, w)| {
                self.speeds_of(w).map_err(|e| Error::Inadmissible {
                    cell: i,
                    reason: format!("{e}; state {w:?}"),
                })
            })
            .collect();
        let speeds = speeds.into_iter().collect::<Result<Vec<_>>>()?;
        let ext_speeds = self.speeds_of(&ext)?;
        let mut st = Stage {
            f,
            prims,
            ext,
            speeds,
            ext_speeds,
            grads: Vec::new(),
        };
        if self.params.mu > 0.0 {
            let grads = (0..f.grid.len()).into_par_iter().map(|i| velocity_gradient(&st, i)).collect();
            st.grads = grads;
        }
        Ok(st)
    }

    /// Stable step, largest wave speed and minimal density of `st`.
    fn limits(&self, st: &Stage) -> (f64, f64) {
        let g = &st.f.grid;
        let n = g.dim;
        let mut sigma = st.speeds.iter().flat_map(|s| s[..n].iter().copied()).fold(0.0, f64::max);
        let mut rho_min = st.prims.iter().map(|w| w.rho).fold(f64::INFINITY, f64::min);
        if g.boundary == Boundary::Constant {
            sigma = sigma.max(st.ext_speeds[..n].iter().copied().fold(0.0, f64::max));
            rho_min = rho_min.min(st.ext.rho);
        }
        let dx = g.min_dx();
        let mut dt = if sigma > 0.0 { self.cfg.cfl * dx / sigma } else { f64::INFINITY };
        if self.mode() == WaveSpeedMode::Frozen {
            let p = &self.params;
            let diff = 0.25 * dx * dx * (rho_min * p.cv / p.kappa).min(rho_min / p.lambda) / n as f64;
            dt = dt.min(diff);
        }
        if self.params.mu > 0.0 && n >= 2 {
            dt = dt.min(0.25 * dx * dx * rho_min.min(1.0) / (self.params.mu * n as f64));
        }
        (dt, sigma)
    }

    /// Stable time step at `f`.
    pub fn stable_dt(&self, f: &Field) -> Result<f64> {
        let st = self.stage(f)?;
        Ok(self.limits(&st).0)
    }

    /// Largest wave speed over the cells of `f` (and the exterior state).
    pub fn max_speed(&self, f: &Field) -> Result<f64> {
        let st = self.stage(f)?;
        Ok(self.limits(&st).1)
    }

    /// Transport increment `dU/dt` without the stiff closure terms.
    pub fn hyperbolic_rhs(&self, f: &Field) -> Result<Vec<f64>> {
        let st = self.stage(f)?;
        let nv = f.nvar();
        let mut out = vec![0.0; f.data.len()];
        out.par_chunks_mut(nv).enumerate().for_each(|(i, o)| self.hyperbolic_cell(&st, i, o));
        Ok(out)
    }

    /// Viscous increment `dU/dt`; zero when μ = 0.
    pub fn viscous_rhs(&self, f: &Field) -> Result<Vec<f64>> {
        let st = self.stage(f)?;
        let nv = f.nvar();
        let mut out = vec![0.0; f.data.len()];
        if self.params.mu > 0.0 {
            out.par_chunks_mut(nv).enumerate().for_each(|(i, o)| {
                o.fill(0.0);
                self.viscous_cell(&st, i, o)
            });
        }
        Ok(out)
    }

    fn hyperbolic_cell(&self, st: &Stage, i: usize, out: &mut [f64]) {
        let f = st.f;
        let n = f.grid.dim;
        let v = Vars { n };
        let c = f.cell(i);
        let w = &st.prims[i];
        let s_here = st.speeds[i];
        out.fill(0.0);
        let mut fl = [0.0; 5];
        let mut fr = [0.0; 5];
        for a in 0..n {
            let xi = axis_vec(a);
            let dx = f.grid.dx[a];
            let (cm, wm, sm) = st.nb(i, a, -1);
            let (cp, wp, sp) = st.nb(i, a, 1);
            rusanov(cm, wm, sm, c, w, s_here[a], &xi, n, &self.thermo, &mut fl);
            rusanov(c, w, s_here[a], cp, wp, sp, &xi, n, &self.thermo, &mut fr);
            for k in 0..n + 2 {
                out[k] -= (fr[k] - fl[k]) / dx;
            }
            let ua = w.u[a];
            let upwind = |k: usize| {
                if ua > 0.0 {
                    (c[k] - cm[k]) / dx
                } else {
                    (cp[k] - c[k]) / dx
                }
            };
            for j in 0..n {
                out[v.q(j)] -= ua * upwind(v.q(j));
            }
            out[v.s2()] -= ua * upwind(v.s2());
        }
    }

    fn viscous_cell(&self, st: &Stage, i: usize, out: &mut [f64]) {
        let g = &st.f.grid;
        let n = g.dim;
        let w = &st.prims[i];
        let gi = st.grads[i];
        let mut fl = [0.0; 5];
        let mut fr = [0.0; 5];
        for a in 0..n {
            let dx = g.dx[a];
            let wm = st.nb_prim(i, a, -1);
            let wp = st.nb_prim(i, a, 1);
            viscous_face(wm, &st.nb_grad(i, a, -1), w, &gi, a, dx, n, self.params.mu, &mut fl);
            viscous_face(w, &gi, wp, &st.nb_grad(i, a, 1), a, dx, n, self.params.mu, &mut fr);
            for k in 0..n + 2 {
                out[k] += (fr[k] - fl[k]) / dx;
            }
        }
    }

    fn rhs(&self, st: &Stage) -> Vec<f64> {
        let f = st.f;
        let nv = f.nvar();
        let mut out = vec![0.0; f.data.len()];
        let visc = self.params.mu > 0.0 && f.grid.dim >= 2;
        out.par_chunks_mut(nv).enumerate().for_each(|(i, o)| {
            self.hyperbolic_cell(st, i, o);
            if visc {
                self.viscous_cell(st, i, o);
            }
        });
        out
    }

    /// Closure targets `(−κ∇θ, λ div u)` per cell from centred differences.
    fn targets(&self, st: &Stage) -> Vec<(Vec3, f64)> {
        let g = &st.f.grid;
        let n = g.dim;
        let (kappa, lambda) = (self.params.kappa, self.params.lambda);
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut q = [0.0; 3];
                let mut div = 0.0;
                for a in 0..n {
                    let wm = st.nb_prim(i, a, -1);
                    let wp = st.nb_prim(i, a, 1);
                    let h = 2.0 * g.dx[a];
                    q[a] = -kappa * (wp.theta - wm.theta) / h;
                    div += (wp.u[a] - wm.u[a]) / h;
                }
                (q, lambda * div)
            })
            .collect()
    }

    /// Moves `q`, `S2` of `f` toward `targets` over `h` (projection for the
    /// classical closure).
    fn relax_into(&self, f: &mut Field, targets: &[(Vec3, f64)], h: f64) {
        let n = f.grid.dim;
        let v = Vars { n };
        let nv = v.len();
        let (w1, w3) = match self.closure {
            Closure::Relaxed => (
                -(-h / self.params.tau1).exp_m1(),
                -(-h / self.params.tau3).exp_m1(),
            ),
            Closure::Classical => (1.0, 1.0),
        };
        f.data.par_chunks_mut(nv).zip(targets.par_iter()).for_each(|(c, (qt, st))| {
            for j in 0..n {
                let k = v.q(j);
                c[k] = if w1 == 1.0 { qt[j] } else { c[k] * (1.0 - w1) + qt[j] * w1 };
            }
            let k = v.s2();
            c[k] = if w3 == 1.0 { *st } else { c[k] * (1.0 - w3) + st * w3 };
        });
    }

    /// Exact relaxation over `dt` with `θ` and `u` frozen at their values in
    /// `f` (projection for the classical closure).
    pub fn relaxation_substep(&self, f: &Field, dt: f64) -> Result<Field> {
        let st = self.prim_stage(f)?;
        let targets = self.targets(&st);
        let mut out = f.clone();
        self.relax_into(&mut out, &targets, dt);
        Ok(out)
    }

    fn axpy(out: &mut Field, a: f64, x: &Field, b: f64, y: &Field, c: f64, rhs: &[f64]) {
        out.data
            .par_iter_mut()
            .zip(x.data.par_iter().zip(y.data.par_iter().zip(rhs.par_iter())))
            .for_each(|(o, (xv, (yv, r)))| *o = a * xv + b * (yv + c * r));
    }

    /// One integrator step of the non-stiff part, starting from a prepared
    /// stage of `f`.
    fn transport(&self, f: &Field, st: Stage, dt: f64) -> Result<Field> {
        let l0 = self.rhs(&st);
        drop(st);
        let mut u1 = f.clone();
        Self::axpy(&mut u1, 0.0, f, 1.0, f, dt, &l0);
        if self.cfg.integrator == Integrator::Euler {
            return Ok(u1);
        }
        let l1 = self.rhs(&self.stage(&u1)?);
        let mut u2 = f.clone();
        match self.cfg.integrator {
            Integrator::SspRk2 => {
                Self::axpy(&mut u2, 0.5, f, 0.5, &u1, dt, &l1);
                Ok(u2)
            }
            Integrator::SspRk3 => {
                Self::axpy(&mut u2, 0.75, f, 0.25, &u1, dt, &l1);
                let l2 = self.rhs(&self.stage(&u2)?);
                let mut u3 = f.clone();
                Self::axpy(&mut u3, 1.0 / 3.0, f, 2.0 / 3.0, &u2, dt, &l2);
                Ok(u3)
            }
            Integrator::Euler => unreachable!(),
        }
    }

    /// Advances by the stable step.
    pub fn step(&self, f: &Field) -> Result<(Field, StepInfo)> {
        let st = self.checked_stage(f)?;
        let (limit, sigma) = self.limits(&st);
        self.step_stage(f, st, limit, limit, sigma)
    }

    /// Advances by `dt`, rejecting steps above the stability limit.
    pub fn step_with_dt(&self, f: &Field, dt: f64) -> Result<(Field, StepInfo)> {
        let st = self.checked_stage(f)?;
        let (limit, sigma) = self.limits(&st);
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(Error::StepRejected { dt, limit });
        }
        self.step_stage(f, st, dt, limit, sigma)
    }

    fn checked_stage<'a>(&self, f: &'a Field) -> Result<Stage<'a>> {
        let st = self.stage(f)?;
        if self.cfg.enforce_box && self.closure == Closure::Relaxed {
            let bad = st
                .prims
                .par_iter()
                .enumerate()
                .filter_map(|(i, s)| self.params.check_admissible(s).err().map(|r| (i, format!("{r}; state {s:?}"))))
                .min_by_key(|(i, _)| *i);
            if let Some((cell, reason)) = bad {
                return Err(Error::Inadmissible { cell, reason });
            }
        }
        Ok(st)
    }

    fn step_stage(&self, f: &Field, st: Stage, dt: f64, limit: f64, sigma: f64) -> Result<(Field, StepInfo)> {
        let mut out = match self.cfg.splitting {
            Splitting::Strang => {
                let targets = self.targets(&st);
                drop(st);
                let mut half = f.clone();
                self.relax_into(&mut half, &targets, 0.5 * dt);
                let st = self.stage(&half)?;
                let mut u = self.transport(&half, st, dt)?;
                let st = self.prim_stage(&u)?;
                let targets = self.targets(&st);
                drop(st);
                self.relax_into(&mut u, &targets, 0.5 * dt);
                u
            }
            Splitting::Lie => {
                let targets = self.targets(&st);
                let mut u = self.transport(f, st, dt)?;
                self.relax_into(&mut u, &targets, dt);
                u
            }
        };
        out.t = f.t + dt;
        Ok((
            out,
            StepInfo {
                t: f.t + dt,
                dt,
                sigma,
                dt_limit: limit,
            },
        ))
    }

    /// Steps until `t_end` (the last step is shortened to land on it),
    /// calling `observe` after every step. Returns the number of steps.
    pub fn advance<F>(&self, f: &mut Field, t_end: f64, mut observe: F) -> Result<usize>
    where
        F: FnMut(&Field, &StepInfo) -> Result<bool>,
    {
        let mut steps = 0;
        while f.t < t_end * (1.0 - 1e-14) {
            if steps >= self.cfg.max_steps {
                return Err(Error::Params(format!(
                    "max_steps = {} reached at t = {}",
                    self.cfg.max_steps, f.t
                )));
            }
            let st = self.checked_stage(f)?;
            let (limit, sigma) = self.limits(&st);
            let dt = limit.min(t_end - f.t);
            let (next, info) = self.step_stage(f, st, dt, limit, sigma)?;
            *f = next;
            if t_end.is_finite() && (t_end - f.t).abs() <= 1e-14 * t_end.abs() {
                f.t = t_end;
            }
            steps += 1;
            if !observe(f, &info)? {
                break;
            }
        }
        Ok(steps)
    }
}

/// Centred velocity gradient `∂u_i/∂x_j` of cell `i`.
fn velocity_gradient(st: &Stage, i: usize) -> Mat3 {
    let g = &st.f.grid;
    let mut m = [[0.0; 3]; 3];
    for j in 0..g.dim {
        let wm = st.nb_prim(i, j, -1);
        let wp = st.nb_prim(i, j, 1);
        for (k, row) in m.iter_mut().enumerate().take(g.dim) {
            row[j] = (wp.u[k] - wm.u[k]) / (2.0 * g.dx[j]);
        }
    }
    m
}

/// Viscous flux through the face between `wl` and `wr` normal to `a`: the
/// normal derivative is the one-sided difference across the face, the
/// tangential ones average the cell gradients.
#[allow(clippy::too_many_arguments)]
fn viscous_face(
    wl: &PrimitiveState,
    gl: &Mat3,
    wr: &PrimitiveState,
    gr: &Mat3,
    a: usize,
    dx: f64,
    n: usize,
    mu: f64,
    out: &mut [f64; 5],
) {
    let mut g = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = if j == a {
                (wr.u[i] - wl.u[i]) / dx
            } else {
                0.5 * (gl[i][j] + gr[i][j])
            };
        }
    }
    let div: f64 = (0..n).map(|k| g[k][k]).sum();
    out[0] = 0.0;
    let mut work = 0.0;
    for i in 0..n {
        let mut s = g[i][a] + g[a][i];
        if i == a {
            s -= 2.0 / n as f64 * div;
        }
        s *= mu;
        out[1 + i] = s;
        work += s * 0.5 * (wl.u[i] + wr.u[i]);
    }
    out[n + 1] = work;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    fn periodic_1d(cells: usize, len: f64) -> Grid {
        Grid::new(1, &[cells], &[0.0], &[len], Boundary::Periodic).unwrap()
    }

    fn smooth_1d(p: &ModelParams, cells: usize) -> Field {
        Field::from_primitive(periodic_1d(cells, 1.0), p, |x| {
            let s = (2.0 * PI * x[0]).sin();
            let c = (2.0 * PI * x[0]).cos();
            PrimitiveState::new(1.0 + 0.1 * s, [0.2 * c, 0.0, 0.0], 1.0 + 0.1 * c, [0.01 * s, 0.0, 0.0], 0.01 * c)
        })
        .unwrap()
    }

    /// Sub-cell position of the largest value of `g` (parabola through the
    /// maximum and its neighbours).
    fn peak_position(g: &[f64], dx: f64) -> f64 {
        let (i, _) = g.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        let (a, b, c) = (g[i - 1], g[i], g[i + 1]);
        let shift = 0.5 * (a - c) / (a - 2.0 * b + c);
        (i as f64 + 0.5 + shift) * dx
    }

    #[test]
    fn acoustic_pulse_moves_at_fastest_root() {
        use crate::eigen::{eigen_report, flux_jacobian};
        // weak relaxation: κ/τ1 and λ/τ3 are small, the fast and slow roots
        // are well apart
        let mut p = ModelParams {
            tau1: 10.0,
            tau3: 10.0,
            mu: 0.0,
            ..ModelParams::unit(1)
        };
        p.admissible_box.q_max = 0.01;
        p.admissible_box.s2_max = 0.01;
        let rest = PrimitiveState::new(1.0, [0.0; 3], 1.0, [0.0; 3], 0.0);
        let xi = Direction::axis(0, 1);
        let roots = eigen_report(&rest, &xi, &p).unwrap().quartic_roots;
        // eigenvalues are u·ξ − z, so the fastest right-moving wave is −z₁
        let speed = -roots[0];
        // right eigenvector from the null space of A − speed·I
        let a = flux_jacobian(&rest, &xi, &p).unwrap();
        let svd = (a - nalgebra::DMatrix::identity(5, 5) * speed).svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut r: Vec<f64> = vt.row(4).iter().copied().collect();
        if r[0] < 0.0 {
            r.iter_mut().for_each(|x| *x = -*x);
        }
        let r: Vec<f64> = r.iter().map(|x| x / r[0]).collect();

        let cells = 1024;
        let (x0, width, eps) = (0.25, 0.02, 1e-3);
        let f0 = Field::from_primitive(periodic_1d(cells, 1.0), &p, |x| {
            let g = eps * (-((x[0] - x0) / width).powi(2)).exp();
            PrimitiveState::new(1.0 + g * r[0], [g * r[1], 0.0, 0.0], 1.0 + g * r[2], [g * r[3], 0.0, 0.0], g * r[4])
        })
        .unwrap();
        let solver = Solver::new(p, SolverConfig::default()).unwrap();
        let t_end = 0.3;
        let mut f = f0.clone();
        solver.advance(&mut f, t_end, |_, _| Ok(true)).unwrap();
        let drho = |f: &Field| -> Vec<f64> { (0..cells).map(|i| f.cell(i)[0] - 1.0).collect() };
        let dx = 1.0 / cells as f64;
        let measured = (peak_position(&drho(&f), dx) - peak_position(&drho(&f0), dx)) / t_end;
        assert!(
            ((measured - speed) / speed).abs() < 0.02,
            "pulse speed {measured} vs fastest root {speed}"
        );
    }

    #[test]
    fn flux_consistency() {
        let p = ModelParams::unit(2);
        let w = PrimitiveState::new(1.2, [0.3, -0.1, 0.0], 1.1, [0.02, 0.01, 0.0], -0.03);
        let xi = Direction::normalized([1.0, 2.0, 0.0], 2).unwrap();
        let num = conservative_flux(&w, &w, &xi, &p, WaveSpeedMode::Full).unwrap();
        let phys = physical_conservative_flux(&w, &xi, &p).unwrap();
        assert_eq!(num, phys);
    }

    #[test]
    fn rusanov_dissipation_bound() {
        let p = ModelParams::unit(1);
        let xi = Direction::axis(0, 1);
        let wl = PrimitiveState::new(1.0, [0.0; 3], 1.0, [0.0; 3], 0.0);
        let wr = PrimitiveState::new(1.01, [0.01, 0.0, 0.0], 1.02, [0.001, 0.0, 0.0], 0.002);
        let num = conservative_flux(&wl, &wr, &xi, &p, WaveSpeedMode::Full).unwrap();
        let fl = physical_conservative_flux(&wl, &xi, &p).unwrap();
        let fr = physical_conservative_flux(&wr, &xi, &p).unwrap();
        let v = Vars { n: 1 };
        let mut cl = vec![0.0; 5];
        let mut cr = vec![0.0; 5];
        v.pack(&crate::thermo::primitive_to_conserved(&wl, &p).unwrap(), &mut cl);
        v.pack(&crate::thermo::primitive_to_conserved(&wr, &p).unwrap(), &mut cr);
        let s = local_wave_speed(&wl, xi.xi(), &p, WaveSpeedMode::Full)
            .unwrap()
            .max(local_wave_speed(&wr, xi.xi(), &p, WaveSpeedMode::Full).unwrap());
        for k in 0..3 {
            let mid = 0.5 * (fl[k] + fr[k]);
            assert!((num[k] - mid).abs() <= 0.5 * s * (cr[k] - cl[k]).abs() * (1.0 + 1e-14));
        }
    }

    #[test]
    fn uniform_field_has_zero_increment() {
        let p = ModelParams::unit(2);
        let g = Grid::new(2, &[8, 8], &[0.0, 0.0], &[1.0, 1.0], Boundary::Periodic).unwrap();
        let f = Field::from_primitive(g, &p, |_| {
            PrimitiveState::new(1.3, [0.4, -0.2, 0.0], 1.2, [0.05, 0.01, 0.0], 0.02)
        })
        .unwrap();
        let s = Solver::new(p, SolverConfig::default()).unwrap();
        assert!(s.hyperbolic_rhs(&f).unwrap().iter().all(|x| *x == 0.0));
        assert!(s.viscous_rhs(&f).unwrap().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn increments_telescope() {
        let p = ModelParams::unit(1);
        let f = smooth_1d(&p, 64);
        let s = Solver::new(p, SolverConfig::default()).unwrap();
        let r = s.hyperbolic_rhs(&f).unwrap();
        for k in 0..3 {
            let tot: f64 = r.chunks(5).map(|c| c[k]).sum();
            assert!(tot.abs() < 1e-13, "component {k}: {tot}");
        }
    }

    #[test]
    fn relaxation_examples() {
        let p = ModelParams::unit(1);
        let f = Field::from_primitive(periodic_1d(8, 1.0), &p, |_| {
            PrimitiveState::new(1.0, [0.0; 3], 1.0, [1.0, 0.0, 0.0], 0.0)
        })
        .unwrap();
        let s = Solver::new(p, SolverConfig::default()).unwrap();
        let g = s.relaxation_substep(&f, 2f64.ln()).unwrap();
        for i in 0..8 {
            assert!((g.cell(i)[3] - 0.5).abs() < 1e-15);
        }
        // decay without gradients
        let g = s.relaxation_substep(&f, 0.3).unwrap();
        assert!((g.cell(3)[3] - (-0.3f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn stiff_limit_recovers_fourier_law() {
        let p = ModelParams::unit(1);
        let s = Solver::new(p, SolverConfig::default()).unwrap();
        let c = Solver::classical(p, SolverConfig::default()).unwrap();
        let f = Field::from_primitive(periodic_1d(32, 1.0), &p.classical(), |x| {
            PrimitiveState::new(1.0, [0.0; 3], 1.0 + 0.1 * (2.0 * PI * x[0]).sin(), [0.0; 3], 0.0)
        })
        .unwrap();
        let g = s.relaxation_substep(&f, 1e3).unwrap();
        // with q = 0, S2 = 0 both closures recover the same θ
        let prims = f.primitives(&p).unwrap();
        for i in 0..32 {
            let tm = prims[(i + 31) % 32].theta;
            let tp = prims[(i + 1) % 32].theta;
            let target = -(tp - tm) / (2.0 / 32.0);
            assert_eq!(g.cell(i)[3], target);
        }
        // the projection is the same map
        let h = c.relaxation_substep(&f, 1e-3).unwrap();
        for i in 0..32 {
            assert_eq!(h.cell(i)[3], g.cell(i)[3]);
        }
    }

    #[test]
    fn relaxation_contracts() {
        let p = ModelParams::unit(1);
        let f = smooth_1d(&p, 32);
        let s = Solver::new(p, SolverConfig::default()).unwrap();
        let st = s.stage(&f).unwrap();
        let t = s.targets(&st);
        let g = s.relaxation_substep(&f, 0.1).unwrap();
        for i in 0..32 {
            let before = (f.cell(i)[3] - t[i].0[0]).abs() + (f.cell(i)[4] - t[i].1).abs();
            let after = (g.cell(i)[3] - t[i].0[0]).abs() + (g.cell(i)[4] - t[i].1).abs();
            assert!(after <= before * (-0.1f64).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn linear_shear_has_no_viscous_increment() {
        let p = ModelParams::unit(2);
        let g = Grid::new(2, &[12, 12], &[0.0, 0.0], &[1.0, 1.0], Boundary::Constant).unwrap();
        let f = Field::from_primitive(g.clone(), &p, |x| {
            PrimitiveState::new(1.0, [0.1 * x[1], 0.0, 0.0], 1.0, [0.0; 3], 0.0)
        })
        .unwrap();
        let s = Solver::new(p, SolverConfig::default()).unwrap();
        let r = s.viscous_rhs(&f).unwrap();
        for i in 0..g.len() {
            let c = g.coords(i);
            if (2..10).contains(&c[0]) && (2..10).contains(&c[1]) {
                for k in 1..3 {
                    assert!(r[i * 7 + k].abs() < 1e-13, "{}", r[i * 7 + k]);
                }
            }
        }
    }

    #[test]
    fn viscous_operator_second_order() {
        // u = (ε sin 2πy, ε sin 2πx): div u = 0, so the increment is μΔu
        let p = ModelParams {
            mu: 0.7,
            ..ModelParams::unit(2)
        };
        let err = |n: usize| {
            let g = Grid::new(2, &[n, n], &[0.0, 0.0], &[1.0, 1.0], Boundary::Periodic).unwrap();
            let eps = 1e-3;
            let f = Field::from_primitive(g.clone(), &p, |x| {
                let u = [eps * (2.0 * PI * x[1]).sin(), eps * (2.0 * PI * x[0]).sin(), 0.0];
                PrimitiveState::new(1.0, u, 1.0, [0.0; 3], 0.0)
            })
            .unwrap();
            let s = Solver::new(p, SolverConfig::default()).unwrap();
            let r = s.viscous_rhs(&f).unwrap();
            (0..g.len())
                .map(|i| {
                    let x = g.center(i);
                    let exact = -p.mu * 4.0 * PI * PI * eps * (2.0 * PI * x[1]).sin();
                    (r[i * 7 + 1] - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(16), err(32));
        let order = (e1 / e2).log2();
        assert!(order > 1.9, "order {order}");
    }

    #[test]
    fn one_dimensional_viscous_operator_vanishes() {
        let p = ModelParams::unit(1);
        let f = smooth_1d(&p, 16);
        let s = Solver::new(p, SolverConfig::default()).unwrap();
        let r = s.viscous_rhs(&f).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        for closure in [Closure::Relaxed, Closure::Classical] {
            for splitting in [Splitting::Strang, Splitting::Lie] {
                let p = ModelParams::unit(2);
                let g = Grid::new(2, &[8, 8], &[0.0, 0.0], &[1.0, 1.0], Boundary::Constant).unwrap();
                let f = Field::equilibrium(g, &p).unwrap();
                let cfg = SolverConfig {
                    splitting,
                    ..Default::default()
                };
                let s = Solver::with_closure(p, cfg, closure).unwrap();
                let (g, info) = s.step(&f).unwrap();
                assert_eq!(g.data, f.data);
                assert!(info.dt > 0.0);
            }
        }
    }

    #[test]
    fn oversized_step_rejected() {
        let p = ModelParams::unit(1);
        let f = smooth_1d(&p, 16);
        let s = Solver::new(p, SolverConfig::default()).unwrap();
        let lim = s.stable_dt(&f).unwrap();
        assert!(matches!(s.step_with_dt(&f, 2.0 * lim), Err(Error::StepRejected { .. })));
        assert!(s.step_with_dt(&f, lim).is_ok());
    }

    #[test]
    fn bit_identical_across_thread_counts() {
        let p = ModelParams::unit(2);
        let g = Grid::new(2, &[16, 16], &[0.0, 0.0], &[1.0, 1.0], Boundary::Periodic).unwrap();
        let f = Field::from_primitive(g, &p, |x| {
            let s = (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos();
            PrimitiveState::new(1.0 + 0.1 * s, [0.1 * s, -0.05 * s, 0.0], 1.0 - 0.05 * s, [0.01 * s, 0.0, 0.0], 0.0)
        })
        .unwrap();
        let s = Solver::new(p, SolverConfig::default()).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut f = f.clone();
                for _ in 0..5 {
                    f = s.step(&f).unwrap().0;
                }
                f
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn classical_heat_kernel_decay() {
        // nearly incompressible gas (R small) with a frozen background:
        // a temperature mode decays at rate κk²/(ρCv)
        let p = ModelParams {
            r_gas: 1e-4,
            kappa: 0.05,
            lambda: 0.05,
            mu: 0.0,
            admissible_box: crate::thermo::AdmissibleBox {
                q_max: 0.01,
                s2_max: 0.001,
                ..Default::default()
            },
            ..ModelParams::unit(1)
        };
        let cells = 512;
        let eps = 1e-3;
        let k = 2.0 * PI;
        let f0 = Field::from_primitive(periodic_1d(cells, 1.0), &p.classical(), |x| {
            PrimitiveState::new(1.0, [0.0; 3], 1.0 + eps * (k * x[0]).cos(), [0.0; 3], 0.0)
        })
        .unwrap();
        let s = Solver::classical(p, SolverConfig::default()).unwrap();
        let mode = |f: &Field| {
            let prims = f.primitives(s.thermo_params()).unwrap();
            let g = &f.grid;
            2.0 * (0..g.len()).map(|i| (prims[i].theta - 1.0) * (k * g.center(i)[0]).cos()).sum::<f64>() / g.len() as f64
        };
        let mut f = f0.clone();
        // about e^{-1/2} decay
        let t_end = 0.25;
        s.advance(&mut f, t_end, |_, _| Ok(true)).unwrap();
        let rate = -(mode(&f) / mode(&f0)).ln() / t_end;
        let expect = p.kappa * k * k / p.cv;
        assert!((rate / expect - 1.0).abs() < 0.03, "rate {rate} vs {expect}");
    }
}
