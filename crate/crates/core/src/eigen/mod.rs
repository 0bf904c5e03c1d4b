//! Characteristic structure of the relaxed system in a direction ξ.
//!
//! Unknowns are ordered `(ρ, u_1..u_n, θ, q_1..q_n, S2)`, so the symbol
//! `A(ξ) = Σ_j A_j ξ_j` is `(2n+3) × (2n+3)`. Its characteristic polynomial
//! factors as `(u·ξ − Λ)^{2n−1} g(u·ξ − Λ)` with a quartic `g`.

mod kawashima;
mod quartic;
mod survey;

pub use kawashima::{kawashima_check, CompensatorReport, KawashimaOptions};
pub use quartic::{extreme_real_roots, solve_quartic, Quartic, BIQUADRATIC_TOL};
pub use survey::{hyperbolicity_survey, sample_direction, sample_state, SurveyOptions, SurveyReport};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermo::{dot, pressure_partials, ModelParams, Partials, PrimitiveState, Vec3};

/// Relative gap below which two quartic roots count as repeated.
pub const DISTINCT_TOL: f64 = 1e-8;

/// Unit direction in `R^dim`, padded with zeros to three components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    xi: Vec3,
    dim: usize,
}

impl Direction {
    /// Accepts `xi` only if it is a unit vector to 1e-14 and has no
    /// components beyond `dim`.
    pub fn new(xi: Vec3, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Params(format!("dim: expected 1, 2 or 3, got {dim}")));
        }
        if xi[dim..].iter().any(|&c| c != 0.0) {
            return Err(Error::Params(format!(
                "direction {xi:?} has components beyond dimension {dim}"
            )));
        }
        let norm = dot(&xi, &xi).sqrt();
        if (norm - 1.0).abs() > 1e-14 {
            return Err(Error::Params(format!("direction must be a unit vector, |xi| = {norm}")));
        }
        Ok(Self { xi, dim })
    }

    /// Normalizes a nonzero vector.
    pub fn normalized(v: Vec3, dim: usize) -> Result<Self> {
        let mut xi = [0.0; 3];
        xi[..dim].copy_from_slice(&v[..dim]);
        let norm = dot(&xi, &xi).sqrt();
        if !(norm > 0.0) {
            return Err(Error::Params("direction must be nonzero".into()));
        }
        Self::new(xi.map(|c| c / norm), dim)
    }

    /// The k-th coordinate axis.
    pub fn axis(k: usize, dim: usize) -> Self {
        assert!(k < dim && dim <= 3);
        let mut xi = [0.0; 3];
        xi[k] = 1.0;
        Self { xi, dim }
    }

    pub fn xi(&self) -> &Vec3 {
        &self.xi
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Orthonormal basis of the complement of ξ (n − 1 vectors).
    pub fn tangents(&self) -> Vec<Vec3> {
        let x = self.xi;
        match self.dim {
            1 => vec![],
            2 => vec![[-x[1], x[0], 0.0]],
            _ => {
                // Gram-Schmidt on the axis least aligned with ξ
                let k = (0..3)
                    .min_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()))
                    .unwrap();
                let mut e = [0.0; 3];
                e[k] = 1.0;
                let d = dot(&e, &x);
                let mut t1 = [e[0] - d * x[0], e[1] - d * x[1], e[2] - d * x[2]];
                let n1 = dot(&t1, &t1).sqrt();
                t1 = t1.map(|c| c / n1);
                let t2 = [
                    x[1] * t1[2] - x[2] * t1[1],
                    x[2] * t1[0] - x[0] * t1[2],
                    x[0] * t1[1] - x[1] * t1[0],
                ];
                vec![t1, t2]
            }
        }
    }
}

/// Index helpers for the `(ρ, u, θ, q, S2)` ordering.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n: usize,
}

impl Layout {
    pub const RHO: usize = 0;
    pub fn u(&self, i: usize) -> usize {
        1 + i
    }
    pub fn theta(&self) -> usize {
        self.n + 1
    }
    pub fn q(&self, i: usize) -> usize {
        self.n + 2 + i
    }
    pub fn s2(&self) -> usize {
        2 * self.n + 2
    }
    pub fn size(&self) -> usize {
        2 * self.n + 3
    }
}

fn checked_partials(s: &PrimitiveState, p: &ModelParams) -> Result<Partials> {
    let d = pressure_partials(s, p)?;
    if !(d.e_theta > 0.0) {
        return Err(Error::Domain {
            what: "e_theta",
            value: d.e_theta,
        });
    }
    Ok(d)
}

/// The symbol `A(ξ)` of the first-order quasilinear form.
pub fn flux_jacobian(s: &PrimitiveState, xi: &Direction, p: &ModelParams) -> Result<DMatrix<f64>> {
    let d = checked_partials(s, p)?;
    let n = xi.dim;
    let l = Layout { n };
    let x = xi.xi;
    let un = dot(&s.u, &x);
    let qn = dot(&s.q, &x);
    let rho = s.rho;
    let th = s.theta;
    let mut a = DMatrix::zeros(l.size(), l.size());

    a[(Layout::RHO, Layout::RHO)] = un;
    for j in 0..n {
        a[(Layout::RHO, l.u(j))] = rho * x[j];
    }
    for i in 0..n {
        let r = l.u(i);
        a[(r, Layout::RHO)] = d.p_rho / rho * x[i];
        a[(r, r)] = un;
        a[(r, l.theta())] = d.p_theta / rho * x[i];
        for j in 0..n {
            a[(r, l.q(j))] = d.p_q[i] * x[j] / rho;
        }
        a[(r, l.s2())] = (d.p_s2 - 1.0) / rho * x[i];
    }
    let t = l.theta();
    for j in 0..n {
        a[(t, l.u(j))] = th * d.p_theta / (rho * d.e_theta) * x[j];
        a[(t, l.q(j))] = x[j];
    }
    a[(t, t)] = un - 2.0 * qn / (rho * th * d.e_theta);
    for i in 0..n {
        let r = l.q(i);
        a[(r, t)] = p.kappa / p.tau1 * x[i];
        a[(r, r)] = un;
    }
    let r = l.s2();
    for j in 0..n {
        a[(r, l.u(j))] = -p.lambda / p.tau3 * x[j];
    }
    a[(r, r)] = un;
    Ok(a)
}

/// `λ(1 − p_S2)/(ρ τ3) + p_ρ`, the square of the μ± points.
fn mu_sq(s: &PrimitiveState, d: &Partials, p: &ModelParams) -> f64 {
    p.lambda * (1.0 - d.p_s2) / (s.rho * p.tau3) + d.p_rho
}

fn quartic_from(s: &PrimitiveState, d: &Partials, x: &Vec3, p: &ModelParams) -> Quartic {
    let rho = s.rho;
    let th = s.theta;
    let qn = dot(&s.q, x);
    let pqn = dot(&d.p_q, x);
    let a = mu_sq(s, d, p);
    let k = p.kappa / p.tau1;
    let w = 2.0 * qn / (rho * th * d.e_theta);
    Quartic {
        c3: -w,
        c2: -(k + th * d.p_theta * d.p_theta / (rho * rho * d.e_theta) + a),
        c1: k * th * d.p_theta * pqn / (rho * rho * d.e_theta) + a * w,
        c0: a * k,
    }
}

/// Same quartic with the relaxation couplings `κ/τ1` and `λ/τ3` switched
/// off; its roots are the transport-acoustic speeds that remain bounded as
/// the relaxation times go to zero.
fn frozen_quartic_from(s: &PrimitiveState, d: &Partials, x: &Vec3) -> Quartic {
    let rho = s.rho;
    let th = s.theta;
    let w = 2.0 * dot(&s.q, x) / (rho * th * d.e_theta);
    Quartic {
        c3: -w,
        c2: -(th * d.p_theta * d.p_theta / (rho * rho * d.e_theta) + d.p_rho),
        c1: d.p_rho * w,
        c0: 0.0,
    }
}

/// Coefficients of `g` at state `s` in direction `xi`.
pub fn quartic_g(s: &PrimitiveState, xi: &Direction, p: &ModelParams) -> Result<Quartic> {
    let d = checked_partials(s, p)?;
    Ok(quartic_from(s, &d, &xi.xi, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    /// Real parts of the quartic roots, ascending.
    pub quartic_roots: [f64; 4],
    pub quartic_roots_imag: [f64; 4],
    /// All `2n + 3` eigenvalues (real parts), ascending.
    pub eigenvalues: Vec<f64>,
    pub eigenvector_count: usize,
    pub max_speed: f64,
    pub all_real: bool,
    pub distinct: bool,
    pub sign_split: bool,
    pub hyperbolic: bool,
    pub g_at_zero: f64,
    pub g_at_mu_pm: [f64; 2],
}

fn real_root_tol(roots: &[Complex64; 4]) -> f64 {
    let scale = roots.iter().map(|z| z.norm()).fold(1.0, f64::max);
    1e-9 * scale
}

/// Eigen-analysis of `A(ξ)` at `s`.
pub fn eigen_report(s: &PrimitiveState, xi: &Direction, p: &ModelParams) -> Result<EigenReport> {
    let d = checked_partials(s, p)?;
    let g = quartic_from(s, &d, &xi.xi, p);
    let roots = solve_quartic(&g);
    let tol = real_root_tol(&roots);
    let all_real = roots.iter().all(|z| z.im.abs() <= tol);
    let re = roots.map(|z| z.re);
    let scale = re.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let distinct = all_real && re.windows(2).all(|w| w[1] - w[0] > DISTINCT_TOL * scale);
    let sign_split = all_real && re[1] < 0.0 && re[2] > 0.0;

    let un = dot(&s.u, &xi.xi);
    let n = xi.dim;
    let mut eigenvalues: Vec<f64> = std::iter::repeat_n(un, 2 * n - 1)
        .chain(re.iter().map(|z| un - z))
        .collect();
    eigenvalues.sort_by(f64::total_cmp);

    let count = eigenvector_count_with(s, xi, p, &roots)?;
    let max_speed = roots
        .iter()
        .map(|z| (un - z.re).abs() + z.im.abs())
        .fold(un.abs(), f64::max);
    let m = mu_sq(s, &d, p).sqrt();
    Ok(EigenReport {
        quartic_roots: re,
        quartic_roots_imag: roots.map(|z| z.im),
        eigenvalues,
        eigenvector_count: count,
        max_speed,
        all_real,
        distinct,
        sign_split,
        hyperbolic: distinct && sign_split && count == 2 * n + 3,
        g_at_zero: g.c0,
        g_at_mu_pm: [g.eval(m), g.eval(-m)],
    })
}

/// Number of linearly independent real eigenvectors of `A(ξ)`.
///
/// For `Λ = u·ξ` the kernel is written down directly: tangential velocity
/// and tangential heat-flux directions plus the `(ρ, S2)` combination
/// `(1 − p_S2, p_ρ)`. For each distinct real quartic root the null space of
/// `A − Λ I` is taken from the SVD. The total is the numerical rank of the
/// collected vectors.
pub fn eigenvector_completeness(
    s: &PrimitiveState,
    xi: &Direction,
    p: &ModelParams,
) -> Result<usize> {
    let g = quartic_g(s, xi, p)?;
    eigenvector_count_with(s, xi, p, &solve_quartic(&g))
}

/// The explicit kernel of `A(ξ) − (u·ξ) I`, `2n − 1` vectors.
pub fn transport_kernel(s: &PrimitiveState, xi: &Direction, p: &ModelParams) -> Result<Vec<DVector<f64>>> {
    let d = checked_partials(s, p)?;
    let n = xi.dim;
    let l = Layout { n };
    let mut out = Vec::with_capacity(2 * n - 1);
    for t in xi.tangents() {
        let mut v = DVector::zeros(l.size());
        for i in 0..n {
            v[l.u(i)] = t[i];
        }
        out.push(v);
        let mut v = DVector::zeros(l.size());
        for i in 0..n {
            v[l.q(i)] = t[i];
        }
        out.push(v);
    }
    let mut v = DVector::zeros(l.size());
    v[Layout::RHO] = 1.0 - d.p_s2;
    v[l.s2()] = d.p_rho;
    out.push(v);
    Ok(out)
}

fn eigenvector_count_with(
    s: &PrimitiveState,
    xi: &Direction,
    p: &ModelParams,
    roots: &[Complex64; 4],
) -> Result<usize> {
    let a = flux_jacobian(s, xi, p)?;
    let size = a.nrows();
    let anorm = a.norm();
    let un = dot(&s.u, &xi.xi);
    let mut vecs = transport_kernel(s, xi, p)?;

    let tol = real_root_tol(roots);
    let mut distinct: Vec<f64> = Vec::new();
    let scale = roots.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
    for z in roots.iter().filter(|z| z.im.abs() <= tol) {
        if distinct
            .last()
            .is_none_or(|&prev| z.re - prev > DISTINCT_TOL * scale)
        {
            distinct.push(z.re);
        }
    }
    for z in distinct {
        let lam = un - z;
        let shifted = &a - DMatrix::identity(size, size) * lam;
        let svd = shifted.clone().svd(false, true);
        let vt = svd.v_t.expect("requested V^T");
        let cutoff = 1e-7 * anorm.max(1.0);
        for (k, &sv) in svd.singular_values.iter().enumerate() {
            if sv <= cutoff {
                let v = vt.row(k).transpose();
                let res = (&shifted * &v).norm();
                if res <= 1e-6 * anorm.max(1.0) {
                    vecs.push(v);
                }
            }
        }
    }
    let cols: Vec<DVector<f64>> = vecs.iter().map(|v| v / v.norm()).collect();
    let m = DMatrix::from_columns(&cols);
    Ok(numerical_rank(&m, 1e-9))
}

/// Rank from singular values relative to the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    sv.iter().filter(|&&x| x > rel_tol * smax).count()
}

/// Eigenvalues of `A(ξ)` from a dense nonsymmetric solver (faer's
/// Hessenberg QR), sorted by real part. `None` if it does not converge.
///
/// This is deliberately a different implementation from the quartic route so
/// the two can be compared.
pub fn dense_eigenvalues(a: &DMatrix<f64>) -> Option<Vec<Complex64>> {
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let mut ev: Vec<Complex64> = m
        .eigenvalues()
        .ok()?
        .into_iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect();
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Some(ev)
}

/// Max deviation between `det(A − ΛI)` and `(u·ξ − Λ)^{2n−1} g(u·ξ − Λ)`
/// over `num_samples` values of Λ drawn uniformly from [−5, 5], each
/// normalised by `max(|det|, |product|, 1)`.
pub fn characteristic_factorization_check(
    s: &PrimitiveState,
    xi: &Direction,
    p: &ModelParams,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    let a = flux_jacobian(s, xi, p)?;
    let g = quartic_g(s, xi, p)?;
    let size = a.nrows();
    let n = xi.dim as i32;
    let un = dot(&s.u, &xi.xi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..num_samples {
        let lam: f64 = rng.random_range(-5.0..5.0);
        let det = (&a - DMatrix::identity(size, size) * lam).determinant();
        let z = un - lam;
        let prod = z.powi(2 * n - 1) * g.eval(z);
        let defect = (det - prod).abs() / det.abs().max(prod.abs()).max(1.0);
        worst = worst.max(defect);
    }
    Ok(worst)
}

/// Which characteristic speeds bound the numerical dissipation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveSpeedMode {
    /// Roots of the full quartic.
    #[default]
    Full,
    /// Roots with the relaxation couplings removed.
    Frozen,
}

fn speed_from(g: &Quartic, un: f64) -> f64 {
    let all_roots = |g: &Quartic| {
        solve_quartic(g)
            .iter()
            .map(|z| (un - z.re).abs() + z.im.abs())
            .fold(un.abs(), f64::max)
    };
    let Some((lo, hi)) = extreme_real_roots(g) else {
        return all_roots(g);
    };
    // deflate by (z − lo)(z − hi); a complex remaining pair needs the full solve
    let s = lo + hi;
    let t = lo * hi;
    let b1 = g.c3 + s;
    let b0 = g.c2 - t + s * b1;
    if hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) || b1 * b1 - 4.0 * b0 < 0.0 {
        return all_roots(g);
    }
    (un - lo).abs().max((un - hi).abs()).max(un.abs())
}

/// Largest `|λ|` over eigenvalues of `A(ξ)` at `s`.
pub fn local_wave_speed(
    s: &PrimitiveState,
    xi: &Vec3,
    p: &ModelParams,
    mode: WaveSpeedMode,
) -> Result<f64> {
    let d = checked_partials(s, p)?;
    let un = dot(&s.u, xi);
    let g = match mode {
        WaveSpeedMode::Full => quartic_from(s, &d, xi, p),
        WaveSpeedMode::Frozen => {
            let g = frozen_quartic_from(s, &d, xi);
            // g = z·(z³ + c3 z² + c2 z + c1)
            if let Some(r) = quartic::cubic_real_roots(g.c3, g.c2, g.c1) {
                return Ok((un - r[0]).abs().max((un - r[2]).abs()).max(un.abs()));
            }
            g
        }
    };
    Ok(speed_from(&g, un))
}

/// Largest local speed over a set of states and all coordinate directions.
pub fn max_wave_speed<'a, I>(states: I, p: &ModelParams, mode: WaveSpeedMode) -> Result<f64>
where
    I: IntoIterator<Item = &'a PrimitiveState>,
{
    let mut sigma = 0.0f64;
    for s in states {
        for k in 0..p.dim {
            let xi = Direction::axis(k, p.dim);
            sigma = sigma.max(local_wave_speed(s, xi.xi(), p, mode)?);
        }
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_state(rng: &mut ChaCha8Rng, dim: usize, delta: f64) -> PrimitiveState {
        let mut u = [0.0; 3];
        let mut q = [0.0; 3];
        for i in 0..dim {
            u[i] = rng.random_range(-2.0..2.0);
        }
        // |q| < δ via a scaled direction
        let mut dir = [0.0; 3];
        for d in dir.iter_mut().take(dim) {
            *d = rng.random_range(-1.0..1.0);
        }
        let nd = dot(&dir, &dir).sqrt().max(1e-12);
        let mag = rng.random_range(0.0..delta);
        for i in 0..dim {
            q[i] = dir[i] / nd * mag;
        }
        PrimitiveState::new(
            rng.random_range(0.5..2.0),
            u,
            rng.random_range(0.6..3.0),
            q,
            rng.random_range(-delta..delta),
        )
    }

    fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Direction {
        let v = std::array::from_fn(|i| if i < dim { rng.random_range(-1.0..1.0) } else { 0.0 });
        Direction::normalized(v, dim).unwrap_or(Direction::axis(0, dim))
    }

    #[test]
    fn frozen_cubic_path_matches_quartic_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in 1..=3 {
            let p = ModelParams::unit(dim);
            for _ in 0..2000 {
                let s = random_state(&mut rng, dim, 0.3);
                let xi = random_direction(&mut rng, dim);
                let d = checked_partials(&s, &p).unwrap();
                let general = speed_from(&frozen_quartic_from(&s, &d, &xi.xi), dot(&s.u, &xi.xi));
                let fast = local_wave_speed(&s, &xi.xi, &p, WaveSpeedMode::Frozen).unwrap();
                assert!((fast - general).abs() <= 1e-12 * general, "{fast} vs {general}");
            }
        }
    }

    #[test]
    fn direction_rejects_non_unit() {
        assert!(Direction::new([1.0, 1.0, 0.0], 2).is_err());
        assert!(Direction::new([0.0, 0.0, 1.0], 2).is_err());
        assert!(Direction::new([0.6, 0.8, 0.0], 2).is_ok());
    }

    #[test]
    fn equilibrium_jacobian_entries() {
        let p = ModelParams::unit(3);
        let s = PrimitiveState::equilibrium();
        let a = flux_jacobian(&s, &Direction::axis(0, 3), &p).unwrap();
        let l = Layout { n: 3 };
        assert_eq!(a[(l.u(0), Layout::RHO)], 1.0);
        assert_eq!(a[(l.q(0), l.theta())], 1.0);
        assert_eq!(a[(l.s2(), l.u(0))], -1.0);
        assert_eq!(a[(l.u(0), l.s2())], -1.0);
        for k in 0..9 {
            assert_eq!(a[(k, k)], 0.0);
        }
    }

    #[test]
    fn galilean_shift_touches_diagonal_only() {
        let p = ModelParams::unit(2);
        let xi = Direction::normalized([0.3, -0.7, 0.0], 2).unwrap();
        let base = PrimitiveState::new(1.3, [0.0; 3], 1.4, [0.02, -0.01, 0.0], 0.03);
        let moved = PrimitiveState {
            u: [0.4, 1.1, 0.0],
            ..base
        };
        let a0 = flux_jacobian(&base, &xi, &p).unwrap();
        let a1 = flux_jacobian(&moved, &xi, &p).unwrap();
        let un = dot(&moved.u, xi.xi());
        let diff = a1 - a0 - DMatrix::identity(7, 7) * un;
        // the velocity also enters the off-diagonal u-rows nowhere
        assert!(diff.amax() < 1e-15, "{diff}");
    }

    #[test]
    fn equilibrium_quartic() {
        let p = ModelParams::unit(3);
        let g = quartic_g(&PrimitiveState::equilibrium(), &Direction::axis(0, 3), &p).unwrap();
        assert_eq!(g, Quartic::new(0.0, -4.0, 0.0, 2.0));
        assert_eq!(g.c0, 2.0);
    }

    #[test]
    fn normal_flux_free_state_is_biquadratic() {
        let p = ModelParams::unit(2);
        let s = PrimitiveState::new(1.2, [0.5, 0.0, 0.0], 1.1, [0.0, 0.05, 0.0], 0.02);
        let g = quartic_g(&s, &Direction::axis(0, 2), &p).unwrap();
        assert_eq!(g.c3, 0.0);
        assert_eq!(g.c1, 0.0);
        assert!(g.is_biquadratic());
    }

    #[test]
    fn equilibrium_reports() {
        for (n, count) in [(1, 5), (2, 7), (3, 9)] {
            let p = ModelParams::unit(n);
            let r = eigen_report(&PrimitiveState::equilibrium(), &Direction::axis(0, n), &p).unwrap();
            assert_eq!(r.eigenvector_count, count, "n = {n}");
            assert!(r.hyperbolic);
            assert!((r.max_speed - (2.0 + 2f64.sqrt()).sqrt()).abs() < 1e-14);
            assert_eq!(r.g_at_zero, 2.0);
            assert!(r.g_at_mu_pm[0] < 0.0 && r.g_at_mu_pm[1] < 0.0);
        }
    }

    #[test]
    fn shifted_velocity_shifts_eigenvalues() {
        let p = ModelParams::unit(3);
        let xi = Direction::axis(0, 3);
        let r0 = eigen_report(&PrimitiveState::equilibrium(), &xi, &p).unwrap();
        let moving = PrimitiveState::new(1.0, [2.0, 0.0, 0.0], 1.0, [0.0; 3], 0.0);
        let r1 = eigen_report(&moving, &xi, &p).unwrap();
        for (a, b) in r0.eigenvalues.iter().zip(&r1.eigenvalues) {
            assert!((b - a - 2.0).abs() < 1e-14);
        }
        assert!((r1.max_speed - 2.0 - (2.0 + 2f64.sqrt()).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn factorization_equilibrium_all_dims() {
        for n in 1..=3 {
            let p = ModelParams::unit(n);
            let d = characteristic_factorization_check(
                &PrimitiveState::equilibrium(),
                &Direction::axis(0, n),
                &p,
                64,
                1,
            )
            .unwrap();
            assert!(d < 1e-8, "n = {n}: {d}");
        }
    }

    #[test]
    fn dense_eigenvalues_match_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=3 {
            let p = ModelParams::unit(n);
            for _ in 0..50 {
                let s = random_state(&mut rng, n, 0.1);
                let xi = random_direction(&mut rng, n);
                let r = eigen_report(&s, &xi, &p).unwrap();
                let dense = dense_eigenvalues(&flux_jacobian(&s, &xi, &p).unwrap()).unwrap();
                for (a, b) in dense.iter().zip(&r.eigenvalues) {
                    assert!((a.re - b).abs() < 1e-8 && a.im.abs() < 1e-8, "{a} vs {b}");
                }
                assert!(r.hyperbolic);
            }
        }
    }

    /// `S2 = −λ/τ3 − ρ p_ρ` makes `λ(1 − p_S2)/(ρτ3) + p_ρ` vanish, so
    /// `g(z) = z²(z² + c2)`: a double root at zero that merges with the
    /// transport eigenvalue into a Jordan block.
    #[test]
    fn repeated_roots_lose_eigenvectors() {
        for n in 1..=3 {
            let p = ModelParams::unit(n);
            let s = PrimitiveState::new(1.0, [0.0; 3], 1.0, [0.0; 3], -2.0);
            let r = eigen_report(&s, &Direction::axis(0, n), &p).unwrap();
            assert_eq!(r.g_at_zero, 0.0);
            assert!(!r.distinct);
            assert!(!r.hyperbolic);
            assert_eq!(r.eigenvector_count, 2 * n + 1, "n = {n}");
        }
    }

    #[test]
    fn large_heat_flux_stays_hyperbolic() {
        let p = ModelParams::unit(1);
        for qm in [0.5, 0.9, 0.99] {
            let s = PrimitiveState::new(1.0, [0.0; 3], 1.0, [qm, 0.0, 0.0], 0.0);
            let r = eigen_report(&s, &Direction::axis(0, 1), &p).unwrap();
            assert!(r.hyperbolic, "|q| = {qm}");
        }
        // past the point where e_θ changes sign the θ-row is undefined
        let s = PrimitiveState::new(1.0, [0.0; 3], 1.0, [1.0, 0.0, 0.0], 0.0);
        assert!(matches!(
            eigen_report(&s, &Direction::axis(0, 1), &p),
            Err(Error::Domain { what: "e_theta", .. })
        ));
    }

    #[test]
    fn frozen_speed_is_sound_speed_at_rest() {
        let p = ModelParams::unit(1);
        let s = PrimitiveState::new(1.0, [0.0; 3], 2.0, [0.0; 3], 0.0);
        let c = local_wave_speed(&s, &[1.0, 0.0, 0.0], &p, WaveSpeedMode::Frozen).unwrap();
        assert!((c - (p.gamma() * p.r_gas * 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fast_speed_matches_full_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = ModelParams::unit(2);
        for _ in 0..500 {
            let s = random_state(&mut rng, 2, 0.1);
            let xi = random_direction(&mut rng, 2);
            let fast = local_wave_speed(&s, xi.xi(), &p, WaveSpeedMode::Full).unwrap();
            let r = eigen_report(&s, &xi, &p).unwrap();
            assert!((fast - r.max_speed).abs() < 1e-10 * r.max_speed);
        }
    }

    #[test]
    fn max_speed_examples() {
        let p = ModelParams::unit(3);
        let eq = PrimitiveState::equilibrium();
        let c = (2.0 + 2f64.sqrt()).sqrt();
        let s = max_wave_speed([eq; 4].iter(), &p, WaveSpeedMode::Full).unwrap();
        assert!((s - c).abs() < 1e-14);
        let moving = PrimitiveState {
            u: [2.0, 0.0, 0.0],
            ..eq
        };
        let s = max_wave_speed(std::iter::once(&moving), &p, WaveSpeedMode::Full).unwrap();
        assert!((s - 2.0 - c).abs() < 1e-14);
    }

    fn rotation(n: usize, a: f64, b: f64) -> [[f64; 3]; 3] {
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        if n == 2 {
            [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]]
        } else {
            // Rz(a) · Rx(b)
            [
                [ca, -sa * cb, sa * sb],
                [sa, ca * cb, -ca * sb],
                [0.0, sb, cb],
            ]
        }
    }

    fn apply(r: &[[f64; 3]; 3], v: &Vec3, n: usize) -> Vec3 {
        let mut out = [0.0; 3];
        for i in 0..n {
            for j in 0..n {
                out[i] += r[i][j] * v[j];
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rotation_equivariance(seed in any::<u64>(), n in 2usize..=3, a in 0.0..6.28f64, b in 0.0..6.28f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ModelParams::unit(n);
            let s = random_state(&mut rng, n, 0.1);
            let xi = random_direction(&mut rng, n);
            let r = rotation(n, a, b);
            let rs = PrimitiveState { u: apply(&r, &s.u, n), q: apply(&r, &s.q, n), ..s };
            let rxi = Direction::normalized(apply(&r, xi.xi(), n), n).unwrap();
            let e0 = dense_eigenvalues(&flux_jacobian(&s, &xi, &p).unwrap()).unwrap();
            let e1 = dense_eigenvalues(&flux_jacobian(&rs, &rxi, &p).unwrap()).unwrap();
            for (x, y) in e0.iter().zip(&e1) {
                prop_assert!((x - y).norm() < 1e-8);
            }
        }

        #[test]
        fn parity(seed in any::<u64>(), n in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ModelParams::unit(n);
            let s = random_state(&mut rng, n, 0.1);
            let xi = random_direction(&mut rng, n);
            let flipped = PrimitiveState { u: s.u.map(|c| -c), q: s.q.map(|c| -c), ..s };
            let mxi = Direction::new(xi.xi().map(|c| if c == 0.0 { 0.0 } else { -c }), n).unwrap();
            let r0 = eigen_report(&s, &xi, &p).unwrap();
            let r1 = eigen_report(&flipped, &mxi, &p).unwrap();
            for (x, y) in r0.eigenvalues.iter().zip(&r1.eigenvalues) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn galilean_speed(seed in any::<u64>(), w0 in -3.0..3.0f64, w1 in -3.0..3.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ModelParams::unit(2);
            let s = random_state(&mut rng, 2, 0.1);
            let xi = random_direction(&mut rng, 2);
            let w = [w0, w1, 0.0];
            let moved = PrimitiveState { u: [s.u[0] + w0, s.u[1] + w1, 0.0], ..s };
            let r0 = eigen_report(&s, &xi, &p).unwrap();
            let r1 = eigen_report(&moved, &xi, &p).unwrap();
            let shift = dot(&w, xi.xi());
            for (x, y) in r0.eigenvalues.iter().zip(&r1.eigenvalues) {
                prop_assert!((y - x - shift).abs() < 1e-10);
            }
            let wn = dot(&w, &w).sqrt();
            prop_assert!(r1.max_speed <= r0.max_speed + wn + 1e-12);
        }
    }
}
