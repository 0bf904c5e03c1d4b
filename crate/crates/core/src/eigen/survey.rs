//! Randomised certification over sampled admissible states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{characteristic_factorization_check, dense_eigenvalues, eigen_report, flux_jacobian, Direction};
use crate::error::Result;
use crate::thermo::{ModelParams, PrimitiveState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyOptions {
    pub samples: usize,
    pub seed: u64,
    /// Bound on `|q|` and `|S2|`; `None` uses the admissible box.
    pub delta: Option<f64>,
    /// Bound on each velocity component.
    pub u_max: f64,
    /// Random Λ per state for the factorization check (0 skips it).
    pub lambdas: usize,
    /// Skip the dense eigensolver comparison.
    pub skip_dense: bool,
}

impl Default for SurveyOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            delta: None,
            u_max: 1.0,
            lambdas: 0,
            skip_dense: false,
        }
    }
}

/// Uniform state in the admissible box with `|u_i| ≤ u_max`, `|q| < δ`
/// (uniform in the ball) and `|S2| < δ`.
pub fn sample_state(rng: &mut ChaCha8Rng, p: &ModelParams, u_max: f64, delta: f64) -> PrimitiveState {
    let n = p.dim;
    let b = &p.admissible_box;
    let mut u = [0.0; 3];
    for c in u.iter_mut().take(n) {
        *c = rng.random_range(-u_max..=u_max);
    }
    let q = loop {
        let mut v = [0.0; 3];
        for c in v.iter_mut().take(n) {
            *c = rng.random_range(-1.0..1.0);
        }
        let r2: f64 = v.iter().map(|x| x * x).sum();
        if r2 < 1.0 {
            break v.map(|x| x * delta);
        }
    };
    PrimitiveState::new(
        rng.random_range(b.rho_min..=b.rho_max),
        u,
        rng.random_range(b.theta_min..=b.theta_max),
        q,
        rng.random_range(-delta..delta),
    )
}

pub fn sample_direction(rng: &mut ChaCha8Rng, n: usize) -> Direction {
    loop {
        let v = std::array::from_fn(|i| if i < n { rng.random_range(-1.0..1.0) } else { 0.0 });
        let r2: f64 = v.iter().map(|x: &f64| x * x).sum();
        if r2 > 1e-4 && r2 < 1.0 {
            if let Ok(d) = Direction::normalized(v, n) {
                return d;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyReport {
    pub dim: usize,
    pub samples: usize,
    pub delta: f64,
    /// States where all four quartic roots are real, distinct and split
    /// `z2 < 0 < z3`, with a full eigenvector basis.
    pub hyperbolic: usize,
    /// Largest |dense eigenvalue − predicted eigenvalue| (including the
    /// imaginary part of the dense one).
    pub max_eigenvalue_mismatch: f64,
    pub min_eigenvector_count: usize,
    /// Largest normalised determinant defect (NaN when not run).
    pub max_factorization_defect: f64,
    /// First few failing samples.
    pub failures: Vec<String>,
}

impl SurveyReport {
    pub fn passed(&self, eig_tol: f64) -> bool {
        self.hyperbolic == self.samples
            && self.min_eigenvector_count == 2 * self.dim + 3
            && !(self.max_eigenvalue_mismatch > eig_tol)
    }
}

pub fn hyperbolicity_survey(p: &ModelParams, opts: &SurveyOptions) -> Result<SurveyReport> {
    let n = p.dim;
    let delta = opts
        .delta
        .unwrap_or(p.admissible_box.q_max.min(p.admissible_box.s2_max));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rep = SurveyReport {
        dim: n,
        samples: opts.samples,
        delta,
        hyperbolic: 0,
        max_eigenvalue_mismatch: 0.0,
        min_eigenvector_count: usize::MAX,
        max_factorization_defect: if opts.lambdas > 0 { 0.0 } else { f64::NAN },
        failures: Vec::new(),
    };
    for k in 0..opts.samples {
        let s = sample_state(&mut rng, p, opts.u_max, delta);
        let xi = sample_direction(&mut rng, n);
        let r = eigen_report(&s, &xi, p)?;
        let mut ok = r.hyperbolic;
        rep.min_eigenvector_count = rep.min_eigenvector_count.min(r.eigenvector_count);
        if !opts.skip_dense {
            match dense_eigenvalues(&flux_jacobian(&s, &xi, p)?) {
                Some(d) => {
                    for (a, b) in d.iter().zip(&r.eigenvalues) {
                        let m = (a.re - b).abs().max(a.im.abs());
                        rep.max_eigenvalue_mismatch = rep.max_eigenvalue_mismatch.max(m);
                    }
                }
                None => {
                    rep.max_eigenvalue_mismatch = f64::INFINITY;
                    ok = false;
                }
            }
        }
        if opts.lambdas > 0 {
            let d = characteristic_factorization_check(&s, &xi, p, opts.lambdas, opts.seed ^ k as u64)?;
            rep.max_factorization_defect = rep.max_factorization_defect.max(d);
        }
        if ok {
            rep.hyperbolic += 1;
        } else if rep.failures.len() < 8 {
            rep.failures.push(format!("sample {k}: {s:?} xi {:?}: {r:?}", xi.xi()));
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_respect_bounds() {
        let p = ModelParams::unit(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = sample_state(&mut rng, &p, 1.0, 0.05);
            assert!(p.check_admissible(&s).is_ok());
            assert!(s.q.iter().map(|x| x * x).sum::<f64>().sqrt() < 0.05);
        }
    }

    #[test]
    fn small_survey_passes() {
        for n in 2..=3 {
            let p = ModelParams::unit(n);
            let r = hyperbolicity_survey(
                &p,
                &SurveyOptions {
                    samples: 200,
                    lambdas: 4,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(r.passed(1e-8), "{r:?}");
            assert!(r.max_factorization_defect < 1e-8);
        }
    }
}
