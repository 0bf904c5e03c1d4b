//! Monic quartic `z⁴ + c3 z³ + c2 z² + c1 z + c0` and its roots.

use nalgebra::{Matrix4, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Below this magnitude both odd coefficients are treated as zero and the
/// closed-form biquadratic route is taken.
pub const BIQUADRATIC_TOL: f64 = 1e-14;

const NEWTON_MAX_ITERS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartic {
    pub c3: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Quartic {
    pub fn new(c3: f64, c2: f64, c1: f64, c0: f64) -> Self {
        Self { c3, c2, c1, c0 }
    }

    /// Expands `Π (z − r_i)`.
    pub fn from_roots(r: [f64; 4]) -> Self {
        let [a, b, c, d] = r;
        Self {
            c3: -(a + b + c + d),
            c2: a * b + a * c + a * d + b * c + b * d + c * d,
            c1: -(a * b * c + a * b * d + a * c * d + b * c * d),
            c0: a * b * c * d,
        }
    }

    /// Coefficients from the highest power down, leading 1 included.
    pub fn coefficients(&self) -> [f64; 5] {
        [1.0, self.c3, self.c2, self.c1, self.c0]
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        (((z + self.c3) * z + self.c2) * z + self.c1) * z + self.c0
    }

    #[inline]
    pub fn eval_deriv(&self, z: f64) -> (f64, f64) {
        let mut p = 1.0;
        let mut dp = 0.0;
        for c in [self.c3, self.c2, self.c1, self.c0] {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }

    pub fn eval_complex(&self, z: Complex64) -> (Complex64, Complex64) {
        let mut p = Complex64::new(1.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for c in [self.c3, self.c2, self.c1, self.c0] {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }

    pub fn is_biquadratic(&self) -> bool {
        self.c3.abs() < BIQUADRATIC_TOL && self.c1.abs() < BIQUADRATIC_TOL
    }

    /// Fujiwara bound: every root satisfies
    /// `|z| ≤ 2 max(|c3|, |c2|^½, |c1|^⅓, |c0/2|^¼)`.
    pub fn root_bound(&self) -> f64 {
        let b = self
            .c3
            .abs()
            .max(self.c2.abs().sqrt())
            .max(self.c1.abs().cbrt())
            .max((0.5 * self.c0.abs()).sqrt().sqrt());
        // strictly outside the roots so Newton starts on the monotone branch
        2.0 * b * (1.0 + 1e-12) + f64::MIN_POSITIVE
    }

    /// Bound on the rounding error of Horner evaluation at `z`.
    fn rounding_bound(&self, z: f64) -> f64 {
        let a = z.abs();
        let mut acc = 1.0;
        for c in [self.c3, self.c2, self.c1, self.c0] {
            acc = acc * a + c.abs();
        }
        16.0 * f64::EPSILON * acc
    }

    fn residual_ok(&self, z: Complex64) -> bool {
        let (p, _) = self.eval_complex(z);
        p.norm() < 1e-12 * (1.0 + z.norm().powi(4))
    }
}

/// All four roots, sorted by real part (ties by imaginary part).
///
/// Biquadratics use the closed form `z = ±√w`, `w² + c2 w + c0 = 0`;
/// everything else goes through the eigenvalues of the companion matrix,
/// polished by Newton's method.
pub fn solve_quartic(q: &Quartic) -> [Complex64; 4] {
    let mut roots = if q.is_biquadratic() {
        biquadratic_roots(q.c2, q.c0)
    } else {
        companion_roots(q)
    };
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    roots
}

fn biquadratic_roots(c2: f64, c0: f64) -> [Complex64; 4] {
    let disc = Complex64::new(c2 * c2 - 4.0 * c0, 0.0).sqrt();
    // avoid cancellation: w1 = (−c2 − sign(c2)·√disc)/2, w2 = c0 / w1
    let sgn = if c2 >= 0.0 { 1.0 } else { -1.0 };
    let w1 = -(Complex64::new(c2, 0.0) + sgn * disc) * 0.5;
    let w2 = if w1.norm() > 0.0 {
        Complex64::new(c0, 0.0) / w1
    } else {
        Complex64::new(0.0, 0.0)
    };
    let r1 = w1.sqrt();
    let r2 = w2.sqrt();
    [r1, -r1, r2, -r2]
}

fn companion_roots(q: &Quartic) -> [Complex64; 4] {
    #[rustfmt::skip]
    let c = Matrix4::new(
        0.0, 0.0, 0.0, -q.c0,
        1.0, 0.0, 0.0, -q.c1,
        0.0, 1.0, 0.0, -q.c2,
        0.0, 0.0, 1.0, -q.c3,
    );
    let mut out = [Complex64::new(0.0, 0.0); 4];
    match Schur::try_new(c, f64::EPSILON, 1_000) {
        Some(schur) => {
            for (k, z) in schur.complex_eigenvalues().iter().enumerate() {
                out[k] = polish(q, Complex64::new(z.re, z.im));
            }
        }
        None => {
            out = durand_kerner(q);
            for z in out.iter_mut() {
                *z = polish(q, *z);
            }
        }
    }
    out
}

/// Simultaneous iteration from points on a circle enclosing all roots.
fn durand_kerner(q: &Quartic) -> [Complex64; 4] {
    let r = q.root_bound();
    let mut z: [Complex64; 4] =
        std::array::from_fn(|k| Complex64::from_polar(r, 0.4 + k as f64 * std::f64::consts::FRAC_PI_2));
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..4 {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..4 {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            if den.norm() == 0.0 {
                continue;
            }
            let dz = q.eval_complex(z[i]).0 / den;
            z[i] -= dz;
            moved = moved.max(dz.norm());
        }
        if moved <= 1e-15 * r {
            break;
        }
    }
    z
}

/// Newton polishing; keeps the best iterate so a stalled iteration near a
/// multiple root never makes things worse.
fn polish(q: &Quartic, z0: Complex64) -> Complex64 {
    let mut z = z0;
    let mut best = z0;
    let mut best_res = q.eval_complex(z0).0.norm();
    for _ in 0..NEWTON_MAX_ITERS {
        if q.residual_ok(best) {
            break;
        }
        let (p, dp) = q.eval_complex(z);
        if dp.norm() == 0.0 {
            break;
        }
        z -= p / dp;
        let r = q.eval_complex(z).0.norm();
        if r < best_res {
            best = z;
            best_res = r;
        } else if r > 10.0 * best_res {
            break;
        }
    }
    // a real matrix yields exactly-real eigenvalues for real roots; keep them real
    if z0.im == 0.0 {
        best.im = 0.0;
    }
    best
}

/// Smallest and largest real roots, obtained by monotone Newton iteration
/// from the root bounds. Returns `None` when the iteration is not monotone
/// (the quartic then has complex roots outside the real-root hull) so the
/// caller can fall back to [`solve_quartic`].
pub fn extreme_real_roots(q: &Quartic) -> Option<(f64, f64)> {
    let bound = q.root_bound();
    let hi = monotone_newton(q, bound, -1.0)?;
    let lo = monotone_newton(q, -bound, 1.0)?;
    Some((lo, hi))
}

/// Roots of `z³ + a2 z² + a1 z + a0` when all three are real and
/// separated, ascending; `None` otherwise. Trigonometric form followed by
/// one Newton correction per root.
pub fn cubic_real_roots(a2: f64, a1: f64, a0: f64) -> Option<[f64; 3]> {
    let shift = a2 / 3.0;
    let pp = a1 - a2 * shift;
    let qq = a0 - a1 * shift + 2.0 * shift * shift * shift;
    if !(pp < 0.0) {
        return None;
    }
    let m = (-pp / 3.0).sqrt();
    let c = 1.5 * qq / (pp * m);
    // near c = ±1 two roots merge and the arccos loses accuracy
    if !(c.abs() < 1.0 - 1e-6) {
        return None;
    }
    let phi = c.acos() / 3.0;
    let third = 2.0 * std::f64::consts::PI / 3.0;
    let mut r = [0.0; 3];
    for (k, z) in r.iter_mut().enumerate() {
        let mut x = 2.0 * m * (phi - third * k as f64).cos() - shift;
        let f = ((x + a2) * x + a1) * x + a0;
        let df = (3.0 * x + 2.0 * a2) * x + a1;
        if df != 0.0 {
            x -= f / df;
        }
        *z = x;
    }
    r.sort_by(f64::total_cmp);
    Some(r)
}

fn monotone_newton(q: &Quartic, start: f64, direction: f64) -> Option<f64> {
    let mut z = start;
    for _ in 0..200 {
        let (p, dp) = q.eval_deriv(z);
        if p == 0.0 {
            return Some(z);
        }
        if dp == 0.0 {
            return None;
        }
        let step = -p / dp;
        let converged = p.abs() <= q.rounding_bound(z) || step.abs() <= 1e-15 * (1.0 + z.abs());
        // iterates must move towards the interior; a reversed step is only
        // acceptable as round-off at convergence
        if step * direction < 0.0 && !converged {
            return None;
        }
        let next = z + step;
        if next == z || converged {
            return Some(next);
        }
        z = next;
    }
    None
}
