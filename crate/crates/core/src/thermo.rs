//! Constitutive laws for the relaxed model.
//!
//! Internal energy and pressure carry quadratic corrections in the heat flux
//! `q` and the bulk stress deviation `S2`:
//!
//! ```text
//! e = Cv θ + τ1 |q|² / (κ ρ θ) + τ3 S2² / (2 λ ρ)
//! p = R ρ θ − τ1 |q|² / (2 κ θ) − τ3 S2² / (2 λ)
//! ```
//!
//! which satisfy the Gibbs compatibility relation `ρ² e_ρ = p − θ p_θ`.
//! Vectors are stored as `[f64; 3]`; components beyond `dim` stay zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm2(a: &Vec3) -> f64 {
    dot(a, a)
}

/// Numeric proxy for the compact state-space sets the local theory works in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmissibleBox {
    pub rho_min: f64,
    pub rho_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub u_max: f64,
    /// Bound on |q| (the δ of the local existence assumption).
    pub q_max: f64,
    /// Bound on |S2|.
    pub s2_max: f64,
}

impl Default for AdmissibleBox {
    fn default() -> Self {
        Self {
            rho_min: 0.2,
            rho_max: 5.0,
            theta_min: 0.5,
            theta_max: 5.0,
            u_max: 1.0e3,
            q_max: 0.1,
            s2_max: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tau1: f64,
    pub tau3: f64,
    pub kappa: f64,
    pub lambda: f64,
    #[serde(default)]
    pub mu: f64,
    pub cv: f64,
    pub r_gas: f64,
    pub dim: usize,
    #[serde(default)]
    pub admissible_box: AdmissibleBox,
}

impl ModelParams {
    /// All constants equal to one (including μ) in `dim` dimensions.
    pub fn unit(dim: usize) -> Self {
        Self {
            tau1: 1.0,
            tau3: 1.0,
            kappa: 1.0,
            lambda: 1.0,
            mu: 1.0,
            cv: 1.0,
            r_gas: 1.0,
            dim,
            admissible_box: AdmissibleBox::default(),
        }
    }

    /// Adiabatic exponent γ = 1 + R / Cv.
    pub fn gamma(&self) -> f64 {
        1.0 + self.r_gas / self.cv
    }

    /// Number of unknowns per point, `2n + 3`.
    pub fn nvars(&self) -> usize {
        2 * self.dim + 3
    }

    /// The same constants with both relaxation times set to zero, i.e. the
    /// classical closure. Only used by thermodynamic evaluations; such a
    /// value does not pass [`ModelParams::validate`].
    pub fn classical(&self) -> Self {
        Self {
            tau1: 0.0,
            tau3: 0.0,
            ..*self
        }
    }

    /// Every violated constraint, each naming the offending field.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("tau1", self.tau1),
            ("tau3", self.tau3),
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("cv", self.cv),
            ("r_gas", self.r_gas),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name}: must be positive and finite, got {v}"));
            }
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            out.push(format!("mu: must be non-negative, got {}", self.mu));
        }
        if !(1..=3).contains(&self.dim) {
            out.push(format!("dim: must be 1, 2 or 3, got {}", self.dim));
        }
        if !out.is_empty() {
            return out;
        }
        let b = &self.admissible_box;
        let bounds = [
            ("admissible_box.rho_min", b.rho_min),
            ("admissible_box.theta_min", b.theta_min),
            ("admissible_box.u_max", b.u_max),
            ("admissible_box.q_max", b.q_max),
            ("admissible_box.s2_max", b.s2_max),
        ];
        for (name, v) in bounds {
            if !(v > 0.0) {
                out.push(format!("{name}: must be positive, got {v}"));
            }
        }
        if !(b.rho_max > b.rho_min) {
            out.push("admissible_box.rho_max: must exceed rho_min".into());
        }
        if !(b.theta_max > b.theta_min) {
            out.push("admissible_box.theta_max: must exceed theta_min".into());
        }
        if !out.is_empty() {
            return out;
        }
        // The hyperbolicity argument needs p_ρ, p_θ, e_θ > 0 and |p_S2| < 1/2
        // throughout the box; all four are monotone in each variable, so the
        // corners suffice.
        for &rho in &[b.rho_min, b.rho_max] {
            for &theta in &[b.theta_min, b.theta_max] {
                for &qn in &[0.0, b.q_max] {
                    for &s2 in &[-b.s2_max, b.s2_max] {
                        let s = PrimitiveState::new(rho, [0.0; 3], theta, [qn, 0.0, 0.0], s2);
                        let d = pressure_partials_unchecked(&s, self);
                        let corner = format!("(rho={rho}, theta={theta}, |q|={qn}, S2={s2})");
                        if !(d.p_rho > 0.0) {
                            out.push(format!("admissible_box: p_rho <= 0 at corner {corner}"));
                        }
                        if !(d.p_theta > 0.0) {
                            out.push(format!("admissible_box: p_theta <= 0 at corner {corner}"));
                        }
                        if !(d.e_theta > 0.0) {
                            out.push(format!(
                                "admissible_box.q_max: e_theta <= 0 at corner {corner}"
                            ));
                        }
                        if !(d.p_s2.abs() < 0.5) {
                            out.push(format!(
                                "admissible_box.s2_max: |p_S2| >= 1/2 at corner {corner}"
                            ));
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Params(v.join("; ")))
        }
    }

    /// Box membership test; the error string names the first violated bound.
    pub fn check_admissible(&self, s: &PrimitiveState) -> std::result::Result<(), String> {
        let b = &self.admissible_box;
        if !(s.rho >= b.rho_min && s.rho <= b.rho_max) {
            return Err(format!("rho = {} outside [{}, {}]", s.rho, b.rho_min, b.rho_max));
        }
        if !(s.theta >= b.theta_min && s.theta <= b.theta_max) {
            return Err(format!(
                "theta = {} outside [{}, {}]",
                s.theta, b.theta_min, b.theta_max
            ));
        }
        let un = norm2(&s.u).sqrt();
        if !(un <= b.u_max) {
            return Err(format!("|u| = {un} exceeds {}", b.u_max));
        }
        let qn = norm2(&s.q).sqrt();
        if !(qn <= b.q_max) {
            return Err(format!("|q| = {qn} exceeds {}", b.q_max));
        }
        if !(s.s2.abs() <= b.s2_max) {
            return Err(format!("|S2| = {} exceeds {}", s.s2.abs(), b.s2_max));
        }
        Ok(())
    }
}

/// Pointwise state in primitive variables (ρ, u, θ, q, S2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveState {
    pub rho: f64,
    pub u: Vec3,
    pub theta: f64,
    pub q: Vec3,
    pub s2: f64,
}

impl PrimitiveState {
    pub fn new(rho: f64, u: Vec3, theta: f64, q: Vec3, s2: f64) -> Self {
        Self {
            rho,
            u,
            theta,
            q,
            s2,
        }
    }

    /// The reference state (1, 0, 1, 0, 0).
    pub fn equilibrium() -> Self {
        Self::new(1.0, [0.0; 3], 1.0, [0.0; 3], 0.0)
    }

    fn check_domain(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::Domain {
                what: "rho",
                value: self.rho,
            });
        }
        if !(self.theta > 0.0) {
            return Err(Error::Domain {
                what: "theta",
                value: self.theta,
            });
        }
        Ok(())
    }
}

/// Pointwise state in balance-law variables (ρ, ρu, 𝓔, q, S2) with
/// 𝓔 = ρ(e + |u|²/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservedState {
    pub rho: f64,
    pub mom: Vec3,
    pub etot: f64,
    pub q: Vec3,
    pub s2: f64,
}

/// Closed-form first derivatives of p and e.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub p_rho: f64,
    pub p_theta: f64,
    pub p_q: Vec3,
    pub p_s2: f64,
    pub e_rho: f64,
    pub e_theta: f64,
}

pub fn internal_energy(s: &PrimitiveState, p: &ModelParams) -> Result<f64> {
    s.check_domain()?;
    Ok(internal_energy_unchecked(s, p))
}

#[inline]
pub(crate) fn internal_energy_unchecked(s: &PrimitiveState, p: &ModelParams) -> f64 {
    p.cv * s.theta
        + p.tau1 * norm2(&s.q) / (p.kappa * s.rho * s.theta)
        + p.tau3 * s.s2 * s.s2 / (2.0 * p.lambda * s.rho)
}

pub fn pressure(s: &PrimitiveState, p: &ModelParams) -> Result<f64> {
    s.check_domain()?;
    Ok(pressure_unchecked(s, p))
}

#[inline]
pub(crate) fn pressure_unchecked(s: &PrimitiveState, p: &ModelParams) -> f64 {
    p.r_gas * s.rho * s.theta
        - p.tau1 * norm2(&s.q) / (2.0 * p.kappa * s.theta)
        - p.tau3 * s.s2 * s.s2 / (2.0 * p.lambda)
}

pub fn pressure_partials(s: &PrimitiveState, p: &ModelParams) -> Result<Partials> {
    s.check_domain()?;
    Ok(pressure_partials_unchecked(s, p))
}

#[inline]
pub(crate) fn pressure_partials_unchecked(s: &PrimitiveState, p: &ModelParams) -> Partials {
    let q2 = norm2(&s.q);
    let th = s.theta;
    let c = -p.tau1 / (p.kappa * th);
    Partials {
        p_rho: p.r_gas * th,
        p_theta: p.r_gas * s.rho + p.tau1 * q2 / (2.0 * p.kappa * th * th),
        p_q: [c * s.q[0], c * s.q[1], c * s.q[2]],
        p_s2: -p.tau3 * s.s2 / p.lambda,
        e_rho: -p.tau1 * q2 / (p.kappa * s.rho * s.rho * th)
            - p.tau3 * s.s2 * s.s2 / (2.0 * p.lambda * s.rho * s.rho),
        e_theta: p.cv - p.tau1 * q2 / (p.kappa * s.rho * th * th),
    }
}

pub fn primitive_to_conserved(s: &PrimitiveState, p: &ModelParams) -> Result<ConservedState> {
    s.check_domain()?;
    Ok(primitive_to_conserved_unchecked(s, p))
}

#[inline]
pub(crate) fn primitive_to_conserved_unchecked(
    s: &PrimitiveState,
    p: &ModelParams,
) -> ConservedState {
    let e = internal_energy_unchecked(s, p);
    ConservedState {
        rho: s.rho,
        mom: [s.rho * s.u[0], s.rho * s.u[1], s.rho * s.u[2]],
        etot: s.rho * (e + 0.5 * norm2(&s.u)),
        q: s.q,
        s2: s.s2,
    }
}

/// Inverts the energy law for θ.
///
/// With `e = (𝓔 − |m|²/(2ρ))/ρ`, θ solves `Cv θ² − a θ + b = 0` where
/// `a = e − τ3 S2²/(2λρ)` and `b = τ1 |q|²/(κρ)`. The larger root is the
/// branch that tends to `a / Cv` as `q → 0`.
pub fn conserved_to_primitive(c: &ConservedState, p: &ModelParams) -> Result<PrimitiveState> {
    if !(c.rho > 0.0) {
        return Err(Error::Domain {
            what: "rho",
            value: c.rho,
        });
    }
    let rho = c.rho;
    let inv = 1.0 / rho;
    let u = [c.mom[0] * inv, c.mom[1] * inv, c.mom[2] * inv];
    let e = (c.etot - 0.5 * norm2(&c.mom) * inv) * inv;
    let a = e - p.tau3 * c.s2 * c.s2 / (2.0 * p.lambda * rho);
    let b = p.tau1 * norm2(&c.q) / (p.kappa * rho);
    let disc = a * a - 4.0 * p.cv * b;
    if !(a > 0.0) || !(disc >= 0.0) {
        return Err(Error::Unphysical(format!(
            "no positive temperature: a = {a:.6e}, discriminant = {disc:.6e}"
        )));
    }
    let theta = (a + disc.sqrt()) / (2.0 * p.cv);
    Ok(PrimitiveState {
        rho,
        u,
        theta,
        q: c.q,
        s2: c.s2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn internal_energy_examples() {
        let p = ModelParams::unit(3);
        let eq = PrimitiveState::equilibrium();
        assert_eq!(internal_energy(&eq, &p).unwrap(), 1.0);
        let hot = PrimitiveState::new(1.0, [0.0; 3], 2.0, [0.0; 3], 0.0);
        assert_eq!(internal_energy(&hot, &p).unwrap(), 2.0);
        let flux = PrimitiveState::new(1.0, [0.0; 3], 1.0, [0.2, 0.0, 0.0], 0.0);
        assert!((internal_energy(&flux, &p).unwrap() - 1.04).abs() < 1e-15);
    }

    #[test]
    fn pressure_examples() {
        let mut p = ModelParams::unit(3);
        assert_eq!(pressure(&PrimitiveState::equilibrium(), &p).unwrap(), 1.0);
        let s = PrimitiveState::new(2.0, [0.0; 3], 3.0, [0.0; 3], 0.0);
        assert_eq!(pressure(&s, &p).unwrap(), 6.0);
        p.lambda = 2.0;
        let s = PrimitiveState::new(1.0, [0.0; 3], 1.0, [1.0, 0.0, 0.0], 1.0);
        assert!((pressure(&s, &p).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let p = ModelParams::unit(3);
        let bad = PrimitiveState::new(0.0, [0.0; 3], 1.0, [0.0; 3], 0.0);
        assert!(matches!(internal_energy(&bad, &p), Err(Error::Domain { what: "rho", .. })));
        let bad = PrimitiveState::new(1.0, [0.0; 3], -1.0, [0.0; 3], 0.0);
        assert!(matches!(pressure(&bad, &p), Err(Error::Domain { what: "theta", .. })));
    }

    #[test]
    fn partials_at_equilibrium() {
        let p = ModelParams::unit(3);
        let d = pressure_partials(&PrimitiveState::equilibrium(), &p).unwrap();
        assert_eq!(d.p_rho, 1.0);
        assert_eq!(d.p_theta, 1.0);
        assert_eq!(d.p_q, [0.0; 3]);
        assert_eq!(d.p_s2, 0.0);
        assert_eq!(d.e_theta, 1.0);
        let s = PrimitiveState::new(1.0, [0.0; 3], 1.0, [1.0, 0.0, 0.0], 0.0);
        let d = pressure_partials(&s, &p).unwrap();
        assert_eq!(d.p_q, [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn conversion_examples() {
        let p = ModelParams::unit(3);
        let c = primitive_to_conserved(&PrimitiveState::equilibrium(), &p).unwrap();
        assert_eq!(c.rho, 1.0);
        assert_eq!(c.mom, [0.0; 3]);
        assert_eq!(c.etot, 1.0);
        let s = PrimitiveState::new(2.0, [1.0, 0.0, 0.0], 1.0, [0.0; 3], 0.0);
        assert_eq!(primitive_to_conserved(&s, &p).unwrap().etot, 3.0);

        let c = ConservedState {
            rho: 1.0,
            mom: [0.0; 3],
            etot: 2.0,
            q: [0.0; 3],
            s2: 0.0,
        };
        assert_eq!(conserved_to_primitive(&c, &p).unwrap().theta, 2.0);

        // roots of θ² − 1.04 θ + 0.04 are 1 and 0.04
        let c = ConservedState {
            etot: 1.04,
            q: [0.2, 0.0, 0.0],
            ..c
        };
        assert!((conserved_to_primitive(&c, &p).unwrap().theta - 1.0).abs() < 1e-14);

        let c = ConservedState {
            etot: 0.01,
            q: [10.0, 0.0, 0.0],
            ..c
        };
        assert!(matches!(conserved_to_primitive(&c, &p), Err(Error::Unphysical(_))));
        let c = ConservedState { rho: -1.0, ..c };
        assert!(matches!(conserved_to_primitive(&c, &p), Err(Error::Domain { .. })));
    }

    #[test]
    fn equilibrium_reduces_to_ideal_gas() {
        let p = ModelParams {
            cv: 2.5,
            r_gas: 0.7,
            ..ModelParams::unit(2)
        };
        let s = PrimitiveState::new(1.3, [0.4, -0.2, 0.0], 0.9, [0.0; 3], 0.0);
        assert_eq!(internal_energy(&s, &p).unwrap(), 2.5 * 0.9);
        assert_eq!(pressure(&s, &p).unwrap(), 0.7 * 1.3 * 0.9);
    }

    #[test]
    fn unit_params_are_valid_and_bad_ones_are_named() {
        assert!(ModelParams::unit(3).validate().is_ok());
        let p = ModelParams {
            tau1: -1.0,
            kappa: 0.0,
            ..ModelParams::unit(2)
        };
        let v = p.violations();
        assert!(v.iter().any(|m| m.starts_with("tau1")));
        assert!(v.iter().any(|m| m.starts_with("kappa")));

        let mut p = ModelParams::unit(3);
        p.admissible_box.q_max = 10.0;
        assert!(p.violations().iter().any(|m| m.contains("e_theta")));
        let mut p = ModelParams::unit(3);
        p.admissible_box.s2_max = 0.6;
        assert!(p.violations().iter().any(|m| m.contains("p_S2")));
    }

    fn params_strategy() -> impl Strategy<Value = ModelParams> {
        (0.2..3.0f64, 0.2..3.0f64, 0.2..3.0f64, 0.2..3.0f64, 0.5..3.0f64, 0.2..2.0f64).prop_map(
            |(tau1, tau3, kappa, lambda, cv, r_gas)| ModelParams {
                tau1,
                tau3,
                kappa,
                lambda,
                mu: 0.0,
                cv,
                r_gas,
                dim: 3,
                admissible_box: AdmissibleBox::default(),
            },
        )
    }

    fn state_strategy() -> impl Strategy<Value = PrimitiveState> {
        (
            0.3..3.0f64,
            prop::array::uniform3(-2.0..2.0f64),
            0.6..3.0f64,
            prop::array::uniform3(-0.05..0.05f64),
            -0.05..0.05f64,
        )
            .prop_map(|(rho, u, theta, q, s2)| PrimitiveState::new(rho, u, theta, q, s2))
    }

    proptest! {
        #[test]
        fn gibbs_identity(s in state_strategy(), p in params_strategy()) {
            let d = pressure_partials(&s, &p).unwrap();
            let lhs = s.rho * s.rho * d.e_rho;
            let rhs = pressure(&s, &p).unwrap() - s.theta * d.p_theta;
            let scale = pressure(&s, &p).unwrap().abs() + (s.theta * d.p_theta).abs();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * scale);
        }

        #[test]
        fn round_trip(s in state_strategy(), p in params_strategy()) {
            let back = conserved_to_primitive(&primitive_to_conserved(&s, &p).unwrap(), &p).unwrap();
            prop_assert!(rel(back.theta, s.theta) < 1e-12);
            prop_assert!(rel(back.rho, s.rho) < 1e-15);
            for k in 0..3 {
                prop_assert!((back.u[k] - s.u[k]).abs() <= 1e-12 * (1.0 + s.u[k].abs()));
            }
        }

        /// Closed-form partials against central differences; the Richardson
        /// ratio of errors at h and h/2 must be close to 4 (second order).
        #[test]
        fn partials_match_central_differences(s in state_strategy(), p in params_strategy()) {
            let d = pressure_partials(&s, &p).unwrap();
            let pr = |s: PrimitiveState| pressure_unchecked(&s, &p);
            let en = |s: PrimitiveState| internal_energy_unchecked(&s, &p);
            let check = |f: &dyn Fn(f64) -> f64, x0: f64, exact: f64| {
                let h = 1e-2 * (1.0 + x0.abs());
                let fd = |h: f64| (f(x0 + h) - f(x0 - h)) / (2.0 * h);
                let e1 = (fd(h) - exact).abs();
                let e2 = (fd(h / 2.0) - exact).abs();
                // exact when the function is polynomial of degree <= 2 in x
                e2 <= 1e-9 * (1.0 + exact.abs()) || (e1 / e2 > 3.5 && e1 / e2 < 4.5)
            };
            let ok = check(&|r| pr(PrimitiveState { rho: r, ..s }), s.rho, d.p_rho);
            prop_assert!(ok);
            let ok = check(&|t| pr(PrimitiveState { theta: t, ..s }), s.theta, d.p_theta);
            prop_assert!(ok);
            let ok = check(&|v| pr(PrimitiveState { s2: v, ..s }), s.s2, d.p_s2);
            prop_assert!(ok);
            let ok = check(&|t| en(PrimitiveState { theta: t, ..s }), s.theta, d.e_theta);
            prop_assert!(ok);
            let ok = check(&|r| en(PrimitiveState { rho: r, ..s }), s.rho, d.e_rho);
            prop_assert!(ok);
            for k in 0..3 {
                let f = move |v: f64| { let mut t = s; t.q[k] = v; pr(t) };
                prop_assert!(check(&f, s.q[k], d.p_q[k]));
            }
        }
    }
}
