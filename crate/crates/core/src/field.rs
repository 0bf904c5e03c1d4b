//! Cell-averaged conserved fields on a [`Grid`].
//!
//! Each cell stores `2n + 3` values `(ρ, ρu_1..ρu_n, 𝓔, q_1..q_n, S2)`
//! contiguously.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Neighbor};
use crate::sum::NeumaierSum;
use crate::thermo::{
    conserved_to_primitive, primitive_to_conserved, ConservedState, ModelParams, PrimitiveState,
    Vec3,
};

/// Offsets of the conserved unknowns inside one cell record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vars {
    pub n: usize,
}

impl Vars {
    pub const RHO: usize = 0;
    #[inline]
    pub fn mom(&self, i: usize) -> usize {
        1 + i
    }
    #[inline]
    pub fn etot(&self) -> usize {
        self.n + 1
    }
    #[inline]
    pub fn q(&self, i: usize) -> usize {
        self.n + 2 + i
    }
    #[inline]
    pub fn s2(&self) -> usize {
        2 * self.n + 2
    }
    #[inline]
    pub fn len(&self) -> usize {
        2 * self.n + 3
    }

    pub fn pack(&self, c: &ConservedState, out: &mut [f64]) {
        out[Self::RHO] = c.rho;
        for i in 0..self.n {
            out[self.mom(i)] = c.mom[i];
            out[self.q(i)] = c.q[i];
        }
        out[self.etot()] = c.etot;
        out[self.s2()] = c.s2;
    }

    pub fn unpack(&self, v: &[f64]) -> ConservedState {
        let mut mom = [0.0; 3];
        let mut q = [0.0; 3];
        for i in 0..self.n {
            mom[i] = v[self.mom(i)];
            q[i] = v[self.q(i)];
        }
        ConservedState {
            rho: v[Self::RHO],
            mom,
            etot: v[self.etot()],
            q,
            s2: v[self.s2()],
        }
    }
}

/// Domain totals of the conserved quantities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub mass: f64,
    pub momentum: Vec3,
    pub energy: f64,
}

impl Totals {
    /// Largest relative drift against `reference`; each component is scaled
    /// by its reference magnitude (momentum by at least sqrt(2 M E)).
    pub fn max_relative_drift(&self, reference: &Totals) -> f64 {
        let rel = |a: f64, b: f64, floor: f64| (a - b).abs() / b.abs().max(floor).max(1e-300);
        let mut d = rel(self.mass, reference.mass, 0.0).max(rel(self.energy, reference.energy, 0.0));
        // total momentum often vanishes by symmetry; measure it against the
        // momentum scale sqrt(2 M E) instead of its own roundoff
        let p_scale = (2.0 * reference.mass.abs() * reference.energy.abs()).sqrt();
        for i in 0..3 {
            d = d.max(rel(self.momentum[i], reference.momentum[i], p_scale));
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub t: f64,
    pub data: Vec<f64>,
    /// Conserved state used for exterior neighbours of constant boundaries.
    pub exterior: Vec<f64>,
}

impl Field {
    pub fn vars(&self) -> Vars {
        Vars { n: self.grid.dim }
    }

    pub fn nvar(&self) -> usize {
        2 * self.grid.dim + 3
    }

    /// Rest state everywhere, rest-state exterior.
    pub fn equilibrium(grid: Grid, p: &ModelParams) -> Result<Self> {
        Self::from_primitive(grid, p, |_| PrimitiveState::equilibrium())
    }

    /// Samples `init` at cell centres.
    pub fn from_primitive<F>(grid: Grid, p: &ModelParams, init: F) -> Result<Self>
    where
        F: Fn(Vec3) -> PrimitiveState + Sync,
    {
        if grid.dim != p.dim {
            return Err(Error::Params(format!(
                "grid dimension {} differs from model dimension {}",
                grid.dim, p.dim
            )));
        }
        let vars = Vars { n: grid.dim };
        let nv = vars.len();
        let mut data = vec![0.0; grid.len() * nv];
        let states: Vec<Result<ConservedState>> = (0..grid.len())
            .into_par_iter()
            .map(|i| primitive_to_conserved(&init(grid.center(i)), p))
            .collect();
        for (i, c) in states.into_iter().enumerate() {
            let c = c.map_err(|e| Error::Inadmissible {
                cell: i,
                reason: e.to_string(),
            })?;
            vars.pack(&c, &mut data[i * nv..(i + 1) * nv]);
        }
        let mut exterior = vec![0.0; nv];
        vars.pack(&primitive_to_conserved(&PrimitiveState::equilibrium(), p)?, &mut exterior);
        Ok(Self {
            grid,
            t: 0.0,
            data,
            exterior,
        })
    }

    #[inline]
    pub fn cell(&self, i: usize) -> &[f64] {
        let nv = self.nvar();
        &self.data[i * nv..(i + 1) * nv]
    }

    #[inline]
    pub fn neighbor_cell(&self, i: usize, axis: usize, offset: isize) -> &[f64] {
        match self.grid.neighbor(i, axis, offset) {
            Neighbor::Cell(j) => self.cell(j),
            Neighbor::Exterior => &self.exterior,
        }
    }

    pub fn conserved(&self, i: usize) -> ConservedState {
        self.vars().unpack(self.cell(i))
    }

    pub fn set_conserved(&mut self, i: usize, c: &ConservedState) {
        let v = self.vars();
        let nv = v.len();
        v.pack(c, &mut self.data[i * nv..(i + 1) * nv]);
    }

    pub fn primitive(&self, i: usize, p: &ModelParams) -> Result<PrimitiveState> {
        let c = self.conserved(i);
        conserved_to_primitive(&c, p).map_err(|e| Error::Inadmissible {
            cell: i,
            reason: format!("{e}; state {c:?}"),
        })
    }

    pub fn exterior_primitive(&self, p: &ModelParams) -> Result<PrimitiveState> {
        conserved_to_primitive(&self.vars().unpack(&self.exterior), p)
    }

    /// Primitive states of all cells; the error names the lowest failing
    /// cell index so failures are reproducible regardless of scheduling.
    pub fn primitives(&self, p: &ModelParams) -> Result<Vec<PrimitiveState>> {
        let out: Vec<Result<PrimitiveState>> =
            (0..self.grid.len()).into_par_iter().map(|i| self.primitive(i, p)).collect();
        out.into_iter().collect()
    }

    /// Primitive states, additionally checked against the admissible box.
    pub fn admissible_primitives(&self, p: &ModelParams) -> Result<Vec<PrimitiveState>> {
        let prims = self.primitives(p)?;
        let bad = prims
            .par_iter()
            .enumerate()
            .filter_map(|(i, s)| p.check_admissible(s).err().map(|r| (i, format!("{r}; state {s:?}"))))
            .min_by_key(|(i, _)| *i);
        match bad {
            Some((cell, reason)) => Err(Error::Inadmissible { cell, reason }),
            None => Ok(prims),
        }
    }

    pub fn totals(&self) -> Totals {
        let v = self.vars();
        let vol = self.grid.cell_volume();
        let mut mass = NeumaierSum::new();
        let mut energy = NeumaierSum::new();
        let mut mom = [NeumaierSum::new(); 3];
        for i in 0..self.grid.len() {
            let c = self.cell(i);
            mass.add(c[Vars::RHO]);
            energy.add(c[v.etot()]);
            for (k, m) in mom.iter_mut().enumerate().take(v.n) {
                m.add(c[v.mom(k)]);
            }
        }
        Totals {
            mass: mass.value() * vol,
            momentum: mom.map(|m| m.value() * vol),
            energy: energy.value() * vol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    #[test]
    fn pack_unpack() {
        let v = Vars { n: 2 };
        let c = ConservedState {
            rho: 1.0,
            mom: [2.0, 3.0, 0.0],
            etot: 4.0,
            q: [5.0, 6.0, 0.0],
            s2: 7.0,
        };
        let mut buf = [0.0; 7];
        v.pack(&c, &mut buf);
        assert_eq!(buf, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(v.unpack(&buf), c);
    }

    #[test]
    fn equilibrium_totals() {
        let p = ModelParams::unit(2);
        let g = Grid::new(2, &[8, 8], &[0.0, 0.0], &[2.0, 1.0], Boundary::Periodic).unwrap();
        let f = Field::equilibrium(g, &p).unwrap();
        let t = f.totals();
        assert!((t.mass - 2.0).abs() < 1e-14);
        assert!((t.energy - 2.0).abs() < 1e-14);
        assert_eq!(t.momentum, [0.0; 3]);
    }

    #[test]
    fn inadmissible_cell_is_named() {
        let p = ModelParams::unit(1);
        let g = Grid::new(1, &[8], &[0.0], &[1.0], Boundary::Periodic).unwrap();
        let f = Field::from_primitive(g, &p, |x| {
            let q = if x[0] > 0.5 { 0.5 } else { 0.0 };
            PrimitiveState::new(1.0, [0.0; 3], 1.0, [q, 0.0, 0.0], 0.0)
        })
        .unwrap();
        match f.admissible_primitives(&p) {
            Err(Error::Inadmissible { cell, .. }) => assert_eq!(cell, 4),
            other => panic!("{other:?}"),
        }
    }
}
