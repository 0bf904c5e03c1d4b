//! Uniform Cartesian meshes in one to three dimensions.
//!
//! Cells are stored in row-major order with the first axis fastest. Ghost
//! cells are not materialised: neighbour lookups past an edge either wrap
//! (periodic) or resolve to a fixed exterior state, which is equivalent to a
//! ghost layer of any width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermo::Vec3;

/// Minimum number of cells per active axis.
pub const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
    /// Frozen exterior state (the rest state unless configured otherwise).
    Constant,
}

/// Serializable description used by run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cells: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub boundary: Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Neighbor {
    Cell(usize),
    Exterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub cells: [usize; 3],
    pub lower: Vec3,
    pub dx: Vec3,
    pub boundary: Boundary,
}

impl Grid {
    pub fn new(dim: usize, cells: &[usize], lower: &[f64], upper: &[f64], boundary: Boundary) -> Result<Self> {
        let mut errs = Vec::new();
        if !(1..=3).contains(&dim) {
            return Err(Error::Params(format!("grid.dim: expected 1, 2 or 3, got {dim}")));
        }
        for (name, len) in [("cells", cells.len()), ("lower", lower.len()), ("upper", upper.len())] {
            if len != dim {
                errs.push(format!("grid.{name}: expected {dim} entries, got {len}"));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let mut g = Grid {
            dim,
            cells: [1; 3],
            lower: [0.0; 3],
            dx: [1.0; 3],
            boundary,
        };
        for a in 0..dim {
            if cells[a] < MIN_CELLS {
                errs.push(format!("grid.cells[{a}]: need at least {MIN_CELLS}, got {}", cells[a]));
            }
            if !(upper[a] > lower[a]) {
                errs.push(format!("grid.upper[{a}]: must exceed lower ({} <= {})", upper[a], lower[a]));
            }
            g.cells[a] = cells[a];
            g.lower[a] = lower[a];
            g.dx[a] = (upper[a] - lower[a]) / cells[a].max(1) as f64;
        }
        if errs.is_empty() {
            Ok(g)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn from_spec(spec: &GridSpec, dim: usize) -> Result<Self> {
        Self::new(dim, &spec.cells, &spec.lower, &spec.upper, spec.boundary)
    }

    /// Cube `[-half, half]^dim` with `n` cells per axis.
    pub fn centered(dim: usize, n: usize, half: f64, boundary: Boundary) -> Result<Self> {
        Self::new(dim, &vec![n; dim], &vec![-half; dim], &vec![half; dim], boundary)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            cells: self.cells[..self.dim].to_vec(),
            lower: self.lower[..self.dim].to_vec(),
            upper: (0..self.dim).map(|a| self.upper(a)).collect(),
            boundary: self.boundary,
        }
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.lower[axis] + self.dx[axis] * self.cells[axis] as f64
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1] * self.cells[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx[..self.dim].iter().product()
    }

    pub fn min_dx(&self) -> f64 {
        self.dx[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.cells[0] * (ijk[1] + self.cells[1] * ijk[2])
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.cells[0];
        let r = idx / self.cells[0];
        [i, r % self.cells[1], r / self.cells[1]]
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let c = self.coords(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.lower[a] + (c[a] as f64 + 0.5) * self.dx[a];
        }
        x
    }

    /// The cell `offset` steps along `axis` from `idx`.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> Neighbor {
        let mut c = self.coords(idx);
        let n = self.cells[axis] as isize;
        let j = c[axis] as isize + offset;
        if (0..n).contains(&j) {
            c[axis] = j as usize;
        } else {
            match self.boundary {
                Boundary::Periodic => c[axis] = j.rem_euclid(n) as usize,
                Boundary::Constant => return Neighbor::Exterior,
            }
        }
        Neighbor::Cell(self.index(c))
    }

    /// Largest distance from the origin of any cell centre in `cells`.
    pub fn radius_of<I: IntoIterator<Item = usize>>(&self, cells: I) -> f64 {
        cells
            .into_iter()
            .map(|i| {
                let x = self.center(i);
                (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }
}
