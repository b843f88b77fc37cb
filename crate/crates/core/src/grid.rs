//! Uniform chart grids and multi-component fields on them.

use crate::immersion::ChartDomain;

/// Node `(i, j)` sits at `(u_min + i du, v_min + j dv)`; `j` varies fastest in storage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub domain: ChartDomain,
    pub nu: usize,
    pub nv: usize,
    pub du: f64,
    pub dv: f64,
}

impl Grid {
    pub fn new(domain: ChartDomain) -> Self {
        let du = (domain.u_max - domain.u_min) / (domain.nu - 1) as f64;
        let dv = (domain.v_max - domain.v_min) / (domain.nv - 1) as f64;
        Self {
            domain,
            nu: domain.nu,
            nv: domain.nv,
            du,
            dv,
        }
    }

    pub fn len(&self) -> usize {
        self.nu * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nv + j
    }

    pub fn ij(&self, n: usize) -> (usize, usize) {
        (n / self.nv, n % self.nv)
    }

    pub fn u(&self, i: usize) -> f64 {
        self.domain.u_min + i as f64 * self.du
    }

    pub fn v(&self, j: usize) -> f64 {
        self.domain.v_min + j as f64 * self.dv
    }

    pub fn step(&self, a: usize) -> f64 {
        if a == 0 {
            self.du
        } else {
            self.dv
        }
    }

    /// Nearest node to a chart point.
    pub fn nearest(&self, u: f64, v: f64) -> (usize, usize) {
        let i = ((u - self.domain.u_min) / self.du)
            .round()
            .clamp(0.0, (self.nu - 1) as f64) as usize;
        let j = ((v - self.domain.v_min) / self.dv)
            .round()
            .clamp(0.0, (self.nv - 1) as f64) as usize;
        (i, j)
    }

    /// All nodes at least `m` cells away from the boundary.
    pub fn interior(&self, m: usize) -> Region {
        Region {
            i0: m,
            i1: self.nu.saturating_sub(m),
            j0: m,
            j1: self.nv.saturating_sub(m),
        }
    }

    /// Nodes inside the chart rectangle shrunk by `frac` of each side length.
    ///
    /// For nested odd resolutions this selects the same physical points on every grid.
    pub fn inset(&self, frac: f64) -> Region {
        let d = &self.domain;
        let (su, sv) = (frac * (d.u_max - d.u_min), frac * (d.v_max - d.v_min));
        let lo = |h: f64, off: f64| (off / h - 1e-9).ceil().max(0.0) as usize;
        let i0 = lo(self.du, su);
        let j0 = lo(self.dv, sv);
        Region {
            i0,
            i1: self.nu - i0,
            j0,
            j1: self.nv - j0,
        }
    }
}

/// Half-open index rectangle `[i0, i1) × [j0, j1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Region {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && i < self.i1 && j >= self.j0 && j < self.j1
    }

    pub fn is_empty(&self) -> bool {
        self.i0 >= self.i1 || self.j0 >= self.j1
    }

    pub fn intersect(&self, o: &Region) -> Region {
        Region {
            i0: self.i0.max(o.i0),
            i1: self.i1.min(o.i1),
            j0: self.j0.max(o.j0),
            j1: self.j1.min(o.j1),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (j0, j1) = (self.j0, self.j1);
        (self.i0..self.i1).flat_map(move |i| (j0..j1).map(move |j| (i, j)))
    }
}

/// `dim` values per grid node, valid on nodes at least `margin` cells from the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub dim: usize,
    pub nu: usize,
    pub nv: usize,
    pub margin: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid, dim: usize, margin: usize) -> Self {
        Self {
            dim,
            nu: grid.nu,
            nv: grid.nv,
            margin,
            data: vec![0.0; grid.len() * dim],
        }
    }

    pub fn zeros_like(other: &Field, dim: usize) -> Field {
        Field {
            dim,
            nu: other.nu,
            nv: other.nv,
            margin: other.margin,
            data: vec![0.0; other.nu * other.nv * dim],
        }
    }

    pub fn from_fn(
        grid: &Grid,
        dim: usize,
        margin: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Self {
        let mut out = Self::zeros(grid, dim, margin);
        for (i, j) in grid.interior(margin).iter() {
            let n = grid.idx(i, j);
            f(i, j, &mut out.data[n * dim..(n + 1) * dim]);
        }
        out
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let n = i * self.nv + j;
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let n = i * self.nv + j;
        &mut self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn valid(&self) -> Region {
        Region {
            i0: self.margin,
            i1: self.nu.saturating_sub(self.margin),
            j0: self.margin,
            j1: self.nv.saturating_sub(self.margin),
        }
    }

    /// Largest Euclidean norm of the per-node component vector over `region ∩ valid`.
    pub fn sup_norm(&self, region: &Region) -> f64 {
        let r = region.intersect(&self.valid());
        r.iter()
            .map(|(i, j)| norm(self.at(i, j)))
            .fold(0.0, f64::max)
    }

    /// Largest absolute component over `region ∩ valid`.
    pub fn max_abs(&self, region: &Region) -> f64 {
        let r = region.intersect(&self.valid());
        r.iter()
            .flat_map(|(i, j)| self.at(i, j).iter().map(|x| x.abs()))
            .fold(0.0, f64::max)
    }

    pub fn combine(&self, other: &Field, mut f: impl FnMut(f64, f64) -> f64) -> Field {
        assert_eq!(self.dim, other.dim);
        Field {
            dim: self.dim,
            nu: self.nu,
            nv: self.nv,
            margin: self.margin.max(other.margin),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.combine(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.combine(other, |a, b| a + b)
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field {
            data: self.data.iter().map(|x| x * s).collect(),
            ..self.clone()
        }
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid::new(ChartDomain::new(-1.0, 1.0, -2.0, 2.0, n, n).unwrap())
    }

    #[test]
    fn inset_regions_are_nested_across_resolutions() {
        let (g1, g2, g3) = (grid(33), grid(65), grid(129));
        let (r1, r2, r3) = (g1.inset(0.125), g2.inset(0.125), g3.inset(0.125));
        assert_eq!(r1.i0, 4);
        assert!((g1.u(r1.i0) - g2.u(r2.i0)).abs() < 1e-14);
        assert!((g1.v(r1.j1 - 1) - g3.v(r3.j1 - 1)).abs() < 1e-14);
    }

    #[test]
    fn indexing_round_trips() {
        let g = grid(9);
        for n in 0..g.len() {
            let (i, j) = g.ij(n);
            assert_eq!(g.idx(i, j), n);
        }
        assert_eq!(g.nearest(0.0, 0.0), (4, 4));
    }

    #[test]
    fn sup_norm_respects_margin() {
        let g = grid(9);
        let mut f = Field::zeros(&g, 2, 1);
        f.at_mut(0, 0)[0] = 100.0;
        f.at_mut(3, 3)[1] = -2.0;
        assert_eq!(f.sup_norm(&g.interior(0)), 2.0);
    }
}
