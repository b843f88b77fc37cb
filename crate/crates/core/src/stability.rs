//! The second-variation form on a patch with zero boundary values, its
//! smallest generalized eigenvalue, and the special-variation inequality.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::banded::{BandMatrix, BandedCholesky};
use crate::complex::NormalComplexStructure;
use crate::error::{LabError, Result};
use crate::frames::{FramePackage, SecondFundamentalForm};
use crate::grid::{Field, Grid, Region};
use crate::immersion::dot;
use crate::variation::{check_support, normal_projection_constant, q_direct, EdgeQuadrature};

/// Neighbour offsets `(di, dj)` of the 3×3 stencil, in storage order.
const STENCIL: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn stencil_slot(di: isize, dj: isize) -> usize {
    ((di + 1) * 3 + (dj + 1)) as usize
}

/// `K` (Dirichlet energy), `P` (potential) and `M` (mass) on the unknowns of `interior(1)`.
///
/// Unknowns are ordered node-major (rows `i`, then columns `j`), then by normal index.
/// `K` is stored as one `r×r` block per unknown node and stencil neighbour; `P` as one
/// block per node; `M` is diagonal with one weight per node.
#[derive(Debug, Clone)]
pub struct DiscretizedJacobiForm {
    pub grid: Grid,
    pub r: usize,
    pub unknowns: Region,
    pub k: Vec<f64>,
    pub p: Vec<f64>,
    pub m: Vec<f64>,
}

impl DiscretizedJacobiForm {
    pub fn nodes(&self) -> usize {
        (self.unknowns.i1 - self.unknowns.i0) * (self.unknowns.j1 - self.unknowns.j0)
    }

    pub fn dofs(&self) -> usize {
        self.nodes() * self.r
    }

    fn width(&self) -> usize {
        self.unknowns.j1 - self.unknowns.j0
    }

    /// Unknown node index of grid node `(i, j)`, if it carries unknowns.
    pub fn node_index(&self, i: usize, j: usize) -> Option<usize> {
        self.unknowns
            .contains(i, j)
            .then(|| (i - self.unknowns.i0) * self.width() + (j - self.unknowns.j0))
    }

    fn node_ij(&self, n: usize) -> (usize, usize) {
        (
            self.unknowns.i0 + n / self.width(),
            self.unknowns.j0 + n % self.width(),
        )
    }

    fn neighbour(&self, n: usize, slot: usize) -> Option<usize> {
        let (i, j) = self.node_ij(n);
        let (di, dj) = STENCIL[slot];
        let (ii, jj) = (i as isize + di, j as isize + dj);
        if ii < 0 || jj < 0 {
            return None;
        }
        self.node_index(ii as usize, jj as usize)
    }

    /// Half-bandwidth of the dof ordering.
    pub fn bandwidth(&self) -> usize {
        (self.width() + 1) * self.r + self.r - 1
    }

    pub fn to_vector(&self, s: &Field) -> Vec<f64> {
        let r = self.r;
        let mut x = vec![0.0; self.dofs()];
        for n in 0..self.nodes() {
            let (i, j) = self.node_ij(n);
            x[n * r..(n + 1) * r].copy_from_slice(s.at(i, j));
        }
        x
    }

    pub fn to_field(&self, x: &[f64]) -> Field {
        let mut f = Field::zeros(&self.grid, self.r, 0);
        for n in 0..self.nodes() {
            let (i, j) = self.node_ij(n);
            f.at_mut(i, j)
                .copy_from_slice(&x[n * self.r..(n + 1) * self.r]);
        }
        f
    }

    /// `y = (K − P − σM) x`.
    pub fn apply_shifted(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let r = self.r;
        let rr = r * r;
        let mut y = vec![0.0; x.len()];
        for n in 0..self.nodes() {
            let yn = &mut y[n * r..(n + 1) * r];
            for slot in 0..9 {
                if let Some(q) = self.neighbour(n, slot) {
                    let blk = &self.k[(n * 9 + slot) * rr..(n * 9 + slot + 1) * rr];
                    let xq = &x[q * r..(q + 1) * r];
                    for be in 0..r {
                        yn[be] += dot(&blk[be * r..(be + 1) * r], xq);
                    }
                }
            }
            let pb = &self.p[n * rr..(n + 1) * rr];
            let xn = &x[n * r..(n + 1) * r];
            for be in 0..r {
                yn[be] -= dot(&pb[be * r..(be + 1) * r], xn) + sigma * self.m[n] * xn[be];
            }
        }
        y
    }

    pub fn apply_mass(&self, x: &[f64]) -> Vec<f64> {
        let r = self.r;
        x.iter()
            .enumerate()
            .map(|(k, v)| self.m[k / r] * v)
            .collect()
    }

    /// `sᵀ(K − P)s` for a section given as a grid field.
    pub fn quadratic(&self, s: &Field) -> f64 {
        let x = self.to_vector(s);
        dot(&x, &self.apply_shifted(&x, 0.0))
    }

    /// `max |(K−P)_{pq} − (K−P)_{qp}|` over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let r = self.r;
        let rr = r * r;
        let mut worst: f64 = 0.0;
        for n in 0..self.nodes() {
            for slot in 0..9 {
                let Some(q) = self.neighbour(n, slot) else {
                    continue;
                };
                let back = 8 - slot;
                for be in 0..r {
                    for al in 0..r {
                        let a = self.k[(n * 9 + slot) * rr + be * r + al];
                        let b = self.k[(q * 9 + back) * rr + al * r + be];
                        worst = worst.max((a - b).abs());
                    }
                }
            }
            let pb = &self.p[n * rr..(n + 1) * rr];
            for be in 0..r {
                for al in 0..r {
                    worst = worst.max((pb[be * r + al] - pb[al * r + be]).abs());
                }
            }
        }
        worst
    }

    /// Largest `‖G(x)‖` for the pointwise potential `G = Σ_ij A_ij A_ijᵀ`, bounded by its trace.
    pub fn potential_bound(&self) -> f64 {
        let r = self.r;
        let rr = r * r;
        (0..self.nodes())
            .map(|n| {
                let w = self.m[n];
                if w == 0.0 {
                    0.0
                } else {
                    (0..r).map(|a| self.p[n * rr + a * r + a]).sum::<f64>() / w
                }
            })
            .fold(0.0, f64::max)
    }

    /// `K − P − σM` in band storage.
    pub fn banded(&self, sigma: f64) -> BandMatrix {
        let r = self.r;
        let rr = r * r;
        let mut a = BandMatrix::zeros(self.dofs(), self.bandwidth());
        for n in 0..self.nodes() {
            for slot in 0..9 {
                let Some(q) = self.neighbour(n, slot) else {
                    continue;
                };
                if q > n {
                    continue;
                }
                let blk = &self.k[(n * 9 + slot) * rr..(n * 9 + slot + 1) * rr];
                for be in 0..r {
                    for al in 0..r {
                        let (row, col) = (n * r + be, q * r + al);
                        if col <= row {
                            a.add(row, col, blk[be * r + al]);
                        }
                    }
                }
            }
            for be in 0..r {
                for al in 0..=be {
                    a.add(n * r + be, n * r + al, -self.p[n * rr + be * r + al]);
                }
                a.add(n * r + be, n * r + be, -sigma * self.m[n]);
            }
        }
        a
    }
}

/// Builds `K`, `P` and `M` with the same edge quadrature as the direct second-variation evaluation.
pub fn assemble_form(
    fp: &FramePackage,
    sff: &SecondFundamentalForm,
) -> Result<DiscretizedJacobiForm> {
    let grid = fp.grid;
    if grid.nu < 5 || grid.nv < 5 {
        return Err(LabError::GridTooCoarse(format!(
            "{}x{} grid has fewer than 4 cells per direction",
            grid.nu, grid.nv
        )));
    }
    let r = fp.r;
    let rr = r * r;
    let quad = EdgeQuadrature::new(fp, sff);
    let unknowns = grid.interior(1);
    let mut form = DiscretizedJacobiForm {
        grid,
        r,
        unknowns,
        k: Vec::new(),
        p: Vec::new(),
        m: Vec::new(),
    };
    let nodes = form.nodes();
    form.k = vec![0.0; nodes * 9 * rr];
    form.p = vec![0.0; nodes * rr];
    form.m = vec![0.0; nodes];
    let loc = 4 * r;
    for i in 0..grid.nu - 1 {
        for j in 0..grid.nv - 1 {
            // local nodes in the order (i,j), (i+1,j), (i,j+1), (i+1,j+1)
            let cell = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)];
            let mut local = vec![0.0; loc * loc];
            for (c, corner) in quad.cell_corners(fp, i, j).iter().enumerate() {
                let (ci, cj) = (c % 2, c / 2);
                let mut bu = vec![0.0; r * loc];
                let mut bv = vec![0.0; r * loc];
                let opu = quad.edge_operator(fp, 0, corner.u_edge.0, corner.u_edge.1);
                let opv = quad.edge_operator(fp, 1, corner.v_edge.0, corner.v_edge.1);
                let (u0, u1) = (cj * 2, cj * 2 + 1);
                let (v0, v1) = (ci, ci + 2);
                for be in 0..r {
                    for al in 0..r {
                        bu[be * loc + u0 * r + al] = opu[be * 2 * r + al];
                        bu[be * loc + u1 * r + al] = opu[be * 2 * r + r + al];
                        bv[be * loc + v0 * r + al] = opv[be * 2 * r + al];
                        bv[be * loc + v1 * r + al] = opv[be * 2 * r + r + al];
                    }
                }
                let g = corner.ginv;
                for p in 0..loc {
                    for q in p..loc {
                        let mut acc = 0.0;
                        for be in 0..r {
                            let (up, uq) = (bu[be * loc + p], bu[be * loc + q]);
                            let (vp, vq) = (bv[be * loc + p], bv[be * loc + q]);
                            acc += g[0] * up * uq + g[1] * (up * vq + vp * uq) + g[2] * vp * vq;
                        }
                        local[p * loc + q] += corner.weight * acc;
                    }
                }
            }
            for p in 0..loc {
                let Some(np) = form.node_index(cell[p / r].0, cell[p / r].1) else {
                    continue;
                };
                for q in p..loc {
                    let Some(nq) = form.node_index(cell[q / r].0, cell[q / r].1) else {
                        continue;
                    };
                    let v = local[p * loc + q];
                    let (ip, jp) = cell[p / r];
                    let (iq, jq) = cell[q / r];
                    let fwd = stencil_slot(iq as isize - ip as isize, jq as isize - jp as isize);
                    let (bp, bq) = (p % r, q % r);
                    form.k[(np * 9 + fwd) * rr + bp * r + bq] += v;
                    if p != q {
                        form.k[(nq * 9 + (8 - fwd)) * rr + bq * r + bp] += v;
                    }
                }
            }
        }
    }
    for n in 0..nodes {
        let (i, j) = form.node_ij(n);
        let node = grid.idx(i, j);
        form.m[n] = quad.node_weight[node];
        for k in 0..rr {
            form.p[n * rr + k] = quad.node_weight[node] * quad.potential[node * rr + k];
        }
    }
    Ok(form)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub block: usize,
    pub seed: u64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 500,
            block: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub lambda_min: f64,
    /// Ritz values of the final block, ascending.
    pub ritz_values: Vec<f64>,
    pub eigen_section: Field,
    pub iterations: usize,
    /// `‖(K − P − λM)x‖ / ‖x‖`.
    pub residual_norm: f64,
    pub shift: f64,
    pub dofs: usize,
}

/// Smallest `λ` of `(K − P)x = λMx` by shift-and-invert block subspace iteration.
///
/// The first start vector is all ones (M-normalized); the rest are seeded random.
pub fn smallest_eigenvalue(
    form: &DiscretizedJacobiForm,
    opts: &SpectrumOptions,
) -> Result<SpectrumResult> {
    let n = form.dofs();
    let b = opts.block.min(n).max(1);
    let sigma = -(1.0 + form.potential_bound());
    let chol = BandedCholesky::factor(form.banded(sigma))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = DMatrix::<f64>::zeros(n, b);
    for c in 0..b {
        for k in 0..n {
            x[(k, c)] = if c == 0 {
                1.0
            } else {
                rng.random::<f64>() - 0.5
            };
        }
    }
    let mnorm = |v: &[f64]| dot(v, &form.apply_mass(v)).sqrt();
    for c in 0..b {
        let s = mnorm(x.column(c).as_slice());
        x.column_mut(c).scale_mut(1.0 / s);
    }
    let mut best = (f64::NAN, f64::INFINITY);
    for it in 1..=opts.max_iterations {
        let mut y = DMatrix::<f64>::zeros(n, b);
        for c in 0..b {
            let mut col = form.apply_mass(x.column(c).as_slice());
            chol.solve_in_place(&mut col);
            y.column_mut(c).copy_from_slice(&col);
        }
        let ay: Vec<Vec<f64>> = (0..b)
            .map(|c| form.apply_shifted(y.column(c).as_slice(), 0.0))
            .collect();
        let my: Vec<Vec<f64>> = (0..b)
            .map(|c| form.apply_mass(y.column(c).as_slice()))
            .collect();
        let mut ah = DMatrix::<f64>::zeros(b, b);
        let mut mh = DMatrix::<f64>::zeros(b, b);
        for p in 0..b {
            for q in p..b {
                let yp = y.column(p);
                let a = dot(yp.as_slice(), &ay[q]);
                let m = dot(yp.as_slice(), &my[q]);
                ah[(p, q)] = a;
                ah[(q, p)] = a;
                mh[(p, q)] = m;
                mh[(q, p)] = m;
            }
        }
        // M̂^{-1/2} through its eigendecomposition
        let me = SymmetricEigen::new(mh);
        let floor = me.eigenvalues.max() * 1e-14;
        let keep: Vec<usize> = (0..b).filter(|&k| me.eigenvalues[k] > floor).collect();
        let mut w = DMatrix::<f64>::zeros(b, keep.len());
        for (c, &k) in keep.iter().enumerate() {
            w.set_column(c, &(me.eigenvectors.column(k) / me.eigenvalues[k].sqrt()));
        }
        let reduced = w.transpose() * &ah * &w;
        let re = SymmetricEigen::new(0.5 * (&reduced + reduced.transpose()));
        let mut order: Vec<usize> = (0..keep.len()).collect();
        order.sort_by(|&p, &q| re.eigenvalues[p].total_cmp(&re.eigenvalues[q]));
        let coeffs = &w * &re.eigenvectors;
        let mut next = DMatrix::<f64>::zeros(n, b);
        for (c, &k) in order.iter().enumerate() {
            next.set_column(c, &(&y * coeffs.column(k)));
        }
        for c in order.len()..b {
            for k in 0..n {
                next[(k, c)] = rng.random::<f64>() - 0.5;
            }
            let s = mnorm(next.column(c).as_slice());
            next.column_mut(c).scale_mut(1.0 / s);
        }
        x = next;
        let lambda = re.eigenvalues[order[0]];
        let x0: Vec<f64> = x.column(0).iter().copied().collect();
        let ax = form.apply_shifted(&x0, lambda);
        let res = DVector::from_vec(ax).norm() / DVector::from_column_slice(&x0).norm();
        if res < best.1 {
            best = (lambda, res);
        }
        if res <= opts.tolerance {
            let ritz: Vec<f64> = order.iter().map(|&k| re.eigenvalues[k]).collect();
            let mut v = x0;
            let big = v
                .iter()
                .copied()
                .fold(0.0f64, |m, t| if t.abs() > m.abs() { t } else { m });
            if big < 0.0 {
                v.iter_mut().for_each(|t| *t = -*t);
            }
            return Ok(SpectrumResult {
                lambda_min: lambda,
                ritz_values: ritz,
                eigen_section: form.to_field(&v),
                iterations: it,
                residual_norm: res,
                shift: sigma,
                dofs: n,
            });
        }
    }
    Err(LabError::NoConvergence {
        iterations: opts.max_iterations,
        estimate: best.0,
        residual: best.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpecialVariation {
    /// `δ²V(f J_N a⊥, f J_N a⊥)` by the edge quadrature.
    pub second_variation: f64,
    /// `∫ |∇f|²|a⊥|² + f² q(a)`.
    pub middle: f64,
    /// `∫ |∇f|² + f² q(a)`.
    pub upper: f64,
    /// `middle − second_variation`, which vanishes in the continuum.
    pub identity_gap: f64,
    /// `upper − middle ≥ 0` when `|a| ≤ 1`.
    pub slack: f64,
}

/// Evaluates the chain `δ²V(f J_N a⊥, f J_N a⊥) = ∫(|∇f|²|a⊥|² + f²q(a)) ≤ ∫(|∇f|² + f²q(a))`.
///
/// `f` must vanish within two cells of the boundary.
pub fn special_variation_inequality(
    a: &[f64],
    f: &Field,
    fp: &FramePackage,
    sff: &SecondFundamentalForm,
    jn: &NormalComplexStructure,
) -> Result<SpecialVariation> {
    check_support(f, 2)?;
    let r = fp.r;
    let grid = &fp.grid;
    let s = normal_projection_constant(a, fp);
    let q = q_direct(a, sff, jn, fp);
    let fs = Field::from_fn(grid, r, 0, |i, j, out| {
        let jm = jn.jn.at(i, j);
        let sv = s.at(i, j);
        let fv = f.at(i, j)[0];
        for be in 0..r {
            out[be] = fv * (0..r).map(|al| jm[be * r + al] * sv[al]).sum::<f64>();
        }
    });
    let quad = EdgeQuadrature::new(fp, sff);
    let second_variation = quad.dirichlet(fp, &fs) - quad.potential_energy(&fs);
    let (mut middle, mut upper) = (0.0, 0.0);
    for (i, j) in grid.interior(1).iter() {
        let node = grid.idx(i, j);
        let fv = f.at(i, j)[0];
        let fu = (f.at(i + 1, j)[0] - f.at(i - 1, j)[0]) / (2.0 * grid.du);
        let fw = (f.at(i, j + 1)[0] - f.at(i, j - 1)[0]) / (2.0 * grid.dv);
        let gi = fp.ginv[node];
        let grad2 = gi[0] * fu * fu + 2.0 * gi[1] * fu * fw + gi[2] * fw * fw;
        let sv = s.at(i, j);
        let w = quad.node_weight[node];
        let pot = fv * fv * q.at(i, j)[0];
        middle += w * (grad2 * dot(sv, sv) + pot);
        upper += w * (grad2 + pot);
    }
    Ok(SpecialVariation {
        second_variation,
        middle,
        upper,
        identity_gap: middle - second_variation,
        slack: upper - middle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::catalog_jn;
    use crate::frames::{compute_frames, second_fundamental_form};
    use crate::immersion::builtin_surface;
    use crate::variation::{bump_field, second_variation_direct};
    use std::collections::BTreeMap;

    fn setup(
        name: &str,
        pairs: &[(&str, &str)],
        n: usize,
    ) -> (FramePackage, SecondFundamentalForm) {
        let p: BTreeMap<String, String> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let patch = builtin_surface(name, &p)
            .unwrap()
            .with_resolution(n, n)
            .unwrap();
        let fp = compute_frames(&patch).unwrap();
        let sff = second_fundamental_form(&fp);
        (fp, sff)
    }

    #[test]
    fn plane_stiffness_is_the_five_point_laplacian() {
        let (fp, sff) = setup("plane_k", &[("k", "1")], 9);
        let form = assemble_form(&fp, &sff).unwrap();
        assert_eq!(form.symmetry_defect(), 0.0);
        assert!(form.p.iter().all(|x| *x == 0.0));
        let n = form.node_index(4, 4).unwrap();
        let blk = |slot: usize| form.k[(n * 9 + slot) * 4];
        assert!((blk(stencil_slot(0, 0)) - 4.0).abs() < 1e-14);
        assert!((blk(stencil_slot(1, 0)) + 1.0).abs() < 1e-14);
        assert!(blk(stencil_slot(1, 1)).abs() < 1e-14);
        // normal components decouple
        assert_eq!(form.k[(n * 9 + 4) * 4 + 1], 0.0);
    }

    #[test]
    fn assembled_form_matches_direct_quadrature() {
        let (fp, sff) = setup("catenoid_r6", &[], 17);
        let form = assemble_form(&fp, &sff).unwrap();
        assert_eq!(form.symmetry_defect(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Field::from_fn(&fp.grid, fp.r, 1, |_, _, out| {
            out.iter_mut().for_each(|x| *x = rng.random::<f64>() - 0.5)
        });
        let direct = second_variation_direct(&s, &fp, &sff).unwrap();
        assert!((form.quadratic(&s) - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn flat_spectrum_approaches_the_dirichlet_value() {
        let (fp, sff) = setup("plane_k", &[("k", "1")], 33);
        let form = assemble_form(&fp, &sff).unwrap();
        let res = smallest_eigenvalue(&form, &SpectrumOptions::default()).unwrap();
        let exact = std::f64::consts::PI.powi(2) / 2.0;
        assert!((res.lambda_min - exact).abs() / exact < 0.01);
        assert!(res.residual_norm <= 1e-9);
    }

    #[test]
    fn plane_special_variation_gap_is_second_order() {
        let gap = |n: usize| {
            let (fp, sff) = setup("plane_k", &[("k", "1")], n);
            let patch = builtin_surface("plane_k", &BTreeMap::new())
                .unwrap()
                .with_resolution(n, n)
                .unwrap();
            let jn = catalog_jn(&patch, &fp);
            let f = bump_field(&fp, (0.0, 0.0), (0.7, 0.7));
            let sv =
                special_variation_inequality(&[0.0, 0.0, 1.0, 0.0], &f, &fp, &sff, &jn).unwrap();
            assert!(sv.slack.abs() < 1e-12 && sv.second_variation > 0.0);
            sv.identity_gap.abs()
        };
        let (g1, g2) = (gap(33), gap(65));
        assert!(g1 / g2 > 3.5, "{g1} {g2}");
    }
}
