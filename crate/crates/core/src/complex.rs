//! Complex structures on the tangent and normal bundles, normal parallel
//! transport, and the search for a parallel normal complex structure.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::frames::FramePackage;
use crate::grid::{Field, Grid, Region};
use crate::immersion::{dot, CatalogJN, ImmersionPatch};

/// `J_Σ` in the oriented frame `(τ₁, τ₂)`, as a matrix acting on frame coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceComplexStructure {
    pub matrix: [[f64; 2]; 2],
}

/// Rotation by +90°: `J_Σ τ₁ = τ₂`, `J_Σ τ₂ = −τ₁`.
pub fn canonical_jsigma() -> SurfaceComplexStructure {
    SurfaceComplexStructure {
        matrix: [[0.0, -1.0], [1.0, 0.0]],
    }
}

impl SurfaceComplexStructure {
    /// `J_Σ` applied to the tangent part of ambient vector `x` at `node`, returned in ambient coordinates.
    pub fn apply_ambient(&self, fp: &FramePackage, node: usize, x: &[f64]) -> Vec<f64> {
        let c = [dot(x, fp.tau(node, 0)), dot(x, fp.tau(node, 1))];
        let y = [
            self.matrix[0][0] * c[0] + self.matrix[0][1] * c[1],
            self.matrix[1][0] * c[0] + self.matrix[1][1] * c[1],
        ];
        (0..fp.n)
            .map(|k| y[0] * fp.tau(node, 0)[k] + y[1] * fp.tau(node, 1)[k])
            .collect()
    }
}

/// Standard complex structure of `C^{n/2}`: `e_{2m} ↦ e_{2m+1}`, `e_{2m+1} ↦ −e_{2m}`.
pub fn standard_ambient_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(n, n);
    for m in 0..n / 2 {
        j[(2 * m + 1, 2 * m)] = 1.0;
        j[(2 * m, 2 * m + 1)] = -1.0;
    }
    j
}

/// `ν₁ ↦ ν₂, ν₃ ↦ ν₄, …` as an `r×r` matrix `[β][α]`.
pub fn frame_standard_j(r: usize) -> DMatrix<f64> {
    standard_ambient_j(r)
}

/// A normal endomorphism field in frame components `[β][α] = ⟨ν_β, J ν_α⟩`, dim `r*r`.
#[derive(Debug, Clone)]
pub struct NormalComplexStructure {
    pub r: usize,
    pub jn: Field,
}

impl NormalComplexStructure {
    pub fn matrix_at(&self, i: usize, j: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.r, self.r, self.jn.at(i, j))
    }

    pub fn negated(&self) -> Self {
        Self {
            r: self.r,
            jn: self.jn.scaled(-1.0),
        }
    }

    pub fn constant(grid: &Grid, m: &DMatrix<f64>) -> Self {
        let r = m.nrows();
        let row: Vec<f64> = (0..r)
            .flat_map(|b| (0..r).map(move |a| (b, a)))
            .map(|(b, a)| m[(b, a)])
            .collect();
        Self {
            r,
            jn: Field::from_fn(grid, r * r, 0, |_, _, out| out.copy_from_slice(&row)),
        }
    }

    /// Frame components of the restriction of an ambient endomorphism.
    pub fn from_ambient(fp: &FramePackage, amb: &DMatrix<f64>) -> Self {
        let r = fp.r;
        let jn = Field::from_fn(&fp.grid, r * r, 0, |i, j, out| {
            let node = fp.grid.idx(i, j);
            for al in 0..r {
                let v = DVector::from_column_slice(fp.nu(node, al));
                let w = amb * v;
                for be in 0..r {
                    out[be * r + al] = dot(w.as_slice(), fp.nu(node, be));
                }
            }
        });
        Self { r, jn }
    }
}

/// The normal complex structure that comes with a catalog entry.
pub fn catalog_jn(patch: &ImmersionPatch, fp: &FramePackage) -> NormalComplexStructure {
    let r = fp.r;
    match patch.catalog_jn {
        CatalogJN::AmbientRestriction => {
            NormalComplexStructure::from_ambient(fp, &standard_ambient_j(fp.n))
        }
        CatalogJN::FrameStandard => {
            NormalComplexStructure::constant(&fp.grid, &frame_standard_j(r))
        }
        CatalogJN::NormalOrientation => {
            let jn = Field::from_fn(&fp.grid, r * r, 0, |i, j, out| {
                let node = fp.grid.idx(i, j);
                let mut m = DMatrix::zeros(fp.n, fp.n);
                for k in 0..fp.n {
                    m[(k, 0)] = fp.tau(node, 0)[k];
                    m[(k, 1)] = fp.tau(node, 1)[k];
                    for al in 0..r {
                        m[(k, 2 + al)] = fp.nu(node, al)[k];
                    }
                }
                let s = m.determinant().signum();
                out[2] = s;
                out[1] = -s;
            });
            NormalComplexStructure { r, jn }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxiomReport {
    /// `max ‖JᵀJ − I‖`.
    pub orthogonality: f64,
    /// `max ‖J² + I‖`.
    pub square: f64,
    /// `max_i ‖D_{τ_i} J‖ = ‖∂_{τ_i} J + [θ_i, J]‖`.
    pub parallel: f64,
}

/// Residuals of the three normal-complex-structure axioms over `region`.
pub fn check_jn_axioms(
    j: &NormalComplexStructure,
    fp: &FramePackage,
    region: &Region,
) -> AxiomReport {
    let r = j.r;
    let grid = &fp.grid;
    let mut orth: f64 = 0.0;
    let mut sq: f64 = 0.0;
    let alg = region.intersect(&j.jn.valid());
    for (i, jj) in alg.iter() {
        let m = j.matrix_at(i, jj);
        orth = orth.max((m.transpose() * &m - DMatrix::identity(r, r)).norm());
        sq = sq.max((&m * &m + DMatrix::identity(r, r)).norm());
    }
    let mut par: f64 = 0.0;
    let diff = region.intersect(&grid.interior(j.jn.margin + 1));
    for (i, jj) in diff.iter() {
        let node = grid.idx(i, jj);
        let m = j.matrix_at(i, jj);
        let mut chart = Vec::with_capacity(2);
        for a in 0..2 {
            let (p, q) = if a == 0 {
                ((i + 1, jj), (i - 1, jj))
            } else {
                ((i, jj + 1), (i, jj - 1))
            };
            let d = (j.matrix_at(p.0, p.1) - j.matrix_at(q.0, q.1)) / (2.0 * grid.step(a));
            let th = DMatrix::from_row_slice(r, r, fp.theta(node, a));
            chart.push(d + &th * &m - &m * &th);
        }
        let e = &fp.e[node];
        for ii in 0..2 {
            par = par.max((&chart[0] * e[0][ii] + &chart[1] * e[1][ii]).norm());
        }
    }
    AxiomReport {
        orthogonality: orth,
        square: sq,
        parallel: par,
    }
}

/// A normal-bundle connection given by chart matrices `Θ_u`, `Θ_v` on a grid.
#[derive(Debug, Clone)]
pub struct NormalConnection {
    pub grid: Grid,
    pub r: usize,
    /// `[(node*2 + a)*r*r + β*r + α]`.
    pub theta: Vec<f64>,
    /// Nodes where `theta` is meaningful.
    pub valid: Region,
}

impl NormalConnection {
    pub fn from_frames(fp: &FramePackage) -> Self {
        Self {
            grid: fp.grid,
            r: fp.r,
            theta: fp.theta.clone(),
            valid: fp.grid.interior(1),
        }
    }

    /// `Θ_u = A₁ + v A₂`, `Θ_v = A₃ + u A₄` with random skew `A_m`; its holonomy generates all of SO(4).
    pub fn synthetic_so4(grid: Grid, seed: u64) -> Self {
        let r = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut skew = || {
            let mut m = DMatrix::<f64>::zeros(r, r);
            for p in 0..r {
                for q in p + 1..r {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    m[(p, q)] = x;
                    m[(q, p)] = -x;
                }
            }
            m
        };
        let a: Vec<DMatrix<f64>> = (0..4).map(|_| skew()).collect();
        let mut theta = vec![0.0; grid.len() * 2 * r * r];
        for node in 0..grid.len() {
            let (i, j) = grid.ij(node);
            let (u, v) = (grid.u(i), grid.v(j));
            let tu = &a[0] + &a[1] * v;
            let tv = &a[2] + &a[3] * u;
            for (aa, t) in [tu, tv].iter().enumerate() {
                for be in 0..r {
                    for al in 0..r {
                        theta[(node * 2 + aa) * r * r + be * r + al] = t[(be, al)];
                    }
                }
            }
        }
        Self {
            grid,
            r,
            theta,
            valid: grid.interior(0),
        }
    }

    pub fn theta_at(&self, node: usize, a: usize) -> DMatrix<f64> {
        let rr = self.r * self.r;
        DMatrix::from_row_slice(
            self.r,
            self.r,
            &self.theta[(node * 2 + a) * rr..(node * 2 + a + 1) * rr],
        )
    }

    /// Chart curvature `∂_uΘ_v − ∂_vΘ_u + [Θ_u, Θ_v]` at an interior node.
    pub fn curvature_chart(&self, i: usize, j: usize) -> DMatrix<f64> {
        let g = &self.grid;
        let node = g.idx(i, j);
        let d_u_tv =
            (self.theta_at(g.idx(i + 1, j), 1) - self.theta_at(g.idx(i - 1, j), 1)) / (2.0 * g.du);
        let d_v_tu =
            (self.theta_at(g.idx(i, j + 1), 0) - self.theta_at(g.idx(i, j - 1), 0)) / (2.0 * g.dv);
        let (tu, tv) = (self.theta_at(node, 0), self.theta_at(node, 1));
        d_u_tv - d_v_tu + &tu * &tv - &tv * &tu
    }

    /// Region in which loops may run: cubic interpolation needs one extra valid node on each side.
    pub fn loop_region(&self) -> Region {
        let v = self.valid;
        Region {
            i0: v.i0 + 1,
            i1: v.i1.saturating_sub(1),
            j0: v.j0 + 1,
            j1: v.j1.saturating_sub(1),
        }
    }

    /// `Θ_a` at fractional position `t ∈ [0, 1]` between node `k` and `k+1` on a grid line, by cubic Lagrange interpolation.
    fn theta_interp(&self, line: (usize, usize), a: usize, k: usize, t: f64) -> DMatrix<f64> {
        let g = &self.grid;
        let node = |m: usize| {
            if a == 0 {
                g.idx(m, line.1)
            } else {
                g.idx(line.0, m)
            }
        };
        let x = t;
        let w = [
            -x * (x - 1.0) * (x - 2.0) / 6.0,
            (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0,
            -(x + 1.0) * x * (x - 2.0) / 2.0,
            (x + 1.0) * x * (x - 1.0) / 6.0,
        ];
        let mut out = DMatrix::zeros(self.r, self.r);
        for (m, wm) in w.iter().enumerate() {
            out += self.theta_at(node(k + m - 1), a) * *wm;
        }
        out
    }

    /// Transport matrix for one grid edge from `from` to the adjacent node `to`.
    fn edge_transport(
        &self,
        from: (usize, usize),
        to: (usize, usize),
        substeps: usize,
    ) -> DMatrix<f64> {
        let (a, forward) = if from.1 == to.1 {
            (0, to.0 > from.0)
        } else {
            (1, to.1 > from.1)
        };
        let h = self.grid.step(a);
        let k = if a == 0 {
            from.0.min(to.0)
        } else {
            from.1.min(to.1)
        };
        let line = from;
        let sign = if forward { 1.0 } else { -1.0 };
        // dP/ds = −Θ(γ'(s)) P; γ' = sign·∂_a with s measured in chart units
        let rhs = |t: f64, p: &DMatrix<f64>| -> DMatrix<f64> {
            let tt = if forward { t } else { 1.0 - t };
            -(self.theta_interp(line, a, k, tt) * sign) * p
        };
        let mut p = DMatrix::identity(self.r, self.r);
        let dt = 1.0 / substeps as f64;
        for s in 0..substeps {
            let t = s as f64 * dt;
            let hs = h * dt;
            let k1 = rhs(t, &p);
            let k2 = rhs(t + 0.5 * dt, &(&p + &k1 * (0.5 * hs)));
            let k3 = rhs(t + 0.5 * dt, &(&p + &k2 * (0.5 * hs)));
            let k4 = rhs(t + dt, &(&p + &k3 * hs));
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hs / 6.0);
        }
        p
    }

    /// Solves `dP/ds = −Θ(γ')P` along a grid polygon (consecutive nodes must be adjacent).
    pub fn parallel_transport(
        &self,
        path: &[(usize, usize)],
        substeps: usize,
    ) -> Result<DMatrix<f64>, crate::LabError> {
        let region = self.loop_region();
        for &(i, j) in path {
            if !region.contains(i, j) {
                return Err(crate::LabError::LoopLeavesDomain { i, j });
            }
        }
        let mut p = DMatrix::identity(self.r, self.r);
        for w in path.windows(2) {
            let (a, b) = (w[0], w[1]);
            let step = a.0.abs_diff(b.0) + a.1.abs_diff(b.1);
            if step != 1 {
                return Err(crate::LabError::LoopLeavesDomain { i: b.0, j: b.1 });
            }
            p = self.edge_transport(a, b, substeps) * p;
        }
        Ok(p)
    }
}

/// Grid polygon through the given corners, following grid lines between them.
pub fn polygon(corners: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out = vec![corners[0]];
    for w in corners.windows(2) {
        let (mut cur, to) = (w[0], w[1]);
        while cur != to {
            if cur.0 != to.0 {
                cur.0 = if to.0 > cur.0 { cur.0 + 1 } else { cur.0 - 1 };
            } else {
                cur.1 = if to.1 > cur.1 { cur.1 + 1 } else { cur.1 - 1 };
            }
            out.push(cur);
        }
    }
    out
}

/// Axis-aligned rectangle loop anchored at `base` with opposite corner `c`.
pub fn rectangle_loop(base: (usize, usize), c: (usize, usize)) -> Vec<(usize, usize)> {
    polygon(&[base, (c.0, base.1), c, (base.0, c.1), base])
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopRecord {
    pub corners: Vec<(usize, usize)>,
    pub transport: Vec<f64>,
    pub orthogonality_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutantCertificate {
    /// Singular values of the stacked commutator operator on all `r×r` matrices, descending.
    pub full_singular_values: Vec<f64>,
    /// Singular values restricted to skew-symmetric matrices, descending.
    pub skew_singular_values: Vec<f64>,
    pub full_dimension: usize,
    pub skew_dimension: usize,
    /// Relative threshold below which a singular value counts as zero.
    pub tolerance: f64,
    /// Smallest skew singular value divided by the largest.
    pub smallest_relative_skew: f64,
}

#[derive(Debug, Clone)]
pub struct FoundJN {
    pub base: (usize, usize),
    pub base_matrix: DMatrix<f64>,
    pub field: NormalComplexStructure,
    /// Largest `‖[G, J]‖ / ‖G‖` over the generators.
    pub commutator_residual: f64,
}

#[derive(Debug, Clone)]
pub enum ParallelJNOutcome {
    Found(Box<FoundJN>),
    NoneFound,
}

#[derive(Debug, Clone)]
pub struct HolonomySearch {
    pub loops: Vec<LoopRecord>,
    pub curvature_samples: usize,
    pub certificate: CommutantCertificate,
    pub outcome: ParallelJNOutcome,
}

#[derive(Debug, Clone, Copy)]
pub struct HolonomyOptions {
    /// Relative singular-value threshold for the commutant.
    pub tolerance: f64,
    /// Loop corners per direction (the loop count is its square).
    pub loops_per_axis: usize,
    pub substeps: usize,
    pub seed: u64,
}

impl Default for HolonomyOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            loops_per_axis: 4,
            substeps: 2,
            seed: 7,
        }
    }
}

/// Commutator operator `X ↦ GX − XG` as an `r²×r²` matrix on row-major vectorized `X`.
fn commutator_operator(g: &DMatrix<f64>) -> DMatrix<f64> {
    let r = g.nrows();
    let mut op = DMatrix::zeros(r * r, r * r);
    for p in 0..r {
        for q in 0..r {
            let col = p * r + q;
            // X = e_p e_qᵀ: (GX)_{mq} = G_{mp}, (XG)_{pn} = G_{qn}
            for m in 0..r {
                op[(m * r + q, col)] += g[(m, p)];
            }
            for nn in 0..r {
                op[(p * r + nn, col)] -= g[(q, nn)];
            }
        }
    }
    op
}

fn skew_basis(r: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for p in 0..r {
        for q in p + 1..r {
            let mut m = DMatrix::zeros(r, r);
            m[(p, q)] = -1.0 / 2f64.sqrt();
            m[(q, p)] = 1.0 / 2f64.sqrt();
            out.push(m);
        }
    }
    out
}

/// Singular values (descending) and right singular vectors of a tall matrix.
fn svd_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let cols = m.ncols();
    // Gram matrix keeps the decomposition at r²×r² regardless of the generator count.
    let gram = m.transpose() * m;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut idx: Vec<usize> = (0..cols).collect();
    idx.sort_by(|a, b| {
        eig.eigenvalues[*b]
            .partial_cmp(&eig.eigenvalues[*a])
            .unwrap()
    });
    let sv: Vec<f64> = idx
        .iter()
        .map(|&k| eig.eigenvalues[k].max(0.0).sqrt())
        .collect();
    let mut v = DMatrix::zeros(cols, cols);
    for (c, &k) in idx.iter().enumerate() {
        v.set_column(c, &eig.eigenvectors.column(k));
    }
    (sv, v)
}

fn polar_factor(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let xtx = x.transpose() * x;
    let eig = nalgebra::SymmetricEigen::new(xtx);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min < 1e-8 * max {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Some(x * (&eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

fn canonical_sign(j: DMatrix<f64>) -> DMatrix<f64> {
    let r = j.nrows();
    // first clearly nonzero entry below the diagonal in column order decides
    for a in 0..r {
        for b in a + 1..r {
            let x = j[(b, a)];
            if x.abs() > 1e-8 {
                return if x > 0.0 { j } else { -j };
            }
        }
    }
    j
}

/// Searches the commutant of the sampled holonomy for a parallel orthogonal complex structure.
///
/// Generators are the transports around rectangles anchored at `base` plus the
/// boundary loop of the loop region, and curvature matrices at sampled nodes
/// conjugated back to `base`. On success the base structure is carried to every
/// node of the loop region by transport along the base row and then columns.
pub fn find_parallel_jn(
    conn: &NormalConnection,
    opts: &HolonomyOptions,
) -> crate::Result<HolonomySearch> {
    let r = conn.r;
    let region = conn.loop_region();
    if region.i1 < region.i0 + 3 || region.j1 < region.j0 + 3 {
        return Err(crate::LabError::GridTooCoarse(
            "loop region has fewer than 3 nodes per side".into(),
        ));
    }
    let base = (region.i0, region.j0);
    let (ilast, jlast) = (region.i1 - 1, region.j1 - 1);
    let npa = opts.loops_per_axis.max(1);
    let pick = |lo: usize, hi: usize, m: usize| lo + ((hi - lo) * (m + 1)) / npa;

    let mut loops = Vec::new();
    let mut gens: Vec<DMatrix<f64>> = Vec::new();
    let mut corner_list: Vec<(usize, usize)> = Vec::new();
    for mi in 0..npa {
        for mj in 0..npa {
            corner_list.push((pick(base.0, ilast, mi), pick(base.1, jlast, mj)));
        }
    }
    for &c in &corner_list {
        let p = conn.parallel_transport(&rectangle_loop(base, c), opts.substeps)?;
        let orth = (p.transpose() * &p - DMatrix::identity(r, r)).norm();
        gens.push(&p - DMatrix::identity(r, r));
        loops.push(LoopRecord {
            corners: vec![base, (c.0, base.1), c, (base.0, c.1)],
            transport: row_major(&p),
            orthogonality_residual: orth,
        });
    }
    let boundary = polygon(&[base, (ilast, base.1), (ilast, jlast), (base.0, jlast), base]);
    let pb = conn.parallel_transport(&boundary, opts.substeps)?;
    loops.push(LoopRecord {
        corners: vec![base, (ilast, base.1), (ilast, jlast), (base.0, jlast)],
        transport: row_major(&pb),
        orthogonality_residual: (pb.transpose() * &pb - DMatrix::identity(r, r)).norm(),
    });
    gens.push(&pb - DMatrix::identity(r, r));

    let mut curvature_samples = 0;
    let cregion = region.intersect(&Region {
        i0: conn.valid.i0 + 1,
        i1: conn.valid.i1 - 1,
        j0: conn.valid.j0 + 1,
        j1: conn.valid.j1 - 1,
    });
    for &c in corner_list.iter().chain(std::iter::once(&base)) {
        if !cregion.contains(c.0, c.1) {
            continue;
        }
        let path = polygon(&[base, (c.0, base.1), c]);
        let p = conn.parallel_transport(&path, opts.substeps)?;
        let f = conn.curvature_chart(c.0, c.1);
        gens.push(p.transpose() * f * p);
        curvature_samples += 1;
    }

    let rr = r * r;
    let mut stacked = DMatrix::zeros(gens.len() * rr, rr);
    for (m, g) in gens.iter().enumerate() {
        stacked
            .view_mut((m * rr, 0), (rr, rr))
            .copy_from(&commutator_operator(g));
    }
    let (full_sv, _) = svd_desc(&stacked);
    let basis = skew_basis(r);
    let mut skew_op = DMatrix::zeros(stacked.nrows(), basis.len().max(1));
    for (c, b) in basis.iter().enumerate() {
        let vecb = DVector::from_row_slice(&row_major(b));
        skew_op.set_column(c, &(&stacked * vecb));
    }
    let (skew_sv, skew_v) = svd_desc(&skew_op);
    let floor = 1e-12;
    let thresh = |sv: &[f64]| opts.tolerance * sv.first().copied().unwrap_or(0.0) + floor;
    let tf = thresh(&full_sv);
    let ts = thresh(&skew_sv);
    let full_dim = full_sv.iter().filter(|s| **s <= tf).count();
    let skew_dim = if basis.is_empty() {
        0
    } else {
        skew_sv.iter().filter(|s| **s <= ts).count()
    };
    let smax = skew_sv.first().copied().unwrap_or(0.0);
    let certificate = CommutantCertificate {
        full_singular_values: full_sv.clone(),
        skew_singular_values: skew_sv.clone(),
        full_dimension: full_dim,
        skew_dimension: skew_dim,
        tolerance: opts.tolerance,
        smallest_relative_skew: if smax > 0.0 {
            skew_sv.last().copied().unwrap_or(0.0) / smax
        } else {
            0.0
        },
    };

    let null: Vec<DMatrix<f64>> = (basis.len() - skew_dim..basis.len())
        .map(|c| {
            let mut m = DMatrix::zeros(r, r);
            for (k, b) in basis.iter().enumerate() {
                m += b * skew_v[(k, c)];
            }
            m
        })
        .collect();

    let mut candidate = None;
    if !null.is_empty() {
        let j0 = frame_standard_j(r);
        let mut proj = DMatrix::zeros(r, r);
        for b in &null {
            proj += b * b.dot(&j0);
        }
        candidate = polar_factor(&proj);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut tries = 0;
        while candidate.is_none() && tries < 64 {
            let mut x = DMatrix::zeros(r, r);
            for b in &null {
                x += b * rng.random_range(-1.0..1.0);
            }
            candidate = polar_factor(&x);
            tries += 1;
        }
    }

    let outcome = match candidate {
        None => ParallelJNOutcome::NoneFound,
        Some(j) => {
            let j = canonical_sign(j);
            let commutator_residual = gens
                .iter()
                .filter(|g| g.norm() > floor)
                .map(|g| (g * &j - &j * g).norm() / g.norm())
                .fold(0.0, f64::max);
            let field = transport_to_grid(conn, base, &j, opts.substeps)?;
            ParallelJNOutcome::Found(Box::new(FoundJN {
                base,
                base_matrix: j,
                field,
                commutator_residual,
            }))
        }
    };
    Ok(HolonomySearch {
        loops,
        curvature_samples,
        certificate,
        outcome,
    })
}

/// Carries `j` from `base` to every node of the loop region: along the base row, then up and down each column.
pub fn transport_to_grid(
    conn: &NormalConnection,
    base: (usize, usize),
    j: &DMatrix<f64>,
    substeps: usize,
) -> crate::Result<NormalComplexStructure> {
    let r = conn.r;
    let g = &conn.grid;
    let region = conn.loop_region();
    let mut field = Field::zeros(g, r * r, region.i0);
    let mut put =
        |i: usize, jj: usize, m: &DMatrix<f64>| field.at_mut(i, jj).copy_from_slice(&row_major(m));
    let conj = |p: &DMatrix<f64>, m: &DMatrix<f64>| p * m * p.transpose();
    let mut row: Vec<DMatrix<f64>> = vec![DMatrix::zeros(r, r); g.nu];
    row[base.0] = j.clone();
    for i in base.0 + 1..region.i1 {
        let p = conn.edge_transport((i - 1, base.1), (i, base.1), substeps);
        row[i] = conj(&p, &row[i - 1]);
    }
    for i in (region.i0..base.0).rev() {
        let p = conn.edge_transport((i + 1, base.1), (i, base.1), substeps);
        row[i] = conj(&p, &row[i + 1]);
    }
    for i in region.i0..region.i1 {
        put(i, base.1, &row[i]);
        let mut cur = row[i].clone();
        for jj in base.1 + 1..region.j1 {
            let p = conn.edge_transport((i, jj - 1), (i, jj), substeps);
            cur = conj(&p, &cur);
            put(i, jj, &cur);
        }
        let mut cur = row[i].clone();
        for jj in (region.j0..base.1).rev() {
            let p = conn.edge_transport((i, jj + 1), (i, jj), substeps);
            cur = conj(&p, &cur);
            put(i, jj, &cur);
        }
    }
    Ok(NormalComplexStructure { r, jn: field })
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|b| (0..m.ncols()).map(move |a| (b, a)))
        .map(|(b, a)| m[(b, a)])
        .collect()
}

/// Distance between two normal structures over a region, up to an overall sign.
pub fn distance_up_to_sign(
    a: &NormalComplexStructure,
    b: &NormalComplexStructure,
    region: &Region,
) -> f64 {
    let reg = region.intersect(&a.jn.valid()).intersect(&b.jn.valid());
    let (mut dp, mut dm): (f64, f64) = (0.0, 0.0);
    for (i, j) in reg.iter() {
        let (x, y) = (a.jn.at(i, j), b.jn.at(i, j));
        dp = dp.max(
            x.iter()
                .zip(y)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt(),
        );
        dm = dm.max(
            x.iter()
                .zip(y)
                .map(|(p, q)| (p + q).powi(2))
                .sum::<f64>()
                .sqrt(),
        );
    }
    dp.min(dm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::compute_frames;
    use crate::immersion::{builtin_surface, ChartDomain};
    use std::collections::BTreeMap;

    fn fp(name: &str, pairs: &[(&str, &str)], n: usize) -> (ImmersionPatch, FramePackage) {
        let p: BTreeMap<String, String> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let patch = builtin_surface(name, &p)
            .unwrap()
            .with_resolution(n, n)
            .unwrap();
        let f = compute_frames(&patch).unwrap();
        (patch, f)
    }

    #[test]
    fn jsigma_is_a_complex_structure() {
        let j = canonical_jsigma().matrix;
        let sq = [
            [
                j[0][0] * j[0][0] + j[0][1] * j[1][0],
                j[0][0] * j[0][1] + j[0][1] * j[1][1],
            ],
            [
                j[1][0] * j[0][0] + j[1][1] * j[1][0],
                j[1][0] * j[0][1] + j[1][1] * j[1][1],
            ],
        ];
        assert_eq!(sq, [[-1.0, 0.0], [0.0, -1.0]]);
        let (_, f) = fp("plane_k", &[], 9);
        let y = canonical_jsigma().apply_ambient(&f, 3, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(y, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn catenoid_frame_standard_structure_is_parallel() {
        let (patch, f) = fp("catenoid_r6", &[], 33);
        let j = catalog_jn(&patch, &f);
        let rep = check_jn_axioms(&j, &f, &f.grid.interior(1));
        assert!(
            rep.orthogonality < 1e-12 && rep.square < 1e-12 && rep.parallel < 1e-10,
            "{rep:?}"
        );
    }

    #[test]
    fn random_non_orthogonal_field_fails_orthogonality() {
        let (_, f) = fp("plane_k", &[], 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let jn = Field::from_fn(&f.grid, 4, 0, |_, _, out| {
            out.iter_mut()
                .for_each(|x| *x = rng.random_range(-2.0..2.0))
        });
        let rep = check_jn_axioms(
            &NormalComplexStructure { r: 2, jn },
            &f,
            &f.grid.interior(1),
        );
        assert!(rep.orthogonality > 0.1);
    }

    #[test]
    fn flat_transport_is_identity() {
        let (_, f) = fp("plane_k", &[("k", "2")], 17);
        let conn = NormalConnection::from_frames(&f);
        let p = conn
            .parallel_transport(&rectangle_loop((2, 2), (10, 12)), 2)
            .unwrap();
        assert!((p - DMatrix::identity(4, 4)).norm() < 1e-14);
        assert!(matches!(
            conn.parallel_transport(&rectangle_loop((0, 0), (3, 3)), 1),
            Err(crate::LabError::LoopLeavesDomain { .. })
        ));
    }

    #[test]
    fn synthetic_so4_has_no_parallel_complex_structure() {
        let grid = Grid::new(ChartDomain::new(-1.0, 1.0, -1.0, 1.0, 33, 33).unwrap());
        let conn = NormalConnection::synthetic_so4(grid, 11);
        let res = find_parallel_jn(&conn, &HolonomyOptions::default()).unwrap();
        assert!(matches!(res.outcome, ParallelJNOutcome::NoneFound));
        assert_eq!(res.certificate.skew_dimension, 0);
        assert!(res.certificate.smallest_relative_skew > 1e-3);
    }

    #[test]
    fn commutator_operator_matches_direct_product() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.0]);
        let direct = &g * &x - &x * &g;
        let via = commutator_operator(&g) * DVector::from_row_slice(&row_major(&x));
        assert!((DVector::from_row_slice(&row_major(&direct)) - via).norm() < 1e-14);
    }
}
