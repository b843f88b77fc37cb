//! Special variations `a⊥`, the Jacobi operator, the quadratic form `q`, the
//! `A±` splitting and second-variation quadratures.

use nalgebra::DMatrix;

use crate::calculus::TensorCalculus;
use crate::complex::NormalComplexStructure;
use crate::error::{LabError, Result};
use crate::frames::{FramePackage, SecondFundamentalForm};
use crate::grid::{norm, Field, Region};
use crate::immersion::dot;

/// `(a⊥)^α = ⟨a, ν_α⟩` at every node.
pub fn normal_projection_constant(a: &[f64], fp: &FramePackage) -> Field {
    Field::from_fn(&fp.grid, fp.r, 0, |i, j, out| {
        let node = fp.grid.idx(i, j);
        for (al, o) in out.iter_mut().enumerate() {
            *o = dot(a, fp.nu(node, al));
        }
    })
}

/// `(a^T)_i = ⟨a, τ_i⟩` at every node.
pub fn tangent_coefficients(a: &[f64], fp: &FramePackage) -> Field {
    Field::from_fn(&fp.grid, 2, 0, |i, j, out| {
        let node = fp.grid.idx(i, j);
        out[0] = dot(a, fp.tau(node, 0));
        out[1] = dot(a, fp.tau(node, 1));
    })
}

/// `A^s_{ij} = ⟨A_{ij}, s⟩` for `i, j ∈ {1, 2}` at index `i*2 + j`.
fn a_dot(sff: &SecondFundamentalForm, i: usize, j: usize, s: &[f64]) -> [f64; 4] {
    let r = sff.r;
    let a = sff.a.at(i, j);
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        *o = a[k * r..(k + 1) * r]
            .iter()
            .zip(s)
            .map(|(x, y)| x * y)
            .sum();
    }
    out
}

/// Field of `D_{τ_i} a⊥ + A(τ_i, a^T)` at index `i*r + α`, valid one cell in.
pub fn first_derivative_identity_field(
    a: &[f64],
    fp: &FramePackage,
    sff: &SecondFundamentalForm,
) -> Field {
    let r = fp.r;
    let s = normal_projection_constant(a, fp);
    let at = tangent_coefficients(a, fp);
    let d = TensorCalculus::new(fp, 0).frame_derivative(&s);
    Field::from_fn(&fp.grid, 2 * r, d[0].margin, |i, j, out| {
        let aa = sff.a.at(i, j);
        let t = at.at(i, j);
        for ii in 0..2 {
            for al in 0..r {
                let atens = t[0] * aa[(ii * 2) * r + al] + t[1] * aa[(ii * 2 + 1) * r + al];
                out[ii * r + al] = d[ii].at(i, j)[al] + atens;
            }
        }
    })
}

/// Largest `‖D_{τ_i} a⊥ + A(τ_i, a^T)‖` over `region`.
pub fn first_derivative_identity_residual(
    a: &[f64],
    fp: &FramePackage,
    sff: &SecondFundamentalForm,
    region: &Region,
) -> f64 {
    let r = fp.r;
    let f = first_derivative_identity_field(a, fp, sff);
    let reg = region.intersect(&f.valid());
    reg.iter()
        .map(|(i, j)| norm(&f.at(i, j)[..r]).max(norm(&f.at(i, j)[r..])))
        .fold(0.0, f64::max)
}

/// `𝒥(s) = D*D s − A^s_{ij} A_{ij}` with `D*D = −D²_{τ_i τ_i}`; valid two cells in.
pub fn jacobi_operator(s: &Field, fp: &FramePackage, sff: &SecondFundamentalForm) -> Field {
    let r = fp.r;
    let lap = TensorCalculus::new(fp, 0).laplacian_hess(s);
    Field::from_fn(&fp.grid, r, lap.margin, |i, j, out| {
        let ads = a_dot(sff, i, j, s.at(i, j));
        let aa = sff.a.at(i, j);
        for al in 0..r {
            let mut acc = lap.at(i, j)[al];
            for k in 0..4 {
                acc -= ads[k] * aa[k * r + al];
            }
            out[al] = acc;
        }
    })
}

fn apply_j(jn: &[f64], s: &[f64], r: usize) -> Vec<f64> {
    (0..r)
        .map(|be| (0..r).map(|al| jn[be * r + al] * s[al]).sum())
        .collect()
}

/// `q(a) = |A^{a⊥}|² − |A^{J_N a⊥}|²` at every node.
pub fn q_direct(
    a: &[f64],
    sff: &SecondFundamentalForm,
    jn: &NormalComplexStructure,
    fp: &FramePackage,
) -> Field {
    let r = fp.r;
    Field::from_fn(&fp.grid, 1, jn.jn.margin, |i, j, out| {
        let node = fp.grid.idx(i, j);
        let s: Vec<f64> = (0..r).map(|al| dot(a, fp.nu(node, al))).collect();
        let js = apply_j(jn.jn.at(i, j), &s, r);
        let p = a_dot(sff, i, j, &s);
        let m = a_dot(sff, i, j, &js);
        out[0] = p.iter().map(|x| x * x).sum::<f64>() - m.iter().map(|x| x * x).sum::<f64>();
    })
}

/// `Σ_m q(b_m)` over the columns `b_m` of an orthogonal matrix (standard basis when `None`).
pub fn q_trace(
    sff: &SecondFundamentalForm,
    jn: &NormalComplexStructure,
    fp: &FramePackage,
    basis: Option<&DMatrix<f64>>,
) -> Field {
    let n = fp.n;
    let id = DMatrix::<f64>::identity(n, n);
    let b = basis.unwrap_or(&id);
    let mut acc = Field::zeros_like(&jn.jn, 1);
    for m in 0..n {
        let col: Vec<f64> = b.column(m).iter().copied().collect();
        acc = acc.add(&q_direct(&col, sff, jn, fp));
    }
    acc
}

#[derive(Debug, Clone)]
pub struct ApmTensors {
    pub r: usize,
    pub plus: Field,
    pub minus: Field,
}

/// `A± = ½(A ∓ J_N A(J_Σ·,·))` in frame components.
pub fn apm_decompose(sff: &SecondFundamentalForm, jn: &NormalComplexStructure) -> ApmTensors {
    let r = sff.r;
    let mut plus = Field::zeros_like(&sff.a, 4 * r);
    let mut minus = Field::zeros_like(&sff.a, 4 * r);
    plus.margin = jn.jn.margin;
    minus.margin = jn.jn.margin;
    for n in 0..sff.a.data.len() / (4 * r) {
        let a = &sff.a.data[n * 4 * r..(n + 1) * 4 * r];
        let jm = &jn.jn.data[n * r * r..(n + 1) * r * r];
        for i in 0..2 {
            for j in 0..2 {
                // A(J_Σ τ₁, ·) = A(τ₂, ·), A(J_Σ τ₂, ·) = −A(τ₁, ·)
                let (src, sign) = if i == 0 { (1, 1.0) } else { (0, -1.0) };
                let rot: Vec<f64> = a[(src * 2 + j) * r..(src * 2 + j + 1) * r]
                    .iter()
                    .map(|x| sign * x)
                    .collect();
                let jr = apply_j(jm, &rot, r);
                for al in 0..r {
                    let k = n * 4 * r + (i * 2 + j) * r + al;
                    let base = a[(i * 2 + j) * r + al];
                    plus.data[k] = 0.5 * (base - jr[al]);
                    minus.data[k] = 0.5 * (base + jr[al]);
                }
            }
        }
    }
    ApmTensors { r, plus, minus }
}

impl ApmTensors {
    /// Largest `|A±_{ij}|` over nodes and frame pairs.
    pub fn max_norms(&self, region: &Region) -> (f64, f64) {
        let r = self.r;
        let f = |t: &Field| {
            region
                .intersect(&t.valid())
                .iter()
                .flat_map(|(i, j)| (0..4).map(move |k| norm(&t.at(i, j)[k * r..(k + 1) * r])))
                .fold(0.0, f64::max)
        };
        (f(&self.plus), f(&self.minus))
    }

    /// Residuals of the algebraic identities: sum, symmetry, trace, intertwining (each a max over `region`).
    pub fn identity_residuals(
        &self,
        sff: &SecondFundamentalForm,
        jn: &NormalComplexStructure,
        region: &Region,
    ) -> ApmIdentityResiduals {
        let r = self.r;
        let reg = region.intersect(&self.plus.valid());
        let mut out = ApmIdentityResiduals::default();
        for (i, j) in reg.iter() {
            let a = sff.a.at(i, j);
            let jm = jn.jn.at(i, j);
            for (sign, t) in [(1.0, self.plus.at(i, j)), (-1.0, self.minus.at(i, j))] {
                let c = |k: usize| &t[k * r..(k + 1) * r];
                out.symmetry = out.symmetry.max(diff_norm(c(1), c(2)));
                let tr: Vec<f64> = (0..r).map(|al| c(0)[al] + c(3)[al]).collect();
                out.trace = out.trace.max(norm(&tr));
                // A±(J_Σ τ_i, τ_j) = ± J_N A±(τ_i, τ_j)
                for ii in 0..2 {
                    for jj in 0..2 {
                        let (src, s) = if ii == 0 { (1, 1.0) } else { (0, -1.0) };
                        let lhs: Vec<f64> = c(src * 2 + jj).iter().map(|x| s * x).collect();
                        let rhs: Vec<f64> = apply_j(jm, c(ii * 2 + jj), r)
                            .iter()
                            .map(|x| sign * x)
                            .collect();
                        out.intertwining = out.intertwining.max(diff_norm(&lhs, &rhs));
                    }
                }
            }
            let (p, m) = (self.plus.at(i, j), self.minus.at(i, j));
            let sum: Vec<f64> = (0..4 * r).map(|k| p[k] + m[k] - a[k]).collect();
            out.sum = out.sum.max(norm(&sum));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct ApmIdentityResiduals {
    pub sum: f64,
    pub symmetry: f64,
    pub trace: f64,
    pub intertwining: f64,
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `q` through `A±`: the full double sum and the single-`τ` surface formula at `τ = τ₁` and `τ = τ₂`.
#[derive(Debug, Clone)]
pub struct QViaApm {
    pub general: Field,
    pub surface_tau1: Field,
    pub surface_tau2: Field,
}

pub fn q_via_apm(
    a: &[f64],
    apm: &ApmTensors,
    fp: &FramePackage,
    jn: &NormalComplexStructure,
) -> QViaApm {
    let r = fp.r;
    let grid = &fp.grid;
    let m = apm.plus.margin;
    let s = normal_projection_constant(a, fp);
    let general = Field::from_fn(grid, 1, m, |i, j, out| {
        let (p, mi) = (apm.plus.at(i, j), apm.minus.at(i, j));
        let sv = s.at(i, j);
        out[0] = 4.0
            * (0..4)
                .map(|k| dot(&p[k * r..(k + 1) * r], sv) * dot(&mi[k * r..(k + 1) * r], sv))
                .sum::<f64>();
    });
    let surface = |k: usize| {
        Field::from_fn(grid, 1, m, |i, j, out| {
            let (p, mi) = (
                &apm.plus.at(i, j)[k * r..(k + 1) * r],
                &apm.minus.at(i, j)[k * r..(k + 1) * r],
            );
            let sv = s.at(i, j);
            let js = apply_j(jn.jn.at(i, j), sv, r);
            out[0] = 8.0 * dot(p, sv) * dot(mi, sv) - 8.0 * dot(p, &js) * dot(mi, &js);
        })
    };
    QViaApm {
        general,
        surface_tau1: surface(0),
        surface_tau2: surface(3),
    }
}

/// Pointwise diagnostics for the `A⁺ = 0` or `A⁻ = 0` dichotomy.
///
/// `m = min(|ξ⁺|, |ξ⁻|)` with `ξ± = A±_{τ₁τ₁}`; `c = |ξ⁺|²|ξ⁻|² + ⟨ξ⁺,ξ⁻⟩² + ⟨ξ⁺,J_Nξ⁻⟩²`;
/// `eps` is the largest `|q(a)|` over unit `a`; and `bound = ⅛(|ξ⁺+ξ⁻|² + |ξ⁺|² + |ξ⁻|²)·eps`
/// dominates `c` by polarization.
#[derive(Debug, Clone)]
pub struct Dichotomy {
    pub m: Field,
    pub c: Field,
    pub eps: Field,
    pub bound: Field,
}

pub fn polarized_dichotomy_check(
    apm: &ApmTensors,
    sff: &SecondFundamentalForm,
    jn: &NormalComplexStructure,
) -> Dichotomy {
    let r = apm.r;
    let mut m = Field::zeros_like(&apm.plus, 1);
    let mut c = m.clone();
    let mut eps = m.clone();
    let mut bound = m.clone();
    for n in 0..m.data.len() {
        let xp = &apm.plus.data[n * 4 * r..n * 4 * r + r];
        let xm = &apm.minus.data[n * 4 * r..n * 4 * r + r];
        let jm = &jn.jn.data[n * r * r..(n + 1) * r * r];
        let jxm = apply_j(jm, xm, r);
        let (np, nm) = (norm(xp), norm(xm));
        m.data[n] = np.min(nm);
        c.data[n] = np * np * nm * nm + dot(xp, xm).powi(2) + dot(xp, &jxm).powi(2);
        // q(a) = sᵀ (G − JᵀGJ) s with G = Σ A_ij A_ijᵀ
        let a = &sff.a.data[n * 4 * r..(n + 1) * 4 * r];
        let mut g = DMatrix::<f64>::zeros(r, r);
        for k in 0..4 {
            let v = nalgebra::DVector::from_column_slice(&a[k * r..(k + 1) * r]);
            g += &v * v.transpose();
        }
        let jmat = DMatrix::from_row_slice(r, r, jm);
        let qm = &g - jmat.transpose() * &g * &jmat;
        let ev = nalgebra::SymmetricEigen::new(0.5 * (&qm + qm.transpose())).eigenvalues;
        eps.data[n] = ev.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let s: Vec<f64> = xp.iter().zip(xm).map(|(x, y)| x + y).collect();
        bound.data[n] = 0.125 * (dot(&s, &s) + np * np + nm * nm) * eps.data[n];
    }
    Dichotomy { m, c, eps, bound }
}

/// Edge-based quadrature of `∫ |Ds|² − |A^s|²` shared by the direct evaluation and the assembled matrices.
///
/// Each cell contributes, at each of its four corners, `¼ du dv √g g^{ab} ⟨Δ_a s, Δ_b s⟩`
/// where `Δ_a s` is the covariant difference on the cell edge meeting that corner:
/// `(s₁ − s₀)/h + Θ_e (s₁ + s₀)/2` with `Θ_e` the edge connection matrix. Potential
/// and mass terms are lumped with trapezoid weights.
#[derive(Debug, Clone)]
pub struct EdgeQuadrature {
    pub r: usize,
    /// Edge connection matrices for u-edges `(i,j)→(i+1,j)`, indexed by `(i,j)`.
    pub theta_u: Vec<f64>,
    /// Edge connection matrices for v-edges `(i,j)→(i,j+1)`.
    pub theta_v: Vec<f64>,
    /// Trapezoid weight times `√g` at each node.
    pub node_weight: Vec<f64>,
    /// `|A^s|²` as the symmetric matrix `G = Σ_ij A_ij A_ijᵀ` per node (row-major).
    pub potential: Vec<f64>,
}

impl EdgeQuadrature {
    pub fn new(fp: &FramePackage, sff: &SecondFundamentalForm) -> Self {
        let grid = &fp.grid;
        let r = fp.r;
        let rr = r * r;
        let edge = |p: usize, q: usize, h: f64| -> Vec<f64> {
            let mut raw = vec![0.0; rr];
            for al in 0..r {
                let d: Vec<f64> = fp
                    .nu(q, al)
                    .iter()
                    .zip(fp.nu(p, al))
                    .map(|(x, y)| x - y)
                    .collect();
                for be in 0..r {
                    let avg: Vec<f64> = fp
                        .nu(q, be)
                        .iter()
                        .zip(fp.nu(p, be))
                        .map(|(x, y)| 0.5 * (x + y))
                        .collect();
                    raw[be * r + al] = dot(&d, &avg) / h;
                }
            }
            let mut out = vec![0.0; rr];
            for be in 0..r {
                for al in 0..r {
                    out[be * r + al] = 0.5 * (raw[be * r + al] - raw[al * r + be]);
                }
            }
            out
        };
        let mut theta_u = vec![0.0; grid.len() * rr];
        let mut theta_v = vec![0.0; grid.len() * rr];
        for i in 0..grid.nu {
            for j in 0..grid.nv {
                let node = grid.idx(i, j);
                if i + 1 < grid.nu {
                    theta_u[node * rr..(node + 1) * rr].copy_from_slice(&edge(
                        node,
                        grid.idx(i + 1, j),
                        grid.du,
                    ));
                }
                if j + 1 < grid.nv {
                    theta_v[node * rr..(node + 1) * rr].copy_from_slice(&edge(
                        node,
                        grid.idx(i, j + 1),
                        grid.dv,
                    ));
                }
            }
        }
        let mut node_weight = vec![0.0; grid.len()];
        let mut potential = vec![0.0; grid.len() * rr];
        for i in 0..grid.nu {
            for j in 0..grid.nv {
                let node = grid.idx(i, j);
                let wi = if i == 0 || i + 1 == grid.nu { 0.5 } else { 1.0 };
                let wj = if j == 0 || j + 1 == grid.nv { 0.5 } else { 1.0 };
                node_weight[node] = wi * wj * grid.du * grid.dv * fp.sqrt_g[node];
                let a = sff.a.at(i, j);
                for k in 0..4 {
                    let v = &a[k * r..(k + 1) * r];
                    for be in 0..r {
                        for al in 0..r {
                            potential[node * rr + be * r + al] += v[be] * v[al];
                        }
                    }
                }
            }
        }
        Self {
            r,
            theta_u,
            theta_v,
            node_weight,
            potential,
        }
    }

    /// Covariant edge difference along axis `a` from node `(i,j)` to its forward neighbour, as an
    /// `r × 2r` matrix acting on `(s₀, s₁)`.
    pub fn edge_operator(&self, fp: &FramePackage, a: usize, i: usize, j: usize) -> Vec<f64> {
        let grid = &fp.grid;
        let r = self.r;
        let rr = r * r;
        let node = grid.idx(i, j);
        let (th, h) = if a == 0 {
            (&self.theta_u[node * rr..(node + 1) * rr], grid.du)
        } else {
            (&self.theta_v[node * rr..(node + 1) * rr], grid.dv)
        };
        let mut op = vec![0.0; r * 2 * r];
        for be in 0..r {
            op[be * 2 * r + be] -= 1.0 / h;
            op[be * 2 * r + r + be] += 1.0 / h;
            for al in 0..r {
                op[be * 2 * r + al] += 0.5 * th[be * r + al];
                op[be * 2 * r + r + al] += 0.5 * th[be * r + al];
            }
        }
        op
    }

    /// Corner quadrature terms of cell `(i,j)`: for each corner, its node, weight `¼ du dv √g`,
    /// the inverse metric and the two edges `(axis, i, j)` meeting there.
    pub fn cell_corners(&self, fp: &FramePackage, i: usize, j: usize) -> [CornerTerm; 4] {
        let grid = &fp.grid;
        let mut out = [CornerTerm::default(); 4];
        for (k, (ci, cj)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            let node = grid.idx(i + ci, j + cj);
            out[k] = CornerTerm {
                node,
                weight: 0.25 * grid.du * grid.dv * fp.sqrt_g[node],
                ginv: fp.ginv[node],
                u_edge: (i, j + cj),
                v_edge: (i + ci, j),
            };
        }
        out
    }

    /// `∫|Ds|²` for a section given in frame coefficients.
    pub fn dirichlet(&self, fp: &FramePackage, s: &Field) -> f64 {
        let grid = &fp.grid;
        let r = self.r;
        let diff = |a: usize, e: (usize, usize)| -> Vec<f64> {
            let op = self.edge_operator(fp, a, e.0, e.1);
            let (s0, s1) = if a == 0 {
                (s.at(e.0, e.1), s.at(e.0 + 1, e.1))
            } else {
                (s.at(e.0, e.1), s.at(e.0, e.1 + 1))
            };
            (0..r)
                .map(|be| {
                    (0..r)
                        .map(|al| op[be * 2 * r + al] * s0[al] + op[be * 2 * r + r + al] * s1[al])
                        .sum()
                })
                .collect()
        };
        let mut total = 0.0;
        for i in 0..grid.nu - 1 {
            for j in 0..grid.nv - 1 {
                for c in self.cell_corners(fp, i, j) {
                    let du = diff(0, c.u_edge);
                    let dv = diff(1, c.v_edge);
                    total += c.weight
                        * (c.ginv[0] * dot(&du, &du)
                            + 2.0 * c.ginv[1] * dot(&du, &dv)
                            + c.ginv[2] * dot(&dv, &dv));
                }
            }
        }
        total
    }

    /// `∫|A^s|²` with lumped trapezoid weights.
    pub fn potential_energy(&self, s: &Field) -> f64 {
        let r = self.r;
        let rr = r * r;
        let mut total = 0.0;
        for node in 0..self.node_weight.len() {
            let x = &s.data[node * r..(node + 1) * r];
            let g = &self.potential[node * rr..(node + 1) * rr];
            let q: f64 = (0..r)
                .map(|be| x[be] * (0..r).map(|al| g[be * r + al] * x[al]).sum::<f64>())
                .sum();
            total += self.node_weight[node] * q;
        }
        total
    }

    pub fn mass(&self, s: &Field) -> f64 {
        let r = self.r;
        (0..self.node_weight.len())
            .map(|n| {
                self.node_weight[n] * dot(&s.data[n * r..(n + 1) * r], &s.data[n * r..(n + 1) * r])
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CornerTerm {
    pub node: usize,
    pub weight: f64,
    pub ginv: [f64; 3],
    pub u_edge: (usize, usize),
    pub v_edge: (usize, usize),
}

/// Width of the zero boundary band required of compactly supported sections.
pub const SUPPORT_MARGIN: usize = 1;

pub fn check_support(s: &Field, margin: usize) -> Result<()> {
    let inner = Region {
        i0: margin,
        i1: s.nu - margin,
        j0: margin,
        j1: s.nv - margin,
    };
    for i in 0..s.nu {
        for j in 0..s.nv {
            if !inner.contains(i, j) && s.at(i, j).iter().any(|x| *x != 0.0) {
                return Err(LabError::SupportTouchesBoundary { i, j });
            }
        }
    }
    Ok(())
}

/// `δ²V(s, s) = ∫ |Ds|² − |A^s|²` by the edge quadrature.
pub fn second_variation_direct(
    s: &Field,
    fp: &FramePackage,
    sff: &SecondFundamentalForm,
) -> Result<f64> {
    check_support(s, SUPPORT_MARGIN)?;
    let q = EdgeQuadrature::new(fp, sff);
    Ok(q.dirichlet(fp, s) - q.potential_energy(s))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CutoffIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub discrepancy: f64,
}

/// `δ²V(fs, fs)` against `∫ |∇f|²|s|² + f²⟨𝒥s, s⟩`.
///
/// `f` must vanish within three cells of the boundary so that `𝒥s` and `∇f` are available wherever they matter.
pub fn second_variation_cutoff_identity(
    f: &Field,
    s: &Field,
    fp: &FramePackage,
    sff: &SecondFundamentalForm,
) -> Result<CutoffIdentity> {
    check_support(f, 3)?;
    let r = fp.r;
    let grid = &fp.grid;
    let fs = Field::from_fn(grid, r, 0, |i, j, out| {
        let fv = f.at(i, j)[0];
        for (o, x) in out.iter_mut().zip(s.at(i, j)) {
            *o = fv * x;
        }
    });
    let lhs = second_variation_direct(&fs, fp, sff)?;
    let js = jacobi_operator(s, fp, sff);
    let q = EdgeQuadrature::new(fp, sff);
    let mut rhs = 0.0;
    for (i, j) in grid.interior(1).iter() {
        let node = grid.idx(i, j);
        let fv = f.at(i, j)[0];
        let fu = (f.at(i + 1, j)[0] - f.at(i - 1, j)[0]) / (2.0 * grid.du);
        let fvv = (f.at(i, j + 1)[0] - f.at(i, j - 1)[0]) / (2.0 * grid.dv);
        let gi = fp.ginv[node];
        let grad2 = gi[0] * fu * fu + 2.0 * gi[1] * fu * fvv + gi[2] * fvv * fvv;
        let sv = s.at(i, j);
        rhs += q.node_weight[node] * (grad2 * dot(sv, sv) + fv * fv * dot(js.at(i, j), sv));
    }
    Ok(CutoffIdentity {
        lhs,
        rhs,
        discrepancy: (lhs - rhs).abs(),
    })
}

/// Bump `(1 − ρ²)⁶` on the ellipse `ρ < 1` with the given centre and radii, as a grid field.
///
/// It is `C⁵` with small high derivatives, which keeps second-order discretizations in their
/// asymptotic regime on coarse grids.
pub fn bump_field(fp: &FramePackage, center: (f64, f64), radii: (f64, f64)) -> Field {
    let grid = &fp.grid;
    Field::from_fn(grid, 1, 0, |i, j, out| {
        let x = (grid.u(i) - center.0) / radii.0;
        let y = (grid.v(j) - center.1) / radii.1;
        let rho2 = x * x + y * y;
        out[0] = if rho2 < 1.0 {
            (1.0 - rho2).powi(6)
        } else {
            0.0
        };
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::catalog_jn;
    use crate::frames::{compute_frames, second_fundamental_form};
    use crate::immersion::builtin_surface;
    use std::collections::BTreeMap;

    fn setup(
        name: &str,
        pairs: &[(&str, &str)],
        n: usize,
    ) -> (FramePackage, SecondFundamentalForm, NormalComplexStructure) {
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
        let jn = catalog_jn(&patch, &fp);
        (fp, sff, jn)
    }

    #[test]
    fn plane_projections() {
        let (fp, _, _) = setup("plane_k", &[], 9);
        let s = normal_projection_constant(&[0.0, 0.0, 1.0, 0.0], &fp);
        assert!(fp
            .grid
            .interior(0)
            .iter()
            .all(|(i, j)| s.at(i, j) == [1.0, 0.0]));
        let t = normal_projection_constant(&[1.0, 0.0, 0.0, 0.0], &fp);
        assert_eq!(t.max_abs(&fp.grid.interior(0)), 0.0);
    }

    #[test]
    fn catenoid_waist_q_values() {
        let (fp, sff, jn) = setup("catenoid_r6", &[], 33);
        let (i, j) = fp.grid.nearest(0.0, 0.0);
        let e = |m: usize| {
            let mut v = vec![0.0; 6];
            v[m] = 1.0;
            v
        };
        let s = normal_projection_constant(&e(0), &fp);
        assert!((norm(s.at(i, j)) - 1.0).abs() < 1e-14);
        assert!((q_direct(&e(0), &sff, &jn, &fp).at(i, j)[0] - 2.0).abs() < 1e-12);
        assert!((q_direct(&e(3), &sff, &jn, &fp).at(i, j)[0] + 2.0).abs() < 1e-12);
        let apm = apm_decompose(&sff, &jn);
        let qa = q_via_apm(&e(0), &apm, &fp, &jn);
        assert!((qa.general.at(i, j)[0] - 2.0).abs() < 1e-12);
        assert!((qa.surface_tau1.at(i, j)[0] - 2.0).abs() < 1e-12);
        assert!(q_trace(&sff, &jn, &fp, None).max_abs(&fp.grid.interior(0)) < 1e-12);
    }

    #[test]
    fn plane_second_variation_is_dirichlet_energy() {
        let (fp, sff, _) = setup("plane_k", &[], 33);
        let f = bump_field(&fp, (0.0, 0.0), (0.6, 0.6));
        let s = Field::from_fn(&fp.grid, 2, 0, |i, j, out| out[0] = f.at(i, j)[0]);
        let d2 = second_variation_direct(&s, &fp, &sff).unwrap();
        assert!(d2 > 0.0);
        let zero = Field::zeros(&fp.grid, 2, 0);
        assert_eq!(second_variation_direct(&zero, &fp, &sff).unwrap(), 0.0);
        let mut bad = zero.clone();
        bad.at_mut(0, 5)[0] = 1.0;
        assert!(matches!(
            second_variation_direct(&bad, &fp, &sff),
            Err(LabError::SupportTouchesBoundary { .. })
        ));
    }
}
