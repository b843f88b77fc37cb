//! Induced metric, orthonormal frames, second fundamental form, connection
//! coefficients and curvatures on a chart grid.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::grid::{Field, Grid, Region};
use crate::immersion::{dot, evaluate_jet, ImmersionPatch, Jet3};

/// Overlap eigenvalue below which gauge continuation gives up.
pub const GAUGE_TOL: f64 = 1e-2;
pub const METRIC_TOL: f64 = 1e-8;

/// Per-node geometry of an immersed patch.
///
/// `e[n][a][i]` expresses `τ_i = Σ_a e[a][i] ∂_a F`; `c[n][i][a]` is its inverse,
/// `∂_a F = Σ_i c[i][a] τ_i`. Chart connection data (`theta`, `omega`) is valid
/// one cell in from the boundary.
#[derive(Debug, Clone)]
pub struct FramePackage {
    pub grid: Grid,
    pub n: usize,
    pub r: usize,
    pub jets: Vec<Jet3>,
    /// `(g_uu, g_uv, g_vv)`.
    pub g: Vec<[f64; 3]>,
    pub ginv: Vec<[f64; 3]>,
    pub sqrt_g: Vec<f64>,
    pub e: Vec<[[f64; 2]; 2]>,
    pub c: Vec<[[f64; 2]; 2]>,
    pub tau: Vec<f64>,
    pub nu: Vec<f64>,
    /// `Θ_a[β][α] = ⟨∂_a ν_α, ν_β⟩`, stored as `[(n*2 + a)*r*r + β*r + α]`.
    pub theta: Vec<f64>,
    /// `ω_a = ⟨∂_a τ₁, τ₂⟩`.
    pub omega: Vec<[f64; 2]>,
    /// Chart Christoffel symbols `Γ^c_{ab}` as `[c][a][b]`.
    pub christoffel: Vec<[[[f64; 2]; 2]; 2]>,
}

impl FramePackage {
    pub fn tau(&self, node: usize, i: usize) -> &[f64] {
        let n = self.n;
        &self.tau[(node * 2 + i) * n..(node * 2 + i + 1) * n]
    }

    pub fn nu(&self, node: usize, alpha: usize) -> &[f64] {
        let n = self.n;
        &self.nu[(node * self.r + alpha) * n..(node * self.r + alpha + 1) * n]
    }

    /// Chart connection matrix `Θ_a` at a node, row-major `[β][α]`.
    pub fn theta(&self, node: usize, a: usize) -> &[f64] {
        let rr = self.r * self.r;
        &self.theta[(node * 2 + a) * rr..(node * 2 + a + 1) * rr]
    }

    pub fn ginv_ab(&self, node: usize, a: usize, b: usize) -> f64 {
        self.ginv[node][a + b]
    }

    pub fn g_ab(&self, node: usize, a: usize, b: usize) -> f64 {
        self.g[node][a + b]
    }

    /// Normal coefficients `⟨x, ν_α⟩` of an ambient vector.
    pub fn normal_coeffs(&self, node: usize, x: &[f64]) -> Vec<f64> {
        (0..self.r).map(|al| dot(x, self.nu(node, al))).collect()
    }

    /// Ambient vector `Σ_α s^α ν_α`.
    pub fn normal_vector(&self, node: usize, s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (al, &sa) in s.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.nu(node, al)) {
                *o += sa * x;
            }
        }
        out
    }

    /// Region where chart connection data is valid.
    pub fn connection_region(&self) -> Region {
        self.grid.interior(1)
    }
}

fn sym_inv_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.max(1e-300).sqrt()));
    (&eig.eigenvectors * d * eig.eigenvectors.transpose(), min)
}

fn project_normal(tau: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for i in 0..2 {
        let t = &tau[i * n..(i + 1) * n];
        let c = dot(t, x);
        for (yy, tt) in y.iter_mut().zip(t) {
            *yy -= c * tt;
        }
    }
    y
}

/// Initial normal frame: the `r` ambient basis vectors with the largest normal
/// parts (pivoted), taken in index order and orthonormalized.
fn initial_normal_frame(tau: &[f64], n: usize, r: usize) -> Vec<f64> {
    let proj: Vec<Vec<f64>> = (0..n)
        .map(|m| {
            let mut e = vec![0.0; n];
            e[m] = 1.0;
            project_normal(tau, n, &e)
        })
        .collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for _ in 0..r {
        let mut best = (0, -1.0);
        for (m, p) in proj.iter().enumerate() {
            if chosen.contains(&m) {
                continue;
            }
            let mut w = p.clone();
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let nn = dot(&w, &w);
            if nn > best.1 {
                best = (m, nn);
            }
        }
        chosen.push(best.0);
        let mut w = proj[best.0].clone();
        for b in &basis {
            let c = dot(b, &w);
            w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let nn = dot(&w, &w).sqrt();
        basis.push(w.iter().map(|x| x / nn).collect());
    }
    chosen.sort_unstable();
    let mut out: Vec<f64> = Vec::with_capacity(r * n);
    let mut done: Vec<Vec<f64>> = Vec::new();
    for &m in &chosen {
        let mut w = proj[m].clone();
        for b in &done {
            let c = dot(b, &w);
            w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let nn = dot(&w, &w).sqrt();
        let w: Vec<f64> = w.iter().map(|x| x / nn).collect();
        out.extend_from_slice(&w);
        done.push(w);
    }
    out
}

/// Projects the neighbour's normal frame onto the local normal space and takes
/// the nearest orthonormal frame (symmetric orthonormalization).
fn continue_normal_frame(
    tau: &[f64],
    prev: &[f64],
    n: usize,
    r: usize,
    i: usize,
    j: usize,
) -> Result<Vec<f64>> {
    let mut w = DMatrix::<f64>::zeros(n, r);
    for al in 0..r {
        let p = project_normal(tau, n, &prev[al * n..(al + 1) * n]);
        for c in 0..n {
            w[(c, al)] = p[c];
        }
    }
    let (inv_sqrt, min_eig) = sym_inv_sqrt(&(w.transpose() * &w));
    if !(min_eig >= GAUGE_TOL) {
        return Err(LabError::GaugeContinuationFailure { i, j, min_eig });
    }
    let q = w * inv_sqrt;
    let mut out = vec![0.0; r * n];
    for al in 0..r {
        for c in 0..n {
            out[al * n + c] = q[(c, al)];
        }
    }
    Ok(out)
}

/// Builds metric, frames, connection data and Christoffel symbols over the patch grid.
///
/// The normal frame is continued in a single row-major sweep from node `(0, 0)`:
/// each node aligns with `(i, j-1)`, or with `(i-1, 0)` at the start of a row.
pub fn compute_frames(patch: &ImmersionPatch) -> Result<FramePackage> {
    let grid = Grid::new(patch.domain);
    let n = patch.ambient_dim;
    let r = n - 2;
    let total = grid.len();

    let jets: Vec<Jet3> = (0..total)
        .into_par_iter()
        .map(|node| {
            let (i, j) = grid.ij(node);
            evaluate_jet(patch, grid.u(i), grid.v(j), 2)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut g = vec![[0.0; 3]; total];
    let mut ginv = vec![[0.0; 3]; total];
    let mut sqrt_g = vec![0.0; total];
    let mut e = vec![[[0.0; 2]; 2]; total];
    let mut c = vec![[[0.0; 2]; 2]; total];
    let mut tau = vec![0.0; total * 2 * n];
    let mut christoffel = vec![[[[0.0; 2]; 2]; 2]; total];

    for node in 0..total {
        let jet = &jets[node];
        let (fu, fv) = (jet.fu(), jet.fv());
        let gm = [dot(fu, fu), dot(fu, fv), dot(fv, fv)];
        let det = gm[0] * gm[2] - gm[1] * gm[1];
        let lam_min =
            0.5 * (gm[0] + gm[2]) - (0.25 * (gm[0] - gm[2]).powi(2) + gm[1] * gm[1]).sqrt();
        if !(lam_min >= METRIC_TOL) {
            let (i, j) = grid.ij(node);
            return Err(LabError::DegenerateImmersion {
                u: grid.u(i),
                v: grid.v(j),
                sigma_min: lam_min.max(0.0).sqrt(),
            });
        }
        g[node] = gm;
        ginv[node] = [gm[2] / det, -gm[1] / det, gm[0] / det];
        sqrt_g[node] = det.sqrt();

        let a = gm[0].sqrt();
        let t1: Vec<f64> = fu.iter().map(|x| x / a).collect();
        let b = dot(fv, &t1);
        let mut w: Vec<f64> = fv.iter().zip(&t1).map(|(x, y)| x - b * y).collect();
        let cc = dot(&w, &w).sqrt();
        w.iter_mut().for_each(|x| *x /= cc);
        tau[node * 2 * n..node * 2 * n + n].copy_from_slice(&t1);
        tau[node * 2 * n + n..(node + 1) * 2 * n].copy_from_slice(&w);
        e[node] = [[1.0 / a, -b / (a * cc)], [0.0, 1.0 / cc]];
        c[node] = [[a, b], [0.0, cc]];

        let fd = [fu, fv];
        for cidx in 0..2 {
            for aa in 0..2 {
                for bb in 0..2 {
                    let fab = jet.second(aa, bb);
                    let mut s = 0.0;
                    for d in 0..2 {
                        s += ginv[node][cidx + d] * dot(fab, fd[d]);
                    }
                    christoffel[node][cidx][aa][bb] = s;
                }
            }
        }
    }

    let mut nu = vec![0.0; total * r * n];
    let t00 = &tau[0..2 * n];
    nu[0..r * n].copy_from_slice(&initial_normal_frame(t00, n, r));
    for i in 0..grid.nu {
        for j in 0..grid.nv {
            if i == 0 && j == 0 {
                continue;
            }
            let node = grid.idx(i, j);
            let prev = if j > 0 {
                grid.idx(i, j - 1)
            } else {
                grid.idx(i - 1, 0)
            };
            let prev_frame = nu[prev * r * n..(prev + 1) * r * n].to_vec();
            let t = &tau[node * 2 * n..(node + 1) * 2 * n];
            let frame = continue_normal_frame(t, &prev_frame, n, r, i, j)?;
            nu[node * r * n..(node + 1) * r * n].copy_from_slice(&frame);
        }
    }

    let rr = r * r;
    let mut theta = vec![0.0; total * 2 * rr];
    let mut omega = vec![[0.0; 2]; total];
    let inner = grid.interior(1);
    for (i, j) in inner.iter() {
        let node = grid.idx(i, j);
        for a in 0..2 {
            let (p, m, h) = if a == 0 {
                (grid.idx(i + 1, j), grid.idx(i - 1, j), grid.du)
            } else {
                (grid.idx(i, j + 1), grid.idx(i, j - 1), grid.dv)
            };
            let nu_at = |nd: usize, al: usize| &nu[(nd * r + al) * n..(nd * r + al + 1) * n];
            let mut raw = vec![0.0; rr];
            for al in 0..r {
                let d: Vec<f64> = nu_at(p, al)
                    .iter()
                    .zip(nu_at(m, al))
                    .map(|(x, y)| (x - y) / (2.0 * h))
                    .collect();
                for be in 0..r {
                    raw[be * r + al] = dot(&d, nu_at(node, be));
                }
            }
            let base = (node * 2 + a) * rr;
            for be in 0..r {
                for al in 0..r {
                    theta[base + be * r + al] = 0.5 * (raw[be * r + al] - raw[al * r + be]);
                }
            }
            let tau_at = |nd: usize, k: usize| &tau[(nd * 2 + k) * n..(nd * 2 + k + 1) * n];
            let d1: Vec<f64> = tau_at(p, 0)
                .iter()
                .zip(tau_at(m, 0))
                .map(|(x, y)| (x - y) / (2.0 * h))
                .collect();
            let d2: Vec<f64> = tau_at(p, 1)
                .iter()
                .zip(tau_at(m, 1))
                .map(|(x, y)| (x - y) / (2.0 * h))
                .collect();
            omega[node][a] = 0.5 * (dot(&d1, tau_at(node, 1)) - dot(&d2, tau_at(node, 0)));
        }
    }

    Ok(FramePackage {
        grid,
        n,
        r,
        jets,
        g,
        ginv,
        sqrt_g,
        e,
        c,
        tau,
        nu,
        theta,
        omega,
        christoffel,
    })
}

/// Components `A_{ij}^α` stored at index `(i*2 + j)*r + α`.
#[derive(Debug, Clone)]
pub struct SecondFundamentalForm {
    pub r: usize,
    pub a: Field,
}

impl SecondFundamentalForm {
    pub fn comp(&self, i: usize, j: usize, node_i: usize, node_j: usize) -> &[f64] {
        let r = self.r;
        &self.a.at(node_i, node_j)[(i * 2 + j) * r..(i * 2 + j + 1) * r]
    }
}

/// `A_{ij}^α = E_{ai} E_{bj} ⟨∂_a∂_b F, ν_α⟩`, symmetric in `(i, j)` by construction.
pub fn second_fundamental_form(fp: &FramePackage) -> SecondFundamentalForm {
    let r = fp.r;
    let grid = &fp.grid;
    let a = Field::from_fn(grid, 4 * r, 0, |i, j, out| {
        let node = grid.idx(i, j);
        let e = &fp.e[node];
        let jet = &fp.jets[node];
        for al in 0..r {
            let nu = fp.nu(node, al);
            let h = [
                [dot(jet.second(0, 0), nu), dot(jet.second(0, 1), nu)],
                [dot(jet.second(1, 0), nu), dot(jet.second(1, 1), nu)],
            ];
            for ii in 0..2 {
                for jj in ii..2 {
                    let mut s = 0.0;
                    for aa in 0..2 {
                        for bb in 0..2 {
                            s += e[aa][ii] * e[bb][jj] * h[aa][bb];
                        }
                    }
                    out[(ii * 2 + jj) * r + al] = s;
                    out[(jj * 2 + ii) * r + al] = s;
                }
            }
        }
    });
    SecondFundamentalForm { r, a }
}

/// Mean-curvature vector `Σ_i A_{ii}` in normal-frame coefficients.
pub fn trace_field(sff: &SecondFundamentalForm) -> Field {
    let r = sff.r;
    let mut out = Field::zeros_like(&sff.a, r);
    for n in 0..sff.a.data.len() / (4 * r) {
        for al in 0..r {
            out.data[n * r + al] = sff.a.data[n * 4 * r + al] + sff.a.data[n * 4 * r + 3 * r + al];
        }
    }
    out
}

/// Largest `|Σ_i A(τ_i, τ_i)|` over `region`.
pub fn minimality_residual(sff: &SecondFundamentalForm, region: &Region) -> f64 {
    trace_field(sff).sup_norm(region)
}

/// Frame connection coefficients: `Γ_{ij}^l = ⟨∇_{τ_i}τ_j, τ_l⟩` at index `(i*2+j)*2+l`
/// and `θ_{iα}^β = ⟨D_{τ_i}ν_α, ν_β⟩` at index `(i*r + α)*r + β`.
pub fn connection_coefficients(fp: &FramePackage) -> (Field, Field) {
    let r = fp.r;
    let grid = &fp.grid;
    let gamma = Field::from_fn(grid, 8, 1, |i, j, out| {
        let node = grid.idx(i, j);
        let e = &fp.e[node];
        for ii in 0..2 {
            let w = e[0][ii] * fp.omega[node][0] + e[1][ii] * fp.omega[node][1];
            // ∇τ₁ = w τ₂, ∇τ₂ = −w τ₁
            out[(ii * 2) * 2 + 1] = w;
            out[(ii * 2 + 1) * 2] = -w;
        }
    });
    let theta = Field::from_fn(grid, 2 * r * r, 1, |i, j, out| {
        let node = grid.idx(i, j);
        let e = &fp.e[node];
        for ii in 0..2 {
            for al in 0..r {
                for be in 0..r {
                    out[(ii * r + al) * r + be] = e[0][ii] * fp.theta(node, 0)[be * r + al]
                        + e[1][ii] * fp.theta(node, 1)[be * r + al];
                }
            }
        }
    });
    (gamma, theta)
}

/// Normal curvature `F^D_{τ₁τ₂}` (matrix `[β][α]` acting on coefficients) and Gauss curvature.
#[derive(Debug, Clone)]
pub struct CurvatureFields {
    pub fd: Field,
    pub gauss: Field,
}

pub fn curvatures(fp: &FramePackage) -> CurvatureFields {
    let r = fp.r;
    let rr = r * r;
    let grid = &fp.grid;
    let fd = Field::from_fn(grid, rr, 2, |i, j, out| {
        let node = grid.idx(i, j);
        let (up, um) = (grid.idx(i + 1, j), grid.idx(i - 1, j));
        let (vp, vm) = (grid.idx(i, j + 1), grid.idx(i, j - 1));
        let (tu, tv) = (fp.theta(node, 0), fp.theta(node, 1));
        for be in 0..r {
            for al in 0..r {
                let k = be * r + al;
                let d_u_tv = (fp.theta(up, 1)[k] - fp.theta(um, 1)[k]) / (2.0 * grid.du);
                let d_v_tu = (fp.theta(vp, 0)[k] - fp.theta(vm, 0)[k]) / (2.0 * grid.dv);
                let mut comm = 0.0;
                for ga in 0..r {
                    comm += tu[be * r + ga] * tv[ga * r + al] - tv[be * r + ga] * tu[ga * r + al];
                }
                out[k] = (d_u_tv - d_v_tu + comm) / fp.sqrt_g[node];
            }
        }
    });
    let gauss = Field::from_fn(grid, 1, 2, |i, j, out| {
        let node = grid.idx(i, j);
        let d_u_wv =
            (fp.omega[grid.idx(i + 1, j)][1] - fp.omega[grid.idx(i - 1, j)][1]) / (2.0 * grid.du);
        let d_v_wu =
            (fp.omega[grid.idx(i, j + 1)][0] - fp.omega[grid.idx(i, j - 1)][0]) / (2.0 * grid.dv);
        out[0] = -(d_u_wv - d_v_wu) / fp.sqrt_g[node];
    });
    CurvatureFields { fd, gauss }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::immersion::builtin_surface;
    use std::collections::BTreeMap;

    fn patch(name: &str, pairs: &[(&str, &str)]) -> ImmersionPatch {
        let p: BTreeMap<String, String> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        builtin_surface(name, &p).unwrap()
    }

    #[test]
    fn plane_frames_are_the_coordinate_frames() {
        let fp = compute_frames(&patch("plane_k", &[("k", "2")])).unwrap();
        let node = fp.grid.idx(5, 7);
        assert_eq!(fp.tau(node, 0), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(fp.tau(node, 1), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        for al in 0..4 {
            let mut e = vec![0.0; 6];
            e[2 + al] = 1.0;
            assert_eq!(fp.nu(node, al), e.as_slice());
        }
        assert!(fp.theta.iter().all(|x| *x == 0.0));
        let sff = second_fundamental_form(&fp);
        assert_eq!(sff.a.max_abs(&fp.grid.interior(0)), 0.0);
    }

    #[test]
    fn frames_are_orthonormal_and_oriented() {
        for (name, pr) in [
            ("holo_graph", vec![("p", "z^2;z^3")]),
            ("catenoid_r6", vec![]),
            ("enneper_r6", vec![]),
        ] {
            let fp = compute_frames(&patch(name, &pr)).unwrap();
            for node in 0..fp.grid.len() {
                let mut vs: Vec<&[f64]> = vec![fp.tau(node, 0), fp.tau(node, 1)];
                vs.extend((0..fp.r).map(|al| fp.nu(node, al)));
                for a in 0..vs.len() {
                    for b in 0..vs.len() {
                        let want = if a == b { 1.0 } else { 0.0 };
                        assert!(
                            (dot(vs[a], vs[b]) - want).abs() < 1e-12,
                            "{name} node {node}"
                        );
                    }
                }
                // (τ₁, τ₂) oriented like (F_u, F_v)
                assert!(fp.c[node][1][1] > 0.0);
            }
        }
    }

    #[test]
    fn catenoid_normal_frame_is_r3_normal_plus_constants() {
        let fp = compute_frames(&patch("catenoid_r6", &[])).unwrap();
        for node in [0, 100, fp.grid.len() - 1] {
            for al in 1..4 {
                let nu = fp.nu(node, al);
                assert!((nu[2 + al] - 1.0).abs() < 1e-12);
            }
        }
        assert!(fp.theta.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn catenoid_waist_principal_curvatures_are_unit() {
        let fp = compute_frames(&patch("catenoid_r6", &[])).unwrap();
        let sff = second_fundamental_form(&fp);
        let (i, j) = fp.grid.nearest(0.0, 0.0);
        let r = fp.r;
        let a = sff.a.at(i, j);
        let (a11, a12, a22) = (a[0], a[r], a[3 * r]);
        assert!((a11 + a22).abs() < 1e-13);
        let ev = (a11 * a11 + a12 * a12).sqrt();
        assert!((ev - 1.0).abs() < 1e-13);
        for al in 1..r {
            assert!(a[al].abs() < 1e-14 && a[r + al].abs() < 1e-14 && a[3 * r + al].abs() < 1e-14);
        }
    }

    #[test]
    fn connection_coefficients_are_antisymmetric() {
        let fp = compute_frames(&patch("holo_graph", &[("p", "z^3;z^2")])).unwrap();
        let (gamma, theta) = connection_coefficients(&fp);
        let r = fp.r;
        for (i, j) in fp.grid.interior(1).iter() {
            let gm = gamma.at(i, j);
            let th = theta.at(i, j);
            for ii in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        assert_eq!(gm[(ii * 2 + a) * 2 + b], -gm[(ii * 2 + b) * 2 + a]);
                    }
                }
                for al in 0..r {
                    for be in 0..r {
                        assert_eq!(th[(ii * r + al) * r + be], -th[(ii * r + be) * r + al]);
                    }
                }
            }
        }
    }
}
