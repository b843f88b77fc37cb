//! Covariant calculus for normal-bundle-valued tensors `(T*Σ)^{⊗p} ⊗ NΣ`.
//!
//! Fields hold frame components: a rank-`p` tensor `T` stores
//! `T(τ_{i1}, …, τ_{ip})^α` at index `((i1*2 + i2)…)*r + α`. The chart
//! connection matrix on this bundle combines `Θ_a` on the normal index with
//! the Levi-Civita rotation `ω_a` on every tangent slot.

use crate::frames::FramePackage;
use crate::grid::Field;

pub struct TensorCalculus<'a> {
    pub fp: &'a FramePackage,
    pub p: usize,
    pub dim: usize,
}

impl<'a> TensorCalculus<'a> {
    pub fn new(fp: &'a FramePackage, p: usize) -> Self {
        Self {
            fp,
            p,
            dim: (1 << p) * fp.r,
        }
    }

    /// `out += Ω x` for a connection given by a normal matrix `theta` (`[β][α]`) and tangent rotation `omega`.
    pub fn apply_connection(&self, theta: &[f64], omega: f64, x: &[f64], out: &mut [f64]) {
        let r = self.fp.r;
        let blocks = 1 << self.p;
        for b in 0..blocks {
            let xs = &x[b * r..(b + 1) * r];
            let os = &mut out[b * r..(b + 1) * r];
            for be in 0..r {
                let row = &theta[be * r..(be + 1) * r];
                os[be] += row.iter().zip(xs).map(|(t, s)| t * s).sum::<f64>();
            }
        }
        if omega != 0.0 {
            for q in 0..self.p {
                // slot q carries bit (p-1-q) of the block index
                let bit = 1 << (self.p - 1 - q);
                for b in 0..blocks {
                    if b & bit != 0 {
                        continue;
                    }
                    let (b0, b1) = (b, b | bit);
                    for al in 0..r {
                        let (x0, x1) = (x[b0 * r + al], x[b1 * r + al]);
                        // (Dψ)_0 gets −ω ψ_1, (Dψ)_1 gets +ω ψ_0
                        out[b0 * r + al] -= omega * x1;
                        out[b1 * r + al] += omega * x0;
                    }
                }
            }
        }
    }

    fn conn_at(&self, node: usize, a: usize, x: &[f64], out: &mut [f64]) {
        self.apply_connection(self.fp.theta(node, a), self.fp.omega[node][a], x, out);
    }

    /// Chart covariant derivatives `D_{∂_u} s`, `D_{∂_v} s` by centered differences.
    pub fn chart_derivative(&self, s: &Field) -> [Field; 2] {
        assert_eq!(s.dim, self.dim);
        let grid = &self.fp.grid;
        let m = s.margin + 1;
        let mk = |a: usize| {
            Field::from_fn(grid, self.dim, m, |i, j, out| {
                let node = grid.idx(i, j);
                let (p, q) = if a == 0 {
                    ((i + 1, j), (i - 1, j))
                } else {
                    ((i, j + 1), (i, j - 1))
                };
                let h2 = 2.0 * grid.step(a);
                let (sp, sm) = (s.at(p.0, p.1), s.at(q.0, q.1));
                for k in 0..self.dim {
                    out[k] = (sp[k] - sm[k]) / h2;
                }
                self.conn_at(node, a, s.at(i, j), out);
            })
        };
        [mk(0), mk(1)]
    }

    /// Frame components `D_{τ_i} s` from chart derivatives.
    pub fn to_frame(&self, chart: &[Field; 2]) -> [Field; 2] {
        let grid = &self.fp.grid;
        let m = chart[0].margin.max(chart[1].margin);
        let mk = |ii: usize| {
            Field::from_fn(grid, self.dim, m, |i, j, out| {
                let e = &self.fp.e[grid.idx(i, j)];
                let (x, y) = (chart[0].at(i, j), chart[1].at(i, j));
                for k in 0..self.dim {
                    out[k] = e[0][ii] * x[k] + e[1][ii] * y[k];
                }
            })
        };
        [mk(0), mk(1)]
    }

    /// Chart components `ψ(∂_a) = Σ_i c[i][a] ψ(τ_i)` of a bundle-valued one-form.
    pub fn to_chart(&self, frame: &[Field; 2]) -> [Field; 2] {
        let grid = &self.fp.grid;
        let m = frame[0].margin.max(frame[1].margin);
        let mk = |a: usize| {
            Field::from_fn(grid, self.dim, m, |i, j, out| {
                let c = &self.fp.c[grid.idx(i, j)];
                let (x, y) = (frame[0].at(i, j), frame[1].at(i, j));
                for k in 0..self.dim {
                    out[k] = c[0][a] * x[k] + c[1][a] * y[k];
                }
            })
        };
        [mk(0), mk(1)]
    }

    pub fn frame_derivative(&self, s: &Field) -> [Field; 2] {
        self.to_frame(&self.chart_derivative(s))
    }

    /// `div ψ = −(1/√g) D_a(√g g^{ab} ψ_b)` for a bundle-valued one-form in chart components.
    pub fn divergence(&self, psi: &[Field; 2]) -> Field {
        let fp = self.fp;
        let grid = &fp.grid;
        let d = self.dim;
        let m_in = psi[0].margin.max(psi[1].margin);
        // X_a = √g g^{ab} ψ_b
        let x: Vec<Field> = (0..2)
            .map(|a| {
                Field::from_fn(grid, d, m_in, |i, j, out| {
                    let node = grid.idx(i, j);
                    let sg = fp.sqrt_g[node];
                    let (w0, w1) = (sg * fp.ginv_ab(node, a, 0), sg * fp.ginv_ab(node, a, 1));
                    let (p0, p1) = (psi[0].at(i, j), psi[1].at(i, j));
                    for k in 0..d {
                        out[k] = w0 * p0[k] + w1 * p1[k];
                    }
                })
            })
            .collect();
        Field::from_fn(grid, d, (m_in + 1).max(1), |i, j, out| {
            let node = grid.idx(i, j);
            let mut acc = vec![0.0; d];
            for a in 0..2 {
                let (p, q) = if a == 0 {
                    ((i + 1, j), (i - 1, j))
                } else {
                    ((i, j + 1), (i, j - 1))
                };
                let h2 = 2.0 * grid.step(a);
                let (xp, xm) = (x[a].at(p.0, p.1), x[a].at(q.0, q.1));
                for k in 0..d {
                    acc[k] += (xp[k] - xm[k]) / h2;
                }
                self.conn_at(node, a, x[a].at(i, j), &mut acc);
            }
            let sg = fp.sqrt_g[node];
            for k in 0..d {
                out[k] = -acc[k] / sg;
            }
        })
    }

    /// Chart Hessian `D²(∂_a, ∂_b) s = D_a D_b s − Γ^c_{ab} D_c s` with compact stencils.
    ///
    /// `D_a D_b s = ∂_a∂_b s + (∂_aΩ_b) s + Ω_b ∂_a s + Ω_a ∂_b s + Ω_a Ω_b s`; the result is
    /// not symmetric in `(a, b)`, its antisymmetric part being the curvature.
    pub fn hessian(&self, s: &Field) -> [[Field; 2]; 2] {
        let fp = self.fp;
        let grid = &fp.grid;
        let d = self.dim;
        let r = fp.r;
        let rr = r * r;
        let m = (s.margin + 1).max(2);
        let node_of = |i: usize, j: usize| grid.idx(i, j);
        let mk = |a: usize, b: usize| {
            Field::from_fn(grid, d, m, |i, j, out| {
                let node = node_of(i, j);
                let (du, dv) = (grid.du, grid.dv);
                let s0 = s.at(i, j);
                let (sup, sum) = (s.at(i + 1, j), s.at(i - 1, j));
                let (svp, svm) = (s.at(i, j + 1), s.at(i, j - 1));
                let ds = |c: usize, k: usize| {
                    if c == 0 {
                        (sup[k] - sum[k]) / (2.0 * du)
                    } else {
                        (svp[k] - svm[k]) / (2.0 * dv)
                    }
                };
                // ∂_a ∂_b s
                for k in 0..d {
                    out[k] = match (a, b) {
                        (0, 0) => (sup[k] - 2.0 * s0[k] + sum[k]) / (du * du),
                        (1, 1) => (svp[k] - 2.0 * s0[k] + svm[k]) / (dv * dv),
                        _ => {
                            (s.at(i + 1, j + 1)[k] - s.at(i + 1, j - 1)[k] - s.at(i - 1, j + 1)[k]
                                + s.at(i - 1, j - 1)[k])
                                / (4.0 * du * dv)
                        }
                    };
                }
                // (∂_a Ω_b) s
                let (np, nm) = if a == 0 {
                    (node_of(i + 1, j), node_of(i - 1, j))
                } else {
                    (node_of(i, j + 1), node_of(i, j - 1))
                };
                let h2 = 2.0 * grid.step(a);
                let dtheta: Vec<f64> = (0..rr)
                    .map(|k| (fp.theta(np, b)[k] - fp.theta(nm, b)[k]) / h2)
                    .collect();
                let domega = (fp.omega[np][b] - fp.omega[nm][b]) / h2;
                self.apply_connection(&dtheta, domega, s0, out);
                // Ω_b ∂_a s + Ω_a ∂_b s
                let da: Vec<f64> = (0..d).map(|k| ds(a, k)).collect();
                let db: Vec<f64> = (0..d).map(|k| ds(b, k)).collect();
                self.conn_at(node, b, &da, out);
                self.conn_at(node, a, &db, out);
                // Ω_a Ω_b s
                let mut tmp = vec![0.0; d];
                self.conn_at(node, b, s0, &mut tmp);
                self.conn_at(node, a, &tmp, out);
                // − Γ^c_{ab} D_c s
                for c in 0..2 {
                    let gam = fp.christoffel[node][c][a][b];
                    if gam == 0.0 {
                        continue;
                    }
                    let mut dc: Vec<f64> = (0..d).map(|k| ds(c, k)).collect();
                    self.conn_at(node, c, s0, &mut dc);
                    for k in 0..d {
                        out[k] -= gam * dc[k];
                    }
                }
            })
        };
        [[mk(0, 0), mk(0, 1)], [mk(1, 0), mk(1, 1)]]
    }

    /// Frame Hessian `D²_{τ_i, τ_j} s = Σ_{ab} E_{ai} E_{bj} D²(∂_a, ∂_b) s`.
    pub fn frame_hessian(&self, s: &Field) -> [[Field; 2]; 2] {
        let h = self.hessian(s);
        let grid = &self.fp.grid;
        let m = h[0][0].margin;
        let mk = |ii: usize, jj: usize| {
            Field::from_fn(grid, self.dim, m, |i, j, out| {
                let e = &self.fp.e[grid.idx(i, j)];
                for a in 0..2 {
                    for b in 0..2 {
                        let w = e[a][ii] * e[b][jj];
                        if w == 0.0 {
                            continue;
                        }
                        for (o, x) in out.iter_mut().zip(h[a][b].at(i, j)) {
                            *o += w * x;
                        }
                    }
                }
            })
        };
        [[mk(0, 0), mk(0, 1)], [mk(1, 0), mk(1, 1)]]
    }

    /// `D*D s = −g^{ab} D²(∂_a, ∂_b) s` (Hessian trace).
    pub fn laplacian_hess(&self, s: &Field) -> Field {
        let h = self.hessian(s);
        let fp = self.fp;
        let grid = &fp.grid;
        Field::from_fn(grid, self.dim, h[0][0].margin, |i, j, out| {
            let node = grid.idx(i, j);
            for a in 0..2 {
                for b in 0..2 {
                    let w = fp.ginv_ab(node, a, b);
                    for (o, x) in out.iter_mut().zip(h[a][b].at(i, j)) {
                        *o -= w * x;
                    }
                }
            }
        })
    }

    /// `D*D s = div(D s)` (divergence of the chart derivative).
    pub fn laplacian_div(&self, s: &Field) -> Field {
        self.divergence(&self.chart_derivative(s))
    }
}

/// Applies a per-node normal matrix field `m` (`[β][α]`, dim `r*r`) to the normal index of a tensor field.
pub fn apply_normal(m: &Field, t: &Field, r: usize) -> Field {
    let blocks = t.dim / r;
    let mut out = Field::zeros_like(t, t.dim);
    out.margin = t.margin.max(m.margin);
    for n in 0..t.data.len() / t.dim {
        let mm = &m.data[n * r * r..(n + 1) * r * r];
        for b in 0..blocks {
            let x = &t.data[n * t.dim + b * r..n * t.dim + (b + 1) * r];
            for be in 0..r {
                out.data[n * t.dim + b * r + be] = (0..r).map(|al| mm[be * r + al] * x[al]).sum();
            }
        }
    }
    out
}

/// Frame components of `v ↦ T(J_Σ v, …)` acting on the first tangent slot of a rank-`p ≥ 1` tensor.
pub fn rotate_first_slot(t: &Field, p: usize, r: usize) -> Field {
    let half = (1 << (p - 1)) * r;
    let mut out = Field::zeros_like(t, t.dim);
    for n in 0..t.data.len() / t.dim {
        let x = &t.data[n * t.dim..(n + 1) * t.dim];
        let o = &mut out.data[n * t.dim..(n + 1) * t.dim];
        // T(Jτ₁, ·) = T(τ₂, ·), T(Jτ₂, ·) = −T(τ₁, ·)
        for k in 0..half {
            o[k] = x[half + k];
            o[half + k] = -x[k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::compute_frames;
    use crate::immersion::builtin_surface;
    use std::collections::BTreeMap;

    fn fp(name: &str, pairs: &[(&str, &str)], n: usize) -> FramePackage {
        let p: BTreeMap<String, String> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        compute_frames(
            &builtin_surface(name, &p)
                .unwrap()
                .with_resolution(n, n)
                .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn flat_laplacian_of_quadratic_is_exact() {
        let f = fp("plane_k", &[], 17);
        let calc = TensorCalculus::new(&f, 0);
        let g = &f.grid;
        let s = Field::from_fn(g, 2, 0, |i, j, out| {
            let (u, v) = (g.u(i), g.v(j));
            out[0] = u * u + 3.0 * u * v;
            out[1] = v * v;
        });
        let lap = calc.laplacian_hess(&s);
        let ld = calc.laplacian_div(&s);
        for (i, j) in g.interior(2).iter() {
            assert!((lap.at(i, j)[0] + 2.0).abs() < 1e-10);
            assert!((lap.at(i, j)[1] + 2.0).abs() < 1e-10);
            assert!((ld.at(i, j)[0] + 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn tangent_slot_rotation_matches_frame_formula() {
        // For a one-form ψ(τ_i) the connection must give ∂ψ_0 − ωψ_1 and ∂ψ_1 + ωψ_0.
        let f = fp("plane_k", &[], 9);
        let calc = TensorCalculus::new(&f, 1);
        let theta = vec![0.0; 4];
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 4];
        calc.apply_connection(&theta, 0.5, &x, &mut out);
        assert_eq!(out, [-1.5, -2.0, 0.5, 1.0]);
    }

    #[test]
    fn hessian_antisymmetric_part_is_curvature() {
        let f = fp("holo_graph", &[("p", "z^3;z^2")], 33);
        let calc = TensorCalculus::new(&f, 0);
        let g = &f.grid;
        let s = Field::from_fn(g, f.r, 0, |i, j, out| {
            for (al, o) in out.iter_mut().enumerate() {
                *o = (g.u(i) * (al as f64 + 1.0)).sin() + g.v(j) * g.v(j);
            }
        });
        let h = calc.hessian(&s);
        let curv = crate::frames::curvatures(&f);
        let r = f.r;
        for (i, j) in g.interior(3).iter() {
            let node = g.idx(i, j);
            let fd = curv.fd.at(i, j);
            for be in 0..r {
                let rs: f64 = (0..r)
                    .map(|al| fd[be * r + al] * s.at(i, j)[al])
                    .sum::<f64>()
                    * f.sqrt_g[node];
                let diff = h[0][1].at(i, j)[be] - h[1][0].at(i, j)[be];
                assert!((diff - rs).abs() < 1e-10, "{diff} vs {rs}");
            }
        }
    }
}
