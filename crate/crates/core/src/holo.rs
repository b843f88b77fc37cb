//! Infinitesimal holomorphicity, the `D^{0,1}`/`D^{1,0}` calculus, Weitzenböck
//! identities for it, and reconstruction of a constant ambient complex structure.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::calculus::{apply_normal, TensorCalculus};
use crate::complex::NormalComplexStructure;
use crate::frames::{CurvatureFields, FramePackage, SecondFundamentalForm};
use crate::grid::{norm, Field, Region};
use crate::immersion::dot;
use crate::variation::ApmTensors;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HoloResiduals {
    /// `max ‖A(J_Σv, w) − J_N A(v, w)‖` over nodes and frame pairs.
    pub res_b: f64,
    /// `max ‖(∇̄_{τ_i} J) X‖` over nodes, directions and frame vectors `X`.
    pub res_a: f64,
    pub res_b_minus: f64,
    pub res_a_minus: f64,
}

/// `J = J_Σ ⊕ J_N` as an ambient matrix at every node (row-major `n×n`).
pub fn ambient_j_field(fp: &FramePackage, jn: &NormalComplexStructure) -> Field {
    let n = fp.n;
    let r = fp.r;
    Field::from_fn(&fp.grid, n * n, jn.jn.margin, |i, j, out| {
        let node = fp.grid.idx(i, j);
        let (t1, t2) = (fp.tau(node, 0), fp.tau(node, 1));
        let jm = jn.jn.at(i, j);
        for p in 0..n {
            for q in 0..n {
                let mut v = t2[p] * t1[q] - t1[p] * t2[q];
                for be in 0..r {
                    let nb = fp.nu(node, be)[p];
                    for al in 0..r {
                        v += jm[be * r + al] * nb * fp.nu(node, al)[q];
                    }
                }
                out[p * n + q] = v;
            }
        }
    })
}

fn res_b(sff: &SecondFundamentalForm, jn: &NormalComplexStructure, region: &Region) -> f64 {
    let r = sff.r;
    let reg = region.intersect(&jn.jn.valid());
    let mut worst: f64 = 0.0;
    for (i, j) in reg.iter() {
        let a = sff.a.at(i, j);
        let jm = jn.jn.at(i, j);
        for ii in 0..2 {
            for jj in 0..2 {
                let (src, s) = if ii == 0 { (1, 1.0) } else { (0, -1.0) };
                let lhs = &a[(src * 2 + jj) * r..(src * 2 + jj + 1) * r];
                let rhs = &a[(ii * 2 + jj) * r..(ii * 2 + jj + 1) * r];
                let d: Vec<f64> = (0..r)
                    .map(|be| s * lhs[be] - (0..r).map(|al| jm[be * r + al] * rhs[al]).sum::<f64>())
                    .collect();
                worst = worst.max(norm(&d));
            }
        }
    }
    worst
}

fn res_a(fp: &FramePackage, jn: &NormalComplexStructure, region: &Region) -> f64 {
    let n = fp.n;
    let grid = &fp.grid;
    let jf = ambient_j_field(fp, jn);
    let reg = region.intersect(&grid.interior(jf.margin + 1));
    let mut worst: f64 = 0.0;
    for (i, j) in reg.iter() {
        let node = grid.idx(i, j);
        let du: Vec<f64> = (0..n * n)
            .map(|k| (jf.at(i + 1, j)[k] - jf.at(i - 1, j)[k]) / (2.0 * grid.du))
            .collect();
        let dv: Vec<f64> = (0..n * n)
            .map(|k| (jf.at(i, j + 1)[k] - jf.at(i, j - 1)[k]) / (2.0 * grid.dv))
            .collect();
        let e = &fp.e[node];
        let frame: Vec<&[f64]> = (0..2)
            .map(|t| fp.tau(node, t))
            .chain((0..fp.r).map(|al| fp.nu(node, al)))
            .collect();
        for ii in 0..2 {
            let d: Vec<f64> = (0..n * n)
                .map(|k| e[0][ii] * du[k] + e[1][ii] * dv[k])
                .collect();
            for x in &frame {
                let y: Vec<f64> = (0..n).map(|p| dot(&d[p * n..(p + 1) * n], x)).collect();
                worst = worst.max(norm(&y));
            }
        }
    }
    worst
}

/// Both forms of the infinitesimal holomorphicity test, for `J_N` and for `−J_N`.
pub fn inf_holo_residuals(
    sff: &SecondFundamentalForm,
    fp: &FramePackage,
    jn: &NormalComplexStructure,
    region: &Region,
) -> HoloResiduals {
    let neg = jn.negated();
    HoloResiduals {
        res_b: res_b(sff, jn, region),
        res_a: res_a(fp, jn, region),
        res_b_minus: res_b(sff, &neg, region),
        res_a_minus: res_a(fp, &neg, region),
    }
}

/// `D^{0,1}_{τ_i} T` and `D^{1,0}_{τ_i} T` for a rank-`p` normal-valued tensor, plus the
/// residual of `D^{0,1}_{J_Σ v} = −J_N D^{0,1}_v` and `D^{1,0}_{J_Σ v} = J_N D^{1,0}_v`.
#[derive(Debug, Clone)]
pub struct DbarDerivatives {
    pub d01: [Field; 2],
    pub d10: [Field; 2],
    pub intertwining: f64,
}

pub fn dbar_operators(
    t: &Field,
    p: usize,
    fp: &FramePackage,
    jn: &NormalComplexStructure,
) -> DbarDerivatives {
    let r = fp.r;
    let calc = TensorCalculus::new(fp, p);
    let d = calc.frame_derivative(t);
    let (d01, d10) = split_derivative(&d, jn, r);
    let mut worst: f64 = 0.0;
    for (sign, op) in [(-1.0, &d01), (1.0, &d10)] {
        // v = τ₁: J_Σ v = τ₂
        let jd = apply_normal(&jn.jn, &op[0], r);
        for (i, j) in op[1].valid().iter() {
            let x: Vec<f64> = op[1]
                .at(i, j)
                .iter()
                .zip(jd.at(i, j))
                .map(|(a, b)| a - sign * b)
                .collect();
            worst = worst.max(norm(&x));
        }
    }
    DbarDerivatives {
        d01,
        d10,
        intertwining: worst,
    }
}

/// Splits `(D_{τ₁}T, D_{τ₂}T)` into its `J`-antilinear and `J`-linear halves.
fn split_derivative(
    d: &[Field; 2],
    jn: &NormalComplexStructure,
    r: usize,
) -> ([Field; 2], [Field; 2]) {
    // D_{J_Σ τ₁} = D_{τ₂}, D_{J_Σ τ₂} = −D_{τ₁}
    let jd1 = apply_normal(&jn.jn, &d[1], r);
    let jd0 = apply_normal(&jn.jn, &d[0], r);
    let half = |a: &Field, b: &Field, s: f64| a.combine(b, |x, y| 0.5 * (x + s * y));
    let d01 = [half(&d[0], &jd1, 1.0), half(&d[1], &jd0, -1.0)];
    let d10 = [half(&d[0], &jd1, -1.0), half(&d[1], &jd0, 1.0)];
    (d01, d10)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApmHolomorphicity {
    /// `max ‖(D^{0,1}A⁺)_{τ₁,τ₁,τ₁}‖`.
    pub res_plus: f64,
    /// `max ‖(D^{1,0}A⁻)_{τ₁,τ₁,τ₁}‖`.
    pub res_minus: f64,
    pub full_plus: f64,
    pub full_minus: f64,
    /// `max |tr A|`, compared against the minimality threshold by callers.
    pub trace_residual: f64,
}

pub fn verify_apm_holomorphicity(
    apm: &ApmTensors,
    sff: &SecondFundamentalForm,
    fp: &FramePackage,
    jn: &NormalComplexStructure,
    region: &Region,
) -> ApmHolomorphicity {
    let r = fp.r;
    let plus = dbar_operators(&apm.plus, 2, fp, jn);
    let minus = dbar_operators(&apm.minus, 2, fp, jn);
    let reg = region.intersect(&plus.d01[0].valid());
    let comp = |f: &Field| {
        reg.iter()
            .map(|(i, j)| norm(&f.at(i, j)[..r]))
            .fold(0.0, f64::max)
    };
    let full = |fs: &[Field; 2]| fs.iter().map(|f| f.sup_norm(&reg)).fold(0.0, f64::max);
    let trace = crate::frames::trace_field(sff).sup_norm(region);
    ApmHolomorphicity {
        res_plus: comp(&plus.d01[0]),
        res_minus: comp(&minus.d10[0]),
        full_plus: full(&plus.d01),
        full_minus: full(&minus.d10),
        trace_residual: trace,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeitzenbockResiduals {
    pub sum_residual: f64,
    pub diff_residual: f64,
}

/// `(D^{0,1})*ψ = ½(div ψ + div φ)` and `(D^{1,0})*ψ = ½(div ψ − div φ)` with `φ(v) = J_N ψ(J_Σ v)`.
fn dbar_adjoints(
    calc: &TensorCalculus,
    psi: &[Field; 2],
    jn: &NormalComplexStructure,
    r: usize,
) -> (Field, Field) {
    let phi = [
        apply_normal(&jn.jn, &psi[1], r),
        apply_normal(&jn.jn, &psi[0], r).scaled(-1.0),
    ];
    let dp = calc.divergence(&calc.to_chart(psi));
    let df = calc.divergence(&calc.to_chart(&phi));
    (
        dp.combine(&df, |a, b| 0.5 * (a + b)),
        dp.combine(&df, |a, b| 0.5 * (a - b)),
    )
}

/// Residuals of `(D^{1,0})*D^{1,0} ± (D^{0,1})*D^{0,1}` against `D*D` and against the curvature commutator.
pub fn verify_weitzenbock(
    t: &Field,
    p: usize,
    fp: &FramePackage,
    jn: &NormalComplexStructure,
    region: &Region,
) -> WeitzenbockResiduals {
    let r = fp.r;
    let calc = TensorCalculus::new(fp, p);
    let d = calc.frame_derivative(t);
    let (d01, d10) = split_derivative(&d, jn, r);
    let (a01, _) = dbar_adjoints(&calc, &d01, jn, r);
    let (_, a10) = dbar_adjoints(&calc, &d10, jn, r);
    let lap = calc.laplacian_hess(t);
    let h = calc.frame_hessian(t);
    // ½ J_N Σ_i (D²_{e_i,J e_i} − D²_{J e_i,e_i}) T = J_N (D²_{τ₁τ₂} − D²_{τ₂τ₁}) T
    let comm = apply_normal(&jn.jn, &h[0][1].sub(&h[1][0]), r);
    let reg = region.intersect(&a01.valid()).intersect(&lap.valid());
    let sum = a10.add(&a01).sub(&lap);
    let diff = a10.sub(&a01).sub(&comm);
    WeitzenbockResiduals {
        sum_residual: sum.max_abs(&reg),
        diff_residual: diff.max_abs(&reg),
    }
}

/// Curvature sign convention for the `A⁺` second-order equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureConvention {
    /// `R(X,Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_{[X,Y]}` for both `F^D` and `R^Σ`.
    Standard,
    /// Both curvatures negated.
    Opposite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct APlusPdeResidual {
    pub standard: f64,
    pub opposite: f64,
    pub annihilating: CurvatureConvention,
}

impl APlusPdeResidual {
    pub fn reported(&self) -> f64 {
        self.standard.min(self.opposite)
    }
}

/// `max ‖½D*DA⁺ − ½J_N(F^D A⁺_{vw} − A⁺_{Rv,w} − A⁺_{v,Rw})‖` with `R = R^Σ_{τ₁τ₂} = −K J_Σ`.
pub fn a_plus_pde_residual(
    apm: &ApmTensors,
    curv: &CurvatureFields,
    fp: &FramePackage,
    jn: &NormalComplexStructure,
    region: &Region,
) -> APlusPdeResidual {
    let r = fp.r;
    let calc = TensorCalculus::new(fp, 2);
    let lap = calc.laplacian_hess(&apm.plus);
    let fa = apply_normal(&curv.fd, &apm.plus, r);
    let ap = &apm.plus;
    // T(Rτ_i, ·) = −K T(J_Σ τ_i, ·); same on the second slot
    let curv_term = Field::from_fn(
        &fp.grid,
        4 * r,
        lap.margin.max(curv.fd.margin),
        |i, j, out| {
            let k = curv.gauss.at(i, j)[0];
            let t = ap.at(i, j);
            let c = |a: usize, b: usize| &t[(a * 2 + b) * r..(a * 2 + b + 1) * r];
            let f = fa.at(i, j);
            for a in 0..2 {
                for b in 0..2 {
                    let (sa, ra) = if a == 0 { (1.0, 1) } else { (-1.0, 0) };
                    let (sb, rb) = if b == 0 { (1.0, 1) } else { (-1.0, 0) };
                    for al in 0..r {
                        let rv = -k * sa * c(ra, b)[al];
                        let rw = -k * sb * c(a, rb)[al];
                        out[(a * 2 + b) * r + al] = f[(a * 2 + b) * r + al] - rv - rw;
                    }
                }
            }
        },
    );
    let jc = apply_normal(&jn.jn, &curv_term, r);
    let reg = region.intersect(&jc.valid()).intersect(&lap.valid());
    let standard = lap.combine(&jc, |a, b| 0.5 * a - 0.5 * b).sup_norm(&reg);
    let opposite = lap.combine(&jc, |a, b| 0.5 * a + 0.5 * b).sup_norm(&reg);
    let annihilating = if standard <= opposite {
        CurvatureConvention::Standard
    } else {
        CurvatureConvention::Opposite
    };
    APlusPdeResidual {
        standard,
        opposite,
        annihilating,
    }
}

/// Which orientation of the normal structure builds `J = J_Σ ⊕ ±J_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbientComplexStructure {
    pub n: usize,
    /// Row-major `J̄`, the polar factor of the grid average of `J_{ij}(x) = ⟨e_i, J e_j⟩`.
    pub jbar: Vec<f64>,
    /// `max_x ‖J(x) − J̄‖_F`.
    pub constancy_residual: f64,
    /// `‖average − J̄‖_F`.
    pub polar_distance: f64,
    /// `‖J̄ᵀJ̄ − I‖_F`.
    pub orthogonality: f64,
    /// `‖J̄² + I‖_F`.
    pub square: f64,
    /// `max_x ‖F_* J_Σ τ_i − J̄ F_* τ_i‖`.
    pub holomorphy_residual: f64,
}

pub fn reconstruct_ambient_j(
    fp: &FramePackage,
    jn: &NormalComplexStructure,
    which: Orientation,
    region: &Region,
) -> AmbientComplexStructure {
    let n = fp.n;
    let j = match which {
        Orientation::Plus => jn.clone(),
        Orientation::Minus => jn.negated(),
    };
    let jf = ambient_j_field(fp, &j);
    let reg = region.intersect(&jf.valid());
    let count = reg.iter().count().max(1) as f64;
    let mut avg = DMatrix::<f64>::zeros(n, n);
    for (i, jj) in reg.iter() {
        avg += DMatrix::from_row_slice(n, n, jf.at(i, jj));
    }
    avg /= count;
    let svd = avg.clone().svd(true, true);
    let jbar = svd.u.as_ref().unwrap() * svd.v_t.as_ref().unwrap();
    let id = DMatrix::<f64>::identity(n, n);
    let mut constancy: f64 = 0.0;
    let mut holo: f64 = 0.0;
    for (i, jj) in reg.iter() {
        let m = DMatrix::from_row_slice(n, n, jf.at(i, jj));
        constancy = constancy.max((m - &jbar).norm());
        let node = fp.grid.idx(i, jj);
        let t1 = nalgebra::DVector::from_column_slice(fp.tau(node, 0));
        let t2 = nalgebra::DVector::from_column_slice(fp.tau(node, 1));
        holo = holo
            .max((&t2 - &jbar * &t1).norm())
            .max((-&t1 - &jbar * &t2).norm());
    }
    AmbientComplexStructure {
        n,
        jbar: jbar.transpose().iter().copied().collect(),
        constancy_residual: constancy,
        polar_distance: (&avg - &jbar).norm(),
        orthogonality: (jbar.transpose() * &jbar - &id).norm(),
        square: (&jbar * &jbar + &id).norm(),
        holomorphy_residual: holo,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::catalog_jn;
    use crate::frames::{compute_frames, curvatures, second_fundamental_form};
    use crate::immersion::builtin_surface;
    use crate::variation::apm_decompose;
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
    fn plane_is_holomorphic_both_ways() {
        let (fp, sff, jn) = setup("plane_k", &[], 17);
        let res = inf_holo_residuals(&sff, &fp, &jn, &fp.grid.interior(0));
        assert_eq!((res.res_b, res.res_b_minus), (0.0, 0.0));
        assert!(res.res_a < 1e-13 && res.res_a_minus < 1e-13);
        let amb = reconstruct_ambient_j(&fp, &jn, Orientation::Plus, &fp.grid.interior(0));
        assert!(amb.constancy_residual <= 1e-12);
    }

    #[test]
    fn res_b_is_twice_the_antiholomorphic_part() {
        let (fp, sff, jn) = setup("holo_graph", &[("p", "z^2")], 17);
        let reg = fp.grid.interior(0);
        let apm = apm_decompose(&sff, &jn);
        let (mp, mm) = apm.max_norms(&reg);
        let res = inf_holo_residuals(&sff, &fp, &jn, &reg);
        assert!((res.res_b - 2.0 * mm).abs() < 1e-12);
        assert!((res.res_b_minus - 2.0 * mp).abs() < 1e-12);
        assert!(res.res_b_minus > 0.5);
    }

    #[test]
    fn holo_graph_reconstructs_a_constant_structure() {
        let (fp, _, jn) = setup("holo_graph", &[("p", "z^2")], 17);
        let amb = reconstruct_ambient_j(&fp, &jn, Orientation::Plus, &fp.grid.interior(0));
        assert!(amb.constancy_residual < 1e-12);
        assert!(amb.square < 1e-12 && amb.holomorphy_residual < 1e-12);
    }

    #[test]
    fn catenoid_is_not_holomorphic() {
        let (fp, sff, jn) = setup("catenoid_r6", &[], 33);
        let reg = fp.grid.interior(1);
        let res = inf_holo_residuals(&sff, &fp, &jn, &reg);
        assert!(res.res_b > 0.5 && res.res_b_minus > 0.5);
        let amb = reconstruct_ambient_j(&fp, &jn, Orientation::Plus, &reg);
        assert!(amb.constancy_residual > 0.1);
    }

    #[test]
    fn dbar_intertwining_is_exact() {
        let (fp, sff, jn) = setup("catenoid_r6", &[], 17);
        let apm = apm_decompose(&sff, &jn);
        let d = dbar_operators(&apm.plus, 2, &fp, &jn);
        assert!(d.intertwining < 1e-13);
    }

    #[test]
    fn a_plus_pde_vanishes_on_the_plane() {
        let (fp, sff, jn) = setup("plane_k", &[], 17);
        let apm = apm_decompose(&sff, &jn);
        let res = a_plus_pde_residual(&apm, &curvatures(&fp), &fp, &jn, &fp.grid.interior(0));
        assert_eq!(res.reported(), 0.0);
    }
}
