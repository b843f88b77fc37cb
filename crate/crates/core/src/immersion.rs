//! Chart domains, immersion patches, the surface catalog and jet evaluation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::taylor::{Cplx, Scalar, Taylor3};

pub const DEFAULT_RANK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChartDomain {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub nu: usize,
    pub nv: usize,
}

impl ChartDomain {
    pub fn new(
        u_min: f64,
        u_max: f64,
        v_min: f64,
        v_max: f64,
        nu: usize,
        nv: usize,
    ) -> Result<Self> {
        let d = Self {
            u_min,
            u_max,
            v_min,
            v_max,
            nu,
            nv,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_min < self.u_max) || !(self.v_min < self.v_max) {
            return Err(LabError::InvalidDomain(format!(
                "need u_min < u_max and v_min < v_max, got [{}, {}] x [{}, {}]",
                self.u_min, self.u_max, self.v_min, self.v_max
            )));
        }
        if self.nu < 8 || self.nv < 8 {
            return Err(LabError::InvalidDomain(format!(
                "resolution {}x{} below the minimum of 8",
                self.nu, self.nv
            )));
        }
        Ok(())
    }

    pub fn with_resolution(&self, nu: usize, nv: usize) -> Result<Self> {
        Self::new(self.u_min, self.u_max, self.v_min, self.v_max, nu, nv)
    }

    pub fn extent(&self) -> f64 {
        (self.u_max - self.u_min).max(self.v_max - self.v_min)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        let eps = 1e-12 * self.extent();
        u >= self.u_min - eps
            && u <= self.u_max + eps
            && v >= self.v_min - eps
            && v <= self.v_max + eps
    }
}

/// Step selection for finite-difference jets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FdStep {
    /// Fixed step in chart units.
    Fixed(f64),
    /// Step equal to the grid spacing of the grid being processed.
    Grid,
    /// `extent * 1e-3`.
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum JetMode {
    Analytic,
    FiniteDifference(FdStep),
}

impl JetMode {
    pub fn label(&self) -> String {
        match self {
            JetMode::Analytic => "analytic".into(),
            JetMode::FiniteDifference(FdStep::Fixed(h)) => format!("fd:{h}"),
            JetMode::FiniteDifference(FdStep::Grid) => "fd:grid".into(),
            JetMode::FiniteDifference(FdStep::Default) => "fd".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "analytic" => Ok(JetMode::Analytic),
            "fd" => Ok(JetMode::FiniteDifference(FdStep::Default)),
            "fd:grid" => Ok(JetMode::FiniteDifference(FdStep::Grid)),
            _ => {
                let h = s
                    .strip_prefix("fd:")
                    .and_then(|x| x.parse::<f64>().ok())
                    .filter(|h| *h > 0.0 && h.is_finite())
                    .ok_or_else(|| LabError::BadParams(format!("unrecognised jet mode `{s}`")))?;
                Ok(JetMode::FiniteDifference(FdStep::Fixed(h)))
            }
        }
    }
}

/// A complex polynomial stored as `(coefficient, power)` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    pub terms: Vec<(Complex64, u32)>,
}

impl Poly {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// Parses sums of terms like `z^3`, `0.5*z^2`, `-2z`, `1.5`.
    pub fn parse(text: &str) -> Result<Self> {
        let cleaned: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if cleaned.is_empty() || cleaned == "0" {
            return Ok(Self::zero());
        }
        let mut pieces = Vec::new();
        let mut cur = String::new();
        for (n, ch) in cleaned.chars().enumerate() {
            if (ch == '+' || ch == '-') && n > 0 && !cur.ends_with(['e', 'E']) {
                pieces.push(std::mem::take(&mut cur));
            }
            cur.push(ch);
        }
        pieces.push(cur);
        let bad = || LabError::BadParams(format!("cannot parse polynomial `{text}`"));
        let mut terms = Vec::new();
        for piece in pieces {
            let (sign, body) = match piece.strip_prefix('-') {
                Some(rest) => (-1.0, rest),
                None => (1.0, piece.strip_prefix('+').unwrap_or(&piece)),
            };
            if body.is_empty() {
                return Err(bad());
            }
            let (coef, power) = match body.find('z') {
                None => (body.parse::<f64>().map_err(|_| bad())?, 0u32),
                Some(pos) => {
                    let c = body[..pos].trim_end_matches('*');
                    let coef = if c.is_empty() {
                        1.0
                    } else {
                        c.parse::<f64>().map_err(|_| bad())?
                    };
                    let rest = &body[pos + 1..];
                    let power = if rest.is_empty() {
                        1
                    } else {
                        rest.strip_prefix('^')
                            .and_then(|p| p.parse::<u32>().ok())
                            .ok_or_else(bad)?
                    };
                    (coef, power)
                }
            };
            terms.push((Complex64::new(sign * coef, 0.0), power));
        }
        Ok(Self { terms })
    }

    pub fn eval<S: Scalar>(&self, z: Cplx<S>) -> Cplx<S> {
        let mut acc = Cplx::new(S::cst(0.0), S::cst(0.0));
        for &(c, n) in &self.terms {
            acc = acc + Cplx::from_c64(c) * z.powi(n);
        }
        acc
    }
}

fn parse_polys(text: &str) -> Result<Vec<Poly>> {
    text.split(';').map(Poly::parse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceKind {
    Plane { k: usize },
    HoloGraph { polys: Vec<Poly> },
    Catenoid,
    Enneper,
    ScaledGraph { polys: Vec<Poly>, lambda: f64 },
    PerturbedGraph { polys: Vec<Poly>, eps: f64 },
}

impl SurfaceKind {
    pub fn eval<S: Scalar>(&self, u: S, v: S, out: &mut Vec<S>) {
        out.clear();
        match self {
            SurfaceKind::Plane { k } => {
                out.push(u);
                out.push(v);
                out.extend(std::iter::repeat_n(S::cst(0.0), 2 * k));
            }
            SurfaceKind::HoloGraph { polys } => {
                let z = Cplx::new(u, v);
                out.push(u);
                out.push(v);
                for p in polys {
                    let w = p.eval(z);
                    out.push(w.re);
                    out.push(w.im);
                }
            }
            SurfaceKind::ScaledGraph { polys, lambda } => {
                let l = *lambda;
                let z = Cplx::new(u.scale(1.0 / l), v.scale(1.0 / l));
                out.push(u);
                out.push(v);
                for p in polys {
                    let w = p.eval(z);
                    out.push(w.re.scale(l));
                    out.push(w.im.scale(l));
                }
            }
            SurfaceKind::PerturbedGraph { polys, eps } => {
                let z = Cplx::new(u, v);
                out.push(u);
                out.push(v);
                for (n, p) in polys.iter().enumerate() {
                    let w = p.eval(z);
                    if n == 0 {
                        out.push(w.re + (u * u + v * v).scale(*eps));
                    } else {
                        out.push(w.re);
                    }
                    out.push(w.im);
                }
            }
            SurfaceKind::Catenoid => {
                let (t, th) = (u, v);
                let ch = t.cosh();
                out.push(ch * th.cos());
                out.push(ch * th.sin());
                out.push(t);
                out.extend(std::iter::repeat_n(S::cst(0.0), 3));
            }
            SurfaceKind::Enneper => {
                let third = 1.0 / 3.0;
                out.push(u - (u * u * u).scale(third) + u * v * v);
                out.push(v - (v * v * v).scale(third) + v * u * u);
                out.push(u * u - v * v);
                out.extend(std::iter::repeat_n(S::cst(0.0), 3));
            }
        }
    }
}

/// Normal complex structure attached to a catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CatalogJN {
    /// Restriction of the standard complex structure of C^{1+k}.
    AmbientRestriction,
    /// `ν₁ ↦ ν₂, ν₃ ↦ ν₄, …` in the continued normal frame.
    FrameStandard,
    /// Rotation by +90° in the oriented normal plane (k = 1 only).
    NormalOrientation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmersionPatch {
    pub name: String,
    pub ambient_dim: usize,
    pub kind: SurfaceKind,
    pub domain: ChartDomain,
    pub jet_mode: JetMode,
    pub params: BTreeMap<String, String>,
    pub rank_tol: f64,
    pub known_minimal: bool,
    pub known_holomorphic: bool,
    pub catalog_jn: CatalogJN,
    /// A distinguished chart point (the catenoid waist, the graph origin).
    pub marked_point: (f64, f64),
}

impl ImmersionPatch {
    pub fn k(&self) -> usize {
        (self.ambient_dim - 2) / 2
    }

    pub fn with_jet_mode(mut self, mode: JetMode) -> Self {
        self.jet_mode = mode;
        self
    }

    pub fn with_resolution(mut self, nu: usize, nv: usize) -> Result<Self> {
        self.domain = self.domain.with_resolution(nu, nv)?;
        Ok(self)
    }

    pub fn eval(&self, u: f64, v: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ambient_dim);
        self.kind.eval(u, v, &mut out);
        out
    }

    pub fn grid_spacing(&self) -> f64 {
        let d = &self.domain;
        ((d.u_max - d.u_min) / (d.nu - 1) as f64).max((d.v_max - d.v_min) / (d.nv - 1) as f64)
    }

    pub fn fd_step(&self) -> Option<f64> {
        match self.jet_mode {
            JetMode::Analytic => None,
            JetMode::FiniteDifference(FdStep::Fixed(h)) => Some(h),
            JetMode::FiniteDifference(FdStep::Default) => Some(1e-3 * self.domain.extent()),
            JetMode::FiniteDifference(FdStep::Grid) => Some(self.grid_spacing()),
        }
    }
}

/// Position and partial derivatives of an immersion at one chart point.
///
/// `d[k]` follows the graded monomial order
/// `F, F_u, F_v, F_uu, F_uv, F_vv, F_uuu, F_uuv, F_uvv, F_vvv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet3 {
    pub order: usize,
    pub d: [Vec<f64>; 10],
}

impl Jet3 {
    pub fn f(&self) -> &[f64] {
        &self.d[0]
    }
    pub fn fu(&self) -> &[f64] {
        &self.d[1]
    }
    pub fn fv(&self) -> &[f64] {
        &self.d[2]
    }
    pub fn fuu(&self) -> &[f64] {
        &self.d[3]
    }
    pub fn fuv(&self) -> &[f64] {
        &self.d[4]
    }
    pub fn fvv(&self) -> &[f64] {
        &self.d[5]
    }
    /// First partial along chart axis `a` (0 = u, 1 = v).
    pub fn first(&self, a: usize) -> &[f64] {
        &self.d[1 + a]
    }
    /// Second partial `∂_a ∂_b F`.
    pub fn second(&self, a: usize, b: usize) -> &[f64] {
        &self.d[3 + a + b]
    }
    /// Third partial with `n_v` derivatives along v out of three.
    pub fn third(&self, n_v: usize) -> &[f64] {
        &self.d[6 + n_v]
    }

    /// Smallest singular value of the Jacobian `[F_u F_v]`.
    pub fn sigma_min(&self) -> f64 {
        let (a, b, c) = (
            dot(self.fu(), self.fu()),
            dot(self.fu(), self.fv()),
            dot(self.fv(), self.fv()),
        );
        let tr = 0.5 * (a + c);
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (tr - disc).max(0.0).sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn analytic_jet(patch: &ImmersionPatch, u: f64, v: f64, order: usize) -> Jet3 {
    let n = patch.ambient_dim;
    let mut out: Vec<Taylor3> = Vec::with_capacity(n);
    patch
        .kind
        .eval(Taylor3::var_u(u), Taylor3::var_v(v), &mut out);
    let mut d: [Vec<f64>; 10] = Default::default();
    let partial_of = [
        (0, 0),
        (1, 0),
        (0, 1),
        (2, 0),
        (1, 1),
        (0, 2),
        (3, 0),
        (2, 1),
        (1, 2),
        (0, 3),
    ];
    let count = [1, 3, 6, 10][order];
    for (m, &(a, b)) in partial_of.iter().enumerate() {
        d[m] = if m < count {
            out.iter().map(|t| t.partial(a, b)).collect()
        } else {
            vec![0.0; n]
        };
    }
    Jet3 { order, d }
}

fn fd_jet(patch: &ImmersionPatch, u: f64, v: f64, order: usize, h: f64) -> Jet3 {
    let n = patch.ambient_dim;
    let mut buf = Vec::with_capacity(n);
    let mut at = |du: f64, dv: f64| -> Vec<f64> {
        patch.kind.eval(u + du * h, v + dv * h, &mut buf);
        buf.clone()
    };
    let f0 = at(0.0, 0.0);
    let (fpu, fmu, fpv, fmv) = (at(1.0, 0.0), at(-1.0, 0.0), at(0.0, 1.0), at(0.0, -1.0));
    let mut d: [Vec<f64>; 10] = Default::default();
    for slot in d.iter_mut() {
        *slot = vec![0.0; n];
    }
    d[0].clone_from(&f0);
    for c in 0..n {
        d[1][c] = (fpu[c] - fmu[c]) / (2.0 * h);
        d[2][c] = (fpv[c] - fmv[c]) / (2.0 * h);
    }
    if order >= 2 {
        let (fpp, fpm, fmp, fmm) = (at(1.0, 1.0), at(1.0, -1.0), at(-1.0, 1.0), at(-1.0, -1.0));
        let h2 = h * h;
        for c in 0..n {
            d[3][c] = (fpu[c] - 2.0 * f0[c] + fmu[c]) / h2;
            d[4][c] = (fpp[c] - fpm[c] - fmp[c] + fmm[c]) / (4.0 * h2);
            d[5][c] = (fpv[c] - 2.0 * f0[c] + fmv[c]) / h2;
        }
        if order >= 3 {
            let (f2u, fm2u, f2v, fm2v) = (at(2.0, 0.0), at(-2.0, 0.0), at(0.0, 2.0), at(0.0, -2.0));
            let h3 = h2 * h;
            for c in 0..n {
                d[6][c] = (f2u[c] - 2.0 * fpu[c] + 2.0 * fmu[c] - fm2u[c]) / (2.0 * h3);
                d[9][c] = (f2v[c] - 2.0 * fpv[c] + 2.0 * fmv[c] - fm2v[c]) / (2.0 * h3);
                // ∂_v of the three-point ∂_uu, and ∂_u of ∂_vv
                d[7][c] = ((fpp[c] - 2.0 * fpv[c] + fmp[c]) - (fpm[c] - 2.0 * fmv[c] + fmm[c]))
                    / (2.0 * h3);
                d[8][c] = ((fpp[c] - 2.0 * fpu[c] + fpm[c]) - (fmp[c] - 2.0 * fmu[c] + fmm[c]))
                    / (2.0 * h3);
            }
        }
    }
    Jet3 { order, d }
}

/// Position and partials up to `order` (1, 2 or 3) at `(u, v)`.
///
/// Catalog maps are entire, so finite-difference stencils may reach slightly
/// outside the chart; only the evaluation point itself must lie inside.
pub fn evaluate_jet(patch: &ImmersionPatch, u: f64, v: f64, order: usize) -> Result<Jet3> {
    if !patch.domain.contains(u, v) {
        return Err(LabError::PointOutsideDomain { u, v });
    }
    let order = order.clamp(1, 3);
    let jet = match patch.fd_step() {
        None => analytic_jet(patch, u, v, order),
        Some(h) => fd_jet(patch, u, v, order, h),
    };
    let sigma_min = jet.sigma_min();
    if !(sigma_min >= patch.rank_tol) {
        return Err(LabError::DegenerateImmersion { u, v, sigma_min });
    }
    Ok(jet)
}

pub const CATALOG: [&str; 6] = [
    "plane_k",
    "holo_graph",
    "catenoid_r6",
    "enneper_r6",
    "scaled_graph",
    "perturbed_graph",
];

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub params: &'static str,
    pub minimal: bool,
    pub holomorphic: bool,
}

pub fn catalog_entries() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "plane_k",
            description: "totally geodesic plane R^2 in R^{2+2k}",
            params: "k (default 1)",
            minimal: true,
            holomorphic: true,
        },
        CatalogEntry {
            name: "holo_graph",
            description: "graph z -> (z, p_1(z), ..., p_k(z)) in C^{1+k}",
            params: "p (polynomials separated by ';', default z^2), k",
            minimal: true,
            holomorphic: true,
        },
        CatalogEntry {
            name: "catenoid_r6",
            description: "catenoid (cosh t cos th, cosh t sin th, t, 0, 0, 0) in R^6",
            params: "tmax (default 2)",
            minimal: true,
            holomorphic: false,
        },
        CatalogEntry {
            name: "enneper_r6",
            description: "Enneper surface in R^3 inside R^6",
            params: "none",
            minimal: true,
            holomorphic: false,
        },
        CatalogEntry {
            name: "scaled_graph",
            description: "homothetic copy lambda * G(z / lambda) of a holomorphic graph",
            params: "p, k, lambda (default 2)",
            minimal: true,
            holomorphic: true,
        },
        CatalogEntry {
            name: "perturbed_graph",
            description: "holomorphic graph with eps*(u^2+v^2) added to Re w_1 (not minimal)",
            params: "p, k, eps (default 0.2)",
            minimal: false,
            holomorphic: false,
        },
    ]
}

fn param_f64(params: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(s) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| LabError::BadParams(format!("{key}={s} is not a finite number"))),
    }
}

fn param_usize(params: &BTreeMap<String, String>, key: &str) -> Result<Option<usize>> {
    params
        .get(key)
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| LabError::BadParams(format!("{key}={s} is not a positive integer")))
        })
        .transpose()
}

fn graph_polys(params: &BTreeMap<String, String>) -> Result<Vec<Poly>> {
    let mut polys = parse_polys(params.get("p").map(String::as_str).unwrap_or("z^2"))?;
    if let Some(k) = param_usize(params, "k")? {
        if k == 0 {
            return Err(LabError::BadParams("k must be at least 1".into()));
        }
        if polys.len() > k {
            return Err(LabError::BadParams(format!(
                "{} polynomials given but k = {k}",
                polys.len()
            )));
        }
        polys.resize(k, Poly::zero());
    }
    Ok(polys)
}

fn domain_from(params: &BTreeMap<String, String>, default: [f64; 4]) -> Result<ChartDomain> {
    ChartDomain::new(
        param_f64(params, "umin", default[0])?,
        param_f64(params, "umax", default[1])?,
        param_f64(params, "vmin", default[2])?,
        param_f64(params, "vmax", default[3])?,
        33,
        33,
    )
}

const KNOWN_KEYS: [&str; 9] = [
    "k", "p", "tmax", "lambda", "eps", "umin", "umax", "vmin", "vmax",
];

/// Builds a catalog patch with analytic jets on a 33×33 grid.
pub fn builtin_surface(name: &str, params: &BTreeMap<String, String>) -> Result<ImmersionPatch> {
    if let Some(key) = params.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(LabError::BadParams(format!("unknown parameter `{key}`")));
    }
    let unit = [-1.0, 1.0, -1.0, 1.0];
    let (kind, domain, minimal, holomorphic, jn, marked) = match name {
        "plane_k" => {
            let k = param_usize(params, "k")?.unwrap_or(1);
            if k == 0 {
                return Err(LabError::BadParams("k must be at least 1".into()));
            }
            (
                SurfaceKind::Plane { k },
                domain_from(params, unit)?,
                true,
                true,
                CatalogJN::FrameStandard,
                (0.0, 0.0),
            )
        }
        "holo_graph" => {
            let polys = graph_polys(params)?;
            (
                SurfaceKind::HoloGraph { polys },
                domain_from(params, unit)?,
                true,
                true,
                CatalogJN::AmbientRestriction,
                (0.0, 0.0),
            )
        }
        "scaled_graph" => {
            let polys = graph_polys(params)?;
            let lambda = param_f64(params, "lambda", 2.0)?;
            if lambda <= 0.0 {
                return Err(LabError::BadParams("lambda must be positive".into()));
            }
            (
                SurfaceKind::ScaledGraph { polys, lambda },
                domain_from(params, unit)?,
                true,
                true,
                CatalogJN::AmbientRestriction,
                (0.0, 0.0),
            )
        }
        "perturbed_graph" => {
            let mut p = params.clone();
            p.entry("k".into()).or_insert_with(|| "1".into());
            let polys = graph_polys(&p)?;
            let eps = param_f64(params, "eps", 0.2)?;
            let jn = if polys.len() == 1 {
                CatalogJN::NormalOrientation
            } else {
                CatalogJN::FrameStandard
            };
            (
                SurfaceKind::PerturbedGraph { polys, eps },
                domain_from(params, unit)?,
                eps == 0.0,
                eps == 0.0,
                jn,
                (0.0, 0.0),
            )
        }
        "catenoid_r6" => {
            let tmax = param_f64(params, "tmax", 2.0)?;
            if !(tmax > 0.0 && tmax <= 6.0) {
                return Err(LabError::BadParams(format!("tmax={tmax} outside (0, 6]")));
            }
            let d = domain_from(params, [-tmax, tmax, -PI, PI])?;
            (
                SurfaceKind::Catenoid,
                d,
                true,
                false,
                CatalogJN::FrameStandard,
                (0.0, 0.0),
            )
        }
        "enneper_r6" => (
            SurfaceKind::Enneper,
            domain_from(params, unit)?,
            true,
            false,
            CatalogJN::FrameStandard,
            (0.0, 0.0),
        ),
        other => return Err(LabError::UnknownSurface(other.to_string())),
    };
    let ambient_dim = match &kind {
        SurfaceKind::Plane { k } => 2 + 2 * k,
        SurfaceKind::HoloGraph { polys }
        | SurfaceKind::ScaledGraph { polys, .. }
        | SurfaceKind::PerturbedGraph { polys, .. } => 2 + 2 * polys.len(),
        SurfaceKind::Catenoid | SurfaceKind::Enneper => 6,
    };
    Ok(ImmersionPatch {
        name: name.to_string(),
        ambient_dim,
        kind,
        domain,
        jet_mode: JetMode::Analytic,
        params: params.clone(),
        rank_tol: DEFAULT_RANK_TOL,
        known_minimal: minimal,
        known_holomorphic: holomorphic,
        catalog_jn: jn,
        marked_point: marked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn plane_has_vanishing_second_derivatives() {
        let p = builtin_surface("plane_k", &params(&[("k", "2")])).unwrap();
        assert_eq!(p.ambient_dim, 6);
        let j = evaluate_jet(&p, 0.3, -0.1, 2).unwrap();
        for m in 3..6 {
            assert!(j.d[m].iter().all(|x| *x == 0.0));
        }
        assert_eq!(j.fu(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn z_squared_graph_second_derivatives_by_hand() {
        let p = builtin_surface("holo_graph", &params(&[("p", "z^2")])).unwrap();
        let j = evaluate_jet(&p, 1.0, 0.0, 2).unwrap();
        assert_eq!(j.fuu(), &[0.0, 0.0, 2.0, 0.0]);
        assert_eq!(j.fvv(), &[0.0, 0.0, -2.0, 0.0]);
        assert_eq!(j.fuv(), &[0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn polynomial_parser_handles_signs_and_coefficients() {
        let p = Poly::parse("0.5*z^3 - 2z + 1.5 + z").unwrap();
        let z = Cplx::new(2.0f64, 0.0);
        assert!((p.eval(z).re - (4.0 - 4.0 + 1.5 + 2.0)).abs() < 1e-14);
        assert!(Poly::parse("z^").is_err());
        assert!(Poly::parse("q").is_err());
        assert_eq!(parse_polys("z^2;z^3").unwrap().len(), 2);
    }

    #[test]
    fn catalog_rejects_unknown_names_and_params() {
        assert!(matches!(
            builtin_surface("torus", &BTreeMap::new()),
            Err(LabError::UnknownSurface(_))
        ));
        assert!(matches!(
            builtin_surface("plane_k", &params(&[("zz", "1")])),
            Err(LabError::BadParams(_))
        ));
        assert!(matches!(
            builtin_surface("holo_graph", &params(&[("p", "z^2;z^3"), ("k", "1")])),
            Err(LabError::BadParams(_))
        ));
        assert!(matches!(
            builtin_surface("catenoid_r6", &params(&[("tmax", "-1")])),
            Err(LabError::BadParams(_))
        ));
    }

    #[test]
    fn points_outside_the_chart_are_rejected() {
        let p = builtin_surface("enneper_r6", &BTreeMap::new()).unwrap();
        assert!(matches!(
            evaluate_jet(&p, 1.5, 0.0, 2),
            Err(LabError::PointOutsideDomain { .. })
        ));
    }

    #[test]
    fn degenerate_jacobian_is_reported() {
        let mut p = builtin_surface("catenoid_r6", &BTreeMap::new()).unwrap();
        p.rank_tol = 10.0;
        assert!(matches!(
            evaluate_jet(&p, 0.0, 0.0, 1),
            Err(LabError::DegenerateImmersion { .. })
        ));
    }

    #[test]
    fn jet_mode_parsing() {
        assert_eq!(JetMode::parse("analytic").unwrap(), JetMode::Analytic);
        assert_eq!(
            JetMode::parse("fd:0.01").unwrap(),
            JetMode::FiniteDifference(FdStep::Fixed(0.01))
        );
        assert_eq!(
            JetMode::parse("fd:grid").unwrap(),
            JetMode::FiniteDifference(FdStep::Grid)
        );
        assert!(JetMode::parse("fd:-1").is_err());
    }
}
