//! The analysis commands: identity suite, convergence study, patch spectra,
//! normal holonomy and the surface catalog.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::complex::{
    catalog_jn, check_jn_axioms, distance_up_to_sign, find_parallel_jn, row_major, AxiomReport,
    CommutantCertificate, HolonomyOptions, NormalComplexStructure, NormalConnection,
    ParallelJNOutcome,
};
use crate::config::RunConfig;
use crate::convergence::{Check, CheckKind};
use crate::error::{LabError, Result};
use crate::frames::{
    compute_frames, curvatures, minimality_residual, second_fundamental_form, trace_field,
    FramePackage, SecondFundamentalForm,
};
use crate::grid::{norm, Field, Grid, Region};
use crate::holo::{
    a_plus_pde_residual, dbar_operators, inf_holo_residuals, reconstruct_ambient_j,
    verify_apm_holomorphicity, verify_weitzenbock, CurvatureConvention, Orientation,
};
use crate::immersion::{
    builtin_surface, catalog_entries, ChartDomain, FdStep, ImmersionPatch, JetMode,
};
use crate::report::{now_ms, CsvTable, Metadata, Report, ReportBody};
use crate::stability::{
    assemble_form, smallest_eigenvalue, special_variation_inequality, SpecialVariation,
    SpectrumOptions,
};
use crate::variation::{
    apm_decompose, bump_field, first_derivative_identity_residual, jacobi_operator,
    normal_projection_constant, polarized_dichotomy_check, q_direct, q_trace, q_via_apm,
    second_variation_cutoff_identity, second_variation_direct, ApmTensors,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Analyze,
    Spectrum,
    Holonomy,
    Convergence,
    Catalog,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Spectrum => "spectrum",
            Command::Holonomy => "holonomy",
            Command::Convergence => "convergence",
            Command::Catalog => "catalog",
        }
    }
}

/// A finished command: the report plus any CSV tables, keyed by file name.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub csv: Vec<(String, CsvTable)>,
}

/// Fraction of each chart side excluded when measuring residuals; nested odd grids share these nodes.
pub const EVALUATION_INSET: f64 = 0.125;
/// Relative radius of the cutoff bump around the chart centre.
pub const CUTOFF_RADIUS: f64 = 0.8;
/// Floor below which a negative-control residual counts as decayed.
pub const NON_DECAY_FLOOR: f64 = 1e-3;

/// Frames, second fundamental form, normal structure and `A±` of one patch.
pub struct Workspace {
    pub patch: ImmersionPatch,
    pub fp: FramePackage,
    pub sff: SecondFundamentalForm,
    pub jn: NormalComplexStructure,
    pub apm: ApmTensors,
    pub region: Region,
}

impl Workspace {
    pub fn new(patch: ImmersionPatch) -> Result<Self> {
        let fp = compute_frames(&patch)?;
        let sff = second_fundamental_form(&fp);
        let jn = catalog_jn(&patch, &fp);
        let apm = apm_decompose(&sff, &jn);
        let region = fp.grid.inset(EVALUATION_INSET);
        Ok(Self {
            patch,
            fp,
            sff,
            jn,
            apm,
            region,
        })
    }
}

/// The configured catalog patch at resolution `n` with the given jets.
pub fn build_patch(cfg: &RunConfig, n: usize, jet: JetMode) -> Result<ImmersionPatch> {
    let name = cfg
        .surface
        .as_deref()
        .ok_or_else(|| LabError::InvalidConfig("no surface given".into()))?;
    let mut patch = builtin_surface(name, &cfg.params)?
        .with_resolution(n, n)?
        .with_jet_mode(jet);
    patch.rank_tol = cfg.metric_tol;
    Ok(patch)
}

/// `count` seeded unit vectors in `R^n`.
pub fn random_directions(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let s = norm(&v);
            v.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// A seeded random orthogonal `n×n` matrix.
fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    m.qr().q()
}

/// Smooth normal section with seeded trigonometric coefficients in normalized chart coordinates.
#[derive(Debug, Clone)]
pub struct SmoothSection {
    coeffs: Vec<[f64; 6]>,
}

impl SmoothSection {
    pub fn new(r: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            coeffs: (0..r)
                .map(|_| std::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0))
                .collect(),
        }
    }

    pub fn field(&self, fp: &FramePackage) -> Field {
        let g = &fp.grid;
        let d = g.domain;
        let (cu, cv) = ((d.u_min + d.u_max) / 2.0, (d.v_min + d.v_max) / 2.0);
        let (hu, hv) = ((d.u_max - d.u_min) / 2.0, (d.v_max - d.v_min) / 2.0);
        Field::from_fn(g, self.coeffs.len(), 0, |i, j, out| {
            let (x, y) = ((g.u(i) - cu) / hu, (g.v(j) - cv) / hv);
            for (o, c) in out.iter_mut().zip(&self.coeffs) {
                *o = c[0]
                    + c[1] * (1.5 * x + c[2]).sin() * (1.2 * y + c[3]).cos()
                    + c[4] * x * y
                    + 0.5 * c[5] * y * y;
            }
        })
    }
}

fn cutoff(fp: &FramePackage) -> Field {
    let d = fp.grid.domain;
    let c = ((d.u_min + d.u_max) / 2.0, (d.v_min + d.v_max) / 2.0);
    bump_field(
        fp,
        c,
        (
            CUTOFF_RADIUS * (d.u_max - d.u_min) / 2.0,
            CUTOFF_RADIUS * (d.v_max - d.v_min) / 2.0,
        ),
    )
}

fn max_over(fields: impl IntoIterator<Item = f64>) -> f64 {
    fields.into_iter().fold(0.0, f64::max)
}

fn max_abs_diff(a: &Field, b: &Field, region: &Region) -> f64 {
    a.sub(b).max_abs(region)
}

/// Everything measured by the identity suite at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeSample {
    pub n: usize,
    pub h: f64,
    pub jet: String,
    pub reference_jet: String,
    // exact algebra
    pub q_via_apm_general: f64,
    pub q_via_apm_surface: f64,
    pub q_trace: f64,
    pub q_trace_rotated_basis: f64,
    pub q_scaling: f64,
    pub apm_sum: f64,
    pub apm_symmetry: f64,
    pub apm_trace: f64,
    pub apm_intertwining: f64,
    pub res_b_identity: f64,
    pub res_b_minus_identity: f64,
    pub orientation_swap: f64,
    pub dichotomy_excess: f64,
    pub dbar_intertwining: f64,
    // discretization-limited
    pub minimality_residual: f64,
    pub reference_minimality_residual: f64,
    pub jacobi_of_normal_projection: f64,
    pub normal_projection_derivative: f64,
    pub cutoff_identity: Option<f64>,
    pub cutoff_lhs: Option<f64>,
    pub dbar_a_plus: f64,
    pub dbar_a_minus: f64,
    pub dbar_a_plus_full: f64,
    pub dbar_a_minus_full: f64,
    pub weitzenbock_sum_a_plus: f64,
    pub weitzenbock_difference_a_plus: f64,
    pub weitzenbock_sum_section: f64,
    pub weitzenbock_difference_section: f64,
    pub a_plus_equation_standard: f64,
    pub a_plus_equation_opposite: f64,
    pub res_a: f64,
    pub res_b: f64,
    pub res_a_minus: f64,
    pub res_b_minus: f64,
    pub max_apm_plus: f64,
    pub max_apm_minus: f64,
    pub jbar_constancy: f64,
    pub jbar_holomorphy: f64,
    pub jbar_orthogonality: f64,
    pub jbar_square: f64,
    pub jbar_polar_distance: f64,
    pub jbar: Vec<f64>,
    // diagnostics
    pub marked_point: (f64, f64),
    pub apm_min_at_marked_point: f64,
    pub gauss_at_marked_point: f64,
    pub max_abs_q: f64,
}

fn reference_jet(cfg: &RunConfig) -> Result<JetMode> {
    Ok(match cfg.jet_mode()? {
        JetMode::Analytic => JetMode::FiniteDifference(FdStep::Grid),
        other => other,
    })
}

/// Runs the identity suite at resolution `n`; optionally dumps per-node fields.
pub fn analyze_sample(
    cfg: &RunConfig,
    n: usize,
    want_csv: bool,
) -> Result<(AnalyzeSample, Option<CsvTable>)> {
    let jet = cfg.jet_mode()?;
    let ws = Workspace::new(build_patch(cfg, n, jet)?)
        .map_err(|e| e.in_stage(format!("frames at n={n}")))?;
    let ref_jet = reference_jet(cfg)?;
    let rf = Workspace::new(build_patch(cfg, n, ref_jet)?)
        .map_err(|e| e.in_stage(format!("reference frames at n={n}")))?;
    let (fp, sff, jn, apm, reg) = (&ws.fp, &ws.sff, &ws.jn, &ws.apm, &ws.region);
    let nambient = fp.n;
    let dirs = random_directions(nambient, cfg.directions, cfg.seed);

    let (mut qg, mut qs, mut qscale, mut jac, mut fd1, mut qmax) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for a in &dirs {
        let qd = q_direct(a, sff, jn, fp);
        let qa = q_via_apm(a, apm, fp, jn);
        qg = qg.max(max_abs_diff(&qd, &qa.general, reg));
        qs = qs
            .max(max_abs_diff(&qd, &qa.surface_tau1, reg))
            .max(max_abs_diff(&qd, &qa.surface_tau2, reg));
        let a3: Vec<f64> = a.iter().map(|x| 3.0 * x).collect();
        qscale = qscale.max(max_abs_diff(
            &q_direct(&a3, sff, jn, fp),
            &qd.scaled(9.0),
            reg,
        ));
        qmax = qmax.max(qd.max_abs(reg));
        let s = normal_projection_constant(a, fp);
        jac = jac.max(jacobi_operator(&s, fp, sff).sup_norm(reg));
        fd1 = fd1.max(first_derivative_identity_residual(a, fp, sff, reg));
    }
    let q_tr = q_trace(sff, jn, fp, None).max_abs(reg);
    let q_tr_rot = q_trace(
        sff,
        jn,
        fp,
        Some(&random_orthogonal(nambient, cfg.seed ^ 0x5eed)),
    )
    .max_abs(reg);
    let ids = apm.identity_residuals(sff, jn, reg);
    let holo = inf_holo_residuals(sff, fp, jn, reg);
    let (mp, mm) = apm.max_norms(reg);
    let neg = apm_decompose(sff, &jn.negated());
    let holo_neg = inf_holo_residuals(sff, fp, &jn.negated(), reg);
    let swap = max_abs_diff(&neg.plus, &apm.minus, reg)
        .max(max_abs_diff(&neg.minus, &apm.plus, reg))
        .max((holo_neg.res_b - holo.res_b_minus).abs())
        .max((holo_neg.res_b_minus - holo.res_b).abs());
    let dich = polarized_dichotomy_check(apm, sff, jn);
    let excess = max_over(reg.iter().map(|(i, j)| {
        (dich.c.at(i, j)[0] - dich.bound.at(i, j)[0]) / (1.0 + dich.bound.at(i, j)[0])
    }));
    let dbar = dbar_operators(&apm.plus, 2, fp, jn);

    let section = SmoothSection::new(fp.r, cfg.seed.wrapping_add(17)).field(fp);
    let cut = match second_variation_cutoff_identity(&cutoff(fp), &section, fp, sff) {
        Ok(c) => Some(c),
        Err(LabError::SupportTouchesBoundary { .. }) => None,
        Err(e) => return Err(e.in_stage("cutoff identity")),
    };
    let hol = verify_apm_holomorphicity(apm, sff, fp, jn, reg);
    let w_plus = verify_weitzenbock(&apm.plus, 2, fp, jn, reg);
    let w_sec = verify_weitzenbock(&section, 0, fp, jn, reg);
    let curv = curvatures(fp);
    let pde = a_plus_pde_residual(apm, &curv, fp, jn, reg);
    let amb = reconstruct_ambient_j(&rf.fp, &rf.jn, Orientation::Plus, &rf.region);

    let mp_pt = ws.patch.marked_point;
    let (mi, mj) = fp.grid.nearest(mp_pt.0, mp_pt.1);
    let sample = AnalyzeSample {
        n,
        h: ws.patch.grid_spacing(),
        jet: jet.label(),
        reference_jet: ref_jet.label(),
        q_via_apm_general: qg,
        q_via_apm_surface: qs,
        q_trace: q_tr,
        q_trace_rotated_basis: q_tr_rot,
        q_scaling: qscale,
        apm_sum: ids.sum,
        apm_symmetry: ids.symmetry,
        apm_trace: ids.trace,
        apm_intertwining: ids.intertwining,
        res_b_identity: (holo.res_b - 2.0 * mm).abs(),
        res_b_minus_identity: (holo.res_b_minus - 2.0 * mp).abs(),
        orientation_swap: swap,
        dichotomy_excess: excess.max(0.0),
        dbar_intertwining: dbar.intertwining,
        minimality_residual: minimality_residual(&rf.sff, &rf.region),
        reference_minimality_residual: minimality_residual(sff, reg),
        jacobi_of_normal_projection: jac,
        normal_projection_derivative: fd1,
        cutoff_identity: cut.map(|c| c.discrepancy),
        cutoff_lhs: cut.map(|c| c.lhs),
        dbar_a_plus: hol.res_plus,
        dbar_a_minus: hol.res_minus,
        dbar_a_plus_full: hol.full_plus,
        dbar_a_minus_full: hol.full_minus,
        weitzenbock_sum_a_plus: w_plus.sum_residual,
        weitzenbock_difference_a_plus: w_plus.diff_residual,
        weitzenbock_sum_section: w_sec.sum_residual,
        weitzenbock_difference_section: w_sec.diff_residual,
        a_plus_equation_standard: pde.standard,
        a_plus_equation_opposite: pde.opposite,
        res_a: holo.res_a,
        res_b: holo.res_b,
        res_a_minus: holo.res_a_minus,
        res_b_minus: holo.res_b_minus,
        max_apm_plus: mp,
        max_apm_minus: mm,
        jbar_constancy: amb.constancy_residual,
        jbar_holomorphy: amb.holomorphy_residual,
        jbar_orthogonality: amb.orthogonality,
        jbar_square: amb.square,
        jbar_polar_distance: amb.polar_distance,
        jbar: amb.jbar,
        marked_point: mp_pt,
        apm_min_at_marked_point: dich.m.at(mi, mj)[0],
        gauss_at_marked_point: curv.gauss.at(mi, mj)[0],
        max_abs_q: qmax,
    };
    let csv = want_csv.then(|| {
        let trace = trace_field(sff);
        let q0 = q_direct(&dirs[0], sff, jn, fp);
        let r = fp.r;
        let mut t = CsvTable::new(&[
            "u",
            "v",
            "sqrt_g",
            "trace_a",
            "apm_plus",
            "apm_minus",
            "apm_min",
            "q_a1",
            "gauss",
            "normal_curvature",
        ]);
        for (i, j) in fp.grid.interior(2).iter() {
            let nrm = |f: &Field| {
                (0..4)
                    .map(|k| norm(&f.at(i, j)[k * r..(k + 1) * r]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            t.push(
                [
                    fp.grid.u(i),
                    fp.grid.v(j),
                    fp.sqrt_g[fp.grid.idx(i, j)],
                    norm(trace.at(i, j)),
                    nrm(&apm.plus),
                    nrm(&apm.minus),
                    dich.m.at(i, j)[0],
                    q0.at(i, j)[0],
                    curv.gauss.at(i, j)[0],
                    norm(curv.fd.at(i, j)),
                ]
                .iter()
                .map(|x| x.to_string())
                .collect(),
            );
        }
        t
    });
    Ok((sample, csv))
}

fn series<F: Fn(&AnalyzeSample) -> f64>(s: &[AnalyzeSample], f: F) -> Vec<f64> {
    s.iter().map(f).collect()
}

/// Checks for the exact algebraic identities.
pub fn algebraic_checks(
    cfg: &RunConfig,
    patch: &ImmersionPatch,
    s: &[AnalyzeSample],
) -> Vec<Check> {
    let res: Vec<usize> = s.iter().map(|x| x.n).collect();
    let tol = cfg.identity_tol;
    let minimal = patch.known_minimal;
    let needs_min = |name: &str, anchor: &str, v: Vec<f64>, t: f64| {
        if minimal {
            Check::upper_bound(name, anchor, &res, v, t)
        } else {
            Check::info(name, anchor, &res, v).with_note("requires a minimal surface")
        }
    };
    vec![
        needs_min(
            "q_via_apm_general",
            "q(a) = 4 Σ ⟨A⁺_ij, a⊥⟩⟨A⁻_ij, a⊥⟩",
            series(s, |x| x.q_via_apm_general),
            tol,
        ),
        needs_min(
            "q_via_apm_surface",
            "q(a) = 8⟨A⁺_ττ,a⊥⟩⟨A⁻_ττ,a⊥⟩ − 8⟨A⁺_ττ,J a⊥⟩⟨A⁻_ττ,J a⊥⟩",
            series(s, |x| x.q_via_apm_surface),
            tol,
        ),
        Check::upper_bound(
            "q_trace_free",
            "Σ_i q(e_i) = 0",
            &res,
            series(s, |x| x.q_trace),
            tol,
        ),
        Check::upper_bound(
            "q_trace_basis_invariant",
            "Σ_i q(b_i) = 0 for a rotated orthonormal basis",
            &res,
            series(s, |x| x.q_trace_rotated_basis),
            tol,
        ),
        Check::upper_bound(
            "q_quadratic",
            "q(3a) = 9 q(a)",
            &res,
            series(s, |x| x.q_scaling),
            tol,
        ),
        Check::upper_bound(
            "apm_sum",
            "A⁺ + A⁻ = A",
            &res,
            series(s, |x| x.apm_sum),
            tol,
        ),
        needs_min(
            "apm_symmetric",
            "A± symmetric",
            series(s, |x| x.apm_symmetry),
            tol,
        ),
        needs_min(
            "apm_trace_free",
            "A± trace-free",
            series(s, |x| x.apm_trace),
            tol,
        ),
        Check::upper_bound(
            "apm_intertwining",
            "A±(J_Σ v, w) = ±J_N A±(v, w)",
            &res,
            series(s, |x| x.apm_intertwining),
            tol,
        ),
        Check::upper_bound(
            "res_b_twice_apm_minus",
            "max‖A(J_Σv,w) − J_N A(v,w)‖ = 2 max‖A⁻‖",
            &res,
            series(s, |x| x.res_b_identity),
            1e-12,
        ),
        Check::upper_bound(
            "res_b_minus_twice_apm_plus",
            "max‖A(J_Σv,w) + J_N A(v,w)‖ = 2 max‖A⁺‖",
            &res,
            series(s, |x| x.res_b_minus_identity),
            1e-12,
        ),
        Check::upper_bound(
            "orientation_swap",
            "J_N → −J_N swaps A⁺ and A⁻",
            &res,
            series(s, |x| x.orientation_swap),
            tol,
        ),
        needs_min(
            "dichotomy_polarization",
            "|ξ⁺|²|ξ⁻|² + ⟨ξ⁺,ξ⁻⟩² + ⟨ξ⁺,Jξ⁻⟩² ≤ ⅛ ε (|ξ⁺+ξ⁻|² + |ξ⁺|² + |ξ⁻|²)",
            series(s, |x| x.dichotomy_excess),
            tol,
        ),
        Check::upper_bound(
            "dbar_intertwining",
            "D^{0,1}_{J_Σ v} = −J_N D^{0,1}_v",
            &res,
            series(s, |x| x.dbar_intertwining),
            tol,
        ),
    ]
}

/// Order checks for discretization-limited identities plus negative controls.
pub fn convergence_checks(
    cfg: &RunConfig,
    patch: &ImmersionPatch,
    s: &[AnalyzeSample],
) -> Vec<Check> {
    let res: Vec<usize> = s.iter().map(|x| x.n).collect();
    let h: Vec<f64> = s.iter().map(|x| x.h).collect();
    let p = cfg.min_order;
    let minimal = patch.known_minimal;
    let holomorphic = patch.known_holomorphic;
    let ord = |name: &str, anchor: &str, v: Vec<f64>| Check::order(name, anchor, &res, &h, v, p);
    let mut out = Vec::new();
    if minimal {
        out.push(
            ord(
                "minimality_residual",
                "tr A = 0",
                series(s, |x| x.minimality_residual),
            )
            .with_note(format!("jets: {}", s[0].reference_jet)),
        );
        out.push(ord(
            "jacobi_of_normal_projection",
            "𝒥(a⊥) = 0",
            series(s, |x| x.jacobi_of_normal_projection),
        ));
    } else {
        out.push(Check::non_decay(
            "minimality_residual",
            "tr A ≠ 0 (negative control)",
            &res,
            series(s, |x| x.reference_minimality_residual),
            NON_DECAY_FLOOR,
        ));
        out.push(Check::skipped(
            "jacobi_of_normal_projection",
            "𝒥(a⊥) = 0",
            &res,
            "requires a minimal surface",
        ));
    }
    out.push(ord(
        "normal_projection_derivative",
        "D_τ a⊥ + A(τ, a^T) = 0",
        series(s, |x| x.normal_projection_derivative),
    ));
    if s.iter().all(|x| x.cutoff_identity.is_some()) {
        out.push(ord(
            "cutoff_identity",
            "δ²V(fs, fs) = ∫ |∇f|²|s|² + f²⟨𝒥s, s⟩",
            series(s, |x| x.cutoff_identity.unwrap_or(f64::NAN)),
        ));
    } else {
        out.push(Check::skipped(
            "cutoff_identity",
            "δ²V(fs, fs) = ∫ |∇f|²|s|² + f²⟨𝒥s, s⟩",
            &res,
            "grid too coarse for the cutoff support",
        ));
    }
    if minimal {
        out.push(ord(
            "dbar_a_plus",
            "(D^{0,1}A⁺)_{τττ} = 0",
            series(s, |x| x.dbar_a_plus),
        ));
        out.push(ord(
            "dbar_a_minus",
            "(D^{1,0}A⁻)_{τττ} = 0",
            series(s, |x| x.dbar_a_minus),
        ));
        out.push(ord(
            "dbar_a_plus_full",
            "D^{0,1}A⁺ = 0",
            series(s, |x| x.dbar_a_plus_full),
        ));
        out.push(ord(
            "dbar_a_minus_full",
            "D^{1,0}A⁻ = 0",
            series(s, |x| x.dbar_a_minus_full),
        ));
    } else {
        out.push(Check::non_decay(
            "dbar_a_plus",
            "(D^{0,1}A⁺)_{τττ} ≠ 0 (negative control)",
            &res,
            series(s, |x| x.dbar_a_plus),
            NON_DECAY_FLOOR,
        ));
    }
    out.push(ord(
        "weitzenbock_sum_a_plus",
        "(D^{1,0})*D^{1,0} + (D^{0,1})*D^{0,1} = D*D on A⁺",
        series(s, |x| x.weitzenbock_sum_a_plus),
    ));
    out.push(ord(
        "weitzenbock_difference_a_plus",
        "(D^{1,0})*D^{1,0} − (D^{0,1})*D^{0,1} = curvature term on A⁺",
        series(s, |x| x.weitzenbock_difference_a_plus),
    ));
    out.push(ord(
        "weitzenbock_sum_section",
        "(D^{1,0})*D^{1,0} + (D^{0,1})*D^{0,1} = D*D on a smooth section",
        series(s, |x| x.weitzenbock_sum_section),
    ));
    out.push(ord(
        "weitzenbock_difference_section",
        "(D^{1,0})*D^{1,0} − (D^{0,1})*D^{0,1} = curvature term on a smooth section",
        series(s, |x| x.weitzenbock_difference_section),
    ));
    if minimal {
        let last = s.last().expect("at least one sample");
        let (conv, vals) = if last.a_plus_equation_standard <= last.a_plus_equation_opposite {
            (
                CurvatureConvention::Standard,
                series(s, |x| x.a_plus_equation_standard),
            )
        } else {
            (
                CurvatureConvention::Opposite,
                series(s, |x| x.a_plus_equation_opposite),
            )
        };
        out.push(
            ord(
                "a_plus_equation",
                "½D*DA⁺ = ½J_N(F^D A⁺ − A⁺(R·,·) − A⁺(·,R·))",
                vals,
            )
            .with_note(format!(
                "annihilating convention: {}",
                match conv {
                    CurvatureConvention::Standard => "standard",
                    CurvatureConvention::Opposite => "opposite",
                }
            )),
        );
    }
    if holomorphic {
        out.push(ord(
            "holomorphicity_tensor_form",
            "A(J_Σv,w) = J_N A(v,w)",
            series(s, |x| x.res_b),
        ));
        out.push(ord(
            "holomorphicity_derivative_form",
            "∇̄J = 0",
            series(s, |x| x.res_a),
        ));
        out.push(
            ord(
                "jbar_constancy",
                "J_ij(x) = ⟨e_i, J e_j⟩ constant",
                series(s, |x| x.jbar_constancy),
            )
            .with_note(format!("jets: {}", s[0].reference_jet)),
        );
        out.push(
            ord(
                "jbar_holomorphy",
                "F_* J_Σ = J̄ F_*",
                series(s, |x| x.jbar_holomorphy),
            )
            .with_note(format!("jets: {}", s[0].reference_jet)),
        );
        let bound = 10.0 * max_over(series(s, |x| x.jbar_constancy)) + cfg.identity_tol;
        out.push(Check::upper_bound(
            "jbar_complex_structure",
            "J̄ᵀJ̄ = I and J̄² = −I",
            &res,
            series(s, |x| x.jbar_orthogonality.max(x.jbar_square)),
            bound,
        ));
    } else if minimal {
        out.push(Check::lower_bound(
            "holomorphicity_tensor_form_bounded_below",
            "A⁻ ≠ 0",
            &res,
            series(s, |x| x.res_b),
            0.5,
        ));
        out.push(Check::lower_bound(
            "antiholomorphicity_bounded_below",
            "A⁺ ≠ 0",
            &res,
            series(s, |x| x.res_b_minus),
            0.5,
        ));
        out.push(Check::lower_bound(
            "jbar_constancy_bounded_below",
            "no constant ambient J",
            &res,
            series(s, |x| x.jbar_constancy),
            0.1,
        ));
        out.push(Check::lower_bound(
            "apm_min_at_marked_point",
            "min(|A⁺_ττ|, |A⁻_ττ|) > 0",
            &res,
            series(s, |x| x.apm_min_at_marked_point),
            0.05,
        ));
    }
    out
}

fn analyze_like(cfg: &RunConfig, command: Command) -> Result<RunOutput> {
    let started = now_ms();
    let jet = cfg.jet_mode()?;
    let want_csv = cfg.format.csv() && command == Command::Analyze;
    let mut samples = Vec::new();
    let mut csv = Vec::new();
    for &n in &cfg.resolutions {
        let (s, t) = analyze_sample(cfg, n, want_csv)?;
        samples.push(s);
        if let Some(t) = t {
            csv.push((format!("fields_n{n}.csv"), t));
        }
    }
    let patch = build_patch(cfg, cfg.resolutions[0], jet)?;
    let mut checks = Vec::new();
    if command == Command::Analyze {
        checks.extend(algebraic_checks(cfg, &patch, &samples));
    }
    checks.extend(convergence_checks(cfg, &patch, &samples));
    if command == Command::Convergence && cfg.format.csv() {
        let mut t = CsvTable::new(&["check", "n", "h", "value"]);
        for c in checks
            .iter()
            .filter(|c| matches!(c.kind, CheckKind::Order | CheckKind::NonDecay))
        {
            for ((n, s), v) in c.resolutions.iter().zip(&samples).zip(&c.values) {
                t.push(vec![
                    c.name.clone(),
                    n.to_string(),
                    s.h.to_string(),
                    v.to_string(),
                ]);
            }
        }
        csv.push(("convergence.csv".into(), t));
    }
    let data = serde_json::json!({
        "surface": surface_info(&patch),
        "samples": samples,
    });
    finish(command, cfg, checks, data, csv, started)
}

fn surface_info(patch: &ImmersionPatch) -> serde_json::Value {
    let d = patch.domain;
    serde_json::json!({
        "name": patch.name,
        "ambient_dim": patch.ambient_dim,
        "k": patch.k(),
        "params": patch.params,
        "domain": [d.u_min, d.u_max, d.v_min, d.v_max],
        "minimal": patch.known_minimal,
        "holomorphic": patch.known_holomorphic,
        "marked_point": [patch.marked_point.0, patch.marked_point.1],
    })
}

fn finish(
    command: Command,
    cfg: &RunConfig,
    checks: Vec<Check>,
    data: serde_json::Value,
    csv: Vec<(String, CsvTable)>,
    started: u128,
) -> Result<RunOutput> {
    let body = ReportBody::new(command.name(), cfg, checks, data);
    Ok(RunOutput {
        report: Report {
            metadata: Metadata {
                started_unix_ms: started,
                finished_unix_ms: now_ms(),
            },
            body,
        },
        csv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSample {
    pub n: usize,
    pub h: f64,
    pub dofs: usize,
    pub lambda_min: f64,
    pub ritz_values: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub shift: f64,
    pub classification: String,
    pub symmetry_defect: f64,
    pub form_vs_direct: f64,
    pub closed_form: Option<f64>,
    pub special_variation: Option<SpecialVariation>,
    pub special_direction: Vec<f64>,
}

/// Closed-form smallest Dirichlet eigenvalue where one is known (flat rectangles).
pub fn closed_form_lambda(patch: &ImmersionPatch) -> Option<f64> {
    if patch.name != "plane_k" {
        return None;
    }
    let d = patch.domain;
    let pi2 = std::f64::consts::PI.powi(2);
    Some(pi2 / (d.u_max - d.u_min).powi(2) + pi2 / (d.v_max - d.v_min).powi(2))
}

/// Largest relative gap `|sᵀ(K−P)s − δ²V(s,s)| / (1 + |δ²V(s,s)|)` over seeded random sections.
pub fn form_vs_direct(
    ws: &Workspace,
    form: &crate::stability::DiscretizedJacobiForm,
    count: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let s = Field::from_fn(&ws.fp.grid, ws.fp.r, 1, |_, _, out| {
            out.iter_mut()
                .for_each(|x| *x = rng.random::<f64>() * 2.0 - 1.0)
        });
        let d = second_variation_direct(&s, &ws.fp, &ws.sff)?;
        worst = worst.max((form.quadratic(&s) - d).abs() / (1.0 + d.abs()));
    }
    Ok(worst)
}

pub fn spectrum_sample(cfg: &RunConfig, n: usize) -> Result<(SpectrumSample, Field)> {
    let ws = Workspace::new(build_patch(cfg, n, cfg.jet_mode()?)?)
        .map_err(|e| e.in_stage(format!("frames at n={n}")))?;
    let form = assemble_form(&ws.fp, &ws.sff).map_err(|e| e.in_stage("assembly"))?;
    let opts = SpectrumOptions {
        tolerance: cfg.solver_tol,
        ..SpectrumOptions::default()
    };
    let eig = smallest_eigenvalue(&form, &opts)
        .map_err(|e| e.in_stage(format!("eigensolver at n={n}")))?;
    let gap = form_vs_direct(&ws, &form, 20, cfg.seed.wrapping_add(99))?;
    // special variation along the standard direction with the most negative q at the marked point
    let (mi, mj) = ws
        .fp
        .grid
        .nearest(ws.patch.marked_point.0, ws.patch.marked_point.1);
    let mut best = (f64::INFINITY, 0usize);
    for m in 0..ws.fp.n {
        let mut e = vec![0.0; ws.fp.n];
        e[m] = 1.0;
        let q = q_direct(&e, &ws.sff, &ws.jn, &ws.fp).at(mi, mj)[0];
        if q < best.0 - 1e-12 {
            best = (q, m);
        }
    }
    let mut dir = vec![0.0; ws.fp.n];
    dir[best.1] = 1.0;
    let sv = special_variation_inequality(&dir, &cutoff(&ws.fp), &ws.fp, &ws.sff, &ws.jn).ok();
    let classification = if eig.lambda_min >= -cfg.solver_tol {
        "patch-stable"
    } else {
        "patch-unstable"
    };
    Ok((
        SpectrumSample {
            n,
            h: ws.patch.grid_spacing(),
            dofs: eig.dofs,
            lambda_min: eig.lambda_min,
            ritz_values: eig.ritz_values.clone(),
            iterations: eig.iterations,
            residual_norm: eig.residual_norm,
            shift: eig.shift,
            classification: classification.into(),
            symmetry_defect: form.symmetry_defect(),
            form_vs_direct: gap,
            closed_form: closed_form_lambda(&ws.patch),
            special_variation: sv,
            special_direction: dir,
        },
        eig.eigen_section,
    ))
}

fn spectrum(cfg: &RunConfig) -> Result<RunOutput> {
    let started = now_ms();
    let mut samples = Vec::new();
    let mut csv = Vec::new();
    for &n in &cfg.resolutions {
        let (s, section) = spectrum_sample(cfg, n)?;
        if cfg.format.csv() {
            let fp_grid = Grid::new(build_patch(cfg, n, cfg.jet_mode()?)?.domain);
            let names: Vec<String> = (1..=section.dim).map(|a| format!("s_{a}")).collect();
            let mut header = vec!["u", "v"];
            header.extend(names.iter().map(String::as_str));
            let mut t = CsvTable::new(&header);
            for (i, j) in fp_grid.interior(0).iter() {
                let mut row = vec![fp_grid.u(i).to_string(), fp_grid.v(j).to_string()];
                row.extend(section.at(i, j).iter().map(|x| x.to_string()));
                t.push(row);
            }
            csv.push((format!("eigen_section_n{n}.csv"), t));
        }
        samples.push(s);
    }
    let patch = build_patch(cfg, cfg.resolutions[0], cfg.jet_mode()?)?;
    let res: Vec<usize> = samples.iter().map(|s| s.n).collect();
    let h: Vec<f64> = samples.iter().map(|s| s.h).collect();
    let mut checks = vec![
        Check::upper_bound(
            "eigen_residual",
            "‖(K − P − λM)x‖ ≤ tol ‖x‖",
            &res,
            samples.iter().map(|s| s.residual_norm).collect(),
            cfg.solver_tol,
        ),
        Check::upper_bound(
            "form_symmetry",
            "K − P symmetric",
            &res,
            samples.iter().map(|s| s.symmetry_defect).collect(),
            0.0,
        ),
        Check::upper_bound(
            "assembled_matches_direct",
            "sᵀ(K−P)s = δ²V(s, s)",
            &res,
            samples.iter().map(|s| s.form_vs_direct).collect(),
            1e-10,
        ),
        Check::info(
            "lambda_min",
            "smallest eigenvalue of (K − P)x = λMx",
            &res,
            samples.iter().map(|s| s.lambda_min).collect(),
        )
        .with_note(
            samples
                .last()
                .map(|s| s.classification.clone())
                .unwrap_or_default(),
        ),
    ];
    if let Some(exact) = closed_form_lambda(&patch) {
        let errs: Vec<f64> = samples
            .iter()
            .map(|s| (s.lambda_min - exact).abs() / exact)
            .collect();
        checks.push(Check::upper_bound(
            "closed_form_relative_error_finest",
            "λ_min → π²(1/L_u² + 1/L_v²)",
            &res[res.len() - 1..],
            vec![errs[errs.len() - 1]],
            0.01,
        ));
        checks.push(Check::order(
            "closed_form_convergence",
            "λ_min → π²(1/L_u² + 1/L_v²)",
            &res,
            &h,
            errs,
            cfg.min_order,
        ));
    }
    if patch.known_holomorphic {
        checks.push(Check::lower_bound(
            "holomorphic_patch_stable",
            "holomorphic ⇒ δ²V ≥ 0",
            &res,
            samples.iter().map(|s| s.lambda_min).collect(),
            -cfg.solver_tol,
        ));
    }
    let data = serde_json::json!({ "surface": surface_info(&patch), "samples": samples });
    finish(Command::Spectrum, cfg, checks, data, csv, started)
}

#[derive(Debug, Clone, Serialize)]
pub struct HolonomySample {
    pub n: usize,
    pub found: bool,
    pub loops: usize,
    pub curvature_samples: usize,
    pub certificate: CommutantCertificate,
    pub axioms: Option<AxiomReport>,
    pub commutator_residual: Option<f64>,
    pub distance_to_catalog: Option<f64>,
    pub base: Option<(usize, usize)>,
    pub base_matrix: Option<Vec<f64>>,
}

fn holonomy_options(cfg: &RunConfig) -> HolonomyOptions {
    HolonomyOptions {
        seed: cfg.seed,
        ..HolonomyOptions::default()
    }
}

/// Grid of the synthetic connection: 33×33 on `[−1, 1]²`.
pub fn synthetic_grid() -> Grid {
    Grid::new(ChartDomain::new(-1.0, 1.0, -1.0, 1.0, 33, 33).expect("valid domain"))
}

pub fn holonomy_sample(cfg: &RunConfig, n: usize) -> Result<HolonomySample> {
    let (conn, ws) = match cfg.synthetic.as_deref() {
        Some(_) => (
            NormalConnection::synthetic_so4(synthetic_grid(), cfg.seed),
            None,
        ),
        None => {
            let ws = Workspace::new(build_patch(cfg, n, cfg.jet_mode()?)?)?;
            (NormalConnection::from_frames(&ws.fp), Some(ws))
        }
    };
    let search = find_parallel_jn(&conn, &holonomy_options(cfg))
        .map_err(|e| e.in_stage("holonomy search"))?;
    let mut out = HolonomySample {
        n: conn.grid.nu,
        found: false,
        loops: search.loops.len(),
        curvature_samples: search.curvature_samples,
        certificate: search.certificate.clone(),
        axioms: None,
        commutator_residual: None,
        distance_to_catalog: None,
        base: None,
        base_matrix: None,
    };
    if let ParallelJNOutcome::Found(f) = &search.outcome {
        out.found = true;
        out.commutator_residual = Some(f.commutator_residual);
        out.base = Some(f.base);
        out.base_matrix = Some(row_major(&f.base_matrix));
        if let Some(ws) = &ws {
            let reg = f.field.jn.valid();
            out.axioms = Some(check_jn_axioms(&f.field, &ws.fp, &reg));
            out.distance_to_catalog = Some(distance_up_to_sign(&f.field, &ws.jn, &reg));
        }
    }
    Ok(out)
}

fn holonomy(cfg: &RunConfig) -> Result<RunOutput> {
    let started = now_ms();
    let resolutions: Vec<usize> = if cfg.synthetic.is_some() {
        vec![synthetic_grid().nu]
    } else {
        cfg.resolutions.clone()
    };
    let samples: Vec<HolonomySample> = resolutions
        .iter()
        .map(|&n| holonomy_sample(cfg, n))
        .collect::<Result<_>>()?;
    let res: Vec<usize> = samples.iter().map(|s| s.n).collect();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut checks = Vec::new();
    let surface = if cfg.synthetic.is_some() {
        checks.push(Check::lower_bound(
            "no_parallel_structure",
            "holonomy of the full SO(4) connection is not in U(2)",
            &res,
            samples.iter().map(|s| flag(!s.found)).collect(),
            1.0,
        ));
        checks.push(Check::upper_bound(
            "skew_commutant_dimension",
            "skew commutant of the holonomy is trivial",
            &res,
            samples
                .iter()
                .map(|s| s.certificate.skew_dimension as f64)
                .collect(),
            0.0,
        ));
        serde_json::json!({ "synthetic": "so4", "grid": [33, 33], "domain": [-1.0, 1.0, -1.0, 1.0] })
    } else {
        let patch = build_patch(cfg, cfg.resolutions[0], cfg.jet_mode()?)?;
        let found: Vec<f64> = samples.iter().map(|s| flag(s.found)).collect();
        if patch.known_minimal {
            checks.push(Check::lower_bound(
                "parallel_structure_found",
                "normal holonomy in U(k)",
                &res,
                found,
                1.0,
            ));
        } else {
            checks.push(Check::info(
                "parallel_structure_found",
                "normal holonomy in U(k)",
                &res,
                found,
            ));
        }
        if samples.iter().all(|s| s.found) {
            let ax: Vec<f64> = samples
                .iter()
                .map(|s| {
                    s.axioms
                        .map(|a| a.orthogonality.max(a.square).max(a.parallel))
                        .unwrap_or(f64::INFINITY)
                })
                .collect();
            checks.push(Check::upper_bound(
                "found_structure_axioms",
                "J orthogonal, J² = −I, DJ = 0",
                &res,
                ax,
                cfg.axiom_tol,
            ));
            checks.push(Check::info(
                "distance_to_catalog_structure",
                "found J versus the catalog J, up to sign",
                &res,
                samples
                    .iter()
                    .map(|s| s.distance_to_catalog.unwrap_or(f64::NAN))
                    .collect(),
            ));
        }
        surface_info(&patch)
    };
    let data = serde_json::json!({ "surface": surface, "samples": samples });
    finish(Command::Holonomy, cfg, checks, data, Vec::new(), started)
}

fn catalog(cfg: &RunConfig) -> Result<RunOutput> {
    let started = now_ms();
    let data = serde_json::json!({ "surfaces": catalog_entries() });
    finish(Command::Catalog, cfg, Vec::new(), data, Vec::new(), started)
}

/// Runs one command.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.synthetic.is_some() && command != Command::Holonomy {
        return Err(LabError::InvalidConfig(
            "synthetic connections are only available to the holonomy command".into(),
        ));
    }
    if cfg.surface.is_none() && cfg.synthetic.is_none() && command != Command::Catalog {
        return Err(LabError::InvalidConfig("no surface given".into()));
    }
    match command {
        Command::Analyze | Command::Convergence => analyze_like(cfg, command),
        Command::Spectrum => spectrum(cfg),
        Command::Holonomy => holonomy(cfg),
        Command::Catalog => catalog(cfg),
    }
}

/// Writes `report.json` and CSV tables into `dir` as configured; returns the written paths.
pub fn write_outputs(
    out: &RunOutput,
    cfg: &RunConfig,
    dir: &std::path::Path,
) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if cfg.format.json() {
        let p = dir.join("report.json");
        crate::report::write_atomic(&p, out.report.to_json().as_bytes())?;
        written.push(p);
    }
    for (name, table) in &out.csv {
        let p = dir.join(name);
        crate::report::write_atomic(&p, table.render().as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_directions_are_unit_and_seeded() {
        let a = random_directions(6, 12, 3);
        assert_eq!(a, random_directions(6, 12, 3));
        assert_ne!(a, random_directions(6, 12, 4));
        for d in &a {
            assert!((norm(d) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn commands_reject_inconsistent_configs() {
        let mut cfg = RunConfig::default();
        assert!(run(Command::Analyze, &cfg).is_err());
        cfg.set("synthetic", "so4").unwrap();
        assert!(run(Command::Spectrum, &cfg).is_err());
        assert!(run(Command::Holonomy, &cfg).is_ok());
    }

    #[test]
    fn plane_spectrum_matches_closed_form() {
        let mut cfg = RunConfig::default();
        cfg.set("surface", "plane_k").unwrap();
        cfg.set("res", "33").unwrap();
        let out = run(Command::Spectrum, &cfg).unwrap();
        let lam = out.report.body.data["samples"][0]["lambda_min"].as_f64().unwrap();
        let exact = std::f64::consts::PI.powi(2) / 2.0;
        assert!((lam - exact).abs() / exact < 1e-3, "{lam}");
        assert!(out.report.body.summary.all_passed);
    }
}
