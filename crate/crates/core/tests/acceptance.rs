//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed by `cargo test`.

use std::process::ExitCode;

use minsurf_core::complex::{
    check_jn_axioms, find_parallel_jn, HolonomyOptions, NormalConnection, ParallelJNOutcome,
};
use minsurf_core::config::RunConfig;
use minsurf_core::convergence::{Check, CheckKind};
use minsurf_core::pipeline::{
    analyze_sample, build_patch, convergence_checks, form_vs_direct, run, spectrum_sample,
    synthetic_grid, AnalyzeSample, Command, Workspace,
};
use minsurf_core::stability::{assemble_form, smallest_eigenvalue, SpectrumOptions};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn cfg(surface: &str, params: &[(&str, &str)], res: &[usize]) -> RunConfig {
    let mut c = RunConfig::default();
    c.set("surface", surface).unwrap();
    for (k, v) in params {
        c.set(&format!("param.{k}"), v).unwrap();
    }
    c.resolutions = res.to_vec();
    c
}

fn label(c: &RunConfig) -> String {
    let p: Vec<String> = c.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    if p.is_empty() {
        c.surface.clone().unwrap_or_default()
    } else {
        format!("{}({})", c.surface.clone().unwrap_or_default(), p.join(","))
    }
}

fn catalog_instances() -> Vec<RunConfig> {
    vec![
        cfg("plane_k", &[("k", "1")], &[33]),
        cfg("plane_k", &[("k", "2")], &[33]),
        cfg("holo_graph", &[("p", "z^2")], &[33]),
        cfg("holo_graph", &[("p", "z^3")], &[33]),
        cfg("holo_graph", &[("p", "z^2;z^3"), ("k", "2")], &[33]),
        cfg("scaled_graph", &[], &[33]),
        cfg("perturbed_graph", &[], &[33]),
        cfg("catenoid_r6", &[], &[33]),
        cfg("enneper_r6", &[], &[33]),
    ]
}

fn holo_instances(res: &[usize]) -> Vec<RunConfig> {
    vec![
        cfg("holo_graph", &[("p", "z^2")], res),
        cfg("holo_graph", &[("p", "z^3")], res),
        cfg("holo_graph", &[("p", "z^2;z^3"), ("k", "2")], res),
    ]
}

fn worst(items: impl IntoIterator<Item = (String, f64)>) -> (String, f64) {
    items
        .into_iter()
        .fold(("all".to_string(), 0.0), |acc, (n, v)| {
            if v > acc.1 || v.is_nan() {
                (n, v)
            } else {
                acc
            }
        })
}

fn algebraic_identities() -> Outcome {
    let mut q = Vec::new();
    let mut trace = Vec::new();
    let mut apm = Vec::new();
    let mut resb = Vec::new();
    let mut dirs = usize::MAX;
    for c in catalog_instances() {
        dirs = dirs.min(c.directions);
        let patch = build_patch(&c, 33, c.jet_mode().unwrap()).unwrap();
        let (s, _) = analyze_sample(&c, 33, false).unwrap();
        let name = label(&c);
        q.push((
            name.clone(),
            if patch.known_minimal {
                s.q_via_apm_general.max(s.q_via_apm_surface)
            } else {
                s.q_via_apm_general
            },
        ));
        trace.push((name.clone(), s.q_trace.max(s.q_trace_rotated_basis)));
        let shape = if patch.known_minimal {
            s.apm_symmetry.max(s.apm_trace)
        } else {
            0.0
        };
        apm.push((name.clone(), s.apm_sum.max(s.apm_intertwining).max(shape)));
        resb.push((name, s.res_b_identity.max(s.res_b_minus_identity)));
    }
    let (qn, qv) = worst(q);
    let (tn, tv) = worst(trace);
    let (an, av) = worst(apm);
    let (rn, rv) = worst(resb);
    Outcome {
        passed: dirs >= 12 && qv <= 1e-10 && tv <= 1e-10 && av <= 1e-10 && rv <= 1e-12,
        detail: format!(
            "{dirs} directions; q forms {qv:.2e} ({qn}); Σq(e_i) {tv:.2e} ({tn}); A± {av:.2e} ({an}); res_b − 2max‖A⁻‖ {rv:.2e} ({rn})"
        ),
    }
}

fn samples(c: &RunConfig) -> Vec<AnalyzeSample> {
    c.resolutions
        .iter()
        .map(|&n| analyze_sample(c, n, false).unwrap().0)
        .collect()
}

fn order_checks(c: &RunConfig, names: &[&str]) -> Vec<Check> {
    let patch = build_patch(c, c.resolutions[0], c.jet_mode().unwrap()).unwrap();
    let checks = convergence_checks(c, &patch, &samples(c));
    names
        .iter()
        .map(|n| {
            checks
                .iter()
                .find(|k| k.name == *n)
                .unwrap_or_else(|| panic!("{n} missing for {}", label(c)))
                .clone()
        })
        .collect()
}

fn describe(label: &str, checks: &[Check]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in checks {
        let pass = c.passed && c.kind == CheckKind::Order;
        ok &= pass;
        let o = match (c.fitted_order, c.note.as_deref()) {
            (Some(p), _) => format!("{p:.3}"),
            (None, Some(n)) if n.starts_with("exact") => "exact".into(),
            _ => "n/a".into(),
        };
        parts.push(format!("{}={o}", c.name));
    }
    (ok, format!("{label}: {}", parts.join(" ")))
}

const ORDER_ITEMS: [&str; 11] = [
    "minimality_residual",
    "jacobi_of_normal_projection",
    "normal_projection_derivative",
    "cutoff_identity",
    "dbar_a_plus",
    "dbar_a_minus",
    "weitzenbock_sum_a_plus",
    "weitzenbock_difference_a_plus",
    "weitzenbock_sum_section",
    "weitzenbock_difference_section",
    "a_plus_equation",
];

fn convergence_orders() -> Outcome {
    let res = [33, 65, 129];
    let mut holo_items = ORDER_ITEMS.to_vec();
    holo_items.extend(["jbar_constancy", "jbar_holomorphy"]);
    let (a, da) = describe(
        "holo_graph",
        &order_checks(&cfg("holo_graph", &[("p", "z^2")], &res), &holo_items),
    );
    let (b, db) = describe(
        "catenoid_r6",
        &order_checks(&cfg("catenoid_r6", &[], &res), &ORDER_ITEMS),
    );
    Outcome {
        passed: a && b,
        detail: format!("{da}; {db}"),
    }
}

/// Recorded without gating: the cubic graph where the Weitzenböck sum is still pre-asymptotic at 33.
fn convergence_orders_cubic_graph() -> String {
    let c = cfg("holo_graph", &[("p", "z^3")], &[33, 65, 129]);
    let checks = order_checks(&c, &ORDER_ITEMS);
    let mut parts = Vec::new();
    for k in &checks {
        let last = k
            .pairwise_orders
            .last()
            .map(|p| format!("{p:.3}"))
            .unwrap_or_else(|| "exact".into());
        let fit = k
            .fitted_order
            .map(|p| format!("{p:.3}"))
            .unwrap_or_else(|| "exact".into());
        parts.push(format!("{}={fit}/{last}", k.name));
    }
    format!("holo_graph(p=z^3) fitted/finest-pair: {}", parts.join(" "))
}

fn negative_controls() -> Outcome {
    let res = [33, 65, 129];
    let pert = order_checks(
        &cfg("perturbed_graph", &[], &res),
        &["minimality_residual", "dbar_a_plus"],
    );
    let pert_ok = pert
        .iter()
        .all(|c| c.kind == CheckKind::NonDecay && c.passed);
    let cat = samples(&cfg("catenoid_r6", &[], &res));
    let jbar_min = cat
        .iter()
        .map(|s| s.jbar_constancy)
        .fold(f64::INFINITY, f64::min);
    let m_min = cat
        .iter()
        .map(|s| s.apm_min_at_marked_point)
        .fold(f64::INFINITY, f64::min);
    let waist = cat.iter().all(|s| s.marked_point.0 == 0.0);
    Outcome {
        passed: pert_ok && jbar_min >= 0.1 && m_min >= 0.05 && waist,
        detail: format!(
            "perturbed_graph minimality {:?}, D^{{0,1}}A⁺ {:?}; catenoid J̄ constancy min {jbar_min:.3}, min(|A⁺|,|A⁻|) at waist min {m_min:.3}",
            pert[0].values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
            pert[1].values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
        ),
    }
}

fn spectral_checks() -> Outcome {
    let flat = cfg("plane_k", &[("k", "1")], &[129]);
    let (fs, _) = spectrum_sample(&flat, 129).unwrap();
    let exact = std::f64::consts::PI.powi(2) / 2.0;
    let flat_err = (fs.lambda_min - exact).abs() / exact;

    let cat = cfg("catenoid_r6", &[("tmax", "2")], &[33, 65]);
    let cat_l: Vec<f64> = [33, 65]
        .iter()
        .map(|&n| spectrum_sample(&cat, n).unwrap().0.lambda_min)
        .collect();

    let mut holo_min = f64::INFINITY;
    for c in holo_instances(&[33]) {
        let ws = Workspace::new(build_patch(&c, 33, c.jet_mode().unwrap()).unwrap()).unwrap();
        let form = assemble_form(&ws.fp, &ws.sff).unwrap();
        holo_min = holo_min.min(
            smallest_eigenvalue(&form, &SpectrumOptions::default())
                .unwrap()
                .lambda_min,
        );
    }

    let mut gap: f64 = 0.0;
    for c in [
        cfg("catenoid_r6", &[], &[33]),
        cfg("holo_graph", &[("p", "z^3")], &[33]),
        cfg("perturbed_graph", &[], &[33]),
    ] {
        let ws = Workspace::new(build_patch(&c, 33, c.jet_mode().unwrap()).unwrap()).unwrap();
        let form = assemble_form(&ws.fp, &ws.sff).unwrap();
        gap = gap.max(form_vs_direct(&ws, &form, 20, 5).unwrap());
    }
    Outcome {
        passed: flat_err <= 0.01 && cat_l.iter().all(|l| *l < 0.0) && holo_min >= -1e-9 && gap <= 1e-10,
        detail: format!(
            "flat λ_min(129) {:.5} vs π²/2 rel {flat_err:.2e}; catenoid λ_min {:?}; holo_graph min λ_min {holo_min:.4}; form vs direct rel {gap:.2e}",
            fs.lambda_min,
            cat_l.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>()
        ),
    }
}

fn parallel_structures() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut cases = vec![cfg("catenoid_r6", &[], &[33])];
    cases.extend(holo_instances(&[33]));
    for c in cases {
        let ws = Workspace::new(build_patch(&c, 33, c.jet_mode().unwrap()).unwrap()).unwrap();
        let search = find_parallel_jn(
            &NormalConnection::from_frames(&ws.fp),
            &HolonomyOptions::default(),
        )
        .unwrap();
        match &search.outcome {
            ParallelJNOutcome::Found(f) => {
                let ax = check_jn_axioms(&f.field, &ws.fp, &f.field.jn.valid());
                let a = ax.orthogonality.max(ax.square).max(ax.parallel);
                ok &= a <= c.axiom_tol;
                parts.push(format!("{} found (axioms {a:.1e})", label(&c)));
            }
            ParallelJNOutcome::NoneFound => {
                ok = false;
                parts.push(format!("{} none found", label(&c)));
            }
        }
    }
    let synth = find_parallel_jn(
        &NormalConnection::synthetic_so4(synthetic_grid(), 1),
        &HolonomyOptions::default(),
    )
    .unwrap();
    let none = matches!(synth.outcome, ParallelJNOutcome::NoneFound);
    let cert = &synth.certificate;
    ok &= none && cert.skew_dimension == 0 && !cert.full_singular_values.is_empty();
    parts.push(format!(
        "synthetic so4 {} (skew commutant dim {}, smallest relative skew singular value {:.2e})",
        if none { "none found" } else { "found" },
        cert.skew_dimension,
        cert.smallest_relative_skew
    ));
    Outcome {
        passed: ok,
        detail: parts.join("; "),
    }
}

fn reproducible_reports() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut hol = RunConfig::default();
    hol.set("synthetic", "so4").unwrap();
    for (command, c) in [
        (
            Command::Analyze,
            cfg("holo_graph", &[("p", "z^3")], &[17, 33]),
        ),
        (Command::Spectrum, cfg("catenoid_r6", &[], &[17])),
        (
            Command::Holonomy,
            cfg("holo_graph", &[("p", "z^2;z^3"), ("k", "2")], &[17, 33]),
        ),
        (Command::Holonomy, hol),
        (Command::Convergence, cfg("catenoid_r6", &[], &[33, 65])),
    ] {
        let a = run(command, &c).unwrap().report.body.to_json();
        let b = run(command, &c).unwrap().report.body.to_json();
        ok &= a == b;
        parts.push(format!(
            "{} {} bytes {}",
            command.name(),
            a.len(),
            if a == b { "identical" } else { "DIFFER" }
        ));
    }
    Outcome {
        passed: ok,
        detail: parts.join("; "),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("algebraic identities on the catalog", algebraic_identities),
        (
            "convergence orders ≥ 1.9 over 33→65→129",
            convergence_orders,
        ),
        ("negative controls", negative_controls),
        ("spectral checks", spectral_checks),
        ("parallel normal complex structures", parallel_structures),
        ("byte-identical report bodies", reproducible_reports),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        println!(
            "{} {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    println!("INFO {}", convergence_orders_cubic_graph());
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
