//! Acceptance suites assembled from catalog scenarios.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodesics::GeodesicRun;
use crate::geom::ChartMetric;
use crate::rolling::{curvature_gap, RollingConfiguration, RollingPath};
use crate::scenario::{
    catalog, catalog_entry, run, write_outputs, Artifact, Check, Format, Overrides, RunOutput, RunStatus,
    ScenarioError, ScenarioKind, VERSION,
};
use crate::shooting::reference_q;

/// Suite names, each followed by its aliases.
pub const SUITES: &[(&str, &[&str])] = &[
    ("theorem-2-4", &["lift-projection"]),
    ("first-integrals", &[]),
    ("reduction-2d", &[]),
    ("pendulum", &[]),
    ("corollary-4-7", &["rn-forms"]),
    ("vtilde", &[]),
    ("kinematics", &[]),
    ("charge", &[]),
    ("bvp", &[]),
    ("bracket-generating", &[]),
    ("all", &[]),
];

/// Canonical suite name for a name or alias.
pub fn suite_name(name: &str) -> Result<&'static str, ScenarioError> {
    SUITES
        .iter()
        .find(|(n, aliases)| *n == name || aliases.contains(&name))
        .map(|(n, _)| *n)
        .ok_or_else(|| {
            let names: Vec<String> = SUITES
                .iter()
                .map(|(n, a)| {
                    if a.is_empty() {
                        n.to_string()
                    } else {
                        format!("{n} (alias {})", a.join(", "))
                    }
                })
                .collect();
            let shown = if name.is_empty() { "<empty>" } else { name };
            ScenarioError::Validation(format!("unknown suite `{shown}`; available suites: {}", names.join(", ")))
        })
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub overrides: Overrides,
    /// Per-case artifacts and the report are written here when set.
    pub output_dir: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: String,
    pub measures: Vec<Check>,
    pub pass: bool,
}

impl CaseResult {
    fn new(case: &str, measures: Vec<Check>) -> Self {
        let pass = measures.iter().all(|c| c.pass != Some(false));
        Self {
            case: case.into(),
            measures,
            pass,
        }
    }

    fn failed(case: &str, reason: String) -> Self {
        Self {
            case: format!("{case}: {reason}"),
            measures: Vec::new(),
            pass: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: String,
    pub suite: String,
    pub description: String,
    pub cases: Vec<CaseResult>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub version: String,
    pub suite: String,
    pub criteria: Vec<CriterionResult>,
    pub pass: bool,
}

impl SuiteReport {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            4
        }
    }

    pub fn criterion(&self, id: &str) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.id == id)
    }
}

type Key = (String, Option<u64>);

fn key(name: &str, t_end: Option<f64>) -> Key {
    (name.to_string(), t_end.map(f64::to_bits))
}

struct Runs {
    map: BTreeMap<Key, (Result<RunOutput, ScenarioError>, f64)>,
}

impl Runs {
    fn get(&self, name: &str, t_end: Option<f64>) -> Result<&RunOutput, String> {
        match self.map.get(&key(name, t_end)) {
            Some((Ok(o), _)) => Ok(o),
            Some((Err(e), _)) => Err(e.to_string()),
            None => Err("not run".into()),
        }
    }

    fn wall_time(&self, name: &str, t_end: Option<f64>) -> f64 {
        self.map.get(&key(name, t_end)).map_or(f64::NAN, |r| r.1)
    }
}

struct Criterion {
    id: &'static str,
    suite: &'static str,
    description: &'static str,
    cases: Vec<(String, Option<f64>)>,
    eval: fn(&Runs, &[(String, Option<f64>)]) -> Vec<CaseResult>,
}

fn names_of(kind: ScenarioKind) -> Vec<(String, Option<f64>)> {
    catalog().into_iter().filter(|s| s.kind == kind).map(|s| (s.name, None)).collect()
}

fn criteria() -> Vec<Criterion> {
    let one = |n: &str| vec![(n.to_string(), None)];
    vec![
        Criterion {
            id: "C1",
            suite: "theorem-2-4",
            description: "projected lifted flow matches the base flow (sup errors ≤ 1e-6, < 10 s per case)",
            cases: names_of(ScenarioKind::VerifyLift),
            eval: |runs, cases| {
                per_case(runs, cases, |o, name, t| {
                    let mut m = bounded(o, &[("sup_error_lambda", 1e-6), ("sup_error_beta", 1e-6), ("sup_error_lift", 1e-6)]);
                    m.push(Check::bounded("wall_time", runs.wall_time(name, t), 10.0));
                    m
                })
            },
        },
        Criterion {
            id: "C2",
            suite: "first-integrals",
            description: "speed drift of every catalog geodesic ≤ 1e-8 over T = 10",
            cases: names_of(ScenarioKind::Geodesic),
            eval: |runs, cases| per_case(runs, cases, |o, _, _| bounded(o, &[("speed_drift", 1e-8)])),
        },
        Criterion {
            id: "C3",
            suite: "reduction-2d",
            description: "reduced and general base curves agree ≤ 1e-6 over T = 5",
            cases: ["sphere-on-plane-pendulum", "paraboloid-on-plane-pendulum", "sphere-on-sphere-pendulum"]
                .iter()
                .map(|n| (n.to_string(), Some(5.0)))
                .collect(),
            eval: |runs, cases| per_case(runs, cases, |o, _, _| bounded(o, &[("reduction_gap", 1e-6)])),
        },
        Criterion {
            id: "C4",
            suite: "pendulum",
            description: "θ matches the mathematical pendulum ≤ 1e-6 over T = 10; memory term ≤ 1e-8 when κ̂ = cκ",
            cases: vec![
                ("sphere-on-plane-pendulum".into(), None),
                ("sphere-on-sphere-pendulum".into(), None),
            ],
            eval: |runs, cases| {
                per_case(runs, cases, |o, _, _| {
                    bounded(o, &[("pendulum_theta", 1e-6), ("memory", 1e-8), ("pendulum_residual", 1e-6)])
                })
            },
        },
        Criterion {
            id: "C5",
            suite: "corollary-4-7",
            description: "formulations (a), (b) and the general flow agree pairwise ≤ 1e-7 on paraboloid on ℝ², T = 5",
            cases: one("paraboloid-rn-roll"),
            eval: |runs, cases| {
                per_case(runs, cases, |o, _, _| {
                    bounded(o, &[("a_vs_b", 1e-7), ("a_vs_general", 1e-7), ("b_vs_general", 1e-7)])
                })
            },
        },
        Criterion {
            id: "C6",
            suite: "vtilde",
            description: "both Ṽ identities hold ≤ 1e-7 along every accepted trajectory",
            cases: catalog()
                .into_iter()
                .filter(|s| {
                    matches!(
                        s.kind,
                        ScenarioKind::Geodesic | ScenarioKind::Pendulum2d | ScenarioKind::RnRoll | ScenarioKind::Bvp
                    )
                })
                .map(|s| (s.name, None))
                .collect(),
            eval: |runs, cases| {
                per_case(runs, cases, |o, _, _| match geodesic_runs(&o.artifact) {
                    None => vec![Check::bounded("vtilde", f64::INFINITY, 1e-7)],
                    Some(r) => {
                        let v = r.residual_pair().map(|p| p.1.max()).unwrap_or(f64::INFINITY);
                        vec![Check::bounded("vtilde", v, 1e-7)]
                    }
                })
            },
        },
        Criterion {
            id: "C7",
            suite: "kinematics",
            description: "developments roll without slipping or twisting; great circle traces a straight segment of \
                          length 2π; holonomy matches its closed form",
            cases: names_of(ScenarioKind::Develop),
            eval: |runs, cases| {
                per_case(runs, cases, |o, name, _| {
                    let mut m = bounded(o, &[("slip", 1e-8), ("twist", 1e-8)]);
                    if let Artifact::Path(p) = &o.artifact {
                        m.extend(kinematic_checks(name, p));
                    }
                    m
                })
            },
        },
        Criterion {
            id: "C8",
            suite: "charge",
            description: "charge reconstruction ≤ 1e-6 on three flat-M̂ scenarios",
            cases: ["sphere-on-plane", "paraboloid-on-plane", "torus-on-plane"]
                .iter()
                .map(|n| (n.to_string(), None))
                .collect(),
            eval: |runs, cases| per_case(runs, cases, |o, _, _| bounded(o, &[("charge", 1e-6)])),
        },
        Criterion {
            id: "C9",
            suite: "bvp",
            description: "shooting recovers an endpoint_map target: residual ≤ 1e-8 in ≤ 50 iterations",
            cases: one("sphere-on-plane-bvp"),
            eval: |runs, cases| {
                per_case(runs, cases, |o, _, _| {
                    let mut m = bounded(o, &[("residual", 1e-8), ("iterations", 50.0)]);
                    let ok = matches!(&o.artifact, Artifact::Bvp(r) if r.converged());
                    m.push(Check::bounded("not_converged", if ok { 0.0 } else { 1.0 }, 0.0));
                    m
                })
            },
        },
        Criterion {
            id: "C10",
            suite: "bracket-generating",
            description: "curvature gap vanishes for plane/plane and sphere(r)/sphere(r), ≥ 0.99 for sphere on plane",
            cases: Vec::new(),
            eval: |_, _| bracket_cases(),
        },
    ]
}

fn bounded(o: &RunOutput, bounds: &[(&str, f64)]) -> Vec<Check> {
    bounds
        .iter()
        .map(|(name, b)| match o.summary.check(name) {
            Some(c) => Check::bounded(name, c.value, *b),
            None => Check::bounded(&format!("{name} (missing)"), f64::INFINITY, *b),
        })
        .collect()
}

fn per_case(
    runs: &Runs,
    cases: &[(String, Option<f64>)],
    f: impl Fn(&RunOutput, &str, Option<f64>) -> Vec<Check>,
) -> Vec<CaseResult> {
    cases
        .iter()
        .map(|(name, t)| match runs.get(name, *t) {
            Ok(o) => {
                let mut m = f(o, name, *t);
                if o.summary.status == RunStatus::Truncated {
                    m.push(Check::bounded("truncated", 1.0, 0.0));
                }
                CaseResult::new(name, m)
            }
            Err(e) => CaseResult::failed(name, e),
        })
        .collect()
}

fn geodesic_runs(a: &Artifact) -> Option<&GeodesicRun> {
    match a {
        Artifact::Geodesic(r) => Some(r),
        Artifact::Pendulum(_, r) => Some(r),
        Artifact::Rn(r) => Some(&r.general),
        Artifact::Bvp(r) => r.run.as_ref(),
        _ => None,
    }
}

fn rotation(a: f64) -> DMatrix<f64> {
    let (s, c) = a.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Trace and holonomy checks for sphere-on-plane developments along a
/// circle of colatitude `φ₀`.
fn kinematic_checks(name: &str, p: &RollingPath) -> Vec<Check> {
    let first = p.node_configuration(0);
    let last = p.final_configuration();
    let sphere_on_plane = first.m.spec == ChartMetric::sphere(1.0).spec && first.mh.spec == ChartMetric::euclidean(2).spec;
    if !sphere_on_plane || !name.starts_with("sphere-") {
        return Vec::new();
    }
    let phi0 = first.x[0];
    let (Ok(q0), Ok(q1)) = (reference_q(&first), reference_q(&last)) else {
        return vec![Check::bounded("holonomy_mismatch", f64::INFINITY, 1e-7)];
    };
    // transport around the circle rotates tangent frames by 2π cos φ₀
    let holonomy = (&q1 - &q0 * rotation(2.0 * PI * phi0.cos())).norm();
    let mut out = vec![Check::bounded("holonomy_mismatch", holonomy, 1e-7)];
    if (phi0 - PI / 2.0).abs() < 1e-12 {
        let (a, b) = (first.xh.clone(), last.xh.clone());
        let chord = &b - &a;
        let len = chord.norm();
        let dir = &chord / len;
        let dev = (0..=1000)
            .map(|k| {
                let t = p.nodes[0].t + (p.nodes.last().unwrap().t - p.nodes[0].t) * k as f64 / 1000.0;
                let d: DVector<f64> = p.configuration_at(t).xh - &a;
                (&d - &dir * d.dot(&dir)).norm()
            })
            .fold(0.0, f64::max);
        out.push(Check::bounded("trace_length_error", (len - 2.0 * PI).abs(), 1e-7));
        out.push(Check::bounded("trace_straightness", dev, 1e-7));
    }
    out
}

fn gap_case(label: &str, m: ChartMetric, mh: ChartMetric, x: &[f64], xh: &[f64], expect_zero: bool) -> CaseResult {
    let value = RollingConfiguration::standard(m, mh, x, xh, 0.3)
        .and_then(|c| curvature_gap(&c))
        .map(|g| g.min_singular_value);
    match value {
        Ok(v) if expect_zero => CaseResult::new(label, vec![Check::bounded("min_singular_value", v, 1e-10)]),
        Ok(v) => CaseResult::new(
            label,
            vec![
                Check::info("min_singular_value", v),
                Check::bounded("shortfall_below_0.99", (0.99 - v).max(0.0), 0.0),
            ],
        ),
        Err(e) => CaseResult::failed(label, e.to_string()),
    }
}

fn bracket_cases() -> Vec<CaseResult> {
    let mut out = vec![gap_case(
        "plane-on-plane",
        ChartMetric::euclidean(2),
        ChartMetric::euclidean(2),
        &[0.3, -0.2],
        &[1.0, 0.5],
        true,
    )];
    for r in [0.5, 1.0, 2.0] {
        out.push(gap_case(
            &format!("sphere({r})-on-sphere({r})"),
            ChartMetric::sphere(r),
            ChartMetric::sphere(r),
            &[1.0, 0.2],
            &[2.0, -0.4],
            true,
        ));
    }
    out.push(gap_case(
        "sphere(1)-on-plane",
        ChartMetric::sphere(1.0),
        ChartMetric::euclidean(2),
        &[1.0, 0.2],
        &[0.0, 0.0],
        false,
    ));
    out
}

fn run_case(name: &str, t_end: Option<f64>, o: &VerifyOptions) -> (Result<RunOutput, ScenarioError>, f64) {
    let start = Instant::now();
    let mut ov = o.overrides;
    if ov.t_end.is_none() {
        ov.t_end = t_end;
    }
    let out = catalog_entry(name)
        .ok_or_else(|| ScenarioError::Validation(format!("missing catalog entry `{name}`")))
        .and_then(|s| run(&s.with_overrides(&ov)));
    (out, start.elapsed().as_secs_f64())
}

/// Runs a suite; cases shared between criteria are integrated once.
pub fn verify(name: &str, opts: &VerifyOptions) -> Result<SuiteReport, ScenarioError> {
    let suite = suite_name(name)?;
    let selected: Vec<Criterion> = criteria()
        .into_iter()
        .filter(|c| suite == "all" || c.suite == suite)
        .collect();
    let mut wanted: Vec<Key> = selected
        .iter()
        .flat_map(|c| c.cases.iter().map(|(n, t)| key(n, *t)))
        .collect();
    wanted.sort();
    wanted.dedup();
    let results: Vec<_> = wanted
        .par_iter()
        .map(|(n, t)| run_case(n, t.map(f64::from_bits), opts))
        .collect();
    let mut runs = Runs { map: BTreeMap::new() };
    for (k, r) in wanted.into_iter().zip(results) {
        runs.map.insert(k, r);
    }
    if let Some(dir) = &opts.output_dir {
        write_case_outputs(&mut runs, dir, opts.format)?;
    }
    let criteria: Vec<CriterionResult> = selected
        .iter()
        .map(|c| {
            let cases = (c.eval)(&runs, &c.cases);
            CriterionResult {
                id: c.id.into(),
                suite: c.suite.into(),
                description: c.description.into(),
                pass: !cases.is_empty() && cases.iter().all(|r| r.pass),
                cases,
            }
        })
        .collect();
    let report = SuiteReport {
        version: VERSION.into(),
        suite: suite.into(),
        pass: criteria.iter().all(|c| c.pass),
        criteria,
    };
    if let Some(dir) = &opts.output_dir {
        let path = dir.join(format!("{suite}.report.json"));
        let tmp = dir.join(format!(".{suite}.report.json.tmp"));
        let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        let io = |e: std::io::Error| ScenarioError::Io(e.to_string());
        std::fs::write(&tmp, body).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)?;
    }
    Ok(report)
}

fn write_case_outputs(runs: &mut Runs, dir: &Path, format: Format) -> Result<(), ScenarioError> {
    for ((name, t), (out, _)) in runs.map.iter_mut() {
        if let Ok(o) = out {
            let sub = match t {
                Some(bits) => dir.join(format!("{name}-T{}", f64::from_bits(*bits))),
                None => dir.join(name),
            };
            write_outputs(o, &sub, format)?;
        }
    }
    Ok(())
}

/// One `PASS`/`FAIL` line per criterion.
pub fn report_lines(r: &SuiteReport) -> Vec<String> {
    r.criteria
        .iter()
        .map(|c| {
            let worst: Vec<String> = c
                .cases
                .iter()
                .map(|k| {
                    let m: Vec<String> = k
                        .measures
                        .iter()
                        .filter(|m| m.bound.is_some())
                        .map(|m| format!("{}={:.2e}", m.name, m.value))
                        .collect();
                    format!("{}[{}]", k.case, m.join(" "))
                })
                .collect();
            format!(
                "{} {} {}: {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.id,
                c.suite,
                worst.join("; ")
            )
        })
        .collect()
}
