//! Golden summaries of the three benchmark cases. Set `GLSOLVE_BLESS=1` to
//! rewrite the fixtures after a deliberate change.

use std::path::PathBuf;

use glsolve::bench::run::{run_case, CaseSpec, RunSummary};
use serde_json::{json, Value};

fn digest(s: &RunSummary) -> Value {
    let errors = s.errors.as_ref().map(|e| json!({ "ts_exact": e.ts_exact, "reference_exact": e.reference_exact }));
    json!({
        "reference_dofs": s.reference_dofs,
        "coarse_dofs": s.coarse_dofs,
        "macro_elements": s.macro_elements,
        "micro_elements": s.micro_elements,
        "enriched_nodes": s.enriched_nodes,
        "hanging_nodes": s.hanging_nodes,
        "iterations": s.solve.iterations,
        "termination": s.solve.termination,
        "final_resi": s.solve.final_resi,
        "reference_error": s.solve.reference_error,
        "errors": errors,
    })
}

/// Integers and strings must match; floats to a relative `1e-6`.
fn compare(path: &str, got: &Value, want: &Value) -> Vec<String> {
    match (got, want) {
        (Value::Object(g), Value::Object(w)) => {
            let mut keys: Vec<_> = g.keys().chain(w.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter()
                .flat_map(|k| compare(&format!("{path}.{k}"), g.get(k).unwrap_or(&Value::Null), w.get(k).unwrap_or(&Value::Null)))
                .collect()
        }
        (Value::Number(g), Value::Number(w)) if g.is_f64() || w.is_f64() => {
            let (g, w) = (g.as_f64().unwrap(), w.as_f64().unwrap());
            if (g - w).abs() <= 1e-6 * w.abs().max(1e-12) {
                vec![]
            } else {
                vec![format!("{path}: {g:e} != {w:e}")]
            }
        }
        _ if got == want => vec![],
        _ => vec![format!("{path}: {got} != {want}")],
    }
}

fn check(name: &str, spec: CaseSpec) {
    let got = digest(&run_case(&spec).unwrap().summary);
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", &format!("{name}.json")].iter().collect();
    if std::env::var_os("GLSOLVE_BLESS").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}; run with GLSOLVE_BLESS=1", path.display()));
    let want: Value = serde_json::from_str(&text).unwrap();
    let diffs = compare(name, &got, &want);
    assert!(diffs.is_empty(), "golden mismatch:\n{}", diffs.join("\n"));
}

#[test]
fn cubic_plate_two_levels() {
    check("cubic", CaseSpec::cubic());
}

#[test]
fn micro_structure_sixteen_planes() {
    check("micro16", CaseSpec::micro());
}

#[test]
fn cone_box() {
    check("cone_box", CaseSpec::cone());
}
