//! Browser bindings: each export takes plain arguments and returns a JSON
//! string rendered with the library's fixed float format.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use frobenius_kdv::dressing::{dress_loop, loop_potential, verify_normal_form};
use frobenius_kdv::flows::{integrate_flow, ConservedTable, FlowGenerator, FlowOptions};
use frobenius_kdv::loops::{LoopCurve, LoopState};
use frobenius_kdv::models::{check_axioms, fixture, FrobeniusModel};
use frobenius_kdv::report::{complex_json, render};
use frobenius_kdv::suite::{run_suite, SuiteConfig};

fn fail(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn model(name: &str) -> Result<FrobeniusModel, JsValue> {
    fixture(name).map_err(fail)
}

fn default_loop(m: &FrobeniusModel, points: usize) -> Result<LoopState, JsValue> {
    if !points.is_power_of_two() || points < 8 {
        return Err(fail("loop points must be a power of two, at least 8"));
    }
    let st = LoopState::from_model(m, &LoopCurve::default_for(m), points).map_err(fail)?;
    st.check_smooth().map_err(fail)?;
    Ok(st)
}

/// Fixture names with their axiom residuals on the default grid.
#[wasm_bindgen]
pub fn fixtures() -> Result<String, JsValue> {
    let mut rows = Vec::new();
    for name in ["trivial_diag(2)", "trivial_diag(3)", "qh_p1", "a2_poly"] {
        let m = model(name)?;
        let grid = m.domain_grid(9).map_err(fail)?;
        let ax = check_axioms(&m, &grid.points(), 1e-12);
        rows.push(json!({"name": name, "n": m.n, "max_axiom_residual": ax.unit.max(ax.commutativity).max(ax.symmetry).max(ax.frobenius)}));
    }
    Ok(render(&Value::Array(rows)))
}

/// Dress the default loop; report the normal-form residual per order and the
/// loop integrals of the diagonal coefficients.
#[wasm_bindgen]
pub fn dress(name: &str, order: u32, points: u32) -> Result<String, JsValue> {
    let m = model(name)?;
    let order = order.clamp(1, 8) as usize;
    let st = default_loop(&m, points as usize)?;
    let d = dress_loop(&st, order).map_err(fail)?;
    let nf = verify_normal_form(&loop_potential(&st, order), &d.t_full, &d.diff, order);
    let table = ConservedTable::from_dressing(&d);
    let integrals: Vec<Value> = (-1..order as i32)
        .map(|k| json!({"k": k, "value": (0..m.n).map(|j| complex_json(table.get(k, j))).collect::<Vec<_>>()}))
        .collect();
    Ok(render(&json!({
        "fixture": m.name,
        "order": order,
        "points": st.n_points(),
        "offdiag": nf.offdiag.iter().map(|(k, r)| json!({"k": k, "residual": r})).collect::<Vec<_>>(),
        "integrals": integrals,
    })))
}

/// Integrate the flow of `hbar^-j diag(1, 0, ...)` on a coarse loop and
/// return the drift of the conserved integrals per record.
#[wasm_bindgen]
pub fn flow(name: &str, j: u32, dt: f64, steps: u32) -> Result<String, JsValue> {
    let m = model(name)?;
    if !(dt > 0.0 && dt.is_finite()) || steps == 0 || steps > 2000 || !(1..=3).contains(&j) {
        return Err(fail("need dt > 0, 1 <= steps <= 2000 and 1 <= j <= 3"));
    }
    let mut top = vec![0.0; m.n];
    top[0] = 1.0;
    let b = FlowGenerator::single(j as usize, &top);
    let st = default_loop(&m, 32)?;
    let opts = FlowOptions { dt, steps: steps as usize, record_every: (steps as usize / 20).max(1), conserved_order: 3 };
    let traj = integrate_flow(&st, &b, &opts).map_err(fail)?;
    let records: Vec<Value> = traj.records.iter().map(|r| json!({"t": r.t, "drift": r.drift, "eigen_drift": r.eigen_drift})).collect();
    Ok(render(&json!({
        "fixture": m.name,
        "records": records,
        "max_drift": traj.max_drift(),
        "max_eigen_drift": traj.max_eigen_drift(),
    })))
}

/// Full invariant suite with the command-line defaults.
#[wasm_bindgen]
pub fn verify(name: &str) -> Result<String, JsValue> {
    let m = model(name)?;
    let r = run_suite(&m, &SuiteConfig::for_model(&m)).map_err(fail)?;
    Ok(render(&serde_json::to_value(&r).map_err(fail)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exports_return_json() {
        let v: Value = serde_json::from_str(&fixtures().unwrap()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 4);
        let d: Value = serde_json::from_str(&dress("qh_p1", 3, 64).unwrap()).unwrap();
        assert!(d["offdiag"].as_array().unwrap().iter().all(|o| o["residual"].as_f64().unwrap() < 1e-8));
        let f: Value = serde_json::from_str(&flow("trivial_diag(2)", 2, 1e-3, 10).unwrap()).unwrap();
        assert_eq!(f["max_drift"].as_f64(), Some(0.0));
    }
}
