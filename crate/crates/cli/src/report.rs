//! Summary report: one JSON document plus a text rendering.
//!
//! Keys are emitted in sorted order and every number is printed in its
//! shortest round-trip form, so identical runs give identical bytes.

use std::fmt::Write as _;

use rvm_core::energetics::{outgoing_flux, EnergyLedger};
use rvm_core::radiation::{pair_residuals, residuals_json, RadiationSlice};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Pipeline;

/// One asserted residual.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
            detail: detail.into(),
        }
    }
}

/// Combined identity residuals of a set of slices, normalised by the
/// largest `|M|` (resp. `|E^rad|`) over all of them.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CombinedResiduals {
    pub mn: f64,
    pub radiation_a: f64,
    pub radiation_b: f64,
    pub planar: f64,
}

pub fn combined_residuals(slices: &[RadiationSlice]) -> CombinedResiduals {
    let mut mn = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for s in slices {
        for r in &s.records {
            mn.push((r.k, r.m, r.n));
            a.push((r.k, r.e_rad, r.b_rad));
            if let (Some(e), Some(bb)) = (r.e_rad_fd, r.b_rad_fd) {
                b.push((r.k, e, bb));
            }
        }
    }
    let m_max = mn.iter().fold(0.0f64, |acc, (_, m, _)| acc.max(m.norm()));
    let scale = if m_max > 0.0 { m_max } else { 1.0 };
    let planar = mn
        .iter()
        .fold(0.0f64, |acc, (k, m, n)| acc.max((n - k.cross(m)).norm() / scale));
    CombinedResiduals {
        mn: pair_residuals(&mn).max(),
        radiation_a: pair_residuals(&a).max(),
        radiation_b: pair_residuals(&b).max(),
        planar,
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub scenario: String,
    pub pipelines: Vec<Pipeline>,
    pub fields: Value,
    pub radiation: Value,
    pub energetics: Value,
    pub evolve: Value,
    pub checks: Vec<Check>,
    /// Text rows appended to the human-readable rendering.
    text_sections: Vec<String>,
}

impl Report {
    /// A report with zeroed tables.
    pub fn new(scenario: &str, pipelines: &[Pipeline]) -> Self {
        Self {
            scenario: scenario.into(),
            pipelines: pipelines.to_vec(),
            fields: json!({ "samples": 0 }),
            radiation: json!({ "slices": [] }),
            energetics: json!({ "rows": [], "advanced_rows": [] }),
            evolve: json!({ "slabs": [] }),
            checks: Vec::new(),
            text_sections: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn set_fields(&mut self, samples: usize, max_e: f64, max_b: f64) {
        self.fields = json!({ "samples": samples, "max_abs_e": max_e, "max_abs_b": max_b });
        self.text_sections.push(format!(
            "fields: {samples} samples, max |E| {max_e:.6e}, max |B| {max_b:.6e}\n"
        ));
    }

    pub fn set_radiation(&mut self, slices: &[RadiationSlice]) {
        let combined = combined_residuals(slices);
        let flux: Vec<Value> = slices
            .iter()
            .map(|s| json!({ "u": s.u, "flux": outgoing_flux(s) }))
            .collect();
        self.radiation = json!({
            "slices": residuals_json(slices),
            "combined": combined,
            "flux": flux,
        });
        let mut t = String::from("radiation:\n           u          flux    A-B discrepancy\n");
        for s in slices {
            let _ = writeln!(t, "{:>12.6} {:>13.6e} {:>18.3e}", s.u, outgoing_flux(s), s.ab_discrepancy);
        }
        let _ = writeln!(
            t,
            "  combined residuals: (M,N) {:.3e}, path A {:.3e}, path B {:.3e}, N = k∧M {:.3e}",
            combined.mn, combined.radiation_a, combined.radiation_b, combined.planar
        );
        self.text_sections.push(t);
    }

    pub fn set_energetics(&mut self, ledger: &EnergyLedger, peak_flux: f64, monotone: bool) {
        let rows: Vec<Value> = (0..ledger.u_grid.len())
            .map(|i| {
                json!({
                    "u": ledger.u_grid[i],
                    "bondi": ledger.bondi[i],
                    "converged": ledger.bondi_converged[i],
                    "flux": ledger.flux[i],
                    "loss_residual": ledger.loss_residual[i],
                })
            })
            .collect();
        let adv: Vec<Value> = (0..ledger.v_grid.len())
            .map(|i| {
                json!({
                    "v": ledger.v_grid[i],
                    "advanced": ledger.advanced[i],
                    "conservation_residual": ledger.conservation_residual[i],
                })
            })
            .collect();
        self.energetics = json!({
            "matter": ledger.matter,
            "r_ladder": ledger.r_ladder,
            "peak_flux": peak_flux,
            "bondi_non_increasing": monotone,
            "rows": rows,
            "advanced_rows": adv,
            "identity_defect": ledger.identity_defect,
        });
        let mut t = format!("energetics ({}):\n", ledger.matter);
        t.push_str("           u            M∨          flux   dM∨/du + flux\n");
        for (i, u) in ledger.u_grid.iter().enumerate() {
            let _ = writeln!(
                t,
                "{:>12.6} {:>13.6e} {:>13.6e} {:>15.3e}",
                u, ledger.bondi[i], ledger.flux[i], ledger.loss_residual[i]
            );
        }
        t.push_str("           v            M∧          dM∧/dv\n");
        for (i, v) in ledger.v_grid.iter().enumerate() {
            let _ = writeln!(
                t,
                "{:>12.6} {:>13.6e} {:>15.3e}",
                v, ledger.advanced[i], ledger.conservation_residual[i]
            );
        }
        let _ = writeln!(t, "  peak flux {peak_flux:.6e}; M∨ non-increasing: {monotone}");
        self.text_sections.push(t);
    }

    pub fn set_evolve(&mut self, evolve: Value, text: String) {
        self.evolve = evolve;
        self.text_sections.push(text);
    }

    pub fn to_json(&self) -> Value {
        let mut doc = json!({
            "scenario": self.scenario,
            "version": env!("CARGO_PKG_VERSION"),
            "pipelines": self.pipelines,
            "fields": self.fields,
            "radiation": self.radiation,
            "energetics": self.energetics,
            "evolve": self.evolve,
            "checks": self.checks,
            "passed": self.passed(),
        });
        if self.pipelines.is_empty() {
            doc["note"] = json!("no pipelines executed");
        }
        doc
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut t = format!("scenario: {}\n", self.scenario);
        if self.pipelines.is_empty() {
            t.push_str("pipelines: none (no pipelines executed)\n");
        } else {
            let names: Vec<&str> = self.pipelines.iter().map(|p| p.name()).collect();
            let _ = writeln!(t, "pipelines: {}", names.join(", "));
        }
        for s in &self.text_sections {
            t.push('\n');
            t.push_str(s);
        }
        t.push_str("\nchecks:\n");
        if self.checks.is_empty() {
            t.push_str("  none\n");
        }
        for c in &self.checks {
            let _ = writeln!(
                t,
                "  [{}] {:<24} {:>11.3e} (tolerance {:.3e}) {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance,
                c.detail
            );
        }
        let _ = writeln!(t, "\nresult: {}", if self.passed() { "PASS" } else { "FAIL" });
        t
    }
}
