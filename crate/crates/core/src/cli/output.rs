//! CSV text builders. Floats use the shortest round-trip decimal form.

use std::fmt::Write as _;

use crate::audit::EnergyAuditReport;
use crate::galerkin::Basis;
use crate::problem::State;
use crate::timestepping::Trajectory;

/// Marker written as the first field of the row that records a failure.
pub const FAILURE_MARKER: &str = "FAILED";

#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = header
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(",");
        text.push('\n');
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for f in fields {
            if !first {
                self.text.push(',');
            }
            first = false;
            self.text.push_str(f.as_ref());
        }
        self.text.push('\n');
    }

    /// `FAILED,<step>` padded with empty fields to the header width.
    pub fn failure(&mut self, step: usize) {
        let mut fields = vec![FAILURE_MARKER.to_string(), step.to_string()];
        fields.resize(self.columns.max(2), String::new());
        self.row(fields);
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Shortest round-trip form, switching to exponent notation for very small
/// or large magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// `t, u_1..u_n`, lifted through `basis` when given.
pub fn trajectory_csv(trajectory: &Trajectory, basis: Option<&Basis>) -> Csv {
    let lift = |u: &State| match basis {
        Some(b) => b.matrix() * u,
        None => u.clone(),
    };
    let dim = basis.map_or(trajectory.final_state().len(), Basis::dim);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(indexed("u", dim))
        .collect();
    let mut csv = Csv::new(&header);
    for (t, u) in trajectory.times().iter().zip(trajectory.nodal_states()) {
        csv.row(std::iter::once(num(*t)).chain(lift(u).iter().map(|x| num(*x))));
    }
    csv
}

/// `n, t, H, work_integral, dissipation_integral, identity_residual`; the
/// `n = 0` row carries the initial energy and zero integrals.
pub fn energy_csv(report: &EnergyAuditReport, t_start: f64) -> Csv {
    let mut csv = Csv::new(&[
        "n",
        "t",
        "H",
        "work_integral",
        "dissipation_integral",
        "identity_residual",
    ]);
    csv.row([
        "0".into(),
        num(t_start),
        num(report.initial_energy),
        num(0.0),
        num(0.0),
        num(0.0),
    ]);
    for r in &report.records {
        csv.row([
            r.step.to_string(),
            num(r.time),
            num(r.energy),
            num(r.work),
            num(r.dissipation),
            num(r.residual),
        ]);
    }
    csv
}

/// `n, t, g_1..g_m, drift` with `drift = max_i |g_i(u_n) - g_i(u_0)|`.
pub fn constraint_csv(times: &[f64], history: &[State]) -> Csv {
    let m = history.first().map_or(0, |g| g.len());
    let header: Vec<String> = ["n".to_string(), "t".to_string()]
        .into_iter()
        .chain(indexed("g", m))
        .chain(std::iter::once("drift".to_string()))
        .collect();
    let mut csv = Csv::new(&header);
    if let Some(first) = history.first() {
        for (n, (t, g)) in times.iter().zip(history).enumerate() {
            let drift = (g - first).amax();
            csv.row(
                [n.to_string(), num(*t)]
                    .into_iter()
                    .chain(g.iter().map(|x| num(*x)))
                    .chain(std::iter::once(num(drift))),
            );
        }
    }
    csv
}

/// Two-column `key,value` table.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    rows: Vec<(String, String)>,
}

impl Summary {
    pub fn add(&mut self, key: &str, value: impl ToString) {
        // values never contain separators
        let value = value.to_string().replace([',', '\n'], ";");
        self.rows.push((key.to_string(), value));
    }

    /// Appends the rows of `other` with `prefix` prepended to each key.
    pub fn extend_prefixed(&mut self, prefix: &str, other: Summary) {
        self.rows.extend(
            other
                .rows
                .into_iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v)),
        );
    }

    pub fn into_string(self) -> String {
        let mut out = String::from("key,value\n");
        for (k, v) in self.rows {
            writeln!(out, "{k},{v}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_row_is_padded() {
        let mut csv = Csv::new(&["a", "b", "c", "d"]);
        csv.row(["1", "2", "3", "4"]);
        csv.failure(7);
        assert_eq!(csv.into_string(), "a,b,c,d\n1,2,3,4\nFAILED,7,,\n");
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e21, 0.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(1.0), "1.0");
        assert_eq!(num(1e-12), "1e-12");
    }

    #[test]
    fn constraint_drift_column() {
        let history = vec![State::from_vec(vec![1.0]), State::from_vec(vec![1.5])];
        let text = constraint_csv(&[0.0, 0.5], &history).into_string();
        assert_eq!(text, "n,t,g_1,drift\n0,0.0,1.0,0.0\n1,0.5,1.5,0.5\n");
    }

    #[test]
    fn summary_sanitizes_values() {
        let mut s = Summary::default();
        s.add("note", "a,b");
        assert_eq!(s.into_string(), "key,value\nnote,a;b\n");
    }
}
