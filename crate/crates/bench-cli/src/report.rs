//! Result artifacts. The CSV and manifest bytes are pure functions of the
//! config and seed list; wall-clock timing goes to stderr, never into files.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::runner::ResultTable;

pub const CSV_HEADER: &str =
    "arch,value,mean_ee,std_ee,mean_rate,mean_power,mean_q,n_ok,n_infeasible";

/// Fixed-precision scientific notation keeps reruns byte-identical.
fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.10e}")
    }
}

pub fn render_csv(table: &ResultTable) -> String {
    let mut s = String::with_capacity(64 * (table.rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &table.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.mode.name(),
            r.value,
            num(r.mean_ee),
            num(r.std_ee),
            num(r.mean_rate),
            num(r.mean_power),
            num(r.mean_q),
            r.n_ok,
            r.n_infeasible
        ));
    }
    s
}

/// Hash binding the manifest to the exact inputs: raw config text plus the
/// effective overrides, so two runs with one flag flipped never collide.
pub fn input_hash(config_text: &str, overrides: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(config_text.as_bytes());
    for line in overrides {
        h.update(b"\n--");
        h.update(line.as_bytes());
    }
    let out = h.finalize();
    let mut hex = String::with_capacity(64);
    for b in out {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

pub fn render_manifest(
    ec: &ExperimentConfig,
    config_text: &str,
    overrides: &[String],
) -> String {
    let mut s = String::new();
    s.push_str("risee sweep manifest\n");
    s.push_str("format = 1\n");
    s.push_str(&format!(
        "input_sha256 = {}\n",
        input_hash(config_text, overrides)
    ));
    s.push_str(&format!(
        "modes = {}\n",
        ec.modes
            .iter()
            .map(|m| m.name().to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    if let Some(axis) = ec.sweep {
        s.push_str(&format!("sweep = {}\n", axis.name()));
        s.push_str(&format!(
            "values = {}\n",
            ec.values
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
    }
    s.push_str(&format!(
        "seeds = {}\n",
        (0..ec.seeds as u64)
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    s.push_str(&format!("out = {}\n", ec.out.display()));
    for line in overrides {
        s.push_str(&format!("override = {line}\n"));
    }
    s.push_str("config, verbatim:\n");
    s.push_str("----\n");
    s.push_str(config_text);
    if !config_text.ends_with('\n') && !config_text.is_empty() {
        s.push('\n');
    }
    s.push_str("----\n");
    s
}

/// Writes `<out>` (CSV) and `<out>.manifest` next to it.
pub fn emit_report(
    table: &ResultTable,
    ec: &ExperimentConfig,
    config_text: &str,
    overrides: &[String],
    out: &Path,
) -> std::io::Result<()> {
    let mut f = std::fs::File::create(out)?;
    f.write_all(render_csv(table).as_bytes())?;
    f.flush()?;

    let mut manifest_path = out.as_os_str().to_owned();
    manifest_path.push(".manifest");
    let mut m = std::fs::File::create(Path::new(&manifest_path))?;
    m.write_all(render_manifest(ec, config_text, overrides).as_bytes())?;
    m.flush()
}
