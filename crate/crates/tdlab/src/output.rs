//! Report and CSV writers. Floats are written with 17 significant digits.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tdlab_core::TdTrace;

use crate::error::{HarnessError, Result};
use crate::experiment::{ode_file_name, trace_file_name, ExperimentOutput, OdeTrace, REPORT_FILE};

pub const TRACE_HEADER: &str = "step,dnorm_value_error,mspbe,dist_W,norm_w,norm_gamma_proj";

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(context: &'static str, path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.to_path_buf();
    move |source| HarnessError::Io {
        context,
        path,
        source,
    }
}

pub fn write_trace_csv(out: &mut impl Write, trace: &TdTrace) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for c in &trace.checkpoints {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.step,
            fmt_float(c.value_error),
            fmt_float(c.mspbe),
            fmt_float(c.dist_to_fixed_set),
            fmt_float(c.norm_w),
            fmt_float(c.norm_gamma_proj)
        )?;
    }
    Ok(())
}

pub fn ode_header(dim: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..dim).map(|i| format!("w{i}")));
    cols.push("dnorm_value_error".into());
    cols.push("dist_W".into());
    cols.join(",")
}

pub fn write_ode_csv(out: &mut impl Write, trace: &OdeTrace) -> std::io::Result<()> {
    let dim = trace.states.first().map_or(0, |w| w.len());
    writeln!(out, "{}", ode_header(dim))?;
    for (i, t) in trace.times.iter().enumerate() {
        let mut fields = vec![fmt_float(*t)];
        fields.extend(trace.states[i].iter().map(|&x| fmt_float(x)));
        fields.push(fmt_float(trace.value_error[i]));
        fields.push(fmt_float(trace.dist_w[i]));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(io_err("creating", path))?;
    let mut out = BufWriter::new(file);
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(io_err("writing", path))
}

/// Writes `report.json`, one trace CSV per seed and one ODE CSV per initial
/// condition into `dir`; returns the paths written.
pub fn emit_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err("creating directory", dir))?;
    let mut written = Vec::new();
    for trace in &output.traces {
        let path = dir.join(trace_file_name(trace.seed));
        write_file(&path, |out| write_trace_csv(out, trace))?;
        written.push(path);
    }
    for (i, trace) in output.ode_traces.iter().enumerate() {
        let path = dir.join(ode_file_name(i));
        write_file(&path, |out| write_ode_csv(out, trace))?;
        written.push(path);
    }
    let path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&output.report).expect("report serializes");
    write_file(&path, |out| writeln!(out, "{json}"))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use tdlab_core::td::Checkpoint;

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(0.0), "0.0000000000000000e0");
        assert_eq!(fmt_float(-2.5), "-2.5000000000000000e0");
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -1e-300] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn trace_csv_layout() {
        let trace = TdTrace {
            seed: 4,
            checkpoints: vec![Checkpoint {
                step: 7,
                w: DVector::zeros(1),
                value_error: 1.0,
                mspbe: 0.5,
                dist_to_fixed_set: 0.25,
                norm_w: 2.0,
                norm_gamma_proj: 0.0,
            }],
            final_w: DVector::zeros(1),
            max_norm: 2.0,
            distance_series: Vec::new(),
        };
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        assert_eq!(
            lines.next(),
            Some("7,1.0000000000000000e0,5.0000000000000000e-1,2.5000000000000000e-1,2.0000000000000000e0,0.0000000000000000e0")
        );
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn ode_header_names_weights() {
        assert_eq!(ode_header(3), "t,w0,w1,w2,dnorm_value_error,dist_W");
    }
}
