//! Files written by a run: trajectory and field CSVs, JSON reports and a
//! matplotlib script for the tip and energy histories.
//!
//! Numbers are written in Rust's shortest round-trip form, so reading a
//! file back reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::Trajectory;
use crate::reconstruct::FieldFrame;

pub const TRAJECTORY_HEADER: &str = "t,u,y,H,v_tip,w_tip";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub u: f64,
    pub y: f64,
    pub h: f64,
    pub v_tip: f64,
    pub w_tip: f64,
}

/// One row per sample. `u` is the port input (`−V` on voltage ports).
pub fn write_trajectory_csv(traj: &Trajectory, frames: &[FieldFrame], path: &Path) -> Result<()> {
    if frames.len() != traj.len() {
        return Err(Error::Dimension {
            expected: traj.len(),
            got: frames.len(),
        });
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for (k, f) in frames.iter().enumerate() {
        writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            traj.times[k],
            traj.inputs[k],
            traj.outputs[k],
            traj.energies[k],
            f.v_tip(),
            f.w_tip()
        )?;
    }
    out.flush()?;
    Ok(())
}

fn bad_data(msg: String) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?;
    match header.as_deref().map(str::trim) {
        Some(TRAJECTORY_HEADER) => {}
        _ => return Err(bad_data(format!("{}: missing header `{TRAJECTORY_HEADER}`", path.display()))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad_data(format!("{}: line {}: {e}", path.display(), i + 2)))?;
        if vals.len() != 6 {
            return Err(bad_data(format!("{}: line {}: expected 6 columns", path.display(), i + 2)));
        }
        rows.push(TrajectoryRow {
            t: vals[0],
            u: vals[1],
            y: vals[2],
            h: vals[3],
            v_tip: vals[4],
            w_tip: vals[5],
        });
    }
    Ok(rows)
}

/// Long format: `t,z,v,w`, one row per node and frame.
pub fn write_fields_csv(frames: &[FieldFrame], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,z,v,w")?;
    for f in frames {
        for k in 0..f.z.len() {
            writeln!(out, "{:e},{:e},{:e},{:e}", f.t, f.z[k], f.v[k], f.w[k])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value).map_err(std::io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Writes a standalone Python script plotting `w_tip` and `H` against `t`.
pub fn emit_plot_script(csv_path: &Path, out_path: &Path) -> Result<()> {
    let csv = csv_path.to_string_lossy();
    // A JSON string literal is also a valid Python string literal.
    let literal = serde_json::to_string(csv.as_ref()).map_err(std::io::Error::from)?;
    let script = format!(
        r#"#!/usr/bin/env python3
import csv
import matplotlib.pyplot as plt

CSV_PATH = {literal}

t, w_tip, H = [], [], []
with open(CSV_PATH, newline="") as fh:
    for row in csv.DictReader(fh):
        t.append(float(row["t"]))
        w_tip.append(float(row["w_tip"]))
        H.append(float(row["H"]))

fig, (ax_w, ax_h) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
ax_w.plot(t, w_tip)
ax_w.set_ylabel("tip deflection w(L) [m]")
ax_h.plot(t, H)
ax_h.set_ylabel("energy H [J]")
ax_h.set_xlabel("time t [s]")
fig.tight_layout()
fig.savefig(CSV_PATH.rsplit(".", 1)[0] + ".png", dpi=150)
plt.show()
"#
    );
    std::fs::write(out_path, script)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn frame(t: f64, v: f64, w: f64) -> FieldFrame {
        FieldFrame {
            t,
            z: vec![0.0, 1.0],
            v: vec![0.0, v],
            w: vec![0.0, w],
        }
    }

    fn zero_traj(n: usize) -> (Trajectory, Vec<FieldFrame>) {
        let traj = Trajectory {
            times: (0..n).map(|k| k as f64).collect(),
            states: vec![DVector::zeros(2); n],
            inputs: vec![0.0; n],
            outputs: vec![0.0; n],
            energies: vec![0.0; n],
            supplied: vec![0.0; n],
        };
        let frames = (0..n).map(|k| frame(k as f64, 0.0, 0.0)).collect();
        (traj, frames)
    }

    #[test]
    fn zero_trajectory_line_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let (traj, frames) = zero_traj(3);
        write_trajectory_csv(&traj, &frames, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), TRAJECTORY_HEADER);
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let (traj, frames) = zero_traj(0);
        write_trajectory_csv(&traj, &frames, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{TRAJECTORY_HEADER}\n"));
        assert!(read_trajectory_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip_reproduces_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let (mut traj, _) = zero_traj(4);
        traj.inputs = vec![-500.0, 1.0 / 3.0, -0.0, 1e-300];
        traj.outputs = vec![2.5e-9, -7.0, std::f64::consts::PI, 0.1];
        traj.energies = vec![1e-12, 3.3e-3, 123456.789, 5e-324];
        let frames: Vec<_> = (0..4).map(|k| frame(k as f64, 1e-7 * k as f64, -6.6e-6 / (k + 1) as f64)).collect();
        write_trajectory_csv(&traj, &frames, &p).unwrap();
        let rows = read_trajectory_csv(&p).unwrap();
        assert_eq!(rows.len(), 4);
        for (k, r) in rows.iter().enumerate() {
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(f64::MIN_POSITIVE);
            assert!(close(r.u, traj.inputs[k]) && close(r.y, traj.outputs[k]) && close(r.h, traj.energies[k]));
            assert!(close(r.v_tip, frames[k].v_tip()) && close(r.w_tip, frames[k].w_tip()));
            assert_eq!(r.t, traj.times[k]);
        }
    }

    #[test]
    fn frame_count_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let (traj, mut frames) = zero_traj(2);
        frames.pop();
        assert!(matches!(
            write_trajectory_csv(&traj, &frames, &dir.path().join("x.csv")),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn unwritable_path_surfaces_io_error() {
        let (traj, frames) = zero_traj(1);
        let err = write_trajectory_csv(&traj, &frames, Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn plot_script_references_csv_and_two_panels() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("not yet written.csv");
        let script = dir.path().join("plot.py");
        emit_plot_script(&csv, &script).unwrap();
        let text = std::fs::read_to_string(&script).unwrap();
        assert!(text.contains(&*csv.to_string_lossy()));
        assert!(text.contains("plt.subplots(2, 1"));
        assert!(!csv.exists());
    }

    #[test]
    fn fields_csv_has_one_row_per_node() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_fields_csv(&[frame(0.0, 1.0, 2.0), frame(1.0, 3.0, 4.0)], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 5);
    }
}
