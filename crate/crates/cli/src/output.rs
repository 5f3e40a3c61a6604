//! CSV tables, plot scripts and binary dumps written into a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use rpde_core::{Result, ScalarField, TimeGrid};
use sha2::{Digest, Sha256};

/// Files written by one command, in order.
#[derive(Clone, Debug, Default)]
pub struct RunDir {
    pub root: PathBuf,
    pub files: Vec<String>,
}

/// Shortest round-trip form, so output bytes depend only on the value.
/// Exponent notation outside `[1e-4, 1e6)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e6).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl RunDir {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes a CSV with a header row of `name (quantity) [unit]` columns.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// `quantity,value` table.
    pub fn summary(&mut self, name: &str, rows: &[(&str, String)]) -> Result<()> {
        self.csv(
            name,
            &["quantity (reported scalar) [-]", "value [see quantity]"],
            rows.iter().map(|(k, v)| vec![k.to_string(), v.clone()]),
        )
    }

    /// Gnuplot script; `plots` are `(csv, x column, y column, title)`.
    pub fn plot(&mut self, name: &str, title: &str, logscale: bool, plots: &[(&str, usize, usize, &str)]) -> Result<()> {
        let mut s = String::new();
        s.push_str("set datafile separator ','\nset key autotitle columnhead\n");
        s.push_str(&format!("set title '{title}'\n"));
        if logscale {
            s.push_str("set logscale xy\n");
        }
        let parts: Vec<String> = plots
            .iter()
            .map(|(f, x, y, t)| format!("'{f}' using {x}:{y} with linespoints title '{t}'"))
            .collect();
        s.push_str(&format!("plot {}\n", parts.join(", \\\n     ")));
        s.push_str("pause -1\n");
        fs::write(self.path(name), s)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Little-endian `f64` dump of a trajectory with a JSON sidecar.
    pub fn trajectory(&mut self, stem: &str, time: &TimeGrid, u: &[ScalarField]) -> Result<()> {
        let g = u[0].grid;
        let mut bytes = Vec::with_capacity(8 * u.len() * g.len());
        for f in u {
            for v in &f.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin = format!("{stem}.bin");
        fs::write(self.path(&bin), bytes)?;
        self.files.push(bin.clone());
        let shape: Vec<usize> = std::iter::once(u.len()).chain(g.extents[..g.dim].iter().rev().cloned()).collect();
        let side = serde_json::json!({
            "data": bin,
            "dtype": "float64",
            "byte_order": "little",
            "layout": "row-major, time slowest, first axis fastest",
            "shape": shape,
            "times": time.times(),
            "spacing": &g.spacing[..g.dim],
            "origin": &g.origin[..g.dim],
            "boundary": if g.is_periodic() { "periodic" } else { "dirichlet" },
        });
        let json = format!("{stem}.json");
        fs::write(self.path(&json), serde_json::to_string_pretty(&side).expect("json") + "\n")?;
        self.files.push(json);
        Ok(())
    }

    /// `(file, sha256, bytes)` for every file written.
    pub fn hashes(&self) -> Result<Vec<(String, String, u64)>> {
        self.files
            .iter()
            .map(|f| {
                let bytes = fs::read(self.path(f))?;
                Ok((f.clone(), hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
            })
            .collect()
    }
}
