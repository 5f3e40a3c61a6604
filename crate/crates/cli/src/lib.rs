//! Front end for `rpde-core`: scenario files, subcommands, run directories and
//! reproducibility manifests.

pub mod commands;
pub mod config;
pub mod output;
pub mod scenario;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rpde_core::{Error, Result};
use serde_json::{json, Value};

use crate::commands::Outcome;
use crate::config::Config;
use crate::output::RunDir;

pub const MANIFEST: &str = "manifest.json";

/// Options shared by all subcommands.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub seed: Option<u64>,
    pub allow_nongeometric: bool,
}

/// Command-line overrides folded into the config, so manifests record them.
pub fn apply_options(cfg: &mut Config, opts: &Options) {
    if let Some(s) = opts.seed {
        cfg.set("driver.seed", s.to_string());
    }
    if opts.allow_nongeometric {
        cfg.set("scheme.allow_nongeometric", "true");
    }
}

fn dispatch(command: &str, configs: &[Config], out: &mut RunDir) -> Result<Outcome> {
    let one = || {
        configs
            .first()
            .ok_or_else(|| Error::Config(format!("`{command}` needs a config file")))
    };
    match command {
        "lift" => commands::lift(one()?, out),
        "solve" => commands::solve_cmd(one()?, out),
        "ito" => commands::ito(one()?, out),
        "lp" => commands::lp(one()?, out),
        "moser" => commands::moser(one()?, out),
        "wz" => commands::wz(one()?, out),
        "dist" => match configs {
            [a, b] => commands::dist(a, b, out),
            _ => Err(Error::Config("`dist` needs two config files".into())),
        },
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Runs `command` on already loaded configs and writes outputs plus a manifest.
pub fn run(command: &str, configs: &[Config], out_dir: &Path) -> Result<(Outcome, RunDir)> {
    let mut out = RunDir::new(out_dir)?;
    let started = unix_now();
    let outcome = dispatch(command, configs, &mut out)?;
    let finished = unix_now();
    let outputs: Vec<Value> = out
        .hashes()?
        .into_iter()
        .map(|(f, h, n)| json!({ "file": f, "sha256": h, "bytes": n }))
        .collect();
    let cfgs: Vec<Value> = configs
        .iter()
        .map(|c| {
            json!({
                "digest": c.digest(),
                "sources": c.sources.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
                "effective": c.canonical(),
            })
        })
        .collect();
    let seeds: Vec<Value> = configs.iter().map(|c| json!(c.str("driver.seed", "0"))).collect();
    let manifest = json!({
        "command": command,
        "code_version": env!("CARGO_PKG_VERSION"),
        "configs": cfgs,
        "seeds": seeds,
        "started_unix": started,
        "finished_unix": finished,
        "checks": outcome.checks.iter().map(|(n, ok)| json!({ "name": n, "passed": ok })).collect::<Vec<_>>(),
        "outputs": outputs,
    });
    fs::write(
        out.path(MANIFEST),
        serde_json::to_string_pretty(&manifest).expect("json") + "\n",
    )?;
    info!("wrote {} files to {}", out.files.len(), out_dir.display());
    Ok((outcome, out))
}

/// Loads config files, applies options and runs.
pub fn run_files(command: &str, files: &[PathBuf], opts: &Options, out_dir: &Path) -> Result<(Outcome, RunDir)> {
    let configs = files
        .iter()
        .map(|f| {
            let mut c = Config::load(f)?;
            apply_options(&mut c, opts);
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    run(command, &configs, out_dir)
}

/// Result of re-running a manifest.
#[derive(Clone, Debug)]
pub struct Rerun {
    pub outcome: Outcome,
    /// Files whose bytes differ from the manifest, or are missing.
    pub mismatches: Vec<String>,
    pub compared: usize,
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::Config(format!("manifest lacks `{key}`")))
}

/// Re-executes the manifest's command from its recorded effective configs into
/// `out_dir` and compares output hashes.
pub fn rerun(manifest: &Path, out_dir: &Path) -> Result<Rerun> {
    let text = fs::read_to_string(manifest)?;
    let m: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;
    let command = field(&m, "command")?
        .as_str()
        .ok_or_else(|| Error::Config("manifest command is not a string".into()))?;
    let configs = field(&m, "configs")?
        .as_array()
        .ok_or_else(|| Error::Config("manifest configs is not a list".into()))?
        .iter()
        .map(|c| {
            let eff = field(c, "effective")?
                .as_str()
                .ok_or_else(|| Error::Config("effective config is not a string".into()))?;
            Config::parse(eff, "<manifest>", Path::new("."))
        })
        .collect::<Result<Vec<_>>>()?;
    let (outcome, out) = run(command, &configs, out_dir)?;
    let fresh: std::collections::BTreeMap<String, String> =
        out.hashes()?.into_iter().map(|(f, h, _)| (f, h)).collect();
    let mut mismatches = Vec::new();
    let recorded = field(&m, "outputs")?
        .as_array()
        .ok_or_else(|| Error::Config("manifest outputs is not a list".into()))?;
    for o in recorded {
        let f = field(o, "file")?.as_str().unwrap_or_default().to_string();
        let h = field(o, "sha256")?.as_str().unwrap_or_default();
        if fresh.get(&f).map(String::as_str) != Some(h) {
            mismatches.push(f);
        }
    }
    if recorded.len() != fresh.len() {
        mismatches.extend(fresh.keys().filter(|f| !recorded.iter().any(|o| o["file"] == **f)).cloned());
    }
    Ok(Rerun {
        outcome,
        compared: recorded.len(),
        mismatches,
    })
}
