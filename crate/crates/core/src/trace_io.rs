//! Trace persistence.
//!
//! Layout of a trace directory:
//!
//! | file | columns |
//! |------|---------|
//! | `metadata.json` | run metadata and the full configuration |
//! | `steps.csv` | `t,agent_id,step_norm,clamped` |
//! | `induced_tv.csv` | `t,max_tv` |
//! | `snapshots.csv` | `t,max_weight_norm,subopt_proxy` |
//! | `weights.csv` | `t,agent_id,w0..w{d-1}` |
//! | `embeddings.csv` | `t,agent_id,phi0..phi{p-1}` (ideal embeddings) |
//! | `policy.csv` | `t,theta0..` |
//! | `meta.csv` | `t,theta0..` (meta-parameters at each snapshot) |
//! | `tv_steps.csv` | `t,tv` |
//! | `adaptation.csv` | `t,meta_loss,t_adapt,k_inner,converged` |
//! | `meta_events.jsonl` | one meta update per line |
//! | `contracts.jsonl` | `id,t,pass,status,measured,threshold,margin,alarm` per line |
//!
//! Numbers use Rust's shortest round-trip formatting, so identical traces
//! produce byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::SystemConfig;
use crate::error::Result;
use crate::sim::{Trace, TraceMetadata};

#[derive(Serialize)]
struct MetadataDoc<'a> {
    metadata: &'a TraceMetadata,
    config: &'a SystemConfig,
}

fn csv_file(dir: &Path, name: &str, header: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "{header}")?;
    Ok((path, w))
}

fn row(w: &mut impl Write, lead: &[String], values: &[f64]) -> Result<()> {
    let mut first = true;
    for s in lead {
        if !first {
            w.write_all(b",")?;
        }
        w.write_all(s.as_bytes())?;
        first = false;
    }
    for v in values {
        if !first {
            w.write_all(b",")?;
        }
        write!(w, "{v}")?;
        first = false;
    }
    w.write_all(b"\n")?;
    Ok(())
}

fn indexed(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

/// Write every trace stream into `dir` (created if missing). Returns the
/// written paths.
pub fn write_trace(trace: &Trace, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let c = &trace.config;
    let n = trace.n_agents();

    let meta_path = dir.join("metadata.json");
    let doc = MetadataDoc {
        metadata: &trace.metadata,
        config: c,
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&doc)? + "\n")?;
    out.push(meta_path);

    let (p, mut w) = csv_file(dir, "steps.csv", "t,agent_id,step_norm,clamped")?;
    for (idx, (s, cl)) in trace.step_norms.iter().zip(&trace.clamped).enumerate() {
        let k = (idx / n) as u64 + 1;
        writeln!(w, "{},{},{},{}", trace.tick_time(k), idx % n, s, u8::from(*cl))?;
    }
    w.flush()?;
    out.push(p);

    let (p, mut w) = csv_file(dir, "induced_tv.csv", "t,max_tv")?;
    for (i, tv) in trace.induced_tv.iter().enumerate() {
        writeln!(w, "{},{}", trace.tick_time(i as u64 + 1), tv)?;
    }
    w.flush()?;
    out.push(p);

    let (p, mut w) = csv_file(dir, "snapshots.csv", "t,max_weight_norm,subopt_proxy")?;
    for s in &trace.snapshots {
        writeln!(w, "{},{},{}", s.t, s.max_weight_norm, s.subopt_proxy)?;
    }
    w.flush()?;
    out.push(p);

    let header = format!("t,agent_id,{}", indexed("w", c.weight_dim));
    let (p, mut w) = csv_file(dir, "weights.csv", &header)?;
    for s in &trace.snapshots {
        for (i, v) in s.weights.iter().enumerate() {
            row(&mut w, &[s.t.to_string(), i.to_string()], v)?;
        }
    }
    w.flush()?;
    out.push(p);

    let header = format!("t,agent_id,{}", indexed("phi", c.embed_dim));
    let (p, mut w) = csv_file(dir, "embeddings.csv", &header)?;
    for s in &trace.snapshots {
        for (i, v) in s.phi_star.iter().enumerate() {
            row(&mut w, &[s.t.to_string(), i.to_string()], v)?;
        }
    }
    w.flush()?;
    out.push(p);

    let header = format!("t,{}", indexed("theta", c.policy_dim()));
    let (p, mut w) = csv_file(dir, "policy.csv", &header)?;
    for s in &trace.snapshots {
        row(&mut w, &[s.t.to_string()], &s.policy)?;
    }
    w.flush()?;
    out.push(p);

    let header = format!("t,{}", indexed("theta", c.meta_dim));
    let (p, mut w) = csv_file(dir, "meta.csv", &header)?;
    for s in &trace.snapshots {
        row(&mut w, &[s.t.to_string()], &s.theta)?;
    }
    w.flush()?;
    out.push(p);

    let (p, mut w) = csv_file(dir, "tv_steps.csv", "t,tv")?;
    for (t, tv) in &trace.tv_steps {
        writeln!(w, "{t},{tv}")?;
    }
    w.flush()?;
    out.push(p);

    let (p, mut w) = csv_file(dir, "adaptation.csv", "t,meta_loss,t_adapt,k_inner,converged")?;
    for a in &trace.adaptation {
        writeln!(
            w,
            "{},{},{},{},{}",
            a.t,
            a.meta_loss,
            a.trial.t_adapt,
            a.trial.k_inner,
            u8::from(a.trial.converged)
        )?;
    }
    w.flush()?;
    out.push(p);

    for (name, lines) in [
        (
            "meta_events.jsonl",
            trace
                .meta_records
                .iter()
                .map(serde_json::to_string)
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ),
        (
            "contracts.jsonl",
            trace
                .contracts
                .iter()
                .map(serde_json::to_string)
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ),
    ] {
        let path = dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        for l in lines {
            writeln!(w, "{l}")?;
        }
        w.flush()?;
        out.push(path);
    }
    Ok(out)
}
