use clap::ValueEnum;
use crossnego::sim::{SimEvent, SimTrace};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Artifact {
    Influence,
    Groups,
    Negotiation,
    Schedule,
}

impl Artifact {
    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::Influence => "influence.csv",
            Artifact::Groups => "groups.csv",
            Artifact::Negotiation => "negotiation.jsonl",
            Artifact::Schedule => "schedule.csv",
        }
    }
}

fn ids(list: &[crossnego::VehicleId]) -> String {
    list.iter().map(|v| v.0.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes `what` from `trace` into `dir` and returns the file written.
pub fn export(trace: &SimTrace, what: Artifact, dir: &Path) -> Result<PathBuf, Box<dyn std::error::Error>> {
    let path = dir.join(what.file_name());
    match what {
        Artifact::Influence => {
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["time", "from", "to", "direct", "cumulative"])?;
            for e in &trace.events {
                if let SimEvent::Influence {
                    time,
                    ids,
                    direct,
                    cumulative,
                } = e
                {
                    for (i, from) in ids.iter().enumerate() {
                        for (j, to) in ids.iter().enumerate() {
                            w.serialize((time, from.0, to.0, direct[i][j], cumulative[i][j]))?;
                        }
                    }
                }
            }
            w.flush()?;
        }
        Artifact::Groups => {
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["time", "group", "vehicles"])?;
            for e in &trace.events {
                if let SimEvent::GroupPartition { time, groups } = e {
                    for (k, members) in groups.iter().enumerate() {
                        w.serialize((time, k, ids(members)))?;
                    }
                }
            }
            w.flush()?;
        }
        Artifact::Negotiation => {
            let mut w = BufWriter::new(File::create(&path)?);
            for e in &trace.events {
                if matches!(
                    e,
                    SimEvent::NegotiationRound { .. } | SimEvent::OrderCommitted { .. } | SimEvent::FallbackUsed { .. }
                ) {
                    serde_json::to_writer(&mut w, e)?;
                    w.write_all(b"\n")?;
                }
            }
            w.flush()?;
        }
        Artifact::Schedule => {
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["time", "scope", "position", "vehicle", "target_time", "pinned"])?;
            for e in &trace.events {
                if let SimEvent::Schedule { time, scope, entries } = e {
                    for (k, entry) in entries.iter().enumerate() {
                        w.serialize((time, scope.to_string(), k, entry.id.0, entry.target_time, entry.pinned))?;
                    }
                }
            }
            w.flush()?;
        }
    }
    Ok(path)
}
