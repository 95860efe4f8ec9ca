use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::funnel::Funnel;
use crate::orchestrator::{CycleOutcome, FunnelLoopTrajectory, Mode, StageDurations};
use crate::trajectory::CarState;
use crate::world::CellState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub t: f64,
    pub state: CarState,
    pub reference: Option<CarState>,
    pub input: [f64; 2],
    pub disturbance: [f64; 3],
    pub mode: Mode,
    pub plan: Option<u64>,
    /// Distance to the nearest occupied truth cell, capped at 1 m.
    pub clearance: f64,
    /// Inside some encompassing shape of the active loop; only while in it.
    pub contained: Option<bool>,
}

impl EpochRecord {
    pub fn collision(&self) -> bool {
        self.clearance <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelRecord {
    pub id: usize,
    pub outline: Vec<[f64; 2]>,
}

impl From<&Funnel> for FunnelRecord {
    fn from(f: &Funnel) -> Self {
        Self {
            id: f.id,
            outline: f.encompassing.vertices().into_iter().map(|v| [v[0], v[1]]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub id: u64,
    pub start_epoch: u64,
    pub local: Vec<[f64; 2]>,
    pub funnels: Vec<FunnelRecord>,
    pub entry_margin: Vec<f64>,
}

impl From<&FunnelLoopTrajectory> for PlanRecord {
    fn from(p: &FunnelLoopTrajectory) -> Self {
        Self {
            id: p.id,
            start_epoch: p.start_epoch,
            local: p.local.positions().collect(),
            funnels: p.funnels.iter().map(FunnelRecord::from).collect(),
            entry_margin: p.entry_margin.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub epoch: u64,
    pub t: f64,
    pub swap_epoch: u64,
    pub outcome: CycleOutcome,
    pub durations: StageDurations,
    pub expanded: usize,
    pub plan: Option<PlanRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub envelope: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        name: String,
        seed: u64,
        dt: f64,
        /// Truth map at the start, in the text map format.
        map: String,
    },
    Epoch(EpochRecord),
    Cycle(CycleRecord),
    Goal {
        epoch: u64,
        goal: [f64; 2],
    },
    MapEvent {
        epoch: u64,
        region: [f64; 4],
        set_to: CellState,
    },
    Sense {
        epoch: u64,
        changed: usize,
    },
}

/// Append-only record stream of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }

    pub fn cycles(&self) -> impl Iterator<Item = &CycleRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Cycle(c) => Some(c),
            _ => None,
        })
    }

    /// Cycles that ran the pipeline (not idle).
    pub fn planning_cycles(&self) -> impl Iterator<Item = &CycleRecord> {
        self.cycles().filter(|c| c.outcome != CycleOutcome::Idle)
    }

    pub fn plan(&self, id: u64) -> Option<&PlanRecord> {
        self.cycles().filter_map(|c| c.plan.as_ref()).find(|p| p.id == id)
    }

    pub fn header(&self) -> Option<(&str, u64, f64, &str)> {
        self.records.iter().find_map(|r| match r {
            LogRecord::Header { name, seed, dt, map } => Some((name.as_str(), *seed, *dt, map.as_str())),
            _ => None,
        })
    }

    /// Same log with measured stage durations zeroed; everything else is a
    /// function of the scenario and seed.
    pub fn without_timing(&self) -> RunLog {
        let mut out = self.clone();
        for r in &mut out.records {
            if let LogRecord::Cycle(c) = r {
                c.durations = StageDurations::default();
            }
        }
        out
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| SimError::Io(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| SimError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let f = std::fs::File::create(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        self.write_ndjson(std::io::BufWriter::new(f))
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self, SimError> {
        let mut log = RunLog::default();
        for (k, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SimError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| SimError::Io(format!("line {}: {e}", k + 1)))?;
            log.push(rec);
        }
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let f = std::fs::File::open(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::read_ndjson(std::io::BufReader::new(f))
    }

    pub fn summary(&self) -> RunSummary {
        let mut s = RunSummary::default();
        let mut clearance = f64::INFINITY;
        for e in self.epochs() {
            s.epochs += 1;
            clearance = clearance.min(e.clearance);
            if e.collision() {
                s.collision_epochs += 1;
            }
            if let Some(c) = e.contained {
                s.loop_epochs += 1;
                if !c {
                    s.containment_violations += 1;
                }
            }
        }
        s.min_clearance = clearance;
        let mut stage = StageDurations::default();
        for c in self.planning_cycles() {
            s.cycles += 1;
            if matches!(c.outcome, CycleOutcome::NewPlan { .. }) {
                s.new_plans += 1;
            }
            stage.global += c.durations.global;
            stage.local += c.durations.local;
            stage.frs += c.durations.frs;
            stage.search += c.durations.search;
            stage.closure += c.durations.closure;
        }
        if s.cycles > 0 {
            let n = s.cycles as f64;
            stage.global /= n;
            stage.local /= n;
            stage.frs /= n;
            stage.search /= n;
            stage.closure /= n;
        }
        s.mean_cycle_ms = stage.total();
        s.mean_stage_ms = stage;
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub epochs: usize,
    pub collision_epochs: usize,
    pub min_clearance: f64,
    pub loop_epochs: usize,
    pub containment_violations: usize,
    pub cycles: usize,
    pub new_plans: usize,
    pub mean_cycle_ms: f64,
    pub mean_stage_ms: StageDurations,
}
