//! Per-tick trial records and their JSON Lines encoding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::belief::{Belief, BeliefSnapshot};
use crate::error::{Error, Result};
use crate::planner::PlanResult;
use crate::teacher::{MentalState, Observation, TaskHypothesis, TeacherParams};
use crate::world::{Action, WorldState};

/// Planner statistics for one decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub nodes: u64,
    /// Wall-clock planning time; only recorded when a deadline was in force,
    /// so that deadline-free traces stay reproducible byte for byte.
    pub elapsed_ms: Option<f64>,
    pub depth: u32,
    pub timed_out: bool,
    pub expected_cost: Option<f64>,
}

impl PlanStats {
    pub fn from_result(r: &PlanResult, timed: bool) -> Self {
        PlanStats {
            nodes: r.nodes_expanded,
            elapsed_ms: timed.then_some(r.elapsed.as_secs_f64() * 1e3),
            depth: r.depth,
            timed_out: r.timed_out,
            expected_cost: r.expected_cost.is_finite().then_some(r.expected_cost),
        }
    }
}

/// Ground truth, known only for simulated teachers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub mental: MentalState,
    pub task: TaskHypothesis,
}

/// Everything that happened at one tick: the observation collected on
/// entering it, the world and belief at that point, and the action chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u32,
    /// `None` on the last record of a trial.
    pub action: Option<Action>,
    pub observation: Observation,
    pub world: WorldState,
    /// Once the robot has committed to a task the snapshot stays at the
    /// declaration tick.
    pub belief: BeliefSnapshot,
    pub plan: Option<PlanStats>,
    pub truth: Option<Truth>,
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn to_jsonl(records: &[TraceRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_trace(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Reads a trace, checking that ticks are contiguous from the first record.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out: Vec<TraceRecord> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            detail: e.to_string(),
        })?;
        if let Some(prev) = out.last() {
            if rec.tick != prev.tick + 1 {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    detail: format!("tick {} follows tick {}", rec.tick, prev.tick),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_trace_file(path: &std::path::Path) -> Result<Vec<TraceRecord>> {
    read_trace(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Checks that every recorded action was valid and produced the next
/// recorded world.
pub fn check_transitions(records: &[TraceRecord]) -> Result<()> {
    for pair in records.windows(2) {
        let action = pair[0].action.ok_or_else(|| Error::MalformedRecord {
            line: pair[0].tick as usize + 1,
            detail: "missing action before the last record".into(),
        })?;
        let next = pair[0].world.apply(&action)?;
        if next != pair[1].world {
            return Err(Error::MalformedRecord {
                line: pair[1].tick as usize + 1,
                detail: format!("world does not follow from {action}"),
            });
        }
    }
    Ok(())
}

/// Recomputes the belief snapshot of every record from the action and
/// observation stream. Records whose snapshot is older than the record
/// (after the robot committed) carry the last filtered belief.
pub fn replay(records: &[TraceRecord], params: TeacherParams) -> Result<Vec<BeliefSnapshot>> {
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let mut belief = Belief::initial_at(params, &first.world);
    let mut out = vec![belief.snapshot()];
    for pair in records.windows(2) {
        let (prev, rec) = (&pair[0], &pair[1]);
        if rec.belief.tick == rec.tick {
            let action = prev.action.ok_or_else(|| Error::MalformedRecord {
                line: prev.tick as usize + 1,
                detail: "missing action".into(),
            })?;
            belief = belief.update(&action, &rec.world, rec.observation)?;
        }
        out.push(belief.snapshot());
    }
    Ok(out)
}
