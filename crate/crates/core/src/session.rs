//! The tick loop that wires world, belief, planner and teacher together.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::belief::{final_candidate, Belief, BeliefSnapshot};
use crate::error::{Error, Result};
use crate::planner::{completion_script, plan, PlannerConfig};
use crate::sim::{SimulatedTeacher, TeacherScript};
use crate::teacher::{MentalState, Observation, TaskHypothesis, TeacherParams};
use crate::trace::{PlanStats, TraceRecord, Truth};
use crate::world::{Action, WorldState};

pub const DEFAULT_MAX_TICKS: u32 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialMode {
    /// Wall-clock paced ticks; planning is bounded by the planner deadline.
    Realtime,
    /// Unpaced and deterministic; the planner deadline is disabled.
    Fast,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherKind {
    Simulated(TeacherScript),
    /// Observations come from a caller-supplied [`TeacherSource`].
    Live,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub trial_id: String,
    pub mode: TrialMode,
    pub teacher: TeacherKind,
    pub planner: PlannerConfig,
    /// The robot's model of the teacher.
    pub teacher_params: TeacherParams,
    pub max_ticks: u32,
    /// Overrides the wall-clock tick length in realtime mode.
    pub pace: Option<Duration>,
}

impl TrialConfig {
    pub fn simulated(trial_id: impl Into<String>, script: TeacherScript) -> Self {
        TrialConfig {
            trial_id: trial_id.into(),
            mode: TrialMode::Fast,
            teacher_params: script.params,
            teacher: TeacherKind::Simulated(script),
            planner: PlannerConfig::default(),
            max_ticks: DEFAULT_MAX_TICKS,
            pace: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.teacher_params.validate()?;
        if self.max_ticks < self.planner.horizon_ticks {
            return Err(Error::InvalidParams(format!(
                "max_ticks {} is below the planning horizon {}",
                self.max_ticks, self.planner.horizon_ticks
            )));
        }
        if let TeacherKind::Simulated(s) = &self.teacher {
            s.validate()?;
        }
        Ok(())
    }

    fn effective_planner(&self) -> PlannerConfig {
        let mut p = self.planner;
        if self.mode == TrialMode::Fast {
            p.fast_mode = true;
        }
        p
    }

    fn tick_length(&self) -> Duration {
        self.pace
            .unwrap_or_else(|| Duration::from_secs_f64(self.teacher_params.tick_seconds))
    }
}

/// Where per-tick observations come from.
pub trait TeacherSource {
    /// The observation made on entering `world`'s tick, with the teacher's
    /// true mental state when known.
    fn observe(&mut self, world: &WorldState) -> Result<(Observation, Option<MentalState>)>;

    fn true_task(&self) -> Option<TaskHypothesis> {
        None
    }
}

impl TeacherSource for SimulatedTeacher {
    fn observe(&mut self, world: &WorldState) -> Result<(Observation, Option<MentalState>)> {
        let (o, m) = self.step(world)?;
        Ok((o, Some(m)))
    }

    fn true_task(&self) -> Option<TaskHypothesis> {
        Some(self.script().true_task)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial_id: String,
    pub true_task: Option<TaskHypothesis>,
    pub final_task: Option<TaskHypothesis>,
    pub correct: Option<bool>,
    /// Tick at which "Final" was displayed.
    pub ticks_to_final: Option<u32>,
    /// Entropy of the belief the robot committed on.
    pub entropy_at_final: Option<f64>,
    pub trace: Vec<TraceRecord>,
}

impl TrialOutcome {
    pub fn seconds_to_final(&self, tick_seconds: f64) -> Option<f64> {
        self.ticks_to_final.map(|t| t as f64 * tick_seconds)
    }

    pub fn presses(&self) -> usize {
        self.trace.iter().filter(|r| r.observation.is_press()).count()
    }
}

/// One trial, advanced a tick at a time by the caller.
#[derive(Debug)]
pub struct Session {
    planner: PlannerConfig,
    timed: bool,
    max_ticks: u32,
    true_task: Option<TaskHypothesis>,
    world: WorldState,
    belief: Belief,
    pending: Option<Action>,
    committed: Option<(TaskHypothesis, BeliefSnapshot)>,
    script: VecDeque<Action>,
}

impl Session {
    /// Starts at the initial world and returns the session with its tick-0
    /// record.
    pub fn start(cfg: &TrialConfig, true_task: Option<TaskHypothesis>) -> Result<(Session, TraceRecord)> {
        cfg.validate()?;
        let planner = cfg.effective_planner();
        let world = WorldState::initial();
        let mut s = Session {
            timed: planner.deadline().is_some(),
            planner,
            max_ticks: cfg.max_ticks,
            true_task,
            belief: Belief::initial_at(cfg.teacher_params, &world),
            world,
            pending: None,
            committed: None,
            script: VecDeque::new(),
        };
        let truth = Some(MentalState::Waiting);
        let rec = s.decide(Observation::NoSpacebar, truth)?;
        Ok((s, rec))
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn committed(&self) -> Option<TaskHypothesis> {
        self.committed.as_ref().map(|(h, _)| *h)
    }

    pub fn is_finished(&self) -> bool {
        self.pending.is_none()
    }

    /// Applies the pending action, absorbs `obs` for the new tick and
    /// chooses the next action.
    pub fn advance(&mut self, obs: Observation, truth: Option<MentalState>) -> Result<TraceRecord> {
        let action = self
            .pending
            .ok_or_else(|| Error::Aborted("trial already finished".into()))?;
        let next = self.world.apply(&action)?;
        if self.committed.is_none() {
            self.belief = self.belief.update(&action, &next, obs)?;
        }
        self.world = next;
        self.decide(obs, truth)
    }

    /// Next world the pending action leads to, for the teacher to observe.
    pub fn next_world(&self) -> Option<WorldState> {
        self.pending
            .map(|a| self.world.apply(&a).expect("pending action is valid"))
    }

    fn decide(&mut self, obs: Observation, mental: Option<MentalState>) -> Result<TraceRecord> {
        let mut plan_stats = None;
        if self.committed.is_none() {
            if let Some(h) = final_candidate(&self.belief.marginal(), self.planner.final_threshold) {
                self.committed = Some((h, self.belief.snapshot()));
                self.script = completion_script(h, &self.world).into();
            }
        }
        let action = if self.committed.is_some() {
            self.script.pop_front()
        } else if self.world.tick >= self.max_ticks {
            None
        } else {
            let r = plan(&self.belief, &self.world, &self.planner)?;
            plan_stats = Some(PlanStats::from_result(&r, self.timed));
            Some(r.action)
        };
        self.pending = action;
        let belief = match &self.committed {
            Some((_, snap)) => snap.clone(),
            None => self.belief.snapshot(),
        };
        Ok(TraceRecord {
            tick: self.world.tick,
            action,
            observation: obs,
            world: self.world,
            belief,
            plan: plan_stats,
            truth: match (mental, self.true_task) {
                (Some(mental), Some(task)) => Some(Truth { mental, task }),
                _ => None,
            },
        })
    }

    fn outcome(&self, trial_id: &str, trace: Vec<TraceRecord>) -> TrialOutcome {
        let final_task = self.world.final_displayed;
        TrialOutcome {
            trial_id: trial_id.to_string(),
            true_task: self.true_task,
            final_task,
            correct: match (final_task, self.true_task) {
                (Some(f), Some(t)) => Some(f == t),
                _ => None,
            },
            ticks_to_final: final_task.map(|_| self.world.tick),
            entropy_at_final: self
                .committed
                .as_ref()
                .filter(|_| final_task.is_some())
                .map(|(_, s)| s.entropy),
            trace,
        }
    }
}

/// Runs a trial against a simulated teacher.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialOutcome> {
    let TeacherKind::Simulated(script) = &cfg.teacher else {
        return Err(Error::InvalidParams("a live teacher needs run_trial_with".into()));
    };
    let mut teacher = SimulatedTeacher::new(script.clone(), &WorldState::initial())?;
    run_trial_with(cfg, &mut teacher, |_| {})
}

/// Runs a trial with observations from `teacher`, handing every record to
/// `on_record` as soon as it exists. Realtime mode sleeps to the next tick
/// boundary before collecting each observation.
pub fn run_trial_with(
    cfg: &TrialConfig,
    teacher: &mut dyn TeacherSource,
    mut on_record: impl FnMut(&TraceRecord),
) -> Result<TrialOutcome> {
    let (mut session, first) = Session::start(cfg, teacher.true_task())?;
    on_record(&first);
    let mut trace = vec![first];
    let start = Instant::now();
    let tick = cfg.tick_length();
    while let Some(next) = session.next_world() {
        if cfg.mode == TrialMode::Realtime {
            let due = start + tick * next.tick;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        let (obs, truth) = teacher.observe(&next)?;
        let rec = session.advance(obs, truth)?;
        on_record(&rec);
        trace.push(rec);
    }
    Ok(session.outcome(&cfg.trial_id, trace))
}
