//! Task communication between a human teacher and a robot, framed as a
//! partially observable Markov decision process.
//!
//! The robot acts in a small deterministic ball world, the teacher answers
//! with nothing but spacebar presses, and the robot keeps an exact posterior
//! over the hidden task and the teacher's mental state. Actions are chosen by
//! a finite-horizon expectimax that minimizes the summed expected entropy of
//! the task marginal.

pub mod belief;
pub mod config;
pub mod error;
pub mod experiment;
pub mod planner;
pub mod session;
pub mod sim;
pub mod teacher;
pub mod trace;
pub mod world;

pub use belief::{
    belief_update, entropy, final_candidate, initial_belief, mental_posterior, task_marginal, Belief, BeliefSnapshot,
    PressPosterior, TaskMarginal,
};
pub use config::Config;
pub use error::{Error, Result};
pub use planner::{completion_script, plan, PlanResult, PlannerConfig};
pub use session::{
    run_trial, run_trial_with, Session, TeacherKind, TeacherSource, TrialConfig, TrialMode, TrialOutcome,
    DEFAULT_MAX_TICKS,
};
pub use sim::{teacher_step, SimulatedTeacher, TeacherScript};
pub use teacher::{
    cue_active, mental_transition, observation_prob, table_top, ApprovalMemory, ApprovalType, CueHistory, MentalState,
    Mismatch, Observation, TaskHypothesis, TeacherParams,
};
pub use trace::{read_trace, write_trace, PlanStats, TraceRecord, Truth};
pub use world::{apply_action, valid_actions, Action, BallId, DistanceLevel, WorldState};
