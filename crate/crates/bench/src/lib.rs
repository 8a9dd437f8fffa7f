//! Shared fixtures for the benchmarks in `benches/`.

use taskcomm::{
    Action, Belief, PlannerConfig, Session, SimulatedTeacher, TaskHypothesis, TeacherParams, TeacherScript,
    TeacherSource, TrialConfig, WorldState,
};

/// State of a simulated trial after `ticks` ticks with the fast planner at
/// `horizon`: the belief, the world and the action about to be applied.
pub fn mid_trial(ticks: u32, horizon: u32) -> (Belief, WorldState, Action) {
    let script = TeacherScript::new(TaskHypothesis::from_index(9), TeacherParams::default(), 7);
    let mut cfg = TrialConfig::simulated("bench", script.clone());
    cfg.planner = PlannerConfig {
        horizon_ticks: horizon,
        ..PlannerConfig::fast()
    };
    let mut teacher = SimulatedTeacher::new(script, &WorldState::initial()).expect("valid script");
    let (mut session, mut rec) = Session::start(&cfg, teacher.true_task()).expect("valid config");
    while rec.tick < ticks {
        let next = session.next_world().expect("trial still running");
        let (obs, truth) = teacher.observe(&next).expect("teacher step");
        rec = session.advance(obs, truth).expect("session step");
    }
    let action = rec.action.expect("trial still running");
    (session.belief().clone(), *session.world(), action)
}
