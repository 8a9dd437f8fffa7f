//! Generative teacher that samples mental states and presses from the same
//! model the filter assumes, with scripted overrides.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::teacher::{
    mental_transition, ApprovalMemory, CueHistory, MentalState, Observation, TaskHypothesis, TeacherParams,
};
use crate::world::WorldState;

/// Ground truth and perturbations for one simulated teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherScript {
    pub true_task: TaskHypothesis,
    #[serde(default)]
    pub params: TeacherParams,
    /// Ticks with a press regardless of the sampled state, labeled mistake.
    #[serde(default)]
    pub forced_presses: Vec<u32>,
    /// Ticks on which any press is withheld.
    #[serde(default)]
    pub suppressed_ticks: Vec<u32>,
    #[serde(default)]
    pub seed: u64,
}

impl TeacherScript {
    pub fn new(true_task: TaskHypothesis, params: TeacherParams, seed: u64) -> Self {
        TeacherScript {
            true_task,
            params,
            forced_presses: Vec::new(),
            suppressed_ticks: Vec::new(),
            seed,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let script: TeacherScript = serde_json::from_str(s)?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let forced: BTreeSet<u32> = self.forced_presses.iter().copied().collect();
        if let Some(t) = self.suppressed_ticks.iter().find(|t| forced.contains(t)) {
            return Err(Error::InvalidParams(format!("tick {t} is both forced and suppressed")));
        }
        Ok(())
    }
}

/// One teacher tick against cue history `cues` (already advanced to `now`
/// for the true task): samples the next mental state, applies the script's
/// overrides and returns the observation, the ground-truth state and the
/// updated approval memory. Suppressed ticks report `waiting` and leave the
/// memory untouched.
pub fn teacher_step(
    script: &TeacherScript,
    mem: &ApprovalMemory,
    cues: &CueHistory,
    now: u32,
    rng: &mut ChaCha8Rng,
) -> Result<(Observation, MentalState, ApprovalMemory)> {
    let dist = mental_transition(&script.params, script.true_task, mem, cues, now)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut sampled = MentalState::Waiting;
    for m in MentalState::ALL {
        acc += dist.p(m);
        if u < acc {
            sampled = m;
            break;
        }
    }
    if script.forced_presses.contains(&now) {
        return Ok((Observation::Spacebar, MentalState::Mistake, *mem));
    }
    if script.suppressed_ticks.contains(&now) {
        return Ok((Observation::NoSpacebar, MentalState::Waiting, *mem));
    }
    let mut next = *mem;
    if let Some(kind) = sampled.approval() {
        next.set(kind, Some(now));
    }
    let obs = if sampled == MentalState::Waiting {
        Observation::NoSpacebar
    } else {
        Observation::Spacebar
    };
    Ok((obs, sampled, next))
}

/// Stateful simulated teacher for one trial.
#[derive(Debug, Clone)]
pub struct SimulatedTeacher {
    script: TeacherScript,
    rng: ChaCha8Rng,
    memory: ApprovalMemory,
    cues: CueHistory,
}

impl SimulatedTeacher {
    /// A teacher that has seen `world` (normally the initial world).
    pub fn new(script: TeacherScript, world: &WorldState) -> Result<Self> {
        script.validate()?;
        Ok(SimulatedTeacher {
            rng: ChaCha8Rng::seed_from_u64(script.seed),
            memory: ApprovalMemory::default(),
            cues: CueHistory::new(script.params, world),
            script,
        })
    }

    pub fn script(&self) -> &TeacherScript {
        &self.script
    }

    pub fn memory(&self) -> ApprovalMemory {
        self.memory
    }

    /// Observes `world` (the next tick) and reacts to it.
    pub fn step(&mut self, world: &WorldState) -> Result<(Observation, MentalState)> {
        self.cues.observe(world);
        let (obs, m, mem) = teacher_step(&self.script, &self.memory, &self.cues, world.tick, &mut self.rng)?;
        self.memory = mem;
        Ok((obs, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Action, BallId, DistanceLevel};

    fn b(i: u8) -> BallId {
        BallId::new(i).unwrap()
    }
    fn task(m: u8, w: u8, d: u8) -> TaskHypothesis {
        TaskHypothesis::new(b(m), b(w), DistanceLevel::new(d).unwrap()).unwrap()
    }

    /// Cue history in which ball `lit` has been lit for `ticks` ticks.
    fn lit_for(lit: u8, ticks: u32) -> (CueHistory, WorldState) {
        let mut w = WorldState::initial();
        let mut cues = CueHistory::new(TeacherParams::default(), &w);
        w = w.apply(&Action::LightOn(b(lit))).unwrap();
        cues.observe(&w);
        for _ in 0..ticks {
            w = w.apply(&Action::Noa).unwrap();
            cues.observe(&w);
        }
        (cues, w)
    }

    #[test]
    fn silent_without_cues_or_mistakes() {
        let params = TeacherParams {
            mistake_rate: 0.0,
            ..Default::default()
        };
        let mut t =
            SimulatedTeacher::new(TeacherScript::new(task(1, 2, 3), params, 3), &WorldState::initial()).unwrap();
        let mut w = WorldState::initial();
        for _ in 0..1000 {
            w = w.apply(&Action::Noa).unwrap();
            assert_eq!(t.step(&w).unwrap(), (Observation::NoSpacebar, MentalState::Waiting));
        }
    }

    #[test]
    fn press_frequency_at_peak() {
        let (cues, w) = lit_for(1, 4);
        let script = TeacherScript::new(task(1, 2, 3), TeacherParams::default(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let presses = (0..n)
            .filter(|_| {
                let (o, _, _) = teacher_step(&script, &ApprovalMemory::default(), &cues, w.tick, &mut rng).unwrap();
                o.is_press()
            })
            .count();
        let freq = presses as f64 / n as f64;
        assert!((freq - 0.105).abs() < 0.003, "{freq}");
    }

    #[test]
    fn chi_square_against_model() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let critical = ChiSquared::new(4.0).unwrap().inverse_cdf(0.99);
        // Mov cue ramping, mov cue at peak, and a wrt plus dist cue mix.
        let mut configs = vec![lit_for(2, 2), lit_for(2, 6)];
        let mut w = WorldState::initial();
        let mut cues = CueHistory::new(TeacherParams::default(), &w);
        for a in [
            Action::LightOn(b(3)),
            Action::PickUp(b(2)),
            Action::Slide {
                ball: b(2),
                distance: DistanceLevel::FURTHEST,
                anchor: b(3),
            },
            Action::PickUp(b(1)),
            Action::Noa,
        ] {
            w = w.apply(&a).unwrap();
            cues.observe(&w);
        }
        configs.push((cues, w));
        let script = TeacherScript::new(task(2, 3, 4), TeacherParams::default(), 0);
        for (i, (cues, w)) in configs.iter().enumerate() {
            let mem = ApprovalMemory::default();
            let dist = mental_transition(&script.params, script.true_task, &mem, cues, w.tick).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            let n = 100_000;
            let mut counts = [0usize; 5];
            for _ in 0..n {
                let (_, m, _) = teacher_step(&script, &mem, cues, w.tick, &mut rng).unwrap();
                counts[m.idx()] += 1;
            }
            let mut stat = 0.0;
            let mut dof = 0;
            for m in MentalState::ALL {
                let expected = dist.p(m) * n as f64;
                if expected > 0.0 {
                    stat += (counts[m.idx()] as f64 - expected).powi(2) / expected;
                    dof += 1;
                } else {
                    assert_eq!(counts[m.idx()], 0);
                }
            }
            let critical = ChiSquared::new((dof - 1) as f64).unwrap().inverse_cdf(0.99).max(0.0);
            assert!(stat < critical, "config {i}: chi2 {stat} >= {critical}");
        }
        assert!(critical > 13.0 && critical < 13.5);
    }

    #[test]
    fn forced_press_is_a_mistake() {
        let mut script = TeacherScript::new(task(2, 3, 1), TeacherParams::default(), 5);
        script.forced_presses = vec![6];
        let mut t = SimulatedTeacher::new(script, &WorldState::initial()).unwrap();
        let mut w = WorldState::initial();
        for tick in 1..=8 {
            w = w.apply(&Action::Noa).unwrap();
            let (o, m) = t.step(&w).unwrap();
            if tick == 6 {
                assert_eq!((o, m), (Observation::Spacebar, MentalState::Mistake));
            }
        }
    }

    #[test]
    fn suppression_withholds_and_forgets() {
        let (cues, w) = lit_for(1, 4);
        let mut script = TeacherScript::new(task(1, 2, 3), TeacherParams::default(), 0);
        script.suppressed_ticks = vec![w.tick];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let (o, m, mem) = teacher_step(&script, &ApprovalMemory::default(), &cues, w.tick, &mut rng).unwrap();
            assert_eq!(
                (o, m, mem),
                (Observation::NoSpacebar, MentalState::Waiting, ApprovalMemory::default())
            );
        }
    }

    #[test]
    fn approvals_update_memory() {
        let (cues, w) = lit_for(1, 4);
        let script = TeacherScript::new(task(1, 2, 3), TeacherParams::default(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut seen = false;
        for _ in 0..500 {
            let (_, m, mem) = teacher_step(&script, &ApprovalMemory::default(), &cues, w.tick, &mut rng).unwrap();
            if m == MentalState::ThatMov {
                assert_eq!(mem.last_that_mov, Some(w.tick));
                seen = true;
            } else {
                assert_eq!(mem, ApprovalMemory::default());
            }
        }
        assert!(seen);
    }

    #[test]
    fn reproducible_sequences() {
        let run = |seed| {
            let script = TeacherScript::new(task(1, 3, 2), TeacherParams::default(), seed);
            let mut t = SimulatedTeacher::new(script, &WorldState::initial()).unwrap();
            let mut w = WorldState::initial();
            let mut out = Vec::new();
            for i in 0..200u32 {
                let a = if i % 7 == 0 {
                    Action::LightOn(b(1))
                } else if i % 7 == 3 {
                    Action::LightOff(b(1))
                } else {
                    Action::Noa
                };
                w = w.apply(&a).unwrap();
                out.push(t.step(&w).unwrap());
            }
            out
        };
        assert_eq!(run(17), run(17));
        assert_ne!(run(17), run(18));
    }

    #[test]
    fn script_json() {
        let s = TeacherScript::from_json(
            r#"{"true_task": {"mov": 2, "wrt": 3, "dist": 1}, "forced_presses": [6], "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(s.true_task, task(2, 3, 1));
        assert_eq!(s.params, TeacherParams::default());
        assert!(TeacherScript::from_json(
            r#"{"true_task": {"mov": 2, "wrt": 3, "dist": 1}, "forced_presses": [6], "suppressed_ticks": [6]}"#
        )
        .is_err());
        assert!(TeacherScript::from_json(r#"{"true_task": {"mov": 2, "wrt": 2, "dist": 1}}"#).is_err());
    }
}
