//! Exact Bayes filter over (task hypothesis, approval memory).
//!
//! The teacher's transition model depends on hidden history only through the
//! last approval tick of each kind, so a particle keyed by the hypothesis and
//! its approval memory is a sufficient statistic: particles with equal keys
//! are merged and the filter stays exact. Approvals that can no longer change
//! any hazard are dropped from the key so that equivalent histories merge.
//!
//! Each particle also carries, for every press incorporated so far, the split
//! of its weight across the four interpretations of that press. Summing those
//! splits gives the smoothed posterior of a press given all later evidence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::teacher::{
    ApprovalMemory, ApprovalType, CueHistory, MentalDist, Observation, TaskHypothesis, TeacherParams, NUM_CUE_KEYS,
    NUM_TASKS,
};
use crate::world::{Action, WorldState, NUM_BALLS, NUM_LEVELS};

/// Normalized particles below this weight are dropped.
pub const PRUNE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct ParticleKey {
    pub task: u8,
    pub memory: ApprovalMemory,
}

impl ParticleKey {
    pub fn hypothesis(&self) -> TaskHypothesis {
        TaskHypothesis::from_index(self.task as usize)
    }
}

/// Data carried alongside each particle weight through an update.
pub(crate) trait Payload: Clone {
    fn scaled(&self, factor: f64) -> Self;
    fn absorb(&mut self, other: &Self);
    fn with_press(self, interpretation: usize, weight: f64) -> Self;
}

impl Payload for () {
    fn scaled(&self, _: f64) -> Self {}
    fn absorb(&mut self, _: &Self) {}
    fn with_press(self, _: usize, _: f64) -> Self {}
}

/// Per-press weight split over (mistake, that_mov, that_wrt, that_dist).
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Lineage(Vec<[f64; 4]>);

impl Payload for Lineage {
    fn scaled(&self, factor: f64) -> Self {
        Lineage(self.0.iter().map(|row| row.map(|v| v * factor)).collect())
    }

    fn absorb(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    fn with_press(mut self, interpretation: usize, weight: f64) -> Self {
        let mut row = [0.0; 4];
        row[interpretation] = weight;
        self.0.push(row);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Weighted<L> {
    pub key: ParticleKey,
    pub weight: f64,
    pub payload: L,
}

/// Transition model evaluated at one tick, with hazards for approval-free
/// particles precomputed per cue key.
pub(crate) struct StepModel<'a> {
    cues: &'a CueHistory,
    params: TeacherParams,
    base: [f64; NUM_CUE_KEYS],
    now: u32,
}

impl<'a> StepModel<'a> {
    pub fn new(cues: &'a CueHistory) -> Self {
        StepModel {
            cues,
            params: *cues.params(),
            base: cues.base_hazards(),
            now: cues.tick(),
        }
    }

    pub fn transition(&self, key: &ParticleKey) -> MentalDist {
        let h = key.hypothesis();
        let mut hz = [0.0; 3];
        for kind in ApprovalType::ALL {
            let ck = h.cue_key(kind);
            hz[kind.idx()] = match key.memory.get(kind) {
                None => self.base[ck],
                a => self.cues.trace_by_key(ck).hazard(&self.params, a, self.now),
            };
        }
        MentalDist::from_hazards(self.params.mistake_rate, hz)
    }

    pub fn canonical(&self, key: ParticleKey) -> ParticleKey {
        ParticleKey {
            task: key.task,
            memory: self.cues.canonical_memory(key.hypothesis(), key.memory),
        }
    }

    pub fn stamp(&self, key: &ParticleKey, kind: ApprovalType) -> ParticleKey {
        self.canonical(ParticleKey {
            task: key.task,
            memory: key.memory.stamped(kind, self.now),
        })
    }

    pub fn now(&self) -> u32 {
        self.now
    }
}

/// One filtering step: weight every particle by the likelihood of `obs`,
/// split press branches into their interpretations, normalize, prune and
/// merge equal keys. The result is sorted by key.
pub(crate) fn filter_step<L: Payload>(
    particles: &[Weighted<L>],
    model: &StepModel<'_>,
    obs: Observation,
) -> Result<Vec<Weighted<L>>> {
    let mut children: Vec<Weighted<L>> = Vec::with_capacity(particles.len() * 2);
    for p in particles {
        let dist = model.transition(&p.key);
        match obs {
            Observation::NoSpacebar => {
                let f = dist.0[0];
                if f > 0.0 {
                    children.push(Weighted {
                        key: model.canonical(p.key),
                        weight: p.weight * f,
                        payload: p.payload.scaled(f),
                    });
                }
            }
            Observation::Spacebar => {
                let mu = dist.0[1];
                if mu > 0.0 {
                    let w = p.weight * mu;
                    children.push(Weighted {
                        key: model.canonical(p.key),
                        weight: w,
                        payload: p.payload.scaled(mu).with_press(0, w),
                    });
                }
                for kind in ApprovalType::ALL {
                    let hz = dist.0[2 + kind.idx()];
                    if hz > 0.0 {
                        let w = p.weight * hz;
                        children.push(Weighted {
                            key: model.stamp(&p.key, kind),
                            weight: w,
                            payload: p.payload.scaled(hz).with_press(1 + kind.idx(), w),
                        });
                    }
                }
            }
        }
    }
    let total: f64 = children.iter().map(|c| c.weight).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::ZeroLikelihood { tick: model.now() });
    }
    children.retain(|c| c.weight / total >= PRUNE_THRESHOLD);
    if !children.is_sorted_by(|a, b| a.key <= b.key) {
        children.sort_by_key(|c| c.key);
    }
    let mut merged: Vec<Weighted<L>> = Vec::with_capacity(children.len());
    for c in children {
        match merged.last_mut() {
            Some(last) if last.key == c.key => {
                last.weight += c.weight;
                last.payload.absorb(&c.payload);
            }
            _ => merged.push(c),
        }
    }
    let kept: f64 = merged.iter().map(|c| c.weight).sum();
    for c in &mut merged {
        c.weight /= kept;
        c.payload = c.payload.scaled(1.0 / kept);
    }
    Ok(merged)
}

/// Probability that the next observation is a press.
pub(crate) fn press_probability<L>(particles: &[Weighted<L>], model: &StepModel<'_>) -> f64 {
    particles
        .iter()
        .map(|p| p.weight * model.transition(&p.key).press_prob())
        .sum()
}

pub(crate) fn marginal_of<L>(particles: &[Weighted<L>]) -> TaskMarginal {
    let mut p = [0.0; NUM_TASKS];
    for w in particles {
        p[w.key.task as usize] += w.weight;
    }
    TaskMarginal(p)
}

/// Probability per task hypothesis, indexed by [`TaskHypothesis::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMarginal(pub [f64; NUM_TASKS]);

impl TaskMarginal {
    pub fn uniform() -> Self {
        TaskMarginal([1.0 / NUM_TASKS as f64; NUM_TASKS])
    }

    pub fn p(&self, h: TaskHypothesis) -> f64 {
        self.0[h.index()]
    }

    /// Most probable hypothesis; lowest index wins ties.
    pub fn top(&self) -> (TaskHypothesis, f64) {
        let mut best = 0;
        for i in 1..NUM_TASKS {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        (TaskHypothesis::from_index(best), self.0[best])
    }

    pub fn mov(&self) -> [f64; NUM_BALLS] {
        let mut out = [0.0; NUM_BALLS];
        for h in TaskHypothesis::all() {
            out[h.mov.idx()] += self.p(h);
        }
        out
    }

    pub fn wrt(&self) -> [f64; NUM_BALLS] {
        let mut out = [0.0; NUM_BALLS];
        for h in TaskHypothesis::all() {
            out[h.wrt.idx()] += self.p(h);
        }
        out
    }

    pub fn dist(&self) -> [f64; NUM_LEVELS] {
        let mut out = [0.0; NUM_LEVELS];
        for h in TaskHypothesis::all() {
            out[h.dist.idx()] += self.p(h);
        }
        out
    }
}

/// Shannon entropy of the task marginal, in nats.
pub fn entropy(m: &TaskMarginal) -> f64 {
    m.0.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}

/// The unique hypothesis with probability strictly above `threshold`.
pub fn final_candidate(m: &TaskMarginal, threshold: f64) -> Option<TaskHypothesis> {
    let (h, p) = m.top();
    (p > threshold).then_some(h)
}

/// Posterior over the interpretation of one press.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressPosterior {
    pub tick: u32,
    pub mistake: f64,
    pub that_mov: f64,
    pub that_wrt: f64,
    pub that_dist: f64,
}

impl PressPosterior {
    pub fn as_array(&self) -> [f64; 4] {
        [self.mistake, self.that_mov, self.that_wrt, self.that_dist]
    }

    /// Probability of the given interpretation; zero for waiting.
    pub fn p(&self, m: crate::teacher::MentalState) -> f64 {
        m.press_idx().map_or(0.0, |i| self.as_array()[i])
    }
}

/// Distribution over (task hypothesis, approval memory) plus the cue history
/// needed to evaluate the teacher model.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    particles: Vec<Weighted<Lineage>>,
    cues: CueHistory,
    presses: Vec<u32>,
}

impl Belief {
    /// Uniform prior over the 24 hypotheses with empty approval memory, at
    /// the initial world.
    pub fn initial(params: TeacherParams) -> Self {
        Self::initial_at(params, &WorldState::initial())
    }

    pub fn initial_at(params: TeacherParams, world: &WorldState) -> Self {
        let particles = (0..NUM_TASKS)
            .map(|i| Weighted {
                key: ParticleKey {
                    task: i as u8,
                    memory: ApprovalMemory::default(),
                },
                weight: 1.0 / NUM_TASKS as f64,
                payload: Lineage::default(),
            })
            .collect();
        Belief {
            particles,
            cues: CueHistory::new(params, world),
            presses: Vec::new(),
        }
    }

    /// Builds a belief from arbitrary non-negative weights, normalizing them
    /// and merging duplicate keys. No presses are recorded.
    pub fn from_weights(
        cues: CueHistory,
        weights: impl IntoIterator<Item = (TaskHypothesis, ApprovalMemory, f64)>,
    ) -> Result<Self> {
        let mut particles: Vec<Weighted<Lineage>> = weights
            .into_iter()
            .filter(|(_, _, w)| *w > 0.0)
            .map(|(h, memory, weight)| Weighted {
                key: ParticleKey {
                    task: h.index() as u8,
                    memory,
                },
                weight,
                payload: Lineage::default(),
            })
            .collect();
        particles.sort_by_key(|p| p.key);
        particles.dedup_by(|b, a| {
            if a.key == b.key {
                a.weight += b.weight;
                true
            } else {
                false
            }
        });
        let total: f64 = particles.iter().map(|p| p.weight).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::ZeroLikelihood { tick: cues.tick() });
        }
        for p in &mut particles {
            p.weight /= total;
        }
        Ok(Belief {
            particles,
            cues,
            presses: Vec::new(),
        })
    }

    pub fn tick(&self) -> u32 {
        self.cues.tick()
    }

    pub fn cues(&self) -> &CueHistory {
        &self.cues
    }

    pub fn params(&self) -> &TeacherParams {
        self.cues.params()
    }

    pub fn particle_count(&self) -> usize {
        self.particles.len()
    }

    /// Ticks of every press incorporated so far.
    pub fn presses(&self) -> &[u32] {
        &self.presses
    }

    pub fn particles(&self) -> impl Iterator<Item = (TaskHypothesis, ApprovalMemory, f64)> + '_ {
        self.particles
            .iter()
            .map(|p| (p.key.hypothesis(), p.key.memory, p.weight))
    }

    pub(crate) fn weighted(&self) -> &[Weighted<Lineage>] {
        &self.particles
    }

    /// Incorporates the executed action `action`, the resulting world
    /// `next_world` and the observation made at that world's tick.
    pub fn update(&self, action: &Action, next_world: &WorldState, obs: Observation) -> Result<Belief> {
        if next_world.tick != self.tick() + 1 {
            return Err(Error::InvalidWorld(format!(
                "belief at tick {} cannot absorb world at tick {} ({action})",
                self.tick(),
                next_world.tick
            )));
        }
        let cues = self.cues.observed(next_world);
        let particles = filter_step(&self.particles, &StepModel::new(&cues), obs)?;
        let mut presses = self.presses.clone();
        if obs.is_press() {
            presses.push(next_world.tick);
        }
        Ok(Belief {
            particles,
            cues,
            presses,
        })
    }

    pub fn marginal(&self) -> TaskMarginal {
        marginal_of(&self.particles)
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.marginal())
    }

    /// Smoothed posterior over the interpretation of the press at
    /// `press_tick`, given everything this belief has absorbed.
    pub fn press_posterior(&self, press_tick: u32) -> Result<PressPosterior> {
        let i = self
            .presses
            .iter()
            .position(|t| *t == press_tick)
            .ok_or(Error::UnknownPress(press_tick))?;
        let mut acc = [0.0; 4];
        for p in &self.particles {
            for (a, v) in acc.iter_mut().zip(p.payload.0[i]) {
                *a += v;
            }
        }
        Ok(PressPosterior {
            tick: press_tick,
            mistake: acc[0],
            that_mov: acc[1],
            that_wrt: acc[2],
            that_dist: acc[3],
        })
    }

    pub fn press_posteriors(&self) -> Vec<PressPosterior> {
        self.presses
            .iter()
            .map(|t| self.press_posterior(*t).expect("recorded press"))
            .collect()
    }

    pub fn snapshot(&self) -> BeliefSnapshot {
        let m = self.marginal();
        let (top, p) = m.top();
        BeliefSnapshot {
            tick: self.tick(),
            entropy: entropy(&m),
            top: TopTask {
                mov: top.mov.get(),
                wrt: top.wrt.get(),
                dist: top.dist.get(),
                p,
            },
            marg_mov: m.mov(),
            marg_wrt: m.wrt(),
            marg_dist: m.dist(),
            particle_count: self.particles.len(),
            press_posteriors: self.press_posteriors(),
        }
    }
}

/// Uniform initial belief at the initial world.
pub fn initial_belief(params: TeacherParams) -> Belief {
    Belief::initial(params)
}

/// Free-function form of [`Belief::update`].
pub fn belief_update(b: &Belief, a: &Action, w_next: &WorldState, o: Observation) -> Result<Belief> {
    b.update(a, w_next, o)
}

pub fn task_marginal(b: &Belief) -> TaskMarginal {
    b.marginal()
}

/// Posterior of the press at `press_tick` given all evidence up to the last
/// belief of `trace`.
pub fn mental_posterior(trace: &[Belief], press_tick: u32) -> Result<PressPosterior> {
    trace
        .last()
        .ok_or(Error::UnknownPress(press_tick))?
        .press_posterior(press_tick)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopTask {
    pub mov: u8,
    pub wrt: u8,
    pub dist: u8,
    pub p: f64,
}

/// Serialized summary of a belief, as written to traces and the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub tick: u32,
    pub entropy: f64,
    pub top: TopTask,
    pub marg_mov: [f64; NUM_BALLS],
    pub marg_wrt: [f64; NUM_BALLS],
    pub marg_dist: [f64; NUM_LEVELS],
    pub particle_count: usize,
    #[serde(default)]
    pub press_posteriors: Vec<PressPosterior>,
}

impl BeliefSnapshot {
    /// Largest absolute difference over all numeric fields.
    pub fn max_abs_diff(&self, other: &BeliefSnapshot) -> f64 {
        let mut d = (self.entropy - other.entropy)
            .abs()
            .max((self.top.p - other.top.p).abs());
        let pairs = self
            .marg_mov
            .iter()
            .zip(&other.marg_mov)
            .chain(self.marg_wrt.iter().zip(&other.marg_wrt))
            .chain(self.marg_dist.iter().zip(&other.marg_dist));
        for (a, b) in pairs {
            d = d.max((a - b).abs());
        }
        for (a, b) in self.press_posteriors.iter().zip(&other.press_posteriors) {
            for (x, y) in a.as_array().iter().zip(b.as_array()) {
                d = d.max((x - y).abs());
            }
        }
        if self.press_posteriors.len() != other.press_posteriors.len() {
            d = f64::INFINITY;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::BallId;

    fn b(i: u8) -> BallId {
        BallId::new(i).unwrap()
    }

    /// Runs `actions` from the initial world with silent observations,
    /// returning the belief and world reached.
    fn silent_run(actions: &[Action]) -> (Belief, WorldState) {
        let mut belief = Belief::initial(TeacherParams::default());
        let mut w = WorldState::initial();
        for a in actions {
            w = w.apply(a).unwrap();
            belief = belief.update(a, &w, Observation::NoSpacebar).unwrap();
        }
        (belief, w)
    }

    #[test]
    fn initial_is_uniform() {
        let b0 = Belief::initial(TeacherParams::default());
        assert_eq!(b0.particle_count(), 24);
        assert_eq!(b0.tick(), 0);
        for h in TaskHypothesis::all() {
            assert!((b0.marginal().p(h) - 1.0 / 24.0).abs() < 1e-15);
        }
        assert!((b0.entropy() - 24f64.ln()).abs() < 1e-12);
        assert!((b0.entropy() - 3.178).abs() < 1e-3);
    }

    #[test]
    fn silence_without_cues_is_uninformative() {
        let (belief, _) = silent_run(&[Action::Noa, Action::PickUp(b(2)), Action::Noa]);
        for h in TaskHypothesis::all() {
            assert!((belief.marginal().p(h) - 1.0 / 24.0).abs() < 1e-12);
        }
    }

    #[test]
    fn press_at_peak_spikes_mov() {
        // Light ball 1 and hold it until the mov hazard is at its peak,
        // then replace the accumulated silence evidence with a fresh
        // uniform prior so that only the press is informative.
        let (lit, w) = silent_run(&[Action::LightOn(b(1)), Action::Noa, Action::Noa, Action::Noa]);
        let prior = Belief::from_weights(
            lit.cues().clone(),
            TaskHypothesis::all().map(|h| (h, ApprovalMemory::default(), 1.0)),
        )
        .unwrap();
        let w5 = w.apply(&Action::Noa).unwrap();
        let post = prior.update(&Action::Noa, &w5, Observation::Spacebar).unwrap();
        let m = post.marginal();
        let p_mov1 = m.mov()[0];
        let oracle = (8.0 * 0.105) / (8.0 * 0.105 + 16.0 * 0.005);
        assert!((p_mov1 - oracle).abs() < 1e-12, "{p_mov1} vs {oracle}");
        assert!((p_mov1 - 0.913).abs() < 1e-3);
        for h in TaskHypothesis::all().filter(|h| h.mov == b(1)) {
            assert!((m.p(h) - oracle / 8.0).abs() < 1e-12);
        }
        // 0.913 spread over 8, 0.087 over 16.
        let e = -(oracle * (oracle / 8.0).ln()) - (1.0 - oracle) * ((1.0 - oracle) / 16.0).ln();
        assert!((entropy(&m) - e).abs() < 1e-12);
        assert!((entropy(&m) - 2.435).abs() < 2e-3);
        let pp = post.press_posterior(5).unwrap();
        assert!((pp.that_mov - (8.0 * 0.1) / (8.0 * 0.105 + 16.0 * 0.005)).abs() < 1e-12);
        assert!((pp.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_press_is_an_error() {
        let (belief, _) = silent_run(&[Action::Noa]);
        assert!(matches!(belief.press_posterior(1), Err(Error::UnknownPress(1))));
        assert!(mental_posterior(&[], 3).is_err());
    }

    #[test]
    fn tick_mismatch_is_rejected() {
        let b0 = Belief::initial(TeacherParams::default());
        let w2 = WorldState::initial()
            .apply(&Action::Noa)
            .unwrap()
            .apply(&Action::Noa)
            .unwrap();
        assert!(b0.update(&Action::Noa, &w2, Observation::NoSpacebar).is_err());
    }

    #[test]
    fn zero_likelihood_is_reported() {
        let params = TeacherParams {
            mistake_rate: 0.0,
            ..Default::default()
        };
        let b0 = Belief::initial(params);
        let w1 = WorldState::initial().apply(&Action::Noa).unwrap();
        assert!(matches!(
            b0.update(&Action::Noa, &w1, Observation::Spacebar),
            Err(Error::ZeroLikelihood { tick: 1 })
        ));
    }

    #[test]
    fn final_candidate_is_strict() {
        assert_eq!(final_candidate(&TaskMarginal::uniform(), 0.98), None);
        let h = TaskHypothesis::from_index(5);
        let mut m = [0.015 / 23.0; NUM_TASKS];
        m[5] = 0.985;
        assert_eq!(final_candidate(&TaskMarginal(m), 0.98), Some(h));
        let mut m = [0.02 / 23.0; NUM_TASKS];
        m[5] = 0.98;
        assert_eq!(final_candidate(&TaskMarginal(m), 0.98), None);
    }

    #[test]
    fn entropy_edge_cases() {
        let mut m = [0.0; NUM_TASKS];
        m[3] = 1.0;
        assert_eq!(entropy(&TaskMarginal(m)), 0.0);
        assert!((entropy(&TaskMarginal::uniform()) - 24f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn snapshot_json_keys() {
        let s = serde_json::to_string(&Belief::initial(TeacherParams::default()).snapshot()).unwrap();
        let keys = [
            "\"tick\"",
            "\"entropy\"",
            "\"top\"",
            "\"marg_mov\"",
            "\"marg_wrt\"",
            "\"marg_dist\"",
            "\"particle_count\"",
        ];
        let mut last = 0;
        for k in keys {
            let pos = s.find(k).unwrap();
            assert!(pos >= last, "{k} out of order in {s}");
            last = pos;
        }
    }
}
