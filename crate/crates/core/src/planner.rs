//! Finite-horizon expectimax over beliefs, minimizing the discounted sum of
//! expected task entropy, and the open-loop completion script that runs once
//! the robot commits to a task.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::belief::{
    filter_step, marginal_of, press_probability, Belief, ParticleKey, StepModel, Weighted, PRUNE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::teacher::{
    cue_mask, table_top, ApprovalMemory, ApprovalType, CueHistory, MentalDist, Observation, TaskHypothesis,
    TeacherParams, NUM_CUE_KEYS, NUM_TASKS,
};
use crate::world::{Action, DistanceLevel, WorldState, NUM_BALLS};

/// Observation branches below this predictive probability are not expanded.
pub const BRANCH_FLOOR: f64 = 1e-6;

fn default_horizon() -> u32 {
    5
}
fn default_gamma() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    0.98
}
fn default_deadline_ms() -> u64 {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// Lookahead depth in ticks.
    #[serde(default = "default_horizon")]
    pub horizon_ticks: u32,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_threshold")]
    pub final_threshold: f64,
    /// Wall-clock budget per decision; ignored in fast mode.
    #[serde(default = "default_deadline_ms")]
    pub deadline_ms: u64,
    /// Disables the deadline, making planning a deterministic function of
    /// its inputs.
    #[serde(default)]
    pub fast_mode: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon_ticks: default_horizon(),
            gamma: default_gamma(),
            final_threshold: default_threshold(),
            deadline_ms: default_deadline_ms(),
            fast_mode: false,
        }
    }
}

impl PlannerConfig {
    pub fn fast() -> Self {
        PlannerConfig {
            fast_mode: true,
            ..Default::default()
        }
    }

    pub fn deadline(&self) -> Option<Duration> {
        (!self.fast_mode).then(|| Duration::from_millis(self.deadline_ms))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_ticks < 1 {
            return Err(Error::InvalidParams("horizon_ticks must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParams("gamma must lie in [0, 1]".into()));
        }
        if !(self.final_threshold > 0.5 && self.final_threshold < 1.0) {
            return Err(Error::InvalidParams("final_threshold must lie in (0.5, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub action: Action,
    /// Q value of `action` in nats.
    pub expected_cost: f64,
    pub nodes_expanded: u64,
    pub elapsed: Duration,
    /// Deepest lookahead that completed.
    pub depth: u32,
    /// The deadline cut the search short of the configured horizon.
    pub timed_out: bool,
    /// Q value of every valid root action at `depth`, in canonical order.
    pub q_values: Vec<(Action, f64)>,
}

struct Aborted;

struct Search {
    gamma: f64,
    deadline: Option<Instant>,
    nodes: u64,
    scratch: Vec<MentalDist>,
    hazard_cache: Vec<(usize, u32, f64)>,
}

impl Search {
    fn new(gamma: f64, deadline: Option<Instant>) -> Self {
        Search {
            gamma,
            deadline,
            nodes: 0,
            scratch: Vec::new(),
            hazard_cache: Vec::new(),
        }
    }
}

type Particles = Vec<Weighted<()>>;

/// Cue keys of task index `task`, in [`ApprovalType::ALL`] order.
const fn task_keys(task: usize) -> [usize; 3] {
    let mov = task / 8;
    let slot = task / 4 % 2;
    [mov, NUM_BALLS + mov * 2 + slot, NUM_BALLS * 3 + task]
}

/// Teacher transitions at tick `at` for a history that is known through
/// `cues.tick()` and presents the cues in `mask` from the tick after on,
/// without materializing the advanced history.
struct Lookahead<'a> {
    cues: &'a CueHistory,
    params: &'a TeacherParams,
    mask: u64,
    next: u32,
    at: u32,
    base: [f64; NUM_CUE_KEYS],
}

impl<'a> Lookahead<'a> {
    fn new(cues: &'a CueHistory, mask: u64, at: u32) -> Self {
        let mut la = Lookahead {
            cues,
            params: cues.params(),
            mask,
            next: cues.tick() + 1,
            at,
            base: [0.0; NUM_CUE_KEYS],
        };
        for key in 0..NUM_CUE_KEYS {
            la.base[key] = la.hazard(key, None);
        }
        la
    }

    /// Hazards without approvals for every key, with the key shown and not
    /// shown from the next tick on.
    fn levels(cues: &CueHistory, at: u32) -> [[f64; NUM_CUE_KEYS]; 2] {
        let off = Lookahead::new(cues, 0, at).base;
        let on = Lookahead::new(cues, u64::MAX, at).base;
        [off, on]
    }

    fn from_levels(cues: &'a CueHistory, mask: u64, at: u32, levels: &[[f64; NUM_CUE_KEYS]; 2]) -> Self {
        let mut base = [0.0; NUM_CUE_KEYS];
        for (key, b) in base.iter_mut().enumerate() {
            *b = levels[(mask >> key & 1) as usize][key];
        }
        Lookahead {
            cues,
            params: cues.params(),
            mask,
            next: cues.tick() + 1,
            at,
            base,
        }
    }

    fn hazard(&self, key: usize, approval: Option<u32>) -> f64 {
        let trace = self.cues.trace_by_key(key);
        let active = self.mask >> key & 1 == 1;
        let windows = trace.windows();
        let mut h: f64 = 0.0;
        for (i, w) in windows.iter().enumerate() {
            let offset = match w.offset {
                None if i + 1 == windows.len() && !active => Some(self.next),
                off => off,
            };
            h = h.max(table_top(self.params, Some(w.onset), offset, approval, self.at));
        }
        if active && !trace.is_active() {
            h = h.max(table_top(self.params, Some(self.next), None, approval, self.at));
        }
        h
    }

    /// `cache` memoizes hazards of particles that remember an approval.
    fn transition(&self, key: &ParticleKey, cache: &mut Vec<(usize, u32, f64)>) -> MentalDist {
        MentalDist::from_hazards(self.params.mistake_rate, self.hazards(key, cache))
    }

    fn hazards(&self, key: &ParticleKey, cache: &mut Vec<(usize, u32, f64)>) -> [f64; 3] {
        let keys = task_keys(key.task as usize);
        if key.memory == ApprovalMemory::default() {
            return keys.map(|k| self.base[k]);
        }
        let mut hz = [0.0; 3];
        for kind in ApprovalType::ALL {
            let k = keys[kind.idx()];
            hz[kind.idx()] = match key.memory.get(kind) {
                None => self.base[k],
                Some(a) => match cache.iter().find(|(ck, ca, _)| *ck == k && *ca == a) {
                    Some((_, _, v)) => *v,
                    None => {
                        let v = self.hazard(k, Some(a));
                        cache.push((k, a, v));
                        v
                    }
                },
            };
        }
        hz
    }
}

/// A belief inside the search, with its task marginal and the logarithms
/// the leaf evaluation reuses.
struct Node {
    particles: Particles,
    entropy: f64,
    ln_weight: [f64; NUM_TASKS],
    /// Particles of task `t` are `particles[start[t]..start[t + 1]]`.
    start: [usize; NUM_TASKS + 1],
}

impl Node {
    fn new(particles: Particles) -> Node {
        let m = marginal_of(&particles);
        let ln_weight = m.0.map(|w| if w > 0.0 { w.ln() } else { 0.0 });
        let entropy =
            m.0.iter()
                .zip(&ln_weight)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, l)| -w * l)
                .sum();
        let mut start = [0; NUM_TASKS + 1];
        for t in 0..NUM_TASKS {
            start[t + 1] = start[t]
                + particles[start[t]..]
                    .iter()
                    .take_while(|p| p.key.task as usize == t)
                    .count();
        }
        debug_assert_eq!(start[NUM_TASKS], particles.len());
        Node {
            particles,
            entropy,
            ln_weight,
            start,
        }
    }
}

/// Bitset of the tasks whose transition reads each cue key.
const TASKS_READING: [u32; NUM_CUE_KEYS] = {
    let mut out = [0; NUM_CUE_KEYS];
    let mut t = 0;
    while t < NUM_TASKS {
        let keys = task_keys(t);
        let mut i = 0;
        while i < 3 {
            out[keys[i]] |= 1 << t;
            i += 1;
        }
        t += 1;
    }
    out
};

/// Per-task pieces of a leaf evaluation, for silence (index 0) and a press
/// (index 1). Masks that differ in a few cue keys only need the tasks
/// reading those keys refilled.
#[derive(Clone)]
struct LeafTerms {
    mass: [[f64; NUM_TASKS]; 2],
    /// `mass * ln(mass)`.
    mass_ln: [[f64; NUM_TASKS]; 2],
    /// Smallest child weight, which decides whether pruning can bite.
    smallest: [[f64; NUM_TASKS]; 2],
    plain: [bool; NUM_TASKS],
}

impl LeafTerms {
    fn new() -> Self {
        LeafTerms {
            mass: [[0.0; NUM_TASKS]; 2],
            mass_ln: [[0.0; NUM_TASKS]; 2],
            smallest: [[f64::INFINITY; NUM_TASKS]; 2],
            plain: [true; NUM_TASKS],
        }
    }
}

/// Task marginal entropy of the belief `filter_step` would produce from
/// `node` for `obs`, computed without building it. `total` is the summed
/// weight of all children before pruning. Tasks untouched by any approval
/// hazard scale uniformly, so their logarithms come from the node.
fn branch_entropy(node: &Node, dists: &[MentalDist], obs: Observation, total: f64, mistake: f64) -> f64 {
    let (range, ln_scale) = match obs {
        Observation::NoSpacebar => (0..1, (1.0 - mistake).ln()),
        Observation::Spacebar => (1..5, mistake.ln()),
    };
    let mut marg = [0.0; NUM_TASKS];
    let mut plain = [true; NUM_TASKS];
    for (p, d) in node.particles.iter().zip(dists) {
        let t = p.key.task as usize;
        if d.0[2..].iter().any(|v| *v != 0.0) {
            plain[t] = false;
        }
        for v in &d.0[range.clone()] {
            if *v > 0.0 {
                let w = p.weight * v;
                if w / total >= PRUNE_THRESHOLD {
                    marg[t] += w;
                } else {
                    plain[t] = false;
                }
            }
        }
    }
    let kept: f64 = marg.iter().sum();
    let mut s = 0.0;
    for t in 0..NUM_TASKS {
        let m = marg[t];
        if m > 0.0 {
            s += m * if plain[t] { node.ln_weight[t] + ln_scale } else { m.ln() };
        }
    }
    kept.ln() - s / kept
}

/// The observation at the next tick, with its predictive probability.
/// `None` as belief marks a floored branch.
struct Branch {
    p: f64,
    node: Option<Node>,
}

impl Search {
    fn tick(&mut self) -> std::result::Result<(), Aborted> {
        self.nodes += 1;
        if self.nodes.is_multiple_of(64) {
            if let Some(d) = self.deadline {
                if Instant::now() >= d {
                    return Err(Aborted);
                }
            }
        }
        Ok(())
    }

    fn horizon_weight(&self, depth: u32) -> f64 {
        (0..depth).map(|k| self.gamma.powi(k as i32)).sum()
    }

    fn observation_probs(p_press: f64, silent: bool) -> [(Observation, f64); 2] {
        if silent {
            // Every press would be a mistake: both outcomes leave the same belief.
            [(Observation::NoSpacebar, 1.0), (Observation::Spacebar, 0.0)]
        } else {
            [
                (Observation::NoSpacebar, 1.0 - p_press),
                (Observation::Spacebar, p_press),
            ]
        }
    }

    /// Expected entropy after the tick `model` describes, for any action
    /// taken now.
    fn leaf(&mut self, node: &Node, model: &Lookahead<'_>) -> std::result::Result<f64, Aborted> {
        let mut terms = LeafTerms::new();
        self.fill_terms(node, model, u32::MAX, &mut terms);
        self.leaf_from_terms(node, model, &terms)
    }

    /// Recomputes the entries of `terms` for the tasks in bitset `tasks`.
    fn fill_terms(&mut self, node: &Node, model: &Lookahead<'_>, tasks: u32, terms: &mut LeafTerms) {
        let mistake = model.params.mistake_rate;
        let ln_scale = [(1.0 - mistake).ln(), mistake.ln()];
        let mut cache = std::mem::take(&mut self.hazard_cache);
        cache.clear();
        for t in 0..NUM_TASKS {
            if tasks >> t & 1 == 0 {
                continue;
            }
            let mut mass = [0.0; 2];
            let mut smallest = [f64::INFINITY; 2];
            let mut plain = true;
            for p in &node.particles[node.start[t]..node.start[t + 1]] {
                let hz = model.hazards(&p.key, &mut cache);
                let w = p.weight;
                let waiting = 1.0 - mistake - hz[0] - hz[1] - hz[2];
                if waiting > 0.0 {
                    let c = w * waiting;
                    mass[0] += c;
                    smallest[0] = smallest[0].min(c);
                }
                let mut least = if mistake > 0.0 { mistake } else { f64::INFINITY };
                let mut press = w * mistake;
                for v in hz {
                    if v > 0.0 {
                        plain = false;
                        least = least.min(v);
                        press += w * v;
                    }
                }
                mass[1] += press;
                smallest[1] = smallest[1].min(w * least);
            }
            for i in 0..2 {
                let m = mass[i];
                terms.mass[i][t] = m;
                terms.smallest[i][t] = smallest[i];
                // Plain tasks are a fixed multiple of their node weight.
                terms.mass_ln[i][t] = if m > 0.0 {
                    m * if plain { node.ln_weight[t] + ln_scale[i] } else { m.ln() }
                } else {
                    0.0
                };
            }
            terms.plain[t] = plain;
        }
        self.hazard_cache = cache;
    }

    fn leaf_from_terms(
        &mut self,
        node: &Node,
        model: &Lookahead<'_>,
        terms: &LeafTerms,
    ) -> std::result::Result<f64, Aborted> {
        self.tick()?;
        let totals = [terms.mass[0].iter().sum::<f64>(), terms.mass[1].iter().sum::<f64>()];
        let silent = terms.plain.iter().all(|p| *p);
        let p_press = totals[1].clamp(0.0, 1.0);
        let mut v = 0.0;
        for (obs, p) in Self::observation_probs(p_press, silent) {
            if p <= 0.0 {
                continue;
            }
            if p < BRANCH_FLOOR {
                v += p * node.entropy;
                continue;
            }
            let i = usize::from(obs.is_press());
            let smallest = terms.smallest[i].iter().copied().fold(f64::INFINITY, f64::min);
            let h = if smallest / totals[i] >= PRUNE_THRESHOLD {
                totals[i].ln() - terms.mass_ln[i].iter().sum::<f64>() / totals[i]
            } else {
                self.pruned_entropy(node, model, obs, totals[i])
            };
            v += p * h;
        }
        Ok(v)
    }

    fn pruned_entropy(&mut self, node: &Node, model: &Lookahead<'_>, obs: Observation, total: f64) -> f64 {
        let mut dists = std::mem::take(&mut self.scratch);
        let mut cache = std::mem::take(&mut self.hazard_cache);
        dists.clear();
        cache.clear();
        dists.extend(node.particles.iter().map(|p| model.transition(&p.key, &mut cache)));
        let h = branch_entropy(node, &dists, obs, total, model.params.mistake_rate);
        self.scratch = dists;
        self.hazard_cache = cache;
        h
    }

    /// Observation branches of the next tick. The approval hazard at the
    /// next tick is fixed by the cue history up to now (fresh cues start at
    /// zero, closing cues hold their level), so the update is shared by all
    /// actions and is computed from the `noa` successor.
    fn branches(
        &mut self,
        node: &Node,
        world: &WorldState,
        cues: &CueHistory,
    ) -> std::result::Result<Vec<Branch>, Aborted> {
        let mut noa = *world;
        noa.tick += 1;
        let next = cues.observed(&noa);
        let model = StepModel::new(&next);
        let particles = &node.particles;
        let p_press = press_probability(particles, &model).clamp(0.0, 1.0);
        let silent = no_approval_hazard(particles, &model);
        let mut out = Vec::with_capacity(2);
        for (obs, p) in Self::observation_probs(p_press, silent) {
            if p <= 0.0 {
                continue;
            }
            if p < BRANCH_FLOOR {
                out.push(Branch { p, node: None });
                continue;
            }
            self.tick()?;
            let child = filter_step(particles, &model, obs).map_err(|_| Aborted)?;
            out.push(Branch {
                p,
                node: Some(Node::new(child)),
            });
        }
        Ok(out)
    }

    /// Minimum over actions of the expected cost of the next `depth` ticks.
    fn value(
        &mut self,
        node: &Node,
        world: &WorldState,
        cues: &CueHistory,
        depth: u32,
    ) -> std::result::Result<f64, Aborted> {
        if depth == 1 {
            let model = Lookahead::new(cues, cue_mask(world), cues.tick() + 1);
            return self.leaf(node, &model);
        }
        let q = self.q_values(node, world, cues, depth)?;
        Ok(q.into_iter().map(|(_, v)| v).fold(f64::INFINITY, f64::min))
    }

    fn q_values(
        &mut self,
        node: &Node,
        world: &WorldState,
        cues: &CueHistory,
        depth: u32,
    ) -> std::result::Result<Vec<(Action, f64)>, Aborted> {
        let actions = world.valid_actions();
        if depth == 1 {
            let v = self.value(node, world, cues, 1)?;
            return Ok(actions.into_iter().map(|a| (a, v)).collect());
        }
        let branches = self.branches(node, world, cues)?;
        let node_entropy = node.entropy;
        let tail = self.horizon_weight(depth);
        let floored = |b: &Branch| b.p * node_entropy * tail;

        let mut q = Vec::with_capacity(actions.len());
        if depth == 2 {
            // Only the cues an action presents matter one tick before a leaf.
            // Each distinct mask is evaluated as a change to the mask `noa`
            // keeps showing.
            let reference = cue_mask(world);
            let mut masks = vec![reference];
            let mut slot = Vec::with_capacity(actions.len());
            for a in &actions {
                let mask = cue_mask(&world.apply(a).expect("valid action"));
                let i = masks.iter().position(|m| *m == mask).unwrap_or_else(|| {
                    masks.push(mask);
                    masks.len() - 1
                });
                slot.push(i);
            }
            let levels = Lookahead::levels(cues, cues.tick() + 2);
            let models: Vec<Lookahead<'_>> = masks
                .iter()
                .map(|m| Lookahead::from_levels(cues, *m, cues.tick() + 2, &levels))
                .collect();
            let changed: Vec<u32> = masks
                .iter()
                .map(|m| {
                    let diff = m ^ reference;
                    (0..NUM_CUE_KEYS)
                        .filter(|k| diff >> k & 1 == 1)
                        .fold(0, |acc, k| acc | TASKS_READING[k])
                })
                .collect();
            let mut values = vec![0.0; masks.len()];
            for b in &branches {
                let Some(child) = &b.node else {
                    for v in &mut values {
                        *v += floored(b);
                    }
                    continue;
                };
                let mut base = LeafTerms::new();
                self.fill_terms(child, &models[0], u32::MAX, &mut base);
                for (i, model) in models.iter().enumerate() {
                    let leaf = if i == 0 {
                        self.leaf_from_terms(child, model, &base)?
                    } else {
                        let mut terms = base.clone();
                        self.fill_terms(child, model, changed[i], &mut terms);
                        self.leaf_from_terms(child, model, &terms)?
                    };
                    values[i] += b.p * (child.entropy + self.gamma * leaf);
                }
            }
            return Ok(actions.into_iter().zip(slot).map(|(a, i)| (a, values[i])).collect());
        }
        for a in actions {
            let w = world.apply(&a).expect("valid action");
            let c = cues.observed(&w);
            let mut v = 0.0;
            for b in &branches {
                v += match &b.node {
                    None => floored(b),
                    Some(child) => b.p * (child.entropy + self.gamma * self.value(child, &w, &c, depth - 1)?),
                };
            }
            q.push((a, v));
        }
        Ok(q)
    }
}

fn no_approval_hazard(particles: &[Weighted<()>], model: &StepModel<'_>) -> bool {
    particles
        .iter()
        .all(|p| model.transition(&p.key).0[2..].iter().all(|v| *v == 0.0))
}

fn argmin(q: &[(Action, f64)]) -> (Action, f64) {
    let mut best = q[0];
    for &(a, v) in &q[1..] {
        if v < best.1 {
            best = (a, v);
        }
    }
    best
}

/// Q values of every valid action in `world` at lookahead `depth`, with no
/// deadline.
pub fn q_values(belief: &Belief, world: &WorldState, gamma: f64, depth: u32) -> Result<Vec<(Action, f64)>> {
    check_inputs(belief, world)?;
    let root = Node::new(strip(belief));
    Search::new(gamma, None)
        .q_values(&root, world, belief.cues(), depth.max(1))
        .map_err(|_| Error::ZeroLikelihood { tick: world.tick })
}

fn strip(belief: &Belief) -> Particles {
    belief
        .weighted()
        .iter()
        .map(|p| Weighted {
            key: p.key,
            weight: p.weight,
            payload: (),
        })
        .collect()
}

fn check_inputs(belief: &Belief, world: &WorldState) -> Result<()> {
    if belief.tick() != world.tick {
        return Err(Error::InvalidWorld(format!(
            "belief tick {} does not match world tick {}",
            belief.tick(),
            world.tick
        )));
    }
    Ok(())
}

/// Chooses the action minimizing the discounted sum of expected entropy
/// over the configured horizon. With a deadline, searches by iterative
/// deepening and returns the best action of the deepest completed depth
/// (`noa` if not even depth 1 completed).
pub fn plan(belief: &Belief, world: &WorldState, cfg: &PlannerConfig) -> Result<PlanResult> {
    cfg.validate()?;
    check_inputs(belief, world)?;
    let start = Instant::now();
    let root = Node::new(strip(belief));
    let mut search = Search::new(
        cfg.gamma,
        cfg.deadline().map(|d| start + d.saturating_sub(safety_margin(d))),
    );
    let depths: Vec<u32> = if search.deadline.is_some() {
        (1..=cfg.horizon_ticks).collect()
    } else {
        vec![cfg.horizon_ticks]
    };
    let mut best: Option<(u32, Vec<(Action, f64)>)> = None;
    let mut timed_out = false;
    for depth in depths {
        match search.q_values(&root, world, belief.cues(), depth) {
            Ok(q) => best = Some((depth, q)),
            Err(Aborted) => {
                timed_out = true;
                break;
            }
        }
    }
    let elapsed = start.elapsed();
    let nodes_expanded = search.nodes;
    Ok(match best {
        Some((depth, q)) => {
            let (action, expected_cost) = argmin(&q);
            PlanResult {
                action,
                expected_cost,
                nodes_expanded,
                elapsed,
                depth,
                timed_out,
                q_values: q,
            }
        }
        None => PlanResult {
            action: Action::Noa,
            expected_cost: f64::NAN,
            nodes_expanded,
            elapsed,
            depth: 0,
            timed_out,
            q_values: Vec::new(),
        },
    })
}

fn safety_margin(deadline: Duration) -> Duration {
    (deadline / 10).min(Duration::from_millis(20))
}

/// Actions that bring `world` to the state described by `task`, followed by
/// the "Final" display: release a foreign ball if the task ball must be
/// picked up, pick the task ball up unless it already sits relative to its
/// anchor, slide it in at the furthest level and step it to the target
/// distance.
pub fn completion_script(task: TaskHypothesis, world: &WorldState) -> Vec<Action> {
    let mut steps = Vec::new();
    let on_anchor = world.relation(task.mov).filter(|r| r.anchor == task.wrt);
    let mut level = match on_anchor {
        Some(r) => r.distance,
        None => {
            if world.held != Some(task.mov) {
                if let Some(other) = world.held {
                    steps.push(Action::Release(other));
                }
                steps.push(Action::PickUp(task.mov));
            }
            steps.push(Action::Slide {
                ball: task.mov,
                distance: DistanceLevel::FURTHEST,
                anchor: task.wrt,
            });
            DistanceLevel::FURTHEST
        }
    };
    while level != task.dist {
        level = level.step_toward(task.dist);
        steps.push(Action::Slide {
            ball: task.mov,
            distance: level,
            anchor: task.wrt,
        });
    }
    steps.push(Action::Final(task));
    steps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::{ApprovalMemory, TeacherParams};
    use crate::world::BallId;

    fn b(i: u8) -> BallId {
        BallId::new(i).unwrap()
    }
    fn task(m: u8, w: u8, d: u8) -> TaskHypothesis {
        TaskHypothesis::new(b(m), b(w), DistanceLevel::new(d).unwrap()).unwrap()
    }
    fn slide(i: u8, d: u8, j: u8) -> Action {
        Action::Slide {
            ball: b(i),
            distance: DistanceLevel::new(d).unwrap(),
            anchor: b(j),
        }
    }

    /// Expectimax straight from `Belief::update`, with none of the
    /// planner's sharing or shortcuts.
    fn naive_value(belief: &Belief, world: &WorldState, depth: u32) -> f64 {
        naive_q(belief, world, depth)
            .into_iter()
            .map(|(_, v)| v)
            .fold(f64::INFINITY, f64::min)
    }

    fn naive_q(belief: &Belief, world: &WorldState, depth: u32) -> Vec<(Action, f64)> {
        world
            .valid_actions()
            .into_iter()
            .map(|a| {
                let w = world.apply(&a).unwrap();
                let cues = belief.cues().observed(&w);
                let p_press = press_probability(belief.weighted(), &StepModel::new(&cues));
                let mut v = 0.0;
                for (obs, p) in [
                    (Observation::NoSpacebar, 1.0 - p_press),
                    (Observation::Spacebar, p_press),
                ] {
                    if p <= 0.0 {
                        continue;
                    }
                    let child = belief.update(&a, &w, obs).unwrap();
                    let rest = if depth > 1 {
                        naive_value(&child, &w, depth - 1)
                    } else {
                        0.0
                    };
                    v += p * (child.entropy() + rest);
                }
                (a, v)
            })
            .collect()
    }

    fn lit_belief() -> (Belief, WorldState) {
        let mut belief = Belief::initial(TeacherParams::default());
        let mut w = WorldState::initial();
        for (a, o) in [
            (Action::LightOn(b(1)), Observation::NoSpacebar),
            (Action::Noa, Observation::NoSpacebar),
            (Action::Noa, Observation::Spacebar),
            (Action::PickUp(b(1)), Observation::NoSpacebar),
        ] {
            w = w.apply(&a).unwrap();
            belief = belief.update(&a, &w, o).unwrap();
        }
        (belief, w)
    }

    #[test]
    fn matches_naive_expectimax() {
        let (belief, w) = lit_belief();
        for depth in 1..=3 {
            let fast = q_values(&belief, &w, 1.0, depth).unwrap();
            let slow = naive_q(&belief, &w, depth);
            for ((a1, v1), (a2, v2)) in fast.iter().zip(&slow) {
                assert_eq!(a1, a2);
                assert!((v1 - v2).abs() < 1e-9, "depth {depth} {a1}: {v1} vs {v2}");
            }
        }
    }

    #[test]
    fn depth_one_is_closed_form() {
        let (belief, w) = lit_belief();
        let q = q_values(&belief, &w, 1.0, 1).unwrap();
        for (a, v) in q {
            let w1 = w.apply(&a).unwrap();
            let cues = belief.cues().observed(&w1);
            let p = press_probability(belief.weighted(), &StepModel::new(&cues));
            let quiet = belief.update(&a, &w1, Observation::NoSpacebar).unwrap();
            let press = belief.update(&a, &w1, Observation::Spacebar).unwrap();
            let closed = (1.0 - p) * quiet.entropy() + p * press.entropy();
            assert!((v - closed).abs() < 1e-12, "{a}: {v} vs {closed}");
        }
    }

    #[test]
    fn silence_baseline() {
        // A cue presented at the next tick carries no hazard until the one
        // after, so staying idle teaches nothing.
        let belief = Belief::initial(TeacherParams::default());
        let w = WorldState::initial();
        for (a, v) in q_values(&belief, &w, 1.0, 1).unwrap() {
            assert!((v - 24f64.ln()).abs() < 1e-12, "{a}: {v}");
        }
        let q = q_values(&belief, &w, 1.0, 2).unwrap();
        assert!((q[0].1 - 2.0 * 24f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn initial_choice_beats_noa() {
        let belief = Belief::initial(TeacherParams::default());
        let w = WorldState::initial();
        let r = plan(&belief, &w, &PlannerConfig::fast()).unwrap();
        let noa = r.q_values.iter().find(|(a, _)| *a == Action::Noa).unwrap().1;
        assert!(r.expected_cost < noa, "{} vs {noa}", r.expected_cost);
        assert_ne!(r.action, Action::Noa);
        assert!(w.is_valid(&r.action));
    }

    #[test]
    fn point_mass_ties_to_noa() {
        let h = task(1, 2, 3);
        let w = WorldState::initial();
        let belief = Belief::from_weights(
            CueHistory::new(TeacherParams::default(), &w),
            [(h, ApprovalMemory::default(), 1.0)],
        )
        .unwrap();
        let r = plan(&belief, &w, &PlannerConfig::fast()).unwrap();
        assert_eq!(r.action, Action::Noa);
        assert!(r.q_values.iter().all(|(_, v)| v.abs() < 1e-15), "{:?}", r.q_values);
    }

    #[test]
    fn deadline_falls_back_to_noa() {
        let (belief, w) = lit_belief();
        let cfg = PlannerConfig {
            deadline_ms: 0,
            ..Default::default()
        };
        let r = plan(&belief, &w, &cfg).unwrap();
        assert!(r.depth < cfg.horizon_ticks);
        if r.depth == 0 {
            assert_eq!(r.action, Action::Noa);
        }
    }

    #[test]
    fn tick_mismatch_is_rejected() {
        let belief = Belief::initial(TeacherParams::default());
        let w = WorldState::initial().apply(&Action::Noa).unwrap();
        assert!(plan(&belief, &w, &PlannerConfig::fast()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PlannerConfig::default().validate().is_ok());
        for bad in [
            PlannerConfig {
                horizon_ticks: 0,
                ..Default::default()
            },
            PlannerConfig {
                gamma: 1.5,
                ..Default::default()
            },
            PlannerConfig {
                final_threshold: 0.5,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        let c: PlannerConfig = serde_json::from_str(r#"{"horizon_ticks": 3, "fast_mode": true}"#).unwrap();
        assert_eq!(c.horizon_ticks, 3);
        assert_eq!(c.deadline(), None);
    }

    fn run_script(w: &WorldState, steps: &[Action]) -> WorldState {
        steps.iter().fold(*w, |w, a| w.apply(a).unwrap())
    }

    #[test]
    fn completion_examples() {
        let held1 = WorldState::initial().apply(&Action::PickUp(b(1))).unwrap();

        let s = completion_script(task(1, 2, 1), &held1);
        assert_eq!(
            s,
            vec![
                slide(1, 4, 2),
                slide(1, 3, 2),
                slide(1, 2, 2),
                slide(1, 1, 2),
                Action::Final(task(1, 2, 1))
            ]
        );

        let placed = held1.apply(&slide(1, 4, 2)).unwrap();
        assert_eq!(
            completion_script(task(1, 2, 4), &placed),
            vec![Action::Final(task(1, 2, 4))]
        );

        let s = completion_script(task(2, 3, 4), &held1);
        assert_eq!(
            s,
            vec![
                Action::Release(b(1)),
                Action::PickUp(b(2)),
                slide(2, 4, 3),
                Action::Final(task(2, 3, 4))
            ]
        );
    }

    #[test]
    fn completion_reaches_every_task_from_random_worlds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut w = WorldState::initial();
            for _ in 0..rng.random_range(0..30) {
                let acts = w.valid_actions();
                w = w.apply(&acts[rng.random_range(0..acts.len())]).unwrap();
            }
            for h in TaskHypothesis::all() {
                let end = run_script(&w, &completion_script(h, &w));
                assert_eq!(end.final_displayed, Some(h));
                assert!(end.placed(h.mov, h.wrt, h.dist));
            }
        }
    }
}
