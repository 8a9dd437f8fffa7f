//! The probabilistic teacher: hidden task, per-tick mental state, the
//! table-top approval hazard and the deterministic spacebar observation model.

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::world::{BallId, DistanceLevel, WorldState, NUM_BALLS, NUM_LEVELS};

/// Number of distinct task hypotheses: 3 balls x 2 anchors x 4 distances.
pub const NUM_TASKS: usize = NUM_BALLS * (NUM_BALLS - 1) * NUM_LEVELS;

/// One assignment to (Mov, WRT, Dist).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "TaskRepr")]
pub struct TaskHypothesis {
    pub mov: BallId,
    pub wrt: BallId,
    pub dist: DistanceLevel,
}

#[derive(Deserialize)]
struct TaskRepr {
    mov: BallId,
    wrt: BallId,
    dist: DistanceLevel,
}

impl TryFrom<TaskRepr> for TaskHypothesis {
    type Error = Error;
    fn try_from(r: TaskRepr) -> Result<Self> {
        TaskHypothesis::new(r.mov, r.wrt, r.dist)
    }
}

impl TaskHypothesis {
    pub fn new(mov: BallId, wrt: BallId, dist: DistanceLevel) -> Result<Self> {
        if mov == wrt {
            return Err(Error::OutOfRange(format!("task moves ball {mov} relative to itself")));
        }
        Ok(TaskHypothesis { mov, wrt, dist })
    }

    /// Parses `"i,j,d"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<_> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::OutOfRange(format!("task `{s}` is not of the form i,j,d")));
        }
        let num = |p: &str| {
            p.parse::<u8>()
                .map_err(|_| Error::OutOfRange(format!("`{p}` is not a small integer")))
        };
        TaskHypothesis::new(
            BallId::new(num(parts[0])?)?,
            BallId::new(num(parts[1])?)?,
            DistanceLevel::new(num(parts[2])?)?,
        )
    }

    /// Dense index in `0..24`: mov-major, then anchor, then distance.
    pub fn index(self) -> usize {
        self.mov.idx() * 8 + self.wrt_slot() * 4 + self.dist.idx()
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < NUM_TASKS, "task index {i} out of range");
        let mov = i / 8;
        let slot = (i / 4) % 2;
        // The two other balls in ascending order.
        let wrt = if slot < mov { slot } else { slot + 1 };
        TaskHypothesis {
            mov: BallId::from_idx(mov),
            wrt: BallId::from_idx(wrt),
            dist: DistanceLevel::ALL[i % 4],
        }
    }

    pub fn all() -> impl Iterator<Item = TaskHypothesis> {
        (0..NUM_TASKS).map(TaskHypothesis::from_index)
    }

    /// 0 if the anchor is the lower-numbered of the two other balls.
    fn wrt_slot(self) -> usize {
        let lower = usize::from(self.mov.idx() == 0);
        usize::from(self.wrt.idx() != lower)
    }

    /// Index of the cue trace that drives approval type `kind` under this
    /// hypothesis. Hypotheses sharing the cue-relevant components share a
    /// trace.
    pub fn cue_key(self, kind: ApprovalType) -> usize {
        match kind {
            ApprovalType::Mov => self.mov.idx(),
            ApprovalType::Wrt => NUM_BALLS + self.mov.idx() * 2 + self.wrt_slot(),
            ApprovalType::Dist => NUM_BALLS + NUM_BALLS * 2 + self.index(),
        }
    }
}

impl fmt::Display for TaskHypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.mov, self.wrt, self.dist.get())
    }
}

/// The three approval kinds a press can express.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalType {
    Mov,
    Wrt,
    Dist,
}

impl ApprovalType {
    pub const ALL: [ApprovalType; 3] = [ApprovalType::Mov, ApprovalType::Wrt, ApprovalType::Dist];

    pub fn idx(self) -> usize {
        self as usize
    }

    pub fn mental(self) -> MentalState {
        match self {
            ApprovalType::Mov => MentalState::ThatMov,
            ApprovalType::Wrt => MentalState::ThatWrt,
            ApprovalType::Dist => MentalState::ThatDist,
        }
    }
}

/// The teacher's hidden per-tick state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentalState {
    Waiting,
    Mistake,
    ThatMov,
    ThatWrt,
    ThatDist,
}

impl MentalState {
    pub const ALL: [MentalState; 5] = [
        MentalState::Waiting,
        MentalState::Mistake,
        MentalState::ThatMov,
        MentalState::ThatWrt,
        MentalState::ThatDist,
    ];

    pub fn idx(self) -> usize {
        self as usize
    }

    pub fn approval(self) -> Option<ApprovalType> {
        match self {
            MentalState::ThatMov => Some(ApprovalType::Mov),
            MentalState::ThatWrt => Some(ApprovalType::Wrt),
            MentalState::ThatDist => Some(ApprovalType::Dist),
            _ => None,
        }
    }

    /// Position among the four press interpretations
    /// (mistake, that_mov, that_wrt, that_dist); `None` for waiting.
    pub fn press_idx(self) -> Option<usize> {
        match self {
            MentalState::Waiting => None,
            m => Some(m.idx() - 1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MentalState::Waiting => "waiting",
            MentalState::Mistake => "mistake",
            MentalState::ThatMov => "that_mov",
            MentalState::ThatWrt => "that_wrt",
            MentalState::ThatDist => "that_dist",
        }
    }
}

/// Binary per-tick observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    NoSpacebar,
    Spacebar,
}

impl Observation {
    pub fn is_press(self) -> bool {
        self == Observation::Spacebar
    }
}

/// P(spacebar | M): zero while waiting, one otherwise.
pub fn observation_prob(m: MentalState) -> f64 {
    match m {
        MentalState::Waiting => 0.0,
        _ => 1.0,
    }
}

/// Last tick at which the teacher approved each kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ApprovalMemory {
    pub last_that_mov: Option<u32>,
    pub last_that_wrt: Option<u32>,
    pub last_that_dist: Option<u32>,
}

impl ApprovalMemory {
    pub fn get(&self, kind: ApprovalType) -> Option<u32> {
        match kind {
            ApprovalType::Mov => self.last_that_mov,
            ApprovalType::Wrt => self.last_that_wrt,
            ApprovalType::Dist => self.last_that_dist,
        }
    }

    pub fn set(&mut self, kind: ApprovalType, tick: Option<u32>) {
        match kind {
            ApprovalType::Mov => self.last_that_mov = tick,
            ApprovalType::Wrt => self.last_that_wrt = tick,
            ApprovalType::Dist => self.last_that_dist = tick,
        }
    }

    pub fn stamped(mut self, kind: ApprovalType, tick: u32) -> Self {
        self.set(kind, Some(tick));
        self
    }

    pub fn ticks(&self) -> impl Iterator<Item = u32> + '_ {
        ApprovalType::ALL.into_iter().filter_map(|k| self.get(k))
    }
}

fn default_mistake_rate() -> f64 {
    0.005
}
fn default_peak() -> f64 {
    0.1
}
fn default_two_seconds() -> f64 {
    2.0
}
fn default_tick_seconds() -> f64 {
    0.5
}

/// Parameters of the teacher's mental-state dynamics. Probabilities are per
/// tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherParams {
    #[serde(default = "default_mistake_rate")]
    pub mistake_rate: f64,
    #[serde(default = "default_peak")]
    pub peak: f64,
    #[serde(default = "default_two_seconds")]
    pub ramp_seconds: f64,
    #[serde(default = "default_two_seconds")]
    pub decay_seconds: f64,
    #[serde(default = "default_tick_seconds")]
    pub tick_seconds: f64,
}

/// Scale factors applied to the simulated teacher's true parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub mistake_scale: f64,
    pub peak_scale: f64,
}

impl Default for Mismatch {
    fn default() -> Self {
        Mismatch {
            mistake_scale: 1.0,
            peak_scale: 1.0,
        }
    }
}

impl Default for TeacherParams {
    fn default() -> Self {
        TeacherParams {
            mistake_rate: default_mistake_rate(),
            peak: default_peak(),
            ramp_seconds: default_two_seconds(),
            decay_seconds: default_two_seconds(),
            tick_seconds: default_tick_seconds(),
        }
    }
}

impl TeacherParams {
    /// A teacher whose mistake rate and peak hazard differ from the model's
    /// by the given factors.
    pub fn mismatched(&self, m: &Mismatch) -> Self {
        TeacherParams {
            mistake_rate: self.mistake_rate * m.mistake_scale,
            peak: self.peak * m.peak_scale,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.mistake_rate,
            self.peak,
            self.ramp_seconds,
            self.decay_seconds,
            self.tick_seconds,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite teacher parameter".into()));
        }
        if self.mistake_rate < 0.0 || self.peak < 0.0 {
            return Err(Error::InvalidParams("negative probability".into()));
        }
        if self.mistake_rate + 3.0 * self.peak > 1.0 + 1e-12 {
            return Err(Error::InvalidParams(format!(
                "mistake_rate + 3*peak = {} exceeds 1",
                self.mistake_rate + 3.0 * self.peak
            )));
        }
        if self.ramp_seconds < 0.0 || self.decay_seconds < 0.0 || self.tick_seconds <= 0.0 {
            return Err(Error::InvalidParams(
                "durations must be non-negative, tick positive".into(),
            ));
        }
        Ok(())
    }

    fn ramp(&self, ticks: u32) -> f64 {
        let s = ticks as f64 * self.tick_seconds;
        if self.ramp_seconds <= 0.0 {
            return self.peak;
        }
        (self.peak * s / self.ramp_seconds).min(self.peak)
    }

    fn decay_factor(&self, ticks: u32) -> f64 {
        let s = ticks as f64 * self.tick_seconds;
        if self.decay_seconds <= 0.0 {
            return if ticks == 0 { 1.0 } else { 0.0 };
        }
        (1.0 - s / self.decay_seconds).max(0.0)
    }

    fn decayed_out(&self, ticks_since_offset: u32) -> bool {
        ticks_since_offset as f64 * self.tick_seconds >= self.decay_seconds
    }
}

/// Approval hazard for one activation of a cue.
///
/// Zero without an onset. While active the hazard ramps linearly from zero
/// to `peak` over `ramp_seconds`; after `offset` it decays linearly from the
/// level reached at the offset to zero over `decay_seconds`. An approval at
/// or after the onset restarts the ramp from that tick; an approval at or
/// after the offset silences the tail. An `offset` at or before `onset`
/// belongs to an earlier activation and is ignored.
pub fn table_top(
    params: &TeacherParams,
    onset: Option<u32>,
    offset: Option<u32>,
    last_approval: Option<u32>,
    now: u32,
) -> f64 {
    let Some(onset) = onset else {
        return 0.0;
    };
    let closed = offset.filter(|off| *off > onset);
    let mut start = onset;
    if let Some(a) = last_approval.filter(|a| *a >= onset) {
        if closed.is_some_and(|off| a >= off) {
            return 0.0;
        }
        start = a;
    }
    match closed {
        Some(off) if now >= off => params.ramp(off.saturating_sub(start)) * params.decay_factor(now - off),
        _ => params.ramp(now.saturating_sub(start)),
    }
}

/// One activation interval of a cue; `offset` is `None` while active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CueWindow {
    pub onset: u32,
    pub offset: Option<u32>,
}

/// Activation history of one cue, keeping only windows that can still
/// contribute hazard.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct CueTrace {
    windows: SmallVec<[CueWindow; 3]>,
}

impl CueTrace {
    /// Most recent onset.
    pub fn onset(&self) -> Option<u32> {
        self.windows.last().map(|w| w.onset)
    }

    /// Most recent offset (of a window that has closed).
    pub fn offset(&self) -> Option<u32> {
        self.windows.iter().rev().find_map(|w| w.offset)
    }

    pub fn is_active(&self) -> bool {
        self.windows.last().is_some_and(|w| w.offset.is_none())
    }

    pub fn windows(&self) -> &[CueWindow] {
        &self.windows
    }

    /// Hazard at `now`: the largest contribution among retained windows.
    /// A cue re-activated while an earlier activation still decays keeps
    /// the larger of the residual tail and the fresh ramp.
    pub fn hazard(&self, params: &TeacherParams, last_approval: Option<u32>, now: u32) -> f64 {
        self.windows
            .iter()
            .map(|w| table_top(params, Some(w.onset), w.offset, last_approval, now))
            .fold(0.0, f64::max)
    }

    /// Whether an approval at `tick` can still influence any future hazard.
    pub fn approval_relevant(&self, tick: u32) -> bool {
        self.windows.iter().any(|w| w.onset <= tick)
    }

    fn advance(&mut self, params: &TeacherParams, active: bool, now: u32) {
        match (self.is_active(), active) {
            (false, true) => self.windows.push(CueWindow {
                onset: now,
                offset: None,
            }),
            (true, false) => {
                if let Some(w) = self.windows.last_mut() {
                    w.offset = Some(now);
                }
            }
            _ => {}
        }
        self.windows
            .retain(|w| w.offset.is_none_or(|off| !params.decayed_out(now - off)));
    }
}

/// Number of distinct cue traces: mov cues depend on Mov, wrt cues on
/// (Mov, WRT), dist cues on the whole hypothesis.
pub const NUM_CUE_KEYS: usize = NUM_BALLS + NUM_BALLS * 2 + NUM_TASKS;

/// Whether the world currently presents the cue for approval kind `kind`
/// under hypothesis `h`.
pub fn cue_active(h: TaskHypothesis, kind: ApprovalType, w: &WorldState) -> bool {
    match kind {
        ApprovalType::Mov => w.light(h.mov) && w.held.is_none(),
        ApprovalType::Wrt => w.light(h.wrt) && w.held == Some(h.mov),
        ApprovalType::Dist => w.placed(h.mov, h.wrt, h.dist),
    }
}

/// Bit `k` is set when cue key `k` is active in `world`.
pub(crate) fn cue_mask(world: &WorldState) -> u64 {
    let mut mask = 0u64;
    match world.held {
        None => {
            for b in BallId::ALL {
                if world.light(b) {
                    mask |= 1 << b.idx();
                }
            }
        }
        Some(m) => {
            for wrt in BallId::ALL {
                if wrt != m && world.light(wrt) {
                    let h = TaskHypothesis {
                        mov: m,
                        wrt,
                        dist: DistanceLevel::NEAREST,
                    };
                    mask |= 1 << h.cue_key(ApprovalType::Wrt);
                }
            }
        }
    }
    for b in BallId::ALL {
        if let Some(r) = world.relation(b) {
            let h = TaskHypothesis {
                mov: b,
                wrt: r.anchor,
                dist: r.distance,
            };
            mask |= 1 << h.cue_key(ApprovalType::Dist);
        }
    }
    mask
}

/// Cue traces for every hypothesis, derived from the observable world
/// history alone.
#[derive(Debug, Clone, PartialEq)]
pub struct CueHistory {
    params: TeacherParams,
    traces: Vec<CueTrace>,
    tick: u32,
}

/// Representative hypothesis and kind for each cue key.
#[cfg(test)]
fn key_owner(key: usize) -> (TaskHypothesis, ApprovalType) {
    let wrt_base = NUM_BALLS;
    let dist_base = NUM_BALLS * 3;
    if key < wrt_base {
        (TaskHypothesis::from_index(key * 8), ApprovalType::Mov)
    } else if key < dist_base {
        (TaskHypothesis::from_index((key - wrt_base) * 4), ApprovalType::Wrt)
    } else {
        (TaskHypothesis::from_index(key - dist_base), ApprovalType::Dist)
    }
}

impl CueHistory {
    /// History that has observed only `world`.
    pub fn new(params: TeacherParams, world: &WorldState) -> Self {
        let mut h = CueHistory {
            params,
            traces: vec![CueTrace::default(); NUM_CUE_KEYS],
            tick: world.tick,
        };
        h.record(world);
        h
    }

    pub fn params(&self) -> &TeacherParams {
        &self.params
    }

    pub fn tick(&self) -> u32 {
        self.tick
    }

    /// Advances the history to `world`, which must be the next tick.
    pub fn observe(&mut self, world: &WorldState) {
        debug_assert!(world.tick >= self.tick);
        self.tick = world.tick;
        self.record(world);
    }

    pub fn observed(&self, world: &WorldState) -> Self {
        let mut next = self.clone();
        next.observe(world);
        next
    }

    fn record(&mut self, world: &WorldState) {
        let now = world.tick;
        let mask = cue_mask(world);
        for (key, trace) in self.traces.iter_mut().enumerate() {
            trace.advance(&self.params, mask >> key & 1 == 1, now);
        }
    }

    pub fn trace(&self, h: TaskHypothesis, kind: ApprovalType) -> &CueTrace {
        &self.traces[h.cue_key(kind)]
    }

    pub(crate) fn trace_by_key(&self, key: usize) -> &CueTrace {
        &self.traces[key]
    }

    /// Approval hazard for `kind` under `h` at the current tick.
    pub fn hazard(&self, h: TaskHypothesis, kind: ApprovalType, last_approval: Option<u32>) -> f64 {
        self.trace(h, kind).hazard(&self.params, last_approval, self.tick)
    }

    /// Hazards for every cue key assuming no relevant approval.
    pub(crate) fn base_hazards(&self) -> [f64; NUM_CUE_KEYS] {
        let mut out = [0.0; NUM_CUE_KEYS];
        for (o, t) in out.iter_mut().zip(&self.traces) {
            *o = t.hazard(&self.params, None, self.tick);
        }
        out
    }

    /// Drops approvals that can no longer affect any hazard under `h`.
    pub fn canonical_memory(&self, h: TaskHypothesis, mut mem: ApprovalMemory) -> ApprovalMemory {
        for kind in ApprovalType::ALL {
            if let Some(a) = mem.get(kind) {
                if !self.trace(h, kind).approval_relevant(a) {
                    mem.set(kind, None);
                }
            }
        }
        mem
    }
}

/// Distribution over the five mental states, indexed by [`MentalState::idx`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MentalDist(pub [f64; 5]);

impl MentalDist {
    pub fn p(&self, m: MentalState) -> f64 {
        self.0[m.idx()]
    }

    /// P(spacebar) under the deterministic observation model.
    pub fn press_prob(&self) -> f64 {
        1.0 - self.0[MentalState::Waiting.idx()]
    }

    pub(crate) fn from_hazards(mistake: f64, hz: [f64; 3]) -> MentalDist {
        let waiting = 1.0 - mistake - hz[0] - hz[1] - hz[2];
        MentalDist([waiting, mistake, hz[0], hz[1], hz[2]])
    }
}

/// Distribution of the teacher's next mental state under hypothesis `h`,
/// approval memory `mem` and the cue history at its current tick `now`.
pub fn mental_transition(
    params: &TeacherParams,
    h: TaskHypothesis,
    mem: &ApprovalMemory,
    cues: &CueHistory,
    now: u32,
) -> Result<MentalDist> {
    let mut hz = [0.0; 3];
    for kind in ApprovalType::ALL {
        hz[kind.idx()] = cues.trace(h, kind).hazard(params, mem.get(kind), now);
    }
    let dist = MentalDist::from_hazards(params.mistake_rate, hz);
    if dist.p(MentalState::Waiting) < -1e-12 {
        return Err(Error::InvalidParams(format!(
            "waiting probability {} is negative",
            dist.p(MentalState::Waiting)
        )));
    }
    Ok(dist)
}
