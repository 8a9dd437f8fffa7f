//! The virtual world: three balls, per-ball lights, one gripper and purely
//! relational ball placements.
//!
//! The world is discrete, fully observable and deterministic. Every action
//! advances the clock by one tick.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::teacher::TaskHypothesis;

/// Number of balls in the world.
pub const NUM_BALLS: usize = 3;
/// Number of distance levels a ball can be placed at.
pub const NUM_LEVELS: usize = 4;

/// A ball index in `1..=3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BallId(u8);

impl BallId {
    pub const ALL: [BallId; NUM_BALLS] = [BallId(1), BallId(2), BallId(3)];

    pub fn new(index: u8) -> Result<Self> {
        if (1..=NUM_BALLS as u8).contains(&index) {
            Ok(BallId(index))
        } else {
            Err(Error::OutOfRange(format!("ball index {index} not in 1..=3")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position, for array indexing.
    pub fn idx(self) -> usize {
        self.0 as usize - 1
    }

    pub(crate) fn from_idx(idx: usize) -> Self {
        debug_assert!(idx < NUM_BALLS);
        BallId(idx as u8 + 1)
    }
}

impl TryFrom<u8> for BallId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        BallId::new(v)
    }
}

impl From<BallId> for u8 {
    fn from(b: BallId) -> u8 {
        b.0
    }
}

impl fmt::Display for BallId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Relative distance between two balls, `1` (nearest) to `4` (furthest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DistanceLevel(u8);

impl DistanceLevel {
    pub const ALL: [DistanceLevel; NUM_LEVELS] =
        [DistanceLevel(1), DistanceLevel(2), DistanceLevel(3), DistanceLevel(4)];
    pub const NEAREST: DistanceLevel = DistanceLevel(1);
    pub const FURTHEST: DistanceLevel = DistanceLevel(4);

    pub fn new(level: u8) -> Result<Self> {
        if (1..=NUM_LEVELS as u8).contains(&level) {
            Ok(DistanceLevel(level))
        } else {
            Err(Error::OutOfRange(format!("distance level {level} not in 1..=4")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn idx(self) -> usize {
        self.0 as usize - 1
    }

    /// True when the two levels are exactly one step apart.
    pub fn adjacent(self, other: DistanceLevel) -> bool {
        self.0.abs_diff(other.0) == 1
    }

    /// The next level one step toward `target`, or `self` if already there.
    pub fn step_toward(self, target: DistanceLevel) -> DistanceLevel {
        match self.0.cmp(&target.0) {
            std::cmp::Ordering::Less => DistanceLevel(self.0 + 1),
            std::cmp::Ordering::Greater => DistanceLevel(self.0 - 1),
            std::cmp::Ordering::Equal => self,
        }
    }
}

impl TryFrom<u8> for DistanceLevel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        DistanceLevel::new(v)
    }
}

impl From<DistanceLevel> for u8 {
    fn from(d: DistanceLevel) -> u8 {
        d.0
    }
}

/// Placement of a ball at some distance from an anchor ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub anchor: BallId,
    pub distance: DistanceLevel,
}

/// Complete observable state of the world at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "WorldRepr")]
pub struct WorldState {
    pub tick: u32,
    pub lights: [bool; NUM_BALLS],
    pub held: Option<BallId>,
    pub relations: [Option<Relation>; NUM_BALLS],
    #[serde(rename = "final")]
    pub final_displayed: Option<TaskHypothesis>,
}

#[derive(Deserialize)]
struct WorldRepr {
    tick: u32,
    lights: [bool; NUM_BALLS],
    held: Option<BallId>,
    relations: [Option<Relation>; NUM_BALLS],
    #[serde(rename = "final")]
    final_displayed: Option<TaskHypothesis>,
}

impl TryFrom<WorldRepr> for WorldState {
    type Error = Error;
    fn try_from(r: WorldRepr) -> Result<Self> {
        let w = WorldState {
            tick: r.tick,
            lights: r.lights,
            held: r.held,
            relations: r.relations,
            final_displayed: r.final_displayed,
        };
        w.check_invariants()?;
        Ok(w)
    }
}

impl Default for WorldState {
    fn default() -> Self {
        Self::initial()
    }
}

/// A robot action. The six planner actions plus the terminal "Final"
/// display, which only the completion script emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Noa,
    LightOn(BallId),
    LightOff(BallId),
    PickUp(BallId),
    Release(BallId),
    /// Slide `ball` to `distance` from `anchor`.
    Slide {
        ball: BallId,
        distance: DistanceLevel,
        anchor: BallId,
    },
    /// Display "Final" for the given task. Not part of `valid_actions`.
    Final(TaskHypothesis),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Noa => write!(f, "noa"),
            Action::LightOn(b) => write!(f, "light_on({b})"),
            Action::LightOff(b) => write!(f, "light_off({b})"),
            Action::PickUp(b) => write!(f, "pick_up({b})"),
            Action::Release(b) => write!(f, "release({b})"),
            Action::Slide { ball, distance, anchor } => write!(f, "slide({ball},{},{anchor})", distance.get()),
            Action::Final(h) => write!(f, "final({h})"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ActionRepr {
    #[serde(rename = "type")]
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    ball: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    ball2: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    distance: Option<u8>,
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (kind, ball, ball2, distance) = match *self {
            Action::Noa => ("noa", None, None, None),
            Action::LightOn(b) => ("light_on", Some(b.get()), None, None),
            Action::LightOff(b) => ("light_off", Some(b.get()), None, None),
            Action::PickUp(b) => ("pick_up", Some(b.get()), None, None),
            Action::Release(b) => ("release", Some(b.get()), None, None),
            Action::Slide { ball, distance, anchor } => {
                ("slide", Some(ball.get()), Some(anchor.get()), Some(distance.get()))
            }
            Action::Final(h) => ("final", Some(h.mov.get()), Some(h.wrt.get()), Some(h.dist.get())),
        };
        ActionRepr {
            kind: kind.to_string(),
            ball,
            ball2,
            distance,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ActionRepr::deserialize(d)?;
        let ball = |v: Option<u8>, name: &str| -> std::result::Result<BallId, D::Error> {
            let v = v.ok_or_else(|| D::Error::custom(format!("missing field `{name}`")))?;
            BallId::new(v).map_err(D::Error::custom)
        };
        let level = |v: Option<u8>| -> std::result::Result<DistanceLevel, D::Error> {
            let v = v.ok_or_else(|| D::Error::custom("missing field `distance`"))?;
            DistanceLevel::new(v).map_err(D::Error::custom)
        };
        Ok(match r.kind.as_str() {
            "noa" => Action::Noa,
            "light_on" => Action::LightOn(ball(r.ball, "ball")?),
            "light_off" => Action::LightOff(ball(r.ball, "ball")?),
            "pick_up" => Action::PickUp(ball(r.ball, "ball")?),
            "release" => Action::Release(ball(r.ball, "ball")?),
            "slide" => {
                let (b, a) = (ball(r.ball, "ball")?, ball(r.ball2, "ball2")?);
                if a == b {
                    return Err(D::Error::custom("slide anchor equals moved ball"));
                }
                Action::Slide {
                    ball: b,
                    distance: level(r.distance)?,
                    anchor: a,
                }
            }
            "final" => Action::Final(
                TaskHypothesis::new(ball(r.ball, "ball")?, ball(r.ball2, "ball2")?, level(r.distance)?)
                    .map_err(D::Error::custom)?,
            ),
            other => return Err(D::Error::custom(format!("unknown action type `{other}`"))),
        })
    }
}

impl WorldState {
    /// All lights off, nothing held, every ball free-standing.
    pub fn initial() -> Self {
        WorldState {
            tick: 0,
            lights: [false; NUM_BALLS],
            held: None,
            relations: [None; NUM_BALLS],
            final_displayed: None,
        }
    }

    pub fn light(&self, b: BallId) -> bool {
        self.lights[b.idx()]
    }

    pub fn relation(&self, b: BallId) -> Option<Relation> {
        self.relations[b.idx()]
    }

    /// True when ball `ball` sits at `distance` from `anchor`.
    pub fn placed(&self, ball: BallId, anchor: BallId, distance: DistanceLevel) -> bool {
        self.relation(ball) == Some(Relation { anchor, distance })
    }

    /// Checks the structural invariants of a world value.
    pub fn check_invariants(&self) -> Result<()> {
        if let Some(h) = self.held {
            if self.relations[h.idx()].is_some() {
                return Err(Error::InvalidWorld(format!("held ball {h} has a relation")));
            }
        }
        for b in BallId::ALL {
            if let Some(r) = self.relation(b) {
                if r.anchor == b {
                    return Err(Error::InvalidWorld(format!("ball {b} anchored on itself")));
                }
            }
        }
        Ok(())
    }

    /// Actions legal in this world, in canonical order: noa, light_on,
    /// light_off, pick_up, release, slide (by ball, then distance, then
    /// anchor). Planner tie-breaking relies on this order.
    pub fn valid_actions(&self) -> Vec<Action> {
        let mut out = Vec::with_capacity(16);
        out.push(Action::Noa);
        out.extend(BallId::ALL.into_iter().filter(|b| !self.light(*b)).map(Action::LightOn));
        out.extend(BallId::ALL.into_iter().filter(|b| self.light(*b)).map(Action::LightOff));
        if self.held.is_none() {
            out.extend(BallId::ALL.into_iter().map(Action::PickUp));
        }
        if let Some(h) = self.held {
            out.push(Action::Release(h));
        }
        for ball in BallId::ALL {
            for distance in DistanceLevel::ALL {
                for anchor in BallId::ALL {
                    let slide = Action::Slide { ball, distance, anchor };
                    if anchor != ball && self.slide_valid(ball, distance, anchor) {
                        out.push(slide);
                    }
                }
            }
        }
        out
    }

    fn slide_valid(&self, ball: BallId, distance: DistanceLevel, anchor: BallId) -> bool {
        if self.held == Some(ball) {
            return distance == DistanceLevel::FURTHEST;
        }
        match self.relation(ball) {
            Some(r) => r.anchor == anchor && r.distance.adjacent(distance),
            None => false,
        }
    }

    /// True when `a` may be applied to this world.
    pub fn is_valid(&self, a: &Action) -> bool {
        match *a {
            Action::Noa => true,
            Action::LightOn(b) => !self.light(b),
            Action::LightOff(b) => self.light(b),
            Action::PickUp(_) => self.held.is_none(),
            Action::Release(b) => self.held == Some(b),
            Action::Slide { ball, distance, anchor } => ball != anchor && self.slide_valid(ball, distance, anchor),
            Action::Final(h) => self.final_displayed.is_none() && self.placed(h.mov, h.wrt, h.dist),
        }
    }

    /// The deterministic successor of this world under `a`.
    pub fn apply(&self, a: &Action) -> Result<WorldState> {
        if !self.is_valid(a) {
            return Err(Error::InvalidAction {
                action: a.to_string(),
                tick: self.tick,
            });
        }
        let mut next = *self;
        next.tick += 1;
        match *a {
            Action::Noa => {}
            Action::LightOn(b) => next.lights[b.idx()] = true,
            Action::LightOff(b) => next.lights[b.idx()] = false,
            Action::PickUp(b) => {
                next.held = Some(b);
                next.relations[b.idx()] = None;
            }
            Action::Release(_) => next.held = None,
            Action::Slide { ball, distance, anchor } => {
                if next.held == Some(ball) {
                    next.held = None;
                }
                next.relations[ball.idx()] = Some(Relation { anchor, distance });
            }
            Action::Final(h) => next.final_displayed = Some(h),
        }
        Ok(next)
    }
}

/// Free-function form of [`WorldState::valid_actions`].
pub fn valid_actions(world: &WorldState) -> Vec<Action> {
    world.valid_actions()
}

/// Free-function form of [`WorldState::apply`].
pub fn apply_action(world: &WorldState, a: &Action) -> Result<WorldState> {
    world.apply(a)
}
