//! The per-trial session loop.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use taskcomm::{
    MentalState, Observation, Session, TaskHypothesis, TeacherKind, TeacherSource, TraceRecord, TrialConfig, TrialMode,
    WorldState,
};

use crate::protocol::{encode, ServerMessage, TickMessage, TrialSummary};
use crate::GatewayConfig;

/// Spacebar presses received since the last tick. Any number of presses
/// within one tick collapse into one spacebar observation.
#[derive(Debug, Clone, Default)]
pub struct PressQueue(Arc<AtomicU32>);

impl PressQueue {
    pub fn push(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }

    /// Takes every queued press.
    pub fn drain(&self) -> u32 {
        self.0.swap(0, Ordering::SeqCst)
    }
}

impl TeacherSource for PressQueue {
    fn observe(&mut self, _world: &WorldState) -> taskcomm::Result<(Observation, Option<MentalState>)> {
        let obs = if self.drain() > 0 {
            Observation::Spacebar
        } else {
            Observation::NoSpacebar
        };
        Ok((obs, None))
    }
}

pub(crate) fn random_card() -> TaskHypothesis {
    TaskHypothesis::from_index(rand::rng().random_range(0..taskcomm::teacher::NUM_TASKS))
}

pub(crate) struct Params {
    pub trial_id: String,
    pub card: TaskHypothesis,
    pub cfg: GatewayConfig,
    pub presses: PressQueue,
    pub teacher: mpsc::UnboundedSender<Arc<str>>,
    pub observers: broadcast::Sender<Arc<str>>,
    pub on_exit: Box<dyn FnOnce() + Send>,
}

pub(crate) struct Handle {
    cancel: watch::Sender<bool>,
    join: JoinHandle<()>,
}

impl Handle {
    pub fn is_finished(&self) -> bool {
        self.join.is_finished()
    }

    /// Stops the trial if it is still running and waits for it to wind down.
    pub async fn abort(self) {
        let _ = self.cancel.send(true);
        let _ = self.join.await;
    }
}

pub(crate) fn spawn(p: Params) -> Handle {
    let (cancel, rx) = watch::channel(false);
    Handle {
        cancel,
        join: tokio::spawn(run(p, rx)),
    }
}

async fn run(p: Params, mut cancel: watch::Receiver<bool>) {
    let send = |msg: &ServerMessage| {
        let text: Arc<str> = encode(msg).into();
        let _ = p.teacher.send(text.clone());
        let _ = p.observers.send(text);
    };
    let cfg = TrialConfig {
        trial_id: p.trial_id.clone(),
        mode: TrialMode::Realtime,
        teacher: TeacherKind::Live,
        planner: p.cfg.config.planner,
        teacher_params: p.cfg.config.teacher,
        max_ticks: p.cfg.max_ticks,
        pace: p.cfg.pace,
    };
    let tick_len = p
        .cfg
        .pace
        .unwrap_or_else(|| Duration::from_secs_f64(p.cfg.config.teacher.tick_seconds));

    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut aborted = false;
    let started = tokio::task::spawn_blocking(move || Session::start(&cfg, None)).await;
    let session = match started {
        Ok(Ok((session, first))) => {
            send(&ServerMessage::Tick(Box::new(TickMessage::new(&first, 0))));
            trace.push(first);
            Some(session)
        }
        Ok(Err(e)) => {
            send(&ServerMessage::error(e.code(), e.to_string()));
            aborted = true;
            None
        }
        Err(e) => {
            send(&ServerMessage::error("internal", e.to_string()));
            aborted = true;
            None
        }
    };

    if let Some(mut s) = session {
        let t0 = Instant::now();
        let mut n = 1u32;
        while s.next_world().is_some() {
            tokio::select! {
                _ = tokio::time::sleep_until(t0 + tick_len * n) => {}
                _ = cancel.changed() => {
                    aborted = true;
                    break;
                }
            }
            let presses = p.presses.drain();
            let obs = if presses > 0 {
                Observation::Spacebar
            } else {
                Observation::NoSpacebar
            };
            let stepped = tokio::task::spawn_blocking(move || {
                let r = s.advance(obs, None);
                (s, r)
            })
            .await;
            let rec = match stepped {
                Ok((back, Ok(rec))) => {
                    s = back;
                    rec
                }
                Ok((_, Err(e))) => {
                    send(&ServerMessage::error(e.code(), e.to_string()));
                    aborted = true;
                    break;
                }
                Err(e) => {
                    send(&ServerMessage::error("internal", e.to_string()));
                    aborted = true;
                    break;
                }
            };
            send(&ServerMessage::Tick(Box::new(TickMessage::new(&rec, presses))));
            let newly_final = trace.last().is_some_and(|r| r.world.final_displayed.is_none());
            let declared = rec.world.final_displayed.filter(|_| newly_final);
            trace.push(rec);
            if let Some(task) = declared {
                send(&ServerMessage::Final { task });
            }
            n += 1;
        }
    }

    let final_task = trace.last().and_then(|r| r.world.final_displayed);
    let ticks_to_final =
        final_task.and_then(|_| trace.iter().find(|r| r.world.final_displayed.is_some()).map(|r| r.tick));
    let summary = TrialSummary {
        trial_id: p.trial_id.clone(),
        card: p.card,
        final_task,
        correct: final_task.map(|f| f == p.card),
        ticks_to_final,
        seconds_to_final: ticks_to_final.map(|t| t as f64 * p.cfg.config.teacher.tick_seconds),
        presses: trace.iter().filter(|r| r.observation.is_press()).count(),
        aborted,
    };
    if aborted {
        tracing::warn!(trial_id = p.trial_id, ticks = trace.len(), "trial aborted");
    }
    let path = p.cfg.trace_dir.join(format!("{}.jsonl", p.trial_id));
    let written = tokio::task::spawn_blocking(move || -> taskcomm::Result<()> {
        std::fs::create_dir_all(path.parent().expect("trace path has a directory"))?;
        taskcomm::write_trace(&trace, std::io::BufWriter::new(std::fs::File::create(&path)?))
    })
    .await;
    match written {
        Ok(Ok(())) => {}
        Ok(Err(e)) => send(&ServerMessage::error(e.code(), e.to_string())),
        Err(e) => send(&ServerMessage::error("internal", e.to_string())),
    }
    send(&ServerMessage::TrialEnded { summary });
    (p.on_exit)();
}
