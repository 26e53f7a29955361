//! Three-phase reward-weight curriculum for passive RL.
//!
//! Phase 1 stresses format and violation detection, phase 2 labels and
//! reasoning, phase 3 adds temporal grounding. The phase index never
//! decreases within a run.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward_engine::{RewardBreakdown, WeightVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurriculumError {
    #[error("step {step} out of range for a run of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid transition rule: {0}")]
    InvalidRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Phase {
    FormatAndViolation = 1,
    LabelsAndReasoning = 2,
    Grounding = 3,
}

impl Phase {
    pub fn index(self) -> u8 {
        self as u8
    }

    fn next(self) -> Phase {
        match self {
            Phase::FormatAndViolation => Phase::LabelsAndReasoning,
            _ => Phase::Grounding,
        }
    }
}

impl From<Phase> for u8 {
    fn from(p: Phase) -> u8 {
        p.index()
    }
}

impl TryFrom<u8> for Phase {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Phase::FormatAndViolation),
            2 => Ok(Phase::LabelsAndReasoning),
            3 => Ok(Phase::Grounding),
            other => Err(format!("phase must be 1, 2 or 3, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TransitionRule {
    /// Phase boundaries at fixed fractions of the step budget.
    FixedFraction { f1: f64, f2: f64 },
    /// Advance when windowed component means clear a threshold: (format,
    /// violation) against `tau1` to enter phase 2, (major, sub) against
    /// `tau2` to enter phase 3. The optional fractions force the move if
    /// the threshold has not fired by then.
    RewardThreshold {
        tau1: f64,
        tau2: f64,
        window: usize,
        #[serde(default)]
        fallback: Option<(f64, f64)>,
    },
}

impl Default for TransitionRule {
    fn default() -> Self {
        TransitionRule::RewardThreshold {
            tau1: 0.9,
            tau2: 0.9,
            window: 50,
            fallback: Some((1.0 / 3.0, 2.0 / 3.0)),
        }
    }
}

fn check_fractions(f1: f64, f2: f64) -> Result<(), CurriculumError> {
    if 0.0 < f1 && f1 < f2 && f2 < 1.0 {
        Ok(())
    } else {
        Err(CurriculumError::InvalidRule(format!(
            "fractions must satisfy 0 < f1 < f2 < 1, got ({f1}, {f2})"
        )))
    }
}

impl TransitionRule {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        match *self {
            TransitionRule::FixedFraction { f1, f2 } => check_fractions(f1, f2),
            TransitionRule::RewardThreshold {
                tau1,
                tau2,
                window,
                fallback,
            } => {
                if window == 0 {
                    return Err(CurriculumError::InvalidRule("window must be positive".into()));
                }
                if !(tau1.is_finite() && tau2.is_finite()) {
                    return Err(CurriculumError::InvalidRule("thresholds must be finite".into()));
                }
                if let Some((f1, f2)) = fallback {
                    check_fractions(f1, f2)?;
                }
                Ok(())
            }
        }
    }
}

fn fraction_phase(f1: f64, f2: f64, step: usize, total: usize) -> Phase {
    let at = step as f64;
    let total = total as f64;
    if at < f1 * total {
        Phase::FormatAndViolation
    } else if at < f2 * total {
        Phase::LabelsAndReasoning
    } else {
        Phase::Grounding
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSchedule {
    pub phase1: WeightVector,
    pub phase2: WeightVector,
    pub phase3: WeightVector,
    #[serde(default)]
    pub transition: TransitionRule,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self {
            phase1: WeightVector::new([1.0, 1.0, 0.5, 0.3, 0.0, 0.1]).unwrap(),
            phase2: WeightVector::new([0.5, 0.5, 1.0, 1.0, 0.0, 0.5]).unwrap(),
            phase3: WeightVector::new([0.2, 0.2, 1.0, 1.0, 1.0, 0.5]).unwrap(),
            transition: TransitionRule::default(),
        }
    }
}

/// Windowed means of the components that gate phase changes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentMeans {
    pub format: f64,
    pub violation: f64,
    pub major: f64,
    pub sub: f64,
}

/// Caller-held state consulted by [`phase_of`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseHistory {
    pub current: Phase,
    /// Means over a full window, or `None` while the window is filling.
    pub window_means: Option<ComponentMeans>,
}

impl Default for PhaseHistory {
    fn default() -> Self {
        Self {
            current: Phase::FormatAndViolation,
            window_means: None,
        }
    }
}

impl PhaseSchedule {
    pub fn with_transition(transition: TransitionRule) -> Self {
        Self {
            transition,
            ..Self::default()
        }
    }

    pub fn weights(&self, phase: Phase) -> WeightVector {
        match phase {
            Phase::FormatAndViolation => self.phase1,
            Phase::LabelsAndReasoning => self.phase2,
            Phase::Grounding => self.phase3,
        }
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        self.transition.validate()
    }
}

/// Which phase is active at `step`. Never returns a phase below `history.current`,
/// and advances at most one phase per call.
pub fn phase_of(
    schedule: &PhaseSchedule,
    step: usize,
    total: usize,
    history: &PhaseHistory,
) -> Result<Phase, CurriculumError> {
    if step >= total {
        return Err(CurriculumError::StepOutOfRange { step, total });
    }
    let phase = match schedule.transition {
        TransitionRule::FixedFraction { f1, f2 } => fraction_phase(f1, f2, step, total),
        TransitionRule::RewardThreshold {
            tau1,
            tau2,
            fallback,
            ..
        } => {
            let base = fallback
                .map(|(f1, f2)| fraction_phase(f1, f2, step, total))
                .unwrap_or(Phase::FormatAndViolation)
                .max(history.current);
            let proficient = history.window_means.is_some_and(|m| match base {
                Phase::FormatAndViolation => m.format > tau1 && m.violation > tau1,
                Phase::LabelsAndReasoning => m.major > tau2 && m.sub > tau2,
                Phase::Grounding => false,
            });
            if proficient && base == history.current {
                base.next()
            } else {
                base
            }
        }
    };
    Ok(phase.max(history.current))
}

pub fn weights_at(
    schedule: &PhaseSchedule,
    step: usize,
    total: usize,
    history: &PhaseHistory,
) -> Result<WeightVector, CurriculumError> {
    Ok(schedule.weights(phase_of(schedule, step, total, history)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionTrigger {
    Fraction,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTransition {
    pub step: usize,
    pub from: Phase,
    pub to: Phase,
    pub trigger: TransitionTrigger,
}

/// Stateful driver: keeps the window of per-step component means and the
/// current phase across a run.
#[derive(Debug, Clone)]
pub struct CurriculumTracker {
    schedule: PhaseSchedule,
    total: usize,
    phase: Phase,
    window: VecDeque<ComponentMeans>,
    transitions: Vec<PhaseTransition>,
}

impl CurriculumTracker {
    pub fn new(schedule: PhaseSchedule, total: usize) -> Result<Self, CurriculumError> {
        schedule.validate()?;
        Ok(Self {
            schedule,
            total,
            phase: Phase::FormatAndViolation,
            window: VecDeque::new(),
            transitions: Vec::new(),
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn weights(&self) -> WeightVector {
        self.schedule.weights(self.phase)
    }

    pub fn schedule(&self) -> &PhaseSchedule {
        &self.schedule
    }

    pub fn transitions(&self) -> &[PhaseTransition] {
        &self.transitions
    }

    fn window_len(&self) -> usize {
        match self.schedule.transition {
            TransitionRule::RewardThreshold { window, .. } => window,
            TransitionRule::FixedFraction { .. } => 1,
        }
    }

    pub fn history(&self) -> PhaseHistory {
        let full = self.window.len() >= self.window_len();
        let window_means = full.then(|| {
            let n = self.window.len() as f64;
            let mut m = ComponentMeans::default();
            for c in &self.window {
                m.format += c.format;
                m.violation += c.violation;
                m.major += c.major;
                m.sub += c.sub;
            }
            ComponentMeans {
                format: m.format / n,
                violation: m.violation / n,
                major: m.major / n,
                sub: m.sub / n,
            }
        });
        PhaseHistory {
            current: self.phase,
            window_means,
        }
    }

    /// Records the mean breakdown of one training step.
    pub fn observe(&mut self, breakdowns: &[RewardBreakdown]) {
        if breakdowns.is_empty() {
            return;
        }
        let n = breakdowns.len() as f64;
        let mean = |f: fn(&RewardBreakdown) -> f64| breakdowns.iter().map(f).sum::<f64>() / n;
        self.window.push_back(ComponentMeans {
            format: mean(|b| b.format),
            violation: mean(|b| b.violation),
            major: mean(|b| b.major),
            sub: mean(|b| b.sub),
        });
        while self.window.len() > self.window_len() {
            self.window.pop_front();
        }
    }

    /// Re-evaluates the phase before `step` runs. The window restarts after a change.
    pub fn advance(&mut self, step: usize) -> Result<Option<PhaseTransition>, CurriculumError> {
        let history = self.history();
        let next = phase_of(&self.schedule, step, self.total, &history)?;
        if next == self.phase {
            return Ok(None);
        }
        let by_fraction = match self.schedule.transition {
            TransitionRule::FixedFraction { .. } => true,
            TransitionRule::RewardThreshold { fallback, .. } => {
                fallback.is_some_and(|(f1, f2)| fraction_phase(f1, f2, step, self.total) >= next)
            }
        };
        let transition = PhaseTransition {
            step,
            from: self.phase,
            to: next,
            trigger: if by_fraction {
                TransitionTrigger::Fraction
            } else {
                TransitionTrigger::Threshold
            },
        };
        log::info!(
            "curriculum phase {} -> {} at step {} ({:?})",
            transition.from.index(),
            transition.to.index(),
            step,
            transition.trigger
        );
        self.phase = next;
        self.window.clear();
        self.transitions.push(transition);
        Ok(Some(transition))
    }
}
