//! Step-indexed capacity schedules.
//!
//! The extending coefficient `alpha` is a signed offset from full capacity
//! (active width `(1 + alpha) * base`); the shrinking coefficient `beta` is
//! the kept fraction of each maskable layer (`beta * base`). Both move
//! linearly from `coeff_start` at step 0 to `coeff_end` at `total_steps` and
//! only change on multiples of `update_interval` (and at `total_steps`).

use crate::layers::scaled_width;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("unknown schedule preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown schedule mode `{0}`")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Increase,
    Decrease,
    Fixed,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Increase => "increase",
            ScheduleMode::Decrease => "decrease",
            ScheduleMode::Fixed => "fixed",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = ScheduleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "increase" => Ok(ScheduleMode::Increase),
            "decrease" => Ok(ScheduleMode::Decrease),
            "fixed" => Ok(ScheduleMode::Fixed),
            other => Err(ScheduleError::UnknownMode(other.to_string())),
        }
    }
}

/// What the trainer must do to the discriminator before a step.
#[derive(Debug, Clone, PartialEq)]
pub enum CapacityEvent {
    /// Grow hidden layers to these widths.
    Grow(Vec<usize>),
    /// Draw a fresh filter mask at this shrinking coefficient.
    Resample { beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacitySchedule {
    mode: ScheduleMode,
    coeff_start: f64,
    coeff_end: f64,
    total_steps: u64,
    update_interval: u64,
    excluded: BTreeSet<usize>,
    base_widths: Vec<usize>,
}

impl CapacitySchedule {
    pub fn new(
        mode: ScheduleMode,
        coeff_start: f64,
        coeff_end: f64,
        total_steps: u64,
        update_interval: u64,
        excluded: BTreeSet<usize>,
        base_widths: Vec<usize>,
    ) -> Result<Self, ScheduleError> {
        let bad = |msg: String| Err(ScheduleError::Invalid(msg));
        if total_steps == 0 || update_interval == 0 {
            return bad("total_steps and update_interval must be positive".into());
        }
        if base_widths.is_empty() || base_widths.contains(&0) {
            return bad(format!("base widths must be positive, got {base_widths:?}"));
        }
        if !coeff_start.is_finite() || !coeff_end.is_finite() {
            return bad("coefficients must be finite".into());
        }
        match mode {
            ScheduleMode::Increase => {
                if !(coeff_start <= coeff_end && coeff_end <= 0.0 && 1.0 + coeff_start > 0.0) {
                    return bad(format!(
                        "increase needs -1 < start <= end <= 0, got {coeff_start} -> {coeff_end}"
                    ));
                }
            }
            ScheduleMode::Decrease => {
                if !(1.0 >= coeff_start && coeff_start >= coeff_end && coeff_end > 0.0) {
                    return bad(format!(
                        "decrease needs 1 >= start >= end > 0, got {coeff_start} -> {coeff_end}"
                    ));
                }
            }
            ScheduleMode::Fixed => {
                if coeff_start != coeff_end || !(1.0 + coeff_start > 0.0 && coeff_start <= 0.0) {
                    return bad(format!("fixed needs a constant coefficient in (-1, 0], got {coeff_start} -> {coeff_end}"));
                }
            }
        }
        if mode != ScheduleMode::Decrease && !excluded.is_empty() {
            return bad("excluded layers only apply to decrease mode".into());
        }
        if let Some(&l) = excluded.iter().find(|&&l| l >= base_widths.len()) {
            return bad(format!("excluded layer {l} does not exist"));
        }
        Ok(Self {
            mode,
            coeff_start,
            coeff_end,
            total_steps,
            update_interval,
            excluded,
            base_widths,
        })
    }

    pub fn increase(base_widths: Vec<usize>, start: f64, end: f64, total_steps: u64, interval: u64) -> Result<Self, ScheduleError> {
        Self::new(ScheduleMode::Increase, start, end, total_steps, interval, BTreeSet::new(), base_widths)
    }

    pub fn decrease(
        base_widths: Vec<usize>,
        start: f64,
        end: f64,
        total_steps: u64,
        interval: u64,
        excluded: BTreeSet<usize>,
    ) -> Result<Self, ScheduleError> {
        Self::new(ScheduleMode::Decrease, start, end, total_steps, interval, excluded, base_widths)
    }

    pub fn fixed(base_widths: Vec<usize>, alpha: f64, total_steps: u64) -> Result<Self, ScheduleError> {
        Self::new(ScheduleMode::Fixed, alpha, alpha, total_steps, 1, BTreeSet::new(), base_widths)
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn coeff_start(&self) -> f64 {
        self.coeff_start
    }

    pub fn coeff_end(&self) -> f64 {
        self.coeff_end
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn update_interval(&self) -> u64 {
        self.update_interval
    }

    pub fn excluded(&self) -> &BTreeSet<usize> {
        &self.excluded
    }

    pub fn base_widths(&self) -> &[usize] {
        &self.base_widths
    }

    pub fn coefficient_at(&self, step: u64) -> f64 {
        if self.mode == ScheduleMode::Fixed || step == 0 {
            return self.coeff_start;
        }
        if step >= self.total_steps {
            return self.coeff_end;
        }
        let q = (step / self.update_interval) * self.update_interval;
        self.coeff_start + (self.coeff_end - self.coeff_start) * (q as f64 / self.total_steps as f64)
    }

    /// Active output width of each hidden layer at `step`. In decrease mode
    /// this is the mask size, not an index range.
    pub fn widths_at(&self, step: u64) -> Vec<usize> {
        let c = self.coefficient_at(step);
        self.base_widths
            .iter()
            .enumerate()
            .map(|(l, &base)| match self.mode {
                ScheduleMode::Increase | ScheduleMode::Fixed => scaled_width(1.0 + c, base),
                ScheduleMode::Decrease if self.excluded.contains(&l) => base,
                ScheduleMode::Decrease => scaled_width(c, base),
            })
            .collect()
    }

    pub fn capacity_event_at(&self, step: u64) -> Option<CapacityEvent> {
        match self.mode {
            ScheduleMode::Fixed => None,
            ScheduleMode::Decrease => Some(CapacityEvent::Resample {
                beta: self.coefficient_at(step),
            }),
            ScheduleMode::Increase => {
                if step == 0 || step > self.total_steps {
                    return None;
                }
                let now = self.widths_at(step);
                (now != self.widths_at(step - 1)).then_some(CapacityEvent::Grow(now))
            }
        }
    }
}

/// Named schedules mirroring the fixed and dynamic capacity baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchedulePreset {
    FixedFull,
    FixedHalf,
    DynamicIncrease,
    DynamicDecrease,
}

impl SchedulePreset {
    pub const ALL: [SchedulePreset; 4] = [
        SchedulePreset::FixedFull,
        SchedulePreset::FixedHalf,
        SchedulePreset::DynamicIncrease,
        SchedulePreset::DynamicDecrease,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulePreset::FixedFull => "fixed-full",
            SchedulePreset::FixedHalf => "fixed-half",
            SchedulePreset::DynamicIncrease => "dynamic-increase",
            SchedulePreset::DynamicDecrease => "dynamic-decrease",
        }
    }

    pub fn build(self, base_widths: Vec<usize>, total_steps: u64, excluded: BTreeSet<usize>) -> Result<CapacitySchedule, ScheduleError> {
        match self {
            SchedulePreset::FixedFull => CapacitySchedule::fixed(base_widths, 0.0, total_steps),
            SchedulePreset::FixedHalf => CapacitySchedule::fixed(base_widths, -0.5, total_steps),
            SchedulePreset::DynamicIncrease => CapacitySchedule::increase(base_widths, -0.5, 0.0, total_steps, 1),
            SchedulePreset::DynamicDecrease => CapacitySchedule::decrease(base_widths, 1.0, 0.5, total_steps, 1, excluded),
        }
    }
}

impl fmt::Display for SchedulePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulePreset {
    type Err = ScheduleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ScheduleError::UnknownPreset(s.to_string()))
    }
}
