//! Piecewise-linear learning-rate and λ schedules.
//!
//! The learning rate ramps 0→1 over the first `⌈warmup·T⌉` steps, holds at 1,
//! then ramps 1→0 over the last `⌈decay·T⌉` steps. λ ramps 0→1 over its own
//! warmup and then stays at 1.

/// One linear piece on `[start, end]` (in steps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub from: f64,
    pub to: f64,
}

impl Segment {
    fn at(&self, t: f64) -> f64 {
        if self.end == self.start {
            return self.to;
        }
        self.from + (self.to - self.from) * (t - self.start) / (self.end - self.start)
    }
}

fn ramp_len(frac: f64, total: usize) -> usize {
    (frac * total as f64).ceil() as usize
}

/// Warmup length, plateau, and decay length for a run of `total` steps.
/// When warmup and decay overlap the multiplier is the smaller ramp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    total: usize,
    warmup: usize,
    decay: usize,
}

impl LinearSchedule {
    pub fn new(total: usize, warmup_frac: f64, decay_frac: f64) -> Self {
        LinearSchedule {
            total,
            warmup: ramp_len(warmup_frac, total),
            decay: ramp_len(decay_frac, total),
        }
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup
    }

    pub fn decay_steps(&self) -> usize {
        self.decay
    }

    /// Multiplier at a (possibly fractional) step.
    pub fn at(&self, t: f64) -> f64 {
        let total = self.total as f64;
        let up = if self.warmup > 0 && t < self.warmup as f64 {
            t / self.warmup as f64
        } else {
            1.0
        };
        let down = if self.decay > 0 && t > total - self.decay as f64 {
            (total - t) / self.decay as f64
        } else {
            1.0
        };
        up.min(down).clamp(0.0, 1.0)
    }

    pub fn step(&self, step: usize) -> f64 {
        self.at(step as f64)
    }

    /// The linear pieces, in order, for schedules whose ramps do not overlap.
    pub fn segments(&self) -> Vec<Segment> {
        let total = self.total as f64;
        let w = self.warmup as f64;
        let d_start = total - self.decay as f64;
        let mut out = Vec::new();
        if self.warmup > 0 {
            out.push(Segment {
                start: 0.0,
                end: w,
                from: 0.0,
                to: 1.0,
            });
        }
        out.push(Segment {
            start: w,
            end: d_start,
            from: 1.0,
            to: 1.0,
        });
        if self.decay > 0 {
            out.push(Segment {
                start: d_start,
                end: total,
                from: (total - d_start) / self.decay as f64,
                to: 0.0,
            });
        }
        out
    }

    /// Evaluates the piece containing `t`, choosing the left piece at a
    /// shared boundary when `left` is set.
    pub fn segment_value(&self, t: f64, left: bool) -> Option<f64> {
        let segs = self.segments();
        let pick = |s: &&Segment| {
            if left {
                s.start < t && t <= s.end
            } else {
                s.start <= t && t < s.end
            }
        };
        segs.iter().find(pick).map(|s| s.at(t))
    }
}

/// Learning-rate multiplier in [0, 1].
pub fn lr_schedule(step: usize, total_steps: usize, warmup_frac: f64, decay_frac: f64) -> f64 {
    LinearSchedule::new(total_steps, warmup_frac, decay_frac).step(step)
}

/// λ multiplier in [0, 1].
pub fn lambda_schedule(step: usize, total_steps: usize, warmup_frac: f64) -> f64 {
    LinearSchedule::new(total_steps, warmup_frac, 0.0).step(step)
}
