//! Progressive training controls: the time-step descent, the shrinking camera
//! radius and the stage plan.

use std::fmt;
use std::io::Write;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math::Rng;

/// Constants of the piecewise descent rate and its integration window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimestepParams {
    pub m1: f64,
    pub m2: f64,
    pub n1: f64,
    pub n2: f64,
    pub t_min: usize,
    pub t_max: usize,
    /// Fraction of the run at which the descent should reach `t_min`.
    pub target_fraction: f64,
}

impl Default for TimestepParams {
    fn default() -> Self {
        Self {
            m1: 50.0,
            m2: 150.0,
            n1: 500.0,
            n2: 800.0,
            t_min: 20,
            t_max: 980,
            target_fraction: 0.8,
        }
    }
}

impl TimestepParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.t_min as f64, self.t_max as f64);
        if !(self.m1 > 0.0 && self.m2 > 0.0) {
            return Err(Error::config("m1 and m2 must be positive"));
        }
        if !(lo <= self.n1 && self.n1 <= self.n2 && self.n2 <= hi && lo < hi) {
            return Err(Error::config(format!(
                "need t_min ≤ n1 ≤ n2 ≤ t_max, got {lo}, {}, {}, {hi}",
                self.n1, self.n2
            )));
        }
        if self.t_min == 0 {
            return Err(Error::config("t_min must be at least 1"));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::config(format!("target fraction {} outside (0, 1]", self.target_fraction)));
        }
        Ok(())
    }
}

/// Piecewise descent rate `v(t)`: `-exp((t - n2) / m2)` above `n2`, `-1` on
/// `[n1, n2]` and `-exp((t - n1) / m1)` below `n1`. Always negative and
/// continuous.
pub fn descent_rate(t: f64, params: &TimestepParams) -> f64 {
    if t > params.n2 {
        -((t - params.n2) / params.m2).exp()
    } else if t >= params.n1 {
        -1.0
    } else {
        -((t - params.n1) / params.m1).exp()
    }
}

/// One explicit Euler step of `dt/di = β v(t)`, clamped below at `t_min`.
pub fn step_t(t: f64, beta: f64, params: &TimestepParams) -> f64 {
    (t + beta * descent_rate(t, params)).max(params.t_min as f64)
}

/// Iterations the descent needs, starting from `t_max`, to reach `t_min`;
/// `None` if it has not arrived after `limit` steps.
pub fn steps_to_floor(beta: f64, params: &TimestepParams, limit: usize) -> Option<usize> {
    let floor = params.t_min as f64;
    let mut t = params.t_max as f64;
    for k in 1..=limit {
        t = step_t(t, beta, params);
        if t <= floor {
            return Some(k);
        }
    }
    None
}

/// Iteration at which a run of `total` iterations should reach `t_min`.
pub fn target_iteration(params: &TimestepParams, total: usize) -> usize {
    (params.target_fraction * total as f64).round() as usize
}

/// Smallest `β` (to relative precision 1e-6) whose descent from `t_max`
/// reaches `t_min` by the target iteration.
pub fn calibrate_beta(params: &TimestepParams, total: usize) -> Result<f64> {
    params.validate()?;
    let target = target_iteration(params, total);
    if target < 1 {
        return Err(Error::config(format!(
            "target iteration round({} · {total}) is below 1",
            params.target_fraction
        )));
    }
    let reaches = |beta: f64| steps_to_floor(beta, params, target).is_some();
    let span = (params.t_max - params.t_min) as f64;
    let mut lo = 0.0;
    let mut hi = span / descent_rate(params.t_max as f64, params).abs();
    if !reaches(hi) {
        return Err(Error::config(format!("no descent-rate constant in [{lo}, {hi}] reaches t_min")));
    }
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if reaches(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimestepPhase {
    Deterministic,
    Random,
}

impl TimestepPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            TimestepPhase::Deterministic => "deterministic",
            TimestepPhase::Random => "random",
        }
    }
}

impl fmt::Display for TimestepPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How time steps are drawn over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TimestepMode {
    /// Deterministic descent from `t_max`, then uniform draws.
    #[default]
    Progressive,
    /// Uniform draws from the first iteration on.
    Uniform,
}

impl TimestepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TimestepMode::Progressive => "progressive",
            TimestepMode::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "progressive" => Ok(TimestepMode::Progressive),
            "uniform" => Ok(TimestepMode::Uniform),
            other => Err(Error::config(format!("unknown timestep mode `{other}`"))),
        }
    }
}

/// Time-step sampler state. Once random, it stays random.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepSampler {
    params: TimestepParams,
    beta: f64,
    t: f64,
    phase: TimestepPhase,
}

impl TimestepSampler {
    pub fn new(params: TimestepParams, beta: f64, mode: TimestepMode) -> Result<Self> {
        params.validate()?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config(format!("descent-rate constant {beta} must be positive")));
        }
        Ok(Self {
            params,
            beta,
            t: params.t_max as f64,
            phase: match mode {
                TimestepMode::Progressive => TimestepPhase::Deterministic,
                TimestepMode::Uniform => TimestepPhase::Random,
            },
        })
    }

    /// Sampler whose descent constant is calibrated for `total` iterations.
    pub fn calibrated(params: TimestepParams, total: usize, mode: TimestepMode) -> Result<Self> {
        Self::new(params, calibrate_beta(&params, total)?, mode)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Continuous time step of the next deterministic draw.
    pub fn current_t(&self) -> f64 {
        self.t
    }

    pub fn phase(&self) -> TimestepPhase {
        self.phase
    }

    /// Next integer time step, always in `[t_min, t_max]`.
    pub fn sample(&mut self, rng: &mut Rng) -> usize {
        let (lo, hi) = (self.params.t_min, self.params.t_max);
        match self.phase {
            TimestepPhase::Deterministic => {
                let out = (self.t.round() as usize).clamp(lo, hi);
                if self.t <= lo as f64 {
                    self.phase = TimestepPhase::Random;
                } else {
                    self.t = step_t(self.t, self.beta, &self.params);
                }
                out
            }
            TimestepPhase::Random => rng.random_range(lo..=hi),
        }
    }
}

/// Closed camera-radius interval `[lo, hi]`.
pub type RadiusInterval = (f64, f64);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RadiusMode {
    /// Interpolated every iteration.
    #[default]
    Smooth,
    /// Interpolated once per stage.
    PerStage,
    /// One interval spanning both endpoints for the whole run.
    Fixed,
}

impl RadiusMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RadiusMode::Smooth => "smooth",
            RadiusMode::PerStage => "per_stage",
            RadiusMode::Fixed => "fixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(RadiusMode::Smooth),
            "per_stage" => Ok(RadiusMode::PerStage),
            "fixed" => Ok(RadiusMode::Fixed),
            other => Err(Error::config(format!("unknown radius mode `{other}`"))),
        }
    }
}

/// Camera radius interval shrinking from `start` to `end` over a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusSchedule {
    pub start: RadiusInterval,
    pub end: RadiusInterval,
    pub mode: RadiusMode,
}

impl Default for RadiusSchedule {
    fn default() -> Self {
        Self {
            start: (3.0, 3.5),
            end: (1.8, 2.1),
            mode: RadiusMode::Smooth,
        }
    }
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

impl RadiusSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): RadiusInterval| lo > 0.0 && lo <= hi && hi.is_finite();
        if !ok(self.start) || !ok(self.end) || self.end.0 > self.start.0 || self.end.1 > self.start.1 {
            return Err(Error::config(format!(
                "radius schedule {:?} -> {:?} must be valid and non-increasing",
                self.start, self.end
            )));
        }
        Ok(())
    }

    /// Interval at iteration `i` of `stages.total()`. Smooth mode
    /// interpolates with `i / total`, per-stage mode with `(m - 1) / 3`.
    pub fn interval(&self, i: usize, stages: &StageSchedule) -> RadiusInterval {
        let s = match self.mode {
            RadiusMode::Fixed => return (self.end.0, self.start.1),
            RadiusMode::Smooth => (i.min(stages.total) as f64 / stages.total as f64).min(1.0),
            RadiusMode::PerStage => (stages.stage_of(i) - 1) as f64 / 3.0,
        };
        (lerp(self.start.0, self.end.0, s), lerp(self.start.1, self.end.1, s))
    }
}

/// Maps iterations to stages `1..=boundaries.len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSchedule {
    total: usize,
    /// First iteration of each stage; starts at 0 and strictly increases.
    boundaries: Vec<usize>,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self::equal(6000, 4).expect("default stage plan is valid")
    }
}

impl StageSchedule {
    pub fn new(total: usize, boundaries: Vec<usize>) -> Result<Self> {
        let valid = !boundaries.is_empty()
            && boundaries.len() <= crate::field::LEVELS
            && boundaries[0] == 0
            && boundaries.windows(2).all(|w| w[0] < w[1])
            && *boundaries.last().unwrap() < total;
        if !valid {
            return Err(Error::config(format!(
                "stage boundaries {boundaries:?} must start at 0, increase strictly, stay below {total} and number at most 4"
            )));
        }
        Ok(Self { total, boundaries })
    }

    /// `stages` spans of equal length (the last takes any remainder).
    pub fn equal(total: usize, stages: usize) -> Result<Self> {
        if stages == 0 {
            return Err(Error::config("at least one stage is required"));
        }
        Self::new(total, (0..stages).map(|k| k * total / stages).collect())
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn stage_count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn stage_of(&self, i: usize) -> usize {
        self.boundaries.partition_point(|&b| b <= i).max(1)
    }

    /// True when iteration `i` is the first of a stage after the first.
    pub fn is_stage_entry(&self, i: usize) -> bool {
        i > 0 && self.boundaries.binary_search(&i).is_ok()
    }

    /// Comma-separated boundaries, as accepted by [`StageSchedule::parse`].
    pub fn boundaries_string(&self) -> String {
        self.boundaries.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
    }

    pub fn parse(total: usize, boundaries: &str) -> Result<Self> {
        let parsed = boundaries
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad stage boundary `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(total, parsed)
    }
}

/// Controls in effect for one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    pub iteration: usize,
    pub t: usize,
    pub phase: TimestepPhase,
    pub stage: usize,
    pub radius: RadiusInterval,
}

/// Produces one [`ScheduleState`] per iteration.
#[derive(Clone, Debug)]
pub struct Scheduler {
    sampler: TimestepSampler,
    stages: StageSchedule,
    radius: RadiusSchedule,
    iteration: usize,
}

impl Scheduler {
    pub fn new(sampler: TimestepSampler, stages: StageSchedule, radius: RadiusSchedule) -> Result<Self> {
        radius.validate()?;
        Ok(Self {
            sampler,
            stages,
            radius,
            iteration: 0,
        })
    }

    pub fn stages(&self) -> &StageSchedule {
        &self.stages
    }

    pub fn sampler(&self) -> &TimestepSampler {
        &self.sampler
    }

    /// Controls for the next iteration; `None` once the run is complete.
    pub fn next_state(&mut self, rng: &mut Rng) -> Option<ScheduleState> {
        let i = self.iteration;
        if i >= self.stages.total {
            return None;
        }
        self.iteration += 1;
        let phase = self.sampler.phase();
        let t = self.sampler.sample(rng);
        Some(ScheduleState {
            iteration: i,
            t,
            phase,
            stage: self.stages.stage_of(i),
            radius: self.radius.interval(i, &self.stages),
        })
    }
}

/// Writes `iteration,t,phase,stage,R_lo,R_hi` rows.
pub fn write_trace_csv(out: &mut impl Write, states: &[ScheduleState]) -> Result<()> {
    writeln!(out, "iteration,t,phase,stage,R_lo,R_hi")?;
    for s in states {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.iteration, s.t, s.phase, s.stage, s.radius.0, s.radius.1
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_from_seed;
    use proptest::prelude::*;

    fn p() -> TimestepParams {
        TimestepParams::default()
    }

    #[test]
    fn descent_rate_examples() {
        assert_eq!(descent_rate(800.0, &p()), -1.0);
        assert_eq!(descent_rate(500.0, &p()), -1.0);
        assert!((descent_rate(950.0, &p()) + std::f64::consts::E).abs() < 1e-12);
        assert!((descent_rate(400.0, &p()) + (-2.0f64).exp()).abs() < 1e-12);
        let e = 1e-9;
        assert!((descent_rate(800.0 + e, &p()) + 1.0).abs() < 1e-8);
        assert!((descent_rate(500.0 - e, &p()) + 1.0).abs() < 1e-8);
    }

    #[test]
    fn euler_step_examples() {
        assert_eq!(step_t(700.0, 37.5, &p()), 700.0 - 37.5);
        assert_eq!(step_t(20.0, 5.0, &p()), 20.0);
        let want = 980.0 - 1.2f64.exp();
        assert!((step_t(980.0, 1.0, &p()) - want).abs() < 1e-12);
        assert!((step_t(980.0, 1.0, &p()) - 976.68).abs() < 0.01);
    }

    fn first_arrival(beta: f64, params: &TimestepParams) -> usize {
        steps_to_floor(beta, params, 1_000_000).unwrap()
    }

    #[test]
    fn calibrated_descent_arrives_on_target() {
        for total in [500, 2000, 6000, 12000] {
            let beta = calibrate_beta(&p(), total).unwrap();
            let target = target_iteration(&p(), total);
            let arrival = first_arrival(beta, &p());
            assert!(arrival <= target && arrival + 1 >= target, "total {total}: {arrival} vs {target}");
            // Minimality: a slightly smaller constant arrives late.
            assert!(steps_to_floor(beta * (1.0 - 1e-5), &p(), target).is_none());
        }
    }

    #[test]
    fn doubling_the_run_halves_beta() {
        let b6 = calibrate_beta(&p(), 6000).unwrap();
        let b12 = calibrate_beta(&p(), 12000).unwrap();
        let ratio = b12 / b6;
        assert!((ratio - 0.5).abs() < 0.025, "ratio {ratio}");
    }

    #[test]
    fn linear_branch_has_closed_form_beta() {
        let params = TimestepParams {
            n1: 20.0,
            n2: 980.0,
            ..p()
        };
        for total in [100, 1000, 6000] {
            let beta = calibrate_beta(&params, total).unwrap();
            let want = 960.0 / target_iteration(&params, total) as f64;
            assert!((beta - want).abs() / want < 2e-6, "{beta} vs {want}");
        }
    }

    #[test]
    fn calibration_faults() {
        assert!(calibrate_beta(&p(), 0).is_err());
        let bad = TimestepParams { n1: 900.0, ..p() };
        assert!(calibrate_beta(&bad, 100).is_err());
    }

    #[test]
    fn deterministic_phase_then_uniform() {
        let total = 6000;
        let mut s = TimestepSampler::calibrated(p(), total, TimestepMode::Progressive).unwrap();
        let mut rng = rng_from_seed(0);
        assert_eq!(s.sample(&mut rng), 980);
        let mut det = vec![980];
        let mut steps = vec![];
        let mut prev_t = 980.0;
        while s.phase() == TimestepPhase::Deterministic {
            let t_cont = s.current_t();
            if t_cont < prev_t {
                steps.push(prev_t - t_cont);
            }
            prev_t = t_cont;
            det.push(s.sample(&mut rng));
        }
        assert!(det.windows(2).all(|w| w[1] <= w[0]));
        assert!(steps.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{steps:?}");
        assert_eq!(*det.last().unwrap(), 20);
        let target = target_iteration(&p(), total);
        assert!(det.len() - 1 <= target + 1 && det.len() + 1 >= target);

        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            let t = s.sample(&mut rng);
            assert!((20..=980).contains(&t));
            counts[((t - 20) * 10 / 961).min(9)] += 1;
        }
        assert_eq!(s.phase(), TimestepPhase::Random);
        // Bins hold 96 or 97 values; expected counts follow.
        let mut chi = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let lo = (k * 961).div_ceil(10);
            let hi = ((k + 1) * 961).div_ceil(10);
            let expected = 10_000.0 * (hi - lo) as f64 / 961.0;
            chi += (c as f64 - expected).powi(2) / expected;
        }
        // 9 degrees of freedom, p = 0.001 critical value.
        assert!(chi < 27.88, "chi-square {chi}");
    }

    #[test]
    fn uniform_mode_starts_random() {
        let mut s = TimestepSampler::new(p(), 10.0, TimestepMode::Uniform).unwrap();
        assert_eq!(s.phase(), TimestepPhase::Random);
        let mut rng = rng_from_seed(1);
        assert!((0..100).map(|_| s.sample(&mut rng)).any(|t| t != 980));
        assert!(TimestepSampler::new(p(), 0.0, TimestepMode::Uniform).is_err());
    }

    #[test]
    fn radius_interval_examples() {
        let stages = StageSchedule::default();
        let r = RadiusSchedule::default();
        assert_eq!(r.interval(0, &stages), (3.0, 3.5));
        let mid = r.interval(3000, &stages);
        assert!((mid.0 - 2.4).abs() < 1e-12 && (mid.1 - 2.8).abs() < 1e-12);
        let last = r.interval(5999, &stages);
        let step = 1.2 / 6000.0;
        assert!((last.0 - 1.8).abs() <= step + 1e-12 && (last.1 - 2.1).abs() <= 1.4 / 6000.0 + 1e-12);
        let per = RadiusSchedule {
            mode: RadiusMode::PerStage,
            ..r
        };
        assert_eq!(per.interval(1499, &stages), (3.0, 3.5));
        let s4 = per.interval(4500, &stages);
        assert!((s4.0 - 1.8).abs() < 1e-12 && (s4.1 - 2.1).abs() < 1e-12);
        let fixed = RadiusSchedule {
            mode: RadiusMode::Fixed,
            ..r
        };
        assert_eq!(fixed.interval(17, &stages), (1.8, 3.5));
        assert!(RadiusSchedule {
            start: (2.0, 1.0),
            ..r
        }
        .validate()
        .is_err());
    }

    #[test]
    fn stage_table_examples() {
        let s = StageSchedule::default();
        assert_eq!(s.stage_of(0), 1);
        assert_eq!(s.stage_of(1499), 1);
        assert_eq!(s.stage_of(1500), 2);
        assert_eq!(s.stage_of(5999), 4);
        assert!(s.is_stage_entry(1500) && !s.is_stage_entry(0) && !s.is_stage_entry(1501));
        let custom = StageSchedule::new(1000, vec![0, 100, 350, 900]).unwrap();
        assert_eq!(StageSchedule::parse(1000, &custom.boundaries_string()).unwrap(), custom);
        assert!(StageSchedule::new(1000, vec![0, 100, 100]).is_err());
        assert!(StageSchedule::new(1000, vec![5, 100]).is_err());
        assert!(StageSchedule::new(100, vec![0, 100]).is_err());
        assert!(StageSchedule::new(100, vec![0, 10, 20, 30, 40]).is_err());
        assert!(StageSchedule::parse(100, "0,x").is_err());
    }

    #[test]
    fn scheduler_emits_a_full_trace() {
        let stages = StageSchedule::equal(400, 4).unwrap();
        let sampler = TimestepSampler::calibrated(p(), 400, TimestepMode::Progressive).unwrap();
        let mut sched = Scheduler::new(sampler, stages, RadiusSchedule::default()).unwrap();
        let mut rng = rng_from_seed(2);
        let mut states = vec![];
        while let Some(s) = sched.next_state(&mut rng) {
            states.push(s);
        }
        assert_eq!(states.len(), 400);
        assert_eq!(states[0].t, 980);
        assert_eq!(states[399].stage, 4);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &states).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 401);
        assert!(text.starts_with("iteration,t,phase,stage,R_lo,R_hi\n0,980,deterministic,1,3,3.5\n"));
    }

    proptest! {
        #[test]
        fn descent_rate_is_negative(t in -2000.0f64..3000.0) {
            prop_assert!(descent_rate(t, &p()) < 0.0);
        }

        #[test]
        fn rate_magnitude_peaks_at_t_max(t in 20.0f64..=980.0) {
            prop_assert!(descent_rate(t, &p()).abs() <= descent_rate(980.0, &p()).abs());
        }

        #[test]
        fn stage_map_is_monotone_and_onto(total in 4usize..5000, i in 0usize..5000, j in 0usize..5000) {
            let s = StageSchedule::equal(total, 4).unwrap();
            let (a, b) = (i.min(j) % total, i.max(j) % total);
            let (a, b) = (a.min(b), a.max(b));
            prop_assert!(s.stage_of(a) <= s.stage_of(b));
            let seen: std::collections::BTreeSet<_> = (0..total).map(|k| s.stage_of(k)).collect();
            prop_assert_eq!(seen.len(), 4);
        }

        #[test]
        fn radius_endpoints_never_increase(i in 0usize..6000, j in 0usize..6000) {
            let stages = StageSchedule::default();
            for mode in [RadiusMode::Smooth, RadiusMode::PerStage, RadiusMode::Fixed] {
                let r = RadiusSchedule { mode, ..RadiusSchedule::default() };
                let (a, b) = (r.interval(i.min(j), &stages), r.interval(i.max(j), &stages));
                prop_assert!(b.0 <= a.0 && b.1 <= a.1);
                prop_assert!(a.0 <= a.1 && b.0 <= b.1);
            }
        }

        #[test]
        fn sampler_output_stays_in_window(seed in 0u64..200, total in 10usize..3000) {
            let mut s = TimestepSampler::calibrated(p(), total, TimestepMode::Progressive).unwrap();
            let mut rng = rng_from_seed(seed);
            for _ in 0..total {
                let t = s.sample(&mut rng);
                prop_assert!((20..=980).contains(&t));
            }
        }
    }
}
