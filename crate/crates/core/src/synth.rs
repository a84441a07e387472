//! Seeded synthetic cohorts with a planted illness pattern.
//!
//! Each LosNec infant is paired with a Healthy control of near-identical
//! maturity and the same gender. Heart-rate variability and its coupling to
//! SpO2 grow with a maturity index, so a healthy mature infant shows a higher
//! baseline HR/SpO2 cross-correlation than an immature one. LosNec epochs
//! additionally receive transient decelerations time-locked to SpO2
//! desaturations, which raise sample asymmetry and cross-correlation.
//! Hypoxia, bradycardia and tachycardia seconds are planted per second and
//! recorded in [`SynthTruth`], so extracted fractions can be checked exactly.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, Demographics, EpisodeRecord, Gender, Label};
use crate::io::{self, record_id, DemographicsRow, ManifestEntry};
use crate::local_explain::Verdict;
use crate::seed::derive_seed;
use crate::signals::{
    daily_features, epoch_features, Slot, VitalSignEpoch, BRADYCARDIA_HR, DEFAULT_MAX_LAG_S, HYPOXIA_SPO2,
    TACHYCARDIA_HR,
};
use crate::Result;

const STREAM_DEMOGRAPHICS: u64 = 1;
const STREAM_INFANT: u64 = 2;
const STREAM_PROBE: u64 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

/// Range plus median for a demographic variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemographicRanges {
    /// Gestational age, weeks.
    pub ga: Spread,
    /// Postnatal age, weeks.
    pub pna: Spread,
    pub bw_range: (f64, f64),
    pub w_range: (f64, f64),
    /// Birth weight at median ga and its slope per week of ga.
    pub bw_at_median_ga: f64,
    pub bw_per_week: f64,
    pub bw_sd: f64,
    /// Weight minus birth weight at median pna, and gain per postnatal week.
    pub w_offset: f64,
    pub growth_per_week: f64,
    pub w_sd: f64,
    pub female_fraction: f64,
}

impl Default for DemographicRanges {
    fn default() -> Self {
        Self {
            ga: Spread {
                min: 24.0,
                median: 28.0,
                max: 32.0,
            },
            pna: Spread {
                min: 4.0,
                median: 12.5,
                max: 40.0,
            },
            bw_range: (535.0, 1570.0),
            w_range: (525.0, 1800.0),
            bw_at_median_ga: 950.0,
            bw_per_week: 90.0,
            bw_sd: 90.0,
            w_offset: 170.0,
            growth_per_week: 6.0,
            w_sd: 330.0,
            female_fraction: 25.0 / 48.0,
        }
    }
}

/// Largest allowed difference between matched partners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchTolerance {
    pub ga: f64,
    pub w: f64,
    pub pna: f64,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        Self {
            ga: 0.5,
            w: 40.0,
            pna: 1.0,
        }
    }
}

/// Weights of normalized ga, w and pna in the maturity index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaturityWeights {
    pub ga: f64,
    pub w: f64,
    pub pna: f64,
}

impl Default for MaturityWeights {
    fn default() -> Self {
        Self {
            ga: 0.15,
            w: 0.7,
            pna: 0.15,
        }
    }
}

/// How heart-rate variability and HR/SpO2 coupling scale with maturity.
/// Each pair is (value at M = 0, value at M = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaturityCoupling {
    pub hr_variability_sd: (f64, f64),
    pub spo2_variability_sd: (f64, f64),
    /// Fraction of the variability driven by a shared HR/SpO2 component.
    pub shared_fraction: (f64, f64),
    /// Between-infant sd of the shared fraction around its maturity value.
    pub shared_fraction_sd: f64,
    pub shared_tau_s: f64,
    pub own_tau_s: f64,
}

impl Default for MaturityCoupling {
    fn default() -> Self {
        Self {
            hr_variability_sd: (3.0, 7.0),
            spo2_variability_sd: (1.0, 1.5),
            shared_fraction: (0.24, 0.30),
            shared_fraction_sd: 0.08,
            shared_tau_s: 15.0,
            own_tau_s: 8.0,
        }
    }
}

/// Per-class transient deceleration process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IllnessRates {
    pub decelerations_per_hour: f64,
    /// Probability that a deceleration comes with a time-locked desaturation.
    pub desaturation_probability: f64,
    /// Log-scale sd of a per-infant multiplier on the deceleration rate.
    #[serde(default)]
    pub rate_dispersion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IllnessEvents {
    pub healthy: IllnessRates,
    pub losnec: IllnessRates,
    /// Deceleration depth as a multiple of the infant's HR variability sd.
    pub deceleration_depth: (f64, f64),
    pub deceleration_duration_s: (f64, f64),
    /// Desaturation depth as a multiple of the SpO2 variability sd.
    pub desaturation_depth: (f64, f64),
    pub desaturation_lag_s: (f64, f64),
}

impl Default for IllnessEvents {
    fn default() -> Self {
        Self {
            healthy: IllnessRates {
                decelerations_per_hour: 4.0,
                desaturation_probability: 0.1,
                rate_dispersion: 0.0,
            },
            losnec: IllnessRates {
                decelerations_per_hour: 10.0,
                desaturation_probability: 0.8,
                rate_dispersion: 0.0,
            },
            deceleration_depth: (1.5, 4.5),
            deceleration_duration_s: (20.0, 60.0),
            desaturation_depth: (2.0, 4.5),
            desaturation_lag_s: (0.0, 6.0),
        }
    }
}

/// Class-independent threshold events, planted per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdEvents {
    pub bradycardia_per_epoch: f64,
    pub bradycardia_duration_s: (u32, u32),
    /// Expected hypoxia episodes per epoch at the lowest SpO2 baseline
    /// (none at the highest).
    pub hypoxia_per_epoch: f64,
    pub hypoxia_duration_s: (u32, u32),
    /// Expected tachycardia seconds per bpm of baseline above `tachy_onset_bpm`.
    pub tachy_seconds_per_bpm: f64,
    pub tachy_onset_bpm: f64,
    pub tachy_burst_s: (u32, u32),
}

impl Default for ThresholdEvents {
    fn default() -> Self {
        Self {
            bradycardia_per_epoch: 0.15,
            bradycardia_duration_s: (1, 2),
            hypoxia_per_epoch: 1.0,
            hypoxia_duration_s: (2, 6),
            tachy_seconds_per_bpm: 0.25,
            tachy_onset_bpm: 145.0,
            tachy_burst_s: (2, 5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_per_class: usize,
    pub epoch_len_s: usize,
    pub start_date: NaiveDate,
    pub demographics: DemographicRanges,
    pub match_tolerance: MatchTolerance,
    pub maturity_weights: MaturityWeights,
    pub coupling: MaturityCoupling,
    pub hr_baseline: (f64, f64),
    pub spo2_baseline: (f64, f64),
    pub hr_noise_sd: f64,
    pub spo2_noise_sd: f64,
    pub illness: IllnessEvents,
    /// Scales the LosNec/Healthy difference of the illness process; 0 gives
    /// classes with identical generating processes.
    pub illness_contrast: f64,
    pub threshold_events: ThresholdEvents,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_per_class: 24,
            epoch_len_s: 3600,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            demographics: DemographicRanges::default(),
            match_tolerance: MatchTolerance::default(),
            maturity_weights: MaturityWeights::default(),
            coupling: MaturityCoupling::default(),
            hr_baseline: (140.0, 165.0),
            spo2_baseline: (92.0, 97.0),
            hr_noise_sd: 2.0,
            spo2_noise_sd: 0.5,
            illness: IllnessEvents::default(),
            illness_contrast: 1.0,
            threshold_events: ThresholdEvents::default(),
        }
    }
}

fn ordered(name: &str, (lo, hi): (f64, f64)) -> std::result::Result<(), SynthError> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(SynthError::InvalidConfig(format!("{name}: ({lo}, {hi}) is not an ordered range")))
    }
}

fn probability(name: &str, p: f64) -> std::result::Result<(), SynthError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SynthError::InvalidConfig(format!("{name} = {p} outside [0, 1]")))
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> std::result::Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_per_class < 2 {
            return bad("n_per_class must be at least 2".into());
        }
        if self.epoch_len_s < 2 * DEFAULT_MAX_LAG_S + 2 {
            return bad(format!("epoch_len_s must be at least {}", 2 * DEFAULT_MAX_LAG_S + 2));
        }
        let d = &self.demographics;
        for (name, s) in [("ga", d.ga), ("pna", d.pna)] {
            if !(s.min <= s.median && s.median <= s.max) {
                return bad(format!("{name}: median outside range"));
            }
        }
        if d.ga.min < 20.0 || d.ga.max > 45.0 || d.pna.min < 0.0 {
            return bad("ga or pna range outside demographic bounds".into());
        }
        ordered("bw_range", d.bw_range)?;
        ordered("w_range", d.w_range)?;
        if d.bw_range.0 <= 0.0 || d.bw_range.1 >= 6000.0 || d.w_range.0 <= 0.0 || d.w_range.1 >= 6000.0 {
            return bad("weight ranges outside (0, 6000)".into());
        }
        probability("female_fraction", d.female_fraction)?;
        let t = &self.match_tolerance;
        if t.ga < 0.0 || t.w < 0.0 || t.pna < 0.0 {
            return bad("match tolerances must be non-negative".into());
        }
        let m = &self.maturity_weights;
        if m.ga < 0.0 || m.w < 0.0 || m.pna < 0.0 || m.ga + m.w + m.pna <= 0.0 {
            return bad("maturity weights must be non-negative with a positive sum".into());
        }
        let c = &self.coupling;
        let i = &self.illness;
        ordered("hr_baseline", self.hr_baseline)?;
        ordered("spo2_baseline", self.spo2_baseline)?;
        if self.hr_baseline.0 <= BRADYCARDIA_HR || self.hr_baseline.1 >= TACHYCARDIA_HR {
            return bad("hr_baseline must lie strictly between the brady and tachy thresholds".into());
        }
        if self.spo2_baseline.0 <= HYPOXIA_SPO2 || self.spo2_baseline.1 > 100.0 {
            return bad("spo2_baseline must lie in (80, 100]".into());
        }
        probability("shared_fraction.0", c.shared_fraction.0)?;
        probability("shared_fraction.1", c.shared_fraction.1)?;
        if c.hr_variability_sd.0 < 0.0 || c.hr_variability_sd.1 < 0.0 || c.spo2_variability_sd.0 < 0.0 || c.spo2_variability_sd.1 < 0.0 {
            return bad("variability sds must be non-negative".into());
        }
        if c.shared_fraction_sd < 0.0 || i.healthy.rate_dispersion < 0.0 || i.losnec.rate_dispersion < 0.0 {
            return bad("dispersion parameters must be non-negative".into());
        }
        if c.shared_tau_s <= 0.0 || c.own_tau_s <= 0.0 {
            return bad("time constants must be positive".into());
        }
        if self.hr_noise_sd < 0.0 || self.spo2_noise_sd < 0.0 {
            return bad("noise sds must be non-negative".into());
        }
        for (name, r) in [("healthy", i.healthy), ("losnec", i.losnec)] {
            probability(&format!("{name}.desaturation_probability"), r.desaturation_probability)?;
            if r.decelerations_per_hour < 0.0 {
                return bad(format!("{name}.decelerations_per_hour negative"));
            }
        }
        ordered("deceleration_depth", i.deceleration_depth)?;
        ordered("deceleration_duration_s", i.deceleration_duration_s)?;
        ordered("desaturation_depth", i.desaturation_depth)?;
        ordered("desaturation_lag_s", i.desaturation_lag_s)?;
        if i.deceleration_duration_s.0 < 1.0 {
            return bad("deceleration durations must be at least 1 s".into());
        }
        if !(0.0..=1.0).contains(&self.illness_contrast) {
            return bad("illness_contrast outside [0, 1]".into());
        }
        let e = &self.threshold_events;
        for (name, (lo, hi)) in [
            ("bradycardia_duration_s", e.bradycardia_duration_s),
            ("hypoxia_duration_s", e.hypoxia_duration_s),
            ("tachy_burst_s", e.tachy_burst_s),
        ] {
            if lo < 1 || lo > hi {
                return bad(format!("{name}: ({lo}, {hi}) is not an ordered positive range"));
            }
        }
        if e.bradycardia_per_epoch < 0.0 || e.hypoxia_per_epoch < 0.0 || e.tachy_seconds_per_bpm < 0.0 {
            return bad("threshold event rates must be non-negative".into());
        }
        Ok(())
    }

    fn rates(&self, label: Label) -> IllnessRates {
        let h = self.illness.healthy;
        match label {
            Label::Healthy => h,
            Label::LosNec => {
                let l = self.illness.losnec;
                let c = self.illness_contrast;
                IllnessRates {
                    decelerations_per_hour: h.decelerations_per_hour
                        + c * (l.decelerations_per_hour - h.decelerations_per_hour),
                    desaturation_probability: h.desaturation_probability
                        + c * (l.desaturation_probability - h.desaturation_probability),
                    rate_dispersion: h.rate_dispersion + c * (l.rate_dispersion - h.rate_dispersion),
                }
            }
        }
    }

    /// Weighted mean of range-normalized ga, w and pna, in [0, 1].
    pub fn maturity(&self, d: &Demographics) -> f64 {
        let r = &self.demographics;
        let norm = |v: f64, lo: f64, hi: f64| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
        let m = &self.maturity_weights;
        (m.ga * norm(d.ga, r.ga.min, r.ga.max)
            + m.w * norm(d.w, r.w_range.0, r.w_range.1)
            + m.pna * norm(d.pna, r.pna.min, r.pna.max))
            / (m.ga + m.w + m.pna)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Desaturation {
    pub lag_s: f64,
    pub depth_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deceleration {
    pub start_s: f64,
    pub duration_s: f64,
    pub depth_bpm: f64,
    pub desaturation: Option<Desaturation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTruth {
    pub slot: Slot,
    pub hr_baseline: f64,
    pub spo2_baseline: f64,
    /// Planted seconds with SpO2 < 80, HR < 85 and HR > 180.
    pub hypoxia_s: usize,
    pub brady_s: usize,
    pub tachy_s: usize,
    pub decelerations: Vec<Deceleration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordTruth {
    pub record_id: String,
    pub infant_id: String,
    pub date: NaiveDate,
    pub label: Label,
    pub partner: String,
    pub maturity: f64,
    pub demographics: Demographics,
    pub epochs: Vec<EpochTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub records: Vec<RecordTruth>,
}

impl SynthTruth {
    pub fn get(&self, record_id: &str) -> Option<&RecordTruth> {
        self.records.iter().find(|r| r.record_id == record_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub epochs: Vec<VitalSignEpoch>,
    pub demographics: Vec<DemographicsRow>,
    pub truth: SynthTruth,
}

impl SyntheticCohort {
    /// Runs feature extraction over the emitted epochs.
    pub fn to_cohort(&self, max_lag_s: usize) -> Result<Cohort> {
        let feats: Vec<_> = self
            .epochs
            .par_iter()
            .map(|e| epoch_features(e, max_lag_s))
            .collect::<std::result::Result<_, _>>()?;
        let mut records = Vec::with_capacity(self.demographics.len());
        for (row, pair) in self.demographics.iter().zip(feats.chunks(2)) {
            let (demographics, label) = row.parse().map_err(|m| crate::Error::Format {
                path: "synthetic demographics".into(),
                message: m,
            })?;
            records.push(EpisodeRecord {
                record_id: row.record_id(),
                demographics,
                features: daily_features(Some(&pair[0]), Some(&pair[1]))?,
                label,
            });
        }
        Ok(Cohort::new(records)?)
    }

    /// Writes `epochs/*.csv`, `manifest.csv`, `demographics.csv` and
    /// `truth.json` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let mut manifest = Vec::with_capacity(self.epochs.len());
        for e in &self.epochs {
            let rel = Path::new("epochs").join(format!("{}_{}_{}.csv", e.infant_id(), e.date(), e.slot()));
            io::write_epoch(&dir.join(&rel), e)?;
            manifest.push(ManifestEntry {
                infant_id: e.infant_id().to_string(),
                date: e.date(),
                slot: e.slot(),
                path: rel,
            });
        }
        io::write_manifest(&dir.join("manifest.csv"), &manifest)?;
        io::write_demographics(&dir.join("demographics.csv"), &self.demographics)?;
        io::write_json(&dir.join("truth.json"), &self.truth)
    }
}

fn sample_spread(rng: &mut ChaCha8Rng, s: Spread, log_scale: bool) -> f64 {
    // normal around the median (log-normal for skewed ranges), clamped
    let v = if log_scale {
        let sd = ((s.max / s.median).ln().max((s.median / s.min).ln())) / 2.0;
        (s.median.ln() + sd * standard_normal(rng)).exp()
    } else {
        let sd = (s.max - s.median).max(s.median - s.min) / 2.0;
        s.median + sd * standard_normal(rng)
    };
    v.clamp(s.min, s.max)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

fn jitter(rng: &mut ChaCha8Rng, v: f64, tol: f64, (lo, hi): (f64, f64)) -> f64 {
    if tol == 0.0 {
        return v;
    }
    (v + rng.random_range(-tol..=tol)).clamp(lo, hi)
}

fn draw_pair(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Demographics, Demographics) {
    let r = &cfg.demographics;
    let gen = if rng.random_bool(r.female_fraction) { Gender::Female } else { Gender::Male };
    let ga = sample_spread(rng, r.ga, false);
    let pna = sample_spread(rng, r.pna, true);
    let bw = (r.bw_at_median_ga + r.bw_per_week * (ga - r.ga.median) + r.bw_sd * standard_normal(rng))
        .clamp(r.bw_range.0, r.bw_range.1);
    let w = (bw + r.w_offset + r.growth_per_week * (pna - r.pna.median) + r.w_sd * standard_normal(rng))
        .clamp(r.w_range.0, r.w_range.1);
    let a = Demographics { gen, ga, bw, w, pna };
    let b = partner_of(cfg, &a, rng);
    (a, b)
}

fn partner_of(cfg: &SynthConfig, a: &Demographics, rng: &mut ChaCha8Rng) -> Demographics {
    let r = &cfg.demographics;
    let t = &cfg.match_tolerance;
    Demographics {
        gen: a.gen,
        ga: jitter(rng, a.ga, t.ga, (r.ga.min, r.ga.max)),
        bw: jitter(rng, a.bw, t.w, r.bw_range),
        w: jitter(rng, a.w, t.w, r.w_range),
        pna: jitter(rng, a.pna, t.pna, (r.pna.min, r.pna.max)),
    }
}

/// Unit-variance AR(1) series with time constant `tau` seconds.
fn ar1(rng: &mut ChaCha8Rng, n: usize, tau: f64) -> Vec<f64> {
    let phi = (-1.0 / tau).exp();
    let innov = (1.0 - phi * phi).sqrt();
    let mut x = standard_normal(rng);
    (0..n)
        .map(|_| {
            let v = x;
            x = phi * x + innov * standard_normal(rng);
            v
        })
        .collect()
}

/// Raised-cosine bump of unit height centred in `[start, start + dur]`.
fn bump(t: f64, start: f64, dur: f64) -> f64 {
    let u = (t - start) / dur;
    if (0.0..=1.0).contains(&u) {
        let s = (PI * u).sin();
        s * s
    } else {
        0.0
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as usize
}

/// Marks `count` intervals with durations in `dur` (inclusive) at random
/// positions, skipping seconds already blocked.
fn plant(rng: &mut ChaCha8Rng, n: usize, count: usize, dur: (u32, u32), flags: &mut [bool], blocked: &[bool]) {
    for _ in 0..count {
        let d = (rng.random_range(dur.0..=dur.1) as usize).min(n);
        let start = rng.random_range(0..=n - d);
        for t in start..start + d {
            if !blocked[t] {
                flags[t] = true;
            }
        }
    }
}

struct InfantPlan<'a> {
    id: &'a str,
    date: NaiveDate,
    label: Label,
    maturity: f64,
    hr_base: f64,
    spo2_base: f64,
    shared_fraction: f64,
    rate_multiplier: f64,
}

fn simulate_epoch(
    cfg: &SynthConfig,
    plan: &InfantPlan<'_>,
    slot: Slot,
    rng: &mut ChaCha8Rng,
) -> (VitalSignEpoch, EpochTruth) {
    let n = cfg.epoch_len_s;
    let c = &cfg.coupling;
    let m = plan.maturity;
    let lerp = |(a, b): (f64, f64)| a + (b - a) * m;
    let sd_hr = lerp(c.hr_variability_sd);
    let sd_o = lerp(c.spo2_variability_sd);
    let f = plan.shared_fraction;
    let (fs, fo) = (f.sqrt(), (1.0 - f).sqrt());

    let hr_base = plan.hr_base + rng.random_range(-1.0..=1.0);
    let spo2_base = (plan.spo2_base + rng.random_range(-0.3..=0.3)).min(99.0);
    let shared = ar1(rng, n, c.shared_tau_s);
    let own_h = ar1(rng, n, c.own_tau_s);
    let own_o = ar1(rng, n, c.own_tau_s);
    let mut hr: Vec<f64> = (0..n)
        .map(|t| hr_base + sd_hr * (fs * shared[t] + fo * own_h[t]) + cfg.hr_noise_sd * standard_normal(rng))
        .collect();
    let mut spo2: Vec<f64> = (0..n)
        .map(|t| spo2_base + sd_o * (fs * shared[t] + fo * own_o[t]) + cfg.spo2_noise_sd * standard_normal(rng))
        .collect();

    let ill = &cfg.illness;
    let rates = cfg.rates(plan.label);
    let count = poisson(rng, plan.rate_multiplier * rates.decelerations_per_hour * n as f64 / 3600.0);
    let mut decelerations = Vec::with_capacity(count);
    for _ in 0..count {
        let duration_s = rng.random_range(ill.deceleration_duration_s.0..=ill.deceleration_duration_s.1);
        let start_s = rng.random_range(0.0..=(n as f64 - duration_s).max(0.0));
        let depth_bpm = sd_hr * rng.random_range(ill.deceleration_depth.0..=ill.deceleration_depth.1);
        let desaturation = rng.random_bool(rates.desaturation_probability).then(|| Desaturation {
            lag_s: rng.random_range(ill.desaturation_lag_s.0..=ill.desaturation_lag_s.1),
            depth_pct: sd_o * rng.random_range(ill.desaturation_depth.0..=ill.desaturation_depth.1),
        });
        let lo = start_s.floor() as usize;
        let hi = ((start_s + duration_s).ceil() as usize).min(n - 1);
        for (t, h) in hr.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *h -= depth_bpm * bump(t as f64, start_s, duration_s);
        }
        if let Some(d) = desaturation {
            let s = start_s + d.lag_s;
            let hi = ((s + duration_s).ceil() as usize).min(n - 1);
            for t in lo..=hi {
                spo2[t] -= d.depth_pct * bump(t as f64, s, duration_s);
            }
        }
        decelerations.push(Deceleration {
            start_s,
            duration_s,
            depth_bpm,
            desaturation,
        });
    }

    // per-second threshold flags; brady takes precedence over tachy
    let e = &cfg.threshold_events;
    let none = vec![false; n];
    let mut brady = vec![false; n];
    let brady_count = poisson(rng, e.bradycardia_per_epoch);
    plant(rng, n, brady_count, e.bradycardia_duration_s, &mut brady, &none);
    let mut tachy = vec![false; n];
    let tachy_s = e.tachy_seconds_per_bpm * (plan.hr_base - e.tachy_onset_bpm).max(0.0);
    let mean_burst = 0.5 * (e.tachy_burst_s.0 + e.tachy_burst_s.1) as f64;
    let bursts = poisson(rng, tachy_s / mean_burst);
    plant(rng, n, bursts, e.tachy_burst_s, &mut tachy, &brady);
    let mut hypoxia = vec![false; n];
    let (lo_o, hi_o) = cfg.spo2_baseline;
    let depth = if hi_o > lo_o { ((hi_o - plan.spo2_base) / (hi_o - lo_o)).clamp(0.0, 1.0) } else { 0.5 };
    let hyp_count = poisson(rng, e.hypoxia_per_epoch * depth);
    plant(rng, n, hyp_count, e.hypoxia_duration_s, &mut hypoxia, &none);

    for t in 0..n {
        hr[t] = if brady[t] {
            (BRADYCARDIA_HR - 8.0 + 3.0 * standard_normal(rng)).clamp(55.0, BRADYCARDIA_HR - 0.5)
        } else if tachy[t] {
            (TACHYCARDIA_HR + 6.0 + 3.0 * standard_normal(rng)).clamp(TACHYCARDIA_HR + 0.5, 230.0)
        } else {
            hr[t].clamp(BRADYCARDIA_HR + 0.5, TACHYCARDIA_HR - 0.5)
        };
        spo2[t] = if hypoxia[t] {
            (HYPOXIA_SPO2 - 5.0 + 2.0 * standard_normal(rng)).clamp(60.0, HYPOXIA_SPO2 - 0.5)
        } else {
            spo2[t].clamp(HYPOXIA_SPO2 + 0.5, 100.0)
        };
    }
    let count_true = |v: &[bool]| v.iter().filter(|&&b| b).count();
    let truth = EpochTruth {
        slot,
        hr_baseline: hr_base,
        spo2_baseline: spo2_base,
        hypoxia_s: count_true(&hypoxia),
        brady_s: count_true(&brady),
        tachy_s: count_true(&tachy),
        decelerations,
    };
    let epoch = VitalSignEpoch::new(plan.id, plan.date, slot, hr, spo2).expect("clamped series satisfy epoch invariants");
    (epoch, truth)
}

fn simulate_infant(
    cfg: &SynthConfig,
    id: &str,
    date: NaiveDate,
    label: Label,
    demographics: &Demographics,
    seed: u64,
) -> ([VitalSignEpoch; 2], [EpochTruth; 2], f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maturity = cfg.maturity(demographics);
    let plan = InfantPlan {
        id,
        date,
        label,
        maturity,
        hr_base: rng.random_range(cfg.hr_baseline.0..=cfg.hr_baseline.1),
        spo2_base: rng.random_range(cfg.spo2_baseline.0..=cfg.spo2_baseline.1),
        shared_fraction: {
            let (a, b) = cfg.coupling.shared_fraction;
            (a + (b - a) * maturity + cfg.coupling.shared_fraction_sd * standard_normal(&mut rng)).clamp(0.0, 1.0)
        },
        rate_multiplier: (cfg.rates(label).rate_dispersion * standard_normal(&mut rng)).exp(),
    };
    let (em, tm) = simulate_epoch(cfg, &plan, Slot::Morning, &mut rng);
    let (ea, ta) = simulate_epoch(cfg, &plan, Slot::Afternoon, &mut rng);
    ([em, ea], [tm, ta], maturity)
}

/// Generates `n_per_class` matched LosNec/Healthy pairs, one infant-day
/// each, with morning and afternoon epochs.
pub fn generate_cohort(config: &SynthConfig) -> std::result::Result<SyntheticCohort, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_DEMOGRAPHICS]));
    let pairs: Vec<(Demographics, Demographics)> = (0..config.n_per_class).map(|_| draw_pair(config, &mut rng)).collect();

    struct Infant {
        id: String,
        partner: String,
        date: NaiveDate,
        label: Label,
        demographics: Demographics,
    }
    let mut infants = Vec::with_capacity(2 * pairs.len());
    for (k, (sick, control)) in pairs.iter().enumerate() {
        let date = config.start_date + Days::new(k as u64);
        let (l, h) = (format!("ln{k:02}"), format!("hc{k:02}"));
        infants.push(Infant {
            id: l.clone(),
            partner: h.clone(),
            date,
            label: Label::LosNec,
            demographics: *sick,
        });
        infants.push(Infant {
            id: h,
            partner: l,
            date,
            label: Label::Healthy,
            demographics: *control,
        });
    }

    let simulated: Vec<_> = infants
        .par_iter()
        .enumerate()
        .map(|(i, inf)| {
            let seed = derive_seed(config.seed, &[STREAM_INFANT, i as u64]);
            simulate_infant(config, &inf.id, inf.date, inf.label, &inf.demographics, seed)
        })
        .collect();

    let mut epochs = Vec::with_capacity(2 * infants.len());
    let mut demographics = Vec::with_capacity(infants.len());
    let mut records = Vec::with_capacity(infants.len());
    for (inf, (eps, truths, maturity)) in infants.iter().zip(simulated) {
        let d = &inf.demographics;
        demographics.push(DemographicsRow {
            infant_id: inf.id.clone(),
            date: inf.date,
            gen: d.gen.to_string(),
            ga_wk: d.ga,
            bw_g: d.bw,
            w_g: d.w,
            pna_wk: d.pna,
            label: inf.label.to_string(),
        });
        records.push(RecordTruth {
            record_id: record_id(&inf.id, inf.date),
            infant_id: inf.id.clone(),
            date: inf.date,
            label: inf.label,
            partner: inf.partner.clone(),
            maturity,
            demographics: *d,
            epochs: truths.to_vec(),
        });
        epochs.extend(eps);
    }
    Ok(SyntheticCohort {
        epochs,
        demographics,
        truth: SynthTruth {
            config: config.clone(),
            records,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeMode {
    PatternViolating,
    PatternConsistent,
}

/// A synthetic query infant-day with the label a model should be trained
/// on to force its prediction, and the verdict expected from the contest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub mode: ProbeMode,
    /// The query; `label` is its true (generating) class.
    pub record: EpisodeRecord,
    pub training_label: Label,
    pub expected: Verdict,
    pub template: String,
}

impl Probe {
    /// Copies of the query carrying the training label, appended to the
    /// training data so the model predicts that label for the query.
    pub fn training_copies(&self, copies: usize) -> Vec<EpisodeRecord> {
        (0..copies)
            .map(|c| EpisodeRecord {
                record_id: format!("{}#{c}", self.record.record_id),
                label: self.training_label,
                ..self.record.clone()
            })
            .collect()
    }
}

/// Simulates a fresh infant-day of class A next to a random cohort infant of
/// that class. PatternViolating probes are trained as the other class
/// (expected Contest); PatternConsistent ones as A (expected Justify). With
/// zero illness contrast the expected verdict is Inconclusive.
pub fn plant_misclassification_probe(
    cohort: &Cohort,
    truth: &SynthTruth,
    mode: ProbeMode,
    seed: u64,
) -> Result<Probe> {
    let cfg = &truth.config;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_PROBE]));
    let class = if rng.random_bool(0.5) { Label::LosNec } else { Label::Healthy };
    let candidates: Vec<&RecordTruth> = truth
        .records
        .iter()
        .filter(|r| r.label == class && cohort.get(&r.record_id).is_some())
        .collect();
    if candidates.is_empty() {
        return Err(SynthError::InvalidConfig(format!("cohort holds no {class} records from this generator")).into());
    }
    let template = candidates[rng.random_range(0..candidates.len())];
    let demographics = partner_of(cfg, &template.demographics, &mut rng);
    let id = format!("probe{seed}");
    let date = template.date;
    let mut attempt = 0u64;
    let features = loop {
        let s = derive_seed(seed, &[STREAM_PROBE, 1, attempt]);
        let (eps, _, _) = simulate_infant(cfg, &id, date, class, &demographics, s);
        let f = epoch_features(&eps[0], DEFAULT_MAX_LAG_S)
            .and_then(|m| epoch_features(&eps[1], DEFAULT_MAX_LAG_S).and_then(|a| daily_features(Some(&m), Some(&a))));
        match f {
            Ok(f) => break f,
            Err(e) if attempt >= 8 => return Err(e.into()),
            Err(_) => attempt += 1,
        }
    };
    let record = EpisodeRecord {
        record_id: record_id(&id, date),
        demographics,
        features,
        label: class,
    };
    let (training_label, expected) = match mode {
        ProbeMode::PatternViolating => (class.flipped(), Verdict::Contest),
        ProbeMode::PatternConsistent => (class, Verdict::Justify),
    };
    let expected = if cfg.illness_contrast == 0.0 { Verdict::Inconclusive } else { expected };
    Ok(Probe {
        mode,
        record,
        training_label,
        expected,
        template: template.record_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::threshold_fractions;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_per_class: 4,
            ..SynthConfig::with_seed(seed)
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_cohort(&small(3)).unwrap();
        let b = generate_cohort(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&small(4)).unwrap();
        assert_ne!(a.epochs, c.epochs);
    }

    #[test]
    fn planted_counts_are_exact() {
        let cfg = SynthConfig {
            threshold_events: ThresholdEvents {
                bradycardia_per_epoch: 2.0,
                hypoxia_per_epoch: 4.0,
                ..ThresholdEvents::default()
            },
            ..small(11)
        };
        let s = generate_cohort(&cfg).unwrap();
        let mut any = [0usize; 3];
        for (e, t) in s.epochs.iter().zip(s.truth.records.iter().flat_map(|r| &r.epochs)) {
            let fr = threshold_fractions(e);
            let n = e.len() as f64;
            assert_eq!(fr.hs, t.hypoxia_s as f64 / n);
            assert_eq!(fr.brs, t.brady_s as f64 / n);
            assert_eq!(fr.ts, t.tachy_s as f64 / n);
            any[0] += t.hypoxia_s;
            any[1] += t.brady_s;
            any[2] += t.tachy_s;
        }
        assert!(any.iter().all(|&c| c > 0), "{any:?}");
    }

    #[test]
    fn pairs_matched_within_tolerance() {
        let cfg = small(5);
        let s = generate_cohort(&cfg).unwrap();
        let t = cfg.match_tolerance;
        for pair in s.truth.records.chunks(2) {
            let (a, b) = (&pair[0].demographics, &pair[1].demographics);
            assert_eq!(a.gen, b.gen);
            assert!((a.ga - b.ga).abs() <= t.ga);
            assert!((a.w - b.w).abs() <= t.w);
            assert!((a.pna - b.pna).abs() <= t.pna);
            assert_eq!(pair[0].label, Label::LosNec);
            assert_eq!(pair[1].label, Label::Healthy);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.illness.losnec.desaturation_probability = 1.5;
        assert!(matches!(generate_cohort(&cfg), Err(SynthError::InvalidConfig(_))));
        let cfg = SynthConfig {
            hr_baseline: (150.0, 140.0),
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::default();
        cfg.illness.healthy.rate_dispersion = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_contrast_gives_losnec_the_healthy_rates() {
        let mut cfg = SynthConfig::default();
        cfg.illness.healthy.rate_dispersion = 0.5;
        assert_eq!(cfg.rates(Label::LosNec).rate_dispersion, 0.0);
        cfg.illness_contrast = 0.0;
        assert_eq!(cfg.rates(Label::LosNec), cfg.rates(Label::Healthy));
        cfg.illness_contrast = 0.5;
        let mid = cfg.rates(Label::LosNec);
        assert_eq!(mid.decelerations_per_hour, 7.0);
        assert_eq!(mid.rate_dispersion, 0.25);
    }

    #[test]
    fn zero_contrast_probe_expects_inconclusive() {
        let cfg = SynthConfig {
            illness_contrast: 0.0,
            ..small(2)
        };
        let s = generate_cohort(&cfg).unwrap();
        let cohort = s.to_cohort(DEFAULT_MAX_LAG_S).unwrap();
        let p = plant_misclassification_probe(&cohort, &s.truth, ProbeMode::PatternViolating, 9).unwrap();
        assert_eq!(p.expected, Verdict::Inconclusive);
        let s = generate_cohort(&small(2)).unwrap();
        let p = plant_misclassification_probe(&cohort, &s.truth, ProbeMode::PatternViolating, 9).unwrap();
        assert_eq!(p.expected, Verdict::Contest);
        assert_eq!(p.training_label, p.record.label.flipped());
        assert_eq!(p.training_copies(2)[1].label, p.training_label);
    }
}
