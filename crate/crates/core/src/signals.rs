//! One-hour 1 Hz heart-rate / SpO2 epochs and the seven dynamic features
//! derived from them.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hypoxia: SpO2 strictly below this value (%).
pub const HYPOXIA_SPO2: f64 = 80.0;
/// Bradycardia: HR strictly below this value (beats/min).
pub const BRADYCARDIA_HR: f64 = 85.0;
/// Tachycardia: HR strictly above this value (beats/min).
pub const TACHYCARDIA_HR: f64 = 180.0;
/// Default lag window for the HR/SpO2 cross-correlation, in seconds.
pub const DEFAULT_MAX_LAG_S: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series lengths differ ({hr} vs {spo2})")]
    LengthMismatch { hr: usize, spo2: usize },
    #[error("series of length {len} too short (need at least {needed})")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("no samples strictly above and below the median")]
    DegenerateDistribution,
    #[error("sample {index} out of physical range: {what} = {value}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("missing {0} epoch for the day")]
    MissingEpoch(Slot),
    #[error("epoch {infant_id}/{date}/{slot}: {source}")]
    InEpoch {
        infant_id: String,
        date: NaiveDate,
        slot: Slot,
        #[source]
        source: Box<SignalError>,
    },
}

impl SignalError {
    pub fn code(&self) -> &'static str {
        match self {
            SignalError::ZeroVariance => "ZeroVariance",
            SignalError::LengthMismatch { .. } => "LengthMismatch",
            SignalError::SeriesTooShort { .. } => "SeriesTooShort",
            SignalError::DegenerateDistribution => "DegenerateDistribution",
            SignalError::OutOfRange { .. } => "OutOfRange",
            SignalError::MissingEpoch(_) => "MissingEpoch",
            SignalError::InEpoch { source, .. } => source.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Morning,
    Afternoon,
}

impl std::fmt::Display for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Slot::Morning => "morning",
            Slot::Afternoon => "afternoon",
        })
    }
}

impl std::str::FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "morning" => Ok(Slot::Morning),
            "afternoon" => Ok(Slot::Afternoon),
            other => Err(format!("unknown slot '{other}'")),
        }
    }
}

/// A validated one-hour recording for one infant and one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalSignEpoch {
    infant_id: String,
    date: NaiveDate,
    slot: Slot,
    hr: Vec<f64>,
    spo2: Vec<f64>,
}

impl VitalSignEpoch {
    /// Builds an epoch, rejecting it whole if any sample is outside the
    /// physical range (no imputation).
    pub fn new(
        infant_id: impl Into<String>,
        date: NaiveDate,
        slot: Slot,
        hr: Vec<f64>,
        spo2: Vec<f64>,
    ) -> Result<Self, SignalError> {
        if hr.len() != spo2.len() {
            return Err(SignalError::LengthMismatch {
                hr: hr.len(),
                spo2: spo2.len(),
            });
        }
        if hr.len() < 2 {
            return Err(SignalError::SeriesTooShort {
                len: hr.len(),
                needed: 2,
            });
        }
        for (index, &value) in hr.iter().enumerate() {
            if !(value > 0.0 && value < 300.0) {
                return Err(SignalError::OutOfRange { what: "hr", index, value });
            }
        }
        for (index, &value) in spo2.iter().enumerate() {
            if !(value > 0.0 && value <= 100.0) {
                return Err(SignalError::OutOfRange { what: "spo2", index, value });
            }
        }
        Ok(Self {
            infant_id: infant_id.into(),
            date,
            slot,
            hr,
            spo2,
        })
    }

    pub fn infant_id(&self) -> &str {
        &self.infant_id
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn slot(&self) -> Slot {
        self.slot
    }

    pub fn hr(&self) -> &[f64] {
        &self.hr
    }

    pub fn spo2(&self) -> &[f64] {
        &self.spo2
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }
}

/// The seven per-epoch (or per-day) vital-sign features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicFeatures {
    pub xc_hr_spo2: f64,
    pub sa_hr: f64,
    pub hrm: f64,
    pub spo2m: f64,
    pub hs: f64,
    pub brs: f64,
    pub ts: f64,
}

impl DynamicFeatures {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.xc_hr_spo2,
            self.sa_hr,
            self.hrm,
            self.spo2m,
            self.hs,
            self.brs,
            self.ts,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            xc_hr_spo2: v[0],
            sa_hr: v[1],
            hrm: v[2],
            spo2m: v[3],
            hs: v[4],
            brs: v[5],
            ts: v[6],
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Subtracts the mean and divides by the population standard deviation.
fn standardize(xs: &[f64]) -> Result<Vec<f64>, SignalError> {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(SignalError::ZeroVariance);
    }
    Ok(xs.iter().map(|x| (x - m) / sd).collect())
}

/// Maximum (signed) lagged correlation of the standardized series.
///
/// At lag `tau` the correlation is the mean of `z_hr[t] * z_spo2[t + tau]`
/// over the overlapping window, for `tau` in `-max_lag_s..=max_lag_s`.
pub fn max_cross_correlation(hr: &[f64], spo2: &[f64], max_lag_s: usize) -> Result<f64, SignalError> {
    if hr.len() != spo2.len() {
        return Err(SignalError::LengthMismatch {
            hr: hr.len(),
            spo2: spo2.len(),
        });
    }
    let n = hr.len();
    let needed = 2 * max_lag_s + 2;
    if n < needed {
        return Err(SignalError::SeriesTooShort { len: n, needed });
    }
    let zh = standardize(hr)?;
    let zs = standardize(spo2)?;

    let lag = max_lag_s as isize;
    let mut best = f64::NEG_INFINITY;
    for tau in -lag..=lag {
        let (h, s) = if tau >= 0 {
            let t = tau as usize;
            (&zh[..n - t], &zs[t..])
        } else {
            let t = (-tau) as usize;
            (&zh[t..], &zs[..n - t])
        };
        let dot: f64 = h.iter().zip(s).map(|(a, b)| a * b).sum();
        let r = dot / h.len() as f64;
        if r > best {
            best = r;
        }
    }
    // windowed sums of globally standardized series are not bounded by 1
    Ok(best.clamp(-1.0, 1.0))
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Ratio of deceleration to acceleration squared deviations about the
/// median. Transient decelerations push it above 1.
pub fn sample_asymmetry(hr: &[f64]) -> Result<f64, SignalError> {
    if hr.len() < 3 {
        return Err(SignalError::SeriesTooShort {
            len: hr.len(),
            needed: 3,
        });
    }
    let m = median(hr);
    let n = hr.len() as f64;
    let mut dec = 0.0;
    let mut acc = 0.0;
    for &x in hr {
        if x < m {
            dec += (m - x) * (m - x);
        } else if x > m {
            acc += (x - m) * (x - m);
        }
    }
    if dec == 0.0 || acc == 0.0 {
        return Err(SignalError::DegenerateDistribution);
    }
    Ok((dec / n) / (acc / n))
}

/// Fractions of hypoxia, bradycardia and tachycardia seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdFractions {
    pub hs: f64,
    pub brs: f64,
    pub ts: f64,
}

pub fn threshold_fractions(epoch: &VitalSignEpoch) -> ThresholdFractions {
    let n = epoch.len() as f64;
    let hypoxic = epoch.spo2.iter().filter(|&&s| s < HYPOXIA_SPO2).count();
    let brady = epoch.hr.iter().filter(|&&h| h < BRADYCARDIA_HR).count();
    let tachy = epoch.hr.iter().filter(|&&h| h > TACHYCARDIA_HR).count();
    ThresholdFractions {
        hs: hypoxic as f64 / n,
        brs: brady as f64 / n,
        ts: tachy as f64 / n,
    }
}

pub fn epoch_features(epoch: &VitalSignEpoch, max_lag_s: usize) -> Result<DynamicFeatures, SignalError> {
    let tag = |source: SignalError| SignalError::InEpoch {
        infant_id: epoch.infant_id.clone(),
        date: epoch.date,
        slot: epoch.slot,
        source: Box::new(source),
    };
    let xc = max_cross_correlation(&epoch.hr, &epoch.spo2, max_lag_s).map_err(tag)?;
    let sa = sample_asymmetry(&epoch.hr).map_err(tag)?;
    let fr = threshold_fractions(epoch);
    Ok(DynamicFeatures {
        xc_hr_spo2: xc,
        sa_hr: sa,
        hrm: mean(&epoch.hr),
        spo2m: mean(&epoch.spo2),
        hs: fr.hs,
        brs: fr.brs,
        ts: fr.ts,
    })
}

/// Daily value: elementwise mean of the morning and afternoon epochs.
pub fn daily_features(
    morning: Option<&DynamicFeatures>,
    afternoon: Option<&DynamicFeatures>,
) -> Result<DynamicFeatures, SignalError> {
    let m = morning.ok_or(SignalError::MissingEpoch(Slot::Morning))?;
    let a = afternoon.ok_or(SignalError::MissingEpoch(Slot::Afternoon))?;
    let (m, a) = (m.to_array(), a.to_array());
    let mut out = [0.0; 7];
    for i in 0..7 {
        out[i] = 0.5 * (m[i] + a[i]);
    }
    Ok(DynamicFeatures::from_array(out))
}
