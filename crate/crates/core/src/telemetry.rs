//! Head-orientation telemetry: batch ingestion rules, the four-zone yaw
//! partition and per-session attention distributions.
//!
//! Yaw is the horizontal head angle (left/right). Zones are numbered
//! counter-clockwise starting at the front, so Zone 2 lies on the positive
//! yaw side. Every boundary belongs to the zone that follows it
//! counter-clockwise.

use serde::{Deserialize, Serialize};

use crate::ids::SessionId;

pub const DEFAULT_FOV_DEG: f64 = 101.0;

/// Accepted sampling cadence range, in Hz.
pub const CADENCE_RANGE_HZ: (f64, f64) = (1.0, 20.0);

pub const MAX_BATCH: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientationSample {
    pub seq: u64,
    /// Milliseconds since the start of the VR stage.
    pub t_ms: u64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TelemetryError {
    #[error("invalid telemetry: {0}")]
    Validation(String),
    #[error("session has no telemetry")]
    NoTelemetry,
}

/// Maps any finite angle onto `[-180, 180)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    if (-180.0..180.0).contains(&yaw) {
        return yaw;
    }
    let r = (yaw + 180.0).rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        -180.0
    } else {
        r - 180.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZonePartition {
    pub fov_deg: f64,
}

impl Default for ZonePartition {
    fn default() -> Self {
        Self { fov_deg: DEFAULT_FOV_DEG }
    }
}

impl ZonePartition {
    pub fn new(fov_deg: f64) -> Result<Self, TelemetryError> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(TelemetryError::Validation(format!("field of view {fov_deg} outside (0, 180)")));
        }
        Ok(Self { fov_deg })
    }

    /// Arc widths of zones 1–4 in degrees.
    pub fn widths(&self) -> [f64; 4] {
        let side = 180.0 - self.fov_deg;
        [self.fov_deg, side, self.fov_deg, side]
    }

    /// Zone (1–4) containing `yaw`, after normalization.
    pub fn classify(&self, yaw: f64) -> u8 {
        let y = normalize_yaw(yaw);
        let h = self.fov_deg / 2.0;
        if (-h..h).contains(&y) {
            1
        } else if (h..180.0 - h).contains(&y) {
            2
        } else if y >= 180.0 - h || y < -180.0 + h {
            3
        } else {
            4
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDistribution {
    pub session_id: SessionId,
    pub fractions: [f64; 4],
    pub sample_count: u64,
}

impl AttentionDistribution {
    pub fn zone1_share(&self) -> f64 {
        self.fractions[0]
    }
}

pub fn attention_distribution(
    session_id: &SessionId,
    samples: &[OrientationSample],
    partition: &ZonePartition,
) -> Result<AttentionDistribution, TelemetryError> {
    if samples.is_empty() {
        return Err(TelemetryError::NoTelemetry);
    }
    let mut counts = [0u64; 4];
    for s in samples {
        counts[usize::from(partition.classify(s.yaw_deg)) - 1] += 1;
    }
    let n = samples.len() as u64;
    Ok(AttentionDistribution {
        session_id: session_id.clone(),
        fractions: counts.map(|c| c as f64 / n as f64),
        sample_count: n,
    })
}

fn check_sample(s: &OrientationSample) -> Result<(), TelemetryError> {
    let bad = |what: &str, v: f64| TelemetryError::Validation(format!("seq {}: {what} {v} out of range", s.seq));
    if !(s.yaw_deg.is_finite() && (-180.0..180.0).contains(&s.yaw_deg)) {
        return Err(bad("yaw_deg", s.yaw_deg));
    }
    if !(s.pitch_deg.is_finite() && (-90.0..=90.0).contains(&s.pitch_deg)) {
        return Err(bad("pitch_deg", s.pitch_deg));
    }
    if !(s.roll_deg.is_finite() && (-180.0..180.0).contains(&s.roll_deg)) {
        return Err(bad("roll_deg", s.roll_deg));
    }
    Ok(())
}

/// A session's append-only sample trace, ordered by seq.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    samples: Vec<OrientationSample>,
}

impl Trace {
    pub fn samples(&self) -> &[OrientationSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_seq(&self) -> Option<u64> {
        self.samples.last().map(|s| s.seq)
    }

    /// Validates a batch as a whole and returns the samples that are new.
    /// Samples at or below the highest seq already stored are treated as
    /// retries and dropped.
    pub fn check_batch(&self, batch: &[OrientationSample]) -> Result<Vec<OrientationSample>, TelemetryError> {
        if batch.len() > MAX_BATCH {
            return Err(TelemetryError::Validation(format!("batch of {} exceeds {MAX_BATCH} samples", batch.len())));
        }
        for s in batch {
            check_sample(s)?;
        }
        for w in batch.windows(2) {
            if w[1].seq <= w[0].seq {
                return Err(TelemetryError::Validation(format!("seq {} follows {} in batch", w[1].seq, w[0].seq)));
            }
            if w[1].t_ms < w[0].t_ms {
                return Err(TelemetryError::Validation(format!("t_ms decreases at seq {}", w[1].seq)));
            }
        }
        let fresh: Vec<OrientationSample> =
            batch.iter().filter(|s| self.max_seq().is_none_or(|m| s.seq > m)).copied().collect();
        if let (Some(last), Some(first)) = (self.samples.last(), fresh.first()) {
            if first.t_ms < last.t_ms {
                return Err(TelemetryError::Validation(format!("t_ms decreases at seq {}", first.seq)));
            }
        }
        Ok(fresh)
    }

    /// Appends samples already returned by [`Trace::check_batch`].
    pub fn extend(&mut self, fresh: &[OrientationSample]) {
        self.samples.extend_from_slice(fresh);
    }

    /// Observed sampling rate in Hz over the whole trace.
    pub fn cadence_hz(&self) -> Option<f64> {
        let (first, last) = (self.samples.first()?, self.samples.last()?);
        let span = last.t_ms.checked_sub(first.t_ms)?;
        if span == 0 {
            return None;
        }
        Some((self.samples.len() - 1) as f64 * 1000.0 / span as f64)
    }

    pub fn cadence_ok(&self) -> bool {
        self.cadence_hz().is_some_and(|c| (CADENCE_RANGE_HZ.0..=CADENCE_RANGE_HZ.1).contains(&c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seq: u64, yaw: f64) -> OrientationSample {
        OrientationSample { seq, t_ms: seq * 200, yaw_deg: yaw, pitch_deg: 0.0, roll_deg: 0.0 }
    }

    #[test]
    fn classify_reference_points() {
        let p = ZonePartition::default();
        assert_eq!(p.classify(0.0), 1);
        assert_eq!(p.classify(-180.0), 3);
        assert_eq!(p.classify(50.5), 2);
        assert_eq!(p.classify(50.499), 1);
        assert_eq!(p.classify(-50.5), 1);
        assert_eq!(p.classify(-50.5001), 4);
        assert_eq!(p.classify(129.5), 3);
        assert_eq!(p.classify(-129.5), 4);
        assert_eq!(p.classify(-129.5001), 3);
        assert_eq!(p.widths(), [101.0, 79.0, 101.0, 79.0]);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_yaw(180.0), -180.0);
        assert_eq!(normalize_yaw(540.0), -180.0);
        assert_eq!(normalize_yaw(-190.0), 170.0);
        assert_eq!(normalize_yaw(-1e-20), -1e-20);
        let tiny = normalize_yaw(-180.0 - 1e-14);
        assert!((-180.0..180.0).contains(&tiny));
    }

    #[test]
    fn fov_bounds() {
        assert!(ZonePartition::new(0.0).is_err());
        assert!(ZonePartition::new(180.0).is_err());
        assert!(ZonePartition::new(90.0).is_ok());
    }

    #[test]
    fn full_batch_then_retry() {
        let mut trace = Trace::default();
        let batch: Vec<_> = (0..900).map(|i| sample(i, 0.0)).collect();
        let fresh = trace.check_batch(&batch).unwrap();
        assert_eq!(fresh.len(), 900);
        trace.extend(&fresh);
        assert_eq!(trace.check_batch(&batch).unwrap().len(), 0);
        assert_eq!(trace.cadence_hz(), Some(5.0));
        assert!(trace.cadence_ok());
    }

    #[test]
    fn out_of_range_yaw_rejects_batch() {
        let trace = Trace::default();
        let batch = [sample(0, 10.0), sample(1, 200.0)];
        assert!(matches!(trace.check_batch(&batch), Err(TelemetryError::Validation(_))));
        assert!(trace.check_batch(&[sample(0, 180.0)]).is_err());
        let mut pitch = sample(0, 0.0);
        pitch.pitch_deg = 90.5;
        assert!(trace.check_batch(&[pitch]).is_err());
    }

    #[test]
    fn ordering_rules() {
        let trace = Trace::default();
        assert!(trace.check_batch(&[sample(2, 0.0), sample(1, 0.0)]).is_err());
        let mut late = sample(3, 0.0);
        late.t_ms = 0;
        assert!(trace.check_batch(&[sample(2, 0.0), late]).is_err());
    }

    #[test]
    fn distributions() {
        let p = ZonePartition::default();
        let id = SessionId::from("s");
        let front: Vec<_> = (0..10).map(|i| sample(i, 0.0)).collect();
        assert_eq!(attention_distribution(&id, &front, &p).unwrap().fractions, [1.0, 0.0, 0.0, 0.0]);
        let even: Vec<_> = [0.0, 90.0, -180.0, -90.0].iter().enumerate().map(|(i, &y)| sample(i as u64, y)).collect();
        assert_eq!(attention_distribution(&id, &even, &p).unwrap().fractions, [0.25; 4]);
        assert_eq!(attention_distribution(&id, &[], &p), Err(TelemetryError::NoTelemetry));
    }
}
