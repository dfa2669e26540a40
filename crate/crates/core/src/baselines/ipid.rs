//! IP-ID increment tracking of DNS requests and Theil-Sen slope matching.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use super::{BaselineError, BaselineRates};
use crate::dns::DnsEvent;
use crate::flowdata::{DeviceModelId, Label};

const WRAP: u64 = 1 << 16;

/// DNS requests of one source towards one resolver, with the 16-bit IP-ID
/// unwrapped into a non-decreasing sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct IpIdTrack {
    pub resolver_ip: Ipv4Addr,
    pub observations: Vec<(u64, u16)>,
    pub unwrapped_ids: Vec<u64>,
}

impl IpIdTrack {
    pub fn new(resolver_ip: Ipv4Addr, observations: Vec<(u64, u16)>) -> Self {
        let ids: Vec<u16> = observations.iter().map(|o| o.1).collect();
        Self {
            resolver_ip,
            unwrapped_ids: unwrap_ipid(&ids),
            observations,
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Consecutive sub-tracks of `len` observations (the tail shorter than
    /// `len` is dropped), each unwrapped afresh.
    pub fn segments(&self, len: usize) -> impl Iterator<Item = IpIdTrack> + '_ {
        self.observations
            .chunks_exact(len.max(1))
            .map(|c| IpIdTrack::new(self.resolver_ip, c.to_vec()))
    }
}

/// Adds 65536 whenever an id falls below the running unwrapped value.
pub fn unwrap_ipid(ids: &[u16]) -> Vec<u64> {
    let mut offset = 0u64;
    let mut prev = 0u64;
    ids.iter()
        .map(|&id| {
            let mut v = id as u64 + offset;
            while v < prev {
                offset += WRAP;
                v += WRAP;
            }
            prev = v;
            v
        })
        .collect()
}

/// Groups events into tracks keyed by (observed source, resolver), each
/// ordered by timestamp (stable for equal timestamps).
pub fn tracks_by_source(events: &[DnsEvent]) -> BTreeMap<(Ipv4Addr, Ipv4Addr), (IpIdTrack, Label)> {
    let mut grouped: BTreeMap<(Ipv4Addr, Ipv4Addr), Vec<&DnsEvent>> = BTreeMap::new();
    for e in events {
        grouped.entry((e.observed_src_ip, e.resolver_ip)).or_default().push(e);
    }
    grouped
        .into_iter()
        .map(|(key, mut evs)| {
            evs.sort_by_key(|e| e.timestamp_ms);
            let label = majority_label(evs.iter().map(|e| &e.label));
            let obs = evs.iter().map(|e| (e.timestamp_ms, e.ip_id)).collect();
            (key, (IpIdTrack::new(key.1, obs), label))
        })
        .collect()
}

fn majority_label<'a>(labels: impl Iterator<Item = &'a Label>) -> Label {
    let mut counts: BTreeMap<&Label, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|&(_, c)| c)
        .map(|(l, _)| l.clone())
        .unwrap_or(Label::Unlabeled)
}

/// Histogram of successive differences of the unwrapped ids.
pub fn increment_distribution(track: &IpIdTrack) -> Result<BTreeMap<u64, u64>, BaselineError> {
    if track.len() < 2 {
        return Err(BaselineError::InsufficientData {
            needed: 2,
            got: track.len(),
        });
    }
    let mut hist = BTreeMap::new();
    for w in track.unwrapped_ids.windows(2) {
        *hist.entry(w[1] - w[0]).or_default() += 1;
    }
    Ok(hist)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Theil-Sen line: median of pairwise slopes over pairs with `x_j > x_i`,
/// intercept the median of `y - slope * x`. `None` if no such pair exists.
pub fn theil_sen(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    assert_eq!(xs.len(), ys.len());
    let mut slopes = Vec::with_capacity(xs.len() * xs.len().saturating_sub(1) / 2);
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let (dx, dy) = if xs[j] >= xs[i] {
                (xs[j] - xs[i], ys[j] - ys[i])
            } else {
                (xs[i] - xs[j], ys[i] - ys[j])
            };
            if dx > 0.0 {
                slopes.push(dy / dx);
            }
        }
    }
    let slope = median(slopes)?;
    let intercept = median(xs.iter().zip(ys).map(|(x, y)| y - slope * x).collect())?;
    Some(LineFit { slope, intercept })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    /// IP-ID units per request.
    pub per_index: f64,
    pub intercept: f64,
    /// IP-ID units per second; `None` when all timestamps coincide.
    pub per_second: Option<f64>,
    /// Median absolute residual of the per-index fit.
    pub residual_scale: f64,
}

pub fn fit_slope(track: &IpIdTrack) -> Result<SlopeFit, BaselineError> {
    if track.len() < 3 {
        return Err(BaselineError::InsufficientData {
            needed: 3,
            got: track.len(),
        });
    }
    let ys: Vec<f64> = track.unwrapped_ids.iter().map(|&v| v as f64).collect();
    let idx: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    let line = theil_sen(&idx, &ys).expect("at least two distinct indices");
    let residual_scale = median(
        idx.iter()
            .zip(&ys)
            .map(|(x, y)| libm::fabs(y - (line.intercept + line.slope * x)))
            .collect(),
    )
    .unwrap_or(0.0);
    let t0 = track.observations[0].0;
    let secs: Vec<f64> = track
        .observations
        .iter()
        .map(|o| o.0.saturating_sub(t0) as f64 / 1000.0)
        .collect();
    Ok(SlopeFit {
        per_index: line.slope,
        intercept: line.intercept,
        per_second: theil_sen(&secs, &ys).map(|l| l.slope),
        residual_scale,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeModel {
    pub model: DeviceModelId,
    pub slope_per_index: f64,
    pub slope_per_second: Option<f64>,
    pub residual_scale: f64,
    /// Pooled over all training tracks.
    pub increment_histogram: BTreeMap<u64, u64>,
}

impl SlopeModel {
    /// Fits every track with at least three observations and keeps the
    /// median of the per-track slopes.
    pub fn fit(model: DeviceModelId, tracks: &[IpIdTrack]) -> Result<Self, BaselineError> {
        let fits: Vec<SlopeFit> = tracks.iter().filter_map(|t| fit_slope(t).ok()).collect();
        if fits.is_empty() {
            let got = tracks.iter().map(IpIdTrack::len).max().unwrap_or(0);
            return Err(BaselineError::InsufficientData { needed: 3, got });
        }
        let mut increment_histogram = BTreeMap::new();
        for t in tracks {
            if let Ok(h) = increment_distribution(t) {
                for (k, v) in h {
                    *increment_histogram.entry(k).or_default() += v;
                }
            }
        }
        Ok(Self {
            model,
            slope_per_index: median(fits.iter().map(|f| f.per_index).collect()).expect("non-empty"),
            slope_per_second: median(fits.iter().filter_map(|f| f.per_second).collect()),
            residual_scale: median(fits.iter().map(|f| f.residual_scale).collect()).expect("non-empty"),
            increment_histogram,
        })
    }
}

pub const DEFAULT_REL_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub enum SlopeMatch {
    Matched(DeviceModelId),
    NoCandidate,
    /// Two or more models tie at the minimal relative distance.
    Ambiguous(Vec<DeviceModelId>),
}

/// Matches the test track's per-request slope to the trained model with the
/// smallest relative distance `|test - trained| / trained`, if within
/// `rel_tolerance`. Models with a non-positive slope are never candidates.
pub fn slope_match(
    test_track: &IpIdTrack,
    trained: &[SlopeModel],
    rel_tolerance: f64,
) -> Result<SlopeMatch, BaselineError> {
    let slope = fit_slope(test_track)?.per_index;
    let mut best: Option<f64> = None;
    let mut winners: Vec<DeviceModelId> = Vec::new();
    for m in trained.iter().filter(|m| m.slope_per_index > 0.0) {
        let d = libm::fabs(slope - m.slope_per_index) / m.slope_per_index;
        if d > rel_tolerance {
            continue;
        }
        match best {
            Some(b) if d > b => {}
            Some(b) if d == b => winners.push(m.model.clone()),
            _ => {
                best = Some(d);
                winners.clear();
                winners.push(m.model.clone());
            }
        }
    }
    Ok(match winners.len() {
        0 => SlopeMatch::NoCandidate,
        1 => SlopeMatch::Matched(winners.pop().expect("one")),
        _ => SlopeMatch::Ambiguous(winners),
    })
}

/// Trains one slope model per labeled model from all of its tracks.
pub fn train_slope_models(events: &[DnsEvent]) -> Vec<SlopeModel> {
    let mut per_model: BTreeMap<DeviceModelId, Vec<IpIdTrack>> = BTreeMap::new();
    for (_, (track, label)) in tracks_by_source(events) {
        if let Label::Model(m) = label {
            per_model.entry(m).or_default().push(track);
        }
    }
    per_model
        .into_iter()
        .filter_map(|(m, tracks)| SlopeModel::fit(m, &tracks).ok())
        .collect()
}

/// Splits each test track into `segment_len`-request segments, matches each
/// segment and scores per model: a segment of model M is a positive for M,
/// every other labeled segment a negative.
pub fn evaluate_slope_matching(
    test_events: &[DnsEvent],
    trained: &[SlopeModel],
    rel_tolerance: f64,
    segment_len: usize,
) -> Vec<BaselineRates> {
    let segment_len = segment_len.max(3);
    let mut outcomes: Vec<(Label, SlopeMatch)> = Vec::new();
    for (_, (track, label)) in tracks_by_source(test_events) {
        if label == Label::Unlabeled {
            continue;
        }
        for seg in track.segments(segment_len) {
            if let Ok(m) = slope_match(&seg, trained, rel_tolerance) {
                outcomes.push((label.clone(), m));
            }
        }
    }
    trained
        .iter()
        .map(|sm| {
            let (mut tp, mut p, mut fp, mut n) = (0, 0, 0, 0);
            for (label, outcome) in &outcomes {
                let hit = matches!(outcome, SlopeMatch::Matched(m) if *m == sm.model);
                if label.is_model(&sm.model) {
                    p += 1;
                    tp += hit as usize;
                } else {
                    n += 1;
                    fp += hit as usize;
                }
            }
            BaselineRates::from_counts(sm.model.clone(), tp, p, fp, n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(ids: &[u16]) -> IpIdTrack {
        IpIdTrack::new(
            Ipv4Addr::new(8, 8, 8, 8),
            ids.iter().enumerate().map(|(i, &id)| (i as u64 * 1000, id)).collect(),
        )
    }

    fn model(v: &str) -> DeviceModelId {
        DeviceModelId::new("cam", "X", v).unwrap()
    }

    fn slope_model(v: &str, slope: f64) -> SlopeModel {
        SlopeModel {
            model: model(v),
            slope_per_index: slope,
            slope_per_second: None,
            residual_scale: 0.0,
            increment_histogram: BTreeMap::new(),
        }
    }

    // All pairwise slopes, sorted, median: written independently of theil_sen.
    fn pairwise_median_oracle(ys: &[f64]) -> f64 {
        let mut s = vec![];
        for i in 0..ys.len() {
            for j in 0..ys.len() {
                if j > i {
                    s.push((ys[j] - ys[i]) / (j - i) as f64);
                }
            }
        }
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len();
        if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 }
    }

    #[test]
    fn unwrap_examples() {
        assert_eq!(unwrap_ipid(&[65530, 65534, 3]), vec![65530, 65534, 65539]);
        assert_eq!(unwrap_ipid(&[1, 2, 9]), vec![1, 2, 9]);
        assert_eq!(unwrap_ipid(&[4, 4, 4]), vec![4, 4, 4]);
        assert_eq!(unwrap_ipid(&[65535, 0, 65535, 1]), vec![65535, 65536, 131071, 131073]);
    }

    #[test]
    fn increments() {
        assert_eq!(increment_distribution(&track(&[1, 2, 3, 4])).unwrap(), BTreeMap::from([(1, 3)]));
        assert_eq!(
            increment_distribution(&track(&[1, 5, 6, 20])).unwrap(),
            BTreeMap::from([(4, 1), (1, 1), (14, 1)])
        );
        assert_eq!(
            increment_distribution(&track(&[65530, 65534, 3])).unwrap(),
            BTreeMap::from([(4, 1), (5, 1)])
        );
        assert!(increment_distribution(&track(&[1])).is_err());
    }

    #[test]
    fn slope_noiseless_and_robust() {
        let ids: Vec<u16> = (0..10).map(|i| 100 + 7 * i).collect();
        let fit = fit_slope(&track(&ids)).unwrap();
        assert_eq!(fit.per_index, 7.0);
        assert_eq!(fit.residual_scale, 0.0);
        assert_eq!(fit.per_second, Some(7.0));

        let mut ids: Vec<u16> = (0..11).map(|i| 100 + 7 * i).collect();
        ids[5] = 140; // on the line it would be 135
        let ys: Vec<f64> = unwrap_ipid(&ids).into_iter().map(|v| v as f64).collect();
        let fit = fit_slope(&track(&ids)).unwrap();
        assert_eq!(fit.per_index, 7.0);
        assert_eq!(fit.per_index, pairwise_median_oracle(&ys));

        assert!(fit_slope(&track(&[1, 2])).is_err());
        let same_time = IpIdTrack::new(Ipv4Addr::LOCALHOST, vec![(5, 1), (5, 4), (5, 7)]);
        let fit = fit_slope(&same_time).unwrap();
        assert_eq!(fit.per_index, 3.0);
        assert_eq!(fit.per_second, None);
    }

    #[test]
    fn recovers_distinct_model_slopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for true_slope in [3.0f64, 12.0] {
            let ids: Vec<u16> = (0..300)
                .map(|i| ((60_000.0 + true_slope * i as f64).round() as i64 + rng.random_range(-1..=1)) as u64 as u16)
                .collect();
            let sm = SlopeModel::fit(model("a"), &[track(&ids)]).unwrap();
            assert!((sm.slope_per_index - true_slope).abs() / true_slope < 0.01);
            assert_eq!(sm.increment_histogram.values().sum::<u64>(), 299);
        }
    }

    #[test]
    fn matching_rules() {
        let trained = [slope_model("seven", 7.0), slope_model("thirty", 30.0)];
        let near_seven: Vec<u16> = (0..20).map(|i| (i as f64 * 7.1).round() as u16).collect();
        let m = slope_match(&track(&near_seven), &trained, DEFAULT_REL_TOLERANCE).unwrap();
        assert_eq!(m, SlopeMatch::Matched(model("seven")));

        let fifteen: Vec<u16> = (0..20).map(|i| i * 15).collect();
        assert_eq!(slope_match(&track(&fifteen), &trained, 0.2).unwrap(), SlopeMatch::NoCandidate);

        let tie = [slope_model("a", 10.0), slope_model("b", 10.0)];
        let ten: Vec<u16> = (0..20).map(|i| i * 10).collect();
        assert_eq!(
            slope_match(&track(&ten), &tie, 0.2).unwrap(),
            SlopeMatch::Ambiguous(vec![model("a"), model("b")])
        );
        assert!(slope_match(&track(&[1, 2]), &trained, 0.2).is_err());
    }

    #[test]
    fn theil_sen_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(3..30);
            let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let ys: Vec<f64> = (0..n).map(|i| 5.0 * i as f64 + rng.random_range(-3.0..3.0)).collect();
            let base = theil_sen(&xs, &ys).unwrap().slope;
            let shifted: Vec<f64> = ys.iter().map(|y| y + 1234.0).collect();
            assert!((theil_sen(&xs, &shifted).unwrap().slope - base).abs() < 1e-9);
            let scaled: Vec<f64> = ys.iter().map(|y| y * 3.0).collect();
            assert!((theil_sen(&xs, &scaled).unwrap().slope - 3.0 * base).abs() < 1e-9);
            assert!((base - pairwise_median_oracle(&ys)).abs() < 1e-12);
        }
    }
}
