//! Episodic event metrics, agreement statistics and forecasting errors.

use rand::seq::index;

use crate::error::{invalid, shape, Error, Result};
use crate::rng;

/// Half-open interval `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub start_s: f64,
    pub end_s: f64,
}

impl Event {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn overlaps(&self, other: &Event) -> bool {
        self.start_s < other.end_s && other.start_s < self.end_s
    }
}

/// Sorted, non-overlapping events of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct EventList {
    events: Vec<Event>,
    recording_hours: f64,
}

impl EventList {
    pub fn new(events: Vec<Event>, recording_hours: f64) -> Result<Self> {
        for e in &events {
            if !(e.start_s < e.end_s) {
                return Err(invalid(format!("event [{}, {}) is empty", e.start_s, e.end_s)));
            }
        }
        for w in events.windows(2) {
            if w[1].start_s < w[0].end_s {
                return Err(invalid(format!(
                    "events [{}, {}) and [{}, {}) are unsorted or overlap",
                    w[0].start_s, w[0].end_s, w[1].start_s, w[1].end_s
                )));
            }
        }
        if !(recording_hours >= 0.0) {
            return Err(invalid("recording length must be non-negative"));
        }
        Ok(Self { events, recording_hours })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn recording_hours(&self) -> f64 {
        self.recording_hours
    }
}

/// One binary label per second of a recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecondLabels {
    bits: Vec<u8>,
}

impl SecondLabels {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(invalid(format!("label {b} is not binary")));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Marks every second that overlaps an event.
    pub fn from_events(events: &[Event], seconds: usize) -> Self {
        let mut bits = vec![0u8; seconds];
        for e in events {
            let lo = e.start_s.max(0.0).floor() as usize;
            let hi = (e.end_s.ceil().max(0.0) as usize).min(seconds);
            for b in bits.iter_mut().take(hi).skip(lo) {
                *b = 1;
            }
        }
        Self { bits }
    }

    /// Runs of consecutive positive seconds, with the number of positives
    /// in each run.
    pub fn runs(&self) -> (Vec<Event>, Vec<usize>) {
        let mut events = Vec::new();
        let mut counts = Vec::new();
        let mut start = None;
        for (s, &b) in self.bits.iter().chain(std::iter::once(&0)).enumerate() {
            match (b, start) {
                (1, None) => start = Some(s),
                (0, Some(s0)) => {
                    events.push(Event::new(s0 as f64, s as f64));
                    counts.push(s - s0);
                    start = None;
                }
                _ => {}
            }
        }
        (events, counts)
    }
}

pub const MERGE_GAP_S: f64 = 300.0;
pub const MIN_EVENT_S: f64 = 20.0;
pub const MIN_POSITIVES: usize = 5;

/// Clinical clean-up of raw detections, in this order: merge events less
/// than five minutes apart, drop events shorter than 20 s, drop events
/// supported by fewer than 5 positive responses.
///
/// `positives[i]` counts the positive responses inside `raw[i]`; merged
/// events add their counts. Returns the surviving events and their counts,
/// so the result can be fed back in unchanged.
pub fn episodic_postprocess(raw: &[Event], positives: &[usize]) -> Result<(Vec<Event>, Vec<usize>)> {
    if raw.len() != positives.len() {
        return Err(shape(format!("{} events but {} positive counts", raw.len(), positives.len())));
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].start_s.total_cmp(&raw[b].start_s));

    let mut merged: Vec<(Event, usize)> = Vec::new();
    for i in order {
        let (e, n) = (raw[i], positives[i]);
        match merged.last_mut() {
            Some((last, count)) if e.start_s - last.end_s < MERGE_GAP_S => {
                last.end_s = last.end_s.max(e.end_s);
                *count += n;
            }
            _ => merged.push((e, n)),
        }
    }
    Ok(merged.into_iter().filter(|(e, _)| e.duration() >= MIN_EVENT_S).filter(|&(_, n)| n >= MIN_POSITIVES).unzip())
}

pub const ONLINE_WINDOW_S: usize = 10;
pub const ONLINE_MIN_POSITIVES: usize = 3;

/// Streaming detector: second `s` fires when the window `[s − 9, s]` holds
/// at least 3 positive seconds. Consecutive firing seconds form one event,
/// which starts at the first firing second, i.e. when it would be reported.
pub fn online_threshold(labels: &SecondLabels) -> Vec<Event> {
    let bits = labels.bits();
    let mut firing = vec![0u8; bits.len()];
    let mut in_window = 0usize;
    for s in 0..bits.len() {
        in_window += bits[s] as usize;
        if s >= ONLINE_WINDOW_S {
            in_window -= bits[s - ONLINE_WINDOW_S] as usize;
        }
        firing[s] = (in_window >= ONLINE_MIN_POSITIVES) as u8;
    }
    SecondLabels { bits: firing }.runs().0
}

/// Cohen's kappa of two binary label vectors.
///
/// When chance agreement is 1 (both raters constant and equal) the result is
/// 1 for perfect observed agreement and 0 otherwise.
pub fn cohen_kappa(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape(format!("label lengths {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(invalid("kappa of empty label vectors"));
    }
    let n = a.len() as f64;
    let mut agree = 0usize;
    let (mut pa, mut pb) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        agree += (x == y) as usize;
        pa += (x != 0) as usize;
        pb += (y != 0) as usize;
    }
    let p_o = agree as f64 / n;
    let (pa, pb) = (pa as f64 / n, pb as f64 / n);
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if p_e >= 1.0 {
        return Ok(if p_o >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaEstimate {
    pub mean: f64,
    /// κ of each sampled subset.
    pub samples: Vec<f64>,
    /// Running mean after each iteration.
    pub running_mean: Vec<f64>,
    /// `|running_mean[i] − running_mean[i − 1]|`, 0 for the first iteration.
    pub running_delta: Vec<f64>,
}

/// Mean κ over `iterations` random subsets of `n_segments` seconds.
///
/// Positions within one subset are drawn without replacement when the
/// recording is long enough, and with replacement otherwise.
pub fn kappa_estimate(
    pred: &SecondLabels,
    truth: &SecondLabels,
    n_segments: usize,
    iterations: usize,
    seed: u64,
) -> Result<KappaEstimate> {
    if pred.len() != truth.len() {
        return Err(shape(format!("label lengths {} and {} differ", pred.len(), truth.len())));
    }
    if pred.is_empty() || n_segments == 0 || iterations == 0 {
        return Err(Error::InsufficientData("kappa estimation needs labels, segments and iterations".into()));
    }
    let len = pred.len();
    let mut samples = Vec::with_capacity(iterations);
    let mut running_mean = Vec::with_capacity(iterations);
    let mut running_delta = Vec::with_capacity(iterations);
    let mut a = vec![0u8; n_segments];
    let mut b = vec![0u8; n_segments];
    let mut sum = 0.0;
    for it in 0..iterations {
        let mut r = rng::seeded(rng::derive(seed, it as u64));
        if n_segments <= len {
            for (j, pos) in index::sample(&mut r, len, n_segments).into_iter().enumerate() {
                a[j] = pred.bits[pos];
                b[j] = truth.bits[pos];
            }
        } else {
            use rand::Rng as _;
            for j in 0..n_segments {
                let pos = r.random_range(0..len);
                a[j] = pred.bits[pos];
                b[j] = truth.bits[pos];
            }
        }
        let k = cohen_kappa(&a, &b)?;
        samples.push(k);
        sum += k;
        let mean = sum / (it + 1) as f64;
        running_delta.push(running_mean.last().map_or(0.0, |&m: &f64| (mean - m).abs()));
        running_mean.push(mean);
    }
    Ok(KappaEstimate { mean: sum / iterations as f64, samples, running_mean, running_delta })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub f1: f64,
    pub sensitivity: f64,
    pub precision: f64,
    pub fp_per_hour: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

/// Event-level scores with any-overlap matching.
///
/// Sensitivity is 1 without truth events and precision is 1 without
/// predictions; F1 is 0 when both are 0.
pub fn detection_metrics(pred: &[Event], truth: &[Event], recording_hours: f64) -> Result<DetectionMetrics> {
    if !(recording_hours > 0.0) {
        return Err(invalid("recording length must be positive to rate false positives"));
    }
    let detected = truth.iter().filter(|t| pred.iter().any(|p| p.overlaps(t))).count();
    let matched = pred.iter().filter(|p| truth.iter().any(|t| t.overlaps(p))).count();
    let false_positives = pred.len() - matched;
    let sensitivity = if truth.is_empty() { 1.0 } else { detected as f64 / truth.len() as f64 };
    let precision = if pred.is_empty() { 1.0 } else { matched as f64 / pred.len() as f64 };
    let f1 =
        if precision + sensitivity == 0.0 { 0.0 } else { 2.0 * precision * sensitivity / (precision + sensitivity) };
    Ok(DetectionMetrics {
        f1,
        sensitivity,
        precision,
        fp_per_hour: false_positives as f64 / recording_hours,
        true_positives: detected,
        false_positives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastMetrics {
    pub mse: f64,
    pub mae: f64,
}

pub fn forecast_metrics(pred: &[f64], truth: &[f64]) -> Result<ForecastMetrics> {
    if pred.len() != truth.len() {
        return Err(shape(format!("prediction has {} values, truth {}", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(invalid("no values to score"));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
    }
    Ok(ForecastMetrics { mse: se / n, mae: ae / n })
}

/// Landis and Koch agreement band for a kappa value.
pub fn landis_koch(kappa: f64) -> &'static str {
    match kappa {
        k if k < 0.0 => "poor",
        k if k <= 0.20 => "slight",
        k if k <= 0.40 => "fair",
        k if k <= 0.60 => "moderate",
        k if k <= 0.80 => "substantial",
        _ => "almost perfect",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(a: f64, b: f64) -> Event {
        Event::new(a, b)
    }

    #[test]
    fn merges_close_events() {
        let (e, n) = episodic_postprocess(&[ev(0.0, 30.0), ev(200.0, 240.0)], &[10, 10]).unwrap();
        assert_eq!(e, vec![ev(0.0, 240.0)]);
        assert_eq!(n, vec![20]);
    }

    #[test]
    fn keeps_distant_events_apart() {
        let (e, _) = episodic_postprocess(&[ev(0.0, 30.0), ev(330.0, 360.0)], &[10, 10]).unwrap();
        assert_eq!(e.len(), 2);
    }

    #[test]
    fn drops_short_and_weak_events() {
        assert!(episodic_postprocess(&[ev(0.0, 15.0)], &[15]).unwrap().0.is_empty());
        assert!(episodic_postprocess(&[ev(0.0, 25.0)], &[4]).unwrap().0.is_empty());
        assert!(episodic_postprocess(&[], &[]).unwrap().0.is_empty());
        assert!(episodic_postprocess(&[ev(0.0, 1.0)], &[]).is_err());
    }

    #[test]
    fn merge_happens_before_length_filter() {
        // two 12 s fragments are too short alone but pass once merged
        let (e, _) = episodic_postprocess(&[ev(0.0, 12.0), ev(20.0, 32.0)], &[3, 3]).unwrap();
        assert_eq!(e, vec![ev(0.0, 32.0)]);
    }

    #[test]
    fn online_threshold_cases() {
        let mut bits = vec![0u8; 60];
        bits[5] = 1;
        bits[30] = 1;
        assert!(online_threshold(&SecondLabels::new(bits).unwrap()).is_empty());

        let mut bits = vec![0u8; 60];
        bits[20..30].iter_mut().for_each(|b| *b = 1);
        // fires from the third positive second until the window empties below 3
        assert_eq!(online_threshold(&SecondLabels::new(bits).unwrap()), vec![ev(22.0, 37.0)]);

        let alt: Vec<u8> = (0..40).map(|s| (s % 2 == 0) as u8).collect();
        let fired = online_threshold(&SecondLabels::new(alt).unwrap());
        assert_eq!(fired, vec![ev(4.0, 40.0)]);
    }

    #[test]
    fn kappa_cases() {
        assert_eq!(cohen_kappa(&[1, 0, 1, 1], &[1, 0, 1, 1]).unwrap(), 1.0);
        assert!(cohen_kappa(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap().abs() < 1e-15);
        assert_eq!(cohen_kappa(&[0, 0], &[0, 0]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(cohen_kappa(&[], &[]).is_err());
    }

    #[test]
    fn kappa_matches_contingency_table() {
        // a: 20 positive / 5 negative, b: 10 / 15, with 10 joint positives
        let mut a = vec![1u8; 20];
        a.extend([0; 5]);
        let mut b = vec![1u8; 10];
        b.extend([0; 15]);
        let table = [[0.0, 0.0], [0.0, 0.0]];
        let mut t = table;
        for (&x, &y) in a.iter().zip(&b) {
            t[x as usize][y as usize] += 1.0;
        }
        let n = 25.0;
        let p_o = (t[0][0] + t[1][1]) / n;
        let row = [t[0][0] + t[0][1], t[1][0] + t[1][1]];
        let col = [t[0][0] + t[1][0], t[0][1] + t[1][1]];
        let p_e = (row[0] * col[0] + row[1] * col[1]) / (n * n);
        let want = (p_o - p_e) / (1.0 - p_e);
        assert!((cohen_kappa(&a, &b).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn kappa_estimate_identical_and_random() {
        let mut r = rng::seeded(1);
        use rand::Rng as _;
        let x: Vec<u8> = (0..10_000).map(|_| r.random::<bool>() as u8).collect();
        let y: Vec<u8> = (0..10_000).map(|_| r.random::<bool>() as u8).collect();
        let x = SecondLabels::new(x).unwrap();
        let y = SecondLabels::new(y).unwrap();
        let same = kappa_estimate(&x, &x, 300, 250, 4).unwrap();
        assert!(same.samples.iter().all(|&k| k == 1.0));
        let indep = kappa_estimate(&x, &y, 300, 250, 4).unwrap();
        assert!(indep.mean.abs() < 0.05);
        assert!(indep.running_delta[249] < 0.005);
        assert_eq!(indep, kappa_estimate(&x, &y, 300, 250, 4).unwrap());
    }

    #[test]
    fn kappa_estimate_short_recording_samples_with_replacement() {
        let x = SecondLabels::new(vec![1, 0, 1]).unwrap();
        let est = kappa_estimate(&x, &x, 10, 5, 0).unwrap();
        assert_eq!(est.mean, 1.0);
    }

    #[test]
    fn detection_cases() {
        let truth = [ev(100.0, 160.0)];
        let m = detection_metrics(&truth, &truth, 1.0).unwrap();
        assert_eq!((m.f1, m.fp_per_hour), (1.0, 0.0));
        let m = detection_metrics(&[], &truth, 1.0).unwrap();
        assert_eq!((m.sensitivity, m.f1), (0.0, 0.0));
        let m = detection_metrics(&[ev(150.0, 170.0), ev(900.0, 950.0)], &truth, 2.0).unwrap();
        assert_eq!(m.fp_per_hour, 0.5);
        assert_eq!(m.sensitivity, 1.0);
        assert!(detection_metrics(&truth, &truth, 0.0).is_err());
    }

    #[test]
    fn forecast_cases() {
        let t = [1.0, -2.0, 3.0];
        assert_eq!(forecast_metrics(&t, &t).unwrap(), ForecastMetrics { mse: 0.0, mae: 0.0 });
        let p: Vec<f64> = t.iter().map(|v| v + 2.0).collect();
        let m = forecast_metrics(&p, &t).unwrap();
        assert!((m.mse - 4.0).abs() < 1e-15 && (m.mae - 2.0).abs() < 1e-15);
        assert!(forecast_metrics(&p[..2], &t).is_err());
    }

    #[test]
    fn landis_koch_bands() {
        assert_eq!(landis_koch(-0.1), "poor");
        assert_eq!(landis_koch(0.57), "moderate");
        assert_eq!(landis_koch(0.9), "almost perfect");
    }

    #[test]
    fn event_list_validation() {
        assert!(EventList::new(vec![ev(0.0, 5.0), ev(5.0, 9.0)], 1.0).is_ok());
        assert!(EventList::new(vec![ev(0.0, 5.0), ev(4.0, 9.0)], 1.0).is_err());
        assert!(EventList::new(vec![ev(3.0, 3.0)], 1.0).is_err());
    }

    #[test]
    fn runs_and_labels_round_trip() {
        let l = SecondLabels::new(vec![0, 1, 1, 0, 1]).unwrap();
        let (e, n) = l.runs();
        assert_eq!(e, vec![ev(1.0, 3.0), ev(4.0, 5.0)]);
        assert_eq!(n, vec![2, 1]);
        assert_eq!(SecondLabels::from_events(&e, 5), l);
    }

    fn arb_events() -> impl Strategy<Value = (Vec<Event>, Vec<usize>)> {
        prop::collection::vec((0.0f64..5000.0, 0.5f64..120.0, 0usize..12), 0..12)
            .prop_map(|v| v.into_iter().map(|(s, d, n)| (ev(s, s + d), n)).unzip())
    }

    proptest! {
        #[test]
        fn postprocess_idempotent((e, n) in arb_events()) {
            let once = episodic_postprocess(&e, &n).unwrap();
            let twice = episodic_postprocess(&once.0, &once.1).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn kappa_symmetric(a in prop::collection::vec(0u8..2, 1..60), seed in 0u64..1000) {
            let mut r = rng::seeded(seed);
            use rand::Rng as _;
            let b: Vec<u8> = a.iter().map(|_| r.random::<bool>() as u8).collect();
            prop_assert_eq!(cohen_kappa(&a, &b).unwrap(), cohen_kappa(&b, &a).unwrap());
            prop_assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn detection_order_invariant((e, _) in arb_events(), (t, _) in arb_events()) {
            let m = detection_metrics(&e, &t, 3.0).unwrap();
            let mut er = e.clone();
            er.reverse();
            let mut tr = t.clone();
            tr.reverse();
            prop_assert_eq!(m, detection_metrics(&er, &tr, 3.0).unwrap());
        }
    }
}
