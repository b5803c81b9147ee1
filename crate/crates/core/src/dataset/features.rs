use serde::{Deserialize, Serialize};

use super::{FeatureKind, InteractionRecord};

pub const ELAPSED_SECONDS_CAP: u32 = 300;
pub const LAG_SECONDS_CAP: u32 = 300;
pub const LAG_MINUTES_CAP: u32 = 1440;
pub const DAY_CAP: u32 = 365;

/// Capped `(seconds, minutes, days)` buckets of a duration in milliseconds.
/// Seconds use [`LAG_SECONDS_CAP`], which equals [`ELAPSED_SECONDS_CAP`].
pub fn time_buckets(ms: i64) -> (u32, u32, u32) {
    let ms = ms.max(0) as u64;
    let secs = (ms / 1000).min(LAG_SECONDS_CAP as u64) as u32;
    let mins = (ms / 60_000).min(LAG_MINUTES_CAP as u64) as u32;
    let days = (ms / 86_400_000).min(DAY_CAP as u64) as u32;
    (secs, mins, days)
}

fn log_seconds(ms: i64) -> f32 {
    (ms.max(0) as f64 / 1000.0).ln_1p() as f32
}

/// One feature over time. Categorical index 0 is the start/padding token;
/// continuous start/padding positions have `present = false` and value 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Categorical(Vec<u32>),
    Continuous { values: Vec<f32>, present: Vec<bool> },
}

impl Stream {
    pub fn len(&self) -> usize {
        match self {
            Stream::Categorical(v) => v.len(),
            Stream::Continuous { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn empty_like(&self, len: usize) -> Stream {
        match self {
            Stream::Categorical(_) => Stream::Categorical(vec![0; len]),
            Stream::Continuous { .. } => Stream::Continuous {
                values: vec![0.0; len],
                present: vec![false; len],
            },
        }
    }

    fn copy_from(&mut self, dst: usize, src: &Stream, at: usize) {
        match (self, src) {
            (Stream::Categorical(d), Stream::Categorical(s)) => d[dst] = s[at],
            (Stream::Continuous { values, present }, Stream::Continuous { values: sv, present: sp }) => {
                values[dst] = sv[at];
                present[dst] = sp[at];
            }
            _ => unreachable!("stream kinds never change"),
        }
    }
}

/// The twelve candidate streams of one student plus the true responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequences {
    /// Indexed by [`FeatureKind::index`].
    pub streams: Vec<Stream>,
    pub responses: Vec<u8>,
}

impl FeatureSequences {
    pub fn stream(&self, kind: FeatureKind) -> &Stream {
        &self.streams[kind.index()]
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

/// Builds every candidate stream from timestamp-sorted records.
///
/// Response and elapsed-time streams are shifted one step right so position
/// `t` carries interaction `t−1`. The lag of interaction `t` is
/// `timestamp_t − timestamp_{t−1}`, which is known before answering `t`; the
/// first lag is the start token.
pub fn derive_features(records: &[InteractionRecord]) -> FeatureSequences {
    let n = records.len();
    let cat = |f: &dyn Fn(&InteractionRecord) -> u32| Stream::Categorical(records.iter().map(f).collect());
    let shifted_cat = |f: &dyn Fn(usize) -> u32| {
        Stream::Categorical((0..n).map(|t| if t == 0 { 0 } else { f(t) }).collect())
    };
    let shifted_cont = |f: &dyn Fn(usize) -> f32| Stream::Continuous {
        values: (0..n).map(|t| if t == 0 { 0.0 } else { f(t) }).collect(),
        present: (0..n).map(|t| t > 0).collect(),
    };
    let elapsed = |t: usize| records[t - 1].elapsed_ms;
    let lag = |t: usize| records[t].timestamp_ms - records[t - 1].timestamp_ms;

    let streams = FeatureKind::ALL
        .iter()
        .map(|kind| match kind {
            FeatureKind::Exercise => cat(&|r| r.exercise),
            FeatureKind::Skill => cat(&|r| r.skill),
            FeatureKind::Tag => cat(&|r| r.tag),
            FeatureKind::Tagset => cat(&|r| r.tagset),
            FeatureKind::Bundle => cat(&|r| r.bundle),
            FeatureKind::Response => shifted_cat(&|t| records[t - 1].response as u32 + 1),
            FeatureKind::ElapsedCont => shifted_cont(&|t| log_seconds(elapsed(t))),
            FeatureKind::ElapsedSeconds => {
                shifted_cat(&|t| (elapsed(t).max(0) as u64 / 1000).min(ELAPSED_SECONDS_CAP as u64) as u32 + 1)
            }
            FeatureKind::LagCont => shifted_cont(&|t| log_seconds(lag(t))),
            FeatureKind::LagSeconds => shifted_cat(&|t| time_buckets(lag(t)).0 + 1),
            FeatureKind::LagMinutes => shifted_cat(&|t| time_buckets(lag(t)).1 + 1),
            FeatureKind::LagDays => shifted_cat(&|t| time_buckets(lag(t)).2 + 1),
        })
        .collect();
    FeatureSequences {
        streams,
        responses: records.iter().map(|r| r.response).collect(),
    }
}

/// Fixed-length, right-padded slice of one student's streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceWindow {
    pub student: String,
    pub streams: Vec<Stream>,
    pub targets: Vec<u8>,
    pub valid: Vec<bool>,
}

impl SequenceWindow {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn stream(&self, kind: FeatureKind) -> &Stream {
        &self.streams[kind.index()]
    }

    pub fn stream_mut(&mut self, kind: FeatureKind) -> &mut Stream {
        &mut self.streams[kind.index()]
    }
}

/// Cuts a student's streams into consecutive non-overlapping windows of
/// length `len`; the last window is right-padded. Shifted streams restart with
/// a start token at every window's first position.
pub fn make_windows(student: &str, seq: &FeatureSequences, len: usize) -> Vec<SequenceWindow> {
    assert!(len >= 2, "window length must be at least 2");
    let n = seq.len();
    let mut windows = Vec::with_capacity(n.div_ceil(len));
    let mut offset = 0;
    while offset < n {
        let real = (n - offset).min(len);
        let mut streams: Vec<Stream> = seq.streams.iter().map(|s| s.empty_like(len)).collect();
        for (kind, (dst, src)) in FeatureKind::ALL.iter().zip(streams.iter_mut().zip(&seq.streams)) {
            let first = if kind.is_shifted() { 1 } else { 0 };
            for t in first..real {
                dst.copy_from(t, src, offset + t);
            }
        }
        let mut targets = vec![0u8; len];
        targets[..real].copy_from_slice(&seq.responses[offset..offset + real]);
        let valid = (0..len).map(|t| t < real).collect();
        windows.push(SequenceWindow {
            student: student.to_string(),
            streams,
            targets,
            valid,
        });
        offset += real;
    }
    windows
}

/// Mean and standard deviation of the continuous streams, fitted on the
/// training students' present positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub elapsed_mean: f32,
    pub elapsed_std: f32,
    pub lag_mean: f32,
    pub lag_std: f32,
}

fn moments<'a>(it: impl Iterator<Item = &'a Stream>) -> (f32, f32) {
    let (mut n, mut sum, mut sq) = (0f64, 0f64, 0f64);
    for s in it {
        if let Stream::Continuous { values, present } = s {
            for (&v, &p) in values.iter().zip(present) {
                if p {
                    n += 1.0;
                    sum += v as f64;
                    sq += (v as f64) * (v as f64);
                }
            }
        }
    }
    if n == 0.0 {
        return (0.0, 1.0);
    }
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    let std = if var > 1e-12 { var.sqrt() } else { 1.0 };
    (mean as f32, std as f32)
}

impl Standardizer {
    pub fn fit<'a>(seqs: impl Iterator<Item = &'a FeatureSequences> + Clone) -> Self {
        let (elapsed_mean, elapsed_std) = moments(seqs.clone().map(|s| s.stream(FeatureKind::ElapsedCont)));
        let (lag_mean, lag_std) = moments(seqs.map(|s| s.stream(FeatureKind::LagCont)));
        Self {
            elapsed_mean,
            elapsed_std,
            lag_mean,
            lag_std,
        }
    }

    pub fn apply(&self, seq: &mut FeatureSequences) {
        for (kind, mean, std) in [
            (FeatureKind::ElapsedCont, self.elapsed_mean, self.elapsed_std),
            (FeatureKind::LagCont, self.lag_mean, self.lag_std),
        ] {
            if let Stream::Continuous { values, present } = &mut seq.streams[kind.index()] {
                for (v, &p) in values.iter_mut().zip(present.iter()) {
                    if p {
                        *v = (*v - mean) / std;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(times: &[i64], elapsed: &[i64], responses: &[u8]) -> Vec<InteractionRecord> {
        times
            .iter()
            .zip(elapsed)
            .zip(responses)
            .enumerate()
            .map(|(i, ((&ts, &el), &r))| InteractionRecord {
                student: "s".into(),
                exercise: i as u32 + 1,
                skill: 1,
                tag: 1,
                tagset: 1,
                bundle: 1,
                timestamp_ms: ts,
                elapsed_ms: el,
                response: r,
            })
            .collect()
    }

    fn cats(s: &Stream) -> &[u32] {
        match s {
            Stream::Categorical(v) => v,
            _ => panic!("expected categorical"),
        }
    }

    #[test]
    fn lag_of_two_events() {
        let seq = derive_features(&records(&[0, 5000], &[1000, 1000], &[1, 1]));
        assert_eq!(cats(seq.stream(FeatureKind::LagSeconds)), &[0, 5 + 1]);
        assert_eq!(cats(seq.stream(FeatureKind::LagMinutes)), &[0, 1]);
        assert_eq!(cats(seq.stream(FeatureKind::LagDays)), &[0, 1]);
        match seq.stream(FeatureKind::LagCont) {
            Stream::Continuous { values, present } => {
                assert_eq!(present, &vec![false, true]);
                assert_eq!(values[0], 0.0);
                assert!((values[1] - 6f32.ln()).abs() < 1e-6);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn elapsed_seconds_are_capped() {
        assert_eq!(time_buckets(400_000).0, 300);
        let seq = derive_features(&records(&[0, 1], &[400_000, 0], &[0, 0]));
        // bucket 300 lives at table index 301
        assert_eq!(cats(seq.stream(FeatureKind::ElapsedSeconds)), &[0, 301]);
    }

    #[test]
    fn long_gaps_are_capped() {
        let year_and_more = 400 * 86_400_000i64;
        assert_eq!(time_buckets(year_and_more), (300, 1440, 365));
        assert_eq!(time_buckets(-5), (0, 0, 0));
    }

    #[test]
    fn response_stream_is_shifted() {
        let seq = derive_features(&records(&[0, 1, 2], &[0, 0, 0], &[1, 0, 1]));
        // start, then 1 → index 2, 0 → index 1
        assert_eq!(cats(seq.stream(FeatureKind::Response)), &[0, 2, 1]);
    }

    #[test]
    fn single_interaction_has_only_start_tokens() {
        let seq = derive_features(&records(&[7], &[100], &[1]));
        for kind in FeatureKind::ALL.iter().filter(|k| k.is_shifted()) {
            match seq.stream(*kind) {
                Stream::Categorical(v) => assert_eq!(v, &vec![0]),
                Stream::Continuous { present, .. } => assert_eq!(present, &vec![false]),
            }
        }
    }

    fn n_records(n: usize) -> Vec<InteractionRecord> {
        let ts: Vec<i64> = (0..n as i64).map(|i| i * 1000).collect();
        let el = vec![500; n];
        let rs: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        records(&ts, &el, &rs)
    }

    #[test]
    fn window_lengths() {
        for (n, expected) in [(250, vec![100, 100, 50]), (1, vec![1]), (100, vec![100])] {
            let seq = derive_features(&n_records(n));
            let windows = make_windows("s", &seq, 100);
            let lens: Vec<usize> = windows.iter().map(|w| w.valid_len()).collect();
            assert_eq!(lens, expected);
            assert!(windows.iter().all(|w| w.len() == 100));
        }
    }

    #[test]
    fn every_window_starts_with_start_tokens() {
        let seq = derive_features(&n_records(45));
        for w in make_windows("s", &seq, 20) {
            assert_eq!(cats(w.stream(FeatureKind::Response))[0], 0);
            assert_eq!(cats(w.stream(FeatureKind::LagSeconds))[0], 0);
            assert_ne!(cats(w.stream(FeatureKind::Exercise))[0], 0);
            for t in 1..w.valid_len() {
                assert_eq!(cats(w.stream(FeatureKind::Response))[t], w.targets[t - 1] as u32 + 1);
            }
            for t in w.valid_len()..w.len() {
                assert_eq!(cats(w.stream(FeatureKind::Exercise))[t], 0);
                assert_eq!(w.targets[t], 0);
            }
        }
    }

    #[test]
    fn standardizer_centres_training_values() {
        let mut seqs: Vec<_> = (1..6).map(|n| derive_features(&n_records(n * 3))).collect();
        let st = Standardizer::fit(seqs.iter());
        for s in seqs.iter_mut() {
            st.apply(s);
        }
        let mut vals = Vec::new();
        for s in &seqs {
            if let Stream::Continuous { values, present } = s.stream(FeatureKind::ElapsedCont) {
                vals.extend(values.iter().zip(present).filter(|(_, &p)| p).map(|(&v, _)| v as f64));
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5);
    }
}
