//! Seeded generator of knowledge-tracing logs for desk-scale experiments.
//!
//! Each exercise has a skill, tag, tagset, bundle and a difficulty
//! `β_e ~ N(0, difficulty_std²)`. Each student has an ability
//! `θ ~ N(0, ability_std²) + ability_shift` and practises a run of skills,
//! staying on the current skill with probability `1 − switch_prob`. The gap
//! before an interaction is a session break (exponential, mean
//! `session_gap_hours`) with probability `session_break_prob`, otherwise a
//! short exponential pause (mean 45 s) after the previous answer. The answer
//! is correct with probability
//!
//! ```text
//! σ( θ − β_e
//!    + practice_gain · ln(1 + attempts on this skill so far)
//!    − forgetting    · ln(1 + hours since this skill was last practised)
//!    + recency       · (2 · share correct among the last 3 answers − 1) )
//! ```
//!
//! so long-range history (practice), elapsed real time (forgetting) and the
//! last few answers (recency) all carry signal. Elapsed answer time is
//! log-normal around 20 s and grows with difficulty.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureVocabulary, InteractionRecord};
use crate::error::{Error, Result};
use crate::nn::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub students: usize,
    pub exercises: u32,
    pub skills: u32,
    pub tags: u32,
    pub tagsets: u32,
    /// Consecutive exercises per bundle.
    pub bundle_size: u32,
    pub min_len: usize,
    pub max_len: usize,
    pub ability_std: f64,
    pub ability_shift: f64,
    pub difficulty_std: f64,
    pub practice_gain: f64,
    pub forgetting: f64,
    pub recency: f64,
    pub switch_prob: f64,
    pub session_break_prob: f64,
    pub session_gap_hours: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            students: 2000,
            exercises: 50,
            skills: 7,
            tags: 12,
            tagsets: 20,
            bundle_size: 4,
            min_len: 20,
            max_len: 80,
            ability_std: 1.0,
            ability_shift: 0.0,
            difficulty_std: 1.0,
            practice_gain: 0.4,
            forgetting: 0.35,
            recency: 0.6,
            switch_prob: 0.25,
            session_break_prob: 0.15,
            session_gap_hours: 30.0,
            seed: 0,
        }
    }
}

struct Exercise {
    skill: u32,
    tag: u32,
    tagset: u32,
    bundle: u32,
    difficulty: f64,
}

impl SyntheticParams {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("students", self.students as u64),
            ("exercises", self.exercises as u64),
            ("skills", self.skills as u64),
            ("tags", self.tags as u64),
            ("tagsets", self.tagsets as u64),
            ("bundle_size", self.bundle_size as u64),
            ("min_len", self.min_len as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid("synthetic", format!("{name} must be positive")));
            }
        }
        if self.max_len < self.min_len {
            return Err(Error::invalid("synthetic", "max_len must be at least min_len"));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> FeatureVocabulary {
        FeatureVocabulary {
            exercises: self.exercises,
            skills: self.skills,
            tags: self.tags,
            tagsets: self.tagsets,
            bundles: self.exercises.div_ceil(self.bundle_size),
        }
    }
}

/// Generates all records, grouped by student and sorted by time.
pub fn generate(params: &SyntheticParams) -> Result<Vec<InteractionRecord>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let difficulty = Normal::new(0.0, params.difficulty_std).map_err(|e| Error::invalid("difficulty_std", e.to_string()))?;
    let ability = Normal::new(0.0, params.ability_std).map_err(|e| Error::invalid("ability_std", e.to_string()))?;
    let short_pause = Exp::new(1.0 / 45.0).expect("positive rate");
    let session_gap =
        Exp::new(1.0 / params.session_gap_hours.max(1e-9)).map_err(|e| Error::invalid("session_gap_hours", e.to_string()))?;
    let noise = Normal::new(0.0, 0.4).expect("positive std");

    let exercises: Vec<Exercise> = (0..params.exercises)
        .map(|e| Exercise {
            skill: rng.random_range(1..=params.skills),
            tag: rng.random_range(1..=params.tags),
            tagset: rng.random_range(1..=params.tagsets),
            bundle: e / params.bundle_size + 1,
            difficulty: difficulty.sample(&mut rng),
        })
        .collect();
    let mut by_skill: Vec<Vec<u32>> = vec![Vec::new(); params.skills as usize + 1];
    for (i, ex) in exercises.iter().enumerate() {
        by_skill[ex.skill as usize].push(i as u32 + 1);
    }

    let width = params.students.to_string().len();
    let mut out = Vec::new();
    for s in 0..params.students {
        let student = format!("u{s:0width$}");
        let theta = ability.sample(&mut rng) + params.ability_shift;
        let len = rng.random_range(params.min_len..=params.max_len);
        let mut attempts = vec![0u32; params.skills as usize + 1];
        let mut last_seen: Vec<Option<i64>> = vec![None; params.skills as usize + 1];
        let mut recent: Vec<u8> = Vec::new();
        let mut now_ms: i64 = rng.random_range(0..86_400_000);
        let mut prev_elapsed_ms: i64 = 0;
        let mut skill = 0u32;
        for t in 0..len {
            if t > 0 {
                let gap_s = if rng.random::<f64>() < params.session_break_prob {
                    session_gap.sample(&mut rng) * 3600.0
                } else {
                    short_pause.sample(&mut rng)
                };
                now_ms += prev_elapsed_ms + (gap_s * 1000.0) as i64;
            }
            if t == 0 || rng.random::<f64>() < params.switch_prob {
                skill = rng.random_range(1..=params.skills);
            }
            let pool = &by_skill[skill as usize];
            let exercise = if pool.is_empty() {
                rng.random_range(1..=params.exercises)
            } else {
                pool[rng.random_range(0..pool.len())]
            };
            let ex = &exercises[exercise as usize - 1];
            let ks = ex.skill as usize;

            let hours_since = last_seen[ks].map_or(0.0, |seen| (now_ms - seen) as f64 / 3_600_000.0);
            let recent_share = if recent.is_empty() {
                0.5
            } else {
                recent.iter().map(|&r| r as f64).sum::<f64>() / recent.len() as f64
            };
            let logit = theta - ex.difficulty + params.practice_gain * (attempts[ks] as f64).ln_1p()
                - params.forgetting * hours_since.ln_1p()
                + params.recency * (2.0 * recent_share - 1.0);
            let response = (rng.random::<f64>() < sigmoid(logit)) as u8;
            let elapsed_ms = ((20.0f64.ln() + 0.3 * ex.difficulty + noise.sample(&mut rng)).exp() * 1000.0) as i64;

            out.push(InteractionRecord {
                student: student.clone(),
                exercise,
                skill: ex.skill,
                tag: ex.tag,
                tagset: ex.tagset,
                bundle: ex.bundle,
                timestamp_ms: now_ms,
                elapsed_ms,
                response,
            });
            attempts[ks] += 1;
            last_seen[ks] = Some(now_ms);
            recent.push(response);
            if recent.len() > 3 {
                recent.remove(0);
            }
            prev_elapsed_ms = elapsed_ms;
        }
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(records: &[InteractionRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
