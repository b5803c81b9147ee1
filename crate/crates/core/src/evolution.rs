//! Evolutionary search with per-generation search-space reduction.
//!
//! Each generation selects parents by binary tournament, builds offspring by
//! single-point crossover and per-gene mutation, evaluates them, shrinks the
//! search space by removing the statistically worst operations and keeps the
//! best `Pop` of parents plus offspring.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::info;
use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SequenceWindow;
use crate::error::{Error, Result};
use crate::genome::{GeneKind, Genome, SearchSpace, BUDGET_TRIES};
use crate::nn::ParamStore;
use crate::architecture::Network;
use crate::seed::substream;
use crate::supernet::evaluate;

const TAG_INIT: u64 = 10;
const TAG_SELECT: u64 = 11;
const TAG_VARY: u64 = 12;

/// Maps a genome to its fitness (validation AUC).
pub trait Fitness {
    fn evaluate(&mut self, genome: &Genome) -> Result<f64>;
}

/// Fitness from a frozen supernet over a fixed validation subset.
pub struct SupernetFitness<'a> {
    pub network: &'a Network,
    pub store: &'a ParamStore<f32>,
    pub windows: &'a [SequenceWindow],
    pub subset: Vec<usize>,
    pub threads: usize,
}

impl Fitness for SupernetFitness<'_> {
    fn evaluate(&mut self, genome: &Genome) -> Result<f64> {
        Ok(evaluate(self.network, self.store, genome, self.windows, &self.subset, self.threads)?.auc)
    }
}

/// Synthetic landscape: fitness is a sum of independent per-gene scores,
/// rescaled into `[0, 1]`.
#[derive(Clone, Debug)]
pub struct AdditiveOracle {
    /// `scores[pos][code]`.
    pub scores: Vec<Vec<f64>>,
    num_features: usize,
    lo: f64,
    hi: f64,
}

impl AdditiveOracle {
    /// Uniform random scores for every admissible code of `space`.
    pub fn random<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Self {
        let scores = (0..space.len())
            .map(|pos| (0..8).map(|c| if space.gene(pos).contains(c) { rng.random::<f64>() } else { 0.0 }).collect())
            .collect();
        Self::from_scores(space, scores)
    }

    /// Wraps `scores[pos][code]`, normalising so the space's worst and best
    /// genomes score 0 and 1.
    pub fn from_scores(space: &SearchSpace, scores: Vec<Vec<f64>>) -> Self {
        let mut oracle = Self {
            scores,
            num_features: space.num_features(),
            lo: 0.0,
            hi: 1.0,
        };
        let worst: f64 = (0..space.len())
            .map(|p| space.gene(p).codes().map(|c| oracle.scores[p][c as usize]).fold(f64::INFINITY, f64::min))
            .sum();
        oracle.lo = worst;
        oracle.hi = oracle.raw(&oracle.optimum_codes(space));
        oracle
    }

    fn raw(&self, codes: &[u8]) -> f64 {
        codes.iter().enumerate().map(|(p, &c)| self.scores[p][c as usize]).sum()
    }

    /// Best constraint-satisfying code vector of `space`.
    pub fn optimum_codes(&self, space: &SearchSpace) -> Vec<u8> {
        let best = |p: usize| {
            space
                .gene(p)
                .codes()
                .max_by(|&a, &b| self.scores[p][a as usize].total_cmp(&self.scores[p][b as usize]))
                .unwrap()
        };
        let mut codes: Vec<u8> = (0..space.len()).map(best).collect();
        let n = self.num_features;
        for side in [0..n, n..2 * n] {
            if codes[side.clone()].contains(&1) {
                continue;
            }
            // cheapest bit to switch on
            let pos = side
                .filter(|&p| space.gene(p).contains(1))
                .min_by(|&a, &b| {
                    let ca = self.scores[a][0] - self.scores[a][1];
                    let cb = self.scores[b][0] - self.scores[b][1];
                    ca.total_cmp(&cb)
                })
                .expect("space can select a feature");
            codes[pos] = 1;
        }
        codes
    }

    pub fn optimum(&self) -> f64 {
        1.0
    }
}

impl Fitness for AdditiveOracle {
    fn evaluate(&mut self, genome: &Genome) -> Result<f64> {
        Ok((self.raw(&genome.encode()) - self.lo) / (self.hi - self.lo))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitnessRecord {
    pub genome: Genome,
    pub auc: f64,
    pub params: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population: usize,
    pub generations: usize,
    pub seed: u64,
    pub reduction: bool,
    /// Per-gene mutation probability; `1 / genome length` when unset.
    pub mutation_rate: Option<f64>,
    /// Upper bound on the parameters a genome may use.
    pub budget: Option<u64>,
    /// Stop once a fitness at least this high has been evaluated.
    pub target: Option<f64>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 20,
            generations: 30,
            seed: 0,
            reduction: true,
            mutation_rate: None,
            budget: None,
            target: None,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::invalid("search.population", "binary tournament needs at least 2 individuals"));
        }
        if let Some(p) = self.mutation_rate {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("search.mutation_rate", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub best_auc: f64,
    pub mean_auc: f64,
    /// Decimal string; the count overflows every fixed-width integer for full-size models.
    pub space_size: String,
    pub removals: Vec<(usize, u8)>,
    /// Distinct genomes evaluated so far.
    pub evaluations: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub generations: Vec<GenerationLog>,
}

impl SearchLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("generation,best_auc,mean_auc,space_size,removals,evaluations\n");
        for g in &self.generations {
            let removals: Vec<String> = g.removals.iter().map(|(p, c)| format!("{p}:{c}")).collect();
            writeln!(
                out,
                "{},{:.6},{:.6},{},{},{}",
                g.generation,
                g.best_auc,
                g.mean_auc,
                g.space_size,
                removals.join(" "),
                g.evaluations
            )
            .unwrap();
        }
        out
    }
}

pub struct SearchOutcome {
    pub best: FitnessRecord,
    pub population: Vec<FitnessRecord>,
    pub space: SearchSpace,
    pub log: SearchLog,
    pub evaluations: u64,
    /// Distinct evaluations made when `target` was first reached.
    pub evaluations_to_target: Option<u64>,
}

/// Optional parameter budget: the limit and a genome's parameter count.
pub type Budget<'a> = Option<(u64, &'a dyn Fn(&Genome) -> u64)>;

/// Evaluates genomes once each, keyed by their encoding.
pub struct CachedFitness<F> {
    pub inner: F,
    cache: HashMap<Vec<u8>, f64>,
}

impl<F: Fitness> CachedFitness<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            cache: HashMap::new(),
        }
    }

    pub fn evaluations(&self) -> u64 {
        self.cache.len() as u64
    }

    pub fn evaluate(&mut self, genome: &Genome) -> Result<f64> {
        let key = genome.encode();
        if let Some(&f) = self.cache.get(&key) {
            return Ok(f);
        }
        let f = self.inner.evaluate(genome)?;
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::NonFinite(format!("fitness {f} of {genome} outside [0, 1]")));
        }
        self.cache.insert(key, f);
        Ok(f)
    }
}

pub fn initialize<R: Rng + ?Sized>(space: &SearchSpace, population: usize, rng: &mut R, budget: Budget) -> Result<Vec<Genome>> {
    if population < 2 {
        return Err(Error::invalid("search.population", "binary tournament needs at least 2 individuals"));
    }
    (0..population).map(|_| space.sample(rng, budget)).collect()
}

/// One binary tournament: two uniform draws with replacement, higher fitness
/// wins, ties broken uniformly.
pub fn tournament<R: Rng + ?Sized>(fitness: &[f64], rng: &mut R) -> usize {
    let a = rng.random_range(0..fitness.len());
    let b = rng.random_range(0..fitness.len());
    if fitness[a] > fitness[b] {
        a
    } else if fitness[b] > fitness[a] {
        b
    } else if rng.random::<bool>() {
        a
    } else {
        b
    }
}

pub fn mating_pool<R: Rng + ?Sized>(fitness: &[f64], size: usize, rng: &mut R) -> Vec<usize> {
    (0..size).map(|_| tournament(fitness, rng)).collect()
}

/// Swaps the tails of two code vectors after position `cut`.
pub fn crossover(a: &[u8], b: &[u8], cut: usize) -> (Vec<u8>, Vec<u8>) {
    let mut x = a[..cut].to_vec();
    x.extend_from_slice(&b[cut..]);
    let mut y = b[..cut].to_vec();
    y.extend_from_slice(&a[cut..]);
    (x, y)
}

/// Per-gene mutation with probability `rate`: selection bits flip, operation
/// genes move to another admissible value. Genes holding a value the space no
/// longer admits are resampled, then empty selections are repaired.
pub fn mutate<R: Rng + ?Sized>(codes: &mut [u8], space: &SearchSpace, rate: f64, rng: &mut R) -> Genome {
    for (pos, code) in codes.iter_mut().enumerate() {
        let set = space.gene(pos);
        if rate > 0.0 && rng.random::<f64>() < rate {
            match space.kind(pos) {
                GeneKind::EncoderInput(_) | GeneKind::DecoderInput(_) => {
                    if set.contains(1 - *code) {
                        *code = 1 - *code;
                    }
                }
                _ => {
                    let others: Vec<u8> = set.codes().filter(|&c| c != *code).collect();
                    if !others.is_empty() {
                        *code = others[rng.random_range(0..others.len())];
                    }
                }
            }
        }
        if !set.contains(*code) {
            let admissible: Vec<u8> = set.codes().collect();
            *code = admissible[rng.random_range(0..admissible.len())];
        }
    }
    let mut genome = space.genome_from_codes(codes);
    space.repair(&mut genome, rng);
    genome
}

/// Single-point crossover at a uniform cut in `1..len` followed by mutation.
pub fn crossover_mutate<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    space: &SearchSpace,
    rate: f64,
    rng: &mut R,
) -> (Genome, Genome) {
    let (ca, cb) = (a.encode(), b.encode());
    let cut = rng.random_range(1..ca.len());
    let (mut x, mut y) = crossover(&ca, &cb, cut);
    (mutate(&mut x, space, rate, rng), mutate(&mut y, space, rate, rng))
}

/// The `population` best of `parents ++ offspring`; equal fitness keeps
/// the earlier record.
pub fn survive(parents: Vec<FitnessRecord>, offspring: Vec<FitnessRecord>, population: usize) -> Vec<FitnessRecord> {
    let mut all = parents;
    all.extend(offspring);
    all.sort_by(|a, b| b.auc.total_cmp(&a.auc));
    all.truncate(population);
    all
}

/// Mean fitness of the records carrying each `(position, code)`; `None` where
/// no record carries it.
pub fn operation_fitness(space: &SearchSpace, records: &[FitnessRecord]) -> Vec<[Option<f64>; 8]> {
    let mut sums = vec![[(0.0f64, 0usize); 8]; space.len()];
    for r in records {
        for (pos, &c) in r.genome.encode().iter().enumerate() {
            sums[pos][c as usize].0 += r.auc;
            sums[pos][c as usize].1 += 1;
        }
    }
    sums.iter()
        .map(|row| {
            let mut out = [None; 8];
            for (c, &(s, n)) in row.iter().enumerate() {
                if n > 0 {
                    out[c] = Some(s / n as f64);
                }
            }
            out
        })
        .collect()
}

/// Removes the two globally worst `(position, code)` pairs by mean fitness,
/// then the worst code at the position whose code fitnesses vary most. When
/// that code is gone or pinned, the next most varied position is used;
/// positions without any spread are never picked this way.
/// Codes nobody carries are exempt and no set shrinks below one element.
pub fn reduce_space(space: &mut SearchSpace, records: &[FitnessRecord]) -> Vec<(usize, u8)> {
    let table = operation_fitness(space, records);
    let scored = |pos: usize| -> Vec<(u8, f64)> {
        space
            .gene(pos)
            .codes()
            .filter_map(|c| table[pos][c as usize].map(|f| (c, f)))
            .collect()
    };
    let spread: Vec<f64> = (0..space.len())
        .map(|pos| {
            let f: Vec<f64> = scored(pos).iter().map(|x| x.1).collect();
            if f.len() < 2 {
                return 0.0;
            }
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            (f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / f.len() as f64).sqrt()
        })
        .collect();

    let mut candidates: Vec<(f64, usize, u8)> = (0..space.len())
        .flat_map(|pos| scored(pos).into_iter().map(move |(c, f)| (f, pos, c)))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut removed = Vec::new();
    for &(_, pos, c) in &candidates {
        if removed.len() == 2 {
            break;
        }
        if space.remove(pos, c) {
            removed.push((pos, c));
        }
    }

    let mut order: Vec<usize> = (0..space.len()).collect();
    order.sort_by(|&a, &b| spread[b].total_cmp(&spread[a]).then(a.cmp(&b)));
    for pos in order.into_iter().filter(|&p| spread[p] > 0.0) {
        let worst = table[pos]
            .iter()
            .enumerate()
            .filter_map(|(c, f)| f.map(|f| (c as u8, f)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some((c, _)) = worst {
            if space.remove(pos, c) {
                removed.push((pos, c));
                break;
            }
        }
    }
    removed
}

fn record<F: Fitness>(fitness: &mut CachedFitness<F>, genome: Genome, budget: Budget) -> Result<FitnessRecord> {
    let auc = fitness.evaluate(&genome)?;
    let params = budget.map(|(_, count)| count(&genome));
    Ok(FitnessRecord { genome, auc, params })
}

fn mean(records: &[FitnessRecord]) -> f64 {
    records.iter().map(|r| r.auc).sum::<f64>() / records.len() as f64
}

/// Runs the full loop from `space` and returns the best genome ever evaluated.
pub fn search<F: Fitness>(
    space: SearchSpace,
    fitness: F,
    config: &EvolutionConfig,
    budget: Budget,
) -> Result<SearchOutcome> {
    config.validate()?;
    let mut space = space;
    let mut fitness = CachedFitness::new(fitness);
    let rate = config.mutation_rate.unwrap_or(1.0 / space.len() as f64);
    let reached = |f: &CachedFitness<F>, r: &FitnessRecord| config.target.is_some_and(|t| r.auc >= t).then(|| f.evaluations());

    let mut rng = substream(config.seed, &[TAG_INIT]);
    let mut population = Vec::with_capacity(config.population);
    let mut evaluations_to_target = None;
    for g in initialize(&space, config.population, &mut rng, budget)? {
        let r = record(&mut fitness, g, budget)?;
        evaluations_to_target = evaluations_to_target.or_else(|| reached(&fitness, &r));
        population.push(r);
    }
    let mut best = population.iter().max_by(|a, b| a.auc.total_cmp(&b.auc)).unwrap().clone();
    let mut log = SearchLog::default();
    log.generations.push(GenerationLog {
        generation: 0,
        best_auc: best.auc,
        mean_auc: mean(&population),
        space_size: space.size().to_string(),
        removals: Vec::new(),
        evaluations: fitness.evaluations(),
    });

    for generation in 1..=config.generations {
        if evaluations_to_target.is_some() {
            break;
        }
        let gen = generation as u64;
        let scores: Vec<f64> = population.iter().map(|r| r.auc).collect();
        let pool = mating_pool(&scores, config.population, &mut substream(config.seed, &[TAG_SELECT, gen]));
        let mut vary = substream(config.seed, &[TAG_VARY, gen]);
        let mut offspring = Vec::with_capacity(config.population);
        for pair in pool.chunks(2) {
            let (a, b) = (&population[pair[0]].genome, &population[pair[pair.len() - 1]].genome);
            let (x, y) = offspring_within_budget(a, b, &space, rate, &mut vary, budget)?;
            offspring.push(x);
            if offspring.len() < config.population {
                offspring.push(y);
            }
        }
        let mut evaluated = Vec::with_capacity(offspring.len());
        for g in offspring {
            let r = record(&mut fitness, g, budget)?;
            evaluations_to_target = evaluations_to_target.or_else(|| reached(&fitness, &r));
            if r.auc > best.auc {
                best = r.clone();
            }
            evaluated.push(r);
        }
        let removals = if config.reduction {
            let combined: Vec<FitnessRecord> = population.iter().chain(&evaluated).cloned().collect();
            reduce_space(&mut space, &combined)
        } else {
            Vec::new()
        };
        population = survive(population, evaluated, config.population);
        let entry = GenerationLog {
            generation,
            best_auc: best.auc,
            mean_auc: mean(&population),
            space_size: space.size().to_string(),
            removals,
            evaluations: fitness.evaluations(),
        };
        info!(
            "generation {} best {:.5} mean {:.5} space {} removed {:?}",
            entry.generation, entry.best_auc, entry.mean_auc, entry.space_size, entry.removals
        );
        log.generations.push(entry);
    }
    Ok(SearchOutcome {
        best,
        population,
        space,
        log,
        evaluations: fitness.evaluations(),
        evaluations_to_target,
    })
}

fn offspring_within_budget<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    space: &SearchSpace,
    rate: f64,
    rng: &mut R,
    budget: Budget,
) -> Result<(Genome, Genome)> {
    let Some((limit, count)) = budget else {
        return Ok(crossover_mutate(a, b, space, rate, rng));
    };
    let mut x = None;
    let mut y = None;
    for _ in 0..BUDGET_TRIES {
        let (cx, cy) = crossover_mutate(a, b, space, rate, rng);
        if x.is_none() && count(&cx) <= limit {
            x = Some(cx);
        }
        if y.is_none() && count(&cy) <= limit {
            y = Some(cy);
        }
        if let (Some(x), Some(y)) = (&x, &y) {
            return Ok((x.clone(), y.clone()));
        }
    }
    Err(Error::BudgetUnsatisfiable {
        budget: limit,
        tries: BUDGET_TRIES,
    })
}

/// Evaluations-to-optimum with and without reduction on additive oracles,
/// one oracle per seed.
pub fn reduction_ab(
    num_features: usize,
    blocks: usize,
    config: &EvolutionConfig,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<Vec<(Option<u64>, Option<u64>)>> {
    let mut out = Vec::new();
    for seed in seeds {
        let space = SearchSpace::initial(num_features, blocks);
        let oracle = AdditiveOracle::random(&space, &mut substream(seed, &[99]));
        let run = |reduction: bool| -> Result<Option<u64>> {
            let cfg = EvolutionConfig {
                seed,
                reduction,
                target: Some(oracle.optimum() - 1e-12),
                ..config.clone()
            };
            Ok(search(space.clone(), oracle.clone(), &cfg, None)?.evaluations_to_target)
        };
        out.push((run(true)?, run(false)?));
    }
    Ok(out)
}

/// Median with unreached runs counted as infinitely many evaluations.
pub fn median_evaluations(runs: &[Option<u64>]) -> f64 {
    let mut v: Vec<f64> = runs.iter().map(|r| r.map_or(f64::INFINITY, |e| e as f64)).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Current space size, exposed for logs.
pub fn space_size(space: &SearchSpace) -> BigUint {
    space.size()
}
