//! Bounded real-valued genetic algorithm over the (C, epsilon, gamma) box.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::svr::SvrHyperParams;

pub const GENE_NAMES: [&str; 3] = ["C", "epsilon", "gamma"];

/// Blend crossover extension factor.
pub const BLEND_ALPHA: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum GaError {
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error("invalid gene bounds: {0}")]
    Bounds(String),
    #[error("chromosome {0} has no fitness")]
    Unevaluated(usize),
    #[error("fitness {value} for chromosome (C={}, epsilon={}, gamma={}) is not a finite non-negative number", .genes[0], .genes[1], .genes[2])]
    Fitness { genes: [f64; 3], value: f64 },
}

/// Closed interval per gene, in `GENE_NAMES` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneBounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl GeneBounds {
    pub fn new(c: (f64, f64), epsilon: (f64, f64), gamma: (f64, f64)) -> Result<Self, GaError> {
        let b = Self {
            lo: [c.0, epsilon.0, gamma.0],
            hi: [c.1, epsilon.1, gamma.1],
        };
        for (i, name) in GENE_NAMES.iter().enumerate() {
            let (lo, hi) = b.range(i);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(GaError::Bounds(format!("{name} interval [{lo}, {hi}]")));
            }
        }
        // Every in-bounds triple must be valid SVR input.
        if b.lo[0] <= 0.0 || b.lo[1] < 0.0 || b.lo[2] < 0.0 {
            return Err(GaError::Bounds(format!(
                "lower bounds must satisfy C > 0, epsilon >= 0, gamma >= 0, got {:?}",
                b.lo
            )));
        }
        Ok(b)
    }

    /// Default search box for the dual-horizon method: C in [0.01, 1],
    /// epsilon in [0.1, 1], gamma in [0, gamma_scale / divisor].
    pub fn improved(gamma_scale: f64, divisor: f64) -> Result<Self, GaError> {
        if !(divisor > 0.0) {
            return Err(GaError::Bounds(format!(
                "gamma divisor must be > 0, got {divisor}"
            )));
        }
        Self::new((0.01, 1.0), (0.1, 1.0), (0.0, gamma_scale / divisor))
    }

    /// Baseline box: C in [0.001, 100], epsilon in [0.1, 1], gamma pinned.
    pub fn baseline(gamma_scale: f64) -> Result<Self, GaError> {
        Self::new((0.001, 100.0), (0.1, 1.0), (gamma_scale, gamma_scale))
    }

    pub fn range(&self, gene: usize) -> (f64, f64) {
        (self.lo[gene], self.hi[gene])
    }

    pub fn width(&self, gene: usize) -> f64 {
        self.hi[gene] - self.lo[gene]
    }

    pub fn midpoint(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.lo[i] + self.hi[i]))
    }

    pub fn contains(&self, genes: &[f64; 3]) -> bool {
        (0..3).all(|i| genes[i] >= self.lo[i] && genes[i] <= self.hi[i])
    }

    fn clamp(&self, gene: usize, v: f64) -> f64 {
        v.clamp(self.lo[gene], self.hi[gene])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chromosome {
    pub genes: [f64; 3],
    pub fitness: Option<f64>,
}

impl Chromosome {
    pub fn new(genes: [f64; 3]) -> Self {
        Self {
            genes,
            fitness: None,
        }
    }

    pub fn params(&self) -> SvrHyperParams {
        SvrHyperParams {
            c: self.genes[0],
            epsilon: self.genes[1],
            gamma: self.genes[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    /// Per-gene probability.
    pub mutation_rate: f64,
    /// Standard deviation as a fraction of the gene range.
    pub mutation_sigma: f64,
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            generations: 30,
            tournament_size: 3,
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            mutation_sigma: 0.1,
            elitism: 1,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        let bad = |m: String| Err(GaError::Config(m));
        if self.population_size < 2 {
            return bad(format!(
                "population size must be >= 2, got {}",
                self.population_size
            ));
        }
        if self.generations < 1 {
            return bad("generations must be >= 1".into());
        }
        if self.elitism >= self.population_size {
            return bad(format!(
                "elitism {} must be below population size {}",
                self.elitism, self.population_size
            ));
        }
        if self.tournament_size < 1 || self.tournament_size > self.population_size {
            return bad(format!(
                "tournament size must be in 1..={}, got {}",
                self.population_size, self.tournament_size
            ));
        }
        for (name, v) in [
            ("crossover rate", self.crossover_rate),
            ("mutation rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return bad(format!(
                "mutation sigma must be >= 0, got {}",
                self.mutation_sigma
            ));
        }
        Ok(())
    }
}

pub fn init_population<R: Rng>(
    bounds: &GeneBounds,
    cfg: &GaConfig,
    rng: &mut R,
) -> Vec<Chromosome> {
    (0..cfg.population_size)
        .map(|_| {
            Chromosome::new(std::array::from_fn(|i| {
                let (lo, hi) = bounds.range(i);
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            }))
        })
        .collect()
}

/// Draws `k` members with replacement and returns the fittest; ties go to
/// the lowest index.
pub fn tournament_select<R: Rng>(
    pop: &[Chromosome],
    k: usize,
    rng: &mut R,
) -> Result<Chromosome, GaError> {
    if k < 1 || k > pop.len() {
        return Err(GaError::Config(format!(
            "tournament size must be in 1..={}, got {k}",
            pop.len()
        )));
    }
    if let Some(i) = pop.iter().position(|c| c.fitness.is_none()) {
        return Err(GaError::Unevaluated(i));
    }
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..k {
        let i = rng.random_range(0..pop.len());
        let (fi, fb) = (pop[i].fitness.unwrap(), pop[best].fitness.unwrap());
        if fi < fb || (fi == fb && i < best) {
            best = i;
        }
    }
    Ok(pop[best])
}

pub fn blend_crossover<R: Rng>(
    a: &Chromosome,
    b: &Chromosome,
    bounds: &GeneBounds,
    rng: &mut R,
) -> Chromosome {
    blend_crossover_with(a, b, bounds, BLEND_ALPHA, rng)
}

/// Per gene `u * a + (1 - u) * b` with `u ~ U[-alpha, 1 + alpha]`, clamped.
pub fn blend_crossover_with<R: Rng>(
    a: &Chromosome,
    b: &Chromosome,
    bounds: &GeneBounds,
    alpha: f64,
    rng: &mut R,
) -> Chromosome {
    Chromosome::new(std::array::from_fn(|i| {
        let u: f64 = rng.random_range(-alpha..=1.0 + alpha);
        bounds.clamp(i, u * a.genes[i] + (1.0 - u) * b.genes[i])
    }))
}

pub fn mutate<R: Rng>(
    c: &Chromosome,
    bounds: &GeneBounds,
    cfg: &GaConfig,
    rng: &mut R,
) -> Chromosome {
    let mut genes = c.genes;
    for (i, g) in genes.iter_mut().enumerate() {
        if rng.random_bool(cfg.mutation_rate) {
            let sd = cfg.mutation_sigma * bounds.width(i);
            // Normal::new only fails for a negative or non-finite deviation.
            let noise = Normal::new(0.0, sd).map(|d| d.sample(rng)).unwrap_or(0.0);
            *g = bounds.clamp(i, *g + noise);
        }
    }
    Chromosome::new(genes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best: Chromosome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Chromosome,
    /// Best-so-far after each generation.
    pub generations: Vec<GenerationRecord>,
    /// Fitness calls actually made (cache misses).
    pub evaluations: usize,
}

impl GaOutcome {
    pub fn history(&self) -> Vec<f64> {
        self.generations
            .iter()
            .map(|r| r.best.fitness.unwrap_or(f64::NAN))
            .collect()
    }

    /// One tab-separated line per generation: generation, best fitness, C,
    /// epsilon, gamma.
    pub fn progress_log(&self) -> String {
        let mut out = String::from("generation\tbest_fitness\tC\tepsilon\tgamma\n");
        for r in &self.generations {
            let g = r.best.genes;
            let _ = writeln!(
                out,
                "{}\t{:e}\t{:e}\t{:e}\t{:e}",
                r.generation,
                r.best.fitness.unwrap_or(f64::NAN),
                g[0],
                g[1],
                g[2]
            );
        }
        out
    }
}

fn gene_key(genes: &[f64; 3]) -> [u64; 3] {
    genes.map(f64::to_bits)
}

/// Fills in every missing fitness, reusing cached values for identical genes.
/// Uncached chromosomes are scored in parallel; results land by index, so
/// evaluation order never matters.
fn evaluate<F>(
    pop: &mut [Chromosome],
    cache: &mut HashMap<[u64; 3], f64>,
    fitness: &F,
) -> Result<usize, GaError>
where
    F: Fn(&Chromosome) -> f64 + Sync,
{
    let mut pending: Vec<[f64; 3]> = Vec::new();
    for c in pop.iter() {
        if c.fitness.is_none() && !cache.contains_key(&gene_key(&c.genes)) {
            let key = gene_key(&c.genes);
            if !pending.iter().any(|p| gene_key(p) == key) {
                pending.push(c.genes);
            }
        }
    }
    let scores: Vec<f64> = pending
        .par_iter()
        .map(|g| fitness(&Chromosome::new(*g)))
        .collect();
    for (genes, value) in pending.iter().zip(&scores) {
        if !(value.is_finite() && *value >= 0.0) {
            return Err(GaError::Fitness {
                genes: *genes,
                value: *value,
            });
        }
        cache.insert(gene_key(genes), *value);
    }
    for c in pop.iter_mut() {
        if c.fitness.is_none() {
            c.fitness = Some(cache[&gene_key(&c.genes)]);
        }
    }
    Ok(pending.len())
}

/// Index of the minimal fitness, lowest index on ties.
fn argmin(pop: &[Chromosome]) -> usize {
    let mut best = 0;
    for (i, c) in pop.iter().enumerate() {
        if c.fitness.unwrap() < pop[best].fitness.unwrap() {
            best = i;
        }
    }
    best
}

/// Minimizes `fitness` over `bounds`. The search consumes one sequential
/// random stream seeded from `cfg.seed`; fitness calls use no randomness and
/// may run concurrently.
pub fn run_ga<F>(bounds: &GeneBounds, cfg: &GaConfig, fitness: F) -> Result<GaOutcome, GaError>
where
    F: Fn(&Chromosome) -> f64 + Sync,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache = HashMap::new();
    let mut pop = init_population(bounds, cfg, &mut rng);
    let mut best: Option<Chromosome> = None;
    let mut generations = Vec::with_capacity(cfg.generations);
    let mut evaluations = 0;

    for generation in 1..=cfg.generations {
        evaluations += evaluate(&mut pop, &mut cache, &fitness)?;
        let champ = pop[argmin(&pop)];
        if best.is_none_or(|b| champ.fitness < b.fitness) {
            best = Some(champ);
        }
        let best_now = best.expect("population is non-empty");
        generations.push(GenerationRecord {
            generation,
            best: best_now,
        });
        if generation == cfg.generations {
            break;
        }

        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| {
            pop[a]
                .fitness
                .partial_cmp(&pop[b].fitness)
                .expect("fitness is finite")
                .then(a.cmp(&b))
        });
        let mut next: Vec<Chromosome> = order[..cfg.elitism].iter().map(|&i| pop[i]).collect();
        while next.len() < cfg.population_size {
            let a = tournament_select(&pop, cfg.tournament_size, &mut rng)?;
            let b = tournament_select(&pop, cfg.tournament_size, &mut rng)?;
            let child = if rng.random_bool(cfg.crossover_rate) {
                blend_crossover(&a, &b, bounds, &mut rng)
            } else {
                a
            };
            next.push(mutate(&child, bounds, cfg, &mut rng));
        }
        pop = next;
    }

    Ok(GaOutcome {
        best: best.expect("at least one generation"),
        generations,
        evaluations,
    })
}
