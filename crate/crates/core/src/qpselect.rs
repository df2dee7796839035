//! Rate-constrained QP search by differential evolution, and the default QP
//! table for the seven shipped rate points.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{self, CodingMode, EncodeOptions};
use crate::container::{Bitstream, Mode};
use crate::error::{Error, Result};
use crate::geometry::{LaserCalibration, PointCloud};
use crate::highrate::{QpVector, Q_MAX, Q_PHI_MAX};
use crate::lowrate::RdConfig;
use crate::predictor::ElevationPredictor;
use crate::predtree::{TreeSet, DEFAULT_THRESHOLD_DEG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RatePoint {
    R01,
    R02,
    R03,
    R04,
    R05,
    R06,
    R07,
}

impl RatePoint {
    pub const ALL: [RatePoint; 7] =
        [RatePoint::R01, RatePoint::R02, RatePoint::R03, RatePoint::R04, RatePoint::R05, RatePoint::R06, RatePoint::R07];

    pub fn label(self) -> &'static str {
        ["r01", "r02", "r03", "r04", "r05", "r06", "r07"][self as usize]
    }
}

impl fmt::Display for RatePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RatePoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RatePoint::ALL
            .into_iter()
            .find(|r| r.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown rate point {s:?}, expected r01..r07")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultQp {
    pub qp: QpVector,
    pub mode: CodingMode,
    /// Radius step for the low-mode rate points.
    pub rd: Option<RdConfig>,
}

impl DefaultQp {
    pub fn options(&self) -> EncodeOptions {
        match self.rd {
            Some(rd) => EncodeOptions::low(self.qp, rd),
            None => EncodeOptions::high(self.qp),
        }
    }
}

pub fn default_qp(rate_point: RatePoint) -> DefaultQp {
    let low = |q_theta, lambda, step| DefaultQp {
        qp: QpVector::new(1, 1, q_theta, 0),
        mode: CodingMode::Low,
        rd: Some(RdConfig { lambda, step }),
    };
    let high = |q_phi, q_theta, q_r| DefaultQp { qp: QpVector::new(1, q_phi, q_theta, q_r), mode: CodingMode::High, rd: None };
    match rate_point {
        RatePoint::R01 => low(1, 0.6, 0.5),
        RatePoint::R02 => low(2, 2.2, 0.2),
        RatePoint::R03 => high(2, 2, 12),
        RatePoint::R04 => high(2, 4, 28),
        RatePoint::R05 => high(3, 6, 40),
        RatePoint::R06 => high(4, 12, 81),
        RatePoint::R07 => high(8, 21, 130),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeConfig {
    pub population: usize,
    pub scale: f64,
    pub crossover: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Bits per input point.
    pub target_rate: f64,
}

impl DeConfig {
    pub fn new(target_rate: f64) -> Self {
        Self { population: 10, scale: 0.4, crossover: 0.9, iterations: 50, seed: 0, target_rate }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::config(format!("population {} must be at least 4", self.population)));
        }
        if !(0.0..=2.0).contains(&self.scale) {
            return Err(Error::config(format!("scale factor {} outside [0, 2]", self.scale)));
        }
        if !(self.crossover > 0.0 && self.crossover <= 1.0) {
            return Err(Error::config(format!("crossover rate {} outside (0, 1]", self.crossover)));
        }
        if self.iterations == 0 {
            return Err(Error::config("at least one iteration is required"));
        }
        if self.target_rate.is_nan() || self.target_rate < 0.0 {
            return Err(Error::config(format!("target rate {} must be non-negative", self.target_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Individual {
    pub qp: QpVector,
    /// Summed squared error in m², `+inf` when infeasible.
    pub fitness: f64,
    pub rate: f64,
    pub feasible: bool,
}

const GENES: usize = 4;

fn genes(q: QpVector) -> [u16; GENES] {
    [q.q_delta, q.q_phi, q.q_theta, q.q_r]
}

fn from_genes(g: [u16; GENES]) -> QpVector {
    QpVector::new(g[0], g[1], g[2], g[3])
}

/// Inclusive gene bounds; low mode pins `q_r` to 0.
fn bounds(mode: CodingMode) -> [(u16, u16); GENES] {
    let r = match mode {
        CodingMode::Low => (0, 0),
        CodingMode::High => (1, Q_MAX),
    };
    [(1, Q_MAX), (1, Q_PHI_MAX), (1, Q_MAX), r]
}

fn active_genes(mode: CodingMode) -> usize {
    match mode {
        CodingMode::Low => GENES - 1,
        CodingMode::High => GENES,
    }
}

pub fn random_qp<R: Rng>(mode: CodingMode, rng: &mut R) -> QpVector {
    from_genes(bounds(mode).map(|(lo, hi)| rng.random_range(lo..=hi)))
}

pub fn initialize_population<R: Rng>(population: usize, mode: CodingMode, rng: &mut R) -> Vec<QpVector> {
    (0..population).map(|_| random_qp(mode, rng)).collect()
}

/// `q_j + scale * (q_k - q_l)` for two other distinct random members,
/// rounded and clamped gene by gene.
pub fn mutate<R: Rng>(population: &[QpVector], j: usize, rng: &mut R, scale: f64, mode: CodingMode) -> Result<QpVector> {
    if population.len() < 4 || j >= population.len() {
        return Err(Error::config("mutation needs at least 4 members and a valid index"));
    }
    let picks = sample(rng, population.len() - 1, 2);
    let other = |i: usize| if i >= j { i + 1 } else { i };
    let (qj, qk, ql) = (genes(population[j]), genes(population[other(picks.index(0))]), genes(population[other(picks.index(1))]));
    let b = bounds(mode);
    let mut v = [0u16; GENES];
    for g in 0..GENES {
        let x = f64::from(qj[g]) + scale * (f64::from(qk[g]) - f64::from(ql[g]));
        v[g] = x.round().clamp(f64::from(b[g].0), f64::from(b[g].1)) as u16;
    }
    Ok(from_genes(v))
}

/// Binomial crossover with one gene always taken from the mutant.
pub fn crossover<R: Rng>(target: QpVector, mutant: QpVector, rate: f64, rng: &mut R, mode: CodingMode) -> QpVector {
    let (t, m) = (genes(target), genes(mutant));
    let forced = rng.random_range(0..active_genes(mode));
    let mut u = t;
    for g in 0..active_genes(mode) {
        if g == forced || rng.random::<f64>() < rate {
            u[g] = m[g];
        }
    }
    from_genes(u)
}

/// The trial replaces the target only when feasible and strictly fitter.
pub fn select(target: Individual, trial: Individual) -> Individual {
    if trial.feasible && trial.fitness < target.fitness {
        trial
    } else {
        target
    }
}

struct CalibrationCloud {
    trees: TreeSet,
    phi_ar: f64,
    points: usize,
}

pub struct FitnessEvaluator<'a> {
    clouds: Vec<CalibrationCloud>,
    mode: CodingMode,
    predictor: &'a dyn ElevationPredictor,
    rd: Option<RdConfig>,
    cache: Mutex<HashMap<QpVector, (f64, f64)>>,
}

impl<'a> FitnessEvaluator<'a> {
    /// `phi_ar` is estimated per cloud when absent. Low mode needs `rd`.
    pub fn new(
        clouds: &[PointCloud],
        calib: Option<&LaserCalibration>,
        mode: CodingMode,
        predictor: &'a dyn ElevationPredictor,
        phi_ar: Option<f64>,
        rd: Option<RdConfig>,
    ) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::invalid("calibration set is empty"));
        }
        if mode == CodingMode::Low && rd.is_none() {
            return Err(Error::config("low mode needs a radius step"));
        }
        let clouds = clouds
            .iter()
            .map(|c| {
                if c.is_empty() {
                    return Err(Error::invalid("calibration cloud is empty"));
                }
                let trees = codec::build_trees(c, calib, DEFAULT_THRESHOLD_DEG)?;
                let phi_ar = codec::resolve_phi_ar(&trees, phi_ar)?;
                Ok(CalibrationCloud { trees, phi_ar, points: c.len() })
            })
            .collect::<Result<_>>()?;
        Ok(Self { clouds, mode, predictor, rd, cache: Mutex::new(HashMap::new()) })
    }

    pub fn mode(&self) -> CodingMode {
        self.mode
    }

    fn options(&self, qp: QpVector, phi_ar: f64) -> EncodeOptions {
        let base = match self.rd {
            Some(rd) if self.mode == CodingMode::Low => EncodeOptions::low(qp, rd),
            _ => EncodeOptions::high(qp),
        };
        EncodeOptions { phi_ar: Some(phi_ar), ..base }
    }

    /// Summed per-cloud MSE and mean bits per input point, after a full
    /// serialize and decode of every calibration cloud.
    pub fn measure(&self, qp: QpVector) -> Result<(f64, f64)> {
        if let Some(&hit) = self.cache.lock().expect("cache lock").get(&qp) {
            return Ok(hit);
        }
        let mut fitness = 0.0;
        let mut rate = 0.0;
        for c in &self.clouds {
            let (bs, _) = codec::encode_trees(&c.trees, &self.options(qp, c.phi_ar), self.predictor)?;
            let bytes = bs.to_bytes();
            let decoded = codec::decode_spherical(&Bitstream::from_bytes(&bytes)?, self.predictor)?;
            fitness += codec::paired_mse(&c.trees, &decoded)?;
            rate += (bytes.len() * 8) as f64 / c.points as f64;
        }
        let out = (fitness, rate / self.clouds.len() as f64);
        self.cache.lock().expect("cache lock").insert(qp, out);
        Ok(out)
    }

    pub fn evaluate(&self, qp: QpVector, target_rate: f64) -> Result<Individual> {
        let mode = match self.mode {
            CodingMode::Low => Mode::Low,
            CodingMode::High => Mode::High,
        };
        qp.validate(mode)?;
        let (fitness, rate) = self.measure(qp)?;
        let feasible = rate <= target_rate;
        Ok(Individual { qp, fitness: if feasible { fitness } else { f64::INFINITY }, rate, feasible })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub generation: usize,
    /// Best feasible individual seen up to and including this generation.
    pub best: Option<Individual>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeOutcome {
    Found { best: Individual, log: Vec<ConvergenceRow> },
    Infeasible { log: Vec<ConvergenceRow> },
}

impl DeOutcome {
    pub fn log(&self) -> &[ConvergenceRow] {
        match self {
            DeOutcome::Found { log, .. } | DeOutcome::Infeasible { log } => log,
        }
    }

    pub fn best(&self) -> Result<Individual> {
        match self {
            DeOutcome::Found { best, .. } => Ok(*best),
            DeOutcome::Infeasible { .. } => Err(Error::Infeasible),
        }
    }
}

pub fn convergence_csv(log: &[ConvergenceRow]) -> String {
    let mut out = String::from("generation,best_fitness,best_rate,qdelta,qphi,qtheta,qr\n");
    for row in log {
        let _ = match row.best {
            Some(b) => writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.generation, b.fitness, b.rate, b.qp.q_delta, b.qp.q_phi, b.qp.q_theta, b.qp.q_r
            ),
            None => writeln!(out, "{},inf,,,,,", row.generation),
        };
    }
    out
}

fn better(a: &Individual, best: &Option<Individual>) -> bool {
    a.feasible
        && match best {
            None => true,
            Some(b) => a.fitness < b.fitness || (a.fitness == b.fitness && a.rate < b.rate),
        }
}

fn evaluate_all(ev: &FitnessEvaluator<'_>, qps: &[QpVector], target: f64) -> Result<Vec<Individual>> {
    qps.par_iter().map(|&q| ev.evaluate(q, target)).collect()
}

pub fn run_de(ev: &FitnessEvaluator<'_>, cfg: &DeConfig) -> Result<DeOutcome> {
    cfg.validate()?;
    let mode = ev.mode();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = initialize_population(cfg.population, mode, &mut rng);
    let mut pop = evaluate_all(ev, &start, cfg.target_rate)?;
    let mut best = None;
    for ind in &pop {
        if better(ind, &best) {
            best = Some(*ind);
        }
    }
    let mut log = vec![ConvergenceRow { generation: 0, best }];
    for generation in 1..=cfg.iterations {
        let qps: Vec<QpVector> = pop.iter().map(|i| i.qp).collect();
        let trials = (0..pop.len())
            .map(|j| {
                let v = mutate(&qps, j, &mut rng, cfg.scale, mode)?;
                Ok(crossover(qps[j], v, cfg.crossover, &mut rng, mode))
            })
            .collect::<Result<Vec<_>>>()?;
        let evaluated = evaluate_all(ev, &trials, cfg.target_rate)?;
        for (slot, trial) in pop.iter_mut().zip(evaluated) {
            *slot = select(*slot, trial);
            if better(slot, &best) {
                best = Some(*slot);
            }
        }
        log.push(ConvergenceRow { generation, best });
    }
    Ok(match best {
        Some(best) => DeOutcome::Found { best, log },
        None => DeOutcome::Infeasible { log },
    })
}
