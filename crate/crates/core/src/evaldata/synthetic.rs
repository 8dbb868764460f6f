//! Synthetic match data drawn from known score processes.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{MatchRecord, Schema, Source, SECONDS_PER_DAY};
use crate::kernels::{Kernel, KernelError};
use crate::likelihoods::Likelihood;
use crate::special::sigmoid;

/// Timestamp of the first simulated day (2020-01-01).
pub const START: i64 = 1_577_836_800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub competitors: usize,
    pub matches: usize,
    pub days: i64,
    pub kernel: Kernel,
    pub likelihood: Likelihood,
    /// Added to the score difference when a side plays at home.
    #[serde(default)]
    pub home_advantage: f64,
    /// Equally spaced times (over the span) at which true scores are kept.
    #[serde(default)]
    pub probes: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub records: Vec<MatchRecord>,
    pub schema: Schema,
    /// Model times of the probes.
    pub probe_times: Vec<f64>,
    /// True score of each competitor at each probe time.
    pub truth: BTreeMap<String, Vec<f64>>,
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

fn gaussian(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

/// One draw of a zero-mean process with covariance `kernel` at sorted `times`
/// (measured from `epoch`).
pub fn sample_path(kernel: &Kernel, epoch: f64, times: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>, KernelError> {
    let space = kernel.to_state_space(epoch)?;
    let h = DVector::from_column_slice(space.measurement());
    let k = space.order();
    let mut out = Vec::with_capacity(times.len());
    let mut state: Option<(f64, DVector<f64>)> = None;
    for &t in times {
        let x = match state.take() {
            None => {
                let (m, p) = space.initial(t);
                m + psd_sqrt(&p) * gaussian(rng, k)
            }
            Some((prev, x)) => {
                let a = space.transition(prev, t);
                let q = space.noise(prev, t);
                a * x + psd_sqrt(&q) * gaussian(rng, k)
            }
        };
        out.push(h.dot(&x));
        state = Some((t, x));
    }
    Ok(out)
}

fn draw_outcome(lik: &Likelihood, d: f64, rng: &mut ChaCha8Rng) -> (i8, Option<(u64, u64)>) {
    let noise: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    match *lik {
        Likelihood::Probit => (if d + noise > 0.0 { 1 } else { -1 }, None),
        Likelihood::Logit => (if u < sigmoid(d) { 1 } else { -1 }, None),
        Likelihood::OrdinalProbit { draw_margin: a } => {
            let z = d + noise;
            (if z > a { 1 } else if z < -a { -1 } else { 0 }, None)
        }
        Likelihood::OrdinalLogit { draw_margin: a } => {
            let win = sigmoid(d - a);
            let loss = sigmoid(-d - a);
            (if u < win { 1 } else if u < win + loss { -1 } else { 0 }, None)
        }
        Likelihood::PoissonExp => {
            let a = Poisson::new(d.exp()).expect("positive rate").sample(rng) as u64;
            let b = Poisson::new((-d).exp()).expect("positive rate").sample(rng) as u64;
            ((a as i64 - b as i64).signum() as i8, Some((a, b)))
        }
        Likelihood::Gaussian { obs_noise } => {
            let z = d + obs_noise.sqrt() * noise;
            let mut diff = z.round() as i64;
            if diff == 0 {
                diff = if z >= 0.0 { 1 } else { -1 };
            }
            let base = 100;
            let pts = ((base + diff.max(0)) as u64, (base + (-diff).max(0)) as u64);
            (diff.signum() as i8, Some(pts))
        }
    }
}

pub fn generate(config: &SyntheticConfig) -> Result<Synthetic, KernelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let schema = Schema {
        ties: match config.likelihood {
            Likelihood::OrdinalProbit { .. } | Likelihood::OrdinalLogit { .. } | Likelihood::PoissonExp => true,
            _ => false,
        },
        source: match config.likelihood {
            Likelihood::PoissonExp | Likelihood::Gaussian { .. } => Source::Points,
            _ => Source::Outcome,
        },
        ..Schema::default()
    };
    let n_comp = config.competitors.max(2);
    let span = config.days.max(1) * SECONDS_PER_DAY;
    let mut stamps: Vec<i64> = (0..config.matches)
        .map(|_| START + rng.random_range(0..span))
        .collect();
    stamps.sort_unstable();
    let pairs: Vec<(usize, usize, i8)> = stamps
        .iter()
        .map(|_| {
            let i = rng.random_range(0..n_comp);
            let j = (i + rng.random_range(1..n_comp)) % n_comp;
            let home = if config.home_advantage != 0.0 {
                if rng.random::<bool>() {
                    1
                } else {
                    -1
                }
            } else {
                0
            };
            (i, j, home)
        })
        .collect();

    let epoch = schema.time(stamps.first().copied().unwrap_or(START));
    let probe_times: Vec<f64> = (0..config.probes)
        .map(|k| {
            let frac = (k as f64 + 0.5) / config.probes as f64;
            schema.time(START + (frac * span as f64) as i64)
        })
        .collect();

    // per-competitor sample times: its matches then the probes, merged in order
    let mut scores = vec![vec![0.0; 2]; stamps.len()];
    let mut truth = BTreeMap::new();
    for c in 0..n_comp {
        let mut when: Vec<(f64, Option<(usize, usize)>)> = Vec::new();
        for (m, &(i, j, _)) in pairs.iter().enumerate() {
            if i == c {
                when.push((schema.time(stamps[m]), Some((m, 0))));
            } else if j == c {
                when.push((schema.time(stamps[m]), Some((m, 1))));
            }
        }
        when.extend(probe_times.iter().map(|&t| (t, None)));
        when.sort_by(|a, b| a.0.total_cmp(&b.0));
        let times: Vec<f64> = when.iter().map(|w| w.0).collect();
        let path = sample_path(&config.kernel, epoch, &times, &mut rng)?;
        let mut probes = Vec::with_capacity(probe_times.len());
        for (w, s) in when.iter().zip(path) {
            match w.1 {
                Some((m, side)) => scores[m][side] = s,
                None => probes.push(s),
            }
        }
        truth.insert(format!("c{c}"), probes);
    }

    let records = stamps
        .iter()
        .zip(&pairs)
        .zip(&scores)
        .map(|((&timestamp, &(i, j, home)), s)| {
            let d = s[0] - s[1] + config.home_advantage * home as f64;
            let (outcome, points) = draw_outcome(&config.likelihood, d, &mut rng);
            MatchRecord {
                line: 0,
                timestamp,
                comp_i: format!("c{i}"),
                comp_j: format!("c{j}"),
                outcome,
                points,
                home,
                first_mover: 0,
            }
        })
        .collect();
    Ok(Synthetic {
        records,
        schema,
        probe_times,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_paths_have_kernel_covariance() {
        let kernel = Kernel::sum(vec![
            Kernel::constant(0.5).unwrap(),
            Kernel::matern12(1.0, 0.7).unwrap(),
        ])
        .unwrap();
        let times = [0.0, 0.3, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let mut acc = [[0.0; 3]; 3];
        for _ in 0..n {
            let p = sample_path(&kernel, 0.0, &times, &mut rng).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    acc[a][b] += p[a] * p[b] / n as f64;
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                let want = kernel.evaluate(times[a], times[b]);
                assert!((acc[a][b] - want).abs() < 0.05, "{a}{b}: {} vs {want}", acc[a][b]);
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SyntheticConfig {
            competitors: 5,
            matches: 50,
            days: 30,
            kernel: Kernel::constant(1.0).unwrap(),
            likelihood: Likelihood::ordinal_probit(0.3).unwrap(),
            home_advantage: 0.2,
            probes: 3,
            seed: 9,
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.truth, b.truth);
        assert!(a.records.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert!(a.schema.ties);
    }
}
