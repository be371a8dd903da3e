//! Brownian increments and compound Poisson marks, reproducible per path.
//!
//! Every path draws from its own ChaCha8 stream selected by the path index,
//! so path `p` is the same whatever the path count or thread schedule.
//! Brownian increments and jumps use disjoint streams; switching jumps on or
//! off leaves the increments untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Mark distribution of the compound Poisson driver. Only families with a
/// finite second moment are offered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkDistribution {
    Constant {
        value: f64,
    },
    Normal {
        mean: f64,
        std_dev: f64,
    },
    /// Exponential on `(0, ∞)` with the given rate.
    Exponential {
        rate: f64,
    },
}

impl MarkDistribution {
    pub fn from_name(family: &str, params: &[f64]) -> Result<Self> {
        let d = match (family, params) {
            ("constant", [v]) => MarkDistribution::Constant { value: *v },
            ("normal", [m, s]) => MarkDistribution::Normal {
                mean: *m,
                std_dev: *s,
            },
            ("exponential", [r]) => MarkDistribution::Exponential { rate: *r },
            _ => {
                return Err(Error::config(format!(
                    "unsupported mark family `{family}` with {} parameter(s)",
                    params.len()
                )))
            }
        };
        d.check()?;
        Ok(d)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MarkDistribution::Constant { value } => value,
            MarkDistribution::Normal { mean, .. } => mean,
            MarkDistribution::Exponential { rate } => 1.0 / rate,
        }
    }

    /// `E[ζ²]`, finite for every supported family.
    pub fn second_moment(&self) -> f64 {
        match *self {
            MarkDistribution::Constant { value } => value * value,
            MarkDistribution::Normal { mean, std_dev } => mean * mean + std_dev * std_dev,
            MarkDistribution::Exponential { rate } => 2.0 / (rate * rate),
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            MarkDistribution::Constant { value } => value.is_finite(),
            MarkDistribution::Normal { mean, std_dev } => {
                mean.is_finite() && std_dev.is_finite() && std_dev >= 0.0
            }
            MarkDistribution::Exponential { rate } => rate.is_finite() && rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "invalid mark distribution parameters {self:?}"
            )))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            MarkDistribution::Constant { value } => value,
            MarkDistribution::Normal { mean, std_dev } => Normal::new(mean, std_dev)
                .expect("checked parameters")
                .sample(rng),
            MarkDistribution::Exponential { rate } => {
                Exp::new(rate).expect("checked parameters").sample(rng)
            }
        }
    }
}

/// Finite-activity Lévy measure `ν = intensity · law(ζ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySpec {
    pub intensity: f64,
    pub marks: MarkDistribution,
}

impl LevySpec {
    pub fn new(intensity: f64, marks: MarkDistribution) -> Result<Self> {
        let spec = Self { intensity, marks };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.intensity.is_finite() && self.intensity >= 0.0) {
            return Err(Error::config(format!(
                "jump intensity must be nonnegative, got {}",
                self.intensity
            )));
        }
        self.marks.check()?;
        if !self.second_moment().is_finite() {
            return Err(Error::config("mark law must have a finite second moment"));
        }
        Ok(())
    }

    /// `∫ ζ ν(dζ)`.
    pub fn first_moment(&self) -> f64 {
        self.intensity * self.marks.mean()
    }

    /// `∫ ζ² ν(dζ)`.
    pub fn second_moment(&self) -> f64 {
        self.intensity * self.marks.second_moment()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpMark {
    /// Step `(t_step, t_{step+1}]` containing the jump.
    pub step: usize,
    pub time: f64,
    pub mark: f64,
}

/// Sampled driving noise for a path ensemble on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    steps: usize,
    dt: f64,
    seed: u64,
    path_count: usize,
    increments: Vec<f64>,
    jumps: Vec<Vec<JumpMark>>,
    levy: Option<LevySpec>,
}

impl NoiseBundle {
    /// Brownian-only bundle from given increments, path-major.
    pub fn from_increments(
        grid: &TimeGrid,
        path_count: usize,
        increments: Vec<f64>,
    ) -> Result<NoiseBundle> {
        if path_count == 0 || increments.len() != path_count * grid.steps() {
            return Err(Error::config(
                "increments must hold one value per path and step",
            ));
        }
        Ok(NoiseBundle {
            steps: grid.steps(),
            dt: grid.dt(),
            seed: 0,
            path_count,
            increments,
            jumps: vec![Vec::new(); path_count],
            levy: None,
        })
    }

    pub fn path_count(&self) -> usize {
        self.path_count
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn levy(&self) -> Option<&LevySpec> {
        self.levy.as_ref()
    }

    /// Brownian increments `ΔB(t_i)` of path `p`, one per step.
    pub fn increments(&self, p: usize) -> &[f64] {
        &self.increments[p * self.steps..(p + 1) * self.steps]
    }

    pub fn increment(&self, p: usize, step: usize) -> f64 {
        self.increments[p * self.steps + step]
    }

    pub fn jumps(&self, p: usize) -> &[JumpMark] {
        &self.jumps[p]
    }

    /// True when no path carries a jump mark and no jump law was requested.
    pub fn is_brownian_only(&self) -> bool {
        self.levy.is_none_or(|l| l.intensity == 0.0) && self.jumps.iter().all(|j| j.is_empty())
    }

    /// The same sample paths seen on a grid with `factor` times fewer steps.
    /// Brownian increments are summed and jumps re-binned.
    pub fn coarsened(&self, factor: usize) -> Result<NoiseBundle> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::config(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut increments = Vec::with_capacity(self.path_count * steps);
        for p in 0..self.path_count {
            for chunk in self.increments(p).chunks(factor) {
                increments.push(chunk.iter().sum());
            }
        }
        let jumps = self
            .jumps
            .iter()
            .map(|js| {
                js.iter()
                    .map(|j| JumpMark {
                        step: j.step / factor,
                        ..*j
                    })
                    .collect()
            })
            .collect();
        Ok(NoiseBundle {
            steps,
            dt: self.dt * factor as f64,
            seed: self.seed,
            path_count: self.path_count,
            increments,
            jumps,
            levy: self.levy,
        })
    }

    /// The first `count` paths.
    pub fn truncated(&self, count: usize) -> Result<NoiseBundle> {
        if count == 0 || count > self.path_count {
            return Err(Error::config(format!(
                "cannot keep {count} of {} paths",
                self.path_count
            )));
        }
        Ok(NoiseBundle {
            path_count: count,
            increments: self.increments[..count * self.steps].to_vec(),
            jumps: self.jumps[..count].to_vec(),
            ..self.clone()
        })
    }
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw `path_count` independent paths of Brownian increments (and compound
/// Poisson marks when `levy` is given) on `grid`.
pub fn sample_noise(
    grid: &TimeGrid,
    path_count: usize,
    levy: Option<&LevySpec>,
    seed: u64,
) -> Result<NoiseBundle> {
    if path_count == 0 {
        return Err(Error::config("path_count must be at least 1"));
    }
    if let Some(l) = levy {
        l.check()?;
    }
    let steps = grid.steps();
    let dt = grid.dt();
    let sd = dt.sqrt();

    let per_path: Vec<(Vec<f64>, Vec<JumpMark>)> = (0..path_count)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, 2 * p as u64);
            let inc: Vec<f64> = (0..steps)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect();
            let mut marks = Vec::new();
            if let Some(l) = levy.filter(|l| l.intensity > 0.0) {
                let mut jr = path_rng(seed, 2 * p as u64 + 1);
                let counts = Poisson::new(l.intensity * dt).expect("positive rate");
                for step in 0..steps {
                    let k: f64 = counts.sample(&mut jr);
                    for _ in 0..k as usize {
                        let u: f64 = jr.random();
                        marks.push(JumpMark {
                            step,
                            time: grid.time(step) + u * dt,
                            mark: l.marks.sample(&mut jr),
                        });
                    }
                }
            }
            (inc, marks)
        })
        .collect();

    let mut increments = Vec::with_capacity(path_count * steps);
    let mut jumps = Vec::with_capacity(path_count);
    for (inc, marks) in per_path {
        increments.extend(inc);
        jumps.push(marks);
    }
    Ok(NoiseBundle {
        steps,
        dt,
        seed,
        path_count,
        increments,
        jumps,
        levy: levy.copied(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let levy = LevySpec::new(
            3.0,
            MarkDistribution::Normal {
                mean: 0.1,
                std_dev: 0.2,
            },
        )
        .unwrap();
        let a = sample_noise(&g, 50, Some(&levy), 7).unwrap();
        let b = sample_noise(&g, 50, Some(&levy), 7).unwrap();
        assert_eq!(a, b);
        let c = sample_noise(&g, 50, Some(&levy), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn path_identity_independent_of_path_count() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let small = sample_noise(&g, 3, None, 11).unwrap();
        let large = sample_noise(&g, 40, None, 11).unwrap();
        for p in 0..3 {
            assert_eq!(small.increments(p), large.increments(p));
        }
    }

    #[test]
    fn zero_intensity_has_no_marks() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let levy = LevySpec::new(0.0, MarkDistribution::Constant { value: 1.0 }).unwrap();
        let n = sample_noise(&g, 100, Some(&levy), 3).unwrap();
        assert!((0..100).all(|p| n.jumps(p).is_empty()));
        assert!(n.is_brownian_only());
        let plain = sample_noise(&g, 100, None, 3).unwrap();
        assert_eq!(plain.increments(17), n.increments(17));
    }

    #[test]
    fn increment_variance_matches_step() {
        // chi-square bound: Var(s²) = 2σ⁴/(N-1) for normal data
        let g = TimeGrid::new(1.0, 100).unwrap();
        let paths = 100_000;
        let n = sample_noise(&g, paths, None, 2024).unwrap();
        let dt = g.dt();
        for step in [0, 37, 99] {
            let xs: Vec<f64> = (0..paths).map(|p| n.increment(p, step)).collect();
            let m = xs.iter().sum::<f64>() / paths as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (paths - 1) as f64;
            let se_var = dt * (2.0 / (paths - 1) as f64).sqrt();
            assert!(
                (v - dt).abs() < 3.0 * se_var,
                "step {step}: var {v} vs {dt}"
            );
            assert!(m.abs() < 3.0 * (dt / paths as f64).sqrt());
        }
    }

    #[test]
    fn jump_counts_match_intensity() {
        let g = TimeGrid::new(2.0, 50).unwrap();
        let levy = LevySpec::new(1.5, MarkDistribution::Exponential { rate: 2.0 }).unwrap();
        let paths = 20_000;
        let n = sample_noise(&g, paths, Some(&levy), 5).unwrap();
        let total: usize = (0..paths).map(|p| n.jumps(p).len()).sum();
        let mean = total as f64 / paths as f64;
        let expected = 1.5 * 2.0;
        assert!((mean - expected).abs() < 3.0 * (expected / paths as f64).sqrt());
        for p in 0..50 {
            for j in n.jumps(p) {
                assert!(j.time >= g.time(j.step) && j.time <= g.time(j.step + 1));
                assert!(j.mark > 0.0);
            }
        }
    }

    #[test]
    fn unsupported_family_rejected() {
        assert!(matches!(
            MarkDistribution::from_name("pareto", &[1.5]),
            Err(Error::Config(_))
        ));
        assert!(MarkDistribution::from_name("normal", &[0.0, -1.0]).is_err());
        assert!(MarkDistribution::from_name("exponential", &[2.0]).is_ok());
        assert!(LevySpec::new(-1.0, MarkDistribution::Constant { value: 1.0 }).is_err());
    }

    #[test]
    fn coarsening_sums_increments() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let levy = LevySpec::new(5.0, MarkDistribution::Constant { value: 1.0 }).unwrap();
        let fine = sample_noise(&g, 4, Some(&levy), 9).unwrap();
        let coarse = fine.coarsened(4).unwrap();
        assert_eq!(coarse.steps(), 2);
        assert_eq!(coarse.dt(), 0.5);
        let direct: f64 = fine.increments(1)[4..].iter().sum();
        assert_eq!(coarse.increment(1, 1), direct);
        assert_eq!(coarse.jumps(2).len(), fine.jumps(2).len());
        assert!(fine.coarsened(3).is_err());
        assert_eq!(fine.truncated(2).unwrap().increments(1), fine.increments(1));
    }

    #[test]
    fn zero_paths_rejected() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert!(sample_noise(&g, 0, None, 1).is_err());
    }

    #[test]
    fn second_moments() {
        assert_eq!(
            MarkDistribution::Normal {
                mean: 1.0,
                std_dev: 2.0
            }
            .second_moment(),
            5.0
        );
        assert_eq!(
            MarkDistribution::Exponential { rate: 2.0 }.second_moment(),
            0.5
        );
        let l = LevySpec::new(3.0, MarkDistribution::Constant { value: 2.0 }).unwrap();
        assert_eq!(l.second_moment(), 12.0);
        assert_eq!(l.first_moment(), 6.0);
    }
}
