//! Nonparametric bootstrap: resample rows (within strata), refit, and read
//! percentile intervals off the refitted models.
//!
//! Replicate `i` draws from a ChaCha8 stream seeded with `seed + i`, so results
//! do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 200,
            seed: 1,
            level: 0.95,
        }
    }
}

/// Largest tolerated share of failed refits.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct Bootstrap<M> {
    pub replicates: Vec<M>,
    pub failed: usize,
    pub requested: usize,
    pub level: f64,
}

/// Row indices of one resample; strata keep their sizes.
pub fn resample_rows(data: &SurvivalDataset, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match data.strata() {
        None => (0..data.n()).map(|_| rng.random_range(0..data.n())).collect(),
        Some((levels, codes)) => {
            let mut groups = vec![Vec::new(); levels.len()];
            for (i, &c) in codes.iter().enumerate() {
                groups[c].push(i);
            }
            groups
                .iter()
                .filter(|g| !g.is_empty())
                .flat_map(|g| {
                    (0..g.len())
                        .map(|_| g[rng.random_range(0..g.len())])
                        .collect::<Vec<_>>()
                })
                .collect()
        }
    }
}

pub fn bootstrap<M, F>(data: &SurvivalDataset, options: &BootstrapOptions, fit: F) -> Result<Bootstrap<M>>
where
    M: Send,
    F: Fn(&SurvivalDataset) -> Result<M> + Sync,
{
    if options.replicates < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 replicates"));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(Error::invalid("confidence level must lie in (0, 1)"));
    }
    let fits: Vec<Option<M>> = (0..options.replicates)
        .into_par_iter()
        .map(|i| {
            let rows = resample_rows(data, options.seed.wrapping_add(i as u64));
            fit(&data.subset(&rows)).ok()
        })
        .collect();
    let failed = fits.iter().filter(|f| f.is_none()).count();
    if failed as f64 > MAX_FAILURE_SHARE * options.replicates as f64 {
        return Err(Error::BootstrapFailures {
            failed,
            total: options.replicates,
        });
    }
    Ok(Bootstrap {
        replicates: fits.into_iter().flatten().collect(),
        failed,
        requested: options.replicates,
        level: options.level,
    })
}

impl<M: Sync> Bootstrap<M> {
    /// Pointwise percentile band of a vector-valued functional of the model.
    pub fn percentile_band<F>(&self, functional: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: Fn(&M) -> Result<Vec<f64>> + Sync,
    {
        let curves = self
            .replicates
            .par_iter()
            .map(&functional)
            .collect::<Result<Vec<_>>>()?;
        let len = curves.first().map_or(0, Vec::len);
        let alpha = (1.0 - self.level) / 2.0;
        let mut lower = Vec::with_capacity(len);
        let mut upper = Vec::with_capacity(len);
        let mut column = Vec::with_capacity(curves.len());
        for j in 0..len {
            column.clear();
            column.extend(curves.iter().map(|c| c[j]));
            column.sort_by(f64::total_cmp);
            lower.push(quantile_type7(&column, alpha));
            upper.push(quantile_type7(&column, 1.0 - alpha));
        }
        Ok((lower, upper))
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ingest_csv, ColumnRoles, IngestOptions};

    fn data() -> SurvivalDataset {
        let csv = "t,s,x,g\n1,1,0,a\n2,1,1,b\n3,0,2,a\n4,1,3,b\n5,1,1,b\n";
        let roles = ColumnRoles::new("t", "s", "x").with_strata("g");
        ingest_csv(csv.as_bytes(), &roles, &IngestOptions::default()).unwrap().0
    }

    #[test]
    fn quantile_type7_values() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile_type7(&v, 0.1) - 10.9).abs() < 1e-12);
        assert!((quantile_type7(&v, 0.5) - 50.5).abs() < 1e-12);
        assert_eq!(quantile_type7(&[3.0], 0.7), 3.0);
    }

    #[test]
    fn resampling_stays_within_strata() {
        let d = data();
        let (_, codes) = d.strata().unwrap();
        for seed in 0..20 {
            let rows = resample_rows(&d, seed);
            assert_eq!(rows.len(), d.n());
            let a = rows.iter().filter(|&&r| codes[r] == 0).count();
            assert_eq!(a, 2);
        }
    }

    #[test]
    fn failure_share_enforced() {
        let d = data();
        let opts = BootstrapOptions {
            replicates: 10,
            ..Default::default()
        };
        let err = bootstrap(&d, &opts, |_| -> Result<()> { Err(Error::NoEvents) }).unwrap_err();
        assert!(matches!(err, Error::BootstrapFailures { failed: 10, total: 10 }));
        let too_few = BootstrapOptions {
            replicates: 1,
            ..Default::default()
        };
        assert!(bootstrap(&d, &too_few, |_| Ok(())).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let d = data();
        let opts = BootstrapOptions {
            replicates: 16,
            seed: 9,
            level: 0.9,
        };
        let mean_time = |s: &SurvivalDataset| Ok(s.time().iter().sum::<f64>() / s.n() as f64);
        let a = bootstrap(&d, &opts, mean_time).unwrap();
        let b = bootstrap(&d, &opts, mean_time).unwrap();
        assert_eq!(a.replicates, b.replicates);
        let band = a.percentile_band(|m| Ok(vec![*m])).unwrap();
        assert!(band.0[0] <= band.1[0]);
    }
}
