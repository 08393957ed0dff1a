use serde::Serialize;

use super::ClusterError;

/// Right-continuous empirical distribution function.
///
/// `values` are the distinct sample values in ascending order and `cum[i]`
/// is the probability of a sample `<= values[i]`. The last entry is exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ecdf {
    values: Vec<f64>,
    cum: Vec<f64>,
    samples: usize,
}

impl Ecdf {
    pub fn from_samples(samples: &[f64]) -> Result<Ecdf, ClusterError> {
        if samples.is_empty() {
            return Err(ClusterError::EmptyDistribution);
        }
        if let Some(&bad) = samples.iter().find(|x| !x.is_finite()) {
            return Err(ClusterError::NonFinite(bad));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut values = Vec::new();
        let mut cum = Vec::new();
        let mut seen = 0usize;
        for run in sorted.chunk_by(|a, b| a == b) {
            seen += run.len();
            values.push(run[0]);
            cum.push(seen as f64 / n as f64);
        }
        Ok(Ecdf {
            values,
            cum,
            samples: n,
        })
    }

    /// Distribution putting mass proportional to `weight` on each value.
    pub fn from_weighted(points: &[(f64, f64)]) -> Result<Ecdf, ClusterError> {
        if points.is_empty() {
            return Err(ClusterError::EmptyDistribution);
        }
        for &(v, w) in points {
            if !v.is_finite() {
                return Err(ClusterError::NonFinite(v));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(ClusterError::BadWeight(w));
            }
        }
        let mut sorted = points.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = sorted.iter().map(|p| p.1).sum();
        let mut values = Vec::new();
        let mut cum = Vec::new();
        let mut acc = 0.0;
        for run in sorted.chunk_by(|a, b| a.0 == b.0) {
            acc += run.iter().map(|p| p.1).sum::<f64>();
            values.push(run[0].0);
            cum.push((acc / total).min(1.0));
        }
        *cum.last_mut().expect("nonempty") = 1.0;
        Ok(Ecdf {
            values,
            cum,
            samples: points.len(),
        })
    }

    /// Equal-weight mixture of several distributions, e.g. one per day.
    pub fn average(parts: &[Ecdf]) -> Result<Ecdf, ClusterError> {
        if parts.is_empty() {
            return Err(ClusterError::EmptyDistribution);
        }
        let mut grid: Vec<f64> = parts.iter().flat_map(|p| p.values.iter().copied()).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let m = parts.len() as f64;
        let mut cum: Vec<f64> = grid
            .iter()
            .map(|&x| (parts.iter().map(|p| p.eval(x)).sum::<f64>() / m).min(1.0))
            .collect();
        *cum.last_mut().expect("nonempty") = 1.0;
        Ok(Ecdf {
            values: grid,
            cum,
            samples: parts.iter().map(|p| p.samples).sum(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `P(X <= x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.values.partition_point(|&v| v <= x);
        if i == 0 {
            0.0
        } else {
            self.cum[i - 1]
        }
    }
}

/// Supremum distance between two ECDFs.
///
/// Both are step functions that only change at their own support points,
/// so the supremum is attained at one of the points of the merged support;
/// left limits coincide with the value at the previous merged point.
pub fn ks_distance(a: &Ecdf, b: &Ecdf) -> f64 {
    let (na, nb) = (a.values.len(), b.values.len());
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut d = 0.0f64;
    while i < na || j < nb {
        let x = match (a.values.get(i), b.values.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if i < na && a.values[i] == x {
            fa = a.cum[i];
            i += 1;
        }
        if j < nb && b.values[j] == x {
            fb = b.cum[j];
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(xs: &[f64]) -> Ecdf {
        Ecdf::from_samples(xs).unwrap()
    }

    #[test]
    fn steps_and_atoms() {
        let f = e(&[0.5, 0.25, 0.5, 0.75]);
        assert_eq!(f.values(), &[0.25, 0.5, 0.75]);
        assert_eq!(f.cumulative(), &[0.25, 0.75, 1.0]);
        assert_eq!(f.eval(0.1), 0.0);
        assert_eq!(f.eval(0.5), 0.75);
        assert_eq!(f.eval(0.6), 0.75);
        assert_eq!(f.eval(9.0), 1.0);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&e(&[0.1, 0.2, 0.3]), &e(&[0.3, 0.2, 0.1])), 0.0);
        assert_eq!(ks_distance(&e(&[0.5, 0.5]), &e(&[0.25, 0.75])), 0.5);
        assert_eq!(ks_distance(&e(&[0.1, 0.2]), &e(&[0.3, 0.4, 0.9])), 1.0);
    }

    #[test]
    fn ks_matches_known_two_sample_values() {
        assert_eq!(ks_distance(&e(&[1.0, 1.0, 4.0, 4.0]), &e(&[1.0, 1.0, 1.0, 4.0])), 0.25);
        let xs = [0.42, 0.24, 0.86, 0.85, 0.82, 0.82, 0.25, 0.78, 0.13, 0.27];
        let ys = [0.24, 0.27, 0.87, 0.29, 0.57, 0.44, 0.5, 0.00, 0.56, 0.03];
        assert!((ks_distance(&e(&xs), &e(&ys)) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn weighted_and_average() {
        let w = Ecdf::from_weighted(&[(1.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(w.cumulative(), &[0.25, 1.0]);
        let avg = Ecdf::average(&[e(&[1.0]), e(&[2.0, 2.0, 2.0])]).unwrap();
        assert_eq!(avg.cumulative(), &[0.5, 1.0]);
        // Pooling weights days by their sample counts instead.
        let pooled = e(&[1.0, 2.0, 2.0, 2.0]);
        assert_eq!(pooled.cumulative(), &[0.25, 1.0]);
        assert!(Ecdf::from_weighted(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        assert_eq!(Ecdf::from_samples(&[]), Err(ClusterError::EmptyDistribution));
        assert!(matches!(Ecdf::from_samples(&[f64::NAN]), Err(ClusterError::NonFinite(_))));
    }
}
