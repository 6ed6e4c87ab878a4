//! Equal-frequency feature discretisation.

/// Per-feature bin upper bounds.
///
/// A feature with bounds `u_0 < u_1 < ... < u_{k-1}` has `k + 1` bins; value
/// `x` falls in the first bin `i` with `x <= u_i`, or in the last bin when it
/// exceeds every bound. This keeps `bin(x) <= b` equivalent to `x <= u_b`, so a
/// split on bin `b` can be replayed on raw values at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMapper {
    bounds: Vec<Vec<f64>>,
}

impl BinMapper {
    pub fn from_bounds(bounds: Vec<Vec<f64>>) -> Self {
        BinMapper { bounds }
    }

    /// Computes quantile bounds for every column of `columns`.
    pub fn fit<I>(columns: impl IntoIterator<Item = I>, max_bin: usize) -> Self
    where
        I: IntoIterator<Item = f64>,
    {
        let bounds = columns
            .into_iter()
            .map(|col| {
                let mut values: Vec<f64> = col.into_iter().collect();
                quantile_bounds(&mut values, max_bin)
            })
            .collect();
        BinMapper { bounds }
    }

    pub fn n_features(&self) -> usize {
        self.bounds.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.bounds[feature].len() + 1
    }

    pub fn bounds(&self, feature: usize) -> &[f64] {
        &self.bounds[feature]
    }

    /// Upper bound of `bin`, `+inf` for the last bin.
    pub fn upper_bound(&self, feature: usize, bin: usize) -> f64 {
        self.bounds[feature]
            .get(bin)
            .copied()
            .unwrap_or(f64::INFINITY)
    }

    pub fn bin(&self, feature: usize, value: f64) -> usize {
        let b = &self.bounds[feature];
        // NaN lands in the last bin
        b.partition_point(|&u| !(value <= u))
    }
}

fn quantile_bounds(values: &mut Vec<f64>, max_bin: usize) -> Vec<f64> {
    values.retain(|v| !v.is_nan());
    values.sort_by(|a, b| a.total_cmp(b));
    // distinct values with multiplicities
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for &v in values.iter() {
        match distinct.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => distinct.push((v, 1)),
        }
    }
    if distinct.len() <= 1 {
        return Vec::new();
    }
    let midpoint = |i: usize| {
        let (a, b) = (distinct[i].0, distinct[i + 1].0);
        let m = a + (b - a) / 2.0;
        if m < b {
            m
        } else {
            a
        }
    };
    if distinct.len() <= max_bin {
        return (0..distinct.len() - 1).map(midpoint).collect();
    }
    let total: usize = distinct.iter().map(|d| d.1).sum();
    let mut bounds = Vec::with_capacity(max_bin - 1);
    let mut cumulative = 0usize;
    let mut next_cut = 1usize;
    for i in 0..distinct.len() - 1 {
        cumulative += distinct[i].1;
        // cut once the running count passes the next quantile
        if cumulative * max_bin >= next_cut * total {
            bounds.push(midpoint(i));
            while next_cut * total <= cumulative * max_bin {
                next_cut += 1;
            }
            if bounds.len() == max_bin - 1 {
                break;
            }
        }
    }
    bounds
}
