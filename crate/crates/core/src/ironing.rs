//! Ironing of non-regular cost distributions.
//!
//! The virtual value factors as `phi(c, p) = rate(p) * (p - zeta(c))` with a
//! price-free `zeta(c) = c + cdf(c) / density(c)`, so one ironing of `zeta`
//! serves every display price. Ironing works in quantile space `q = cdf(c)`:
//! integrate `zeta` over `q`, take the lower convex hull of that integral,
//! and use the hull's slope as the ironed `zeta`. Regions of zero density
//! collapse to a single quantile and inherit the node value there.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ConversionCurve, CostDistribution};

/// Default number of quantile grid points.
pub const DEFAULT_IRONING_GRID: usize = 10_001;

/// Ironed `zeta` for one distribution, non-decreasing in cost by construction.
#[derive(Debug, Clone)]
pub struct IronedTransform {
    distribution: CostDistribution,
    cells: usize,
    /// Ironed `zeta` at quantile nodes `k / cells`.
    nodes: Vec<f64>,
    /// Hull slope over each cell.
    slopes: Vec<f64>,
    /// Cells lying strictly inside a hull edge that spans several cells.
    ironed: Vec<bool>,
    /// Raw `zeta` at the nodes.
    raw: Vec<f64>,
}

/// A maximal quantile interval on which the ironed `zeta` is flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IronedInterval {
    pub q_start: f64,
    pub q_end: f64,
    pub cost_start: f64,
    pub cost_end: f64,
    pub level: f64,
}

/// Builds the ironed transform on `grid_size` quantile nodes.
pub fn iron(dist: &CostDistribution, grid_size: usize) -> Result<IronedTransform> {
    if grid_size < 16 {
        return Err(Error::Input(format!("ironing grid needs at least 16 points, got {grid_size}")));
    }
    dist.validate()?;
    let cells = grid_size - 1;
    let q_at = |k: usize| k as f64 / cells as f64;

    let costs: Vec<f64> = (0..=cells).map(|k| dist.quantile(q_at(k))).collect();
    let raw = (0..=cells)
        .map(|k| {
            let (q, c) = (q_at(k), costs[k]);
            if k == 0 {
                return Ok(c);
            }
            let d = dist.density(c);
            if d <= 0.0 {
                return Err(Error::Singularity { cost: c });
            }
            Ok(c + q / d)
        })
        .collect::<Result<Vec<f64>>>()?;

    // Integral of zeta over the quantile grid. Since d(c q) = zeta dq along the
    // quantile function, each cell contributes [q c(q)] across it, less the
    // jump q (end - start) of any density gap it contains.
    let gaps = dist.gaps();
    let mut integral = Vec::with_capacity(grid_size);
    integral.push(0.0);
    for k in 0..cells {
        let (q0, q1) = (q_at(k), q_at(k + 1));
        let jumps: f64 = gaps.iter().filter(|g| g.0 >= q0 && g.0 < q1).map(|g| g.0 * (g.2 - g.1)).sum();
        integral.push(integral[k] + q1 * costs[k + 1] - q0 * costs[k] - jumps);
    }

    // Lower convex hull (monotone chain); collinear points are dropped.
    let slope = |i: usize, j: usize| (integral[j] - integral[i]) / (q_at(j) - q_at(i));
    let mut hull: Vec<usize> = Vec::with_capacity(grid_size);
    for k in 0..=cells {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if slope(a, b) >= slope(b, k) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }

    let mut slopes = vec![0.0; cells];
    let mut ironed = vec![false; cells];
    let mut nodes = vec![0.0; grid_size];
    for (e, pair) in hull.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let s = slope(a, b);
        for k in a..b {
            slopes[k] = s;
            ironed[k] = b - a > 1;
        }
        for node in nodes.iter_mut().take(b).skip(a + 1) {
            *node = s;
        }
        let left = if e == 0 { f64::NEG_INFINITY } else { slope(hull[e - 1], a) };
        nodes[a] = raw[a].clamp(left, s);
    }
    let last = cells;
    let left = slope(hull[hull.len() - 2], last);
    nodes[last] = raw[last].max(left);

    Ok(IronedTransform { distribution: dist.clone(), cells, nodes, slopes, ironed, raw })
}

impl IronedTransform {
    pub fn distribution(&self) -> &CostDistribution {
        &self.distribution
    }

    pub fn grid_size(&self) -> usize {
        self.cells + 1
    }

    /// Ironed `zeta` at quantile node `k`.
    pub fn node_value(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Raw `zeta` at quantile node `k`.
    pub fn raw_node_value(&self, k: usize) -> f64 {
        self.raw[k]
    }

    /// Integral of the ironed `zeta` over the quantile range `[0, 1]`.
    pub fn quantile_integral(&self) -> f64 {
        self.slopes.iter().sum::<f64>() / self.cells as f64
    }

    /// Ironed `zeta` at `cost`; costs outside the support are clamped to it.
    ///
    /// Floored at the cost itself, as the exact `zeta` is, so the ironed
    /// virtual value never exceeds the value. This matters inside density
    /// gaps and at the top of ironed stretches.
    pub fn zeta(&self, cost: f64) -> f64 {
        let c = cost.clamp(self.distribution.lower(), self.distribution.upper());
        self.hull_zeta(c).max(c)
    }

    fn hull_zeta(&self, c: f64) -> f64 {
        let dist = &self.distribution;
        let x = dist.cdf(c) * self.cells as f64;
        let k = (x.floor() as usize).min(self.cells - 1);
        let t = x - k as f64;
        let (lo, hi) = (self.nodes[k], self.nodes[k + 1]);
        if dist.density(c) <= 0.0 {
            return lo + t * (hi - lo);
        }
        if self.ironed[k] {
            return self.slopes[k];
        }
        match dist.zeta(c) {
            Ok(z) => z.clamp(lo, hi),
            Err(_) => lo + t * (hi - lo),
        }
    }

    /// Maximal flat stretches of the ironed `zeta`, in quantile and cost.
    pub fn ironed_intervals(&self) -> Vec<IronedInterval> {
        let mut out = Vec::new();
        let mut k = 0;
        while k < self.cells {
            if !self.ironed[k] {
                k += 1;
                continue;
            }
            let start = k;
            while k < self.cells && self.ironed[k] && self.slopes[k] == self.slopes[start] {
                k += 1;
            }
            let (qs, qe) = (start as f64 / self.cells as f64, k as f64 / self.cells as f64);
            out.push(IronedInterval {
                q_start: qs,
                q_end: qe,
                cost_start: self.distribution.quantile(qs),
                cost_end: self.distribution.quantile(qe),
                level: self.slopes[start],
            });
        }
        out
    }
}

/// `rate(p) * (p - ironed_zeta(c))`.
pub fn ironed_virtual_value(transform: &IronedTransform, cost: f64, price: f64, conversion: &ConversionCurve) -> f64 {
    let rate = conversion.rate(price);
    if rate == 0.0 {
        return 0.0;
    }
    rate * (price - transform.zeta(cost))
}
