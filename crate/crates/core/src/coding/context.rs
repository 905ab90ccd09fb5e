//! Adaptive bit-probability model over discrete contexts.
//!
//! A context is built from previously transmitted bits only: the bitplane
//! index, the three causal in-plane neighbors, and the co-located bits of
//! up to three more-significant planes. Counts start at (1, 1) and halve
//! when their sum reaches the renormalization limit, so probabilities track
//! slowly drifting statistics without overflowing the coder's precision.

use serde::{Deserialize, Serialize};

/// Halve counts when a context's total reaches this.
const COUNT_LIMIT: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextConfig {
    /// Use the three causal in-plane neighbors (y-1,x), (y,x-1), (y-1,x-1).
    pub in_plane_neighbors: bool,
    /// Number of more-significant co-located plane bits (0..=3).
    pub prev_planes: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            in_plane_neighbors: true,
            prev_planes: 3,
        }
    }
}

impl ContextConfig {
    /// Context model with a single context per plane.
    pub fn plane_only() -> Self {
        ContextConfig {
            in_plane_neighbors: false,
            prev_planes: 0,
        }
    }

    pub fn contexts_per_plane(&self) -> usize {
        let nb = if self.in_plane_neighbors { 8 } else { 1 };
        nb << self.prev_planes.min(3)
    }
}

/// Adaptive (zeros, ones) counts per context.
#[derive(Debug, Clone)]
pub struct ContextModel {
    cfg: ContextConfig,
    planes: usize,
    counts: Vec<[u32; 2]>,
}

impl ContextModel {
    pub fn new(cfg: ContextConfig, planes: usize) -> Self {
        let n = cfg.contexts_per_plane() * planes.max(1);
        ContextModel {
            cfg,
            planes,
            counts: vec![[1, 1]; n],
        }
    }

    pub fn config(&self) -> ContextConfig {
        self.cfg
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    /// Context id for bit (plane, channel, y, x) of a B x C x Y x X tensor
    /// stored plane-major. Skipped (mask-inactive) positions must hold 0 in
    /// `bits` so both coder sides see the same neighborhood.
    pub fn context_id(
        &self,
        bits: &[u8],
        planes: usize,
        c_dim: usize,
        y_dim: usize,
        x_dim: usize,
        plane: usize,
        ch: usize,
        y: usize,
        x: usize,
    ) -> usize {
        debug_assert_eq!(planes, self.planes);
        let plane_stride = c_dim * y_dim * x_dim;
        let base = |p: usize| (p * c_dim + ch) * y_dim * x_dim;
        let _ = plane_stride;
        let mut id = 0usize;
        if self.cfg.in_plane_neighbors {
            let b0 = base(plane);
            let left = if x > 0 { bits[b0 + y * x_dim + x - 1] } else { 0 };
            let up = if y > 0 { bits[b0 + (y - 1) * x_dim + x] } else { 0 };
            let diag = if y > 0 && x > 0 {
                bits[b0 + (y - 1) * x_dim + x - 1]
            } else {
                0
            };
            id = left as usize + 2 * up as usize + 4 * diag as usize;
        }
        let nb = if self.cfg.in_plane_neighbors { 8 } else { 1 };
        let mut prev = 0usize;
        for k in 1..=self.cfg.prev_planes.min(3) {
            let bit = if plane >= k {
                bits[base(plane - k) + y * x_dim + x] as usize
            } else {
                0
            };
            prev |= bit << (k - 1);
        }
        id += nb * prev;
        plane * self.cfg.contexts_per_plane() + id
    }

    pub fn counts(&self, ctx: usize) -> (u32, u32) {
        let c = self.counts[ctx];
        (c[0], c[1])
    }

    /// Probability of a 1 under the current counts, for codelength
    /// estimation.
    pub fn p_one(&self, ctx: usize) -> f64 {
        let c = self.counts[ctx];
        c[1] as f64 / (c[0] + c[1]) as f64
    }

    pub fn update(&mut self, ctx: usize, bit: u8) {
        let c = &mut self.counts[ctx];
        c[bit as usize] += 1;
        if c[0] + c[1] >= COUNT_LIMIT {
            c[0] = (c[0] + 1) >> 1;
            c[1] = (c[1] + 1) >> 1;
        }
    }
}

/// Adaptive model over R-ary symbols with a causal-neighbor context, used
/// for the rate map. Context is (left, up) with out-of-frame treated as 1.
#[derive(Debug, Clone)]
pub struct SymbolModel {
    r: usize,
    counts: Vec<Vec<u32>>,
}

impl SymbolModel {
    pub fn new(r: usize) -> Self {
        SymbolModel {
            r,
            counts: vec![vec![1; r]; r * r],
        }
    }

    pub fn arity(&self) -> usize {
        self.r
    }

    /// Context from already-coded neighbors of a Y x X rate map holding
    /// values in 1..=R.
    pub fn context_id(&self, map: &[u8], x_dim: usize, y: usize, x: usize) -> usize {
        let left = if x > 0 { map[y * x_dim + x - 1] as usize } else { 1 };
        let up = if y > 0 { map[(y - 1) * x_dim + x] as usize } else { 1 };
        (left - 1) * self.r + (up - 1)
    }

    /// Cumulative bounds of `symbol` (0-based) and the total mass.
    pub fn bounds(&self, ctx: usize, symbol: usize) -> (u32, u32, u32) {
        let c = &self.counts[ctx];
        let mut lo = 0;
        for s in c.iter().take(symbol) {
            lo += s;
        }
        let hi = lo + c[symbol];
        let total: u32 = c.iter().sum();
        (lo, hi, total)
    }

    pub fn locate(&self, ctx: usize, target: u32) -> usize {
        let c = &self.counts[ctx];
        let mut acc = 0;
        for (i, &n) in c.iter().enumerate() {
            acc += n;
            if target < acc {
                return i;
            }
        }
        self.r - 1
    }

    pub fn update(&mut self, ctx: usize, symbol: usize) {
        let c = &mut self.counts[ctx];
        c[symbol] += 1;
        let total: u32 = c.iter().sum();
        if total >= COUNT_LIMIT {
            for v in c.iter_mut() {
                *v = (*v + 1) >> 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_only_config_has_one_context_per_plane() {
        let m = ContextModel::new(ContextConfig::plane_only(), 6);
        assert_eq!(m.counts.len(), 6);
    }

    #[test]
    fn default_config_has_64_contexts_per_plane() {
        let cfg = ContextConfig::default();
        assert_eq!(cfg.contexts_per_plane(), 64);
    }

    #[test]
    fn counts_halve_at_limit() {
        let mut m = ContextModel::new(ContextConfig::plane_only(), 1);
        for _ in 0..COUNT_LIMIT {
            m.update(0, 1);
        }
        let (c0, c1) = m.counts(0);
        assert!(c0 >= 1 && c1 >= 1);
        assert!(c0 + c1 < COUNT_LIMIT);
    }
}
