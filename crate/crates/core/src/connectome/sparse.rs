//! CSR-style sparse coupling structure, the engine's hot-path layout.
//!
//! Storage is linear in the number of retained edges. Edges of target `i`
//! live in `row_ptr[i]..row_ptr[i+1]`, ordered by ascending source index;
//! that order is also the engine's accumulation order, which pins the
//! floating-point result independent of worker count.

use super::{Connectome, ConnectomeError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoupling {
    pub n_regions: usize,
    /// n+1 monotone offsets into the edge arrays; row i = edges into target i.
    pub row_ptr: Vec<usize>,
    /// Per-edge source region index.
    pub src_idx: Vec<u32>,
    /// Per-edge coupling weight.
    pub weight: Vec<f64>,
    /// Per-edge transmission delay in integration steps.
    pub delay_steps: Vec<u32>,
    /// max(delay_steps) + 1; 1 when there are no edges.
    pub horizon: usize,
}

impl SparseCoupling {
    pub fn n_edges(&self) -> usize {
        self.src_idx.len()
    }

    /// Edges into target `i` as (source, weight, delay_steps) triples.
    pub fn edges_into(&self, i: usize) -> impl Iterator<Item = (usize, f64, usize)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .map(move |e| (self.src_idx[e] as usize, self.weight[e], self.delay_steps[e] as usize))
    }

    /// Minimum delay over edges whose source or target is in `regions`.
    /// Returns None if no such edge exists.
    pub fn min_delay_touching(&self, regions: &[usize]) -> Option<usize> {
        let mark: std::collections::HashSet<usize> = regions.iter().copied().collect();
        let mut min: Option<usize> = None;
        for i in 0..self.n_regions {
            for (src, _, d) in self.edges_into(i) {
                if mark.contains(&i) || mark.contains(&src) {
                    min = Some(min.map_or(d, |m: usize| m.min(d)));
                }
            }
        }
        min
    }
}

/// Sparsifies a connectome: retains edges with weight strictly above
/// `weight_threshold` and converts tract lengths to integer step delays,
/// `delay_steps = round(length / (speed * dt))` with round-half-up.
pub fn build_sparse(
    c: &Connectome,
    conduction_speed: f64,
    dt: f64,
    weight_threshold: f64,
) -> Result<SparseCoupling> {
    if !(conduction_speed > 0.0) || !(dt > 0.0) {
        return Err(ConnectomeError::BadSparseArgs {
            speed: conduction_speed,
            dt,
        });
    }
    c.validate()?;

    let n = c.n_regions;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut src_idx = Vec::new();
    let mut weight = Vec::new();
    let mut delay_steps = Vec::new();
    let mut max_delay = 0u32;

    row_ptr.push(0);
    for i in 0..n {
        for j in 0..n {
            let w = c.weights[i][j];
            if w > weight_threshold {
                let d = (c.tract_lengths[i][j] / (conduction_speed * dt)).round() as u32;
                max_delay = max_delay.max(d);
                src_idx.push(j as u32);
                weight.push(w);
                delay_steps.push(d);
            }
        }
        row_ptr.push(src_idx.len());
    }

    let horizon = if src_idx.is_empty() {
        1
    } else {
        max_delay as usize + 1
    };
    Ok(SparseCoupling {
        n_regions: n,
        row_ptr,
        src_idx,
        weight,
        delay_steps,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_arithmetic() {
        // 78 mm at 3.9 mm/ms with dt 0.1 ms -> 200 steps.
        let c = Connectome::new(
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![vec![0.0, 78.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let sc = build_sparse(&c, 3.9, 0.1, 0.0).unwrap();
        assert_eq!(sc.n_edges(), 1);
        assert_eq!(sc.delay_steps[0], 200);
        assert_eq!(sc.horizon, 201);
    }

    #[test]
    fn rounding_is_half_up() {
        let c = Connectome::new(
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![vec![0.0, 2.5], vec![0.0, 0.0]],
        )
        .unwrap();
        // 2.5 mm / (1 mm/ms * 1 ms) = 2.5 -> 3.
        let sc = build_sparse(&c, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(sc.delay_steps[0], 3);
    }

    #[test]
    fn all_below_threshold_gives_empty_with_horizon_one() {
        let c = Connectome::new(
            vec![vec![0.0, 0.1], vec![0.2, 0.0]],
            vec![vec![0.0, 5.0], vec![5.0, 0.0]],
        )
        .unwrap();
        let sc = build_sparse(&c, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(sc.n_edges(), 0);
        assert_eq!(sc.horizon, 1);
        assert_eq!(sc.row_ptr, vec![0, 0, 0]);
    }

    #[test]
    fn rejects_nonpositive_dt_or_speed() {
        let c = Connectome::new(vec![vec![0.0]], vec![vec![0.0]]).unwrap();
        assert!(build_sparse(&c, 0.0, 0.1, 0.0).is_err());
        assert!(build_sparse(&c, 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn structure_invariants_and_edge_count() {
        let c = super::super::tests::fixture3();
        let sc = build_sparse(&c, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(sc.row_ptr[0], 0);
        assert_eq!(*sc.row_ptr.last().unwrap(), sc.n_edges());
        assert!(sc.row_ptr.windows(2).all(|w| w[0] <= w[1]));
        assert!(sc.delay_steps.iter().all(|&d| (d as usize) < sc.horizon));
        assert_eq!(sc.n_edges(), c.edge_count());
    }

    #[test]
    fn min_delay_touching_selects_incident_edges() {
        let c = Connectome::new(
            vec![
                vec![0.0, 1.0, 1.0],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
            ],
            vec![
                vec![0.0, 2.0, 9.0],
                vec![4.0, 0.0, 0.0],
                vec![0.0, 7.0, 0.0],
            ],
        )
        .unwrap();
        let sc = build_sparse(&c, 1.0, 1.0, 0.0).unwrap();
        // Edges touching region 0: 1->0 (d=2), 2->0 (d=9), 0->1 (d=4).
        assert_eq!(sc.min_delay_touching(&[0]), Some(2));
        // Edges touching region 2: 2->0 (d=9), 1->2 (d=7).
        assert_eq!(sc.min_delay_touching(&[2]), Some(7));
        assert_eq!(sc.min_delay_touching(&[]), None);
    }
}
