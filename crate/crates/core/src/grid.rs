use crate::error::{Error, Result};

/// Uniform partition `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::config("grid needs at least one step"));
        }
        let dt = horizon / steps as f64;
        let mut nodes: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        nodes[steps] = horizon;
        Ok(Self {
            horizon,
            steps,
            nodes,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn time(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Index of the node closest to `t`, if `t` lies in `[0, T]`.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.horizon;
        if !(t >= -tol && t <= self.horizon + tol) {
            return None;
        }
        let i = (t / self.dt()).round() as usize;
        Some(i.min(self.steps))
    }

    /// Evaluate `f` on every node.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|&t| f(t)).collect()
    }
}

/// `make_time_grid` under its operational name.
pub fn make_time_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_grid() {
        let g = make_time_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dt(), 0.25);
    }

    #[test]
    fn single_step() {
        let g = make_time_grid(2.0, 1).unwrap();
        assert_eq!(g.nodes(), &[0.0, 2.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(make_time_grid(1.0, 0), Err(Error::Config(_))));
        assert!(make_time_grid(0.0, 4).is_err());
        assert!(make_time_grid(-1.0, 4).is_err());
        assert!(make_time_grid(f64::NAN, 4).is_err());
    }

    #[test]
    fn nodes_strictly_increasing_and_end_at_horizon() {
        for steps in [1, 3, 7, 100, 513] {
            let g = make_time_grid(0.7, steps).unwrap();
            assert_eq!(g.time(0), 0.0);
            assert_eq!(g.time(steps), 0.7);
            assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn node_lookup() {
        let g = make_time_grid(1.0, 8).unwrap();
        assert_eq!(g.node_index(0.5), Some(4));
        assert_eq!(g.node_index(1.0), Some(8));
        assert_eq!(g.node_index(1.5), None);
        assert_eq!(g.node_index(-0.1), None);
    }
}
