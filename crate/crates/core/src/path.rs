//! Path-valued data: jump records, Wiener noise and discretised segments.

/// Compound-Poisson events on `[0, horizon]`: strictly increasing times and
/// their jump sizes (row-major, `dim` per event).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpSet {
    pub times: Vec<f64>,
    pub sizes: Vec<f64>,
    pub dim: usize,
}

impl JumpSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            times: Vec::new(),
            sizes: Vec::new(),
            dim,
        }
    }

    pub fn count(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn size(&self, i: usize) -> &[f64] {
        &self.sizes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, time: f64, size: &[f64]) {
        self.times.push(time);
        self.sizes.extend_from_slice(size);
    }

    /// Times strictly increasing and inside `(0, horizon)`.
    pub fn is_valid(&self, horizon: f64) -> bool {
        self.sizes.len() == self.times.len() * self.dim
            && self.times.iter().all(|&t| t > 0.0 && t < horizon)
            && self.times.windows(2).all(|w| w[0] < w[1])
    }

    /// Grid index `k` (1-based step end) at which event `i` is applied on a
    /// uniform grid of `steps` steps over `[0, horizon]`: the first grid
    /// point at or after the event time.
    pub fn grid_index(&self, i: usize, horizon: f64, steps: usize) -> usize {
        let delta = horizon / steps as f64;
        let k = (self.times[i] / delta).ceil() as usize;
        k.clamp(1, steps)
    }

    /// Per-step jump totals on a uniform grid: entry `j` holds the jumps that
    /// land in the increment from `t_j` to `t_{j+1}` (row-major `steps × dim`).
    pub fn per_step(&self, horizon: f64, steps: usize) -> Vec<f64> {
        let mut out = vec![0.0; steps * self.dim];
        for i in 0..self.count() {
            let j = self.grid_index(i, horizon, steps) - 1;
            for (o, s) in out[j * self.dim..(j + 1) * self.dim]
                .iter_mut()
                .zip(self.size(i))
            {
                *o += s;
            }
        }
        out
    }
}

/// Wiener increments on a uniform grid of `steps` steps over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub steps: usize,
    pub dim: usize,
    pub horizon: f64,
    /// Row-major `steps × dim`; under the reference law each row is
    /// `Normal(0, δ·I)` with `δ = horizon / steps`.
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn zeros(steps: usize, dim: usize, horizon: f64) -> Self {
        Self {
            steps,
            dim,
            horizon,
            increments: vec![0.0; steps * dim],
        }
    }

    /// Draws increments from the Wiener reference measure.
    pub fn sample<R: rand::Rng + ?Sized>(steps: usize, dim: usize, horizon: f64, rng: &mut R) -> Self {
        let sd = (horizon / steps as f64).sqrt();
        let increments = (0..steps * dim)
            .map(|_| sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Self {
            steps,
            dim,
            horizon,
            increments,
        }
    }

    pub fn delta(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn step(&self, j: usize) -> &[f64] {
        &self.increments[j * self.dim..(j + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.increments.iter().all(|v| v.is_finite())
    }

    /// Grid times `0, δ, …, T` of this noise record.
    pub fn horizon_grid(&self) -> impl Iterator<Item = f64> + '_ {
        let delta = self.delta();
        (0..=self.steps).map(move |j| j as f64 * delta)
    }
}

/// A discretised path: grid times and states (row-major, `dim` per point).
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub dim: usize,
    pub jumps: Option<JumpSet>,
}

impl PathSegment {
    pub fn constant(x: &[f64], horizon: f64, steps: usize) -> Self {
        let times = uniform_grid(horizon, steps);
        let states = times.iter().flat_map(|_| x.iter().copied()).collect();
        Self {
            times,
            states,
            dim: x.len(),
            jumps: None,
        }
    }

    pub fn points(&self) -> usize {
        self.times.len()
    }

    pub fn steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.state(self.points() - 1)
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn view(&self) -> PathView<'_> {
        PathView {
            times: &self.times,
            states: &self.states,
            dim: self.dim,
        }
    }
}

/// Borrowed view of a discretised path, as handed to observation densities.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub times: &'a [f64],
    pub states: &'a [f64],
    pub dim: usize,
}

impl<'a> PathView<'a> {
    pub fn points(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, j: usize) -> &'a [f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn endpoint(&self) -> &'a [f64] {
        self.state(self.points() - 1)
    }

    /// Left-endpoint Riemann sum of `f(X_t)` over the path.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        (0..self.points().saturating_sub(1))
            .map(|j| f(self.state(j)) * (self.times[j + 1] - self.times[j]))
            .sum()
    }
}

pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    let delta = horizon / steps as f64;
    (0..=steps).map(|j| j as f64 * delta).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jump_snapping_uses_first_grid_point_at_or_after_event() {
        let mut jumps = JumpSet::empty(1);
        jumps.push(0.25, &[1.0]);
        jumps.push(0.26, &[2.0]);
        jumps.push(0.99, &[4.0]);
        assert!(jumps.is_valid(1.0));
        assert_eq!(jumps.grid_index(0, 1.0, 4), 1);
        assert_eq!(jumps.grid_index(1, 1.0, 4), 2);
        assert_eq!(jumps.grid_index(2, 1.0, 4), 4);
        assert_eq!(jumps.per_step(1.0, 4), vec![1.0, 2.0, 0.0, 4.0]);
    }

    #[test]
    fn invalid_jump_sets_are_detected() {
        let mut jumps = JumpSet::empty(1);
        jumps.push(0.5, &[1.0]);
        jumps.push(0.4, &[1.0]);
        assert!(!jumps.is_valid(1.0));
        let mut late = JumpSet::empty(1);
        late.push(1.0, &[1.0]);
        assert!(!late.is_valid(1.0));
    }

    #[test]
    fn riemann_integral_of_constant_path() {
        let p = PathSegment::constant(&[2.0], 1.5, 30);
        assert!((p.view().integrate(|x| x[0]) - 3.0).abs() < 1e-12);
        assert_eq!(p.endpoint(), &[2.0]);
    }
}
