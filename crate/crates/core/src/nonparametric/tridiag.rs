//! The tridiagonal system behind the discretized regularized-reconstruction
//! loss
//!
//! ```text
//! L(r) = Σ_i p_i Δ (r_i − x_i)² + σ² Σ_{i<M} p_i Δ ((r_{i+1} − r_i)/Δ)²
//! ```
//!
//! Setting `∂L/∂r_i = 0` with edge weights `a_i = σ² p_i / Δ` gives
//!
//! ```text
//! p_i Δ r_i + a_{i−1}(r_i − r_{i−1}) − a_i (r_{i+1} − r_i) = p_i Δ x_i
//! ```
//!
//! with `a_{−1} = a_{M−1} = 0`. The solver works with the displacement
//! `u = r − x`, for which the same matrix gives
//!
//! ```text
//! p_i Δ u_i + a_{i−1}(u_i − u_{i−1}) − a_i (u_{i+1} − u_i) = σ² (p_i − p_{i−1})
//! ```
//!
//! (with `p_{−1} = 0` and the last edge absent). On fine grids the raw
//! `r_i` carry rounding of order `ε·|x|` that the large edge weights amplify;
//! `u` is small and keeps full relative precision.

/// Coefficients of the stationarity system in difference form.
pub(crate) struct RcaeSystem {
    /// `p_i Δ`
    pub mass: Vec<f64>,
    /// Edge weights `a_i` for edges `(i, i+1)`, length `m − 1`.
    pub edge: Vec<f64>,
    /// Right-hand side `p_i Δ x_i` of the system in `r`.
    pub rhs: Vec<f64>,
    /// Right-hand side of the system in `u = r − x`.
    pub rhs_u: Vec<f64>,
    /// Nodes whose row is identically zero; pinned to `r_i = x_i`.
    pub pinned: Vec<bool>,
}

impl RcaeSystem {
    pub fn new(p: &[f64], nodes: &[f64], delta: f64, sigma2: f64) -> Self {
        let m = p.len();
        let mass: Vec<f64> = p.iter().map(|v| v * delta).collect();
        let edge: Vec<f64> = p[..m - 1].iter().map(|v| sigma2 * v / delta).collect();
        let rhs: Vec<f64> = mass.iter().zip(nodes).map(|(a, x)| a * x).collect();
        let rhs_u: Vec<f64> = (0..m)
            .map(|i| {
                let right = if i + 1 < m { sigma2 * p[i] } else { 0.0 };
                let left = if i > 0 { sigma2 * p[i - 1] } else { 0.0 };
                right - left
            })
            .collect();
        let pinned = (0..m)
            .map(|i| {
                let left = if i > 0 { edge[i - 1] } else { 0.0 };
                let right = if i + 1 < m { edge[i] } else { 0.0 };
                mass[i] == 0.0 && left == 0.0 && right == 0.0
            })
            .collect();
        Self { mass, edge, rhs, rhs_u, pinned }
    }

    fn edge_at(&self, i: isize) -> f64 {
        if i < 0 || i as usize >= self.edge.len() {
            0.0
        } else {
            self.edge[i as usize]
        }
    }

    /// Residual `b − A r`, evaluated in difference form.
    pub fn residual(&self, r: &[f64], nodes: &[f64]) -> Vec<f64> {
        let m = r.len();
        (0..m)
            .map(|i| {
                if self.pinned[i] {
                    return nodes[i] - r[i];
                }
                let mut ar = self.mass[i] * r[i];
                if i > 0 {
                    ar += self.edge[i - 1] * (r[i] - r[i - 1]);
                }
                if i + 1 < m {
                    ar -= self.edge[i] * (r[i + 1] - r[i]);
                }
                self.rhs[i] - ar
            })
            .collect()
    }

    /// Residual `b_u − A u` of the displacement system.
    pub fn residual_u(&self, u: &[f64]) -> Vec<f64> {
        let m = u.len();
        (0..m)
            .map(|i| {
                if self.pinned[i] {
                    return -u[i];
                }
                let mut au = self.mass[i] * u[i];
                if i > 0 {
                    au += self.edge[i - 1] * (u[i] - u[i - 1]);
                }
                if i + 1 < m {
                    au -= self.edge[i] * (u[i + 1] - u[i]);
                }
                self.rhs_u[i] - au
            })
            .collect()
    }

    /// Thomas algorithm on `A y = f`. `A` is symmetric and diagonally
    /// dominant, so no pivoting is needed.
    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        let m = f.len();
        let mut diag = vec![0.0; m];
        let mut off = vec![0.0; m]; // coupling to i+1 (negative edge weight)
        for i in 0..m {
            if self.pinned[i] {
                diag[i] = 1.0;
                off[i] = 0.0;
            } else {
                diag[i] = self.mass[i] + self.edge_at(i as isize - 1) + self.edge_at(i as isize);
                off[i] = -self.edge_at(i as isize);
            }
        }
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        c[0] = off[0] / diag[0];
        d[0] = f[0] / diag[0];
        for i in 1..m {
            let lower = off[i - 1];
            let den = diag[i] - lower * c[i - 1];
            c[i] = off[i] / den;
            d[i] = (f[i] - lower * d[i - 1]) / den;
        }
        let mut y = vec![0.0; m];
        y[m - 1] = d[m - 1];
        for i in (0..m - 1).rev() {
            y[i] = d[i] - c[i] * y[i + 1];
        }
        y
    }
}

/// Relative residual `Σ|b − A r| / Σ|b|`.
pub(crate) fn relative_residual(res: &[f64], rhs: &[f64]) -> f64 {
    let num: f64 = res.iter().map(|v| v.abs()).sum();
    let den: f64 = rhs.iter().map(|v| v.abs()).sum();
    num / den.max(f64::MIN_POSITIVE)
}
