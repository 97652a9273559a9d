//! Undirected weighted agent graph, its Laplacian, incidence structure,
//! Kronecker lifting, and a dense symmetric eigensolver.
//!
//! The Laplacian is `L = D - A` with `D` the degree matrix and `A` the
//! adjacency matrix of per-edge coupling weights `a_iq`. Per-agent state of
//! dimension `l` uses the block lift `L ⊗ I_l`. The second-smallest
//! eigenvalue `λ₂` (algebraic connectivity) governs every convergence and
//! gain bound downstream, so the eigensolver lives here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|m_ij - m_ji|` accepted by [`eig_symmetric`].
pub const SYMMETRY_TOL: f64 = 1e-10;

const JACOBI_SWEEP_CAP: usize = 100;
const JACOBI_OFF_TOL: f64 = 1e-12;

/// Undirected connected graph over agents `0..n` with one positive coupling
/// weight `a_iq` and one positive adaptive gain `d_iq` per unordered edge.
///
/// Symmetry `a_iq = a_qi` is structural: each unordered edge owns a single
/// weight value. Everything except the weights is immutable after
/// construction; the weights are updated only by the integrator between
/// derivative evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    gains: Vec<f64>,
    initial_weights: Vec<f64>,
}

impl Graph {
    /// Build a connected graph with uniform initial weight on every edge.
    ///
    /// `initial_weight < 1` is rejected here because the λ₂-ordering
    /// guarantee needs initial weights of at least one; use
    /// [`Graph::new_allowing_small_weights`] to opt out of that guarantee.
    pub fn new(
        n: usize,
        edges: &[(usize, usize)],
        initial_weight: f64,
        gains: &[f64],
    ) -> Result<Self> {
        if initial_weight < 1.0 {
            return Err(Error::validation(format!(
                "initial weight {initial_weight} < 1 voids the lambda2 ordering guarantee; \
                 use new_allowing_small_weights to override"
            )));
        }
        Self::new_allowing_small_weights(n, edges, initial_weight, gains)
    }

    /// Like [`Graph::new`] but accepts any positive initial weight.
    ///
    /// With initial weights below one the spectral ordering
    /// `λ₂(L(t)) ≥ λ₂(L₀)` is no longer guaranteed relative to the
    /// unit-weight Laplacian.
    pub fn new_allowing_small_weights(
        n: usize,
        edges: &[(usize, usize)],
        initial_weight: f64,
        gains: &[f64],
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::validation(format!(
                "need at least 2 agents, got {n}"
            )));
        }
        if !(initial_weight > 0.0) || !initial_weight.is_finite() {
            return Err(Error::validation(format!(
                "initial weight must be positive and finite, got {initial_weight}"
            )));
        }
        if gains.len() != edges.len() {
            return Err(Error::validation(format!(
                "expected one gain per edge ({} edges, {} gains)",
                edges.len(),
                gains.len()
            )));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for &(i, q) in edges {
            if i == q {
                return Err(Error::validation(format!(
                    "self-loop ({i},{q}) not allowed"
                )));
            }
            if i >= n || q >= n {
                return Err(Error::validation(format!(
                    "edge ({i},{q}) references an agent outside 0..{n}"
                )));
            }
            let e = (i.min(q), i.max(q));
            if canon.contains(&e) {
                return Err(Error::validation(format!(
                    "duplicate edge ({},{})",
                    e.0, e.1
                )));
            }
            canon.push(e);
        }
        for (idx, &d) in gains.iter().enumerate() {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::validation(format!(
                    "gain for edge {idx} must be positive and finite, got {d}"
                )));
            }
        }
        if !connected(n, &canon) {
            return Err(Error::Disconnected(format!(
                "{n} agents, {} edges do not form a connected graph",
                canon.len()
            )));
        }
        let weights = vec![initial_weight; canon.len()];
        Ok(Graph {
            n,
            edges: canon,
            initial_weights: weights.clone(),
            weights,
            gains: gains.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as canonical `(lower, upper)` agent pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Live coupling weights, one per edge.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Adaptive gain constants `d_iq`, one per edge.
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    /// Weights the graph was constructed with (the `L₀` reference).
    pub fn initial_weights(&self) -> &[f64] {
        &self.initial_weights
    }

    /// Replace all gains with a uniform value.
    pub fn set_uniform_gains(&mut self, gain: f64) -> Result<()> {
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(Error::validation(format!(
                "gain must be positive and finite, got {gain}"
            )));
        }
        self.gains = vec![gain; self.edges.len()];
        Ok(())
    }

    /// Write live weights back after an integration step (single-writer
    /// contract; no locking).
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.edges.len() {
            return Err(Error::validation(format!(
                "expected {} weights, got {}",
                self.edges.len(),
                weights.len()
            )));
        }
        for (idx, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::Divergence {
                    t: f64::NAN,
                    component: format!("weight[{idx}]"),
                });
            }
        }
        self.weights.copy_from_slice(weights);
        Ok(())
    }

    /// Reset live weights to their construction values.
    pub fn reset_weights(&mut self) {
        self.weights.copy_from_slice(&self.initial_weights);
    }

    /// Unlifted `n × n` Laplacian with the given per-edge weights.
    pub fn laplacian_n_with(&self, weights: &[f64]) -> DMatrix<f64> {
        assert_eq!(weights.len(), self.edges.len());
        let mut m = DMatrix::zeros(self.n, self.n);
        for (e, &(i, q)) in self.edges.iter().enumerate() {
            let w = weights[e];
            m[(i, i)] += w;
            m[(q, q)] += w;
            m[(i, q)] -= w;
            m[(q, i)] -= w;
        }
        m
    }

    /// Unlifted `n × n` Laplacian with current weights.
    pub fn laplacian_n(&self) -> DMatrix<f64> {
        self.laplacian_n_with(&self.weights)
    }

    /// Block-lifted Laplacian `L ⊗ I_l` with current weights.
    pub fn laplacian(&self, l: usize) -> DMatrix<f64> {
        self.laplacian_with(&self.weights, l)
    }

    /// Block-lifted Laplacian `L ⊗ I_l` with the given weights.
    pub fn laplacian_with(&self, weights: &[f64], l: usize) -> DMatrix<f64> {
        assert!(l >= 1, "block dimension must be positive");
        self.laplacian_n_with(weights)
            .kronecker(&DMatrix::identity(l, l))
    }

    /// Incidence matrix `E` of size `n × |edges|`.
    ///
    /// Orientation is fixed: the lower-index endpoint gets `+1`. Then
    /// `E Eᵀ` is the unweighted Laplacian and `E C Eᵀ` the weighted one,
    /// with `C` the diagonal matrix of weights.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n, self.edges.len());
        for (idx, &(i, q)) in self.edges.iter().enumerate() {
            e[(i, idx)] = 1.0;
            e[(q, idx)] = -1.0;
        }
        e
    }

    /// Apply `(L ⊗ I_l) x` without materializing the lifted matrix.
    ///
    /// `x` is the stacked per-agent vector of length `n·l`; the result is
    /// accumulated into `out` (which is zeroed first).
    pub fn apply_laplacian(
        &self,
        weights: &[f64],
        x: &DVector<f64>,
        l: usize,
        out: &mut DVector<f64>,
    ) {
        debug_assert_eq!(weights.len(), self.edges.len());
        debug_assert_eq!(x.len(), self.n * l);
        debug_assert_eq!(out.len(), self.n * l);
        out.fill(0.0);
        for (e, &(i, q)) in self.edges.iter().enumerate() {
            let w = weights[e];
            for k in 0..l {
                let d = w * (x[i * l + k] - x[q * l + k]);
                out[i * l + k] += d;
                out[q * l + k] -= d;
            }
        }
    }

    /// `(L ⊗ I_l) x` as a fresh vector.
    pub fn laplacian_apply(&self, weights: &[f64], x: &DVector<f64>, l: usize) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.apply_laplacian(weights, x, l, &mut out);
        out
    }
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    // Union-find over the edge list.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(i, q) in edges {
        let (ri, rq) = (find(&mut parent, i), find(&mut parent, q));
        if ri != rq {
            parent[ri] = rq;
        }
    }
    let root = find(&mut parent, 0);
    (1..n).all(|i| find(&mut parent, i) == root)
}

/// Ascending eigenvalues of a symmetric matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Full eigenvalue list in ascending order.
    pub eigenvalues: Vec<f64>,
}

impl SpectralSummary {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }

    /// Second-smallest eigenvalue (algebraic connectivity of an unlifted
    /// Laplacian).
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues[1]
    }

    /// λ₂ of a lifted Laplacian `L ⊗ I_l`: the lift carries `l` zero
    /// eigenvalues for a connected graph, so λ₂ in the ascending-order sense
    /// sits at index `l`.
    pub fn lambda2_lifted(&self, l: usize) -> f64 {
        self.eigenvalues[l]
    }
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns ascending eigenvalues and the matching orthonormal eigenvectors
/// as matrix columns. Sized for the dense, few-hundred-row matrices this
/// crate works with.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::validation(format!(
            "eigensolver needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::validation("eigensolver needs a non-empty matrix"));
    }
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            max_asymmetry: max_asym,
        });
    }

    let mut a = m.clone();
    // Work on the symmetrized matrix so tiny input asymmetry cannot bias
    // the rotations.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = DMatrix::identity(n, n);
    // The 1e-12 off-norm target is relative to the matrix scale; an absolute
    // target is unreachable in f64 once entries grow past ~1e4.
    let scale = a.norm().max(1.0);
    let tol = JACOBI_OFF_TOL * scale;

    let mut off = off_norm(&a);
    let mut sweeps = 0;
    while off > tol {
        if sweeps >= JACOBI_SWEEP_CAP {
            return Err(Error::EigenNonConvergence {
                sweeps,
                off_norm: off,
            });
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::EPSILON * scale {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                let app = a[(p, p)];
                let aqq = a[(q, q)];
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(p, k)] = a[(k, p)];
                        a[(k, q)] = s * akp + c * akq;
                        a[(q, k)] = a[(k, q)];
                    }
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        off = off_norm(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(i, i)]
            .partial_cmp(&a[(j, j)])
            .expect("finite eigenvalues")
    });
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        vectors.set_column(col, &v.column(src));
    }
    Ok((values, vectors))
}

fn off_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    (2.0 * s).sqrt()
}

/// Ascending eigenvalues of a symmetric matrix.
///
/// Rejects matrices whose asymmetry exceeds [`SYMMETRY_TOL`]; reports the
/// sweep count on non-convergence.
pub fn eig_symmetric(m: &DMatrix<f64>) -> Result<SpectralSummary> {
    let (eigenvalues, _) = jacobi_eigen(m)?;
    Ok(SpectralSummary { eigenvalues })
}
