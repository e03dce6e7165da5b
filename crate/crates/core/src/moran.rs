//! Moran operator and its truncated eigenbasis.
//!
//! The operator is M = P A P with A the binary adjacency matrix and
//! P = I − 11ᵀ/n the projection removing the constant direction. Spatial
//! random effects are spanned by the leading positive-eigenvalue
//! eigenvectors of M, which carry positive spatial autocorrelation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::numeric::chunked_sum;

/// Graphs at least this large use the iterative eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 500;

/// Convergence tolerance for the iterative eigensolver residuals.
const EIGEN_TOL: f64 = 1e-10;

/// Eigenvalues within this relative margin of zero do not count as positive.
const POSITIVE_TOL: f64 = 1e-10;

/// Truncated Moran eigenbasis: orthonormal, mean-zero columns with strictly
/// positive eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct MoranBasis {
    vectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl MoranBasis {
    pub fn new(vectors: DMatrix<f64>, eigenvalues: DVector<f64>) -> Result<Self> {
        if vectors.ncols() != eigenvalues.len() {
            return Err(Error::Dimension(
                "basis column count does not match eigenvalue count".into(),
            ));
        }
        let b = MoranBasis { vectors, eigenvalues };
        b.validate()?;
        Ok(b)
    }

    /// Column orthonormality, mean-zero columns, and sorted positive
    /// eigenvalues, all within 1e-8.
    pub fn validate(&self) -> Result<()> {
        let q = self.rank();
        let n = self.n_counties();
        for j in 0..q {
            let lambda = self.eigenvalues[j];
            if lambda.is_nan() || lambda <= 0.0 {
                return Err(Error::Input(format!("eigenvalue {j} is not positive: {lambda}")));
            }
            if j > 0 && self.eigenvalues[j] > self.eigenvalues[j - 1] {
                return Err(Error::Input("eigenvalues are not sorted descending".into()));
            }
            let col = self.vectors.column(j);
            let mean = col.sum() / n as f64;
            if mean.abs() > 1e-8 {
                return Err(Error::Input(format!("basis column {j} has mean {mean:.3e}")));
            }
            for k in 0..=j {
                let dot = col.dot(&self.vectors.column(k));
                let expect = if k == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-8 {
                    return Err(Error::Input(format!(
                        "basis columns {k},{j} have inner product {dot:.3e}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn n_counties(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Basis with no columns (used when the operator has no positive spectrum).
    pub fn empty(n_counties: usize) -> Self {
        MoranBasis {
            vectors: DMatrix::zeros(n_counties, 0),
            eigenvalues: DVector::zeros(0),
        }
    }
}

/// Applies M = P A P to a vector without materializing any dense matrix:
/// center, multiply by the sparse adjacency, center again.
pub fn moran_operator_apply(graph: &AdjacencyGraph, v: &DVector<f64>) -> Result<DVector<f64>> {
    let n = graph.n_counties();
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "vector length {} does not match {} counties",
            v.len(),
            n
        )));
    }
    let mean_in = chunked_sum(v.as_slice()) / n as f64;
    let mut av = DVector::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for &j in graph.neighbors(i) {
            acc += v[j] - mean_in;
        }
        av[i] = acc;
    }
    let mean_out = chunked_sum(av.as_slice()) / n as f64;
    for i in 0..n {
        av[i] -= mean_out;
    }
    Ok(av)
}

/// Dense M = A − d_i/n − d_j/n + 2E/n² (the centered adjacency).
pub fn dense_moran_matrix(graph: &AdjacencyGraph) -> DMatrix<f64> {
    let n = graph.n_counties();
    let nf = n as f64;
    let degrees: Vec<f64> = (0..n).map(|i| graph.degree(i) as f64).collect();
    let total = 2.0 * graph.n_edges() as f64 / (nf * nf);
    let mut m = DMatrix::from_fn(n, n, |i, j| total - degrees[i] / nf - degrees[j] / nf);
    for &(i, j) in graph.edges() {
        m[(i, j)] += 1.0;
        m[(j, i)] += 1.0;
    }
    m
}

/// Leading positive eigenpairs of the Moran operator.
///
/// Returns at most `q` pairs; when the operator has fewer strictly positive
/// eigenvalues the basis is truncated and a warning recorded. Columns follow
/// a deterministic sign convention (first significant entry positive).
pub fn compute_basis(graph: &AdjacencyGraph, q: usize) -> Result<(MoranBasis, Vec<String>)> {
    if q == 0 {
        return Err(Error::Input("basis rank q must be at least 1".into()));
    }
    let n = graph.n_counties();
    let q_eff = q.min(n.saturating_sub(1)).max(1);
    let (values, vectors) = if n < DENSE_EIGEN_LIMIT {
        dense_eigenpairs(graph, q_eff)
    } else {
        lanczos_eigenpairs(graph, q_eff)?
    };

    let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let kept: Vec<usize> = (0..values.len())
        .filter(|&j| values[j] > POSITIVE_TOL * scale)
        .take(q_eff)
        .collect();

    let mut warnings = Vec::new();
    if q_eff < q {
        warnings.push(format!(
            "basis rank reduced from {q} to {q_eff}: it must stay below the county count {n}"
        ));
    }
    if kept.len() < q_eff {
        warnings.push(format!(
            "requested rank {q_eff} but the Moran operator has only {} strictly positive eigenvalues; basis truncated",
            kept.len()
        ));
    }
    if kept.is_empty() {
        return Ok((MoranBasis::empty(n), warnings));
    }

    let mut basis_vectors = DMatrix::zeros(n, kept.len());
    let mut basis_values = DVector::zeros(kept.len());
    for (slot, &j) in kept.iter().enumerate() {
        basis_values[slot] = values[j];
        let mut col = vectors.column(j).clone_owned();
        fix_sign(&mut col);
        basis_vectors.set_column(slot, &col);
    }
    Ok((
        MoranBasis {
            vectors: basis_vectors,
            eigenvalues: basis_values,
        },
        warnings,
    ))
}

/// Makes the first entry with |v| > 1e-8·‖v‖∞ positive.
fn fix_sign(col: &mut DVector<f64>) {
    let maxabs = col.amax();
    let tol = 1e-8 * maxabs;
    for &v in col.iter() {
        if v.abs() > tol {
            if v < 0.0 {
                *col = -col.clone();
            }
            break;
        }
    }
}

/// All eigenpairs via the dense symmetric solver, sorted descending.
fn dense_eigenpairs(graph: &AdjacencyGraph, _q: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = dense_moran_matrix(graph);
    let eig = m.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (slot, &j) in order.iter().enumerate() {
        vectors.set_column(slot, &eig.eigenvectors.column(j));
    }
    (values, vectors)
}

/// Leading eigenpairs via Lanczos with full reorthogonalization.
///
/// The Krylov space starts from a fixed-seed centered vector, so results are
/// reproducible. The factorization is widened until the wanted Ritz pairs
/// have residual ‖Mv − λv‖ ≤ 1e-10·max(1, |λ|) or it spans the whole space.
fn lanczos_eigenpairs(graph: &AdjacencyGraph, q: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = graph.n_counties();
    let mut m_steps = (2 * q + 30).clamp(40, n);
    loop {
        let (alphas, betas, vs) = lanczos_factorization(graph, m_steps)?;
        let m = alphas.len();
        let mut tri = DMatrix::zeros(m, m);
        for i in 0..m {
            tri[(i, i)] = alphas[i];
            if i + 1 < m {
                tri[(i, i + 1)] = betas[i];
                tri[(i + 1, i)] = betas[i];
            }
        }
        let eig = tri.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

        let want = q.min(m);
        let mut values = Vec::with_capacity(want);
        let mut vectors = DMatrix::zeros(n, want);
        let mut converged = true;
        for (slot, &j) in order.iter().enumerate().take(want) {
            let lambda = eig.eigenvalues[j];
            let mut ritz = DVector::zeros(n);
            for (k, vk) in vs.iter().enumerate() {
                ritz += vk * eig.eigenvectors[(k, j)];
            }
            let norm = ritz.norm();
            if norm > 0.0 {
                ritz /= norm;
            }
            let resid = (moran_operator_apply(graph, &ritz)? - &ritz * lambda).norm();
            if resid > EIGEN_TOL * lambda.abs().max(1.0) {
                converged = false;
            }
            values.push(lambda);
            vectors.set_column(slot, &ritz);
        }
        if (converged && m >= q) || m_steps >= n {
            return Ok((values, vectors));
        }
        m_steps = (m_steps * 2).min(n);
    }
}

/// Tridiagonal coefficients (alphas, betas) and the orthonormal Krylov basis.
type LanczosFactors = (Vec<f64>, Vec<f64>, Vec<DVector<f64>>);

/// Runs `steps` Lanczos iterations with full reorthogonalization, restarting
/// with fresh random directions on breakdown.
fn lanczos_factorization(graph: &AdjacencyGraph, steps: usize) -> Result<LanczosFactors> {
    let n = graph.n_counties();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4d6f_7261_6e42);
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas = Vec::new();

    let v0 = fresh_direction(n, &mut rng, &vs)
        .ok_or_else(|| Error::Numerical("cannot start Lanczos: no centered direction".into()))?;
    vs.push(v0);

    for j in 0..steps {
        let mut w = moran_operator_apply(graph, &vs[j])?;
        let alpha = vs[j].dot(&w);
        alphas.push(alpha);
        w -= &vs[j] * alpha;
        if j > 0 {
            w -= &vs[j - 1] * betas[j - 1];
        }
        // Full reorthogonalization, two passes.
        for _ in 0..2 {
            for vk in &vs {
                let proj = vk.dot(&w);
                w -= vk * proj;
            }
        }
        if j + 1 == steps {
            break;
        }
        let beta = w.norm();
        if beta > 1e-12 {
            betas.push(beta);
            vs.push(w / beta);
        } else {
            // Invariant subspace hit; continue in a fresh random direction.
            match fresh_direction(n, &mut rng, &vs) {
                Some(v) => {
                    betas.push(0.0);
                    vs.push(v);
                }
                None => break,
            }
        }
    }
    Ok((alphas, betas, vs))
}

/// Random mean-zero unit vector orthogonal to everything in `vs`.
fn fresh_direction(
    n: usize,
    rng: &mut ChaCha8Rng,
    vs: &[DVector<f64>],
) -> Option<DVector<f64>> {
    for _ in 0..32 {
        let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let mean = v.sum() / n as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
        for _ in 0..2 {
            for vk in vs {
                let proj = vk.dot(&v);
                v -= vk * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            return Some(v / norm);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pairs(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn two_disjoint_edges() -> AdjacencyGraph {
        AdjacencyGraph::with_universe(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            &pairs(&[("a", "b"), ("c", "d")]),
        )
        .unwrap()
    }

    #[test]
    fn apply_annihilates_constants() {
        let g = two_disjoint_edges();
        let v = DVector::from_element(4, 3.7);
        let out = moran_operator_apply(&g, &v).unwrap();
        assert!(out.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn apply_preserves_block_eigenvector() {
        // (1,1,−1,−1) is mean-zero and an eigenvector of A with eigenvalue 1.
        let g = two_disjoint_edges();
        let v = DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]);
        let out = moran_operator_apply(&g, &v).unwrap();
        for i in 0..4 {
            assert_relative_eq!(out[i], v[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn apply_matches_dense_product() {
        let ids: Vec<String> = (0..30).map(|i| format!("n{i:02}")).collect();
        let mut edges = Vec::new();
        for i in 0..29usize {
            edges.push((ids[i].clone(), ids[i + 1].clone()));
            if i % 3 == 0 && i + 5 < 30 {
                edges.push((ids[i].clone(), ids[i + 5].clone()));
            }
        }
        let g = AdjacencyGraph::with_universe(ids, &edges).unwrap();
        let dense = dense_moran_matrix(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let v = DVector::from_fn(30, |_, _| StandardNormal.sample(&mut rng));
            let fast = moran_operator_apply(&g, &v).unwrap();
            let slow = &dense * &v;
            assert!((fast - slow).norm() < 1e-10);
        }
    }

    #[test]
    fn apply_is_self_adjoint() {
        let g = two_disjoint_edges();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let u = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let v = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let mu = moran_operator_apply(&g, &u).unwrap();
            let mv = moran_operator_apply(&g, &v).unwrap();
            assert_relative_eq!(mu.dot(&v), u.dot(&mv), epsilon = 1e-10);
        }
    }

    #[test]
    fn apply_rejects_wrong_length() {
        let g = two_disjoint_edges();
        let v = DVector::zeros(3);
        assert!(moran_operator_apply(&g, &v).is_err());
    }

    #[test]
    fn basis_of_disjoint_edges() {
        let g = two_disjoint_edges();
        let (basis, warnings) = compute_basis(&g, 1).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(basis.rank(), 1);
        assert_relative_eq!(basis.eigenvalues()[0], 1.0, epsilon = 1e-10);
        let col = basis.vectors().column(0);
        // Sign convention makes the first entry positive, so the vector is
        // exactly +(1,1,−1,−1)/2.
        for (i, expect) in [0.5, 0.5, -0.5, -0.5].iter().enumerate() {
            assert_relative_eq!(col[i], *expect, epsilon = 1e-10);
        }
        basis.validate().unwrap();
    }

    #[test]
    fn path_graph_has_no_positive_spectrum() {
        let g = AdjacencyGraph::build(&pairs(&[("a", "b"), ("b", "c")])).unwrap();
        let (basis, warnings) = compute_basis(&g, 2).unwrap();
        assert_eq!(basis.rank(), 0);
        assert!(warnings.iter().any(|w| w.contains("positive eigenvalues")));
    }

    #[test]
    fn compute_basis_rejects_zero_rank() {
        let g = two_disjoint_edges();
        assert!(compute_basis(&g, 0).is_err());
    }

    #[test]
    fn basis_satisfies_eigen_equation_on_lattice() {
        let g = crate::simulate::lattice_graph(6, 6).unwrap();
        let (basis, _) = compute_basis(&g, 8).unwrap();
        assert_eq!(basis.rank(), 8);
        basis.validate().unwrap();
        for j in 0..basis.rank() {
            let v = basis.vectors().column(j).clone_owned();
            let mv = moran_operator_apply(&g, &v).unwrap();
            let lambda = basis.eigenvalues()[j];
            assert!(
                (mv - &v * lambda).norm() <= 1e-8 * lambda.abs().max(1.0),
                "eigen-equation residual too large for column {j}"
            );
        }
    }

    #[test]
    fn basis_columns_have_positive_autocorrelation() {
        let g = crate::simulate::lattice_graph(5, 7).unwrap();
        let (basis, _) = compute_basis(&g, 6).unwrap();
        for j in 0..basis.rank() {
            let col = basis.vectors().column(j);
            let mut acc = 0.0;
            for &(a, b) in g.edges() {
                acc += col[a] * col[b];
            }
            assert!(acc > 0.0, "column {j} has edge sum {acc}");
        }
    }

    #[test]
    fn basis_is_deterministic() {
        let g = crate::simulate::lattice_graph(8, 8).unwrap();
        let (b1, _) = compute_basis(&g, 10).unwrap();
        let (b2, _) = compute_basis(&g, 10).unwrap();
        assert_eq!(b1.vectors(), b2.vectors());
        assert_eq!(b1.eigenvalues(), b2.eigenvalues());
    }
}
