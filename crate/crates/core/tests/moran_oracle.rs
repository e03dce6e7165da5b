//! Moran basis checks against an independent dense eigensolver.
//!
//! The oracle is a cyclic Jacobi rotation eigensolver written here, entirely
//! separate from the library's dense and Lanczos paths. Degenerate
//! eigenvalues make individual eigenvectors non-unique, so vectors are
//! compared cluster-wise: sign-aligned directly for isolated eigenvalues,
//! via orthogonal projectors for clusters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zinb_core::graph::AdjacencyGraph;
use zinb_core::moran::{compute_basis, dense_moran_matrix, moran_operator_apply};
use zinb_core::simulate::lattice_graph;

/// Cyclic Jacobi eigensolver for symmetric matrices: eigenvalues descending
/// with matching eigenvector columns.
fn jacobi_eigen(mut a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-13 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(y, y)].partial_cmp(&a[(x, x)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&j| a[(j, j)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (slot, &j) in order.iter().enumerate() {
        vectors.set_column(slot, &v.column(j));
    }
    (values, vectors)
}

/// Indices [start, end) of eigenvalue clusters using a relative gap tolerance.
fn clusters(values: &[f64], tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for j in 1..=values.len() {
        let split = j == values.len() || (values[j - 1] - values[j]).abs() > tol;
        if split {
            out.push((start, j));
            start = j;
        }
    }
    out
}

/// Compares the computed basis against oracle eigenpairs to `tol`.
#[allow(clippy::needless_range_loop)]
fn assert_basis_matches_oracle(
    graph: &AdjacencyGraph,
    q: usize,
    tol: f64,
    context: &str,
) {
    let (basis, _warnings) = compute_basis(graph, q).unwrap();
    basis.validate().unwrap();
    let (oracle_vals, oracle_vecs) = jacobi_eigen(dense_moran_matrix(graph));
    let scale = oracle_vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let positive: Vec<usize> = (0..oracle_vals.len())
        .filter(|&j| oracle_vals[j] > 1e-10 * scale)
        .collect();
    let kept = basis.rank();
    assert_eq!(
        kept,
        q.min(positive.len()),
        "{context}: basis rank differs from the oracle's positive count"
    );

    for j in 0..kept {
        let ours = basis.eigenvalues()[j];
        let theirs = oracle_vals[positive[j]];
        assert!(
            (ours - theirs).abs() <= tol * theirs.abs().max(1.0),
            "{context}: eigenvalue {j}: {ours} vs oracle {theirs}"
        );
    }

    // Vector comparison per eigenvalue cluster; a cluster straddling the
    // truncation boundary is skipped (its subspace is not fully retained).
    let cluster_tol = 1e-6 * scale;
    let kept_vals: Vec<f64> = (0..kept).map(|j| basis.eigenvalues()[j]).collect();
    for (start, end) in clusters(&kept_vals, cluster_tol) {
        let straddles = end == kept
            && positive.len() > kept
            && (oracle_vals[positive[kept - 1]] - oracle_vals[positive[kept]]).abs() <= cluster_tol;
        if straddles {
            continue;
        }
        if end - start == 1 {
            let ours = basis.vectors().column(start);
            let theirs = oracle_vecs.column(positive[start]);
            let sign = if ours.dot(&theirs) >= 0.0 { 1.0 } else { -1.0 };
            let diff = (ours - theirs * sign).norm();
            assert!(
                diff <= tol,
                "{context}: eigenvector {start} differs by {diff} after sign alignment"
            );
        } else {
            let mut p_ours = DMatrix::<f64>::zeros(graph.n_counties(), graph.n_counties());
            let mut p_oracle = p_ours.clone();
            for j in start..end {
                let u = basis.vectors().column(j);
                let w = oracle_vecs.column(positive[j]);
                p_ours += u * u.transpose();
                p_oracle += w * w.transpose();
            }
            let diff = (p_ours - p_oracle).norm();
            assert!(
                diff <= tol * (end - start) as f64,
                "{context}: cluster {start}..{end} projector differs by {diff}"
            );
        }
    }
}

fn random_graph(n: usize, expected_degree: f64, seed: u64) -> AdjacencyGraph {
    let ids: Vec<String> = (0..n).map(|i| format!("c{i:04}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = expected_degree / n as f64;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((ids[i].clone(), ids[j].clone()));
            }
        }
    }
    // A spanning cycle keeps every county attached.
    for i in 0..n {
        edges.push((ids[i].clone(), ids[(i + 1) % n].clone()));
    }
    AdjacencyGraph::with_universe(ids, &edges).unwrap()
}

#[test]
fn lattice_10x10_matches_dense_oracle() {
    let g = lattice_graph(10, 10).unwrap();
    assert_basis_matches_oracle(&g, 8, 1e-8, "10x10 lattice");
}

#[test]
fn random_graphs_match_dense_oracle() {
    for (k, &n) in [40usize, 80, 120, 200, 300].iter().enumerate() {
        let g = random_graph(n, 5.0, 1000 + k as u64);
        assert_basis_matches_oracle(&g, 10, 1e-8, &format!("random graph n={n}"));
    }
}

#[test]
fn disconnected_components_match_dense_oracle() {
    // Two 4x4 lattices with no edges between them.
    let a = lattice_graph(4, 4).unwrap();
    let mut ids = Vec::new();
    let mut edges = Vec::new();
    for side in 0..2 {
        for id in a.county_ids() {
            ids.push(format!("s{side}_{id}"));
        }
        for &(i, j) in a.edges() {
            edges.push((
                format!("s{side}_{}", a.county_ids()[i]),
                format!("s{side}_{}", a.county_ids()[j]),
            ));
        }
    }
    let g = AdjacencyGraph::with_universe(ids, &edges).unwrap();
    assert_basis_matches_oracle(&g, 6, 1e-8, "two disjoint lattices");
}

#[test]
#[allow(clippy::needless_range_loop)]
fn iterative_path_matches_dense_solver() {
    // 600 counties crosses the iterative-eigensolver threshold; the dense
    // reference here uses nalgebra's tridiagonalization, a different
    // algorithm from the library's Lanczos.
    let g = lattice_graph(25, 24).unwrap();
    let (basis, warnings) = compute_basis(&g, 12).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(basis.rank(), 12);
    basis.validate().unwrap();

    let dense = dense_moran_matrix(&g);
    let eig = dense.symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for j in 0..12 {
        assert!(
            (basis.eigenvalues()[j] - vals[j]).abs() <= 1e-8 * vals[j].abs().max(1.0),
            "eigenvalue {j}: {} vs {}",
            basis.eigenvalues()[j],
            vals[j]
        );
    }
    // Residual check is algorithm-independent.
    for j in 0..12 {
        let v = basis.vectors().column(j).clone_owned();
        let mv = moran_operator_apply(&g, &v).unwrap();
        let lambda = basis.eigenvalues()[j];
        assert!((mv - &v * lambda).norm() <= 1e-9 * lambda.max(1.0));
    }
}

#[test]
fn oracle_agrees_with_operator_on_random_vectors() {
    // Cross-check the two dense constructions against the matrix-free apply.
    let g = random_graph(60, 4.0, 9);
    let dense = dense_moran_matrix(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let v = DVector::from_fn(60, |_, _| rng.random::<f64>() - 0.5);
        let fast = moran_operator_apply(&g, &v).unwrap();
        let slow = &dense * &v;
        assert!((fast - slow).norm() < 1e-10);
    }
}
