//! The bundled synthetic graph used by the end-to-end experiment: a
//! deterministic, connected graph with 30 nodes and 67 edges, plus the
//! matching Gaussian endpoints (Matérn-type initial, diffusion final).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gp::{gp_covariance, GPKernelSpec, KernelFamily};
use crate::gtsb::GaussianMeasure;
use crate::spectral::{eigendecompose, SpectralOperator};
use crate::topology::{build_complex, laplacian, LaplacianSpec, SimplicialComplex2};

pub const SYNTHETIC_NODES: usize = 30;
pub const SYNTHETIC_EDGES: usize = 67;

/// The bundled 30-node, 67-edge connected graph: a Hamiltonian cycle for
/// connectivity plus 37 pseudo-random chords from a fixed stream.
pub fn synthetic_graph_30() -> SimplicialComplex2 {
    let n = SYNTHETIC_NODES;
    let mut edges: Vec<[usize; 2]> = (0..n).map(|i| [i, (i + 1) % n]).collect();
    for e in &mut edges {
        e.sort_unstable();
    }
    let mut have: std::collections::BTreeSet<[usize; 2]> = edges.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(20_26);
    while have.len() < SYNTHETIC_EDGES {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let e = if a < b { [a, b] } else { [b, a] };
        if have.insert(e) {
            edges.push(e);
        }
    }
    build_complex(&edges, &[], None).expect("bundled graph is valid by construction")
}

/// The graph Laplacian of the bundled graph under the given spec, already
/// eigendecomposed.
pub fn synthetic_operator(spec: &LaplacianSpec) -> Arc<SpectralOperator> {
    let sc = synthetic_graph_30();
    let l = laplacian(&sc, spec).expect("graph laplacian of the bundled graph");
    Arc::new(eigendecompose(&l).expect("symmetric PSD by construction"))
}

/// The experiment endpoints: `Sigma0 = (I + L)^{-1.5}` (Matérn-type GP)
/// and `Sigma1 = exp(-20 L)` (diffusion GP), both centered.
pub fn experiment_endpoints(op: &SpectralOperator) -> (GaussianMeasure, GaussianMeasure) {
    let sigma0 = gp_covariance(
        &GPKernelSpec::new(KernelFamily::Power { shift: 1.0, exponent: 1.5 }),
        op,
        None,
    )
    .unwrap();
    let sigma1 = gp_covariance(
        &GPKernelSpec::new(KernelFamily::DiffusionRaw { exponent: 20.0 }),
        op,
        None,
    )
    .unwrap();
    let n = op.dim();
    (
        GaussianMeasure::new_unchecked(nalgebra::DVector::zeros(n), sigma0),
        GaussianMeasure::new_unchecked(nalgebra::DVector::zeros(n), sigma1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::LaplacianKind;

    #[test]
    fn bundled_graph_shape() {
        let sc = synthetic_graph_30();
        assert_eq!(sc.n0(), 30);
        assert_eq!(sc.n1(), 67);
        assert_eq!(sc.n2(), 0);
        assert_eq!(sc.connected_components(), 1);
        // deterministic across calls
        let again = synthetic_graph_30();
        assert_eq!(sc.edges, again.edges);
    }

    #[test]
    fn operator_spectrum() {
        let op = synthetic_operator(&LaplacianSpec::new(LaplacianKind::Graph));
        assert!(op.eigenvalues()[0].abs() < 1e-10);
        assert!(op.eigenvalues()[1] > 1e-8); // connected: single zero mode
    }
}
