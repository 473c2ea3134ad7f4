use super::{char_poly, poly_roots, Complex, Matrix};
use crate::error::Result;

/// Strongly connected components of a directed adjacency structure
/// (iterative Tarjan). Components come back with their node lists sorted;
/// the component order is reverse topological with respect to the
/// condensation.
pub(crate) fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut comps: Vec<Vec<usize>> = Vec::new();

    for start in 0..n {
        if index[start] != usize::MAX {
            continue;
        }
        // Explicit call stack of (node, next child position).
        let mut call: Vec<(usize, usize)> = vec![(start, 0)];
        while let Some((v, mut ci)) = call.pop() {
            if ci == 0 {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            let mut descended = false;
            while ci < adj[v].len() {
                let w = adj[v][ci];
                ci += 1;
                if index[w] == usize::MAX {
                    call.push((v, ci));
                    call.push((w, 0));
                    descended = true;
                    break;
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            }
            if descended {
                continue;
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
            if let Some(&(parent, _)) = call.last() {
                if low[v] < low[parent] {
                    low[parent] = low[v];
                }
            }
        }
    }
    comps
}

/// All eigenvalues of a real square matrix.
///
/// The sparsity pattern is first permuted to block-triangular form via its
/// strongly connected components (Frobenius normal form), so the spectrum
/// is the union of the spectra of the diagonal blocks. Each block goes
/// through the characteristic-polynomial + Durand–Kerner path, which keeps
/// the polynomial degrees at the size of the largest irreducible block
/// rather than the full matrix.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex>> {
    assert!(m.is_square());
    let n = m.rows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| m[(i, j)] != 0.0).collect())
        .collect();
    let mut out = Vec::with_capacity(n);
    for comp in strongly_connected_components(&adj) {
        let block = m.principal_submatrix(&comp);
        let (p, _) = char_poly(&block);
        out.extend(poly_roots(&p, 1e-10, 500)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scc_of_cycle_is_single_component() {
        let adj = vec![vec![1], vec![2], vec![0]];
        let comps = strongly_connected_components(&adj);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0], vec![0, 1, 2]);
    }

    #[test]
    fn scc_of_chain_is_singletons() {
        let adj = vec![vec![1], vec![2], vec![]];
        let comps = strongly_connected_components(&adj);
        assert_eq!(comps.len(), 3);
    }

    #[test]
    fn eigenvalues_of_block_triangular() {
        // [[−1, 0, 0], [5, −2, 1], [3, −1, −2]]: eigenvalue −1 from the top
        // block, −2 ± i from the coupled bottom block.
        let m = Matrix::from_rows(&[
            vec![-1.0, 0.0, 0.0],
            vec![5.0, -2.0, 1.0],
            vec![3.0, -1.0, -2.0],
        ])
        .unwrap();
        let mut evs = eigenvalues(&m).unwrap();
        evs.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert_eq!(evs.len(), 3);
        assert!(evs.iter().any(|z| (z.re + 1.0).abs() < 1e-9 && z.im.abs() < 1e-9));
        assert!(evs.iter().any(|z| (z.re + 2.0).abs() < 1e-9 && (z.im - 1.0).abs() < 1e-9));
        assert!(evs.iter().any(|z| (z.re + 2.0).abs() < 1e-9 && (z.im + 1.0).abs() < 1e-9));
    }
}
