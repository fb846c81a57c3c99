//! Lead graph: static adjacency, scaled Laplacian, Chebyshev basis, and the
//! masked, attention-weighted Chebyshev graph convolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

pub const POWER_ITERATIONS: usize = 10_000;
pub const POWER_TOL: f64 = 1e-9;

/// Static adjacency used for the Laplacian and the mask support.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "matrix")]
pub enum AdjacencyMode {
    #[default]
    Identity,
    FullyConnected,
    Ring,
    Custom(Vec<Vec<f64>>),
}

pub fn build_static_adjacency(leads: usize, mode: &AdjacencyMode) -> Result<Tensor> {
    if leads == 0 {
        return Err(Error::config("adjacency needs at least one lead"));
    }
    let mut a = Tensor::zeros(&[leads, leads]);
    match mode {
        AdjacencyMode::Identity => return Ok(Tensor::eye(leads)),
        AdjacencyMode::FullyConnected => {
            for i in 0..leads {
                for j in 0..leads {
                    if i != j {
                        a.set(&[i, j], 1.0);
                    }
                }
            }
        }
        AdjacencyMode::Ring => {
            for i in 0..leads {
                for j in [(i + 1) % leads, (i + leads - 1) % leads] {
                    if j != i {
                        a.set(&[i, j], 1.0);
                    }
                }
            }
        }
        AdjacencyMode::Custom(rows) => {
            if rows.len() != leads || rows.iter().any(|r| r.len() != leads) {
                return Err(Error::config(format!("custom adjacency must be {leads}x{leads}")));
            }
            a = Tensor::from_rows(rows)?;
        }
    }
    validate_adjacency(&a)?;
    Ok(a)
}

fn validate_adjacency(a: &Tensor) -> Result<()> {
    let n = square_extent(a)?;
    for i in 0..n {
        for j in 0..n {
            let v = a.get(&[i, j]);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("adjacency entry ({i},{j}) = {v} is not a finite nonnegative value")));
            }
            if v != a.get(&[j, i]) {
                return Err(Error::config(format!("adjacency is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

fn square_extent(a: &Tensor) -> Result<usize> {
    match a.shape() {
        [n, m] if n == m => Ok(*n),
        s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected a square matrix".into(),
        }),
    }
}

/// `I - D^{-1/2} A D^{-1/2}`; rows of isolated nodes become identity rows.
pub fn normalized_laplacian(a: &Tensor) -> Result<Tensor> {
    validate_adjacency(a)?;
    let n = square_extent(a)?;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|j| a.get(&[i, j])).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = Tensor::eye(n);
    for i in 0..n {
        for j in 0..n {
            let v = l.get(&[i, j]) - inv_sqrt[i] * a.get(&[i, j]) * inv_sqrt[j];
            l.set(&[i, j], v);
        }
    }
    Ok(l)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a fixed non-uniform start vector. Stops once the Rayleigh
/// residual `‖Mv - λv‖` falls to `tol`.
pub fn power_iteration_lambda_max(m: &Tensor, iterations: usize, tol: f64) -> Result<f64> {
    let n = square_extent(m)?;
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0) / n as f64).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m.get(&[i, j]) * v[j]).sum()).collect();
        lambda = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let residual = norm(&w.iter().zip(&v).map(|(a, b)| a - lambda * b).collect::<Vec<_>>());
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if residual <= tol {
            break;
        }
    }
    Ok(lambda)
}

/// `2 L / λ_max - I`. A vanishing `λ_max` (only self-loops, so `L = 0`) falls
/// back to `λ_max = 2`, giving `-I`.
pub fn scaled_laplacian(a: &Tensor) -> Result<Tensor> {
    let l = normalized_laplacian(a)?;
    let mut lambda = power_iteration_lambda_max(&l, POWER_ITERATIONS, POWER_TOL)?;
    if lambda < 1e-12 {
        lambda = 2.0;
    }
    let n = l.shape()[0];
    let mut out = l.scale(2.0 / lambda);
    for i in 0..n {
        out.set(&[i, i], out.get(&[i, i]) - 1.0);
    }
    Ok(out)
}

/// `T_0 = I`, `T_1 = L̃`, `T_k = 2 L̃ T_{k-1} - T_{k-2}`.
pub fn cheb_basis(l_tilde: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    if k == 0 {
        return Err(Error::config("Chebyshev order must be at least 1"));
    }
    let n = square_extent(l_tilde)?;
    let mut basis = vec![Tensor::eye(n)];
    if k > 1 {
        basis.push(l_tilde.clone());
    }
    while basis.len() < k {
        let prev = &basis[basis.len() - 1];
        let prev2 = &basis[basis.len() - 2];
        let lt = l_tilde.matmul2(prev)?;
        let data = lt.data().iter().zip(prev2.data()).map(|(a, b)| 2.0 * a - b).collect();
        basis.push(Tensor::new(vec![n, n], data)?);
    }
    Ok(basis)
}

/// Adjacency, scaled Laplacian and its Chebyshev basis.
#[derive(Clone, Debug, PartialEq)]
pub struct LeadGraph {
    pub adjacency: Tensor,
    pub scaled_laplacian: Tensor,
    pub basis: Vec<Tensor>,
}

impl LeadGraph {
    pub fn new(adjacency: Tensor, k_cheb: usize) -> Result<Self> {
        let scaled_laplacian = scaled_laplacian(&adjacency)?;
        let basis = cheb_basis(&scaled_laplacian, k_cheb)?;
        Ok(LeadGraph {
            adjacency,
            scaled_laplacian,
            basis,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.shape()[0]
    }

    /// The basis stacked as `[K, L, L]`.
    pub fn stacked_basis(&self) -> Tensor {
        let n = self.num_nodes();
        let data = self.basis.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::new(vec![self.basis.len(), n, n], data).expect("basis extents are consistent")
    }
}

/// `softmax_rows(S_SA + adj ⊙ M)`. `s_sa` is `[..., K, L, L]`, `adj` `[L, L]`,
/// `masks` `[K, L, L]`.
pub fn effective_dependency(tp: &mut Tape, s_sa: Var, adj: Var, masks: Var) -> Result<Var> {
    let dynamic = tp.mul(adj, masks)?;
    let logits = tp.add(s_sa, dynamic)?;
    if tp.shape(logits) != tp.shape(s_sa) {
        return Err(Error::ShapeMismatch {
            op: "effective_dependency",
            lhs: tp.shape(s_sa).to_vec(),
            rhs: tp.shape(masks).to_vec(),
        });
    }
    Ok(tp.softmax_last(logits))
}

/// Graph convolution on time-major features: `y [L, T, D']` -> `[L, T, Dc]`,
/// `ReLU(Σ_k ((T_k ⊙ P_k) · Y(t)) · θ_k)` for every time step.
pub fn cheb_gcn_time_major(tp: &mut Tape, y: Var, p_eff: Var, basis: Var, theta: Var) -> Result<Var> {
    let (l, t, d) = match *tp.shape(y) {
        [l, t, d] => (l, t, d),
        ref s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "graph convolution input must be [L, T, D]".into(),
            })
        }
    };
    let k = tp.shape(basis)[0];
    let (tk, pk) = (tp.shape(theta).to_vec(), tp.shape(p_eff).to_vec());
    if tk.len() != 3 || tk[0] != k || tk[1] != d || pk != [k, l, l] || tp.shape(basis) != [k, l, l] {
        return Err(Error::ShapeMismatch {
            op: "cheb_gcn",
            lhs: vec![k, l, l, d],
            rhs: [tk, pk].concat(),
        });
    }
    let dc = tk[2];
    let g = tp.mul(basis, p_eff)?; // [K, L, L]
    let flat = tp.reshape(y, &[l, t * d])?;
    let z = tp.matmul(g, flat)?; // [K, L, T*D]
    let z = tp.reshape(z, &[k, l * t, d])?;
    let h = tp.matmul(z, theta)?; // [K, L*T, Dc]
    let h = tp.sum_axis(h, 0)?;
    let h = tp.reshape(h, &[l, t, dc])?;
    Ok(tp.relu(h))
}

/// Channel-major form: `y [L, D', T]` -> `[L, Dc, T]`.
pub fn cheb_gcn(tp: &mut Tape, y: Var, p_eff: Var, basis: Var, theta: Var) -> Result<Var> {
    let ytm = tp.permute(y, &[0, 2, 1])?;
    let h = cheb_gcn_time_major(tp, ytm, p_eff, basis, theta)?;
    tp.permute(h, &[0, 2, 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn to_na(t: &Tensor) -> DMatrix<f64> {
        let n = t.shape()[0];
        DMatrix::from_fn(n, n, |i, j| t.get(&[i, j]))
    }

    fn random_symmetric(n: usize, rng: &mut impl Rng, nonneg: bool) -> Tensor {
        let mut a = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i..n {
                let v = if nonneg {
                    rng.random_range(0.0..1.0)
                } else {
                    rng.random_range(-1.0..1.0)
                };
                a.set(&[i, j], v);
                a.set(&[j, i], v);
            }
        }
        a
    }

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn adjacency_modes() {
        assert_eq!(build_static_adjacency(4, &AdjacencyMode::Identity).unwrap(), Tensor::eye(4));
        let fc = build_static_adjacency(3, &AdjacencyMode::FullyConnected).unwrap();
        assert_eq!(fc.data(), &[0., 1., 1., 1., 0., 1., 1., 1., 0.]);
        let ring = build_static_adjacency(4, &AdjacencyMode::Ring).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if (i + 1) % 4 == j || (j + 1) % 4 == i { 1.0 } else { 0.0 };
                assert_eq!(ring.get(&[i, j]), expect);
            }
        }
    }

    #[test]
    fn custom_adjacency_validated() {
        let asym = AdjacencyMode::Custom(vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert!(build_static_adjacency(2, &asym).is_err());
        let neg = AdjacencyMode::Custom(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]);
        assert!(build_static_adjacency(2, &neg).is_err());
        let ok = AdjacencyMode::Custom(vec![vec![0.0, 2.0], vec![2.0, 0.0]]);
        assert!(build_static_adjacency(2, &ok).is_ok());
        assert!(build_static_adjacency(3, &ok).is_err());
    }

    #[test]
    fn adjacency_mode_json() {
        let m: AdjacencyMode = serde_json::from_str(r#"{"mode":"fully_connected"}"#).unwrap();
        assert_eq!(m, AdjacencyMode::FullyConnected);
        let c: AdjacencyMode = serde_json::from_str(r#"{"mode":"custom","matrix":[[0,1],[1,0]]}"#).unwrap();
        assert!(matches!(c, AdjacencyMode::Custom(_)));
    }

    #[test]
    fn identity_adjacency_laplacian() {
        let l = normalized_laplacian(&Tensor::eye(4)).unwrap();
        assert!(l.data().iter().all(|&v| v == 0.0));
        let lt = scaled_laplacian(&Tensor::eye(4)).unwrap();
        let eig = SymmetricEigen::new(to_na(&lt)).eigenvalues;
        assert!(eig.iter().all(|&e| (-1.0 - 1e-6..=1.0 + 1e-6).contains(&e)));
    }

    #[test]
    fn single_edge_laplacian() {
        let a = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let l = normalized_laplacian(&a).unwrap();
        assert_eq!(l.data(), &[1.0, -1.0, -1.0, 1.0]);
        let lambda = power_iteration_lambda_max(&l, POWER_ITERATIONS, POWER_TOL).unwrap();
        assert!((lambda - 2.0).abs() < 1e-9);
        let lt = scaled_laplacian(&a).unwrap();
        let expect = [0.0, -1.0, -1.0, 0.0];
        for (x, e) in lt.data().iter().zip(expect) {
            assert!((x - e).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_adjacency_is_finite() {
        let l = normalized_laplacian(&Tensor::zeros(&[3, 3])).unwrap();
        assert_eq!(l, Tensor::eye(3));
        let lt = scaled_laplacian(&Tensor::zeros(&[3, 3])).unwrap();
        assert!(lt.is_finite());
        assert!(lt.max_abs_diff(&Tensor::eye(3)) < 1e-9);
    }

    #[test]
    fn laplacian_spectrum_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let modes = [AdjacencyMode::FullyConnected, AdjacencyMode::Ring, AdjacencyMode::Identity];
        for n in 2..=6 {
            for mode in &modes {
                let a = build_static_adjacency(n, mode).unwrap();
                check_spectrum(&a);
            }
            for _ in 0..10 {
                check_spectrum(&random_symmetric(n, &mut rng, true));
            }
        }
    }

    fn check_spectrum(a: &Tensor) {
        let l = normalized_laplacian(a).unwrap();
        let eig = SymmetricEigen::new(to_na(&l)).eigenvalues;
        let true_max = eig.iter().copied().fold(f64::MIN, f64::max);
        let est = power_iteration_lambda_max(&l, POWER_ITERATIONS, POWER_TOL).unwrap();
        assert!((est - true_max).abs() < 1e-6, "{est} vs {true_max}");
        let lt = scaled_laplacian(a).unwrap();
        let eig = SymmetricEigen::new(to_na(&lt)).eigenvalues;
        assert!(eig.iter().all(|&e| (-1.0 - 1e-6..=1.0 + 1e-6).contains(&e)), "{eig:?}");
    }

    #[test]
    fn basis_small_orders() {
        let lt = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.2, -0.3]]).unwrap();
        assert_eq!(cheb_basis(&lt, 1).unwrap(), vec![Tensor::eye(2)]);
        assert_eq!(cheb_basis(&lt, 2).unwrap(), vec![Tensor::eye(2), lt.clone()]);
        assert!(cheb_basis(&lt, 0).is_err());
    }

    /// T_k written out as explicit polynomials in L̃, evaluated with nalgebra.
    fn polynomial_oracle(lt: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let n = lt.nrows();
        let i = DMatrix::<f64>::identity(n, n);
        let l2 = lt * lt;
        let l3 = &l2 * lt;
        let l4 = &l3 * lt;
        match k {
            0 => i,
            1 => lt.clone(),
            2 => &l2 * 2.0 - i,
            3 => &l3 * 4.0 - lt * 3.0,
            4 => &l4 * 8.0 - &l2 * 8.0 + i,
            _ => unreachable!(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn basis_matches_polynomial_expansion(seed in any::<u64>(), n in 1usize..=6, k in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lt = random_symmetric(n, &mut rng, false);
            let basis = cheb_basis(&lt, k).unwrap();
            prop_assert_eq!(basis.len(), k);
            let na = to_na(&lt);
            for (order, tk) in basis.iter().enumerate() {
                let oracle = polynomial_oracle(&na, order);
                let diff = (to_na(tk) - oracle).abs().max();
                prop_assert!(diff < 1e-10, "order {} diff {}", order, diff);
            }
        }

        #[test]
        fn p_eff_rows_are_distributions(seed in any::<u64>(), n in 1usize..=6, k in 1usize..=4, batch in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tp = Tape::new();
            let s = tp.constant(random(&[batch, k, n, n], &mut rng).scale(5.0));
            let adj = tp.constant(random_symmetric(n, &mut rng, true));
            let m = tp.constant(random(&[k, n, n], &mut rng).scale(3.0));
            let p = effective_dependency(&mut tp, s, adj, m).unwrap();
            for row in tp.value(p).data().chunks(n) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn p_eff_closed_forms() {
        let mut tp = Tape::new();
        let s = tp.constant(Tensor::zeros(&[2, 3, 3]));
        let adj = tp.constant(Tensor::eye(3));
        let m = tp.constant(Tensor::zeros(&[2, 3, 3]));
        let p = effective_dependency(&mut tp, s, adj, m).unwrap();
        assert!(tp.value(p).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let mut tp = Tape::new();
        let s = tp.constant(Tensor::zeros(&[1, 2, 2]));
        let adj = tp.constant(Tensor::eye(2));
        let m = tp.constant(Tensor::new(vec![1, 2, 2], vec![3f64.ln(), 0.0, 0.0, 0.0]).unwrap());
        let p = effective_dependency(&mut tp, s, adj, m).unwrap();
        let row0 = &tp.value(p).data()[..2];
        assert!((row0[0] - 0.75).abs() < 1e-15 && (row0[1] - 0.25).abs() < 1e-15);
    }

    /// Straight loops over nodes, time, features and orders.
    fn dense_oracle(y: &Tensor, p: &Tensor, basis: &Tensor, theta: &Tensor, relu: bool) -> Tensor {
        let (l, d, t) = (y.shape()[0], y.shape()[1], y.shape()[2]);
        let (k, dc) = (theta.shape()[0], theta.shape()[2]);
        let mut out = Tensor::zeros(&[l, dc, t]);
        for i in 0..l {
            for tt in 0..t {
                for c in 0..dc {
                    let mut acc = 0.0;
                    for kk in 0..k {
                        for j in 0..l {
                            let g = basis.get(&[kk, i, j]) * p.get(&[kk, i, j]);
                            for f in 0..d {
                                acc += g * y.get(&[j, f, tt]) * theta.get(&[kk, f, c]);
                            }
                        }
                    }
                    out.set(&[i, c, tt], if relu { acc.max(0.0) } else { acc });
                }
            }
        }
        out
    }

    fn run_gcn(y: &Tensor, p: &Tensor, basis: &Tensor, theta: &Tensor) -> Tensor {
        let mut tp = Tape::new();
        let vars: Vec<Var> = [y, p, basis, theta].iter().map(|x| tp.constant((*x).clone())).collect();
        let h = cheb_gcn(&mut tp, vars[0], vars[1], vars[2], vars[3]).unwrap();
        tp.value(h).clone()
    }

    #[test]
    fn gcn_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (l, d, t, k, dc) = (4, 3, 5, 3, 2);
        let graph = LeadGraph::new(build_static_adjacency(l, &AdjacencyMode::Ring).unwrap(), k).unwrap();
        let basis = graph.stacked_basis();
        let y = random(&[l, d, t], &mut rng);
        let p = random(&[k, l, l], &mut rng);
        let theta = random(&[k, d, dc], &mut rng);
        let got = run_gcn(&y, &p, &basis, &theta);
        assert!(got.max_abs_diff(&dense_oracle(&y, &p, &basis, &theta, true)) < 1e-12);
    }

    #[test]
    fn gcn_uniform_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (l, d, t) = (3, 2, 4);
        let y = random(&[l, d, t], &mut rng);
        let p = Tensor::full(&[1, l, l], 1.0 / l as f64);
        let basis = Tensor::eye(l).reshape(&[1, l, l]).unwrap();
        let theta = Tensor::eye(d).reshape(&[1, d, d]).unwrap();
        let got = run_gcn(&y, &p, &basis, &theta);
        for i in 0..l {
            for f in 0..d {
                for tt in 0..t {
                    let expect = (y.get(&[i, f, tt]) / l as f64).max(0.0);
                    assert!((got.get(&[i, f, tt]) - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gcn_zero_and_negative_inputs() {
        let (l, d, t, k) = (3, 2, 4, 2);
        let basis = Tensor::full(&[k, l, l], 1.0);
        let p = Tensor::full(&[k, l, l], 0.5);
        let theta = Tensor::full(&[k, d, d], 1.0);
        let zero = run_gcn(&Tensor::zeros(&[l, d, t]), &p, &basis, &theta);
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let neg = run_gcn(&Tensor::full(&[l, d, t], -1.0), &p, &basis, &theta);
        assert!(neg.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_pre_activation_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (l, d, t, k, dc) = (5, 3, 4, 3, 2);
        let y = random(&[l, d, t], &mut rng);
        let y2 = y.scale(2.0);
        let p = random(&[k, l, l], &mut rng);
        let basis = random(&[k, l, l], &mut rng);
        let theta = random(&[k, d, dc], &mut rng);
        let a = dense_oracle(&y, &p, &basis, &theta, false);
        let b = dense_oracle(&y2, &p, &basis, &theta, false);
        assert!(a.scale(2.0).max_abs_diff(&b) < 1e-12);
        let relu_of = |x: &Tensor| x.map(|v| v.max(0.0));
        assert!(run_gcn(&y2, &p, &basis, &theta).max_abs_diff(&relu_of(&b)) < 1e-12);
    }

    #[test]
    fn gradients_through_masks_and_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (l, d, t, k, dc) = (3, 2, 3, 2, 2);
        let basis = LeadGraph::new(build_static_adjacency(l, &AdjacencyMode::FullyConnected).unwrap(), k)
            .unwrap()
            .stacked_basis();
        let adj = build_static_adjacency(l, &AdjacencyMode::FullyConnected).unwrap();
        let pt = vec![
            random(&[l, d, t], &mut rng),
            random(&[k, l, l], &mut rng),
            random(&[k, l, l], &mut rng),
            random(&[k, d, dc], &mut rng),
        ];
        let rep = grad_check(
            |tp, v| {
                let b = tp.constant(basis.clone());
                let a = tp.constant(adj.clone());
                let p = effective_dependency(tp, v[1], a, v[2])?;
                let h = cheb_gcn(tp, v[0], p, b, v[3])?;
                let sq = tp.mul(h, h)?;
                Ok(tp.sum_all(sq))
            },
            &pt,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}
