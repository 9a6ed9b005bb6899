//! Elementary symmetric functions of principal curvatures, Newton tensors
//! and Gårding cone membership.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binomial coefficient as a float; exact for the small arguments used here.
pub fn binomial(m: usize, k: usize) -> f64 {
    if k > m {
        return 0.0;
    }
    let k = k.min(m - k);
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Principal curvatures `κ_1..κ_{n-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureVector {
    kappa: Vec<f64>,
}

impl CurvatureVector {
    pub fn new(kappa: Vec<f64>) -> Result<Self> {
        if kappa.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 principal curvatures, got {}", kappa.len())));
        }
        if let Some(bad) = kappa.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite principal curvature {bad}")));
        }
        Ok(Self { kappa })
    }

    /// `m` copies of `c`.
    pub fn isotropic(m: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.kappa
    }

    /// Number of curvatures, `n − 1`.
    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    pub fn sigma_all(&self) -> Vec<f64> {
        sigma_all(&self.kappa)
    }

    pub fn normalized_all(&self) -> Vec<f64> {
        normalized_all(&self.kappa)
    }

    pub fn h_k(&self, k: usize) -> Result<f64> {
        h_k(&self.kappa, k)
    }

    pub fn scale(&self) -> f64 {
        self.kappa.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }
}

/// Coefficients `σ_0..σ_m` of `∏(1 + tκ_i)`.
pub fn sigma_all(kappa: &[f64]) -> Vec<f64> {
    let m = kappa.len();
    let mut s = vec![0.0; m + 1];
    s[0] = 1.0;
    for (i, &x) in kappa.iter().enumerate() {
        for j in (1..=i + 1).rev() {
            s[j] += x * s[j - 1];
        }
    }
    s
}

/// `σ_k`, zero for `k > m`.
pub fn sigma(kappa: &[f64], k: usize) -> f64 {
    if k > kappa.len() {
        return 0.0;
    }
    sigma_all(kappa)[k]
}

/// `H_0..H_m` with `H_k = σ_k / C(m, k)`.
pub fn normalized_all(kappa: &[f64]) -> Vec<f64> {
    let m = kappa.len();
    sigma_all(kappa)
        .into_iter()
        .enumerate()
        .map(|(k, s)| s / binomial(m, k))
        .collect()
}

pub fn h_k(kappa: &[f64], k: usize) -> Result<f64> {
    let m = kappa.len();
    if k > m {
        return Err(Error::OrderOutOfRange { order: k, max: m });
    }
    Ok(sigma_all(kappa)[k] / binomial(m, k))
}

/// `σ_k` of `κ` with entry `i` removed.
pub fn deleted_sigma(kappa: &[f64], i: usize, k: usize) -> f64 {
    let rest: Vec<f64> = kappa
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .collect();
    sigma(&rest, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeMembership {
    pub member: bool,
    /// `min_{1≤j≤k} σ_j`
    pub margin: f64,
}

/// Membership in `Γ_k⁺ = {σ_1 > 0, …, σ_k > 0}`.
pub fn gamma_cone(kappa: &[f64], k: usize) -> Result<ConeMembership> {
    let m = kappa.len();
    if k == 0 || k > m {
        return Err(Error::OrderOutOfRange { order: k, max: m });
    }
    let s = sigma_all(kappa);
    let margin = s[1..=k].iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConeMembership { member: margin > 0.0, margin })
}

/// Self-adjoint shape operator stored in an orthonormal frame of the induced
/// metric, so the matrix is symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeOperator {
    matrix: DMatrix<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl ShapeOperator {
    /// From a matrix that must already be symmetric to relative `1e-12`.
    pub fn from_symmetric(matrix: DMatrix<f64>) -> Result<Self> {
        let m = matrix.nrows();
        if m < 2 || matrix.ncols() != m {
            return Err(Error::invalid(format!("shape operator must be square of size >= 2, got {}x{}", m, matrix.ncols())));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite shape operator entry"));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let defect = (&matrix - matrix.transpose()).amax() / scale;
        if defect > SYMMETRY_TOL {
            return Err(Error::invalid(format!("shape operator symmetry defect {defect:.3e}")));
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self { matrix })
    }

    pub fn diagonal(kappa: &[f64]) -> Result<Self> {
        CurvatureVector::new(kappa.to_vec())?;
        Ok(Self { matrix: DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(kappa)) })
    }

    /// From the covariant forms `g_ij` and `h_ij` in an arbitrary coordinate
    /// frame: with `g = L Lᵀ` the operator `L⁻¹ h L⁻ᵀ` is similar to `g⁻¹h`.
    pub fn from_forms(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<Self> {
        let chol = g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("induced metric is not positive definite".into()))?;
        let l = chol.l();
        let linv = l
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular metric factor".into()))?;
        let s = &linv * h * linv.transpose();
        let s = (&s + s.transpose()) * 0.5;
        Self::from_symmetric(s)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Eigenvalues in ascending order.
    pub fn principal_curvatures(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn curvature_vector(&self) -> CurvatureVector {
        CurvatureVector { kappa: self.principal_curvatures() }
    }
}

/// `T_0..T_up_to` by `T_k = σ_k I − T_{k−1} S`.
pub fn newton_tensors(s: &ShapeOperator, up_to: usize) -> Result<Vec<DMatrix<f64>>> {
    let m = s.dim();
    if up_to + 1 > m {
        return Err(Error::OrderOutOfRange { order: up_to, max: m - 1 });
    }
    let sig = sigma_all(&s.principal_curvatures());
    let id = DMatrix::<f64>::identity(m, m);
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(up_to + 1);
    out.push(id.clone());
    for k in 1..=up_to {
        let next = &id * sig[k] - &out[k - 1] * s.matrix();
        out.push((&next + next.transpose()) * 0.5);
    }
    Ok(out)
}

/// The `k`-th Newton tensor, `0 ≤ k ≤ n − 2`.
pub fn newton_tensor(s: &ShapeOperator, k: usize) -> Result<DMatrix<f64>> {
    Ok(newton_tensors(s, k)?.pop().expect("nonempty"))
}

/// Thresholds for calling a numerical Newton–Maclaurin gap an equality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqualityBands {
    /// `|gap| ≤ gap · scale`
    pub gap: f64,
    /// every `κ_i` within this relative distance of the mean
    pub isotropy: f64,
}

impl Default for EqualityBands {
    fn default() -> Self {
        Self { gap: 1e-12, isotropy: 1e-6 }
    }
}

/// Tolerance on negative gaps, relative to `scale`.
pub const NEWTON_MACLAURIN_SLACK: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonMaclaurin {
    pub holds: bool,
    /// `H_l H_k − H_{l−1} H_{k+1}`
    pub gap: f64,
    /// `max|κ_i|^{l+k}`, the natural size of the gap
    pub scale: f64,
    pub equality: bool,
}

/// Check `H_l H_k ≥ H_{l−1} H_{k+1}` for `1 ≤ l ≤ k ≤ m`, `κ ∈ Γ_k⁺`.
pub fn newton_maclaurin_check(kv: &CurvatureVector, l: usize, k: usize, bands: EqualityBands) -> Result<NewtonMaclaurin> {
    let m = kv.len();
    if l == 0 || l > k || k > m {
        return Err(Error::invalid(format!("need 1 <= l <= k <= {m}, got l={l}, k={k}")));
    }
    let cone = gamma_cone(kv.as_slice(), k)?;
    if !cone.member {
        return Err(Error::Cone { order: k, margin: cone.margin });
    }
    let hs = kv.normalized_all();
    let upper = if k < m { hs[k + 1] } else { 0.0 };
    let gap = hs[l] * hs[k] - hs[l - 1] * upper;
    let scale = kv.scale().powi((l + k) as i32);
    let mean = kv.as_slice().iter().sum::<f64>() / m as f64;
    let isotropic = kv
        .as_slice()
        .iter()
        .all(|x| (x - mean).abs() <= bands.isotropy * mean.abs());
    Ok(NewtonMaclaurin {
        holds: gap >= -NEWTON_MACLAURIN_SLACK * scale,
        gap,
        scale,
        equality: isotropic && gap.abs() <= bands.gap * scale,
    })
}

#[derive(Clone, Debug)]
pub struct QuotientDerivative {
    /// `∂(H_k/H_{k−1})/∂h` in the frame of the shape operator
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

/// Derivative of `H_k/H_{k−1}` with respect to the shape operator, from
/// `∂σ_k/∂h = T_{k−1}`.
pub fn quotient_derivative(s: &ShapeOperator, k: usize) -> Result<QuotientDerivative> {
    let m = s.dim();
    if k == 0 || k > m {
        return Err(Error::OrderOutOfRange { order: k, max: m });
    }
    let kappa = s.principal_curvatures();
    let cone = gamma_cone(&kappa, k)?;
    if !cone.member {
        return Err(Error::Cone { order: k, margin: cone.margin });
    }
    let hs = normalized_all(&kappa);
    let tensors = newton_tensors(s, k - 1)?;
    let d_hk = &tensors[k - 1] / binomial(m, k);
    let d_hk1 = if k >= 2 {
        &tensors[k - 2] / binomial(m, k - 1)
    } else {
        DMatrix::zeros(m, m)
    };
    let matrix = (d_hk * hs[k - 1] - d_hk1 * hs[k]) / (hs[k - 1] * hs[k - 1]);
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    let min_eigenvalue = SymmetricEigen::new(matrix.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(QuotientDerivative { matrix, min_eigenvalue })
}

/// Positive-definiteness report of [`quotient_derivative`].
pub fn quotient_derivative_pd(s: &ShapeOperator, k: usize) -> Result<(bool, QuotientDerivative)> {
    let q = quotient_derivative(s, k)?;
    Ok((q.min_eigenvalue > 0.0, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn subset_sigma(kappa: &[f64], k: usize) -> f64 {
        let m = kappa.len();
        (0u32..1 << m)
            .filter(|mask| mask.count_ones() as usize == k)
            .map(|mask| (0..m).filter(|i| mask >> i & 1 == 1).map(|i| kappa[i]).product::<f64>())
            .sum()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_all(&[1.0, 2.0, 3.0]), vec![1.0, 6.0, 11.0, 6.0]);
        let s = sigma_all(&[0.7; 5]);
        for k in 0..=5 {
            assert!(close(s[k], binomial(5, k) * 0.7f64.powi(k as i32), 1e-15));
        }
        assert_eq!(sigma_all(&[0.0; 4]), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(sigma(&[1.0, 2.0], 3), 0.0);
    }

    #[test]
    fn h_k_examples() {
        assert!((h_k(&[1.0, 2.0, 3.0], 2).unwrap() - 11.0 / 3.0).abs() < 1e-15);
        assert_eq!(h_k(&[1.0, 2.0, 3.0], 0).unwrap(), 1.0);
        for k in 0..4 {
            assert!(close(h_k(&[1.3; 3], k).unwrap(), 1.3f64.powi(k as i32), 1e-15));
        }
        assert!(matches!(h_k(&[1.0, 2.0], 3), Err(Error::OrderOutOfRange { .. })));
    }

    #[test]
    fn curvature_vector_invariants() {
        assert!(CurvatureVector::new(vec![1.0]).is_err());
        assert!(CurvatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(CurvatureVector::new(vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn cone_examples() {
        let c = gamma_cone(&[1.0, 2.0, 3.0], 3).unwrap();
        assert!(c.member && c.margin == 6.0);
        assert!(gamma_cone(&[1.0, 1.0, -1.0], 1).unwrap().member);
        assert!(!gamma_cone(&[1.0, 1.0, -1.0], 2).unwrap().member);
        assert!(!gamma_cone(&[0.0; 3], 1).unwrap().member);
        assert!(gamma_cone(&[1.0; 3], 0).is_err());
    }

    #[test]
    fn newton_tensor_examples() {
        let s = ShapeOperator::diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let t1 = newton_tensor(&s, 1).unwrap();
        assert_eq!(t1, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 4.0, 3.0])));
        assert_eq!((&t1 * s.matrix()).trace(), 22.0);
        assert_eq!(newton_tensor(&s, 0).unwrap(), DMatrix::identity(3, 3));
        assert!(newton_tensor(&s, 3).is_err());
        // isotropic: trace T_k = (m − k) σ_k
        let m = 4;
        let c = 0.8;
        let iso = ShapeOperator::from_symmetric(DMatrix::identity(m, m) * c).unwrap();
        for k in 0..m {
            let t = newton_tensor(&iso, k).unwrap();
            let sk = binomial(m, k) * c.powi(k as i32);
            assert!(close(t.trace(), (m - k) as f64 * sk, 1e-14));
        }
    }

    #[test]
    fn newton_maclaurin_examples() {
        let kv = CurvatureVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        let r = newton_maclaurin_check(&kv, 1, 2, EqualityBands::default()).unwrap();
        assert!(r.holds && !r.equality);
        assert!((r.gap - 4.0 / 3.0).abs() < 1e-14);
        let iso = CurvatureVector::isotropic(3, 1.7).unwrap();
        for k in 1..=3 {
            for l in 1..=k {
                let r = newton_maclaurin_check(&iso, l, k, EqualityBands::default()).unwrap();
                // with H_n = 0 the top order is strict even on isotropic input
                assert!(r.holds && r.equality == (k < 3), "l={l} k={k} {r:?}");
            }
        }
        let bad = CurvatureVector::new(vec![1.0, 1.0, -1.0]).unwrap();
        assert!(matches!(newton_maclaurin_check(&bad, 2, 2, EqualityBands::default()), Err(Error::Cone { .. })));
    }

    #[test]
    fn quotient_derivative_examples() {
        let iso = ShapeOperator::from_symmetric(DMatrix::identity(3, 3) * 1.5).unwrap();
        for k in 1..=3 {
            let (pd, q) = quotient_derivative_pd(&iso, k).unwrap();
            assert!(pd);
            // multiple of the identity
            let d = q.matrix[(0, 0)];
            assert!((&q.matrix - DMatrix::identity(3, 3) * d).amax() < 1e-14);
        }
        let s = ShapeOperator::diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let (pd, q) = quotient_derivative_pd(&s, 2).unwrap();
        assert!(pd);
        // finite-difference oracle along every symmetric basis direction
        let quot = |m: &DMatrix<f64>| {
            let ev = ShapeOperator::from_symmetric(m.clone()).unwrap().principal_curvatures();
            h_k(&ev, 2).unwrap() / h_k(&ev, 1).unwrap()
        };
        let h = 1e-5;
        for i in 0..3 {
            for j in i..3 {
                let mut e = DMatrix::zeros(3, 3);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                let fd = (quot(&(s.matrix() + &e * h)) - quot(&(s.matrix() - &e * h))) / (2.0 * h);
                let an = (&q.matrix.component_mul(&e)).sum();
                assert!((fd - an).abs() < 1e-8, "({i},{j}) fd={fd} an={an}");
            }
        }
        let bad = ShapeOperator::diagonal(&[1.0, 1.0, -1.0]).unwrap();
        assert!(matches!(quotient_derivative_pd(&bad, 2), Err(Error::Cone { .. })));
    }

    #[test]
    fn from_forms_matches_generalized_eigenvalues() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let s = ShapeOperator::from_forms(&g, &h).unwrap();
        let ev = s.principal_curvatures();
        let w = g.clone().try_inverse().unwrap() * &h;
        assert!((ev[0] + ev[1] - w.trace()).abs() < 1e-14);
        assert!((ev[0] * ev[1] - w.determinant()).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_operator_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(ShapeOperator::from_symmetric(m).is_err());
    }

    fn cone_sample(m: usize, k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..3.0, m).prop_filter("in cone", move |v| gamma_cone(v, k).unwrap().margin > 1e-6)
    }

    proptest! {
        #[test]
        fn sigma_matches_subsets(kappa in proptest::collection::vec(-3.0f64..3.0, 2..=6)) {
            let s = sigma_all(&kappa);
            for k in 0..=kappa.len() {
                let want = subset_sigma(&kappa, k);
                let scale = kappa.iter().map(|x| x.abs()).fold(1.0, f64::max).powi(k as i32) * binomial(kappa.len(), k);
                prop_assert!((s[k] - want).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn newton_tensor_is_deleted_sigma(kappa in proptest::collection::vec(-2.0f64..2.0, 2..=6)) {
            let s = ShapeOperator::diagonal(&kappa).unwrap();
            let m = kappa.len();
            let ts = newton_tensors(&s, m - 1).unwrap();
            for (k, t) in ts.iter().enumerate() {
                for i in 0..m {
                    prop_assert!((t[(i, i)] - deleted_sigma(&kappa, i, k)).abs() <= 1e-12 * 2f64.powi(k as i32) * binomial(m, k));
                }
            }
        }

        #[test]
        fn trace_identities(m in 2usize..=6, seed in 0u64..u64::MAX, kraw in 1usize..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = 1 + (kraw - 1) % (m - 1).max(1);
            let kappa: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..2.0)).collect();
            // random rotation conjugation keeps the operator non-diagonal
            let a = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
            let q = a.qr().q();
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(kappa.clone()));
            let sym = &q * d * q.transpose();
            let s = ShapeOperator::from_symmetric((&sym + sym.transpose()) * 0.5).unwrap();
            let sig = sigma_all(&kappa);
            let t = newton_tensor(&s, k - 1).unwrap();
            let ts = &t * s.matrix();
            let lhs1 = ts.trace();
            let rhs1 = k as f64 * sig[k];
            prop_assert!(close(lhs1, rhs1, 1e-10));
            let lhs2 = (&ts * s.matrix()).trace();
            let next = if k < m { sig[k + 1] } else { 0.0 };
            let rhs2 = sig[1] * sig[k] - (k + 1) as f64 * next;
            prop_assert!((lhs2 - rhs2).abs() <= 1e-10 * (sig[1] * sig[k]).abs().max(1.0));
        }

        #[test]
        fn newton_tensor_positive_in_next_cone(kappa in cone_sample(4, 3), k in 0usize..3) {
            prop_assume!(gamma_cone(&kappa, k + 1).unwrap().member);
            let s = ShapeOperator::diagonal(&kappa).unwrap();
            let t = newton_tensor(&s, k).unwrap();
            for i in 0..4 {
                prop_assert!(t[(i, i)] > 0.0);
            }
        }

        #[test]
        fn newton_maclaurin_sign_is_scale_invariant(kappa in cone_sample(4, 4), t in 0.1f64..10.0, l in 1usize..=4, k in 1usize..=4) {
            prop_assume!(l <= k);
            let a = newton_maclaurin_check(&CurvatureVector::new(kappa.clone()).unwrap(), l, k, EqualityBands::default()).unwrap();
            let scaled: Vec<f64> = kappa.iter().map(|x| x * t).collect();
            let b = newton_maclaurin_check(&CurvatureVector::new(scaled).unwrap(), l, k, EqualityBands::default()).unwrap();
            prop_assert!(a.holds && b.holds);
            let want = a.gap * t.powi((l + k) as i32);
            prop_assert!((b.gap - want).abs() <= 1e-10 * b.scale);
        }
    }
}
