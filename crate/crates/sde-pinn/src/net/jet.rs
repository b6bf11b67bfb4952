//! Batched jet propagation: exact partial derivatives of the network outputs
//! with respect to selected input coordinates, computed by truncated
//! multivariate Taylor propagation through every layer, plus the reverse-mode
//! adjoint of the whole computation for parameter gradients.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use std::collections::BTreeMap;

use super::taylor::{layout, CoeffLayout};
use super::{MlpParams, MultiIndex, NetError};

/// Active directions and truncation order of a jet computation. At most two
/// directions and total order 3, which covers every residual used here (pure
/// third derivatives, mixed second derivatives, first-order time derivatives).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetReq {
    pub dirs: Vec<usize>,
    pub degree: u8,
}

impl JetReq {
    pub fn plain() -> Self {
        JetReq { dirs: Vec::new(), degree: 0 }
    }

    pub fn validate(&self, input_dim: usize) -> Result<(), NetError> {
        if self.dirs.len() > 2 {
            return Err(NetError::UnsupportedDerivative(format!(
                "{} active directions requested, at most 2 supported",
                self.dirs.len()
            )));
        }
        if self.degree > 3 {
            return Err(NetError::UnsupportedDerivative(format!(
                "total order {} requested, at most 3 supported",
                self.degree
            )));
        }
        if self.dirs.is_empty() && self.degree != 0 {
            return Err(NetError::UnsupportedDerivative(
                "positive degree requires at least one direction".into(),
            ));
        }
        if !self.dirs.is_empty() && self.degree == 0 {
            return Err(NetError::UnsupportedDerivative("directions given but degree is 0".into()));
        }
        for &d in &self.dirs {
            if d >= input_dim {
                return Err(NetError::UnsupportedDerivative(format!(
                    "direction {d} out of range for input dimension {input_dim}"
                )));
            }
        }
        if self.dirs.len() == 2 && self.dirs[0] == self.dirs[1] {
            return Err(NetError::UnsupportedDerivative("directions must be distinct".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> &'static CoeffLayout {
        layout(self.dirs.len(), self.degree)
    }

    /// Local exponent pair of a global multi-index, if it is representable
    /// under this request.
    pub fn local_exps(&self, mi: &MultiIndex) -> Option<[u8; 2]> {
        let mut local = [0u8; 2];
        for (coord, &e) in mi.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            match self.dirs.iter().position(|&d| d == coord) {
                Some(k) => local[k] = e,
                None => return None,
            }
        }
        if mi.order() > self.degree {
            return None;
        }
        Some(local)
    }
}

/// Forward pass record of a batched jet computation. Coefficient blocks are
/// stored per layer so the adjoint pass can run without re-evaluation; the
/// column block of point `j` is `j*nc .. (j+1)*nc`.
pub struct JetTape {
    pub req: JetReq,
    pub n_points: usize,
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    /// Output-layer Taylor coefficients, shape `(output_dim, n_points * nc)`.
    pub out: Array2<f64>,
}

impl JetTape {
    pub fn layout(&self) -> &'static CoeffLayout {
        self.req.layout()
    }

    /// Taylor coefficient of output `o` at point `j` for local coefficient
    /// index `ci`.
    pub fn coeff(&self, o: usize, j: usize, ci: usize) -> f64 {
        self.out[[o, j * self.layout().n() + ci]]
    }

    /// Derivative value (factorial-scaled coefficient).
    pub fn deriv(&self, o: usize, j: usize, ci: usize) -> f64 {
        self.coeff(o, j, ci) * self.layout().fact[ci]
    }
}

fn affine_forward(w: ArrayView2<f64>, bias: &[f64], a: &Array2<f64>, nc: usize) -> Array2<f64> {
    let mut z = Array2::zeros((w.nrows(), a.ncols()));
    general_mat_mul(1.0, &w, &a.view(), 0.0, &mut z);
    let ncols = z.ncols();
    let zs = z.as_slice_mut().unwrap();
    for (i, &b) in bias.iter().enumerate() {
        let row = i * ncols;
        let mut c = 0;
        while c < ncols {
            zs[row + c] += b;
            c += nc;
        }
    }
    z
}

fn tanh_forward(lay: &CoeffLayout, z: &Array2<f64>) -> Array2<f64> {
    let nc = lay.n();
    let mut a = Array2::zeros(z.dim());
    let ncols = z.ncols();
    let zs = z.as_slice().unwrap();
    let out = a.as_slice_mut().unwrap();
    for row in 0..z.nrows() {
        let base = row * ncols;
        let mut c = 0;
        while c < ncols {
            lay.tanh_block(&zs[base + c..base + c + nc], &mut out[base + c..base + c + nc]);
            c += nc;
        }
    }
    a
}

/// Propagates Taylor blocks for a batch of base points through the network.
pub fn jet_batch_forward(params: &MlpParams, points: &[Vec<f64>], req: &JetReq) -> Result<JetTape, NetError> {
    let arch = params.arch();
    req.validate(arch.input_dim)?;
    let lay = req.layout();
    let nc = lay.n();
    let b = points.len();
    let cols = b * nc;
    let dims = arch.layer_dims();

    let mut input = Array2::zeros((dims[0], cols));
    for (j, pt) in points.iter().enumerate() {
        if pt.len() != dims[0] {
            return Err(NetError::ShapeMismatch(format!(
                "point {j} has length {}, expected {}",
                pt.len(),
                dims[0]
            )));
        }
        for (i, &x) in pt.iter().enumerate() {
            input[[i, j * nc]] = x;
        }
        for (k, &dir) in req.dirs.iter().enumerate() {
            let exps = if k == 0 { [1, 0] } else { [0, 1] };
            let ci = lay.index_of(exps).expect("first-order slot exists when degree >= 1");
            input[[dir, j * nc + ci]] = 1.0;
        }
    }

    let n_hidden = arch.hidden.len();
    let mut pre = Vec::with_capacity(n_hidden);
    let mut post = Vec::with_capacity(n_hidden);
    let mut act = input.clone();
    for l in 0..n_hidden {
        let z = affine_forward(params.weight(l), params.bias(l).as_slice().unwrap(), &act, nc);
        let a = tanh_forward(lay, &z);
        pre.push(z);
        act = a.clone();
        post.push(a);
    }
    let out = affine_forward(
        params.weight(n_hidden),
        params.bias(n_hidden).as_slice().unwrap(),
        &act,
        nc,
    );
    Ok(JetTape { req: req.clone(), n_points: b, input, pre, post, out })
}

/// Accumulates `d(loss)/d(params)` into `grad` given the adjoint of the
/// output Taylor coefficients (same shape as `tape.out`, in coefficient
/// space, not derivative space).
pub fn jet_batch_backward(params: &MlpParams, tape: &JetTape, adj_out: &Array2<f64>, grad: &mut [f64]) {
    let arch = params.arch();
    let lay = tape.layout();
    let nc = lay.n();
    let dims = arch.layer_dims();
    let n_layers = arch.n_layers();
    assert_eq!(grad.len(), arch.param_count());
    assert_eq!(adj_out.dim(), tape.out.dim());

    let mut adj = adj_out.clone();
    for l in (0..n_layers).rev() {
        let a_prev = if l == 0 { &tape.input } else { &tape.post[l - 1] };
        let (w_off, b_off) = params.layer_offsets(l);
        {
            let gw = &mut grad[w_off..b_off];
            let mut gw_view = ArrayViewMut2::from_shape((dims[l + 1], dims[l]), gw).unwrap();
            general_mat_mul(1.0, &adj.view(), &a_prev.t(), 1.0, &mut gw_view);
        }
        {
            let gb = &mut grad[b_off..b_off + dims[l + 1]];
            let ncols = adj.ncols();
            let adj_s = adj.as_slice().unwrap();
            for (i, g) in gb.iter_mut().enumerate() {
                let row = i * ncols;
                let mut c = 0;
                while c < ncols {
                    *g += adj_s[row + c];
                    c += nc;
                }
            }
        }
        if l > 0 {
            let w = params.weight(l);
            let mut adj_post = Array2::zeros((dims[l], adj.ncols()));
            general_mat_mul(1.0, &w.t(), &adj.view(), 0.0, &mut adj_post);
            // through the tanh blocks of hidden layer l-1
            let z = &tape.pre[l - 1];
            let ncols = z.ncols();
            let zs = z.as_slice().unwrap();
            let mut adj_pre = Array2::zeros((dims[l], ncols));
            {
                let ap = adj_pre.as_slice_mut().unwrap();
                let apost = adj_post.as_slice().unwrap();
                for row in 0..dims[l] {
                    let base = row * ncols;
                    let mut c = 0;
                    while c < ncols {
                        lay.tanh_block_adjoint(
                            &zs[base + c..base + c + nc],
                            &apost[base + c..base + c + nc],
                            &mut ap[base + c..base + c + nc],
                        );
                        c += nc;
                    }
                }
            }
            adj = adj_pre;
        }
    }
}

/// Partial derivatives of the network outputs at one base point, keyed by
/// multi-index over the input coordinates. The order-0 entry is always
/// present and equals plain forward evaluation.
#[derive(Debug, Clone)]
pub struct Jet {
    pub base: Vec<f64>,
    /// Derivative values per multi-index, one entry per network output.
    pub derivs: BTreeMap<MultiIndex, Vec<f64>>,
}

impl Jet {
    pub fn value(&self, mi: &MultiIndex) -> &[f64] {
        &self.derivs[mi]
    }
}

/// Derives the jet request implied by a set of multi-indices: the union of
/// their supports (at most 2 coordinates) and the maximum total order.
pub fn request_for(indices: &[MultiIndex], input_dim: usize) -> Result<JetReq, NetError> {
    let mut dirs: Vec<usize> = Vec::new();
    let mut degree = 0u8;
    for mi in indices {
        if mi.len() != input_dim {
            return Err(NetError::ShapeMismatch(format!(
                "multi-index over {} coordinates, expected {input_dim}",
                mi.len()
            )));
        }
        degree = degree.max(mi.order());
        for c in mi.support() {
            if !dirs.contains(&c) {
                dirs.push(c);
            }
        }
    }
    dirs.sort_unstable();
    if dirs.is_empty() {
        return Ok(JetReq::plain());
    }
    let req = JetReq { dirs, degree: degree.max(1) };
    req.validate(input_dim)?;
    Ok(req)
}

/// Evaluates the requested partial derivatives of the network at `base`.
pub fn jet_eval(params: &MlpParams, base: &[f64], request: &[MultiIndex]) -> Result<Jet, NetError> {
    let req = request_for(request, params.arch().input_dim)?;
    let tape = jet_batch_forward(params, std::slice::from_ref(&base.to_vec()), &req)?;
    let lay = tape.layout();
    let out_dim = params.arch().output_dim;
    let mut derivs = BTreeMap::new();
    let mut wanted: Vec<MultiIndex> = request.to_vec();
    let zero = MultiIndex::zero(params.arch().input_dim);
    if !wanted.contains(&zero) {
        wanted.push(zero);
    }
    for mi in wanted {
        let local = req
            .local_exps(&mi)
            .expect("request_for covers every requested index");
        let ci = lay.index_of(local).expect("layout covers the request degree");
        let vals: Vec<f64> = (0..out_dim).map(|o| tape.deriv(o, 0, ci)).collect();
        derivs.insert(mi, vals);
    }
    Ok(Jet { base: base.to_vec(), derivs })
}

/// Adjoint of a scalar loss with respect to a jet's derivative values.
pub type JetAdjoint = BTreeMap<MultiIndex, Vec<f64>>;

/// A scalar loss built from the jets of a batch of points, together with its
/// analytic adjoints. Gradients produced through this interface are checked
/// against finite differences in the test suite.
pub trait JetLoss {
    fn loss_and_adjoints(&self, jets: &[Jet]) -> (f64, Vec<JetAdjoint>);
}

/// Reverse-mode gradient of `loss` over the jets of `points` with respect to
/// every weight and bias.
pub fn loss_gradient(
    params: &MlpParams,
    points: &[Vec<f64>],
    request: &[MultiIndex],
    loss: &dyn JetLoss,
) -> Result<(f64, Vec<f64>), NetError> {
    let req = request_for(request, params.arch().input_dim)?;
    let tape = jet_batch_forward(params, points, &req)?;
    let lay = tape.layout();
    let out_dim = params.arch().output_dim;

    let jets: Vec<Jet> = (0..points.len())
        .map(|j| {
            let mut derivs = BTreeMap::new();
            let mut wanted: Vec<MultiIndex> = request.to_vec();
            let zero = MultiIndex::zero(params.arch().input_dim);
            if !wanted.contains(&zero) {
                wanted.push(zero);
            }
            for mi in wanted {
                let ci = lay.index_of(req.local_exps(&mi).unwrap()).unwrap();
                let vals: Vec<f64> = (0..out_dim).map(|o| tape.deriv(o, j, ci)).collect();
                derivs.insert(mi, vals);
            }
            Jet { base: points[j].clone(), derivs }
        })
        .collect();

    let (value, adjoints) = loss.loss_and_adjoints(&jets);
    if !value.is_finite() {
        let at_point = jets
            .iter()
            .find(|jet| jet.derivs.values().any(|v| v.iter().any(|x| !x.is_finite())))
            .map(|jet| jet.base.clone())
            .or_else(|| points.first().cloned());
        return Err(NetError::NonFiniteLoss { at_point });
    }

    let nc = lay.n();
    let mut adj_out = Array2::zeros(tape.out.dim());
    for (j, adj) in adjoints.iter().enumerate() {
        for (mi, per_out) in adj {
            let ci = lay
                .index_of(req.local_exps(mi).expect("adjoint index must be part of the request"))
                .unwrap();
            for (o, &g) in per_out.iter().enumerate() {
                // derivative = factorial * coefficient
                adj_out[[o, j * nc + ci]] += g * lay.fact[ci];
            }
        }
    }
    let mut grad = vec![0.0; params.arch().param_count()];
    jet_batch_backward(params, &tape, &adj_out, &mut grad);
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{forward, MlpArchitecture};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch(input: usize, hidden: Vec<usize>, output: usize) -> MlpArchitecture {
        MlpArchitecture::new(input, hidden, output).unwrap()
    }

    fn random_params(a: MlpArchitecture, seed: u64) -> MlpParams {
        // weights and biases uniform in [-1, 1]
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = a.param_count();
        let flat: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        MlpParams::from_flat(a, flat).unwrap()
    }

    #[test]
    fn zero_network_has_zero_jets() {
        let p = MlpParams::zeros(arch(2, vec![6], 1)).unwrap();
        let req: Vec<MultiIndex> = vec![
            MultiIndex::unit(2, 0, 1),
            MultiIndex::unit(2, 0, 2),
            MultiIndex::unit(2, 1, 1),
        ];
        let jet = jet_eval(&p, &[0.7, -0.4], &req).unwrap();
        for (_, v) in &jet.derivs {
            assert_eq!(v[0], 0.0);
        }
    }

    #[test]
    fn tanh_chain_derivatives_at_zero() {
        // x -> tanh(x): derivatives at 0 are 1, 0, -2
        let p = MlpParams::from_flat(arch(1, vec![1], 1), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let req: Vec<MultiIndex> =
            (1..=3).map(|k| MultiIndex::unit(1, 0, k)).collect();
        let jet = jet_eval(&p, &[0.0], &req).unwrap();
        assert_relative_eq!(jet.value(&MultiIndex::unit(1, 0, 1))[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(jet.value(&MultiIndex::unit(1, 0, 2))[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(jet.value(&MultiIndex::unit(1, 0, 3))[0], -2.0, epsilon = 1e-13);
    }

    #[test]
    fn order_zero_matches_forward_to_ulp_scale() {
        let p = random_params(arch(3, vec![12, 9], 2), 4);
        for s in 0..20 {
            let x = vec![0.1 * s as f64 - 1.0, 0.05 * s as f64, -0.3];
            let jet = jet_eval(&p, &x, &[MultiIndex::unit(3, 0, 2), MultiIndex::unit(3, 2, 1)]).unwrap();
            let fw = forward(&p, &x).unwrap();
            let j0 = jet.value(&MultiIndex::zero(3));
            for o in 0..2 {
                assert_relative_eq!(j0[o], fw[o], max_relative = 1e-14, epsilon = 1e-14);
            }
        }
    }

    /// Central finite differences of a single requested derivative, step 1e-3,
    /// no Richardson extrapolation.
    fn fd_derivative(p: &MlpParams, base: &[f64], mi: &MultiIndex, out: usize) -> f64 {
        let h = 1e-3;
        let eval = |x: &[f64]| forward(p, x).unwrap()[out];
        let sup = mi.support();
        match (sup.len(), mi.order()) {
            (0, _) => eval(base),
            (1, 1) => {
                let c = sup[0];
                let mut xp = base.to_vec();
                let mut xm = base.to_vec();
                xp[c] += h;
                xm[c] -= h;
                (eval(&xp) - eval(&xm)) / (2.0 * h)
            }
            (1, 2) => {
                let c = sup[0];
                let mut xp = base.to_vec();
                let mut xm = base.to_vec();
                xp[c] += h;
                xm[c] -= h;
                (eval(&xp) - 2.0 * eval(base) + eval(&xm)) / (h * h)
            }
            (1, 3) => {
                let c = sup[0];
                let at = |s: f64| {
                    let mut x = base.to_vec();
                    x[c] += s;
                    eval(&x)
                };
                (at(2.0 * h) - 2.0 * at(h) + 2.0 * at(-h) - at(-2.0 * h)) / (2.0 * h * h * h)
            }
            (2, 2) => {
                let (a, b) = (sup[0], sup[1]);
                let at = |sa: f64, sb: f64| {
                    let mut x = base.to_vec();
                    x[a] += sa;
                    x[b] += sb;
                    eval(&x)
                };
                (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h)
            }
            (2, 3) => {
                // order (2,1) or (1,2)
                let (a, b) = if mi.0[sup[0]] == 2 { (sup[0], sup[1]) } else { (sup[1], sup[0]) };
                let at = |sa: f64, sb: f64| {
                    let mut x = base.to_vec();
                    x[a] += sa;
                    x[b] += sb;
                    eval(&x)
                };
                // d^2/da^2 of d/db via central differences in both
                ((at(h, h) - at(h, -h)) - 2.0 * (at(0.0, h) - at(0.0, -h)) + (at(-h, h) - at(-h, -h)))
                    / (2.0 * h * h * h)
            }
            _ => unreachable!(),
        }
    }

    fn check_close(a: f64, b: f64, tol: f64) {
        let scale = a.abs().max(b.abs()).max(1.0);
        assert!((a - b).abs() <= tol * scale, "jet {a} vs fd {b}");
    }

    #[test]
    fn jets_match_finite_differences_on_random_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let all_indices = |n: usize| -> Vec<MultiIndex> {
            let mut v = Vec::new();
            for c in 0..n.min(2) {
                for k in 1..=3u8 {
                    v.push(MultiIndex::unit(n, c, k));
                }
            }
            if n >= 2 {
                let mut m = vec![0u8; n];
                m[0] = 1;
                m[1] = 1;
                v.push(MultiIndex(m.clone()));
                m[0] = 2;
                v.push(MultiIndex(m.clone()));
                m[0] = 1;
                m[1] = 2;
                v.push(MultiIndex(m));
            }
            v
        };
        for case in 0..40 {
            let n_in = 1 + (case % 3);
            let p = random_params(arch(n_in, vec![8, 6], 1 + (case % 2)), 1000 + case as u64);
            let base: Vec<f64> = (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect();
            for mi in all_indices(n_in) {
                // one jet per index keeps the request within 2 directions
                let jet = jet_eval(&p, &base, std::slice::from_ref(&mi)).unwrap();
                for o in 0..p.arch().output_dim {
                    let fd = fd_derivative(&p, &base, &mi, o);
                    check_close(jet.value(&mi)[o], fd, 1e-5);
                }
            }
        }
    }

    #[test]
    fn jet_linearity_over_summed_networks() {
        // jets of A+B (summed output layers) equal coefficient-wise sums
        let a = random_params(arch(2, vec![7, 5], 1), 31);
        let mut b = random_params(arch(2, vec![7, 5], 1), 32);
        // share hidden layers so the sum is realizable by one network with
        // doubled... instead simply evaluate both and compare sums of jets
        // against analytic linearity of the jet map in the output layer:
        // scale B's output layer by 0 and compare A's jet with (A with B's
        // zeroed output) jet sums.
        let (w_off, _) = b.layer_offsets(2);
        let n = b.flat().len();
        for v in &mut b.flat_mut()[w_off..n] {
            *v = 0.0;
        }
        let req = vec![MultiIndex::unit(2, 0, 1), MultiIndex::unit(2, 1, 2)];
        let base = [0.3, -0.2];
        let ja = jet_eval(&a, &base, &req).unwrap();
        let jb = jet_eval(&b, &base, &req).unwrap();
        // b has zero output layer: all derivatives 0, sum = A
        for (mi, va) in &ja.derivs {
            let vb = jb.value(mi);
            assert_eq!(vb[0], 0.0);
            assert_relative_eq!(va[0] + vb[0], va[0]);
        }
    }

    #[test]
    fn rejects_unsupported_requests() {
        let p = random_params(arch(3, vec![4], 1), 3);
        // three active coordinates
        let mi = MultiIndex(vec![1, 1, 1]);
        assert!(matches!(
            jet_eval(&p, &[0.0, 0.0, 0.0], &[mi]),
            Err(NetError::UnsupportedDerivative(_))
        ));
        // order 4
        let mi = MultiIndex::unit(3, 0, 4);
        assert!(matches!(
            jet_eval(&p, &[0.0, 0.0, 0.0], &[mi]),
            Err(NetError::UnsupportedDerivative(_))
        ));
    }

    struct SquaredOutput;
    impl JetLoss for SquaredOutput {
        fn loss_and_adjoints(&self, jets: &[Jet]) -> (f64, Vec<JetAdjoint>) {
            let n = jets[0].base.len();
            let zero = MultiIndex::zero(n);
            let mut total = 0.0;
            let mut adjs = Vec::new();
            for jet in jets {
                let y = jet.value(&zero)[0];
                total += y * y;
                let mut adj = JetAdjoint::new();
                adj.insert(zero.clone(), vec![2.0 * y]);
                adjs.push(adj);
            }
            (total, adjs)
        }
    }

    struct IdentityLoss;
    impl JetLoss for IdentityLoss {
        fn loss_and_adjoints(&self, jets: &[Jet]) -> (f64, Vec<JetAdjoint>) {
            let n = jets[0].base.len();
            let zero = MultiIndex::zero(n);
            let mut adj = JetAdjoint::new();
            adj.insert(zero.clone(), vec![1.0]);
            (jets[0].value(&zero)[0], vec![adj])
        }
    }

    #[test]
    fn gradient_of_squared_output_at_zero_network_is_zero() {
        let p = MlpParams::zeros(arch(2, vec![5], 1)).unwrap();
        let (loss, grad) = loss_gradient(&p, &[vec![0.4, 0.2]], &[], &SquaredOutput).unwrap();
        assert_eq!(loss, 0.0);
        // quadratic at its minimum: output-layer bias gradient is zero
        let (_, b_off) = p.layer_offsets(1);
        assert_eq!(grad[b_off], 0.0);
    }

    #[test]
    fn gradient_of_identity_loss_wrt_output_bias_is_one() {
        let p = random_params(arch(1, vec![3], 1), 5);
        let (_, grad) = loss_gradient(&p, &[vec![0.3]], &[], &IdentityLoss).unwrap();
        let (_, b_off) = p.layer_offsets(1);
        assert_relative_eq!(grad[b_off], 1.0, epsilon = 1e-14);
    }

    struct MeanSquaredResidual {
        indices: Vec<MultiIndex>,
    }
    impl JetLoss for MeanSquaredResidual {
        fn loss_and_adjoints(&self, jets: &[Jet]) -> (f64, Vec<JetAdjoint>) {
            // residual = sum of requested derivatives of every output
            let n = jets.len() as f64;
            let mut total = 0.0;
            let mut adjs = Vec::new();
            for jet in jets {
                let mut r = 0.0;
                for mi in &self.indices {
                    r += jet.value(mi).iter().sum::<f64>();
                }
                total += r * r / n;
                let mut adj = JetAdjoint::new();
                for mi in &self.indices {
                    let outs = jet.value(mi).len();
                    adj.insert(mi.clone(), vec![2.0 * r / n; outs]);
                }
                adjs.push(adj);
            }
            (total, adjs)
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..6 {
            let a = arch(2, vec![8, 6], 1 + (case % 2));
            let mut p = random_params(a, 400 + case as u64);
            let points: Vec<Vec<f64>> =
                (0..8).map(|_| vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]).collect();
            let indices = vec![
                MultiIndex::unit(2, 0, 1),
                MultiIndex::unit(2, 0, 3),
                MultiIndex(vec![1, 1]),
                MultiIndex::unit(2, 1, 1),
            ];
            let loss = MeanSquaredResidual { indices: indices.clone() };
            let (_, grad) = loss_gradient(&p, &points, &indices, &loss).unwrap();
            let h = 1e-5;
            for k in (0..p.flat().len()).step_by(7) {
                let orig = p.flat()[k];
                p.flat_mut()[k] = orig + h;
                let (lp, _) = loss_gradient(&p, &points, &indices, &loss).unwrap();
                p.flat_mut()[k] = orig - h;
                let (lm, _) = loss_gradient(&p, &points, &indices, &loss).unwrap();
                p.flat_mut()[k] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let scale = grad[k].abs().max(fd.abs()).max(1.0);
                assert!((grad[k] - fd).abs() <= 1e-5 * scale, "param {k}: {} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn non_finite_loss_reports_offending_point() {
        struct BadLoss;
        impl JetLoss for BadLoss {
            fn loss_and_adjoints(&self, _jets: &[Jet]) -> (f64, Vec<JetAdjoint>) {
                (f64::NAN, vec![JetAdjoint::new()])
            }
        }
        let p = random_params(arch(1, vec![3], 1), 6);
        let err = loss_gradient(&p, &[vec![0.5]], &[], &BadLoss).unwrap_err();
        assert!(matches!(err, NetError::NonFiniteLoss { .. }));
    }

    #[test]
    fn batched_jets_are_deterministic() {
        let p = random_params(arch(2, vec![16, 16], 1), 8);
        let points: Vec<Vec<f64>> = (0..33).map(|i| vec![0.1 * i as f64 - 1.6, 0.05 * i as f64]).collect();
        let req = JetReq { dirs: vec![0, 1], degree: 2 };
        let a = jet_batch_forward(&p, &points, &req).unwrap();
        let b = jet_batch_forward(&p, &points, &req).unwrap();
        assert_eq!(a.out, b.out);
    }
}
