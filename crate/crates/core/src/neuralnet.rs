//! Small dense kernel: named parameter sets, affine and GRU layers with
//! hand-written backward passes, masked softmax, SGD, and a central
//! finite-difference gradient checker.
//!
//! Everything is `f64` and row-major; vectors are `1×n` row matrices and a
//! batch of vectors is stacked as rows. Layers compute `y = x·W + b`.

use indexmap::IndexMap;
use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Named tensors with fixed shapes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    /// Panics on unknown names; parameter names are fixed by the model.
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.raw_dim())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape(format!(
                "{} tensors vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (name, t) in &self.tensors {
            match other.tensors.get(name) {
                Some(o) if o.dim() == t.dim() => {}
                Some(o) => {
                    return Err(Error::Shape(format!(
                        "`{name}` is {:?} vs {:?}",
                        t.dim(),
                        o.dim()
                    )))
                }
                None => return Err(Error::Shape(format!("`{name}` missing"))),
            }
        }
        Ok(())
    }
}

/// Accumulated gradients; same names and shapes as the [`ParamSet`] they
/// belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet(ParamSet);

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradSet(params.zeros_like())
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.0.get_mut(name)
    }

    pub fn accumulate(&mut self, name: &str, g: &Tensor) {
        *self.0.get_mut(name) += g;
    }

    pub fn scale(&mut self, c: f64) {
        for (_, t) in self.0.iter_mut() {
            *t *= c;
        }
    }

    pub fn add_assign(&mut self, other: &GradSet) {
        for (name, t) in self.0.iter_mut() {
            *t += other.0.get(name);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.all_finite()
    }

    pub fn as_params(&self) -> &ParamSet {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter()
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: expected {want:?}, got {got:?}")));
    }
    Ok(())
}

/// Uniform in `[-1/√fan_in, 1/√fan_in]`.
pub fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let s = 1.0 / (rows as f64).sqrt();
    Tensor::from_shape_fn((rows, cols), |_| rng.gen_range(-s..=s))
}

pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_shape("affine weight rows", (w.nrows(), 1), (x.ncols(), 1))?;
    check_shape("affine bias", b.dim(), (1, w.ncols()))?;
    Ok(x.dot(w) + b)
}

/// Gradients of `y = x·W + b` given `dy`: `(dx, dW, db)`.
pub fn affine_backward(dy: &Tensor, x: &Tensor, w: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    check_shape("affine upstream", dy.dim(), (x.nrows(), w.ncols()))?;
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(dy);
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    Ok((dx, dw, db))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A GRU cell whose weights live in a [`ParamSet`] under `prefix`:
/// `w_{z,r,h}` (input×hidden), `u_{z,r,h}` (hidden×hidden), `b_{z,r,h}`
/// (1×hidden).
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// ĥ  = tanh(x·W_h + (r⊙h)·U_h + b_h)
/// h' = (1−z)⊙h + z⊙ĥ
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    prefix: String,
    names: [String; 9],
    pub input_dim: usize,
    pub hidden_dim: usize,
}

const GRU_SUFFIXES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

#[derive(Clone, Debug)]
pub struct GruCache {
    x: Tensor,
    h: Tensor,
    z: Tensor,
    r: Tensor,
    c: Tensor,
}

impl GruCell {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        let prefix = prefix.into();
        let names = GRU_SUFFIXES.map(|s| format!("{prefix}.{s}"));
        GruCell {
            prefix,
            names,
            input_dim,
            hidden_dim,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn shapes(&self) -> Vec<(String, (usize, usize))> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        self.names
            .iter()
            .zip([(i, h), (i, h), (i, h), (h, h), (h, h), (h, h), (1, h), (1, h), (1, h)])
            .map(|(n, s)| (n.clone(), s))
            .collect()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        for (name, (r, c)) in self.shapes() {
            let t = if r == 1 {
                Tensor::zeros((1, c))
            } else {
                init_uniform(r, c, rng)
            };
            params.insert(name, t)?;
        }
        Ok(())
    }

    /// One step for a batch of rows: `h` is `B×hidden`, `x` is `B×input`.
    pub fn forward(&self, p: &ParamSet, h: &Tensor, x: &Tensor) -> Result<(Tensor, GruCache)> {
        check_shape("gru input", x.dim(), (h.nrows(), self.input_dim))?;
        check_shape("gru hidden", h.dim(), (h.nrows(), self.hidden_dim))?;
        let g = |i: usize| p.get(self.name(i));
        let mut z = x.dot(g(0)) + h.dot(g(3)) + g(6);
        z.mapv_inplace(sigmoid);
        let mut r = x.dot(g(1)) + h.dot(g(4)) + g(7);
        r.mapv_inplace(sigmoid);
        let rh = &r * h;
        let mut c = x.dot(g(2)) + rh.dot(g(5)) + g(8);
        c.mapv_inplace(f64::tanh);
        let h_new = h + &(&z * &(&c - h));
        Ok((
            h_new,
            GruCache {
                x: x.clone(),
                h: h.clone(),
                z,
                r,
                c,
            },
        ))
    }

    /// Backward through one step; accumulates weight gradients and returns
    /// `(dh_prev, dx)`.
    pub fn backward(
        &self,
        p: &ParamSet,
        cache: &GruCache,
        dh_new: &Tensor,
        grads: &mut GradSet,
    ) -> (Tensor, Tensor) {
        let g = |i: usize| p.get(self.name(i));
        let GruCache { x, h, z, r, c } = cache;
        let dz = dh_new * &(c - h);
        let dc = dh_new * z;
        let mut dh = dh_new * &z.mapv(|v| 1.0 - v);

        let dac = &dc * &c.mapv(|v| 1.0 - v * v);
        let rh = r * h;
        grads.accumulate(self.name(2), &x.t().dot(&dac));
        grads.accumulate(self.name(5), &rh.t().dot(&dac));
        grads.accumulate(self.name(8), &dac.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let mut dx = dac.dot(&g(2).t());
        let drh = dac.dot(&g(5).t());
        let dr = &drh * h;
        dh += &(&drh * r);

        let dar = &dr * &r.mapv(|v| v * (1.0 - v));
        grads.accumulate(self.name(1), &x.t().dot(&dar));
        grads.accumulate(self.name(4), &h.t().dot(&dar));
        grads.accumulate(self.name(7), &dar.sum_axis(Axis(0)).insert_axis(Axis(0)));
        dx += &dar.dot(&g(1).t());
        dh += &dar.dot(&g(4).t());

        let daz = &dz * &z.mapv(|v| v * (1.0 - v));
        grads.accumulate(self.name(0), &x.t().dot(&daz));
        grads.accumulate(self.name(3), &h.t().dot(&daz));
        grads.accumulate(self.name(6), &daz.sum_axis(Axis(0)).insert_axis(Axis(0)));
        dx += &daz.dot(&g(0).t());
        dh += &daz.dot(&g(3).t());

        (dh, dx)
    }
}

/// Softmax over the unmasked entries; masked entries get exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} logits vs {} mask entries",
            logits.len(),
            mask.len()
        )));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// Gradient of `log softmax(logits)[selected]` w.r.t. the logits, given the
/// softmax output: `onehot(selected) − probs` on unmasked entries.
pub fn log_softmax_grad(probs: &[f64], selected: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == selected { 1.0 - p } else { -p })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Ascend,
    Descend,
}

/// `θ ← θ ± α·g`. Leaves `params` untouched and errors if any gradient is
/// non-finite or shapes disagree.
pub fn sgd_update(
    params: &mut ParamSet,
    grads: &GradSet,
    alpha: f64,
    direction: Direction,
) -> Result<()> {
    params.check_compatible(grads.as_params())?;
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let step = match direction {
        Direction::Ascend => alpha,
        Direction::Descend => -alpha,
    };
    for (name, t) in params.iter_mut() {
        t.scaled_add(step, grads.get(name));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Magnitudes below this count as absolute rather than relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences `(f(θ+h) − f(θ−h)) / 2h`
/// for every scalar of every parameter.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &ParamSet,
    analytic: &GradSet,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> f64,
{
    params.check_compatible(analytic.as_params())?;
    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(params.scalar_count());
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let (rows, cols) = params.get(&name).dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = params.get(&name)[[i, j]];
                probe.get_mut(&name)[[i, j]] = orig + h;
                let up = f(&probe);
                probe.get_mut(&name)[[i, j]] = orig - h;
                let down = f(&probe);
                probe.get_mut(&name)[[i, j]] = orig;
                if !up.is_finite() || !down.is_finite() {
                    return Err(Error::NonFinite(format!("objective near `{name}`[{i},{j}]")));
                }
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.get(&name)[[i, j]];
                entries.push(GradCheckEntry {
                    name: name.clone(),
                    index: (i, j),
                    analytic: a,
                    numeric,
                    rel_error: relative_error(a, numeric),
                });
            }
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn affine_identity_and_bias() {
        let x = array![[1.0, 0.0]];
        let y = affine(&x, &Tensor::eye(2), &Tensor::zeros((1, 2))).unwrap();
        assert_eq!(y, array![[1.0, 0.0]]);
        let b = array![[3.0, -2.0]];
        assert_eq!(affine(&x, &Tensor::zeros((2, 2)), &b).unwrap(), b);
        assert!(affine(&x, &Tensor::zeros((3, 2)), &b).is_err());
    }

    #[test]
    fn affine_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(3, 4, &mut rng);
        let mut p = ParamSet::new();
        p.insert("w", random(4, 2, &mut rng)).unwrap();
        p.insert("b", random(1, 2, &mut rng)).unwrap();
        // scalar readout: sum of y ⊙ c
        let c = random(3, 2, &mut rng);
        let f = |p: &ParamSet| (affine(&x, p.get("w"), p.get("b")).unwrap() * &c).sum();
        let (_, dw, db) = affine_backward(&c, &x, p.get("w")).unwrap();
        let mut g = GradSet::zeros_like(&p);
        g.accumulate("w", &dw);
        g.accumulate("b", &db);
        let report = finite_diff_check(f, &p, &g, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }

    #[test]
    fn gru_closed_forms_at_zero_weights() {
        let cell = GruCell::new("g", 3, 2);
        let mut p = ParamSet::new();
        for (name, shape) in cell.shapes() {
            p.insert(name, Tensor::zeros(shape)).unwrap();
        }
        let h = array![[0.8, -0.4]];
        let x = array![[1.0, 2.0, 3.0]];
        let (h_new, _) = cell.forward(&p, &h, &x).unwrap();
        assert_eq!(h_new, array![[0.4, -0.2]]);
        let (h_new, _) = cell.forward(&p, &Tensor::zeros((1, 2)), &x).unwrap();
        assert_eq!(h_new, Tensor::zeros((1, 2)));
        assert!(cell.forward(&p, &h, &array![[1.0]]).is_err());
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = GruCell::new("g", 3, 4);
        let mut p = ParamSet::new();
        cell.init(&mut p, &mut rng).unwrap();
        // nonzero biases so their gradients are exercised off the origin
        for s in ["b_z", "b_r", "b_h"] {
            *p.get_mut(&format!("g.{s}")) = random(1, 4, &mut rng);
        }
        let h = random(2, 4, &mut rng);
        let x = random(2, 3, &mut rng);
        let c = random(2, 4, &mut rng);
        let f = |p: &ParamSet| (cell.forward(p, &h, &x).unwrap().0 * &c).sum();
        let (_, cache) = cell.forward(&p, &h, &x).unwrap();
        let mut g = GradSet::zeros_like(&p);
        let (dh, dx) = cell.backward(&p, &cache, &c, &mut g);
        let report = finite_diff_check(f, &p, &g, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{:?}", report.worst());

        // input and hidden gradients, checked by treating them as parameters
        let mut q = ParamSet::new();
        q.insert("h", h.clone()).unwrap();
        q.insert("x", x.clone()).unwrap();
        let mut gq = GradSet::zeros_like(&q);
        gq.accumulate("h", &dh);
        gq.accumulate("x", &dx);
        let f = |q: &ParamSet| (cell.forward(&p, q.get("h"), q.get("x")).unwrap().0 * &c).sum();
        let report = finite_diff_check(f, &q, &gq, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }

    #[test]
    fn masked_softmax_examples() {
        let p = masked_softmax(&[0.0, 0.0, 0.0], &[true; 3]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(masked_softmax(&[5.0, -1.0], &[true, false]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(masked_softmax(&[1.0, 2.0], &[false, false]), Err(Error::AllMasked)));
        assert!(masked_softmax(&[1.0], &[true, true]).is_err());
    }

    #[test]
    fn log_softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = [true, false, true, true, false, true];
        let mut p = ParamSet::new();
        p.insert("logits", random(1, 6, &mut rng)).unwrap();
        let f = |p: &ParamSet| {
            let l: Vec<f64> = p.get("logits").iter().copied().collect();
            masked_softmax(&l, &mask).unwrap()[2].ln()
        };
        let l: Vec<f64> = p.get("logits").iter().copied().collect();
        let probs = masked_softmax(&l, &mask).unwrap();
        let mut g = GradSet::zeros_like(&p);
        g.accumulate(
            "logits",
            &Tensor::from_shape_vec((1, 6), log_softmax_grad(&probs, 2)).unwrap(),
        );
        let report = finite_diff_check(f, &p, &g, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }

    #[test]
    fn sgd_examples() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::zeros((2, 3))).unwrap();
        let orig = p.clone();
        let zero = GradSet::zeros_like(&p);
        sgd_update(&mut p, &zero, 0.5, Direction::Descend).unwrap();
        assert_eq!(p, orig);

        let mut ones = GradSet::zeros_like(&p);
        ones.get_mut("a").fill(1.0);
        sgd_update(&mut p, &ones, 1e-5, Direction::Ascend).unwrap();
        assert!(p.get("a").iter().all(|&v| v == 1e-5));

        let mut bad = GradSet::zeros_like(&p);
        bad.get_mut("a")[[1, 1]] = f64::NAN;
        let before = p.clone();
        assert!(matches!(
            sgd_update(&mut p, &bad, 1.0, Direction::Ascend),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p, before);

        let mut other = ParamSet::new();
        other.insert("a", Tensor::zeros((3, 2))).unwrap();
        assert!(sgd_update(&mut p, &GradSet::zeros_like(&other), 1.0, Direction::Ascend).is_err());
    }

    #[test]
    fn sgd_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ParamSet::new();
        p.insert("a", random(4, 4, &mut rng)).unwrap();
        let mut g = GradSet::zeros_like(&p);
        g.accumulate("a", &random(4, 4, &mut rng));
        let mut p1 = p.clone();
        let mut p2 = p.clone();
        sgd_update(&mut p1, &g, 0.3, Direction::Descend).unwrap();
        sgd_update(&mut p2, &g, 0.3, Direction::Descend).unwrap();
        let bits = |p: &ParamSet| p.get("a").iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p1), bits(&p2));
    }

    #[test]
    fn quadratic_self_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParamSet::new();
        p.insert("t", random(3, 3, &mut rng)).unwrap();
        let mut g = GradSet::zeros_like(&p);
        g.accumulate("t", &(p.get("t") * 2.0));
        let report = finite_diff_check(|p| p.get("t").mapv(|v| v * v).sum(), &p, &g, 1e-5, 1e-9).unwrap();
        assert!(report.passed(), "{:?}", report.worst());
        assert!(finite_diff_check(|_| f64::NAN, &p, &g, 1e-5, 1e-6).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::zeros((1, 1))).unwrap();
        assert!(p.insert("a", Tensor::zeros((1, 1))).is_err());
    }
}
