//! Small dense networks with hand-written backprop and Adam.
//!
//! Batches are row-major: a forward pass maps a (batch × in) matrix to
//! (batch × out). Gradients returned by [`Mlp::backward`] are those of
//! Σ output ⊙ `out_grad`, so callers fold any 1/N into `out_grad`.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::rng::SimRng;

pub const PARAMS_CSV_VERSION: &str = "# streampower params v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// s·(tanh(x) + 1), bounded to (0, 2s).
    ScaledTanh(f64),
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::ScaledTanh(s) => s * (x.tanh() + 1.0),
            Activation::Linear => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::ScaledTanh(s) => {
                let t = x.tanh();
                s * (1.0 - t * t)
            }
            Activation::Linear => 1.0,
        }
    }

    fn tag(self) -> String {
        match self {
            Activation::Relu => "relu".into(),
            Activation::ScaledTanh(s) => format!("scaled_tanh:{s}"),
            Activation::Linear => "linear".into(),
        }
    }

    fn parse(tag: &str) -> Result<Self> {
        match tag {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            t => t
                .strip_prefix("scaled_tanh:")
                .and_then(|s| s.parse().ok())
                .map(Activation::ScaledTanh)
                .ok_or_else(|| Error::Parse(format!("unknown activation {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// (out × in)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            dw: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            db: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dw.iter().all(|a| a.iter().all(|v| v.is_finite())) && self.db.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Grads,
    pub v: Grads,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Forward-pass record for backprop, tied to the parameter generation it
/// was computed under.
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    generation: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub adam: AdamState,
    generation: u64,
}

/// Output-layer initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    /// Output weights drawn from U[−r, r].
    pub output_weight_range: f64,
    pub output_bias: f64,
}

impl InitScheme {
    pub const ACTOR: InitScheme = InitScheme { output_weight_range: 1e-4, output_bias: -15.0 };
    /// Output bias −ln 3 puts 40·(tanh + 1) at 8 Mbps, off the flat tail.
    pub const ACTOR_UNSATURATED: InitScheme = InitScheme { output_weight_range: 1e-4, output_bias: -1.098_612_288_668_109_8 };
    pub const CRITIC: InitScheme = InitScheme { output_weight_range: 1e-4, output_bias: -1.0 };
}

impl Mlp {
    /// Builds from explicit layers with zeroed optimizer state.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].w.nrows() != pair[1].w.ncols() {
                return Err(contract("layer widths do not chain"));
            }
        }
        for l in &layers {
            if l.b.len() != l.w.nrows() {
                return Err(contract("bias length differs from layer width"));
            }
        }
        let mut net = Mlp {
            layers,
            adam: AdamState {
                m: Grads { dw: vec![], db: vec![] },
                v: Grads { dw: vec![], db: vec![] },
                step: 0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            generation: 0,
        };
        net.adam.m = Grads::zeros_like(&net);
        net.adam.v = Grads::zeros_like(&net);
        Ok(net)
    }

    /// Hidden layers U[±1/√fan_in] with zero bias; output layer per `scheme`.
    pub fn init(widths: &[usize], acts: &[Activation], scheme: InitScheme, rng: &mut SimRng) -> Result<Self> {
        if widths.len() < 2 || acts.len() != widths.len() - 1 || widths.iter().any(|&w| w == 0) {
            return Err(contract("need n+1 positive widths for n activations"));
        }
        let n = acts.len();
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            let (range, bias) = if k + 1 == n {
                (scheme.output_weight_range, scheme.output_bias)
            } else {
                (1.0 / (fan_in as f64).sqrt(), 0.0)
            };
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-range..=range));
            layers.push(Dense { w, b: Array1::from_elem(fan_out, bias), act: acts[k] });
        }
        Mlp::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.nrows()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(contract(format!("input has {} columns, network expects {}", x.ncols(), self.input_dim())));
        }
        Ok(())
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            z.mapv_inplace(|v| l.act.apply(v));
            h = z;
        }
        Ok(h)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let a = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| contract(e.to_string()))?;
        Ok(self.predict(&a)?.into_raw_vec_and_offset().0)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Cache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            let out = z.mapv(|v| l.act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = out;
        }
        Ok((h, Cache { inputs, pre, generation: self.generation }))
    }

    /// Reverse-mode gradients of Σ out ⊙ `out_grad` w.r.t. parameters and input.
    pub fn backward(&self, cache: &Cache, out_grad: &Array2<f64>) -> Result<(Grads, Array2<f64>)> {
        if cache.generation != self.generation || cache.pre.len() != self.layers.len() {
            return Err(contract("cache was produced under different parameters"));
        }
        let last = cache.pre.last().expect("nonempty");
        if out_grad.dim() != last.dim() {
            return Err(contract("output gradient shape mismatch"));
        }
        let n = self.layers.len();
        let mut dw = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        let mut g = out_grad.clone();
        for k in (0..n).rev() {
            let l = &self.layers[k];
            Zip::from(&mut g).and(&cache.pre[k]).for_each(|gv, &z| *gv *= l.act.derivative(z));
            dw.push(g.t().dot(&cache.inputs[k]));
            db.push(g.sum_axis(Axis(0)));
            g = g.dot(&l.w);
        }
        dw.reverse();
        db.reverse();
        Ok((Grads { dw, db }, g))
    }

    fn check_grads(&self, grads: &Grads) -> Result<()> {
        let ok = grads.dw.len() == self.layers.len()
            && grads.db.len() == self.layers.len()
            && self.layers.iter().zip(&grads.dw).all(|(l, d)| l.w.dim() == d.dim())
            && self.layers.iter().zip(&grads.db).all(|(l, d)| l.b.dim() == d.dim());
        if ok {
            Ok(())
        } else {
            Err(contract("gradient shapes do not match the network"))
        }
    }

    /// Bias-corrected Adam descent step along `grads`.
    pub fn adam_step(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        self.check_grads(grads)?;
        let a = &mut self.adam;
        a.step += 1;
        let (b1, b2, eps) = (a.beta1, a.beta2, a.eps);
        let c1 = 1.0 - b1.powi(a.step as i32);
        let c2 = 1.0 - b2.powi(a.step as i32);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (k, l) in self.layers.iter_mut().enumerate() {
            Zip::from(&mut l.w)
                .and(&mut a.m.dw[k])
                .and(&mut a.v.dw[k])
                .and(&grads.dw[k])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut l.b)
                .and(&mut a.m.db[k])
                .and(&mut a.v.db[k])
                .and(&grads.db[k])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        self.generation += 1;
        Ok(())
    }

    /// self ← ω·online + (1 − ω)·self.
    pub fn soft_update(&mut self, online: &Mlp, omega: f64) -> Result<()> {
        if self.layers.len() != online.layers.len()
            || self.layers.iter().zip(&online.layers).any(|(a, b)| a.w.dim() != b.w.dim())
        {
            return Err(contract("soft update between differently shaped networks"));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.w).and(&o.w).for_each(|t, &o| *t = omega * o + (1.0 - omega) * *t);
            Zip::from(&mut t.b).and(&o.b).for_each(|t, &o| *t = omega * o + (1.0 - omega) * *t);
        }
        self.generation += 1;
        Ok(())
    }

    /// Parameter copy with fresh optimizer state.
    pub fn params_only(&self) -> Mlp {
        Mlp::from_layers(self.layers.clone()).expect("shapes already valid")
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Writes (layer, row, col, value) rows; biases use row = fan_in.
    pub fn save_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let widths: Vec<String> = std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.w.nrows()))
            .map(|x| x.to_string())
            .collect();
        let acts: Vec<String> = self.layers.iter().map(|l| l.act.tag()).collect();
        writeln!(w, "{PARAMS_CSV_VERSION} widths={} acts={}", widths.join(","), acts.join(","))?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["layer", "row", "col", "value"])?;
        for (k, l) in self.layers.iter().enumerate() {
            for ((o, i), v) in l.w.indexed_iter() {
                // rows of the CSV index the fan-in, columns the unit
                out.write_record(&[k.to_string(), i.to_string(), o.to_string(), format!("{v:e}")])?;
            }
            let fan_in = l.w.ncols();
            for (o, v) in l.b.iter().enumerate() {
                out.write_record(&[k.to_string(), fan_in.to_string(), o.to_string(), format!("{v:e}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_csv<R: BufRead>(mut r: R) -> Result<Mlp> {
        let mut first = String::new();
        r.read_line(&mut first)?;
        let meta = first
            .trim()
            .strip_prefix(PARAMS_CSV_VERSION)
            .ok_or_else(|| Error::Parse(format!("unexpected params header {first:?}")))?;
        let mut widths = None;
        let mut acts = None;
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("widths", v)) => {
                    widths = Some(v.split(',').map(|x| x.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>())
                }
                Some(("acts", v)) => acts = Some(v.split(',').map(Activation::parse).collect::<Result<Vec<_>>>()),
                _ => {}
            }
        }
        let widths = widths
            .ok_or_else(|| Error::Parse("params header lacks widths".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let acts = acts.ok_or_else(|| Error::Parse("params header lacks acts".into()))??;
        if widths.len() != acts.len() + 1 {
            return Err(Error::Parse("widths and activations disagree".into()));
        }
        let mut layers: Vec<Dense> = (0..acts.len())
            .map(|k| Dense {
                w: Array2::zeros((widths[k + 1], widths[k])),
                b: Array1::zeros(widths[k + 1]),
                act: acts[k],
            })
            .collect();
        let mut seen = 0usize;
        let mut rd = csv::Reader::from_reader(r);
        for rec in rd.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Parse(format!("short params row {rec:?}")));
            let idx = |i: usize| -> Result<usize> { field(i)?.parse().map_err(|_| Error::Parse(format!("bad index in {rec:?}"))) };
            let (k, row, col) = (idx(0)?, idx(1)?, idx(2)?);
            let v: f64 = field(3)?.parse().map_err(|_| Error::Parse(format!("bad value in {rec:?}")))?;
            let l = layers.get_mut(k).ok_or_else(|| Error::Parse(format!("layer {k} out of range")))?;
            let fan_in = l.w.ncols();
            if col >= l.w.nrows() || row > fan_in {
                return Err(Error::Parse(format!("index out of range in {rec:?}")));
            }
            if row == fan_in {
                l.b[col] = v;
            } else {
                l.w[[col, row]] = v;
            }
            seen += 1;
        }
        let expected: usize = layers.iter().map(|l| l.w.len() + l.b.len()).sum();
        if seen != expected {
            return Err(Error::Parse(format!("params file has {seen} values, expected {expected}")));
        }
        Mlp::from_layers(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use ndarray::array;

    #[test]
    fn hand_computed_one_one_one() {
        let net = Mlp::from_layers(vec![
            Dense { w: array![[2.0]], b: array![-1.0], act: Activation::Relu },
            Dense { w: array![[3.0]], b: array![0.5], act: Activation::Linear },
        ])
        .unwrap();
        let y = net.predict(&array![[1.5], [0.2]]).unwrap();
        assert_eq!(y, array![[6.5], [0.5]]);
    }

    #[test]
    fn scaled_tanh_slope_at_zero() {
        assert_eq!(Activation::ScaledTanh(40.0).derivative(0.0), 40.0);
        assert_eq!(Activation::ScaledTanh(40.0).apply(0.0), 40.0);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = substream(0, Stream::Init);
        let mut net = Mlp::init(&[3, 4, 1], &[Activation::Relu, Activation::Linear], InitScheme::CRITIC, &mut rng).unwrap();
        let x = Array2::ones((2, 3));
        let (_, cache) = net.forward(&x).unwrap();
        let g = Grads::zeros_like(&net);
        net.adam_step(&g, 1e-3).unwrap();
        assert!(net.backward(&cache, &Array2::ones((2, 1))).is_err());
        assert!(net.predict(&Array2::ones((2, 4))).is_err());
    }
}
