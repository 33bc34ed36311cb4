use super::{
    ops::{self, Conv2dCfg, LstmStepCache, LstmWeights, PoolCfg},
    optim::{seeded_init, Rng},
    NnError, Tensor,
};

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Ordered parameter storage; layers refer to entries by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a uniformly initialized parameter and returns its index.
    pub fn add_init(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut Rng) -> usize {
        let value = seeded_init(shape, fan_in, rng);
        self.push(name, value)
    }

    pub fn push(&mut self, name: &str, value: Tensor) -> usize {
        self.params.push(Param { name: name.to_owned(), value });
        self.params.len() - 1
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.params[i].value
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].value
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect())
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.0 {
            for x in t.data_mut() {
                *x *= k;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d { weight: usize, bias: usize, cfg: Conv2dCfg },
    MaxPool2d(PoolCfg),
    Relu,
    Sigmoid,
    Tanh,
    /// `N×…` to `N×F`.
    Flatten,
    Dense { weight: usize, bias: usize },
    /// Reads `N×(steps·E)` as a length-`steps` sequence and emits the last
    /// hidden state `N×H`, starting from a zero state.
    Lstm { w: usize, u: usize, b: usize, steps: usize },
}

/// Per-layer forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Output(Tensor),
    Pool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Shape(Vec<usize>),
    Lstm(Vec<LstmStepCache>),
}

/// A feed-forward pipeline of layers over a shared [`ParamStore`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn forward(&self, params: &ParamStore, x: &Tensor) -> Result<(Tensor, Vec<Cache>), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer_forward(layer, params, cur)?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, caches))
    }

    /// Backward pass; accumulates parameter grads into `grads` and returns
    /// the gradient with respect to the network input.
    pub fn backward(
        &self,
        params: &ParamStore,
        caches: &[Cache],
        gy: Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor, NnError> {
        let mut g = gy;
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            g = layer_backward(layer, params, cache, g, grads)?;
        }
        Ok(g)
    }
}

fn layer_forward(layer: &Layer, params: &ParamStore, x: Tensor) -> Result<(Tensor, Cache), NnError> {
    Ok(match *layer {
        Layer::Conv2d { weight, bias, cfg } => {
            let y = ops::conv2d_forward(&x, params.get(weight), params.get(bias), cfg)?;
            (y, Cache::Input(x))
        }
        Layer::MaxPool2d(cfg) => {
            let (y, argmax) = ops::maxpool2d_forward(&x, cfg)?;
            (y, Cache::Pool { argmax, input_shape: x.shape().to_vec() })
        }
        Layer::Relu => (x.map(ops::relu), Cache::Input(x)),
        Layer::Sigmoid => {
            let y = x.map(ops::sigmoid);
            (y.clone(), Cache::Output(y))
        }
        Layer::Tanh => {
            let y = x.map(ops::tanh);
            (y.clone(), Cache::Output(y))
        }
        Layer::Flatten => {
            let shape = x.shape().to_vec();
            let n = shape[0];
            let f = x.len() / n;
            (x.reshape(&[n, f])?, Cache::Shape(shape))
        }
        Layer::Dense { weight, bias } => {
            let y = ops::dense_forward(&x, params.get(weight), params.get(bias))?;
            (y, Cache::Input(x))
        }
        Layer::Lstm { w, u, b, steps } => {
            let p = LstmWeights { w: params.get(w), u: params.get(u), b: params.get(b) };
            let (h, caches) = lstm_sequence_forward(&x, p, steps)?;
            (h, Cache::Lstm(caches))
        }
    })
}

fn lstm_sequence_forward(
    x: &Tensor,
    p: LstmWeights,
    steps: usize,
) -> Result<(Tensor, Vec<LstmStepCache>), NnError> {
    let xs = x.shape();
    if xs.len() != 2 || steps == 0 || !xs[1].is_multiple_of(steps) {
        return Err(NnError::shape("lstm", format!("input {xs:?} for {steps} steps")));
    }
    let (n, e) = (xs[0], xs[1] / steps);
    let hid = p.u.shape()[1];
    let mut h = Tensor::zeros(&[n, hid]);
    let mut c = Tensor::zeros(&[n, hid]);
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = step_slice(x, t, e);
        let (h2, c2, cache) = ops::lstm_step_forward(&xt, &h, &c, p)?;
        caches.push(cache);
        h = h2;
        c = c2;
    }
    Ok((h, caches))
}

fn step_slice(x: &Tensor, t: usize, e: usize) -> Tensor {
    let n = x.shape()[0];
    let f = x.shape()[1];
    let mut data = Vec::with_capacity(n * e);
    for s in 0..n {
        data.extend_from_slice(&x.data()[s * f + t * e..][..e]);
    }
    Tensor::new(vec![n, e], data).expect("slice shape")
}

fn layer_backward(
    layer: &Layer,
    params: &ParamStore,
    cache: &Cache,
    gy: Tensor,
    grads: &mut Grads,
) -> Result<Tensor, NnError> {
    let mismatch = || NnError::shape("backward", format!("cache does not match {layer:?}"));
    Ok(match (layer, cache) {
        (&Layer::Conv2d { weight, bias, cfg }, Cache::Input(x)) => {
            let (gx, gw, gb) = ops::conv2d_backward(x, params.get(weight), &gy, cfg)?;
            grads.0[weight].add_assign(&gw);
            grads.0[bias].add_assign(&gb);
            gx
        }
        (Layer::MaxPool2d(_), Cache::Pool { argmax, input_shape }) => {
            ops::maxpool2d_backward(&gy, argmax, input_shape)
        }
        (Layer::Relu, Cache::Input(x)) => ops::relu_backward(x, &gy),
        (Layer::Sigmoid, Cache::Output(y)) => ops::sigmoid_backward(y, &gy),
        (Layer::Tanh, Cache::Output(y)) => ops::tanh_backward(y, &gy),
        (Layer::Flatten, Cache::Shape(shape)) => gy.reshape(shape)?,
        (&Layer::Dense { weight, bias }, Cache::Input(x)) => {
            let (gx, gw, gb) = ops::dense_backward(x, params.get(weight), &gy)?;
            grads.0[weight].add_assign(&gw);
            grads.0[bias].add_assign(&gb);
            gx
        }
        (&Layer::Lstm { w, u, b, steps }, Cache::Lstm(caches)) => {
            let p = LstmWeights { w: params.get(w), u: params.get(u), b: params.get(b) };
            let n = gy.shape()[0];
            let e = caches[0].x.shape()[1];
            let mut gx = vec![0.0; n * steps * e];
            let mut gh = gy;
            let mut gc = Tensor::zeros(gh.shape());
            for (t, cache) in caches.iter().enumerate().rev() {
                let g = ops::lstm_step_backward(cache, p, &gh, &gc)?;
                for s in 0..n {
                    gx[s * steps * e + t * e..][..e].copy_from_slice(&g.x.data()[s * e..][..e]);
                }
                grads.0[w].add_assign(&g.w);
                grads.0[u].add_assign(&g.u);
                grads.0[b].add_assign(&g.b);
                gh = g.h_prev;
                gc = g.c_prev;
            }
            Tensor::new(vec![n, steps * e], gx)?
        }
        _ => return Err(mismatch()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    #[test]
    fn lstm_layer_output_is_bounded() {
        let mut rng = seeded_rng(3);
        let mut ps = ParamStore::new();
        let (e, h, steps) = (3, 4, 5);
        let w = ps.add_init("w", &[4 * h, e], e, &mut rng);
        let u = ps.add_init("u", &[4 * h, h], h, &mut rng);
        let b = ps.add_init("b", &[4 * h], h, &mut rng);
        let net = Network::new(vec![Layer::Lstm { w, u, b, steps }]);
        let x = seeded_init(&[2, steps * e], 1, &mut rng).map(|v| v * 50.0);
        let (y, _) = net.forward(&ps, &x).unwrap();
        assert_eq!(y.shape(), &[2, h]);
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn mismatched_cache_is_an_error() {
        let ps = ParamStore::new();
        let net = Network::new(vec![Layer::Relu]);
        let mut g = ps.zero_grads();
        let r = net.backward(&ps, &[Cache::Shape(vec![1])], Tensor::zeros(&[1]), &mut g);
        assert!(r.is_err());
    }
}
